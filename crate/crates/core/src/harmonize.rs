//! Keypoint harmonization: Ramer–Douglas–Peucker simplification, budgeted
//! keypoint extraction, six alternative curve parameterizations and their
//! reconstruction to full-length paths.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, cumulative_arc_length, euclidean, resample_uniform, Point2, Trajectory};
use crate::metrics::{dtw, frechet, LatLon};
use crate::threads;

/// Tolerance on epsilon at which the budget search stops.
pub const EPSILON_TOLERANCE: f64 = 1e-5;
/// Iteration cap of the budget search.
pub const MAX_SEARCH_ITERATIONS: usize = 64;
/// Turning angle above which a local maximum counts as an anchor.
pub const ANCHOR_ANGLE_DEG: f64 = 30.0;
/// Fit weight of anchors relative to ordinary points.
pub const ANCHOR_WEIGHT: f64 = 100.0;
/// Default keypoint budget.
pub const DEFAULT_K: usize = 10;
/// Default working length of full paths.
pub const DEFAULT_L: usize = 120;

/// Distance from `p` to the infinite line through `a` and `b`, or to `a`
/// when the two coincide.
pub fn perpendicular_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len = dx.hypot(dy);
    if len == 0.0 {
        return euclidean(p, a);
    }
    ((p[0] - a[0]) * dy - (p[1] - a[1]) * dx).abs() / len
}

/// Indices retained by RDP, ascending, always including both endpoints.
///
/// The split point is the interior vertex of maximum perpendicular distance
/// to the chord (lowest index on ties); a span is split when that distance
/// exceeds `epsilon`.
pub fn rdp_indices(path: &[Point2], epsilon: f64) -> Result<Vec<usize>> {
    if path.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "RDP needs at least 2 points, got {}",
            path.len()
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative tolerance {epsilon}")));
    }
    let last = path.len() - 1;
    let mut keep = vec![false; path.len()];
    keep[0] = true;
    keep[last] = true;
    let mut stack = vec![(0usize, last)];
    while let Some((first, end)) = stack.pop() {
        let mut d_max = 0.0;
        let mut index = first;
        for i in first + 1..end {
            let d = perpendicular_distance(path[i], path[first], path[end]);
            if d > d_max {
                d_max = d;
                index = i;
            }
        }
        if d_max > epsilon {
            keep[index] = true;
            stack.push((index, end));
            stack.push((first, index));
        }
    }
    Ok(keep.iter().enumerate().filter_map(|(i, &k)| k.then_some(i)).collect())
}

/// Ramer–Douglas–Peucker simplification.
pub fn rdp(path: &[Point2], epsilon: f64) -> Result<Vec<Point2>> {
    Ok(rdp_indices(path, epsilon)?.into_iter().map(|i| path[i]).collect())
}

fn bbox_diagonal(path: &[Point2]) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in path {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (hi[0] - lo[0]).hypot(hi[1] - lo[1])
}

/// Inserts midpoints into the longest segments until the polyline has `k`
/// vertices. The geometry is unchanged.
fn subdivide_to(mut pts: Vec<Point2>, k: usize) -> Vec<Point2> {
    while pts.len() < k {
        let (seg, _) = pts
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, euclidean(w[0], w[1])))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let a = pts[seg];
        let b = pts[seg + 1];
        pts.insert(seg + 1, [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
    }
    pts
}

/// RDP keypoints with exactly `k` vertices.
///
/// Binary-searches the tolerance on `[0, bbox diagonal]` for the vertex
/// count closest to `k`; a surplus is removed by arc-length interpolation
/// and a deficit filled by splitting the longest segments.
pub fn rdp_to_k(path: &[Point2], k: usize) -> Result<Vec<Point2>> {
    if path.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "RDP needs at least 2 points, got {}",
            path.len()
        )));
    }
    if k < 2 {
        return Err(Error::InvalidArgument(format!("keypoint budget {k} < 2")));
    }
    if k >= path.len() {
        return Ok(subdivide_to(path.to_vec(), k));
    }

    let count = |eps: f64| rdp_indices(path, eps).map(|v| v.len());
    let better = |cand: usize, best: usize| {
        let dc = cand.abs_diff(k);
        let db = best.abs_diff(k);
        dc < db || (dc == db && cand < best)
    };

    let mut lo = 0.0;
    let mut hi = bbox_diagonal(path);
    let mut best_eps = 0.0;
    let mut best_count = count(0.0)?;
    if best_count > k {
        let c_hi = count(hi)?;
        if better(c_hi, best_count) {
            best_eps = hi;
            best_count = c_hi;
        }
        for _ in 0..MAX_SEARCH_ITERATIONS {
            if best_count == k || hi - lo < EPSILON_TOLERANCE {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let c = count(mid)?;
            if better(c, best_count) {
                best_eps = mid;
                best_count = c;
            }
            if c > k {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    let simplified = rdp(path, best_eps)?;
    Ok(match simplified.len().cmp(&k) {
        std::cmp::Ordering::Equal => simplified,
        std::cmp::Ordering::Greater => resample_uniform(&simplified, k)?,
        std::cmp::Ordering::Less => subdivide_to(simplified, k),
    })
}

/// The seven parameterization methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DirectK,
    Dct,
    RdpK,
    Anchor,
    SplineLsq,
    DctDeviation,
    FftComplex,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::DirectK,
        Method::Dct,
        Method::RdpK,
        Method::Anchor,
        Method::SplineLsq,
        Method::DctDeviation,
        Method::FftComplex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DirectK => "direct_k",
            Method::Dct => "dct",
            Method::RdpK => "rdp_k",
            Method::Anchor => "anchor",
            Method::SplineLsq => "spline_lsq",
            Method::DctDeviation => "dct_deviation",
            Method::FftComplex => "fft_complex",
        }
    }

    /// Smallest budget the method accepts.
    pub fn min_k(self) -> usize {
        match self {
            Method::Anchor | Method::SplineLsq => 3,
            _ => 2,
        }
    }

    /// Number of stored reals for budget `k`.
    pub fn coefficient_len(self, k: usize) -> usize {
        // Every method stores 2K reals: K points, K cosine coefficients per
        // axis, 2K-4 deviations plus two endpoints, or K complex numbers.
        2 * k
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!("unknown method `{s}`; valid: {}", names.join(", ")))
            })
    }
}

/// A path compressed to a fixed budget.
///
/// `coefficients` layout per method:
/// - `direct_k`, `rdp_k`, `anchor`, `spline_lsq`: K points as `lat, lon` pairs
///   (spline control points for the last two)
/// - `dct`: K x-coefficients followed by K y-coefficients
/// - `dct_deviation`: start point, end point, then 2K-4 deviation coefficients
/// - `fft_complex`: K complex coefficients as `re, im` pairs
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedPath {
    pub method: Method,
    pub k: usize,
    /// Vertex count of the source path.
    pub original_length: usize,
    pub coefficients: Vec<f64>,
}

impl CompressedPath {
    fn points(&self) -> Vec<Point2> {
        self.coefficients.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
    }
}

fn flatten(points: &[Point2]) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0], p[1]]).collect()
}

/// Orthonormal DCT-II, keeping the first `keep` coefficients.
fn dct2(x: &[f64], keep: usize) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    (0..keep)
        .map(|k| {
            let w = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / nf).cos())
                .sum();
            w * s
        })
        .collect()
}

/// Evaluates the inverse orthonormal DCT at a fractional sample position.
fn idct_at(coeffs: &[f64], n: usize, pos: f64) -> f64 {
    let nf = n as f64;
    coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let w = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            w * c * (std::f64::consts::PI * (pos + 0.5) * k as f64 / nf).cos()
        })
        .sum()
}

/// Positions `0..=n-1` spread over `l` samples.
fn sample_positions(n: usize, l: usize) -> impl Iterator<Item = f64> {
    (0..l).map(move |j| j as f64 * (n - 1) as f64 / (l - 1) as f64)
}

/// Clamped uniform knot vector.
fn clamped_knots(n_ctrl: usize, degree: usize) -> Vec<f64> {
    let interior = n_ctrl - degree - 1;
    let mut knots = vec![0.0; degree + 1];
    for i in 1..=interior {
        knots.push(i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    knots
}

/// B-spline basis values of every control point at `u` (Cox–de Boor).
fn bspline_basis(knots: &[f64], degree: usize, n_ctrl: usize, u: f64) -> Vec<f64> {
    let mut basis = vec![0.0; n_ctrl];
    if u >= knots[n_ctrl] {
        basis[n_ctrl - 1] = 1.0;
        return basis;
    }
    let span = (degree..n_ctrl)
        .rev()
        .find(|&i| knots[i] <= u)
        .unwrap_or(degree);
    // Local basis N_{span-degree..=span}.
    let mut local = vec![0.0; degree + 1];
    local[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { local[r] / denom } else { 0.0 };
            local[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        local[j] = saved;
    }
    for (r, v) in local.into_iter().enumerate() {
        basis[span - degree + r] = v;
    }
    basis
}

fn spline_degree(k: usize) -> usize {
    3.min(k - 1)
}

/// Solves a symmetric positive definite system by Cholesky factorization.
fn solve_spd(mut a: Vec<Vec<f64>>, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return Err(Error::Numeric("least-squares system is singular".into()));
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    Ok(rhs
        .iter()
        .map(|b| {
            let mut y = b.clone();
            for i in 0..n {
                for k in 0..i {
                    y[i] -= a[i][k] * y[k];
                }
                y[i] /= a[i][i];
            }
            for i in (0..n).rev() {
                for k in i + 1..n {
                    y[i] -= a[k][i] * y[k];
                }
                y[i] /= a[i][i];
            }
            y
        })
        .collect())
}

/// Weighted least-squares cubic B-spline with `k` control points on the
/// arc-length parameterization of `path`.
fn fit_spline(path: &[Point2], k: usize, weights: &[f64]) -> Result<Vec<Point2>> {
    let degree = spline_degree(k);
    let knots = clamped_knots(k, degree);
    let cum = cumulative_arc_length(path);
    let total = cum[cum.len() - 1];
    let mut ata = vec![vec![0.0; k]; k];
    let mut atb = vec![vec![0.0; k]; 2];
    for ((p, s), &w) in path.iter().zip(&cum).zip(weights) {
        let b = bspline_basis(&knots, degree, k, s / total);
        for i in 0..k {
            if b[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                ata[i][j] += w * b[i] * b[j];
            }
            atb[0][i] += w * b[i] * p[0];
            atb[1][i] += w * b[i] * p[1];
        }
    }
    let ridge = 1e-12 * (0..k).map(|i| ata[i][i]).sum::<f64>().max(1e-300);
    for (i, row) in ata.iter_mut().enumerate() {
        row[i] += ridge;
    }
    let sol = solve_spd(ata, &atb)?;
    Ok((0..k).map(|i| [sol[0][i], sol[1][i]]).collect())
}

/// Turning angle (degrees) at every vertex; 0 at endpoints and where a
/// neighbouring segment has zero length.
fn turning_angles(path: &[Point2]) -> Vec<f64> {
    let mut out = vec![0.0; path.len()];
    for i in 1..path.len().saturating_sub(1) {
        let u = [path[i][0] - path[i - 1][0], path[i][1] - path[i - 1][1]];
        let v = [path[i + 1][0] - path[i][0], path[i + 1][1] - path[i][1]];
        let nu = u[0].hypot(u[1]);
        let nv = v[0].hypot(v[1]);
        if nu > 0.0 && nv > 0.0 {
            let c = ((u[0] * v[0] + u[1] * v[1]) / (nu * nv)).clamp(-1.0, 1.0);
            out[i] = c.acos().to_degrees();
        }
    }
    out
}

/// Anchor vertices: endpoints plus local maxima of the turning angle above
/// [`ANCHOR_ANGLE_DEG`].
pub fn detect_anchors(path: &[Point2]) -> Vec<usize> {
    let ang = turning_angles(path);
    let last = path.len() - 1;
    let mut out = vec![0];
    for i in 1..last {
        if ang[i] > ANCHOR_ANGLE_DEG && ang[i] >= ang[i - 1] && ang[i] >= ang[i + 1] {
            out.push(i);
        }
    }
    out.push(last);
    out
}

/// Unit normal of the start–end chord, or `None` for a closed path.
fn chord_normal(start: Point2, end: Point2) -> Option<Point2> {
    let d = [end[0] - start[0], end[1] - start[1]];
    let len = d[0].hypot(d[1]);
    (len > 0.0).then(|| [-d[1] / len, d[0] / len])
}

/// Compresses a path to budget `k` with the given method.
pub fn parameterize(path: &[Point2], method: Method, k: usize) -> Result<CompressedPath> {
    let n = path.len();
    if k < method.min_k() {
        return Err(Error::InvalidArgument(format!(
            "{method} needs a budget of at least {}, got {k}",
            method.min_k()
        )));
    }
    if n < k.max(4) {
        return Err(Error::InvalidInput(format!(
            "path of {n} points is too short for budget {k}"
        )));
    }
    if !(geo::polyline_length(path) > 0.0) {
        return Err(Error::InvalidInput("path has zero arc length".into()));
    }
    let coefficients = match method {
        Method::DirectK => flatten(&resample_uniform(path, k)?),
        Method::RdpK => flatten(&rdp_to_k(path, k)?),
        Method::SplineLsq => flatten(&fit_spline(path, k, &vec![1.0; n])?),
        Method::Anchor => {
            let mut w = vec![1.0; n];
            for i in detect_anchors(path) {
                w[i] = ANCHOR_WEIGHT;
            }
            flatten(&fit_spline(path, k, &w)?)
        }
        Method::Dct => {
            let u = resample_uniform(path, n)?;
            let xs: Vec<f64> = u.iter().map(|p| p[0]).collect();
            let ys: Vec<f64> = u.iter().map(|p| p[1]).collect();
            let mut c = dct2(&xs, k);
            c.extend(dct2(&ys, k));
            c
        }
        Method::DctDeviation => {
            let u = resample_uniform(path, n)?;
            let (start, end) = (u[0], u[n - 1]);
            let normal = chord_normal(start, end)
                .ok_or_else(|| Error::InvalidInput("start and end coincide, chord undefined".into()))?;
            let dev: Vec<f64> = u
                .iter()
                .map(|p| (p[0] - start[0]) * normal[0] + (p[1] - start[1]) * normal[1])
                .collect();
            let mut c = vec![start[0], start[1], end[0], end[1]];
            c.extend(dct2(&dev, 2 * k - 4));
            c
        }
        Method::FftComplex => {
            let u = resample_uniform(path, n)?;
            let mut z: Vec<Complex64> = u.iter().map(|p| Complex64::new(p[0], p[1])).collect();
            FftPlanner::new().plan_fft_forward(n).process(&mut z);
            z.iter().take(k).flat_map(|c| [c.re, c.im]).collect()
        }
    };
    Ok(CompressedPath {
        method,
        k,
        original_length: n,
        coefficients,
    })
}

/// Expands a compressed path back to `l` points.
pub fn reconstruct(c: &CompressedPath, l: usize) -> Result<Vec<Point2>> {
    if l < 2 {
        return Err(Error::InvalidArgument(format!("reconstruction length {l} < 2")));
    }
    let k = c.k;
    let n = c.original_length;
    if k < c.method.min_k() || c.coefficients.len() != c.method.coefficient_len(k) {
        return Err(Error::Format(format!(
            "{} with K={k} expects {} coefficients, found {}",
            c.method,
            c.method.coefficient_len(k),
            c.coefficients.len()
        )));
    }
    if c.coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite coefficient".into()));
    }
    let needs_n = matches!(c.method, Method::Dct | Method::DctDeviation | Method::FftComplex);
    if needs_n && n < k.max(2) {
        return Err(Error::Format(format!("original length {n} inconsistent with K={k}")));
    }
    match c.method {
        Method::DirectK | Method::RdpK => resample_uniform(&c.points(), l),
        Method::SplineLsq | Method::Anchor => {
            let ctrl = c.points();
            let degree = spline_degree(k);
            let knots = clamped_knots(k, degree);
            Ok((0..l)
                .map(|j| {
                    let b = bspline_basis(&knots, degree, k, j as f64 / (l - 1) as f64);
                    ctrl.iter().zip(&b).fold([0.0, 0.0], |acc, (p, w)| {
                        [acc[0] + w * p[0], acc[1] + w * p[1]]
                    })
                })
                .collect())
        }
        Method::Dct => {
            let (cx, cy) = c.coefficients.split_at(k);
            Ok(sample_positions(n, l)
                .map(|s| [idct_at(cx, n, s), idct_at(cy, n, s)])
                .collect())
        }
        Method::DctDeviation => {
            let start = [c.coefficients[0], c.coefficients[1]];
            let end = [c.coefficients[2], c.coefficients[3]];
            let dev = &c.coefficients[4..];
            let normal = chord_normal(start, end)
                .ok_or_else(|| Error::Format("deviation chord endpoints coincide".into()))?;
            let mut out: Vec<Point2> = sample_positions(n, l)
                .map(|s| {
                    let f = s / (n - 1) as f64;
                    let d = idct_at(dev, n, s);
                    [
                        start[0] + f * (end[0] - start[0]) + d * normal[0],
                        start[1] + f * (end[1] - start[1]) + d * normal[1],
                    ]
                })
                .collect();
            out[0] = start;
            out[l - 1] = end;
            Ok(out)
        }
        Method::FftComplex => {
            let coeffs: Vec<Complex64> = c
                .coefficients
                .chunks_exact(2)
                .map(|v| Complex64::new(v[0], v[1]))
                .collect();
            let nf = n as f64;
            Ok(sample_positions(n, l)
                .map(|s| {
                    let z: Complex64 = coeffs
                        .iter()
                        .enumerate()
                        .map(|(kk, ck)| {
                            ck * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * kk as f64 * s / nf)
                        })
                        .sum::<Complex64>()
                        / nf;
                    [z.re, z.im]
                })
                .collect())
        }
    }
}

/// One row of the compression benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub k: usize,
    pub mean_dtw_km: f64,
    pub mean_frechet_km: f64,
    pub n_ok: usize,
    pub n_skipped: usize,
}

pub const BENCHMARK_CSV_HEADER: &str = "method,K,mean_dtw_km,mean_frechet_km,n_ok,n_skipped";

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from(BENCHMARK_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.k, r.mean_dtw_km, r.mean_frechet_km, r.n_ok, r.n_skipped
        ));
    }
    out
}

/// Reconstruction fidelity of every (method, K) over a dataset.
///
/// Each trajectory is normalized, resampled to `l` points, compressed,
/// reconstructed to `l` points and denormalized; DTW and Fréchet (km) are
/// measured against the `l`-point original. Failures are counted per cell
/// as skipped.
pub fn compression_benchmark(
    data: &[Trajectory],
    methods: &[Method],
    ks: &[usize],
    l: usize,
) -> Result<Vec<BenchmarkRow>> {
    if l < 4 {
        return Err(Error::InvalidArgument(format!("working length {l} < 4")));
    }
    let cells: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| ks.iter().map(move |&k| (m, k)))
        .collect();

    let per_traj: Vec<Vec<Option<(f64, f64)>>> = threads::install(|| {
        data.par_iter()
            .map(|traj| {
                let prepared = geo::normalize_trajectory(traj).and_then(|(path, frame)| {
                    let working = resample_uniform(&path, l)?;
                    let original = geo::denormalize(&working, &frame)?;
                    Ok((working, frame, original))
                });
                let Ok((working, frame, original)) = prepared else {
                    return vec![None; cells.len()];
                };
                let original: Vec<LatLon> = original.into_iter().map(LatLon).collect();
                cells
                    .iter()
                    .map(|&(m, k)| {
                        let rec = parameterize(&working, m, k)
                            .and_then(|c| reconstruct(&c, l))
                            .and_then(|r| geo::denormalize(&r, &frame))
                            .ok()?;
                        let rec: Vec<LatLon> = rec.into_iter().map(LatLon).collect();
                        Some((dtw(&original, &rec).ok()?, frechet(&original, &rec).ok()?))
                    })
                    .collect()
            })
            .collect()
    });

    Ok(cells
        .iter()
        .enumerate()
        .map(|(ci, &(method, k))| {
            let (mut sd, mut sf, mut ok) = (0.0, 0.0, 0usize);
            for row in &per_traj {
                if let Some((d, f)) = row[ci] {
                    sd += d;
                    sf += f;
                    ok += 1;
                }
            }
            let skipped = data.len() - ok;
            if skipped > 0 {
                log::warn!("{method} K={k}: {skipped} trajectories skipped");
            }
            let denom = ok.max(1) as f64;
            BenchmarkRow {
                method,
                k,
                mean_dtw_km: if ok > 0 { sd / denom } else { f64::NAN },
                mean_frechet_km: if ok > 0 { sf / denom } else { f64::NAN },
                n_ok: ok,
                n_skipped: skipped,
            }
        })
        .collect())
}
