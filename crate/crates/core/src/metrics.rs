//! Trajectory fidelity metrics.
//!
//! Trajectory-level: dynamic time warping and discrete Fréchet distance,
//! both computed by O(mn) dynamic programming. Aggregate-level: the
//! Jensen–Shannon divergence (base 2) between mesh-count spatial density
//! histograms. Distances between geographic points are haversine km;
//! planar points use the Euclidean norm.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{euclidean, haversine_km, GeoPoint, Point2, TransportMode, Trajectory};
use crate::threads;

/// Laplace smoothing mass added to every density cell.
pub const DENSITY_SMOOTHING: f64 = 1e-9;

/// Default density grid.
pub const DEFAULT_BINS: (usize, usize) = (64, 64);

/// Ground distance between two sequence elements.
pub trait PointDistance {
    fn distance(&self, other: &Self) -> f64;
}

impl PointDistance for Point2 {
    fn distance(&self, other: &Self) -> f64 {
        euclidean(*self, *other)
    }
}

/// A `[lat, lon]` position measured by haversine km.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon(pub Point2);

impl PointDistance for LatLon {
    fn distance(&self, other: &Self) -> f64 {
        haversine_km(self.0, other.0)
    }
}

impl PointDistance for GeoPoint {
    fn distance(&self, other: &Self) -> f64 {
        haversine_km(self.position(), other.position())
    }
}

fn check_non_empty<P>(a: &[P], b: &[P]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("empty point sequence".into()));
    }
    Ok(())
}

/// Rolling-row DP shared by DTW and Fréchet. `combine(cost, best_prev)`
/// folds the local cost into the best predecessor value. Returns `None`
/// once every cell of a row exceeds `cutoff`.
fn warp_dp<P: PointDistance>(
    a: &[P],
    b: &[P],
    cutoff: f64,
    combine: impl Fn(f64, f64) -> f64,
) -> Option<f64> {
    let n = b.len();
    let mut prev = vec![f64::INFINITY; n];
    let mut cur = vec![f64::INFINITY; n];
    for (i, ai) in a.iter().enumerate() {
        let mut row_min = f64::INFINITY;
        for (j, bj) in b.iter().enumerate() {
            let d = ai.distance(bj);
            let v = if i == 0 && j == 0 {
                d
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(prev[j]);
                }
                if j > 0 {
                    best = best.min(cur[j - 1]);
                }
                if i > 0 && j > 0 {
                    best = best.min(prev[j - 1]);
                }
                combine(d, best)
            };
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > cutoff {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Some(prev[n - 1])
}

/// Dynamic time warping: minimum summed ground distance over monotone
/// alignments that start at both first points and end at both last points.
pub fn dtw<P: PointDistance>(a: &[P], b: &[P]) -> Result<f64> {
    check_non_empty(a, b)?;
    Ok(warp_dp(a, b, f64::INFINITY, |d, best| d + best).unwrap_or(f64::INFINITY))
}

/// DTW with early abandoning: `None` when the distance certainly exceeds
/// `cutoff`. Never abandons a pair whose distance is `<= cutoff`.
pub fn dtw_bounded<P: PointDistance>(a: &[P], b: &[P], cutoff: f64) -> Result<Option<f64>> {
    check_non_empty(a, b)?;
    Ok(warp_dp(a, b, cutoff, |d, best| d + best))
}

/// Discrete Fréchet distance via the coupling recurrence
/// `d(i,j) = max(|a_i - b_j|, min(d(i-1,j), d(i,j-1), d(i-1,j-1)))`.
pub fn frechet<P: PointDistance>(a: &[P], b: &[P]) -> Result<f64> {
    check_non_empty(a, b)?;
    Ok(warp_dp(a, b, f64::INFINITY, f64::max).unwrap_or(f64::INFINITY))
}

pub fn frechet_bounded<P: PointDistance>(a: &[P], b: &[P], cutoff: f64) -> Result<Option<f64>> {
    check_non_empty(a, b)?;
    Ok(warp_dp(a, b, cutoff, f64::max))
}

/// Geographic extent in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Self {
        Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        }
    }

    /// Tight box around every point of every trajectory.
    pub fn of_trajectories<'a>(data: impl IntoIterator<Item = &'a Trajectory>) -> Option<Self> {
        let mut b = BBox::new(f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        for p in data.into_iter().flat_map(|t| &t.points) {
            any = true;
            b.lat_min = b.lat_min.min(p.lat);
            b.lat_max = b.lat_max.max(p.lat);
            b.lon_min = b.lon_min.min(p.lon);
            b.lon_max = b.lon_max.max(p.lon);
        }
        any.then_some(b)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.lat_max > self.lat_min && self.lon_max > self.lon_min)
    }

    pub fn contains(&self, p: Point2) -> bool {
        (self.lat_min..=self.lat_max).contains(&p[0]) && (self.lon_min..=self.lon_max).contains(&p[1])
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox::new(
            self.lat_min.max(other.lat_min),
            self.lat_max.min(other.lat_max),
            self.lon_min.max(other.lon_min),
            self.lon_max.min(other.lon_max),
        );
        (b.lat_min <= b.lat_max && b.lon_min <= b.lon_max).then_some(b)
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        [
            p[0].clamp(self.lat_min, self.lat_max),
            p[1].clamp(self.lon_min, self.lon_max),
        ]
    }
}

/// Normalized 2-D occupancy histogram with one extra overflow cell for
/// points outside the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    pub bbox: BBox,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows * cols` cell masses.
    pub mass: Vec<f64>,
    pub overflow: f64,
    /// Set when the map was built from no points at all (uniform map).
    pub empty: bool,
}

impl DensityMap {
    /// Builds a map from raw non-negative masses, normalizing them to 1.
    pub fn from_mass(bbox: BBox, rows: usize, cols: usize, mass: Vec<f64>, overflow: f64) -> Result<Self> {
        if mass.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{} masses for a {rows}x{cols} grid",
                mass.len()
            )));
        }
        if mass.iter().chain(std::iter::once(&overflow)).any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("masses must be finite and non-negative".into()));
        }
        let total: f64 = mass.iter().sum::<f64>() + overflow;
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("total mass is zero".into()));
        }
        Ok(Self {
            bbox,
            rows,
            cols,
            mass: mass.into_iter().map(|m| m / total).collect(),
            overflow: overflow / total,
            empty: false,
        })
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.overflow
    }

    fn cells(&self) -> impl Iterator<Item = f64> + '_ {
        self.mass.iter().copied().chain(std::iter::once(self.overflow))
    }

    fn cell_of(&self, p: Point2) -> Option<usize> {
        let b = &self.bbox;
        if !b.contains(p) {
            return None;
        }
        let r = ((p[0] - b.lat_min) / (b.lat_max - b.lat_min) * self.rows as f64) as usize;
        let c = ((p[1] - b.lon_min) / (b.lon_max - b.lon_min) * self.cols as f64) as usize;
        Some(r.min(self.rows - 1) * self.cols + c.min(self.cols - 1))
    }
}

/// Mesh-count density of every trajectory point, Laplace-smoothed.
pub fn density_histogram<'a>(
    data: impl IntoIterator<Item = &'a Trajectory>,
    bbox: BBox,
    bins: (usize, usize),
) -> Result<DensityMap> {
    density_of_points(data.into_iter().flat_map(|t| t.points.iter().map(GeoPoint::position)), bbox, bins)
}

pub fn density_of_points(
    points: impl IntoIterator<Item = Point2>,
    bbox: BBox,
    bins: (usize, usize),
) -> Result<DensityMap> {
    let (rows, cols) = bins;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("density grid needs at least one bin per axis".into()));
    }
    if bbox.is_degenerate() {
        return Err(Error::InvalidArgument(format!("degenerate bbox {bbox:?}")));
    }
    let mut map = DensityMap {
        bbox,
        rows,
        cols,
        mass: vec![0.0; rows * cols],
        overflow: 0.0,
        empty: false,
    };
    let mut count = 0usize;
    for p in points {
        count += 1;
        match map.cell_of(p) {
            Some(i) => map.mass[i] += 1.0,
            None => map.overflow += 1.0,
        }
    }
    if count == 0 {
        log::warn!("density histogram of an empty dataset; returning a uniform map");
        map.empty = true;
    }
    for m in map.mass.iter_mut().chain(std::iter::once(&mut map.overflow)) {
        *m += DENSITY_SMOOTHING;
    }
    let total = map.total();
    for m in map.mass.iter_mut().chain(std::iter::once(&mut map.overflow)) {
        *m /= total;
    }
    Ok(map)
}

/// Jensen–Shannon divergence in bits, in `[0, 1]`.
pub fn js_divergence(p: &DensityMap, q: &DensityMap) -> Result<f64> {
    if p.rows != q.rows || p.cols != q.cols || p.bbox != q.bbox {
        return Err(Error::InvalidArgument("density maps differ in bbox or bins".into()));
    }
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let js: f64 = p
        .cells()
        .zip(q.cells())
        .map(|(a, b)| {
            let m = 0.5 * (a + b);
            0.5 * term(a, m) + 0.5 * term(b, m)
        })
        .sum();
    Ok(js.clamp(0.0, 1.0))
}

/// Median, interquartile range and 10th/90th percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistStats {
    pub median: f64,
    pub iqr: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Percentile by linear interpolation between order statistics
/// (inclusive method) on an ascending slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn distribution_stats(values: &[f64]) -> Result<DistStats> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no values to summarize".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(DistStats {
        median: percentile_sorted(&v, 0.5),
        iqr: percentile_sorted(&v, 0.75) - percentile_sorted(&v, 0.25),
        p10: percentile_sorted(&v, 0.1),
        p90: percentile_sorted(&v, 0.9),
    })
}

/// Generated-vs-real comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub density_js: f64,
    pub dtw: DistStats,
    pub frechet: DistStats,
    pub n_pairs: usize,
}

/// Flat on-disk form of [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReportJson {
    pub density_js: f64,
    pub dtw_med: f64,
    pub dtw_iqr: f64,
    pub dtw_p10: f64,
    pub dtw_p90: f64,
    pub fr_med: f64,
    pub fr_iqr: f64,
    pub fr_p10: f64,
    pub fr_p90: f64,
    pub n_pairs: usize,
}

impl From<&MetricReport> for MetricReportJson {
    fn from(r: &MetricReport) -> Self {
        Self {
            density_js: r.density_js,
            dtw_med: r.dtw.median,
            dtw_iqr: r.dtw.iqr,
            dtw_p10: r.dtw.p10,
            dtw_p90: r.dtw.p90,
            fr_med: r.frechet.median,
            fr_iqr: r.frechet.iqr,
            fr_p10: r.frechet.p10,
            fr_p90: r.frechet.p90,
            n_pairs: r.n_pairs,
        }
    }
}

impl From<&MetricReportJson> for MetricReport {
    fn from(j: &MetricReportJson) -> Self {
        Self {
            density_js: j.density_js,
            dtw: DistStats {
                median: j.dtw_med,
                iqr: j.dtw_iqr,
                p10: j.dtw_p10,
                p90: j.dtw_p90,
            },
            frechet: DistStats {
                median: j.fr_med,
                iqr: j.fr_iqr,
                p10: j.fr_p10,
                p90: j.fr_p90,
            },
            n_pairs: j.n_pairs,
        }
    }
}

#[derive(Clone, Copy)]
enum Metric {
    Dtw,
    Frechet,
}

/// Distance from `query` to its nearest neighbour in `pool` under `metric`.
/// Candidates are visited in lower-bound order and abandoned early; the
/// result equals the exhaustive minimum.
fn nearest(query: &[GeoPoint], pool: &[&[GeoPoint]], metric: Metric) -> f64 {
    let q0 = query[0];
    let qn = query[query.len() - 1];
    let mut order: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .map(|(k, cand)| {
            let start = q0.distance(&cand[0]);
            let end = qn.distance(&cand[cand.len() - 1]);
            let lb = match metric {
                Metric::Dtw if query.len() > 1 || cand.len() > 1 => start + end,
                Metric::Dtw => start,
                Metric::Frechet => start.max(end),
            };
            (lb, k)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best = f64::INFINITY;
    for (lb, k) in order {
        if lb > best {
            break;
        }
        let d = match metric {
            Metric::Dtw => warp_dp(query, pool[k], best, |d, b| d + b),
            Metric::Frechet => warp_dp(query, pool[k], best, f64::max),
        };
        if let Some(d) = d {
            best = best.min(d);
        }
    }
    best
}

/// Nearest-neighbour DTW and Fréchet distances (km) of every generated
/// trajectory against the real set, in generated order.
pub fn nearest_distances(real: &[Trajectory], generated: &[Trajectory]) -> Result<(Vec<f64>, Vec<f64>)> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::InvalidInput("evaluation needs non-empty datasets".into()));
    }
    let pool: Vec<&[GeoPoint]> = real.iter().map(|t| t.points.as_slice()).collect();
    let pairs: Vec<(f64, f64)> = threads::install(|| {
        generated
            .par_iter()
            .map(|g| {
                (
                    nearest(&g.points, &pool, Metric::Dtw),
                    nearest(&g.points, &pool, Metric::Frechet),
                )
            })
            .collect()
    });
    Ok(pairs.into_iter().unzip())
}

/// Full generated-vs-real report.
pub fn evaluate(real: &[Trajectory], generated: &[Trajectory], bbox: BBox, bins: (usize, usize)) -> Result<MetricReport> {
    let (dtws, frs) = nearest_distances(real, generated)?;
    let p = density_histogram(real, bbox, bins)?;
    let q = density_histogram(generated, bbox, bins)?;
    Ok(MetricReport {
        density_js: js_divergence(&p, &q)?,
        dtw: distribution_stats(&dtws)?,
        frechet: distribution_stats(&frs)?,
        n_pairs: generated.len(),
    })
}

/// Mean trip length per transport mode for real and generated sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDistance {
    pub mode: TransportMode,
    pub n_real: usize,
    pub n_generated: usize,
    /// km; `None` when the mode is absent.
    pub real_mean_km: Option<f64>,
    pub generated_mean_km: Option<f64>,
}

fn mean_length(data: &[Trajectory], mode: TransportMode) -> (usize, Option<f64>) {
    let lengths: Vec<f64> = data.iter().filter(|t| t.mode == mode).map(Trajectory::length_km).collect();
    let n = lengths.len();
    (n, (n > 0).then(|| lengths.iter().sum::<f64>() / n as f64))
}

pub fn per_mode_distances(real: &[Trajectory], generated: &[Trajectory]) -> Vec<ModeDistance> {
    TransportMode::ALL
        .into_iter()
        .map(|mode| {
            let (n_real, real_mean_km) = mean_length(real, mode);
            let (n_generated, generated_mean_km) = mean_length(generated, mode);
            ModeDistance {
                mode,
                n_real,
                n_generated,
                real_mean_km,
                generated_mean_km,
            }
        })
        .collect()
}
