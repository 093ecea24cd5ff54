#![allow(dead_code)]

use rand::Rng;
use trajflow::Point2;

/// Literal recursive transcription of the published RDP pseudocode.
pub fn rdp_oracle(traj: &[Point2], eps: f64) -> Vec<Point2> {
    let end = traj.len() - 1;
    let mut d_max = 0.0;
    let mut index = 0;
    for i in 1..end {
        let d = line_distance(traj[i], traj[0], traj[end]);
        if d > d_max {
            index = i;
            d_max = d;
        }
    }
    if d_max > eps {
        let results1 = rdp_oracle(&traj[0..=index], eps);
        let results2 = rdp_oracle(&traj[index..=end], eps);
        let mut out = results1[..results1.len() - 1].to_vec();
        out.extend(results2);
        out
    } else {
        vec![traj[0], traj[end]]
    }
}

/// Distance from `p` to the line through `a` and `b`, falling back to the
/// distance to `a` for a degenerate line.
fn line_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return (p[0] - a[0]).hypot(p[1] - a[1]);
    }
    (dx * (p[1] - a[1]) - dy * (p[0] - a[0])).abs() / len
}

/// Every monotone alignment from `(0, 0)` to the last pair, enumerated.
fn alignments(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(i: usize, j: usize, n: usize, m: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        cur.push((i, j));
        if i == n - 1 && j == m - 1 {
            out.push(cur.clone());
        } else {
            if i + 1 < n {
                walk(i + 1, j, n, m, cur, out);
            }
            if j + 1 < m {
                walk(i, j + 1, n, m, cur, out);
            }
            if i + 1 < n && j + 1 < m {
                walk(i + 1, j + 1, n, m, cur, out);
            }
        }
        cur.pop();
    }
    let mut out = Vec::new();
    walk(0, 0, n, m, &mut Vec::new(), &mut out);
    out
}

fn dist(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn brute_dtw(a: &[Point2], b: &[Point2]) -> f64 {
    alignments(a.len(), b.len())
        .iter()
        .map(|path| path.iter().fold(0.0, |acc, &(i, j)| acc + dist(a[i], b[j])))
        .fold(f64::INFINITY, f64::min)
}

pub fn brute_frechet(a: &[Point2], b: &[Point2]) -> f64 {
    alignments(a.len(), b.len())
        .iter()
        .map(|path| path.iter().fold(0.0, |acc: f64, &(i, j)| acc.max(dist(a[i], b[j]))))
        .fold(f64::INFINITY, f64::min)
}

/// A random polyline of `n` points: a random walk, with occasional
/// repeated vertices and snapped coordinates to exercise ties.
pub fn random_polyline(n: usize, rng: &mut impl Rng) -> Vec<Point2> {
    let mut p: Point2 = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if !out.is_empty() && rng.random_bool(0.05) {
            out.push(p);
            continue;
        }
        p = [p[0] + rng.random_range(-1.0..1.0), p[1] + rng.random_range(-1.0..1.0)];
        if rng.random_bool(0.1) {
            p = [p[0].round(), p[1].round()];
        }
        out.push(p);
    }
    out
}
