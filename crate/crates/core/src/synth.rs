//! Deterministic synthetic multi-scale trajectory world.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{
    cumulative_arc_length, km_to_lat_deg, km_to_lon_deg, resample_uniform, GeoPoint, Point2, TransportMode,
    Trajectory, DEPARTURE_BINS,
};
use crate::io::{self, SplitManifest};
use crate::metrics::BBox;
use crate::threads;

pub const DEFAULT_CURVATURE: f64 = 0.25;
pub const MIN_POINTS: usize = 40;
pub const MAX_POINTS: usize = 120;
/// Share of non-corridor trip endpoints drawn around a zone's activity center.
pub const HOTSPOT_SHARE: f64 = 0.7;
/// Spread of endpoints around an activity center, in cell-local units.
pub const HOTSPOT_SPREAD: f64 = 0.2;

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const WORLD_FILE: &str = "world.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scale {
    Urban,
    Metro,
    Nationwide,
}

impl Scale {
    /// Side length of the world box in km.
    pub fn extent_km(self) -> f64 {
        match self {
            Scale::Urban => 40.0,
            Scale::Metro => 150.0,
            Scale::Nationwide => 1500.0,
        }
    }

    pub fn grid(self) -> (usize, usize) {
        match self {
            Scale::Urban => (12, 12),
            Scale::Metro => (10, 10),
            Scale::Nationwide => (16, 16),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Urban => "URBAN",
            Scale::Metro => "METRO",
            Scale::Nationwide => "NATIONWIDE",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "URBAN" => Ok(Scale::Urban),
            "METRO" => Ok(Scale::Metro),
            "NATIONWIDE" => Ok(Scale::Nationwide),
            other => Err(Error::InvalidArgument(format!(
                "unknown scale `{other}` (expected urban, metro or nationwide)"
            ))),
        }
    }
}

/// Movement statistics of one transport mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeProfile {
    pub speed_kmh_mean: f64,
    pub speed_kmh_sd: f64,
    pub trip_km_mean: f64,
    pub trip_km_sd: f64,
    pub jitter_km: f64,
    /// Probability of following a fixed corridor.
    pub corridor_bias: f64,
}

impl ModeProfile {
    fn new(speed: f64, trip: f64, corridor_bias: f64) -> Self {
        Self {
            speed_kmh_mean: speed,
            speed_kmh_sd: 0.2 * speed,
            trip_km_mean: trip,
            trip_km_sd: 0.5 * trip,
            jitter_km: 0.0015 * speed,
            corridor_bias,
        }
    }

    pub fn defaults(mode: TransportMode) -> Self {
        match mode {
            TransportMode::Walk => Self::new(4.5, 1.5, 0.0),
            TransportMode::Bike => Self::new(14.0, 4.0, 0.0),
            TransportMode::Car => Self::new(35.0, 12.0, 0.0),
            TransportMode::Train => Self::new(60.0, 30.0, 1.0),
            TransportMode::Other => Self::new(20.0, 6.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub scale: Scale,
    pub bbox: BBox,
    pub rows: usize,
    pub cols: usize,
    /// Indexed by [`TransportMode::index`].
    pub profiles: Vec<ModeProfile>,
    pub mode_weights: Vec<f64>,
    pub corridors: Vec<[Point2; 2]>,
    /// Activity center of each zone in cell-local coordinates.
    pub hotspots: Vec<Point2>,
    /// Sub-regions trips are drawn in; more than one only at national scale.
    pub regions: Vec<BBox>,
    /// Bend of generated paths relative to their chord length.
    pub curvature: f64,
}

fn box_around(center: Point2, extent_km: f64) -> BBox {
    let dlat = km_to_lat_deg(extent_km / 2.0);
    let dlon = km_to_lon_deg(extent_km / 2.0, center[0]);
    BBox::new(center[0] - dlat, center[0] + dlat, center[1] - dlon, center[1] + dlon)
}

fn uniform_in(b: &BBox, rng: &mut impl Rng) -> Point2 {
    [
        rng.random_range(b.lat_min..=b.lat_max),
        rng.random_range(b.lon_min..=b.lon_max),
    ]
}

/// Local tangent-plane helpers around a reference latitude (x east, y north, km).
fn to_km(p: Point2, origin: Point2) -> [f64; 2] {
    let km_per_lat = 1.0 / km_to_lat_deg(1.0);
    let km_per_lon = 1.0 / km_to_lon_deg(1.0, origin[0]);
    [(p[1] - origin[1]) * km_per_lon, (p[0] - origin[0]) * km_per_lat]
}

fn from_km(v: [f64; 2], origin: Point2) -> Point2 {
    [origin[0] + km_to_lat_deg(v[1]), origin[1] + km_to_lon_deg(v[0], origin[0])]
}

pub fn make_world(seed: u64, scale: Scale) -> World {
    make_world_with_curvature(seed, scale, DEFAULT_CURVATURE)
}

pub fn make_world_with_curvature(seed: u64, scale: Scale, curvature: f64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = [
        35.0 + rng.random_range(-2.0..2.0),
        137.0 + rng.random_range(-3.0..3.0),
    ];
    let extent = scale.extent_km();
    let bbox = box_around(center, extent);
    let (rows, cols) = scale.grid();

    let regions = match scale {
        Scale::Urban | Scale::Metro => vec![bbox],
        Scale::Nationwide => [20.0, 40.0, 80.0, 160.0, 320.0, 640.0]
            .into_iter()
            .map(|size: f64| {
                let half = box_around(center, extent - size);
                box_around(uniform_in(&half, &mut rng), size)
            })
            .collect(),
    };

    let mut corridors = Vec::new();
    while corridors.len() < 3 {
        let a = uniform_in(&bbox, &mut rng);
        let b = uniform_in(&bbox, &mut rng);
        let v = to_km(b, a);
        if v[0].hypot(v[1]) >= 0.6 * extent {
            corridors.push([a, b]);
        }
    }

    let hotspots = (0..rows * cols)
        .map(|_| [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)])
        .collect();

    World {
        seed,
        scale,
        bbox,
        rows,
        cols,
        profiles: TransportMode::ALL.iter().map(|&m| ModeProfile::defaults(m)).collect(),
        mode_weights: vec![0.15, 0.25, 0.25, 0.2, 0.15],
        corridors,
        hotspots,
        regions,
        curvature,
    }
}

impl World {
    pub fn zone_count(&self) -> usize {
        self.rows * self.cols
    }

    fn cell_index(&self, p: Point2) -> (usize, usize) {
        let b = &self.bbox;
        let fr = (p[0] - b.lat_min) / (b.lat_max - b.lat_min);
        let fc = (p[1] - b.lon_min) / (b.lon_max - b.lon_min);
        let r = ((fr * self.rows as f64).floor().max(0.0) as usize).min(self.rows - 1);
        let c = ((fc * self.cols as f64).floor().max(0.0) as usize).min(self.cols - 1);
        (r, c)
    }

    /// Zone id of the cell containing `p` (clamped to the grid).
    pub fn zone_of(&self, p: Point2) -> u32 {
        let (r, c) = self.cell_index(p);
        (r * self.cols + c) as u32
    }

    pub fn zone_cell(&self, zone: u32) -> Result<BBox> {
        let z = zone as usize;
        if z >= self.zone_count() {
            return Err(Error::InvalidArgument(format!("zone {zone} outside {} zones", self.zone_count())));
        }
        let (r, c) = (z / self.cols, z % self.cols);
        let b = &self.bbox;
        let dlat = (b.lat_max - b.lat_min) / self.rows as f64;
        let dlon = (b.lon_max - b.lon_min) / self.cols as f64;
        Ok(BBox::new(
            b.lat_min + r as f64 * dlat,
            b.lat_min + (r + 1) as f64 * dlat,
            b.lon_min + c as f64 * dlon,
            b.lon_min + (c + 1) as f64 * dlon,
        ))
    }

    /// Position within the zone cell mapped to `[-1, 1]²`.
    pub fn to_cell_local(&self, zone: u32, p: Point2) -> Result<Point2> {
        let cell = self.zone_cell(zone)?;
        Ok([
            2.0 * (p[0] - cell.lat_min) / (cell.lat_max - cell.lat_min) - 1.0,
            2.0 * (p[1] - cell.lon_min) / (cell.lon_max - cell.lon_min) - 1.0,
        ])
    }

    pub fn from_cell_local(&self, zone: u32, q: Point2) -> Result<Point2> {
        let cell = self.zone_cell(zone)?;
        Ok([
            cell.lat_min + 0.5 * (q[0] + 1.0) * (cell.lat_max - cell.lat_min),
            cell.lon_min + 0.5 * (q[1] + 1.0) * (cell.lon_max - cell.lon_min),
        ])
    }

    pub fn profile(&self, mode: TransportMode) -> &ModeProfile {
        &self.profiles[mode.index()]
    }

    fn pick_mode(&self, rng: &mut impl Rng) -> TransportMode {
        let total: f64 = self.mode_weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, w) in self.mode_weights.iter().enumerate() {
            if u < *w {
                return TransportMode::ALL[i];
            }
            u -= w;
        }
        TransportMode::Other
    }
}

fn departure_bin(rng: &mut impl Rng) -> u16 {
    let u: f64 = rng.random();
    let hours = if u < 0.35 {
        8.0 + rng.sample::<f64, _>(StandardNormal)
    } else if u < 0.7 {
        18.0 + 1.5 * rng.sample::<f64, _>(StandardNormal)
    } else {
        rng.random_range(0.0..24.0)
    };
    let bins = DEPARTURE_BINS as f64;
    ((hours * 12.0).floor().rem_euclid(bins) as usize).min(DEPARTURE_BINS - 1) as u16
}

fn trip_length(p: &ModeProfile, rng: &mut impl Rng) -> f64 {
    let s2 = (1.0 + (p.trip_km_sd / p.trip_km_mean).powi(2)).ln();
    let mu = p.trip_km_mean.ln() - s2 / 2.0;
    LogNormal::new(mu, s2.sqrt()).expect("valid profile").sample(rng).max(0.2)
}

/// A trip origin in `region`, drawn around its zone's activity center with
/// probability [`HOTSPOT_SHARE`] and uniformly otherwise.
fn origin_in(world: &World, region: &BBox, rng: &mut impl Rng) -> Point2 {
    let p = uniform_in(region, rng);
    if rng.random::<f64>() >= HOTSPOT_SHARE {
        return p;
    }
    let zone = world.zone_of(p);
    let h = world.hotspots[zone as usize];
    let spread = Normal::new(0.0, HOTSPOT_SPREAD).expect("sigma");
    let q = [
        (h[0] + spread.sample(rng)).clamp(-0.999, 0.999),
        (h[1] + spread.sample(rng)).clamp(-0.999, 0.999),
    ];
    let o = world.from_cell_local(zone, q).expect("zone in grid");
    if region.contains(o) {
        o
    } else {
        p
    }
}

/// Draws origin and destination for a trip of roughly `length` km.
fn endpoints(world: &World, mode: TransportMode, mut length: f64, rng: &mut impl Rng) -> (Point2, Point2) {
    let profile = world.profile(mode);
    if !world.corridors.is_empty() && rng.random::<f64>() < profile.corridor_bias {
        let [a, b] = *world.corridors.choose(rng).expect("corridors");
        let v = to_km(b, a);
        let len = v[0].hypot(v[1]);
        let length = length.min(0.9 * len);
        let span = 1.0 - length / len;
        let s0 = rng.random_range(0.0..=span);
        let (s_o, s_d) = if rng.random::<bool>() { (s0, s0 + length / len) } else { (s0 + length / len, s0) };
        let noise = Normal::new(0.0, 0.3).expect("sigma");
        let mut at = |s: f64| {
            let p = [v[0] * s + noise.sample(rng), v[1] * s + noise.sample(rng)];
            world.bbox.clamp(from_km(p, a))
        };
        let o = at(s_o);
        return (o, at(s_d));
    }
    let region = *world.regions.choose(rng).expect("regions");
    loop {
        for _ in 0..20 {
            let o = origin_in(world, &region, rng);
            let hot = rng.random::<f64>() < HOTSPOT_SHARE;
            let mut best: Option<(f64, Point2)> = None;
            for _ in 0..24 {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let d = from_km([length * angle.cos(), length * angle.sin()], o);
                if !region.contains(d) {
                    continue;
                }
                if !hot {
                    return (o, d);
                }
                let zone = world.zone_of(d);
                let h = world.hotspots[zone as usize];
                let q = world.to_cell_local(zone, d).expect("zone in grid");
                let gap = (q[0] - h[0]).hypot(q[1] - h[1]);
                if best.is_none_or(|(g, _)| gap < g) {
                    best = Some((gap, d));
                }
            }
            if let Some((_, d)) = best {
                return (o, d);
            }
        }
        length *= 0.85;
    }
}

/// Samples one trajectory from the world.
pub fn sample_trajectory(world: &World, id: impl Into<String>, rng: &mut impl Rng) -> Result<Trajectory> {
    let mode = world.pick_mode(rng);
    let profile = *world.profile(mode);
    let length = trip_length(&profile, rng);
    let (o, d) = endpoints(world, mode, length, rng);

    let chord = to_km(d, o);
    let dist = chord[0].hypot(chord[1]).max(1e-6);
    let normal = [-chord[1] / dist, chord[0] / dist];
    let bend = if profile.corridor_bias > 0.0 { 0.3 } else { 1.0 } * world.curvature * dist;
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let c1 = [chord[0] / 3.0 + normal[0] * bend * z1, chord[1] / 3.0 + normal[1] * bend * z1];
    let c2 = [2.0 * chord[0] / 3.0 + normal[0] * bend * z2, 2.0 * chord[1] / 3.0 + normal[1] * bend * z2];
    let dense: Vec<Point2> = (0..=300)
        .map(|i| {
            let u = i as f64 / 300.0;
            let (b, c, e) = (3.0 * (1.0 - u).powi(2) * u, 3.0 * (1.0 - u) * u * u, u.powi(3));
            [
                b * c1[0] + c * c2[0] + e * chord[0],
                b * c1[1] + c * c2[1] + e * chord[1],
            ]
        })
        .collect();

    let n = rng.random_range(MIN_POINTS..=MAX_POINTS);
    let mut path = resample_uniform(&dense, n)?;
    let jitter = Normal::new(0.0, profile.jitter_km).expect("sigma");
    for (i, p) in path.iter_mut().enumerate().take(n - 1).skip(1) {
        let taper = (std::f64::consts::PI * i as f64 / (n - 1) as f64).sin();
        p[0] += taper * jitter.sample(rng);
        p[1] += taper * jitter.sample(rng);
    }
    let positions: Vec<Point2> = path
        .iter()
        .enumerate()
        .map(|(i, &v)| match i {
            0 => o,
            i if i == n - 1 => d,
            _ => world.bbox.clamp(from_km(v, o)),
        })
        .collect();

    let cum = cumulative_arc_length(&to_km_path(&positions, o));
    let total_km = cum[n - 1].max(1e-3);
    let speed = Normal::new(profile.speed_kmh_mean, profile.speed_kmh_sd)
        .expect("sigma")
        .sample(rng)
        .clamp(0.4 * profile.speed_kmh_mean, 2.0 * profile.speed_kmh_mean);
    let duration = total_km / speed * 3600.0;
    let points = positions
        .iter()
        .zip(&cum)
        .map(|(p, c)| GeoPoint::new(p[0], p[1], duration * c / total_km))
        .collect();
    let od = (world.zone_of(o), world.zone_of(d));
    Trajectory::new(id, points, mode, departure_bin(rng), od)
}

fn to_km_path(path: &[Point2], origin: Point2) -> Vec<Point2> {
    path.iter().map(|&p| to_km(p, origin)).collect()
}

/// Stream-separated generator for item `index` under `seed`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Trajectories `start..start + n` of the world's stream for `seed`.
pub fn sample_range(world: &World, seed: u64, start: u64, n: usize) -> Result<Vec<Trajectory>> {
    threads::install(|| {
        (start..start + n as u64)
            .into_par_iter()
            .map(|i| sample_trajectory(world, format!("t{i:06}"), &mut item_rng(seed, i)))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub world: World,
    pub trajectories: Vec<Trajectory>,
    pub split: SplitManifest,
}

/// `n` trajectories with an 80/10/10 split in generation order.
pub fn make_dataset(world: &World, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let trajectories = sample_range(world, seed, 0, n)?;
    let split = SplitManifest::from_ordered_ids(trajectories.iter().map(|t| t.id.clone()).collect());
    Ok(Dataset {
        world: world.clone(),
        trajectories,
        split,
    })
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        io::write_jsonl(&dir.join(TRAJECTORIES_FILE), &self.trajectories)?;
        io::write_json(&dir.join(SPLIT_FILE), &self.split)?;
        io::write_json(&dir.join(WORLD_FILE), &self.world)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Self {
            trajectories: io::read_jsonl(&dir.join(TRAJECTORIES_FILE))?,
            split: io::read_json(&dir.join(SPLIT_FILE))?,
            world: io::read_json(&dir.join(WORLD_FILE))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::path_stats;

    #[test]
    fn worlds_are_deterministic_and_ordered_by_extent() {
        assert_eq!(make_world(5, Scale::Urban), make_world(5, Scale::Urban));
        let span = |s| {
            let b = make_world(1, s).bbox;
            b.lat_max - b.lat_min
        };
        assert!(span(Scale::Urban) < span(Scale::Metro));
        assert!(span(Scale::Metro) < span(Scale::Nationwide));
        for s in [Scale::Urban, Scale::Metro, Scale::Nationwide] {
            let w = make_world(2, s);
            let (r, c) = s.grid();
            assert_eq!(w.zone_count(), r * c);
            let ids: std::collections::BTreeSet<u32> = (0..r)
                .flat_map(|i| (0..c).map(move |j| (i, j)))
                .map(|(i, j)| {
                    let cell = w.zone_cell((i * c + j) as u32).unwrap();
                    w.zone_of([(cell.lat_min + cell.lat_max) / 2.0, (cell.lon_min + cell.lon_max) / 2.0])
                })
                .collect();
            assert_eq!(ids.len(), r * c);
        }
        assert!("suburban".parse::<Scale>().is_err());
        assert_eq!("Metro".parse::<Scale>().unwrap(), Scale::Metro);
    }

    #[test]
    fn cell_local_round_trip() {
        let w = make_world(3, Scale::Metro);
        let p = [w.bbox.lat_min + 0.3, w.bbox.lon_min + 0.9];
        let z = w.zone_of(p);
        let q = w.to_cell_local(z, p).unwrap();
        assert!(q.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = w.from_cell_local(z, q).unwrap();
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
        assert!(w.zone_cell(100).is_err());
    }

    #[test]
    fn samples_are_valid_and_endpoints_sit_in_their_zones() {
        for scale in [Scale::Urban, Scale::Metro, Scale::Nationwide] {
            let w = make_world(11, scale);
            for t in sample_range(&w, 4, 0, 300).unwrap() {
                t.validate().unwrap();
                assert!((MIN_POINTS..=MAX_POINTS).contains(&t.points.len()));
                let first = t.points[0].position();
                let last = t.points[t.points.len() - 1].position();
                assert_eq!(w.zone_of(first), t.od_zone.0);
                assert_eq!(w.zone_of(last), t.od_zone.1);
                assert!(t.points.iter().all(|p| w.bbox.contains(p.position())));
                assert!(t.elapsed_time() > 0.0);
            }
        }
    }

    #[test]
    fn endpoints_cluster_around_activity_centers() {
        let w = make_world(11, Scale::Urban);
        assert_eq!(w.hotspots.len(), w.zone_count());
        let data = sample_range(&w, 4, 0, 2000).unwrap();
        let gap = |zone: u32, p: Point2| {
            let q = w.to_cell_local(zone, p).unwrap();
            let h = w.hotspots[zone as usize];
            (q[0] - h[0]).hypot(q[1] - h[1])
        };
        let gaps: Vec<f64> = data
            .iter()
            .filter(|t| t.mode != TransportMode::Train)
            .flat_map(|t| [gap(t.od_zone.0, t.points[0].position()), gap(t.od_zone.1, t.points[t.points.len() - 1].position())])
            .collect();
        let near = gaps.iter().filter(|&&g| g < 0.4).count() as f64 / gaps.len() as f64;
        // A uniform endpoint lands within 0.4 of the center about π·0.4²/4 ≈ 13% of the time.
        assert!(near > 0.4, "{near}");
    }

    fn by_mode(data: &[Trajectory], mode: TransportMode) -> Vec<f64> {
        data.iter()
            .filter(|t| t.mode == mode)
            .map(|t| path_stats(t).unwrap().cumulative_distance)
            .collect()
    }

    #[test]
    fn mode_profiles_are_separable() {
        let w = make_world(21, Scale::Metro);
        let data = sample_range(&w, 9, 0, 10_000).unwrap();
        let walk = by_mode(&data, TransportMode::Walk);
        let train = by_mode(&data, TransportMode::Train);
        let short = walk.iter().filter(|&&d| d < 10.0).count() as f64 / walk.len() as f64;
        assert!(short >= 0.99, "{short}");
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&train) > mean(&walk));
        // Welch t statistic; |t| > 3.3 corresponds to p < 0.001 at these sizes.
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let t = (mean(&train) - mean(&walk)) / (var(&train) / train.len() as f64 + var(&walk) / walk.len() as f64).sqrt();
        assert!(t > 3.3, "t = {t}");
        let means: Vec<f64> = [TransportMode::Train, TransportMode::Car, TransportMode::Bike, TransportMode::Walk]
            .iter()
            .map(|&m| mean(&by_mode(&data, m)))
            .collect();
        assert!(means.windows(2).all(|p| p[0] > p[1]), "{means:?}");
    }

    #[test]
    fn datasets_are_reproducible() {
        let w = make_world(7, Scale::Urban);
        let a = make_dataset(&w, 1000, 7).unwrap();
        let b = make_dataset(&w, 1000, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.split.train.len(), a.split.val.len(), a.split.test.len()), (800, 100, 100));
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        let h1 = io::sha256_file(&dir.path().join(TRAJECTORIES_FILE)).unwrap();
        b.write(dir.path()).unwrap();
        assert_eq!(h1, io::sha256_file(&dir.path().join(TRAJECTORIES_FILE)).unwrap());
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.trajectories.len(), 1000);
        assert_eq!(back.world, w);
        assert!(make_dataset(&w, 0, 7).is_err());
    }
}
