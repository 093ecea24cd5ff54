//! Trajectory data model, per-trajectory normalization and arc-length
//! resampling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in km used for every great-circle distance.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Number of 5-minute departure bins in a day.
pub const DEPARTURE_BINS: usize = 288;

/// Planar point. For geographic positions the order is `[lat, lon]`.
pub type Point2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    /// Seconds since trajectory start.
    pub t: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, t: f64) -> Self {
        Self { lat, lon, t }
    }

    pub fn position(&self) -> Point2 {
        [self.lat, self.lon]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TransportMode {
    Train,
    Car,
    Walk,
    Bike,
    Other,
}

impl TransportMode {
    pub const ALL: [TransportMode; 5] = [
        TransportMode::Train,
        TransportMode::Car,
        TransportMode::Walk,
        TransportMode::Bike,
        TransportMode::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransportMode::Train => "TRAIN",
            TransportMode::Car => "CAR",
            TransportMode::Walk => "WALK",
            TransportMode::Bike => "BIKE",
            TransportMode::Other => "OTHER",
        }
    }
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TRAIN" => Ok(TransportMode::Train),
            "CAR" => Ok(TransportMode::Car),
            "WALK" => Ok(TransportMode::Walk),
            "BIKE" => Ok(TransportMode::Bike),
            "OTHER" => Ok(TransportMode::Other),
            other => Err(Error::InvalidArgument(format!("unknown transport mode `{other}`"))),
        }
    }
}

/// An ordered, timestamped GPS movement segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<GeoPoint>,
    pub mode: TransportMode,
    pub departure_bin: u16,
    /// (origin zone, destination zone)
    pub od_zone: (u32, u32),
}

impl Trajectory {
    /// Builds a trajectory and checks its invariants.
    pub fn new(
        id: impl Into<String>,
        points: Vec<GeoPoint>,
        mode: TransportMode,
        departure_bin: u16,
        od_zone: (u32, u32),
    ) -> Result<Self> {
        let traj = Self {
            id: id.into(),
            points,
            mode,
            departure_bin,
            od_zone,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "{} points, at least 2 required",
                self.points.len()
            )));
        }
        if usize::from(self.departure_bin) >= DEPARTURE_BINS {
            return Err(Error::InvalidTrajectory(format!(
                "departure bin {} outside [0, {})",
                self.departure_bin, DEPARTURE_BINS
            )));
        }
        let mut prev_t = f64::NEG_INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            if !(p.lat.is_finite() && p.lon.is_finite() && p.t.is_finite()) {
                return Err(Error::InvalidTrajectory(format!("point {i} is not finite")));
            }
            if !(-90.0..=90.0).contains(&p.lat) || !(-180.0..=180.0).contains(&p.lon) {
                return Err(Error::InvalidTrajectory(format!(
                    "point {i} ({}, {}) outside WGS84 range",
                    p.lat, p.lon
                )));
            }
            if p.t < 0.0 {
                return Err(Error::InvalidTrajectory(format!("point {i} has negative time")));
            }
            if p.t < prev_t {
                return Err(Error::InvalidTrajectory(format!("timestamps decrease at point {i}")));
            }
            prev_t = p.t;
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.points.iter().map(GeoPoint::position).collect()
    }

    pub fn elapsed_time(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Total great-circle length in km.
    pub fn length_km(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| haversine_km(w[0].position(), w[1].position()))
            .sum()
    }
}

/// Per-axis affine map between geographic degrees and the normalized box.
///
/// `geo = offset + scale * normalized`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFrame {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl NormalizationFrame {
    pub fn new(offset: [f64; 2], scale: [f64; 2]) -> Result<Self> {
        let frame = Self { offset, scale };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.offset.iter().chain(&self.scale).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("normalization frame is not finite".into()));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frame scale must be positive, got {:?}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn to_normalized(&self, p: Point2) -> Point2 {
        [
            (p[0] - self.offset[0]) / self.scale[0],
            (p[1] - self.offset[1]) / self.scale[1],
        ]
    }

    pub fn to_geo(&self, q: Point2) -> Point2 {
        [
            self.offset[0] + self.scale[0] * q[0],
            self.offset[1] + self.scale[1] * q[1],
        ]
    }
}

/// Min-max normalizes a set of positions into `[-1, 1]²`.
///
/// An axis without spatial extent maps to 0 with scale 1.
pub fn normalize_positions(positions: &[Point2]) -> Result<(Vec<Point2>, NormalizationFrame)> {
    if positions.len() < 2 {
        return Err(Error::InvalidTrajectory(format!(
            "{} points, at least 2 required",
            positions.len()
        )));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in positions {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::Numeric("non-finite position".into()));
        }
        for axis in 0..2 {
            lo[axis] = lo[axis].min(p[axis]);
            hi[axis] = hi[axis].max(p[axis]);
        }
    }
    let mut offset = [0.0; 2];
    let mut scale = [1.0; 2];
    for axis in 0..2 {
        if hi[axis] > lo[axis] {
            offset[axis] = 0.5 * (lo[axis] + hi[axis]);
            scale[axis] = 0.5 * (hi[axis] - lo[axis]);
        } else {
            offset[axis] = lo[axis];
        }
    }
    let frame = NormalizationFrame { offset, scale };
    let path = positions
        .iter()
        .map(|&p| {
            let q = frame.to_normalized(p);
            [q[0].clamp(-1.0, 1.0), q[1].clamp(-1.0, 1.0)]
        })
        .collect();
    Ok((path, frame))
}

/// Normalizes one trajectory into its own bounded frame.
pub fn normalize_trajectory(traj: &Trajectory) -> Result<(Vec<Point2>, NormalizationFrame)> {
    normalize_positions(&traj.positions())
}

/// Maps normalized coordinates back to `[lat, lon]` degrees.
pub fn denormalize(path: &[Point2], frame: &NormalizationFrame) -> Result<Vec<Point2>> {
    frame.validate()?;
    path.iter()
        .map(|&q| {
            if q[0].is_finite() && q[1].is_finite() {
                Ok(frame.to_geo(q))
            } else {
                Err(Error::Numeric("non-finite normalized coordinate".into()))
            }
        })
        .collect()
}

pub fn euclidean(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Great-circle distance in km between two `[lat, lon]` positions.
pub fn haversine_km(a: Point2, b: Point2) -> f64 {
    let (lat1, lat2) = (a[0].to_radians(), b[0].to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b[1] - a[1]).to_radians();
    let h = (dlat * 0.5).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon * 0.5).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Degrees of latitude per km.
pub fn km_to_lat_deg(km: f64) -> f64 {
    km / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0)
}

/// Degrees of longitude per km at a given latitude.
pub fn km_to_lon_deg(km: f64, lat: f64) -> f64 {
    km_to_lat_deg(km) / lat.to_radians().cos().max(1e-6)
}

/// Planar polyline length.
pub fn polyline_length(path: &[Point2]) -> f64 {
    path.windows(2).map(|w| euclidean(w[0], w[1])).sum()
}

/// Cumulative arc length at every vertex, starting at 0.
pub fn cumulative_arc_length(path: &[Point2]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(path.len());
    let mut total = 0.0;
    acc.push(0.0);
    for w in path.windows(2) {
        total += euclidean(w[0], w[1]);
        acc.push(total);
    }
    acc
}

/// Point at arc length `s` along a polyline with precomputed cumulative lengths.
/// `hint` is the segment to start searching from; the segment used is returned.
fn point_at(path: &[Point2], cum: &[f64], s: f64, hint: usize) -> (Point2, usize) {
    let last = path.len() - 1;
    let mut seg = hint.min(last.saturating_sub(1));
    while seg + 1 < last && cum[seg + 1] < s {
        seg += 1;
    }
    let len = cum[seg + 1] - cum[seg];
    let frac = if len > 0.0 {
        ((s - cum[seg]) / len).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let a = path[seg];
    let b = path[seg + 1];
    ([a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])], seg)
}

/// Resamples a polyline to `n` points equally spaced in arc length.
///
/// Endpoints are copied exactly. A polyline of zero length yields `n`
/// copies of its first point.
pub fn resample_uniform(path: &[Point2], n: usize) -> Result<Vec<Point2>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("resample count {n} < 2")));
    }
    if path.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "polyline with {} points cannot be resampled",
            path.len()
        )));
    }
    let cum = cumulative_arc_length(path);
    let total = cum[cum.len() - 1];
    let mut out = Vec::with_capacity(n);
    out.push(path[0]);
    let mut seg = 0;
    for i in 1..n - 1 {
        let s = total * i as f64 / (n - 1) as f64;
        let (p, used) = point_at(path, &cum, s, seg);
        seg = used;
        out.push(p);
    }
    out.push(path[path.len() - 1]);
    Ok(out)
}

/// Trajectory-level scalars used as numeric conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericFeatures {
    /// km/h
    pub avg_speed: f64,
    /// km
    pub avg_step_distance: f64,
    /// seconds
    pub elapsed_time: f64,
    /// km
    pub cumulative_distance: f64,
    pub step_count: f64,
}

impl NumericFeatures {
    pub const LEN: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.avg_speed,
            self.avg_step_distance,
            self.elapsed_time,
            self.cumulative_distance,
            self.step_count,
        ]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self {
            avg_speed: v[0],
            avg_step_distance: v[1],
            elapsed_time: v[2],
            cumulative_distance: v[3],
            step_count: v[4],
        }
    }
}

/// Computes speed, distance and duration scalars of a trajectory.
pub fn path_stats(traj: &Trajectory) -> Result<NumericFeatures> {
    if traj.points.len() < 2 {
        return Err(Error::InvalidTrajectory("fewer than 2 points".into()));
    }
    let elapsed = traj.elapsed_time();
    if !(elapsed > 0.0) {
        return Err(Error::InvalidInput(
            "zero elapsed time, speed is undefined".into(),
        ));
    }
    let cumulative = traj.length_km();
    let step_count = traj.points.len() as f64;
    Ok(NumericFeatures {
        avg_speed: cumulative / (elapsed / 3600.0),
        avg_step_distance: cumulative / (step_count - 1.0),
        elapsed_time: elapsed,
        cumulative_distance: cumulative,
        step_count,
    })
}

/// Dataset mean and standard deviation used to z-score numeric features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl FeatureScaler {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 5],
            std: [1.0; 5],
        }
    }

    pub fn fit(features: &[NumericFeatures]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidInput("no features to fit a scaler on".into()));
        }
        let n = features.len() as f64;
        let mut mean = [0.0; 5];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f.to_array()) {
                *m += v / n;
            }
        }
        let mut std = [0.0; 5];
        for f in features {
            for (k, v) in f.to_array().into_iter().enumerate() {
                std[k] += (v - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt();
            if !(*s > 1e-12) {
                *s = 1.0;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn standardize(&self, f: &NumericFeatures) -> [f64; 5] {
        let raw = f.to_array();
        std::array::from_fn(|k| (raw[k] - self.mean[k]) / self.std[k])
    }
}
