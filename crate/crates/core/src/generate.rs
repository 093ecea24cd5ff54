//! From conditions to geographic trajectories.
//!
//! Keypoints are sampled in the normalized box, expanded to the requested
//! length by arc-length interpolation, and placed in geographic
//! coordinates so the path starts and ends at the predicted fine OD.

use ndarray::Array2;
use rayon::prelude::*;

use crate::condition::{Condition, ConditionSpec};
use crate::diffusion::{ddim_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::flow::{euler_sample, standard_normal_vec, ConditionalField};
use crate::geo::{
    cumulative_arc_length, haversine_km, km_to_lat_deg, km_to_lon_deg, polyline_length, resample_uniform, GeoPoint,
    Point2, Trajectory,
};
use crate::model::VectorFieldModel;
use crate::synth::{item_rng, World};
use crate::threads;

/// Minimum normalized endpoint separation for an axis to be anchored to the
/// predicted OD on its own.
pub const ANCHOR_MIN_SPAN: f64 = 0.25;
const CHUNK: usize = 128;
const RETRY_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Euler { steps: usize, guidance: f64 },
    Ddim { schedule: NoiseSchedule, steps: usize, guidance: f64 },
}

impl Sampler {
    /// Integrates from the given noise to normalized keypoint states.
    pub fn run<F: ConditionalField + ?Sized>(&self, field: &F, conds: &[Condition], noise: Array2<f64>) -> Result<Array2<f64>> {
        match self {
            Sampler::Euler { steps, guidance } => euler_sample(field, conds, noise, *steps, *guidance),
            Sampler::Ddim { schedule, steps, guidance } => ddim_sample(field, conds, noise, *steps, schedule, *guidance),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationRequest {
    pub spec: ConditionSpec,
    /// Number of output points.
    pub length: usize,
}

/// Sampled keypoints and predicted fine OD for a batch of requests.
pub fn sample_keypoints(
    model: &VectorFieldModel,
    sampler: &Sampler,
    specs: &[ConditionSpec],
    noise: Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let conds: Vec<Condition> = specs.iter().map(|s| Condition::Spec(*s)).collect();
    let x = sampler.run(model, &conds, noise)?;
    let od = model.predict_od(&conds)?;
    Ok((x, od))
}

fn unflatten(row: ndarray::ArrayView1<'_, f64>) -> Vec<Point2> {
    row.as_slice()
        .map(|s| s.to_vec())
        .unwrap_or_else(|| row.to_vec())
        .chunks(2)
        .map(|c| [c[0], c[1]])
        .collect()
}

fn is_degenerate(path: &[Point2]) -> bool {
    path.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) || polyline_length(path) < 1e-9
}

/// Places a normalized path so its endpoints land on `origin` and
/// `destination`, then clamps it into `bbox`.
///
/// Each axis whose normalized endpoint span agrees in sign with the OD
/// displacement and exceeds [`ANCHOR_MIN_SPAN`] gets its own scale. Other
/// axes borrow the km scale of an anchored axis, or of the conditioned
/// distance when none is anchored. A linear blend along arc length then
/// removes any remaining endpoint offset.
pub fn place_path(norm: &[Point2], origin: Point2, destination: Point2, distance_km: f64, bbox: &crate::metrics::BBox) -> Result<Vec<Point2>> {
    if norm.len() < 2 || is_degenerate(norm) {
        return Err(Error::Numeric("degenerate sampled path".into()));
    }
    let (p0, p1) = (norm[0], norm[norm.len() - 1]);
    let mid_lat = 0.5 * (origin[0] + destination[0]);
    let km_per_deg = [1.0 / km_to_lat_deg(1.0), 1.0 / km_to_lon_deg(1.0, mid_lat)];
    let mut km_scale = [None, None];
    for a in 0..2 {
        let dn = p1[a] - p0[a];
        let dg = destination[a] - origin[a];
        if dn.abs() >= ANCHOR_MIN_SPAN && dn * dg > 0.0 {
            km_scale[a] = Some(dg / dn * km_per_deg[a]);
        }
    }
    let fallback = match km_scale {
        [Some(a), Some(b)] => 0.5 * (a + b),
        [Some(a), None] | [None, Some(a)] => a,
        [None, None] => {
            let len = polyline_length(norm);
            let km = if distance_km.is_finite() && distance_km > 0.0 {
                distance_km
            } else {
                haversine_km(origin, destination)
            };
            km / len
        }
    };
    let deg_scale: [f64; 2] = std::array::from_fn(|a| km_scale[a].unwrap_or(fallback) / km_per_deg[a]);
    let mid_norm = [0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1])];
    let mid_geo = [0.5 * (origin[0] + destination[0]), 0.5 * (origin[1] + destination[1])];
    let mut placed: Vec<Point2> = norm
        .iter()
        .map(|q| std::array::from_fn(|a| mid_geo[a] + (q[a] - mid_norm[a]) * deg_scale[a]))
        .collect();

    let last = placed.len() - 1;
    let r0 = [origin[0] - placed[0][0], origin[1] - placed[0][1]];
    let r1 = [destination[0] - placed[last][0], destination[1] - placed[last][1]];
    let cum = cumulative_arc_length(norm);
    let total = cum[last];
    for (p, c) in placed.iter_mut().zip(&cum) {
        let f = c / total;
        for a in 0..2 {
            p[a] += (1.0 - f) * r0[a] + f * r1[a];
        }
    }
    placed[0] = origin;
    placed[last] = destination;
    Ok(placed.into_iter().map(|p| bbox.clamp(p)).collect())
}

/// Builds the output trajectory from sampled keypoints and a predicted OD.
pub fn assemble(
    id: String,
    request: &GenerationRequest,
    keypoints: &[Point2],
    od: [f64; 4],
    world: &World,
) -> Result<Trajectory> {
    if request.length < 2 {
        return Err(Error::InvalidArgument(format!("output length {} below 2", request.length)));
    }
    let spec = &request.spec;
    let dense = resample_uniform(keypoints, request.length)?;
    let origin = world.bbox.clamp(world.from_cell_local(spec.origin_zone, [od[0], od[1]])?);
    let destination = world.bbox.clamp(world.from_cell_local(spec.destination_zone, [od[2], od[3]])?);
    let placed = place_path(&dense, origin, destination, spec.numeric.cumulative_distance, &world.bbox)?;
    let duration = if spec.numeric.elapsed_time.is_finite() && spec.numeric.elapsed_time > 0.0 {
        spec.numeric.elapsed_time
    } else {
        1.0
    };
    let n = placed.len();
    let points = placed
        .iter()
        .enumerate()
        .map(|(i, p)| GeoPoint::new(p[0], p[1], duration * i as f64 / (n - 1) as f64))
        .collect();
    Trajectory::new(
        id,
        points,
        spec.mode,
        spec.departure_bin,
        (spec.origin_zone, spec.destination_zone),
    )
}

/// Generates one trajectory per request. Sample `i` draws its noise from
/// its own stream of `seed`, so results do not depend on batching or the
/// number of worker threads.
pub fn generate(
    model: &VectorFieldModel,
    sampler: &Sampler,
    world: &World,
    requests: &[GenerationRequest],
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let dim = model.arch.state_dim();
    let chunks: Vec<(usize, &[GenerationRequest])> = requests.chunks(CHUNK).enumerate().collect();
    let out: Vec<Vec<Trajectory>> = threads::install(|| {
        chunks
            .par_iter()
            .map(|&(c, reqs)| {
                let first = c * CHUNK;
                let specs: Vec<ConditionSpec> = reqs.iter().map(|r| r.spec).collect();
                let noise = noise_rows(seed, first as u64, reqs.len(), dim, 0);
                let (x, od) = sample_keypoints(model, sampler, &specs, noise)?;
                reqs.iter()
                    .enumerate()
                    .map(|(j, req)| {
                        let i = first + j;
                        let id = format!("g{i:06}");
                        let mut keypoints = unflatten(x.row(j));
                        if is_degenerate(&keypoints) {
                            let retry = noise_rows(seed, i as u64, 1, dim, RETRY_STREAM);
                            let (x2, _) = sample_keypoints(model, sampler, &specs[j..=j], retry)?;
                            keypoints = unflatten(x2.row(0));
                            if is_degenerate(&keypoints) {
                                return Err(Error::Numeric(format!("sample {i} is degenerate after one retry")));
                            }
                        }
                        let od_row = [od[[j, 0]], od[[j, 1]], od[[j, 2]], od[[j, 3]]];
                        assemble(id, req, &keypoints, od_row, world)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(out.into_iter().flatten().collect())
}

fn noise_rows(seed: u64, first: u64, n: usize, dim: usize, stream_offset: u64) -> Array2<f64> {
    let mut flat = Vec::with_capacity(n * dim);
    for i in 0..n as u64 {
        flat.extend(standard_normal_vec(dim, &mut item_rng(seed, stream_offset + first + i)));
    }
    Array2::from_shape_vec((n, dim), flat).expect("n * dim values")
}

/// Output length for a spec: its conditioned step count, else `default`.
pub fn requested_length(spec: &ConditionSpec, default: usize) -> usize {
    let s = spec.numeric.step_count;
    if s.is_finite() && s >= 2.0 {
        s.round() as usize
    } else {
        default
    }
}
