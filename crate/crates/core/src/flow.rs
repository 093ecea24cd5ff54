//! Conditional flow matching: straight paths, the regression objective and
//! Euler sampling with classifier-free guidance.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::condition::{condition_dropout, Condition, ConditionSpec};
use crate::error::{Error, Result};
use crate::geo::{normalize_trajectory, path_stats, Trajectory};
use crate::harmonize::rdp_to_k;
use crate::model::{VectorFieldModel, OD_DIM};
use crate::nn::{Grads, Tape, Var};
use crate::synth::World;
use crate::threads;

/// Losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// `x_t = (1 - t) x0 + t x1` and the target field `u = x1 - x0`.
pub fn straight_path_point(x0: &[f64], x1: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if x0.len() != x1.len() {
        return Err(Error::InvalidArgument(format!("shape mismatch: {} vs {}", x0.len(), x1.len())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("flow time {t} outside [0, 1]")));
    }
    let xt = x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    let u = x0.iter().zip(x1).map(|(a, b)| b - a).collect();
    Ok((xt, u))
}

/// A training example: flattened normalized keypoints
/// `[lat0, lon0, lat1, lon1, ...]`, a per-coordinate validity mask, the
/// within-cell fine OD target and the conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub x1: Vec<f64>,
    pub mask: Vec<f64>,
    pub od: [f64; OD_DIM],
    pub spec: ConditionSpec,
}

pub fn condition_of(t: &Trajectory) -> Result<ConditionSpec> {
    Ok(ConditionSpec {
        departure_bin: t.departure_bin,
        origin_zone: t.od_zone.0,
        destination_zone: t.od_zone.1,
        mode: t.mode,
        numeric: path_stats(t)?,
    })
}

pub fn prepare_sample(t: &Trajectory, world: &World, k: usize) -> Result<PreparedSample> {
    let (norm, _) = normalize_trajectory(t)?;
    let keypoints = rdp_to_k(&norm, k)?;
    let mut x1 = Vec::with_capacity(2 * k);
    for p in &keypoints {
        x1.extend_from_slice(p);
    }
    let first = t.points[0].position();
    let last = t.points[t.points.len() - 1].position();
    let o = world.to_cell_local(t.od_zone.0, first)?;
    let d = world.to_cell_local(t.od_zone.1, last)?;
    Ok(PreparedSample {
        id: t.id.clone(),
        mask: vec![1.0; x1.len()],
        x1,
        od: [o[0], o[1], d[0], d[1]],
        spec: condition_of(t)?,
    })
}

pub fn prepare_all(data: &[&Trajectory], world: &World, k: usize) -> Result<Vec<PreparedSample>> {
    threads::install(|| data.par_iter().map(|t| prepare_sample(t, world, k)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_od: f64,
    pub smooth_w: f64,
    pub bound_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_od: 1.0,
            smooth_w: 0.0,
            bound_w: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub field: f64,
    pub od: f64,
    pub smooth: f64,
    pub bound: f64,
}

/// Per-sample sum of masked squared errors, averaged over samples.
pub fn masked_sse(pred: &Array2<f64>, target: &Array2<f64>, mask: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    ndarray::Zip::from(pred).and(target).and(mask).for_each(|p, t, m| s += m * (p - t) * (p - t));
    s / pred.nrows().max(1) as f64
}

/// Network inputs and regression targets of one batch. `recon_a`, `recon_b`
/// map the prediction to a clean-path estimate `a * x_in + b * output` used
/// by the regularizers.
pub(crate) struct ObjectiveInputs {
    pub x_in: Array2<f64>,
    pub ts: Vec<f64>,
    pub target: Array2<f64>,
    pub conds: Vec<Condition>,
    pub recon_a: Array1<f64>,
    pub recon_b: Array1<f64>,
}

fn second_difference_matrix(k: usize) -> Array2<f64> {
    let cols = 2 * k.saturating_sub(2);
    let mut d = Array2::zeros((2 * k, cols.max(1)));
    for j in 0..k.saturating_sub(2) {
        for a in 0..2 {
            let c = 2 * j + a;
            d[[2 * j + a, c]] = 1.0;
            d[[2 * (j + 1) + a, c]] = -2.0;
            d[[2 * (j + 2) + a, c]] = 1.0;
        }
    }
    d
}

pub(crate) fn stack_rows(rows: impl ExactSizeIterator<Item = Vec<f64>>, dim: usize) -> Array2<f64> {
    let n = rows.len();
    let flat: Vec<f64> = rows.flatten().collect();
    Array2::from_shape_vec((n, dim), flat).expect("rows share a dimension")
}

/// Builds the full objective on a tape.
pub(crate) fn build_objective(
    tape: &mut Tape<'_>,
    model: &VectorFieldModel,
    batch: &[&PreparedSample],
    inputs: ObjectiveInputs,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let dim = model.arch.state_dim();
    let mask = stack_rows(batch.iter().map(|s| s.mask.clone()), dim);
    let ObjectiveInputs {
        x_in,
        ts,
        target,
        conds,
        recon_a,
        recon_b,
    } = inputs;
    let x_scaled = &x_in * &recon_a.view().insert_axis(ndarray::Axis(1));
    let f = model.forward(tape, x_in, &ts, &conds)?;
    let field = tape.weighted_sse(f.output, target, mask, b as f64)?;
    let mut parts = LossBreakdown {
        field: tape.scalar(field),
        ..LossBreakdown::default()
    };
    let mut total = field;

    if weights.lambda_od > 0.0 {
        let kept: Vec<f64> = conds.iter().map(|c| if c.is_null() { 0.0 } else { 1.0 }).collect();
        let n_kept: f64 = kept.iter().sum();
        if n_kept > 0.0 {
            let od_target = stack_rows(batch.iter().map(|s| s.od.to_vec()), OD_DIM);
            let od_w = Array2::from_shape_fn((b, OD_DIM), |(r, _)| kept[r]);
            let od_pred = model.od_head(tape, f.e_c)?;
            let od = tape.weighted_sse(od_pred, od_target, od_w, n_kept)?;
            parts.od = tape.scalar(od);
            let od = tape.scale(od, weights.lambda_od);
            total = tape.add(total, od)?;
        }
    }

    if weights.smooth_w > 0.0 || weights.bound_w > 0.0 {
        let pred = tape.scale_rows(f.output, recon_b)?;
        let base = tape.input(x_scaled);
        let estimate = tape.add(base, pred)?;
        if weights.smooth_w > 0.0 && model.arch.k >= 3 {
            let d2 = tape.matmul_const(estimate, second_difference_matrix(model.arch.k))?;
            let smooth = tape.mean_square(d2);
            parts.smooth = tape.scalar(smooth);
            let smooth = tape.scale(smooth, weights.smooth_w);
            total = tape.add(total, smooth)?;
        }
        if weights.bound_w > 0.0 {
            let bound = tape.hinge_sq(estimate, 1.0);
            parts.bound = tape.scalar(bound);
            let bound = tape.scale(bound, weights.bound_w);
            total = tape.add(total, bound)?;
        }
    }
    parts.total = tape.scalar(total);
    if !parts.total.is_finite() {
        return Err(Error::TrainingAbort(format!("non-finite loss {parts:?}")));
    }
    Ok((total, parts))
}

/// Random quantities drawn for one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDraw {
    pub t: f64,
    pub x0: Vec<f64>,
    pub dropped: bool,
}

pub fn standard_normal_vec(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws `t ~ U[0, 1]`, `x0 ~ N(0, I)` and the dropout decision, sample by sample.
pub fn cfm_draws(n: usize, dim: usize, dropout: f64, rng: &mut impl Rng) -> Result<Vec<FlowDraw>> {
    (0..n)
        .map(|_| {
            let t = rng.random::<f64>();
            let x0 = standard_normal_vec(dim, rng);
            let dropped = draw_dropout(dropout, rng)?;
            Ok(FlowDraw { t, x0, dropped })
        })
        .collect()
}

/// Whether a sample's conditions are replaced by the null token.
pub fn draw_dropout(p: f64, rng: &mut impl Rng) -> Result<bool> {
    let probe = Condition::Spec(ConditionSpec {
        departure_bin: 0,
        origin_zone: 0,
        destination_zone: 0,
        mode: crate::geo::TransportMode::Other,
        numeric: crate::geo::NumericFeatures::from_array([0.0; 5]),
    });
    Ok(condition_dropout(probe, p, rng)?.is_null())
}

fn spec_or_null(s: &PreparedSample, dropped: bool) -> Condition {
    if dropped {
        Condition::Null
    } else {
        Condition::Spec(s.spec)
    }
}

/// Flow-matching loss with explicit draws, plus parameter gradients.
pub fn cfm_loss_with(
    model: &VectorFieldModel,
    batch: &[&PreparedSample],
    draws: &[FlowDraw],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Grads)> {
    if draws.len() != batch.len() {
        return Err(Error::InvalidArgument("one draw per sample required".into()));
    }
    let dim = model.arch.state_dim();
    let mut xt_rows = Vec::with_capacity(batch.len());
    let mut u_rows = Vec::with_capacity(batch.len());
    for (s, d) in batch.iter().zip(draws) {
        if s.x1.len() != dim {
            return Err(Error::InvalidArgument(format!("sample {} has {} values, expected {dim}", s.id, s.x1.len())));
        }
        let (xt, u) = straight_path_point(&d.x0, &s.x1, d.t)?;
        xt_rows.push(xt);
        u_rows.push(u);
    }
    let inputs = ObjectiveInputs {
        x_in: stack_rows(xt_rows.into_iter(), dim),
        ts: draws.iter().map(|d| d.t).collect(),
        target: stack_rows(u_rows.into_iter(), dim),
        conds: batch.iter().zip(draws).map(|(s, d)| spec_or_null(s, d.dropped)).collect(),
        recon_a: Array1::ones(batch.len()),
        recon_b: draws.iter().map(|d| 1.0 - d.t).collect(),
    };
    let mut tape = Tape::new(&model.store);
    let (loss, parts) = build_objective(&mut tape, model, batch, inputs, weights)?;
    Ok((parts, tape.backward(loss)))
}

pub fn cfm_loss(
    model: &VectorFieldModel,
    batch: &[&PreparedSample],
    weights: &LossWeights,
    dropout: f64,
    rng: &mut impl Rng,
) -> Result<(LossBreakdown, Grads)> {
    let draws = cfm_draws(batch.len(), model.arch.state_dim(), dropout, rng)?;
    cfm_loss_with(model, batch, &draws, weights)
}

/// A batched field `F(x, t, c)` over `[batch, dim]` states.
pub trait ConditionalField: Sync {
    fn eval(&self, x: &Array2<f64>, t: f64, conds: &[Condition]) -> Result<Array2<f64>>;
}

impl ConditionalField for VectorFieldModel {
    fn eval(&self, x: &Array2<f64>, t: f64, conds: &[Condition]) -> Result<Array2<f64>> {
        self.predict(x, &vec![t; x.nrows()], conds)
    }
}

/// `(1 + w) F(x, t, c) - w F(x, t, null)`.
pub fn guided_eval<F: ConditionalField + ?Sized>(
    field: &F,
    x: &Array2<f64>,
    t: f64,
    conds: &[Condition],
    guidance: f64,
) -> Result<Array2<f64>> {
    if !(guidance >= 0.0 && guidance.is_finite()) {
        return Err(Error::InvalidArgument(format!("guidance weight {guidance}")));
    }
    let cond = field.eval(x, t, conds)?;
    if guidance == 0.0 {
        return Ok(cond);
    }
    let nulls = vec![Condition::Null; conds.len()];
    let uncond = field.eval(x, t, &nulls)?;
    Ok(cond * (1.0 + guidance) - uncond * guidance)
}

/// Integrates `dx/dt = v` from `t = 0` to 1 with `steps` uniform Euler
/// steps. Zero steps returns the initial state.
pub fn euler_sample<F: ConditionalField + ?Sized>(
    field: &F,
    conds: &[Condition],
    x0: Array2<f64>,
    steps: usize,
    guidance: f64,
) -> Result<Array2<f64>> {
    if x0.nrows() != conds.len() {
        return Err(Error::InvalidArgument("one condition per state row required".into()));
    }
    let h = 1.0 / steps.max(1) as f64;
    let mut x = x0;
    for i in 0..steps {
        let t = i as f64 * h;
        let v = guided_eval(field, &x, t, conds, guidance)?;
        x.scaled_add(h, &v);
    }
    Ok(x)
}
