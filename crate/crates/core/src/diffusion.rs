//! DDPM baseline: linear noise schedule, ε-prediction loss and
//! deterministic DDIM sampling over the shared backbone.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::condition::Condition;
use crate::error::{Error, Result};
use crate::flow::{
    build_objective, draw_dropout, guided_eval, stack_rows, standard_normal_vec, ConditionalField, LossBreakdown,
    LossWeights, ObjectiveInputs, PreparedSample,
};
use crate::model::VectorFieldModel;
use crate::nn::{Grads, Tape};

pub const BETA_START: f64 = 1e-6;
pub const BETA_END: f64 = 5e-2;
pub const DEFAULT_T: usize = 300;

/// Linear β schedule; index 0 of `alpha_bar` is the clean state (`ᾱ = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_max: usize,
    pub betas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!("invalid β range [{beta_start}, {beta_end}]")));
        }
        let betas: Vec<f64> = (0..t_max)
            .map(|i| {
                if t_max == 1 {
                    beta_end
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        for b in &betas {
            let prev = *alpha_bar.last().expect("seeded");
            alpha_bar.push(prev * (1.0 - b));
        }
        Ok(Self {
            t_max,
            betas,
            alpha_bar,
        })
    }

    pub fn paper(t_max: usize) -> Result<Self> {
        Self::linear(t_max, BETA_START, BETA_END)
    }

    /// `ᾱ_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step == 0 || step > self.t_max {
            return Err(Error::InvalidArgument(format!("step {step} outside [1, {}]", self.t_max)));
        }
        Ok(())
    }

    /// Uniform sub-schedule of `steps` timesteps ending at `T`, preceded by 0.
    pub fn sub_schedule(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.t_max {
            return Err(Error::InvalidArgument(format!("sampling steps {steps} outside [1, {}]", self.t_max)));
        }
        let mut taus: Vec<usize> = (0..=steps)
            .map(|i| ((i * self.t_max) as f64 / steps as f64).round() as usize)
            .collect();
        taus.dedup();
        Ok(taus)
    }
}

/// `x_t = sqrt(ᾱ_t) x + sqrt(1 - ᾱ_t) ε`.
pub fn forward_noise(
    x: &[f64],
    step: usize,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    schedule.check_step(step)?;
    let eps = standard_normal_vec(x.len(), rng);
    Ok((noised(x, &eps, schedule.alpha_bar(step)), eps))
}

fn noised(x: &[f64], eps: &[f64], ab: f64) -> Vec<f64> {
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    x.iter().zip(eps).map(|(x, e)| a * x + s * e).collect()
}

/// Random quantities drawn for one diffusion training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionDraw {
    pub step: usize,
    pub eps: Vec<f64>,
    pub dropped: bool,
}

pub fn ddpm_draws(n: usize, dim: usize, schedule: &NoiseSchedule, dropout: f64, rng: &mut impl Rng) -> Result<Vec<DiffusionDraw>> {
    (0..n)
        .map(|_| {
            let step = rng.random_range(1..=schedule.t_max);
            let eps = standard_normal_vec(dim, rng);
            let dropped = draw_dropout(dropout, rng)?;
            Ok(DiffusionDraw { step, eps, dropped })
        })
        .collect()
}

/// ε-prediction loss with explicit draws; time input is `t / T`.
pub fn ddpm_loss_with(
    model: &VectorFieldModel,
    batch: &[&PreparedSample],
    draws: &[DiffusionDraw],
    schedule: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Grads)> {
    if draws.len() != batch.len() {
        return Err(Error::InvalidArgument("one draw per sample required".into()));
    }
    let dim = model.arch.state_dim();
    let mut rows = Vec::with_capacity(batch.len());
    for (s, d) in batch.iter().zip(draws) {
        schedule.check_step(d.step)?;
        if s.x1.len() != dim || d.eps.len() != dim {
            return Err(Error::InvalidArgument(format!("sample {} does not match state dim {dim}", s.id)));
        }
        rows.push(noised(&s.x1, &d.eps, schedule.alpha_bar(d.step)));
    }
    let ab: Vec<f64> = draws.iter().map(|d| schedule.alpha_bar(d.step)).collect();
    let inputs = ObjectiveInputs {
        x_in: stack_rows(rows.into_iter(), dim),
        ts: draws.iter().map(|d| d.step as f64 / schedule.t_max as f64).collect(),
        target: stack_rows(draws.iter().map(|d| d.eps.clone()), dim),
        conds: batch
            .iter()
            .zip(draws)
            .map(|(s, d)| if d.dropped { Condition::Null } else { Condition::Spec(s.spec) })
            .collect(),
        recon_a: ab.iter().map(|a| 1.0 / a.sqrt()).collect::<Array1<f64>>(),
        recon_b: ab.iter().map(|a| -(1.0 - a).sqrt() / a.sqrt()).collect::<Array1<f64>>(),
    };
    let mut tape = Tape::new(&model.store);
    let (loss, parts) = build_objective(&mut tape, model, batch, inputs, weights)?;
    Ok((parts, tape.backward(loss)))
}

pub fn ddpm_loss(
    model: &VectorFieldModel,
    batch: &[&PreparedSample],
    schedule: &NoiseSchedule,
    weights: &LossWeights,
    dropout: f64,
    rng: &mut impl Rng,
) -> Result<(LossBreakdown, Grads)> {
    let draws = ddpm_draws(batch.len(), model.arch.state_dim(), schedule, dropout, rng)?;
    ddpm_loss_with(model, batch, &draws, schedule, weights)
}

/// Deterministic DDIM (η = 0) from `x_T` down to `t = 0`.
pub fn ddim_sample<F: ConditionalField + ?Sized>(
    field: &F,
    conds: &[Condition],
    x_t: Array2<f64>,
    steps: usize,
    schedule: &NoiseSchedule,
    guidance: f64,
) -> Result<Array2<f64>> {
    if x_t.nrows() != conds.len() {
        return Err(Error::InvalidArgument("one condition per state row required".into()));
    }
    let taus = schedule.sub_schedule(steps)?;
    let mut x = x_t;
    for w in taus.windows(2).rev() {
        let (prev, t) = (w[0], w[1]);
        let eps = guided_eval(field, &x, t as f64 / schedule.t_max as f64, conds, guidance)?;
        let (ab_t, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(prev));
        let x0 = (&x - &(&eps * (1.0 - ab_t).sqrt())) / ab_t.sqrt();
        x = x0 * ab_prev.sqrt() + eps * (1.0 - ab_prev).sqrt();
    }
    Ok(x)
}

/// `SNR_t = s² ᾱ_t / (1 - ᾱ_t)` for `t = 1..=T`.
pub fn snr_profile(schedule: &NoiseSchedule, signal_scale: f64) -> Result<Vec<f64>> {
    if !(signal_scale > 0.0 && signal_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("signal scale {signal_scale}")));
    }
    Ok((1..=schedule.t_max)
        .map(|t| {
            let ab = schedule.alpha_bar(t);
            signal_scale * signal_scale * ab / (1.0 - ab)
        })
        .collect())
}

/// First step (1-based) whose SNR falls below 1.
pub fn snr_crossing(profile: &[f64]) -> Option<usize> {
    profile.iter().position(|&s| s < 1.0).map(|i| i + 1)
}

/// CSV with one row per step and one SNR column per signal scale.
pub fn snr_csv(schedule: &NoiseSchedule, scales: &[f64]) -> Result<String> {
    let curves: Vec<Vec<f64>> = scales.iter().map(|&s| snr_profile(schedule, s)).collect::<Result<_>>()?;
    let mut out = String::from("step,alpha_bar");
    for s in scales {
        out.push_str(&format!(",snr_s{s}"));
    }
    out.push('\n');
    for t in 1..=schedule.t_max {
        out.push_str(&format!("{t},{}", schedule.alpha_bar(t)));
        for c in &curves {
            out.push_str(&format!(",{}", c[t - 1]));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::masked_sse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Returns a fixed ε for every row.
    struct Oracle(Array2<f64>);
    impl ConditionalField for Oracle {
        fn eval(&self, _x: &Array2<f64>, _t: f64, _c: &[Condition]) -> Result<Array2<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn schedule_is_monotone() {
        let s = NoiseSchedule::paper(300).unwrap();
        assert!(s.betas.windows(2).all(|w| w[1] > w[0]));
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s.betas[0], BETA_START);
        assert!((s.betas[299] - BETA_END).abs() < 1e-15);
        assert!(1.0 - s.alpha_bar(1) < 1e-5);
        assert!(NoiseSchedule::paper(0).is_err());
    }

    #[test]
    fn forward_noise_limits_and_moments() {
        let s = NoiseSchedule::paper(300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [0.7, -0.4];
        let (xn, _) = forward_noise(&x, 1, &s, &mut rng).unwrap();
        assert!((xn[0] - 0.7).abs() < 1e-2 && (xn[1] + 0.4).abs() < 1e-2);
        assert!(forward_noise(&x, 0, &s, &mut rng).is_err());
        assert!(forward_noise(&x, 301, &s, &mut rng).is_err());

        let step = 60;
        let ab = s.alpha_bar(step);
        let n = 10_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let (v, _) = forward_noise(&[0.7], step, &s, &mut rng).unwrap();
            sum += v[0];
            sq += v[0] * v[0];
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let sigma = (1.0 - ab).sqrt();
        assert!((mean - ab.sqrt() * 0.7).abs() < 3.0 * sigma / 100.0, "mean {mean}");
        assert!((var / (1.0 - ab) - 1.0).abs() < 0.03, "var {var}");

        // signal with variance 0.25: marginal variance ᾱ·0.25 + (1 - ᾱ)
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in 0..n {
            let sign = if i % 2 == 0 { 0.5 } else { -0.5 };
            let (v, _) = forward_noise(&[sign], step, &s, &mut rng).unwrap();
            sum += v[0];
            sq += v[0] * v[0];
        }
        let var = sq / n as f64 - (sum / n as f64).powi(2);
        let expected = ab * 0.25 + (1.0 - ab);
        assert!((var / expected - 1.0).abs() < 0.03, "{var} vs {expected}");
    }

    #[test]
    fn snr_profiles() {
        let s = NoiseSchedule::paper(300).unwrap();
        let big = snr_profile(&s, 1.0).unwrap();
        let small = snr_profile(&s, 0.1).unwrap();
        assert!(big.iter().zip(&small).all(|(b, s)| s < b));
        assert!(big.windows(2).all(|w| w[1] < w[0]));
        assert!(snr_crossing(&small).unwrap() < snr_crossing(&big).unwrap());
        assert!(big[0] / big[299] > 1e4);
        assert!(snr_profile(&s, 0.0).is_err());
        let csv = snr_csv(&s, &[1.0, 0.1]).unwrap();
        assert_eq!(csv.lines().count(), 301);
        assert!(csv.starts_with("step,alpha_bar,snr_s1,snr_s0.1\n"));
    }

    #[test]
    fn ddim_inverts_noising_with_oracle() {
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = [0.3, -0.8, 0.5, 0.1];
        let (xn, eps) = forward_noise(&x, 1, &s, &mut rng).unwrap();
        let field = Oracle(Array2::from_shape_vec((1, 4), eps).unwrap());
        let out = ddim_sample(&field, &[Condition::Null], Array2::from_shape_vec((1, 4), xn).unwrap(), 1, &s, 0.0).unwrap();
        for (a, b) in out.iter().zip(x) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn ddim_is_deterministic_and_validates_steps() {
        let s = NoiseSchedule::paper(50).unwrap();
        let field = Oracle(Array2::from_elem((2, 3), 0.1));
        let x = Array2::from_elem((2, 3), 1.0);
        let c = [Condition::Null, Condition::Null];
        let a = ddim_sample(&field, &c, x.clone(), 10, &s, 0.0).unwrap();
        let b = ddim_sample(&field, &c, x.clone(), 10, &s, 0.0).unwrap();
        assert_eq!(a, b);
        assert!(ddim_sample(&field, &c, x.clone(), 0, &s, 0.0).is_err());
        assert!(ddim_sample(&field, &c, x, 51, &s, 0.0).is_err());
        assert_eq!(s.sub_schedule(10).unwrap(), vec![0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50]);
        assert_eq!(s.sub_schedule(50).unwrap().len(), 51);
    }

    #[test]
    fn zero_predictor_loss_matches_dimension() {
        let s = NoiseSchedule::paper(300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 20;
        let n = 10_000;
        let draws = ddpm_draws(n, dim, &s, 0.0, &mut rng).unwrap();
        let eps = stack_rows(draws.iter().map(|d| d.eps.clone()), dim);
        let zero = Array2::zeros((n, dim));
        let loss = masked_sse(&zero, &eps, &Array2::ones((n, dim)));
        assert!((loss / dim as f64 - 1.0).abs() < 0.05, "{loss}");
        assert_eq!(masked_sse(&eps, &eps, &Array2::ones((n, dim))), 0.0);
    }

    #[test]
    fn ddpm_loss_gradients() {
        use crate::geo::{FeatureScaler, NumericFeatures, TransportMode};
        use crate::model::Architecture;
        let arch = Architecture {
            k: 3,
            width: 6,
            blocks: 1,
            control_dim: 4,
            cond_hidden: 5,
            embed_dim: 2,
            zones: 2,
        };
        let mut m = VectorFieldModel::new(arch, FeatureScaler::identity(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<PreparedSample> = (0..2)
            .map(|i| PreparedSample {
                id: i.to_string(),
                x1: standard_normal_vec(6, &mut rng),
                mask: vec![1.0; 6],
                od: [0.1, 0.2, -0.3, 0.0],
                spec: crate::condition::ConditionSpec {
                    departure_bin: 3,
                    origin_zone: 1,
                    destination_zone: 0,
                    mode: TransportMode::Car,
                    numeric: NumericFeatures::from_array([1.0, 0.5, 0.2, -0.4, 0.3]),
                },
            })
            .collect();
        let refs: Vec<&PreparedSample> = samples.iter().collect();
        let s = NoiseSchedule::paper(20).unwrap();
        let draws = ddpm_draws(2, 6, &s, 0.0, &mut rng).unwrap();
        let w = LossWeights {
            lambda_od: 1.0,
            smooth_w: 0.3,
            bound_w: 0.3,
        };
        let (_, grads) = ddpm_loss_with(&m, &refs, &draws, &s, &w).unwrap();
        let model = m.clone();
        let err = crate::nn::compare_gradients(
            &mut m.store,
            &grads,
            |tape| {
                let mut model = model.clone();
                model.store = tape.store().clone();
                let (parts, _) = ddpm_loss_with(&model, &refs, &draws, &s, &w)?;
                Ok(tape.input(Array2::from_elem((1, 1), parts.total)))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }
}
