//! Wide&Deep condition encoder, flow-time embedding and condition dropout.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{FeatureScaler, NumericFeatures, TransportMode, DEPARTURE_BINS};
use crate::nn::{normal_init, Dense, ParamId, ParamStore, Tape, Var};

/// Number of sinusoidal frequencies in the time embedding.
pub const TIME_FREQUENCIES: usize = 64;
pub const EMBED_SIGMA: f64 = 0.02;
pub const DEFAULT_DROPOUT: f64 = 0.1;

/// The conditions a trajectory is generated from. Numeric features are raw
/// (unstandardized) values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub departure_bin: u16,
    pub origin_zone: u32,
    pub destination_zone: u32,
    pub mode: TransportMode,
    pub numeric: NumericFeatures,
}

/// A concrete condition or the unconditional null token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Spec(ConditionSpec),
    Null,
}

impl Condition {
    pub fn is_null(&self) -> bool {
        matches!(self, Condition::Null)
    }
}

/// Replaces the condition by the null token with probability `p`.
pub fn condition_dropout(cond: Condition, p: f64, rng: &mut impl Rng) -> Result<Condition> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p}")));
    }
    if p > 0.0 && rng.random::<f64>() < p {
        Ok(Condition::Null)
    } else {
        Ok(cond)
    }
}

/// Partial numeric overrides in a condition file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericOverrides {
    pub avg_speed: Option<f64>,
    pub avg_step_distance: Option<f64>,
    pub elapsed_time: Option<f64>,
    pub cumulative_distance: Option<f64>,
    pub step_count: Option<f64>,
}

impl NumericOverrides {
    pub fn apply(&self, base: NumericFeatures) -> NumericFeatures {
        NumericFeatures {
            avg_speed: self.avg_speed.unwrap_or(base.avg_speed),
            avg_step_distance: self.avg_step_distance.unwrap_or(base.avg_step_distance),
            elapsed_time: self.elapsed_time.unwrap_or(base.elapsed_time),
            cumulative_distance: self.cumulative_distance.unwrap_or(base.cumulative_distance),
            step_count: self.step_count.unwrap_or(base.step_count),
        }
    }
}

/// One entry of a user-supplied condition file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionRecord {
    pub departure_bin: u16,
    pub origin_zone: u32,
    pub destination_zone: u32,
    pub mode: TransportMode,
    #[serde(default)]
    pub numeric: NumericOverrides,
}

/// Observed numeric features per transport mode, used to fill numeric
/// conditions that a request leaves unspecified.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalNumerics {
    /// Indexed by [`TransportMode::index`].
    pub per_mode: Vec<Vec<NumericFeatures>>,
}

impl EmpiricalNumerics {
    /// Keeps at most `cap` observations per mode, in input order.
    pub fn fit(observations: impl IntoIterator<Item = (TransportMode, NumericFeatures)>, cap: usize) -> Self {
        let mut per_mode = vec![Vec::new(); TransportMode::ALL.len()];
        for (mode, f) in observations {
            let bucket: &mut Vec<NumericFeatures> = &mut per_mode[mode.index()];
            if bucket.len() < cap {
                bucket.push(f);
            }
        }
        Self { per_mode }
    }

    /// Draws an observation of `mode`, or of any mode when `mode` has none.
    pub fn sample(&self, mode: TransportMode, rng: &mut impl Rng) -> Result<NumericFeatures> {
        let own = self.per_mode.get(mode.index()).filter(|v| !v.is_empty());
        match own {
            Some(v) => Ok(v[rng.random_range(0..v.len())]),
            None => {
                let all: Vec<&NumericFeatures> = self.per_mode.iter().flatten().collect();
                if all.is_empty() {
                    return Err(Error::InvalidInput("no numeric observations to sample from".into()));
                }
                Ok(*all[rng.random_range(0..all.len())])
            }
        }
    }
}

/// Vocabulary sizes of the discrete features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub zones: usize,
}

impl Vocab {
    pub fn check(&self, spec: &ConditionSpec) -> Result<()> {
        if usize::from(spec.departure_bin) >= DEPARTURE_BINS {
            return Err(Error::InvalidArgument(format!("departure bin {}", spec.departure_bin)));
        }
        for z in [spec.origin_zone, spec.destination_zone] {
            if z as usize >= self.zones {
                return Err(Error::InvalidArgument(format!(
                    "zone {z} outside vocabulary of {}",
                    self.zones
                )));
            }
        }
        if !spec.numeric.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite numeric condition".into()));
        }
        Ok(())
    }
}

/// Encoder dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub control_dim: usize,
    pub hidden: usize,
    pub embed_dim: usize,
}

/// `e_c = LayerNorm(e_wide + e_deep)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEncoder {
    pub vocab: Vocab,
    pub dims: EncoderDims,
    wide: Dense,
    bin_table: ParamId,
    origin_table: ParamId,
    destination_table: ParamId,
    mode_table: ParamId,
    deep1: Dense,
    deep2: Dense,
    ln_gamma: ParamId,
    ln_beta: ParamId,
}

impl ConditionEncoder {
    /// Each embedding table has one extra trailing row for the null token.
    pub fn new(store: &mut ParamStore, vocab: Vocab, dims: EncoderDims, rng: &mut impl Rng) -> Self {
        let e = dims.embed_dim;
        let wide = Dense::new(store, "cond.wide", NumericFeatures::LEN, dims.control_dim, true, rng);
        let bin_table = store.add("cond.emb.departure", normal_init(DEPARTURE_BINS + 1, e, EMBED_SIGMA, rng));
        let origin_table = store.add("cond.emb.origin", normal_init(vocab.zones + 1, e, EMBED_SIGMA, rng));
        let destination_table = store.add("cond.emb.destination", normal_init(vocab.zones + 1, e, EMBED_SIGMA, rng));
        let mode_table = store.add("cond.emb.mode", normal_init(TransportMode::ALL.len() + 1, e, EMBED_SIGMA, rng));
        let deep1 = Dense::new(store, "cond.deep1", 4 * e, dims.hidden, true, rng);
        let deep2 = Dense::new(store, "cond.deep2", dims.hidden, dims.control_dim, true, rng);
        let ln_gamma = store.add("cond.ln.gamma", Array2::ones((1, dims.control_dim)));
        let ln_beta = store.add("cond.ln.beta", Array2::zeros((1, dims.control_dim)));
        Self {
            vocab,
            dims,
            wide,
            bin_table,
            origin_table,
            destination_table,
            mode_table,
            deep1,
            deep2,
            ln_gamma,
            ln_beta,
        }
    }

    pub fn wide_layer(&self) -> Dense {
        self.wide
    }

    /// Encodes a batch of conditions to `[batch, control_dim]`.
    pub fn encode(&self, tape: &mut Tape<'_>, conds: &[Condition], scaler: &FeatureScaler) -> Result<Var> {
        let b = conds.len();
        let mut numeric = Array2::zeros((b, NumericFeatures::LEN));
        let mut keep = Array1::zeros(b);
        let null_bin = DEPARTURE_BINS;
        let null_zone = self.vocab.zones;
        let null_mode = TransportMode::ALL.len();
        let mut idx = [
            Vec::with_capacity(b),
            Vec::with_capacity(b),
            Vec::with_capacity(b),
            Vec::with_capacity(b),
        ];
        for (r, c) in conds.iter().enumerate() {
            match c {
                Condition::Spec(s) => {
                    self.vocab.check(s)?;
                    for (k, v) in scaler.standardize(&s.numeric).into_iter().enumerate() {
                        numeric[[r, k]] = v;
                    }
                    keep[r] = 1.0;
                    idx[0].push(usize::from(s.departure_bin));
                    idx[1].push(s.origin_zone as usize);
                    idx[2].push(s.destination_zone as usize);
                    idx[3].push(s.mode.index());
                }
                Condition::Null => {
                    idx[0].push(null_bin);
                    idx[1].push(null_zone);
                    idx[2].push(null_zone);
                    idx[3].push(null_mode);
                }
            }
        }
        let x = tape.input(numeric);
        let wide = self.wide.forward(tape, x)?;
        let wide = tape.scale_rows(wide, keep)?;

        let [bins, origins, destinations, modes] = idx;
        let tables = [self.bin_table, self.origin_table, self.destination_table, self.mode_table];
        let mut parts = Vec::with_capacity(4);
        for (table, ix) in tables.into_iter().zip([bins, origins, destinations, modes]) {
            let t = tape.param(table);
            parts.push(tape.embedding(t, ix)?);
        }
        let cat = tape.concat(&parts)?;
        let h = self.deep1.forward(tape, cat)?;
        let h = tape.silu(h);
        let deep = self.deep2.forward(tape, h)?;

        let sum = tape.add(wide, deep)?;
        let g = tape.param(self.ln_gamma);
        let beta = tape.param(self.ln_beta);
        tape.layer_norm(sum, g, beta)
    }
}

/// Log-spaced angular frequencies over `[1, 1e4]`.
pub fn time_frequencies() -> [f64; TIME_FREQUENCIES] {
    std::array::from_fn(|k| 10f64.powf(4.0 * k as f64 / (TIME_FREQUENCIES - 1) as f64))
}

/// `[sin(w_k t)..., cos(w_k t)...]` for each `t`.
pub fn sinusoidal_features(ts: &[f64]) -> Result<Array2<f64>> {
    let freqs = time_frequencies();
    let mut out = Array2::zeros((ts.len(), 2 * TIME_FREQUENCIES));
    for (r, &t) in ts.iter().enumerate() {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("flow time {t} outside [0, 1]")));
        }
        for (k, w) in freqs.iter().enumerate() {
            out[[r, k]] = (w * t).sin();
            out[[r, TIME_FREQUENCIES + k]] = (w * t).cos();
        }
    }
    Ok(out)
}

/// Sinusoidal features followed by a two-layer MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    l1: Dense,
    l2: Dense,
}

impl TimeEmbedding {
    pub fn new(store: &mut ParamStore, control_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            l1: Dense::new(store, "time.l1", 2 * TIME_FREQUENCIES, control_dim, true, rng),
            l2: Dense::new(store, "time.l2", control_dim, control_dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, ts: &[f64]) -> Result<Var> {
        let x = tape.input(sinusoidal_features(ts)?);
        let h = self.l1.forward(tape, x)?;
        let h = tape.silu(h);
        self.l2.forward(tape, h)
    }
}
