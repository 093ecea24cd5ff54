//! Mini-batch training loop shared by both objectives.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{Paradigm, TrainConfig};
use crate::condition::Condition;
use crate::diffusion::{ddpm_loss, NoiseSchedule};
use crate::error::{Error, Result};
use crate::flow::{cfm_loss, stack_rows, LossBreakdown, LossWeights, PreparedSample, DIVERGENCE_LIMIT};
use crate::model::{VectorFieldModel, OD_DIM};
use crate::nn::{Adam, PlateauScheduler};
use crate::synth::item_rng;

/// Minimum validation improvement that resets early stopping.
pub const MIN_DELTA: f64 = 1e-6;

const EPOCH_STREAM: u64 = 0x5eed_0000;
const VAL_STREAM: u64 = 0x7a1d_0000;

/// Everything besides the parameters needed to resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub optimizer: Adam,
    pub scheduler: PlateauScheduler,
    pub epoch: u64,
    pub step: u64,
    pub best_val: f64,
    pub best_step: u64,
}

impl TrainState {
    pub fn fresh(model: &VectorFieldModel, cfg: &TrainConfig) -> Self {
        Self {
            optimizer: Adam::new(&model.store, cfg.lr),
            scheduler: PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience),
            epoch: 0,
            step: 0,
            best_val: f64::MAX,
            best_step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean squared fine-OD error of the OD head on validation data.
    pub val_od_error: f64,
    pub lr: f64,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,step,train_loss,val_loss,val_od_error,lr";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_CSV_HEADER}\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.step, r.train_loss, r.val_loss, r.val_od_error, r.lr
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochsDone,
    EarlyStopped,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VectorFieldModel,
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

fn weights(cfg: &TrainConfig) -> LossWeights {
    LossWeights {
        lambda_od: cfg.lambda_od,
        smooth_w: cfg.smooth_w,
        bound_w: cfg.bound_w,
    }
}

fn schedule_for(cfg: &TrainConfig) -> Result<Option<NoiseSchedule>> {
    match cfg.paradigm {
        Paradigm::Flow => Ok(None),
        Paradigm::Ddpm => NoiseSchedule::paper(cfg.t_max).map(Some),
    }
}

fn batch_loss(
    model: &VectorFieldModel,
    batch: &[&PreparedSample],
    cfg: &TrainConfig,
    schedule: Option<&NoiseSchedule>,
    dropout: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(LossBreakdown, crate::nn::Grads)> {
    match schedule {
        None => cfm_loss(model, batch, &weights(cfg), dropout, rng),
        Some(s) => ddpm_loss(model, batch, s, &weights(cfg), dropout, rng),
    }
}

/// Mean objective over `data` with fixed draws and no condition dropout.
pub fn evaluate_loss(model: &VectorFieldModel, data: &[PreparedSample], cfg: &TrainConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    let schedule = schedule_for(cfg)?;
    let mut rng = item_rng(cfg.seed, VAL_STREAM);
    let mut total = 0.0;
    for chunk in data.chunks(cfg.batch_size) {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let (parts, _) = batch_loss(model, &refs, cfg, schedule.as_ref(), 0.0, &mut rng)?;
        total += parts.total * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Mean squared error of the OD head over `data`.
pub fn od_error(model: &VectorFieldModel, data: &[PreparedSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in data.chunks(512) {
        let conds: Vec<Condition> = chunk.iter().map(|s| Condition::Spec(s.spec)).collect();
        let pred = model.predict_od(&conds)?;
        let target = stack_rows(chunk.iter().map(|s| s.od.to_vec()), OD_DIM);
        total += (&pred - &target).mapv(|v| v * v).sum();
    }
    Ok(total / data.len() as f64)
}

/// Trains until `cfg.epochs` epochs have run in total or early stopping
/// triggers. `state` resumes an earlier run.
pub fn train(
    mut model: VectorFieldModel,
    state: Option<TrainState>,
    train_data: &[PreparedSample],
    val_data: &[PreparedSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let schedule = schedule_for(cfg)?;
    let mut state = state.unwrap_or_else(|| TrainState::fresh(&model, cfg));
    let monitor = if val_data.is_empty() { train_data } else { val_data };
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut stop = StopReason::EpochsDone;

    while state.epoch < cfg.epochs as u64 {
        let mut rng = item_rng(cfg.seed, EPOCH_STREAM + state.epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train_data[i]).collect();
            let (parts, grads) = batch_loss(&model, &batch, cfg, schedule.as_ref(), cfg.cond_dropout, &mut rng)?;
            if parts.total > DIVERGENCE_LIMIT {
                return Err(Error::TrainingAbort(format!(
                    "loss diverged at epoch {} step {}: {parts:?}",
                    state.epoch, state.step
                )));
            }
            model.store.accumulate(&grads);
            state.optimizer.step(&mut model.store)?;
            state.step += 1;
            epoch_loss += parts.total * batch.len() as f64;
        }
        state.epoch += 1;

        let val_loss = evaluate_loss(&model, monitor, cfg)?;
        state.optimizer.lr = state.scheduler.step(val_loss, state.optimizer.lr);
        let record = EpochRecord {
            epoch: state.epoch,
            step: state.step,
            train_loss: epoch_loss / train_data.len() as f64,
            val_loss,
            val_od_error: od_error(&model, monitor)?,
            lr: state.optimizer.lr,
        };
        log::info!(
            "epoch {} step {} train {:.5} val {:.5} lr {:.2e}",
            record.epoch,
            record.step,
            record.train_loss,
            record.val_loss,
            record.lr
        );
        on_epoch(&record);
        history.push(record);

        if val_loss < state.best_val - MIN_DELTA {
            state.best_val = val_loss;
            state.best_step = state.step;
        } else if state.step - state.best_step >= cfg.early_stop_patience {
            stop = StopReason::EarlyStopped;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        state,
        history,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::prepare_all;
    use crate::geo::{FeatureScaler, Trajectory};
    use crate::synth::{make_world, sample_range, Scale};

    fn setup(n: usize) -> (Vec<PreparedSample>, Vec<PreparedSample>, TrainConfig, FeatureScaler, usize) {
        let world = make_world(1, Scale::Urban);
        let data = sample_range(&world, 2, 0, n).unwrap();
        let refs: Vec<&Trajectory> = data.iter().collect();
        let prepared = prepare_all(&refs, &world, 6).unwrap();
        let feats: Vec<_> = prepared.iter().map(|s| s.spec.numeric).collect();
        let scaler = FeatureScaler::fit(&feats).unwrap();
        let cut = n * 4 / 5;
        let cfg = TrainConfig {
            batch_size: 16,
            lr: 1e-3,
            epochs: 3,
            k: 6,
            blocks: 2,
            width: 16,
            control_dim: 8,
            cond_hidden: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        (prepared[..cut].to_vec(), prepared[cut..].to_vec(), cfg, scaler, world.zone_count())
    }

    #[test]
    fn identical_seeds_give_identical_models() {
        let (tr, va, cfg, scaler, zones) = setup(60);
        let run = || {
            let m = VectorFieldModel::new(cfg.architecture(zones), scaler.clone(), cfg.seed).unwrap();
            train(m, None, &tr, &va, &cfg, |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model.store, b.model.store);
        assert_eq!(a.state, b.state);
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.state.step, 3 * 3);
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let (tr, va, cfg, scaler, zones) = setup(40);
        let m = VectorFieldModel::new(cfg.architecture(zones), scaler.clone(), cfg.seed).unwrap();
        let full = train(m.clone(), None, &tr, &va, &cfg, |_| {}).unwrap();
        let first = train(m, None, &tr, &va, &TrainConfig { epochs: 1, ..cfg.clone() }, |_| {}).unwrap();
        let resumed = train(first.model, Some(first.state), &tr, &va, &cfg, |_| {}).unwrap();
        assert_eq!(resumed.model.store, full.model.store);
        assert_eq!(resumed.state.step, full.state.step);
    }

    #[test]
    fn ddpm_paradigm_trains_and_empty_data_is_rejected() {
        let (tr, va, cfg, scaler, zones) = setup(40);
        let cfg = TrainConfig {
            paradigm: Paradigm::Ddpm,
            t_max: 50,
            epochs: 2,
            ..cfg
        };
        let m = VectorFieldModel::new(cfg.architecture(zones), scaler, cfg.seed).unwrap();
        let out = train(m.clone(), None, &tr, &va, &cfg, |_| {}).unwrap();
        assert!(out.history.iter().all(|r| r.val_loss.is_finite()));
        assert!(matches!(train(m, None, &[], &va, &cfg, |_| {}), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn early_stopping_counts_steps() {
        let (tr, va, cfg, scaler, zones) = setup(40);
        let cfg = TrainConfig {
            lr: 1e-12,
            epochs: 50,
            early_stop_patience: 4,
            ..cfg
        };
        let m = VectorFieldModel::new(cfg.architecture(zones), scaler, cfg.seed).unwrap();
        let out = train(m, None, &tr, &va, &cfg, |_| {}).unwrap();
        assert_eq!(out.stop, StopReason::EarlyStopped);
        assert!(out.history.len() < 50);
    }

    #[test]
    fn divergence_aborts() {
        let (tr, va, cfg, scaler, zones) = setup(20);
        let mut m = VectorFieldModel::new(cfg.architecture(zones), scaler, cfg.seed).unwrap();
        for p in m.store.iter_mut() {
            if p.name.starts_with("net.output") {
                p.value.fill(1e4);
            }
        }
        assert!(matches!(train(m, None, &tr, &va, &cfg, |_| {}), Err(Error::TrainingAbort(_))));
    }

    #[test]
    fn history_csv_has_one_row_per_epoch() {
        let rec = EpochRecord {
            epoch: 1,
            step: 4,
            train_loss: 0.5,
            val_loss: 0.25,
            val_od_error: 0.1,
            lr: 1e-4,
        };
        let csv = history_csv(&[rec, rec]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(HISTORY_CSV_HEADER));
    }
}
