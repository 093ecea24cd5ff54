//! End-to-end glue: dataset splits to prepared samples, training to a
//! checkpoint, and condition files to generation requests.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::condition::{ConditionRecord, ConditionSpec, EmpiricalNumerics};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::flow::{condition_of, prepare_all, PreparedSample};
use crate::generate::{requested_length, GenerationRequest};
use crate::geo::{FeatureScaler, Trajectory};
use crate::model::VectorFieldModel;
use crate::synth::{item_rng, Dataset};
use crate::train::{train, EpochRecord, TrainOutcome};

/// Observations kept per mode for filling unspecified numeric conditions.
pub const EMPIRICAL_CAP: usize = 4096;
const CONDITION_STREAM: u64 = 0xc0d1_0000;

#[derive(Debug, Clone)]
pub struct PreparedSplits {
    pub train: Vec<PreparedSample>,
    pub val: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
    pub scaler: FeatureScaler,
    pub empirical: EmpiricalNumerics,
}

/// Prepares every split at keypoint budget `k`. The scaler and the
/// empirical numeric pool come from the training split only.
pub fn prepare_splits(dataset: &Dataset, k: usize) -> Result<PreparedSplits> {
    let (train, val, test) = dataset.split.partition(&dataset.trajectories);
    if train.is_empty() {
        return Err(Error::InvalidInput("dataset has an empty training split".into()));
    }
    let world = &dataset.world;
    let train = prepare_all(&train, world, k)?;
    let feats: Vec<_> = train.iter().map(|s| s.spec.numeric).collect();
    let scaler = FeatureScaler::fit(&feats)?;
    let empirical = EmpiricalNumerics::fit(train.iter().map(|s| (s.spec.mode, s.spec.numeric)), EMPIRICAL_CAP);
    Ok(PreparedSplits {
        train,
        val: prepare_all(&val, world, k)?,
        test: prepare_all(&test, world, k)?,
        scaler,
        empirical,
    })
}

/// Trains on `dataset`, optionally resuming from `resume`, and packages
/// the result as a checkpoint.
pub fn fit(
    dataset: &Dataset,
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainOutcome)> {
    cfg.validate()?;
    let splits = prepare_splits(dataset, cfg.k)?;
    let arch = cfg.architecture(dataset.world.zone_count());
    let (model, state) = match resume {
        Some(ck) => {
            if ck.paradigm != cfg.paradigm {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint was trained with {}, config asks for {}",
                    ck.paradigm, cfg.paradigm
                )));
            }
            if ck.architecture != arch {
                return Err(Error::InvalidArgument("config architecture differs from the checkpoint".into()));
            }
            if ck.world != dataset.world {
                return Err(Error::InvalidArgument("checkpoint was trained on a different world".into()));
            }
            (ck.model()?, Some(ck.state.clone()))
        }
        None => (VectorFieldModel::new(arch, splits.scaler.clone(), cfg.seed)?, None),
    };
    let outcome = train(model, state, &splits.train, &splits.val, cfg, on_epoch)?;
    let ck = Checkpoint::new(&outcome.model, &outcome.state, cfg, &dataset.world, &splits.empirical);
    Ok((ck, outcome))
}

/// Conditions of the test-split trajectories, in dataset order.
pub fn test_split_specs(dataset: &Dataset) -> Result<Vec<ConditionSpec>> {
    let (_, _, test) = dataset.split.partition(&dataset.trajectories);
    specs_of(&test)
}

pub fn specs_of(data: &[&Trajectory]) -> Result<Vec<ConditionSpec>> {
    data.iter().map(|t| condition_of(t)).collect()
}

/// Parses a condition file: one JSON object per line, blank lines skipped.
pub fn parse_condition_records(text: &str) -> Result<Vec<ConditionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("condition file holds no records".into()));
    }
    Ok(out)
}

pub fn read_condition_records(path: &Path) -> Result<Vec<ConditionRecord>> {
    parse_condition_records(&std::fs::read_to_string(path)?)
}

/// Completes each record's numeric features: missing values are taken from
/// an observed trajectory of the same mode drawn on the record's own stream.
pub fn resolve_records(records: &[ConditionRecord], empirical: &EmpiricalNumerics, seed: u64) -> Result<Vec<ConditionSpec>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = item_rng(seed, CONDITION_STREAM + i as u64);
            let base = empirical.sample(r.mode, &mut rng)?;
            Ok(ConditionSpec {
                departure_bin: r.departure_bin,
                origin_zone: r.origin_zone,
                destination_zone: r.destination_zone,
                mode: r.mode,
                numeric: r.numeric.apply(base),
            })
        })
        .collect()
}

/// `n` requests cycling through `specs`.
pub fn requests(specs: &[ConditionSpec], n: usize, default_len: usize) -> Result<Vec<GenerationRequest>> {
    if specs.is_empty() {
        return Err(Error::InvalidInput("no conditions to generate from".into()));
    }
    Ok((0..n)
        .map(|i| {
            let spec = specs[i % specs.len()];
            GenerationRequest {
                spec,
                length: requested_length(&spec, default_len),
            }
        })
        .collect())
}
