//! JSON checkpoints: header, named parameter arrays and training state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::condition::EmpiricalNumerics;
use crate::config::{Paradigm, TrainConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::generate::Sampler;
use crate::geo::FeatureScaler;
use crate::model::{Architecture, NamedArray, VectorFieldModel};
use crate::synth::World;
use crate::train::TrainState;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture_hash: String,
    pub seed: u64,
    pub step: u64,
    pub paradigm: Paradigm,
    pub architecture: Architecture,
    pub config: TrainConfig,
    pub scaler: FeatureScaler,
    pub empirical: EmpiricalNumerics,
    pub world: World,
    pub params: Vec<NamedArray>,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(
        model: &VectorFieldModel,
        state: &TrainState,
        config: &TrainConfig,
        world: &World,
        empirical: &EmpiricalNumerics,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            architecture_hash: model.architecture_hash(),
            seed: config.seed,
            step: state.step,
            paradigm: config.paradigm,
            architecture: model.arch,
            config: config.clone(),
            scaler: model.scaler.clone(),
            empirical: empirical.clone(),
            world: world.clone(),
            params: model.export_params(),
            state: state.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Reads and validates a checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format {} not supported (expected {FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        ckpt.model()?;
        Ok(ckpt)
    }

    /// Rebuilds the model, rejecting checkpoints whose recorded
    /// architecture hash disagrees with the stored architecture.
    pub fn model(&self) -> Result<VectorFieldModel> {
        let mut model = VectorFieldModel::new(self.architecture, self.scaler.clone(), self.seed)?;
        let found = model.architecture_hash();
        if found != self.architecture_hash {
            return Err(Error::ArchitectureMismatch {
                expected: self.architecture_hash.clone(),
                found,
            });
        }
        model.import_params(&self.params)?;
        Ok(model)
    }

    /// The sampler matching the training objective.
    pub fn sampler(&self, steps: usize, guidance: f64) -> Result<Sampler> {
        match self.paradigm {
            Paradigm::Flow => Ok(Sampler::Euler { steps, guidance }),
            Paradigm::Ddpm => Ok(Sampler::Ddim {
                schedule: NoiseSchedule::paper(self.config.t_max)?,
                steps,
                guidance,
            }),
        }
    }
}
