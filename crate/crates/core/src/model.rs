//! The conditional vector-field network shared by the flow and diffusion
//! objectives.
//!
//! `h ← f(h) + A ẽ` per residual block, with `ẽ = e_c + e_t` and
//! `f(h) = h + W₂ SiLU(W₁ h)`.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condition::{Condition, ConditionEncoder, EncoderDims, TimeEmbedding, Vocab};
use crate::error::{Error, Result};
use crate::geo::FeatureScaler;
use crate::io::sha256_hex;
use crate::nn::{Dense, ParamStore, Tape, Var};

/// Fine origin and destination, each as a within-cell `[-1, 1]²` position.
pub const OD_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub k: usize,
    pub width: usize,
    pub blocks: usize,
    pub control_dim: usize,
    pub cond_hidden: usize,
    pub embed_dim: usize,
    pub zones: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            k: 10,
            width: 256,
            blocks: 6,
            control_dim: 128,
            cond_hidden: 512,
            embed_dim: 32,
            zones: 64,
        }
    }
}

impl Architecture {
    pub fn state_dim(&self) -> usize {
        2 * self.k
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.k, self.width, self.blocks, self.control_dim, self.cond_hidden, self.embed_dim, self.zones];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("architecture has a zero dimension: {self:?}")));
        }
        if self.k < 2 {
            return Err(Error::InvalidArgument("at least 2 keypoints required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Block {
    l1: Dense,
    l2: Dense,
    control: Dense,
}

/// A parameter matrix in serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_array(name: &str, a: &Array2<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: [a.nrows(), a.ncols()],
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .map_err(|e| Error::Format(format!("parameter {}: {e}", self.name)))
    }
}

#[derive(Debug, Clone)]
pub struct VectorFieldModel {
    pub arch: Architecture,
    pub store: ParamStore,
    pub scaler: FeatureScaler,
    encoder: ConditionEncoder,
    time: TimeEmbedding,
    input: Dense,
    blocks: Vec<Block>,
    output: Dense,
    od1: Dense,
    od2: Dense,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub output: Var,
    pub e_c: Var,
}

impl VectorFieldModel {
    pub fn new(arch: Architecture, scaler: FeatureScaler, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = ConditionEncoder::new(
            &mut store,
            Vocab { zones: arch.zones },
            EncoderDims {
                control_dim: arch.control_dim,
                hidden: arch.cond_hidden,
                embed_dim: arch.embed_dim,
            },
            &mut rng,
        );
        let time = TimeEmbedding::new(&mut store, arch.control_dim, &mut rng);
        let d = arch.state_dim();
        let input = Dense::new(&mut store, "net.input", d, arch.width, true, &mut rng);
        let blocks = (0..arch.blocks)
            .map(|i| Block {
                l1: Dense::new(&mut store, &format!("net.block{i}.l1"), arch.width, arch.width, true, &mut rng),
                l2: Dense::new(&mut store, &format!("net.block{i}.l2"), arch.width, arch.width, true, &mut rng),
                control: Dense::new(&mut store, &format!("net.block{i}.control"), arch.control_dim, arch.width, false, &mut rng),
            })
            .collect();
        let output = Dense::new(&mut store, "net.output", arch.width, d, true, &mut rng);
        let od1 = Dense::new(&mut store, "od.l1", arch.control_dim, arch.control_dim, true, &mut rng);
        let od2 = Dense::new(&mut store, "od.l2", arch.control_dim, OD_DIM, true, &mut rng);
        Ok(Self {
            arch,
            store,
            scaler,
            encoder,
            time,
            input,
            blocks,
            output,
            od1,
            od2,
        })
    }

    pub fn encoder(&self) -> &ConditionEncoder {
        &self.encoder
    }

    /// Severs the control pathway by zeroing every block projection.
    pub fn zero_control(&mut self) {
        for b in &self.blocks {
            self.store.get_mut(b.control.w).value.fill(0.0);
        }
    }

    /// Evaluates the network on `x: [batch, 2K]` at per-row times `ts`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Array2<f64>, ts: &[f64], conds: &[Condition]) -> Result<Forward> {
        let b = x.nrows();
        if x.ncols() != self.arch.state_dim() || ts.len() != b || conds.len() != b {
            return Err(Error::InvalidArgument(format!(
                "forward: state {:?}, {} times, {} conditions for state dim {}",
                x.dim(),
                ts.len(),
                conds.len(),
                self.arch.state_dim()
            )));
        }
        let e_c = self.encoder.encode(tape, conds, &self.scaler)?;
        let e_t = self.time.forward(tape, ts)?;
        let control = tape.add(e_c, e_t)?;
        let xv = tape.input(x);
        let mut h = self.input.forward(tape, xv)?;
        for block in &self.blocks {
            let a = block.l1.forward(tape, h)?;
            let a = tape.silu(a);
            let a = block.l2.forward(tape, a)?;
            let f = tape.add(h, a)?;
            let inject = block.control.forward(tape, control)?;
            h = tape.add(f, inject)?;
        }
        let h = tape.silu(h);
        let output = self.output.forward(tape, h)?;
        Ok(Forward { output, e_c })
    }

    /// Fine OD prediction from the condition embedding.
    pub fn od_head(&self, tape: &mut Tape<'_>, e_c: Var) -> Result<Var> {
        let h = self.od1.forward(tape, e_c)?;
        let h = tape.silu(h);
        self.od2.forward(tape, h)
    }

    /// Inference-only network output.
    pub fn predict(&self, x: &Array2<f64>, ts: &[f64], conds: &[Condition]) -> Result<Array2<f64>> {
        let mut tape = Tape::new(&self.store);
        let f = self.forward(&mut tape, x.clone(), ts, conds)?;
        Ok(tape.value(f.output).clone())
    }

    /// Inference-only fine OD prediction, `[batch, 4]`.
    pub fn predict_od(&self, conds: &[Condition]) -> Result<Array2<f64>> {
        let mut tape = Tape::new(&self.store);
        let e_c = self.encoder.encode(&mut tape, conds, &self.scaler)?;
        let od = self.od_head(&mut tape, e_c)?;
        Ok(tape.value(od).clone())
    }

    /// Digest of the architecture and every parameter name and shape.
    pub fn architecture_hash(&self) -> String {
        architecture_hash(&self.arch, self.store.iter().map(|p| (p.name.as_str(), p.value.dim())))
    }

    pub fn export_params(&self) -> Vec<NamedArray> {
        self.store.iter().map(|p| NamedArray::from_array(&p.name, &p.value)).collect()
    }

    /// Replaces parameter values; names and shapes must match exactly.
    pub fn import_params(&mut self, params: &[NamedArray]) -> Result<()> {
        if params.len() != self.store.len() {
            return Err(Error::Format(format!(
                "{} parameters stored, model has {}",
                params.len(),
                self.store.len()
            )));
        }
        for (p, stored) in self.store.iter_mut().zip(params) {
            let value = stored.to_array()?;
            if stored.name != p.name || value.dim() != p.value.dim() {
                return Err(Error::Format(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    stored.name,
                    value.dim(),
                    p.name,
                    p.value.dim()
                )));
            }
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("parameter {} has non-finite values", p.name)));
            }
            p.value = value;
        }
        Ok(())
    }
}

pub fn architecture_hash<'a>(arch: &Architecture, params: impl Iterator<Item = (&'a str, (usize, usize))>) -> String {
    let shapes: Vec<(&str, [usize; 2])> = params.map(|(n, (r, c))| (n, [r, c])).collect();
    let text = serde_json::to_string(&(arch, shapes)).expect("serializable");
    sha256_hex(text.as_bytes())
}
