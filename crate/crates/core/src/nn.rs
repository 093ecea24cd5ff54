//! Minimal reverse-mode differentiation kernel.
//!
//! Values are row-major batches (`rows = samples`). A [`Tape`] records the
//! operations of one forward pass over parameters held in a [`ParamStore`];
//! [`Tape::backward`] returns the gradient of a scalar with respect to every
//! parameter that took part.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named learnable matrix with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(ParamTensor {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds tape gradients into the stored gradients.
    pub fn accumulate(&mut self, grads: &Grads) {
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                p.grad += g;
            }
        }
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, shaped `[fan_out, fan_in]`.
pub fn glorot_uniform(fan_out: usize, fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_fn((fan_out, fan_in), |_| dist.sample(rng))
}

pub fn normal_init(rows: usize, cols: usize, sigma: f64, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, sigma).expect("positive sigma");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Array1<f64>),
    Silu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, rstd: Array1<f64> },
    Embedding { table: Var, indices: Vec<usize> },
    Concat(Vec<Var>),
    MatMulConst { x: Var, c: Array2<f64> },
    WeightedSse { pred: Var, target: Array2<f64>, weight: Array2<f64>, denom: f64 },
    MeanSquare(Var),
    HingeSq { x: Var, bound: f64 },
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
}

/// Gradients per parameter, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub per_param: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.per_param.get(id.0).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Array2<f64>> {
        self.per_param.get_mut(id.0).and_then(Option::as_mut)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Computation record for one forward pass.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(128),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => &self.store.get(*id).value,
            _ => unreachable!("every non-parameter node stores its value"),
        }
    }

    /// Scalar value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(Error::InvalidArgument(format!(
                "{what}: shape {:?} vs {:?}",
                self.value(a).dim(),
                self.value(b).dim()
            )));
        }
        Ok(())
    }

    /// `y = x W^T + b` with `W: [out, in]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ncols() != wv.ncols() {
            return Err(Error::InvalidArgument(format!(
                "linear: input width {} but weight is {:?}",
                xv.ncols(),
                wv.dim()
            )));
        }
        let mut y = xv.dot(&wv.t());
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.dim() != (1, y.ncols()) {
                return Err(Error::InvalidArgument(format!(
                    "linear: bias {:?} for output width {}",
                    bv.dim(),
                    y.ncols()
                )));
            }
            y += bv;
        }
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let y = self.value(a) + self.value(b);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let y = self.value(a) - self.value(b);
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x) * c;
        self.push(y, Op::Scale(x, c))
    }

    /// Multiplies row `r` by `s[r]`.
    pub fn scale_rows(&mut self, x: Var, s: Array1<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.nrows() != s.len() {
            return Err(Error::InvalidArgument(format!(
                "scale_rows: {} rows, {} scales",
                xv.nrows(),
                s.len()
            )));
        }
        let y = xv * &s.view().insert_axis(Axis(1));
        Ok(self.push(y, Op::ScaleRows(x, s)))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(silu);
        self.push(y, Op::Silu(x))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`[1, n]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.ncols();
        if self.value(gamma).dim() != (1, n) || self.value(beta).dim() != (1, n) {
            return Err(Error::InvalidArgument("layer_norm: affine shape mismatch".into()));
        }
        let mean = xv.mean_axis(Axis(1)).expect("non-empty rows");
        let centered = xv - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty rows");
        let rstd = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
        let xhat = centered * &rstd.view().insert_axis(Axis(1));
        let y = &xhat * self.value(gamma) + self.value(beta);
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Gathers rows of `table`.
    pub fn embedding(&mut self, table: Var, indices: Vec<usize>) -> Result<Var> {
        let tv = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= tv.nrows()) {
            return Err(Error::InvalidArgument(format!(
                "embedding index {bad} outside table of {} rows",
                tv.nrows()
            )));
        }
        let mut y = Array2::zeros((indices.len(), tv.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            y.row_mut(r).assign(&tv.row(i));
        }
        Ok(self.push(y, Op::Embedding { table, indices }))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::InvalidArgument(format!("concat: {e}")))?;
        Ok(self.push(y, Op::Concat(parts.to_vec())))
    }

    /// `y = x c` for a constant matrix `c`.
    pub fn matmul_const(&mut self, x: Var, c: Array2<f64>) -> Result<Var> {
        if self.value(x).ncols() != c.nrows() {
            return Err(Error::InvalidArgument("matmul_const: shape mismatch".into()));
        }
        let y = self.value(x).dot(&c);
        Ok(self.push(y, Op::MatMulConst { x, c }))
    }

    /// `sum(weight * (pred - target)^2) / denom` as a `1x1` scalar.
    pub fn weighted_sse(&mut self, pred: Var, target: Array2<f64>, weight: Array2<f64>, denom: f64) -> Result<Var> {
        let pv = self.value(pred);
        if pv.dim() != target.dim() || pv.dim() != weight.dim() {
            return Err(Error::InvalidArgument("weighted_sse: shape mismatch".into()));
        }
        if !(denom > 0.0) {
            return Err(Error::InvalidArgument("weighted_sse: non-positive denominator".into()));
        }
        let mut sum = 0.0;
        Zip::from(pv).and(&target).and(&weight).for_each(|&p, &t, &w| {
            sum += w * (p - t) * (p - t);
        });
        Ok(self.push(
            Array2::from_elem((1, 1), sum / denom),
            Op::WeightedSse {
                pred,
                target,
                weight,
                denom,
            },
        ))
    }

    /// Mean of squared entries as a `1x1` scalar.
    pub fn mean_square(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = xv.iter().map(|a| a * a).sum::<f64>() / xv.len().max(1) as f64;
        self.push(Array2::from_elem((1, 1), v), Op::MeanSquare(x))
    }

    /// Mean of `max(|x| - bound, 0)^2` as a `1x1` scalar.
    pub fn hinge_sq(&mut self, x: Var, bound: f64) -> Var {
        let xv = self.value(x);
        let v = xv.iter().map(|a| (a.abs() - bound).max(0.0).powi(2)).sum::<f64>() / xv.len().max(1) as f64;
        self.push(Array2::from_elem((1, 1), v), Op::HingeSq { x, bound })
    }

    /// Reverse sweep from a `1x1` output.
    pub fn backward(&self, out: Var) -> Grads {
        let mut g: Vec<Option<Array2<f64>>> = (0..=out.0).map(|_| None).collect();
        g[out.0] = Some(Array2::ones(self.value(out).raw_dim()));
        let mut per_param: Vec<Option<Array2<f64>>> = vec![None; self.store.len()];

        fn acc(g: &mut [Option<Array2<f64>>], v: Var, d: Array2<f64>) {
            match &mut g[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => match &mut per_param[id.0] {
                    Some(existing) => *existing += &dy,
                    slot @ None => *slot = Some(dy),
                },
                Op::Linear { x, w, b } => {
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    acc(&mut g, *x, dy.dot(wv));
                    acc(&mut g, *w, dy.t().dot(xv));
                    if let Some(b) = b {
                        acc(&mut g, *b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, dy.clone());
                    acc(&mut g, *b, dy);
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *b, -&dy);
                    acc(&mut g, *a, dy);
                }
                Op::Scale(x, c) => acc(&mut g, *x, dy * *c),
                Op::ScaleRows(x, s) => acc(&mut g, *x, dy * &s.view().insert_axis(Axis(1))),
                Op::Silu(x) => {
                    let mut dx = dy;
                    Zip::from(&mut dx).and(self.value(*x)).for_each(|d, &v| {
                        let sg = sigmoid(v);
                        *d *= sg * (1.0 + v * (1.0 - sg));
                    });
                    acc(&mut g, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gamma);
                    acc(&mut g, *gamma, (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g, *beta, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &dy * gv;
                    let n = xhat.ncols() as f64;
                    let mean_d = dxhat.sum_axis(Axis(1)) / n;
                    let mean_dx = (&dxhat * xhat).sum_axis(Axis(1)) / n;
                    let mut dx = dxhat;
                    for (r, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
                        let xr = xhat.row(r);
                        for (d, &xh) in row.iter_mut().zip(xr) {
                            *d = rstd[r] * (*d - mean_d[r] - xh * mean_dx[r]);
                        }
                    }
                    acc(&mut g, *x, dx);
                }
                Op::Embedding { table, indices } => {
                    let mut dt = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &idx) in indices.iter().enumerate() {
                        let mut row = dt.row_mut(idx);
                        row += &dy.row(r);
                    }
                    acc(&mut g, *table, dt);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut g, p, dy.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::MatMulConst { x, c } => acc(&mut g, *x, dy.dot(&c.t())),
                Op::WeightedSse {
                    pred,
                    target,
                    weight,
                    denom,
                } => {
                    let k = 2.0 * dy[[0, 0]] / denom;
                    let mut dp = self.value(*pred) - target;
                    dp *= weight;
                    dp *= k;
                    acc(&mut g, *pred, dp);
                }
                Op::MeanSquare(x) => {
                    let xv = self.value(*x);
                    let k = 2.0 * dy[[0, 0]] / xv.len().max(1) as f64;
                    acc(&mut g, *x, xv * k);
                }
                Op::HingeSq { x, bound } => {
                    let xv = self.value(*x);
                    let k = 2.0 * dy[[0, 0]] / xv.len().max(1) as f64;
                    let dx = xv.mapv(|a| k * (a.abs() - bound).max(0.0) * a.signum());
                    acc(&mut g, *x, dx);
                }
            }
        }
        Grads { per_param }
    }
}

/// Dense layer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.weight"), glorot_uniform(fan_out, fan_in, rng));
        let b = bias.then(|| store.add(format!("{name}.bias"), Array2::zeros((1, fan_out))));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect(),
            v: store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect(),
        }
    }

    /// Applies one update from the stored gradients, then zeroes them.
    /// Non-finite gradients abort without touching any parameter.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFiniteGradient { param: p.name.clone() });
        }
        if self.m.len() != store.len() {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut p.value)
                .and(&mut p.grad)
                .and(m)
                .and(v)
                .for_each(|w, g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * *g;
                    *v = b2 * *v + (1.0 - b2) * *g * *g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    *g = 0.0;
                });
        }
        Ok(())
    }
}

/// Halves the learning rate when the monitored loss stalls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    pub best: f64,
    pub bad_evals: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            threshold: 1e-6,
            min_lr: 1e-7,
            best: f64::MAX,
            bad_evals: 0,
        }
    }

    /// Records one evaluation and returns the possibly reduced rate.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.bad_evals = 0;
            return lr;
        }
        self.bad_evals += 1;
        if self.bad_evals >= self.patience {
            self.bad_evals = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

/// Max relative error between `analytic` and central finite differences of
/// `loss_fn` over every parameter entry:
/// `|fd - an| / max(1e-8, |fd| + |an|)`.
pub fn compare_gradients<F>(store: &mut ParamStore, analytic: &Grads, loss_fn: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let out = loss_fn(&mut tape)?;
        Ok(tape.scalar(out))
    };
    let mut worst: f64 = 0.0;
    for pi in 0..store.len() {
        let id = ParamId(pi);
        let shape = store.get(id).value.raw_dim();
        let an_zero = Array2::zeros(shape);
        let an = analytic.get(id).cloned().unwrap_or(an_zero);
        for idx in 0..an.len() {
            let (r, c) = (idx / an.ncols(), idx % an.ncols());
            let orig = store.get(id).value[[r, c]];
            store.get_mut(id).value[[r, c]] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).value[[r, c]] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).value[[r, c]] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = an[[r, c]];
            let rel = (fd - a).abs() / (fd.abs() + a.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Runs `loss_fn` on a tape, back-propagates, and checks the result against
/// finite differences.
pub fn gradient_check<F>(store: &mut ParamStore, loss_fn: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(store);
        let out = loss_fn(&mut tape)?;
        tape.backward(out)
    };
    compare_gradients(store, &grads, loss_fn, h)
}
