//! Feedforward regression network with optional per-factor embeddings.
//!
//! The core is a stack of blocks `dense → batchnorm → leaky ReLU → dropout`
//! followed by a one-unit dense head with a ReLU or identity output. Dense
//! layers inside blocks carry no bias since batchnorm's shift replaces it.
//!
//! In the embedded variant each factor's columns are first projected to a
//! small vector (`x_f · P_f + b_f`) and the concatenation feeds the core.
//!
//! Parameters live in one flat list of 2-D tensors (biases and batchnorm
//! vectors are `1 × k`), which keeps the optimizer, gradient checks and
//! checkpoints uniform.

mod checkpoint;
mod train;

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use train::{
    single_factor_net, train, Adam, EpochRecord, StopReason, TrainConfig, TrainedNet, DEFAULT_BATCH_SIZE,
    DEFAULT_LEARNING_RATE, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE, DEFAULT_VAL_FRACTION,
};

pub const HIDDEN_WIDTH: usize = 256;
pub const N_BLOCKS: usize = 3;
pub const DROPOUT_RATE: f64 = 0.5;
pub const EMBED_DIM: usize = 16;
pub const LEAKY_ALPHA: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input has {found} columns, network expects {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("training-mode forward pass needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("{rows} rows but {targets} targets")]
    TargetLength { rows: usize, targets: usize },
    #[error("non-finite loss{}", batch.map(|b| format!(" at batch {b}")).unwrap_or_default())]
    NonFiniteLoss { batch: Option<usize> },
    #[error("network has no embedding layer")]
    NotEmbedded,
    #[error("factor layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("unknown factor {0:?}")]
    UnknownFactor(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 training rows after the validation split, got {0}")]
    TooFewRows(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Floating-point element type of a network (`f32` for training, `f64` for
/// gradient checks).
pub trait Scalar:
    num_traits::Float
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Non-negative output for base scores.
    Relu,
    /// Identity output for change scores.
    Linear,
}

/// Layer sizes and constants of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub blocks: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub leaky_alpha: f64,
    pub embed_dim: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub head: Head,
}

impl NetSpec {
    pub fn standard(head: Head) -> Self {
        NetSpec {
            blocks: N_BLOCKS,
            hidden: HIDDEN_WIDTH,
            dropout: DROPOUT_RATE,
            leaky_alpha: LEAKY_ALPHA,
            embed_dim: EMBED_DIM,
            bn_momentum: BN_MOMENTUM,
            bn_eps: BN_EPS,
            head,
        }
    }
}

/// One factor's columns in the input matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

impl FactorGroup {
    /// Groups in the layout order of a design matrix.
    pub fn from_design(dm: &crate::preprocess::DesignMatrix) -> Vec<FactorGroup> {
        dm.factor_partition().into_iter().map(|(name, columns)| FactorGroup { name, columns }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Processed columns feed the dense core directly.
    Full,
    /// Per-factor projections feed the dense core.
    Embedded(Vec<FactorGroup>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Batch statistics, dropout off.
    TrainNoDropout,
    /// Running statistics, dropout off.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar> {
    spec: NetSpec,
    input_width: usize,
    groups: Option<Vec<FactorGroup>>,
    names: Vec<String>,
    params: Vec<Array2<T>>,
    running_mean: Vec<Array1<T>>,
    running_var: Vec<Array1<T>>,
}

/// Intermediate values of one forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Trace<T: Scalar> {
    mode: Mode,
    group_inputs: Vec<Array2<T>>,
    block_inputs: Vec<Array2<T>>,
    xhat: Vec<Array2<T>>,
    inv_std: Vec<Array1<T>>,
    batch_mean: Vec<Array1<T>>,
    batch_var: Vec<Array1<T>>,
    pre_act: Vec<Array2<T>>,
    masks: Vec<Option<Array2<T>>>,
    last: Array2<T>,
    head_pre: Array1<T>,
    output: Array1<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Array1<T> {
        &self.output
    }

    /// Inputs to each leaky ReLU, followed by the head's pre-activation.
    pub fn kink_inputs(&self) -> Vec<ArrayView2<'_, T>> {
        let mut v: Vec<ArrayView2<T>> = self.pre_act.iter().map(|a| a.view()).collect();
        v.push(self.head_pre.view().insert_axis(Axis(1)));
        v
    }

    /// Output of each block after dropout.
    pub fn block_outputs(&self) -> Vec<&Array2<T>> {
        self.block_inputs.iter().skip(1).chain(std::iter::once(&self.last)).collect()
    }

    /// Batch-normalized values before the affine step, per block.
    pub fn normalized(&self) -> &[Array2<T>] {
        &self.xhat
    }

    /// Activations entering the first dense layer.
    pub fn core_input(&self) -> &Array2<T> {
        &self.block_inputs[0]
    }
}

/// Loss and one gradient tensor per parameter tensor.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub loss: T,
    pub tensors: Vec<Array2<T>>,
}

fn gaussian<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z * sd)
    })
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-scaled dense weights, `N(0, 1/fan_in)`
    /// embeddings, unit batchnorm scales and a head bias of `target_mean`.
    pub fn new<R: Rng + ?Sized>(
        input_width: usize,
        arch: Architecture,
        spec: NetSpec,
        target_mean: f64,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        if spec.blocks == 0 || spec.hidden == 0 || spec.embed_dim == 0 {
            return Err(NeuralError::InvalidConfig("layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&spec.dropout) {
            return Err(NeuralError::InvalidConfig(format!("dropout {} outside [0, 1)", spec.dropout)));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        let groups = match arch {
            Architecture::Full => None,
            Architecture::Embedded(groups) => {
                let mut seen = vec![false; input_width];
                for g in &groups {
                    for &c in &g.columns {
                        if c >= input_width || seen[c] {
                            return Err(NeuralError::LayoutMismatch(format!(
                                "column {c} of factor {:?} is out of range or shared",
                                g.name
                            )));
                        }
                        seen[c] = true;
                    }
                }
                if groups.is_empty() {
                    return Err(NeuralError::LayoutMismatch("no factor groups".into()));
                }
                for (gi, g) in groups.iter().enumerate() {
                    let fan_in = g.columns.len().max(1) as f64;
                    names.push(format!("embed{gi}.weight"));
                    params.push(gaussian(g.columns.len(), spec.embed_dim, (1.0 / fan_in).sqrt(), rng));
                    names.push(format!("embed{gi}.bias"));
                    params.push(Array2::zeros((1, spec.embed_dim)));
                }
                Some(groups)
            }
        };
        let mut width = match &groups {
            Some(g) => g.len() * spec.embed_dim,
            None => input_width,
        };
        for k in 0..spec.blocks {
            names.push(format!("block{k}.weight"));
            params.push(gaussian(width, spec.hidden, (2.0 / width.max(1) as f64).sqrt(), rng));
            names.push(format!("block{k}.gamma"));
            params.push(Array2::ones((1, spec.hidden)));
            names.push(format!("block{k}.beta"));
            params.push(Array2::zeros((1, spec.hidden)));
            width = spec.hidden;
        }
        names.push("head.weight".into());
        params.push(gaussian(width, 1, (2.0 / width as f64).sqrt(), rng));
        names.push("head.bias".into());
        params.push(Array2::from_elem((1, 1), T::of(target_mean)));
        let running_mean = vec![Array1::zeros(spec.hidden); spec.blocks];
        let running_var = vec![Array1::ones(spec.hidden); spec.blocks];
        Ok(Network { spec, input_width, groups, names, params, running_mean, running_var })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn groups(&self) -> Option<&[FactorGroup]> {
        self.groups.as_deref()
    }

    /// Width of the concatenated embedding, or `None` for the full variant.
    pub fn embedding_width(&self) -> Option<usize> {
        self.groups.as_ref().map(|g| g.len() * self.spec.embed_dim)
    }

    /// Width entering the first block.
    pub fn core_input_width(&self) -> usize {
        self.embedding_width().unwrap_or(self.input_width)
    }

    /// Output width of each block's dense layer.
    pub fn block_widths(&self) -> Vec<usize> {
        (0..self.spec.blocks).map(|k| self.params[self.block_index(k)].ncols()).collect()
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Array2<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn running_stats(&self) -> (&[Array1<T>], &[Array1<T>]) {
        (&self.running_mean, &self.running_var)
    }

    pub fn running_stats_mut(&mut self) -> (&mut [Array1<T>], &mut [Array1<T>]) {
        (&mut self.running_mean, &mut self.running_var)
    }

    fn n_embed_params(&self) -> usize {
        self.groups.as_ref().map_or(0, |g| 2 * g.len())
    }

    fn block_index(&self, k: usize) -> usize {
        self.n_embed_params() + 3 * k
    }

    fn head_index(&self) -> usize {
        self.n_embed_params() + 3 * self.spec.blocks
    }

    fn check_width(&self, x: &ArrayView2<T>) -> Result<(), NeuralError> {
        if x.ncols() != self.input_width {
            return Err(NeuralError::WidthMismatch { expected: self.input_width, found: x.ncols() });
        }
        Ok(())
    }

    fn gather(x: &ArrayView2<T>, cols: &[usize]) -> Array2<T> {
        Array2::from_shape_fn((x.nrows(), cols.len()), |(i, j)| x[[i, cols[j]]])
    }

    /// Concatenated factor embeddings `x_f · P_f + b_f` in group order.
    pub fn embed_forward(&self, x: ArrayView2<T>) -> Result<Array2<T>, NeuralError> {
        let groups = self.groups.as_ref().ok_or(NeuralError::NotEmbedded)?;
        self.check_width(&x)?;
        let d = self.spec.embed_dim;
        let mut out = Array2::zeros((x.nrows(), groups.len() * d));
        for (gi, g) in groups.iter().enumerate() {
            let xg = Self::gather(&x, &g.columns);
            let e = xg.dot(&self.params[2 * gi]) + &self.params[2 * gi + 1];
            out.slice_mut(s![.., gi * d..(gi + 1) * d]).assign(&e);
        }
        Ok(out)
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: ArrayView2<T>, mode: Mode, rng: &mut R) -> Result<Trace<T>, NeuralError> {
        self.check_width(&x)?;
        let n = x.nrows();
        if mode != Mode::Eval && n < 2 {
            return Err(NeuralError::BatchTooSmall(n));
        }
        let alpha = T::of(self.spec.leaky_alpha);
        let eps = T::of(self.spec.bn_eps);
        let nf = T::of(n as f64);

        let mut group_inputs = Vec::new();
        let mut h = match &self.groups {
            None => x.to_owned(),
            Some(groups) => {
                let d = self.spec.embed_dim;
                let mut out = Array2::zeros((n, groups.len() * d));
                for (gi, g) in groups.iter().enumerate() {
                    let xg = Self::gather(&x, &g.columns);
                    let e = xg.dot(&self.params[2 * gi]) + &self.params[2 * gi + 1];
                    out.slice_mut(s![.., gi * d..(gi + 1) * d]).assign(&e);
                    group_inputs.push(xg);
                }
                out
            }
        };

        let blocks = self.spec.blocks;
        let mut trace_blocks = Vec::with_capacity(blocks);
        let mut xhats = Vec::with_capacity(blocks);
        let mut inv_stds = Vec::with_capacity(blocks);
        let mut means = Vec::with_capacity(blocks);
        let mut vars = Vec::with_capacity(blocks);
        let mut pre_acts = Vec::with_capacity(blocks);
        let mut masks = Vec::with_capacity(blocks);
        let keep = 1.0 - self.spec.dropout;
        let scale = T::of(1.0 / keep);
        for k in 0..blocks {
            let bi = self.block_index(k);
            let a = h.dot(&self.params[bi]);
            let (mean, var) = match mode {
                Mode::Eval => (self.running_mean[k].clone(), self.running_var[k].clone()),
                _ => {
                    let mut mean = a.sum_axis(Axis(0)) / nf;
                    // Keep constant columns exactly centered despite rounding in the sum.
                    for (j, col) in a.columns().into_iter().enumerate() {
                        let first = col[0];
                        if col.iter().all(|&v| v == first) {
                            mean[j] = first;
                        }
                    }
                    let centered = &a - &mean;
                    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / nf;
                    (mean, var)
                }
            };
            let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
            let xhat = (&a - &mean) * &inv_std;
            let gamma = self.params[bi + 1].row(0);
            let beta = self.params[bi + 2].row(0);
            let s = &xhat * &gamma + &beta;
            let mut u = s.mapv(|v| if v > T::zero() { v } else { alpha * v });
            let mask = if mode == Mode::Train && self.spec.dropout > 0.0 {
                let m = Array2::from_shape_simple_fn(u.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                });
                u *= &m;
                Some(m)
            } else {
                None
            };
            trace_blocks.push(std::mem::replace(&mut h, u));
            xhats.push(xhat);
            inv_stds.push(inv_std);
            means.push(mean);
            vars.push(var);
            pre_acts.push(s);
            masks.push(mask);
        }
        let hi = self.head_index();
        let head_pre = h.dot(&self.params[hi]).column(0).to_owned() + self.params[hi + 1][[0, 0]];
        let output = match self.spec.head {
            Head::Relu => head_pre.mapv(|v| if v > T::zero() { v } else { T::zero() }),
            Head::Linear => head_pre.clone(),
        };
        Ok(Trace {
            mode,
            group_inputs,
            block_inputs: trace_blocks,
            xhat: xhats,
            inv_std: inv_stds,
            batch_mean: means,
            batch_var: vars,
            pre_act: pre_acts,
            masks,
            last: h,
            head_pre,
            output,
        })
    }

    /// Eval-mode predictions.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>, NeuralError> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        Ok(self.forward(x, Mode::Eval, &mut rng)?.output)
    }

    /// Mean squared error of `trace` against `targets`.
    pub fn loss(trace: &Trace<T>, targets: &[T]) -> Result<T, NeuralError> {
        if targets.len() != trace.output.len() {
            return Err(NeuralError::TargetLength { rows: trace.output.len(), targets: targets.len() });
        }
        let n = T::of(targets.len() as f64);
        let sse = trace.output.iter().zip(targets).fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
        Ok(sse / n)
    }

    /// Gradients of the MSE loss with respect to every parameter tensor.
    pub fn backward(&self, trace: &Trace<T>, targets: &[T]) -> Result<Gradients<T>, NeuralError> {
        let loss = Self::loss(trace, targets)?;
        if !loss.is_finite() {
            return Err(NeuralError::NonFiniteLoss { batch: None });
        }
        let n = targets.len();
        let nf = T::of(n as f64);
        let two_n = T::of(2.0) / nf;
        let alpha = T::of(self.spec.leaky_alpha);
        let mut grads: Vec<Array2<T>> = self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();

        let mut d_out = Array1::from_shape_fn(n, |i| two_n * (trace.output[i] - targets[i]));
        if self.spec.head == Head::Relu {
            Zip::from(&mut d_out).and(&trace.head_pre).for_each(|d, &o| {
                if o <= T::zero() {
                    *d = T::zero();
                }
            });
        }
        let hi = self.head_index();
        let d_out2 = d_out.clone().insert_axis(Axis(1));
        grads[hi] = trace.last.t().dot(&d_out2);
        grads[hi + 1][[0, 0]] = d_out.sum();
        let mut dh = d_out2.dot(&self.params[hi].t());

        for k in (0..self.spec.blocks).rev() {
            let bi = self.block_index(k);
            if let Some(m) = &trace.masks[k] {
                dh *= m;
            }
            Zip::from(&mut dh).and(&trace.pre_act[k]).for_each(|d, &s| {
                if s <= T::zero() {
                    *d *= alpha;
                }
            });
            let ds = dh;
            let xhat = &trace.xhat[k];
            grads[bi + 1] = (&ds * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
            grads[bi + 2] = ds.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dxhat = &ds * &self.params[bi + 1].row(0);
            let inv_std = &trace.inv_std[k];
            let da = match trace.mode {
                Mode::Eval => dxhat * inv_std,
                _ => {
                    let sum_d = dxhat.sum_axis(Axis(0));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                    let t = dxhat * nf - &sum_d - &(xhat * &sum_dx);
                    t * &(inv_std / nf)
                }
            };
            grads[bi] = trace.block_inputs[k].t().dot(&da);
            dh = da.dot(&self.params[bi].t());
        }

        if let Some(groups) = &self.groups {
            let d = self.spec.embed_dim;
            for gi in 0..groups.len() {
                let dz = dh.slice(s![.., gi * d..(gi + 1) * d]);
                grads[2 * gi] = trace.group_inputs[gi].t().dot(&dz);
                grads[2 * gi + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
        }
        Ok(Gradients { loss, tensors: grads })
    }

    /// Folds a training-mode pass's batch statistics into the running averages.
    pub fn update_running_stats(&mut self, trace: &Trace<T>) {
        if trace.mode == Mode::Eval {
            return;
        }
        let m = T::of(self.spec.bn_momentum);
        let one_m = T::one() - m;
        for k in 0..self.spec.blocks {
            let rm = &mut self.running_mean[k];
            Zip::from(rm).and(&trace.batch_mean[k]).for_each(|r, &b| *r = m * *r + one_m * b);
            let rv = &mut self.running_var[k];
            Zip::from(rv).and(&trace.batch_var[k]).for_each(|r, &b| *r = m * *r + one_m * b);
        }
    }

    /// Converts the parameters to another float type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv2 = |a: &Array2<T>| a.mapv(|v| U::of(v.as_f64()));
        let conv1 = |a: &Array1<T>| a.mapv(|v| U::of(v.as_f64()));
        Network {
            spec: self.spec.clone(),
            input_width: self.input_width,
            groups: self.groups.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(conv2).collect(),
            running_mean: self.running_mean.iter().map(conv1).collect(),
            running_var: self.running_var.iter().map(conv1).collect(),
        }
    }

    fn from_parts(
        spec: NetSpec,
        input_width: usize,
        groups: Option<Vec<FactorGroup>>,
        params: Vec<Array2<T>>,
        running_mean: Vec<Array1<T>>,
        running_var: Vec<Array1<T>>,
    ) -> Result<Self, NeuralError> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let arch = match &groups {
            Some(g) => Architecture::Embedded(g.clone()),
            None => Architecture::Full,
        };
        let mut net = Network::new(input_width, arch, spec, 0.0, &mut rng)?;
        if params.len() != net.params.len() || running_mean.len() != net.running_mean.len() {
            return Err(NeuralError::Checkpoint("tensor count does not match the architecture".into()));
        }
        for (i, (dst, src)) in net.params.iter_mut().zip(params).enumerate() {
            if dst.dim() != src.dim() {
                return Err(NeuralError::Checkpoint(format!("tensor {} has shape {:?}", net.names[i], src.dim())));
            }
            *dst = src;
        }
        for (dst, src) in net.running_mean.iter_mut().zip(running_mean).chain(net.running_var.iter_mut().zip(running_var)) {
            if dst.len() != src.len() {
                return Err(NeuralError::Checkpoint("running statistics have the wrong width".into()));
            }
            *dst = src;
        }
        Ok(net)
    }
}

/// Converts an `f64` matrix into the network's element type.
pub fn to_scalar<T: Scalar>(x: ArrayView2<f64>) -> Array2<T> {
    x.mapv(T::of)
}
