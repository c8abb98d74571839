//! Adam optimizer and the early-stopping training loop.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{to_scalar, Architecture, FactorGroup, Mode, NetSpec, Network, NeuralError, Scalar};
use crate::preprocess::DesignMatrix;

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_MAX_EPOCHS: usize = 10_000;
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_PATIENCE: usize = 500;
pub const DEFAULT_VAL_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Epochs without a new best validation MSE before stopping.
    pub patience: usize,
    /// Share of training rows redrawn as validation rows every epoch.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            patience: DEFAULT_PATIENCE,
            val_fraction: DEFAULT_VAL_FRACTION,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, params: &[Array2<T>]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Array2<T>], grads: &[Array2<T>]) {
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::of(1.0 - self.beta1);
        let c2 = T::of(1.0 - self.beta2);
        let lr_t = T::of(self.lr * (1.0 - self.beta2.powi(self.step)).sqrt() / (1.0 - self.beta1.powi(self.step)));
        let eps_t = T::of(self.eps * (1.0 - self.beta2.powi(self.step)).sqrt());
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                *p -= lr_t * *m / (v.sqrt() + eps_t);
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    Ceiling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
}

/// A network restored to its best validation epoch.
#[derive(Debug, Clone)]
pub struct TrainedNet<T: Scalar> {
    pub net: Network<T>,
    pub config: TrainConfig,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_reason: StopReason,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
    /// Validation rows drawn in the best epoch.
    pub best_val_rows: Vec<usize>,
}

impl<T: Scalar> TrainedNet<T> {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, NeuralError> {
        let out = self.net.predict(to_scalar::<T>(x).view())?;
        Ok(out.iter().map(|v| v.as_f64()).collect())
    }
}

fn mse<T: Scalar>(pred: &Array1<T>, y: &[T]) -> f64 {
    let n = y.len() as f64;
    pred.iter().zip(y).map(|(&p, &t)| (p.as_f64() - t.as_f64()).powi(2)).sum::<f64>() / n
}

fn batches(rows: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = rows.chunks(size).collect();
    // Batchnorm needs two rows; fold a trailing singleton into its neighbour.
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let k = out.len() - 1;
        let start = rows.len() - 1 - out[k].len();
        out[k] = &rows[start..];
    }
    out
}

/// Trains with Adam on shuffled mini-batches. Every epoch draws a fresh
/// validation sample; training stops once the best validation MSE has not
/// improved for `patience` epochs or at `max_epochs`, and the weights of the
/// best epoch are returned.
pub fn train<T: Scalar>(
    x: ArrayView2<f64>,
    y: &[f64],
    arch: Architecture,
    spec: NetSpec,
    cfg: &TrainConfig,
) -> Result<TrainedNet<T>, NeuralError> {
    cfg.validate()?;
    let n = x.nrows();
    if y.len() != n {
        return Err(NeuralError::TargetLength { rows: n, targets: y.len() });
    }
    let n_val = ((cfg.val_fraction * n as f64).round() as usize).max(1);
    if n < n_val + 2 {
        return Err(NeuralError::TooFewRows(n.saturating_sub(n_val)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut net = Network::<T>::new(x.ncols(), arch, spec, mean, &mut rng)?;
    let xs: Array2<T> = to_scalar(x);
    let ys: Vec<T> = y.iter().map(|&v| T::of(v)).collect();
    let mut adam = Adam::new(cfg.learning_rate, net.params());

    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(Network<T>, f64, usize, Vec<usize>)> = None;
    let mut since_best = 0usize;
    let mut history = Vec::new();
    let mut stopped = StopReason::Ceiling;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (val_rows, fit_rows) = order.split_at(n_val);
        let mut loss_sum = 0.0;
        for (bi, batch) in batches(fit_rows, cfg.batch_size).into_iter().enumerate() {
            let xb = xs.select(Axis(0), batch);
            let yb: Vec<T> = batch.iter().map(|&r| ys[r]).collect();
            let trace = net.forward(xb.view(), Mode::Train, &mut rng)?;
            let grads = net.backward(&trace, &yb).map_err(|e| match e {
                NeuralError::NonFiniteLoss { .. } => NeuralError::NonFiniteLoss { batch: Some(bi) },
                other => other,
            })?;
            adam.update(net.params_mut(), &grads.tensors);
            net.update_running_stats(&trace);
            loss_sum += grads.loss.as_f64() * batch.len() as f64;
        }
        let xv = xs.select(Axis(0), val_rows);
        let yv: Vec<T> = val_rows.iter().map(|&r| ys[r]).collect();
        let val_mse = mse(&net.predict(xv.view())?, &yv);
        if !val_mse.is_finite() {
            return Err(NeuralError::NonFiniteLoss { batch: None });
        }
        history.push(EpochRecord { epoch, train_loss: loss_sum / fit_rows.len() as f64, val_mse });
        if best.as_ref().is_none_or(|b| val_mse < b.1) {
            best = Some((net.clone(), val_mse, epoch, val_rows.to_vec()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped = StopReason::Patience;
                break;
            }
        }
    }
    let epochs_run = history.len();
    let (net, best_val_mse, best_epoch, best_val_rows) = best.expect("at least one epoch ran");
    log::debug!("trained {epochs_run} epochs, best epoch {best_epoch} with validation MSE {best_val_mse:.6}");
    Ok(TrainedNet {
        net,
        config: cfg.clone(),
        best_epoch,
        best_val_mse,
        stopped_reason: stopped,
        epochs_run,
        history,
        best_val_rows,
    })
}

/// Trains an embedded network whose only input is `factor`'s embedding.
/// `dm` holds the training rows; other factors' columns are ignored.
pub fn single_factor_net<T: Scalar>(
    dm: &DesignMatrix,
    y: &[f64],
    factor: &str,
    spec: NetSpec,
    cfg: &TrainConfig,
) -> Result<TrainedNet<T>, NeuralError> {
    let columns = dm.columns_for_factor(factor).map_err(|_| NeuralError::UnknownFactor(factor.to_string()))?;
    let group = FactorGroup { name: factor.to_string(), columns };
    train(dm.values.view(), y, Architecture::Embedded(vec![group]), spec, cfg)
}
