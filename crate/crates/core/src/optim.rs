//! AdamW and the shared minibatch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use radiomotion_tensor::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::nn::ParamSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Validation improvements smaller than this do not reset patience.
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            max_epochs: 60,
            patience: 30,
            weight_decay: 1e-2,
            seed: 0,
            min_delta: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("learning_rate, batch_size, max_epochs and patience must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs)));
        }
        if self.weight_decay < 0.0 || self.min_delta < 0.0 {
            return Err(Error::Config("weight_decay and min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay and bias correction.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Real>(params: &ParamSet<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros = || params.entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; a missing gradient counts as zero.
    pub fn step<T: Real>(&mut self, params: &mut ParamSet<T>, grads: &[Option<&Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::InvalidInput(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, grad) in grads.iter().enumerate() {
            let p = params.get_mut(k);
            if let Some(g) = grad {
                if g.shape() != p.shape() {
                    return Err(Error::InvalidInput(format!("gradient {k} shape {:?} vs {:?}", g.shape().0, p.shape().0)));
                }
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = grad.map_or(0.0, |g| g.data()[i].as_f64());
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                let decayed = w.as_f64() * (1.0 - self.lr * self.weight_decay);
                *w = T::from_f64(decayed - self.lr * update);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:e},{:e}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out
    }
}

/// Loss of one minibatch: given the bound parameters and the samples,
/// records the forward pass on `g` and returns the scalar mean loss.
pub trait BatchLoss<S>: Fn(&mut Graph<f32>, &[Var], &[&S]) -> Result<Var> {}
impl<S, F: Fn(&mut Graph<f32>, &[Var], &[&S]) -> Result<Var>> BatchLoss<S> for F {}

/// Mean loss over `data` without recording gradients, weighting batches by
/// size so the result does not depend on batching.
pub fn mean_loss<S>(params: &ParamSet<f32>, data: &[S], batch_size: usize, loss: &impl BatchLoss<S>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut total = 0.0;
    for chunk in data.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let refs: Vec<&S> = chunk.iter().collect();
        let l = loss(&mut g, &vars, &refs)?;
        total += g.value(l).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch AdamW with early stopping on validation loss. On return
/// `params` holds the best-validation parameters.
pub fn fit<S>(
    params: &mut ParamSet<f32>,
    train: &[S],
    val: &[S],
    cfg: &TrainConfig,
    loss: impl BatchLoss<S>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(params, cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (params.clone(), f64::INFINITY, 0usize);
    let mut epochs = Vec::new();
    let mut wait = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let vars = params.bind(&mut g, true);
            let batch: Vec<&S> = chunk.iter().map(|&i| &train[i]).collect();
            let l = loss(&mut g, &vars, &batch)?;
            let value = g.value(l).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite training loss at epoch {epoch}")));
            }
            total += value * chunk.len() as f64;
            g.backward(l)?;
            let grads: Vec<Option<&Tensor<f32>>> = vars.iter().map(|&v| g.grad(v)).collect();
            opt.step(params, &grads)?;
        }
        let record = EpochRecord { epoch, train_loss: total / train.len() as f64, val_loss: mean_loss(params, val, cfg.batch_size, &loss)? };
        on_epoch(&record);
        epochs.push(record);
        if record.val_loss < best.1 - cfg.min_delta {
            best = (params.clone(), record.val_loss, epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    *params = best.0;
    Ok(History { epochs, best_epoch: best.2, best_val_loss: best.1, stopped_early })
}
