//! Loss, Adam, and the training loop.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardHooks, SkatingMixer};
use crate::mru::ClipFeatures;
use crate::param::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 200,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be finite and non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("eps must be positive and weight_decay non-negative"));
        }
        Ok(())
    }
}

/// One training example: a video's clips and its K target scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clips: Vec<ClipFeatures>,
    pub targets: Vec<f64>,
}

/// `Σ_k (1/N)·Σ_i (P_ik − T_ik)²`, plus the per-head terms.
pub fn multi_head_mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Input("batch size mismatch".into()));
    }
    let k = pred[0].len();
    if pred.iter().chain(target).any(|r| r.len() != k) {
        return Err(Error::Input("head count mismatch".into()));
    }
    let n = pred.len() as f64;
    let per_head: Vec<f64> = (0..k)
        .map(|h| pred.iter().zip(target).map(|(p, t)| (p[h] - t[h]) * (p[h] - t[h])).sum::<f64>() / n)
        .collect();
    Ok((per_head.iter().sum(), per_head))
}

/// First and second moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn matches(&self, store: &ParamStore) -> bool {
        self.m.len() == store.len()
            && self.v.len() == store.len()
            && store
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.shape() == p.value.shape() && v.shape() == p.value.shape())
    }
}

/// Adam with bias correction; weight decay enters as `g + wd·θ`.
pub fn adam_step(state: &mut AdamState, store: &mut ParamStore, config: &TrainConfig) -> Result<()> {
    if !state.matches(store) {
        return Err(Error::config("optimizer state does not match parameters"));
    }
    for p in store.iter() {
        if !p.grad.all_finite() {
            return Err(Error::NonFiniteParam { name: p.name.clone() });
        }
    }
    state.step += 1;
    let precision = store.precision();
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(config.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(config.beta2, t as f64);
    let (b1, b2, wd, lr, eps) = (config.beta1, config.beta2, config.weight_decay, config.lr, config.eps);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let theta = p.value.data_mut();
        let g = p.grad.data();
        let (m, v) = (m.data_mut(), v.data_mut());
        for i in 0..theta.len() {
            let gi = g[i] + wd * theta[i];
            m[i] = precision.round(b1 * m[i] + (1.0 - b1) * gi);
            v[i] = precision.round(b2 * v[i] + (1.0 - b2) * gi * gi);
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] = precision.round(theta[i] - lr * m_hat / (libm::sqrt(v_hat) + eps));
        }
        if !theta.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteParam { name: p.name.clone() });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLoss {
    pub label: String,
    pub mse: f64,
}

/// Per-epoch training loss. Head values are MSEs over every
/// sample seen in the epoch, taken with the parameters of the moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub steps: u64,
    pub heads: Vec<HeadLoss>,
    pub total: f64,
    pub wall_seconds: f64,
}

/// Loss and gradients of one sample, scaled by `1/batch_len`.
fn sample_gradients(
    model: &SkatingMixer,
    store: &ParamStore,
    sample: &Sample,
    batch_len: usize,
    hooks: ForwardHooks,
) -> Result<(Vec<f64>, crate::param::Gradients)> {
    let k = sample.targets.len();
    let mut tape = Tape::new(store);
    let out = model.forward(&mut tape, &sample.clips, hooks)?;
    let pred = tape.value(out).data().to_vec();
    if pred.len() != k {
        return Err(Error::Input(alloc::format!("{} targets for {} heads", k, pred.len())));
    }
    let target = tape.input(Tensor::new(&[1, k], sample.targets.clone())?)?;
    let diff = tape.sub(out, target)?;
    let sq = tape.mul(diff, diff)?;
    let sum = tape.sum(sq)?;
    let loss = tape.scale(sum, 1.0 / batch_len as f64)?;
    Ok((pred, tape.backward(loss)?))
}

/// Stateful trainer: one [`Trainer::run_epoch`] call per epoch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub adam: AdamState,
    pub hooks: ForwardHooks,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            adam: AdamState::new(store),
            hooks: ForwardHooks::NONE,
            epoch: 0,
        })
    }

    pub fn with_hooks(mut self, hooks: ForwardHooks) -> Self {
        self.hooks = hooks;
        self
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.adam.step
    }

    /// Shuffles with a generator keyed by `(seed, epoch)`, then takes one
    /// Adam step per batch.
    pub fn run_epoch(&mut self, model: &SkatingMixer, store: &mut ParamStore, data: &[Sample]) -> Result<LossReport> {
        if data.is_empty() {
            return Err(Error::Input("empty training set".into()));
        }
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut preds = Vec::with_capacity(data.len());
        let mut targets = Vec::with_capacity(data.len());
        for (batch_idx, batch) in order.chunks(self.config.batch_size).enumerate() {
            store.zero_grads();
            for &i in batch {
                let (pred, grads) = sample_gradients(model, store, &data[i], batch.len(), self.hooks)
                    .map_err(|e| if e.is_numeric() { Error::NonFiniteLoss { epoch, batch: batch_idx } } else { e })?;
                store.accumulate(&grads);
                preds.push(pred);
                targets.push(data[i].targets.clone());
            }
            adam_step(&mut self.adam, store, &self.config)
                .map_err(|e| if e.is_numeric() { Error::NonFiniteLoss { epoch, batch: batch_idx } } else { e })?;
        }
        self.epoch += 1;
        let (total, per_head) = multi_head_mse(&preds, &targets)?;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let labels = model.config().head_labels();
        Ok(LossReport {
            epoch,
            steps: self.adam.step,
            heads: labels
                .into_iter()
                .zip(per_head)
                .map(|(label, mse)| HeadLoss { label, mse })
                .collect(),
            total,
            wall_seconds: 0.0,
        })
    }
}

/// Hooks into [`train_loop`]: a clock for wall time and a per-epoch
/// callback that may stop training early by returning `false`.
pub trait TrainObserver {
    fn now_seconds(&mut self) -> f64 {
        0.0
    }

    fn on_epoch(&mut self, _report: &LossReport, _store: &ParamStore) -> bool {
        true
    }
}

impl TrainObserver for () {}

/// Runs `config.epochs` epochs (or until the observer stops it).
pub fn train_loop(
    model: &SkatingMixer,
    store: &mut ParamStore,
    data: &[Sample],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Trainer, Vec<LossReport>)> {
    let mut trainer = Trainer::new(config.clone(), store)?;
    let mut reports = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let start = observer.now_seconds();
        let mut report = trainer.run_epoch(model, store, data)?;
        report.wall_seconds = observer.now_seconds() - start;
        let keep_going = observer.on_epoch(&report, store);
        reports.push(report);
        if !keep_going {
            break;
        }
    }
    Ok((trainer, reports))
}
