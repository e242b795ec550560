//! Shared optimization loop: AdamW with decoupled weight decay, linear
//! warmup then linear decay, seeded shuffling and early stopping.

mod config;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, ParamStore};
use crate::backbone::{BackboneConfig, Decoder};
use crate::discriminative::DualHeadClassifier;
use crate::encodings::{LossScope, Task, TaskOrder};
use crate::regime::{Family, RegimeConfig, Setting};
use crate::{Error, Result};

pub use config::{load_train_config, parse_config_text, ConfigSource, ENV_PREFIX};

/// `max(1, round(fraction · total))`.
pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    ((warmup_fraction * total_steps as f64).round() as usize).max(1)
}

/// Linear ramp 0 → peak over the warmup steps, then linear decay to 0 at
/// `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond total {total_steps}")));
    }
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(Error::InvalidArgument(format!("warmup_fraction {warmup_fraction} outside [0, 1)")));
    }
    let w = warmup_steps(total_steps, warmup_fraction);
    Ok(if step <= w {
        peak_lr * step as f64 / w as f64
    } else {
        peak_lr * (total_steps - step) as f64 / (total_steps - w) as f64
    })
}

/// Which table of default hyperparameters to start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// The published learning rates, sized for pre-trained 100M-parameter models.
    Published,
    /// Learning rates that train the tiny randomly initialized backbones.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "published" => Ok(Self::Published),
            "desk" => Ok(Self::Desk),
            _ => Err(Error::Config { key: "profile".into(), message: format!("unknown profile `{s}`") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub early_stop_patience: usize,
    pub lambda: f64,
    pub tf_prob: f64,
    pub seed: u64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Generative loss positions.
    pub loss_scope: LossScope,
    /// Generative joint: EC share of each epoch; natural ratio when `None`.
    pub mix_ec_fraction: Option<f64>,
    /// Learning rate of the first-task phase of domain adaptation.
    pub adapt_learning_rate: f64,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

/// Learning-rate column index: single-val, single-ec, val→ec, ec→val, joint.
fn column(setting: Setting) -> usize {
    match setting {
        Setting::Single(Task::Valence) => 0,
        Setting::Single(Task::Ec) => 1,
        Setting::TwoStep(TaskOrder::ValFirst) => 2,
        Setting::TwoStep(TaskOrder::EcFirst) => 3,
        Setting::Joint => 4,
    }
}

const PUBLISHED_LR: [[f64; 5]; 2] = [
    [5e-5, 4e-5, 4e-5, 6e-5, 1e-5],
    [9e-3, 8e-3, 9e-4, 7e-4, 8e-3],
];
const DESK_LR: [[f64; 5]; 2] = [
    [3e-3, 3e-3, 3e-3, 3e-3, 3e-3],
    [3e-3, 3e-3, 3e-3, 3e-3, 3e-3],
];

fn family_row(f: Family) -> usize {
    match f {
        Family::Disc => 0,
        Family::Gen => 1,
    }
}

impl TrainConfig {
    /// Defaults for a regime. Oracle regimes reuse the two-step learning rate
    /// and λ of their order.
    pub fn defaults(regime: &RegimeConfig, profile: Profile) -> Self {
        let table = match profile {
            Profile::Published => &PUBLISHED_LR,
            Profile::Desk => &DESK_LR,
        };
        let row = &table[family_row(regime.family)];
        let (lambda, tf_prob) = match regime.setting {
            Setting::Single(Task::Valence) => (1.0, 0.0),
            Setting::Single(Task::Ec) => (0.0, 0.0),
            Setting::Joint => (0.3, 0.0),
            Setting::TwoStep(TaskOrder::ValFirst) => (0.5, 1.0),
            Setting::TwoStep(TaskOrder::EcFirst) => (0.4, 0.1),
        };
        let adapt_column = match regime.order() {
            Some(order) => column(Setting::Single(order.first())),
            None => column(regime.setting),
        };
        let desk = profile == Profile::Desk;
        Self {
            learning_rate: row[column(regime.setting)],
            // Smaller batches and fewer epochs give the tiny models more
            // updates per pass over the data.
            batch_size: if desk { 16 } else { 32 },
            max_epochs: match (regime.family, desk) {
                (_, true) | (Family::Disc, false) => 30,
                (Family::Gen, false) => 60,
            },
            warmup_fraction: 0.1,
            early_stop_patience: 5,
            lambda,
            // Oracle training always sees gold first-task labels.
            tf_prob: if regime.oracle { 1.0 } else { tf_prob },
            seed: 0,
            weight_decay: 0.01,
            grad_clip: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            // A randomly initialized decoder spends a full-sequence loss on
            // modelling the unit text instead of the labels.
            loss_scope: if desk && regime.family == Family::Gen { LossScope::TargetsOnly } else { LossScope::Full },
            mix_ec_fraction: None,
            adapt_learning_rate: row[adapt_column],
            hidden_dim: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 128,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive".into());
        }
        if !(self.adapt_learning_rate > 0.0 && self.adapt_learning_rate.is_finite()) {
            return bad("adapt_learning_rate", "must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction", format!("{} outside [0, 1)", self.warmup_fraction));
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience", "must be at least 1".into());
        }
        for (key, v) in [("lambda", self.lambda), ("tf_prob", self.tf_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(key, format!("{v} outside [0, 1]"));
            }
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay", "must be non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return bad("grad_clip", "must be positive".into());
            }
        }
        if let Some(f) = self.mix_ec_fraction {
            if !(0.0..1.0).contains(&f) {
                return bad("mix_ec_fraction", format!("{f} outside [0, 1)"));
            }
        }
        self.backbone(1).validate()
    }

    pub fn backbone(&self, vocab_size: usize) -> BackboneConfig {
        BackboneConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_seq_len: self.max_seq_len,
            dropout_rate: self.dropout_rate,
            seed: self.seed,
        }
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(params: &ParamStore, config: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let grad = params.grad(id).data().to_vec();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let value = params.value_mut(id).data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                value[i] -= lr * (update + self.weight_decay * value[i]);
            }
        }
    }
}

fn clip_gradients(params: &mut ParamStore, max_norm: f64) {
    let ids: Vec<_> = params.ids().collect();
    let norm = ids
        .iter()
        .flat_map(|&id| params.grad(id).data().iter().map(|g| g * g))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for id in ids {
            params.grad_mut(id).data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Anything with a parameter store.
pub trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl Trainable for DualHeadClassifier {
    fn params(&self) -> &ParamStore {
        DualHeadClassifier::params(self)
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        DualHeadClassifier::params_mut(self)
    }
}

impl Trainable for Decoder {
    fn params(&self) -> &ParamStore {
        Decoder::params(self)
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        Decoder::params_mut(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean batch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation selection metric per epoch.
    pub val_metric: Vec<f64>,
    /// Learning rate applied at each optimizer step.
    pub lr_trace: Vec<f64>,
    pub total_steps: usize,
    pub stopping_epoch: usize,
    pub best_epoch: usize,
    /// Parameter fingerprint of the returned weights.
    pub best_checkpoint: String,
}

/// Runs the optimization loop and leaves the best-validation weights in
/// `model`. `step` must add the batch-loss gradients to the store and return
/// the loss; `validate` returns the selection metric (higher is better).
pub fn train<M, T, S, V>(
    model: &mut M,
    items: &[T],
    config: &TrainConfig,
    mut step: S,
    mut validate: V,
) -> Result<TrainLog>
where
    M: Trainable,
    S: FnMut(&mut M, &[&T], &mut ChaCha8Rng) -> Result<f64>,
    V: FnMut(&M) -> Result<f64>,
{
    config.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument("no training items".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batches_per_epoch = items.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.max_epochs;
    let mut opt = AdamW::new(model.params(), config);
    let mut log = TrainLog {
        train_loss: Vec::new(),
        val_metric: Vec::new(),
        lr_trace: Vec::with_capacity(total_steps),
        total_steps,
        stopping_epoch: 0,
        best_epoch: 0,
        best_checkpoint: String::new(),
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut global = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            global += 1;
            let batch: Vec<&T> = chunk.iter().map(|&i| &items[i]).collect();
            model.params_mut().zero_grads();
            let loss = step(model, &batch, &mut rng).map_err(|e| match e {
                Error::Training { .. } => e,
                other => Error::Training { step: global, message: other.to_string() },
            })?;
            if !loss.is_finite() {
                return Err(Error::Training { step: global, message: format!("non-finite loss {loss}") });
            }
            let params = model.params_mut();
            if let Some(bad) = params.ids().find(|&id| !params.grad(id).is_finite()) {
                return Err(Error::Training {
                    step: global,
                    message: format!("non-finite gradient in {}", params.name(bad)),
                });
            }
            if let Some(c) = config.grad_clip {
                clip_gradients(params, c);
            }
            let lr = lr_at(global, total_steps, config.learning_rate, config.warmup_fraction)?;
            opt.step(params, lr);
            if let Some(bad) = params.ids().find(|&id| !params.value(id).is_finite()) {
                return Err(Error::Training {
                    step: global,
                    message: format!("non-finite weights in {} after the update", params.name(bad)),
                });
            }
            log.lr_trace.push(lr);
            loss_sum += loss;
        }
        log.train_loss.push(loss_sum / batches_per_epoch as f64);
        let metric = validate(model)?;
        log.val_metric.push(metric);
        log.stopping_epoch = epoch;
        if best.as_ref().is_none_or(|(b, _)| metric > *b) {
            best = Some((metric, model.params().clone()));
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().load_values_from(&params)?;
    }
    log.best_checkpoint = model.params().fingerprint();
    Ok(log)
}

#[cfg(test)]
mod tests;
