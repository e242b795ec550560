//! Dual-head encoder classifier. Valence is read from the `[CLS]` state; each
//! EC candidate is scored from a coordinate-wise max over `[CLS]` and the
//! candidate's span states.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::backbone::{load_checkpoint, save_checkpoint, Checkpoint, EncoderConfig, TransformerBody};
use crate::corpus::FunctionalUnit;
use crate::encodings::{
    encode_discriminative, ContextSource, DiscriminativeExample, Task, TaskOrder, TwoStepContext,
    Vocabulary,
};
use crate::{argmax, Error, Result};

const HEAD_STD: f64 = 0.02;
const CHECKPOINT_KIND: &str = "dual-head";

/// `λ·valence + (1 − λ)·ec`.
pub fn interpolated_loss(lambda: f64, loss_valence: f64, loss_ec: f64) -> Result<f64> {
    check_unit_interval("lambda", lambda)?;
    for (name, l) in [("valence", loss_valence), ("ec", loss_ec)] {
        if !l.is_finite() || l < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{name} loss {l} is not finite and non-negative"
            )));
        }
    }
    Ok(lambda * loss_valence + (1.0 - lambda) * loss_ec)
}

fn check_unit_interval(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("{name} {p} outside [0, 1]")));
    }
    Ok(())
}

/// One Bernoulli draw: does the gold label replace the prediction?
pub fn teacher_force(rng: &mut impl Rng, tf_prob: f64) -> bool {
    rng.gen::<f64>() < tf_prob
}

fn task_weight(task: Task, lambda: f64) -> f64 {
    match task {
        Task::Valence => lambda,
        Task::Ec => 1.0 - lambda,
    }
}

/// Inference path used by [`DualHeadClassifier::predict_unit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscSetting {
    Single,
    Joint,
    TwoStep { order: TaskOrder, oracle: bool },
}

/// Class probabilities, one row per unit (valence) or per candidate (EC),
/// plus the batch-mean cross-entropy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskOutput {
    pub probs: Vec<Vec<f64>>,
    pub loss: f64,
}

impl TaskOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.iter().map(|p| argmax(p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    pub valence: TaskOutput,
    pub ec: TaskOutput,
    pub loss_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepOutput {
    pub first: TaskOutput,
    pub second: TaskOutput,
    /// The context injected into each unit's second step.
    pub contexts: Vec<TwoStepContext>,
    pub loss_total: f64,
}

#[derive(Debug, Clone)]
struct Heads {
    val_w: ParamId,
    val_b: ParamId,
    ec_w: ParamId,
    ec_b: ParamId,
}

/// Eval passes read the weights; train passes also draw dropout and
/// teacher-forcing noise and receive gradients.
enum Sink<'a> {
    Eval(&'a ParamStore),
    Train(&'a mut ParamStore, &'a mut ChaCha8Rng),
}

impl Sink<'_> {
    fn split(&mut self) -> (&ParamStore, Option<&mut ChaCha8Rng>) {
        match self {
            Sink::Eval(p) => (p, None),
            Sink::Train(p, r) => (p, Some(r)),
        }
    }

    fn backward(&mut self, g: &Graph, terms: &[(Var, f64)]) {
        if terms.is_empty() {
            return;
        }
        if let Sink::Train(params, _) = self {
            g.backward_weighted(terms, params);
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualHeadClassifier {
    body: TransformerBody,
    heads: Heads,
    params: ParamStore,
}

impl DualHeadClassifier {
    /// Encoder weights from `config.seed`, head weights from the next seed.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let body = TransformerBody::register(config, false, "encoder", &mut params, &mut rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        let h = config.hidden_dim;
        let heads = Heads {
            val_w: params.add_normal("head.valence.weight", h, 3, HEAD_STD, &mut rng),
            val_b: params.add_constant("head.valence.bias", 1, 3, 0.0),
            ec_w: params.add_normal("head.ec.weight", h, 2, HEAD_STD, &mut rng),
            ec_b: params.add_constant("head.ec.bias", 1, 2, 0.0),
        };
        Ok(Self { body, heads, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.body.config()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Weight and bias of one head.
    pub fn head_params(&self, task: Task) -> [ParamId; 2] {
        match task {
            Task::Valence => [self.heads.val_w, self.heads.val_b],
            Task::Ec => [self.heads.ec_w, self.heads.ec_b],
        }
    }

    /// Every parameter outside the two heads.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        let heads = [self.heads.val_w, self.heads.val_b, self.heads.ec_w, self.heads.ec_b];
        self.params.ids().filter(|id| !heads.contains(id)).collect()
    }

    pub fn forward_single(&self, batch: &[DiscriminativeExample], task: Task) -> Result<TaskOutput> {
        self.run_single(Sink::Eval(&self.params), batch, task)
    }

    /// Training-mode pass; gradients of the batch loss are added to the store.
    pub fn train_single(
        &mut self,
        batch: &[DiscriminativeExample],
        task: Task,
        rng: &mut ChaCha8Rng,
    ) -> Result<TaskOutput> {
        let mut params = std::mem::take(&mut self.params);
        let out = self.run_single(Sink::Train(&mut params, rng), batch, task);
        self.params = params;
        out
    }

    pub fn forward_joint(&self, batch: &[DiscriminativeExample], lambda: f64) -> Result<JointOutput> {
        self.run_joint(Sink::Eval(&self.params), batch, lambda)
    }

    pub fn train_joint(
        &mut self,
        batch: &[DiscriminativeExample],
        lambda: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<JointOutput> {
        let mut params = std::mem::take(&mut self.params);
        let out = self.run_joint(Sink::Train(&mut params, rng), batch, lambda);
        self.params = params;
        out
    }

    /// Inference-mode two-step pass: contexts are step-1 arg-max labels, or
    /// gold labels when `oracle` is set.
    pub fn forward_two_step(
        &self,
        units: &[&FunctionalUnit],
        vocab: &Vocabulary,
        order: TaskOrder,
        lambda: f64,
        oracle: bool,
    ) -> Result<TwoStepOutput> {
        let tf = if oracle { 1.0 } else { 0.0 };
        self.run_two_step(Sink::Eval(&self.params), units, vocab, order, lambda, tf)
    }

    /// Training-mode two-step pass; each unit's context is the gold label
    /// with probability `tf_prob`.
    pub fn train_two_step(
        &mut self,
        units: &[&FunctionalUnit],
        vocab: &Vocabulary,
        order: TaskOrder,
        lambda: f64,
        tf_prob: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<TwoStepOutput> {
        let mut params = std::mem::take(&mut self.params);
        let out = self.run_two_step(Sink::Train(&mut params, rng), units, vocab, order, lambda, tf_prob);
        self.params = params;
        out
    }

    /// Arg-max valence code and per-candidate carrier codes.
    pub fn predict_unit(
        &self,
        fu: &FunctionalUnit,
        vocab: &Vocabulary,
        setting: DiscSetting,
    ) -> Result<(usize, Vec<usize>)> {
        match setting {
            DiscSetting::Single | DiscSetting::Joint => {
                let ex = encode_discriminative(fu, vocab, None)?;
                let mut g = Graph::new();
                let hidden = self.body.forward(&mut g, &self.params, &ex.input_ids, None, None)?;
                let val = self.valence_logits(&mut g, &self.params, hidden);
                let valence = argmax(g.value(val).row(0));
                let carriers = if ex.span_slices.is_empty() {
                    Vec::new()
                } else {
                    let ec = self.ec_logits(&mut g, &self.params, hidden, &ex.span_slices);
                    let m = g.value(ec);
                    (0..m.rows()).map(|r| argmax(m.row(r))).collect()
                };
                Ok((valence, carriers))
            }
            DiscSetting::TwoStep { order, oracle } => {
                let out = self.forward_two_step(&[fu], vocab, order, 0.5, oracle)?;
                let (val, ec) = match order {
                    TaskOrder::ValFirst => (&out.first, &out.second),
                    TaskOrder::EcFirst => (&out.second, &out.first),
                };
                Ok((val.predictions()[0], ec.predictions()))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &Checkpoint::new(CHECKPOINT_KIND, self.config(), &self.params)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let config: EncoderConfig = ckpt.expect_kind(CHECKPOINT_KIND)?.config()?;
        let mut model = Self::init(&config)?;
        model.params.load_values_from(&ckpt.params)?;
        Ok(model)
    }

    /// `1 × 3` valence logits from the `[CLS]` row.
    fn valence_logits(&self, g: &mut Graph, store: &ParamStore, hidden: Var) -> Var {
        let cls = g.gather_rows(hidden, &[0]);
        let w = g.param(store, self.heads.val_w);
        let b = g.param(store, self.heads.val_b);
        g.affine(cls, w, b)
    }

    /// `k × 2` EC logits, one row per span slice.
    fn ec_logits(&self, g: &mut Graph, store: &ParamStore, hidden: Var, spans: &[(usize, usize)]) -> Var {
        let pooled: Vec<Var> = spans
            .iter()
            .map(|&(s, e)| {
                let rows: Vec<usize> = std::iter::once(0).chain(s..e).collect();
                let states = g.gather_rows(hidden, &rows);
                g.max_rows(states)
            })
            .collect();
        let pooled = g.concat_rows(&pooled);
        let w = g.param(store, self.heads.ec_w);
        let b = g.param(store, self.heads.ec_b);
        g.affine(pooled, w, b)
    }

    /// Logits, targets and the weighted cross-entropy of `task` for one unit,
    /// or `None` for EC on a unit without candidates.
    fn head_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        hidden: Var,
        ex: &DiscriminativeExample,
        task: Task,
        row_weight: f64,
    ) -> Option<(Var, Var)> {
        let (logits, targets) = match task {
            Task::Valence => (self.valence_logits(g, store, hidden), vec![ex.valence_target]),
            Task::Ec if ex.span_slices.is_empty() => return None,
            Task::Ec => (self.ec_logits(g, store, hidden, &ex.span_slices), ex.ec_targets.clone()),
        };
        let loss = g.cross_entropy(logits, &targets, &vec![row_weight; targets.len()]);
        Some((logits, loss))
    }

    fn run_single(&self, mut sink: Sink<'_>, batch: &[DiscriminativeExample], task: Task) -> Result<TaskOutput> {
        let w = row_weight(batch.iter().map(|e| e.span_slices.len()), batch.len(), task)?;
        let Some(w) = w else {
            return Err(Error::InvalidArgument("EC task on a batch with no candidates".into()));
        };
        let mut out = TaskOutput::default();
        for ex in batch {
            let mut g = Graph::new();
            let (store, rng) = sink.split();
            let hidden = self.body.forward(&mut g, store, &ex.input_ids, None, rng)?;
            if let Some((logits, loss)) = self.head_loss(&mut g, store, hidden, ex, task, w) {
                collect(&mut out, &g, logits, loss);
                sink.backward(&g, &[(loss, 1.0)]);
            }
        }
        Ok(out)
    }

    fn run_joint(&self, mut sink: Sink<'_>, batch: &[DiscriminativeExample], lambda: f64) -> Result<JointOutput> {
        check_unit_interval("lambda", lambda)?;
        let counts = || batch.iter().map(|e| e.span_slices.len());
        let w_val = row_weight(counts(), batch.len(), Task::Valence)?.unwrap_or(0.0);
        let w_ec = row_weight(counts(), batch.len(), Task::Ec)?.unwrap_or(0.0);
        let mut valence = TaskOutput::default();
        let mut ec = TaskOutput::default();
        for ex in batch {
            let mut g = Graph::new();
            let (store, rng) = sink.split();
            let hidden = self.body.forward(&mut g, store, &ex.input_ids, None, rng)?;
            let mut terms = Vec::with_capacity(2);
            if let Some((logits, loss)) = self.head_loss(&mut g, store, hidden, ex, Task::Valence, w_val) {
                collect(&mut valence, &g, logits, loss);
                terms.push((loss, lambda));
            }
            if let Some((logits, loss)) = self.head_loss(&mut g, store, hidden, ex, Task::Ec, w_ec) {
                collect(&mut ec, &g, logits, loss);
                terms.push((loss, 1.0 - lambda));
            }
            sink.backward(&g, &terms);
        }
        let loss_total = interpolated_loss(lambda, valence.loss, ec.loss)?;
        Ok(JointOutput { valence, ec, loss_total })
    }

    fn run_two_step(
        &self,
        mut sink: Sink<'_>,
        units: &[&FunctionalUnit],
        vocab: &Vocabulary,
        order: TaskOrder,
        lambda: f64,
        tf_prob: f64,
    ) -> Result<TwoStepOutput> {
        check_unit_interval("lambda", lambda)?;
        check_unit_interval("tf_prob", tf_prob)?;
        let counts = || units.iter().map(|u| u.candidates.len());
        let weight = |task| -> Result<f64> { Ok(row_weight(counts(), units.len(), task)?.unwrap_or(0.0)) };
        let (first_task, second_task) = (order.first(), order.second());
        let (w_first, w_second) = (weight(first_task)?, weight(second_task)?);
        let mut first = TaskOutput::default();
        let mut second = TaskOutput::default();
        let mut contexts = Vec::with_capacity(units.len());

        for fu in units {
            let mut g = Graph::new();
            let mut terms = Vec::with_capacity(2);

            let plain = encode_discriminative(fu, vocab, None)?;
            let (store, rng) = sink.split();
            let hidden = self.body.forward(&mut g, store, &plain.input_ids, None, rng)?;
            let mut predicted = Vec::new();
            if let Some((logits, loss)) = self.head_loss(&mut g, store, hidden, &plain, first_task, w_first) {
                let m = g.value(logits);
                predicted = (0..m.rows()).map(|r| argmax(m.row(r))).collect();
                collect(&mut first, &g, logits, loss);
                terms.push((loss, task_weight(first_task, lambda)));
            }

            let forced = match sink.split().1 {
                Some(rng) => teacher_force(rng, tf_prob),
                None => tf_prob >= 1.0,
            };
            let ctx = step_one_context(fu, first_task, forced, &predicted);

            let ex = encode_discriminative(fu, vocab, Some(&ctx))?;
            if second_task == Task::Valence || !ex.span_slices.is_empty() {
                let (store, rng) = sink.split();
                let hidden = self.body.forward(&mut g, store, &ex.input_ids, None, rng)?;
                if let Some((logits, loss)) = self.head_loss(&mut g, store, hidden, &ex, second_task, w_second) {
                    collect(&mut second, &g, logits, loss);
                    terms.push((loss, task_weight(second_task, lambda)));
                }
            }
            contexts.push(ctx);
            sink.backward(&g, &terms);
        }
        let (lv, le) = match order {
            TaskOrder::ValFirst => (first.loss, second.loss),
            TaskOrder::EcFirst => (second.loss, first.loss),
        };
        let loss_total = interpolated_loss(lambda, lv, le)?;
        Ok(TwoStepOutput { first, second, contexts, loss_total })
    }
}

/// Per-row cross-entropy weight giving a batch mean; `None` when the task has
/// no rows in this batch.
fn row_weight(candidates: impl Iterator<Item = usize>, units: usize, task: Task) -> Result<Option<f64>> {
    if units == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let rows = match task {
        Task::Valence => units,
        Task::Ec => candidates.sum(),
    };
    Ok((rows > 0).then(|| 1.0 / rows as f64))
}

fn step_one_context(fu: &FunctionalUnit, first: Task, forced: bool, predicted: &[usize]) -> TwoStepContext {
    let source = if forced { ContextSource::GroundTruth } else { ContextSource::Predicted };
    match first {
        Task::Valence => {
            let code = if forced { fu.valence.code() } else { predicted[0] };
            TwoStepContext::valence(code, source)
        }
        Task::Ec => {
            let spans = fu
                .candidates
                .iter()
                .enumerate()
                .filter(|&(i, c)| if forced { c.carrier.is_yes() } else { predicted[i] == 1 })
                .map(|(_, c)| fu.span_text(c))
                .collect();
            TwoStepContext::ec(spans, source)
        }
    }
}

fn collect(out: &mut TaskOutput, g: &Graph, logits: Var, loss: Var) {
    let probs = g.value(logits).softmax_rows();
    for r in 0..probs.rows() {
        out.probs.push(probs.row(r).to_vec());
    }
    out.loss += g.value(loss).item();
}

#[cfg(test)]
mod tests;
