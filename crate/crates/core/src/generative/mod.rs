//! Prompt-driven causal LM: masked next-token loss, slot-constrained greedy
//! decoding, and the prompt sets each training objective iterates over.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::backbone::Decoder;
use crate::corpus::FunctionalUnit;
use crate::encodings::{
    render_prompt_ec, render_prompt_two_step, render_prompt_valence, LossScope, PromptSequence,
    SlotKind, Task, TaskOrder, Vocabulary,
};
use crate::{argmax, Error, Result};

/// One decoding step: the forced separator, then a choice among `allowed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledSlot {
    pub forced: usize,
    pub allowed: Vec<usize>,
    pub kind: SlotKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationConstraint {
    pub schedule: Vec<ScheduledSlot>,
}

impl GenerationConstraint {
    pub fn from_prompt(prompt: &PromptSequence) -> Self {
        Self::from_slots(prompt, 0)
    }

    /// Schedule of the slots from index `skip` on.
    fn from_slots(prompt: &PromptSequence, skip: usize) -> Self {
        Self {
            schedule: prompt.target_slots[skip..]
                .iter()
                .map(|s| ScheduledSlot {
                    forced: prompt.input_ids[s.position - 1],
                    allowed: s.allowed.clone(),
                    kind: s.kind,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }
}

/// Which prompt layout a training sequence uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    Valence,
    Ec,
    TwoStep(TaskOrder),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedPrompt {
    pub kind: PromptKind,
    pub prompt: PromptSequence,
}

/// Sequences trained together in one optimizer step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedBatch {
    pub items: Vec<TaggedPrompt>,
}

impl MixedBatch {
    /// Right-padded ids and the matching attention mask.
    pub fn padded(&self, pad: usize) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
        let width = self.items.iter().map(|t| t.prompt.len()).max().unwrap_or(0);
        self.items
            .iter()
            .map(|t| {
                let ids = &t.prompt.input_ids;
                let mut row = ids.clone();
                row.resize(width, pad);
                let mask = (0..width).map(|i| i < ids.len()).collect();
                (row, mask)
            })
            .unzip()
    }
}

/// What the decoder is trained to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenObjective {
    Single(Task),
    /// Valence and EC prompts mixed in the same batches.
    Joint,
    TwoStep(TaskOrder),
}

/// Inference path for [`predict_unit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenSetting {
    /// Valence from its own prompt, EC from its own prompt (single and joint models).
    Separate,
    TwoStep { order: TaskOrder, oracle: bool },
}

/// Training sequences for `objective`. Units without candidates only ever
/// yield valence prompts.
pub fn training_prompts(
    units: &[FunctionalUnit],
    vocab: &Vocabulary,
    objective: GenObjective,
    scope: LossScope,
) -> Result<Vec<TaggedPrompt>> {
    let mut out = Vec::new();
    for fu in units {
        let has_cands = !fu.candidates.is_empty();
        let valence = || -> Result<TaggedPrompt> {
            Ok(TaggedPrompt { kind: PromptKind::Valence, prompt: render_prompt_valence(fu, vocab, scope)? })
        };
        let ec = || -> Result<TaggedPrompt> {
            Ok(TaggedPrompt { kind: PromptKind::Ec, prompt: render_prompt_ec(fu, vocab, scope)? })
        };
        match objective {
            GenObjective::Single(Task::Valence) => out.push(valence()?),
            GenObjective::Single(Task::Ec) if has_cands => out.push(ec()?),
            GenObjective::Single(Task::Ec) => {}
            GenObjective::Joint => {
                out.push(valence()?);
                if has_cands {
                    out.push(ec()?);
                }
            }
            GenObjective::TwoStep(order) if has_cands => out.push(TaggedPrompt {
                kind: PromptKind::TwoStep(order),
                prompt: render_prompt_two_step(fu, vocab, order, scope)?,
            }),
            GenObjective::TwoStep(_) => out.push(valence()?),
        }
    }
    Ok(out)
}

/// Resamples EC prompts (with replacement) so they make up `ec_fraction` of
/// a joint epoch. The natural ratio is kept when `ec_fraction` is `None`.
pub fn mix_prompts(
    prompts: Vec<TaggedPrompt>,
    ec_fraction: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TaggedPrompt>> {
    let Some(f) = ec_fraction else { return Ok(prompts) };
    if !(0.0..1.0).contains(&f) {
        return Err(Error::InvalidArgument(format!("ec_fraction {f} outside [0, 1)")));
    }
    let (ec, mut rest): (Vec<_>, Vec<_>) = prompts.into_iter().partition(|p| p.kind == PromptKind::Ec);
    if ec.is_empty() {
        return Ok(rest);
    }
    let want = (f * rest.len() as f64 / (1.0 - f)).round() as usize;
    rest.extend((0..want).map(|_| ec[rng.gen_range(0..ec.len())].clone()));
    rest.shuffle(rng);
    Ok(rest)
}

/// Positions predicted by the loss: `(source row, target token)` pairs.
fn loss_positions(p: &PromptSequence) -> impl Iterator<Item = (usize, usize)> + '_ {
    (1..p.len()).filter(|&t| p.loss_mask[t]).map(|t| (t - 1, p.input_ids[t]))
}

/// Mean next-token cross-entropy over every masked position in the batch.
pub fn lm_loss(decoder: &Decoder, batch: &[&PromptSequence]) -> Result<f64> {
    let weight = position_weight(batch)?;
    let mut total = 0.0;
    for p in batch {
        let mut g = Graph::new();
        if let Some(loss) = sequence_loss(&mut g, decoder, p, weight, None)? {
            total += g.value(loss).item();
        }
    }
    Ok(total)
}

/// Training-mode [`lm_loss`]; gradients are added to the decoder's store.
pub fn train_lm(decoder: &mut Decoder, batch: &[&PromptSequence], rng: &mut ChaCha8Rng) -> Result<f64> {
    let weight = position_weight(batch)?;
    let mut total = 0.0;
    for p in batch {
        let mut g = Graph::new();
        if let Some(loss) = sequence_loss(&mut g, decoder, p, weight, Some(&mut *rng))? {
            total += g.value(loss).item();
            g.backward(loss, decoder.params_mut());
        }
    }
    Ok(total)
}

fn position_weight(batch: &[&PromptSequence]) -> Result<f64> {
    let n: usize = batch.iter().map(|p| loss_positions(p).count()).sum();
    if n == 0 {
        return Err(Error::InvalidArgument("loss mask selects no positions".into()));
    }
    Ok(1.0 / n as f64)
}

fn sequence_loss(
    g: &mut Graph,
    decoder: &Decoder,
    p: &PromptSequence,
    weight: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Option<Var>> {
    let (rows, targets): (Vec<usize>, Vec<usize>) = loss_positions(p).unzip();
    if rows.is_empty() {
        return Ok(None);
    }
    let params = decoder.params();
    let hidden = decoder.body().forward(g, params, &p.input_ids, None, rng)?;
    let picked = g.gather_rows(hidden, &rows);
    let emb = g.param(params, decoder.body().token_embedding());
    let logits = g.matmul_bt(picked, emb);
    Ok(Some(g.cross_entropy(logits, &targets, &vec![weight; targets.len()])))
}

/// Logits of `candidates` as the token after `seq`.
fn next_token_scores(decoder: &Decoder, seq: &[usize], candidates: &[usize]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let params = decoder.params();
    let hidden = decoder.body().forward(&mut g, params, seq, None, None)?;
    let last = g.gather_rows(hidden, &[seq.len() - 1]);
    let emb = g.param(params, decoder.body().token_embedding());
    let rows = g.gather_rows(emb, candidates);
    let scores = g.matmul_bt(last, rows);
    Ok(g.value(scores).data().to_vec())
}

/// Greedy slot filling: each slot appends its forced separator, then the
/// allowed label with the highest logit. Returns class codes.
pub fn constrained_decode(
    decoder: &Decoder,
    prefix: &[usize],
    constraint: &GenerationConstraint,
) -> Result<Vec<usize>> {
    let total = prefix.len() + 2 * constraint.len();
    let max = decoder.config().max_seq_len;
    if total > max {
        return Err(Error::SequenceTooLong { len: total, max });
    }
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("empty decoding prefix".into()));
    }
    let mut seq = prefix.to_vec();
    let mut codes = Vec::with_capacity(constraint.len());
    for slot in &constraint.schedule {
        if slot.allowed.is_empty() {
            return Err(Error::InvalidArgument("slot with an empty label set".into()));
        }
        seq.push(slot.forced);
        let code = argmax(&next_token_scores(decoder, &seq, &slot.allowed)?);
        seq.push(slot.allowed[code]);
        codes.push(code);
    }
    Ok(codes)
}

/// Decodes only the second-task slots of a two-step prompt, with the gold
/// first-task labels already in place as context.
pub fn oracle_decode(decoder: &Decoder, prompt: &PromptSequence, order: TaskOrder) -> Result<Vec<usize>> {
    let first = order.first();
    let skip = prompt
        .target_slots
        .iter()
        .take_while(|s| slot_task(s.kind) == first)
        .count();
    if skip == prompt.target_slots.len() {
        return Ok(Vec::new());
    }
    let prefix = &prompt.input_ids[..prompt.target_slots[skip].position - 1];
    constrained_decode(decoder, prefix, &GenerationConstraint::from_slots(prompt, skip))
}

fn slot_task(kind: SlotKind) -> Task {
    match kind {
        SlotKind::Valence => Task::Valence,
        SlotKind::Ec(_) => Task::Ec,
    }
}

/// Arg-max valence code and per-candidate carrier codes.
pub fn predict_unit(
    decoder: &Decoder,
    fu: &FunctionalUnit,
    vocab: &Vocabulary,
    setting: GenSetting,
) -> Result<(usize, Vec<usize>)> {
    let scope = LossScope::Full;
    let decode = |p: &PromptSequence| {
        constrained_decode(decoder, &p.input_ids[..p.prefix_len()], &GenerationConstraint::from_prompt(p))
    };
    let valence_only = || -> Result<usize> { Ok(decode(&render_prompt_valence(fu, vocab, scope)?)?[0]) };
    if fu.candidates.is_empty() {
        return Ok((valence_only()?, Vec::new()));
    }
    match setting {
        GenSetting::Separate => {
            let valence = valence_only()?;
            let carriers = decode(&render_prompt_ec(fu, vocab, scope)?)?;
            Ok((valence, carriers))
        }
        GenSetting::TwoStep { order, oracle } => {
            let prompt = render_prompt_two_step(fu, vocab, order, scope)?;
            let codes = if oracle {
                let mut first = GenerationConstraint::from_prompt(&prompt);
                first.schedule.retain(|s| slot_task(s.kind) == order.first());
                let mut codes = constrained_decode(decoder, &prompt.input_ids[..prompt.prefix_len()], &first)?;
                codes.extend(oracle_decode(decoder, &prompt, order)?);
                codes
            } else {
                decode(&prompt)?
            };
            let mut valence = 0;
            let mut carriers = Vec::with_capacity(fu.candidates.len());
            for (slot, code) in prompt.target_slots.iter().zip(codes) {
                match slot.kind {
                    SlotKind::Valence => valence = code,
                    SlotKind::Ec(_) => carriers.push(code),
                }
            }
            Ok((valence, carriers))
        }
    }
}

#[cfg(test)]
mod tests;
