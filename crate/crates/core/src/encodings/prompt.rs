use serde::{Deserialize, Serialize};

use super::{Task, Vocabulary};
use crate::corpus::FunctionalUnit;
use crate::{Error, Result};

/// Which positions contribute to the language-modelling loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossScope {
    /// Every predictable position (all but the first token).
    #[default]
    Full,
    /// Only the label tokens at target slots.
    TargetsOnly,
}

/// Order of the two target blocks in the two-step prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskOrder {
    /// Valence first, then EC.
    ValFirst,
    /// EC first, then valence.
    EcFirst,
}

impl TaskOrder {
    pub fn first(self) -> Task {
        match self {
            Self::ValFirst => Task::Valence,
            Self::EcFirst => Task::Ec,
        }
    }

    pub fn second(self) -> Task {
        match self {
            Self::ValFirst => Task::Ec,
            Self::EcFirst => Task::Valence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Valence,
    /// Label of the candidate with this index.
    Ec(usize),
}

/// A label position. The token right before it is the forced separator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSlot {
    pub position: usize,
    pub kind: SlotKind,
    /// Allowed label token ids, ordered by class code.
    pub allowed: Vec<usize>,
    /// Gold class code.
    pub gold: usize,
}

impl TargetSlot {
    pub fn gold_token(&self) -> usize {
        self.allowed[self.gold]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Unit,
    Candidates,
    ValenceTarget,
    EcTargets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSequence {
    pub input_ids: Vec<usize>,
    pub loss_mask: Vec<bool>,
    pub target_slots: Vec<TargetSlot>,
    pub segments: Vec<Segment>,
}

impl PromptSequence {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }

    pub fn segment_ids(&self, kind: SegmentKind) -> Option<&[usize]> {
        self.segment(kind).map(|s| &self.input_ids[s.start..s.end])
    }

    /// Length of the context before the first forced separator.
    pub fn prefix_len(&self) -> usize {
        self.target_slots
            .first()
            .map_or(self.input_ids.len(), |s| s.position - 1)
    }
}

struct Builder<'a> {
    vocab: &'a Vocabulary,
    ids: Vec<usize>,
    slots: Vec<TargetSlot>,
    segments: Vec<Segment>,
}

impl<'a> Builder<'a> {
    fn new(vocab: &'a Vocabulary) -> Self {
        Self {
            vocab,
            ids: Vec::new(),
            slots: Vec::new(),
            segments: Vec::new(),
        }
    }

    fn segment(&mut self, kind: SegmentKind, f: impl FnOnce(&mut Self)) {
        let start = self.ids.len();
        f(self);
        self.segments.push(Segment {
            kind,
            start,
            end: self.ids.len(),
        });
    }

    fn unit(&mut self, fu: &FunctionalUnit) {
        self.segment(SegmentKind::Unit, |b| b.ids.extend(b.vocab.encode(&fu.tokens)));
    }

    fn candidates(&mut self, fu: &FunctionalUnit) {
        self.segment(SegmentKind::Candidates, |b| {
            for c in &fu.candidates {
                b.ids.push(b.vocab.cand_sep());
                b.ids.extend(b.vocab.encode(fu.span_tokens(c)));
            }
        });
    }

    fn slot(&mut self, sep: usize, kind: SlotKind, allowed: Vec<usize>, gold: usize) {
        self.ids.push(sep);
        self.ids.push(allowed[gold]);
        self.slots.push(TargetSlot {
            position: self.ids.len() - 1,
            kind,
            allowed,
            gold,
        });
    }

    fn valence_block(&mut self, fu: &FunctionalUnit) {
        self.segment(SegmentKind::ValenceTarget, |b| {
            let sep = b.vocab.val_sep();
            let allowed = b.vocab.valence_label_ids();
            b.slot(sep, SlotKind::Valence, allowed, fu.valence.code());
        });
    }

    fn ec_block(&mut self, fu: &FunctionalUnit) {
        self.segment(SegmentKind::EcTargets, |b| {
            for (i, c) in fu.candidates.iter().enumerate() {
                let sep = b.vocab.ecpred_sep();
                let allowed = b.vocab.carrier_label_ids();
                b.slot(sep, SlotKind::Ec(i), allowed, c.carrier.code());
            }
        });
    }

    fn finish(self, scope: LossScope) -> PromptSequence {
        let n = self.ids.len();
        let loss_mask = match scope {
            LossScope::Full => (0..n).map(|i| i > 0).collect(),
            LossScope::TargetsOnly => {
                let mut m = vec![false; n];
                for s in &self.slots {
                    m[s.position] = true;
                }
                m
            }
        };
        PromptSequence {
            input_ids: self.ids,
            loss_mask,
            target_slots: self.slots,
            segments: self.segments,
        }
    }
}

fn require_candidates(fu: &FunctionalUnit) -> Result<()> {
    if fu.candidates.is_empty() {
        return Err(Error::Render(format!(
            "unit {} has no EC candidates",
            fu.unit_id
        )));
    }
    Ok(())
}

/// `FU <val> label`
pub fn render_prompt_valence(
    fu: &FunctionalUnit,
    vocab: &Vocabulary,
    scope: LossScope,
) -> Result<PromptSequence> {
    if fu.tokens.is_empty() {
        return Err(Error::Render(format!("unit {} has no tokens", fu.unit_id)));
    }
    let mut b = Builder::new(vocab);
    b.unit(fu);
    b.valence_block(fu);
    Ok(b.finish(scope))
}

/// `FU (<cand> span)+ (<EC_pred> label)+`
pub fn render_prompt_ec(
    fu: &FunctionalUnit,
    vocab: &Vocabulary,
    scope: LossScope,
) -> Result<PromptSequence> {
    require_candidates(fu)?;
    let mut b = Builder::new(vocab);
    b.unit(fu);
    b.candidates(fu);
    b.ec_block(fu);
    Ok(b.finish(scope))
}

/// `FU (<cand> span)+` followed by both target blocks in `order`.
pub fn render_prompt_two_step(
    fu: &FunctionalUnit,
    vocab: &Vocabulary,
    order: TaskOrder,
    scope: LossScope,
) -> Result<PromptSequence> {
    require_candidates(fu)?;
    let mut b = Builder::new(vocab);
    b.unit(fu);
    b.candidates(fu);
    match order {
        TaskOrder::ValFirst => {
            b.valence_block(fu);
            b.ec_block(fu);
        }
        TaskOrder::EcFirst => {
            b.ec_block(fu);
            b.valence_block(fu);
        }
    }
    Ok(b.finish(scope))
}
