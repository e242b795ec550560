//! Task encodings: label codecs, encoder inputs (with optional two-step
//! context) and the three decoder prompt layouts.

mod prompt;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::corpus::{FunctionalUnit, ValenceLabel};
use crate::{Error, Result};

pub use prompt::{
    render_prompt_ec, render_prompt_two_step, render_prompt_valence, LossScope, PromptSequence,
    Segment, SegmentKind, SlotKind, TargetSlot, TaskOrder,
};
pub use vocab::*;

/// The two classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Valence,
    Ec,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Self::Valence => 3,
            Self::Ec => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Valence => "valence",
            Self::Ec => "ec",
        }
    }
}

pub fn encode_valence_label(name: &str) -> Result<usize> {
    Ok(name.parse::<ValenceLabel>()?.code())
}

pub fn decode_valence_label(code: usize) -> Result<&'static str> {
    Ok(ValenceLabel::from_code(code)?.name())
}

/// Where a two-step context label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextSource {
    Predicted,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContextPayload {
    /// First-step valence code.
    Valence(usize),
    /// Surface texts of the spans labelled as carriers in the first step.
    Ec(Vec<String>),
}

/// First-step output injected as plain text into the second-step input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoStepContext {
    pub payload: ContextPayload,
    pub source: ContextSource,
}

impl TwoStepContext {
    pub fn valence(code: usize, source: ContextSource) -> Self {
        Self {
            payload: ContextPayload::Valence(code),
            source,
        }
    }

    pub fn ec(spans: Vec<String>, source: ContextSource) -> Self {
        Self {
            payload: ContextPayload::Ec(spans),
            source,
        }
    }

    /// Tokens appended after the unit: `valence: <code>`, `EC: <spans…>`,
    /// or `EC: none` when no span was labelled.
    pub fn tokens(&self) -> Vec<String> {
        match &self.payload {
            ContextPayload::Valence(code) => {
                vec![VALENCE_MARKER.to_string(), code.to_string()]
            }
            ContextPayload::Ec(spans) => {
                let mut out = vec![EC_MARKER.to_string()];
                if spans.is_empty() {
                    out.push(EMPTY_EC.to_string());
                } else {
                    out.extend(spans.iter().flat_map(|s| s.split_whitespace().map(str::to_string)));
                }
                out
            }
        }
    }
}

/// Encoder input for one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscriminativeExample {
    pub input_ids: Vec<usize>,
    /// Position ranges `[start, end)` in `input_ids`, one per candidate.
    pub span_slices: Vec<(usize, usize)>,
    pub valence_target: usize,
    pub ec_targets: Vec<usize>,
}

/// `[CLS] FU [context] [SEP]`; span slices are shifted by one for `[CLS]`.
pub fn encode_discriminative(
    fu: &FunctionalUnit,
    vocab: &Vocabulary,
    context: Option<&TwoStepContext>,
) -> Result<DiscriminativeExample> {
    if fu.tokens.is_empty() {
        return Err(Error::Encoding(format!("unit {} has no tokens", fu.unit_id)));
    }
    let mut input_ids = Vec::with_capacity(fu.tokens.len() + 8);
    input_ids.push(vocab.cls());
    input_ids.extend(vocab.encode(&fu.tokens));
    if let Some(ctx) = context {
        input_ids.extend(vocab.encode(&ctx.tokens()));
    }
    input_ids.push(vocab.sep());
    Ok(DiscriminativeExample {
        input_ids,
        span_slices: fu.candidates.iter().map(|c| (c.start + 1, c.end + 1)).collect(),
        valence_target: fu.valence.code(),
        ec_targets: fu.candidates.iter().map(|c| c.carrier.code()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::unit;
    use proptest::prelude::*;

    fn vocab_for(u: &FunctionalUnit) -> Vocabulary {
        Vocabulary::build([u])
    }

    #[test]
    fn valence_codec() {
        assert_eq!(encode_valence_label("negative").unwrap(), 0);
        assert_eq!(encode_valence_label("positive").unwrap(), 1);
        assert_eq!(encode_valence_label("neutral").unwrap(), 2);
        for name in ["negative", "positive", "neutral"] {
            assert_eq!(decode_valence_label(encode_valence_label(name).unwrap()).unwrap(), name);
        }
        assert!(decode_valence_label(3).is_err());
        assert!(encode_valence_label("happy").is_err());
    }

    #[test]
    fn plain_unit_is_wrapped_in_cls_sep() {
        let u = unit("u", "w1 w2", ValenceLabel::Positive, &[(1, 2, true)]);
        let v = vocab_for(&u);
        let ex = encode_discriminative(&u, &v, None).unwrap();
        assert_eq!(ex.input_ids, vec![v.cls(), v.id("w1"), v.id("w2"), v.sep()]);
        assert_eq!(ex.span_slices, vec![(2, 3)]);
        assert_eq!(ex.valence_target, 1);
        assert_eq!(ex.ec_targets, vec![1]);
    }

    #[test]
    fn valence_context_is_appended_before_sep() {
        let u = unit("u", "w1 w2", ValenceLabel::Positive, &[]);
        let v = vocab_for(&u);
        let ctx = TwoStepContext::valence(1, ContextSource::Predicted);
        let ex = encode_discriminative(&u, &v, Some(&ctx)).unwrap();
        let n = ex.input_ids.len();
        assert_eq!(v.decode(&ex.input_ids[n - 3..]), vec!["valence:", "1", "[SEP]"]);
    }

    #[test]
    fn empty_ec_context_renders_none() {
        let u = unit("u", "a b", ValenceLabel::Neutral, &[(0, 1, false)]);
        let v = vocab_for(&u);
        let ctx = TwoStepContext::ec(vec![], ContextSource::GroundTruth);
        let ex = encode_discriminative(&u, &v, Some(&ctx)).unwrap();
        let text = v.decode(&ex.input_ids).join(" ");
        assert_eq!(text, "[CLS] a b EC: none [SEP]");
    }

    #[test]
    fn empty_unit_is_rejected() {
        let mut u = unit("u", "a", ValenceLabel::Neutral, &[]);
        u.tokens.clear();
        let v = Vocabulary::build([]);
        assert!(encode_discriminative(&u, &v, None).is_err());
    }

    proptest! {
        #[test]
        fn context_never_moves_spans(
            n_tokens in 2usize..12,
            cut in 1usize..11,
            code in 0usize..3,
        ) {
            let cut = cut.min(n_tokens - 1);
            let text: Vec<String> = (0..n_tokens).map(|i| format!("t{i}")).collect();
            let u = unit("u", &text.join(" "), ValenceLabel::Negative, &[(0, cut, true), (cut, n_tokens, false)]);
            let v = vocab_for(&u);
            let plain = encode_discriminative(&u, &v, None).unwrap();
            for ctx in [
                TwoStepContext::valence(code, ContextSource::Predicted),
                TwoStepContext::ec(vec![u.span_text(&u.candidates[0])], ContextSource::Predicted),
            ] {
                let with = encode_discriminative(&u, &v, Some(&ctx)).unwrap();
                prop_assert_eq!(&with.span_slices, &plain.span_slices);
                for &(s, e) in &with.span_slices {
                    prop_assert_eq!(v.decode(&with.input_ids[s..e]), v.decode(&plain.input_ids[s..e]));
                    prop_assert!(e <= 1 + u.tokens.len());
                }
            }
        }
    }
}
