//! Narratives, functional units and emotion-carrier candidates.
//!
//! A functional unit (FU) is the atomic annotation unit for both tasks: it
//! carries a three-way valence label and a list of candidate spans, each
//! marked as an emotion carrier (EC) or not. Neutral units never contain a
//! carrier.

mod chunk;
mod generate;
mod io;
mod split;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use chunk::{extract_candidates, CandidateExtractor, ChunkTag, TagRunChunker};
pub use generate::{generate_corpus, GeneratorSpec, Lexicons};
pub use io::{load_corpus, parse_corpus, render_corpus, save_corpus};
pub use split::{stratified_split, CorpusSplit, SplitRatios, STRATIFICATION_TOLERANCE};
pub use stats::{corpus_stats, ec_intersection_stats, span_surface, IntersectionReport, StatsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValenceLabel {
    Negative,
    Positive,
    Neutral,
}

impl ValenceLabel {
    pub const ALL: [ValenceLabel; 3] = [Self::Negative, Self::Positive, Self::Neutral];

    pub fn code(self) -> usize {
        match self {
            Self::Negative => 0,
            Self::Positive => 1,
            Self::Neutral => 2,
        }
    }

    pub fn from_code(code: usize) -> Result<Self> {
        Self::ALL
            .get(code)
            .copied()
            .ok_or_else(|| Error::Label(code.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Positive => "positive",
            Self::Neutral => "neutral",
        }
    }

    pub fn is_polar(self) -> bool {
        self != Self::Neutral
    }
}

impl fmt::Display for ValenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ValenceLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Label(s.to_string()))
    }
}

/// Binary emotion-carrier label. Codes: `no = 0`, `yes = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Carrier {
    No,
    Yes,
}

impl Carrier {
    pub const ALL: [Carrier; 2] = [Self::No, Self::Yes];

    pub fn code(self) -> usize {
        match self {
            Self::No => 0,
            Self::Yes => 1,
        }
    }

    pub fn from_code(code: usize) -> Result<Self> {
        Self::ALL
            .get(code)
            .copied()
            .ok_or_else(|| Error::Label(code.to_string()))
    }

    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Self::Yes
        } else {
            Self::No
        }
    }

    pub fn is_yes(self) -> bool {
        self == Self::Yes
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::No => "no",
            Self::Yes => "yes",
        }
    }
}

/// A contiguous token span `[start, end)` within a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EcCandidate {
    pub start: usize,
    pub end: usize,
    pub carrier: Carrier,
}

impl EcCandidate {
    pub fn new(start: usize, end: usize, carrier: Carrier) -> Self {
        Self {
            start,
            end,
            carrier,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalUnit {
    pub unit_id: String,
    pub narrative_id: String,
    pub tokens: Vec<String>,
    pub valence: ValenceLabel,
    pub candidates: Vec<EcCandidate>,
}

impl FunctionalUnit {
    pub fn span_tokens(&self, cand: &EcCandidate) -> &[String] {
        &self.tokens[cand.start..cand.end]
    }

    pub fn span_text(&self, cand: &EcCandidate) -> String {
        self.span_tokens(cand).join(" ")
    }

    pub fn carrier_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.carrier.is_yes()).count()
    }

    /// Checks the unit-level invariants.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::validation(&self.unit_id, "unit has no tokens"));
        }
        if self.valence == ValenceLabel::Neutral && self.carrier_count() > 0 {
            return Err(Error::validation(
                &self.unit_id,
                "neutral valence implies no emotion carrier, but a candidate has carrier=yes",
            ));
        }
        let mut prev_end = 0;
        for (i, c) in self.candidates.iter().enumerate() {
            if c.start >= c.end || c.end > self.tokens.len() {
                return Err(Error::validation(
                    &self.unit_id,
                    format!(
                        "candidate {i} span [{}, {}) out of bounds for {} tokens",
                        c.start,
                        c.end,
                        self.tokens.len()
                    ),
                ));
            }
            if i > 0 && c.start < prev_end {
                return Err(Error::validation(
                    &self.unit_id,
                    format!("candidate {i} overlaps or is out of order"),
                ));
            }
            prev_end = c.end;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Narrative {
    pub narrative_id: String,
    pub subject_id: String,
    pub units: Vec<FunctionalUnit>,
}

impl Narrative {
    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::validation(
                &self.narrative_id,
                "narrative has no units",
            ));
        }
        for u in &self.units {
            if u.narrative_id != self.narrative_id {
                return Err(Error::validation(
                    &u.unit_id,
                    format!(
                        "unit narrative_id `{}` differs from parent `{}`",
                        u.narrative_id, self.narrative_id
                    ),
                ));
            }
            u.validate()?;
        }
        Ok(())
    }
}

/// Validates every narrative and the corpus-wide uniqueness constraints.
pub fn validate_corpus(narratives: &[Narrative]) -> Result<()> {
    let mut narrative_ids = std::collections::HashSet::new();
    let mut unit_ids = std::collections::HashSet::new();
    for n in narratives {
        if !narrative_ids.insert(n.narrative_id.as_str()) {
            return Err(Error::validation(
                &n.narrative_id,
                "duplicate narrative_id in corpus",
            ));
        }
        n.validate()?;
        for u in &n.units {
            if !unit_ids.insert(u.unit_id.as_str()) {
                return Err(Error::validation(&u.unit_id, "duplicate unit_id in corpus"));
            }
        }
    }
    Ok(())
}

/// All units of a corpus in file order.
pub fn flatten_units(narratives: &[Narrative]) -> Vec<FunctionalUnit> {
    narratives.iter().flat_map(|n| n.units.iter().cloned()).collect()
}
