//! Parametric synthetic narratives with a controllable valence/EC dependency.
//!
//! Structural law of the generator: a neutral unit never holds a carrier and
//! every polar unit holds at least one, drawn from the lexicon matching its
//! polarity (or from the small shared lexicon). Non-carrier candidates come
//! from a neutral noun vocabulary or, with `distractor_rate`, from an EC
//! lexicon whose polarity does not match the unit, which is what makes the
//! carrier decision depend on the valence.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{Carrier, EcCandidate, FunctionalUnit, Narrative, ValenceLabel};
use crate::{Error, Result};

const SYLLABLES: [&str; 24] = [
    "ba", "ce", "di", "fo", "gu", "la", "me", "ni", "po", "ru", "sa", "te", "vi", "zo", "ka",
    "le", "mi", "no", "pa", "re", "si", "to", "va", "ze",
];
const MAX_CANDIDATES: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_narratives: usize,
    pub units_per_narrative: usize,
    /// When set, overrides `n_narratives * units_per_narrative`; units are
    /// spread as evenly as possible over the narratives.
    pub total_units: Option<usize>,
    pub n_subjects: usize,
    pub polar_fraction: f64,
    pub positive_fraction_of_all: f64,
    pub negative_fraction_of_all: f64,
    pub ec_rate_in_polar: f64,
    pub lexicon_overlap: f64,
    pub mean_candidates_per_unit: f64,
    pub filler_vocab_size: usize,
    pub positive_lexicon_size: usize,
    pub negative_lexicon_size: usize,
    pub neutral_candidate_vocab_size: usize,
    pub cue_vocab_size: usize,
    /// Probability that a polar unit contains an emotion-laden word of its
    /// polarity.
    pub cue_rate: f64,
    /// Probability that a neutral unit contains a random emotion-laden word.
    pub cue_noise: f64,
    /// Probability that a non-carrier candidate reuses an EC lexeme.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self::reference_targets()
    }
}

impl GeneratorSpec {
    /// Calibrated to the reference corpus statistics: 4273 units, 40% polar
    /// (13% positive, 27% negative), 44.7% carriers among polar-unit
    /// candidates, 4% of carrier forms shared across polarities.
    pub fn reference_targets() -> Self {
        Self {
            n_narratives: 481,
            units_per_narrative: 9,
            total_units: Some(4273),
            n_subjects: 45,
            polar_fraction: 0.40,
            positive_fraction_of_all: 0.13,
            negative_fraction_of_all: 0.27,
            ec_rate_in_polar: 0.447,
            lexicon_overlap: 0.04,
            mean_candidates_per_unit: 2.5,
            filler_vocab_size: 60,
            positive_lexicon_size: 46,
            negative_lexicon_size: 125,
            neutral_candidate_vocab_size: 80,
            cue_vocab_size: 12,
            cue_rate: 0.6,
            cue_noise: 0.1,
            distractor_rate: 0.3,
            seed: 0,
        }
    }

    /// No shared carrier forms and small lexicons, so the carrier lexicon
    /// fully determines polarity and the valence decides which lexemes are
    /// carriers.
    pub fn strongly_dependent() -> Self {
        Self {
            n_narratives: 100,
            units_per_narrative: 6,
            total_units: None,
            n_subjects: 20,
            lexicon_overlap: 0.0,
            filler_vocab_size: 20,
            positive_lexicon_size: 10,
            negative_lexicon_size: 10,
            neutral_candidate_vocab_size: 16,
            cue_vocab_size: 4,
            cue_rate: 0.5,
            cue_noise: 0.15,
            distractor_rate: 0.5,
            ..Self::reference_targets()
        }
    }

    pub fn unit_count(&self) -> usize {
        self.total_units
            .unwrap_or(self.n_narratives * self.units_per_narrative)
    }

    fn shared_lexicon_size(&self) -> usize {
        if self.lexicon_overlap <= 0.0 {
            return 0;
        }
        let exclusive = (self.positive_lexicon_size + self.negative_lexicon_size) as f64;
        ((self.lexicon_overlap * exclusive / (1.0 - self.lexicon_overlap)).round() as usize).max(1)
    }

    /// Probability that each non-first candidate of a polar unit is a carrier.
    fn extra_carrier_prob(&self) -> f64 {
        let k = self.mean_candidates_per_unit;
        if k <= 1.0 {
            return 0.0;
        }
        ((self.ec_rate_in_polar * k - 1.0) / (k - 1.0)).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("polar_fraction", self.polar_fraction),
            ("positive_fraction_of_all", self.positive_fraction_of_all),
            ("negative_fraction_of_all", self.negative_fraction_of_all),
            ("ec_rate_in_polar", self.ec_rate_in_polar),
            ("lexicon_overlap", self.lexicon_overlap),
            ("cue_rate", self.cue_rate),
            ("cue_noise", self.cue_noise),
            ("distractor_rate", self.distractor_rate),
        ];
        for (field, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::spec(field, format!("{p} is not a probability")));
            }
        }
        if (self.positive_fraction_of_all + self.negative_fraction_of_all - self.polar_fraction).abs()
            > 1e-9
        {
            return Err(Error::spec(
                "polar_fraction",
                "must equal positive_fraction_of_all + negative_fraction_of_all",
            ));
        }
        if self.lexicon_overlap >= 1.0 {
            return Err(Error::spec("lexicon_overlap", "must be below 1"));
        }
        for (field, n) in [
            ("n_narratives", self.n_narratives),
            ("n_subjects", self.n_subjects),
            ("filler_vocab_size", self.filler_vocab_size),
            ("neutral_candidate_vocab_size", self.neutral_candidate_vocab_size),
            ("cue_vocab_size", self.cue_vocab_size),
        ] {
            if n == 0 {
                return Err(Error::spec(field, "must be positive"));
            }
        }
        if self.total_units.is_none() && self.units_per_narrative == 0 {
            return Err(Error::spec("units_per_narrative", "must be positive"));
        }
        if self.unit_count() < self.n_narratives {
            return Err(Error::spec(
                "total_units",
                "every narrative needs at least one unit",
            ));
        }
        if !(1.0..=MAX_CANDIDATES as f64).contains(&self.mean_candidates_per_unit) {
            return Err(Error::spec(
                "mean_candidates_per_unit",
                format!("must lie in [1, {MAX_CANDIDATES}]"),
            ));
        }
        if self.polar_fraction > 0.0 {
            if self.ec_rate_in_polar == 0.0 {
                return Err(Error::spec(
                    "ec_rate_in_polar",
                    "polar units need at least one carrier, so the rate cannot be 0",
                ));
            }
            if self.ec_rate_in_polar * self.mean_candidates_per_unit < 1.0 - 1e-9 {
                return Err(Error::spec(
                    "ec_rate_in_polar",
                    "too low for one carrier per polar unit at this candidate count",
                ));
            }
            if self.positive_fraction_of_all > 0.0 && self.positive_lexicon_size == 0 {
                return Err(Error::spec("positive_lexicon_size", "must be positive"));
            }
            if self.negative_fraction_of_all > 0.0 && self.negative_lexicon_size == 0 {
                return Err(Error::spec("negative_lexicon_size", "must be positive"));
            }
        }
        Ok(())
    }

    /// The word lists this spec generates from; a pure function of the seed
    /// and the vocabulary sizes.
    pub fn lexicons(&self) -> Lexicons {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_1e71_c0de);
        let mut used = BTreeSet::new();
        let mut word = |rng: &mut ChaCha8Rng| loop {
            let n_syl = rng.gen_range(2..=3);
            let w: String = (0..n_syl)
                .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
                .collect();
            if used.insert(w.clone()) {
                return w;
            }
        };
        let mut words = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| word(rng)).collect::<Vec<_>>();
        let filler = words(&mut rng, self.filler_vocab_size);
        let positive_cues = words(&mut rng, self.cue_vocab_size);
        let negative_cues = words(&mut rng, self.cue_vocab_size);
        let neutral_nouns = words(&mut rng, self.neutral_candidate_vocab_size);
        let mut phrases = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<String>> {
            (0..n)
                .map(|_| {
                    let len = if rng.gen_bool(0.3) { 2 } else { 1 };
                    (0..len).map(|_| word(rng)).collect()
                })
                .collect()
        };
        let positive = phrases(&mut rng, self.positive_lexicon_size);
        let negative = phrases(&mut rng, self.negative_lexicon_size);
        let shared = phrases(&mut rng, self.shared_lexicon_size());
        Lexicons {
            filler,
            positive_cues,
            negative_cues,
            neutral_nouns,
            positive,
            negative,
            shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicons {
    pub filler: Vec<String>,
    pub positive_cues: Vec<String>,
    pub negative_cues: Vec<String>,
    pub neutral_nouns: Vec<String>,
    /// Carrier phrases exclusive to positive units.
    pub positive: Vec<Vec<String>>,
    /// Carrier phrases exclusive to negative units.
    pub negative: Vec<Vec<String>>,
    /// Carrier phrases usable under either polarity.
    pub shared: Vec<Vec<String>>,
}

enum Piece {
    Candidate(Vec<String>, Carrier),
    Word(String),
}

/// Generates a corpus; deterministic for a given spec (including its seed).
pub fn generate_corpus(spec: &GeneratorSpec) -> Result<Vec<Narrative>> {
    spec.validate()?;
    let lex = spec.lexicons();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let extra_poisson = if spec.mean_candidates_per_unit > 1.0 {
        Some(Poisson::new(spec.mean_candidates_per_unit - 1.0).expect("positive mean"))
    } else {
        None
    };
    let extra_carrier = spec.extra_carrier_prob();

    let positive_pool: Vec<&Vec<String>> = lex.positive.iter().chain(&lex.shared).collect();
    let negative_pool: Vec<&Vec<String>> = lex.negative.iter().chain(&lex.shared).collect();
    let all_ec: Vec<&Vec<String>> = lex
        .positive
        .iter()
        .chain(&lex.negative)
        .chain(&lex.shared)
        .collect();

    let total = spec.unit_count();
    let base = total / spec.n_narratives;
    let rem = total % spec.n_narratives;
    let width = spec.n_narratives.to_string().len().max(4);

    let mut narratives = Vec::with_capacity(spec.n_narratives);
    for n_idx in 0..spec.n_narratives {
        let narrative_id = format!("n{n_idx:0width$}");
        let subject_id = format!("s{:03}", n_idx % spec.n_subjects);
        let n_units = base + usize::from(n_idx < rem);
        let mut units = Vec::with_capacity(n_units);
        for u_idx in 0..n_units {
            let draw: f64 = rng.gen();
            let valence = if draw < spec.negative_fraction_of_all {
                ValenceLabel::Negative
            } else if draw < spec.polar_fraction {
                ValenceLabel::Positive
            } else {
                ValenceLabel::Neutral
            };
            let k = 1 + extra_poisson
                .as_ref()
                .map_or(0, |p| (p.sample(&mut rng) as u64).min(MAX_CANDIDATES - 1))
                as usize;
            let n_carriers = if valence.is_polar() {
                1 + Binomial::new((k - 1) as u64, extra_carrier)
                    .expect("valid binomial")
                    .sample(&mut rng) as usize
            } else {
                0
            };
            let mut flags: Vec<bool> = (0..k).map(|i| i < n_carriers).collect();
            flags.shuffle(&mut rng);

            let mut pieces: Vec<Piece> = Vec::with_capacity(k + 1);
            for is_carrier in flags {
                let phrase = if is_carrier {
                    let pool = match valence {
                        ValenceLabel::Positive => &positive_pool,
                        _ => &negative_pool,
                    };
                    (*pool.choose(&mut rng).expect("non-empty lexicon")).clone()
                } else if rng.gen_bool(spec.distractor_rate) && !all_ec.is_empty() {
                    let pool: Vec<&Vec<String>> = match valence {
                        ValenceLabel::Positive => lex.negative.iter().collect(),
                        ValenceLabel::Negative => lex.positive.iter().collect(),
                        ValenceLabel::Neutral => all_ec.clone(),
                    };
                    match pool.choose(&mut rng) {
                        Some(p) => (*p).clone(),
                        None => vec![lex.neutral_nouns.choose(&mut rng).expect("non-empty").clone()],
                    }
                } else {
                    vec![lex.neutral_nouns.choose(&mut rng).expect("non-empty").clone()]
                };
                pieces.push(Piece::Candidate(phrase, Carrier::from_bool(is_carrier)));
            }
            let cue = match valence {
                ValenceLabel::Positive if rng.gen_bool(spec.cue_rate) => lex.positive_cues.choose(&mut rng),
                ValenceLabel::Negative if rng.gen_bool(spec.cue_rate) => lex.negative_cues.choose(&mut rng),
                ValenceLabel::Neutral if rng.gen_bool(spec.cue_noise) => {
                    if rng.gen_bool(0.5) {
                        lex.positive_cues.choose(&mut rng)
                    } else {
                        lex.negative_cues.choose(&mut rng)
                    }
                }
                _ => None,
            };
            if let Some(c) = cue {
                let at = rng.gen_range(0..=pieces.len());
                pieces.insert(at, Piece::Word(c.clone()));
            }

            let mut tokens = Vec::new();
            let mut candidates = Vec::new();
            for piece in pieces {
                for _ in 0..rng.gen_range(1..=2) {
                    tokens.push(lex.filler.choose(&mut rng).expect("non-empty").clone());
                }
                match piece {
                    Piece::Word(w) => tokens.push(w),
                    Piece::Candidate(phrase, carrier) => {
                        let start = tokens.len();
                        tokens.extend(phrase);
                        candidates.push(EcCandidate::new(start, tokens.len(), carrier));
                    }
                }
            }
            if rng.gen_bool(0.5) {
                tokens.push(lex.filler.choose(&mut rng).expect("non-empty").clone());
            }
            units.push(FunctionalUnit {
                unit_id: format!("{narrative_id}-u{u_idx:02}"),
                narrative_id: narrative_id.clone(),
                tokens,
                valence,
                candidates,
            });
        }
        narratives.push(Narrative {
            narrative_id,
            subject_id,
            units,
        });
    }
    Ok(narratives)
}
