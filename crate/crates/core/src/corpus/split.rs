use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FunctionalUnit, ValenceLabel};
use crate::{Error, Result};

/// Per-split class proportions must stay within this distance (absolute
/// fraction) of the full-corpus proportions on reasonably sized corpora.
pub const STRATIFICATION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<FunctionalUnit>,
    pub validation: Vec<FunctionalUnit>,
    pub test: Vec<FunctionalUnit>,
    pub seed: u64,
}

/// Splits units so that every split mirrors the valence distribution.
///
/// Each valence class is shuffled with the seeded stream and cut at
/// `round(n_c * ratio)`; the train split takes the remainder. Output order
/// follows the input order within each split.
pub fn stratified_split(
    units: &[FunctionalUnit],
    ratios: SplitRatios,
    seed: u64,
) -> Result<CorpusSplit> {
    let sum = ratios.train + ratios.validation + ratios.test;
    if (sum - 1.0).abs() > 1e-9
        || [ratios.train, ratios.validation, ratios.test]
            .iter()
            .any(|r| !(0.0..=1.0).contains(r))
    {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be in [0, 1] and sum to 1, got {sum}"
        )));
    }
    if units.len() < 10 {
        return Err(Error::Stratification(format!(
            "need at least 10 units, got {}",
            units.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 0 = train, 1 = validation, 2 = test
    let mut assignment = vec![0u8; units.len()];
    for label in ValenceLabel::ALL {
        let mut members: Vec<usize> = units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.valence == label)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_val = (n * ratios.validation).round() as usize;
        let n_test = (n * ratios.test).round() as usize;
        let n_train = members.len().saturating_sub(n_val + n_test);
        let starved = (ratios.validation > 0.0 && n_val == 0)
            || (ratios.test > 0.0 && n_test == 0)
            || (ratios.train > 0.0 && n_train == 0);
        if starved {
            return Err(Error::Stratification(format!(
                "only {} `{label}` units; cannot populate every split",
                members.len()
            )));
        }
        for &i in &members[..n_val] {
            assignment[i] = 1;
        }
        for &i in &members[n_val..n_val + n_test] {
            assignment[i] = 2;
        }
    }

    let pick = |k: u8| -> Vec<FunctionalUnit> {
        units
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == k)
            .map(|(u, _)| u.clone())
            .collect()
    };
    Ok(CorpusSplit {
        train: pick(0),
        validation: pick(1),
        test: pick(2),
        seed,
    })
}
