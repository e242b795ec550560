use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{EcCandidate, FunctionalUnit, ValenceLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub unit_count: usize,
    pub negative_units: usize,
    pub positive_units: usize,
    pub neutral_units: usize,
    pub negative_fraction: f64,
    pub positive_fraction: f64,
    pub neutral_fraction: f64,
    pub polar_fraction: f64,
    pub candidate_count: usize,
    pub carrier_count: usize,
    pub ec_rate_overall: f64,
    pub polar_candidate_count: usize,
    pub polar_carrier_count: usize,
    pub ec_rate_polar: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl StatsReport {
    /// Flat `key value` table, one entry per line, fixed order.
    pub fn to_table(&self) -> String {
        let counts = [
            ("unit_count", self.unit_count),
            ("negative_units", self.negative_units),
            ("positive_units", self.positive_units),
            ("neutral_units", self.neutral_units),
            ("candidate_count", self.candidate_count),
            ("carrier_count", self.carrier_count),
            ("polar_candidate_count", self.polar_candidate_count),
            ("polar_carrier_count", self.polar_carrier_count),
        ];
        let rates = [
            ("negative_fraction", self.negative_fraction),
            ("positive_fraction", self.positive_fraction),
            ("neutral_fraction", self.neutral_fraction),
            ("polar_fraction", self.polar_fraction),
            ("ec_rate_overall", self.ec_rate_overall),
            ("ec_rate_polar", self.ec_rate_polar),
        ];
        let mut out = String::new();
        for (key, n) in counts {
            writeln!(out, "{key:<24}{n}").unwrap();
        }
        for (key, r) in rates {
            writeln!(out, "{key:<24}{r:.4}").unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

pub fn corpus_stats(units: &[FunctionalUnit]) -> StatsReport {
    let count = |l: ValenceLabel| units.iter().filter(|u| u.valence == l).count();
    let (neg, pos, neu) = (
        count(ValenceLabel::Negative),
        count(ValenceLabel::Positive),
        count(ValenceLabel::Neutral),
    );
    let n = units.len();
    let candidate_count = units.iter().map(|u| u.candidates.len()).sum();
    let carrier_count = units.iter().map(FunctionalUnit::carrier_count).sum();
    let polar = || units.iter().filter(|u| u.valence.is_polar());
    let polar_candidate_count = polar().map(|u| u.candidates.len()).sum();
    let polar_carrier_count = polar().map(FunctionalUnit::carrier_count).sum();
    StatsReport {
        unit_count: n,
        negative_units: neg,
        positive_units: pos,
        neutral_units: neu,
        negative_fraction: ratio(neg, n),
        positive_fraction: ratio(pos, n),
        neutral_fraction: ratio(neu, n),
        polar_fraction: ratio(neg + pos, n),
        candidate_count,
        carrier_count,
        ec_rate_overall: ratio(carrier_count, candidate_count),
        polar_candidate_count,
        polar_carrier_count,
        ec_rate_polar: ratio(polar_carrier_count, polar_candidate_count),
    }
}

/// Surface form of a span: lowercase tokens joined by single spaces.
pub fn span_surface(unit: &FunctionalUnit, cand: &EcCandidate) -> String {
    unit.span_tokens(cand)
        .iter()
        .map(|t| t.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionReport {
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
    pub intersection: BTreeSet<String>,
    /// |I| / |P ∪ N|
    pub ratio_union: f64,
    /// |I| / |P|
    pub ratio_positive: f64,
    /// |I| / |N|
    pub ratio_negative: f64,
}

/// Carrier surface forms shared between positive and negative units.
pub fn ec_intersection_stats(units: &[FunctionalUnit]) -> IntersectionReport {
    let collect = |label: ValenceLabel| -> BTreeSet<String> {
        units
            .iter()
            .filter(|u| u.valence == label)
            .flat_map(|u| {
                u.candidates
                    .iter()
                    .filter(|c| c.carrier.is_yes())
                    .map(move |c| span_surface(u, c))
            })
            .collect()
    };
    let positive = collect(ValenceLabel::Positive);
    let negative = collect(ValenceLabel::Negative);
    let intersection: BTreeSet<String> = positive.intersection(&negative).cloned().collect();
    let union = positive.union(&negative).count();
    IntersectionReport {
        ratio_union: ratio(intersection.len(), union),
        ratio_positive: ratio(intersection.len(), positive.len()),
        ratio_negative: ratio(intersection.len(), negative.len()),
        positive,
        negative,
        intersection,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::unit;
    use ValenceLabel::*;

    #[test]
    fn single_neutral_unit_has_zero_ec_rate() {
        let u = unit("u", "a b c", Neutral, &[(0, 1, false), (1, 2, false), (2, 3, false)]);
        let s = corpus_stats(&[u]);
        assert_eq!(s.candidate_count, 3);
        assert_eq!(s.ec_rate_overall, 0.0);
        assert_eq!(s.ec_rate_polar, 0.0);
    }

    #[test]
    fn hand_built_polar_rate() {
        let polar = unit("p", "a b c d", Positive, &[(0, 1, true), (1, 2, false), (2, 3, true), (3, 4, false)]);
        let neutral = unit("n", "x y", Neutral, &[(0, 1, false), (1, 2, false)]);
        let s = corpus_stats(&[polar, neutral]);
        assert_eq!(s.ec_rate_polar, 0.5);
        assert!((s.ec_rate_overall - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.polar_fraction, 0.5);
    }

    #[test]
    fn empty_corpus_has_zero_counts() {
        let s = corpus_stats(&[]);
        assert_eq!(s.unit_count, 0);
        assert_eq!(s.ec_rate_overall, 0.0);
        assert!(s.to_table().contains("unit_count"));
    }

    #[test]
    fn intersection_fixture() {
        // P = {a, b}, N = {b, c}
        let units = vec![
            unit("1", "A b", Positive, &[(0, 1, true), (1, 2, true)]),
            unit("2", "b c d", Negative, &[(0, 1, true), (1, 2, true), (2, 3, false)]),
        ];
        let r = ec_intersection_stats(&units);
        // Independent enumeration of the fixture's sets.
        let p: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let n: BTreeSet<String> = ["b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(r.positive, p);
        assert_eq!(r.negative, n);
        assert_eq!(r.intersection.iter().collect::<Vec<_>>(), vec!["b"]);
        assert_eq!(r.ratio_union, 1.0 / 3.0);
        assert_eq!(r.ratio_positive, 0.5);
        assert_eq!(r.ratio_negative, 0.5);
    }

    #[test]
    fn disjoint_lexicons_have_zero_ratios() {
        let units = vec![
            unit("1", "a", Positive, &[(0, 1, true)]),
            unit("2", "b", Negative, &[(0, 1, true)]),
        ];
        let r = ec_intersection_stats(&units);
        assert!(r.intersection.is_empty());
        assert_eq!((r.ratio_union, r.ratio_positive, r.ratio_negative), (0.0, 0.0, 0.0));
    }
}
