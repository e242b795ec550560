use proptest::prelude::*;

use super::*;
use crate::corpus::fixtures::unit;
use crate::corpus::ValenceLabel;
use crate::regime::Family;

/// Builds the full confusion matrix and reads F1 off it, class by class.
fn brute_force_macro_f1(golds: &[usize], preds: &[usize], k: usize) -> f64 {
    let mut cm = vec![vec![0usize; k]; k];
    for (&g, &p) in golds.iter().zip(preds) {
        cm[g][p] += 1;
    }
    let mut total = 0.0;
    for c in 0..k {
        let tp = cm[c][c] as f64;
        let fp: usize = (0..k).filter(|&r| r != c).map(|r| cm[r][c]).sum();
        let fn_: usize = (0..k).filter(|&p| p != c).map(|p| cm[c][p]).sum();
        let denom = 2.0 * tp + fp as f64 + fn_ as f64;
        total += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    total / k as f64
}

#[test]
fn hand_fixtures() {
    // neg=0 pos=1 neu=2
    let m = macro_f1(&[0, 1, 2, 0], &[0, 2, 2, 0], &[0, 1, 2]).unwrap();
    let f1: Vec<f64> = m.per_class.iter().map(|c| c.f1).collect();
    assert_eq!(f1[0], 1.0);
    assert_eq!(f1[1], 0.0);
    assert!((f1[2] - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.macro_f1 - 5.0 / 9.0).abs() < 1e-15);

    let constant = macro_f1(&[0, 1, 2], &[0, 0, 0], &[0, 1, 2]).unwrap();
    assert!((constant.macro_f1 - 1.0 / 6.0).abs() < 1e-15);

    assert_eq!(macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], &[0, 1, 2]).unwrap().macro_f1, 1.0);
    // A class missing on both sides still drags the mean down.
    assert!((macro_f1(&[0, 1], &[0, 1], &[0, 1, 2]).unwrap().macro_f1 - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn metric_errors() {
    assert!(matches!(macro_f1(&[0, 1], &[0], &[0, 1]), Err(Error::Metric(_))));
    assert!(matches!(macro_f1(&[0, 3], &[0, 1], &[0, 1, 2]), Err(Error::Metric(_))));
    assert!(matches!(macro_f1(&[0], &[5], &[0, 1]), Err(Error::Metric(_))));
    assert!(aggregate(&[]).is_err());
}

proptest! {
    #[test]
    fn matches_brute_force(pairs in proptest::collection::vec((0usize..3, 0usize..3), 0..60)) {
        let (golds, preds): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = macro_f1(&golds, &preds, &[0, 1, 2]).unwrap();
        prop_assert!((m.macro_f1 - brute_force_macro_f1(&golds, &preds, 3)).abs() <= 1e-12);
        let mean = m.per_class.iter().map(|c| c.f1).sum::<f64>() / 3.0;
        prop_assert_eq!(m.macro_f1, mean);
        for c in &m.per_class {
            prop_assert!((0.0..=1.0).contains(&c.f1));
        }
    }

    #[test]
    fn order_does_not_matter(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..40), rot in 0usize..40) {
        let (golds, preds): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot % pairs.len());
        shuffled.reverse();
        let (g2, p2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        prop_assert_eq!(macro_f1(&golds, &preds, &[0, 1]).unwrap(), macro_f1(&g2, &p2, &[0, 1]).unwrap());
    }
}

#[test]
fn aggregation() {
    let a = aggregate(&[0.6, 0.8]).unwrap();
    assert!((a.mean - 0.7).abs() < 1e-12);
    assert!((a.stdev - 0.02f64.sqrt()).abs() < 1e-12);
    assert!(aggregate(&[0.4, 0.4, 0.4]).unwrap().stdev < 1e-15);
    assert_eq!(aggregate(&[0.5, 0.5, 0.5]).unwrap().stdev, 0.0);
    assert_eq!(aggregate(&[0.3]).unwrap(), Aggregate { mean: 0.3, stdev: 0.0, n: 1 });
    let xs = [0.1, 0.9, 0.35, 0.6];
    let ys = [0.6, 0.35, 0.9, 0.1];
    let (a, b) = (aggregate(&xs).unwrap(), aggregate(&ys).unwrap());
    assert!((a.mean - b.mean).abs() < 1e-15 && (a.stdev - b.stdev).abs() < 1e-15);
}

fn runs(regime: &RegimeConfig, vals: &[(f64, f64)]) -> Vec<RunMetrics> {
    let tm = |x: f64| TaskMetrics { per_class: vec![], macro_f1: x, n: 1 };
    vals.iter()
        .enumerate()
        .map(|(i, &(v, e))| RunMetrics { regime: regime.id(), seed: i as u64, valence: Some(tm(v)), ec: Some(tm(e)) })
        .collect()
}

#[test]
fn empty_grid_is_header_only() {
    let md = emit_grid(&ResultsGrid::default(), GridFormat::Markdown);
    assert_eq!(md.lines().count(), 2);
    assert!(md.starts_with("| Model | Valence Single | Valence Val→EC | Valence EC→Val | Valence w. ground truth | Valence Joint | EC Single |"));
    assert_eq!(emit_grid(&ResultsGrid::default(), GridFormat::Csv), "task,model,setting,mean,stdev,n\n");
}

#[test]
fn oracle_fills_only_the_second_task_column() {
    let ve: RegimeConfig = "disc:two-step-val-ec:oracle".parse().unwrap();
    let ev: RegimeConfig = "gen:two-step-ec-val:oracle".parse().unwrap();
    assert_eq!(grid_cell_pair(&ve), (None, Some((GridRow::Disc, GridColumn::GroundTruth))));
    assert_eq!(grid_cell_pair(&ev), (Some((GridRow::Gen, GridColumn::GroundTruth)), None));
    let da: RegimeConfig = "gen:two-step-ec-val:domain-adapt".parse().unwrap();
    assert_eq!(grid_cell_pair(&da).0, Some((GridRow::GenDomainAdapt, GridColumn::EcVal)));
    let sv = RegimeConfig::new(Family::Disc, Setting::Single(Task::Valence));
    assert_eq!(grid_cell_pair(&sv), (Some((GridRow::Disc, GridColumn::Single)), None));
}

fn grid_cell_pair(r: &RegimeConfig) -> (Option<(GridRow, GridColumn)>, Option<(GridRow, GridColumn)>) {
    (grid_cell(r, Task::Valence), grid_cell(r, Task::Ec))
}

#[test]
fn grid_formatting_and_csv_values() {
    let mut grid = ResultsGrid::default();
    let joint: RegimeConfig = "disc:joint".parse().unwrap();
    grid.insert_runs(&joint, &runs(&joint, &[(0.76, 0.5), (0.76, 0.7)])).unwrap();
    let md = emit_grid(&grid, GridFormat::Markdown);
    assert!(md.contains("| disc |"));
    assert!(md.contains(" 76.0 ± 0.0 |"), "{md}");
    assert!(md.contains(" 60.0 ± 14.1 |"), "{md}");
    assert!(!md.contains("| gen |"));

    let csv = emit_grid(&grid, GridFormat::Csv);
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let a = grid.get(
            if row[0] == "Valence" { Task::Valence } else { Task::Ec },
            GridRow::Disc,
            GridColumn::Joint,
        ).unwrap();
        assert!((row[3].parse::<f64>().unwrap() - 100.0 * a.mean).abs() <= 0.05);
        assert!((row[4].parse::<f64>().unwrap() - 100.0 * a.stdev).abs() <= 0.05);
        assert_eq!(row[5], "2");
    }
    assert_eq!(md, emit_grid(&grid.clone(), GridFormat::Markdown));
}

struct Gold;

impl Predictor for Gold {
    fn predict(&self, fu: &FunctionalUnit, _: &Vocabulary, _: &RegimeConfig) -> Result<Prediction> {
        Ok(Prediction {
            valence: Some(fu.valence.code()),
            carriers: Some(fu.candidates.iter().map(|c| c.carrier.code()).collect()),
        })
    }
}

fn test_units() -> (Vec<FunctionalUnit>, Vocabulary) {
    let units = vec![
        unit("a", "my boss yelled at me", ValenceLabel::Negative, &[(1, 2, true), (2, 3, false)]),
        unit("b", "we went to the sea", ValenceLabel::Positive, &[(4, 5, true)]),
        unit("c", "then I went home", ValenceLabel::Neutral, &[(3, 4, false)]),
        unit("d", "nothing else", ValenceLabel::Neutral, &[]),
    ];
    let vocab = Vocabulary::build(units.iter());
    (units, vocab)
}

#[test]
fn perfect_model_scores_one_over_all_candidates() {
    let (units, vocab) = test_units();
    let regime: RegimeConfig = "disc:joint".parse().unwrap();
    let (m, records) = evaluate_regime(&Gold, &units, &vocab, &regime, 0).unwrap();
    assert_eq!(m.valence.as_ref().unwrap().macro_f1, 1.0);
    assert_eq!(m.ec.as_ref().unwrap().macro_f1, 1.0);
    // Neutral units' candidates count too.
    let total: usize = units.iter().map(|u| u.candidates.len()).sum();
    assert_eq!(m.ec.unwrap().n, total);
    assert_eq!(m.valence.unwrap().n, 4);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pred.jsonl");
    write_predictions(&p, &records).unwrap();
    let back = read_predictions(&p).unwrap();
    assert_eq!(back, records);
    assert_eq!(metrics_from_records(&back, &regime, 0).unwrap().regime, "disc:joint");
    assert!(evaluate_regime(&Gold, &[], &vocab, &regime, 0).is_err());
}

#[test]
fn regimes_share_gold_sets() {
    let (units, vocab) = test_units();
    let mut gold_sets = Vec::new();
    for id in ["disc:single-val", "disc:two-step-val-ec", "gen:joint"] {
        let regime: RegimeConfig = id.parse().unwrap();
        let (_, records) = evaluate_regime(&Gold, &units, &vocab, &regime, 0).unwrap();
        let mut golds: Vec<usize> = records.iter().map(|r| r.gold_valence).collect();
        golds.sort();
        gold_sets.push(golds);
    }
    assert!(gold_sets.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn real_models_only_score_their_tasks() {
    let (units, vocab) = test_units();
    let enc = crate::backbone::EncoderConfig {
        vocab_size: vocab.len(),
        hidden_dim: 8,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 40,
        dropout_rate: 0.0,
        seed: 0,
    };
    let disc = DualHeadClassifier::init(&enc).unwrap();
    let dec = Decoder::init(&enc).unwrap();
    for regime in RegimeConfig::grid() {
        let (m, records) = match regime.family {
            Family::Disc => evaluate_regime(&disc, &units, &vocab, &regime, 1).unwrap(),
            Family::Gen => evaluate_regime(&dec, &units, &vocab, &regime, 1).unwrap(),
        };
        let tasks = regime.setting.tasks();
        assert_eq!(m.valence.is_some(), tasks.contains(&Task::Valence), "{regime}");
        assert_eq!(m.ec.is_some(), tasks.contains(&Task::Ec), "{regime}");
        assert_eq!(records.len(), units.len());
    }
}
