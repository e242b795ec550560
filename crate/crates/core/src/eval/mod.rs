//! Macro-F1 metrics, seed aggregation, regime evaluation and the results grid.

mod grid;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::Decoder;
use crate::corpus::FunctionalUnit;
use crate::discriminative::{DiscSetting, DualHeadClassifier};
use crate::encodings::{render_prompt_ec, render_prompt_valence, LossScope, PromptSequence, Task, Vocabulary};
use crate::generative::{self, constrained_decode, GenSetting, GenerationConstraint};
use crate::regime::{RegimeConfig, Setting};
use crate::{Error, Result};

pub use grid::{emit_grid, grid_cell, GridColumn, GridFormat, GridRow, ResultsGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub n: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 over `label_set` and their unweighted mean.
/// Undefined ratios count as 0, so a class absent from both sides scores 0.
pub fn macro_f1(golds: &[usize], preds: &[usize], label_set: &[usize]) -> Result<TaskMetrics> {
    if golds.len() != preds.len() {
        return Err(Error::Metric(format!("{} golds vs {} predictions", golds.len(), preds.len())));
    }
    if label_set.is_empty() {
        return Err(Error::Metric("empty label set".into()));
    }
    let index = |l: usize| {
        label_set
            .iter()
            .position(|&x| x == l)
            .ok_or_else(|| Error::Metric(format!("label {l} outside the label set")))
    };
    let k = label_set.len();
    let (mut tp, mut gold_n, mut pred_n) = (vec![0; k], vec![0; k], vec![0; k]);
    for (&g, &p) in golds.iter().zip(preds) {
        let (gi, pi) = (index(g)?, index(p)?);
        gold_n[gi] += 1;
        pred_n[pi] += 1;
        if gi == pi {
            tp[gi] += 1;
        }
    }
    let per_class: Vec<ClassScores> = (0..k)
        .map(|i| {
            let precision = ratio(tp[i], pred_n[i]);
            let recall = ratio(tp[i], gold_n[i]);
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassScores { label: label_set[i], precision, recall, f1, support: gold_n[i] }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
    Ok(TaskMetrics { per_class, macro_f1, n: golds.len() })
}

fn label_set(task: Task) -> Vec<usize> {
    (0..task.n_classes()).collect()
}

/// Test-split metrics of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub regime: String,
    pub seed: u64,
    pub valence: Option<TaskMetrics>,
    pub ec: Option<TaskMetrics>,
}

impl RunMetrics {
    pub fn task(&self, task: Task) -> Option<&TaskMetrics> {
        match task {
            Task::Valence => self.valence.as_ref(),
            Task::Ec => self.ec.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stdev: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Metric("nothing to aggregate".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stdev = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Aggregate { mean, stdev, n })
}

/// Macro-F1 of `task` across runs.
pub fn aggregate_runs(runs: &[RunMetrics], task: Task) -> Result<Aggregate> {
    let values: Vec<f64> = runs
        .iter()
        .map(|r| {
            r.task(task)
                .map(|m| m.macro_f1)
                .ok_or_else(|| Error::Metric(format!("run {} has no {} metrics", r.regime, task.name())))
        })
        .collect::<Result<_>>()?;
    aggregate(&values)
}

/// Labels for the tasks a regime scores; `None` for unscored tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub valence: Option<usize>,
    pub carriers: Option<Vec<usize>>,
}

/// A trained model that can label a unit under a regime.
pub trait Predictor {
    fn predict(&self, fu: &FunctionalUnit, vocab: &Vocabulary, regime: &RegimeConfig) -> Result<Prediction>;
}

impl Predictor for DualHeadClassifier {
    fn predict(&self, fu: &FunctionalUnit, vocab: &Vocabulary, regime: &RegimeConfig) -> Result<Prediction> {
        let setting = match regime.setting {
            Setting::Single(_) => DiscSetting::Single,
            Setting::Joint => DiscSetting::Joint,
            Setting::TwoStep(order) => DiscSetting::TwoStep { order, oracle: regime.oracle },
        };
        let (v, ec) = self.predict_unit(fu, vocab, setting)?;
        Ok(keep_scored(regime.setting, v, ec))
    }
}

impl Predictor for Decoder {
    fn predict(&self, fu: &FunctionalUnit, vocab: &Vocabulary, regime: &RegimeConfig) -> Result<Prediction> {
        let decode = |p: &PromptSequence| {
            constrained_decode(self, &p.input_ids[..p.prefix_len()], &GenerationConstraint::from_prompt(p))
        };
        match regime.setting {
            Setting::Single(Task::Valence) => Ok(Prediction {
                valence: Some(decode(&render_prompt_valence(fu, vocab, LossScope::Full)?)?[0]),
                carriers: None,
            }),
            Setting::Single(Task::Ec) => Ok(Prediction {
                valence: None,
                carriers: Some(if fu.candidates.is_empty() {
                    Vec::new()
                } else {
                    decode(&render_prompt_ec(fu, vocab, LossScope::Full)?)?
                }),
            }),
            Setting::Joint => {
                let (v, ec) = generative::predict_unit(self, fu, vocab, GenSetting::Separate)?;
                Ok(keep_scored(regime.setting, v, ec))
            }
            Setting::TwoStep(order) => {
                let setting = GenSetting::TwoStep { order, oracle: regime.oracle };
                let (v, ec) = generative::predict_unit(self, fu, vocab, setting)?;
                Ok(keep_scored(regime.setting, v, ec))
            }
        }
    }
}

fn keep_scored(setting: Setting, valence: usize, carriers: Vec<usize>) -> Prediction {
    let tasks = setting.tasks();
    Prediction {
        valence: tasks.contains(&Task::Valence).then_some(valence),
        carriers: tasks.contains(&Task::Ec).then_some(carriers),
    }
}

/// One line of the prediction dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub unit_id: String,
    pub gold_valence: usize,
    pub pred_valence: Option<usize>,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub start: usize,
    pub end: usize,
    pub gold: usize,
    pub pred: Option<usize>,
}

/// Valence metrics over every test unit and EC metrics over every candidate
/// of every test unit, polar or neutral.
pub fn evaluate_regime<P: Predictor>(
    model: &P,
    units: &[FunctionalUnit],
    vocab: &Vocabulary,
    regime: &RegimeConfig,
    seed: u64,
) -> Result<(RunMetrics, Vec<PredictionRecord>)> {
    if units.is_empty() {
        return Err(Error::Metric("empty test set".into()));
    }
    let mut records = Vec::with_capacity(units.len());
    for fu in units {
        let pred = model.predict(fu, vocab, regime)?;
        if let Some(c) = &pred.carriers {
            if c.len() != fu.candidates.len() {
                return Err(Error::Metric(format!("unit {}: {} carrier labels for {} candidates", fu.unit_id, c.len(), fu.candidates.len())));
            }
        }
        records.push(PredictionRecord {
            unit_id: fu.unit_id.clone(),
            gold_valence: fu.valence.code(),
            pred_valence: pred.valence,
            candidates: fu
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| CandidateRecord {
                    start: c.start,
                    end: c.end,
                    gold: c.carrier.code(),
                    pred: pred.carriers.as_ref().map(|p| p[i]),
                })
                .collect(),
        });
    }
    let metrics = metrics_from_records(&records, regime, seed)?;
    Ok((metrics, records))
}

/// Scores a prediction dump.
pub fn metrics_from_records(records: &[PredictionRecord], regime: &RegimeConfig, seed: u64) -> Result<RunMetrics> {
    let tasks = regime.setting.tasks();
    let valence = if tasks.contains(&Task::Valence) {
        let (golds, preds): (Vec<usize>, Vec<usize>) = records
            .iter()
            .map(|r| Ok((r.gold_valence, r.pred_valence.ok_or_else(|| missing(&r.unit_id))?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Some(macro_f1(&golds, &preds, &label_set(Task::Valence))?)
    } else {
        None
    };
    let ec = if tasks.contains(&Task::Ec) {
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for r in records {
            for c in &r.candidates {
                golds.push(c.gold);
                preds.push(c.pred.ok_or_else(|| missing(&r.unit_id))?);
            }
        }
        if golds.is_empty() {
            return Err(Error::Metric("test set has no EC candidates".into()));
        }
        Some(macro_f1(&golds, &preds, &label_set(Task::Ec))?)
    } else {
        None
    };
    Ok(RunMetrics { regime: regime.id(), seed, valence, ec })
}

fn missing(unit_id: &str) -> Error {
    Error::Metric(format!("unit {unit_id}: missing prediction"))
}

/// Writes records as line-delimited JSON.
pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests;
