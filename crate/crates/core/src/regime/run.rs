use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Family, RegimeConfig, Setting};
use crate::backbone::Decoder;
use crate::corpus::{stratified_split, CorpusSplit, FunctionalUnit, SplitRatios};
use crate::discriminative::DualHeadClassifier;
use crate::encodings::{encode_discriminative, DiscriminativeExample, PromptSequence, Task, Vocabulary};
use crate::eval::{evaluate_regime, PredictionRecord, Predictor, ResultsGrid, RunMetrics};
use crate::generative::{mix_prompts, train_lm, training_prompts, GenObjective};
use crate::trainer::{train, TrainConfig, TrainLog};
use crate::{Error, Result};

/// Train/validation/test units and the vocabulary built from the train split.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: Vec<FunctionalUnit>,
    pub validation: Vec<FunctionalUnit>,
    pub test: Vec<FunctionalUnit>,
    pub vocab: Vocabulary,
}

impl Experiment {
    /// Stratified 80/10/10 split.
    pub fn from_units(units: &[FunctionalUnit], split_seed: u64) -> Result<Self> {
        Ok(Self::from_split(stratified_split(units, SplitRatios::default(), split_seed)?))
    }

    pub fn from_split(split: CorpusSplit) -> Self {
        Self::new(split.train, split.validation, split.test)
    }

    pub fn new(train: Vec<FunctionalUnit>, validation: Vec<FunctionalUnit>, test: Vec<FunctionalUnit>) -> Self {
        let vocab = Vocabulary::build(train.iter());
        Self { train, validation, test, vocab }
    }
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Disc(DualHeadClassifier),
    Gen(Decoder),
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        match self {
            Self::Disc(_) => Family::Disc,
            Self::Gen(_) => Family::Gen,
        }
    }

    pub fn fingerprint(&self) -> String {
        match self {
            Self::Disc(m) => m.params().fingerprint(),
            Self::Gen(m) => m.params().fingerprint(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            Self::Disc(m) => m.save(path),
            Self::Gen(m) => m.save(path),
        }
    }

    pub fn load(family: Family, path: impl AsRef<Path>) -> Result<Self> {
        Ok(match family {
            Family::Disc => Self::Disc(DualHeadClassifier::load(path)?),
            Family::Gen => Self::Gen(Decoder::load(path)?),
        })
    }

    pub fn evaluate(
        &self,
        units: &[FunctionalUnit],
        vocab: &Vocabulary,
        regime: &RegimeConfig,
        seed: u64,
    ) -> Result<(RunMetrics, Vec<PredictionRecord>)> {
        match self {
            Self::Disc(m) => evaluate_regime(m, units, vocab, regime, seed),
            Self::Gen(m) => evaluate_regime(m, units, vocab, regime, seed),
        }
    }
}

/// Validation macro-F1 that picks the checkpoint: the task itself for single
/// task, the mean of both tasks otherwise.
pub fn selection_metric(regime: &RegimeConfig, m: &RunMetrics) -> Result<f64> {
    let f1 = |t: Task| {
        m.task(t)
            .map(|x| x.macro_f1)
            .ok_or_else(|| Error::Metric(format!("{} metrics missing for {}", t.name(), regime)))
    };
    match regime.setting {
        Setting::Single(t) => f1(t),
        Setting::TwoStep(_) | Setting::Joint => Ok((f1(Task::Valence)? + f1(Task::Ec)?) / 2.0),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub regime: String,
    pub config: TrainConfig,
    /// First-task phase of domain adaptation.
    pub adapt_log: Option<TrainLog>,
    /// Parameter fingerprint handed from the first phase to the second.
    pub handoff_fingerprint: Option<String>,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: TrainedModel,
    pub report: FitReport,
}

fn validator<'a, M: Predictor>(
    exp: &'a Experiment,
    regime: RegimeConfig,
    seed: u64,
) -> impl FnMut(&M) -> Result<f64> + 'a {
    move |m: &M| {
        let (metrics, _) = evaluate_regime(m, &exp.validation, &exp.vocab, &regime, seed)?;
        selection_metric(&regime, &metrics)
    }
}

fn fit_disc(regime: &RegimeConfig, exp: &Experiment, config: &TrainConfig) -> Result<(DualHeadClassifier, TrainLog)> {
    let mut model = DualHeadClassifier::init(&config.backbone(exp.vocab.len()))?;
    let validate = validator::<DualHeadClassifier>(exp, *regime, config.seed);
    let encode = |units: &mut dyn Iterator<Item = &FunctionalUnit>| -> Result<Vec<DiscriminativeExample>> {
        units.map(|u| encode_discriminative(u, &exp.vocab, None)).collect()
    };
    let owned = |b: &[&DiscriminativeExample]| -> Vec<DiscriminativeExample> { b.iter().map(|&e| e.clone()).collect() };
    let log = match regime.setting {
        Setting::Single(task) => {
            let items = encode(&mut exp.train.iter().filter(|u| task == Task::Valence || !u.candidates.is_empty()))?;
            train(&mut model, &items, config, |m, b, rng| Ok(m.train_single(&owned(b), task, rng)?.loss), validate)?
        }
        Setting::Joint => {
            let items = encode(&mut exp.train.iter())?;
            let lambda = config.lambda;
            train(&mut model, &items, config, |m, b, rng| Ok(m.train_joint(&owned(b), lambda, rng)?.loss_total), validate)?
        }
        Setting::TwoStep(order) => {
            let items: Vec<&FunctionalUnit> = exp.train.iter().collect();
            let (lambda, tf) = (config.lambda, config.tf_prob);
            train(
                &mut model,
                &items,
                config,
                |m, b, rng| {
                    let units: Vec<&FunctionalUnit> = b.iter().map(|&&u| u).collect();
                    Ok(m.train_two_step(&units, &exp.vocab, order, lambda, tf, rng)?.loss_total)
                },
                validate,
            )?
        }
    };
    Ok((model, log))
}

fn gen_objective(setting: Setting) -> GenObjective {
    match setting {
        Setting::Single(t) => GenObjective::Single(t),
        Setting::Joint => GenObjective::Joint,
        Setting::TwoStep(order) => GenObjective::TwoStep(order),
    }
}

fn train_gen_phase(
    model: &mut Decoder,
    regime: &RegimeConfig,
    exp: &Experiment,
    config: &TrainConfig,
) -> Result<TrainLog> {
    let prompts = training_prompts(&exp.train, &exp.vocab, gen_objective(regime.setting), config.loss_scope)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prompts = mix_prompts(prompts, config.mix_ec_fraction, &mut rng)?;
    let items: Vec<PromptSequence> = prompts.into_iter().map(|t| t.prompt).collect();
    let validate = validator::<Decoder>(exp, *regime, config.seed);
    train(model, &items, config, |m, b, rng| train_lm(m, b, rng), validate)
}

/// Trains one model for `regime` under `config`.
pub fn fit(regime: &RegimeConfig, exp: &Experiment, config: &TrainConfig) -> Result<Fitted> {
    regime.validate()?;
    config.validate()?;
    if regime.setting != Setting::Single(Task::Valence) && exp.train.iter().all(|u| u.candidates.is_empty()) {
        return Err(Error::Regime { id: regime.id(), message: "training split has no EC candidates".into() });
    }
    let mut report = FitReport {
        regime: regime.id(),
        config: config.clone(),
        adapt_log: None,
        handoff_fingerprint: None,
        log: TrainLog::default(),
    };
    let model = match regime.family {
        Family::Disc => {
            let (m, log) = fit_disc(regime, exp, config)?;
            report.log = log;
            TrainedModel::Disc(m)
        }
        Family::Gen => {
            let mut m = Decoder::init(&config.backbone(exp.vocab.len()))?;
            if regime.domain_adapt {
                let order = regime.order().expect("validated: domain adaptation is two-step");
                let first = RegimeConfig::new(Family::Gen, Setting::Single(order.first()));
                let phase1 = TrainConfig { learning_rate: config.adapt_learning_rate, ..config.clone() };
                report.adapt_log = Some(train_gen_phase(&mut m, &first, exp, &phase1)?);
                report.handoff_fingerprint = Some(m.params().fingerprint());
            }
            report.log = train_gen_phase(&mut m, regime, exp, config)?;
            TrainedModel::Gen(m)
        }
    };
    Ok(Fitted { model, report })
}

/// One trained-and-evaluated seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub metrics: RunMetrics,
    pub predictions: Vec<PredictionRecord>,
    pub fitted: Fitted,
}

/// Trains `n_seeds` runs with seeds `config.seed .. config.seed + n_seeds`
/// and evaluates each on the test split.
pub fn run_regime_detailed(
    regime: &RegimeConfig,
    exp: &Experiment,
    config: &TrainConfig,
    n_seeds: usize,
) -> Result<Vec<SeedRun>> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("n_seeds must be at least 1".into()));
    }
    (0..n_seeds as u64)
        .map(|k| {
            let seed = config.seed + k;
            let cfg = TrainConfig { seed, ..config.clone() };
            let fitted = fit(regime, exp, &cfg)?;
            let (metrics, predictions) = fitted.model.evaluate(&exp.test, &exp.vocab, regime, seed)?;
            Ok(SeedRun { metrics, predictions, fitted })
        })
        .collect()
}

pub fn run_regime(regime: &RegimeConfig, exp: &Experiment, config: &TrainConfig, n_seeds: usize) -> Result<Vec<RunMetrics>> {
    Ok(run_regime_detailed(regime, exp, config, n_seeds)?
        .into_iter()
        .map(|r| r.metrics)
        .collect())
}

/// Outcome of one grid cell.
pub type CellResult = (RegimeConfig, Result<Vec<SeedRun>>);

/// Runs every regime with up to `jobs` worker threads. Results come back in
/// the order of `regimes` whatever the scheduling.
pub fn run_regimes<F>(
    regimes: &[RegimeConfig],
    exp: &Experiment,
    config_for: F,
    n_seeds: usize,
    jobs: usize,
) -> Vec<CellResult>
where
    F: Fn(&RegimeConfig) -> Result<TrainConfig> + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<Vec<SeedRun>>>>> = regimes.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(regimes.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(regime) = regimes.get(i) else { break };
                let out = config_for(regime).and_then(|cfg| run_regime_detailed(regime, exp, &cfg, n_seeds));
                *results[i].lock().expect("result lock") = Some(out);
            });
        }
    });
    regimes
        .iter()
        .zip(results)
        .map(|(r, slot)| (*r, slot.into_inner().expect("result lock").expect("every cell ran")))
        .collect()
}

/// Folds cell results into a grid; failed cells stay absent and are listed
/// with `log_ref(regime)`.
pub fn build_grid(cells: &[CellResult], log_ref: impl Fn(&RegimeConfig) -> String) -> ResultsGrid {
    let mut grid = ResultsGrid::default();
    for (regime, outcome) in cells {
        let inserted = outcome.as_ref().map_err(|e| e.to_string()).and_then(|runs| {
            let metrics: Vec<RunMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
            grid.insert_runs(regime, &metrics).map_err(|e| e.to_string())
        });
        if let Err(message) = inserted {
            grid.record_failure(regime, format!("{message} (see {})", log_ref(regime)));
        }
    }
    grid
}
