use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mtlaffect::corpus::{
    corpus_stats, ec_intersection_stats, flatten_units, generate_corpus, load_corpus, save_corpus, GeneratorSpec,
};
use mtlaffect::eval::{
    emit_grid, read_predictions, metrics_from_records, write_predictions, GridFormat, ResultsGrid, RunMetrics,
};
use mtlaffect::regime::{build_grid, fit, run_regimes, Experiment, RegimeConfig, TrainedModel};
use mtlaffect::trainer::{load_train_config, parse_config_text, ConfigSource, Profile, TrainConfig};
use mtlaffect::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_TRAINING: u8 = 3;

/// Multi-task valence and emotion-carrier experiments.
#[derive(Parser)]
#[command(name = "mtlaffect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Statistics of the reference annotated corpus.
    Reference,
    /// Carrier lexicon fully determines polarity.
    Dependent,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Published,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Published => Profile::Published,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        /// JSON object of generator fields overriding the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "reference")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print corpus statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Train one regime and evaluate it on the test split.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        regime: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Evaluate a trained model directory on the test split.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Defaults to the regime the model was trained for.
        #[arg(long)]
        regime: Option<String>,
        /// Prediction dump destination.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Build the results grid from metrics files written by `train`.
    Grid {
        #[arg(long = "metrics", required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every regime over several seeds and write the grid.
    Reproduce {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Only these regime ids; all grid regimes by default.
        #[arg(long = "regime")]
        regimes: Vec<String>,
    },
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Training { .. }
            | Error::SequenceTooLong { .. }
            | Error::Checkpoint(_)
            | Error::Metric(_)
            | Error::Encoding(_)
            | Error::Render(_) => EXIT_TRAINING,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }.into())
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e }.into())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn experiment(corpus: &Path, split_seed: u64) -> Result<Experiment, Failure> {
    let units = flatten_units(&load_corpus(corpus)?);
    Ok(Experiment::from_units(&units, split_seed)?)
}

fn cmd_gen_data(spec_path: Option<PathBuf>, preset: Preset, out: PathBuf, seed: Option<u64>) -> Result<(), Failure> {
    let mut spec = match preset {
        Preset::Reference => GeneratorSpec::reference_targets(),
        Preset::Dependent => GeneratorSpec::strongly_dependent(),
    };
    if let Some(path) = spec_path {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        let bad = |e: serde_json::Error| usage(format!("{}: {e}", path.display()));
        let overrides: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text).map_err(bad)?;
        let mut merged = serde_json::to_value(&spec).expect("serializable");
        for (k, v) in overrides {
            merged[k] = v;
        }
        spec = serde_json::from_value(merged).map_err(bad)?;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let narratives = generate_corpus(&spec)?;
    save_corpus(&narratives, &out)?;
    let units = flatten_units(&narratives);
    print!("{}", corpus_stats(&units).to_table());
    println!("lexicon_overlap {:.4}", ec_intersection_stats(&units).ratio_union);
    Ok(())
}

fn cmd_stats(corpus: PathBuf, json: bool) -> Result<(), Failure> {
    let units = flatten_units(&load_corpus(&corpus)?);
    let report = corpus_stats(&units);
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
        println!("lexicon_overlap {:.4}", ec_intersection_stats(&units).ratio_union);
    }
    Ok(())
}

fn parse_regime(id: &str) -> Result<RegimeConfig, Failure> {
    Ok(id.parse::<RegimeConfig>()?)
}

fn cmd_train(
    corpus: PathBuf,
    regime: String,
    config: Option<PathBuf>,
    out: PathBuf,
    profile: Profile,
    split_seed: u64,
) -> Result<(), Failure> {
    let regime = parse_regime(&regime)?;
    let (regime, cfg) = load_train_config(config.as_deref(), regime, profile, std::env::vars())?;
    let exp = experiment(&corpus, split_seed)?;
    let fitted = fit(&regime, &exp, &cfg)?;
    create_dir(&out)?;
    fitted.model.save(out.join("model.ckpt"))?;
    exp.vocab.save(out.join("vocab.txt"))?;
    write_file(&out.join("regime.txt"), &format!("{regime}\n"))?;
    write_file(&out.join("train_log.json"), &to_json(&fitted.report))?;
    let (metrics, records) = fitted.model.evaluate(&exp.test, &exp.vocab, &regime, cfg.seed)?;
    write_predictions(out.join("predictions.jsonl"), &records)?;
    write_file(&out.join("metrics.json"), &to_json(&vec![metrics.clone()]))?;
    print_metrics(&metrics);
    Ok(())
}

fn print_metrics(m: &RunMetrics) {
    for (name, t) in [("valence", &m.valence), ("ec", &m.ec)] {
        if let Some(t) = t {
            println!("{} seed {} {name} macro_f1 {:.4}", m.regime, m.seed, t.macro_f1);
        }
    }
}

fn cmd_evaluate(
    corpus: PathBuf,
    model: PathBuf,
    regime: Option<String>,
    out: Option<PathBuf>,
    split_seed: u64,
) -> Result<(), Failure> {
    let trained_for = std::fs::read_to_string(model.join("regime.txt"))
        .map_err(|e| Error::Io { path: model.join("regime.txt"), source: e })?;
    let trained_for = parse_regime(trained_for.trim())?;
    let regime = match regime {
        Some(id) => parse_regime(&id)?,
        None => trained_for,
    };
    if regime.family != trained_for.family {
        return Err(usage(format!("model was trained as {trained_for}, cannot evaluate as {regime}")));
    }
    let exp = experiment(&corpus, split_seed)?;
    let vocab = mtlaffect::encodings::Vocabulary::load(model.join("vocab.txt"))?;
    let trained = TrainedModel::load(regime.family, model.join("model.ckpt"))?;
    let (metrics, records) = trained.evaluate(&exp.test, &vocab, &regime, 0)?;
    if let Some(path) = out {
        write_predictions(&path, &records)?;
        // Re-scoring the dump must give the same numbers.
        let again = metrics_from_records(&read_predictions(&path)?, &regime, 0)?;
        debug_assert_eq!(again, metrics);
    }
    println!("{}", serde_json::to_string(&metrics).expect("serializable"));
    Ok(())
}

fn grid_format(f: FormatArg) -> GridFormat {
    match f {
        FormatArg::Markdown => GridFormat::Markdown,
        FormatArg::Csv => GridFormat::Csv,
    }
}

fn cmd_grid(metrics: Vec<PathBuf>, format: FormatArg, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut by_regime: std::collections::BTreeMap<RegimeConfig, Vec<RunMetrics>> = Default::default();
    for path in &metrics {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        let runs: Vec<RunMetrics> =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        for run in runs {
            by_regime.entry(parse_regime(&run.regime)?).or_default().push(run);
        }
    }
    let mut grid = ResultsGrid::default();
    for (regime, runs) in &by_regime {
        grid.insert_runs(regime, runs)?;
    }
    let text = emit_grid(&grid, grid_format(format));
    match out {
        Some(path) => write_file(&path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// File-system-safe form of a regime id.
fn cell_dir(regime: &RegimeConfig) -> String {
    regime.id().replace(':', "_")
}

#[allow(clippy::too_many_arguments)]
fn cmd_reproduce(
    corpus: PathBuf,
    seeds: usize,
    out: PathBuf,
    jobs: usize,
    config: Option<PathBuf>,
    profile: Profile,
    split_seed: u64,
    regimes: Vec<String>,
) -> Result<(), Failure> {
    if seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let regimes: Vec<RegimeConfig> = if regimes.is_empty() {
        RegimeConfig::grid()
    } else {
        regimes.iter().map(|id| parse_regime(id)).collect::<Result<_, _>>()?
    };
    let file = match &config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            parse_config_text(&text)?
        }
        None => ConfigSource::default(),
    };
    let src = file.with_env(std::env::vars())?;
    for key in ["family", "setting", "oracle", "domain_adapt"] {
        if src.get(key).is_some() {
            return Err(usage(format!("`{key}` cannot be set for reproduce; use --regime")));
        }
    }
    let profile = src.profile(profile)?;
    let config_for = |r: &RegimeConfig| src.apply(&TrainConfig::defaults(r, profile));
    // Surface config errors before any training starts.
    for r in &regimes {
        config_for(r)?;
    }
    let exp = experiment(&corpus, split_seed)?;
    let cells = run_regimes(&regimes, &exp, config_for, seeds, jobs);

    create_dir(&out.join("cells"))?;
    for (regime, outcome) in &cells {
        let dir = out.join("cells").join(cell_dir(regime));
        create_dir(&dir)?;
        match outcome {
            Ok(runs) => {
                let metrics: Vec<&RunMetrics> = runs.iter().map(|r| &r.metrics).collect();
                write_file(&dir.join("metrics.json"), &to_json(&metrics))?;
                let reports: Vec<_> = runs.iter().map(|r| &r.fitted.report).collect();
                write_file(&dir.join("train_log.json"), &to_json(&reports))?;
                for r in runs {
                    write_predictions(dir.join(format!("predictions.seed{}.jsonl", r.metrics.seed)), &r.predictions)?;
                }
            }
            Err(e) => write_file(&dir.join("error.log"), &format!("{e}\n"))?,
        }
    }
    let grid = build_grid(&cells, |r| format!("cells/{}/error.log", cell_dir(r)));
    write_file(&out.join("grid.md"), &emit_grid(&grid, GridFormat::Markdown))?;
    write_file(&out.join("grid.csv"), &emit_grid(&grid, GridFormat::Csv))?;
    print!("{}", emit_grid(&grid, GridFormat::Markdown));
    if grid.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_TRAINING,
            message: format!("{} of {} cells failed", grid.failures.len(), cells.len()),
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { spec, preset, out, seed } => cmd_gen_data(spec, preset, out, seed),
        Command::Stats { corpus, json } => cmd_stats(corpus, json),
        Command::Train { corpus, regime, config, out, profile, split_seed } => {
            cmd_train(corpus, regime, config, out, profile.into(), split_seed)
        }
        Command::Evaluate { corpus, model, regime, out, split_seed } => {
            cmd_evaluate(corpus, model, regime, out, split_seed)
        }
        Command::Grid { metrics, format, out } => cmd_grid(metrics, format, out),
        Command::Reproduce { corpus, seeds, out, jobs, config, profile, split_seed, regimes } => {
            cmd_reproduce(corpus, seeds, out, jobs, config, profile.into(), split_seed, regimes)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
