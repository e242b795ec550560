mod id;
mod run;

pub use id::{Family, RegimeConfig, Setting};
pub use run::{
    build_grid, fit, run_regime, run_regime_detailed, run_regimes, selection_metric, CellResult,
    Experiment, FitReport, Fitted, SeedRun, TrainedModel,
};
