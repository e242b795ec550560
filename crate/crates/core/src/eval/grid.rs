use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{aggregate_runs, Aggregate, RunMetrics};
use crate::encodings::{Task, TaskOrder};
use crate::regime::{Family, RegimeConfig, Setting};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GridRow {
    Disc,
    Gen,
    GenDomainAdapt,
}

impl GridRow {
    pub const ALL: [GridRow; 3] = [Self::Disc, Self::Gen, Self::GenDomainAdapt];

    pub fn label(self) -> &'static str {
        match self {
            Self::Disc => "disc",
            Self::Gen => "gen",
            Self::GenDomainAdapt => "gen + domain adapt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GridColumn {
    Single,
    ValEc,
    EcVal,
    GroundTruth,
    Joint,
}

impl GridColumn {
    pub const ALL: [GridColumn; 5] = [Self::Single, Self::ValEc, Self::EcVal, Self::GroundTruth, Self::Joint];

    pub fn label(self) -> &'static str {
        match self {
            Self::Single => "Single",
            Self::ValEc => "Val→EC",
            Self::EcVal => "EC→Val",
            Self::GroundTruth => "w. ground truth",
            Self::Joint => "Joint",
        }
    }
}

const TASKS: [Task; 2] = [Task::Valence, Task::Ec];

fn section(task: Task) -> &'static str {
    match task {
        Task::Valence => "Valence",
        Task::Ec => "EC",
    }
}

/// Where a regime's metric for `task` lands, if anywhere. Oracle regimes
/// only fill the ground-truth column of their second task.
pub fn grid_cell(regime: &RegimeConfig, task: Task) -> Option<(GridRow, GridColumn)> {
    if !regime.setting.tasks().contains(&task) {
        return None;
    }
    let row = match (regime.family, regime.domain_adapt) {
        (Family::Disc, _) => GridRow::Disc,
        (Family::Gen, false) => GridRow::Gen,
        (Family::Gen, true) => GridRow::GenDomainAdapt,
    };
    let column = match regime.setting {
        Setting::Single(_) => GridColumn::Single,
        Setting::Joint => GridColumn::Joint,
        Setting::TwoStep(order) if regime.oracle => {
            if order.second() != task {
                return None;
            }
            GridColumn::GroundTruth
        }
        Setting::TwoStep(TaskOrder::ValFirst) => GridColumn::ValEc,
        Setting::TwoStep(TaskOrder::EcFirst) => GridColumn::EcVal,
    };
    Some((row, column))
}

/// Mean ± stdev macro-F1 per (task, row, column); a cell exists only if its
/// regime ran.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsGrid {
    pub cells: BTreeMap<(Task, GridRow, GridColumn), Aggregate>,
    /// Regime id and error message of cells that failed.
    pub failures: Vec<(String, String)>,
}

impl ResultsGrid {
    pub fn insert_runs(&mut self, regime: &RegimeConfig, runs: &[RunMetrics]) -> Result<()> {
        for task in TASKS {
            if let Some((row, col)) = grid_cell(regime, task) {
                self.cells.insert((task, row, col), aggregate_runs(runs, task)?);
            }
        }
        Ok(())
    }

    pub fn record_failure(&mut self, regime: &RegimeConfig, message: impl Into<String>) {
        self.failures.push((regime.id(), message.into()));
        self.failures.sort();
    }

    pub fn get(&self, task: Task, row: GridRow, col: GridColumn) -> Option<&Aggregate> {
        self.cells.get(&(task, row, col))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for GridFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(crate::Error::InvalidArgument(format!("unknown grid format `{s}`"))),
        }
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Renders the grid with fixed row and column order. Markdown shows
/// `mean ± stdev` percentages; CSV is one line per cell.
pub fn emit_grid(grid: &ResultsGrid, format: GridFormat) -> String {
    let mut out = String::new();
    match format {
        GridFormat::Markdown => {
            out.push_str("| Model |");
            for task in TASKS {
                for col in GridColumn::ALL {
                    let _ = write!(out, " {} {} |", section(task), col.label());
                }
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(TASKS.len() * GridColumn::ALL.len()));
            out.push('\n');
            for row in GridRow::ALL {
                if !grid.cells.keys().any(|&(_, r, _)| r == row) {
                    continue;
                }
                let _ = write!(out, "| {} |", row.label());
                for task in TASKS {
                    for col in GridColumn::ALL {
                        match grid.get(task, row, col) {
                            Some(a) => {
                                let _ = write!(out, " {} ± {} |", pct(a.mean), pct(a.stdev));
                            }
                            None => out.push_str(" |"),
                        }
                    }
                }
                out.push('\n');
            }
            if !grid.failures.is_empty() {
                out.push_str("\nFailed cells:\n");
                for (id, msg) in &grid.failures {
                    let _ = writeln!(out, "- {id}: {msg}");
                }
            }
        }
        GridFormat::Csv => {
            out.push_str("task,model,setting,mean,stdev,n\n");
            for ((task, row, col), a) in &grid.cells {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    section(*task),
                    row.label(),
                    col.label(),
                    pct(a.mean),
                    pct(a.stdev),
                    a.n
                );
            }
        }
    }
    out
}
