//! Artifact formats: `gamma.json`, `rollout.csv`, `summary.json`,
//! `roa.csv`/`roa.json` and `compare.json`/`compare.csv`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smpc_core::offline::{scenario_fingerprint, GammaMethod, GammaTable};
use smpc_core::roa::RoaGrid;
use smpc_core::sim::{Controller, MonteCarloSummary, RolloutRecord};
use smpc_core::{Error, Scenario};

use crate::config::Rows;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error(transparent)]
    Core(#[from] Error),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(file_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// On-disk gamma table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaFile {
    pub alpha: f64,
    #[serde(rename = "N_s")]
    pub n_samples: usize,
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub p: usize,
    pub rank: usize,
    pub gamma: Rows,
    pub beta: Rows,
    pub method: Vec<Vec<GammaMethod>>,
    pub fingerprint: u64,
}

impl From<&GammaTable> for GammaFile {
    fn from(t: &GammaTable) -> Self {
        Self {
            alpha: t.alpha,
            n_samples: t.n_samples,
            seed: t.seed,
            horizon: t.horizon(),
            p: t.rows(),
            rank: t.rank,
            gamma: t.gamma.clone(),
            beta: t.beta.clone(),
            method: t.method.clone(),
            fingerprint: t.fingerprint,
        }
    }
}

impl GammaFile {
    /// Checks shape and fingerprint against the scenario it will drive.
    pub fn into_table(self, scenario: &Scenario) -> Result<GammaTable, Error> {
        let shape_ok = self.horizon >= 1
            && self.gamma.len() == self.horizon
            && self.beta.len() == self.horizon
            && self.method.len() == self.horizon
            && self.gamma.iter().chain(&self.beta).all(|r| r.len() == self.p)
            && self.method.iter().all(|r| r.len() == self.p);
        if !shape_ok {
            return Err(Error::InvalidConfig(format!(
                "gamma table arrays do not match T = {} and p = {}",
                self.horizon, self.p
            )));
        }
        let expected = scenario_fingerprint(&scenario.system, &scenario.constraints, &scenario.disturbance.support);
        if self.fingerprint != expected
            || self.p != scenario.constraints.state_rows()
            || self.horizon != scenario.task.horizon
            || self.alpha != scenario.constraints.alpha
        {
            return Err(Error::TableMismatch);
        }
        Ok(GammaTable {
            alpha: self.alpha,
            n_samples: self.n_samples,
            seed: self.seed,
            rank: self.rank,
            gamma: self.gamma,
            beta: self.beta,
            method: self.method,
            fingerprint: self.fingerprint,
        })
    }
}

pub fn write_gamma(path: &Path, table: &GammaTable) -> Result<(), IoError> {
    write_json(path, &GammaFile::from(table))
}

pub fn read_gamma(path: &Path, scenario: &Scenario) -> Result<GammaTable, IoError> {
    Ok(read_json::<GammaFile>(path)?.into_table(scenario)?)
}

fn joined<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per time step `t = 0..=T`; `u`, `w` and the step fields are
/// empty on the final state row. Row indices are zero-based; dropped rows
/// are written as `k:i` with `k` the prediction step.
pub fn write_rollouts<'a>(
    path: &Path,
    scenario: &Scenario,
    records: impl IntoIterator<Item = (usize, usize, &'a RolloutRecord)>,
) -> Result<(), IoError> {
    let n = scenario.system.state_dim();
    let m = scenario.system.input_dim();
    let mut out = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header: Vec<String> = vec!["trial".into(), "draw".into(), "t".into()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.extend((1..=n).map(|i| format!("w_{i}")));
    header.extend(
        ["status", "solve_ms", "violated_rows", "dropped_rows", "cost_to_date"]
            .iter()
            .map(|s| s.to_string()),
    );
    out.write_record(&header).map_err(csv_err(path))?;
    for (trial, draw, rec) in records {
        let costs = rec.cost_to_date(scenario);
        for (t, x) in rec.states.iter().enumerate() {
            let mut row = vec![trial.to_string(), draw.to_string(), t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            let step = rec.steps.get(t);
            match (rec.inputs.get(t), rec.disturbances.get(t)) {
                (Some(u), Some(w)) => {
                    row.extend(u.iter().map(f64::to_string));
                    row.extend(w.iter().map(f64::to_string));
                }
                _ => row.extend(std::iter::repeat_n(String::new(), m + n)),
            }
            let status = match step {
                Some(s) if rec.infeasible_at_start => {
                    format!("infeasible-at-start ({})", s.kind.label())
                }
                Some(s) => s.kind.label().to_string(),
                None => "final".to_string(),
            };
            row.push(status);
            row.push(opt(step.and_then(|s| s.solve_ms)));
            let violated = rec.violations.get(t).map_or_else(Vec::new, |v| {
                v.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
            });
            row.push(joined(violated));
            row.push(joined(
                step.map_or(&[][..], |s| &s.dropped[..])
                    .iter()
                    .map(|(k, i)| format!("{k}:{i}")),
            ));
            row.push(opt(costs.get(t).copied()));
            out.write_record(&row).map_err(csv_err(path))?;
        }
    }
    out.flush().map_err(file_err(path))
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Solve-time statistics, present only when timing was requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub solves: usize,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offline_ms: Option<f64>,
}

impl Timing {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a RolloutRecord>) -> Option<Self> {
        let times: Vec<f64> = records
            .into_iter()
            .flat_map(|r| r.steps.iter().filter_map(|s| s.solve_ms))
            .collect();
        if times.is_empty() {
            return None;
        }
        Some(Self {
            solves: times.len(),
            mean_solve_ms: times.iter().sum::<f64>() / times.len() as f64,
            max_solve_ms: times.iter().copied().fold(0.0, f64::max),
            offline_ms: None,
        })
    }
}

/// `summary.json`; non-finite statistics are written as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub controller: Controller,
    pub trials: usize,
    pub draws: usize,
    pub base_seed: u64,
    pub avg_cost: Option<f64>,
    pub best_trial_avg_cost: Option<f64>,
    pub trial_avg_costs: Vec<Option<f64>>,
    pub max_violation_rate: f64,
    pub violation_rates: Rows,
    pub infeasible_at_start: usize,
    pub online_infeasible: usize,
    pub fallbacks: usize,
    pub solves: usize,
    pub max_audit_residual: Option<f64>,
    pub audit_failures: usize,
    pub max_input_audit_residual: Option<f64>,
    pub input_audit_failures: usize,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl From<&MonteCarloSummary> for SummaryFile {
    fn from(s: &MonteCarloSummary) -> Self {
        Self {
            controller: s.controller,
            trials: s.trials,
            draws: s.draws,
            base_seed: s.base_seed,
            avg_cost: finite(s.avg_cost),
            best_trial_avg_cost: finite(s.best_trial_avg_cost),
            trial_avg_costs: s.trial_avg_costs.iter().map(|c| finite(*c)).collect(),
            max_violation_rate: s.max_violation_rate,
            violation_rates: s.violation_rates.clone(),
            infeasible_at_start: s.infeasible_at_start,
            online_infeasible: s.online_infeasible,
            fallbacks: s.fallbacks,
            solves: s.solves,
            max_audit_residual: finite(s.max_audit_residual),
            audit_failures: s.audit_failures,
            max_input_audit_residual: finite(s.max_input_audit_residual),
            input_audit_failures: s.input_audit_failures,
            complete: s.complete,
            error: None,
            timing: None,
        }
    }
}

/// Long format: one row per controller and cell.
pub fn write_roa_csv(path: &Path, grids: &[(Controller, &RoaGrid)]) -> Result<(), IoError> {
    let mut out = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let dim = grids.first().map_or(0, |(_, g)| g.spec.dim());
    let mut header = vec!["controller".to_string()];
    header.extend((1..=dim).map(|d| format!("x{d}")));
    header.push("feasible".into());
    out.write_record(&header).map_err(csv_err(path))?;
    for (controller, grid) in grids {
        for (cell, ok) in grid.feasible.iter().enumerate() {
            let mut row = vec![controller.name().to_string()];
            row.extend(grid.spec.center(cell).iter().map(f64::to_string));
            row.push(u8::from(*ok).to_string());
            out.write_record(&row).map_err(csv_err(path))?;
        }
    }
    out.flush().map_err(file_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoaArea {
    pub controller: Controller,
    pub cells: usize,
    pub area: f64,
}

/// `roa.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoaSummary {
    pub method: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
    pub cell_area: f64,
    pub areas: Vec<RoaArea>,
    /// Proposed over baseline area.
    pub ratio: Option<f64>,
    /// Baseline-feasible cells that are infeasible for the proposed
    /// controller.
    pub baseline_cells_missing: usize,
}

impl RoaSummary {
    pub fn new(proposed: &RoaGrid, baseline: &RoaGrid) -> Self {
        let spec = &proposed.spec;
        Self {
            method: "grid-ROA".into(),
            lower: spec.lower.clone(),
            upper: spec.upper.clone(),
            resolution: spec.resolution.clone(),
            cell_area: spec.cell_area(),
            areas: vec![
                RoaArea {
                    controller: Controller::Proposed,
                    cells: proposed.count(),
                    area: proposed.area(),
                },
                RoaArea {
                    controller: Controller::BaselineRr,
                    cells: baseline.count(),
                    area: baseline.area(),
                },
            ],
            ratio: (baseline.count() > 0).then(|| proposed.area() / baseline.area()),
            baseline_cells_missing: proposed.missing_from(baseline),
        }
    }
}

/// `compare.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub proposed: SummaryFile,
    pub baseline: SummaryFile,
    /// `(baseline - proposed) / baseline * 100` on average cost.
    pub improvement_pct: Option<f64>,
    pub best_improvement_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roa: Option<RoaSummary>,
}

pub fn improvement_pct(baseline: f64, proposed: f64) -> Option<f64> {
    let v = (baseline - proposed) / baseline * 100.0;
    v.is_finite().then_some(v)
}

pub fn write_compare_csv(path: &Path, report: &CompareReport) -> Result<(), IoError> {
    let mut out = csv::Writer::from_path(path).map_err(csv_err(path))?;
    out.write_record([
        "controller",
        "avg_cost",
        "best_trial_avg_cost",
        "improvement_pct",
        "max_violation_rate",
        "infeasible_at_start",
        "online_infeasible",
        "fallbacks",
        "audit_failures",
        "mean_solve_ms",
        "roa_area",
    ])
    .map_err(csv_err(path))?;
    for (s, improvement) in [(&report.proposed, report.improvement_pct), (&report.baseline, None)] {
        let area = report
            .roa
            .as_ref()
            .and_then(|r| r.areas.iter().find(|a| a.controller == s.controller).map(|a| a.area));
        out.write_record([
            s.controller.name().to_string(),
            opt(s.avg_cost),
            opt(s.best_trial_avg_cost),
            opt(improvement),
            s.max_violation_rate.to_string(),
            s.infeasible_at_start.to_string(),
            s.online_infeasible.to_string(),
            s.fallbacks.to_string(),
            s.audit_failures.to_string(),
            opt(s.timing.as_ref().map(|t| t.mean_solve_ms)),
            opt(area),
        ])
        .map_err(csv_err(path))?;
    }
    out.flush().map_err(file_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let mut f = fs::File::create(path).map_err(file_err(path))?;
    f.write_all(text.as_bytes()).map_err(file_err(path))
}
