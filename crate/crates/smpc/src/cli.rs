//! `smpc` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::{info, warn};
use smpc_core::adaptive::OnlineContext;
use smpc_core::model::ExampleId;
use smpc_core::offline::GammaTable;
use smpc_core::roa::RoaGridSpec;
use smpc_core::sim::{trial_table, Controller, Engine, MonteCarloError, MonteCarloRun, RolloutRecord, SimError};
use smpc_core::Error;

use crate::config::{Config, NHatConfig, NHatName};
use crate::io::{self, CompareReport, IoError, RoaSummary, SummaryFile, Timing};
use crate::runner::{self, McPlan};

#[derive(Debug, Parser)]
#[command(name = "smpc", version, about = "Sample-based stochastic MPC experiments")]
pub struct Cli {
    /// JSON configuration (required except for `example`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for montecarlo, roa and compare; 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// proposed | baseline-rr | nominal; overrides `run.controller`.
    #[arg(long, global = true)]
    pub controller: Option<Controller>,
    /// Terminal layers: full | auto | <count>; overrides `run.n_hat`.
    #[arg(long, global = true)]
    pub n_hat: Option<String>,
    /// Add robust input rows to the terminal set.
    #[arg(long, global = true)]
    pub terminal_input_rows: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the gamma table and write gamma.json.
    Offline,
    /// One closed-loop rollout; writes rollout.csv and summary.json.
    Run {
        /// Use this gamma.json instead of drawing offline samples.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Record wall time per solve.
        #[arg(long)]
        timing: bool,
        /// Write every MPC problem to <out>/qp/.
        #[arg(long)]
        dump_qp: bool,
    },
    /// Repeated trials with fresh offline samples; writes rollout.csv and
    /// summary.json.
    Montecarlo {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        timing: bool,
    },
    /// Grid estimate of the initially feasible set for the proposed and
    /// baseline controllers; writes roa.csv and roa.json.
    Roa {
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Proposed against baseline under shared seeds; writes compare.json and
    /// compare.csv.
    Compare {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        draws: Option<usize>,
        /// Use one gamma.json for every trial.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
        /// Also compare grid ROA areas.
        #[arg(long)]
        roa: bool,
    },
    /// Print a built-in configuration (E1, E2 or E3).
    Example { id: String },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Statistics(String),
    #[error("{0}")]
    Breach(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Statistics(_) => 3,
            CliError::Breach(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InsufficientSamples { .. } => CliError::Statistics(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Core(c) => c.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::FeasibilityBreach { .. } => CliError::Breach(e.to_string()),
            SimError::Numerical { .. } => CliError::Numerical(e.to_string()),
            SimError::Setup(inner) => inner.into(),
        }
    }
}

struct Setup {
    config: Config,
    engine: Engine,
    seed: u64,
    controller: Controller,
}

fn parse_n_hat(text: &str) -> Result<NHatConfig, CliError> {
    match text {
        "full" => Ok(NHatConfig::Named(NHatName::Full)),
        "auto" => Ok(NHatConfig::Named(NHatName::Auto)),
        n => n
            .parse()
            .map(NHatConfig::Fixed)
            .map_err(|_| CliError::Usage(format!("--n-hat expects full, auto or a count, got '{n}'"))),
    }
}

impl Cli {
    fn setup(&self) -> Result<Setup, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("--config is required".into()))?;
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut config = Config::from_json(&text)?;
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        if let Some(c) = self.controller {
            config.run.controller = c;
        }
        if let Some(n) = &self.n_hat {
            config.run.n_hat = parse_n_hat(n)?;
        }
        if self.terminal_input_rows {
            config.run.terminal_input_rows = true;
        }
        let scenario = config.scenario()?;
        let engine = Engine::new(&scenario, config.terminal_options())?;
        fs::create_dir_all(&self.out).map_err(|e| CliError::Usage(format!("{}: {e}", self.out.display())))?;
        Ok(Setup {
            seed: config.run.seed,
            controller: config.run.controller,
            config,
            engine,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        runner::pool(self.threads).map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// Table from a file, or trial 0's offline samples for `seed`.
fn table_for(setup: &Setup, path: Option<&Path>) -> Result<GammaTable, CliError> {
    match path {
        Some(p) => Ok(io::read_gamma(p, setup.engine.scenario())?),
        None => {
            let started = Instant::now();
            let table = trial_table(&setup.engine, &setup.config.offline_settings(), setup.seed, 0)?;
            info!("offline phase took {:.3} ms", started.elapsed().as_secs_f64() * 1e3);
            Ok(table)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Example { id } => {
            let id: ExampleId = id.parse()?;
            println!("{}", Config::example(id).to_json());
            Ok(())
        }
        Command::Offline => offline(cli),
        Command::Run { table, timing, dump_qp } => run(cli, table.as_deref(), *timing, *dump_qp),
        Command::Montecarlo { trials, draws, timing } => montecarlo(cli, *trials, *draws, *timing),
        Command::Roa {
            resolution,
            scale,
            table,
        } => roa(cli, *resolution, *scale, table.as_deref()),
        Command::Compare {
            trials,
            draws,
            table,
            timing,
            roa,
        } => compare(cli, *trials, *draws, table.as_deref(), *timing, *roa),
    }
}

fn offline(cli: &Cli) -> Result<(), CliError> {
    let setup = cli.setup()?;
    let table = table_for(&setup, None)?;
    io::write_gamma(&cli.out("gamma.json"), &table)?;
    let worst_beta = table.beta.iter().flatten().copied().fold(0.0, f64::max);
    println!(
        "gamma table: T = {}, p = {}, N_s = {}, rank = {}, max beta = {:.3e}",
        table.horizon(),
        table.rows(),
        table.n_samples,
        table.rank,
        worst_beta
    );
    for (t, (g, m)) in table.gamma.iter().zip(&table.method).enumerate() {
        let entries: Vec<String> = g
            .iter()
            .zip(m)
            .map(|(g, m)| format!("{g:.4} ({})", m.as_str()))
            .collect();
        println!("t = {t:2}: {}", entries.join("  "));
    }
    Ok(())
}

fn summary_of(run: &MonteCarloRun, timing: bool) -> SummaryFile {
    let mut s = SummaryFile::from(&run.summary);
    if timing {
        s.timing = Timing::from_records(run.records.iter().flatten());
    }
    s
}

fn write_records(cli: &Cli, setup: &Setup, records: &[Vec<RolloutRecord>]) -> Result<(), CliError> {
    let rows = records
        .iter()
        .enumerate()
        .flat_map(|(r, trial)| trial.iter().enumerate().map(move |(d, rec)| (r, d, rec)));
    io::write_rollouts(&cli.out("rollout.csv"), setup.engine.scenario(), rows)?;
    Ok(())
}

/// Writes what completed, then reports the abort.
fn handle_abort(cli: &Cli, e: MonteCarloError) -> CliError {
    let mut s = SummaryFile::from(e.partial.as_ref());
    s.error = Some(e.error.to_string());
    if let Err(w) = io::write_json(&cli.out("summary.json"), &s) {
        warn!("could not write partial summary: {w}");
    }
    e.error.into()
}

fn print_summary(s: &SummaryFile) {
    println!(
        "{}: avg cost {}, best trial {}, max violation rate {:.4}, infeasible at start {}, fallbacks {}, audit failures {} (input rows {})",
        s.controller,
        s.avg_cost.map_or("n/a".into(), |c| format!("{c:.2}")),
        s.best_trial_avg_cost.map_or("n/a".into(), |c| format!("{c:.2}")),
        s.max_violation_rate,
        s.infeasible_at_start,
        s.fallbacks,
        s.audit_failures,
        s.input_audit_failures
    );
    if let Some(t) = &s.timing {
        println!(
            "  solve time: mean {:.4} ms, max {:.4} ms over {} solves",
            t.mean_solve_ms, t.max_solve_ms, t.solves
        );
    }
}

fn run(cli: &Cli, table: Option<&Path>, timing: bool, dump_qp: bool) -> Result<(), CliError> {
    let setup = cli.setup()?;
    let table = table_for(&setup, table)?;
    let plan = McPlan {
        controller: setup.controller,
        trials: 1,
        draws: 1,
        base_seed: setup.seed,
        timing,
    };
    let run = runner::monte_carlo(
        &runner::pool(1).expect("one thread"),
        &setup.engine,
        &setup.config.offline_settings(),
        plan,
        Some(&table),
    )
    .map_err(|e| handle_abort(cli, e))?;
    let record = &run.records[0][0];
    if record.infeasible_at_start {
        warn!("the first MPC problem is infeasible from x_start");
    }
    write_records(cli, &setup, &run.records)?;
    let summary = summary_of(&run, timing);
    io::write_json(&cli.out("summary.json"), &summary)?;
    if dump_qp {
        dump_problems(cli, &setup, &table, record)?;
    }
    print_summary(&summary);
    Ok(())
}

fn dump_problems(cli: &Cli, setup: &Setup, table: &GammaTable, record: &RolloutRecord) -> Result<(), CliError> {
    let dir = cli.out("qp");
    fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    let scenario = setup.engine.scenario();
    let acl = scenario.system.closed_loop();
    let mut ctx = OnlineContext::new(scenario.system.state_dim());
    for (t, step) in record.steps.iter().enumerate() {
        if matches!(step.kind, smpc_core::sim::StepKind::OpenLoop) {
            break;
        }
        let problem = setup.engine.problem(setup.controller, table, &ctx, &record.states[t]);
        io::write_text(&dir.join(format!("t{t:03}.txt")), &problem.dump())?;
        if let Some(w) = record.disturbances.get(t) {
            ctx.push(w.clone(), &acl);
        }
    }
    Ok(())
}

fn montecarlo(cli: &Cli, trials: Option<usize>, draws: Option<usize>, timing: bool) -> Result<(), CliError> {
    let setup = cli.setup()?;
    let plan = McPlan {
        controller: setup.controller,
        trials: trials.unwrap_or(setup.config.run.trials),
        draws: draws.unwrap_or(setup.config.run.draws),
        base_seed: setup.seed,
        timing,
    };
    if plan.trials == 0 || plan.draws == 0 {
        return Err(CliError::Usage("trials and draws must be at least 1".into()));
    }
    let run = runner::monte_carlo(
        &cli.pool()?,
        &setup.engine,
        &setup.config.offline_settings(),
        plan,
        None,
    )
    .map_err(|e| handle_abort(cli, e))?;
    write_records(cli, &setup, &run.records)?;
    let summary = summary_of(&run, timing);
    io::write_json(&cli.out("summary.json"), &summary)?;
    print_summary(&summary);
    Ok(())
}

fn roa_grids(
    cli: &Cli,
    setup: &Setup,
    table: &GammaTable,
    resolution: Option<usize>,
    scale: Option<f64>,
) -> Result<RoaSummary, CliError> {
    let spec = RoaGridSpec::around_state_box(
        &setup.engine,
        scale.unwrap_or(setup.config.run.roa_scale),
        resolution.unwrap_or(setup.config.run.roa_resolution),
    )?;
    if spec.dim() > 3 {
        return Err(CliError::Usage("grid ROA supports at most 3 state dimensions".into()));
    }
    let pool = cli.pool()?;
    let proposed = runner::estimate_roa(&pool, &setup.engine, table, Controller::Proposed, &spec);
    let baseline = runner::estimate_roa(&pool, &setup.engine, table, Controller::BaselineRr, &spec);
    io::write_roa_csv(
        &cli.out("roa.csv"),
        &[(Controller::Proposed, &proposed), (Controller::BaselineRr, &baseline)],
    )?;
    Ok(RoaSummary::new(&proposed, &baseline))
}

fn print_roa(s: &RoaSummary) {
    for a in &s.areas {
        println!("{}: {} cells, area {:.4}", a.controller, a.cells, a.area);
    }
    println!(
        "area ratio proposed/baseline: {}; baseline cells missing from proposed: {}",
        s.ratio.map_or("n/a".into(), |r| format!("{r:.4}")),
        s.baseline_cells_missing
    );
}

fn roa(cli: &Cli, resolution: Option<usize>, scale: Option<f64>, table: Option<&Path>) -> Result<(), CliError> {
    let setup = cli.setup()?;
    let table = table_for(&setup, table)?;
    let summary = roa_grids(cli, &setup, &table, resolution, scale)?;
    io::write_json(&cli.out("roa.json"), &summary)?;
    print_roa(&summary);
    Ok(())
}

fn compare(
    cli: &Cli,
    trials: Option<usize>,
    draws: Option<usize>,
    table: Option<&Path>,
    timing: bool,
    with_roa: bool,
) -> Result<(), CliError> {
    let setup = cli.setup()?;
    let fixed = table.map(|p| io::read_gamma(p, setup.engine.scenario())).transpose()?;
    let pool = cli.pool()?;
    let mut summaries = Vec::new();
    for controller in [Controller::Proposed, Controller::BaselineRr] {
        let plan = McPlan {
            controller,
            trials: trials.unwrap_or(setup.config.run.trials),
            draws: draws.unwrap_or(setup.config.run.draws),
            base_seed: setup.seed,
            timing,
        };
        if plan.trials == 0 || plan.draws == 0 {
            return Err(CliError::Usage("trials and draws must be at least 1".into()));
        }
        let run = runner::monte_carlo(
            &pool,
            &setup.engine,
            &setup.config.offline_settings(),
            plan,
            fixed.as_ref(),
        )
        .map_err(|e| handle_abort(cli, e))?;
        summaries.push(summary_of(&run, timing));
    }
    let baseline = summaries.pop().expect("two runs");
    let proposed = summaries.pop().expect("two runs");
    let roa = if with_roa {
        let table = match &fixed {
            Some(t) => t.clone(),
            None => table_for(&setup, None)?,
        };
        Some(roa_grids(cli, &setup, &table, None, None)?)
    } else {
        None
    };
    let pct = |b: Option<f64>, p: Option<f64>| b.zip(p).and_then(|(b, p)| io::improvement_pct(b, p));
    let report = CompareReport {
        improvement_pct: pct(baseline.avg_cost, proposed.avg_cost),
        best_improvement_pct: pct(baseline.best_trial_avg_cost, proposed.best_trial_avg_cost),
        proposed,
        baseline,
        roa,
    };
    io::write_json(&cli.out("compare.json"), &report)?;
    io::write_compare_csv(&cli.out("compare.csv"), &report)?;
    print_summary(&report.proposed);
    print_summary(&report.baseline);
    println!(
        "improvement: {}",
        report.improvement_pct.map_or("n/a".into(), |v| format!("{v:.3} %"))
    );
    if let Some(r) = &report.roa {
        print_roa(r);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_exit_codes() {
        let breach = SimError::FeasibilityBreach {
            t: 3,
            residual: 0.1,
            detail: String::new(),
        };
        assert_eq!(CliError::from(breach).exit_code(), 4);
        assert_eq!(CliError::from(SimError::Numerical { t: 0 }).exit_code(), 5);
        let few = Error::InsufficientSamples {
            required: 10,
            available: 5,
            alpha: 0.1,
        };
        assert_eq!(CliError::from(SimError::Setup(few)).exit_code(), 3);
        assert_eq!(CliError::from(Error::TableMismatch).exit_code(), 2);
    }

    #[test]
    fn n_hat_flag_values() {
        assert_eq!(parse_n_hat("full").unwrap(), NHatConfig::Named(NHatName::Full));
        assert_eq!(parse_n_hat("3").unwrap(), NHatConfig::Fixed(3));
        assert!(parse_n_hat("many").is_err());
    }
}
