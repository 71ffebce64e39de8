//! Closed-loop rollouts and Monte Carlo aggregation.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::adaptive::{OnlineContext, SetBuilder, TerminalOptions, TerminalSet, TighteningPlan};
use crate::model::{ConstraintSpec, Scenario};
use crate::mpc::{shifted_candidate, Predictor, QpProblem, RowTag, SolveStatus};
use crate::offline::{build_gamma_table, GammaTable, OfflineSettings};
use crate::qp::{DualActiveSet, QpSolver};
use crate::rng::{draw_seed, trial_seed, ONLINE_STREAM};
use crate::{Error, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Controller {
    /// Realization-adaptive tightening.
    Proposed,
    /// Fixed tightening: robust reachability plus a one-step quantile.
    BaselineRr,
    /// No tightening.
    Nominal,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::Proposed => "proposed",
            Controller::BaselineRr => "baseline-rr",
            Controller::Nominal => "nominal",
        }
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Controller {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Ok(Controller::Proposed),
            "baseline-rr" | "baseline" => Ok(Controller::BaselineRr),
            "nominal" => Ok(Controller::Nominal),
            _ => Err(Error::InvalidConfig(format!("unknown controller '{s}'"))),
        }
    }
}

/// Wall-clock hook for solve timing; the core crate has no clock.
pub trait SolveTimer {
    fn start(&mut self);
    /// Milliseconds since `start`, if measured.
    fn stop(&mut self) -> Option<f64>;
}

pub struct NoTimer;

impl SolveTimer for NoTimer {
    fn start(&mut self) {}

    fn stop(&mut self) -> Option<f64> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Solved(SolveStatus),
    /// Solve failed; the shifted previous plan was applied instead.
    Fallback(SolveStatus),
    /// Tail step after the last solve, applying the stored plan.
    OpenLoop,
}

impl StepKind {
    pub fn label(self) -> &'static str {
        match self {
            StepKind::Solved(s) => s.as_str(),
            StepKind::Fallback(_) => "fallback",
            StepKind::OpenLoop => "open-loop",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub kind: StepKind,
    pub solve_ms: Option<f64>,
    /// `(k, i)` state rows dropped by the tightening plan.
    pub dropped: Vec<(usize, usize)>,
    /// Largest scaled violation of the previous shifted plan over this
    /// step's state and terminal rows (`None` at `t = 0` and in the tail).
    pub audit: Option<f64>,
    /// Same over the input rows.
    pub input_audit: Option<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutRecord {
    pub controller: Controller,
    pub seed: u64,
    /// The first problem had no solution; only `x(0)` is recorded.
    pub infeasible_at_start: bool,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub disturbances: Vec<Vector>,
    pub steps: Vec<StepLog>,
    /// `[t][i]`: `[H]_i x(t) > h_i`.
    pub violations: Vec<Vec<bool>>,
    pub cost: f64,
}

impl RolloutRecord {
    pub fn fallbacks(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s.kind, StepKind::Fallback(_)))
            .count()
    }

    pub fn solves(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| !matches!(s.kind, StepKind::OpenLoop))
            .count()
    }

    pub fn max_audit(&self) -> Option<f64> {
        self.steps.iter().filter_map(|s| s.audit).reduce(f64::max)
    }

    /// Running cost up to and including step `t`.
    pub fn cost_to_date(&self, scenario: &Scenario) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.inputs.len() + 1);
        for (t, u) in self.inputs.iter().enumerate() {
            acc += scenario.task.stage_cost(&self.states[t], u);
            out.push(acc);
        }
        if let Some(last) = self.states.get(self.inputs.len()) {
            if !self.inputs.is_empty() {
                acc += scenario.task.final_cost(last);
                out.push(acc);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// The proposed controller lost feasibility, or its shifted plan failed
    /// the next problem's constraints.
    FeasibilityBreach {
        t: usize,
        residual: f64,
        detail: String,
    },
    Numerical {
        t: usize,
    },
    Setup(Error),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::FeasibilityBreach { t, residual, detail } => {
                write!(
                    f,
                    "recursive feasibility breached at t = {t} (residual {residual:e}): {detail}"
                )
            }
            SimError::Numerical { t } => write!(f, "QP solver failed numerically at t = {t}"),
            SimError::Setup(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for SimError {
    fn from(e: Error) -> Self {
        SimError::Setup(e)
    }
}

/// Per-scenario machinery shared by all rollouts.
#[derive(Clone, Debug)]
pub struct Engine {
    scenario: Scenario,
    builder: SetBuilder,
    predictor: Predictor,
    /// Allowed row violation of the shifted plan (scaled by `1 + |offset|`).
    pub audit_tol: f64,
}

impl Engine {
    pub fn new(scenario: &Scenario, options: TerminalOptions) -> Result<Self, Error> {
        let problems = scenario.validate();
        if let Some(v) = problems.first() {
            return Err(Error::InvalidConfig(format!("{v}")));
        }
        Self::new_unvalidated(scenario, options)
    }

    /// Skips the scenario checks, e.g. for marginally stable closed loops.
    pub fn new_unvalidated(scenario: &Scenario, options: TerminalOptions) -> Result<Self, Error> {
        Ok(Self {
            scenario: scenario.clone(),
            builder: SetBuilder::new(scenario, options),
            predictor: Predictor::new(&scenario.system, &scenario.task)?,
            audit_tol: 1e-6,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn builder(&self) -> &SetBuilder {
        &self.builder
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn sets(
        &self,
        controller: Controller,
        table: &GammaTable,
        ctx: &OnlineContext,
    ) -> (TighteningPlan, TerminalSet) {
        let t = ctx.t();
        match controller {
            Controller::Proposed => (
                self.builder.proposed_plan(table, ctx),
                self.builder.proposed_terminal(table, ctx),
            ),
            Controller::BaselineRr => (
                self.builder.baseline_plan(table, t),
                self.builder.baseline_terminal(table, t),
            ),
            Controller::Nominal => (self.builder.nominal_plan(t), self.builder.nominal_terminal(t)),
        }
    }

    pub fn problem(&self, controller: Controller, table: &GammaTable, ctx: &OnlineContext, x: &Vector) -> QpProblem {
        let (plan, terminal) = self.sets(controller, table, ctx);
        self.predictor.assemble(x, &plan, &terminal, &self.scenario.constraints)
    }

    /// Scaled violation over the input rows (`inputs`) or all other rows.
    fn audit_residual(problem: &QpProblem, z: &Vector, inputs: bool) -> f64 {
        let lhs = &problem.qp.rows * z;
        (0..problem.qp.constraints())
            .filter(|r| matches!(problem.tags[*r], RowTag::Input { .. }) == inputs)
            .map(|r| (lhs[r] - problem.qp.offsets[r]) / (1.0 + problem.qp.offsets[r].abs()))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn state_violations(&self, x: &Vector) -> Vec<bool> {
        let h = &self.scenario.constraints.state;
        let lhs = &h.normals * x;
        (0..h.rows()).map(|i| lhs[i] > h.offsets[i]).collect()
    }

    /// One closed-loop run of `T` steps with disturbances from `seed`.
    pub fn rollout(
        &self,
        table: &GammaTable,
        controller: Controller,
        seed: u64,
        solver: &mut dyn QpSolver,
        timer: &mut dyn SolveTimer,
    ) -> Result<RolloutRecord, SimError> {
        let s = &self.scenario;
        let horizon = s.task.horizon;
        let n_mpc = s.task.mpc_horizon;
        let m = s.system.input_dim();
        let acl = s.system.closed_loop();
        let mut sampler = s.disturbance.with_seed(seed).sampler(ONLINE_STREAM);
        let mut ctx = OnlineContext::new(s.system.state_dim());
        let mut x = s.task.x_start.clone();
        let mut record = RolloutRecord {
            controller,
            seed,
            infeasible_at_start: false,
            states: vec![x.clone()],
            inputs: Vec::new(),
            disturbances: Vec::new(),
            steps: Vec::new(),
            violations: vec![self.state_violations(&x)],
            cost: 0.0,
        };
        let mut plan_z: Option<Vector> = None;
        let last_solve = horizon - n_mpc;

        for t in 0..horizon {
            let u = if t <= last_solve {
                let problem = self.problem(controller, table, &ctx, &x);
                let candidate = plan_z.as_ref().map(|z| shifted_candidate(z, m));
                let audit = candidate.as_ref().map(|c| Self::audit_residual(&problem, c, false));
                let input_audit = candidate.as_ref().map(|c| Self::audit_residual(&problem, c, true));
                timer.start();
                let sol = self.predictor.solve(&problem, solver);
                let solve_ms = timer.stop();
                let dropped = match controller {
                    Controller::Proposed => self.builder.proposed_plan(table, &ctx).dropped(),
                    _ => Vec::new(),
                };
                if controller == Controller::Proposed {
                    if let Some(res) = audit.filter(|r| *r > self.audit_tol) {
                        let rows: Vec<_> = problem
                            .violated_rows(candidate.as_ref().unwrap(), self.audit_tol)
                            .into_iter()
                            .filter(|(tag, _)| !matches!(tag, RowTag::Input { .. }))
                            .collect();
                        return Err(SimError::FeasibilityBreach {
                            t,
                            residual: res,
                            detail: format!("shifted plan violates {rows:?}"),
                        });
                    }
                }
                let kind;
                let z = match sol.status {
                    SolveStatus::Optimal => {
                        kind = StepKind::Solved(SolveStatus::Optimal);
                        sol.z.clone()
                    }
                    status if t == 0 => {
                        if status == SolveStatus::NumericalFailure {
                            return Err(SimError::Numerical { t });
                        }
                        record.infeasible_at_start = true;
                        record.steps.push(StepLog {
                            kind: StepKind::Solved(status),
                            solve_ms,
                            dropped,
                            audit,
                            input_audit,
                            iterations: sol.iterations,
                        });
                        return Ok(record);
                    }
                    SolveStatus::NumericalFailure if controller == Controller::Proposed => {
                        return Err(SimError::Numerical { t });
                    }
                    status => {
                        if controller == Controller::Proposed {
                            return Err(SimError::FeasibilityBreach {
                                t,
                                residual: audit.unwrap_or(f64::NAN),
                                detail: format!("online problem {}", status.as_str()),
                            });
                        }
                        kind = StepKind::Fallback(status);
                        candidate.expect("t > 0 has a previous plan")
                    }
                };
                record.steps.push(StepLog {
                    kind,
                    solve_ms,
                    dropped,
                    audit,
                    input_audit,
                    iterations: sol.iterations,
                });
                let u = &s.system.k * &x + z.rows(0, m);
                plan_z = Some(z);
                u
            } else {
                record.steps.push(StepLog {
                    kind: StepKind::OpenLoop,
                    solve_ms: None,
                    dropped: Vec::new(),
                    audit: None,
                    input_audit: None,
                    iterations: 0,
                });
                let z = plan_z.as_ref().expect("tail follows a solve");
                let j = t - last_solve;
                &s.system.k * &x + z.rows(j * m, m)
            };
            let w = sampler.sample();
            let base = &s.system.a * &x + &s.system.b * &u;
            let next = &base + &w;
            let realized = &next - &base;
            record.cost += s.task.stage_cost(&x, &u);
            ctx.push(realized.clone(), &acl);
            record.inputs.push(u);
            record.disturbances.push(realized);
            record.violations.push(self.state_violations(&next));
            record.states.push(next.clone());
            x = next;
        }
        record.cost += s.task.final_cost(&x);
        Ok(record)
    }
}

/// Empirical violation frequencies `[t][i]` over feasible rollouts.
#[derive(Clone, Debug, PartialEq)]
pub struct ViolationStats {
    pub rates: Vec<Vec<f64>>,
    pub samples: usize,
}

impl ViolationStats {
    /// Largest rate over `t >= 1`; the initial state is given, not controlled.
    pub fn max_rate(&self) -> f64 {
        self.rates.iter().skip(1).flatten().copied().fold(0.0, f64::max)
    }
}

pub fn violation_stats(records: &[RolloutRecord], constraints: &ConstraintSpec) -> ViolationStats {
    let used: Vec<&RolloutRecord> = records.iter().filter(|r| !r.infeasible_at_start).collect();
    let p = constraints.state_rows();
    let len = used.iter().map(|r| r.violations.len()).max().unwrap_or(0);
    let mut counts = vec![vec![0usize; p]; len];
    for r in &used {
        for (t, flags) in r.violations.iter().enumerate() {
            for (i, v) in flags.iter().enumerate() {
                counts[t][i] += *v as usize;
            }
        }
    }
    let denom = used.len().max(1) as f64;
    ViolationStats {
        rates: counts
            .into_iter()
            .map(|row| row.into_iter().map(|c| c as f64 / denom).collect())
            .collect(),
        samples: used.len(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloSummary {
    pub controller: Controller,
    pub trials: usize,
    pub draws: usize,
    pub base_seed: u64,
    /// Mean cost over all rollouts that started feasible.
    pub avg_cost: f64,
    pub best_trial_avg_cost: f64,
    pub trial_avg_costs: Vec<f64>,
    pub violation_rates: Vec<Vec<f64>>,
    pub max_violation_rate: f64,
    pub infeasible_at_start: usize,
    pub online_infeasible: usize,
    pub fallbacks: usize,
    pub solves: usize,
    pub max_audit_residual: f64,
    /// Audit residuals above tolerance (only recorded for non-proposed
    /// controllers; the proposed controller fails instead).
    pub audit_failures: usize,
    pub max_input_audit_residual: f64,
    /// Steps whose shifted plan violated an input row.
    pub input_audit_failures: usize,
    /// False when a rollout aborted and the summary covers only part of the
    /// runs.
    pub complete: bool,
}

/// Reduces per-trial rollout records in `(trial, draw)` order.
pub fn summarize(
    controller: Controller,
    base_seed: u64,
    draws: usize,
    trials: &[Vec<RolloutRecord>],
    constraints: &ConstraintSpec,
    audit_tol: f64,
) -> MonteCarloSummary {
    let all: Vec<RolloutRecord> = trials.iter().flatten().cloned().collect();
    let stats = violation_stats(&all, constraints);
    let mut total = 0.0;
    let mut used = 0usize;
    let mut trial_avg_costs = Vec::with_capacity(trials.len());
    for records in trials {
        let costs: Vec<f64> = records
            .iter()
            .filter(|r| !r.infeasible_at_start)
            .map(|r| r.cost)
            .collect();
        total += costs.iter().sum::<f64>();
        used += costs.len();
        trial_avg_costs.push(if costs.is_empty() {
            f64::NAN
        } else {
            costs.iter().sum::<f64>() / costs.len() as f64
        });
    }
    let audits: Vec<f64> = all
        .iter()
        .flat_map(|r| r.steps.iter().filter_map(|s| s.audit))
        .collect();
    let input_audits: Vec<f64> = all
        .iter()
        .flat_map(|r| r.steps.iter().filter_map(|s| s.input_audit))
        .collect();
    MonteCarloSummary {
        controller,
        trials: trials.len(),
        draws,
        base_seed,
        avg_cost: if used == 0 { f64::NAN } else { total / used as f64 },
        best_trial_avg_cost: trial_avg_costs
            .iter()
            .copied()
            .filter(|c| !c.is_nan())
            .fold(f64::INFINITY, f64::min),
        trial_avg_costs,
        max_violation_rate: stats.max_rate(),
        violation_rates: stats.rates,
        infeasible_at_start: all.iter().filter(|r| r.infeasible_at_start).count(),
        online_infeasible: all.iter().map(|r| r.fallbacks()).sum(),
        fallbacks: all.iter().map(|r| r.fallbacks()).sum(),
        solves: all.iter().map(|r| r.solves()).sum(),
        max_audit_residual: audits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        audit_failures: audits.iter().filter(|a| **a > audit_tol).count(),
        max_input_audit_residual: input_audits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        input_audit_failures: input_audits.iter().filter(|a| **a > audit_tol).count(),
        complete: true,
    }
}

/// Monte Carlo run that aborted part way.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloError {
    pub error: SimError,
    pub partial: Box<MonteCarloSummary>,
}

/// Records of a completed Monte Carlo run, `[trial][draw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloRun {
    pub summary: MonteCarloSummary,
    pub records: Vec<Vec<RolloutRecord>>,
}

/// Seeds for trial `r`: offline samples and the per-draw plant disturbances.
pub fn trial_scenario(scenario: &Scenario, base_seed: u64, trial: usize) -> Scenario {
    let mut s = scenario.clone();
    s.disturbance = s.disturbance.with_seed(trial_seed(base_seed, trial));
    s
}

/// Offline table of trial `r`.
pub fn trial_table(
    engine: &Engine,
    offline: &OfflineSettings,
    base_seed: u64,
    trial: usize,
) -> Result<GammaTable, Error> {
    build_gamma_table(&trial_scenario(engine.scenario(), base_seed, trial), offline)
}

/// Outcome of one trial: the table error, or one result per draw.
pub type TrialOutcome = Result<Vec<Result<RolloutRecord, SimError>>, Error>;

/// Ordered reduction of per-trial outcomes. Records after the first error
/// in `(trial, draw)` order are ignored, so the result does not depend on
/// how the runs were scheduled.
pub fn collect_runs(
    engine: &Engine,
    controller: Controller,
    base_seed: u64,
    draws: usize,
    outcomes: Vec<TrialOutcome>,
) -> Result<MonteCarloRun, MonteCarloError> {
    let constraints = &engine.scenario().constraints;
    let mut done: Vec<Vec<RolloutRecord>> = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let error = match outcome {
            Err(e) => Some(SimError::Setup(e)),
            Ok(runs) => {
                let mut records = Vec::with_capacity(runs.len());
                let mut error = None;
                for run in runs {
                    match run {
                        Ok(rec) => records.push(rec),
                        Err(e) => {
                            error = Some(e);
                            break;
                        }
                    }
                }
                done.push(records);
                error
            }
        };
        if let Some(error) = error {
            let mut partial = summarize(controller, base_seed, draws, &done, constraints, engine.audit_tol);
            partial.complete = false;
            return Err(MonteCarloError {
                error,
                partial: Box::new(partial),
            });
        }
    }
    Ok(MonteCarloRun {
        summary: summarize(controller, base_seed, draws, &done, constraints, engine.audit_tol),
        records: done,
    })
}

/// Sequential Monte Carlo: each trial redraws the offline samples, then
/// runs `draws` rollouts with independent plant disturbances.
pub fn monte_carlo_runs(
    engine: &Engine,
    offline: &OfflineSettings,
    controller: Controller,
    trials: usize,
    draws: usize,
    base_seed: u64,
    timer: &mut dyn SolveTimer,
) -> Result<MonteCarloRun, MonteCarloError> {
    let mut outcomes: Vec<TrialOutcome> = Vec::with_capacity(trials);
    let mut solver = DualActiveSet::default();
    for r in 0..trials {
        let outcome = trial_table(engine, offline, base_seed, r).map(|table| {
            let mut runs = Vec::with_capacity(draws);
            for d in 0..draws {
                let run = engine.rollout(&table, controller, draw_seed(base_seed, r, d), &mut solver, timer);
                let failed = run.is_err();
                runs.push(run);
                if failed {
                    break;
                }
            }
            runs
        });
        let stop = match &outcome {
            Err(_) => true,
            Ok(runs) => runs.last().is_some_and(|r| r.is_err()),
        };
        outcomes.push(outcome);
        if stop {
            break;
        }
    }
    collect_runs(engine, controller, base_seed, draws, outcomes)
}

pub fn monte_carlo(
    engine: &Engine,
    offline: &OfflineSettings,
    controller: Controller,
    trials: usize,
    draws: usize,
    base_seed: u64,
) -> Result<MonteCarloSummary, MonteCarloError> {
    monte_carlo_runs(engine, offline, controller, trials, draws, base_seed, &mut NoTimer).map(|run| run.summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example, BoxSupport, ExampleId};

    fn zero_box(id: ExampleId) -> Scenario {
        let mut s = builtin_example(id);
        s.disturbance.support = BoxSupport::symmetric(2, 0.0);
        s
    }

    fn run(s: &Scenario, c: Controller, seed: u64) -> RolloutRecord {
        let engine = Engine::new(s, TerminalOptions::default()).unwrap();
        let table = build_gamma_table(s, &OfflineSettings::default()).unwrap();
        engine
            .rollout(&table, c, seed, &mut DualActiveSet::default(), &mut NoTimer)
            .unwrap()
    }

    #[test]
    fn controller_names_round_trip() {
        for c in [Controller::Proposed, Controller::BaselineRr, Controller::Nominal] {
            assert_eq!(c.name().parse::<Controller>().unwrap(), c);
        }
        assert!("mystery".parse::<Controller>().is_err());
    }

    #[test]
    fn zero_disturbance_matches_nominal() {
        let s = zero_box(ExampleId::E2);
        let nominal = run(&s, Controller::Nominal, 1);
        for c in [Controller::Proposed, Controller::BaselineRr] {
            let rec = run(&s, c, 1);
            assert!(!rec.infeasible_at_start);
            for (a, b) in rec.states.iter().zip(&nominal.states) {
                assert!((a - b).amax() < 1e-9);
            }
            assert!(rec.violations.iter().flatten().all(|v| !v));
        }
    }

    #[test]
    fn plant_consistency_and_cost() {
        let s = builtin_example(ExampleId::E2);
        let rec = run(&s, Controller::Proposed, 7);
        assert_eq!(rec.states.len(), 16);
        assert_eq!(rec.inputs.len(), 15);
        let mut cost = 0.0;
        for t in 0..15 {
            let pred = &s.system.a * &rec.states[t] + &s.system.b * &rec.inputs[t] + &rec.disturbances[t];
            assert!((pred - &rec.states[t + 1]).amax() < 1e-12);
            assert!(s.disturbance.support.contains(&rec.disturbances[t], 1e-9));
            cost += s.task.stage_cost(&rec.states[t], &rec.inputs[t]);
        }
        cost += s.task.final_cost(&rec.states[15]);
        assert!((cost - rec.cost).abs() < 1e-9 * cost);
        assert_eq!(rec.solves(), 10);
        assert!(matches!(rec.steps[12].kind, StepKind::OpenLoop));
        assert_eq!(*rec.cost_to_date(&s).last().unwrap(), rec.cost);
    }

    #[test]
    fn rollouts_are_deterministic() {
        let s = builtin_example(ExampleId::E2);
        assert_eq!(run(&s, Controller::Proposed, 3), run(&s, Controller::Proposed, 3));
        assert_ne!(run(&s, Controller::Proposed, 3), run(&s, Controller::Proposed, 4));
    }

    #[test]
    fn infeasible_start_is_reported() {
        let mut s = builtin_example(ExampleId::E2);
        s.task.x_start = Vector::from_column_slice(&[19.0, 19.0]);
        let rec = run(&s, Controller::Proposed, 0);
        assert!(rec.infeasible_at_start);
        assert_eq!(rec.states.len(), 1);
    }

    #[test]
    fn violation_stats_examples() {
        let s = builtin_example(ExampleId::E2);
        let mut rec = run(&s, Controller::Nominal, 0);
        for flags in rec.violations.iter_mut() {
            flags.iter_mut().for_each(|f| *f = false);
        }
        let stats = violation_stats(core::slice::from_ref(&rec), &s.constraints);
        assert_eq!(stats.max_rate(), 0.0);
        rec.violations[3][0] = true;
        let stats = violation_stats(core::slice::from_ref(&rec), &s.constraints);
        assert_eq!(stats.rates[3][0], 1.0);
        assert_eq!(stats.rates.iter().flatten().filter(|r| **r > 0.0).count(), 1);
        // The initial state is not counted.
        rec.violations[3][0] = false;
        rec.violations[0][1] = true;
        let stats = violation_stats(core::slice::from_ref(&rec), &s.constraints);
        assert_eq!(stats.max_rate(), 0.0);
    }

    #[test]
    fn small_monte_carlo() {
        let s = builtin_example(ExampleId::E2);
        let engine = Engine::new(&s, TerminalOptions::default()).unwrap();
        let settings = OfflineSettings::default();
        let a = monte_carlo(&engine, &settings, Controller::Proposed, 2, 3, 9).unwrap();
        let b = monte_carlo(&engine, &settings, Controller::Proposed, 2, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.solves, 2 * 3 * 10);
        assert_eq!(a.online_infeasible, 0);
        let mean = a.trial_avg_costs.iter().sum::<f64>() / 2.0;
        assert!((mean - a.avg_cost).abs() < 1e-9 * mean);
        assert!(a.complete);
    }

    #[test]
    fn zero_disturbance_single_draw_cost() {
        let s = zero_box(ExampleId::E2);
        let engine = Engine::new(&s, TerminalOptions::default()).unwrap();
        let summary = monte_carlo(&engine, &OfflineSettings::default(), Controller::Proposed, 1, 1, 0).unwrap();
        let rec = run(&s, Controller::Nominal, 0);
        assert!((summary.avg_cost - rec.cost).abs() < 1e-9 * rec.cost);
    }
}
