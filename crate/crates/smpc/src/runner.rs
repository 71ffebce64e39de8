//! Worker-pool versions of the Monte Carlo and ROA drivers. Results are
//! reduced in `(trial, draw)` or cell order, so they match the sequential
//! drivers bit for bit whatever the thread count.

use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;
use smpc_core::offline::{GammaTable, OfflineSettings};
use smpc_core::qp::DualActiveSet;
use smpc_core::rng::draw_seed;
use smpc_core::roa::{probe, RoaGrid, RoaGridSpec};
use smpc_core::sim::{
    collect_runs, trial_table, Controller, Engine, MonteCarloError, MonteCarloRun, NoTimer, SolveTimer, TrialOutcome,
};

/// Wall-clock solve timer.
#[derive(Default)]
pub struct WallTimer {
    started: Option<Instant>,
}

impl SolveTimer for WallTimer {
    fn start(&mut self) {
        self.started = Some(Instant::now());
    }

    fn stop(&mut self) -> Option<f64> {
        self.started.take().map(|t| t.elapsed().as_secs_f64() * 1e3)
    }
}

pub fn timer(enabled: bool) -> Box<dyn SolveTimer> {
    if enabled {
        Box::new(WallTimer::default())
    } else {
        Box::new(NoTimer)
    }
}

/// `threads = 0` uses every available core.
pub fn pool(threads: usize) -> Result<ThreadPool, rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build()
}

#[derive(Clone, Copy, Debug)]
pub struct McPlan {
    pub controller: Controller,
    pub trials: usize,
    pub draws: usize,
    pub base_seed: u64,
    pub timing: bool,
}

/// Monte Carlo over a worker pool. With `fixed` set every trial uses that
/// table instead of redrawing offline samples.
pub fn monte_carlo(
    pool: &ThreadPool,
    engine: &Engine,
    offline: &OfflineSettings,
    plan: McPlan,
    fixed: Option<&GammaTable>,
) -> Result<MonteCarloRun, MonteCarloError> {
    let McPlan {
        controller,
        trials,
        draws,
        base_seed,
        timing,
    } = plan;
    let outcomes: Vec<TrialOutcome> = pool.install(|| {
        let tables: Vec<_> = (0..trials)
            .into_par_iter()
            .map(|r| match fixed {
                Some(t) => Ok(t.clone()),
                None => trial_table(engine, offline, base_seed, r),
            })
            .collect();
        let mut runs = (0..trials * draws)
            .into_par_iter()
            .map_init(DualActiveSet::default, |solver, job| {
                let (r, d) = (job / draws, job % draws);
                let table = tables[r].as_ref().ok()?;
                let mut clock = timer(timing);
                Some(engine.rollout(table, controller, draw_seed(base_seed, r, d), solver, clock.as_mut()))
            })
            .collect::<Vec<_>>()
            .into_iter();
        tables
            .into_iter()
            .map(|table| {
                let trial: Vec<_> = runs.by_ref().take(draws).collect();
                table.map(|_| trial.into_iter().map(|run| run.expect("table exists")).collect())
            })
            .collect()
    });
    collect_runs(engine, controller, base_seed, draws, outcomes)
}

pub fn estimate_roa(
    pool: &ThreadPool,
    engine: &Engine,
    table: &GammaTable,
    controller: Controller,
    spec: &RoaGridSpec,
) -> RoaGrid {
    let feasible = pool.install(|| {
        (0..spec.cells())
            .into_par_iter()
            .map_init(DualActiveSet::default, |solver, cell| {
                probe(engine, table, controller, &spec.center(cell), solver)
            })
            .collect()
    });
    RoaGrid {
        spec: spec.clone(),
        feasible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smpc_core::adaptive::TerminalOptions;
    use smpc_core::model::{builtin_example, ExampleId};
    use smpc_core::offline::build_gamma_table;
    use smpc_core::roa;
    use smpc_core::sim::monte_carlo_runs;

    #[test]
    fn parallel_monte_carlo_matches_sequential() {
        let s = builtin_example(ExampleId::E2);
        let engine = Engine::new(&s, TerminalOptions::default()).unwrap();
        let offline = OfflineSettings::default();
        for controller in [Controller::Proposed, Controller::BaselineRr] {
            let seq = monte_carlo_runs(&engine, &offline, controller, 3, 7, 11, &mut NoTimer).unwrap();
            let plan = McPlan {
                controller,
                trials: 3,
                draws: 7,
                base_seed: 11,
                timing: false,
            };
            let par = monte_carlo(&pool(4).unwrap(), &engine, &offline, plan, None).unwrap();
            assert_eq!(par, seq);
        }
    }

    #[test]
    fn parallel_roa_matches_sequential() {
        let s = builtin_example(ExampleId::E3);
        let engine = Engine::new(&s, TerminalOptions::default()).unwrap();
        let table = build_gamma_table(&s, &OfflineSettings::default()).unwrap();
        let spec = RoaGridSpec::around_state_box(&engine, 1.2, 15).unwrap();
        let seq = roa::estimate_roa(&engine, &table, Controller::Proposed, &spec);
        let par = estimate_roa(&pool(3).unwrap(), &engine, &table, Controller::Proposed, &spec);
        assert_eq!(par, seq);
    }

    #[test]
    fn timing_fills_solve_times() {
        let s = builtin_example(ExampleId::E2);
        let engine = Engine::new(&s, TerminalOptions::default()).unwrap();
        let plan = McPlan {
            controller: Controller::Proposed,
            trials: 1,
            draws: 1,
            base_seed: 0,
            timing: true,
        };
        let run = monte_carlo(&pool(1).unwrap(), &engine, &OfflineSettings::default(), plan, None).unwrap();
        let steps = &run.records[0][0].steps;
        assert!(steps.iter().filter(|s| s.solve_ms.is_some()).count() >= 10);
    }
}
