use smpc_core::adaptive::TerminalOptions;
use smpc_core::model::{builtin_example, ExampleId};
use smpc_core::offline::{build_gamma_table, OfflineSettings};
use smpc_core::qp::DualActiveSet;
use smpc_core::roa::{estimate_roa, RoaGridSpec};
use smpc_core::sim::{monte_carlo_runs, violation_stats, Controller, Engine, NoTimer, RolloutRecord};
use smpc_core::{Scenario, Vector};

fn engine(s: &Scenario) -> Engine {
    Engine::new(s, TerminalOptions::default()).unwrap()
}

fn rollout(s: &Scenario, controller: Controller, seed: u64) -> RolloutRecord {
    let table = build_gamma_table(s, &OfflineSettings::default()).unwrap();
    engine(s)
        .rollout(&table, controller, seed, &mut DualActiveSet::default(), &mut NoTimer)
        .unwrap()
}

#[test]
fn equal_seeds_give_identical_records() {
    let s = builtin_example(ExampleId::E1);
    for c in [Controller::Proposed, Controller::BaselineRr] {
        assert_eq!(rollout(&s, c, 42), rollout(&s, c, 42));
        assert_ne!(rollout(&s, c, 42).disturbances, rollout(&s, c, 43).disturbances);
    }
}

#[test]
fn recovered_disturbances_stay_in_support() {
    for id in ExampleId::ALL {
        let s = builtin_example(id);
        for seed in 0..5 {
            let rec = rollout(&s, Controller::Proposed, seed);
            assert_eq!(rec.disturbances.len(), s.task.horizon);
            for w in &rec.disturbances {
                assert!(s.disturbance.support.contains(w, 1e-9), "{id:?}: {w}");
            }
        }
    }
}

#[test]
fn summary_cost_is_the_mean_of_record_costs() {
    let s = builtin_example(ExampleId::E2);
    let run = monte_carlo_runs(
        &engine(&s),
        &OfflineSettings::default(),
        Controller::Proposed,
        2,
        4,
        3,
        &mut NoTimer,
    )
    .unwrap();
    let costs: Vec<f64> = run.records.iter().flatten().map(|r| r.cost).collect();
    assert_eq!(run.summary.avg_cost, costs.iter().sum::<f64>() / costs.len() as f64);
    assert_eq!(run.summary.online_infeasible, 0);
    assert_eq!(run.summary.audit_failures, 0);
}

#[test]
fn a_single_violation_is_counted_once() {
    let s = builtin_example(ExampleId::E2);
    let mut rec = rollout(&s, Controller::Proposed, 0);
    for flags in &mut rec.violations {
        flags.iter_mut().for_each(|f| *f = false);
    }
    rec.violations[3][1] = true;
    let stats = violation_stats(&[rec], &s.constraints);
    assert_eq!(stats.rates[3][1], 1.0);
    assert_eq!(stats.rates.iter().flatten().filter(|r| **r != 0.0).count(), 1);
}

#[test]
fn states_at_origin_have_no_violations() {
    let mut s = builtin_example(ExampleId::E2);
    s.task.x_start = Vector::zeros(2);
    s.disturbance.support = smpc_core::BoxSupport::symmetric(2, 0.0);
    let rec = rollout(&s, Controller::Proposed, 0);
    let stats = violation_stats(&[rec], &s.constraints);
    assert!(stats.rates.iter().flatten().all(|r| *r == 0.0));
}

#[test]
fn halving_the_grid_step_keeps_the_area() {
    for id in ExampleId::ALL {
        let s = builtin_example(id);
        let e = engine(&s);
        let table = build_gamma_table(&s, &OfflineSettings::default()).unwrap();
        let coarse = estimate_roa(
            &e,
            &table,
            Controller::Proposed,
            &RoaGridSpec::around_state_box(&e, 1.2, 41).unwrap(),
        );
        let fine = estimate_roa(
            &e,
            &table,
            Controller::Proposed,
            &RoaGridSpec::around_state_box(&e, 1.2, 81).unwrap(),
        );
        let change = (fine.area() - coarse.area()).abs() / fine.area();
        assert!(change < 0.05, "{id:?}: {change}");
    }
}
