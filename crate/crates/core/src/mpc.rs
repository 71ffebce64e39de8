//! Condensed finite-horizon MPC problem over the auxiliary inputs `v`.
//!
//! With `x_bar_0 = x(t)` the nominal predictions are
//! `x_bar_j = A_cl^j x(t) + sum_{l<j} A_cl^{j-1-l} B v_l` and the applied
//! inputs `u_j = K x_bar_j + v_j`, so every constraint row and the cost are
//! affine and quadratic in the stacked `z = [v_0; ...; v_{N-1}]`. Only the
//! linear term and the row offsets depend on `x(t)`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::adaptive::{TerminalRow, TerminalSet, TighteningPlan};
use crate::linops::solve_dare;
use crate::model::{ConstraintSpec, LtiSystem, TaskSpec};
use crate::qp::{Qp, QpSolver, QpStatus};
use crate::{Matrix, Result, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowTag {
    /// State row `i` at predicted time `k + 1`.
    State {
        k: usize,
        row: usize,
    },
    /// Input row `j` at predicted time `k`.
    Input {
        k: usize,
        row: usize,
    },
    Terminal(TerminalRow),
}

/// One assembled MPC problem at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub t: usize,
    pub x: Vector,
    pub qp: Qp,
    pub constant: f64,
    pub tags: Vec<RowTag>,
}

impl QpProblem {
    /// Objective including the constant term.
    pub fn objective(&self, z: &Vector) -> f64 {
        self.qp.objective(z) + self.constant
    }

    pub fn max_violation(&self, z: &Vector) -> f64 {
        self.qp.max_violation(z)
    }

    /// Rows violated by more than `tol`, with their violation.
    pub fn violated_rows(&self, z: &Vector, tol: f64) -> Vec<(RowTag, f64)> {
        let lhs = &self.qp.rows * z;
        (0..self.qp.constraints())
            .filter_map(|r| {
                let v = lhs[r] - self.qp.offsets[r];
                (v > tol).then_some((self.tags[r], v))
            })
            .collect()
    }

    /// Plain-text dump of all problem data.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# t {}", self.t);
        let _ = writeln!(out, "x {}", join(self.x.iter()));
        let _ = writeln!(out, "constant {:e}", self.constant);
        let _ = writeln!(out, "hessian {} {}", self.qp.hessian.nrows(), self.qp.hessian.ncols());
        for r in 0..self.qp.hessian.nrows() {
            let _ = writeln!(out, "{}", join(self.qp.hessian.row(r).iter()));
        }
        let _ = writeln!(out, "linear {}", join(self.qp.linear.iter()));
        let _ = writeln!(out, "rows {}", self.qp.constraints());
        for r in 0..self.qp.constraints() {
            let _ = writeln!(
                out,
                "{} <= {:e}  # {:?}",
                join(self.qp.rows.row(r).iter()),
                self.qp.offsets[r],
                self.tags[r]
            );
        }
        out
    }
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:e}");
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    pub status: SolveStatus,
    /// Stacked optimal `v`, length `N m`.
    pub z: Vector,
    pub u_applied: Vector,
    /// `x_bar_{t|t}, ..., x_bar_{t+N|t}`.
    pub nominal: Vec<Vector>,
    pub objective: f64,
    pub iterations: usize,
}

impl MpcSolution {
    /// `v_{t+j|t}`.
    pub fn v(&self, j: usize) -> Vector {
        let m = self.u_applied.len();
        self.z.rows(j * m, m).into_owned()
    }
}

/// `[v_1, ..., v_{N-1}, 0]`.
pub fn shifted_candidate(z: &Vector, input_dim: usize) -> Vector {
    let len = z.len();
    let mut out = Vector::zeros(len);
    out.rows_mut(0, len - input_dim)
        .copy_from(&z.rows(input_dim, len - input_dim));
    out
}

/// Prediction matrices and cost data for one system and horizon.
#[derive(Clone, Debug)]
pub struct Predictor {
    n: usize,
    m: usize,
    horizon: usize,
    k: Matrix,
    /// `A_cl^j`, `j = 0..=N`.
    phi: Vec<Matrix>,
    /// `d x_bar_j / d z`.
    gamma: Vec<Matrix>,
    /// `d u_j / d z`.
    input: Vec<Matrix>,
    q: Matrix,
    r: Matrix,
    terminal_cost: Matrix,
    x_ref: Vector,
    hessian: Matrix,
}

impl Predictor {
    /// Uses the LQR cost-to-go of `(A, B, Q, R)` as terminal cost.
    pub fn new(system: &LtiSystem, task: &TaskSpec) -> Result<Self> {
        let lqr = solve_dare(&system.a, &system.b, &task.q, &task.r)?;
        Ok(Self::with_terminal_cost(system, task, lqr.cost_to_go))
    }

    pub fn with_terminal_cost(system: &LtiSystem, task: &TaskSpec, terminal_cost: Matrix) -> Self {
        let n = system.state_dim();
        let m = system.input_dim();
        let horizon = task.mpc_horizon;
        let dim = horizon * m;
        let acl = system.closed_loop();
        let mut phi = Vec::with_capacity(horizon + 1);
        let mut gamma = Vec::with_capacity(horizon + 1);
        let mut input = Vec::with_capacity(horizon);
        phi.push(Matrix::identity(n, n));
        gamma.push(Matrix::zeros(n, dim));
        for j in 0..horizon {
            let mut du = &system.k * &gamma[j];
            for c in 0..m {
                du[(c, j * m + c)] += 1.0;
            }
            // Block j of gamma_j is still zero, so this adds B E_j.
            let mut next = &acl * &gamma[j];
            next.view_mut((0, j * m), (n, m)).copy_from(&system.b);
            input.push(du);
            gamma.push(next);
            phi.push(&acl * &phi[j]);
        }
        let mut hessian = Matrix::zeros(dim, dim);
        for j in 0..horizon {
            hessian += gamma[j].transpose() * &task.q * &gamma[j];
            hessian += input[j].transpose() * &task.r * &input[j];
        }
        hessian += gamma[horizon].transpose() * &terminal_cost * &gamma[horizon];
        hessian *= 2.0;
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        Self {
            n,
            m,
            horizon,
            k: system.k.clone(),
            phi,
            gamma,
            input,
            q: task.q.clone(),
            r: task.r.clone(),
            terminal_cost,
            x_ref: task.x_ref.clone(),
            hessian,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn terminal_cost(&self) -> &Matrix {
        &self.terminal_cost
    }

    /// Nominal predictions `x_bar_0..=x_bar_N` from `x` under `z`.
    pub fn trajectory(&self, x: &Vector, z: &Vector) -> Vec<Vector> {
        (0..=self.horizon)
            .map(|j| &self.phi[j] * x + &self.gamma[j] * z)
            .collect()
    }

    /// Predicted cost evaluated directly from the trajectory.
    pub fn cost(&self, x: &Vector, z: &Vector) -> f64 {
        let traj = self.trajectory(x, z);
        let mut total = 0.0;
        for j in 0..self.horizon {
            let e = &traj[j] - &self.x_ref;
            let u = &self.k * &traj[j] + z.rows(j * self.m, self.m);
            total += e.dot(&(&self.q * &e)) + u.dot(&(&self.r * &u));
        }
        let e = &traj[self.horizon] - &self.x_ref;
        total + e.dot(&(&self.terminal_cost * &e))
    }

    pub fn assemble(
        &self,
        x: &Vector,
        plan: &TighteningPlan,
        terminal: &TerminalSet,
        constraints: &ConstraintSpec,
    ) -> QpProblem {
        assert_eq!(x.len(), self.n, "state dimension");
        assert_eq!(plan.horizon(), self.horizon, "plan horizon");
        let dim = self.horizon * self.m;
        let mut linear = Vector::zeros(dim);
        let mut constant = 0.0;
        for j in 0..=self.horizon {
            let weight = if j == self.horizon {
                &self.terminal_cost
            } else {
                &self.q
            };
            let c = &self.phi[j] * x - &self.x_ref;
            let wc = weight * &c;
            linear += 2.0 * self.gamma[j].transpose() * &wc;
            constant += c.dot(&wc);
            if j < self.horizon {
                let d = &self.k * &self.phi[j] * x;
                let rd = &self.r * &d;
                linear += 2.0 * self.input[j].transpose() * &rd;
                constant += d.dot(&rd);
            }
        }

        let h = &constraints.state.normals;
        let hu = &constraints.input.normals;
        let mut rows: Vec<(Vec<f64>, f64, RowTag)> = Vec::new();
        for j in 0..self.horizon {
            let k = plan.t + j;
            let pred = &self.phi[j + 1] * x;
            for (i, tight) in plan.state[j].iter().enumerate() {
                let Some(bound) = tight.bound() else {
                    continue;
                };
                let normal = h.row(i) * &self.gamma[j + 1];
                let offset = constraints.state.offsets[i] - bound - (h.row(i) * &pred)[0];
                rows.push((normal.iter().copied().collect(), offset, RowTag::State { k, row: i }));
            }
        }
        for j in 0..self.horizon {
            let k = plan.t + j;
            let u_free = &self.k * &self.phi[j] * x;
            for r in 0..hu.nrows() {
                let normal = hu.row(r) * &self.input[j];
                let offset = constraints.input.offsets[r] - plan.input[j][r] - (hu.row(r) * &u_free)[0];
                rows.push((normal.iter().copied().collect(), offset, RowTag::Input { k, row: r }));
            }
        }
        let end = &self.phi[self.horizon] * x;
        for r in 0..terminal.rows() {
            let normal = terminal.normals.row(r) * &self.gamma[self.horizon];
            let offset = terminal.offsets[r] - (terminal.normals.row(r) * &end)[0];
            rows.push((
                normal.iter().copied().collect(),
                offset,
                RowTag::Terminal(terminal.tags[r]),
            ));
        }

        let mut row_matrix = Matrix::zeros(rows.len(), dim);
        let mut offsets = Vector::zeros(rows.len());
        let mut tags = Vec::with_capacity(rows.len());
        for (r, (normal, offset, tag)) in rows.into_iter().enumerate() {
            for (c, v) in normal.into_iter().enumerate() {
                row_matrix[(r, c)] = v;
            }
            offsets[r] = offset;
            tags.push(tag);
        }
        QpProblem {
            t: plan.t,
            x: x.clone(),
            qp: Qp {
                hessian: self.hessian.clone(),
                linear,
                rows: row_matrix,
                offsets,
            },
            constant,
            tags,
        }
    }

    pub fn solve(&self, problem: &QpProblem, solver: &mut dyn QpSolver) -> MpcSolution {
        let out = solver.solve(&problem.qp);
        let status = match out.status {
            QpStatus::Optimal => SolveStatus::Optimal,
            QpStatus::Infeasible => SolveStatus::Infeasible,
            QpStatus::NumericalFailure => SolveStatus::NumericalFailure,
        };
        let z = if status == SolveStatus::Optimal {
            out.z
        } else {
            Vector::zeros(self.horizon * self.m)
        };
        let nominal = self.trajectory(&problem.x, &z);
        let u_applied = &self.k * &problem.x + z.rows(0, self.m);
        MpcSolution {
            status,
            objective: problem.objective(&z),
            z,
            u_applied,
            nominal,
            iterations: out.iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::{OnlineContext, SetBuilder, TerminalOptions};
    use crate::model::{builtin_example, BoxSupport, ExampleId};
    use crate::offline::{build_gamma_table, OfflineSettings};
    use crate::qp::DualActiveSet;

    fn setup(id: ExampleId) -> (crate::Scenario, Predictor, SetBuilder) {
        let s = builtin_example(id);
        let pred = Predictor::new(&s.system, &s.task).unwrap();
        let builder = SetBuilder::new(&s, TerminalOptions::default());
        (s, pred, builder)
    }

    #[test]
    fn origin_is_unconstrained_optimum() {
        let (mut s, _, _) = setup(ExampleId::E2);
        s.disturbance.support = BoxSupport::symmetric(2, 0.0);
        let pred = Predictor::new(&s.system, &s.task).unwrap();
        let builder = SetBuilder::new(&s, TerminalOptions::default());
        let table = build_gamma_table(&s, &OfflineSettings::default()).unwrap();
        let ctx = OnlineContext::new(2);
        let problem = pred.assemble(
            &Vector::zeros(2),
            &builder.proposed_plan(&table, &ctx),
            &builder.proposed_terminal(&table, &ctx),
            &s.constraints,
        );
        let sol = pred.solve(&problem, &mut DualActiveSet::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.z.amax() < 1e-12);
        assert!(sol.objective.abs() < 1e-12);
    }

    #[test]
    fn structure_with_unit_horizon() {
        let (mut s, _, _) = setup(ExampleId::E3);
        s.task.mpc_horizon = 1;
        let pred = Predictor::new(&s.system, &s.task).unwrap();
        let builder = SetBuilder::new(&s, TerminalOptions::default());
        let problem = pred.assemble(
            &Vector::zeros(2),
            &builder.nominal_plan(0),
            &builder.nominal_terminal(0),
            &s.constraints,
        );
        assert_eq!(problem.qp.dim(), 1);
        let states: Vec<_> = problem
            .tags
            .iter()
            .filter_map(|t| match t {
                RowTag::State { k, .. } => Some(*k),
                _ => None,
            })
            .collect();
        assert_eq!(states, alloc::vec![0, 0, 0, 0]);
    }

    #[test]
    fn objective_and_trajectory_consistency() {
        for id in ExampleId::ALL {
            let (s, pred, builder) = setup(id);
            let table = build_gamma_table(&s, &OfflineSettings::default()).unwrap();
            let ctx = OnlineContext::new(2);
            let x = Vector::from_column_slice(&[0.5, -0.3]);
            let problem = pred.assemble(
                &x,
                &builder.proposed_plan(&table, &ctx),
                &builder.proposed_terminal(&table, &ctx),
                &s.constraints,
            );
            let sol = pred.solve(&problem, &mut DualActiveSet::default());
            assert_eq!(sol.status, SolveStatus::Optimal, "{id:?}");
            let recomputed = pred.cost(&x, &sol.z);
            assert!((sol.objective - recomputed).abs() < 1e-7 * (1.0 + recomputed.abs()));
            for j in 0..pred.horizon() {
                let u = &s.system.k * &sol.nominal[j] + sol.v(j);
                let next = &s.system.a * &sol.nominal[j] + &s.system.b * u;
                assert!((next - &sol.nominal[j + 1]).amax() < 1e-9);
            }
            // Random z: objective matches direct cost too.
            let z = Vector::from_fn(pred.horizon(), |r, _| (r as f64 - 2.0) * 0.3);
            assert!((problem.objective(&z) - pred.cost(&x, &z)).abs() < 1e-8);
        }
    }

    #[test]
    fn state_rows_encode_predicted_constraints() {
        let (s, pred, builder) = setup(ExampleId::E1);
        let table = build_gamma_table(&s, &OfflineSettings::default()).unwrap();
        let ctx = OnlineContext::new(2);
        let plan = builder.proposed_plan(&table, &ctx);
        let x = Vector::from_column_slice(&[1.0, 2.0]);
        let problem = pred.assemble(&x, &plan, &builder.proposed_terminal(&table, &ctx), &s.constraints);
        let z = Vector::from_fn(6, |r, _| 0.1 * r as f64);
        let traj = pred.trajectory(&x, &z);
        let lhs = &problem.qp.rows * &z - &problem.qp.offsets;
        for (r, tag) in problem.tags.iter().enumerate() {
            let expected = match *tag {
                RowTag::State { k, row } => {
                    (s.constraints.state.normals.row(row) * &traj[k + 1])[0]
                        - (s.constraints.state.offsets[row] - plan.state[k][row].bound().unwrap())
                }
                RowTag::Input { k, row } => {
                    let u = &s.system.k * &traj[k] + z.rows(k, 1);
                    (s.constraints.input.normals.row(row) * u)[0] - s.constraints.input.offsets[row]
                        + plan.input[k][row]
                }
                RowTag::Terminal(_) => continue,
            };
            assert!((lhs[r] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn e2_start_is_feasible() {
        let (s, pred, builder) = setup(ExampleId::E2);
        let table = build_gamma_table(&s, &OfflineSettings::default()).unwrap();
        let ctx = OnlineContext::new(2);
        let problem = pred.assemble(
            &s.task.x_start,
            &builder.proposed_plan(&table, &ctx),
            &builder.proposed_terminal(&table, &ctx),
            &s.constraints,
        );
        let sol = pred.solve(&problem, &mut DualActiveSet::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(problem.max_violation(&sol.z) < 1e-8);
        assert!(problem.dump().contains("hessian 6 6"));
    }

    #[test]
    fn candidate_shift() {
        let z = Vector::from_column_slice(&[1.0, 2.0]);
        assert_eq!(shifted_candidate(&z, 1).as_slice(), &[2.0, 0.0]);
        let z = Vector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(shifted_candidate(&z, 2).as_slice(), &[3.0, 4.0, 0.0, 0.0]);
    }
}
