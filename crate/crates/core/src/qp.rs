//! Dense strictly convex QP with linear inequalities.
//!
//! `DualActiveSet` is the Goldfarb-Idnani dual method: it starts from the
//! unconstrained minimizer and adds violated constraints one at a time,
//! keeping the iterate dual feasible. The factor `J` with `J J' = G^{-1}`
//! and the triangular `R` with `J' N_active = [R; 0]` are updated by Givens
//! rotations. An empty primal step direction with no dual step limit
//! certifies infeasibility.

use alloc::vec::Vec;

use crate::{Matrix, Vector};

/// `min 1/2 z'Hz + q'z  s.t.  rows z <= offsets`, with `H` positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct Qp {
    pub hessian: Matrix,
    pub linear: Vector,
    pub rows: Matrix,
    pub offsets: Vector,
}

impl Qp {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn constraints(&self) -> usize {
        self.offsets.len()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// Largest `rows z - offsets`; `-inf` without rows.
    pub fn max_violation(&self, z: &Vector) -> f64 {
        let lhs = &self.rows * z;
        (0..self.constraints())
            .map(|r| lhs[r] - self.offsets[r])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpOutcome {
    pub status: QpStatus,
    pub z: Vector,
    /// One multiplier per row, zero for inactive rows.
    pub multipliers: Vector,
    pub active: Vec<usize>,
    pub iterations: usize,
}

/// KKT residuals of a candidate primal-dual pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(qp: &Qp, z: &Vector, multipliers: &Vector) -> KktResiduals {
    let grad = &qp.hessian * z + &qp.linear + qp.rows.transpose() * multipliers;
    let slack = &qp.offsets - &qp.rows * z;
    let primal = slack.iter().fold(0.0f64, |acc, s| acc.max(-s));
    let dual = multipliers.iter().fold(0.0f64, |acc, u| acc.max(-u));
    let complementarity = slack
        .iter()
        .zip(multipliers.iter())
        .fold(0.0f64, |acc, (s, u)| acc.max((s * u).abs()));
    KktResiduals {
        stationarity: grad.amax(),
        primal,
        dual,
        complementarity,
    }
}

/// Interface for plugging in QP back ends.
pub trait QpSolver {
    fn solve(&mut self, qp: &Qp) -> QpOutcome;
}

#[derive(Clone, Debug)]
pub struct DualActiveSet {
    /// Violation below which a constraint counts as satisfied (rows are
    /// normalized to unit length first).
    pub feasibility_tol: f64,
    pub max_iterations: usize,
}

impl Default for DualActiveSet {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-10,
            max_iterations: 10_000,
        }
    }
}

impl QpSolver for DualActiveSet {
    fn solve(&mut self, qp: &Qp) -> QpOutcome {
        let first = self.solve_once(qp, 1.0);
        if first.status != QpStatus::NumericalFailure {
            return first;
        }
        let scale = qp.hessian.diagonal().amax().max(1e-300);
        let retry = self.solve_once(qp, 1.0 / scale);
        if retry.status == QpStatus::NumericalFailure {
            return QpOutcome {
                iterations: first.iterations + retry.iterations,
                ..retry
            };
        }
        retry
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = libm::hypot(a, b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

struct Factor {
    n: usize,
    j: Matrix,
    r: Matrix,
    q: usize,
}

impl Factor {
    /// Rotates `d = J' n` so that entries past `q` vanish, then appends the
    /// new column to `R`. Returns `false` on a dependent constraint.
    fn add(&mut self, mut d: Vector) -> bool {
        for k in (self.q + 1..self.n).rev() {
            let (c, s, h) = givens(d[k - 1], d[k]);
            if s == 0.0 {
                continue;
            }
            d[k - 1] = h;
            d[k] = 0.0;
            for row in 0..self.n {
                let x = self.j[(row, k - 1)];
                let y = self.j[(row, k)];
                self.j[(row, k - 1)] = c * x + s * y;
                self.j[(row, k)] = -s * x + c * y;
            }
        }
        if d[self.q].abs() <= f64::EPSILON * d.amax().max(1.0) {
            return false;
        }
        for row in 0..=self.q {
            self.r[(row, self.q)] = d[row];
        }
        self.q += 1;
        true
    }

    /// Removes active column `l` and restores the triangular form.
    fn drop(&mut self, l: usize) {
        for col in l..self.q - 1 {
            for row in 0..self.n {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..self.n {
            self.r[(row, self.q - 1)] = 0.0;
        }
        self.q -= 1;
        for k in l..self.q {
            let (c, s, h) = givens(self.r[(k, k)], self.r[(k + 1, k)]);
            if s == 0.0 {
                continue;
            }
            self.r[(k, k)] = h;
            self.r[(k + 1, k)] = 0.0;
            for col in k + 1..self.q {
                let x = self.r[(k, col)];
                let y = self.r[(k + 1, col)];
                self.r[(k, col)] = c * x + s * y;
                self.r[(k + 1, col)] = -s * x + c * y;
            }
            for row in 0..self.n {
                let x = self.j[(row, k)];
                let y = self.j[(row, k + 1)];
                self.j[(row, k)] = c * x + s * y;
                self.j[(row, k + 1)] = -s * x + c * y;
            }
        }
    }

    /// Primal direction `z = J2 J2' n` and dual direction `r = R^{-1} J1' n`.
    fn directions(&self, d: &Vector) -> (Vector, Vector) {
        let mut z = Vector::zeros(self.n);
        for k in self.q..self.n {
            z.axpy(d[k], &self.j.column(k), 1.0);
        }
        let mut r = Vector::zeros(self.q);
        for row in (0..self.q).rev() {
            let mut acc = d[row];
            for col in row + 1..self.q {
                acc -= self.r[(row, col)] * r[col];
            }
            r[row] = acc / self.r[(row, row)];
        }
        (z, r)
    }
}

impl DualActiveSet {
    fn solve_once(&self, qp: &Qp, cost_scale: f64) -> QpOutcome {
        let n = qp.dim();
        let m = qp.constraints();
        let failure = |iterations| QpOutcome {
            status: QpStatus::NumericalFailure,
            z: Vector::zeros(n),
            multipliers: Vector::zeros(m),
            active: Vec::new(),
            iterations,
        };
        let g = &qp.hessian * cost_scale;
        let a = &qp.linear * cost_scale;
        let Some(chol) = nalgebra::Cholesky::new(g.clone()) else {
            return failure(0);
        };

        // Internal form: normal' z >= bound, unit normals.
        let mut normals = Matrix::zeros(n, m);
        let mut bounds = Vector::zeros(m);
        let mut norms = Vector::zeros(m);
        for c in 0..m {
            let row = qp.rows.row(c);
            let norm = row.norm();
            norms[c] = norm;
            if norm == 0.0 {
                continue;
            }
            for k in 0..n {
                normals[(k, c)] = -row[k] / norm;
            }
            bounds[c] = -qp.offsets[c] / norm;
        }
        for c in 0..m {
            if norms[c] == 0.0 && qp.offsets[c] < -self.feasibility_tol {
                return QpOutcome {
                    status: QpStatus::Infeasible,
                    z: Vector::zeros(n),
                    multipliers: Vector::zeros(m),
                    active: Vec::new(),
                    iterations: 0,
                };
            }
        }

        let l_inv = match chol.l().solve_lower_triangular(&Matrix::identity(n, n)) {
            Some(inv) => inv,
            None => return failure(0),
        };
        let mut f = Factor {
            n,
            j: l_inv.transpose(),
            r: Matrix::zeros(n, n),
            q: 0,
        };
        let mut x = -chol.solve(&a);
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut iterations = 0;

        loop {
            // Most violated inactive constraint.
            let mut pick = None;
            let mut worst = -self.feasibility_tol * (1.0 + x.amax());
            for c in 0..m {
                if norms[c] == 0.0 || active.contains(&c) {
                    continue;
                }
                let s = normals.column(c).dot(&x) - bounds[c];
                if s < worst {
                    worst = s;
                    pick = Some(c);
                }
            }
            let Some(p) = pick else {
                break;
            };
            let np = normals.column(p).into_owned();
            let mut u_new = 0.0;
            loop {
                iterations += 1;
                if iterations > self.max_iterations {
                    return failure(iterations);
                }
                let d = f.j.transpose() * &np;
                let (z, r) = f.directions(&d);
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for (k, rk) in r.iter().enumerate() {
                    if *rk > 0.0 {
                        let ratio = u[k] / rk;
                        if ratio < t1 {
                            t1 = ratio;
                            drop_at = Some(k);
                        }
                    }
                }
                let zn = z.dot(&np);
                let dependent = z.norm() <= 1e-10 * d.norm().max(1.0) || zn <= 0.0;
                let t2 = if dependent {
                    f64::INFINITY
                } else {
                    -(np.dot(&x) - bounds[p]) / zn
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return QpOutcome {
                        status: QpStatus::Infeasible,
                        z: x,
                        multipliers: Vector::zeros(m),
                        active,
                        iterations,
                    };
                }
                for (k, rk) in r.iter().enumerate() {
                    u[k] -= t * rk;
                }
                u_new += t;
                if !dependent {
                    x.axpy(t, &z, 1.0);
                }
                if t == t2 {
                    if !f.add(d) {
                        return failure(iterations);
                    }
                    active.push(p);
                    u.push(u_new);
                    break;
                }
                let l = drop_at.expect("finite partial step has a blocking index");
                f.drop(l);
                active.remove(l);
                u.remove(l);
                if np.dot(&x) - bounds[p] >= -self.feasibility_tol * (1.0 + x.amax()) {
                    // The dual step alone closed the violation.
                    if u_new > 0.0 {
                        let d = f.j.transpose() * &np;
                        if !f.add(d) {
                            return failure(iterations);
                        }
                        active.push(p);
                        u.push(u_new);
                    }
                    break;
                }
            }
        }

        let mut multipliers = Vector::zeros(m);
        for (k, c) in active.iter().enumerate() {
            // Undo normalization and cost scaling.
            multipliers[*c] = u[k] / norms[*c] / cost_scale;
        }
        let outcome = QpOutcome {
            status: QpStatus::Optimal,
            z: x,
            multipliers,
            active,
            iterations,
        };
        let res = kkt_residuals(qp, &outcome.z, &outcome.multipliers);
        let scale = 1.0 + qp.offsets.amax() + qp.linear.amax();
        if res.primal > 1e-7 * scale || !outcome.z.iter().all(|v| v.is_finite()) {
            return failure(iterations);
        }
        outcome
    }
}

/// Solves tiny QPs by trying every active subset; test oracle.
#[cfg(test)]
pub(crate) fn enumerate_active_sets(qp: &Qp) -> Option<(Vector, f64)> {
    let n = qp.dim();
    let m = qp.constraints();
    let mut best: Option<(Vector, f64)> = None;
    for mask in 0u32..(1 << m) {
        let set: Vec<usize> = (0..m).filter(|c| mask & (1 << c) != 0).collect();
        if set.len() > n {
            continue;
        }
        let k = set.len();
        let mut kkt = Matrix::zeros(n + k, n + k);
        let mut rhs = Vector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
        for (e, c) in set.iter().enumerate() {
            for v in 0..n {
                kkt[(n + e, v)] = qp.rows[(*c, v)];
                kkt[(v, n + e)] = qp.rows[(*c, v)];
            }
            rhs[n + e] = qp.offsets[*c];
        }
        for v in 0..n {
            rhs[v] = -qp.linear[v];
        }
        let lu = kkt.lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let sol = lu.solve(&rhs).unwrap();
        let z = sol.rows(0, n).into_owned();
        if qp.constraints() > 0 && qp.max_violation(&z) > 1e-9 {
            continue;
        }
        let obj = qp.objective(&z);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((z, obj));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(h: f64, q: f64, rows: &[f64], offsets: &[f64]) -> Qp {
        Qp {
            hessian: Matrix::from_element(1, 1, h),
            linear: Vector::from_element(1, q),
            rows: Matrix::from_column_slice(rows.len(), 1, rows),
            offsets: Vector::from_column_slice(offsets),
        }
    }

    #[test]
    fn unconstrained_scalar() {
        // (v - 1)^2 = v^2 - 2v + 1.
        let qp = scalar(2.0, -2.0, &[], &[]);
        let out = DualActiveSet::default().solve(&qp);
        assert_eq!(out.status, QpStatus::Optimal);
        assert!((out.z[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn infeasible_pair() {
        let qp = scalar(2.0, -2.0, &[1.0, -1.0], &[0.0, -1.0]);
        assert_eq!(DualActiveSet::default().solve(&qp).status, QpStatus::Infeasible);
    }

    #[test]
    fn zero_row_with_negative_offset_is_infeasible() {
        let qp = scalar(2.0, 0.0, &[0.0], &[-1.0]);
        assert_eq!(DualActiveSet::default().solve(&qp).status, QpStatus::Infeasible);
    }

    #[test]
    fn active_bound() {
        let qp = scalar(2.0, -2.0, &[1.0], &[0.25]);
        let out = DualActiveSet::default().solve(&qp);
        assert_eq!(out.status, QpStatus::Optimal);
        assert!((out.z[0] - 0.25).abs() < 1e-14);
        assert!((out.multipliers[0] - 1.5).abs() < 1e-12);
        assert_eq!(out.active, alloc::vec![0]);
    }

    #[test]
    fn indefinite_hessian_is_numerical_failure() {
        let qp = scalar(-1.0, 0.0, &[], &[]);
        assert_eq!(DualActiveSet::default().solve(&qp).status, QpStatus::NumericalFailure);
    }

    fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Qp {
        let f = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let hessian = &f * f.transpose() + Matrix::identity(n, n) * 0.1;
        Qp {
            hessian,
            linear: Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0)),
            rows: Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)),
            offsets: Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn matches_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut solver = DualActiveSet::default();
        let (mut feasible, mut infeasible) = (0, 0);
        for _ in 0..400 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(0..=7);
            let qp = random_qp(&mut rng, n, m);
            let out = solver.solve(&qp);
            match enumerate_active_sets(&qp) {
                Some((z, obj)) => {
                    feasible += 1;
                    assert_eq!(out.status, QpStatus::Optimal);
                    assert!((qp.objective(&out.z) - obj).abs() < 1e-6 * (1.0 + obj.abs()));
                    assert!((&out.z - z).amax() < 1e-5);
                    let res = kkt_residuals(&qp, &out.z, &out.multipliers);
                    assert!(res.max() < 1e-8, "{res:?}");
                }
                None => {
                    infeasible += 1;
                    assert_eq!(out.status, QpStatus::Infeasible);
                }
            }
        }
        assert!(feasible > 100 && infeasible > 10, "{feasible} / {infeasible}");
    }

    #[test]
    fn larger_problems_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut solver = DualActiveSet::default();
        for _ in 0..100 {
            let n = rng.random_range(4..=10);
            let m = rng.random_range(5..=40);
            let mut qp = random_qp(&mut rng, n, m);
            // Make the origin strictly feasible.
            qp.offsets.iter_mut().for_each(|o| *o = o.abs() + 0.05);
            let out = solver.solve(&qp);
            assert_eq!(out.status, QpStatus::Optimal);
            assert!(kkt_residuals(&qp, &out.z, &out.multipliers).max() < 1e-8);
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let qp = random_qp(&mut rng, 6, 20);
        let a = DualActiveSet::default().solve(&qp);
        let b = DualActiveSet::default().solve(&qp);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn redundant_copies_do_not_change_solution(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut qp = random_qp(&mut rng, 3, 4);
            qp.offsets.iter_mut().for_each(|o| *o = o.abs() + 0.1);
            let base = DualActiveSet::default().solve(&qp);
            let mut doubled = qp.clone();
            doubled.rows = Matrix::from_fn(8, 3, |r, c| qp.rows[(r % 4, c)] * (1.0 + (r / 4) as f64));
            doubled.offsets = Vector::from_fn(8, |r, _| qp.offsets[r % 4] * (1.0 + (r / 4) as f64));
            let twice = DualActiveSet::default().solve(&doubled);
            prop_assert_eq!(twice.status, QpStatus::Optimal);
            prop_assert!((&base.z - &twice.z).amax() < 1e-8);
        }
    }
}
