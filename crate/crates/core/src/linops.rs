//! Closed-loop matrix powers, the discrete-time Riccati solution and support
//! functions of box sets under linear maps.

use alloc::vec::Vec;

use nalgebra::RowDVector;

use crate::model::BoxSupport;
use crate::{Error, Matrix, Result};

/// Max-abs threshold below which a closed-loop power is treated as decayed.
pub const DEFAULT_DECAY_TOL: f64 = 1e-10;

/// Powers `A_cl^0 ..= A_cl^max_power` of the closed-loop matrix.
#[derive(Clone, Debug)]
pub struct AclPowerCache {
    powers: Vec<Matrix>,
    decay_index: usize,
}

impl AclPowerCache {
    pub fn new(acl: &Matrix, max_power: usize) -> Self {
        Self::with_decay_tol(acl, max_power, DEFAULT_DECAY_TOL)
    }

    pub fn with_decay_tol(acl: &Matrix, max_power: usize, decay_tol: f64) -> Self {
        assert!(acl.is_square(), "closed-loop matrix must be square");
        let n = acl.nrows();
        let mut powers = Vec::with_capacity(max_power + 1);
        powers.push(Matrix::identity(n, n));
        for k in 0..max_power {
            let next = acl * &powers[k];
            powers.push(next);
        }
        let decay_index = powers.iter().position(|p| p.amax() < decay_tol).unwrap_or(max_power);
        Self { powers, decay_index }
    }

    pub fn acl(&self) -> &Matrix {
        self.power(1)
    }

    /// `A_cl^k`. Panics past the cached range.
    pub fn power(&self, k: usize) -> &Matrix {
        self.powers
            .get(k)
            .unwrap_or_else(|| panic!("power {k} beyond cache of {}", self.max_power()))
    }

    pub fn max_power(&self) -> usize {
        self.powers.len() - 1
    }

    /// Smallest `t` with `max|A_cl^t| < decay_tol`, or the cache length when
    /// the powers never decay that far.
    pub fn decay_index(&self) -> usize {
        self.decay_index
    }

    pub fn dim(&self) -> usize {
        self.powers[0].nrows()
    }
}

/// Infinite-horizon LQR data.
#[derive(Clone, Debug)]
pub struct LqrSolution {
    /// Cost-to-go matrix `P`.
    pub cost_to_go: Matrix,
    /// Gain `K` such that `u = K x`.
    pub gain: Matrix,
}

const DARE_MAX_ITER: usize = 10_000;
const DARE_REL_TOL: f64 = 1e-12;

/// Right-hand side of the Riccati fixed point and the matching gain.
fn riccati_map(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Option<(Matrix, Matrix)> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let chol = s.cholesky()?;
    let gain = -chol.solve(&(&bt_p * a));
    let at_p = a.transpose() * p;
    let next = &at_p * a + (&at_p * b) * &gain + q;
    Some(((&next + next.transpose()) * 0.5, gain))
}

/// Solves `P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q` by fixed-point iteration
/// from `P = Q`, returning `P` and `K = -(R + B'PB)^-1 B'PA`.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<LqrSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension(alloc::format!(
            "dare: A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let mut p = q.clone();
    let mut change = f64::INFINITY;
    for _ in 0..DARE_MAX_ITER {
        let (next, _) = riccati_map(a, b, q, r, &p).ok_or(Error::DareNotConverged {
            iterations: 0,
            change: f64::NAN,
        })?;
        change = (&next - &p).amax();
        let scale = next.amax().max(1.0);
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= DARE_REL_TOL * scale {
            let (_, gain) = riccati_map(a, b, q, r, &p).expect("factorized above");
            return Ok(LqrSolution { cost_to_go: p, gain });
        }
    }
    Err(Error::DareNotConverged {
        iterations: DARE_MAX_ITER,
        change,
    })
}

/// Max-abs residual of the Riccati fixed point at `p`.
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> f64 {
    riccati_map(a, b, q, r, p)
        .map(|(next, _)| (&next - p).amax())
        .unwrap_or(f64::INFINITY)
}

/// `max_{w in box} c'w`.
pub fn box_support_max(c: &[f64], support: &BoxSupport) -> f64 {
    debug_assert_eq!(c.len(), support.dim());
    c.iter()
        .zip(support.lower.iter().zip(support.upper.iter()))
        .map(|(cj, (lo, hi))| {
            let center = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            cj * center + cj.abs() * half
        })
        .sum()
}

/// `min_{w in box} c'w`.
pub fn box_support_min(c: &[f64], support: &BoxSupport) -> f64 {
    debug_assert_eq!(c.len(), support.dim());
    c.iter()
        .zip(support.lower.iter().zip(support.upper.iter()))
        .map(|(cj, (lo, hi))| {
            let center = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            cj * center - cj.abs() * half
        })
        .sum()
}

/// `(M, m)`: max and min of `row * sum_{j<steps} A_cl^j w_j` over independent
/// `w_j` in the box. Separable, so each power contributes its own support.
pub fn accumulated_support(
    row: &RowDVector<f64>,
    cache: &AclPowerCache,
    steps: usize,
    support: &BoxSupport,
) -> (f64, f64) {
    let mut hi = 0.0;
    let mut lo = 0.0;
    for j in 0..steps {
        let c = row * cache.power(j);
        hi += box_support_max(c.as_slice(), support);
        lo += box_support_min(c.as_slice(), support);
    }
    (hi, lo)
}

/// Per-row supports of `G A_cl^j` for `j = 0..=max_power`, with running sums
/// so that any window `sum_{j<s}` is a lookup.
#[derive(Clone, Debug)]
pub struct RowSupportTable {
    term_max: Vec<Vec<f64>>,
    term_min: Vec<Vec<f64>>,
    cum_max: Vec<Vec<f64>>,
    cum_min: Vec<Vec<f64>>,
}

impl RowSupportTable {
    pub fn new(rows: &Matrix, cache: &AclPowerCache, support: &BoxSupport) -> Self {
        let powers = cache.max_power() + 1;
        let p = rows.nrows();
        let mut term_max = Vec::with_capacity(powers);
        let mut term_min = Vec::with_capacity(powers);
        for j in 0..powers {
            let mapped = rows * cache.power(j);
            let (mut hi, mut lo) = (Vec::with_capacity(p), Vec::with_capacity(p));
            for i in 0..p {
                let c: Vec<f64> = mapped.row(i).iter().copied().collect();
                hi.push(box_support_max(&c, support));
                lo.push(box_support_min(&c, support));
            }
            term_max.push(hi);
            term_min.push(lo);
        }
        let cumulate = |terms: &Vec<Vec<f64>>| {
            let mut out = Vec::with_capacity(powers + 1);
            let mut acc = alloc::vec![0.0; p];
            out.push(acc.clone());
            for t in terms {
                for i in 0..p {
                    acc[i] += t[i];
                }
                out.push(acc.clone());
            }
            out
        };
        let cum_max = cumulate(&term_max);
        let cum_min = cumulate(&term_min);
        Self {
            term_max,
            term_min,
            cum_max,
            cum_min,
        }
    }

    /// `max_w row_i A_cl^power w`.
    pub fn term_max(&self, row: usize, power: usize) -> f64 {
        self.term_max[power][row]
    }

    pub fn term_min(&self, row: usize, power: usize) -> f64 {
        self.term_min[power][row]
    }

    /// Sum of the first `steps` maxima (powers `0..steps`).
    pub fn window_max(&self, row: usize, steps: usize) -> f64 {
        self.cum_max[steps][row]
    }

    pub fn window_min(&self, row: usize, steps: usize) -> f64 {
        self.cum_min[steps][row]
    }

    pub fn max_steps(&self) -> usize {
        self.cum_max.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example, spectral_radius, ExampleId};
    use crate::Vector;
    use proptest::prelude::*;

    fn unit_box() -> BoxSupport {
        BoxSupport::symmetric(2, 1.0)
    }

    #[test]
    fn dare_zero_dynamics() {
        let one = Matrix::identity(1, 1);
        let sol = solve_dare(&Matrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert!((sol.cost_to_go[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(sol.gain[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn dare_scalar_integrator() {
        // Oracle: iterate p <- 1 + p - p^2 / (1 + p) directly.
        let mut p = 1.0f64;
        for _ in 0..200 {
            p = 1.0 + p - p * p / (1.0 + p);
        }
        assert!((p - (1.0 + libm::sqrt(5.0)) / 2.0).abs() < 1e-12);

        let one = Matrix::identity(1, 1);
        let sol = solve_dare(&one, &one, &one, &one).unwrap();
        assert!((sol.cost_to_go[(0, 0)] - p).abs() < 1e-9);
        assert!((sol.cost_to_go[(0, 0)] - 1.618_034).abs() < 1e-6);
        assert!((sol.gain[(0, 0)] + p / (1.0 + p)).abs() < 1e-9);
    }

    #[test]
    fn dare_benchmarks_are_stabilizing() {
        for id in ExampleId::ALL {
            let s = builtin_example(id);
            let q = &s.task.q;
            let r = &s.task.r;
            let sol = solve_dare(&s.system.a, &s.system.b, q, r).unwrap();
            assert!(dare_residual(&s.system.a, &s.system.b, q, r, &sol.cost_to_go) < 1e-9);
            let acl = &s.system.a + &s.system.b * &sol.gain;
            assert!(spectral_radius(&acl) < 1.0, "{id}");
        }
    }

    #[test]
    fn dare_rejects_bad_shapes() {
        let r = solve_dare(
            &Matrix::zeros(2, 2),
            &Matrix::zeros(3, 1),
            &Matrix::identity(2, 2),
            &Matrix::identity(1, 1),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn dare_uncontrollable_unstable_mode_fails() {
        let a = Matrix::from_element(1, 1, 2.0);
        let b = Matrix::zeros(1, 1);
        let one = Matrix::identity(1, 1);
        assert!(matches!(
            solve_dare(&a, &b, &one, &one),
            Err(Error::DareNotConverged { .. })
        ));
    }

    #[test]
    fn support_examples() {
        let b = unit_box();
        assert_eq!(box_support_max(&[1.0, -1.0], &b), 2.0);
        assert_eq!(box_support_min(&[1.0, -1.0], &b), -2.0);
        assert_eq!(box_support_max(&[0.0, 0.0], &b), 0.0);
        let shifted = BoxSupport::new(Vector::zeros(2), Vector::from_element(2, 1.0));
        // Vertex enumeration.
        let vals: Vec<f64> = shifted.vertices().iter().map(|v| 2.0 * v[0] + 3.0 * v[1]).collect();
        let vmax = vals.iter().cloned().fold(f64::MIN, f64::max);
        let vmin = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(box_support_max(&[2.0, 3.0], &shifted), vmax);
        assert_eq!(vmax, 5.0);
        assert_eq!(box_support_min(&[2.0, 3.0], &shifted), vmin);
        assert_eq!(vmin, 0.0);
    }

    #[test]
    fn accumulated_support_single_step_and_nilpotent() {
        let cache = AclPowerCache::new(&Matrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.5]), 8);
        let row = RowDVector::from_row_slice(&[1.0, 0.0]);
        assert_eq!(accumulated_support(&row, &cache, 1, &unit_box()), (1.0, -1.0));
        let zero = AclPowerCache::new(&Matrix::zeros(2, 2), 8);
        for s in 1..6 {
            assert_eq!(accumulated_support(&row, &zero, s, &unit_box()), (1.0, -1.0));
        }
    }

    /// Maximizes `row * sum_j A^j w_j` over every sequence of box vertices.
    fn vertex_oracle(row: &RowDVector<f64>, acl: &Matrix, steps: usize, b: &BoxSupport) -> (f64, f64) {
        let verts = b.vertices();
        let count = verts.len().pow(steps as u32);
        let (mut hi, mut lo) = (f64::MIN, f64::MAX);
        for mut code in 0..count {
            let mut total = 0.0;
            let mut power = Matrix::identity(acl.nrows(), acl.nrows());
            for _ in 0..steps {
                let w = &verts[code % verts.len()];
                code /= verts.len();
                total += (row * &power * w)[0];
                power = acl * &power;
            }
            hi = hi.max(total);
            lo = lo.min(total);
        }
        (hi, lo)
    }

    #[test]
    fn accumulated_support_matches_vertex_enumeration_on_e2() {
        let s = builtin_example(ExampleId::E2);
        let acl = s.system.closed_loop();
        let cache = AclPowerCache::new(&acl, 8);
        let row = RowDVector::from_row_slice(&[1.0, 0.0]);
        let (hi, lo) = accumulated_support(&row, &cache, 2, &unit_box());
        let (ohi, olo) = vertex_oracle(&row, &acl, 2, &unit_box());
        assert!((hi - ohi).abs() < 1e-12 && (lo - olo).abs() < 1e-12);
    }

    #[test]
    fn power_cache_invariants() {
        let acl = Matrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.4]);
        let cache = AclPowerCache::new(&acl, 60);
        assert_eq!(cache.power(0), &Matrix::identity(2, 2));
        for k in 0..60 {
            assert!((cache.power(k + 1) - &acl * cache.power(k)).amax() < 1e-12);
        }
        let t = cache.decay_index();
        assert!(t < 60);
        assert!(cache.power(t).amax() < DEFAULT_DECAY_TOL);
        assert!(cache.power(t - 1).amax() >= DEFAULT_DECAY_TOL);

        let slow = AclPowerCache::new(&Matrix::from_element(1, 1, 0.99), 10);
        assert_eq!(slow.decay_index(), 10);
    }

    #[test]
    fn row_support_table_agrees_with_direct_sums() {
        let s = builtin_example(ExampleId::E3);
        let cache = AclPowerCache::new(&s.system.closed_loop(), 12);
        let h = &s.constraints.state.normals;
        let table = RowSupportTable::new(h, &cache, &s.disturbance.support);
        for i in 0..h.nrows() {
            let row = h.row(i).into_owned();
            for steps in 0..12 {
                let (hi, lo) = accumulated_support(&row, &cache, steps, &s.disturbance.support);
                assert!((table.window_max(i, steps) - hi).abs() < 1e-9);
                assert!((table.window_min(i, steps) - lo).abs() < 1e-9);
            }
        }
    }

    fn vec2() -> impl Strategy<Value = [f64; 2]> {
        [-5.0f64..5.0, -5.0f64..5.0]
    }

    proptest! {
        #[test]
        fn support_mirror_and_sublinearity(c in vec2(), d in vec2(), lam in 0.0f64..10.0,
                                           lo in vec2(), width in [0.0f64..3.0, 0.0f64..3.0]) {
            let b = BoxSupport::new(
                Vector::from_row_slice(&lo),
                Vector::from_row_slice(&[lo[0] + width[0], lo[1] + width[1]]),
            );
            let neg = [-c[0], -c[1]];
            prop_assert!((box_support_max(&c, &b) + box_support_min(&neg, &b)).abs() < 1e-9);
            let scaled = [lam * c[0], lam * c[1]];
            prop_assert!((box_support_max(&scaled, &b) - lam * box_support_max(&c, &b)).abs() < 1e-9);
            let sum = [c[0] + d[0], c[1] + d[1]];
            prop_assert!(box_support_max(&sum, &b) <= box_support_max(&c, &b) + box_support_max(&d, &b) + 1e-9);
        }

        #[test]
        fn accumulated_support_equals_vertex_search(
            a in [-0.9f64..0.9, -0.9f64..0.9, -0.9f64..0.9, -0.9f64..0.9],
            row in vec2(),
            steps in 1usize..=4,
        ) {
            let acl = Matrix::from_row_slice(2, 2, &a);
            let cache = AclPowerCache::new(&acl, 6);
            let row = RowDVector::from_row_slice(&row);
            let (hi, lo) = accumulated_support(&row, &cache, steps, &unit_box());
            let (ohi, olo) = vertex_oracle(&row, &acl, steps, &unit_box());
            prop_assert!((hi - ohi).abs() < 1e-9);
            prop_assert!((lo - olo).abs() < 1e-9);
        }
    }
}
