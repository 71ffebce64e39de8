//! Plant, constraints, disturbance support and task description.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::Schur;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linops::solve_dare;
use crate::rng::stream_rng;
use crate::{Error, Matrix, Result, Vector};

/// Linear time-invariant plant `x+ = A x + B u + w` with the pre-stabilizing
/// gain `K` of the policy `u = K x + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub k: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix, k: Matrix) -> Self {
        Self { a, b, k }
    }

    /// Builds the system with `K` set to the infinite-horizon LQR gain for `(Q, R)`.
    pub fn with_lqr_gain(a: Matrix, b: Matrix, q: &Matrix, r: &Matrix) -> Result<Self> {
        let lqr = solve_dare(&a, &b, q, r)?;
        Ok(Self { a, b, k: lqr.gain })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A + B K`.
    pub fn closed_loop(&self) -> Matrix {
        &self.a + &self.b * &self.k
    }

    /// Plant update without any feedback applied.
    pub fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        &self.a * x + &self.b * u + w
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    match Schur::try_new(m.clone(), 1e-14, 100_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|c| libm::hypot(c.re, c.im))
            .fold(0.0, f64::max),
        None => {
            // Gelfand estimate from a high power.
            let mut p = m.clone();
            let mut log_scale = 0.0;
            for _ in 0..8 {
                p = &p * &p;
                let norm = p.norm();
                if norm == 0.0 {
                    return 0.0;
                }
                p /= norm;
                log_scale = 2.0 * log_scale + libm::log(norm);
            }
            libm::exp(log_scale / 256.0)
        }
    }
}

/// Polyhedron `{x : normals * x <= offsets}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpaces {
    pub normals: Matrix,
    pub offsets: Vector,
}

impl HalfSpaces {
    pub fn new(normals: Matrix, offsets: Vector) -> Self {
        Self { normals, offsets }
    }

    /// Rows `e_1, -e_1, e_2, -e_2, ...` with offset `bound` on every row.
    pub fn symmetric_box(dim: usize, bound: f64) -> Self {
        let mut normals = Matrix::zeros(2 * dim, dim);
        for j in 0..dim {
            normals[(2 * j, j)] = 1.0;
            normals[(2 * j + 1, j)] = -1.0;
        }
        Self {
            normals,
            offsets: Vector::from_element(2 * dim, bound),
        }
    }

    pub fn rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        let lhs = &self.normals * x;
        lhs.iter().zip(self.offsets.iter()).all(|(l, o)| *l <= *o + tol)
    }

    /// Bounding box of the polyhedron when every row is a signed coordinate
    /// direction and both directions of each coordinate are present.
    pub fn axis_aligned_bounds(&self) -> Option<BoxSupport> {
        let n = self.dim();
        let mut lower = Vector::from_element(n, f64::NEG_INFINITY);
        let mut upper = Vector::from_element(n, f64::INFINITY);
        for r in 0..self.rows() {
            let row = self.normals.row(r);
            let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
            if nz.len() != 1 {
                return None;
            }
            let j = nz[0];
            let bound = self.offsets[r] / row[j];
            if row[j] > 0.0 {
                upper[j] = upper[j].min(bound);
            } else {
                lower[j] = lower[j].max(bound);
            }
        }
        if lower.iter().chain(upper.iter()).all(|v| v.is_finite()) {
            Some(BoxSupport { lower, upper })
        } else {
            None
        }
    }
}

/// State chance constraints `P([H]_i x <= h_i) >= 1 - alpha` per row and hard
/// input constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSpec {
    pub state: HalfSpaces,
    pub input: HalfSpaces,
    /// Per-row violation bound.
    pub alpha: f64,
}

impl ConstraintSpec {
    pub fn new(state: HalfSpaces, input: HalfSpaces, alpha: f64) -> Self {
        Self { state, input, alpha }
    }

    /// Splits a joint violation budget evenly over the state rows (Boole).
    pub fn with_joint_alpha(state: HalfSpaces, input: HalfSpaces, alpha_joint: f64) -> Self {
        let p = state.rows().max(1) as f64;
        Self::new(state, input, alpha_joint / p)
    }

    pub fn state_rows(&self) -> usize {
        self.state.rows()
    }

    pub fn input_rows(&self) -> usize {
        self.input.rows()
    }
}

/// Axis-aligned bounded disturbance support.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSupport {
    pub lower: Vector,
    pub upper: Vector,
}

impl BoxSupport {
    pub fn new(lower: Vector, upper: Vector) -> Self {
        Self { lower, upper }
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self {
            lower: Vector::from_element(dim, -half_width),
            upper: Vector::from_element(dim, half_width),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vector {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn half_width(&self) -> Vector {
        (&self.upper - &self.lower) * 0.5
    }

    pub fn contains(&self, w: &Vector, tol: f64) -> bool {
        w.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (lo, hi))| *v >= *lo - tol && *v <= *hi + tol)
    }

    /// All `2^n` corners, in binary counting order.
    pub fn vertices(&self) -> Vec<Vector> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                Vector::from_fn(n, |j, _| {
                    if mask >> j & 1 == 1 {
                        self.upper[j]
                    } else {
                        self.lower[j]
                    }
                })
            })
            .collect()
    }
}

/// Stand-ins for the unknown disturbance distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    UniformBox,
    /// Gaussian restricted to the support by rejection.
    TruncatedGaussian {
        mean: Vector,
        covariance: Matrix,
    },
    DiscreteLattice {
        points: Vec<Vector>,
        probabilities: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceModel {
    pub support: BoxSupport,
    pub generator: Generator,
    pub seed: u64,
}

impl DisturbanceModel {
    pub fn uniform(support: BoxSupport, seed: u64) -> Self {
        Self {
            support,
            generator: Generator::UniformBox,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Sampler on the given ChaCha stream of this model's seed.
    pub fn sampler(&self, stream: u64) -> DisturbanceSampler {
        DisturbanceSampler::new(self, stream_rng(self.seed, stream))
    }
}

const MAX_REJECTIONS: usize = 10_000_000;

/// Draws i.i.d. disturbances inside the support.
pub struct DisturbanceSampler {
    support: BoxSupport,
    kind: SamplerKind,
    rng: ChaCha8Rng,
}

enum SamplerKind {
    Uniform,
    Gaussian { mean: Vector, factor: Matrix },
    Lattice { points: Vec<Vector>, cumulative: Vec<f64> },
}

impl DisturbanceSampler {
    pub fn new(model: &DisturbanceModel, rng: ChaCha8Rng) -> Self {
        let kind = match &model.generator {
            Generator::UniformBox => SamplerKind::Uniform,
            Generator::TruncatedGaussian { mean, covariance } => {
                let factor = psd_factor(covariance);
                SamplerKind::Gaussian {
                    mean: mean.clone(),
                    factor,
                }
            }
            Generator::DiscreteLattice { points, probabilities } => {
                let mut acc = 0.0;
                let cumulative = probabilities
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect();
                SamplerKind::Lattice {
                    points: points.clone(),
                    cumulative,
                }
            }
        };
        Self {
            support: model.support.clone(),
            kind,
            rng,
        }
    }

    pub fn sample(&mut self) -> Vector {
        let n = self.support.dim();
        match &self.kind {
            SamplerKind::Uniform => {
                let lo = &self.support.lower;
                let hi = &self.support.upper;
                let rng = &mut self.rng;
                Vector::from_fn(n, |j, _| {
                    let u: f64 = rng.random();
                    lo[j] + (hi[j] - lo[j]) * u
                })
            }
            SamplerKind::Gaussian { mean, factor } => {
                for _ in 0..MAX_REJECTIONS {
                    let rng = &mut self.rng;
                    let z = Vector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
                    let w = mean + factor * z;
                    if self.support.contains(&w, 0.0) {
                        return w;
                    }
                }
                panic!("truncated gaussian: support has negligible probability mass");
            }
            SamplerKind::Lattice { points, cumulative } => {
                let u: f64 = self.rng.random();
                let total = *cumulative.last().expect("lattice has points");
                let target = u * total;
                let idx = cumulative.iter().position(|c| target < *c).unwrap_or(points.len() - 1);
                points[idx].clone()
            }
        }
    }
}

/// Lower-triangular `L` with `L L^T = cov`; tolerates semidefinite input.
fn psd_factor(cov: &Matrix) -> Matrix {
    if let Some(chol) = cov.clone().cholesky() {
        return chol.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    &eig.eigenvectors * Matrix::from_diagonal(&sqrt_vals)
}

/// Task horizon, MPC horizon, initial state and quadratic cost.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    /// Task duration `T`.
    pub horizon: usize,
    /// MPC prediction horizon `N`.
    pub mpc_horizon: usize,
    pub x_start: Vector,
    pub q: Matrix,
    pub q_final: Matrix,
    pub r: Matrix,
    pub x_ref: Vector,
}

impl TaskSpec {
    pub fn stage_cost(&self, x: &Vector, u: &Vector) -> f64 {
        let e = x - &self.x_ref;
        (e.transpose() * &self.q * &e)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }

    pub fn final_cost(&self, x: &Vector) -> f64 {
        let e = x - &self.x_ref;
        (e.transpose() * &self.q_final * &e)[(0, 0)]
    }
}

/// Everything needed to run the controller on one problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub system: LtiSystem,
    pub constraints: ConstraintSpec,
    pub disturbance: DisturbanceModel,
    pub task: TaskSpec,
}

impl Scenario {
    pub fn validate(&self) -> Vec<Violation> {
        validate(&self.system, &self.constraints, &self.disturbance, &self.task)
    }
}

/// One failed invariant in a validation report.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.detail.is_empty() {
            f.write_str(self.invariant)
        } else {
            write!(f, "{}: {}", self.invariant, self.detail)
        }
    }
}

struct Report(Vec<Violation>);

impl Report {
    fn fail(&mut self, invariant: &'static str, detail: String) {
        self.0.push(Violation { invariant, detail });
    }

    fn check(&mut self, ok: bool, invariant: &'static str, detail: impl FnOnce() -> String) {
        if !ok {
            self.fail(invariant, detail());
        }
    }
}

const SYM_TOL: f64 = 1e-12;

fn is_symmetric(m: &Matrix) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= SYM_TOL * m.amax().max(1.0)
}

fn is_psd(m: &Matrix) -> bool {
    is_symmetric(m)
        && m.clone()
            .symmetric_eigenvalues()
            .iter()
            .all(|v| *v >= -SYM_TOL * m.amax().max(1.0))
}

fn is_pd(m: &Matrix) -> bool {
    is_symmetric(m) && m.clone().cholesky().is_some()
}

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Checks every structural and numerical invariant of a configuration.
/// An empty report means the configuration is usable.
pub fn validate(
    system: &LtiSystem,
    constraints: &ConstraintSpec,
    dist: &DisturbanceModel,
    task: &TaskSpec,
) -> Vec<Violation> {
    let mut r = Report(Vec::new());
    let n = system.a.nrows();
    let m = system.b.ncols();

    let dims_ok = system.a.is_square()
        && system.b.nrows() == n
        && system.k.nrows() == m
        && system.k.ncols() == n
        && n > 0
        && m > 0;
    r.check(dims_ok, "system dimensions inconsistent", || {
        format!(
            "A is {}x{}, B is {}x{}, K is {}x{}",
            system.a.nrows(),
            system.a.ncols(),
            system.b.nrows(),
            system.b.ncols(),
            system.k.nrows(),
            system.k.ncols()
        )
    });
    if dims_ok {
        let rho = spectral_radius(&system.closed_loop());
        r.check(rho < 1.0, "spectral radius ≥ 1", || {
            format!("A + BK has spectral radius {rho}")
        });
    }

    let p = constraints.state.rows();
    let q = constraints.input.rows();
    r.check(p >= 1, "state constraints empty", String::new);
    r.check(q >= 1, "input constraints empty", String::new);
    r.check(
        constraints.state.dim() == n && constraints.state.offsets.len() == p,
        "state constraint dimensions inconsistent",
        || {
            format!(
                "H is {}x{}, h has {}",
                p,
                constraints.state.dim(),
                constraints.state.offsets.len()
            )
        },
    );
    r.check(
        constraints.input.dim() == m && constraints.input.offsets.len() == q,
        "input constraint dimensions inconsistent",
        || {
            format!(
                "H_u is {}x{}, h_u has {}",
                q,
                constraints.input.dim(),
                constraints.input.offsets.len()
            )
        },
    );
    let finite = all_finite(&constraints.state.offsets)
        && all_finite(&constraints.input.offsets)
        && constraints.state.normals.iter().all(|v| v.is_finite())
        && constraints.input.normals.iter().all(|v| v.is_finite());
    r.check(finite, "constraint data not finite", String::new);
    r.check(
        constraints.alpha > 0.0 && constraints.alpha < 1.0,
        "alpha outside (0, 1)",
        || format!("alpha = {}", constraints.alpha),
    );
    r.check(
        constraints.state.offsets.iter().all(|h| *h > 0.0),
        "origin not in interior of state polytope",
        || "every entry of h must be positive".to_string(),
    );
    r.check(
        constraints.input.offsets.iter().all(|h| *h > 0.0),
        "origin not in interior of input polytope",
        || "every entry of h_u must be positive".to_string(),
    );

    let support = &dist.support;
    let support_dims = support.lower.len() == n && support.upper.len() == n;
    r.check(support_dims, "support dimension mismatch", || {
        format!(
            "support has {} / {} entries, state has {n}",
            support.lower.len(),
            support.upper.len()
        )
    });
    r.check(
        all_finite(&support.lower) && all_finite(&support.upper),
        "support not finite",
        String::new,
    );
    if support.lower.len() == support.upper.len() {
        r.check(
            support.lower.iter().zip(support.upper.iter()).all(|(l, u)| l <= u),
            "support lower > upper",
            || "lower bound exceeds upper bound in some coordinate".to_string(),
        );
    }
    match &dist.generator {
        Generator::UniformBox => {}
        Generator::TruncatedGaussian { mean, covariance } => {
            r.check(
                mean.len() == n && covariance.nrows() == n && covariance.ncols() == n,
                "gaussian dimensions inconsistent",
                String::new,
            );
            r.check(is_psd(covariance), "gaussian covariance not symmetric PSD", String::new);
            if support_dims && mean.len() == n {
                let strictly_inside = (0..n).all(|j| {
                    support.lower[j] < support.upper[j] && mean[j] >= support.lower[j] && mean[j] <= support.upper[j]
                });
                r.check(strictly_inside, "gaussian mean outside support", || {
                    "mean must lie in a support box of positive width".to_string()
                });
            }
        }
        Generator::DiscreteLattice { points, probabilities } => {
            r.check(
                !points.is_empty() && points.len() == probabilities.len(),
                "lattice points and probabilities mismatch",
                || format!("{} points, {} probabilities", points.len(), probabilities.len()),
            );
            r.check(
                probabilities.iter().all(|p| *p >= 0.0),
                "lattice probabilities negative",
                String::new,
            );
            let total: f64 = probabilities.iter().sum();
            r.check(
                (total - 1.0).abs() <= 1e-12,
                "lattice probabilities do not sum to 1",
                || format!("sum = {total}"),
            );
            r.check(
                points
                    .iter()
                    .all(|pt| pt.len() == n && (!support_dims || support.contains(pt, 0.0))),
                "lattice point outside support",
                String::new,
            );
        }
    }

    r.check(task.horizon >= 1, "task horizon T must be positive", String::new);
    r.check(task.mpc_horizon >= 1, "MPC horizon N must be positive", String::new);
    r.check(task.mpc_horizon < task.horizon, "N must be < T", || {
        format!("N = {}, T = {}", task.mpc_horizon, task.horizon)
    });
    r.check(task.x_start.len() == n, "initial state dimension mismatch", String::new);
    r.check(task.x_ref.len() == n, "reference dimension mismatch", String::new);
    r.check(
        task.q.nrows() == n && task.q_final.nrows() == n && task.r.nrows() == m,
        "cost matrix dimensions inconsistent",
        String::new,
    );
    r.check(is_psd(&task.q), "Q not symmetric PSD", String::new);
    r.check(is_psd(&task.q_final), "Q_F not symmetric PSD", String::new);
    r.check(is_pd(&task.r), "R not symmetric PD", String::new);
    r.0
}

/// The three benchmark systems used in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExampleId {
    E1,
    E2,
    E3,
}

impl ExampleId {
    pub const ALL: [ExampleId; 3] = [ExampleId::E1, ExampleId::E2, ExampleId::E3];

    pub fn name(self) -> &'static str {
        match self {
            ExampleId::E1 => "E1",
            ExampleId::E2 => "E2",
            ExampleId::E3 => "E3",
        }
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "E1" => Ok(ExampleId::E1),
            "E2" => Ok(ExampleId::E2),
            "E3" => Ok(ExampleId::E3),
            _ => Err(Error::UnknownExample(s.to_string())),
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Benchmark parameters: `T = 15`, `N = 6`, `W = [-1, 1]^2`, `alpha = 0.1`,
/// `Q = Q_F = I`, `R = 1`, `x_ref = 0` and `K` the LQR gain for `(A, B, Q, R)`.
pub fn builtin_example(id: ExampleId) -> Scenario {
    let (a, b, h, hu, x_start) = match id {
        ExampleId::E1 => ([1.2, 1.5, 0.0, 1.3], [0.0, 1.0], 20.0, 6.0, [-4.0, 1.0]),
        ExampleId::E2 => ([1.0, 0.0, 1.0, 1.0], [1.0, 2.0], 20.0, 2.0, [-5.0, 19.0]),
        ExampleId::E3 => ([1.6, 1.1, -0.7, 1.2], [1.0, 1.0], 10.0, 10.0, [3.0, -3.0]),
    };
    let a = Matrix::from_row_slice(2, 2, &a);
    let b = Matrix::from_row_slice(2, 1, &b);
    let q = Matrix::identity(2, 2);
    let r = Matrix::identity(1, 1);
    let system = LtiSystem::with_lqr_gain(a, b, &q, &r).expect("benchmark systems are stabilizable");
    let input = HalfSpaces::new(Matrix::from_row_slice(2, 1, &[1.0, -1.0]), Vector::from_element(2, hu));
    let constraints = ConstraintSpec::new(HalfSpaces::symmetric_box(2, h), input, 0.1);
    let task = TaskSpec {
        horizon: 15,
        mpc_horizon: 6,
        x_start: Vector::from_row_slice(&x_start),
        q: q.clone(),
        q_final: q,
        r,
        x_ref: Vector::zeros(2),
    };
    Scenario {
        system,
        constraints,
        disturbance: DisturbanceModel::uniform(BoxSupport::symmetric(2, 1.0), 0),
        task,
    }
}

/// All lattice points of `{-1, 0, 1}^dim` with equal probabilities.
pub fn ternary_lattice(dim: usize) -> Generator {
    let count = 3usize.pow(dim as u32);
    let points = (0..count)
        .map(|mut code| {
            Vector::from_fn(dim, |_, _| {
                let digit = code % 3;
                code /= 3;
                digit as f64 - 1.0
            })
        })
        .collect();
    Generator::DiscreteLattice {
        points,
        probabilities: vec![1.0 / count as f64; count],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::OFFLINE_STREAM;

    fn has(report: &[Violation], needle: &str) -> bool {
        report.iter().any(|v| v.invariant.contains(needle))
    }

    #[test]
    fn builtin_examples_validate() {
        for id in ExampleId::ALL {
            let s = builtin_example(id);
            let report = s.validate();
            assert!(report.is_empty(), "{id}: {report:?}");
        }
    }

    #[test]
    fn builtin_parameters() {
        let e1 = builtin_example(ExampleId::E1);
        assert_eq!(e1.system.a, Matrix::from_row_slice(2, 2, &[1.2, 1.5, 0.0, 1.3]));
        assert_eq!(e1.constraints.alpha, 0.1);
        assert_eq!(e1.task.mpc_horizon, 6);
        assert_eq!(e1.task.horizon, 15);
        assert_eq!(e1.constraints.input.offsets, Vector::from_element(2, 6.0));

        let e2 = builtin_example(ExampleId::E2);
        assert_eq!(e2.system.b, Matrix::from_row_slice(2, 1, &[1.0, 2.0]));
        assert_eq!(e2.constraints.input.offsets, Vector::from_element(2, 2.0));
        assert_eq!(e2.task.x_start, Vector::from_row_slice(&[-5.0, 19.0]));

        let e3 = builtin_example(ExampleId::E3);
        assert_eq!(e3.system.a, Matrix::from_row_slice(2, 2, &[1.6, 1.1, -0.7, 1.2]));
        assert_eq!(e3.constraints.state.offsets, Vector::from_element(4, 10.0));
        assert_eq!(
            e3.constraints.state.normals,
            Matrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0])
        );
    }

    #[test]
    fn unknown_example_id() {
        assert!(matches!("E9".parse::<ExampleId>(), Err(Error::UnknownExample(_))));
        assert_eq!("e2".parse::<ExampleId>().unwrap(), ExampleId::E2);
    }

    #[test]
    fn identity_plant_is_not_stable() {
        let mut s = builtin_example(ExampleId::E2);
        s.system = LtiSystem::new(Matrix::identity(2, 2), Matrix::zeros(2, 1), Matrix::zeros(1, 2));
        assert!(has(&s.validate(), "spectral radius ≥ 1"));
    }

    #[test]
    fn inverted_support_is_reported() {
        let mut s = builtin_example(ExampleId::E1);
        s.disturbance.support = BoxSupport::new(Vector::from_element(2, 1.0), Vector::from_element(2, -1.0));
        assert!(has(&s.validate(), "support lower > upper"));
    }

    #[test]
    fn other_invariants_are_reported() {
        let mut s = builtin_example(ExampleId::E1);
        s.constraints.alpha = 1.0;
        s.constraints.state.offsets[0] = 0.0;
        s.task.mpc_horizon = 15;
        s.task.r = Matrix::zeros(1, 1);
        s.disturbance.generator = Generator::DiscreteLattice {
            points: alloc::vec![Vector::zeros(2)],
            probabilities: alloc::vec![0.5],
        };
        let report = s.validate();
        for needle in [
            "alpha outside",
            "origin not in interior of state",
            "N must be < T",
            "R not symmetric PD",
            "sum to 1",
        ] {
            assert!(has(&report, needle), "missing {needle}: {report:?}");
        }
    }

    #[test]
    fn spectral_radius_matches_known_values() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
        assert!((spectral_radius(&Matrix::identity(3, 3)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn samplers_stay_in_support() {
        let support = BoxSupport::new(
            Vector::from_row_slice(&[-1.0, 0.0]),
            Vector::from_row_slice(&[0.5, 2.0]),
        );
        let gens = [
            Generator::UniformBox,
            Generator::TruncatedGaussian {
                mean: Vector::from_row_slice(&[0.0, 1.0]),
                covariance: Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
            },
        ];
        for generator in gens {
            let model = DisturbanceModel {
                support: support.clone(),
                generator,
                seed: 3,
            };
            let mut s = model.sampler(OFFLINE_STREAM);
            for _ in 0..2000 {
                assert!(support.contains(&s.sample(), 0.0));
            }
        }
    }

    #[test]
    fn lattice_frequencies() {
        let model = DisturbanceModel {
            support: BoxSupport::symmetric(1, 1.0),
            generator: Generator::DiscreteLattice {
                points: alloc::vec![
                    Vector::from_element(1, -1.0),
                    Vector::from_element(1, 0.0),
                    Vector::from_element(1, 1.0)
                ],
                probabilities: alloc::vec![0.2, 0.5, 0.3],
            },
            seed: 11,
        };
        let mut s = model.sampler(OFFLINE_STREAM);
        let draws = 20_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[(s.sample()[0] + 1.0) as usize] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.5, 0.3]) {
            let freq = *c as f64 / draws as f64;
            let sd = libm::sqrt(p * (1.0 - p) / draws as f64);
            assert!((freq - p).abs() < 4.0 * sd, "{freq} vs {p}");
        }
    }

    #[test]
    fn axis_aligned_bounds_of_box() {
        let hs = HalfSpaces::symmetric_box(2, 20.0);
        let b = hs.axis_aligned_bounds().unwrap();
        assert_eq!(b.lower, Vector::from_element(2, -20.0));
        assert_eq!(b.upper, Vector::from_element(2, 20.0));
        let skew = HalfSpaces::new(Matrix::from_row_slice(1, 2, &[1.0, 1.0]), Vector::from_element(1, 1.0));
        assert!(skew.axis_aligned_bounds().is_none());
    }
}
