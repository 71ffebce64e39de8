//! Online constraint tightening and terminal sets.
//!
//! At time `t` the realized disturbances `w(0), ..., w(t-1)` enter through
//! `z_t = sum_{l<t} A_cl^{t-1-l} w(l)`. For prediction step `k` the
//! realized contribution to row `i` is `b = [H]_i A_cl^{k-t+1} z_t`, which
//! selects one of three tightening cases against the offline bound
//! `gamma[k][i]` and the support extremes `M`, `m` of the disturbances
//! still to come.

use alloc::vec::Vec;

use nalgebra::RowDVector;

use crate::linops::{box_support_max, AclPowerCache, RowSupportTable};
use crate::model::{ConstraintSpec, Scenario};
use crate::offline::GammaTable;
use crate::{Matrix, Vector};

/// Realized disturbance history of one closed-loop run.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineContext {
    history: Vec<Vector>,
    z: Vector,
}

impl OnlineContext {
    pub fn new(dim: usize) -> Self {
        Self {
            history: Vec::new(),
            z: Vector::zeros(dim),
        }
    }

    /// Current time, equal to the number of recorded disturbances.
    pub fn t(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[Vector] {
        &self.history
    }

    /// `sum_{l<t} A_cl^{t-1-l} w(l)`.
    pub fn realized_sum(&self) -> &Vector {
        &self.z
    }

    pub fn push(&mut self, w: Vector, acl: &Matrix) {
        self.z = acl * &self.z + &w;
        self.history.push(w);
    }
}

/// `[H]_i sum_{l<t} A_cl^{k-l} w(l)`; zero at `t = 0`.
pub fn compute_b(ctx: &OnlineContext, row: &RowDVector<f64>, cache: &AclPowerCache, k: usize) -> f64 {
    let t = ctx.t();
    if t == 0 {
        return 0.0;
    }
    assert!(k + 1 >= t, "prediction step {k} precedes history end {t}");
    (row * cache.power(k + 1 - t) * ctx.realized_sum())[0]
}

/// How one state row at one prediction step is tightened.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tightening {
    /// Robust against every future disturbance sequence; bound is `M`.
    FullRobust(f64),
    /// Partially robust, bound `gamma - b`.
    Adaptive(f64),
    /// The realized history already exceeds the offline bound; no row.
    Dropped,
    /// History-independent bound (baseline and nominal controllers).
    Fixed(f64),
}

impl Tightening {
    /// Amount subtracted from `h_i`, or `None` when the row is not imposed.
    pub fn bound(self) -> Option<f64> {
        match self {
            Tightening::FullRobust(v) | Tightening::Adaptive(v) | Tightening::Fixed(v) => Some(v),
            Tightening::Dropped => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Tightening::FullRobust(_) => "full-robust",
            Tightening::Adaptive(_) => "adaptive",
            Tightening::Dropped => "dropped",
            Tightening::Fixed(_) => "fixed",
        }
    }
}

/// Three-case selection. Requires `m <= big_m`.
pub fn adaptive_state_bound(gamma: f64, b: f64, big_m: f64, m: f64) -> Tightening {
    debug_assert!(m <= big_m);
    if b <= gamma - big_m {
        Tightening::FullRobust(big_m)
    } else if b > gamma - m {
        Tightening::Dropped
    } else {
        Tightening::Adaptive(gamma - b)
    }
}

/// Tightenings of one MPC problem, indexed `[k - t][row]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TighteningPlan {
    pub t: usize,
    /// Rows constraining `x_{k+1|t}`.
    pub state: Vec<Vec<Tightening>>,
    /// Rows constraining `u_{k|t}`.
    pub input: Vec<Vec<f64>>,
}

impl TighteningPlan {
    pub fn horizon(&self) -> usize {
        self.state.len()
    }

    /// `(k, i)` pairs whose state row was dropped.
    pub fn dropped(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (j, rows) in self.state.iter().enumerate() {
            for (i, tight) in rows.iter().enumerate() {
                if *tight == Tightening::Dropped {
                    out.push((self.t + j, i));
                }
            }
        }
        out
    }
}

/// Truncation of the terminal set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NHat {
    /// Every row up to the end of the task.
    Full,
    /// At most this many `l` values.
    Fixed(usize),
    /// Stop at the first `l` whose rows are all redundant over the
    /// bounding box of the state polytope.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TerminalOptions {
    pub n_hat: NHat,
    /// Also require the future inputs `K x` to meet the input constraints
    /// robustly.
    pub input_rows: bool,
}

impl Default for TerminalOptions {
    fn default() -> Self {
        Self {
            n_hat: NHat::Full,
            input_rows: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminalRow {
    State { l: usize, row: usize },
    Input { l: usize, row: usize },
}

/// Polyhedral terminal set for `x_{t+N|t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalSet {
    pub normals: Matrix,
    pub offsets: Vector,
    pub tags: Vec<TerminalRow>,
}

impl TerminalSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            normals: Matrix::zeros(0, dim),
            offsets: Vector::zeros(0),
            tags: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len()
    }

    /// Largest row violation `normal . x - offset` (negative inside).
    pub fn max_violation(&self, x: &Vector) -> f64 {
        let lhs = &self.normals * x;
        (0..self.rows())
            .map(|r| lhs[r] - self.offsets[r])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.rows() == 0 || self.max_violation(x) <= tol
    }

    fn from_rows(dim: usize, rows: Vec<(RowDVector<f64>, f64, TerminalRow)>) -> Self {
        let mut normals = Matrix::zeros(rows.len(), dim);
        let mut offsets = Vector::zeros(rows.len());
        let mut tags = Vec::with_capacity(rows.len());
        for (r, (normal, offset, tag)) in rows.into_iter().enumerate() {
            normals.row_mut(r).copy_from(&normal);
            offsets[r] = offset;
            tags.push(tag);
        }
        Self { normals, offsets, tags }
    }
}

/// Precomputed supports and powers for building plans and terminal sets
/// of one scenario.
#[derive(Clone, Debug)]
pub struct SetBuilder {
    cache: AclPowerCache,
    state_supports: RowSupportTable,
    input_supports: RowSupportTable,
    input_gain_rows: Matrix,
    constraints: ConstraintSpec,
    horizon: usize,
    mpc_horizon: usize,
    options: TerminalOptions,
}

impl SetBuilder {
    pub fn new(scenario: &Scenario, options: TerminalOptions) -> Self {
        let horizon = scenario.task.horizon;
        let cache = AclPowerCache::new(&scenario.system.closed_loop(), horizon + 1);
        let support = &scenario.disturbance.support;
        let state_supports = RowSupportTable::new(&scenario.constraints.state.normals, &cache, support);
        let input_gain_rows = &scenario.constraints.input.normals * &scenario.system.k;
        let input_supports = RowSupportTable::new(&input_gain_rows, &cache, support);
        Self {
            cache,
            state_supports,
            input_supports,
            input_gain_rows,
            constraints: scenario.constraints.clone(),
            horizon,
            mpc_horizon: scenario.task.mpc_horizon,
            options,
        }
    }

    pub fn cache(&self) -> &AclPowerCache {
        &self.cache
    }

    pub fn state_supports(&self) -> &RowSupportTable {
        &self.state_supports
    }

    pub fn options(&self) -> TerminalOptions {
        self.options
    }

    pub fn mpc_horizon(&self) -> usize {
        self.mpc_horizon
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Robust input tightening for `u_{k|t}`, which sees `k - t` unknown
    /// disturbances through `K`.
    pub fn input_tightening(&self, t: usize, k: usize) -> Vec<f64> {
        (0..self.constraints.input_rows())
            .map(|j| self.input_supports.window_max(j, k - t))
            .collect()
    }

    fn input_plan(&self, t: usize) -> Vec<Vec<f64>> {
        (t..t + self.mpc_horizon).map(|k| self.input_tightening(t, k)).collect()
    }

    /// Realization-adaptive plan at time `ctx.t()`.
    pub fn proposed_plan(&self, table: &GammaTable, ctx: &OnlineContext) -> TighteningPlan {
        let t = ctx.t();
        let h = &self.constraints.state.normals;
        let state = (t..t + self.mpc_horizon)
            .map(|k| {
                (0..h.nrows())
                    .map(|i| {
                        let steps = k - t + 1;
                        let b = compute_b(ctx, &h.row(i).into_owned(), &self.cache, k);
                        adaptive_state_bound(
                            table.at(k, i),
                            b,
                            self.state_supports.window_max(i, steps),
                            self.state_supports.window_min(i, steps),
                        )
                    })
                    .collect()
            })
            .collect();
        TighteningPlan {
            t,
            state,
            input: self.input_plan(t),
        }
    }

    /// Row bound of the fixed-tightening baseline at prediction step `k`:
    /// robust against the first `k - t` disturbances, one-step quantile for
    /// the last.
    pub fn baseline_bound(&self, table: &GammaTable, row: usize, t: usize, k: usize) -> f64 {
        let steps = k - t + 1;
        table.one_step()[row] + self.state_supports.window_max(row, steps) - self.state_supports.term_max(row, 0)
    }

    pub fn baseline_plan(&self, table: &GammaTable, t: usize) -> TighteningPlan {
        let p = self.constraints.state_rows();
        let state = (t..t + self.mpc_horizon)
            .map(|k| {
                (0..p)
                    .map(|i| Tightening::Fixed(self.baseline_bound(table, i, t, k)))
                    .collect()
            })
            .collect();
        TighteningPlan {
            t,
            state,
            input: self.input_plan(t),
        }
    }

    /// No tightening at all.
    pub fn nominal_plan(&self, t: usize) -> TighteningPlan {
        let p = self.constraints.state_rows();
        let q = self.constraints.input_rows();
        TighteningPlan {
            t,
            state: alloc::vec![alloc::vec![Tightening::Fixed(0.0); p]; self.mpc_horizon],
            input: alloc::vec![alloc::vec![0.0; q]; self.mpc_horizon],
        }
    }

    /// Number of `l` values the terminal set at time `t` spans.
    pub fn terminal_len(&self, t: usize) -> usize {
        let full = self.horizon.saturating_sub(self.mpc_horizon + t);
        match self.options.n_hat {
            NHat::Full => full,
            NHat::Fixed(n) => n.min(full),
            NHat::Auto => full,
        }
    }

    /// Terminal set at time `ctx.t()` shifted by the realized history.
    pub fn proposed_terminal(&self, table: &GammaTable, ctx: &OnlineContext) -> TerminalSet {
        let z = ctx.realized_sum().clone();
        self.terminal(ctx.t(), |l, i| table.at(self.mpc_horizon + ctx.t() + l, i), Some(&z))
    }

    /// Terminal set without the realized-history shift.
    pub fn baseline_terminal(&self, table: &GammaTable, t: usize) -> TerminalSet {
        self.terminal(t, |l, i| table.at(self.mpc_horizon + t + l, i), None)
    }

    pub fn nominal_terminal(&self, t: usize) -> TerminalSet {
        self.terminal(t, |_, _| 0.0, None)
    }

    fn terminal(&self, t: usize, gamma: impl Fn(usize, usize) -> f64, z: Option<&Vector>) -> TerminalSet {
        let n = self.cache.dim();
        let n_mpc = self.mpc_horizon;
        let len = self.terminal_len(t);
        let h = &self.constraints.state.normals;
        let bounds = match self.options.n_hat {
            NHat::Auto => self.constraints.state.axis_aligned_bounds(),
            _ => None,
        };
        let mut rows = Vec::new();
        for l in 0..len {
            let mut layer = Vec::new();
            for i in 0..h.nrows() {
                let normal = h.row(i) * self.cache.power(l + 1);
                let realized = z.map_or(0.0, |z| (h.row(i) * self.cache.power(n_mpc + l + 1) * z)[0]);
                let offset = self.constraints.state.offsets[i] - gamma(l, i) + realized;
                layer.push((normal, offset, TerminalRow::State { l, row: i }));
            }
            if self.options.input_rows {
                for j in 0..self.constraints.input_rows() {
                    let normal = self.input_gain_rows.row(j) * self.cache.power(l);
                    let offset = self.constraints.input.offsets[j] - self.input_supports.window_max(j, n_mpc + l);
                    layer.push((normal, offset, TerminalRow::Input { l, row: j }));
                }
            }
            if let Some(bounds) = &bounds {
                let redundant = l > 0
                    && layer
                        .iter()
                        .all(|(normal, offset, _)| box_support_max(normal.as_slice(), bounds) <= offset + 1e-9);
                if redundant {
                    break;
                }
            }
            rows.extend(layer);
        }
        if rows.is_empty() {
            return TerminalSet::empty(n);
        }
        TerminalSet::from_rows(n, rows)
    }
}
