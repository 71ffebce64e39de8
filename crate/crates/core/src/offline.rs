//! Offline quantile bounds on the propagated disturbance.
//!
//! For each sample sequence `w_0, w_1, ...` the accumulated variable
//! `y_t = w_t + A_cl y_{t-1}` is formed, and for each time `t` and state
//! row `i` the bound `gamma[t][i]` is the rank-th smallest of the sampled
//! values `[H]_i y_t`. Since every chance constraint row reduces to a scalar
//! inequality on `[H]_i y_t`, the sample region is a half-space cut at an
//! order statistic.

use alloc::vec;
use alloc::vec::Vec;

use crate::linops::{box_support_max, AclPowerCache};
use crate::model::{BoxSupport, ConstraintSpec, DisturbanceModel, LtiSystem, Scenario};
use crate::rng::OFFLINE_STREAM;
use crate::{Error, Result, Vector};

/// Sampled accumulated disturbances, `y[s][t]` in a flat buffer.
#[derive(Clone, Debug)]
pub struct YSamples {
    n_samples: usize,
    horizon: usize,
    dim: usize,
    seed: u64,
    y: Vec<f64>,
    raw: Option<Vec<f64>>,
}

impl YSamples {
    /// Builds samples from explicit disturbance sequences (all of length `horizon`).
    pub fn from_sequences(sequences: &[Vec<Vector>], cache: &AclPowerCache) -> Self {
        let n_samples = sequences.len();
        let horizon = sequences.first().map_or(0, |s| s.len());
        let dim = cache.dim();
        let mut y = Vec::with_capacity(n_samples * horizon * dim);
        let mut raw = Vec::with_capacity(n_samples * horizon * dim);
        for seq in sequences {
            assert_eq!(seq.len(), horizon, "sequences must share one length");
            let mut acc = Vector::zeros(dim);
            for w in seq {
                acc = w + cache.acl() * &acc;
                y.extend(acc.iter());
                raw.extend(w.iter());
            }
        }
        Self {
            n_samples,
            horizon,
            dim,
            seed: 0,
            y,
            raw: Some(raw),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn offset(&self, s: usize, t: usize) -> usize {
        (s * self.horizon + t) * self.dim
    }

    /// `y_t` of sample `s`.
    pub fn y(&self, s: usize, t: usize) -> &[f64] {
        let o = self.offset(s, t);
        &self.y[o..o + self.dim]
    }

    /// Raw draw `w_t` of sample `s`, if still stored.
    pub fn w(&self, s: usize, t: usize) -> Option<&[f64]> {
        let o = self.offset(s, t);
        self.raw.as_ref().map(|r| &r[o..o + self.dim])
    }

    /// Largest deviation from `y_{t+1} = w_{t+1} + A_cl y_t`, `y_0 = w_0`.
    /// `None` once the raw draws were discarded.
    pub fn recursion_residual(&self, cache: &AclPowerCache) -> Option<f64> {
        self.raw.as_ref()?;
        let mut worst: f64 = 0.0;
        for s in 0..self.n_samples {
            for t in 0..self.horizon {
                let w = Vector::from_column_slice(self.w(s, t)?);
                let expected = if t == 0 {
                    w
                } else {
                    w + cache.acl() * Vector::from_column_slice(self.y(s, t - 1))
                };
                let got = Vector::from_column_slice(self.y(s, t));
                worst = worst.max((got - expected).amax());
            }
        }
        Some(worst)
    }

    pub fn discard_raw(&mut self) {
        self.raw = None;
    }
}

/// Draws `n_samples` independent sequences of length `horizon` from the
/// model's offline stream and propagates them through the closed loop.
pub fn draw_y_samples(dist: &DisturbanceModel, cache: &AclPowerCache, horizon: usize, n_samples: usize) -> YSamples {
    let dim = cache.dim();
    let mut sampler = dist.sampler(OFFLINE_STREAM);
    let mut y = Vec::with_capacity(n_samples * horizon * dim);
    let mut raw = Vec::with_capacity(n_samples * horizon * dim);
    let acl = cache.acl();
    for _ in 0..n_samples {
        let mut acc = Vector::zeros(dim);
        for _ in 0..horizon {
            let w = sampler.sample();
            acc = &w + acl * &acc;
            y.extend(acc.iter());
            raw.extend(w.iter());
        }
    }
    YSamples {
        n_samples,
        horizon,
        dim,
        seed: dist.seed,
        y,
        raw: Some(raw),
    }
}

/// `ceil` that ignores floating-point noise just above an integer.
pub(crate) fn ceil_robust(x: f64) -> usize {
    let c = libm::ceil(x - 1e-9 * x.abs().max(1.0));
    if c <= 0.0 {
        0
    } else {
        c as usize
    }
}

/// Log binomial probability mass `C(n, j) p^j (1-p)^(n-j)`.
fn ln_binomial_pmf(n: usize, j: usize, p: f64) -> f64 {
    let ln_choose = libm::lgamma(n as f64 + 1.0) - libm::lgamma(j as f64 + 1.0) - libm::lgamma((n - j) as f64 + 1.0);
    let a = if j == 0 { 0.0 } else { j as f64 * libm::log(p) };
    let b = if j == n {
        0.0
    } else {
        (n - j) as f64 * libm::log(1.0 - p)
    };
    ln_choose + a + b
}

/// Probability that the `rank`-th order statistic of `n` samples falls below
/// the true `(1 - alpha)`-quantile: `P(Bin(n, 1 - alpha) >= rank)`.
pub fn achieved_beta(n: usize, alpha: f64, rank: usize) -> f64 {
    if rank == 0 {
        return 1.0;
    }
    let p = 1.0 - alpha;
    (rank..=n)
        .map(|j| libm::exp(ln_binomial_pmf(n, j, p)))
        .sum::<f64>()
        .min(1.0)
}

/// Selected order statistic and the confidence it achieves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantileRank {
    /// 1-based rank.
    pub rank: usize,
    pub beta: f64,
}

/// Picks the order statistic used as the `(1 - alpha)` quantile bound.
///
/// Without a target the standard conservative empirical quantile
/// `ceil((1 - alpha)(n + 1))` is used (capped at `n`). With a target, the
/// smallest rank whose order statistic upper-bounds the quantile with
/// probability at least `1 - beta_target`.
pub fn quantile_rank(n: usize, alpha: f64, beta_target: Option<f64>) -> Result<QuantileRank> {
    let required = ceil_robust(1.0 / alpha).max(1);
    if n < required {
        return Err(Error::InsufficientSamples {
            required,
            available: n,
            alpha,
        });
    }
    let rank = match beta_target {
        None => ceil_robust((1.0 - alpha) * (n as f64 + 1.0)).clamp(1, n),
        Some(target) => {
            // (1 - alpha)^n <= target is needed for even the maximum to qualify.
            let needed = ceil_robust(libm::log(target) / libm::log(1.0 - alpha)).max(required);
            if n < needed {
                return Err(Error::InsufficientSamples {
                    required: needed,
                    available: n,
                    alpha,
                });
            }
            // achieved_beta is decreasing in rank.
            let (mut lo, mut hi) = (1usize, n);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if achieved_beta(n, alpha, mid) <= target {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            lo
        }
    };
    Ok(QuantileRank {
        rank,
        beta: achieved_beta(n, alpha, rank),
    })
}

/// Rank of the exact `(1 - alpha)` quantile when the samples enumerate an
/// equally weighted distribution.
pub fn exact_rank(n: usize, alpha: f64) -> usize {
    ceil_robust((1.0 - alpha) * n as f64).clamp(1, n.max(1))
}

/// How a gamma entry was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum GammaMethod {
    OrderStatistic,
    ConservativeRecursion,
    Saturated,
}

impl GammaMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GammaMethod::OrderStatistic => "order-statistic",
            GammaMethod::ConservativeRecursion => "conservative-recursion",
            GammaMethod::Saturated => "saturated",
        }
    }
}

/// Per-time, per-row quantile bounds `gamma[t][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaTable {
    pub alpha: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub rank: usize,
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub method: Vec<Vec<GammaMethod>>,
    /// Hash of the system, constraints and support the table was built for.
    pub fingerprint: u64,
}

impl GammaTable {
    pub fn horizon(&self) -> usize {
        self.gamma.len()
    }

    pub fn rows(&self) -> usize {
        self.gamma.first().map_or(0, |g| g.len())
    }

    /// `gamma[t][i]`, holding the last entry for `t` past the table.
    pub fn at(&self, t: usize, i: usize) -> f64 {
        let t = t.min(self.horizon() - 1);
        self.gamma[t][i]
    }

    /// One-step bound `gamma[0]`, used by the fixed-tightening baseline.
    pub fn one_step(&self) -> &[f64] {
        &self.gamma[0]
    }
}

/// `gamma[t][i]` = the `rank`-th smallest of `[H]_i y_t` over all samples.
/// Ties resolve to the tied value itself.
pub fn compute_gamma(samples: &YSamples, constraints: &ConstraintSpec, rank: usize) -> GammaTable {
    let n = samples.n_samples();
    assert!(rank >= 1 && rank <= n, "rank {rank} outside 1..={n}");
    let h = &constraints.state.normals;
    let p = h.nrows();
    let beta = achieved_beta(n, constraints.alpha, rank);
    let mut gamma = Vec::with_capacity(samples.horizon());
    let mut values = vec![0.0; n];
    for t in 0..samples.horizon() {
        let mut row_gamma = Vec::with_capacity(p);
        for i in 0..p {
            for (s, v) in values.iter_mut().enumerate() {
                *v = h.row(i).iter().zip(samples.y(s, t)).map(|(a, b)| a * b).sum();
            }
            let (_, kth, _) = values.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
            row_gamma.push(*kth);
        }
        gamma.push(row_gamma);
    }
    let horizon = gamma.len();
    GammaTable {
        alpha: constraints.alpha,
        n_samples: n,
        seed: samples.seed(),
        rank,
        gamma,
        beta: vec![vec![beta; p]; horizon],
        method: vec![vec![GammaMethod::OrderStatistic; p]; horizon],
        fingerprint: 0,
    }
}

/// Replaces entries from `from_t` on by the cheap bound
/// `gamma[t] = gamma[t-1] + max_w [H]_i A_cl^t w`, holding the value fixed
/// once the closed-loop powers have decayed.
pub fn conservative_extend(
    table: &GammaTable,
    cache: &AclPowerCache,
    constraints: &ConstraintSpec,
    support: &BoxSupport,
    from_t: usize,
) -> GammaTable {
    assert!(from_t >= 1, "conservative recursion needs gamma[from_t - 1]");
    let horizon = table.horizon();
    assert!(
        cache.max_power() + 1 >= horizon,
        "power cache shorter than the gamma table"
    );
    let decay = cache.decay_index();
    let h = &constraints.state.normals;
    let mut out = table.clone();
    for t in from_t..horizon {
        for i in 0..h.nrows() {
            if t > decay {
                out.gamma[t][i] = out.gamma[decay][i];
                out.beta[t][i] = out.beta[decay][i];
                out.method[t][i] = GammaMethod::Saturated;
            } else {
                let c = h.row(i) * cache.power(t);
                out.gamma[t][i] = out.gamma[t - 1][i] + box_support_max(c.as_slice(), support);
                out.beta[t][i] = out.beta[t - 1][i];
                out.method[t][i] = GammaMethod::ConservativeRecursion;
            }
        }
    }
    out
}

/// FNV-1a over the bit patterns of everything a gamma table depends on
/// besides the sample draws.
pub fn scenario_fingerprint(system: &LtiSystem, constraints: &ConstraintSpec, support: &BoxSupport) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |v: f64| {
        for byte in v.to_bits().to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    let blocks = [
        &system.a,
        &system.b,
        &system.k,
        &constraints.state.normals,
        &constraints.input.normals,
    ];
    for m in blocks {
        feed(m.nrows() as f64);
        feed(m.ncols() as f64);
        m.iter().for_each(|v| feed(*v));
    }
    constraints.state.offsets.iter().for_each(|v| feed(*v));
    support.lower.iter().for_each(|v| feed(*v));
    support.upper.iter().for_each(|v| feed(*v));
    feed(constraints.alpha);
    hash
}

/// Offline phase parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineSettings {
    pub n_samples: usize,
    pub beta_target: Option<f64>,
    /// First time index computed by the conservative recursion instead of
    /// sample order statistics.
    pub conservative_from: Option<usize>,
}

impl Default for OfflineSettings {
    fn default() -> Self {
        Self {
            n_samples: 500,
            beta_target: None,
            conservative_from: None,
        }
    }
}

/// Full offline phase for a scenario, using the disturbance model's seed.
pub fn build_gamma_table(scenario: &Scenario, settings: &OfflineSettings) -> Result<GammaTable> {
    let horizon = scenario.task.horizon;
    let alpha = scenario.constraints.alpha;
    let rank = quantile_rank(settings.n_samples, alpha, settings.beta_target)?;
    let cache = AclPowerCache::new(&scenario.system.closed_loop(), horizon);
    let sample_horizon = settings
        .conservative_from
        .map_or(horizon, |from| from.clamp(1, horizon));
    let samples = draw_y_samples(&scenario.disturbance, &cache, sample_horizon, settings.n_samples);
    let mut table = compute_gamma(&samples, &scenario.constraints, rank.rank);
    if sample_horizon < horizon {
        let p = table.rows();
        table.gamma.resize(horizon, vec![0.0; p]);
        table.beta.resize(horizon, vec![0.0; p]);
        table.method.resize(horizon, vec![GammaMethod::OrderStatistic; p]);
        table = conservative_extend(
            &table,
            &cache,
            &scenario.constraints,
            &scenario.disturbance.support,
            sample_horizon,
        );
    }
    table.fingerprint = scenario_fingerprint(&scenario.system, &scenario.constraints, &scenario.disturbance.support);
    Ok(table)
}
