//! Closed-form and quantile-based upper bounds on the PoSI constant, the
//! `B_l` union bound and its optimized combination, and lower bounds for the
//! equi-correlated design.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{beta_upper_quantile_ln, f_upper_quantile, f_upper_tail, nct_quantile, Dof, RngStream};
use crate::error::{domain, Error, Result};
use crate::family::{binomial, ln_binomial};
use crate::linalg::pairwise_sum;
use crate::optim::{brent_root, golden_min};

pub const DEFAULT_GRID: usize = 1000;
pub const MIN_GRID: usize = 100;
const B_FTOL: f64 = 1e-8;
const B_XTOL: f64 = 1e-10;
const B_LOWER: f64 = 1e-8;

fn check_ps(p: usize, s: usize) -> Result<()> {
    if p == 0 || s == 0 || s > p {
        return Err(domain(format!("need 1 <= s <= p, got s={s}, p={p}")));
    }
    Ok(())
}

/// `sqrt(2 ln(2p))`.
pub fn u_orth(p: usize) -> Result<f64> {
    if p == 0 {
        return Err(domain("p must be positive"));
    }
    Ok((2.0 * (2.0 * p as f64).ln()).sqrt())
}

/// `sqrt(2 s ln(6p/s))`.
pub fn u_sparse(p: usize, s: usize) -> Result<f64> {
    check_ps(p, s)?;
    let (p, s) = (p as f64, s as f64);
    Ok((2.0 * s * (6.0 * p / s).ln()).sqrt())
}

/// `sqrt(1 + delta) / (1 - delta)`.
pub fn c_factor(delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::DeltaOutOfRange { delta });
    }
    Ok((1.0 + delta).sqrt() / (1.0 - delta))
}

/// `u_orth(p) + 2 delta c(delta) u_sparse(p, s)`.
pub fn u_rip(p: usize, s: usize, delta: f64) -> Result<f64> {
    let c = c_factor(delta)?;
    let orth = u_orth(p)?;
    let sparse = u_sparse(p, s)?;
    if delta == 0.0 {
        return Ok(orth);
    }
    Ok(orth + 2.0 * delta * c * sparse)
}

/// `1 - alpha/2` quantile of the noncentral T with noncentrality `mu_bound`.
pub fn u_bar(mu_bound: f64, alpha: f64, r: Dof) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    nct_quantile(mu_bound, r, 1.0 - alpha / 2.0)
}

/// `|M_s| = sum_{i <= s} C(p, i)` or the pair count `sum i C(p, i)`, exact
/// when it fits in `u128`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cardinality {
    #[serde(serialize_with = "ser_opt_u128")]
    pub exact: Option<u128>,
    pub ln: f64,
}

fn ser_opt_u128<S: serde::Serializer>(v: &Option<u128>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_str(&x.to_string()),
        None => s.serialize_none(),
    }
}

fn log_sum_exp(ls: &[f64]) -> f64 {
    let m = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ls.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

fn cardinality(p: usize, s: usize, weighted: bool) -> Result<Cardinality> {
    check_ps(p, s)?;
    let (pu, w) = (p as u64, |i: usize| if weighted { i as u128 } else { 1 });
    let exact = (1..=s).try_fold(0u128, |acc, i| {
        binomial(pu, i as u64).and_then(|b| b.checked_mul(w(i))).and_then(|t| acc.checked_add(t))
    });
    let ln = match exact {
        Some(v) if v < (1u128 << 100) => (v as f64).ln(),
        _ => {
            let terms: Vec<f64> =
                (1..=s).map(|i| ln_binomial(pu, i as u64) + (w(i) as f64).ln()).collect();
            log_sum_exp(&terms)
        }
    };
    Ok(Cardinality { exact, ln })
}

pub fn family_cardinality(p: usize, s: usize) -> Result<Cardinality> {
    cardinality(p, s, false)
}

pub fn pair_cardinality(p: usize, s: usize) -> Result<Cardinality> {
    cardinality(p, s, true)
}

/// Which count plays the role of `rho` in the second `B_l` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoChoice {
    /// `|M_s|`, the number of models.
    #[default]
    Models,
    /// The number of `(M, i)` pairs.
    Pairs,
}

impl std::str::FromStr for RhoChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "models" => Ok(RhoChoice::Models),
            "pairs" => Ok(RhoChoice::Pairs),
            other => Err(Error::Parse(format!("rho count {other:?}: expected \"models\" or \"pairs\""))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BellParams {
    pub q: u64,
    pub r: Dof,
    /// `ln rho`, so that counts beyond `f64` range are representable.
    pub ln_rho: f64,
    pub level: f64,
    pub grid: usize,
}

impl BellParams {
    pub fn new(q: u64, r: Dof, rho: f64, level: f64, grid: usize) -> Result<Self> {
        if !(rho >= 1.0) {
            return Err(domain(format!("rho = {rho} must be >= 1")));
        }
        Self::with_ln_rho(q, r, rho.ln(), level, grid)
    }

    pub fn with_ln_rho(q: u64, r: Dof, ln_rho: f64, level: f64, grid: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::QLessThanTwo { q: q as usize });
        }
        if !(ln_rho >= 0.0) || !ln_rho.is_finite() {
            return Err(domain(format!("ln rho = {ln_rho} must be finite and >= 0")));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(domain(format!("level = {level} must lie in (0, 1)")));
        }
        if grid < MIN_GRID {
            return Err(domain(format!("grid size {grid} is below {MIN_GRID}")));
        }
        Ok(Self { q, r, ln_rho, level, grid })
    }
}

/// Projection-law grid `v_j`: upper `u_j` quantiles of `Beta(1/2, (q-1)/2)`
/// at `grid` equispaced levels `u_j` from 0 to `1/rho`. Depends on
/// `(q, rho, grid)` only, so one grid serves every level and `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct BellGrid {
    pub q: u64,
    pub ln_rho: f64,
    v: Vec<f64>,
}

impl BellGrid {
    pub fn new(q: u64, ln_rho: f64, grid: usize) -> Result<Self> {
        BellParams::with_ln_rho(q, Dof::Infinite, ln_rho, 0.5, grid)?;
        let b = 0.5 * (q as f64 - 1.0);
        let last = ((grid - 1) as f64).ln();
        let v = (0..grid)
            .into_par_iter()
            .map(|j| {
                if j == 0 {
                    Ok(1.0)
                } else {
                    beta_upper_quantile_ln((j as f64).ln() - last - ln_rho, 0.5, b)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { q, ln_rho, v })
    }

    pub fn for_params(params: &BellParams) -> Result<Self> {
        Self::new(params.q, params.ln_rho, params.grid)
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// `H(t) = mean_j P(F(q, r) > t^2 / (v_j q))`; grid points with
    /// `v_j = 0` contribute 0.
    pub fn h(&self, t: f64, r: Dof) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(domain(format!("H needs t >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(1.0);
        }
        let q = self.q as f64;
        let terms = self
            .v
            .iter()
            .map(|&v| if v > 0.0 { f_upper_tail(t * t / (v * q), self.q, r) } else { Ok(0.0) })
            .collect::<Result<Vec<f64>>>()?;
        Ok(pairwise_sum(&terms) / terms.len() as f64)
    }

    /// Smallest `t` with `H(t) <= level`.
    pub fn solve(&self, r: Dof, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(domain(format!("level = {level} must lie in (0, 1)")));
        }
        let k_max = (self.q as f64 * f_upper_quantile(level, self.q, r)?).sqrt();
        let mut hi = 2.0 * k_max;
        let mut h_hi = self.h(hi, r)?;
        if h_hi > level {
            hi *= 4.0;
            h_hi = self.h(hi, r)?;
            if h_hi > level {
                return Err(Error::NoRoot { t: hi, value: h_hi, level });
            }
        }
        let lo = B_LOWER;
        if self.h(lo, r)? <= level {
            return Ok(lo);
        }
        let (t, _) = brent_root(|t| Ok(self.h(t, r)? - level), lo, hi, B_FTOL, B_XTOL)?;
        Ok(t)
    }
}

pub fn h_eval(t: f64, params: &BellParams) -> Result<f64> {
    BellGrid::for_params(params)?.h(t, params.r)
}

pub fn solve_b_ell(params: &BellParams) -> Result<f64> {
    BellGrid::for_params(params)?.solve(params.r, params.level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UTildeConfig {
    pub p: usize,
    pub s: usize,
    pub n: usize,
    pub delta: f64,
    pub alpha: f64,
    pub r: Dof,
    pub grid: usize,
    pub rho: RhoChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UTilde {
    pub value: f64,
    /// `None` when `delta = 0` and the second term is dropped.
    pub argmin_t: Option<f64>,
}

const T_CANDIDATES: usize = 64;
const LOGIT_RANGE: f64 = 9.0;
const LOGIT_TOL: f64 = 1e-4;

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Minimum over `t` of `B_{t alpha}(q, r, p) + 2 delta c(delta) B_{(1-t) alpha}(q, r, rho)`
/// with `q = min(n, p)`.
pub fn u_tilde_rip(cfg: &UTildeConfig) -> Result<UTilde> {
    check_ps(cfg.p, cfg.s)?;
    let c = c_factor(cfg.delta)?;
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(domain(format!("alpha = {} must lie in (0, 1)", cfg.alpha)));
    }
    let q = cfg.n.min(cfg.p) as u64;
    let first = BellGrid::new(q, (cfg.p as f64).ln(), cfg.grid)?;
    if cfg.delta == 0.0 {
        return Ok(UTilde { value: first.solve(cfg.r, cfg.alpha)?, argmin_t: None });
    }
    let ln_rho = match cfg.rho {
        RhoChoice::Models => family_cardinality(cfg.p, cfg.s)?.ln,
        RhoChoice::Pairs => pair_cardinality(cfg.p, cfg.s)?.ln,
    };
    let second = BellGrid::new(q, ln_rho, cfg.grid)?;
    let weight = 2.0 * cfg.delta * c;
    let objective = |z: f64| -> Result<f64> {
        let t = logistic(z);
        Ok(first.solve(cfg.r, t * cfg.alpha)? + weight * second.solve(cfg.r, (1.0 - t) * cfg.alpha)?)
    };
    let step = 2.0 * LOGIT_RANGE / (T_CANDIDATES - 1) as f64;
    let zs: Vec<f64> = (0..T_CANDIDATES).map(|i| -LOGIT_RANGE + i as f64 * step).collect();
    let values = zs.par_iter().map(|&z| objective(z)).collect::<Result<Vec<f64>>>()?;
    let best = (0..T_CANDIDATES).fold(0, |b, i| if values[i] < values[b] { i } else { b });
    let (za, zb) = (zs[best] - step, zs[best] + step);
    let (z, v) = golden_min(objective, za, zb, LOGIT_TOL)?;
    let (z, v) = if v < values[best] { (z, v) } else { (zs[best], values[best]) };
    Ok(UTilde { value: v, argmin_t: Some(logistic(z)) })
}

/// `A c (s-1) / sqrt(1 - (s-1) c^2) sqrt(ln floor(k/s)) - sqrt(2 ln 2)`.
pub fn lower_bound_expr(s: usize, k: usize, c: f64, a: f64) -> Result<f64> {
    if s == 0 || s > k {
        return Err(domain(format!("need 1 <= s <= k, got s={s}, k={k}")));
    }
    let sm1 = (s - 1) as f64;
    if !(c >= 0.0) || sm1 * c * c >= 1.0 {
        return Err(domain(format!("need c >= 0 and (s-1) c^2 < 1, got c={c}, s={s}")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(domain(format!("A = {a} must be positive")));
    }
    let ratio = (k / s) as f64;
    Ok(a * c * sm1 / (1.0 - sm1 * c * c).sqrt() * ratio.ln().sqrt() - (2.0 * std::f64::consts::LN_2).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalLower {
    pub value: f64,
    pub se: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Monte Carlo value of `c / sqrt(1 - (s-1) c^2) E[sum of the s-1 largest of
/// k standard normals]`, a lower bound on the Gaussian width of the
/// `s`-sparse family on the equi-correlated design.
pub fn empirical_lower_bound(p: usize, k: usize, c: f64, s: usize, reps: usize, seed: u64) -> Result<EmpiricalLower> {
    if k == 0 || k >= p {
        return Err(Error::InvalidK { k, p });
    }
    if k as f64 * c * c >= 1.0 {
        return Err(Error::InvalidCorrelation { kc2: k as f64 * c * c });
    }
    if s == 0 || s > k {
        return Err(domain(format!("need 1 <= s <= k, got s={s}, k={k}")));
    }
    if reps < 2 {
        return Err(Error::TooFewReps { reps, min: 2 });
    }
    if s == 1 {
        return Ok(EmpiricalLower { value: 0.0, se: 0.0, reps, seed });
    }
    let scale = c / (1.0 - (s - 1) as f64 * c * c).sqrt();
    let top = s - 1;
    let sums: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; k],
            |xi, b| {
                let mut rng = RngStream::new(seed, b).rng();
                for x in xi.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                xi.select_nth_unstable_by(k - top, |a: &f64, b: &f64| a.total_cmp(b));
                scale * xi[k - top..].iter().sum::<f64>()
            },
        )
        .collect();
    let n = reps as f64;
    let mean = pairwise_sum(&sums) / n;
    let dev: Vec<f64> = sums.iter().map(|x| (x - mean) * (x - mean)).collect();
    let se = (pairwise_sum(&dev) / (n - 1.0) / n).sqrt();
    Ok(EmpiricalLower { value: mean, se, reps, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    pub upper: f64,
    pub lower: f64,
}

/// Rate expressions without constants: `delta sqrt(s) sqrt(ln(6p/s))` and
/// `delta sqrt(s) sqrt(ln(min(1/delta^2, floor((p-1)/s))))`, the latter 0
/// when the log argument is below 2.
pub fn corollary_rates(p: usize, s: usize, delta: f64) -> Result<Rates> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta = {delta} must lie in (0, 1)")));
    }
    if s == 0 || s >= p {
        return Err(domain(format!("need 1 <= s < p, got s={s}, p={p}")));
    }
    let base = delta * (s as f64).sqrt();
    let upper = base * (6.0 * p as f64 / s as f64).ln().sqrt();
    let blocks = (p - 1) / s;
    let arg = (1.0 / (delta * delta)).min(blocks as f64);
    let lower = if blocks < 2 || arg <= 1.0 { 0.0 } else { base * arg.ln().sqrt() };
    Ok(Rates { upper, lower })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsConfig {
    pub p: usize,
    pub s: usize,
    pub n: usize,
    pub delta: f64,
    pub alpha: f64,
    pub r: Dof,
    pub grid: usize,
    pub rho: RhoChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerExprInput {
    pub k: usize,
    pub c: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSet {
    pub p: usize,
    pub s: usize,
    pub n: usize,
    pub delta: f64,
    pub alpha: f64,
    pub r: Dof,
    pub u_orth: f64,
    pub u_sparse: f64,
    pub u_rip: f64,
    pub u_bar_sparse: f64,
    pub u_bar_rip: f64,
    /// `None` when `min(n, p) < 2`.
    pub u_tilde_rip: Option<f64>,
    pub argmin_t: Option<f64>,
    pub lower_expr: Option<f64>,
    pub family_cardinality: Cardinality,
}

pub fn compute_bounds(cfg: &BoundsConfig, lower: Option<LowerExprInput>) -> Result<BoundSet> {
    let u_orth = u_orth(cfg.p)?;
    let u_sparse = u_sparse(cfg.p, cfg.s)?;
    let u_rip = u_rip(cfg.p, cfg.s, cfg.delta)?;
    let u_bar_sparse = u_bar(u_sparse, cfg.alpha, cfg.r)?;
    let u_bar_rip = u_bar(u_rip, cfg.alpha, cfg.r)?;
    let tilde = if cfg.n.min(cfg.p) >= 2 {
        Some(u_tilde_rip(&UTildeConfig {
            p: cfg.p,
            s: cfg.s,
            n: cfg.n,
            delta: cfg.delta,
            alpha: cfg.alpha,
            r: cfg.r,
            grid: cfg.grid,
            rho: cfg.rho,
        })?)
    } else {
        None
    };
    let lower_expr = lower.map(|l| lower_bound_expr(cfg.s, l.k, l.c, l.a)).transpose()?;
    Ok(BoundSet {
        p: cfg.p,
        s: cfg.s,
        n: cfg.n,
        delta: cfg.delta,
        alpha: cfg.alpha,
        r: cfg.r,
        u_orth,
        u_sparse,
        u_rip,
        u_bar_sparse,
        u_bar_rip,
        u_tilde_rip: tilde.map(|t| t.value),
        argmin_t: tilde.and_then(|t| t.argmin_t),
        lower_expr,
        family_cardinality: family_cardinality(cfg.p, cfg.s)?,
    })
}
