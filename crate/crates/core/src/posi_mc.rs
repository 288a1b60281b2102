//! Monte Carlo estimation of the PoSI constant, the Gaussian width of the
//! contrast set, confidence intervals and coverage simulation.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::contrast::{contrast_set, ContrastOptions, DirectionSet};
use crate::design::DesignMatrix;
use crate::distributions::{normal_quantile, sample_chi_with, Dof, RngStream};
use crate::error::{domain, Error, Result};
use crate::family::ModelFamily;
use crate::linalg::pairwise_sum;

pub const MIN_REPS: usize = 1000;
pub const QUANTILE_CI_LEVEL: f64 = 0.99;

/// One replicate: `gamma_inf = max |w^t xi|` and the divisor `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaDraw {
    pub gamma_inf: f64,
    pub n: f64,
}

impl GammaDraw {
    pub fn gamma_r(&self) -> f64 {
        self.gamma_inf / self.n
    }
}

fn draw_into<R: Rng>(dirs: &DirectionSet, r: Dof, rng: &mut R, xi: &mut [f64]) -> GammaDraw {
    for x in xi.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    let n = sample_chi_with(r, rng);
    GammaDraw { gamma_inf: dirs.max_abs_dot(xi), n }
}

/// One draw of `gamma_{M,r}`; `xi` comes first on the stream, then `N`.
pub fn sample_gamma(dirs: &DirectionSet, r: Dof, stream: RngStream) -> GammaDraw {
    let mut xi = vec![0.0; dirs.dim()];
    draw_into(dirs, r, &mut stream.rng(), &mut xi)
}

/// Replicates `0..reps` of one run, in replicate order. Replicate `b` uses
/// stream `b` of `seed`, so the sample does not depend on the thread count.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSample {
    pub r: Dof,
    pub seed: u64,
    pub draws: Vec<GammaDraw>,
}

impl GammaSample {
    pub fn simulate(dirs: &DirectionSet, r: Dof, reps: usize, seed: u64) -> Self {
        let draws = (0..reps as u64)
            .into_par_iter()
            .map_init(
                || vec![0.0; dirs.dim()],
                |xi, b| draw_into(dirs, r, &mut RngStream::new(seed, b).rng(), xi),
            )
            .collect();
        Self { r, seed, draws }
    }

    pub fn reps(&self) -> usize {
        self.draws.len()
    }

    pub fn gamma_inf(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.gamma_inf).collect()
    }

    pub fn gamma_r(&self) -> Vec<f64> {
        self.draws.iter().map(GammaDraw::gamma_r).collect()
    }

    /// Sample mean and standard error of `gamma_inf`.
    pub fn gauss_width(&self) -> (f64, f64) {
        mean_se(&self.gamma_inf())
    }

    pub fn median_gamma_inf(&self) -> f64 {
        let mut g = self.gamma_inf();
        g.sort_by(f64::total_cmp);
        let b = g.len();
        if b == 0 {
            return f64::NAN;
        }
        if b % 2 == 1 {
            g[b / 2]
        } else {
            0.5 * (g[b / 2 - 1] + g[b / 2])
        }
    }

    /// Quantile estimate for one `alpha`. Calling this for several levels on
    /// the same sample uses common random numbers.
    pub fn estimate(&self, alpha: f64) -> Result<PosiEstimate> {
        check_alpha(alpha)?;
        let reps = self.reps();
        if reps < MIN_REPS {
            return Err(Error::TooFewReps { reps, min: MIN_REPS });
        }
        let mut g = self.gamma_r();
        g.sort_by(f64::total_cmp);
        let idx = quantile_rank(1.0 - alpha, reps);
        let (lo, hi) = quantile_ci_ranks(1.0 - alpha, reps, QUANTILE_CI_LEVEL);
        let k_ci = (g[lo.min(idx) - 1], g[hi.max(idx) - 1]);
        let z = normal_quantile(0.5 + QUANTILE_CI_LEVEL / 2.0)?;
        let (gw, gw_se) = self.gauss_width();
        Ok(PosiEstimate {
            alpha,
            r: self.r,
            reps,
            k_hat: g[idx - 1],
            k_ci,
            k_se: (k_ci.1 - k_ci.0) / (2.0 * z),
            gauss_width_hat: gw,
            gauss_width_se: gw_se,
            seed: self.seed,
        })
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let b = xs.len() as f64;
    let mean = pairwise_sum(xs) / b;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (b - 1.0);
    (mean, (var / b).sqrt())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// `ceil(prob * reps)` as a 1-based rank, robust to rounding in the product.
fn quantile_rank(prob: f64, reps: usize) -> usize {
    let t = prob * reps as f64;
    let nearest = t.round();
    let rank = if (t - nearest).abs() <= 1e-9 * t.max(1.0) { nearest } else { t.ceil() };
    (rank as usize).clamp(1, reps)
}

/// 1-based ranks `(lo, hi)` of the distribution-free order-statistic interval
/// for the `prob` quantile: with `K ~ Bin(reps, prob)` the number of draws
/// below the quantile, `P(lo <= K < hi) >= level` when attainable.
pub fn quantile_ci_ranks(prob: f64, reps: usize, level: f64) -> (usize, usize) {
    let bin = Binomial::new(prob, reps as u64).expect("valid binomial");
    let tail = (1.0 - level) / 2.0;
    let cdf = |l: usize| if l == 0 { 0.0 } else { bin.cdf(l as u64 - 1) };
    // largest lo with F(lo - 1) <= tail
    let (mut a, mut b) = (1usize, reps);
    while a < b {
        let m = (a + b).div_ceil(2);
        if cdf(m) <= tail {
            a = m;
        } else {
            b = m - 1;
        }
    }
    let lo = a;
    // smallest hi with F(hi - 1) >= 1 - tail
    let (mut a, mut b) = (1usize, reps);
    while a < b {
        let m = (a + b) / 2;
        if cdf(m) >= 1.0 - tail {
            b = m;
        } else {
            a = m + 1;
        }
    }
    (lo, a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosiEstimate {
    pub alpha: f64,
    pub r: Dof,
    pub reps: usize,
    pub k_hat: f64,
    pub k_ci: (f64, f64),
    /// Standard error implied by the width of `k_ci`.
    pub k_se: f64,
    pub gauss_width_hat: f64,
    pub gauss_width_se: f64,
    pub seed: u64,
}

pub fn estimate_k(dirs: &DirectionSet, alpha: f64, r: Dof, reps: usize, seed: u64) -> Result<PosiEstimate> {
    check_alpha(alpha)?;
    if reps < MIN_REPS {
        return Err(Error::TooFewReps { reps, min: MIN_REPS });
    }
    GammaSample::simulate(dirs, r, reps, seed).estimate(alpha)
}

/// Mean and standard error of `gamma_inf`.
pub fn estimate_gauss_width(dirs: &DirectionSet, reps: usize, seed: u64) -> Result<(f64, f64)> {
    if reps < MIN_REPS {
        return Err(Error::TooFewReps { reps, min: MIN_REPS });
    }
    Ok(GammaSample::simulate(dirs, Dof::Infinite, reps, seed).gauss_width())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosiInterval {
    /// 1-based.
    pub model: Vec<usize>,
    /// 1-based.
    pub covariate: usize,
    pub center: f64,
    pub half_width: f64,
}

impl PosiInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosiIntervals {
    pub intervals: Vec<PosiInterval>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(beta_hat_M)_i +- sigma_hat ||v_{M,i}|| K` for every `(M, i)`.
pub fn posi_intervals(
    x: &DesignMatrix,
    y: &[f64],
    family: &ModelFamily,
    sigma_hat: f64,
    k: f64,
) -> Result<PosiIntervals> {
    if y.len() != x.n() {
        return Err(domain(format!("response has length {}, design has {} rows", y.len(), x.n())));
    }
    if !(sigma_hat > 0.0) || !(k >= 0.0) || !k.is_finite() {
        return Err(domain("need sigma_hat > 0 and finite K >= 0"));
    }
    let set = contrast_set(x, family, ContrastOptions::default())?;
    let intervals = set
        .contrasts
        .iter()
        .map(|c| PosiInterval {
            model: c.model.iter().map(|i| i + 1).collect(),
            covariate: c.covariate + 1,
            center: dot(&c.v, y),
            half_width: sigma_hat * dot(&c.v, &c.v).sqrt() * k,
        })
        .collect();
    Ok(PosiIntervals { intervals })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub nominal: f64,
    pub k: f64,
    pub reps: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Binomial standard error at the nominal level.
    pub se: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageConfig {
    pub sigma: f64,
    pub alpha: f64,
    pub r: Dof,
    pub k: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Fraction of replicates `Y = mu + sigma xi` in which every interval covers
/// its target `(beta_M)_i = v^t mu`. For finite `r`, `sigma_hat = sigma N`
/// with `N` drawn after `xi` on the replicate's stream.
pub fn coverage_sim(x: &DesignMatrix, mu: &[f64], family: &ModelFamily, cfg: CoverageConfig) -> Result<Coverage> {
    let CoverageConfig { sigma, alpha, r, k, reps, seed } = cfg;
    check_alpha(alpha)?;
    if mu.len() != x.n() {
        return Err(domain(format!("mu has length {}, design has {} rows", mu.len(), x.n())));
    }
    if !(sigma > 0.0) || !(k >= 0.0) || reps == 0 {
        return Err(domain("need sigma > 0, K >= 0 and reps >= 1"));
    }
    let set = contrast_set(x, family, ContrastOptions::default())?;
    let rows: Vec<(&[f64], f64, f64)> =
        set.contrasts.iter().map(|c| (c.v.as_slice(), dot(&c.v, mu), dot(&c.v, &c.v).sqrt())).collect();
    let n = x.n();
    let covered = (0..reps as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |y, b| {
                let mut rng = RngStream::new(seed, b).rng();
                for (yi, m) in y.iter_mut().zip(mu) {
                    *yi = m + sigma * rng.sample::<f64, _>(StandardNormal);
                }
                let sigma_hat = sigma * sample_chi_with(r, &mut rng);
                rows.iter().all(|(v, target, norm)| (dot(v, y) - target).abs() <= sigma_hat * norm * k) as usize
            },
        )
        .sum::<usize>();
    let nominal = 1.0 - alpha;
    Ok(Coverage {
        nominal,
        k,
        reps,
        covered,
        coverage: covered as f64 / reps as f64,
        se: (nominal * alpha / reps as f64).sqrt(),
        seed,
    })
}
