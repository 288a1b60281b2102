//! Restricted isometry constants by exhaustive subset enumeration.
//!
//! `kappa(X, s)` is the largest `||X_M^t X_M - I||_op` over `1 <= |M| <= s`;
//! `delta(X, s)` is the same quantity for `corr(X_M^t X_M)`. Since
//! `corr(X_M^t X_M)` is a principal submatrix of `corr(X^t X)`, both are read
//! off the global Gram matrix.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::design::{corr, DesignMatrix};
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::family::{binomial_f64, Combinations, DEFAULT_ENUMERATION_CAP};
use crate::linalg::{check_symmetric, jacobi_eigenvalues_in_place};

/// `max(|lambda_max(G - I)|, |lambda_min(G - I)|)`.
pub fn op_norm_dev(g: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(g)?;
    let n = g.nrows();
    let mut buf: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            buf.push(g[(i, j)] - if i == j { 1.0 } else { 0.0 });
        }
    }
    Ok(dev_of_buffer(&mut buf, n))
}

fn dev_of_buffer(buf: &mut [f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let eig = jacobi_eigenvalues_in_place(buf, n);
    eig[0].abs().max(eig[n - 1].abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RipMode {
    /// Fail with `EnumerationLimit` above the cap.
    Exhaustive,
    /// Above the cap, evaluate `samples` uniformly drawn size-`s` subsets and
    /// report the maximum as a lower estimate.
    SampledAboveCap { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RipOptions {
    pub cap: u64,
    pub mode: RipMode,
}

impl Default for RipOptions {
    fn default() -> Self {
        Self { cap: DEFAULT_ENUMERATION_CAP, mode: RipMode::Exhaustive }
    }
}

/// One RIP constant with the subset attaining it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RipValue {
    pub value: f64,
    /// 0-based, sorted.
    pub argmax: Vec<usize>,
    pub subsets_examined: u64,
    /// `false` when the value comes from sampled subsets and is only a lower
    /// bound.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RipReport {
    pub s: usize,
    pub kappa: f64,
    pub delta: f64,
    pub argmax_kappa: Vec<usize>,
    pub argmax_delta: Vec<usize>,
    pub subsets_examined: u64,
    pub exact: bool,
}

#[derive(Clone, Copy)]
struct Best {
    value: f64,
    count: u64,
}

/// Max over all `size`-subsets of `0..p` whose smallest element is `lead`.
fn scan_leading(g: &DMatrix<f64>, size: usize, lead: usize) -> (Best, Vec<usize>) {
    let p = g.nrows();
    let mut best = Best { value: f64::NEG_INFINITY, count: 0 };
    let mut arg = Vec::new();
    let mut buf = vec![0.0; size * size];
    let mut model = vec![lead; size];
    let mut eval = |model: &[usize], best: &mut Best, arg: &mut Vec<usize>| {
        for (a, &i) in model.iter().enumerate() {
            for (b, &j) in model.iter().enumerate() {
                buf[a * size + b] = g[(i, j)] - if a == b { 1.0 } else { 0.0 };
            }
        }
        let v = dev_of_buffer(&mut buf, size);
        best.count += 1;
        if v > best.value {
            best.value = v;
            arg.clear();
            arg.extend_from_slice(model);
        }
    };
    if size == 1 {
        eval(&model, &mut best, &mut arg);
        return (best, arg);
    }
    let mut rest = Combinations::in_range(lead + 1, p, size - 1);
    while let Some(tail) = rest.next_slice() {
        model[1..].copy_from_slice(tail);
        eval(&model, &mut best, &mut arg);
    }
    (best, arg)
}

/// Deterministic exhaustive maximum over the given subset sizes; partitions
/// are merged in lexicographic order, so ties go to the first subset.
fn exhaustive_max(g: &DMatrix<f64>, sizes: impl Iterator<Item = usize>) -> RipValue {
    let p = g.nrows();
    let mut value = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    let mut examined = 0;
    for size in sizes {
        let parts: Vec<(Best, Vec<usize>)> =
            (0..=p - size).into_par_iter().map(|lead| scan_leading(g, size, lead)).collect();
        for (b, arg) in parts {
            examined += b.count;
            if b.value > value {
                value = b.value;
                argmax = arg;
            }
        }
    }
    RipValue { value: value.max(0.0), argmax, subsets_examined: examined, exact: true }
}

fn sampled_max(g: &DMatrix<f64>, s: usize, samples: u64, seed: u64) -> RipValue {
    let p = g.nrows();
    let mut rng = RngStream::new(seed, 0).rng();
    let mut value = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    let mut buf = vec![0.0; s * s];
    for _ in 0..samples {
        let mut m = sample(&mut rng, p, s).into_vec();
        m.sort_unstable();
        for (a, &i) in m.iter().enumerate() {
            for (b, &j) in m.iter().enumerate() {
                buf[a * s + b] = g[(i, j)] - if a == b { 1.0 } else { 0.0 };
            }
        }
        let v = dev_of_buffer(&mut buf, s);
        if v > value {
            value = v;
            argmax = m;
        }
    }
    RipValue { value: value.max(0.0), argmax, subsets_examined: samples, exact: false }
}

fn check_s(p: usize, s: usize) -> Result<()> {
    if s == 0 || s > p {
        return Err(Error::Domain(format!("need 1 <= s <= p, got s={s}, p={p}")));
    }
    Ok(())
}

fn dispatch(g: &DMatrix<f64>, s: usize, all_sizes: bool, opts: RipOptions) -> Result<RipValue> {
    let p = g.nrows();
    check_s(p, s)?;
    let count: f64 = if all_sizes {
        (1..=s).map(|i| binomial_f64(p as u64, i as u64)).sum()
    } else {
        binomial_f64(p as u64, s as u64)
    };
    if count <= opts.cap as f64 {
        let first = if all_sizes { 1 } else { s };
        return Ok(exhaustive_max(g, first..=s));
    }
    match opts.mode {
        RipMode::Exhaustive => Err(Error::EnumerationLimit { count, cap: opts.cap }),
        RipMode::SampledAboveCap { samples, seed } => Ok(sampled_max(g, s, samples, seed)),
    }
}

/// `sup_{1 <= |M| <= s} ||X_M^t X_M - I||_op`.
pub fn kappa(x: &DesignMatrix, s: usize, opts: RipOptions) -> Result<RipValue> {
    dispatch(&x.gram(), s, true, opts)
}

/// `sup_{|M| <= s} ||corr(X_M^t X_M) - I||_op`, enumerated over `|M| = s`
/// only, which attains the supremum.
pub fn delta(x: &DesignMatrix, s: usize, opts: RipOptions) -> Result<RipValue> {
    x.require_nonzero_columns(0..x.p())?;
    dispatch(&corr(&x.gram())?, s, false, opts)
}

pub fn rip_report(x: &DesignMatrix, s: usize, opts: RipOptions) -> Result<RipReport> {
    let k = kappa(x, s, opts)?;
    let d = delta(x, s, opts)?;
    Ok(RipReport {
        s,
        kappa: k.value,
        delta: d.value,
        argmax_kappa: k.argmax,
        argmax_delta: d.argmax,
        subsets_examined: k.subsets_examined + d.subsets_examined,
        exact: k.exact && d.exact,
    })
}

/// `2 kappa / (1 - kappa)`, an upper bound on `delta` when `kappa < 1`.
pub fn delta_bound_from_kappa(kappa: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::KappaOutOfRange { kappa });
    }
    Ok(2.0 * kappa / (1.0 - kappa))
}

/// Like [`delta_bound_from_kappa`] but returns `+inf` for `kappa >= 1`.
pub fn delta_bound_from_kappa_or_inf(kappa: f64) -> Result<f64> {
    match delta_bound_from_kappa(kappa) {
        Err(Error::KappaOutOfRange { .. }) if kappa >= 1.0 => Ok(f64::INFINITY),
        r => r,
    }
}

/// Closed-form RIP constant `c sqrt(min(s - 1, k))` of the equi-correlated
/// design built by [`crate::design::make_equicorr`].
pub fn equicorr_rip_constant(p: usize, k: usize, c: f64, s: usize) -> Result<f64> {
    check_s(p, s)?;
    if k == 0 || k >= p {
        return Err(Error::InvalidK { k, p });
    }
    Ok(c.abs() * ((s - 1).min(k) as f64).sqrt())
}
