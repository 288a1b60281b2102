//! Regularized incomplete beta function and its inverse, evaluated in log
//! space so that tail probabilities far below `f64::MIN_POSITIVE` stay
//! representable.

use statrs::function::beta::ln_beta;

use super::ln_one_minus_exp;
use crate::error::{domain, Result};

const CF_MAX_ITER: usize = 20_000;
const CF_EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Natural logs of `I_x(a, b)` and `1 - I_x(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaTails {
    pub ln_lower: f64,
    pub ln_upper: f64,
}

impl BetaTails {
    pub fn lower(&self) -> f64 {
        self.ln_lower.exp()
    }

    pub fn upper(&self) -> f64 {
        self.ln_upper.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Lower,
    Upper,
}

/// Continued fraction for `I_x(a, b)` (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Both tails of Beta(a, b) at `x`, where the caller supplies `y = 1 - x`
/// computed without cancellation.
pub fn ln_beta_tails(x: f64, y: f64, a: f64, b: f64) -> BetaTails {
    if x <= 0.0 {
        return BetaTails { ln_lower: f64::NEG_INFINITY, ln_upper: 0.0 };
    }
    if y <= 0.0 {
        return BetaTails { ln_lower: 0.0, ln_upper: f64::NEG_INFINITY };
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        let ln_lower = ln_front + beta_cf(a, b, x).ln() - a.ln();
        BetaTails { ln_lower, ln_upper: ln_one_minus_exp(ln_lower.min(0.0)) }
    } else {
        let ln_upper = ln_front + beta_cf(b, a, y).ln() - b.ln();
        BetaTails { ln_lower: ln_one_minus_exp(ln_upper.min(0.0)), ln_upper }
    }
}

fn ln_beta_pdf(z: f64, one_minus_z: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * z.ln() + (b - 1.0) * one_minus_z.ln() - ln_beta(a, b)
}

/// Solves `I_z(a, b) = exp(ln_p)` for `ln_p <= ln(1/2)`, i.e. a root that lies
/// on the lower side. Newton on `ln z`, safeguarded by a bisection bracket.
fn lower_side_root(ln_p: f64, a: f64, b: f64) -> (f64, f64) {
    let g = |lz: f64| -> (f64, f64) {
        let z = lz.exp();
        let zc = -lz.exp_m1();
        let t = ln_beta_tails(z, zc, a, b);
        let val = t.ln_lower - ln_p;
        let slope = (lz + ln_beta_pdf(z, zc, a, b) - t.ln_lower).exp();
        (val, slope)
    };

    let mut hi = 0.0_f64;
    // I_z ~ z^a / (a B(a,b)) near zero
    let guess = ((ln_p + a.ln() + ln_beta(a, b)) / a).min(-1e-3);
    let mut lo = guess - 1.0;
    let mut step = 1.0;
    loop {
        if lo < -745.0 {
            lo = -745.0;
            if g(lo).0 >= 0.0 {
                return (0.0, 1.0);
            }
            break;
        }
        let (v, _) = g(lo);
        if v < 0.0 {
            break;
        }
        hi = lo;
        step *= 2.0;
        lo -= step;
    }

    let mut lz = guess.clamp(lo, hi);
    if !(lz > lo && lz < hi) {
        lz = 0.5 * (lo + hi);
    }
    for _ in 0..400 {
        let (v, slope) = g(lz);
        if v == 0.0 {
            break;
        }
        if v < 0.0 {
            lo = lz;
        } else {
            hi = lz;
        }
        let mut next = lz - v / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - lz).abs() <= 1e-15 * lz.abs().max(1.0) || hi - lo <= 1e-15 * lz.abs().max(1.0) {
            lz = next;
            break;
        }
        lz = next;
    }
    (lz.exp(), -lz.exp_m1())
}

/// Solves `I_z(a, b) = exp(ln_p)` and returns `(z, 1 - z)`.
fn lower_quantile_ln(ln_p: f64, a: f64, b: f64) -> (f64, f64) {
    if ln_p == f64::NEG_INFINITY {
        return (0.0, 1.0);
    }
    if ln_p >= 0.0 {
        return (1.0, 0.0);
    }
    if ln_p <= -std::f64::consts::LN_2 {
        lower_side_root(ln_p, a, b)
    } else {
        // I_z(a,b) = p  <=>  I_{1-z}(b,a) = 1 - p
        let (w, wc) = lower_side_root(ln_one_minus_exp(ln_p), b, a);
        (wc, w)
    }
}

/// Quantile of Beta(a, b) for a tail probability given by its logarithm.
/// Returns `(x, 1 - x)` with both components accurate.
pub fn beta_quantile_ln(ln_p: f64, tail: Tail, a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(domain(format!("beta shapes must be positive, got a={a}, b={b}")));
    }
    if ln_p.is_nan() || ln_p > 0.0 {
        return Err(domain(format!("log-probability must be <= 0, got {ln_p}")));
    }
    Ok(match tail {
        Tail::Lower => lower_quantile_ln(ln_p, a, b),
        Tail::Upper => {
            let (y, x) = lower_quantile_ln(ln_p, b, a);
            (x, y)
        }
    })
}

/// `t` such that `1 - F_Beta(t; a, b) = u`.
pub fn beta_upper_quantile(u: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(domain(format!("beta_upper_quantile needs u in [0,1], got {u}")));
    }
    beta_upper_quantile_ln(u.ln(), a, b)
}

/// Same as [`beta_upper_quantile`] with the level passed as `ln u`, so levels
/// such as `1/rho` with `rho > 1e308` can be expressed.
pub fn beta_upper_quantile_ln(ln_u: f64, a: f64, b: f64) -> Result<f64> {
    Ok(beta_quantile_ln(ln_u, Tail::Upper, a, b)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::beta::beta_reg;

    #[test]
    fn tails_agree_with_reference_implementation() {
        for &(a, b) in &[(0.5, 0.5), (0.5, 9.5), (2.0, 3.0), (5.0, 0.5), (30.0, 2.5)] {
            for i in 1..20 {
                let x = i as f64 / 20.0;
                let t = ln_beta_tails(x, 1.0 - x, a, b);
                let reference = beta_reg(a, b, x);
                assert!((t.lower() - reference).abs() < 1e-13, "a={a} b={b} x={x}");
                assert!((t.lower() + t.upper() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn arcsine_closed_form_in_deep_tail() {
        // Beta(1/2,1/2): I_x = (2/pi) asin(sqrt x)
        for &x in &[1e-40, 1e-200, 1e-300] {
            let t = ln_beta_tails(x, 1.0 - x, 0.5, 0.5);
            let ln_exact = (2.0 / std::f64::consts::PI).ln() + 0.5 * x.ln();
            assert!((t.ln_lower - ln_exact).abs() < 1e-12);
            let t2 = ln_beta_tails(1.0 - x, x, 0.5, 0.5);
            assert!((t2.ln_upper - ln_exact).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_endpoints_and_symmetry() {
        assert_eq!(beta_upper_quantile(0.0, 2.0, 3.0).unwrap(), 1.0);
        assert_eq!(beta_upper_quantile(1.0, 2.0, 3.0).unwrap(), 0.0);
        assert!((beta_upper_quantile(0.5, 0.5, 0.5).unwrap() - 0.5).abs() < 1e-14);
        assert!((beta_upper_quantile(0.5, 3.0, 3.0).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn quantile_round_trip_extreme_levels() {
        for &(a, b) in &[(0.5, 0.5), (0.5, 2.0), (0.5, 9.5), (0.5, 24.5), (0.5, 1000.0)] {
            for e in [1.0, 3.0, 10.0, 30.0, 100.0, 400.0, 2000.0] {
                let ln_u = -e * std::f64::consts::LN_10;
                let (x, y) = beta_quantile_ln(ln_u, Tail::Upper, a, b).unwrap();
                if y == 0.0 {
                    continue;
                }
                let t = ln_beta_tails(x, y, a, b);
                assert!(
                    (t.ln_upper - ln_u).abs() < 1e-9 * ln_u.abs(),
                    "a={a} b={b} ln_u={ln_u}: got {}",
                    t.ln_upper
                );
            }
        }
    }

    #[test]
    fn quantile_is_strictly_decreasing() {
        let (a, b) = (0.5, 9.5);
        let mut prev = 1.0;
        for i in 1..200 {
            let u = i as f64 / 200.0;
            let x = beta_upper_quantile(u, a, b).unwrap();
            assert!(x < prev, "u={u}");
            prev = x;
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(beta_upper_quantile(-0.1, 1.0, 1.0).is_err());
        assert!(beta_upper_quantile(0.5, 0.0, 1.0).is_err());
        assert!(beta_upper_quantile_ln(0.1, 1.0, 1.0).is_err());
    }
}
