use statrs::function::gamma::{gamma_ur, ln_gamma};

use super::beta::{beta_quantile_ln, ln_beta_tails, Tail};
use super::Dof;
use crate::error::{domain, Result};

fn check_q(q: u64) -> Result<f64> {
    if q == 0 {
        return Err(domain("numerator degrees of freedom must be positive"));
    }
    Ok(q as f64)
}

/// `P(F > x)` for `F ~ Fisher(q, r)`; `r = inf` is `chi2_q / q`.
pub fn f_upper_tail(x: f64, q: u64, r: Dof) -> Result<f64> {
    let qf = check_q(q)?;
    if x.is_nan() || x < 0.0 {
        return Err(domain(format!("f_upper_tail needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(match r {
        Dof::Infinite => gamma_ur(0.5 * qf, 0.5 * qf * x),
        Dof::Finite(r) => {
            let rf = r as f64;
            let z = qf * x;
            let t = ln_beta_tails(rf / (rf + z), z / (rf + z), 0.5 * rf, 0.5 * qf);
            t.lower()
        }
    })
}

/// `x` with `P(F > x) = u`.
pub fn f_upper_quantile(u: f64, q: u64, r: Dof) -> Result<f64> {
    let qf = check_q(q)?;
    if !(u > 0.0 && u < 1.0) {
        return Err(domain(format!("f_upper_quantile needs u in (0,1), got {u}")));
    }
    match r {
        Dof::Infinite => Ok(chi2_upper_quantile(u, q)? / qf),
        Dof::Finite(r) => {
            let rf = r as f64;
            // P(F > x) = I_{r/(r+qx)}(r/2, q/2)
            let (bx, by) = beta_quantile_ln(u.ln(), Tail::Lower, 0.5 * rf, 0.5 * qf)?;
            Ok(rf * by / (qf * bx))
        }
    }
}

/// Upper quantile of the chi-square distribution with `k` degrees of freedom.
pub fn chi2_upper_quantile(u: f64, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(domain("chi-square degrees of freedom must be positive"));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(domain(format!("chi2_upper_quantile needs u in (0,1), got {u}")));
    }
    let a = 0.5 * k as f64;
    let ln_u = u.ln();
    let lg = ln_gamma(a);
    // g(lz) = ln Q(a, z/2) - ln u, decreasing in lz = ln z
    let g = |lz: f64| -> (f64, f64) {
        let z = lz.exp();
        let sf = gamma_ur(a, 0.5 * z);
        let ln_pdf = (a - 1.0) * (0.5 * z).ln() - 0.5 * z - lg - std::f64::consts::LN_2;
        let slope = -(lz + ln_pdf - sf.ln()).exp();
        (sf.ln() - ln_u, slope)
    };
    let mut lo = (k as f64).ln() - 1.0;
    let mut hi = lo + 1.0;
    while g(lo).0 < 0.0 {
        lo -= 2.0;
        if lo < -700.0 {
            return Ok(0.0);
        }
    }
    while g(hi).0 > 0.0 {
        hi += 1.0;
    }
    let mut lz = 0.5 * (lo + hi);
    for _ in 0..300 {
        let (v, slope) = g(lz);
        if v == 0.0 {
            break;
        }
        if v > 0.0 {
            lo = lz;
        } else {
            hi = lz;
        }
        let mut next = lz - v / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let done = (next - lz).abs() <= 1e-15 * lz.abs().max(1.0);
        lz = next;
        if done || hi - lo <= 1e-15 * lz.abs().max(1.0) {
            break;
        }
    }
    Ok(lz.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::normal_quantile;
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};

    #[test]
    fn zero_has_full_tail() {
        assert_eq!(f_upper_tail(0.0, 3, Dof::Finite(7)).unwrap(), 1.0);
        assert_eq!(f_upper_tail(0.0, 3, Dof::Infinite).unwrap(), 1.0);
    }

    #[test]
    fn one_dof_infinite_is_squared_normal() {
        let z = normal_quantile(0.975).unwrap();
        let x = f_upper_quantile(0.05, 1, Dof::Infinite).unwrap();
        assert!((x - z * z).abs() < 1e-10);
        assert!((x - 3.841_458_820_694_124).abs() < 1e-9);
    }

    #[test]
    fn finite_tail_matches_reference_distribution() {
        for &(q, r) in &[(1u64, 1u64), (3, 10), (20, 50), (50, 10)] {
            let reference = FisherSnedecor::new(q as f64, r as f64).unwrap();
            for &x in &[0.1, 0.5, 1.0, 2.0, 5.0] {
                let got = f_upper_tail(x, q, Dof::Finite(r)).unwrap();
                assert!((got - reference.sf(x)).abs() < 1e-10, "q={q} r={r} x={x}");
            }
        }
    }

    #[test]
    fn quantile_round_trip() {
        for &r in &[Dof::Finite(3), Dof::Finite(10), Dof::Finite(200), Dof::Infinite] {
            for &q in &[1u64, 2, 5, 20, 50] {
                for &u in &[1e-12, 1e-6, 0.01, 0.05, 0.5, 0.9, 0.999] {
                    let x = f_upper_quantile(u, q, r).unwrap();
                    let back = f_upper_tail(x, q, r).unwrap();
                    assert!((back - u).abs() <= 1e-9 * u.max(1e-3), "q={q} r={r} u={u}: {back}");
                }
            }
        }
    }

    #[test]
    fn large_r_approaches_chi_square_limit() {
        let a = f_upper_quantile(0.05, 4, Dof::Finite(1_000_000)).unwrap();
        let b = f_upper_quantile(0.05, 4, Dof::Infinite).unwrap();
        assert!((a - b).abs() < 1e-4);
    }
}
