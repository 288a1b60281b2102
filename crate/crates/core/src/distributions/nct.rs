use statrs::function::gamma::ln_gamma;

use super::normal::{normal_cdf, normal_quantile};
use super::quad::integrate;
use super::Dof;
use crate::error::{domain, Result};

const CDF_TOL: f64 = 1e-13;
const QUANTILE_TOL: f64 = 1e-10;

/// Wilson-Hilferty approximation of a chi-square quantile at normal score `z`,
/// only used to bound the integration range.
fn wilson_hilferty(r: f64, z: f64) -> f64 {
    let h = 2.0 / (9.0 * r);
    let base = 1.0 - h + z * h.sqrt();
    if base <= 0.0 {
        0.0
    } else {
        r * base.powi(3)
    }
}

/// CDF of `T = (mu + zeta) / sqrt(V / r)` with `zeta ~ N(0,1)` and `V ~ chi2_r`.
///
/// Computed as `E_Y[Phi(t Y / sqrt(r) - mu)]` over `Y = sqrt(V)` (chi
/// distribution), which keeps the integrand bounded even for `r = 1`.
pub fn nct_cdf(t: f64, mu: f64, r: Dof) -> Result<f64> {
    if t.is_nan() || !mu.is_finite() {
        return Err(domain("nct_cdf needs finite arguments"));
    }
    let r = match r {
        Dof::Infinite => return Ok(normal_cdf(t - mu)),
        Dof::Finite(r) => r as f64,
    };
    if t == f64::INFINITY {
        return Ok(1.0);
    }
    if t == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let ln_norm = (1.0 - 0.5 * r) * std::f64::consts::LN_2 - ln_gamma(0.5 * r);
    let sqrt_r = r.sqrt();
    let density = |y: f64| -> f64 {
        if y <= 0.0 {
            return if r == 1.0 { ln_norm.exp() } else { 0.0 };
        }
        (ln_norm + (r - 1.0) * y.ln() - 0.5 * y * y).exp()
    };
    let lo = wilson_hilferty(r, -10.0).sqrt();
    let hi = wilson_hilferty(r, 10.0).sqrt();
    let v = integrate(|y| normal_cdf(t * y / sqrt_r - mu) * density(y), lo, hi, CDF_TOL);
    Ok(v.clamp(0.0, 1.0))
}

/// `u`-quantile of the noncentral T distribution with `r` degrees of freedom
/// and noncentrality `mu`. For `r = inf` this is `mu + z_u`.
pub fn nct_quantile(mu: f64, r: Dof, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(domain(format!("nct_quantile needs u in (0,1), got {u}")));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(domain(format!("nct_quantile needs a finite mu >= 0, got {mu}")));
    }
    let z = normal_quantile(u)?;
    if r.is_infinite() {
        return Ok(mu + z);
    }
    let f = |t: f64| nct_cdf(t, mu, r).map(|c| c - u);
    let center = mu + z;
    let mut width = 1.0;
    let mut lo = center - width;
    let mut hi = center + width;
    while f(lo)? > 0.0 {
        width *= 2.0;
        lo = center - width;
    }
    width = 1.0;
    while f(hi)? < 0.0 {
        width *= 2.0;
        hi = center + width;
        if width > 1e12 {
            return Err(domain("nct_quantile bracket expansion failed"));
        }
    }
    while hi - lo > QUANTILE_TOL * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Crude closed-form upper bound on the `1 - eta` quantile of the noncentral
/// T: `(mu + sqrt(2 ln(2/eta))) / (1 - 2 sqrt(2 ln(2/eta) / r))_+`.
///
/// Returns `+inf` when the denominator is not positive.
pub fn rough_t_quantile_bound(mu: f64, r: Dof, eta: f64) -> f64 {
    let l = 2.0 * (2.0 / eta).ln();
    let denom = match r {
        Dof::Infinite => 1.0,
        Dof::Finite(r) => 1.0 - 2.0 * (l / r as f64).sqrt(),
    };
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        (mu + l.sqrt()) / denom
    }
}
