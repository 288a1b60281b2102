use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{domain, Result};

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Standard normal quantile on the open interval `(0, 1)`.
///
/// Starts from the inverse complementary error function and applies one
/// Halley step against the tail that is small, which brings the round trip
/// to machine precision in both tails.
pub fn normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(domain(format!("normal_quantile needs u in (0,1), got {u}")));
    }
    if u == 0.5 {
        return Ok(0.0);
    }
    let x0 = -SQRT_2 * erfc_inv(2.0 * u);
    let pdf = normal_pdf(x0);
    if pdf == 0.0 || !x0.is_finite() {
        return Ok(x0);
    }
    let err = if u < 0.5 {
        normal_cdf(x0) - u
    } else {
        (1.0 - u) - normal_sf(x0)
    };
    let t = err / pdf;
    Ok(x0 - t / (1.0 + 0.5 * x0 * t))
}
