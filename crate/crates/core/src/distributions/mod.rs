//! Special functions, samplers and quantile inversions used by the bounds
//! and the Monte Carlo estimators.
//!
//! Every consumer of a degrees-of-freedom parameter handles [`Dof::Infinite`]
//! explicitly: `N = 1`, `F(q, inf) = chi2_q / q`, and the noncentral T
//! collapses to a unit-variance shifted normal.

mod beta;
mod fisher;
mod nct;
mod normal;
mod quad;
mod rng;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

pub use beta::{beta_quantile_ln, beta_upper_quantile, beta_upper_quantile_ln, ln_beta_tails, BetaTails, Tail};
pub use fisher::{chi2_upper_quantile, f_upper_quantile, f_upper_tail};
pub use nct::{nct_cdf, nct_quantile, rough_t_quantile_bound};
pub use normal::{normal_cdf, normal_pdf, normal_quantile, normal_sf};
pub use quad::integrate;
pub use rng::{sample_chi, sample_chi_with, sample_std_normal_vector, RngStream};

/// Degrees of freedom of the idealized variance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dof {
    Finite(u64),
    /// Known variance: `sigma_hat = sigma`.
    Infinite,
}

impl Dof {
    pub fn is_infinite(self) -> bool {
        matches!(self, Dof::Infinite)
    }

    pub fn finite(r: u64) -> crate::Result<Dof> {
        if r == 0 {
            return Err(Error::Parse("degrees of freedom must be positive".into()));
        }
        Ok(Dof::Finite(r))
    }
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dof::Finite(r) => write!(f, "{r}"),
            Dof::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Dof {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Dof::Infinite);
        }
        let r: u64 = t
            .parse()
            .map_err(|_| Error::Parse(format!("invalid degrees of freedom {s:?} (integer or \"inf\")")))?;
        Dof::finite(r)
    }
}

impl Serialize for Dof {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Dof::Finite(r) => serializer.serialize_u64(*r),
            Dof::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Dof {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(r) => Dof::finite(r).map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `ln(1 - exp(l))` for `l <= 0`, accurate at both ends.
pub(crate) fn ln_one_minus_exp(l: f64) -> f64 {
    if l > -std::f64::consts::LN_2 {
        (-l.exp_m1()).ln()
    } else {
        (-l.exp()).ln_1p()
    }
}
