//! Orlicz functions and Orlicz norms of scalar functionals.

use crate::empirical::EmpiricalDist;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A convex nondecreasing tail function with psi(0) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrliczFunction {
    /// x^k, k >= 1.
    Power { k: f64 },
    /// e^x - 1.
    Exponential,
    /// e^{x^2} - 1.
    SubGaussian,
}

impl OrliczFunction {
    pub fn power(k: f64) -> Result<Self> {
        if !(k >= 1.0) || !k.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "power order must be >= 1, got {k}"
            )));
        }
        Ok(OrliczFunction::Power { k })
    }

    /// psi(x) for x >= 0 (negative arguments are clamped to 0).
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match *self {
            OrliczFunction::Power { k } => {
                if k == 2.0 {
                    x * x
                } else {
                    x.powf(k)
                }
            }
            OrliczFunction::Exponential => x.exp_m1(),
            OrliczFunction::SubGaussian => (x * x).exp_m1(),
        }
    }

    /// Generalized inverse inf{x >= 0 : psi(x) >= y}, in closed form.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match *self {
            OrliczFunction::Power { k } => {
                if k == 2.0 {
                    y.sqrt()
                } else {
                    y.powf(1.0 / k)
                }
            }
            OrliczFunction::Exponential => y.ln_1p(),
            OrliczFunction::SubGaussian => y.ln_1p().sqrt(),
        }
    }
}

impl fmt::Display for OrliczFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrliczFunction::Power { k } => write!(f, "power:{k}"),
            OrliczFunction::Exponential => write!(f, "exp"),
            OrliczFunction::SubGaussian => write!(f, "subg"),
        }
    }
}

impl FromStr for OrliczFunction {
    type Err = Error;

    /// Accepts `power:K`, `exp`, `subg`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(k) = s.strip_prefix("power:") {
            let k: f64 = k
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad power order in {s:?}")))?;
            return OrliczFunction::power(k);
        }
        match s.as_str() {
            "exp" | "exponential" => Ok(OrliczFunction::Exponential),
            "subg" | "subgaussian" | "sub_gaussian" => Ok(OrliczFunction::SubGaussian),
            _ => Err(Error::InvalidArgument(format!(
                "unknown Orlicz function {s:?}"
            ))),
        }
    }
}

/// inf{t > 0 : E_p psi(|f(X)| / t) <= 1}, by bracketing and bisection on t.
pub fn orlicz_norm<F>(p: &EmpiricalDist, f: F, psi: OrliczFunction) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let vals: Vec<f64> = p.rows().map(|r| f(r).abs()).collect();
    if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("functional value {v}")));
    }
    Ok(orlicz_norm_of_values(&vals, p.weights(), psi))
}

/// Orlicz norm of the weighted sample `|vals|`.
pub fn orlicz_norm_of_values(vals: &[f64], weights: &[f64], psi: OrliczFunction) -> f64 {
    let moment = |t: f64| -> f64 {
        vals.iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(v, w)| w * psi.eval(v.abs() / t))
            .sum()
    };
    let scale = vals
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(v, _)| v.abs())
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut hi = scale;
    while moment(hi) > 1.0 {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while lo > scale * 1e-300 && moment(lo) <= 1.0 {
        hi = lo;
        lo /= 2.0;
    }
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if moment(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
