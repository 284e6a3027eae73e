//! Named test functions and distributions used by the experiments.
//!
//! One-dimensional built-ins are tensorized coordinate-wise for `d > 1`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hermite::{
    default_quadrature_order, delta_coeffs, expand_function, gauss_hermite, monomial_coeffs,
    Basis,
};
use crate::sobolev::SobolevVector;

/// `psi_1(t) = exp(-t^2) (3/(2 sqrt(pi)) - t^2/sqrt(pi))`.
///
/// Unit mass, vanishing first three moments.
pub fn psi1(t: f64) -> f64 {
    let s = PI.sqrt();
    (-t * t).exp() * (1.5 / s - t * t / s)
}

/// `psi_2(t) = exp(-t^2/2) (3 - t^2) / (2 sqrt(2 pi))`.
///
/// Unit mass, vanishing first three moments; a combination of `h_0` and `h_2`.
pub fn psi2(t: f64) -> f64 {
    (-0.5 * t * t).exp() * (3.0 - t * t) / (2.0 * (2.0 * PI).sqrt())
}

/// Centered Gaussian density with the given variance.
pub fn gaussian_density(t: f64, variance: f64) -> f64 {
    (-0.5 * t * t / variance).exp() / (2.0 * PI * variance).sqrt()
}

/// A named function or distribution that can be expanded in the Hermite basis.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionSpec {
    Psi1,
    Psi2,
    Gaussian { variance: f64 },
    Delta { point: Vec<f64> },
    Monomial { powers: Vec<u32> },
}

impl FunctionSpec {
    /// Pointwise value, for the entries that are functions. Deltas have none.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        match self {
            FunctionSpec::Psi1 => Some(x.iter().map(|&t| psi1(t)).product()),
            FunctionSpec::Psi2 => Some(x.iter().map(|&t| psi2(t)).product()),
            FunctionSpec::Gaussian { variance } => {
                Some(x.iter().map(|&t| gaussian_density(t, *variance)).product())
            }
            FunctionSpec::Delta { .. } => None,
            FunctionSpec::Monomial { powers } => Some(
                x.iter()
                    .enumerate()
                    .map(|(i, &t)| t.powi(powers.get(i).copied().unwrap_or(0) as i32))
                    .product(),
            ),
        }
    }

    /// True for entries that live only in negative-index spaces.
    pub fn is_distribution(&self) -> bool {
        matches!(self, FunctionSpec::Delta { .. } | FunctionSpec::Monomial { .. })
    }

    /// Smallest `p` such that the entry belongs to `S_{-q}` for every `q > p`
    /// (for distributions), or `None` for Schwartz functions.
    pub fn tag_threshold(&self, dim: usize) -> Option<f64> {
        match self {
            FunctionSpec::Delta { .. } => Some(dim as f64 / 4.0),
            FunctionSpec::Monomial { powers } => {
                let total: u32 = powers.iter().sum();
                Some(total as f64 / 2.0 + dim as f64 / 4.0)
            }
            _ => None,
        }
    }

    /// Hermite coefficients on `basis`, tagged with `p`.
    pub fn coefficients(&self, basis: &Arc<Basis>, p: f64) -> Result<SobolevVector> {
        let dim = basis.dim();
        match self {
            FunctionSpec::Delta { point } => {
                let x = broadcast(point, dim)?;
                delta_coeffs(&x, basis, p)
            }
            FunctionSpec::Monomial { powers } => {
                let mut full = powers.clone();
                if full.len() > dim {
                    return Err(Error::InvalidArgument(format!(
                        "monomial with {} exponents in dimension {dim}",
                        full.len()
                    )));
                }
                full.resize(dim, 0);
                monomial_coeffs(&full, basis, p)
            }
            _ => {
                let quad = gauss_hermite(default_quadrature_order(basis.max_degree()))?;
                expand_function(|x| self.eval(x).unwrap_or(f64::NAN), basis, &quad, p)
            }
        }
    }
}

fn broadcast(point: &[f64], dim: usize) -> Result<Vec<f64>> {
    match point.len() {
        1 => Ok(vec![point[0]; dim]),
        n if n == dim => Ok(point.to_vec()),
        n => Err(Error::InvalidArgument(format!(
            "point with {n} coordinates in dimension {dim}"
        ))),
    }
}

impl fmt::Display for FunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: Vec<String>| v.join(",");
        match self {
            FunctionSpec::Psi1 => write!(f, "psi1"),
            FunctionSpec::Psi2 => write!(f, "psi2"),
            FunctionSpec::Gaussian { variance } => write!(f, "gaussian({variance})"),
            FunctionSpec::Delta { point } => {
                write!(f, "delta({})", join(point.iter().map(f64::to_string).collect()))
            }
            FunctionSpec::Monomial { powers } => {
                write!(f, "monomial({})", join(powers.iter().map(u32::to_string).collect()))
            }
        }
    }
}

impl FromStr for FunctionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let close = s
                    .rfind(')')
                    .filter(|&c| c > open && c == s.len() - 1)
                    .ok_or_else(|| Error::InvalidArgument(format!("unbalanced parentheses in '{s}'")))?;
                (&s[..open], Some(&s[open + 1..close]))
            }
            None => (s, None),
        };
        let reals = |a: &str| -> Result<Vec<f64>> {
            a.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad number '{t}' in '{s}'")))
                })
                .collect()
        };
        match (name.trim().to_ascii_lowercase().as_str(), args) {
            ("psi1", None) => Ok(FunctionSpec::Psi1),
            ("psi2", None) => Ok(FunctionSpec::Psi2),
            ("gaussian", Some(a)) => {
                let v = reals(a)?;
                if v.len() != 1 || !(v[0] > 0.0 && v[0].is_finite()) {
                    return Err(Error::InvalidArgument(format!("gaussian needs one positive variance: '{s}'")));
                }
                Ok(FunctionSpec::Gaussian { variance: v[0] })
            }
            ("delta", Some(a)) => {
                let point = reals(a)?;
                if point.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("delta location in '{s}'")));
                }
                Ok(FunctionSpec::Delta { point })
            }
            ("monomial", Some(a)) => {
                let powers = a
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<u32>()
                            .map_err(|_| Error::InvalidArgument(format!("bad exponent '{t}' in '{s}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(FunctionSpec::Monomial { powers })
            }
            _ => Err(Error::InvalidArgument(format!("unknown function '{s}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parse_round_trip() {
        for s in ["psi1", "psi2", "gaussian(0.25)", "delta(0)", "delta(1,-2)", "monomial(3)", "monomial(1,2)"] {
            let f: FunctionSpec = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!("psi3".parse::<FunctionSpec>().is_err());
        assert!("gaussian(-1)".parse::<FunctionSpec>().is_err());
        assert!("delta(0".parse::<FunctionSpec>().is_err());
    }

    #[test]
    fn builtins_have_unit_mass_and_no_second_moment() {
        let q = gauss_hermite(80).unwrap();
        for f in [psi1 as fn(f64) -> f64, psi2] {
            assert_relative_eq!(q.integrate(f), 1.0, epsilon = 1e-13);
            assert!(q.integrate(|t| t * t * f(t)).abs() < 1e-13);
        }
        assert_relative_eq!(psi1(0.0), 1.5 / PI.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn thresholds() {
        let x3 = FunctionSpec::Monomial { powers: vec![3] };
        assert_relative_eq!(x3.tag_threshold(1).unwrap(), 1.75);
        assert_relative_eq!(FunctionSpec::Delta { point: vec![0.0] }.tag_threshold(1).unwrap(), 0.25);
        assert!(FunctionSpec::Psi1.tag_threshold(1).is_none());
    }
}
