//! Coefficient fields `σ_ij, b_i` as distributions and the induced maps
//! `σ̄(x;ψ) = <σ, τ_x ψ>`, `b̄(x;ψ) = <b, τ_x ψ>`.
//!
//! Also hosts moments, the membership test for the set `𝒞` of initial
//! conditions that reproduce prescribed coefficients, and a Lipschitz probe.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hermite::{binomial, monomial_coeffs, Basis};
use crate::sobolev::{
    derivative_matrix, operator_norm_estimate, translate, translation_matrix, SobolevVector,
    TranslationMethod, Translator,
};

const TAG_TOL: f64 = 1e-12;

/// Polynomial `sum_k c_k x^{α_k}` in `dim` variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<(Vec<u32>, f64)>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial { dim, terms: vec![] }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Polynomial {
            dim,
            terms: vec![(vec![0; dim], c)],
        }
    }

    /// `c * x_axis^power`.
    pub fn monomial(dim: usize, axis: usize, power: u32, c: f64) -> Self {
        let mut powers = vec![0; dim];
        powers[axis] = power;
        Polynomial {
            dim,
            terms: vec![(powers, c)],
        }
    }

    /// One-dimensional polynomial from ascending coefficients.
    pub fn univariate(coeffs: &[f64]) -> Self {
        Polynomial {
            dim: 1,
            terms: coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(k, &c)| (vec![k as u32], c))
                .collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(pw, c)| {
                c * pw
                    .iter()
                    .zip(x)
                    .map(|(&k, &t)| t.powi(k as i32))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(pw, _)| pw.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|(_, c)| *c == 0.0)
    }

    /// Merge repeated exponents into a sorted map.
    pub fn collected(&self) -> BTreeMap<Vec<u32>, f64> {
        let mut out = BTreeMap::new();
        for (pw, c) in &self.terms {
            *out.entry(pw.clone()).or_insert(0.0) += c;
        }
        out.retain(|_, c| *c != 0.0);
        out
    }

    /// Ascending coefficient list in one dimension.
    pub fn univariate_coeffs(&self) -> Result<Vec<f64>> {
        if self.dim != 1 {
            return Err(Error::InvalidArgument("polynomial is not univariate".into()));
        }
        let mut out = vec![0.0; self.degree() as usize + 1];
        for (pw, c) in &self.terms {
            out[pw[0] as usize] += c;
        }
        Ok(out)
    }
}

/// A coefficient distribution with its Hermite representation.
#[derive(Debug, Clone)]
pub struct DistributionCoeff {
    /// Coefficients, tagged `-p`.
    pub rep: SobolevVector,
    pub label: String,
    /// Closed form when the coefficient is a polynomial.
    pub poly: Option<Polynomial>,
}

impl DistributionCoeff {
    pub fn from_polynomial(poly: Polynomial, basis: &Arc<Basis>, p: f64, label: &str) -> Result<Self> {
        if poly.dim != basis.dim() {
            return Err(Error::InvalidArgument(format!(
                "polynomial in {} variables on a {}-dimensional basis",
                poly.dim,
                basis.dim()
            )));
        }
        let mut rep = SobolevVector::zeros(basis.clone(), -p);
        for (pw, c) in poly.collected() {
            let mono = monomial_coeffs(&pw, basis, -p)?;
            rep.axpy(c, &mono)?;
        }
        Ok(DistributionCoeff {
            rep,
            label: label.to_string(),
            poly: Some(poly),
        })
    }

    pub fn norm(&self) -> f64 {
        self.rep.tag_norm()
    }

    pub fn is_zero(&self) -> bool {
        self.rep.coeffs().iter().all(|c| *c == 0.0)
    }
}

/// `σ` (row-major `d x d`) and `b` (length `d`) sharing the tag `-p`.
#[derive(Debug, Clone)]
pub struct CoeffField {
    pub dim: usize,
    pub p: f64,
    pub sigma: Vec<DistributionCoeff>,
    pub b: Vec<DistributionCoeff>,
}

impl CoeffField {
    pub fn new(dim: usize, p: f64, sigma: Vec<DistributionCoeff>, b: Vec<DistributionCoeff>) -> Result<Self> {
        if sigma.len() != dim * dim || b.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "field shapes {} and {} do not match dimension {dim}",
                sigma.len(),
                b.len()
            )));
        }
        for c in sigma.iter().chain(&b) {
            if (c.rep.tag() + p).abs() > TAG_TOL {
                return Err(Error::TagMismatch {
                    expected: -p,
                    found: c.rep.tag(),
                });
            }
        }
        Ok(CoeffField { dim, p, sigma, b })
    }

    /// Field built from polynomial `σ_ij` (row-major) and `b_i`.
    pub fn from_polynomials(basis: &Arc<Basis>, p: f64, sigma: Vec<Polynomial>, b: Vec<Polynomial>) -> Result<Self> {
        let d = basis.dim();
        let sig = sigma
            .into_iter()
            .enumerate()
            .map(|(k, poly)| DistributionCoeff::from_polynomial(poly, basis, p, &format!("sigma_{}{}", k / d + 1, k % d + 1)))
            .collect::<Result<Vec<_>>>()?;
        let drift = b
            .into_iter()
            .enumerate()
            .map(|(k, poly)| DistributionCoeff::from_polynomial(poly, basis, p, &format!("b_{}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        CoeffField::new(d, p, sig, drift)
    }

    /// `σ = I`, `b_i = -x_i`.
    pub fn ou(basis: &Arc<Basis>, p: f64) -> Result<Self> {
        let d = basis.dim();
        CoeffField::from_polynomials(basis, p, identity_polys(d), (0..d).map(|i| Polynomial::monomial(d, i, 1, -1.0)).collect())
    }

    /// `σ = I`, `b_i = -x_i^3`.
    pub fn quartic(basis: &Arc<Basis>, p: f64) -> Result<Self> {
        let d = basis.dim();
        CoeffField::from_polynomials(basis, p, identity_polys(d), (0..d).map(|i| Polynomial::monomial(d, i, 3, -1.0)).collect())
    }

    /// Every coefficient zero.
    pub fn zero(basis: &Arc<Basis>, p: f64) -> Result<Self> {
        let d = basis.dim();
        CoeffField::from_polynomials(basis, p, vec![Polynomial::zero(d); d * d], vec![Polynomial::zero(d); d])
    }

    pub fn sigma(&self, i: usize, j: usize) -> &DistributionCoeff {
        &self.sigma[i * self.dim + j]
    }

    pub fn basis(&self) -> &Arc<Basis> {
        self.b[0].rep.basis()
    }

    fn check_psi(&self, psi: &SobolevVector) -> Result<()> {
        if (psi.tag() - self.p).abs() > TAG_TOL {
            return Err(Error::TagMismatch {
                expected: self.p,
                found: psi.tag(),
            });
        }
        psi.check_same_basis(&self.b[0].rep)
    }

    /// `<σ_ij, φ>` (row-major) and `<b_i, φ>` without any translation.
    pub fn pair(&self, phi: &SobolevVector) -> Result<(Vec<f64>, Vec<f64>)> {
        phi.check_same_basis(&self.b[0].rep)?;
        let s = self.sigma.iter().map(|c| c.rep.dot(phi)).collect::<Result<Vec<_>>>()?;
        let b = self.b.iter().map(|c| c.rep.dot(phi)).collect::<Result<Vec<_>>>()?;
        Ok((s, b))
    }

    /// Polynomial closed forms of the coefficients, if all are polynomial.
    pub fn polynomials(&self) -> Option<(Vec<Polynomial>, Vec<Polynomial>)> {
        let s = self.sigma.iter().map(|c| c.poly.clone()).collect::<Option<Vec<_>>>()?;
        let b = self.b.iter().map(|c| c.poly.clone()).collect::<Option<Vec<_>>>()?;
        Some((s, b))
    }
}

fn identity_polys(d: usize) -> Vec<Polynomial> {
    (0..d * d)
        .map(|k| {
            if k / d == k % d {
                Polynomial::constant(d, 1.0)
            } else {
                Polynomial::zero(d)
            }
        })
        .collect()
}

fn check_point(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::InvalidArgument(format!("point has {} coordinates, expected {dim}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("point {x:?}")));
    }
    Ok(())
}

/// `σ̄(x;ψ)` as a row-major `d x d` matrix.
pub fn sigma_bar(x: &[f64], psi: &SobolevVector, field: &CoeffField) -> Result<Vec<f64>> {
    field.check_psi(psi)?;
    check_point(x, field.dim)?;
    let shifted = translate(psi, x)?;
    Ok(field.pair(&shifted)?.0)
}

/// `b̄(x;ψ)`.
pub fn b_bar(x: &[f64], psi: &SobolevVector, field: &CoeffField) -> Result<Vec<f64>> {
    field.check_psi(psi)?;
    check_point(x, field.dim)?;
    let shifted = translate(psi, x)?;
    Ok(field.pair(&shifted)?.1)
}

/// Fast evaluator of `x -> (σ̄(x;ψ), b̄(x;ψ))` for a fixed `ψ`.
///
/// In one dimension every pairing reduces to
/// `Re sum_k c_k exp(i x λ_k)` through the spectral translator, so each
/// evaluation costs `O(basis size)` per coefficient. In higher dimensions the
/// translated vector is recomputed per point.
#[derive(Debug, Clone)]
pub struct FieldEvaluator {
    field: CoeffField,
    psi: SobolevVector,
    spectral: Option<SpectralPairings>,
}

#[derive(Debug, Clone)]
struct SpectralPairings {
    values: Vec<f64>,
    sigma: Vec<Vec<Complex<f64>>>,
    b: Vec<Vec<Complex<f64>>>,
}

impl FieldEvaluator {
    pub fn new(field: &CoeffField, psi: &SobolevVector) -> Result<Self> {
        field.check_psi(psi)?;
        let spectral = if field.dim == 1 {
            let basis = psi.basis();
            let tr = Translator::one_dim(basis)?;
            let proj = tr.project(psi);
            let probe = |c: &DistributionCoeff| -> Vec<Complex<f64>> {
                // <c, τ_x ψ> = sum_k (c^T U)_k (U* ψ)_k exp(i x λ_k)
                let n = basis.len();
                let mut out = Vec::with_capacity(n);
                for k in 0..n {
                    let mut acc = Complex::new(0.0, 0.0);
                    for r in 0..n {
                        acc += tr.eigenvector_entry(r, k) * c.rep.coeffs()[r];
                    }
                    out.push(acc * proj.coord(k));
                }
                out
            };
            Some(SpectralPairings {
                values: tr.eigenvalues().to_vec(),
                sigma: field.sigma.iter().map(probe).collect(),
                b: field.b.iter().map(probe).collect(),
            })
        } else {
            None
        };
        Ok(FieldEvaluator {
            field: field.clone(),
            psi: psi.clone(),
            spectral,
        })
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn field(&self) -> &CoeffField {
        &self.field
    }

    pub fn psi(&self) -> &SobolevVector {
        &self.psi
    }

    /// `(σ̄(x;ψ), b̄(x;ψ))`.
    pub fn eval(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_point(x, self.field.dim)?;
        match &self.spectral {
            Some(sp) => {
                let phases: Vec<Complex<f64>> = sp
                    .values
                    .iter()
                    .map(|&lam| Complex::from_polar(1.0, x[0] * lam))
                    .collect();
                let apply = |c: &Vec<Complex<f64>>| -> f64 {
                    c.iter().zip(&phases).map(|(a, ph)| (a * ph).re).sum()
                };
                Ok((sp.sigma.iter().map(apply).collect(), sp.b.iter().map(apply).collect()))
            }
            None => {
                let shifted = translate(&self.psi, x)?;
                self.field.pair(&shifted)
            }
        }
    }
}

/// `<t^α, ψ>` through the monomial distribution at tag `-p`, where `p` is
/// the tag of `ψ`.
pub fn moment(psi: &SobolevVector, powers: &[u32]) -> Result<f64> {
    let dim = psi.basis().dim();
    if powers.len() != dim {
        return Err(Error::InvalidArgument(format!("{} exponents in dimension {dim}", powers.len())));
    }
    let total: u32 = powers.iter().sum();
    let threshold = total as f64 / 2.0 + dim as f64 / 4.0;
    if psi.tag() <= threshold {
        return Err(Error::InsufficientRegularity(format!(
            "moment of order {total} needs tag above {threshold}, got {}",
            psi.tag()
        )));
    }
    let mono = monomial_coeffs(powers, psi.basis(), -psi.tag())?;
    mono.dot(psi)
}

/// One-dimensional moment `int t^k ψ(t) dt`.
pub fn moment_1d(psi: &SobolevVector, k: u32) -> Result<f64> {
    moment(psi, &[k])
}

/// Target coefficients defining `𝒞`: `int σ_ij(y + x) ψ(y) dy = f_ij(x)` and
/// `int b_i(y + x) ψ(y) dy = g_i(x)` for all `x`.
#[derive(Debug, Clone)]
pub struct SetCSpec {
    pub f: Vec<Polynomial>,
    pub g: Vec<Polynomial>,
    pub tol: f64,
}

impl SetCSpec {
    /// The field's own coefficients as targets (`f = σ`, `g = b`).
    pub fn fixed_point_of(field: &CoeffField, tol: f64) -> Result<Self> {
        let (f, g) = field
            .polynomials()
            .ok_or_else(|| Error::InvalidArgument("field is not polynomial".into()))?;
        Ok(SetCSpec { f, g, tol })
    }
}

/// Required value of a single moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCondition {
    pub order: u32,
    pub value: f64,
}

/// Moment conditions equivalent to `int a(y + x) ψ(y) dy = f(x)` for
/// univariate polynomials `a`, `f`. The coefficient of `x^r` on the left is
/// `sum_{k >= r} a_k C(k, r) m_{k-r}`, which is triangular in the moments.
///
/// Returns `None` when no `ψ` can satisfy the identity.
pub fn derive_moment_conditions(a: &[f64], f: &[f64]) -> Option<Vec<MomentCondition>> {
    let top = a.iter().rposition(|c| *c != 0.0);
    let f_deg = f.iter().rposition(|c| *c != 0.0);
    let Some(kk) = top else {
        // zero coefficient: only f = 0 is reachable, and it imposes nothing
        return if f_deg.is_none() { Some(vec![]) } else { None };
    };
    if f_deg.is_some_and(|fd| fd > kk) {
        return None;
    }
    let fcoef = |r: usize| f.get(r).copied().unwrap_or(0.0);
    let mut m = Vec::with_capacity(kk + 1);
    for j in 0..=kk {
        let r = kk - j;
        let mut rhs = fcoef(r);
        for (k, &ak) in a.iter().enumerate().take(kk).skip(r) {
            rhs -= ak * binomial(k, r) as f64 * m[k - r];
        }
        m.push(rhs / (a[kk] * binomial(kk, r) as f64));
    }
    Some(
        m.into_iter()
            .enumerate()
            .map(|(k, value)| MomentCondition {
                order: k as u32,
                value,
            })
            .collect(),
    )
}

/// How `set_c_check` decides membership.
#[derive(Debug, Clone)]
pub enum SetCMode {
    /// Finitely many moment (or coefficient) conditions.
    Polynomial,
    /// Maximum deviation of `σ̄(x;ψ) - f(x)` and `b̄(x;ψ) - g(x)` on a grid.
    Direct { grid: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize)]
pub struct SetCReport {
    pub member: bool,
    pub conditions: Vec<MomentCondition>,
    /// `(label, |residual|)` pairs.
    pub residuals: Vec<(String, f64)>,
    pub max_residual: f64,
    /// Set when the targets cannot be met by any `ψ`.
    pub inconsistent: bool,
}

/// Membership test for `𝒞`.
pub fn set_c_check(psi: &SobolevVector, field: &CoeffField, spec: &SetCSpec, mode: &SetCMode) -> Result<SetCReport> {
    field.check_psi(psi)?;
    let d = field.dim;
    if spec.f.len() != d * d || spec.g.len() != d {
        return Err(Error::InvalidArgument("target shapes do not match the field".into()));
    }
    match mode {
        SetCMode::Direct { grid } => {
            let eval = FieldEvaluator::new(field, psi)?;
            let mut residuals = Vec::new();
            let mut worst = 0.0_f64;
            for x in grid {
                let (s, b) = eval.eval(x)?;
                for (k, v) in s.iter().enumerate() {
                    worst = worst.max((v - spec.f[k].eval(x)).abs());
                }
                for (k, v) in b.iter().enumerate() {
                    worst = worst.max((v - spec.g[k].eval(x)).abs());
                }
            }
            residuals.push(("grid".to_string(), worst));
            Ok(SetCReport {
                member: worst <= spec.tol,
                conditions: vec![],
                residuals,
                max_residual: worst,
                inconsistent: false,
            })
        }
        SetCMode::Polynomial => {
            let (sp, bp) = field
                .polynomials()
                .ok_or_else(|| Error::InvalidArgument("polynomial mode needs polynomial coefficients".into()))?;
            let pairs: Vec<(&Polynomial, &Polynomial, String)> = sp
                .iter()
                .zip(&spec.f)
                .enumerate()
                .map(|(k, (a, f))| (a, f, format!("sigma_{}{}", k / d + 1, k % d + 1)))
                .chain(bp.iter().zip(&spec.g).enumerate().map(|(k, (a, f))| (a, f, format!("b_{}", k + 1))))
                .collect();
            if d == 1 {
                polynomial_mode_1d(psi, &pairs, spec.tol)
            } else {
                polynomial_mode_general(psi, &pairs, spec.tol)
            }
        }
    }
}

fn polynomial_mode_1d(psi: &SobolevVector, pairs: &[(&Polynomial, &Polynomial, String)], tol: f64) -> Result<SetCReport> {
    let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
    let mut inconsistent = false;
    for (a, f, _) in pairs {
        match derive_moment_conditions(&a.univariate_coeffs()?, &f.univariate_coeffs()?) {
            Some(conds) => {
                for c in conds {
                    match merged.get(&c.order) {
                        Some(v) if (v - c.value).abs() > tol => inconsistent = true,
                        Some(_) => {}
                        None => {
                            merged.insert(c.order, c.value);
                        }
                    }
                }
            }
            None => inconsistent = true,
        }
    }
    let conditions: Vec<MomentCondition> = merged
        .into_iter()
        .map(|(order, value)| MomentCondition { order, value })
        .collect();
    let mut residuals = Vec::with_capacity(conditions.len());
    let mut worst = 0.0_f64;
    for c in &conditions {
        let r = (moment_1d(psi, c.order)? - c.value).abs();
        worst = worst.max(r);
        residuals.push((format!("m{}", c.order), r));
    }
    Ok(SetCReport {
        member: !inconsistent && worst <= tol,
        conditions,
        residuals,
        max_residual: if inconsistent { f64::INFINITY } else { worst },
        inconsistent,
    })
}

fn polynomial_mode_general(psi: &SobolevVector, pairs: &[(&Polynomial, &Polynomial, String)], tol: f64) -> Result<SetCReport> {
    let mut residuals = Vec::new();
    let mut worst = 0.0_f64;
    let mut cache: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (a, f, label) in pairs {
        let a = a.collected();
        let target = f.collected();
        // coefficient of x^β: sum_{α >= β} a_α prod_i C(α_i, β_i) m_{α - β}
        let mut lhs: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (alpha, &coef) in &a {
            for beta in sub_indices(alpha) {
                let gamma: Vec<u32> = alpha.iter().zip(&beta).map(|(x, y)| x - y).collect();
                let m = match cache.get(&gamma) {
                    Some(v) => *v,
                    None => {
                        let v = moment(psi, &gamma)?;
                        cache.insert(gamma.clone(), v);
                        v
                    }
                };
                let c: f64 = alpha
                    .iter()
                    .zip(&beta)
                    .map(|(&x, &y)| binomial(x as usize, y as usize) as f64)
                    .product();
                *lhs.entry(beta).or_insert(0.0) += coef * c * m;
            }
        }
        let keys: std::collections::BTreeSet<Vec<u32>> = lhs.keys().chain(target.keys()).cloned().collect();
        for key in keys {
            let r = (lhs.get(&key).copied().unwrap_or(0.0) - target.get(&key).copied().unwrap_or(0.0)).abs();
            worst = worst.max(r);
            residuals.push((format!("{label}[x^{key:?}]"), r));
        }
    }
    Ok(SetCReport {
        member: worst <= tol,
        conditions: vec![],
        residuals,
        max_residual: worst,
        inconsistent: false,
    })
}

fn sub_indices(alpha: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for &a in alpha {
        let mut next = Vec::with_capacity(out.len() * (a as usize + 1));
        for prefix in &out {
            for b in 0..=a {
                let mut v = prefix.clone();
                v.push(b);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Lipschitz estimates of `σ̄` and `b̄` on a ball, with the structural bound.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub radius: f64,
    pub samples: usize,
    pub sigma_lipschitz: f64,
    pub b_lipschitz: f64,
    /// `sup_{|z| <= n} ||τ_z ∂_i||_{S_{p+1/2} -> S_p}` over the sampled points.
    pub translate_derivative_norm: f64,
    pub sigma_structural: f64,
    pub b_structural: f64,
}

/// Deterministic grid of points in the closed ball `B(0, radius)`.
pub fn ball_grid(dim: usize, radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(2);
    let step = 2.0 * radius / (per_axis - 1) as f64;
    let mut out = Vec::new();
    let mut digits = vec![0usize; dim];
    loop {
        let x: Vec<f64> = digits.iter().map(|&k| -radius + step * k as f64).collect();
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius * (1.0 + 1e-12) {
            out.push(x);
        }
        let mut carry = true;
        for slot in digits.iter_mut().rev() {
            *slot += 1;
            if *slot < per_axis {
                carry = false;
                break;
            }
            *slot = 0;
        }
        if carry {
            break;
        }
    }
    out
}

/// Estimated local Lipschitz constants of `σ̄(·;ψ)` and `b̄(·;ψ)` on
/// `B(0, radius)`: maximum difference quotient over all sampled pairs, with
/// Frobenius norms for matrices.
pub fn lipschitz_probe(psi: &SobolevVector, field: &CoeffField, radius: f64, per_axis: usize) -> Result<LipschitzReport> {
    let grid = ball_grid(field.dim, radius, per_axis);
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("need at least two sample points".into()));
    }
    let eval = FieldEvaluator::new(field, psi)?;
    let values = grid.iter().map(|x| eval.eval(x)).collect::<Result<Vec<_>>>()?;
    let mut ls = 0.0_f64;
    let mut lb = 0.0_f64;
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let dx = dist(&grid[i], &grid[j]);
            if dx == 0.0 {
                continue;
            }
            ls = ls.max(dist(&values[i].0, &values[j].0) / dx);
            lb = lb.max(dist(&values[i].1, &values[j].1) / dx);
        }
    }
    // structural factor d * C * ||σ||_{-p} * ||ψ||_{p+1/2}, with C measured
    // on a coarse subset of the grid
    let basis = psi.basis();
    let derivs = (0..field.dim)
        .map(|axis| derivative_matrix(basis, axis))
        .collect::<Result<Vec<_>>>()?;
    let stride = (grid.len() / 9).max(1);
    let mut c_tilde = 0.0_f64;
    for x in grid.iter().step_by(stride) {
        let t = translation_matrix(x, basis, TranslationMethod::Exp)?;
        for d in &derivs {
            c_tilde = c_tilde.max(operator_norm_estimate(&t.compose(d), field.p + 0.5, field.p)?);
        }
    }
    let psi_norm = psi.norm(field.p + 0.5);
    let max_norm = |cs: &[DistributionCoeff]| cs.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    let dim = field.dim as f64;
    Ok(LipschitzReport {
        radius,
        samples: grid.len(),
        sigma_lipschitz: ls,
        b_lipschitz: lb,
        translate_derivative_norm: c_tilde,
        sigma_structural: dim * c_tilde * max_norm(&field.sigma) * psi_norm,
        b_structural: dim * c_tilde * max_norm(&field.b) * psi_norm,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quartic_conditions() {
        let c = derive_moment_conditions(&[0.0, 0.0, 0.0, -1.0], &[0.0, 0.0, 0.0, -1.0]).unwrap();
        let vals: Vec<f64> = c.iter().map(|m| m.value).collect();
        assert_eq!(vals, vec![1.0, 0.0, 0.0, 0.0]);
        let c = derive_moment_conditions(&[1.0], &[1.0]).unwrap();
        assert_eq!(c, vec![MomentCondition { order: 0, value: 1.0 }]);
        // OU drift: -(y + x) averaged must equal -x
        let c = derive_moment_conditions(&[0.0, -1.0], &[0.0, -1.0]).unwrap();
        assert_eq!(c.iter().map(|m| m.value).collect::<Vec<_>>(), vec![1.0, 0.0]);
    }

    #[test]
    fn unreachable_targets() {
        assert!(derive_moment_conditions(&[1.0], &[0.0, 1.0]).is_none());
        assert!(derive_moment_conditions(&[], &[2.0]).is_none());
        assert_eq!(derive_moment_conditions(&[], &[]), Some(vec![]));
    }

    #[test]
    fn ball_grid_counts() {
        assert_eq!(ball_grid(1, 2.0, 5).len(), 5);
        let g = ball_grid(2, 1.0, 3);
        // corners are outside the unit disc
        assert_eq!(g.len(), 5);
    }

    #[test]
    fn polynomial_helpers() {
        let p = Polynomial::univariate(&[1.0, 0.0, -2.0]);
        assert_relative_eq!(p.eval(&[3.0]), -17.0);
        assert_eq!(p.degree(), 2);
        assert_eq!(p.univariate_coeffs().unwrap(), vec![1.0, 0.0, -2.0]);
        assert_eq!(sub_indices(&[1, 2]).len(), 6);
    }
}
