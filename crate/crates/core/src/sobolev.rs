//! Hermite-Sobolev vectors and the operator calculus on the truncated lattice.
//!
//! A [`SobolevVector`] is a coefficient array over a [`Basis`] plus a
//! regularity tag `p`. The tag is metadata only; norms at any index are
//! computed on demand as `sum_n (2|n| + d)^{2p} v_n^2`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{gauss_hermite, hermite_functions, Basis, BasisSpec, MultiIndex};

const TAG_TOL: f64 = 1e-12;

/// Truncated Hermite coefficient vector tagged with a regularity index.
#[derive(Debug, Clone)]
pub struct SobolevVector {
    basis: Arc<Basis>,
    coeffs: Vec<f64>,
    p: f64,
}

impl SobolevVector {
    pub fn new(basis: Arc<Basis>, coeffs: Vec<f64>, p: f64) -> Self {
        assert_eq!(basis.len(), coeffs.len(), "coefficient count does not match basis");
        SobolevVector { basis, coeffs, p }
    }

    pub fn zeros(basis: Arc<Basis>, p: f64) -> Self {
        let n = basis.len();
        SobolevVector::new(basis, vec![0.0; n], p)
    }

    /// The basis element `h_n`.
    pub fn basis_element(basis: Arc<Basis>, n: &MultiIndex, p: f64) -> Result<Self> {
        let rank = basis
            .rank_of(n)
            .ok_or_else(|| Error::BasisMismatch(format!("index {n} outside the truncation")))?;
        let mut v = SobolevVector::zeros(basis, p);
        v.coeffs[rank] = 1.0;
        Ok(v)
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn spec(&self) -> BasisSpec {
        self.basis.spec()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn tag(&self) -> f64 {
        self.p
    }

    pub fn with_tag(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// `||v||_q` for an arbitrary index `q`.
    pub fn norm(&self, q: f64) -> f64 {
        self.norm_sq(q).sqrt()
    }

    pub fn norm_sq(&self, q: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(r, c)| self.basis.weight_base(r).powf(2.0 * q) * c * c)
            .sum()
    }

    /// Norm at the vector's own tag.
    pub fn tag_norm(&self) -> f64 {
        self.norm(self.p)
    }

    /// `<u, v>_q = sum_n (2|n|+d)^{2q} u_n v_n`.
    pub fn inner(&self, other: &SobolevVector, q: f64) -> Result<f64> {
        self.check_same_basis(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(r, (a, b))| self.basis.weight_base(r).powf(2.0 * q) * a * b)
            .sum())
    }

    /// Plain coefficient dot product `sum_n u_n v_n`, with no tag check.
    pub fn dot(&self, other: &SobolevVector) -> Result<f64> {
        self.check_same_basis(other)?;
        Ok(dot(&self.coeffs, &other.coeffs))
    }

    pub fn check_same_basis(&self, other: &SobolevVector) -> Result<()> {
        if Arc::ptr_eq(&self.basis, &other.basis) || self.spec() == other.spec() {
            Ok(())
        } else {
            Err(Error::BasisMismatch(format!(
                "{:?} vs {:?}",
                self.spec(),
                other.spec()
            )))
        }
    }

    pub fn scaled(&self, a: f64) -> SobolevVector {
        SobolevVector::new(
            self.basis.clone(),
            self.coeffs.iter().map(|c| a * c).collect(),
            self.p,
        )
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SobolevVector) -> Result<()> {
        self.check_same_basis(other)?;
        for (s, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *s += a * o;
        }
        Ok(())
    }

    /// `a * self + b * other`, keeping this vector's tag.
    pub fn combine(&self, a: f64, other: &SobolevVector, b: f64) -> Result<SobolevVector> {
        self.check_same_basis(other)?;
        Ok(SobolevVector::new(
            self.basis.clone(),
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            self.p,
        ))
    }

    pub fn sub(&self, other: &SobolevVector) -> Result<SobolevVector> {
        self.combine(1.0, other, -1.0)
    }

    /// Evaluate `sum_n v_n h_n(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.coeffs, &self.basis.eval_all(x)?))
    }

    /// Copy into a basis of another degree, padding with zeros or dropping
    /// the shells above the new cutoff.
    pub fn resized(&self, target: &Arc<Basis>) -> Result<SobolevVector> {
        if target.dim() != self.basis.dim() {
            return Err(Error::BasisMismatch(format!(
                "cannot move a {}-dimensional vector to dimension {}",
                self.basis.dim(),
                target.dim()
            )));
        }
        let mut out = SobolevVector::zeros(target.clone(), self.p);
        for (r, n) in self.basis.indices().iter().enumerate() {
            if let Some(t) = target.rank_of(n) {
                out.coeffs[t] = self.coeffs[r];
            }
        }
        Ok(out)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `||v||_p` as a free function.
pub fn sobolev_norm(v: &SobolevVector, p: f64) -> f64 {
    v.norm(p)
}

/// Duality pairing `<u, v>` of a tag `-p` vector with a tag `p` vector.
pub fn pairing(u: &SobolevVector, v: &SobolevVector) -> Result<f64> {
    u.check_same_basis(v)?;
    if (u.tag() + v.tag()).abs() > TAG_TOL {
        return Err(Error::TagMismatch {
            expected: -v.tag(),
            found: u.tag(),
        });
    }
    u.dot(v)
}

/// Dense operator on the truncated coefficient lattice.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub basis: Arc<Basis>,
    pub matrix: DMatrix<f64>,
    /// Largest `||n| - |m||` over non-zero entries, when known.
    pub band_hint: Option<u32>,
}

impl OperatorMatrix {
    pub fn new(basis: Arc<Basis>, matrix: DMatrix<f64>, band_hint: Option<u32>) -> Self {
        assert_eq!(matrix.nrows(), basis.len());
        assert_eq!(matrix.ncols(), basis.len());
        OperatorMatrix {
            basis,
            matrix,
            band_hint,
        }
    }

    pub fn identity(basis: Arc<Basis>) -> Self {
        let n = basis.len();
        OperatorMatrix::new(basis, DMatrix::identity(n, n), Some(0))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `op * v`; the result carries tag `out_tag`.
    pub fn apply(&self, v: &SobolevVector, out_tag: f64) -> Result<SobolevVector> {
        if v.spec() != self.basis.spec() {
            return Err(Error::BasisMismatch(format!(
                "operator on {:?}, vector on {:?}",
                self.basis.spec(),
                v.spec()
            )));
        }
        let out = &self.matrix * DVector::from_column_slice(v.coeffs());
        Ok(SobolevVector::new(
            self.basis.clone(),
            out.as_slice().to_vec(),
            out_tag,
        ))
    }

    /// Composition `self * other`.
    pub fn compose(&self, other: &OperatorMatrix) -> OperatorMatrix {
        let band = match (self.band_hint, other.band_hint) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        OperatorMatrix::new(self.basis.clone(), &self.matrix * &other.matrix, band)
    }

    pub fn transpose(&self) -> OperatorMatrix {
        OperatorMatrix::new(self.basis.clone(), self.matrix.transpose(), self.band_hint)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entry over rows and columns with `|n| <= degree`.
    pub fn max_abs_interior(&self, degree: u32) -> f64 {
        let keep: Vec<usize> = (0..self.dim())
            .filter(|&r| self.basis.order(r) <= degree)
            .collect();
        let mut m = 0.0_f64;
        for &i in &keep {
            for &j in &keep {
                m = m.max(self.matrix[(i, j)].abs());
            }
        }
        m
    }
}

/// Truncated `d/dx_i`:
/// `∂_i h_n = sqrt(n_i/2) h_{n-e_i} - sqrt((n_i+1)/2) h_{n+e_i}`.
pub fn derivative_matrix(basis: &Arc<Basis>, axis: usize) -> Result<OperatorMatrix> {
    ladder_matrix(basis, axis, -1.0)
}

/// Truncated multiplication by `x_i`:
/// `x_i h_n = sqrt((n_i+1)/2) h_{n+e_i} + sqrt(n_i/2) h_{n-e_i}`.
pub fn multiplication_matrix(basis: &Arc<Basis>, axis: usize) -> Result<OperatorMatrix> {
    ladder_matrix(basis, axis, 1.0)
}

fn ladder_matrix(basis: &Arc<Basis>, axis: usize, raise_sign: f64) -> Result<OperatorMatrix> {
    check_axis(basis, axis)?;
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for col in 0..n {
        let ni = basis.index(col).entries()[axis] as f64;
        if let Some(row) = basis.lowered(axis, col) {
            m[(row, col)] = (ni / 2.0).sqrt();
        }
        if let Some(row) = basis.raised(axis, col) {
            m[(row, col)] = raise_sign * ((ni + 1.0) / 2.0).sqrt();
        }
    }
    Ok(OperatorMatrix::new(basis.clone(), m, Some(1)))
}

fn check_axis(basis: &Basis, axis: usize) -> Result<()> {
    if axis >= basis.dim() {
        Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for dimension {}",
            basis.dim()
        )))
    } else {
        Ok(())
    }
}

/// Apply the truncated `∂_axis` without forming the matrix.
pub fn apply_derivative(v: &[f64], basis: &Basis, axis: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for col in 0..basis.len() {
        let c = v[col];
        if c == 0.0 {
            continue;
        }
        let ni = basis.index(col).entries()[axis] as f64;
        if let Some(row) = basis.lowered(axis, col) {
            out[row] += (ni / 2.0).sqrt() * c;
        }
        if let Some(row) = basis.raised(axis, col) {
            out[row] -= ((ni + 1.0) / 2.0).sqrt() * c;
        }
    }
}

/// Construction method for translation matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationMethod {
    /// `exp(-sum_i x_i D_i)` with the truncated, skew-symmetric `D_i`.
    Exp,
    /// Entries `int h_n(y - x) h_m(y) dy` by Gauss-Hermite quadrature.
    Quadrature,
}

/// Matrix of `τ_x`, `(τ_x φ)(y) = φ(y - x)`.
pub fn translation_matrix(
    x: &[f64],
    basis: &Arc<Basis>,
    method: TranslationMethod,
) -> Result<OperatorMatrix> {
    if x.len() != basis.dim() {
        return Err(Error::InvalidArgument(format!(
            "shift has {} coordinates, basis dimension is {}",
            x.len(),
            basis.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("translation {x:?}")));
    }
    match method {
        TranslationMethod::Exp => {
            let n = basis.len();
            let mut gen = DMatrix::zeros(n, n);
            for (axis, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    gen -= derivative_matrix(basis, axis)?.matrix * xi;
                }
            }
            Ok(OperatorMatrix::new(basis.clone(), gen.exp(), None))
        }
        TranslationMethod::Quadrature => quadrature_translation(x, basis),
    }
}

fn quadrature_translation(x: &[f64], basis: &Arc<Basis>) -> Result<OperatorMatrix> {
    // with y = u + x/2 the integrand is exp(-u^2 - x^2/4) times a polynomial
    // of degree <= 2N in u, so N + 1 nodes integrate it exactly
    let nmax = basis.max_degree() as usize;
    let quad = gauss_hermite(nmax + 2)?;
    let mut per_axis = Vec::with_capacity(x.len());
    for &shift in x {
        let left: Vec<Vec<f64>> = quad
            .nodes
            .iter()
            .map(|&u| hermite_functions(u - 0.5 * shift, nmax))
            .collect::<Result<_>>()?;
        let right: Vec<Vec<f64>> = quad
            .nodes
            .iter()
            .map(|&u| hermite_functions(u + 0.5 * shift, nmax))
            .collect::<Result<_>>()?;
        let mut t = DMatrix::<f64>::zeros(nmax + 1, nmax + 1);
        for (k, &w) in quad.corrected_weights.iter().enumerate() {
            for m in 0..=nmax {
                let wm = w * right[k][m];
                for n in 0..=nmax {
                    t[(m, n)] += wm * left[k][n];
                }
            }
        }
        per_axis.push(t);
    }
    let size = basis.len();
    let mut out = DMatrix::zeros(size, size);
    for (row, m) in basis.indices().iter().enumerate() {
        for (col, n) in basis.indices().iter().enumerate() {
            let mut v = 1.0;
            for (axis, t) in per_axis.iter().enumerate() {
                v *= t[(m.entries()[axis] as usize, n.entries()[axis] as usize)];
            }
            out[(row, col)] = v;
        }
    }
    Ok(OperatorMatrix::new(basis.clone(), out, None))
}

/// Spectral factorization of the truncated translation group along a fixed
/// direction `u`: `exp(-s u·D) = U diag(exp(i s λ)) U*` where `λ, U` are the
/// eigenpairs of the Hermitian matrix `i u·D`.
///
/// Building it once costs one eigen-solve; each shift afterwards is a
/// matrix product, which makes long translated paths cheap in `d = 1`.
#[derive(Debug, Clone)]
pub struct Translator {
    basis: Arc<Basis>,
    direction: Vec<f64>,
    vectors: DMatrix<Complex<f64>>,
    values: Vec<f64>,
}

/// `U* v` for a fixed vector `v`, reusable across shifts.
#[derive(Debug, Clone)]
pub struct ProjectedVector {
    coords: Vec<Complex<f64>>,
    p: f64,
}

impl ProjectedVector {
    pub fn coord(&self, k: usize) -> Complex<f64> {
        self.coords[k]
    }
}

impl Translator {
    pub fn new(basis: &Arc<Basis>, direction: &[f64]) -> Result<Self> {
        if direction.len() != basis.dim() {
            return Err(Error::InvalidArgument("direction has wrong length".into()));
        }
        let len = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::InvalidArgument(format!("bad direction {direction:?}")));
        }
        let unit: Vec<f64> = direction.iter().map(|v| v / len).collect();
        let n = basis.len();
        let mut gen = DMatrix::<f64>::zeros(n, n);
        for (axis, &u) in unit.iter().enumerate() {
            if u != 0.0 {
                gen += derivative_matrix(basis, axis)?.matrix * u;
            }
        }
        let herm = gen.map(|g| Complex::new(0.0, g));
        let eig = herm
            .try_symmetric_eigen(1e-15, 100_000)
            .ok_or_else(|| Error::SolverFailure("translation generator eigenproblem".into()))?;
        Ok(Translator {
            basis: basis.clone(),
            direction: unit,
            vectors: eig.eigenvectors,
            values: eig.eigenvalues.iter().copied().collect(),
        })
    }

    /// The single translator needed in one dimension.
    pub fn one_dim(basis: &Arc<Basis>) -> Result<Self> {
        Translator::new(basis, &[1.0])
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// Matrix of `τ_{s u}`.
    pub fn matrix(&self, s: f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (k, &lam) in self.values.iter().enumerate() {
            let phase = Complex::from_polar(1.0, s * lam);
            for r in 0..n {
                scaled[(r, k)] *= phase;
            }
        }
        (scaled * self.vectors.adjoint()).map(|c| c.re)
    }

    /// Eigenvalues `λ_k` of `i u·D`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    /// Entry `U[r, k]` of the unitary eigenvector matrix.
    pub fn eigenvector_entry(&self, r: usize, k: usize) -> Complex<f64> {
        self.vectors[(r, k)]
    }

    pub fn project(&self, v: &SobolevVector) -> ProjectedVector {
        let n = self.values.len();
        let mut coords = vec![Complex::new(0.0, 0.0); n];
        for (k, c) in coords.iter_mut().enumerate() {
            let mut acc = Complex::new(0.0, 0.0);
            for r in 0..n {
                acc += self.vectors[(r, k)].conj() * v.coeffs()[r];
            }
            *c = acc;
        }
        ProjectedVector { coords, p: v.tag() }
    }

    /// `τ_{s u} v` from a projection of `v`.
    pub fn shift_projected(&self, proj: &ProjectedVector, s: f64) -> SobolevVector {
        let n = self.values.len();
        let phased: Vec<Complex<f64>> = proj
            .coords
            .iter()
            .zip(&self.values)
            .map(|(c, &lam)| c * Complex::from_polar(1.0, s * lam))
            .collect();
        let mut out = vec![0.0; n];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, ph) in phased.iter().enumerate() {
                let u = self.vectors[(r, k)];
                acc += u.re * ph.re - u.im * ph.im;
            }
            *o = acc;
        }
        SobolevVector::new(self.basis.clone(), out, proj.p)
    }

    pub fn shift(&self, v: &SobolevVector, s: f64) -> SobolevVector {
        self.shift_projected(&self.project(v), s)
    }
}

/// Translate `v` by `x` with the exponential construction. Uses the
/// direction-`x` spectral translator, which is exact for the truncated
/// generator.
pub fn translate(v: &SobolevVector, x: &[f64]) -> Result<SobolevVector> {
    let len = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !len.is_finite() {
        return Err(Error::NonFinite(format!("translation {x:?}")));
    }
    if len == 0.0 {
        return Ok(v.clone());
    }
    Ok(Translator::new(v.basis(), x)?.shift(v, len))
}

/// Diagonal Fourier multiplier `(-i)^{|n|}` as paired real/imaginary parts.
#[derive(Debug, Clone)]
pub struct FourierDiagonal {
    pub basis: Arc<Basis>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl FourierDiagonal {
    /// Apply to a real vector, returning `(Re, Im)` coefficient arrays.
    pub fn apply(&self, v: &SobolevVector) -> Result<(Vec<f64>, Vec<f64>)> {
        if v.spec() != self.basis.spec() {
            return Err(Error::BasisMismatch("fourier on a different basis".into()));
        }
        let re = v.coeffs().iter().zip(&self.re).map(|(c, a)| c * a).collect();
        let im = v.coeffs().iter().zip(&self.im).map(|(c, a)| c * a).collect();
        Ok((re, im))
    }

    /// `||F v||_p` computed from the complex coefficients.
    pub fn norm_of_image(&self, v: &SobolevVector, p: f64) -> Result<f64> {
        let (re, im) = self.apply(v)?;
        Ok(re
            .iter()
            .zip(&im)
            .enumerate()
            .map(|(r, (a, b))| self.basis.weight_base(r).powf(2.0 * p) * (a * a + b * b))
            .sum::<f64>()
            .sqrt())
    }
}

pub fn fourier_diagonal(basis: &Arc<Basis>) -> FourierDiagonal {
    let mut re = Vec::with_capacity(basis.len());
    let mut im = Vec::with_capacity(basis.len());
    for r in 0..basis.len() {
        let (a, b) = match basis.order(r) % 4 {
            0 => (1.0, 0.0),
            1 => (0.0, -1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, 1.0),
        };
        re.push(a);
        im.push(b);
    }
    FourierDiagonal {
        basis: basis.clone(),
        re,
        im,
    }
}

/// Largest singular value of `W_out op W_in^{-1}` with
/// `W_q = diag((2|n|+d)^q)`, i.e. the `S_{p_in} -> S_{p_out}` operator norm
/// on the truncated space.
pub fn operator_norm_estimate(op: &OperatorMatrix, p_in: f64, p_out: f64) -> Result<f64> {
    let basis = &op.basis;
    let n = op.dim();
    if op.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("operator matrix".into()));
    }
    let mut w = op.matrix.clone();
    for i in 0..n {
        let row = basis.weight_base(i).powf(p_out);
        for j in 0..n {
            w[(i, j)] *= row * basis.weight_base(j).powf(-p_in);
        }
    }
    let svd = w
        .try_svd(false, false, 1e-15, 100_000)
        .ok_or_else(|| Error::SolverFailure("singular value iteration".into()))?;
    Ok(svd.singular_values.iter().fold(0.0_f64, |m, s| m.max(*s)))
}

/// Monotone polynomial envelope `P(r) = sum_k c_k r^k`, `c_k >= 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyEnvelope {
    pub coeffs: Vec<f64>,
    pub degree: usize,
    /// Largest `measured - P(r)` over the training points after inflation.
    pub max_violation: f64,
    /// Multiplicative inflation applied to the least-squares fit.
    pub inflation: f64,
}

impl PolyEnvelope {
    pub fn eval(&self, r: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
    }

    /// `sup_{|x| <= r} P(|x|)`, which is `P(r)` since `P` is monotone.
    pub fn sup_on_ball(&self, r: f64) -> f64 {
        self.eval(r.abs())
    }
}

/// Degree `2(floor(|p|) + 1)` used for the translation envelope.
pub fn envelope_degree(p: f64) -> usize {
    2 * (p.abs().floor() as usize + 1)
}

/// Measured `||τ_x||_{S_p -> S_p}` at radius `r`, shifting along `direction`.
pub fn measured_translation_norm(basis: &Arc<Basis>, p: f64, direction: &[f64], r: f64) -> Result<f64> {
    let len = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let x: Vec<f64> = direction.iter().map(|v| v / len * r).collect();
    let t = translation_matrix(&x, basis, TranslationMethod::Exp)?;
    operator_norm_estimate(&t, p, p)
}

/// Fit a monotone envelope of degree `2(floor(|p|)+1)` to measured operator
/// norms of `τ_x` on `S_p`, then inflate it to cover every training point
/// with relative `margin` to spare.
pub fn tau_poly_bound(p: f64, xs: &[f64], basis: &Arc<Basis>, margin: f64) -> Result<(PolyEnvelope, Vec<(f64, f64)>)> {
    if xs.is_empty() {
        return Err(Error::DegenerateFit("no sample points".into()));
    }
    let mut dir = vec![0.0; basis.dim()];
    dir[0] = 1.0;
    let samples = xs
        .iter()
        .map(|&x| Ok((x.abs(), measured_translation_norm(basis, p, &dir, x.abs())?)))
        .collect::<Result<Vec<_>>>()?;
    let env = fit_envelope(&samples, envelope_degree(p), margin)?;
    Ok((env, samples))
}

/// Non-negative least squares fit of `sum_k c_k r^k` followed by inflation.
pub fn fit_envelope(samples: &[(f64, f64)], degree: usize, margin: f64) -> Result<PolyEnvelope> {
    if samples.is_empty() {
        return Err(Error::DegenerateFit("no samples".into()));
    }
    let rmax = samples.iter().fold(1.0_f64, |m, (r, _)| m.max(*r));
    let cols = degree + 1;
    // scaled monomials (r / rmax)^k keep the design matrix well conditioned
    let design = DMatrix::from_fn(samples.len(), cols, |i, k| (samples[i].0 / rmax).powi(k as i32));
    let target = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let scaled = nnls_enumerate(&design, &target)?;
    let mut coeffs: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(k, c)| c / rmax.powi(k as i32))
        .collect();
    let eval = |c: &[f64], r: f64| c.iter().rev().fold(0.0, |acc, v| acc * r + v);
    let mut inflation = 1.0_f64;
    for &(r, v) in samples {
        let fit = eval(&coeffs, r);
        if fit <= 0.0 {
            if v > 0.0 {
                return Err(Error::DegenerateFit(format!("fit vanishes at r = {r}")));
            }
            continue;
        }
        inflation = inflation.max(v / fit);
    }
    inflation *= 1.0 + margin;
    for c in coeffs.iter_mut() {
        *c *= inflation;
    }
    let max_violation = samples
        .iter()
        .map(|&(r, v)| v - eval(&coeffs, r))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PolyEnvelope {
        coeffs,
        degree,
        max_violation,
        inflation,
    })
}

/// Exact NNLS for a handful of columns: solve the unconstrained problem on
/// every support set and keep the best feasible one.
fn nnls_enumerate(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vec<f64>> {
    let cols = a.ncols();
    if cols > 16 {
        return Err(Error::DegenerateFit(format!("{cols} columns is too many for subset NNLS")));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << cols) {
        let support: Vec<usize> = (0..cols).filter(|k| mask & (1 << k) != 0).collect();
        let sub = DMatrix::from_fn(a.nrows(), support.len(), |i, j| a[(i, support[j])]);
        let svd = sub.clone().svd(true, true);
        let Ok(sol) = svd.solve(b, 1e-12) else {
            continue;
        };
        if sol.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            continue;
        }
        let resid = (&sub * &sol - b).norm_squared();
        if best.as_ref().is_none_or(|(r, _)| resid < *r) {
            let mut full = vec![0.0; cols];
            for (j, &k) in support.iter().enumerate() {
                full[k] = sol[j];
            }
            best = Some((resid, full));
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::DegenerateFit("no feasible non-negative fit".into()))
}

/// Header written as the first line of coefficient CSV files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CoeffHeader {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: u32,
    pub p: f64,
}

/// Write `rank, n_1..n_d, coefficient` rows preceded by a JSON header line.
pub fn write_coeff_csv<W: Write>(v: &SobolevVector, mut w: W) -> Result<()> {
    let header = CoeffHeader {
        d: v.spec().dim,
        n: v.spec().max_degree,
        p: v.tag(),
    };
    writeln!(w, "# {}", serde_json::to_string(&header).expect("header serializes"))?;
    let idx_cols: Vec<String> = (1..=header.d).map(|k| format!("n{k}")).collect();
    writeln!(w, "rank,{},coefficient", idx_cols.join(","))?;
    for (r, n) in v.basis().indices().iter().enumerate() {
        let entries: Vec<String> = n.entries().iter().map(u32::to_string).collect();
        writeln!(w, "{r},{},{:.17e}", entries.join(","), v.coeffs()[r])?;
    }
    Ok(())
}

pub fn save_coeff_csv(v: &SobolevVector, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_coeff_csv(v, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_coeff_csv(path: &Path) -> Result<SobolevVector> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty coefficient file".into()))??;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| Error::InvalidArgument("missing header line".into()))?;
    let header: CoeffHeader = serde_json::from_str(json.trim())
        .map_err(|e| Error::InvalidArgument(format!("bad header: {e}")))?;
    let basis = Basis::new(BasisSpec::new(header.d, header.n));
    let mut v = SobolevVector::zeros(basis.clone(), header.p);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') || line.starts_with("rank,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.d + 2 {
            return Err(Error::InvalidArgument(format!("bad row: {line}")));
        }
        let idx = fields[1..=header.d]
            .iter()
            .map(|s| s.trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("bad index in {line}: {e}")))?;
        let value: f64 = fields[header.d + 1]
            .trim()
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("bad value in {line}: {e}")))?;
        let rank = basis
            .rank_of(&MultiIndex::new(idx))
            .ok_or_else(|| Error::BasisMismatch(format!("row outside truncation: {line}")))?;
        v.coeffs_mut()[rank] = value;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn b1(n: u32) -> Arc<Basis> {
        Basis::one_dim(n)
    }

    #[test]
    fn norm_of_basis_elements() {
        let basis = b1(10);
        for n in 0..=10u32 {
            let v = SobolevVector::basis_element(basis.clone(), &MultiIndex::new(vec![n]), 0.0).unwrap();
            for &p in &[-1.5, 0.0, 0.5, 2.0] {
                assert_relative_eq!(v.norm(p), (2.0 * n as f64 + 1.0).powf(p), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn pairing_checks_tags() {
        let basis = b1(4);
        let u = SobolevVector::basis_element(basis.clone(), &MultiIndex::new(vec![3]), -1.0).unwrap();
        let v = SobolevVector::basis_element(basis.clone(), &MultiIndex::new(vec![3]), 1.0).unwrap();
        assert_eq!(pairing(&u, &v).unwrap(), 1.0);
        assert!(matches!(pairing(&u, &u), Err(Error::TagMismatch { .. })));
        let other = SobolevVector::zeros(b1(5), 1.0);
        assert!(matches!(pairing(&u, &other), Err(Error::BasisMismatch(_))));
    }

    #[test]
    fn derivative_first_column() {
        let basis = b1(6);
        let d = derivative_matrix(&basis, 0).unwrap();
        assert_relative_eq!(d.matrix[(1, 0)], -(0.5f64).sqrt());
        assert_eq!(d.matrix.column(0).iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!((&d.matrix + d.matrix.transpose()).amax(), 0.0);
        let m = multiplication_matrix(&basis, 0).unwrap();
        assert_relative_eq!(m.matrix[(1, 0)], (0.5f64).sqrt());
        assert_eq!((&m.matrix - m.matrix.transpose()).amax(), 0.0);
    }

    #[test]
    fn sparse_derivative_matches_matrix() {
        let basis = Basis::new(BasisSpec::new(2, 6));
        let v: Vec<f64> = (0..basis.len()).map(|k| ((k * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let sv = SobolevVector::new(basis.clone(), v.clone(), 0.0);
        for axis in 0..2 {
            let dense = derivative_matrix(&basis, axis).unwrap().apply(&sv, 0.0).unwrap();
            let mut out = vec![0.0; basis.len()];
            apply_derivative(&v, &basis, axis, &mut out);
            for (a, b) in dense.coeffs().iter().zip(&out) {
                assert_relative_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn translation_at_zero_is_identity() {
        let basis = b1(12);
        for method in [TranslationMethod::Exp, TranslationMethod::Quadrature] {
            let t = translation_matrix(&[0.0], &basis, method).unwrap();
            let diff = &t.matrix - DMatrix::<f64>::identity(13, 13);
            assert!(diff.amax() < 1e-13, "{method:?}: {}", diff.amax());
        }
        assert!(translation_matrix(&[f64::NAN], &basis, TranslationMethod::Exp).is_err());
    }

    #[test]
    fn spectral_translator_matches_expm() {
        let basis = b1(30);
        let tr = Translator::one_dim(&basis).unwrap();
        for &x in &[-1.7, 0.3, 2.5] {
            let a = translation_matrix(&[x], &basis, TranslationMethod::Exp).unwrap();
            let b = tr.matrix(x);
            assert!((&a.matrix - b).amax() < 1e-11);
        }
        let basis2 = Basis::new(BasisSpec::new(2, 8));
        let x = [0.6, -1.1];
        let a = translation_matrix(&x, &basis2, TranslationMethod::Exp).unwrap();
        let v = SobolevVector::new(basis2.clone(), (0..basis2.len()).map(|k| 1.0 / (1.0 + k as f64)).collect(), 0.0);
        let direct = a.apply(&v, 0.0).unwrap();
        let fast = translate(&v, &x).unwrap();
        for (p, q) in direct.coeffs().iter().zip(fast.coeffs()) {
            assert_relative_eq!(p, q, epsilon = 1e-11);
        }
    }

    #[test]
    fn fourier_entries() {
        let basis = b1(5);
        let f = fourier_diagonal(&basis);
        assert_eq!((f.re[0], f.im[0]), (1.0, 0.0));
        assert_eq!((f.re[1], f.im[1]), (0.0, -1.0));
        assert_eq!((f.re[2], f.im[2]), (-1.0, 0.0));
        assert_eq!((f.re[3], f.im[3]), (0.0, 1.0));
    }

    #[test]
    fn identity_norm_is_one() {
        let basis = Basis::new(BasisSpec::new(2, 5));
        let id = OperatorMatrix::identity(basis);
        for &p in &[-1.0, 0.0, 2.0] {
            assert_relative_eq!(operator_norm_estimate(&id, p, p).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn envelope_covers_samples() {
        let samples: Vec<(f64, f64)> = (0..20).map(|k| {
            let r = k as f64 * 0.4;
            (r, 1.0 + 0.3 * r * r + 0.01 * r.powi(4) + 0.05 * (r * 3.0).sin().abs())
        }).collect();
        let env = fit_envelope(&samples, 4, 0.0).unwrap();
        assert!(env.max_violation <= 1e-12);
        assert!(env.coeffs.iter().all(|c| *c >= 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let basis = Basis::new(BasisSpec::new(2, 3));
        let v = SobolevVector::new(basis.clone(), (0..basis.len()).map(|k| (k as f64).sin() / 7.0).collect(), -1.25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        save_coeff_csv(&v, &path).unwrap();
        let back = load_coeff_csv(&path).unwrap();
        assert_eq!(back.tag(), -1.25);
        assert_eq!(back.coeffs(), v.coeffs());
    }
}
