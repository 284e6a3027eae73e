//! The lifted equation `dY = A(Y)·dB + L(Y) dt` on truncated coefficients.
//!
//! `A_i φ = -sum_j <σ_ji, φ> ∂_j φ` and
//! `L φ = (1/2) sum_ij (S S^T)_ij ∂_i ∂_j φ - sum_i <b_i, φ> ∂_i φ` with
//! `S = (<σ_ij, φ>)`. Second derivatives are products of the truncated
//! first-derivative matrices, which keeps them consistent with the truncated
//! translation group `exp(-x·D)`.

use std::sync::Arc;


use crate::error::{Error, Result};
use crate::fields::CoeffField;
use crate::hermite::Basis;
use crate::sde::{BrownianPath, Coefficients, PathResult};
use crate::sobolev::{apply_derivative, translate, PolyEnvelope, SobolevVector, Translator};

/// Galerkin runs abort when `||Y_k||_{p-1}` exceeds this multiple of `||ξ||_{p-1}`.
pub const NORM_GUARD_FACTOR: f64 = 1e3;

fn derivatives(phi: &SobolevVector) -> Vec<Vec<f64>> {
    let basis = phi.basis();
    (0..basis.dim())
        .map(|axis| {
            let mut out = vec![0.0; basis.len()];
            apply_derivative(phi.coeffs(), basis, axis, &mut out);
            out
        })
        .collect()
}

fn check_axis(field: &CoeffField, i: usize) -> Result<()> {
    if i >= field.dim {
        return Err(Error::InvalidArgument(format!("axis {i} out of range for dimension {}", field.dim)));
    }
    Ok(())
}

fn check_tags(phi: &SobolevVector, field: &CoeffField) -> Result<()> {
    if (phi.tag() - field.p).abs() > 1e-12 {
        return Err(Error::TagMismatch {
            expected: field.p,
            found: phi.tag(),
        });
    }
    Ok(())
}

/// `A_i φ` with the pairings `<σ_ji, φ>` supplied (row-major `sigma`).
pub fn apply_a_frozen(phi: &SobolevVector, sigma: &[f64], i: usize) -> SobolevVector {
    let d = phi.basis().dim();
    let derivs = derivatives(phi);
    a_from_derivs(phi, &derivs, sigma, i, d)
}

fn a_from_derivs(phi: &SobolevVector, derivs: &[Vec<f64>], sigma: &[f64], i: usize, d: usize) -> SobolevVector {
    let mut out = vec![0.0; phi.len()];
    for j in 0..d {
        let c = sigma[j * d + i];
        if c != 0.0 {
            for (o, v) in out.iter_mut().zip(&derivs[j]) {
                *o -= c * v;
            }
        }
    }
    SobolevVector::new(phi.basis().clone(), out, phi.tag() - 0.5)
}

/// `A_i φ`, tagged `p - 1/2`.
pub fn apply_a(phi: &SobolevVector, field: &CoeffField, i: usize) -> Result<SobolevVector> {
    check_tags(phi, field)?;
    check_axis(field, i)?;
    let (sigma, _) = field.pair(phi)?;
    Ok(apply_a_frozen(phi, &sigma, i))
}

/// `L φ` with the pairings supplied.
pub fn apply_l_frozen(phi: &SobolevVector, sigma: &[f64], b: &[f64]) -> SobolevVector {
    let derivs = derivatives(phi);
    l_from_derivs(phi, &derivs, sigma, b)
}

fn l_from_derivs(phi: &SobolevVector, derivs: &[Vec<f64>], sigma: &[f64], b: &[f64]) -> SobolevVector {
    let basis = phi.basis();
    let d = basis.dim();
    let n = phi.len();
    let mut out = vec![0.0; n];
    let mut second = vec![0.0; n];
    for i in 0..d {
        for j in 0..d {
            let a: f64 = (0..d).map(|k| sigma[i * d + k] * sigma[j * d + k]).sum();
            if a == 0.0 {
                continue;
            }
            apply_derivative(&derivs[j], basis, i, &mut second);
            for (o, v) in out.iter_mut().zip(&second) {
                *o += 0.5 * a * v;
            }
        }
        if b[i] != 0.0 {
            for (o, v) in out.iter_mut().zip(&derivs[i]) {
                *o -= b[i] * v;
            }
        }
    }
    SobolevVector::new(basis.clone(), out, phi.tag() - 1.0)
}

/// `L φ`, tagged `p - 1`.
pub fn apply_l(phi: &SobolevVector, field: &CoeffField) -> Result<SobolevVector> {
    check_tags(phi, field)?;
    let (sigma, b) = field.pair(phi)?;
    Ok(apply_l_frozen(phi, &sigma, &b))
}

/// `Y_t = τ_{Z_t} ξ` at selected grid steps; `None` marks the absorbed state.
#[derive(Debug, Clone)]
pub struct LiftedPath {
    pub xi: SobolevVector,
    pub zpath: PathResult,
    pub realized: Vec<(usize, Option<SobolevVector>)>,
}

impl LiftedPath {
    pub fn at(&self, step: usize) -> Option<&SobolevVector> {
        self.realized
            .iter()
            .find(|(s, _)| *s == step)
            .and_then(|(_, v)| v.as_ref())
    }

    /// Steps whose realized value violates `||Y||_p <= P(|Z|) ||ξ||_p`.
    pub fn envelope_violations(&self, envelope: &PolyEnvelope, p: f64) -> Vec<usize> {
        let xi_norm = self.xi.norm(p);
        self.realized
            .iter()
            .filter_map(|(s, y)| {
                let y = y.as_ref()?;
                let z = self.zpath.state(*s)?;
                let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                (y.norm(p) > envelope.eval(r) * xi_norm * (1.0 + 1e-12)).then_some(*s)
            })
            .collect()
    }
}

/// Shifts one fixed vector by many points. In one dimension a single
/// spectral translator serves every shift.
#[derive(Debug, Clone)]
pub struct Lifter {
    xi: SobolevVector,
    spectral: Option<(Translator, crate::sobolev::ProjectedVector)>,
}

impl Lifter {
    pub fn new(xi: &SobolevVector) -> Result<Self> {
        let spectral = if xi.basis().dim() == 1 {
            let tr = Translator::one_dim(xi.basis())?;
            let proj = tr.project(xi);
            Some((tr, proj))
        } else {
            None
        };
        Ok(Lifter {
            xi: xi.clone(),
            spectral,
        })
    }

    pub fn xi(&self) -> &SobolevVector {
        &self.xi
    }

    /// `τ_z ξ`.
    pub fn shift(&self, z: &[f64]) -> Result<SobolevVector> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("shift {z:?}")));
        }
        if z.iter().all(|v| *v == 0.0) {
            return Ok(self.xi.clone());
        }
        match &self.spectral {
            Some((tr, proj)) => Ok(tr.shift_projected(proj, z[0])),
            None => translate(&self.xi, z),
        }
    }
}

/// Realize `Y_t = τ_{Z_t} ξ` at the requested grid steps.
pub fn lift(xi: &SobolevVector, zpath: &PathResult, steps: &[usize]) -> Result<LiftedPath> {
    let lifter = Lifter::new(xi)?;
    let realized = steps
        .iter()
        .map(|&s| {
            if s > zpath.steps() {
                return Err(Error::GridMismatch(format!("step {s} beyond the path ({} steps)", zpath.steps())));
            }
            let v = match zpath.state(s) {
                Some(z) if zpath.exit_step.is_none_or(|e| s < e) => Some(lifter.shift(z)?),
                _ => None,
            };
            Ok((s, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LiftedPath {
        xi: xi.clone(),
        zpath: zpath.clone(),
        realized,
    })
}

/// Euler scheme `Y_{k+1} = Y_k + sum_i A_i(Y_k) ΔB^i_k + L(Y_k) Δt`.
///
/// Returns every iterate, tagged `p - 1`.
pub fn galerkin_simulate(xi: &SobolevVector, field: &CoeffField, path: &BrownianPath, p: f64) -> Result<Vec<SobolevVector>> {
    check_tags(&xi.clone().with_tag(p), field)?;
    if path.dim != field.dim {
        return Err(Error::InvalidArgument("path dimension differs from field dimension".into()));
    }
    galerkin_run(xi, path, p, |y| field.pair(y))
}

/// Galerkin scheme with the pairings `<σ, Y>`, `<b, Y>` held at fixed values.
pub fn galerkin_simulate_frozen(xi: &SobolevVector, sigma: &[f64], b: &[f64], path: &BrownianPath, p: f64) -> Result<Vec<SobolevVector>> {
    let d = xi.basis().dim();
    if sigma.len() != d * d || b.len() != d || path.dim != d {
        return Err(Error::InvalidArgument("frozen coefficients have the wrong shape".into()));
    }
    galerkin_run(xi, path, p, |_| Ok((sigma.to_vec(), b.to_vec())))
}

fn galerkin_run<F>(xi: &SobolevVector, path: &BrownianPath, p: f64, pairings: F) -> Result<Vec<SobolevVector>>
where
    F: Fn(&SobolevVector) -> Result<(Vec<f64>, Vec<f64>)>,
{
    let d = xi.basis().dim();
    let limit = NORM_GUARD_FACTOR * xi.norm(p - 1.0);
    let mut y = xi.clone().with_tag(p);
    let mut out = Vec::with_capacity(path.steps + 1);
    out.push(y.clone().with_tag(p - 1.0));
    for k in 0..path.steps {
        let (sigma, b) = pairings(&y)?;
        let derivs = derivatives(&y);
        let mut next = y.coeffs().to_vec();
        for (i, &dbi) in path.increment(k).iter().enumerate() {
            if dbi == 0.0 {
                continue;
            }
            let a = a_from_derivs(&y, &derivs, &sigma, i, d);
            for (o, v) in next.iter_mut().zip(a.coeffs()) {
                *o += v * dbi;
            }
        }
        let l = l_from_derivs(&y, &derivs, &sigma, &b);
        for (o, v) in next.iter_mut().zip(l.coeffs()) {
            *o += v * path.dt;
        }
        y = SobolevVector::new(y.basis().clone(), next, p);
        let norm = y.norm(p - 1.0);
        if !norm.is_finite() || norm > limit {
            return Err(Error::NormGuard {
                step: k + 1,
                norm,
                limit,
            });
        }
        out.push(y.clone().with_tag(p - 1.0));
    }
    Ok(out)
}

/// How the `d[X^i, X^j]` increments of the Itô correction are formed.
#[derive(Clone, Copy)]
pub enum Covariation<'a> {
    /// `ΔX^i ΔX^j` from the path itself.
    Realized,
    /// `(σ σ^T)(X_k) Δt`, the quadratic covariation of the Itô process.
    Bracket(&'a dyn Coefficients),
}

/// Discrete Itô expansion of `τ_{X_t} ξ` along `zpath`:
///
/// `τ_{X_0} ξ - sum ∂_i τ_{X_s} ξ ΔX^i + (1/2) sum ∂_i ∂_j τ_{X_s} ξ Δ[X^i, X^j]`
///
/// minus the exact translate, returned as `||·||_{p-1}` at every valid step.
pub fn ito_residual(xi: &SobolevVector, zpath: &PathResult, p: f64, covariation: Covariation<'_>) -> Result<Vec<f64>> {
    let d = zpath.dim;
    let basis: &Arc<Basis> = xi.basis();
    if basis.dim() != d {
        return Err(Error::InvalidArgument("path and vector dimensions differ".into()));
    }
    let lifter = Lifter::new(xi)?;
    let last = zpath.exit_step.unwrap_or(zpath.steps());
    let z0 = zpath.state(0).ok_or_else(|| Error::InvalidArgument("empty path".into()))?;
    let mut running = lifter.shift(z0)?.into_coeffs();
    let mut residuals = Vec::with_capacity(last + 1);
    residuals.push(0.0);
    let mut drift = vec![0.0; d];
    let mut diff = vec![0.0; d * d];
    let mut first = vec![vec![0.0; basis.len()]; d];
    let mut second = vec![0.0; basis.len()];
    for k in 0..last {
        let zk = zpath.state(k).expect("valid before exit");
        let zn = zpath.state(k + 1).expect("valid up to exit");
        let y = lifter.shift(zk)?;
        for (axis, slot) in first.iter_mut().enumerate() {
            apply_derivative(y.coeffs(), basis, axis, slot);
        }
        let dz: Vec<f64> = zn.iter().zip(zk).map(|(a, b)| a - b).collect();
        for i in 0..d {
            for (r, v) in running.iter_mut().zip(&first[i]) {
                *r -= v * dz[i];
            }
        }
        let bracket: Vec<f64> = match covariation {
            Covariation::Realized => (0..d * d).map(|ij| dz[ij / d] * dz[ij % d]).collect(),
            Covariation::Bracket(c) => {
                c.eval(zk, &mut drift, &mut diff)?;
                (0..d * d)
                    .map(|ij| {
                        let (i, j) = (ij / d, ij % d);
                        (0..d).map(|m| diff[i * d + m] * diff[j * d + m]).sum::<f64>() * zpath.dt
                    })
                    .collect()
            }
        };
        for i in 0..d {
            for j in 0..d {
                let w = bracket[i * d + j];
                if w == 0.0 {
                    continue;
                }
                apply_derivative(&first[j], basis, i, &mut second);
                for (r, v) in running.iter_mut().zip(&second) {
                    *r += 0.5 * w * v;
                }
            }
        }
        let exact = lifter.shift(zn)?;
        let diffv: Vec<f64> = running.iter().zip(exact.coeffs()).map(|(a, b)| a - b).collect();
        residuals.push(SobolevVector::new(basis.clone(), diffv, p - 1.0).norm(p - 1.0));
    }
    Ok(residuals)
}

/// `(2 <φ, Lφ>_{p-1} + sum_i ||A_i φ||^2_{p-1}) / ||φ||^2_{p-1}` with the
/// pairings frozen at the supplied values.
///
/// Evaluated in commutator form. With `W = diag((2|n|+d)^{2(p-1)})` and the
/// truncated `D_j` skew-symmetric, the numerator equals
/// `sum_jk a_jk <[W, D_j] φ, D_k φ> - sum_i b_i <[W, D_i] φ, φ>` where
/// `a = S S^T` and `([W, D] φ)_n = w_n (Dφ)_n - (D W φ)_n`. The two large
/// terms of the direct form cancel exactly, so this avoids the cancellation.
pub fn monotonicity_gap_frozen(phi: &SobolevVector, sigma: &[f64], b: &[f64], p: f64) -> Result<f64> {
    let q = p - 1.0;
    let denom = phi.norm_sq(q);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::InvalidArgument("monotonicity gap of a zero vector".into()));
    }
    let basis = phi.basis();
    let d = basis.dim();
    let w: Vec<f64> = (0..basis.len()).map(|r| basis.weight_base(r).powf(2.0 * q)).collect();
    let wphi: Vec<f64> = phi.coeffs().iter().zip(&w).map(|(a, b)| a * b).collect();
    let derivs = derivatives(phi);
    let mut dw = vec![0.0; basis.len()];
    let mut num = 0.0;
    for j in 0..d {
        apply_derivative(&wphi, basis, j, &mut dw);
        let comm: Vec<f64> = (0..basis.len()).map(|n| w[n] * derivs[j][n] - dw[n]).collect();
        for k in 0..d {
            let a: f64 = (0..d).map(|m| sigma[j * d + m] * sigma[k * d + m]).sum();
            if a != 0.0 {
                num += a * comm.iter().zip(&derivs[k]).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        if b[j] != 0.0 {
            num -= b[j] * comm.iter().zip(phi.coeffs()).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    Ok(num / denom)
}

/// The same gap evaluated term by term from `A_i φ` and `L φ`.
pub fn monotonicity_gap_direct(phi: &SobolevVector, sigma: &[f64], b: &[f64], p: f64) -> Result<f64> {
    let q = p - 1.0;
    let denom = phi.norm_sq(q);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::InvalidArgument("monotonicity gap of a zero vector".into()));
    }
    let d = phi.basis().dim();
    let derivs = derivatives(phi);
    let l = l_from_derivs(phi, &derivs, sigma, b);
    let mut num = 2.0 * phi.inner(&l, q)?;
    for i in 0..d {
        num += a_from_derivs(phi, &derivs, sigma, i, d).norm_sq(q);
    }
    Ok(num / denom)
}

/// Monotonicity gap with the state-dependent pairings `<σ, φ>`, `<b, φ>`.
pub fn monotonicity_gap(phi: &SobolevVector, field: &CoeffField, p: f64) -> Result<f64> {
    let (sigma, b) = field.pair(phi)?;
    monotonicity_gap_frozen(phi, &sigma, &b, p)
}
