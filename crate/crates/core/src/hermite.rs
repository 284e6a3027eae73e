//! Hermite functions, multi-index bookkeeping and Gauss-Hermite quadrature.
//!
//! The normalized Hermite functions
//!
//! ```text
//! h_n(x) = (2^n n! sqrt(pi))^{-1/2} H_n(x) exp(-x^2 / 2)
//! ```
//!
//! form an orthonormal basis of `L^2(R)`; in `d` dimensions the basis is the
//! tensor product `h_n(x) = h_{n_1}(x_1) ... h_{n_d}(x_d)`. Everything here is
//! evaluated with the normalized three-term recurrence, never through the raw
//! polynomials, so degrees in the hundreds stay in range.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sobolev::SobolevVector;

/// A multi-index `n = (n_1, ..., n_d)` of non-negative integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total degree `|n|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    /// `n + e_axis`.
    pub fn raised(&self, axis: usize) -> MultiIndex {
        let mut out = self.0.clone();
        out[axis] += 1;
        MultiIndex(out)
    }

    /// `n - e_axis`, or `None` when the entry would go negative (the
    /// corresponding Hermite function is identically zero).
    pub fn lowered(&self, axis: usize) -> Option<MultiIndex> {
        if self.0[axis] == 0 {
            return None;
        }
        let mut out = self.0.clone();
        out[axis] -= 1;
        Some(MultiIndex(out))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, n) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, ")")
    }
}

/// Truncation of the Hermite basis: dimension `d` and total-degree cutoff `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisSpec {
    pub dim: usize,
    pub max_degree: u32,
}

impl BasisSpec {
    pub fn new(dim: usize, max_degree: u32) -> Self {
        BasisSpec { dim, max_degree }
    }

    /// `binomial(N + d, d)`.
    pub fn size(&self) -> usize {
        binomial(self.max_degree as usize + self.dim, self.dim)
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * (n - j) as u128 / (j + 1) as u128;
    }
    acc as usize
}

/// All multi-indices with `|n| = k`, lexicographically descending within the
/// shell (so `(2,0), (1,1), (0,2)` for `d = 2, k = 2`).
pub fn shell(dim: usize, k: u32) -> Vec<MultiIndex> {
    fn rec(dim: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if prefix.len() + 1 == dim {
            prefix.push(remaining);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for first in (0..=remaining).rev() {
            prefix.push(first);
            rec(dim, remaining - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(binomial(k as usize + dim - 1, dim - 1));
    rec(dim, k, &mut Vec::with_capacity(dim), &mut out);
    out
}

/// Every multi-index with `|n| <= N`, in graded order.
pub fn enumerate_basis(spec: BasisSpec) -> Vec<MultiIndex> {
    (0..=spec.max_degree).flat_map(|k| shell(spec.dim, k)).collect()
}

/// An enumerated basis with rank lookup and neighbour tables.
///
/// `raise[axis][r]` is the rank of `n + e_axis` (if it survives the
/// truncation) and `lower[axis][r]` the rank of `n - e_axis`.
#[derive(Debug)]
pub struct Basis {
    spec: BasisSpec,
    indices: Vec<MultiIndex>,
    orders: Vec<u32>,
    lookup: HashMap<MultiIndex, usize>,
    raise: Vec<Vec<Option<usize>>>,
    lower: Vec<Vec<Option<usize>>>,
}

impl Basis {
    pub fn new(spec: BasisSpec) -> Arc<Basis> {
        assert!(spec.dim >= 1, "basis dimension must be at least 1");
        let indices = enumerate_basis(spec);
        let lookup: HashMap<MultiIndex, usize> = indices
            .iter()
            .enumerate()
            .map(|(r, n)| (n.clone(), r))
            .collect();
        let orders = indices.iter().map(MultiIndex::order).collect();
        let mut raise = vec![vec![None; indices.len()]; spec.dim];
        let mut lower = vec![vec![None; indices.len()]; spec.dim];
        for (r, n) in indices.iter().enumerate() {
            for axis in 0..spec.dim {
                raise[axis][r] = lookup.get(&n.raised(axis)).copied();
                lower[axis][r] = n.lowered(axis).and_then(|m| lookup.get(&m).copied());
            }
        }
        Arc::new(Basis {
            spec,
            indices,
            orders,
            lookup,
            raise,
            lower,
        })
    }

    pub fn one_dim(max_degree: u32) -> Arc<Basis> {
        Basis::new(BasisSpec::new(1, max_degree))
    }

    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn max_degree(&self) -> u32 {
        self.spec.max_degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn index(&self, rank: usize) -> &MultiIndex {
        &self.indices[rank]
    }

    /// `|n|` of the index at `rank`.
    pub fn order(&self, rank: usize) -> u32 {
        self.orders[rank]
    }

    pub fn rank_of(&self, n: &MultiIndex) -> Option<usize> {
        self.lookup.get(n).copied()
    }

    pub fn raised(&self, axis: usize, rank: usize) -> Option<usize> {
        self.raise[axis][rank]
    }

    pub fn lowered(&self, axis: usize, rank: usize) -> Option<usize> {
        self.lower[axis][rank]
    }

    /// Sobolev weight `(2|n| + d)` of the index at `rank`.
    pub fn weight_base(&self, rank: usize) -> f64 {
        (2 * self.orders[rank] as usize + self.spec.dim) as f64
    }

    /// Evaluate every basis function at `x` (length `d`).
    pub fn eval_all(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point has {} coordinates, basis dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        let tables = x
            .iter()
            .map(|&xi| hermite_functions(xi, self.max_degree() as usize))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .indices
            .iter()
            .map(|n| {
                n.entries()
                    .iter()
                    .zip(&tables)
                    .map(|(&k, table)| table[k as usize])
                    .product()
            })
            .collect())
    }
}

const RESCALE_ABOVE: f64 = 1e200;

/// `h_0(x), ..., h_{nmax}(x)` for a scalar argument.
///
/// The recurrence runs on `h_k(x) exp(x^2/2)` with running log-scale
/// bookkeeping, so neither factor over- or underflows on its own.
pub fn hermite_functions(x: f64, nmax: usize) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("hermite argument {x}")));
    }
    let mut scaled = Vec::with_capacity(nmax + 1);
    let mut log_scale = Vec::with_capacity(nmax + 1);
    let mut scale = 0.0_f64;
    let mut prev = 0.0_f64;
    let mut cur = PI.powf(-0.25);
    scaled.push(cur);
    log_scale.push(scale);
    for k in 0..nmax {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_ABOVE {
            prev /= RESCALE_ABOVE;
            cur /= RESCALE_ABOVE;
            scale += RESCALE_ABOVE.ln();
        }
        scaled.push(cur);
        log_scale.push(scale);
    }
    let gauss = -0.5 * x * x;
    Ok(scaled
        .into_iter()
        .zip(log_scale)
        .map(|(v, s)| if v == 0.0 { 0.0 } else { v * (gauss + s).exp() })
        .collect())
}

/// `h_n(x) = prod_i h_{n_i}(x_i)`.
pub fn hermite_eval(n: &MultiIndex, x: &[f64]) -> Result<f64> {
    if n.dim() != x.len() {
        return Err(Error::InvalidArgument(format!(
            "multi-index has {} entries, point has {}",
            n.dim(),
            x.len()
        )));
    }
    let mut acc = 1.0;
    for (&k, &xi) in n.entries().iter().zip(x) {
        acc *= hermite_functions(xi, k as usize)?[k as usize];
    }
    Ok(acc)
}

/// One-dimensional Gauss-Hermite rule for the weight `exp(-x^2)`.
///
/// `corrected_weights[i] = weights[i] * exp(nodes[i]^2)` are stored directly
/// (they equal `1 / (m h_{m-1}(x_i)^2)`), so integrals of functions that are
/// not of the form `poly * exp(-x^2)` can be taken without multiplying tiny
/// weights by huge exponentials.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub corrected_weights: Vec<f64>,
}

impl Quadrature {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `sum_i w_i q(x_i)`, approximating `int q(x) exp(-x^2) dx`.
    pub fn integrate_weighted<F: Fn(f64) -> f64>(&self, q: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * q(x))
            .sum()
    }

    /// `sum_i W_i f(x_i)`, approximating `int f(x) dx`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.corrected_weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Tensor-product points and corrected weights in `dim` dimensions.
    pub fn tensor(&self, dim: usize) -> TensorQuadrature {
        let m = self.order();
        let total = m.pow(dim as u32);
        let mut points = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        let mut digits = vec![0usize; dim];
        for _ in 0..total {
            let mut w = 1.0;
            for &k in &digits {
                points.push(self.nodes[k]);
                w *= self.corrected_weights[k];
            }
            weights.push(w);
            for slot in digits.iter_mut().rev() {
                *slot += 1;
                if *slot < m {
                    break;
                }
                *slot = 0;
            }
        }
        TensorQuadrature {
            dim,
            points,
            weights,
        }
    }
}

/// Flattened tensor-product rule: `points` holds `dim` coordinates per node.
#[derive(Debug, Clone)]
pub struct TensorQuadrature {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TensorQuadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }
}

/// Gauss-Hermite nodes and weights of order `m` (exact for polynomials of
/// degree `<= 2m - 1` against `exp(-x^2)`).
///
/// Nodes come from the Golub-Welsch eigenproblem and are polished by Newton
/// steps on `h_m`; weights use the closed form `1 / (m h_{m-1}(x)^2)`.
pub fn gauss_hermite(m: usize) -> Result<Quadrature> {
    if m == 0 {
        return Err(Error::InvalidArgument("quadrature order must be >= 1".into()));
    }
    let mut jacobi = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eigen = jacobi
        .try_symmetric_eigen(1e-15, 10_000)
        .ok_or_else(|| Error::SolverFailure(format!("Golub-Welsch eigenproblem, m = {m}")))?;
    let mut nodes: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let h = hermite_functions(*x, m)?;
            let deriv = (2.0 * m as f64).sqrt() * h[m - 1] - *x * h[m];
            if deriv == 0.0 {
                break;
            }
            let step = h[m] / deriv;
            *x -= step;
            if step.abs() < 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // the rule is symmetric; enforce it exactly so parity arguments hold
    for k in 0..m / 2 {
        let a = 0.5 * (nodes[m - 1 - k] - nodes[k]);
        nodes[k] = -a;
        nodes[m - 1 - k] = a;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }

    let mut corrected = Vec::with_capacity(m);
    for &x in &nodes {
        let h = hermite_functions(x, m - 1)?;
        let hm1 = h[m - 1];
        if hm1 == 0.0 || !hm1.is_finite() {
            return Err(Error::SolverFailure(format!(
                "degenerate weight at node {x}, m = {m}"
            )));
        }
        corrected.push(1.0 / (m as f64 * hm1 * hm1));
    }
    for k in 0..m / 2 {
        let w = 0.5 * (corrected[k] + corrected[m - 1 - k]);
        corrected[k] = w;
        corrected[m - 1 - k] = w;
    }
    let weights = nodes
        .iter()
        .zip(&corrected)
        .map(|(&x, &w)| w * (-x * x).exp())
        .collect();
    Ok(Quadrature {
        nodes,
        weights,
        corrected_weights: corrected,
    })
}

/// Default quadrature order for a basis of degree `N`: `2N + 16` nodes per axis.
pub fn default_quadrature_order(max_degree: u32) -> usize {
    2 * max_degree as usize + 16
}

/// Hermite coefficients `y_n = int f h_n` by tensor Gauss-Hermite quadrature.
pub fn expand_function<F>(f: F, basis: &Arc<Basis>, quad: &Quadrature, p: f64) -> Result<SobolevVector>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = basis.dim();
    let nmax = basis.max_degree() as usize;
    if quad.order() < nmax + 1 {
        return Err(Error::InvalidArgument(format!(
            "quadrature order {} below N + 1 = {}",
            quad.order(),
            nmax + 1
        )));
    }
    let tables: Vec<Vec<f64>> = quad
        .nodes
        .iter()
        .map(|&x| hermite_functions(x, nmax))
        .collect::<Result<_>>()?;
    let tq = quad.tensor(dim);
    let m = quad.order();
    let mut coeffs = vec![0.0; basis.len()];
    let mut digits = vec![0usize; dim];
    for k in 0..tq.len() {
        let fx = f(tq.point(k));
        let wf = tq.weights[k] * fx;
        if wf != 0.0 {
            for (r, n) in basis.indices().iter().enumerate() {
                let mut h = 1.0;
                for (axis, &nk) in n.entries().iter().enumerate() {
                    h *= tables[digits[axis]][nk as usize];
                }
                coeffs[r] += wf * h;
            }
        }
        for slot in digits.iter_mut().rev() {
            *slot += 1;
            if *slot < m {
                break;
            }
            *slot = 0;
        }
    }
    if let Some(r) = coeffs.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFiniteCoefficient {
            index: basis.index(r).0.clone(),
        });
    }
    Ok(SobolevVector::new(basis.clone(), coeffs, p))
}

/// Coefficients of the point evaluation `delta_x`: entry `n` is `h_n(x)`.
pub fn delta_coeffs(x: &[f64], basis: &Arc<Basis>, p: f64) -> Result<SobolevVector> {
    let coeffs = basis.eval_all(x)?;
    Ok(SobolevVector::new(basis.clone(), coeffs, p))
}

/// `int h_k(t) dt` for `k = 0..=nmax` in one dimension.
///
/// Uses `hat(h_k) = (-i)^k h_k`, so `int h_k = sqrt(2 pi) (-i)^k h_k(0)`,
/// which vanishes for odd `k`.
pub fn hermite_integrals(nmax: usize) -> Vec<f64> {
    let at_zero = hermite_functions(0.0, nmax).expect("finite argument");
    let root = (2.0 * PI).sqrt();
    at_zero
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            if k % 2 == 1 {
                0.0
            } else if (k / 2) % 2 == 0 {
                root * h
            } else {
                -root * h
            }
        })
        .collect()
}

/// `<t^power, h_k>` for `k = 0..=nmax` in one dimension, via repeated
/// application of the multiplication recurrence to the integrals of `h_k`.
pub fn monomial_moments_1d(power: u32, nmax: usize) -> Vec<f64> {
    let ext = nmax + power as usize;
    let mut current = hermite_integrals(ext);
    for _ in 0..power {
        // <t^{j+1}, h_k> = <t^j, x h_k> = sqrt((k+1)/2) <t^j,h_{k+1}> + sqrt(k/2) <t^j,h_{k-1}>
        let mut next = vec![0.0; current.len()];
        for k in 0..current.len() {
            let mut acc = 0.0;
            if k + 1 < current.len() {
                acc += ((k as f64 + 1.0) / 2.0).sqrt() * current[k + 1];
            }
            if k >= 1 {
                acc += (k as f64 / 2.0).sqrt() * current[k - 1];
            }
            next[k] = acc;
        }
        current = next;
    }
    current.truncate(nmax + 1);
    current
}

/// Coefficients of the polynomial `prod_i x_i^{powers_i}` as a tempered
/// distribution, tagged with regularity `p` (negative for these).
pub fn monomial_coeffs(powers: &[u32], basis: &Arc<Basis>, p: f64) -> Result<SobolevVector> {
    if powers.len() != basis.dim() {
        return Err(Error::InvalidArgument(format!(
            "{} exponents for a {}-dimensional basis",
            powers.len(),
            basis.dim()
        )));
    }
    let nmax = basis.max_degree() as usize;
    let tables: Vec<Vec<f64>> = powers
        .iter()
        .map(|&k| monomial_moments_1d(k, nmax))
        .collect();
    let coeffs = basis
        .indices()
        .iter()
        .map(|n| {
            n.entries()
                .iter()
                .zip(&tables)
                .map(|(&k, t)| t[k as usize])
                .product()
        })
        .collect();
    Ok(SobolevVector::new(basis.clone(), coeffs, p))
}

/// Threshold above which `t^k` belongs to `S_{-p}` in one dimension:
/// `p > k/2 + 1/4`.
pub fn monomial_tag_threshold(power: u32) -> f64 {
    power as f64 / 2.0 + 0.25
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn odd_function_vanishes_at_origin() {
        let v = hermite_eval(&MultiIndex::new(vec![1]), &[0.0]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn ground_state_at_origin() {
        let v = hermite_eval(&MultiIndex::new(vec![0]), &[0.0]).unwrap();
        assert_relative_eq!(v, 0.751_125_544_464_942_5, epsilon = 1e-15);
        // oracle: a^2 int exp(-x^2) = 1 via quadrature
        let q = gauss_hermite(8).unwrap();
        let a2 = 1.0 / q.integrate_weighted(|_| 1.0);
        assert_relative_eq!(v, a2.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn non_finite_argument_is_rejected() {
        assert!(hermite_functions(f64::NAN, 3).is_err());
        assert!(hermite_eval(&MultiIndex::new(vec![2]), &[f64::INFINITY]).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let d1 = enumerate_basis(BasisSpec::new(1, 5));
        assert_eq!(d1.len(), 6);
        assert!(d1.iter().enumerate().all(|(k, n)| n.0 == vec![k as u32]));
        assert_eq!(enumerate_basis(BasisSpec::new(2, 2)).len(), 6);
        assert_eq!(shell(2, 3).len(), 4);
        for d in 1..5 {
            for k in 0..8u32 {
                assert_eq!(shell(d, k).len(), binomial(k as usize + d - 1, d - 1));
            }
            assert_eq!(BasisSpec::new(d, 7).size(), enumerate_basis(BasisSpec::new(d, 7)).len());
        }
    }

    #[test]
    fn enumeration_is_graded_and_round_trips() {
        let basis = Basis::new(BasisSpec::new(3, 6));
        let mut last = 0;
        for (r, n) in basis.indices().iter().enumerate() {
            assert!(n.order() >= last);
            last = n.order();
            assert_eq!(basis.rank_of(n), Some(r));
        }
        assert_eq!(basis.index(0), &MultiIndex::zero(3));
    }

    #[test]
    fn lowering_below_zero_is_none() {
        let n = MultiIndex::new(vec![0, 2]);
        assert!(n.lowered(0).is_none());
        assert_eq!(n.lowered(1), Some(MultiIndex::new(vec![0, 1])));
        let basis = Basis::new(BasisSpec::new(2, 2));
        let top = basis.rank_of(&MultiIndex::new(vec![0, 2])).unwrap();
        assert!(basis.raised(1, top).is_none());
    }

    #[test]
    fn quadrature_small_orders() {
        let q1 = gauss_hermite(1).unwrap();
        assert_eq!(q1.nodes, vec![0.0]);
        assert_relative_eq!(q1.weights[0], PI.sqrt(), epsilon = 1e-14);

        let q2 = gauss_hermite(2).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert_relative_eq!(q2.nodes[0], -r, epsilon = 1e-14);
        assert_relative_eq!(q2.nodes[1], r, epsilon = 1e-14);
        for w in &q2.weights {
            assert_relative_eq!(*w, PI.sqrt() / 2.0, epsilon = 1e-14);
        }
        // oracle: exactness on x^0 and x^2
        assert_relative_eq!(q2.integrate_weighted(|x| x * x), PI.sqrt() / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn quadrature_weights_sum_and_monomial_exactness() {
        for &m in &[5usize, 17, 64, 120] {
            let q = gauss_hermite(m).unwrap();
            let total: f64 = q.weights.iter().sum();
            assert!((total - PI.sqrt()).abs() <= 1e-12, "m = {m}: {total}");
            // int x^{2j} e^{-x^2} = Gamma(j + 1/2)
            let mut exact = PI.sqrt();
            for j in 0..m {
                let got = q.integrate_weighted(|x| x.powi(2 * j as i32));
                assert!(
                    ((got - exact) / exact).abs() <= 1e-10,
                    "m = {m}, j = {j}: {got} vs {exact}"
                );
                exact *= j as f64 + 0.5;
                if 2 * j + 1 < 2 * m {
                    assert!(q.integrate_weighted(|x| x.powi(2 * j as i32 + 1)).abs() < 1e-9 * exact.max(1.0));
                }
            }
        }
    }

    #[test]
    fn moments_of_constant_match_quadrature() {
        // int x^k h_n(x) dx against the recurrence route, low degrees
        let q = gauss_hermite(80).unwrap();
        for power in 0..4u32 {
            let rec = monomial_moments_1d(power, 30);
            for (n, &value) in rec.iter().enumerate() {
                let direct = q.integrate(|x| x.powi(power as i32) * hermite_functions(x, n).unwrap()[n]);
                assert!((value - direct).abs() < 1e-10, "power {power}, n {n}: {value} vs {direct}");
            }
        }
    }

    #[test]
    fn large_degree_stays_finite_and_bounded() {
        for &x in &[-10.0, -3.3, 0.0, 0.7, 9.99, 45.0] {
            let h = hermite_functions(x, 400).unwrap();
            assert!(h.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
    }
}
