//! Reusable experiment drivers: refinement ladders and property checks
//! shared by the command line and the test suites.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::CoeffField;
use crate::hermite::{gauss_hermite, hermite_functions, monomial_moments_1d, Basis, BasisSpec};
use crate::sde::{
    fit_picard_envelope, picard_solve, simulate_em, stream_rng, BrownianPath, InitialLaw, PicardEnvelope,
    SdeProblem,
};
use crate::sobolev::{derivative_matrix, multiplication_matrix, translation_matrix, SobolevVector, TranslationMethod};
use crate::spde::{galerkin_simulate, ito_residual, lift, monotonicity_gap, Covariation};
use crate::stats::{loglog_slope, mean};

/// Max `|<h_n, h_m> - δ_nm|` over the whole basis, by tensor Gauss-Hermite.
pub fn orthonormality_error(dim: usize, max_degree: u32) -> Result<f64> {
    let basis = Basis::new(BasisSpec::new(dim, max_degree));
    let quad = gauss_hermite(max_degree as usize + 2)?.tensor(dim);
    let n = basis.len();
    let values = (0..quad.len())
        .map(|k| basis.eval_all(quad.point(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0_f64;
    for a in 0..n {
        for b in a..n {
            let g: f64 = values.iter().zip(&quad.weights).map(|(v, w)| w * v[a] * v[b]).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    Ok(worst)
}

/// Errors of the matrix-applied derivative and multiplication against
/// pointwise oracles on a grid, for `h_n` with `n <= nmax`.
///
/// The derivative oracle is a fourth-order central difference with step
/// `h`; the multiplication oracle is `x h_n(x)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RecurrenceErrors {
    pub derivative: f64,
    pub multiplication: f64,
}

pub fn recurrence_errors(nmax: u32, grid: &[f64], h: f64) -> Result<RecurrenceErrors> {
    let basis = Basis::one_dim(nmax + 1);
    let d = derivative_matrix(&basis, 0)?;
    let m = multiplication_matrix(&basis, 0)?;
    let top = nmax as usize + 1;
    let mut worst_d = 0.0_f64;
    let mut worst_m = 0.0_f64;
    for &x in grid {
        let hx = hermite_functions(x, top)?;
        let f = |t: f64| hermite_functions(t, top);
        let (p2, p1, m1, m2) = (f(x + 2.0 * h)?, f(x + h)?, f(x - h)?, f(x - 2.0 * h)?);
        for n in 0..=nmax as usize {
            let fd = (-p2[n] + 8.0 * p1[n] - 8.0 * m1[n] + m2[n]) / (12.0 * h);
            let md: f64 = (0..=top).map(|k| d.matrix[(k, n)] * hx[k]).sum();
            let mm: f64 = (0..=top).map(|k| m.matrix[(k, n)] * hx[k]).sum();
            worst_d = worst_d.max((md - fd).abs());
            worst_m = worst_m.max((mm - x * hx[n]).abs());
        }
    }
    Ok(RecurrenceErrors {
        derivative: worst_d,
        multiplication: worst_m,
    })
}

/// Exp-method against quadrature-method translation matrices.
#[derive(Debug, Clone, Serialize)]
pub struct TranslationCrossCheck {
    pub max_degree: u32,
    pub interior: u32,
    /// `(x, max interior |T_exp - T_quad|)`.
    pub differences: Vec<(f64, f64)>,
    /// `max_x ||T_exp^T T_exp - I||_max`.
    pub orthogonality: f64,
}

impl TranslationCrossCheck {
    pub fn worst(&self) -> f64 {
        self.differences.iter().map(|d| d.1).fold(0.0, f64::max)
    }
}

pub fn translation_cross_check(max_degree: u32, interior: u32, xs: &[f64]) -> Result<TranslationCrossCheck> {
    let basis = Basis::one_dim(max_degree);
    let mut differences = Vec::with_capacity(xs.len());
    let mut orthogonality = 0.0_f64;
    for &x in xs {
        let te = translation_matrix(&[x], &basis, TranslationMethod::Exp)?;
        let tq = translation_matrix(&[x], &basis, TranslationMethod::Quadrature)?;
        let diff = OperatorDiff(&te.matrix, &tq.matrix).interior_max(&basis, interior);
        differences.push((x, diff));
        let gram = te.matrix.transpose() * &te.matrix;
        let n = basis.len();
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                orthogonality = orthogonality.max((gram[(i, j)] - target).abs());
            }
        }
    }
    Ok(TranslationCrossCheck {
        max_degree,
        interior,
        differences,
        orthogonality,
    })
}

struct OperatorDiff<'a>(&'a nalgebra::DMatrix<f64>, &'a nalgebra::DMatrix<f64>);

impl OperatorDiff<'_> {
    fn interior_max(&self, basis: &Basis, degree: u32) -> f64 {
        let n = basis.len();
        let mut worst = 0.0_f64;
        for i in (0..n).filter(|&i| basis.order(i) <= degree) {
            for j in (0..n).filter(|&j| basis.order(j) <= degree) {
                worst = worst.max((self.0[(i, j)] - self.1[(i, j)]).abs());
            }
        }
        worst
    }
}

/// One rung of a refinement ladder.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Rung {
    pub dt: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ladder {
    pub rungs: Vec<Rung>,
    /// Least-squares slope of `ln value` against `ln dt`.
    pub slope: f64,
    /// Sample paths left out because `Z` left the working ball.
    pub excluded: usize,
}

impl Ladder {
    fn new(rungs: Vec<Rung>) -> Self {
        let dts: Vec<f64> = rungs.iter().map(|r| r.dt).collect();
        let vals: Vec<f64> = rungs.iter().map(|r| r.value).collect();
        Ladder {
            slope: loglog_slope(&dts, &vals),
            rungs,
            excluded: 0,
        }
    }

    /// True when each finer rung has a strictly smaller value.
    pub fn strictly_decreasing(&self) -> bool {
        self.rungs.windows(2).all(|w| w[1].value < w[0].value)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dt,value")?;
        for r in &self.rungs {
            writeln!(w, "{:.17e},{:.17e}", r.dt, r.value)?;
        }
        Ok(())
    }
}

/// Settings shared by the path ladders.
#[derive(Debug, Clone)]
pub struct LadderConfig {
    pub dt: f64,
    pub halvings: usize,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl LadderConfig {
    fn fine_steps(&self) -> Result<(usize, f64)> {
        let coarse = (self.horizon / self.dt).round();
        if coarse < 1.0 || (coarse * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::GridMismatch(format!(
                "horizon {} is not a multiple of {}",
                self.horizon, self.dt
            )));
        }
        let factor = 1usize << self.halvings;
        Ok((coarse as usize * factor, self.dt / factor as f64))
    }
}

/// RMS relative `S_{p-1}` distance at the horizon between the lift of the
/// EM path and the Galerkin trajectory, on a ladder of `halvings + 1` step
/// sizes sharing one Brownian path per sample.
///
/// `Z` solves the SDE with the paired coefficients `σ̄(·;ξ), b̄(·;ξ)`; paths
/// where `|Z|` reaches `exit_level` on any rung are excluded and counted.
pub fn correspondence_ladder(
    field: &CoeffField,
    xi: &SobolevVector,
    z0: &[f64],
    exit_level: f64,
    cfg: &LadderConfig,
) -> Result<Ladder> {
    let problem = SdeProblem::paired(field, xi, exit_level)?;
    let (fine_steps, fine_dt) = cfg.fine_steps()?;
    let per_path: Vec<Result<Option<Vec<(f64, f64)>>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let fine = BrownianPath::generate(cfg.seed, i as u64, field.dim, fine_dt, fine_steps);
            let mut rungs = Vec::with_capacity(cfg.halvings + 1);
            for h in 0..=cfg.halvings {
                let path = fine.coarsen(1 << (cfg.halvings - h))?;
                let z = simulate_em(&problem, &path, z0)?;
                if z.exploded {
                    return Ok(None);
                }
                rungs.push(path_distance(xi, field, &path, &z)?);
            }
            Ok(Some(rungs))
        })
        .collect();
    let mut err = vec![0.0; cfg.halvings + 1];
    let mut scale = vec![0.0; cfg.halvings + 1];
    let mut excluded = 0;
    for r in per_path {
        let Some(rungs) = r? else {
            excluded += 1;
            continue;
        };
        for (h, (e, s)) in rungs.into_iter().enumerate() {
            err[h] += e;
            scale[h] += s;
        }
    }
    let rungs = (0..=cfg.halvings)
        .map(|h| Rung {
            dt: cfg.dt / (1u64 << h) as f64,
            value: if scale[h] > 0.0 { (err[h] / scale[h]).sqrt() } else { err[h].sqrt() },
        })
        .collect();
    let mut ladder = Ladder::new(rungs);
    ladder.excluded = excluded;
    Ok(ladder)
}

/// Squared terminal distance between lift and Galerkin, and the squared
/// norm of the lift.
fn path_distance(xi: &SobolevVector, field: &CoeffField, path: &BrownianPath, z: &crate::sde::PathResult) -> Result<(f64, f64)> {
    let p = field.p;
    let lifted = lift(xi, z, &[path.steps])?;
    let yl = lifted
        .at(path.steps)
        .ok_or_else(|| Error::InvalidArgument("lift is absorbed".into()))?
        .clone()
        .with_tag(p - 1.0);
    let yg = galerkin_simulate(xi, field, path, p)?;
    let yg = yg.last().expect("initial state");
    Ok((yl.sub(yg)?.norm_sq(p - 1.0), yl.norm_sq(p - 1.0)))
}

/// How the Itô ladder forms the covariation increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariationMode {
    Bracket,
    Realized,
}

/// Mean over paths of `max_t ||residual_t||_{p-1}` on a ladder of step
/// sizes sharing one Brownian path per sample.
pub fn ito_ladder(
    problem: &SdeProblem,
    xi: &SobolevVector,
    p: f64,
    z0: &[f64],
    mode: CovariationMode,
    cfg: &LadderConfig,
) -> Result<Ladder> {
    let (fine_steps, fine_dt) = cfg.fine_steps()?;
    let per_path: Vec<Result<Vec<f64>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let fine = BrownianPath::generate(cfg.seed, i as u64, problem.dim(), fine_dt, fine_steps);
            (0..=cfg.halvings)
                .map(|h| {
                    let path = fine.coarsen(1 << (cfg.halvings - h))?;
                    let z = simulate_em(problem, &path, z0)?;
                    let cov = match mode {
                        CovariationMode::Bracket => Covariation::Bracket(problem.coeffs.as_ref()),
                        CovariationMode::Realized => Covariation::Realized,
                    };
                    let r = ito_residual(xi, &z, p, cov)?;
                    Ok(r.into_iter().fold(0.0, f64::max))
                })
                .collect()
        })
        .collect();
    let mut sums = vec![Vec::with_capacity(cfg.n_paths); cfg.halvings + 1];
    for r in per_path {
        for (h, v) in r?.into_iter().enumerate() {
            sums[h].push(v);
        }
    }
    let rungs = sums
        .iter()
        .enumerate()
        .map(|(h, v)| Rung {
            dt: cfg.dt / (1u64 << h) as f64,
            value: mean(v),
        })
        .collect();
    Ok(Ladder::new(rungs))
}

/// Mean-square Picard increments and their envelopes.
#[derive(Debug, Clone, Serialize)]
pub struct PicardCheck {
    pub iterations: usize,
    pub dt: f64,
    pub n_paths: usize,
    /// `D_k(t) = E |Z^{(k+1)}_t - Z^{(k)}_t|^2` at the recording times.
    pub times: Vec<f64>,
    pub increments: Vec<Vec<f64>>,
    pub fitted: PicardEnvelope,
    /// `max_{k,t} D_k(t) / (C (R t)^{k+1}/(k+1)!)` for the fitted envelope.
    pub fitted_worst_ratio: f64,
    pub structural: PicardEnvelope,
    pub structural_worst_ratio: f64,
    /// Mean sup-difference between the fine-grid final Picard iterate and EM
    /// on coarsened increments.
    pub em_ladder: Ladder,
}

impl PicardCheck {
    pub fn envelope_holds(&self) -> bool {
        self.fitted_worst_ratio <= 1.0 && self.structural_worst_ratio <= 1.0
    }
}

/// Picard iteration on `n_paths` frozen paths of step `dt` over `[0, T]`.
///
/// `lipschitz` and `growth` are the constants `C`, `D` of the coefficients
/// (`|σ(x) - σ(y)| + |b(x) - b(y)| <= C|x - y|`, `|σ(x)|^2 + |b(x)|^2 <= D^2 (1 + |x|^2)`),
/// giving the structural rate `R = max(4 D^2 (1+T)(1+|ζ|^2), 2 C^2 (1+T))`
/// with `C = 1` in the prefactor.
///
/// The EM ladder runs `iterations` Picard steps on the fine grid of step
/// `dt` and compares with EM on the increments coarsened by `2^h` for each
/// `h` in `coarsenings`.
#[allow(clippy::too_many_arguments)]
pub fn picard_check(
    problem: &SdeProblem,
    zeta: &[f64],
    horizon: f64,
    dt: f64,
    iterations: usize,
    n_paths: usize,
    seed: u64,
    lipschitz: f64,
    growth: f64,
    coarsenings: &[u32],
) -> Result<PicardCheck> {
    let steps = (horizon / dt).round() as usize;
    if steps == 0 {
        return Err(Error::InvalidArgument("empty Picard grid".into()));
    }
    let d = problem.dim();
    let per_path: Vec<Result<(Vec<Vec<f64>>, Vec<f64>)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let path = BrownianPath::generate(seed, i as u64, d, dt, steps);
            let pr = picard_solve(problem, &path, zeta, iterations)?;
            let incs: Vec<Vec<f64>> = (0..iterations).map(|k| pr.squared_increments(k)).collect();
            let last = pr.last();
            let mut em_diffs = Vec::with_capacity(coarsenings.len());
            for &c in coarsenings {
                let factor = 1usize << c;
                let coarse = path.coarsen(factor)?;
                let em = simulate_em(problem, &coarse, zeta)?;
                let mut worst = 0.0_f64;
                for k in 0..=coarse.steps {
                    let zc = em.state(k).ok_or(Error::NumericalBlowup {
                        step: k,
                        time: coarse.time(k),
                    })?;
                    let zf = &last[k * factor * d..(k * factor + 1) * d];
                    let dist = zc.iter().zip(zf).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    worst = worst.max(dist);
                }
                em_diffs.push(worst);
            }
            Ok((incs, em_diffs))
        })
        .collect();
    let mut increments = vec![vec![0.0; steps + 1]; iterations];
    let mut em_sums = vec![0.0; coarsenings.len()];
    for r in per_path {
        let (incs, em) = r?;
        for (acc, inc) in increments.iter_mut().zip(&incs) {
            for (a, v) in acc.iter_mut().zip(inc) {
                *a += v;
            }
        }
        for (a, v) in em_sums.iter_mut().zip(&em) {
            *a += v;
        }
    }
    for row in increments.iter_mut() {
        for v in row.iter_mut() {
            *v /= n_paths as f64;
        }
    }
    let terminal: Vec<f64> = increments.iter().map(|row| row[steps]).collect();
    let fitted = fit_picard_envelope(&terminal, horizon)?;
    let zeta_sq: f64 = zeta.iter().map(|v| v * v).sum();
    let structural = PicardEnvelope {
        c: 1.0,
        r: (4.0 * growth * growth * (1.0 + horizon) * (1.0 + zeta_sq)).max(2.0 * lipschitz * lipschitz * (1.0 + horizon)),
    };
    let worst = |env: &PicardEnvelope| {
        let mut w = 0.0_f64;
        for (k, row) in increments.iter().enumerate() {
            for (j, &v) in row.iter().enumerate().skip(1) {
                w = w.max(v / env.eval(k, dt * j as f64));
            }
        }
        w
    };
    let em_ladder = Ladder::new(
        coarsenings
            .iter()
            .zip(&em_sums)
            .map(|(&c, s)| Rung {
                dt: dt * (1u64 << c) as f64,
                value: s / n_paths as f64,
            })
            .collect(),
    );
    Ok(PicardCheck {
        iterations,
        dt,
        n_paths,
        times: (0..=steps).map(|j| dt * j as f64).collect(),
        fitted_worst_ratio: worst(&fitted),
        structural_worst_ratio: worst(&structural),
        increments,
        fitted,
        structural,
        em_ladder,
    })
}

/// First coordinate of `Z_T` on each path of an ensemble started at a
/// point, for comparison with closed-form laws.
pub fn terminal_samples(problem: &SdeProblem, z0: &[f64], dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let steps = (horizon / dt).round() as usize;
    let law = InitialLaw::Point(z0.to_vec());
    let d = problem.dim();
    let finals: Vec<Result<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let z0 = law.sample(&mut rng, d)?;
            let path = BrownianPath::from_rng(&mut rng, seed, i as u64, d, dt, steps);
            let z = simulate_em(problem, &path, &z0)?;
            z.state(steps).map(|s| s[0]).ok_or(Error::NumericalBlowup {
                step: z.exit_step.unwrap_or(steps),
                time: z.theta_m,
            })
        })
        .collect();
    finals.into_iter().collect()
}

/// Partial sums `S(N) = sum_{n <= N} (2n+1)^{-2q} <x^k, h_n>^2` of `||x^k||_{-q}^2`.
#[derive(Debug, Clone, Serialize)]
pub struct PartialSums {
    pub power: u32,
    pub q: f64,
    pub n: usize,
    pub partial: f64,
    /// `S(inf) - S(N)`: exact sums up to `16 N` plus a geometric
    /// extrapolation of the last two doublings.
    pub tail: f64,
    /// `tail / (S(N) + tail)`; 1 when the doublings do not contract.
    pub tail_fraction: f64,
    /// Log-log slope of `S` over `N/8, N/4, N/2, N`.
    pub growth_slope: f64,
}

pub fn partial_sums(power: u32, q: f64, n: usize) -> Result<PartialSums> {
    if n < 8 {
        return Err(Error::InvalidArgument("need N >= 8".into()));
    }
    let top = 16 * n;
    let m = monomial_moments_1d(power, top);
    let mut s = Vec::with_capacity(top + 1);
    let mut acc = 0.0;
    for (k, v) in m.iter().enumerate() {
        acc += (2.0 * k as f64 + 1.0).powf(-2.0 * q) * v * v;
        s.push(acc);
    }
    let (s4, s8, s16) = (s[4 * n], s[8 * n], s[top]);
    let rho = (s16 - s8) / (s8 - s4);
    let rest = if rho < 1.0 { (s16 - s8) * rho / (1.0 - rho) } else { f64::INFINITY };
    let tail = s16 - s[n] + rest;
    let ns: Vec<f64> = [n / 8, n / 4, n / 2, n].iter().map(|&k| k as f64).collect();
    let sums: Vec<f64> = [n / 8, n / 4, n / 2, n].iter().map(|&k| s[k]).collect();
    Ok(PartialSums {
        power,
        q,
        n,
        partial: s[n],
        tail,
        tail_fraction: if tail.is_finite() { tail / (s[n] + tail) } else { 1.0 },
        growth_slope: loglog_slope(&ns, &sums),
    })
}

/// Random test vectors `φ_n ~ N(0,1) (2|n|+d)^{-(p+1)}`, normalized in `S_p`.
pub fn gap_corpus(basis: &Arc<Basis>, p: f64, count: usize, seed: u64) -> Vec<SobolevVector> {
    let mut rng = stream_rng(seed, 0);
    (0..count)
        .map(|_| {
            let c: Vec<f64> = (0..basis.len())
                .map(|r| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x * basis.weight_base(r).powf(-(p + 1.0))
                })
                .collect();
            let phi = SobolevVector::new(basis.clone(), c, p);
            let norm = phi.norm(p);
            phi.scaled(1.0 / norm)
        })
        .collect()
}

/// `γ̂ = max` of the normalized monotonicity gap over a random corpus.
pub fn gamma_hat(field: &CoeffField, p: f64, count: usize, seed: u64) -> Result<f64> {
    let corpus = gap_corpus(field.basis(), p, count, seed);
    let gaps = corpus
        .par_iter()
        .map(|phi| monotonicity_gap(phi, field, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(gaps.into_iter().fold(f64::NEG_INFINITY, f64::max))
}
