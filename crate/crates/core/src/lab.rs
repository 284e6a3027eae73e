//! Monte Carlo ensembles of lifted paths and the stationarity battery.
//!
//! Path `i` draws everything from stream `i` of the base seed: first `Z_0`,
//! then the index of `ξ` in the mixture, then the Brownian increments. Paths
//! run in parallel and are collected in index order; every reduction below
//! walks that order sequentially.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functions::FunctionSpec;
use crate::hermite::{Basis, BasisSpec, MultiIndex};
use crate::sde::{simulate_em, stream_rng, BrownianPath, InitialLaw, PathResult, SdeProblem};
use crate::sobolev::{PolyEnvelope, SobolevVector};
use crate::spde::Lifter;
use crate::stats::{ks_threshold, ks_two_sample, mean, variance, Moments};

/// Version of the JSON layout of [`StatReport`].
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Smallest ensemble accepted by [`stationarity_test`].
pub const MIN_PATHS: usize = 1000;

/// A finite-dimensional SDE together with the law of `Z_0`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub problem: SdeProblem,
    pub law: InitialLaw,
}

impl Scenario {
    pub fn ou(dim: usize) -> Self {
        Scenario {
            name: "ou".into(),
            problem: SdeProblem::ou(dim),
            law: InitialLaw::OuStationary,
        }
    }

    pub fn quartic(dim: usize) -> Self {
        Scenario {
            name: "quartic".into(),
            problem: SdeProblem::quartic(dim),
            law: InitialLaw::QuarticStationary,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Scenario {
            name: "zero".into(),
            problem: SdeProblem::zero(dim),
            law: InitialLaw::Point(vec![0.0; dim]),
        }
    }

    pub fn with_start(mut self, z0: Vec<f64>) -> Self {
        self.law = InitialLaw::Point(z0);
        self
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }
}

/// Finite mixture of initial conditions `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiMixture {
    pub members: Vec<FunctionSpec>,
    pub weights: Vec<f64>,
}

impl XiMixture {
    pub fn single(f: FunctionSpec) -> Self {
        XiMixture {
            members: vec![f],
            weights: vec![1.0],
        }
    }

    pub fn new(members: Vec<FunctionSpec>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() || members.len() != weights.len() {
            return Err(Error::InvalidArgument("mixture needs one weight per member".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("mixture weights must be non-negative with positive sum".into()));
        }
        if members.iter().any(FunctionSpec::is_distribution) {
            return Err(Error::InvalidArgument("mixture members must be functions".into()));
        }
        Ok(XiMixture { members, weights })
    }

    /// Draw a member index with probability proportional to its weight.
    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> usize {
        let total: f64 = self.weights.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

impl fmt::Display for XiMixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .members
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| format!("{w}*{m}"))
            .collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// Scalar functional of `Y_t` recorded by an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    /// `<Y, h_n>`.
    Hermite(MultiIndex),
    /// `<Y, φ>` for a named test function.
    Pairing(FunctionSpec),
    /// `||Y||_p`.
    Norm(f64),
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Hermite(n) if n.dim() == 1 => write!(f, "h{}", n.entries()[0]),
            Observable::Hermite(n) => {
                let e: Vec<String> = n.entries().iter().map(u32::to_string).collect();
                write!(f, "h({})", e.join(","))
            }
            Observable::Pairing(phi) => write!(f, "pair({phi})"),
            Observable::Norm(p) => write!(f, "norm({p})"),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("unknown observable '{s}'"));
        if let Some(rest) = s.strip_prefix("norm(").and_then(|r| r.strip_suffix(')')) {
            let p: f64 = rest.trim().parse().map_err(|_| bad())?;
            return Ok(Observable::Norm(p));
        }
        if let Some(rest) = s.strip_prefix("pair(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Observable::Pairing(rest.parse()?));
        }
        if let Some(rest) = s.strip_prefix("h(").and_then(|r| r.strip_suffix(')')) {
            let e = rest
                .split(',')
                .map(|t| t.trim().parse::<u32>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Observable::Hermite(MultiIndex::new(e)));
        }
        if let Some(rest) = s.strip_prefix('h') {
            let k: u32 = rest.parse().map_err(|_| bad())?;
            return Ok(Observable::Hermite(MultiIndex::new(vec![k])));
        }
        Err(bad())
    }
}

/// Prepared evaluator of one observable on a fixed basis.
#[derive(Debug, Clone)]
enum ObservableKernel {
    Coefficient(usize),
    Dot(Vec<f64>),
    Norm(f64),
}

impl ObservableKernel {
    fn new(obs: &Observable, basis: &Arc<Basis>) -> Result<Self> {
        match obs {
            Observable::Hermite(n) => {
                let n = if n.dim() == 1 && basis.dim() > 1 {
                    let mut e = vec![0; basis.dim()];
                    e[0] = n.entries()[0];
                    MultiIndex::new(e)
                } else {
                    n.clone()
                };
                basis
                    .rank_of(&n)
                    .map(ObservableKernel::Coefficient)
                    .ok_or_else(|| Error::BasisMismatch(format!("index {n} outside the basis")))
            }
            Observable::Pairing(phi) => {
                if phi.is_distribution() {
                    return Err(Error::InvalidArgument("test functions must be functions".into()));
                }
                Ok(ObservableKernel::Dot(phi.coefficients(basis, 0.0)?.into_coeffs()))
            }
            Observable::Norm(p) => Ok(ObservableKernel::Norm(*p)),
        }
    }

    fn eval(&self, y: &SobolevVector) -> f64 {
        match self {
            ObservableKernel::Coefficient(r) => y.coeffs()[*r],
            ObservableKernel::Dot(c) => c.iter().zip(y.coeffs()).map(|(a, b)| a * b).sum(),
            ObservableKernel::Norm(p) => y.norm(*p),
        }
    }
}

/// Settings of one ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub max_degree: u32,
    pub p: f64,
    pub dt: f64,
    /// Recording times; each must be a multiple of `dt`.
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub xi: XiMixture,
    pub observables: Vec<Observable>,
    /// Track `sup_t ||Y_t||_p` over every grid step, and the same supremum
    /// stopped at the first `|Z| >= r` for the given radius.
    pub track_sup: Option<f64>,
}

/// Observables of one path at the recording times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub index: usize,
    pub xi_index: usize,
    /// `values[obs][time]`.
    pub values: Vec<Vec<f64>>,
    /// `z[time]`, one state vector per recording time.
    pub z: Vec<Vec<f64>>,
    pub xi_norm: f64,
    pub exit_step: Option<usize>,
    pub sup_norm: Option<f64>,
    /// `sup ||Y_t||_p` over `t <= η_r` (stopped at the first `|Z| >= r`).
    pub stopped_sup_norm: Option<f64>,
    /// `sup_t |Z_t - Z_0|`.
    pub sup_displacement: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub scenario: String,
    pub config: EnsembleConfig,
    pub steps: Vec<usize>,
    pub paths: Vec<PathSummary>,
    pub failures: Vec<(usize, String)>,
}

impl Ensemble {
    /// Paths with a valid state at every recording time.
    pub fn valid(&self) -> impl Iterator<Item = &PathSummary> {
        let last = *self.steps.iter().max().unwrap_or(&0);
        self.paths.iter().filter(move |p| p.exit_step.is_none_or(|e| e > last))
    }

    pub fn valid_count(&self) -> usize {
        self.valid().count()
    }

    pub fn excluded_count(&self) -> usize {
        self.config.n_paths - self.valid_count()
    }

    /// Samples of observable `obs` at recording time `time`, valid paths only.
    pub fn samples(&self, obs: usize, time: usize) -> Vec<f64> {
        self.valid().map(|p| p.values[obs][time]).collect()
    }

    /// Samples of coordinate `axis` of `Z` at recording time `time`.
    pub fn z_samples(&self, axis: usize, time: usize) -> Vec<f64> {
        self.valid().map(|p| p.z[time][axis]).collect()
    }

    /// Pool coordinate `axis` of `Z` over several recording times.
    pub fn pooled_z(&self, axis: usize, times: &[usize]) -> Vec<f64> {
        self.valid()
            .flat_map(|p| times.iter().map(move |&t| p.z[t][axis]))
            .collect()
    }
}

fn time_steps(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    times
        .iter()
        .map(|&t| {
            let k = (t / dt).round();
            if t < 0.0 || !t.is_finite() || (k * dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::GridMismatch(format!("time {t} is not on the grid of step {dt}")));
            }
            Ok(k as usize)
        })
        .collect()
}

/// Simulate the ensemble. Per-path failures are collected, not fatal.
pub fn run_ensemble(scenario: &Scenario, config: &EnsembleConfig) -> Result<Ensemble> {
    if config.times.is_empty() {
        return Err(Error::InvalidArgument("no recording times".into()));
    }
    let d = scenario.dim();
    let steps = time_steps(&config.times, config.dt)?;
    let horizon = *steps.iter().max().expect("non-empty");
    let basis = Basis::new(BasisSpec::new(d, config.max_degree));
    let lifters = config
        .xi
        .members
        .iter()
        .map(|f| Lifter::new(&f.coefficients(&basis, config.p)?))
        .collect::<Result<Vec<_>>>()?;
    let kernels = config
        .observables
        .iter()
        .map(|o| ObservableKernel::new(o, &basis))
        .collect::<Result<Vec<_>>>()?;
    let seed = config.seed;

    let results: Vec<Result<PathSummary>> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let z0 = scenario.law.sample(&mut rng, d)?;
            let xi_index = config.xi.sample_index(&mut rng);
            let path = BrownianPath::from_rng(&mut rng, seed, i as u64, d, config.dt, horizon);
            let z = simulate_em(&scenario.problem, &path, &z0)?;
            summarize(i, xi_index, &z, &steps, &lifters[xi_index], &kernels, config)
        })
        .collect();

    let mut paths = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => paths.push(s),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    Ok(Ensemble {
        scenario: scenario.name.clone(),
        config: config.clone(),
        steps,
        paths,
        failures,
    })
}

fn summarize(
    index: usize,
    xi_index: usize,
    z: &PathResult,
    steps: &[usize],
    lifter: &Lifter,
    kernels: &[ObservableKernel],
    config: &EnsembleConfig,
) -> Result<PathSummary> {
    let nan = vec![f64::NAN; z.dim];
    let mut values = vec![Vec::with_capacity(steps.len()); kernels.len()];
    let mut zs = Vec::with_capacity(steps.len());
    for &s in steps {
        match z.state(s).filter(|_| z.exit_step.is_none_or(|e| s < e)) {
            Some(zt) => {
                let y = lifter.shift(zt)?;
                for (v, k) in values.iter_mut().zip(kernels) {
                    v.push(k.eval(&y));
                }
                zs.push(zt.to_vec());
            }
            None => {
                for v in values.iter_mut() {
                    v.push(f64::NAN);
                }
                zs.push(nan.clone());
            }
        }
    }
    let (mut sup_norm, mut stopped_sup_norm, mut sup_displacement) = (None, None, None);
    if let Some(radius) = config.track_sup {
        let last = z.exit_step.unwrap_or(z.steps()).min(*steps.iter().max().unwrap_or(&0));
        let z0 = z.state(0).expect("initial state");
        let (mut sup, mut stopped, mut disp) = (0.0_f64, 0.0_f64, 0.0_f64);
        let mut stopped_open = true;
        for k in 0..=last {
            let zt = z.state(k).expect("valid before exit");
            let norm = lifter.shift(zt)?.norm(config.p);
            sup = sup.max(norm);
            if stopped_open {
                stopped = stopped.max(norm);
                if zt.iter().map(|v| v * v).sum::<f64>().sqrt() >= radius {
                    stopped_open = false;
                }
            }
            let dz = zt.iter().zip(z0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            disp = disp.max(dz);
        }
        sup_norm = Some(sup);
        stopped_sup_norm = Some(stopped);
        sup_displacement = Some(disp);
    }
    Ok(PathSummary {
        index,
        xi_index,
        values,
        z: zs,
        xi_norm: lifter.xi().norm(config.p),
        exit_step: z.exit_step,
        sup_norm,
        stopped_sup_norm,
        sup_displacement,
    })
}

/// Thresholds of the stationarity battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Largest accepted |z-score| of mean and variance differences.
    pub z_max: f64,
    /// Coefficient `c` of the KS critical value `c sqrt((n+m)/(nm))`.
    pub ks_c: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { z_max: 3.0, ks_c: 1.36 }
    }
}

/// Comparison of one observable at two recording times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairVerdict {
    pub observable: String,
    pub t: f64,
    pub s: f64,
    pub mean_z: f64,
    pub variance_z: f64,
    pub ks: f64,
    pub ks_critical: f64,
    pub pass: bool,
}

fn z_score(a: f64, sa: f64, b: f64, sb: f64) -> f64 {
    let se = (sa * sa + sb * sb).sqrt();
    if se == 0.0 {
        if a == b {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b) / se
    }
}

/// Compare two samples of the same observable: mean and variance z-scores
/// and the two-sample KS statistic.
pub fn compare_samples(name: &str, t: f64, s: f64, a: &[f64], b: &[f64], th: &Thresholds) -> PairVerdict {
    let (ma, mb) = (Moments::of(a), Moments::of(b));
    let mean_z = z_score(ma.mean, ma.mean_se, mb.mean, mb.mean_se);
    let variance_z = z_score(ma.variance, ma.variance_se, mb.variance, mb.variance_se);
    let ks = ks_two_sample(a, b);
    let ks_critical = ks_threshold(a.len(), b.len(), th.ks_c);
    let pass = mean_z.abs() <= th.z_max && variance_z.abs() <= th.z_max && ks <= ks_critical;
    PairVerdict {
        observable: name.to_string(),
        t,
        s,
        mean_z,
        variance_z,
        ks,
        ks_critical,
        pass,
    }
}

/// Stationarity battery on observable `obs` for pairs of recording-time
/// indices.
pub fn stationarity_test(ens: &Ensemble, obs: usize, pairs: &[(usize, usize)], th: &Thresholds) -> Result<Vec<PairVerdict>> {
    let valid = ens.valid_count();
    if valid < MIN_PATHS {
        return Err(Error::TooFewPaths {
            valid,
            required: MIN_PATHS,
        });
    }
    let name = ens
        .config
        .observables
        .get(obs)
        .ok_or_else(|| Error::InvalidArgument(format!("no observable {obs}")))?
        .to_string();
    pairs
        .iter()
        .map(|&(i, j)| {
            let (t, s) = match (ens.config.times.get(i), ens.config.times.get(j)) {
                (Some(t), Some(s)) => (*t, *s),
                _ => return Err(Error::InvalidArgument(format!("time index pair ({i}, {j}) out of range"))),
            };
            Ok(compare_samples(&name, t, s, &ens.samples(obs, i), &ens.samples(obs, j), th))
        })
        .collect()
}

/// One-sample check of a marginal against known mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalCheck {
    pub t: f64,
    pub mean: f64,
    pub mean_z: f64,
    pub variance: f64,
    pub variance_z: f64,
    pub pass: bool,
}

pub fn marginal_check(t: f64, xs: &[f64], mean_ref: f64, var_ref: f64, z_max: f64) -> MarginalCheck {
    let m = Moments::of(xs);
    let mean_z = z_score(m.mean, m.mean_se, mean_ref, 0.0);
    let variance_z = z_score(m.variance, m.variance_se, var_ref, 0.0);
    MarginalCheck {
        t,
        mean: m.mean,
        mean_z,
        variance: m.variance,
        variance_z,
        pass: mean_z.abs() <= z_max && variance_z.abs() <= z_max,
    }
}

/// Empirical side of `E sup_{t<=T} ||Y_t||_p <= C (E ||Y_0||_p^2)^{1/2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormEstimate {
    pub horizon: f64,
    pub p: f64,
    pub valid: usize,
    pub excluded: usize,
    /// `E sup_t ||Y_t||_p`.
    pub mean_sup: f64,
    /// `(E ||Y_0||_p^2)^{1/2}`.
    pub rms_initial: f64,
    /// `mean_sup / rms_initial`.
    pub ratio: f64,
    /// `(E P(sup_t |Z_t - Z_0|)^2)^{1/2}`, which dominates the ratio.
    pub structural: f64,
    pub finite: bool,
}

/// Evaluate the norm estimate from an ensemble run with `track_sup`.
///
/// `Y_t = τ_{Z_t - Z_0} Y_0`, so `sup_t ||Y_t||_p <= P(sup_t |Z_t - Z_0|) ||Y_0||_p`
/// and Cauchy-Schwarz gives the structural constant.
pub fn norm_estimate_check(ens: &Ensemble, envelope: &PolyEnvelope) -> Result<NormEstimate> {
    let norm_obs = ens
        .config
        .observables
        .iter()
        .position(|o| matches!(o, Observable::Norm(q) if (*q - ens.config.p).abs() < 1e-12))
        .ok_or_else(|| Error::InvalidArgument("ensemble does not record ||Y||_p".into()))?;
    let t0 = ens
        .config
        .times
        .iter()
        .position(|t| *t == 0.0)
        .ok_or_else(|| Error::InvalidArgument("ensemble does not record t = 0".into()))?;
    let mut sups = Vec::new();
    let mut initial_sq = Vec::new();
    let mut structural_sq = Vec::new();
    for p in ens.valid() {
        let (Some(sup), Some(disp)) = (p.sup_norm, p.sup_displacement) else {
            return Err(Error::InvalidArgument("ensemble was run without sup tracking".into()));
        };
        sups.push(sup);
        initial_sq.push(p.values[norm_obs][t0].powi(2));
        structural_sq.push(envelope.eval(disp).powi(2));
    }
    let valid = sups.len();
    let mean_sup = mean(&sups);
    let rms_initial = mean(&initial_sq).sqrt();
    let ratio = mean_sup / rms_initial;
    let structural = mean(&structural_sq).sqrt();
    Ok(NormEstimate {
        horizon: ens.config.times.iter().cloned().fold(0.0, f64::max),
        p: ens.config.p,
        valid,
        excluded: ens.config.n_paths - valid,
        mean_sup,
        rms_initial,
        ratio,
        structural,
        finite: ratio.is_finite() && structural.is_finite(),
    })
}

/// Pathwise check of `sup_{t <= η_n} ||Y_t||_p^2 <= (sup_{|x|<=n} P)^2 ||ξ||_p^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizedCheck {
    pub radius: f64,
    pub bound_factor: f64,
    pub checked: usize,
    pub violations: Vec<usize>,
    pub worst_ratio: f64,
}

pub fn localized_norm_check(ens: &Ensemble, envelope: &PolyEnvelope) -> Result<LocalizedCheck> {
    let radius = ens
        .config
        .track_sup
        .ok_or_else(|| Error::InvalidArgument("ensemble was run without sup tracking".into()))?;
    let factor = envelope.sup_on_ball(radius);
    let mut violations = Vec::new();
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for p in &ens.paths {
        let Some(s) = p.stopped_sup_norm else { continue };
        checked += 1;
        let ratio = s * s / (factor * factor * p.xi_norm * p.xi_norm);
        worst = worst.max(ratio);
        if ratio.is_nan() || ratio > 1.0 {
            violations.push(p.index);
        }
    }
    Ok(LocalizedCheck {
        radius,
        bound_factor: factor,
        checked,
        violations,
        worst_ratio: worst,
    })
}

/// Per-time summary of one observable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableSummary {
    pub name: String,
    pub per_time: Vec<Moments>,
}

/// Serialized outcome of a stationarity run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatReport {
    pub schema_version: u32,
    pub scenario: String,
    pub xi: String,
    pub seed: u64,
    pub n_paths: usize,
    pub valid: usize,
    pub excluded: usize,
    pub failures: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub thresholds: Thresholds,
    /// Expected number of false alarms if every comparison were independent:
    /// `0.0027` per z-score pair and `0.05` per KS test.
    pub false_alarm_budget: f64,
    pub observables: Vec<ObservableSummary>,
    pub marginals: Vec<MarginalCheck>,
    pub verdicts: Vec<PairVerdict>,
    pub norm_estimate: Option<NormEstimate>,
    pub localized: Option<LocalizedCheck>,
    pub pass: bool,
}

impl StatReport {
    /// Assemble the report for the given time pairs, checking every
    /// observable and the first coordinate of `Z`.
    pub fn build(ens: &Ensemble, pairs: &[(usize, usize)], th: &Thresholds, marginal_ref: Option<(f64, f64)>) -> Result<StatReport> {
        let mut verdicts = Vec::new();
        for obs in 0..ens.config.observables.len() {
            verdicts.extend(stationarity_test(ens, obs, pairs, th)?);
        }
        for &(i, j) in pairs {
            verdicts.push(compare_samples(
                "z1",
                ens.config.times[i],
                ens.config.times[j],
                &ens.z_samples(0, i),
                &ens.z_samples(0, j),
                th,
            ));
        }
        let marginals: Vec<MarginalCheck> = match marginal_ref {
            Some((m, v)) => ens
                .config
                .times
                .iter()
                .enumerate()
                .map(|(k, &t)| marginal_check(t, &ens.z_samples(0, k), m, v, th.z_max))
                .collect(),
            None => Vec::new(),
        };
        let observables = ens
            .config
            .observables
            .iter()
            .enumerate()
            .map(|(o, obs)| ObservableSummary {
                name: obs.to_string(),
                per_time: (0..ens.config.times.len()).map(|k| Moments::of(&ens.samples(o, k))).collect(),
            })
            .collect();
        let pass = verdicts.iter().all(|v| v.pass) && marginals.iter().all(|m| m.pass);
        let valid = ens.valid_count();
        Ok(StatReport {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario: ens.scenario.clone(),
            xi: ens.config.xi.to_string(),
            seed: ens.config.seed,
            n_paths: ens.config.n_paths,
            valid,
            excluded: ens.config.n_paths - valid,
            failures: ens.failures.len(),
            dt: ens.config.dt,
            times: ens.config.times.clone(),
            thresholds: *th,
            false_alarm_budget: verdicts.len() as f64 * (0.0027 + 0.05) + marginals.len() as f64 * 0.0027,
            observables,
            marginals,
            verdicts,
            norm_estimate: None,
            localized: None,
            pass,
        })
    }

    /// Attach the norm-estimate and localized checks; the localized check
    /// must have no violations for the report to pass.
    pub fn with_norm_checks(mut self, estimate: NormEstimate, localized: LocalizedCheck) -> Self {
        self.pass &= estimate.finite && localized.violations.is_empty();
        self.norm_estimate = Some(estimate);
        self.localized = Some(localized);
        self
    }
}

/// Observable time series as CSV rows `t,observable,value,std_err`, one row
/// per recording time and observable (the value is the ensemble mean).
pub fn write_observable_csv<W: std::io::Write>(ens: &Ensemble, mut w: W) -> Result<()> {
    writeln!(w, "t,observable,value,std_err")?;
    for (k, t) in ens.config.times.iter().enumerate() {
        for (o, obs) in ens.config.observables.iter().enumerate() {
            let xs = ens.samples(o, k);
            let se = (variance(&xs) / xs.len() as f64).sqrt();
            writeln!(w, "{t},{obs},{:.17e},{:.17e}", mean(&xs), se)?;
        }
    }
    Ok(())
}
