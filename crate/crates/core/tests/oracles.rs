//! Independent oracles: closed forms, grid solvers and quadrature.

use approx::assert_relative_eq;

use hs_lift::functions::{psi2, FunctionSpec};
use hs_lift::hermite::{delta_coeffs, hermite_eval, Basis, MultiIndex};
use hs_lift::sde::{stream_rng, BrownianPath, PathResult, QuarticLaw, SdeProblem};
use hs_lift::experiments::terminal_samples;
use hs_lift::spde::{galerkin_simulate_frozen, ito_residual, Covariation, Lifter};
use hs_lift::stats::{ks_one_sample, simpson, variance};

/// Explicit finite differences for `u_t = u_xx / 2` on `[-L, L]` with zero
/// boundary values.
fn heat_fd(u0: impl Fn(f64) -> f64, t: f64, half_width: f64, h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = (2.0 * half_width / h).round() as usize;
    let xs: Vec<f64> = (0..=n).map(|k| -half_width + k as f64 * h).collect();
    let mut u: Vec<f64> = xs.iter().map(|&x| u0(x)).collect();
    let dt = 0.4 * h * h;
    let steps = (t / dt).ceil() as usize;
    let dt = t / steps as f64;
    let mut next = u.clone();
    for _ in 0..steps {
        for k in 1..n {
            next[k] = u[k] + 0.5 * dt / (h * h) * (u[k + 1] - 2.0 * u[k] + u[k - 1]);
        }
        std::mem::swap(&mut u, &mut next);
    }
    (xs, u)
}

#[test]
fn frozen_galerkin_without_noise_solves_the_heat_equation() {
    let basis = Basis::one_dim(60);
    let xi = FunctionSpec::Psi2.coefficients(&basis, 1.0).unwrap();
    let (t, steps) = (0.1, 2000);
    let path = BrownianPath::zero(1, t / steps as f64, steps);
    let ys = galerkin_simulate_frozen(&xi, &[1.0], &[0.0], &path, 1.0).unwrap();
    let y = ys.last().unwrap();
    let (xs, u) = heat_fd(psi2, t, 12.0, 0.01);
    let mut worst = 0.0_f64;
    for (x, v) in xs.iter().zip(&u) {
        if x.abs() <= 4.0 {
            worst = worst.max((y.eval(&[*x]).unwrap() - v).abs());
        }
    }
    assert!(worst <= 1e-3, "max deviation {worst:.3e}");
}

#[test]
fn lifted_translate_matches_shifted_function_pointwise() {
    let basis = Basis::one_dim(60);
    let xi = FunctionSpec::Psi2.coefficients(&basis, 0.0).unwrap();
    let lifter = Lifter::new(&xi).unwrap();
    for z in [-1.0, 0.3, 1.0] {
        let y = lifter.shift(&[z]).unwrap();
        for k in -40..=40 {
            let x = 0.1 * k as f64;
            assert!((y.eval(&[x]).unwrap() - psi2(x - z)).abs() <= 1e-5, "z {z} x {x}");
        }
    }
}

#[test]
fn ground_state_coefficient_by_two_routes() {
    let basis = Basis::one_dim(40);
    let xi = FunctionSpec::Psi2.coefficients(&basis, 0.0).unwrap();
    let lifter = Lifter::new(&xi).unwrap();
    let h0 = MultiIndex::new(vec![0]);
    for z in [-0.7, 0.0, 0.5, 1.2] {
        let spectral = lifter.shift(&[z]).unwrap().coeffs()[0];
        let direct = simpson(|y| psi2(y - z) * hermite_eval(&h0, &[y]).unwrap(), -15.0, 15.0, 6000);
        assert_relative_eq!(spectral, direct, epsilon = 1e-9);
    }
}

fn linear_path(dt: f64, steps: usize, v: f64) -> PathResult {
    PathResult {
        dim: 1,
        dt,
        states: (0..=steps).map(|k| v * k as f64 * dt).collect(),
        exploded: false,
        theta_m: f64::INFINITY,
        exit_step: None,
    }
}

#[test]
fn ito_residual_is_second_order_for_a_smooth_path() {
    // with (ΔZ)^2 in the bracket each step is a second-order Taylor step
    let basis = Basis::one_dim(40);
    let xi = FunctionSpec::Psi1.coefficients(&basis, 1.0).unwrap();
    let worst = |steps: usize| {
        let r = ito_residual(&xi, &linear_path(1.0 / steps as f64, steps, 0.8), 1.0, Covariation::Realized).unwrap();
        r.into_iter().fold(0.0, f64::max)
    };
    let (coarse, fine) = (worst(64), worst(128));
    let order = (coarse / fine).log2();
    assert!((1.8..=2.2).contains(&order), "order {order:.3}");
}

#[test]
fn ou_terminal_variance_matches_closed_form() {
    let n = 4000;
    let var = variance(&terminal_samples(&SdeProblem::ou(1), &[0.0], 1e-3, 1.0, n, 3).unwrap());
    let exact = (1.0 - (-2.0f64).exp()) / 2.0;
    let se = exact * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((var - exact).abs() <= 4.0 * se, "var {var} exact {exact}");
}

#[test]
fn quartic_sampler_follows_its_density() {
    let law = QuarticLaw::STATIONARY;
    let mut rng = stream_rng(4, 0);
    let xs: Vec<f64> = (0..20_000).map(|_| law.sample(&mut rng).unwrap()).collect();
    let cdf = law.cdf();
    let ks = ks_one_sample(&xs, |x| cdf.eval(x));
    // 1.36 / sqrt(n)
    assert!(ks <= 1.36 / (xs.len() as f64).sqrt(), "ks {ks}");
}

#[test]
fn delta_norm_converges_below_the_threshold() {
    // ||δ_0||_{-1}^2 = sum h_n(0)^2 (2n+1)^{-2} converges
    let a = delta_coeffs(&[0.0], &Basis::one_dim(400), -1.0).unwrap().norm(-1.0);
    let b = delta_coeffs(&[0.0], &Basis::one_dim(800), -1.0).unwrap().norm(-1.0);
    assert!(a.is_finite() && (b - a) / b < 1e-3);
    // and diverges at index -1/4
    let c = delta_coeffs(&[0.0], &Basis::one_dim(400), -0.25).unwrap().norm(-0.25);
    let d = delta_coeffs(&[0.0], &Basis::one_dim(1600), -0.25).unwrap().norm(-0.25);
    assert!(d > 1.05 * c);
}

#[test]
fn even_function_has_no_odd_coefficients() {
    let basis = Basis::one_dim(40);
    let v = FunctionSpec::Psi1.coefficients(&basis, 2.0).unwrap();
    for (k, c) in v.coeffs().iter().enumerate() {
        if k % 2 == 1 {
            assert!(c.abs() < 1e-14);
        }
    }
}
