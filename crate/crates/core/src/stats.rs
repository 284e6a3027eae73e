//! Sample statistics used by the Monte Carlo checks.
//!
//! Every reduction runs sequentially in slice order, so results are
//! bit-reproducible for a given input ordering.

use serde::Serialize;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// `sd / sqrt(n)`.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn central_moment(xs: &[f64], k: i32) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(k)).sum::<f64>() / xs.len() as f64
}

pub fn skewness(xs: &[f64]) -> f64 {
    let m2 = central_moment(xs, 2);
    central_moment(xs, 3) / m2.powf(1.5)
}

/// Standard error of the sample variance, `sqrt((m4 - m2^2) / n)`.
pub fn variance_std_error(xs: &[f64]) -> f64 {
    let m2 = central_moment(xs, 2);
    let m4 = central_moment(xs, 4);
    ((m4 - m2 * m2).max(0.0) / xs.len() as f64).sqrt()
}

/// Summary of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        Moments {
            n: xs.len(),
            mean: mean(xs),
            variance: variance(xs),
            mean_se: std_error(xs),
            variance_se: variance_std_error(xs),
        }
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample statistic `sup |F_n - F|` against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let s = sorted(xs);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Critical value `c * sqrt((n + m) / (n m))` of the two-sample statistic;
/// `c = 1.36` is the 5% level.
pub fn ks_threshold(n: usize, m: usize, c: f64) -> f64 {
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    linear_fit(&pts).1
}

/// `(intercept, slope)` of an ordinary least-squares line.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n.max(2) + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * k as f64);
    }
    acc * h / 3.0
}

/// CDF of a density tabulated on a uniform grid, linearly interpolated.
#[derive(Debug, Clone)]
pub struct TabulatedCdf {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl TabulatedCdf {
    /// Integrate `density` on `[lo, hi]` with `cells` trapezoid cells refined
    /// by Simpson sub-panels, then normalize the total to one.
    pub fn new<F: Fn(f64) -> f64>(density: F, lo: f64, hi: f64, cells: usize) -> Self {
        let step = (hi - lo) / cells as f64;
        let mut values = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for k in 0..cells {
            let a = lo + step * k as f64;
            acc += simpson(&density, a, a + step, 4);
            values.push(acc);
        }
        let total = acc;
        for v in values.iter_mut() {
            *v /= total;
        }
        TabulatedCdf { lo, step, values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pos = (x - self.lo) / self.step;
        if pos <= 0.0 {
            return 0.0;
        }
        let k = pos.floor() as usize;
        if k + 1 >= self.values.len() {
            return 1.0;
        }
        let frac = pos - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basic_moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(mean(&xs), 2.5);
        assert_relative_eq!(variance(&xs), 5.0 / 3.0);
        assert!(variance(&[1.0]).is_nan());
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [0.1, 0.4, 0.7];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&a, &[5.0, 6.0]), 1.0);
        let grid: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        assert!(ks_one_sample(&grid, |x| x) <= 0.0005 + 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert_relative_eq!(loglog_slope(&xs, &ys), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn simpson_and_cdf() {
        assert_relative_eq!(simpson(|x| x * x, 0.0, 1.0, 10), 1.0 / 3.0, epsilon = 1e-14);
        let cdf = TabulatedCdf::new(|x| (-x * x / 2.0).exp(), -10.0, 10.0, 4000);
        assert_relative_eq!(cdf.eval(0.0), 0.5, epsilon = 1e-12);
        assert_eq!(cdf.eval(-20.0), 0.0);
        assert_eq!(cdf.eval(20.0), 1.0);
    }
}
