//! Response probabilities, Fisher information and the two reliability
//! functionals.
//!
//! With item scores `a_i = c * lambda0_i` the test information at `theta` is
//!
//! ```text
//! J(theta; c) = sum_i a_i^2 h(a_i (theta - beta_i)),   h(x) = e^-|x| / (1 + e^-|x|)^2
//! ```
//!
//! and over a latent sample with variance `s2`:
//!
//! * `rho_tilde = s2 Jbar / (s2 Jbar + 1)` (average information),
//! * `w_bar = s2 / (s2 + mean(1 / J))` (mean squared error of measurement).
//!
//! Jensen's inequality gives `w_bar <= rho_tilde`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::items::ItemPool;
use crate::stats;

/// Smallest per-step rise counted as an increase by [`monotonicity_scan`].
pub const MONOTONE_STEP: f64 = 1e-10;

/// Information below this is treated as zero when forming `1 / J`.
pub const INFORMATION_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[serde(alias = "info", alias = "tilde", alias = "rho_tilde")]
    AvgInfo,
    #[serde(alias = "bar", alias = "w_bar")]
    Msem,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::AvgInfo => "avg_info",
            Metric::Msem => "msem",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        match s {
            "avg_info" | "info" | "tilde" | "rho_tilde" => Some(Metric::AvgInfo),
            "msem" | "bar" | "w_bar" => Some(Metric::Msem),
            _ => None,
        }
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `P(Y = 1 | theta) = logistic(lambda (theta - beta))`.
pub fn prob_correct(theta: f64, beta: f64, lambda: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::domain("theta", "must be finite"));
    }
    if !beta.is_finite() {
        return Err(Error::domain("beta", "must be finite"));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::domain("lambda", "must be positive"));
    }
    Ok(logistic(lambda * (theta - beta)))
}

/// `p (1 - p)` written in terms of `e^-|x|` so neither tail overflows.
pub fn logistic_kernel(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let d = 1.0 + e;
    (e / (d * d)).min(0.25)
}

pub fn item_information(theta: f64, beta: f64, lambda: f64) -> f64 {
    lambda * lambda * logistic_kernel(lambda * (theta - beta))
}

pub fn test_information(theta: f64, pool: &ItemPool, c: f64) -> f64 {
    pool.items
        .iter()
        .map(|it| item_information(theta, it.beta, c * it.lambda0))
        .sum()
}

/// `phi(x) = 2 - x tanh(x / 2)`; its sign decides whether an item gains or
/// loses information as `c` grows.
pub fn phi(x: f64) -> f64 {
    2.0 - x * (0.5 * x).tanh()
}

/// Positive root of [`phi`], about 2.3994.
pub fn phi_root() -> f64 {
    // phi is even and strictly decreasing on (0, inf): Newton from 2.4
    let mut x: f64 = 2.4;
    for _ in 0..50 {
        let t = (0.5 * x).tanh();
        let d = -(t + 0.5 * x * (1.0 - t * t));
        let step = phi(x) / d;
        x -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    x
}

/// `dJ/dc = sum_i c lambda0_i^2 h(x_i) phi(x_i)` with `x_i = c lambda0_i (theta - beta_i)`.
pub fn test_information_dc(theta: f64, pool: &ItemPool, c: f64) -> f64 {
    pool.items
        .iter()
        .map(|it| {
            let x = c * it.lambda0 * (theta - it.beta);
            c * it.lambda0 * it.lambda0 * logistic_kernel(x) * phi(x)
        })
        .sum()
}

/// Reliability of one form at one scale, evaluated over a latent sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilitySummary {
    pub c: f64,
    pub m_points: usize,
    pub sigma2_theta: f64,
    pub j_bar: f64,
    /// `mean(1 / J)`; infinite when some point fell under [`INFORMATION_FLOOR`].
    pub msem: f64,
    pub rho_tilde: f64,
    pub w_bar: f64,
    pub information_floor_hit: bool,
}

impl ReliabilitySummary {
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::AvgInfo => self.rho_tilde,
            Metric::Msem => self.w_bar,
        }
    }
}

/// Latent sample and form with `a_i = lambda0_i` precomputed; `c` varies.
#[derive(Debug, Clone)]
pub(crate) struct InformationKernel<'a> {
    theta: &'a [f64],
    betas: Vec<f64>,
    lambdas: Vec<f64>,
}

impl<'a> InformationKernel<'a> {
    pub(crate) fn new(theta: &'a [f64], pool: &ItemPool) -> Self {
        InformationKernel {
            theta,
            betas: pool.betas(),
            lambdas: pool.lambdas(),
        }
    }

    fn information_at(&self, theta: f64, scaled: &[f64]) -> f64 {
        let mut j = 0.0;
        for (b, a) in self.betas.iter().zip(scaled) {
            j += a * a * logistic_kernel(a * (theta - b));
        }
        j
    }

    pub(crate) fn summarize(&self, c: f64, sigma2: f64, with_msem: bool) -> ReliabilitySummary {
        let scaled: Vec<f64> = self.lambdas.iter().map(|l| c * l).collect();
        let mut sum_j = 0.0;
        let mut sum_inv = 0.0;
        let mut floor_hit = false;
        let (mut j_min, mut j_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &t in self.theta {
            let j = self.information_at(t, &scaled);
            sum_j += j;
            j_min = j_min.min(j);
            j_max = j_max.max(j);
            if with_msem {
                if j < INFORMATION_FLOOR {
                    floor_hit = true;
                } else {
                    sum_inv += 1.0 / j;
                }
            }
        }
        let m = self.theta.len() as f64;
        // constant information: keep both functionals bit-identical
        let constant = j_min == j_max;
        let j_bar = if constant { j_min } else { sum_j / m };
        let (msem, w_bar) = if !with_msem {
            (f64::NAN, f64::NAN)
        } else if floor_hit {
            (f64::INFINITY, 0.0)
        } else {
            let msem = if constant { 1.0 / j_min } else { sum_inv / m };
            (msem, sigma2 / (sigma2 + msem))
        };
        let rho_tilde = sigma2 / (sigma2 + 1.0 / j_bar);
        ReliabilitySummary {
            c,
            m_points: self.theta.len(),
            sigma2_theta: sigma2,
            j_bar,
            msem,
            rho_tilde,
            w_bar,
            information_floor_hit: floor_hit,
        }
    }

    pub(crate) fn information_values(&self, c: f64) -> Vec<f64> {
        let scaled: Vec<f64> = self.lambdas.iter().map(|l| c * l).collect();
        self.theta.iter().map(|&t| self.information_at(t, &scaled)).collect()
    }
}

fn check_scale(c: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::domain("c", format!("must be positive and finite, got {c}")));
    }
    Ok(())
}

fn check_theta(theta: &[f64]) -> Result<()> {
    if theta.len() < 2 {
        return Err(Error::InsufficientData {
            what: "latent sample",
            needed: 2,
            got: theta.len(),
        });
    }
    Ok(())
}

/// Sample variance used when no latent variance is supplied.
pub fn latent_variance(theta: &[f64], sigma2: Option<f64>) -> Result<f64> {
    match sigma2 {
        Some(v) if v.is_finite() && v > 0.0 => Ok(v),
        Some(v) => Err(Error::domain("sigma2_theta", format!("must be positive, got {v}"))),
        None => {
            check_theta(theta)?;
            let v = stats::variance(theta);
            if v > 0.0 {
                Ok(v)
            } else {
                Err(Error::DegenerateInput("latent sample has zero variance".into()))
            }
        }
    }
}

/// Both reliability functionals at scale `c`. `sigma2 = None` uses the
/// unbiased sample variance of `theta`.
pub fn reliability_summary(
    theta: &[f64],
    pool: &ItemPool,
    c: f64,
    sigma2: Option<f64>,
) -> Result<ReliabilitySummary> {
    check_scale(c)?;
    check_theta(theta)?;
    pool.validate()?;
    let s2 = latent_variance(theta, sigma2)?;
    let summary = InformationKernel::new(theta, pool).summarize(c, s2, true);
    if summary.information_floor_hit {
        log::warn!("test information underflowed at c = {c}; MSEM treated as infinite");
    }
    Ok(summary)
}

/// Upper bound from `h <= 1/4`: both functionals stay below
/// `s2 (c^2 S2 / 4) / (s2 (c^2 S2 / 4) + 1)`.
pub fn analytic_ceiling(pool: &ItemPool, sigma2: f64, c: f64) -> f64 {
    let s = sigma2 * c * c * pool.sum_sq_lambda() / 4.0;
    s / (s + 1.0)
}

/// Ceiling for `n` Rasch items at `c = 1` with unit latent variance.
pub fn reference_ceiling(n_items: usize) -> f64 {
    let s = n_items as f64 / 4.0;
    s / (s + 1.0)
}

/// Search interval for `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleInterval {
    pub c_lower: f64,
    pub c_upper: f64,
}

impl ScaleInterval {
    pub const DEFAULT: ScaleInterval = ScaleInterval {
        c_lower: 0.3,
        c_upper: 3.0,
    };
    pub const WIDE: ScaleInterval = ScaleInterval {
        c_lower: 0.1,
        c_upper: 10.0,
    };

    pub fn new(c_lower: f64, c_upper: f64) -> Result<Self> {
        let s = ScaleInterval { c_lower, c_upper };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_lower.is_finite() && self.c_lower > 0.0) {
            return Err(Error::domain("c_lower", "must be positive"));
        }
        if !(self.c_upper.is_finite() && self.c_upper > self.c_lower) {
            return Err(Error::domain("c_upper", "must exceed c_lower"));
        }
        Ok(())
    }

    pub fn clamp(&self, c: f64) -> f64 {
        c.clamp(self.c_lower, self.c_upper)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.c_lower + self.c_upper)
    }

    pub fn geometric_midpoint(&self) -> f64 {
        (self.c_lower * self.c_upper).sqrt()
    }

    pub fn contains(&self, c: f64) -> bool {
        (self.c_lower..=self.c_upper).contains(&c)
    }

    /// `n` log-spaced points including both ends.
    pub fn geometric_grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.c_lower],
            _ => {
                let (lo, hi) = (self.c_lower.ln(), self.c_upper.ln());
                (0..n)
                    .map(|i| {
                        if i == n - 1 {
                            self.c_upper
                        } else {
                            (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()
                        }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityScan {
    pub metric: Metric,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub is_monotone: bool,
    /// Grid points where the value did not rise, as `(c_prev, c_next)`.
    pub violations: Vec<(f64, f64)>,
}

/// Evaluates `metric` on a geometric grid and reports whether every step
/// rises by more than [`MONOTONE_STEP`].
pub fn monotonicity_scan(
    pool: &ItemPool,
    theta: &[f64],
    metric: Metric,
    interval: ScaleInterval,
    grid_size: usize,
) -> Result<MonotonicityScan> {
    interval.validate()?;
    check_theta(theta)?;
    pool.validate()?;
    if grid_size < 3 {
        return Err(Error::domain("grid_size", "must be at least 3"));
    }
    let s2 = latent_variance(theta, None)?;
    let kernel = InformationKernel::new(theta, pool);
    let grid = interval.geometric_grid(grid_size);
    let values: Vec<f64> = grid
        .iter()
        .map(|&c| kernel.summarize(c, s2, metric == Metric::Msem).value(metric))
        .collect();
    let violations: Vec<(f64, f64)> = grid
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| v[1] - v[0] <= MONOTONE_STEP || v[1].is_nan() || v[0].is_nan())
        .map(|(g, _)| (g[0], g[1]))
        .collect();
    Ok(MonotonicityScan {
        metric,
        is_monotone: violations.is_empty(),
        grid,
        values,
        violations,
    })
}

/// Exact Jensen gap `rho_tilde - w_bar` next to its second-order delta-method
/// approximation `MSEM ~ 1/mu + Var(J)/mu^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JensenGap {
    pub c: f64,
    pub rho_tilde: f64,
    pub w_bar: f64,
    pub gap_exact: f64,
    pub information_variance: f64,
    pub w_bar_second_order: f64,
    pub gap_second_order: f64,
}

pub fn jensen_gap_estimate(
    theta: &[f64],
    pool: &ItemPool,
    c: f64,
    sigma2: Option<f64>,
) -> Result<JensenGap> {
    let summary = reliability_summary(theta, pool, c, sigma2)?;
    let js = InformationKernel::new(theta, pool).information_values(c);
    let mu = summary.j_bar;
    let var_j = js.iter().map(|j| (j - mu).powi(2)).sum::<f64>() / js.len() as f64;
    let s2 = summary.sigma2_theta;
    let msem2 = if var_j == 0.0 { summary.msem } else { 1.0 / mu + var_j / mu.powi(3) };
    let w2 = s2 / (s2 + msem2);
    Ok(JensenGap {
        c,
        rho_tilde: summary.rho_tilde,
        w_bar: summary.w_bar,
        gap_exact: summary.rho_tilde - summary.w_bar,
        information_variance: var_j,
        w_bar_second_order: w2,
        gap_second_order: summary.rho_tilde - w2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_extremes_do_not_overflow() {
        assert_eq!(logistic_kernel(0.0), 0.25);
        assert!(logistic_kernel(800.0) >= 0.0 && logistic_kernel(800.0).is_finite());
        assert_eq!(logistic_kernel(-800.0), logistic_kernel(800.0));
        let p = logistic(1.3);
        assert!((logistic_kernel(1.3) - p * (1.0 - p)).abs() < 1e-16);
    }

    #[test]
    fn prob_correct_rejects_bad_lambda() {
        assert!(prob_correct(0.0, 0.0, 0.0).is_err());
        assert!((prob_correct(1.0, 1.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn phi_root_value() {
        let r = phi_root();
        assert!((r - 2.399_357_280_515_467_5).abs() < 1e-9, "{r}");
        assert!(phi(r).abs() < 1e-14);
        assert!(phi(2.0) > 0.0 && phi(3.0) < 0.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let pool = ItemPool::custom(&[-1.5, 0.0, 0.4, 2.2], Some(&[0.7, 1.3, 1.0, 0.9])).unwrap();
        for &theta in &[-2.0, 0.1, 3.0] {
            for &c in &[0.3, 1.0, 4.0] {
                let h = 1e-6;
                let fd = (test_information(theta, &pool, c + h) - test_information(theta, &pool, c - h)) / (2.0 * h);
                let an = test_information_dc(theta, &pool, c);
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "theta {theta} c {c}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn reference_ceilings() {
        assert!((reference_ceiling(15) - 0.789_473_684).abs() < 1e-8);
        assert!((reference_ceiling(30) - 0.882_352_941).abs() < 1e-8);
        assert!((reference_ceiling(60) - 0.9375).abs() < 1e-12);
    }

    #[test]
    fn point_mass_latent_has_no_jensen_gap_with_fixed_variance() {
        let pool = ItemPool::rasch(&[-1.0, 0.0, 1.0]).unwrap();
        let theta = [0.3; 50];
        let g = jensen_gap_estimate(&theta, &pool, 1.2, Some(1.0)).unwrap();
        assert!(g.gap_exact.abs() < 1e-15);
        assert!(g.information_variance.abs() < 1e-20);
    }

    #[test]
    fn information_underflow_gives_zero_w_bar() {
        let pool = ItemPool::rasch(&[-3.0, 3.0]).unwrap();
        let theta = [-0.1, 0.0, 0.1];
        let r = reliability_summary(&theta, &pool, 400.0, None).unwrap();
        assert!(r.information_floor_hit);
        assert_eq!(r.w_bar, 0.0);
        assert!(r.msem.is_infinite());
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = ScaleInterval::new(1.0, 50.0).unwrap().geometric_grid(25);
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[24], 50.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(ScaleInterval::new(2.0, 1.0).is_err());
    }

    #[test]
    fn metric_aliases() {
        assert_eq!(Metric::parse("tilde"), Some(Metric::AvgInfo));
        assert_eq!(Metric::parse("bar"), Some(Metric::Msem));
        assert_eq!(Metric::parse("x"), None);
    }
}
