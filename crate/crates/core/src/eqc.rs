//! Empirical quadrature calibration.
//!
//! One latent sample of size `M` and one item form are frozen, which turns
//! the average-information reliability into a smooth deterministic function
//! of `c`; Brent's method then solves `rho_tilde(c) = target` inside the
//! search interval.

use serde::{Deserialize, Serialize};

use crate::brent::brent;
use crate::error::{Error, Result};
use crate::items::{ItemPool, ItemSpec};
use crate::latent::LatentSpec;
use crate::psychometrics::{latent_variance, InformationKernel, Metric, ReliabilitySummary, ScaleInterval};
use crate::rng::{Purpose, StreamId};

pub const DEFAULT_M_QUADRATURE: usize = 10_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
/// A solved calibration must reproduce the target this closely.
pub const SUCCESS_ABS_ERROR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EqcConfig {
    pub target_rho: f64,
    pub metric: Metric,
    pub m_quadrature: usize,
    pub interval: ScaleInterval,
    pub tolerance: f64,
    pub max_iter: usize,
    pub latent: LatentSpec,
    pub items: ItemSpec,
    /// Overrides the sample variance of the frozen latent draws.
    pub sigma2_theta: Option<f64>,
    pub seed: u64,
}

impl EqcConfig {
    pub fn new(target_rho: f64, latent: LatentSpec, items: ItemSpec, seed: u64) -> Self {
        EqcConfig {
            target_rho,
            metric: Metric::AvgInfo,
            m_quadrature: DEFAULT_M_QUADRATURE,
            interval: ScaleInterval::DEFAULT,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            latent,
            items,
            sigma2_theta: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metric == Metric::Msem {
            return Err(Error::Configuration(
                "quadrature calibration supports only the avg_info metric; use SAC for msem".into(),
            ));
        }
        check_target(self.target_rho)?;
        if self.m_quadrature < 100 {
            return Err(Error::domain("m_quadrature", "must be at least 100"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::domain("tolerance", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter", "must be at least 1"));
        }
        self.interval.validate()?;
        self.latent.validate()?;
        self.items.validate()
    }
}

pub(crate) fn check_target(target: f64) -> Result<()> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::domain("target_rho", format!("must lie in (0, 1), got {target}")));
    }
    Ok(())
}

/// The frozen latent draws and item form that define the deterministic
/// objective.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenQuadrature {
    pub theta: Vec<f64>,
    pub pool: ItemPool,
    pub sigma2: f64,
}

impl FrozenQuadrature {
    pub fn new(theta: Vec<f64>, pool: ItemPool, sigma2: Option<f64>) -> Result<Self> {
        pool.validate()?;
        let sigma2 = latent_variance(&theta, sigma2)?;
        Ok(FrozenQuadrature { theta, pool, sigma2 })
    }

    /// Latent draws from the `Quadrature` stream, the form from the `Items`
    /// stream, both keyed by `seed`.
    pub fn draw(latent: &LatentSpec, items: &ItemSpec, m: usize, seed: u64, sigma2: Option<f64>) -> Result<Self> {
        latent.validate()?;
        items.validate()?;
        let theta = latent.draw_theta(m, &mut StreamId::new(seed, Purpose::Quadrature).rng());
        let mut pool = items.draw(&mut StreamId::new(seed, Purpose::Items).rng())?;
        if !items.is_fixed() {
            pool.metadata.seed = Some(seed);
        }
        FrozenQuadrature::new(theta, pool, sigma2)
    }

    pub fn summary(&self, c: f64) -> ReliabilitySummary {
        InformationKernel::new(&self.theta, &self.pool).summarize(c, self.sigma2, true)
    }

    pub fn reliability(&self, c: f64, metric: Metric) -> f64 {
        InformationKernel::new(&self.theta, &self.pool)
            .summarize(c, self.sigma2, metric == Metric::Msem)
            .value(metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationStatus {
    Success,
    BoundaryLow,
    BoundaryHigh,
}

impl CalibrationStatus {
    pub fn name(self) -> &'static str {
        match self {
            CalibrationStatus::Success => "success",
            CalibrationStatus::BoundaryLow => "boundary_low",
            CalibrationStatus::BoundaryHigh => "boundary_high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub c_lower: f64,
    pub c_upper: f64,
    pub rho_lower: f64,
    pub rho_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub target: f64,
    pub achieved: f64,
    pub abs_error: f64,
    pub c_star: f64,
    pub status: CalibrationStatus,
    pub metric: Metric,
    pub n_items: usize,
    pub m_quadrature: usize,
    pub latent_variance: f64,
    pub evaluations: usize,
    pub tolerance: f64,
    pub bracket: Bracket,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub latent: LatentSpec,
    pub pool: ItemPool,
}

pub fn eqc_calibrate(config: &EqcConfig) -> Result<CalibrationResult> {
    config.validate()?;
    let quad = FrozenQuadrature::draw(
        &config.latent,
        &config.items,
        config.m_quadrature,
        config.seed,
        config.sigma2_theta,
    )?;
    calibrate_frozen(config, quad)
}

/// Solves on an already frozen quadrature; the latent and item settings in
/// `config` are echoed but not redrawn.
pub fn calibrate_frozen(config: &EqcConfig, quad: FrozenQuadrature) -> Result<CalibrationResult> {
    check_target(config.target_rho)?;
    config.interval.validate()?;
    if config.metric == Metric::Msem {
        return Err(Error::Configuration(
            "quadrature calibration supports only the avg_info metric; use SAC for msem".into(),
        ));
    }
    let target = config.target_rho;
    let ScaleInterval { c_lower, c_upper } = config.interval;
    let kernel = InformationKernel::new(&quad.theta, &quad.pool);
    let rho = |c: f64| kernel.summarize(c, quad.sigma2, false).rho_tilde;
    let rho_lower = rho(c_lower);
    let rho_upper = rho(c_upper);
    for (c, v) in [(c_lower, rho_lower), (c_upper, rho_upper)] {
        if !v.is_finite() {
            return Err(Error::NumericalFailure {
                c,
                reason: format!("reliability evaluated to {v}"),
            });
        }
    }
    let bracket = Bracket {
        c_lower,
        c_upper,
        rho_lower,
        rho_upper,
    };
    let mut evaluations = 2;
    let boundary = if target <= rho_lower {
        Some((CalibrationStatus::BoundaryLow, c_lower, rho_lower))
    } else if target >= rho_upper {
        Some((CalibrationStatus::BoundaryHigh, c_upper, rho_upper))
    } else {
        None
    };
    let (status, c_star, achieved, warning) = match boundary {
        Some((status, c, achieved)) => {
            let msg = format!(
                "target reliability {target} lies outside the attainable range ({rho_lower:.4}, {rho_upper:.4}) \
                 on c in [{c_lower}, {c_upper}]; returning boundary solution c = {c}"
            );
            log::warn!("{msg}");
            (status, c, achieved, Some(msg))
        }
        None => {
            let root = brent(
                |c| {
                    evaluations += 1;
                    Ok(rho(c) - target)
                },
                c_lower,
                c_upper,
                rho_lower - target,
                rho_upper - target,
                config.tolerance,
                config.max_iter,
            )?;
            let achieved = root.fx + target;
            if (achieved - target).abs() > SUCCESS_ABS_ERROR {
                return Err(Error::NumericalFailure {
                    c: root.x,
                    reason: format!("achieved reliability {achieved} misses target {target}"),
                });
            }
            (CalibrationStatus::Success, root.x, achieved, None)
        }
    };
    Ok(CalibrationResult {
        target,
        achieved,
        abs_error: (achieved - target).abs(),
        c_star,
        status,
        metric: config.metric,
        n_items: quad.pool.len(),
        m_quadrature: quad.theta.len(),
        latent_variance: quad.sigma2,
        evaluations,
        tolerance: config.tolerance,
        bracket,
        seed: config.seed,
        warning,
        latent: config.latent.clone(),
        pool: quad.pool,
    })
}

/// Reliability summaries on the frozen quadrature of `config` at each `c`.
pub fn reliability_curve(config: &EqcConfig, grid: &[f64]) -> Result<Vec<ReliabilitySummary>> {
    let quad = FrozenQuadrature::draw(
        &config.latent,
        &config.items,
        config.m_quadrature,
        config.seed,
        config.sigma2_theta,
    )?;
    grid.iter()
        .map(|&c| {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::domain("c", format!("must be positive, got {c}")));
            }
            Ok(quad.summary(c))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::items::{DifficultySource, PoolConfig};
    use crate::latent::Shape;

    fn rasch_config(target: f64) -> EqcConfig {
        EqcConfig::new(
            target,
            LatentSpec::standard_normal(),
            ItemSpec::Generate(PoolConfig::rasch(20, DifficultySource::standard_normal())),
            7,
        )
    }

    #[test]
    fn solves_interior_target() {
        let mut cfg = rasch_config(0.8);
        cfg.m_quadrature = 2000;
        let r = eqc_calibrate(&cfg).unwrap();
        assert_eq!(r.status, CalibrationStatus::Success);
        assert!(r.abs_error <= SUCCESS_ABS_ERROR);
        assert!(cfg.interval.contains(r.c_star));
        assert!(r.bracket.rho_lower < 0.8 && 0.8 < r.bracket.rho_upper);
    }

    #[test]
    fn boundary_statuses() {
        let mut cfg = rasch_config(0.995);
        cfg.m_quadrature = 500;
        let r = eqc_calibrate(&cfg).unwrap();
        assert_eq!(r.status, CalibrationStatus::BoundaryHigh);
        assert_eq!(r.c_star, cfg.interval.c_upper);
        assert!(r.warning.is_some());
        cfg.target_rho = 0.01;
        let r = eqc_calibrate(&cfg).unwrap();
        assert_eq!(r.status, CalibrationStatus::BoundaryLow);
        assert_eq!(r.c_star, cfg.interval.c_lower);
    }

    #[test]
    fn target_equal_to_endpoint_is_a_boundary() {
        let mut cfg = rasch_config(0.5);
        cfg.m_quadrature = 500;
        let upper = eqc_calibrate(&cfg).unwrap().bracket.rho_upper;
        cfg.target_rho = upper;
        assert_eq!(eqc_calibrate(&cfg).unwrap().status, CalibrationStatus::BoundaryHigh);
    }

    #[test]
    fn msem_metric_is_rejected() {
        let mut cfg = rasch_config(0.8);
        cfg.metric = Metric::Msem;
        assert!(matches!(eqc_calibrate(&cfg), Err(Error::Configuration(_))));
    }

    #[test]
    fn invalid_targets() {
        for t in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(matches!(eqc_calibrate(&rasch_config(t)), Err(Error::ParameterDomain { .. })));
        }
    }

    #[test]
    fn reliability_curve_is_deterministic() {
        let mut cfg = rasch_config(0.7);
        cfg.latent = LatentSpec::new(Shape::SkewPos { k: 4.0 });
        cfg.m_quadrature = 300;
        let a = reliability_curve(&cfg, &[0.5, 1.0, 2.0]).unwrap();
        let b = reliability_curve(&cfg, &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(a, b);
        assert!(a[0].rho_tilde < a[1].rho_tilde && a[1].rho_tilde < a[2].rho_tilde);
    }
}
