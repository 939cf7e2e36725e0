//! Stochastic approximation calibration.
//!
//! Projected Robbins–Monro iteration on a noisy reliability estimate,
//!
//! ```text
//! c_n = clamp(c_{n-1} - a_n (rho_hat_n - target), c_L, c_U),   a_n = a / (n + A)^gamma
//! ```
//!
//! followed by Polyak–Ruppert averaging of the iterates after burn-in. Each
//! `rho_hat_n` is computed on a fresh latent batch (and by default a fresh
//! item form), so either reliability metric can be targeted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eqc::{check_target, CalibrationResult, FrozenQuadrature};
use crate::error::{Error, Result};
use crate::items::{ItemPool, ItemSpec};
use crate::latent::LatentSpec;
use crate::psychometrics::{latent_variance, InformationKernel, Metric, ScaleInterval};
use crate::rng::{combine, Purpose, StreamId, StreamRng};
use crate::stats;

pub const DEFAULT_N_ITER: usize = 300;
pub const DEFAULT_BURN_IN: usize = 150;
pub const DEFAULT_M_PER_ITER: usize = 1000;
/// Share of clamped updates above which the run is flagged.
pub const BOUNDARY_CHATTER: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub a: f64,
    #[serde(rename = "A")]
    pub offset: f64,
    pub gamma: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            a: 1.0,
            offset: 50.0,
            gamma: 0.67,
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::domain("step_a", "must be positive"));
        }
        if !(self.offset.is_finite() && self.offset >= 0.0) {
            return Err(Error::domain("step_A", "must be non-negative"));
        }
        if !(self.gamma > 0.5 && self.gamma <= 1.0) {
            return Err(Error::domain("step_gamma", format!("must lie in (0.5, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// `a_n = a / (n + A)^gamma`.
pub fn step_size(n: usize, step: &StepSchedule) -> f64 {
    step.a / (n as f64 + step.offset).powf(step.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "c", rename_all = "snake_case")]
pub enum CInit {
    Value(f64),
    /// `sqrt(c_L * c_U)`, the centre of the interval on the log scale.
    Midpoint,
    /// `c_star` of a previous quadrature calibration.
    WarmStart(f64),
}

impl CInit {
    pub fn warm_start(result: &CalibrationResult) -> Self {
        CInit::WarmStart(result.c_star)
    }

    pub fn resolve(&self, interval: &ScaleInterval) -> f64 {
        match *self {
            CInit::Value(c) | CInit::WarmStart(c) => c,
            CInit::Midpoint => interval.geometric_midpoint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub target_rho: f64,
    pub metric: Metric,
    pub n_iter: usize,
    pub burn_in: usize,
    pub step: StepSchedule,
    pub m_per_iter: usize,
    /// Size of the independent evaluation sample; `None` means `10 * m_per_iter`.
    pub eval_m: Option<usize>,
    pub interval: ScaleInterval,
    pub c_init: CInit,
    pub redraw_items: bool,
    pub latent: LatentSpec,
    pub items: ItemSpec,
    pub seed: u64,
}

impl SacConfig {
    pub fn new(target_rho: f64, metric: Metric, latent: LatentSpec, items: ItemSpec, seed: u64) -> Self {
        SacConfig {
            target_rho,
            metric,
            n_iter: DEFAULT_N_ITER,
            burn_in: DEFAULT_BURN_IN,
            step: StepSchedule::default(),
            m_per_iter: DEFAULT_M_PER_ITER,
            eval_m: None,
            interval: ScaleInterval::DEFAULT,
            c_init: CInit::Midpoint,
            redraw_items: true,
            latent,
            items,
            seed,
        }
    }

    pub fn eval_m(&self) -> usize {
        self.eval_m.unwrap_or(10 * self.m_per_iter)
    }

    pub fn validate(&self) -> Result<()> {
        check_target(self.target_rho)?;
        if self.n_iter == 0 {
            return Err(Error::domain("n_iter", "must be at least 1"));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::domain(
                "burn_in",
                format!("must be below n_iter = {}, got {}", self.n_iter, self.burn_in),
            ));
        }
        if self.m_per_iter < 2 {
            return Err(Error::domain("m_per_iter", "must be at least 2"));
        }
        if self.eval_m() < 2 {
            return Err(Error::domain("eval_m", "must be at least 2"));
        }
        self.step.validate()?;
        self.interval.validate()?;
        let c0 = self.c_init.resolve(&self.interval);
        if !self.interval.contains(c0) {
            return Err(Error::domain(
                "c_init",
                format!(
                    "{c0} lies outside [{}, {}]",
                    self.interval.c_lower, self.interval.c_upper
                ),
            ));
        }
        self.latent.validate()?;
        self.items.validate()
    }
}

/// One latent batch and the form it is scored against.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub theta: &'a [f64],
    pub pool: &'a ItemPool,
    pub sigma2: f64,
}

/// Supplies the batch used at iteration `n`.
pub trait BatchSampler {
    fn batch(&mut self, n: usize) -> Result<Batch<'_>>;
}

/// Fresh latent draws per call, and a fresh form too when `items` is set.
pub struct FreshDraws {
    latent: LatentSpec,
    m: usize,
    theta_rng: StreamRng,
    items: Option<(ItemSpec, StreamRng)>,
    theta: Vec<f64>,
    pool: ItemPool,
}

impl FreshDraws {
    /// `redraw` carries the item spec and its stream; otherwise `pool` is
    /// reused for every batch.
    pub fn new(latent: LatentSpec, m: usize, theta_rng: StreamRng, pool: ItemPool, redraw: Option<(ItemSpec, StreamRng)>) -> Self {
        FreshDraws {
            latent,
            m,
            theta_rng,
            items: redraw,
            theta: Vec::new(),
            pool,
        }
    }
}

impl BatchSampler for FreshDraws {
    fn batch(&mut self, _n: usize) -> Result<Batch<'_>> {
        self.theta = self.latent.draw_theta(self.m, &mut self.theta_rng);
        if let Some((spec, rng)) = self.items.as_mut() {
            self.pool = spec.draw(rng)?;
        }
        let sigma2 = latent_variance(&self.theta, None)?;
        Ok(Batch {
            theta: &self.theta,
            pool: &self.pool,
            sigma2,
        })
    }
}

/// The same frozen quadrature every time: the noise-free limit.
pub struct FrozenBatches(pub FrozenQuadrature);

impl BatchSampler for FrozenBatches {
    fn batch(&mut self, _n: usize) -> Result<Batch<'_>> {
        Ok(Batch {
            theta: &self.0.theta,
            pool: &self.0.pool,
            sigma2: self.0.sigma2,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub n: usize,
    pub c: f64,
    pub rho_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacTrajectory {
    pub c_init: f64,
    pub trace: Vec<TracePoint>,
    pub c_star: f64,
    pub boundary_hits: usize,
}

/// Polyak–Ruppert average of the iterates with `n > burn_in`.
pub fn polyak_average(trace: &[TracePoint], burn_in: usize) -> f64 {
    let tail: Vec<f64> = trace.iter().filter(|p| p.n > burn_in).map(|p| p.c).collect();
    stats::mean(&tail)
}

fn batch_value(batch: &Batch<'_>, c: f64, metric: Metric) -> (f64, bool) {
    let s = InformationKernel::new(batch.theta, batch.pool).summarize(c, batch.sigma2, metric == Metric::Msem);
    (s.value(metric), s.information_floor_hit)
}

/// Runs the projected iteration against any batch source.
pub fn sac_iterate<S: BatchSampler + ?Sized>(config: &SacConfig, sampler: &mut S) -> Result<SacTrajectory> {
    config.validate()?;
    let iv = config.interval;
    let c_init = config.c_init.resolve(&iv);
    let mut c = c_init;
    let mut trace = Vec::with_capacity(config.n_iter);
    let mut hits = 0;
    for n in 1..=config.n_iter {
        let batch = sampler.batch(n)?;
        let (rho_hat, floor_hit) = batch_value(&batch, c, config.metric);
        if config.metric == Metric::Msem && floor_hit {
            return Err(Error::DivergedObjective { iteration: n, c });
        }
        if !rho_hat.is_finite() {
            return Err(Error::NumericalFailure {
                c,
                reason: format!("reliability estimate {rho_hat} at iteration {n}"),
            });
        }
        let raw = c - step_size(n, &config.step) * (rho_hat - config.target_rho);
        c = iv.clamp(raw);
        if c != raw {
            hits += 1;
        }
        trace.push(TracePoint { n, c, rho_hat });
    }
    Ok(SacTrajectory {
        c_init,
        c_star: polyak_average(&trace, config.burn_in),
        trace,
        boundary_hits: hits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SacStatus {
    Ok,
    HitBoundaryOften,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacResult {
    pub target: f64,
    pub achieved: f64,
    pub abs_error: f64,
    pub c_star: f64,
    pub status: SacStatus,
    pub metric: Metric,
    pub n_iter: usize,
    pub burn_in: usize,
    pub step: StepSchedule,
    pub m_per_iter: usize,
    pub eval_m: usize,
    pub interval: ScaleInterval,
    pub c_init: CInit,
    pub c_start: f64,
    pub redraw_items: bool,
    pub boundary_hits: usize,
    pub n_items: usize,
    pub seed: u64,
    pub latent: LatentSpec,
    /// Form drawn from the `Items` stream of `seed`; the one used to
    /// generate responses.
    pub pool: ItemPool,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

impl SacResult {
    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "c", "rho_hat"]).map_err(crate::latent::csv_err)?;
        for p in &self.trace {
            w.write_record([p.n.to_string(), p.c.to_string(), p.rho_hat.to_string()])
                .map_err(crate::latent::csv_err)?;
        }
        w.flush().map_err(|e| crate::latent::csv_err(e.into()))
    }
}

fn reference_pool(config: &SacConfig) -> Result<ItemPool> {
    let mut pool = config.items.draw(&mut StreamId::new(config.seed, Purpose::Items).rng())?;
    if !config.items.is_fixed() {
        pool.metadata.seed = Some(config.seed);
    }
    Ok(pool)
}

fn sampler(config: &SacConfig, pool: &ItemPool, theta: StreamId, items: StreamId, m: usize) -> FreshDraws {
    let redraw = (config.redraw_items && !config.items.is_fixed()).then(|| (config.items.clone(), items.rng()));
    FreshDraws::new(config.latent.clone(), m, theta.rng(), pool.clone(), redraw)
}

/// Mean metric value at `c` over `eval_m / m_per_iter` (rounded up)
/// independent batches, drawn like the training batches but from the
/// evaluation streams.
fn evaluate(config: &SacConfig, pool: &ItemPool, c: f64) -> Result<f64> {
    let seed = config.seed;
    let mut s = sampler(
        config,
        pool,
        StreamId::new(seed, Purpose::SacEvaluation),
        StreamId::new(seed, Purpose::SacEvaluation).with_index(1),
        config.m_per_iter,
    );
    let batches = config.eval_m().div_ceil(config.m_per_iter).max(1);
    let mut acc = 0.0;
    for n in 1..=batches {
        let b = s.batch(n)?;
        acc += batch_value(&b, c, config.metric).0;
    }
    Ok(acc / batches as f64)
}

pub fn sac_calibrate(config: &SacConfig) -> Result<SacResult> {
    config.validate()?;
    let pool = reference_pool(config)?;
    let mut s = sampler(
        config,
        &pool,
        StreamId::new(config.seed, Purpose::SacBatches),
        StreamId::new(config.seed, Purpose::SacItems),
        config.m_per_iter,
    );
    let traj = sac_iterate(config, &mut s)?;
    finish(config, pool, traj)
}

/// Iterates on a caller-supplied sampler, then evaluates as [`sac_calibrate`].
pub fn sac_calibrate_with<S: BatchSampler + ?Sized>(config: &SacConfig, sampler: &mut S) -> Result<SacResult> {
    let pool = reference_pool(config)?;
    let traj = sac_iterate(config, sampler)?;
    finish(config, pool, traj)
}

fn finish(config: &SacConfig, pool: ItemPool, traj: SacTrajectory) -> Result<SacResult> {
    let achieved = evaluate(config, &pool, traj.c_star)?;
    let status = if traj.boundary_hits as f64 > BOUNDARY_CHATTER * config.n_iter as f64 {
        log::warn!(
            "{} of {} SAC updates were clamped to [{}, {}]; the target may be near the feasibility edge",
            traj.boundary_hits,
            config.n_iter,
            config.interval.c_lower,
            config.interval.c_upper
        );
        SacStatus::HitBoundaryOften
    } else {
        SacStatus::Ok
    };
    Ok(SacResult {
        target: config.target_rho,
        achieved,
        abs_error: (achieved - config.target_rho).abs(),
        c_star: traj.c_star,
        status,
        metric: config.metric,
        n_iter: config.n_iter,
        burn_in: config.burn_in,
        step: config.step,
        m_per_iter: config.m_per_iter,
        eval_m: config.eval_m(),
        interval: config.interval,
        c_init: config.c_init,
        c_start: traj.c_init,
        redraw_items: config.redraw_items,
        boundary_hits: traj.boundary_hits,
        n_items: pool.len(),
        seed: config.seed,
        latent: config.latent.clone(),
        pool,
        trace: traj.trace,
    })
}

/// Deviation statistics `delta = achieved - target` over a set of runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationSummary {
    pub n: usize,
    pub mean_delta: f64,
    pub sd_delta: f64,
    pub mae: f64,
    pub max_abs: f64,
    pub pct_within_001: f64,
    pub pct_within_002: f64,
    pub pct_within_005: f64,
}

impl DeviationSummary {
    pub fn from_deltas(deltas: &[f64]) -> Self {
        let n = deltas.len();
        let abs: Vec<f64> = deltas.iter().map(|d| d.abs()).collect();
        let pct = |t: f64| 100.0 * abs.iter().filter(|&&a| a < t).count() as f64 / n as f64;
        DeviationSummary {
            n,
            mean_delta: stats::mean(deltas),
            sd_delta: stats::std_dev(deltas),
            mae: stats::mean(&abs),
            max_abs: abs.iter().cloned().fold(0.0, f64::max),
            pct_within_001: pct(0.01),
            pct_within_002: pct(0.02),
            pct_within_005: pct(0.05),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationStudy {
    pub seeds: Vec<u64>,
    pub results: Vec<SacResult>,
    pub summary: DeviationSummary,
}

/// Seed of run `k` in a replication set rooted at `seed`.
pub fn replicate_seed(seed: u64, k: usize) -> u64 {
    combine(seed, k as u64)
}

/// Repeats `config` over `n_seeds` derived seeds (in parallel, ordered).
pub fn sac_deviation_study(config: &SacConfig, n_seeds: usize) -> Result<DeviationStudy> {
    if n_seeds < 2 {
        return Err(Error::InsufficientData {
            what: "deviation study seeds",
            needed: 2,
            got: n_seeds,
        });
    }
    config.validate()?;
    let seeds: Vec<u64> = (0..n_seeds).map(|k| replicate_seed(config.seed, k)).collect();
    let results = seeds
        .par_iter()
        .map(|&seed| sac_calibrate(&SacConfig { seed, ..config.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let deltas: Vec<f64> = results.iter().map(|r| r.achieved - r.target).collect();
    Ok(DeviationStudy {
        seeds,
        summary: DeviationSummary::from_deltas(&deltas),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::items::{DifficultySource, PoolConfig};

    fn small(target: f64, metric: Metric) -> SacConfig {
        let mut cfg = SacConfig::new(
            target,
            metric,
            LatentSpec::standard_normal(),
            ItemSpec::Generate(PoolConfig::rasch(15, DifficultySource::standard_normal())),
            3,
        );
        cfg.n_iter = 120;
        cfg.burn_in = 60;
        cfg.m_per_iter = 200;
        cfg
    }

    #[test]
    fn step_size_values() {
        let harmonic = StepSchedule { a: 1.0, offset: 0.0, gamma: 1.0 };
        assert_eq!(step_size(2, &harmonic), 0.5);
        assert!((step_size(1, &StepSchedule::default()) - 51f64.powf(-0.67)).abs() < 1e-15);
        assert!((step_size(1, &StepSchedule::default()) - 0.0718).abs() < 1e-4);
    }

    #[test]
    fn robbins_monro_conditions_for_default_schedule() {
        // gamma = 0.67: partial sums grow like n^0.33; squares converge
        let s = StepSchedule::default();
        let partial = |n: usize| (1..=n).map(|k| step_size(k, &s)).sum::<f64>();
        assert!(partial(100_000) > 2.0 * partial(10_000) - partial(1000));
        let sq: f64 = (1..=1_000_000).map(|k| step_size(k, &s).powi(2)).sum();
        let tail_bound = (50f64).powf(1.0 - 1.34) / 0.34;
        assert!(sq < tail_bound);
    }

    #[test]
    fn trace_respects_projection_and_average() {
        let r = sac_calibrate(&small(0.6, Metric::AvgInfo)).unwrap();
        assert_eq!(r.trace.len(), 120);
        assert!(r.trace.iter().all(|p| (0.3..=3.0).contains(&p.c)));
        let tail: Vec<f64> = r.trace[60..].iter().map(|p| p.c).collect();
        assert_eq!(r.c_star, stats::mean(&tail));
        assert_eq!(r.eval_m, 2000);
    }

    #[test]
    fn calibration_is_deterministic() {
        let cfg = small(0.6, Metric::Msem);
        assert_eq!(sac_calibrate(&cfg).unwrap(), sac_calibrate(&cfg).unwrap());
    }

    #[test]
    fn noise_free_fixed_point() {
        let items = ItemSpec::Generate(PoolConfig::rasch(15, DifficultySource::standard_normal()));
        let quad = FrozenQuadrature::draw(&LatentSpec::standard_normal(), &items, 1000, 9, None).unwrap();
        let c0 = 1.0;
        let target = quad.reliability(c0, Metric::AvgInfo);
        let mut cfg = small(target, Metric::AvgInfo);
        cfg.c_init = CInit::Value(c0);
        let traj = sac_iterate(&cfg, &mut FrozenBatches(quad)).unwrap();
        assert!(traj.trace.iter().all(|p| p.c == c0));
        assert_eq!(traj.c_star, c0);
    }

    #[test]
    fn config_guards() {
        let mut cfg = small(0.6, Metric::AvgInfo);
        cfg.burn_in = cfg.n_iter;
        assert!(sac_calibrate(&cfg).is_err());
        let mut cfg = small(0.6, Metric::AvgInfo);
        cfg.step.gamma = 0.5;
        assert!(sac_calibrate(&cfg).is_err());
        let mut cfg = small(0.6, Metric::AvgInfo);
        cfg.c_init = CInit::Value(5.0);
        assert!(sac_calibrate(&cfg).is_err());
    }

    #[test]
    fn infinite_msem_diverges_at_first_iteration() {
        let pool = ItemPool::rasch(&[-3.0, 3.0]).unwrap();
        let mut cfg = small(0.5, Metric::Msem);
        cfg.latent = LatentSpec::standard_normal().with_location_scale(0.0, 0.2);
        cfg.items = ItemSpec::Fixed(pool);
        cfg.interval = ScaleInterval::new(100.0, 1000.0).unwrap();
        cfg.c_init = CInit::Value(500.0);
        match sac_calibrate(&cfg) {
            Err(Error::DivergedObjective { iteration, .. }) => assert_eq!(iteration, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deviation_study_needs_two_seeds() {
        assert!(sac_deviation_study(&small(0.6, Metric::AvgInfo), 1).is_err());
        let d = DeviationSummary::from_deltas(&[0.005, -0.015, 0.03, -0.06]);
        assert_eq!(d.pct_within_001, 25.0);
        assert_eq!(d.pct_within_002, 50.0);
        assert_eq!(d.pct_within_005, 75.0);
        assert!((d.max_abs - 0.06).abs() < 1e-15);
    }
}
