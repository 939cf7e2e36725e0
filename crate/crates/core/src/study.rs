//! Factorial validation harness: calibrate each condition, replicate
//! response datasets, and tabulate calibration error and replication
//! variability.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{realized_reliability, simulate_responses, Calibrated, Calibration};
use crate::eqc::{eqc_calibrate, CalibrationStatus, EqcConfig};
use crate::error::{Error, Result};
use crate::items::{DifficultySource, DiscriminationSpec, EmpiricalPool, ItemSource, ItemSpec, Model, PoolConfig};
use crate::latent::{LatentSpec, Shape};
use crate::psychometrics::{Metric, ScaleInterval};
use crate::rng::combine;
use crate::sac::{sac_calibrate, CInit, DeviationSummary, SacConfig, SacStatus, StepSchedule};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Eqc,
    SacInfo,
    SacMsem,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Eqc, Algorithm::SacInfo, Algorithm::SacMsem];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Eqc => "eqc",
            Algorithm::SacInfo => "sac_info",
            Algorithm::SacMsem => "sac_msem",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn metric(self) -> Metric {
        match self {
            Algorithm::Eqc | Algorithm::SacInfo => Metric::AvgInfo,
            Algorithm::SacMsem => Metric::Msem,
        }
    }
}

/// Target levels used for each test length.
pub fn adaptive_targets(n_items: usize) -> Option<[f64; 4]> {
    match n_items {
        15 => Some([0.30, 0.40, 0.50, 0.60]),
        30 => Some([0.40, 0.50, 0.60, 0.70]),
        60 => Some([0.50, 0.60, 0.70, 0.80]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCondition {
    pub condition_id: u64,
    pub latent: LatentSpec,
    pub model: Model,
    pub item_source: ItemSource,
    pub n_items: usize,
    pub n_persons: usize,
    pub target_rho: f64,
    pub algorithm: Algorithm,
    pub replications: usize,
    #[serde(default)]
    pub allow_any_target: bool,
}

impl StudyCondition {
    fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("condition {}: {f}", self.condition_id);
        if self.n_items == 0 {
            return Err(Error::domain(field("n_items"), "must be at least 1"));
        }
        if self.n_persons < 2 {
            return Err(Error::domain(field("n_persons"), "must be at least 2"));
        }
        if self.replications == 0 {
            return Err(Error::domain(field("replications"), "must be at least 1"));
        }
        if self.item_source == ItemSource::Custom {
            return Err(Error::domain(field("item_source"), "must be parametric or empirical_pool"));
        }
        if !(self.target_rho > 0.0 && self.target_rho < 1.0) {
            return Err(Error::domain(field("target_rho"), "must lie in (0, 1)"));
        }
        self.latent.validate()
    }

    fn target_admissible(&self) -> bool {
        self.allow_any_target
            || adaptive_targets(self.n_items)
                .is_none_or(|ts| ts.iter().any(|t| (t - self.target_rho).abs() < 1e-9))
    }
}

/// Calibration and item-generation settings shared by every condition.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub master_seed: u64,
    pub m_quadrature: usize,
    pub interval: ScaleInterval,
    pub sac_n_iter: usize,
    pub sac_burn_in: usize,
    pub sac_step: StepSchedule,
    pub sac_m_per_iter: usize,
    pub sac_eval_m: Option<usize>,
    pub redraw_items: bool,
    /// Start SAC at the EQC solution of the same cell.
    pub warm_start: bool,
    pub discrimination: DiscriminationSpec,
    pub difficulty_mu: f64,
    pub difficulty_sigma: f64,
    pub empirical_pool: Arc<EmpiricalPool>,
    pub record_timing: bool,
}

impl StudySettings {
    /// M = 20000, c in [0.1, 10], SAC with N = 1000 (B = 500) and m = 2000.
    pub fn validation(master_seed: u64) -> Self {
        StudySettings {
            master_seed,
            m_quadrature: 20_000,
            interval: ScaleInterval::WIDE,
            sac_n_iter: 1000,
            sac_burn_in: 500,
            sac_step: StepSchedule::default(),
            sac_m_per_iter: 2000,
            sac_eval_m: None,
            redraw_items: true,
            warm_start: false,
            discrimination: DiscriminationSpec::default(),
            difficulty_mu: 0.0,
            difficulty_sigma: 1.0,
            empirical_pool: EmpiricalPool::bundled(),
            record_timing: false,
        }
    }

    fn difficulty(&self, source: ItemSource) -> DifficultySource {
        match source {
            ItemSource::EmpiricalPool => DifficultySource::Empirical(self.empirical_pool.clone()),
            _ => DifficultySource::Parametric {
                mu: self.difficulty_mu,
                sigma: self.difficulty_sigma,
            },
        }
    }

    fn item_spec(&self, cond: &StudyCondition) -> ItemSpec {
        let mut cfg = PoolConfig::for_model(cond.model, cond.n_items, self.difficulty(cond.item_source));
        cfg.discrimination = self.discrimination;
        ItemSpec::Generate(cfg)
    }

    pub fn eqc_config(&self, cond: &StudyCondition) -> EqcConfig {
        EqcConfig {
            m_quadrature: self.m_quadrature,
            interval: self.interval,
            ..EqcConfig::new(cond.target_rho, cond.latent.clone(), self.item_spec(cond), cell_seed(self.master_seed, cond))
        }
    }

    pub fn sac_config(&self, cond: &StudyCondition, metric: Metric) -> SacConfig {
        SacConfig {
            n_iter: self.sac_n_iter,
            burn_in: self.sac_burn_in,
            step: self.sac_step,
            m_per_iter: self.sac_m_per_iter,
            eval_m: self.sac_eval_m,
            interval: self.interval,
            redraw_items: self.redraw_items,
            ..SacConfig::new(
                cond.target_rho,
                metric,
                cond.latent.clone(),
                self.item_spec(cond),
                cell_seed(self.master_seed, cond),
            )
        }
    }
}

fn shape_words(shape: &Shape) -> Vec<u64> {
    match shape {
        Shape::Normal => vec![1],
        Shape::Bimodal { delta } => vec![2, delta.to_bits()],
        Shape::SkewPos { k } => vec![3, k.to_bits()],
        Shape::HeavyTail { df } => vec![4, df.to_bits()],
        Shape::Mixture { components } => {
            let mut w = vec![5];
            for c in components {
                w.extend([c.weight.to_bits(), c.mean.to_bits(), c.sd.to_bits()]);
            }
            w
        }
    }
}

/// Calibration seed of a condition. Depends on the structural cell (latent,
/// model, source, length, target) only, so conditions that differ in sample
/// size or algorithm share their calibration draws.
pub fn cell_seed(master_seed: u64, cond: &StudyCondition) -> u64 {
    let mut words = shape_words(&cond.latent.shape);
    words.extend([
        cond.latent.mu.to_bits(),
        cond.latent.sigma.to_bits(),
        cond.model as u64,
        cond.item_source as u64,
        cond.n_items as u64,
        cond.target_rho.to_bits(),
    ]);
    words.into_iter().fold(master_seed, combine)
}

/// Seed of one replicate dataset.
pub fn replicate_seed(master_seed: u64, condition_id: u64, replicate: usize) -> u64 {
    combine(combine(master_seed, condition_id), replicate as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub condition_id: u64,
    pub replicate: usize,
    pub algorithm: Algorithm,
    pub shape: String,
    pub model: Model,
    pub item_source: ItemSource,
    pub n_items: usize,
    pub n_persons: usize,
    pub target_rho: f64,
    pub c_star: f64,
    pub achieved_rho_design: f64,
    pub realized_rho: f64,
    pub delta: f64,
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionOutcome {
    pub condition: StudyCondition,
    pub c_star: f64,
    pub achieved: f64,
    pub delta: f64,
    pub status: String,
    pub realized_mean: f64,
    pub realized_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummaryRow {
    pub algorithm: Algorithm,
    #[serde(flatten)]
    pub deviation: DeviationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummaryRow {
    pub algorithm: Algorithm,
    pub n_items: usize,
    pub target_rho: f64,
    #[serde(flatten)]
    pub deviation: DeviationSummary,
}

/// Replication variability of realized reliability in one
/// `(shape, n_items, n_persons)` cell, averaged over the conditions in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSdRow {
    pub shape: String,
    pub n_items: usize,
    pub n_persons: usize,
    pub n_conditions: usize,
    pub mean_sd: f64,
    pub median_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub records: Vec<ValidationRecord>,
    pub outcomes: Vec<ConditionOutcome>,
    pub skipped: Vec<(u64, String)>,
    pub by_algorithm: Vec<AlgorithmSummaryRow>,
    pub by_target: Vec<TargetSummaryRow>,
    pub replication_sd: Vec<ReplicationSdRow>,
}

pub const OUTPUT_FILES: [&str; 4] = [
    "records.csv",
    "summary_by_algorithm.csv",
    "summary_by_target.csv",
    "replication_sd.csv",
];

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |source: std::io::Error| Error::Output {
        path: path.to_path_buf(),
        source,
    };
    let to_io = |e: csv::Error| io(std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    for r in rows {
        w.serialize(r).map_err(to_io)?;
    }
    w.flush().map_err(io)
}

#[derive(Serialize)]
struct FlatSummary {
    algorithm: Algorithm,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_items: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_rho: Option<f64>,
    n: usize,
    mean_delta: f64,
    sd_delta: f64,
    mae: f64,
    max_abs: f64,
    pct_within_001: f64,
    pct_within_002: f64,
    pct_within_005: f64,
}

impl FlatSummary {
    fn new(algorithm: Algorithm, n_items: Option<usize>, target_rho: Option<f64>, d: &DeviationSummary) -> Self {
        FlatSummary {
            algorithm,
            n_items,
            target_rho,
            n: d.n,
            mean_delta: d.mean_delta,
            sd_delta: d.sd_delta,
            mae: d.mae,
            max_abs: d.max_abs,
            pct_within_001: d.pct_within_001,
            pct_within_002: d.pct_within_002,
            pct_within_005: d.pct_within_005,
        }
    }
}

impl StudySummary {
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| Error::Output {
            path: dir.to_path_buf(),
            source,
        })?;
        write_rows(&dir.join(OUTPUT_FILES[0]), &self.records)?;
        let algo: Vec<_> = self
            .by_algorithm
            .iter()
            .map(|r| FlatSummary::new(r.algorithm, None, None, &r.deviation))
            .collect();
        write_rows(&dir.join(OUTPUT_FILES[1]), &algo)?;
        let target: Vec<_> = self
            .by_target
            .iter()
            .map(|r| FlatSummary::new(r.algorithm, Some(r.n_items), Some(r.target_rho), &r.deviation))
            .collect();
        write_rows(&dir.join(OUTPUT_FILES[2]), &target)?;
        write_rows(&dir.join(OUTPUT_FILES[3]), &self.replication_sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CalibrationKey {
    seed: u64,
    algorithm: Algorithm,
}

fn calibrate(settings: &StudySettings, cond: &StudyCondition) -> Result<std::result::Result<Calibration, String>> {
    let eqc_cfg = settings.eqc_config(cond);
    let run_sac = |metric: Metric, warm: Option<f64>| -> Result<std::result::Result<Calibration, String>> {
        let mut cfg = settings.sac_config(cond, metric);
        if let Some(c) = warm {
            cfg.c_init = CInit::WarmStart(c);
        }
        match sac_calibrate(&cfg) {
            Ok(r) => Ok(Ok(Calibration::Sac(r))),
            Err(e @ Error::DivergedObjective { .. }) => Ok(Err(e.to_string())),
            Err(e) => Err(e),
        }
    };
    match cond.algorithm {
        Algorithm::Eqc => {
            let r = eqc_calibrate(&eqc_cfg)?;
            if r.status == CalibrationStatus::Success {
                Ok(Ok(Calibration::Eqc(r)))
            } else {
                Ok(Err(r.warning.unwrap_or_else(|| r.status.name().into())))
            }
        }
        alg => {
            let warm = if settings.warm_start {
                let r = eqc_calibrate(&eqc_cfg)?;
                (r.status == CalibrationStatus::Success).then_some(r.c_star)
            } else {
                None
            };
            run_sac(alg.metric(), warm)
        }
    }
}

/// Runs every condition in memory. Work is spread over the rayon pool;
/// results are assembled in condition order.
pub fn run_study(conditions: &[StudyCondition], settings: &StudySettings) -> Result<StudySummary> {
    if conditions.is_empty() {
        return Err(Error::EmptyRequest("study has no conditions".into()));
    }
    settings.interval.validate()?;
    let mut skipped = Vec::new();
    let mut active = Vec::new();
    for cond in conditions {
        cond.validate()?;
        if cond.target_admissible() {
            active.push(cond);
        } else {
            let msg = format!(
                "target {} is outside the adaptive range for I = {}",
                cond.target_rho, cond.n_items
            );
            log::warn!("skipping condition {}: {msg}", cond.condition_id);
            skipped.push((cond.condition_id, msg));
        }
    }

    let mut keys: Vec<(CalibrationKey, &StudyCondition)> = Vec::new();
    let mut seen = HashMap::new();
    for &cond in &active {
        let key = CalibrationKey {
            seed: cell_seed(settings.master_seed, cond),
            algorithm: cond.algorithm,
        };
        if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(key) {
            e.insert(keys.len());
            keys.push((key, cond));
        }
    }
    let calibrations: Vec<_> = keys
        .par_iter()
        .map(|(_, cond)| calibrate(settings, cond))
        .collect::<Result<Vec<_>>>()?;

    let mut outcomes = Vec::new();
    let mut records = Vec::new();
    for &cond in &active {
        let key = CalibrationKey {
            seed: cell_seed(settings.master_seed, cond),
            algorithm: cond.algorithm,
        };
        let cal = match &calibrations[seen[&key]] {
            Ok(cal) => cal,
            Err(msg) => {
                log::warn!("skipping condition {}: {msg}", cond.condition_id);
                skipped.push((cond.condition_id, msg.clone()));
                continue;
            }
        };
        let status = match cal {
            Calibration::Eqc(r) => r.status.name().to_string(),
            Calibration::Sac(r) => match r.status {
                SacStatus::Ok => "ok".into(),
                SacStatus::HitBoundaryOften => "hit_boundary_often".into(),
            },
        };
        let achieved = cal.achieved();
        let delta = achieved - cond.target_rho;
        let rows: Vec<ValidationRecord> = (0..cond.replications)
            .into_par_iter()
            .map(|rep| {
                let start = Instant::now();
                let seed = replicate_seed(settings.master_seed, cond.condition_id, rep);
                let data = simulate_responses(cal, &cond.latent, cond.n_persons, seed)?;
                let realized = realized_reliability(&data, cond.algorithm.metric())?;
                Ok(ValidationRecord {
                    condition_id: cond.condition_id,
                    replicate: rep,
                    algorithm: cond.algorithm,
                    shape: cond.latent.shape.name().to_string(),
                    model: cond.model,
                    item_source: cond.item_source,
                    n_items: cond.n_items,
                    n_persons: cond.n_persons,
                    target_rho: cond.target_rho,
                    c_star: cal.c_star(),
                    achieved_rho_design: achieved,
                    realized_rho: realized,
                    delta,
                    runtime_ms: settings
                        .record_timing
                        .then(|| start.elapsed().as_secs_f64() * 1e3),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let realized: Vec<f64> = rows.iter().map(|r| r.realized_rho).collect();
        outcomes.push(ConditionOutcome {
            condition: cond.clone(),
            c_star: cal.c_star(),
            achieved,
            delta,
            status,
            realized_mean: stats::mean(&realized),
            realized_sd: if realized.len() > 1 { stats::std_dev(&realized) } else { 0.0 },
        });
        records.extend(rows);
    }

    Ok(StudySummary {
        by_algorithm: summarize_by_algorithm(&outcomes),
        by_target: summarize_by_target(&outcomes),
        replication_sd: summarize_replication_sd(&outcomes),
        records,
        outcomes,
        skipped,
    })
}

/// [`run_study`] followed by writing the four CSV tables into `output_dir`.
pub fn run_validation_study(
    conditions: &[StudyCondition],
    settings: &StudySettings,
    output_dir: &Path,
) -> Result<StudySummary> {
    if conditions.is_empty() {
        return Err(Error::EmptyRequest("study has no conditions".into()));
    }
    fs::create_dir_all(output_dir).map_err(|source| Error::Output {
        path: output_dir.to_path_buf(),
        source,
    })?;
    let summary = run_study(conditions, settings)?;
    summary.write_csvs(output_dir)?;
    Ok(summary)
}

fn summarize_by_algorithm(outcomes: &[ConditionOutcome]) -> Vec<AlgorithmSummaryRow> {
    let mut groups: Vec<(Algorithm, Vec<f64>)> = Vec::new();
    for o in outcomes {
        match groups.iter_mut().find(|(a, _)| *a == o.condition.algorithm) {
            Some((_, d)) => d.push(o.delta),
            None => groups.push((o.condition.algorithm, vec![o.delta])),
        }
    }
    groups.sort_by_key(|(a, _)| *a);
    groups
        .into_iter()
        .map(|(algorithm, d)| AlgorithmSummaryRow {
            algorithm,
            deviation: DeviationSummary::from_deltas(&d),
        })
        .collect()
}

fn summarize_by_target(outcomes: &[ConditionOutcome]) -> Vec<TargetSummaryRow> {
    let mut groups: Vec<((Algorithm, usize, u64), Vec<f64>)> = Vec::new();
    for o in outcomes {
        let c = &o.condition;
        let key = (c.algorithm, c.n_items, c.target_rho.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, d)) => d.push(o.delta),
            None => groups.push((key, vec![o.delta])),
        }
    }
    groups.sort_by(|a, b| {
        (a.0 .0, a.0 .1)
            .cmp(&(b.0 .0, b.0 .1))
            .then(f64::from_bits(a.0 .2).total_cmp(&f64::from_bits(b.0 .2)))
    });
    groups
        .into_iter()
        .map(|((algorithm, n_items, t), d)| TargetSummaryRow {
            algorithm,
            n_items,
            target_rho: f64::from_bits(t),
            deviation: DeviationSummary::from_deltas(&d),
        })
        .collect()
}

fn summarize_replication_sd(outcomes: &[ConditionOutcome]) -> Vec<ReplicationSdRow> {
    let mut groups: Vec<((String, usize, usize), Vec<f64>)> = Vec::new();
    for o in outcomes {
        let c = &o.condition;
        let key = (c.latent.shape.name().to_string(), c.n_items, c.n_persons);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, s)) => s.push(o.realized_sd),
            None => groups.push((key, vec![o.realized_sd])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    groups
        .into_iter()
        .map(|((shape, n_items, n_persons), mut sds)| {
            sds.sort_by(f64::total_cmp);
            let k = sds.len();
            let median = if k % 2 == 1 {
                sds[k / 2]
            } else {
                0.5 * (sds[k / 2 - 1] + sds[k / 2])
            };
            ReplicationSdRow {
                shape,
                n_items,
                n_persons,
                n_conditions: k,
                mean_sd: stats::mean(&sds),
                median_sd: median,
            }
        })
        .collect()
}

/// Which adaptive target levels a design uses.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetLevels {
    /// The third of the four adaptive levels: 0.50 / 0.60 / 0.70 for I = 15 / 30 / 60.
    Mid,
    All,
    Fixed(Vec<f64>),
}

/// Fully crossed design; condition ids are assigned in nesting order
/// shape > model > source > length > target > persons > algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorialDesign {
    pub shapes: Vec<Shape>,
    pub models: Vec<Model>,
    pub item_sources: Vec<ItemSource>,
    pub n_items: Vec<usize>,
    pub n_persons: Vec<usize>,
    pub targets: TargetLevels,
    pub algorithms: Vec<Algorithm>,
    pub replications: usize,
    pub allow_any_target: bool,
}

impl FactorialDesign {
    /// 4 shapes x 2 models x 2 sources x 3 lengths, one mid target each, at
    /// N in {100, 500, 2000}, all algorithms, K = 200.
    pub fn desk() -> Self {
        FactorialDesign {
            shapes: Shape::validation_set().to_vec(),
            models: vec![Model::Rasch, Model::TwoPl],
            item_sources: vec![ItemSource::Parametric, ItemSource::EmpiricalPool],
            n_items: vec![15, 30, 60],
            n_persons: vec![100, 500, 2000],
            targets: TargetLevels::Mid,
            algorithms: Algorithm::ALL.to_vec(),
            replications: 200,
            allow_any_target: false,
        }
    }

    /// 960 conditions per algorithm, K = 2000.
    pub fn full() -> Self {
        FactorialDesign {
            n_persons: vec![100, 250, 500, 1000, 2000],
            targets: TargetLevels::All,
            replications: 2000,
            ..FactorialDesign::desk()
        }
    }

    fn targets_for(&self, n_items: usize) -> Result<Vec<f64>> {
        match &self.targets {
            TargetLevels::Fixed(ts) => Ok(ts.clone()),
            level => {
                let ts = adaptive_targets(n_items).ok_or_else(|| {
                    Error::Configuration(format!(
                        "no adaptive target levels for I = {n_items}; list targets explicitly"
                    ))
                })?;
                Ok(match level {
                    TargetLevels::Mid => vec![ts[2]],
                    _ => ts.to_vec(),
                })
            }
        }
    }

    pub fn conditions(&self) -> Result<Vec<StudyCondition>> {
        let mut out = Vec::new();
        let mut id = 0;
        for shape in &self.shapes {
            for &model in &self.models {
                for &item_source in &self.item_sources {
                    for &n_items in &self.n_items {
                        for target_rho in self.targets_for(n_items)? {
                            for &n_persons in &self.n_persons {
                                for &algorithm in &self.algorithms {
                                    id += 1;
                                    out.push(StudyCondition {
                                        condition_id: id,
                                        latent: LatentSpec::new(shape.clone()),
                                        model,
                                        item_source,
                                        n_items,
                                        n_persons,
                                        target_rho,
                                        algorithm,
                                        replications: self.replications,
                                        allow_any_target: self.allow_any_target,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyRequest("design has no conditions".into()));
        }
        Ok(out)
    }
}
