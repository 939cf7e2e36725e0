//! Flag value parsers and the study configuration file.
//!
//! A study file is TOML. Every key is optional; anything left out keeps the
//! value of the selected profile.
//!
//! ```toml
//! master_seed = 2024            # integer
//! version_tag = "run-a"         # copied into manifest.json
//! output_format = "csv"         # "csv" or "json" (json adds summary.json)
//! profile = "desk"              # "desk" or "full"
//!
//! [latent]
//! shapes = ["normal", { shape = "bimodal", delta = 0.7 }]
//!
//! [items]
//! models = ["rasch", "2pl"]
//! sources = ["parametric", "pool"]
//! n_items = [15, 30, 60]
//! difficulty_mu = 0.0
//! difficulty_sigma = 1.0
//! pool_file = "difficulties.csv"  # one `beta` column
//! mu_log = 0.0
//! sigma_log = 0.3
//! rho = -0.3
//!
//! [eqc]
//! m = 20000
//! c_lower = 0.1
//! c_upper = 10.0
//!
//! [sac]
//! n_iter = 1000
//! burn_in = 500
//! m_per_iter = 2000
//! eval_m = 20000
//! a = 1.0
//! A = 50.0
//! gamma = 0.67
//! redraw_items = true
//! warm_start = false
//!
//! [study]
//! n_persons = [100, 500, 2000]
//! targets = "mid"               # "mid", "all" or a list such as [0.6, 0.7]
//! algorithms = ["eqc", "sac_info", "sac_msem"]
//! replications = 200
//! allow_any_target = false
//!
//! [output]
//! dir = "study-out"
//! record_timing = false
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use irtrel::items::{EmpiricalPool, GenMethod, ItemSource, Model};
use irtrel::latent::{LatentSpec, Shape};
use irtrel::psychometrics::{Metric, ScaleInterval};
use irtrel::study::{Algorithm, FactorialDesign, StudySettings, TargetLevels};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub fn parse_model(s: &str) -> Result<Model, String> {
    match s.to_ascii_lowercase().as_str() {
        "rasch" | "1pl" => Ok(Model::Rasch),
        "2pl" | "twopl" => Ok(Model::TwoPl),
        _ => Err(format!("unknown model `{s}` (expected rasch or 2pl)")),
    }
}

pub fn parse_source(s: &str) -> Result<ItemSource, String> {
    match s {
        "parametric" => Ok(ItemSource::Parametric),
        "pool" | "empirical_pool" => Ok(ItemSource::EmpiricalPool),
        "custom" => Ok(ItemSource::Custom),
        _ => Err(format!("unknown item source `{s}` (expected parametric, pool or custom)")),
    }
}

pub fn parse_metric(s: &str) -> Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| format!("unknown metric `{s}` (expected avg_info or msem)"))
}

pub fn parse_method(s: &str) -> Result<GenMethod, String> {
    match s {
        "copula" => Ok(GenMethod::Copula),
        "conditional" => Ok(GenMethod::Conditional),
        "independent" => Ok(GenMethod::Independent),
        _ => Err(format!("unknown generation method `{s}` (expected copula, conditional or independent)")),
    }
}

/// Builds a latent spec from a shape name and `key=value` pairs separated by
/// commas. `mu` and `sigma` apply to every shape.
pub fn latent_from_flags(shape: &str, params: Option<&str>) -> CliResult<LatentSpec> {
    let mut spec = LatentSpec::new(Shape::from_name(shape).ok_or_else(|| {
        CliError::usage(format!(
            "unknown latent shape `{shape}` (expected normal, bimodal, skew_pos or heavy_tail)"
        ))
    })?);
    for pair in params.unwrap_or("").split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("latent parameter `{pair}` is not key=value")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("latent parameter `{key}` has non-numeric value `{value}`")))?;
        match (key.trim(), &mut spec.shape) {
            ("mu", _) => spec.mu = v,
            ("sigma", _) => spec.sigma = v,
            ("delta", Shape::Bimodal { delta }) => *delta = v,
            ("k", Shape::SkewPos { k }) => *k = v,
            ("df", Shape::HeavyTail { df }) => *df = v,
            (k, s) => {
                return Err(CliError::usage(format!(
                    "latent parameter `{k}` does not apply to shape {}",
                    s.name()
                )))
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// `name` or `name:key=value,...`, as accepted by `shapes --shape`.
pub fn latent_from_token(token: &str) -> CliResult<LatentSpec> {
    match token.split_once(':') {
        Some((shape, params)) => latent_from_flags(shape, Some(params)),
        None => latent_from_flags(token, None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ShapeEntry {
    Name(String),
    Spec(Shape),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TargetEntry {
    Level(String),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSection {
    pub shapes: Option<Vec<ShapeEntry>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemsSection {
    pub models: Option<Vec<String>>,
    pub sources: Option<Vec<String>>,
    pub n_items: Option<Vec<usize>>,
    pub difficulty_mu: Option<f64>,
    pub difficulty_sigma: Option<f64>,
    pub pool_file: Option<PathBuf>,
    pub mu_log: Option<f64>,
    pub sigma_log: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqcSection {
    pub m: Option<usize>,
    pub c_lower: Option<f64>,
    pub c_upper: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacSection {
    pub n_iter: Option<usize>,
    pub burn_in: Option<usize>,
    pub m_per_iter: Option<usize>,
    pub eval_m: Option<usize>,
    pub a: Option<f64>,
    #[serde(rename = "A")]
    pub offset: Option<f64>,
    pub gamma: Option<f64>,
    pub redraw_items: Option<bool>,
    pub warm_start: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub n_persons: Option<Vec<usize>>,
    pub targets: Option<TargetEntry>,
    pub algorithms: Option<Vec<String>>,
    pub replications: Option<usize>,
    pub allow_any_target: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub record_timing: Option<bool>,
}

/// Parsed study file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: Option<u64>,
    pub version_tag: Option<String>,
    pub output_format: Option<OutputFormat>,
    pub profile: Option<Profile>,
    #[serde(default)]
    pub latent: LatentSection,
    #[serde(default)]
    pub items: ItemsSection,
    #[serde(default)]
    pub eqc: EqcSection,
    #[serde(default)]
    pub sac: SacSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config {
            origin: origin.into(),
            message: e.to_string().trim_end().to_string(),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::parse(&text, &format!("config `{}`", path.display()))
    }
}

/// A study ready to run, together with what produced it.
#[derive(Debug, Clone)]
pub struct ResolvedStudy {
    pub profile: Profile,
    pub design: FactorialDesign,
    pub settings: StudySettings,
    pub output_format: OutputFormat,
    pub output_dir: Option<PathBuf>,
    pub version_tag: Option<String>,
}

fn field_err(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        origin: format!("field `{field}`"),
        message: message.into(),
    }
}

fn map_list<T>(field: &str, items: &[String], f: impl Fn(&str) -> Result<T, String>) -> CliResult<Vec<T>> {
    items.iter().map(|s| f(s).map_err(|m| field_err(field, m))).collect()
}

/// Profile defaults with the file's overrides applied. Relative paths in the
/// file are taken relative to `base_dir`.
pub fn resolve_study(cfg: &RunConfig, profile: Option<Profile>, base_dir: &Path) -> CliResult<ResolvedStudy> {
    let profile = profile.or(cfg.profile).unwrap_or_default();
    let mut design = match profile {
        Profile::Desk => FactorialDesign::desk(),
        Profile::Full => FactorialDesign::full(),
    };
    let mut s = StudySettings::validation(cfg.master_seed.unwrap_or(20_240_917));

    if let Some(shapes) = &cfg.latent.shapes {
        design.shapes = shapes
            .iter()
            .map(|e| match e {
                ShapeEntry::Name(n) => latent_from_token(n)
                    .map(|l| l.shape)
                    .map_err(|e| field_err("latent.shapes", e.to_string())),
                ShapeEntry::Spec(shape) => {
                    LatentSpec::new(shape.clone())
                        .validate()
                        .map_err(|e| field_err("latent.shapes", e.to_string()))?;
                    Ok(shape.clone())
                }
            })
            .collect::<CliResult<_>>()?;
    }

    let it = &cfg.items;
    if let Some(m) = &it.models {
        design.models = map_list("items.models", m, parse_model)?;
    }
    if let Some(src) = &it.sources {
        design.item_sources = map_list("items.sources", src, parse_source)?;
    }
    if let Some(n) = &it.n_items {
        design.n_items = n.clone();
    }
    if let Some(v) = it.difficulty_mu {
        s.difficulty_mu = v;
    }
    if let Some(v) = it.difficulty_sigma {
        s.difficulty_sigma = v;
    }
    if let Some(p) = &it.pool_file {
        s.empirical_pool = EmpiricalPool::load(&base_dir.join(p))?;
    }
    if let Some(v) = it.mu_log {
        s.discrimination.mu_log = v;
    }
    if let Some(v) = it.sigma_log {
        s.discrimination.sigma_log = v;
    }
    if let Some(v) = it.rho {
        s.discrimination.rho = v;
    }
    s.discrimination.validate()?;

    if let Some(m) = cfg.eqc.m {
        s.m_quadrature = m;
    }
    s.interval = ScaleInterval::new(
        cfg.eqc.c_lower.unwrap_or(s.interval.c_lower),
        cfg.eqc.c_upper.unwrap_or(s.interval.c_upper),
    )?;

    let sac = &cfg.sac;
    s.sac_n_iter = sac.n_iter.unwrap_or(s.sac_n_iter);
    s.sac_burn_in = sac.burn_in.unwrap_or(s.sac_burn_in);
    s.sac_m_per_iter = sac.m_per_iter.unwrap_or(s.sac_m_per_iter);
    s.sac_eval_m = sac.eval_m.or(s.sac_eval_m);
    s.sac_step.a = sac.a.unwrap_or(s.sac_step.a);
    s.sac_step.offset = sac.offset.unwrap_or(s.sac_step.offset);
    s.sac_step.gamma = sac.gamma.unwrap_or(s.sac_step.gamma);
    s.sac_step.validate()?;
    s.redraw_items = sac.redraw_items.unwrap_or(s.redraw_items);
    s.warm_start = sac.warm_start.unwrap_or(s.warm_start);
    if s.sac_burn_in >= s.sac_n_iter {
        return Err(field_err("sac.burn_in", "must be smaller than sac.n_iter"));
    }

    let st = &cfg.study;
    if let Some(n) = &st.n_persons {
        design.n_persons = n.clone();
    }
    if let Some(t) = &st.targets {
        design.targets = match t {
            TargetEntry::Level(l) if l == "mid" => TargetLevels::Mid,
            TargetEntry::Level(l) if l == "all" => TargetLevels::All,
            TargetEntry::Level(l) => {
                return Err(field_err("study.targets", format!("expected \"mid\", \"all\" or a list, got \"{l}\"")))
            }
            TargetEntry::List(v) => TargetLevels::Fixed(v.clone()),
        };
    }
    if let Some(a) = &st.algorithms {
        design.algorithms = map_list("study.algorithms", a, |s| {
            Algorithm::parse(s).ok_or_else(|| format!("unknown algorithm `{s}` (expected eqc, sac_info or sac_msem)"))
        })?;
    }
    design.replications = st.replications.unwrap_or(design.replications);
    design.allow_any_target = st.allow_any_target.unwrap_or(design.allow_any_target);
    s.record_timing = cfg.output.record_timing.unwrap_or(false);

    Ok(ResolvedStudy {
        profile,
        design,
        settings: s,
        output_format: cfg.output_format.unwrap_or_default(),
        output_dir: cfg.output.dir.as_ref().map(|d| base_dir.join(d)),
        version_tag: cfg.version_tag.clone(),
    })
}

/// Configuration echo stored in the reproducibility block of a study run.
#[derive(Debug, Clone, Serialize)]
pub struct StudyEcho {
    pub profile: Profile,
    pub master_seed: u64,
    pub m_quadrature: usize,
    pub c_bounds: [f64; 2],
    pub sac_n_iter: usize,
    pub sac_burn_in: usize,
    pub sac_m_per_iter: usize,
    pub sac_eval_m: Option<usize>,
    pub sac_step: irtrel::sac::StepSchedule,
    pub redraw_items: bool,
    pub warm_start: bool,
    pub discrimination: irtrel::items::DiscriminationSpec,
    pub difficulty_mu: f64,
    pub difficulty_sigma: f64,
    pub empirical_pool: String,
    pub shapes: Vec<Shape>,
    pub models: Vec<Model>,
    pub item_sources: Vec<ItemSource>,
    pub n_items: Vec<usize>,
    pub n_persons: Vec<usize>,
    pub targets: serde_json::Value,
    pub algorithms: Vec<Algorithm>,
    pub replications: usize,
    pub allow_any_target: bool,
    pub n_conditions: usize,
}

impl StudyEcho {
    pub fn new(r: &ResolvedStudy, n_conditions: usize) -> Self {
        let (s, d) = (&r.settings, &r.design);
        StudyEcho {
            profile: r.profile,
            master_seed: s.master_seed,
            m_quadrature: s.m_quadrature,
            c_bounds: [s.interval.c_lower, s.interval.c_upper],
            sac_n_iter: s.sac_n_iter,
            sac_burn_in: s.sac_burn_in,
            sac_m_per_iter: s.sac_m_per_iter,
            sac_eval_m: s.sac_eval_m,
            sac_step: s.sac_step,
            redraw_items: s.redraw_items,
            warm_start: s.warm_start,
            discrimination: s.discrimination,
            difficulty_mu: s.difficulty_mu,
            difficulty_sigma: s.difficulty_sigma,
            empirical_pool: pool_label(&s.empirical_pool),
            shapes: d.shapes.clone(),
            models: d.models.clone(),
            item_sources: d.item_sources.clone(),
            n_items: d.n_items.clone(),
            n_persons: d.n_persons.clone(),
            targets: match &d.targets {
                TargetLevels::Mid => "mid".into(),
                TargetLevels::All => "all".into(),
                TargetLevels::Fixed(v) => v.clone().into(),
            },
            algorithms: d.algorithms.clone(),
            replications: d.replications,
            allow_any_target: d.allow_any_target,
            n_conditions,
        }
    }
}

fn pool_label(pool: &Arc<EmpiricalPool>) -> String {
    format!("{} ({} difficulties)", pool.origin, pool.betas.len())
}
