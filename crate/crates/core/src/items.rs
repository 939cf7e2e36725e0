//! Item pools: difficulties from a parametric or empirical source and
//! baseline discriminations linked to them through a Gaussian copula.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::csv_err;
use crate::rng::{Purpose, StreamId};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Rasch,
    #[serde(rename = "twopl", alias = "2pl")]
    TwoPl,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Rasch => "rasch",
            Model::TwoPl => "twopl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemSource {
    Parametric,
    #[serde(alias = "pool")]
    EmpiricalPool,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMethod {
    Copula,
    Conditional,
    Independent,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub beta: f64,
    pub lambda0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoolMetadata {
    pub seed: Option<u64>,
    pub target_spearman: Option<f64>,
    pub achieved_spearman: Option<f64>,
}

/// A frozen test form: difficulties and baseline discriminations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPool {
    pub model: Model,
    pub source: ItemSource,
    pub gen_method: GenMethod,
    pub metadata: PoolMetadata,
    pub items: Vec<Item>,
}

impl ItemPool {
    /// A user-supplied form. `lambda0 = None` means Rasch.
    pub fn custom(betas: &[f64], lambdas: Option<&[f64]>) -> Result<Self> {
        let items = match lambdas {
            Some(l) => {
                if l.len() != betas.len() {
                    return Err(Error::domain("lambda", "needs one value per difficulty"));
                }
                betas
                    .iter()
                    .zip(l)
                    .map(|(&beta, &lambda0)| Item { beta, lambda0 })
                    .collect()
            }
            None => betas.iter().map(|&beta| Item { beta, lambda0: 1.0 }).collect(),
        };
        let pool = ItemPool {
            model: if lambdas.is_some() { Model::TwoPl } else { Model::Rasch },
            source: ItemSource::Custom,
            gen_method: GenMethod::Fixed,
            metadata: PoolMetadata::default(),
            items,
        };
        pool.validate()?;
        Ok(pool)
    }

    pub fn rasch(betas: &[f64]) -> Result<Self> {
        ItemPool::custom(betas, None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::EmptyRequest("item pool has no items".into()));
        }
        for (i, it) in self.items.iter().enumerate() {
            if !it.beta.is_finite() {
                return Err(Error::domain(format!("items[{i}].beta"), "must be finite"));
            }
            if !(it.lambda0.is_finite() && it.lambda0 > 0.0) {
                return Err(Error::domain(format!("items[{i}].lambda0"), "must be positive"));
            }
            if self.model == Model::Rasch && it.lambda0 != 1.0 {
                return Err(Error::domain(
                    format!("items[{i}].lambda0"),
                    "Rasch items have discrimination 1",
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.beta).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.lambda0).collect()
    }

    /// `S2 = sum of squared baseline discriminations`.
    pub fn sum_sq_lambda(&self) -> f64 {
        self.items.iter().map(|i| i.lambda0 * i.lambda0).sum()
    }

    /// Writes `beta,lambda` rows. Rasch pools omit the lambda column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let rasch = self.model == Model::Rasch;
        if rasch {
            w.write_record(["beta"]).map_err(csv_err)?;
        } else {
            w.write_record(["beta", "lambda"]).map_err(csv_err)?;
        }
        for it in &self.items {
            if rasch {
                w.write_record([it.beta.to_string()]).map_err(csv_err)?;
            } else {
                w.write_record([it.beta.to_string(), it.lambda0.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| csv_err(e.into()))
    }

    pub fn read_csv<R: Read>(input: R, origin: &str) -> Result<Self> {
        let (betas, lambdas) = read_pool_columns(input, origin)?;
        ItemPool::custom(&betas, lambdas.as_deref())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Ingestion {
            path: path.to_path_buf(),
            source,
        })?;
        ItemPool::read_csv(file, &path.display().to_string())
    }
}

/// Parses the `beta[,lambda]` CSV layout. Row numbers in errors are file
/// line numbers (the header is line 1).
fn read_pool_columns<R: Read>(input: R, origin: &str) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let parse_err = |row: usize, reason: String| Error::Parse {
        origin: origin.to_string(),
        row,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let beta_col = headers
        .iter()
        .position(|h| h == "beta")
        .ok_or_else(|| parse_err(1, "missing `beta` column".into()))?;
    let lambda_col = headers.iter().position(|h| h == "lambda");
    let mut betas = Vec::new();
    let mut lambdas = lambda_col.map(|_| Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        let field = |col: usize, name: &str| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(row, format!("`{name}` value `{raw}` is not a finite number")))
        };
        betas.push(field(beta_col, "beta")?);
        if let (Some(col), Some(ls)) = (lambda_col, lambdas.as_mut()) {
            ls.push(field(col, "lambda")?);
        }
    }
    if betas.is_empty() {
        return Err(parse_err(1, "pool file has no rows".into()));
    }
    Ok((betas, lambdas))
}

/// Difficulty values to resample from, e.g. an operational item bank.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPool {
    pub origin: String,
    pub betas: Vec<f64>,
}

const BUNDLED_POOL: &str = include_str!("../data/synthetic_pool.csv");

impl EmpiricalPool {
    /// Bundled synthetic bank: bimodal, modes near -2 and 1, SD 1.8.
    pub fn bundled() -> Arc<EmpiricalPool> {
        use std::sync::OnceLock;
        static POOL: OnceLock<Arc<EmpiricalPool>> = OnceLock::new();
        POOL.get_or_init(|| {
            let (betas, _) = read_pool_columns(BUNDLED_POOL.as_bytes(), "bundled pool")
                .expect("bundled pool parses");
            Arc::new(EmpiricalPool {
                origin: "bundled".into(),
                betas,
            })
        })
        .clone()
    }

    pub fn load(path: &Path) -> Result<Arc<EmpiricalPool>> {
        let file = std::fs::File::open(path).map_err(|source| Error::Ingestion {
            path: path.to_path_buf(),
            source,
        })?;
        let (betas, _) = read_pool_columns(file, &path.display().to_string())?;
        Ok(Arc::new(EmpiricalPool {
            origin: path.display().to_string(),
            betas,
        }))
    }
}

/// Values of the bundled pool: `0.45 N(-2, 0.8^2) + 0.55 N(1, 0.9^2)`, then
/// rescaled about the sample mean to a population SD of 1.8.
pub fn synthetic_pool_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = StreamId::new(seed, Purpose::Items).rng();
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            if rng.random::<f64>() < 0.45 {
                -2.0 + 0.8 * e
            } else {
                1.0 + 0.9 * e
            }
        })
        .collect();
    let m = stats::mean(&raw);
    let sd = (stats::variance(&raw) * (n - 1) as f64 / n as f64).sqrt();
    raw.iter().map(|x| m + (x - m) * 1.8 / sd).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum DifficultySource {
    Parametric { mu: f64, sigma: f64 },
    Empirical(Arc<EmpiricalPool>),
}

impl DifficultySource {
    pub fn standard_normal() -> Self {
        DifficultySource::Parametric { mu: 0.0, sigma: 1.0 }
    }

    pub fn bundled_pool() -> Self {
        DifficultySource::Empirical(EmpiricalPool::bundled())
    }

    fn item_source(&self) -> ItemSource {
        match self {
            DifficultySource::Parametric { .. } => ItemSource::Parametric,
            DifficultySource::Empirical(_) => ItemSource::EmpiricalPool,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DifficultySource::Parametric { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::domain("difficulty.mu", "must be finite"));
                }
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::domain("difficulty.sigma", "must be non-negative"));
                }
            }
            DifficultySource::Empirical(pool) => {
                if pool.betas.is_empty() {
                    return Err(Error::EmptyRequest(format!("empirical pool `{}` is empty", pool.origin)));
                }
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            DifficultySource::Parametric { mu, sigma } => (0..n)
                .map(|_| mu + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            DifficultySource::Empirical(pool) => (0..n)
                .map(|_| pool.betas[rng.random_range(0..pool.betas.len())])
                .collect(),
        }
    }
}

pub fn gen_difficulties(source: &DifficultySource, n_items: usize, seed: u64) -> Result<Vec<f64>> {
    if n_items == 0 {
        return Err(Error::EmptyRequest("n_items must be at least 1".into()));
    }
    source.validate()?;
    Ok(source.draw(n_items, &mut StreamId::new(seed, Purpose::Items).rng()))
}

/// Log-normal discrimination marginal and its target rank correlation with
/// difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationSpec {
    pub mu_log: f64,
    pub sigma_log: f64,
    pub rho: f64,
}

impl Default for DiscriminationSpec {
    fn default() -> Self {
        DiscriminationSpec {
            mu_log: 0.0,
            sigma_log: 0.3,
            rho: -0.3,
        }
    }
}

impl DiscriminationSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.mu_log.is_finite() {
            return Err(Error::domain("mu_log", "must be finite"));
        }
        if !(self.sigma_log.is_finite() && self.sigma_log >= 0.0) {
            return Err(Error::domain("sigma_log", "must be non-negative"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::domain("rho", format!("must lie in [-1, 1], got {}", self.rho)));
        }
        Ok(())
    }
}

fn discrimination_rng(seed: u64) -> crate::rng::StreamRng {
    StreamId::new(seed, Purpose::Items).with_index(1).rng()
}

/// Gaussian-copula discriminations. `betas` are untouched; only their ranks
/// enter, so any difficulty marginal is preserved.
pub fn copula_discriminations(betas: &[f64], spec: &DiscriminationSpec, seed: u64) -> Result<Vec<f64>> {
    copula_with(betas, spec, &mut discrimination_rng(seed))
}

fn copula_with<R: Rng + ?Sized>(betas: &[f64], spec: &DiscriminationSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    if betas.len() < 2 {
        return Err(Error::InsufficientData {
            what: "copula ranks",
            needed: 2,
            got: betas.len(),
        });
    }
    let n = betas.len() as f64;
    let noise = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    let lo = f64::MIN_POSITIVE;
    let hi = 1.0 - f64::EPSILON / 2.0;
    let out = stats::average_ranks(betas)
        .into_iter()
        .map(|rank| {
            let u = rank / (n + 1.0);
            let z_beta = stats::normal_quantile(u);
            let z_indep: f64 = rng.sample(StandardNormal);
            let z_lambda = spec.rho * z_beta + noise * z_indep;
            let v = stats::normal_cdf(z_lambda).clamp(lo, hi);
            (spec.mu_log + spec.sigma_log * stats::normal_quantile(v)).exp()
        })
        .collect();
    Ok(out)
}

/// Discriminations from a linear regression of `log lambda` on standardized
/// difficulty.
pub fn conditional_discriminations(betas: &[f64], spec: &DiscriminationSpec, seed: u64) -> Result<Vec<f64>> {
    conditional_with(betas, spec, &mut discrimination_rng(seed))
}

fn conditional_with<R: Rng + ?Sized>(
    betas: &[f64],
    spec: &DiscriminationSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if betas.len() < 2 {
        return Err(Error::InsufficientData {
            what: "conditional standardization",
            needed: 2,
            got: betas.len(),
        });
    }
    let m = stats::mean(betas);
    let sd = stats::std_dev(betas);
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::DegenerateInput("difficulties have zero variance".into()));
    }
    let noise = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    Ok(betas
        .iter()
        .map(|b| {
            let z: f64 = rng.sample(StandardNormal);
            (spec.mu_log + spec.sigma_log * (spec.rho * (b - m) / sd + noise * z)).exp()
        })
        .collect())
}

pub fn independent_discriminations(n: usize, spec: &DiscriminationSpec, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    Ok(independent_with(n, spec, &mut discrimination_rng(seed)))
}

fn independent_with<R: Rng + ?Sized>(n: usize, spec: &DiscriminationSpec, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| (spec.mu_log + spec.sigma_log * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect()
}

/// Recipe for drawing a test form.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolConfig {
    pub n_items: usize,
    pub model: Model,
    pub difficulty: DifficultySource,
    pub method: GenMethod,
    pub discrimination: DiscriminationSpec,
}

impl PoolConfig {
    pub fn rasch(n_items: usize, difficulty: DifficultySource) -> Self {
        PoolConfig {
            n_items,
            model: Model::Rasch,
            difficulty,
            method: GenMethod::Fixed,
            discrimination: DiscriminationSpec::default(),
        }
    }

    /// 2PL with the copula method and the default log-normal(0, 0.3^2), rho = -0.3.
    pub fn twopl(n_items: usize, difficulty: DifficultySource) -> Self {
        PoolConfig {
            n_items,
            model: Model::TwoPl,
            difficulty,
            method: GenMethod::Copula,
            discrimination: DiscriminationSpec::default(),
        }
    }

    pub fn for_model(model: Model, n_items: usize, difficulty: DifficultySource) -> Self {
        match model {
            Model::Rasch => PoolConfig::rasch(n_items, difficulty),
            Model::TwoPl => PoolConfig::twopl(n_items, difficulty),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 {
            return Err(Error::EmptyRequest("n_items must be at least 1".into()));
        }
        self.difficulty.validate()?;
        match (self.model, self.method) {
            (Model::Rasch, GenMethod::Fixed) => {}
            (Model::Rasch, m) => {
                return Err(Error::Configuration(format!(
                    "Rasch discriminations are fixed at 1; method `{m:?}` does not apply"
                )))
            }
            (Model::TwoPl, GenMethod::Fixed) => {
                return Err(Error::Configuration(
                    "fixed 2PL discriminations need a custom pool file".into(),
                ))
            }
            (Model::TwoPl, _) => self.discrimination.validate()?,
        }
        Ok(())
    }

    /// Draws one form from `rng`: difficulties first, then one copula/noise
    /// normal per item in item order.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ItemPool> {
        let betas = self.difficulty.draw(self.n_items, rng);
        let (lambdas, target) = match (self.model, self.method) {
            (Model::Rasch, _) => (vec![1.0; betas.len()], None),
            (_, GenMethod::Copula) => (copula_with(&betas, &self.discrimination, rng)?, Some(self.discrimination.rho)),
            (_, GenMethod::Conditional) => (
                conditional_with(&betas, &self.discrimination, rng)?,
                Some(self.discrimination.rho),
            ),
            (_, GenMethod::Independent) => (independent_with(betas.len(), &self.discrimination, rng), Some(0.0)),
            (_, GenMethod::Fixed) => unreachable!("rejected by validate"),
        };
        let achieved = (self.model == Model::TwoPl && betas.len() >= 2).then(|| {
            let logs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
            stats::spearman(&betas, &logs)
        });
        Ok(ItemPool {
            model: self.model,
            source: self.difficulty.item_source(),
            gen_method: self.method,
            metadata: PoolMetadata {
                seed: None,
                target_spearman: target,
                achieved_spearman: achieved,
            },
            items: betas
                .into_iter()
                .zip(lambdas)
                .map(|(beta, lambda0)| Item { beta, lambda0 })
                .collect(),
        })
    }
}

pub fn build_pool(config: &PoolConfig, seed: u64) -> Result<ItemPool> {
    config.validate()?;
    let mut pool = config.draw(&mut StreamId::new(seed, Purpose::Items).rng())?;
    pool.metadata.seed = Some(seed);
    Ok(pool)
}

/// Either a generator for fresh forms or one frozen form.
#[derive(Debug, Clone, PartialEq)]
pub enum ItemSpec {
    Generate(PoolConfig),
    Fixed(ItemPool),
}

impl ItemSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ItemSpec::Generate(cfg) => cfg.validate(),
            ItemSpec::Fixed(pool) => pool.validate(),
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            ItemSpec::Generate(cfg) => cfg.n_items,
            ItemSpec::Fixed(pool) => pool.len(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ItemPool> {
        match self {
            ItemSpec::Generate(cfg) => cfg.draw(rng),
            ItemSpec::Fixed(pool) => Ok(pool.clone()),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, ItemSpec::Fixed(_))
    }
}

/// Seed used to generate `data/synthetic_pool.csv`.
pub const SYNTHETIC_POOL_SEED: u64 = 20_240_917;
/// Number of values in the bundled pool.
pub const SYNTHETIC_POOL_SIZE: usize = 3000;
