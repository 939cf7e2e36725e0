//! Latent ability generators.
//!
//! Every shape is built from a base variable `z` with `E[z] = 0` and
//! `Var(z) = 1`; abilities are then `theta = mu + sigma * z`.
//!
//! | shape        | construction                               |
//! |--------------|--------------------------------------------|
//! | `normal`     | `z ~ N(0, 1)`                              |
//! | `bimodal`    | `z = s*delta + e`, `s = ±1`, `e ~ N(0, 1 - delta^2)` |
//! | `skew_pos`   | `z = (Gamma(k, 1) - k) / sqrt(k)`          |
//! | `heavy_tail` | `z = t_df / sqrt(df / (df - 2))`           |
//! | `mixture`    | normal mixture, re-centred and re-scaled   |
//!
//! The bimodal excess kurtosis is `-2 delta^4`, which follows from
//! `E[z^4] = delta^4 + 6 delta^2 (1 - delta^2) + 3 (1 - delta^2)^2`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamId};
use crate::stats::{self, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Normal,
    Bimodal { delta: f64 },
    SkewPos { k: f64 },
    HeavyTail { df: f64 },
    Mixture { components: Vec<MixtureComponent> },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Normal => "normal",
            Shape::Bimodal { .. } => "bimodal",
            Shape::SkewPos { .. } => "skew_pos",
            Shape::HeavyTail { .. } => "heavy_tail",
            Shape::Mixture { .. } => "mixture",
        }
    }

    /// The four shapes of the validation design with their reference parameters.
    pub fn validation_set() -> [Shape; 4] {
        [
            Shape::Normal,
            Shape::Bimodal { delta: 0.8 },
            Shape::SkewPos { k: 4.0 },
            Shape::HeavyTail { df: 5.0 },
        ]
    }

    /// Parses `normal`, `bimodal`, `skew_pos`, `heavy_tail` with their
    /// reference parameters. Mixtures need explicit components.
    pub fn from_name(name: &str) -> Option<Shape> {
        Shape::validation_set().into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    #[serde(flatten)]
    pub shape: Shape,
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl LatentSpec {
    pub fn new(shape: Shape) -> Self {
        LatentSpec {
            shape,
            mu: 0.0,
            sigma: 1.0,
            seed: 0,
        }
    }

    pub fn standard_normal() -> Self {
        LatentSpec::new(Shape::Normal)
    }

    pub fn with_location_scale(mut self, mu: f64, sigma: f64) -> Self {
        self.mu = mu;
        self.sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::domain("mu", "must be finite"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::domain("sigma", "must be a positive finite number"));
        }
        match &self.shape {
            Shape::Normal => {}
            Shape::Bimodal { delta } => {
                if !(*delta > 0.0 && *delta < 1.0) {
                    return Err(Error::domain("delta", format!("must lie in (0, 1), got {delta}")));
                }
            }
            Shape::SkewPos { k } => {
                if !(k.is_finite() && *k > 0.0) {
                    return Err(Error::domain("k", format!("must be positive, got {k}")));
                }
            }
            Shape::HeavyTail { df } => {
                if !(df.is_finite() && *df > 2.0) {
                    return Err(Error::domain(
                        "df",
                        format!("must exceed 2 for a finite variance, got {df}"),
                    ));
                }
                if *df <= 4.0 {
                    log::warn!("heavy_tail df = {df}: fourth moment does not exist");
                }
            }
            Shape::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::domain("components", "mixture needs at least one component"));
                }
                for (i, c) in components.iter().enumerate() {
                    if !(c.weight.is_finite() && c.weight > 0.0) {
                        return Err(Error::domain(
                            format!("components[{i}].weight"),
                            "must be positive",
                        ));
                    }
                    if !(c.sd.is_finite() && c.sd > 0.0) {
                        return Err(Error::domain(format!("components[{i}].sd"), "must be positive"));
                    }
                    if !c.mean.is_finite() {
                        return Err(Error::domain(format!("components[{i}].mean"), "must be finite"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws `n` pre-standardized values. The spec must already be valid.
    pub fn draw_z<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match &self.shape {
            Shape::Normal => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            Shape::Bimodal { delta } => {
                let within = (1.0 - delta * delta).sqrt();
                (0..n)
                    .map(|_| {
                        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        let e: f64 = rng.sample(StandardNormal);
                        s * delta + within * e
                    })
                    .collect()
            }
            Shape::SkewPos { k } => {
                let gamma = Gamma::new(*k, 1.0).expect("validated shape");
                let root_k = k.sqrt();
                (0..n).map(|_| (gamma.sample(rng) - k) / root_k).collect()
            }
            Shape::HeavyTail { df } => {
                let t = StudentT::new(*df).expect("validated df");
                let scale = (df / (df - 2.0)).sqrt();
                (0..n).map(|_| t.sample(rng) / scale).collect()
            }
            Shape::Mixture { components } => {
                let mix = StandardizedMixture::new(components);
                (0..n).map(|_| mix.sample(rng)).collect()
            }
        }
    }

    /// Draws `n` abilities `mu + sigma * z`. The spec must already be valid.
    pub fn draw_theta<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut z = self.draw_z(n, rng);
        for v in &mut z {
            *v = self.mu + self.sigma * *v;
        }
        z
    }

    fn stream(&self) -> StreamId {
        StreamId::new(self.seed, Purpose::Latent)
    }
}

struct StandardizedMixture {
    cumulative: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl StandardizedMixture {
    fn new(components: &[MixtureComponent]) -> Self {
        let (weights, means, sds) = standardized_components(components);
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        StandardizedMixture {
            cumulative,
            means,
            sds,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let j = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let e: f64 = rng.sample(StandardNormal);
        self.means[j] + self.sds[j] * e
    }
}

/// Normalized weights with component means/sds mapped onto the unit-variance,
/// zero-mean scale.
fn standardized_components(components: &[MixtureComponent]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let weights: Vec<f64> = components.iter().map(|c| c.weight / total).collect();
    let m: f64 = components.iter().zip(&weights).map(|(c, w)| w * c.mean).sum();
    let second: f64 = components
        .iter()
        .zip(&weights)
        .map(|(c, w)| w * (c.sd * c.sd + c.mean * c.mean))
        .sum();
    let s = (second - m * m).sqrt();
    let means = components.iter().map(|c| (c.mean - m) / s).collect();
    let sds = components.iter().map(|c| c.sd / s).collect();
    (weights, means, sds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSample {
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    pub spec: LatentSpec,
    pub sample_moments: Moments,
}

pub fn sample_latent(spec: &LatentSpec, n: usize) -> Result<LatentSample> {
    if n == 0 {
        return Err(Error::EmptyRequest("latent sample size must be at least 1".into()));
    }
    spec.validate()?;
    let z = spec.draw_z(n, &mut spec.stream().rng());
    let theta: Vec<f64> = z.iter().map(|v| spec.mu + spec.sigma * v).collect();
    let sample_moments = stats::moments(&theta);
    Ok(LatentSample {
        theta,
        z,
        spec: spec.clone(),
        sample_moments,
    })
}

/// Closed-form moments of the pre-standardized variable. `None` marks a
/// moment that does not exist for the given parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalMoments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

pub fn theoretical_moments(spec: &LatentSpec) -> Result<TheoreticalMoments> {
    spec.validate()?;
    let (skewness, excess_kurtosis) = match &spec.shape {
        Shape::Normal => (Some(0.0), Some(0.0)),
        Shape::Bimodal { delta } => (Some(0.0), Some(-2.0 * delta.powi(4))),
        Shape::SkewPos { k } => (Some(2.0 / k.sqrt()), Some(6.0 / k)),
        Shape::HeavyTail { df } => (
            (*df > 3.0).then_some(0.0),
            (*df > 4.0).then(|| 6.0 / (df - 4.0)),
        ),
        Shape::Mixture { components } => {
            let (w, a, b) = standardized_components(components);
            let mut third = 0.0;
            let mut fourth = 0.0;
            for j in 0..w.len() {
                let (a, b2) = (a[j], b[j] * b[j]);
                third += w[j] * (a.powi(3) + 3.0 * a * b2);
                fourth += w[j] * (a.powi(4) + 6.0 * a * a * b2 + 3.0 * b2 * b2);
            }
            (Some(third), Some(fourth - 3.0))
        }
    };
    Ok(TheoreticalMoments {
        mean: 0.0,
        variance: 1.0,
        skewness,
        excess_kurtosis,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityColumn {
    pub label: String,
    pub density: Vec<f64>,
    pub moments: Moments,
}

/// Kernel density estimates of several shapes on a shared grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensityTable {
    pub grid: Vec<f64>,
    pub columns: Vec<DensityColumn>,
}

impl DensityTable {
    pub fn write_density_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["theta".to_string()];
        header.extend(self.columns.iter().map(|c| c.label.clone()));
        w.write_record(&header).map_err(csv_err)?;
        for (i, t) in self.grid.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.columns.iter().map(|c| c.density[i].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| csv_err(e.into()))
    }

    pub fn write_moments_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["shape", "mean", "var", "skew", "excess_kurtosis"])
            .map_err(csv_err)?;
        for c in &self.columns {
            let m = &c.moments;
            w.write_record([
                c.label.clone(),
                m.mean.to_string(),
                m.var.to_string(),
                m.skew.to_string(),
                m.excess_kurtosis.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| csv_err(e.into()))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    };
    Error::Output {
        path: "<csv>".into(),
        source,
    }
}

/// Evenly spaced grid on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

pub fn describe_shapes(specs: &[LatentSpec], n: usize) -> Result<DensityTable> {
    describe_shapes_on(specs, n, &linear_grid(-4.0, 4.0, 161))
}

pub fn describe_shapes_on(specs: &[LatentSpec], n: usize, grid: &[f64]) -> Result<DensityTable> {
    if specs.is_empty() {
        return Ok(DensityTable::default());
    }
    if n < 100 {
        return Err(Error::domain("n", format!("density summaries need n >= 100, got {n}")));
    }
    let mut columns = Vec::with_capacity(specs.len());
    for spec in specs {
        let sample = sample_latent(spec, n)?;
        let base = spec.shape.name();
        let dupes = columns
            .iter()
            .filter(|c: &&DensityColumn| c.label == base || c.label.starts_with(&format!("{base}_")))
            .count();
        let label = if dupes == 0 {
            base.to_string()
        } else {
            format!("{base}_{}", dupes + 1)
        };
        columns.push(DensityColumn {
            label,
            density: gaussian_kde(&sample.theta, grid),
            moments: sample.sample_moments,
        });
    }
    Ok(DensityTable {
        grid: grid.to_vec(),
        columns,
    })
}

/// Gaussian kernel density estimate with Silverman's rule-of-thumb bandwidth.
pub fn gaussian_kde(xs: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let iqr = q(0.75) - q(0.25);
    let sd = stats::std_dev(xs);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bw = 0.9 * spread * n.powf(-0.2);
    let norm = 1.0 / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            // sorted sample: only points within 8 bandwidths contribute
            let lo = sorted.partition_point(|&x| x < g - 8.0 * bw);
            let hi = sorted.partition_point(|&x| x <= g + 8.0 * bw);
            sorted[lo..hi]
                .iter()
                .fold(0.0, |acc, &x| {
                    let u = (g - x) / bw;
                    acc + (-0.5 * u * u).exp()
                })
                * norm
        })
        .collect()
}
