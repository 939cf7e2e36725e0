//! Response generation from a finished calibration and plug-in realized
//! reliability.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eqc::CalibrationResult;
use crate::error::{Error, Result};
use crate::items::ItemPool;
use crate::latent::{csv_err, LatentSpec};
use crate::psychometrics::{logistic, InformationKernel, Metric};
use crate::rng::{Purpose, StreamId};
use crate::sac::SacResult;
use crate::stats;

/// Anything that fixes a form and a scale.
pub trait Calibrated {
    fn c_star(&self) -> f64;
    fn pool(&self) -> &ItemPool;
    fn target(&self) -> f64;
    fn metric(&self) -> Metric;
}

impl Calibrated for CalibrationResult {
    fn c_star(&self) -> f64 {
        self.c_star
    }
    fn pool(&self) -> &ItemPool {
        &self.pool
    }
    fn target(&self) -> f64 {
        self.target
    }
    fn metric(&self) -> Metric {
        self.metric
    }
}

impl Calibrated for SacResult {
    fn c_star(&self) -> f64 {
        self.c_star
    }
    fn pool(&self) -> &ItemPool {
        &self.pool
    }
    fn target(&self) -> f64 {
        self.target
    }
    fn metric(&self) -> Metric {
        self.metric
    }
}

/// Either calibrator's result, tagged by algorithm in serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Calibration {
    Eqc(CalibrationResult),
    Sac(SacResult),
}

impl Calibration {
    pub fn name(&self) -> &'static str {
        match self {
            Calibration::Eqc(_) => "eqc",
            Calibration::Sac(_) => "sac",
        }
    }

    pub fn latent(&self) -> &LatentSpec {
        match self {
            Calibration::Eqc(r) => &r.latent,
            Calibration::Sac(r) => &r.latent,
        }
    }

    pub fn achieved(&self) -> f64 {
        match self {
            Calibration::Eqc(r) => r.achieved,
            Calibration::Sac(r) => r.achieved,
        }
    }

    fn inner(&self) -> &dyn Calibrated {
        match self {
            Calibration::Eqc(r) => r,
            Calibration::Sac(r) => r,
        }
    }
}

impl Calibrated for Calibration {
    fn c_star(&self) -> f64 {
        self.inner().c_star()
    }
    fn pool(&self) -> &ItemPool {
        self.inner().pool()
    }
    fn target(&self) -> f64 {
        self.inner().target()
    }
    fn metric(&self) -> Metric {
        self.inner().metric()
    }
}

/// `n_persons x n_items` binary responses, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDataset {
    pub n_persons: usize,
    pub n_items: usize,
    pub responses: Vec<u8>,
    pub theta_true: Vec<f64>,
    pub pool: ItemPool,
    pub c_applied: f64,
    pub seed: u64,
}

impl ResponseDataset {
    pub fn get(&self, person: usize, item: usize) -> u8 {
        self.responses[person * self.n_items + item]
    }

    pub fn row(&self, person: usize) -> &[u8] {
        &self.responses[person * self.n_items..(person + 1) * self.n_items]
    }

    /// One line per person; `header` adds `item_1..item_I`.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if header {
            w.write_record((1..=self.n_items).map(|i| format!("item_{i}")))
                .map_err(csv_err)?;
        }
        for p in 0..self.n_persons {
            w.write_record(self.row(p).iter().map(|y| if *y == 1 { "1" } else { "0" }))
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| csv_err(e.into()))
    }
}

/// Draws `theta` from `latent` and then every response in row-major order,
/// both from the `Responses` stream of `seed`.
pub fn simulate_responses<C: Calibrated + ?Sized>(
    calibration: &C,
    latent: &LatentSpec,
    n_persons: usize,
    seed: u64,
) -> Result<ResponseDataset> {
    if n_persons == 0 {
        return Err(Error::EmptyRequest("n_persons must be at least 1".into()));
    }
    latent.validate()?;
    let pool = calibration.pool();
    pool.validate()?;
    let c = calibration.c_star();
    let mut rng = StreamId::new(seed, Purpose::Responses).rng();
    let theta = latent.draw_theta(n_persons, &mut rng);
    let scaled: Vec<(f64, f64)> = pool.items.iter().map(|it| (it.beta, c * it.lambda0)).collect();
    let mut responses = Vec::with_capacity(n_persons * pool.len());
    for &t in &theta {
        for &(b, a) in &scaled {
            let p = logistic(a * (t - b));
            responses.push(u8::from(rng.random::<f64>() < p));
        }
    }
    Ok(ResponseDataset {
        n_persons,
        n_items: pool.len(),
        responses,
        theta_true: theta,
        pool: pool.clone(),
        c_applied: c,
        seed,
    })
}

/// Plug-in reliability on the realized persons, using the true `theta` and
/// the calibrated item parameters. A sample without trait variance gives 0.
pub fn realized_reliability(dataset: &ResponseDataset, metric: Metric) -> Result<f64> {
    reliability_at(&dataset.theta_true, &dataset.pool, dataset.c_applied, metric)
}

/// [`realized_reliability`] on an explicit sample and scale.
pub fn reliability_at(theta: &[f64], pool: &ItemPool, c: f64, metric: Metric) -> Result<f64> {
    if theta.len() < 2 {
        return Err(Error::InsufficientData {
            what: "realized reliability",
            needed: 2,
            got: theta.len(),
        });
    }
    let s2 = stats::variance(theta);
    if s2 <= 0.0 || theta.iter().all(|&t| t == theta[0]) {
        return Ok(0.0);
    }
    let s = InformationKernel::new(theta, pool).summarize(c, s2, metric == Metric::Msem);
    Ok(s.value(metric))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub target: f64,
    pub c_eqc: f64,
    pub c_sac: f64,
    pub abs_diff: f64,
    pub pct_diff: f64,
    pub agree_5pct: bool,
}

/// Relative scale difference, in percent of the first calibration's `c`.
pub fn compare_calibrations<A, B>(eqc: &A, sac: &B) -> Result<Comparison>
where
    A: Calibrated + ?Sized,
    B: Calibrated + ?Sized,
{
    if eqc.target() != sac.target() {
        return Err(Error::MismatchedTargets {
            left: eqc.target(),
            right: sac.target(),
        });
    }
    let (c_eqc, c_sac) = (eqc.c_star(), sac.c_star());
    let abs_diff = (c_sac - c_eqc).abs();
    let pct_diff = 100.0 * abs_diff / c_eqc;
    Ok(Comparison {
        target: eqc.target(),
        c_eqc,
        c_sac,
        abs_diff,
        pct_diff,
        agree_5pct: pct_diff < 5.0,
    })
}
