use std::path::{Path, PathBuf};

use irtrel::datagen::{compare_calibrations, realized_reliability, simulate_responses, Calibrated, Calibration};
use irtrel::eqc::{eqc_calibrate, CalibrationStatus, EqcConfig, FrozenQuadrature};
use irtrel::items::{DifficultySource, EmpiricalPool, GenMethod, ItemPool, ItemSource, ItemSpec, Model, PoolConfig};
use irtrel::latent::{describe_shapes, LatentSpec, Shape};
use irtrel::psychometrics::{analytic_ceiling, monotonicity_scan, reference_ceiling, Metric, MonotonicityScan, ScaleInterval};
use irtrel::sac::{sac_calibrate, CInit, SacConfig, SacStatus};
use irtrel::study::{run_validation_study, OUTPUT_FILES};
use serde::Serialize;
use serde_json::json;

use crate::config::{latent_from_flags, latent_from_token, resolve_study, OutputFormat, RunConfig, StudyEcho};
use crate::document::{to_json, write_json, write_text, CalibrationDocument, Reproducibility, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};
use crate::{AlgorithmArg, BoundsArgs, CalibrateArgs, CompareArgs, DesignArgs, GenerateArgs, ShapesArgs, ValidateArgs};

#[derive(Debug, Serialize)]
struct DesignEcho<'a> {
    latent: &'a LatentSpec,
    model: Model,
    item_source: ItemSource,
    n_items: usize,
    pool_file: Option<&'a Path>,
    difficulty_mu: f64,
    difficulty_sigma: f64,
    method: GenMethod,
    m_quadrature: usize,
    c_bounds: [f64; 2],
}

struct Design {
    latent: LatentSpec,
    items: ItemSpec,
    interval: ScaleInterval,
}

impl Design {
    fn from_args(d: &DesignArgs) -> CliResult<Self> {
        let latent = latent_from_flags(&d.latent_shape, d.latent_params.as_deref())?;
        let interval = ScaleInterval::new(d.c_lower, d.c_upper)?;
        let items = match d.item_source {
            ItemSource::Custom => {
                let path = d
                    .pool_file
                    .as_ref()
                    .ok_or_else(|| CliError::usage("--item-source custom needs --pool-file"))?;
                let pool = ItemPool::load(path)?;
                if let Some(n) = d.items.filter(|&n| n != pool.len()) {
                    return Err(CliError::usage(format!(
                        "--items {n} does not match the {} items in `{}`",
                        pool.len(),
                        path.display()
                    )));
                }
                ItemSpec::Fixed(pool)
            }
            source => {
                let n = d
                    .items
                    .ok_or_else(|| CliError::usage("--items is required unless --item-source is custom"))?;
                let difficulty = match (source, &d.pool_file) {
                    (ItemSource::EmpiricalPool, Some(p)) => DifficultySource::Empirical(EmpiricalPool::load(p)?),
                    (ItemSource::EmpiricalPool, None) => DifficultySource::bundled_pool(),
                    _ => DifficultySource::Parametric {
                        mu: d.difficulty_mu,
                        sigma: d.difficulty_sigma,
                    },
                };
                let mut cfg = PoolConfig::for_model(d.model, n, difficulty);
                if d.model == Model::TwoPl {
                    cfg.method = d.method;
                }
                ItemSpec::Generate(cfg)
            }
        };
        items.validate()?;
        Ok(Design { latent, items, interval })
    }

    fn echo(&self, d: &DesignArgs) -> serde_json::Value {
        let echo = DesignEcho {
            latent: &self.latent,
            model: d.model,
            item_source: d.item_source,
            n_items: self.items.n_items(),
            pool_file: d.pool_file.as_deref(),
            difficulty_mu: d.difficulty_mu,
            difficulty_sigma: d.difficulty_sigma,
            method: d.method,
            m_quadrature: d.m,
            c_bounds: [self.interval.c_lower, self.interval.c_upper],
        };
        serde_json::to_value(echo).expect("echo serializes")
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn calibrate(a: &CalibrateArgs, argv: &[String]) -> CliResult<()> {
    let d = &a.design;
    let design = Design::from_args(d)?;
    let eqc_cfg = EqcConfig {
        m_quadrature: d.m,
        interval: design.interval,
        metric: a.metric,
        ..EqcConfig::new(a.target, design.latent.clone(), design.items.clone(), d.seed)
    };
    let mut config = design.echo(d);
    config["target"] = json!(a.target);
    config["metric"] = json!(a.metric);

    let calibration = match a.algorithm {
        AlgorithmArg::Eqc => {
            config["algorithm"] = json!("eqc");
            Calibration::Eqc(eqc_calibrate(&eqc_cfg)?)
        }
        AlgorithmArg::Sac => {
            let mut cfg = SacConfig {
                interval: design.interval,
                redraw_items: !a.no_redraw,
                ..SacConfig::new(a.target, a.metric, design.latent.clone(), design.items.clone(), d.seed)
            };
            cfg.n_iter = a.n_iter.unwrap_or(cfg.n_iter);
            cfg.burn_in = a.burn_in.unwrap_or(cfg.burn_in);
            cfg.m_per_iter = a.m_per_iter.unwrap_or(cfg.m_per_iter);
            cfg.eval_m = a.eval_m.or(cfg.eval_m);
            cfg.step.a = a.step_a.unwrap_or(cfg.step.a);
            cfg.step.offset = a.step_offset.unwrap_or(cfg.step.offset);
            cfg.step.gamma = a.step_gamma.unwrap_or(cfg.step.gamma);
            if let Some(c) = a.c_init {
                cfg.c_init = CInit::Value(c);
            }
            if a.warm_start {
                let warm = eqc_calibrate(&EqcConfig {
                    metric: Metric::AvgInfo,
                    ..eqc_cfg.clone()
                })?;
                if warm.status == CalibrationStatus::Success {
                    cfg.c_init = CInit::warm_start(&warm);
                } else {
                    log::warn!("EQC warm start ended at {}; starting SAC from the default", warm.status.name());
                }
            }
            config["algorithm"] = json!("sac");
            config["sac"] = json!({
                "n_iter": cfg.n_iter,
                "burn_in": cfg.burn_in,
                "m_per_iter": cfg.m_per_iter,
                "eval_m": cfg.eval_m(),
                "step": cfg.step,
                "c_init": cfg.c_init,
                "redraw_items": cfg.redraw_items,
                "warm_start": a.warm_start,
            });
            let r = sac_calibrate(&cfg)?;
            if let Some(path) = &a.trace {
                let mut buf = Vec::new();
                r.write_trace_csv(&mut buf)?;
                write_text(path, &String::from_utf8(buf).expect("csv is utf-8"))?;
            }
            Calibration::Sac(r)
        }
    };

    let doc = CalibrationDocument {
        schema_version: SCHEMA_VERSION,
        calibration,
        reproducibility: Reproducibility::new("calibrate", argv, config).seed("seed", d.seed),
    };
    if let Some(path) = &a.out {
        write_json(path, &doc)?;
    }
    print!("{}", calibration_report(&doc.calibration));
    match &doc.calibration {
        Calibration::Eqc(r) if r.status != CalibrationStatus::Success => Err(CliError::Infeasible(
            r.warning.clone().unwrap_or_else(|| r.status.name().into()),
        )),
        Calibration::Sac(r) if r.status == SacStatus::HitBoundaryOften => Err(CliError::Infeasible(format!(
            "{} of {} SAC iterates were clamped to [{}, {}]; target {} is likely outside the attainable range",
            r.boundary_hits, r.n_iter, r.interval.c_lower, r.interval.c_upper, r.target
        ))),
        _ => Ok(()),
    }
}

fn calibration_report(cal: &Calibration) -> String {
    let mut lines = vec![
        "Calibration summary".to_string(),
        format!("  {:<26}: {}", "Algorithm", cal.name()),
        format!("  {:<26}: {}", "Model", cal.pool().model.name()),
        format!("  {:<26}: {:.4}", "Target reliability", cal.target()),
        format!("  {:<26}: {:.4}", "Achieved reliability", cal.achieved()),
    ];
    let mut field = |name: &str, value: String| lines.push(format!("  {name:<26}: {value}"));
    match cal {
        Calibration::Eqc(r) => {
            field("Absolute error", format!("{:.2e}", r.abs_error));
            field("Scale factor (c*)", format!("{:.4}", r.c_star));
            field("Number of items (I)", r.n_items.to_string());
            field("Quadrature points (M)", r.m_quadrature.to_string());
            field("Reliability metric", r.metric.name().into());
            field("Latent variance", format!("{:.4}", r.latent_variance));
            field("Status", r.status.name().into());
            field(
                "Search bracket",
                format!("[{:.3}, {:.3}]", r.bracket.c_lower, r.bracket.c_upper),
            );
            field(
                "Bracket reliabilities",
                format!("[{:.4}, {:.4}]", r.bracket.rho_lower, r.bracket.rho_upper),
            );
        }
        Calibration::Sac(r) => {
            field("Absolute error", format!("{:.2e}", r.abs_error));
            field("Scale factor (c*)", format!("{:.4}", r.c_star));
            field("Number of items (I)", r.n_items.to_string());
            field("Iterations (burn-in)", format!("{} ({})", r.n_iter, r.burn_in));
            field("Batch size", r.m_per_iter.to_string());
            field("Evaluation points", r.eval_m.to_string());
            field("Reliability metric", r.metric.name().into());
            field("Starting scale", format!("{:.4}", r.c_start));
            field("Boundary hits", r.boundary_hits.to_string());
            field(
                "Status",
                match r.status {
                    SacStatus::Ok => "ok".into(),
                    SacStatus::HitBoundaryOften => "hit_boundary_often".into(),
                },
            );
            field(
                "Search bracket",
                format!("[{:.3}, {:.3}]", r.interval.c_lower, r.interval.c_upper),
            );
        }
    }
    lines.push(String::new());
    lines.join("\n")
}

#[derive(Debug, Serialize)]
struct BoundsReport {
    schema_version: u32,
    n_items: usize,
    m_quadrature: usize,
    latent_variance: f64,
    c_bounds: [f64; 2],
    rho_lower: f64,
    rho_upper: f64,
    w_bar_lower: f64,
    w_bar_upper: f64,
    analytic_ceiling: f64,
    reference_ceiling: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feasible: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    msem_scan: Option<MonotonicityScan>,
    reproducibility: Reproducibility,
}

pub fn bounds(a: &BoundsArgs, argv: &[String]) -> CliResult<()> {
    let d = &a.design;
    let design = Design::from_args(d)?;
    if let Some(t) = a.target {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::usage(format!("--target must lie in (0, 1), got {t}")));
        }
    }
    let quad = FrozenQuadrature::draw(&design.latent, &design.items, d.m, d.seed, None)?;
    let iv = design.interval;
    let (lo, hi) = (quad.summary(iv.c_lower), quad.summary(iv.c_upper));
    let scan = if a.scan_msem {
        Some(monotonicity_scan(&quad.pool, &quad.theta, Metric::Msem, iv, a.grid_size)?)
    } else {
        None
    };
    let feasible = a.target.map(|t| lo.rho_tilde < t && t < hi.rho_tilde);
    let n_items = quad.pool.len();
    let mut config = design.echo(d);
    config["target"] = json!(a.target);
    config["scan_msem"] = json!(a.scan_msem);
    config["grid_size"] = json!(a.grid_size);
    let report = BoundsReport {
        schema_version: SCHEMA_VERSION,
        n_items,
        m_quadrature: quad.theta.len(),
        latent_variance: quad.sigma2,
        c_bounds: [iv.c_lower, iv.c_upper],
        rho_lower: lo.rho_tilde,
        rho_upper: hi.rho_tilde,
        w_bar_lower: lo.w_bar,
        w_bar_upper: hi.w_bar,
        analytic_ceiling: analytic_ceiling(&quad.pool, quad.sigma2, iv.c_upper),
        reference_ceiling: reference_ceiling(n_items),
        target: a.target,
        feasible,
        msem_scan: scan,
        reproducibility: Reproducibility::new("bounds", argv, config).seed("seed", d.seed),
    };
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    println!("Feasibility bounds");
    println!("  {:<28}: {}", "Number of items (I)", n_items);
    println!("  {:<28}: {}", "Quadrature points (M)", report.m_quadrature);
    println!("  {:<28}: {:.4}", "Latent variance", report.latent_variance);
    println!("  {:<28}: [{}, {}]", "Search bracket", iv.c_lower, iv.c_upper);
    println!("  {:<28}: [{:.4}, {:.4}]", "Reliability at bracket", lo.rho_tilde, hi.rho_tilde);
    println!("  {:<28}: [{:.4}, {:.4}]", "MSEM reliability at bracket", lo.w_bar, hi.w_bar);
    println!("  {:<28}: {:.4}", "Analytic ceiling at c_upper", report.analytic_ceiling);
    println!("  {:<28}: {:.4}", "Reference ceiling", report.reference_ceiling);
    if let Some(s) = &report.msem_scan {
        let verdict = if s.is_monotone { "monotone" } else { "non-monotone" };
        println!(
            "  {:<28}: {verdict} ({} of {} steps not increasing)",
            "MSEM scan",
            s.violations.len(),
            s.grid.len() - 1
        );
    }
    match (a.target, feasible) {
        (Some(t), Some(true)) => {
            println!("  {:<28}: feasible ({t} inside the bracket)", "Target");
            Ok(())
        }
        (Some(t), Some(false)) => {
            println!("  {:<28}: infeasible", "Target");
            Err(CliError::Infeasible(format!(
                "target reliability {t} lies outside the attainable range ({:.4}, {:.4}) on c in [{}, {}]",
                lo.rho_tilde, hi.rho_tilde, iv.c_lower, iv.c_upper
            )))
        }
        _ => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct ResponseSidecar<'a> {
    schema_version: u32,
    responses_file: String,
    n_persons: usize,
    n_items: usize,
    algorithm: &'static str,
    target: f64,
    metric: Metric,
    c_applied: f64,
    realized_reliability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_true: Option<&'a [f64]>,
    reproducibility: Reproducibility,
}

pub fn generate(a: &GenerateArgs, argv: &[String]) -> CliResult<()> {
    let doc = CalibrationDocument::load(&a.calibration)?;
    let cal = &doc.calibration;
    let data = simulate_responses(cal, cal.latent(), a.n, a.seed)?;
    let realized = realized_reliability(&data, cal.metric())?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf, a.header)?;
    write_text(&a.out, &String::from_utf8(buf).expect("csv is utf-8"))?;

    let config = json!({
        "calibration": a.calibration,
        "n": a.n,
        "header": a.header,
        "emit_theta": a.emit_theta,
    });
    let cal_seed = match cal {
        Calibration::Eqc(r) => r.seed,
        Calibration::Sac(r) => r.seed,
    };
    let side = ResponseSidecar {
        schema_version: SCHEMA_VERSION,
        responses_file: a.out.display().to_string(),
        n_persons: data.n_persons,
        n_items: data.n_items,
        algorithm: cal.name(),
        target: cal.target(),
        metric: cal.metric(),
        c_applied: data.c_applied,
        realized_reliability: realized,
        theta_true: a.emit_theta.then_some(data.theta_true.as_slice()),
        reproducibility: Reproducibility::new("generate", argv, config)
            .seed("seed", a.seed)
            .seed("calibration_seed", cal_seed),
    };
    write_json(&sidecar(&a.out), &side)?;
    println!(
        "wrote {} x {} responses to {} (realized reliability {:.4})",
        data.n_persons,
        data.n_items,
        a.out.display(),
        realized
    );
    Ok(())
}

pub fn validate(a: &ValidateArgs, argv: &[String]) -> CliResult<()> {
    let (mut cfg, base) = match &a.config {
        Some(p) => (
            RunConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (RunConfig::default(), PathBuf::new()),
    };
    if a.master_seed.is_some() {
        cfg.master_seed = a.master_seed;
    }
    let resolved = resolve_study(&cfg, a.profile, &base)?;
    let conditions = resolved.design.conditions()?;
    let echo = StudyEcho::new(&resolved, conditions.len());
    let mut repro = Reproducibility::new("validate", argv, serde_json::to_value(&echo).expect("echo serializes"))
        .seed("master_seed", resolved.settings.master_seed);
    repro.version_tag = resolved.version_tag.clone();
    if a.dry_run {
        print!("{}", to_json(&json!({ "schema_version": SCHEMA_VERSION, "reproducibility": repro })));
        return Ok(());
    }
    let dir = a
        .out
        .clone()
        .or(resolved.output_dir.clone())
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set output.dir"))?;

    let summary = run_validation_study(&conditions, &resolved.settings, &dir)?;
    let mut files: Vec<&str> = OUTPUT_FILES.to_vec();
    if resolved.output_format == OutputFormat::Json {
        write_json(
            &dir.join("summary.json"),
            &json!({
                "schema_version": SCHEMA_VERSION,
                "by_algorithm": summary.by_algorithm,
                "by_target": summary.by_target,
                "replication_sd": summary.replication_sd,
            }),
        )?;
        files.push("summary.json");
    }
    let skipped: Vec<_> = summary
        .skipped
        .iter()
        .map(|(id, reason)| json!({ "condition_id": id, "reason": reason }))
        .collect();
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "files": files,
            "n_conditions": conditions.len(),
            "n_completed": summary.outcomes.len(),
            "n_records": summary.records.len(),
            "skipped": skipped,
            "reproducibility": repro,
        }),
    )?;

    println!(
        "{} conditions, {} completed, {} skipped; tables in {}",
        conditions.len(),
        summary.outcomes.len(),
        summary.skipped.len(),
        dir.display()
    );
    println!(
        "  {:<10} {:>6} {:>10} {:>10} {:>10} {:>9}",
        "algorithm", "n", "mean_delta", "sd_delta", "mae", "in_0.01"
    );
    for row in &summary.by_algorithm {
        let s = &row.deviation;
        println!(
            "  {:<10} {:>6} {:>10.5} {:>10.5} {:>10.5} {:>8.1}%",
            row.algorithm.name(),
            s.n,
            s.mean_delta,
            s.sd_delta,
            s.mae,
            s.pct_within_001
        );
    }
    Ok(())
}

pub fn compare(a: &CompareArgs, argv: &[String]) -> CliResult<()> {
    let left = CalibrationDocument::load(&a.eqc)?;
    let right = CalibrationDocument::load(&a.sac)?;
    let cmp = compare_calibrations(&left.calibration, &right.calibration)?;
    println!("Calibration comparison");
    println!("  {:<22}: {:.4}", "Target reliability", cmp.target);
    println!("  {:<22}: {:.6}", format!("{} c*", left.calibration.name()), cmp.c_eqc);
    println!("  {:<22}: {:.6}", format!("{} c*", right.calibration.name()), cmp.c_sac);
    println!("  {:<22}: {:.6}", "Absolute difference", cmp.abs_diff);
    println!("  {:<22}: {:.2}%", "Percent difference", cmp.pct_diff);
    println!(
        "  {:<22}: {}",
        "Agreement (< 5%)",
        if cmp.agree_5pct { "yes" } else { "no" }
    );
    if let Some(path) = &a.out {
        let config = json!({ "reference": a.eqc, "compared": a.sac });
        write_json(
            path,
            &json!({
                "schema_version": SCHEMA_VERSION,
                "comparison": cmp,
                "reproducibility": Reproducibility::new("compare", argv, config),
            }),
        )?;
    }
    Ok(())
}

pub fn shapes(a: &ShapesArgs, argv: &[String]) -> CliResult<()> {
    let specs: Vec<LatentSpec> = if a.shapes.is_empty() {
        Shape::validation_set().into_iter().map(LatentSpec::new).collect::<Vec<_>>()
    } else {
        a.shapes.iter().map(|s| latent_from_token(s)).collect::<CliResult<_>>()?
    }
    .into_iter()
    .map(|s| s.with_seed(a.seed))
    .collect();
    let table = describe_shapes(&specs, a.n)?;
    let mut density = Vec::new();
    table.write_density_csv(&mut density)?;
    let density = String::from_utf8(density).expect("csv is utf-8");
    match &a.out {
        Some(path) => {
            write_text(path, &density)?;
            let config = json!({ "shapes": specs, "n": a.n });
            write_json(
                &sidecar(path),
                &json!({
                    "schema_version": SCHEMA_VERSION,
                    "columns": table.columns.iter().map(|c| &c.label).collect::<Vec<_>>(),
                    "reproducibility": Reproducibility::new("shapes", argv, config).seed("seed", a.seed),
                }),
            )?;
        }
        None => print!("{density}"),
    }
    if let Some(path) = &a.moments {
        let mut buf = Vec::new();
        table.write_moments_csv(&mut buf)?;
        write_text(path, &String::from_utf8(buf).expect("csv is utf-8"))?;
    }
    Ok(())
}
