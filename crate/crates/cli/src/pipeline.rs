//! Stage execution: solve → classify → trace → checks → dimension, with
//! deterministic artifacts and a run report carrying the file manifest.

use crate::config::{
    ChecksStage, ClassifyStage, DimensionStage, PointSelection, RunConfig, SolveStage,
    StageConfig, StageKind, TraceStage,
};
use anyhow::{Context, Result};
use parobs_core::fixtures::PolyP;
use parobs_core::monitor::{
    self, CheckReport, EpsilonRule, FunctionalTrace, LambdaEstimate, SaturationStage,
};
use parobs_core::pardim::{self, DimensionEstimate};
use parobs_core::singular::{self, PointClass, ScanOpts, SingularScan};
use parobs_core::solver::{self, SolveSummary, SolvedField};
use parobs_core::GaussQuad;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Default, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classified: Option<ScanSummary>,
    pub checks: Vec<CheckReport>,
    pub lambda_estimates: Vec<LambdaReportEntry>,
    pub saturation: Vec<SaturationStage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimension: Option<DimensionEstimate>,
    pub notices: Vec<String>,
    pub stage_seconds: Vec<(String, f64)>,
    pub manifest: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanSummary {
    pub singular: usize,
    pub regular: usize,
    pub undecided: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaReportEntry {
    pub base_x: Vec<f64>,
    pub base_t: f64,
    pub gamma: f64,
    pub estimate: LambdaEstimate,
}

/// Everything the checks stage serializes.
#[derive(Debug, Default, Serialize)]
struct ChecksArtifact {
    checks: Vec<CheckReport>,
    lambda_estimates: Vec<LambdaReportEntry>,
    saturation: Vec<SaturationStage>,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub all_checks_passed: bool,
    pub checks_ran: bool,
}

/// Default limits for the fitted constants; scenario configs override
/// them per check.
pub fn default_limits() -> BTreeMap<String, f64> {
    monitor::shipped_limits()
}

struct Writer {
    dir: PathBuf,
    manifest: Vec<ManifestEntry>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.manifest.push(ManifestEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        let meta = std::fs::metadata(path)?;
        let rel = path
            .strip_prefix(&self.dir)
            .unwrap_or(path)
            .to_string_lossy()
            .to_string();
        self.manifest.push(ManifestEntry {
            path: rel,
            bytes: meta.len(),
        });
        Ok(())
    }

    /// Every manifest entry must exist with the recorded byte length.
    fn verify(&self) -> Result<()> {
        for entry in &self.manifest {
            let meta = std::fs::metadata(self.dir.join(&entry.path))
                .with_context(|| format!("manifest entry {} missing", entry.path))?;
            anyhow::ensure!(
                meta.len() == entry.bytes,
                "manifest entry {} has {} bytes, recorded {}",
                entry.path,
                meta.len(),
                entry.bytes
            );
        }
        Ok(())
    }
}

fn stage_config<'a, T, F>(config: &'a RunConfig, pick: F) -> Option<&'a T>
where
    F: Fn(&'a StageConfig) -> Option<&'a T>,
{
    config.pipeline.iter().find_map(pick)
}

pub fn run(
    config: &RunConfig,
    kinds: &[StageKind],
    out_dir: &Path,
    resolution: Option<f64>,
) -> Result<RunOutcome> {
    let mut writer = Writer::new(out_dir)?;
    let mut report = RunReport {
        scenario: config.scenario.name(),
        config: serde_json::to_value(config)?,
        ..RunReport::default()
    };
    let mut all_passed = true;
    let mut checks_ran = false;
    let want = |k: StageKind| kinds.contains(&k);

    let scenario = config.scenario.resolve(resolution)?;

    // --- solve ---
    let t0 = Instant::now();
    let solve_cfg = stage_config(config, |s| match s {
        StageConfig::Solve(c) => Some(c),
        _ => None,
    })
    .cloned()
    .unwrap_or(SolveStage { dump_field: true });
    let solve_report = solver::solve(&scenario).context("solve stage")?;
    report.solve = Some(solve_report.summary.clone());
    writer.write_json("solve.json", &solve_report.summary)?;
    if solve_cfg.dump_field {
        let (bin, json) = solver::dump_field(solve_report.field.u(), &writer.dir.join("field"))?;
        writer.record(&bin)?;
        writer.record(&json)?;
    }
    report
        .stage_seconds
        .push(("solve".into(), t0.elapsed().as_secs_f64()));
    let field: &SolvedField = &solve_report.field;

    // --- classify ---
    let mut scan: Option<SingularScan> = None;
    if want(StageKind::Classify) || want(StageKind::Trace) || want(StageKind::Checks) || want(StageKind::Dimension) {
        let t0 = Instant::now();
        let cfg = stage_config(config, |s| match s {
            StageConfig::Classify(c) => Some(c),
            _ => None,
        })
        .cloned()
        .unwrap_or_default();
        let result = classify_stage(field, &scenario, &cfg);
        report.classified = Some(ScanSummary {
            singular: result.singular.len(),
            regular: result.regular,
            undecided: result.undecided.len(),
            skipped: result.skipped,
        });
        writer.write_json("singular.json", &result)?;
        scan = Some(result);
        report
            .stage_seconds
            .push(("classify".into(), t0.elapsed().as_secs_f64()));
    }

    // --- trace ---
    let mut traces: Vec<FunctionalTrace> = Vec::new();
    let trace_cfg = stage_config(config, |s| match s {
        StageConfig::Trace(c) => Some(c),
        _ => None,
    })
    .cloned()
    .unwrap_or_default();
    if want(StageKind::Trace) || want(StageKind::Checks) {
        let t0 = Instant::now();
        let points = base_points(&trace_cfg.points, scan.as_ref(), trace_cfg.max_points);
        if points.is_empty() {
            report
                .notices
                .push("trace: no singular base points; stage skipped".into());
        }
        let quad = GaussQuad::default_for(scenario.grid.dim);
        for (idx, (x0, t0_base, p2)) in points.iter().enumerate() {
            let r_grid = radius_grid(field, &trace_cfg);
            for &gamma in &trace_cfg.gammas {
                match monitor::trace(field, x0, *t0_base, p2, gamma, &r_grid, &quad) {
                    Ok(tr) => {
                        let name = format!("trace_{idx}_gamma_{gamma}.csv");
                        writer.write(&name, monitor::trace_to_csv(&tr).as_bytes())?;
                        traces.push(tr);
                    }
                    Err(e) => report
                        .notices
                        .push(format!("trace at {x0:?}, gamma {gamma}: {e}")),
                }
            }
        }
        report
            .stage_seconds
            .push(("trace".into(), t0.elapsed().as_secs_f64()));
    }

    // --- checks ---
    if want(StageKind::Checks) {
        let t0 = Instant::now();
        let cfg = stage_config(config, |s| match s {
            StageConfig::Checks(c) => Some(c),
            _ => None,
        })
        .cloned()
        .unwrap_or_default();
        let artifact = checks_stage(field, &scenario, &traces, scan.as_ref(), &cfg, &mut report)?;
        checks_ran = true;
        all_passed &= artifact.checks.iter().all(|c| c.pass);
        writer.write_json("checks.json", &artifact)?;
        report.checks = artifact.checks;
        report.lambda_estimates = artifact.lambda_estimates;
        report.saturation = artifact.saturation;
        report
            .stage_seconds
            .push(("checks".into(), t0.elapsed().as_secs_f64()));
    }

    // --- dimension ---
    if want(StageKind::Dimension) {
        let t0 = Instant::now();
        let cfg = stage_config(config, |s| match s {
            StageConfig::Dimension(c) => Some(c),
            _ => None,
        })
        .cloned()
        .unwrap_or_default();
        match dimension_stage(scan.as_ref(), &cfg, scenario.grid.dim) {
            Some(Ok(est)) => {
                let mut csv = String::from("log_inv_delta,log_count\n");
                for (d, c) in est.deltas.iter().zip(&est.counts) {
                    csv.push_str(&format!(
                        "{},{}\n",
                        (1.0 / d).ln(),
                        (*c.max(&1) as f64).ln()
                    ));
                }
                writer.write("dimension.csv", csv.as_bytes())?;
                writer.write_json("dimension.json", &est)?;
                report.dimension = Some(est);
            }
            Some(Err(e)) => report.notices.push(format!("dimension: {e}")),
            None => report
                .notices
                .push("dimension: empty singular set; stage skipped".into()),
        }
        report
            .stage_seconds
            .push(("dimension".into(), t0.elapsed().as_secs_f64()));
    }

    // --- plot data index + report ---
    let index: Vec<&ManifestEntry> = writer
        .manifest
        .iter()
        .filter(|e| e.path.ends_with(".csv"))
        .collect();
    let index_doc = serde_json::json!({
        "traces": index.iter().map(|e| e.path.clone()).collect::<Vec<_>>(),
    });
    writer.write_json("index.json", &index_doc)?;

    writer.verify()?;
    report.manifest = writer.manifest.clone();
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(out_dir.join("run_report.json"), text)?;

    Ok(RunOutcome {
        report,
        all_checks_passed: all_passed,
        checks_ran,
    })
}

fn classify_stage(
    field: &SolvedField,
    scenario: &parobs_core::Scenario,
    cfg: &ClassifyStage,
) -> SingularScan {
    let opts = ScanOpts {
        time_window: cfg.window,
        time_stride: cfg.time_stride,
        spatial_stride: cfg.spatial_stride,
        ..ScanOpts::default()
    };
    match &cfg.points {
        PointSelection::Auto => {
            singular_set_with_fallback(field, scenario, &opts)
        }
        PointSelection::Explicit(points) => {
            let mut scan = SingularScan::default();
            for (x, t) in points {
                let radii = singular::default_r_sequence(field, x, *t);
                let params = singular::ClassifyParams::new(
                    scenario.f_at(x).unwrap_or(1.0),
                );
                match singular::classify(field, x, *t, &radii, &params) {
                    Ok(PointClass::Singular { m, a }) => scan.singular.push(
                        singular::SingularPoint {
                            x: x.clone(),
                            t: *t,
                            m,
                            a,
                            residual_quadratic: f64::NAN,
                            residual_halfspace: f64::NAN,
                        },
                    ),
                    Ok(PointClass::Regular { .. }) => scan.regular += 1,
                    Ok(PointClass::Undecided { reason }) => {
                        scan.undecided.push((x.clone(), *t, reason))
                    }
                    Err(e) => scan.undecided.push((x.clone(), *t, format!("error: {e}"))),
                }
            }
            scan
        }
    }
}

fn singular_set_with_fallback(
    field: &SolvedField,
    scenario: &parobs_core::Scenario,
    opts: &ScanOpts,
) -> SingularScan {
    let sc = scenario.clone();
    let f_at = move |x: &[f64]| sc.f_at(x).unwrap_or(1.0);
    singular::singular_set(field, &f_at, opts)
}

/// Fitted profile at each selected base point.
fn base_points(
    selection: &PointSelection,
    scan: Option<&SingularScan>,
    max_points: usize,
) -> Vec<(Vec<f64>, f64, PolyP)> {
    let mut picked: Vec<(Vec<f64>, f64, PolyP)> = Vec::new();
    let from_scan = |scan: &SingularScan| -> Vec<(Vec<f64>, f64, PolyP)> {
        let mut pts: Vec<&singular::SingularPoint> = scan.singular.iter().collect();
        // prefer points away from the domain walls: sort by |x| ascending
        pts.sort_by(|a, b| {
            let na: f64 = a.x.iter().map(|c| c * c).sum();
            let nb: f64 = b.x.iter().map(|c| c * c).sum();
            na.partial_cmp(&nb)
                .unwrap()
                .then(a.t.partial_cmp(&b.t).unwrap())
        });
        pts.iter()
            .filter_map(|p| {
                let f0: f64 = (0..p.x.len()).map(|i| p.a[i * p.x.len() + i]).sum();
                PolyP::new(p.x.len(), p.a.clone(), f0)
                    .ok()
                    .map(|poly| (p.x.clone(), p.t, poly))
            })
            .take(max_points)
            .collect()
    };
    match selection {
        PointSelection::Auto => {
            if let Some(scan) = scan {
                picked = from_scan(scan);
            }
        }
        PointSelection::Explicit(points) => {
            if let Some(scan) = scan {
                // use the fitted matrix of the nearest classified point
                for (x, t) in points {
                    let nearest = scan.singular.iter().min_by(|a, b| {
                        let da: f64 = a
                            .x
                            .iter()
                            .zip(x)
                            .map(|(p, q)| (p - q) * (p - q))
                            .sum::<f64>()
                            + (a.t - t).abs();
                        let db: f64 = b
                            .x
                            .iter()
                            .zip(x)
                            .map(|(p, q)| (p - q) * (p - q))
                            .sum::<f64>()
                            + (b.t - t).abs();
                        da.partial_cmp(&db).unwrap()
                    });
                    if let Some(p) = nearest {
                        let f0: f64 = (0..p.x.len()).map(|i| p.a[i * p.x.len() + i]).sum();
                        if let Ok(poly) = PolyP::new(p.x.len(), p.a.clone(), f0) {
                            picked.push((x.clone(), *t, poly));
                        }
                    }
                }
            }
        }
    }
    picked
}

fn radius_grid(field: &SolvedField, cfg: &TraceStage) -> Vec<f64> {
    let grid = field.grid();
    let mut radii = monitor::default_r_grid(grid.h, grid.dt);
    if let Some(r_min) = cfg.r_min {
        radii.retain(|&r| r >= r_min);
    }
    if let Some(r_max) = cfg.r_max {
        radii.retain(|&r| r <= r_max);
    }
    radii
}

fn limit(cfg: &ChecksStage, name: &str) -> f64 {
    cfg.limits
        .get(name)
        .copied()
        .or_else(|| default_limits().get(name).copied())
        .unwrap_or(1e12)
}

fn checks_stage(
    field: &SolvedField,
    _scenario: &parobs_core::Scenario,
    traces: &[FunctionalTrace],
    scan: Option<&SingularScan>,
    cfg: &ChecksStage,
    report: &mut RunReport,
) -> Result<ChecksArtifact> {
    let mut artifact = ChecksArtifact::default();
    let enabled = |name: &str| cfg.enable.iter().any(|e| e == name);

    for tr in traces {
        if enabled("cubic") {
            artifact.checks.extend(monitor::check_cubic(
                tr,
                limit(cfg, "cubic_w_hw"),
                limit(cfg, "cubic_zw_hw"),
            )?);
        }
        if enabled("weiss") {
            artifact.checks.extend(monitor::check_weiss(
                tr,
                limit(cfg, "weiss_slope"),
                limit(cfg, "weiss_remainder"),
                true,
            )?);
        }
        if enabled("frequency") {
            artifact.checks.extend(monitor::check_frequency(
                tr,
                EpsilonRule::Base,
                limit(cfg, "frequency_lower"),
                limit(cfg, "frequency_derivative"),
            )?);
        }
        if enabled("monneau") {
            artifact
                .checks
                .push(monitor::check_monneau(tr, limit(cfg, "monneau_slope"))?);
        }
        let lambda = match monitor::estimate_lambda(tr, 0.25) {
            Ok(est) => {
                artifact.lambda_estimates.push(LambdaReportEntry {
                    base_x: tr.base_x.clone(),
                    base_t: tr.base_t,
                    gamma: tr.gamma,
                    estimate: est.clone(),
                });
                Some(est)
            }
            Err(e) => {
                report.notices.push(format!("lambda estimate: {e}"));
                None
            }
        };
        if enabled("doubling") {
            if let Some(est) = &lambda {
                match monitor::check_doubling(
                    tr,
                    est.lambda_hat,
                    cfg.doubling_delta,
                    limit(cfg, "doubling_lower"),
                    limit(cfg, "doubling_upper"),
                ) {
                    Ok(reports) => artifact.checks.extend(reports),
                    Err(e) => report.notices.push(format!("doubling: {e}")),
                }
            }
        }
        if enabled("l2_decay") {
            if let Some(est) = &lambda {
                let radii = decay_radii(field);
                match monitor::check_l2_decay(
                    field,
                    &tr.base_x,
                    tr.base_t,
                    &tr.p_used,
                    est.lambda_hat,
                    cfg.doubling_delta,
                    cfg.decay_slack,
                    &radii,
                ) {
                    Ok((_, check)) => artifact.checks.push(check),
                    Err(e) => report.notices.push(format!("l2 decay: {e}")),
                }
            }
        }
    }

    if enabled("cleaning") {
        if let Some(scan) = scan {
            let grid = field.grid();
            // evaluate at the trace base points when available, else the
            // scanned singular points nearest the center
            let targets = base_points(&PointSelection::Auto, Some(scan), 1);
            for (x, t, poly) in &targets {
                let class = PointClass::Singular {
                    m: scan
                        .singular
                        .iter()
                        .find(|p| p.x == *x && p.t == *t)
                        .map(|p| p.m)
                        .unwrap_or(grid.dim - 1),
                    a: poly.matrix().to_vec(),
                };
                match monitor::check_cleaning(
                    field,
                    x,
                    *t,
                    &class,
                    cfg.cleaning_epsilon,
                    0.25 * grid.h * grid.h,
                    limit(cfg, "cleaning_flatness"),
                ) {
                    Ok(outcome) => artifact.checks.extend(outcome.reports),
                    Err(e) => report.notices.push(format!("cleaning: {e}")),
                }
            }
        }
    }

    if enabled("saturation") && !cfg.saturation_schedule.is_empty() {
        if let Some((x0, t0, p2)) = base_points(&PointSelection::Auto, scan, 1).into_iter().next()
        {
            let quad = GaussQuad::default_for(field.grid().dim);
            let r_grid = monitor::default_r_grid(field.grid().h, field.grid().dt);
            let radii = decay_radii(field);
            match monitor::saturation_bootstrap(
                field,
                &x0,
                t0,
                &p2,
                &cfg.saturation_schedule,
                &r_grid,
                &radii,
                &quad,
                limit(cfg, "frequency_lower"),
                limit(cfg, "frequency_derivative"),
            ) {
                Ok(stages) => artifact.saturation = stages,
                Err(e) => report.notices.push(format!("saturation: {e}")),
            }
        }
    }

    Ok(artifact)
}

/// Dyadic radii for the decay norms, from 1/4 down to the trusted scale.
fn decay_radii(field: &SolvedField) -> Vec<f64> {
    let grid = field.grid();
    let r_min = (8.0 * grid.h).max(2.0 * grid.dt.sqrt());
    let mut out = Vec::new();
    let mut r = 0.25;
    while r >= r_min - 1e-12 {
        out.push(r);
        r *= 0.5;
    }
    out.reverse();
    out
}

fn dimension_stage(
    scan: Option<&SingularScan>,
    cfg: &DimensionStage,
    dim: usize,
) -> Option<parobs_core::Result<DimensionEstimate>> {
    let scan = scan?;
    if scan.singular.is_empty() {
        return None;
    }
    let set = scan.point_set(dim);
    let deltas = pardim::delta_ladder(cfg.delta_min, cfg.delta_max, cfg.delta_count);
    Some(pardim::estimate_dimension(&set, &deltas))
}
