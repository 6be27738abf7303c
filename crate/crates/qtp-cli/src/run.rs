//! Scenario execution: resolves the config, runs the requested pipeline
//! stages, and writes the artifacts and manifest into one run directory.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use qtp_core::detector::glauber_kernel;
use qtp_core::field::state_two_point;
use qtp_core::fock::{oracle_correlator, FockSpace};
use qtp_core::geometry::FourVector;
use qtp_core::grid::{Hierarchy, ProbabilityGrid};
use qtp_core::probability::{
    build_hierarchy, density_grid_with, detection_summary, lattice_density_exact,
    HierarchyRequest,
};
use qtp_core::wick::{evaluate_correlator, CorrelatorSpec};
use qtp_core::{FieldModel, FieldState, QtpError};

use crate::artifacts::{
    read_grid, AxisMeta, Manifest, RunWriter, StageRecord, Versions,
};
use crate::config::{
    four_components, ConfigError, GridFormat, Resolved, Scenario, Stage, SCHEMA_VERSION,
};

/// Exit codes: schema/config errors 2, numeric-tolerance failures 3,
/// resource-cap errors 4, I/O trouble 1.
pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TOLERANCE: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Numeric(QtpError),
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Numeric(e) => write!(f, "numeric error: {e}"),
            RunError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}
impl From<QtpError> for RunError {
    fn from(e: QtpError) -> Self {
        RunError::Numeric(e)
    }
}
impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Io(_) => EXIT_IO,
            RunError::Numeric(e) => match e {
                QtpError::ResourceCap(_) | QtpError::PlanCapExceeded { .. } => EXIT_RESOURCE,
                _ => EXIT_TOLERANCE,
            },
        }
    }
}

pub struct RunOptions<'a> {
    pub tolerance_scale: f64,
    pub threads: usize,
    pub golden: Option<&'a Path>,
    pub update_golden: bool,
}

#[derive(Serialize)]
struct DetectorSummary {
    detector: usize,
    p_detect: f64,
    p_none: f64,
    clip_mass: f64,
}

#[derive(Serialize)]
struct JointReport {
    neither: f64,
    subtraction_deficit: f64,
    joint_mass: f64,
}

#[derive(Serialize)]
struct OraclePairReport {
    backward: Vec<f64>,
    forward: Vec<f64>,
    engine: [f64; 2],
    oracle: [f64; 2],
    rel_dev: f64,
}

#[derive(Serialize)]
struct OracleReport {
    tolerance: f64,
    max_rel_dev: f64,
    pairs: Vec<OraclePairReport>,
}

#[derive(Serialize)]
struct LimitsPoint {
    position: f64,
    intensity: f64,
    density: f64,
}

#[derive(Serialize)]
struct LimitsReport {
    proportionality: f64,
    worst_rel_dev: f64,
    tolerance: f64,
    points: Vec<LimitsPoint>,
}

#[derive(Serialize)]
struct GoldenEntry {
    name: String,
    max_rel_dev: f64,
}

#[derive(Serialize)]
struct GoldenReport {
    scenario_hash: String,
    tolerance: f64,
    updated: bool,
    grids: Vec<GoldenEntry>,
}

fn axes_for(space: &qtp_core::grid::OutcomeSpace, names: &[&str]) -> Vec<AxisMeta> {
    let mut axes = Vec::new();
    if space.n_bins > 1 {
        axes.push(AxisMeta::index("bin", space.n_bins));
    }
    for (d, name) in names.iter().enumerate() {
        axes.push(AxisMeta::spacetime(
            name,
            space.grid.origin[d],
            space.grid.step[d],
            space.grid.shape[d],
        ));
    }
    axes
}

fn emit_grid(
    w: &mut RunWriter,
    format: GridFormat,
    name: &str,
    axes: &[AxisMeta],
    quantity: &str,
    unit: &str,
    values: &[f64],
) -> std::io::Result<()> {
    if matches!(format, GridFormat::Binary | GridFormat::Both) {
        w.write_grid(name, axes, quantity, unit, values)?;
    }
    if matches!(format, GridFormat::Csv | GridFormat::Both) {
        w.write_csv(name, axes, quantity, unit, values)?;
    }
    Ok(())
}

fn rel_dev(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Execute a scenario; returns the process exit code.
pub fn run_scenario(
    config_text: &str,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<i32, RunError> {
    let scenario = Scenario::from_json(config_text)?;
    let hash = crate::config::scenario_hash(config_text)?;
    let resolved = scenario.resolve()?;
    let mut writer = RunWriter::new(out_dir)?;
    writer.write_bytes("scenario.json", config_text.as_bytes())?;

    let mut stages = Vec::new();
    let mut hierarchy: Option<Hierarchy> = None;
    for &stage in &scenario.pipeline {
        let start = Instant::now();
        let record = match stage {
            Stage::Wightman => stage_wightman(&scenario, &resolved, &mut writer)?,
            Stage::Detect => stage_detect(&scenario, &resolved, opts, &mut writer)?,
            Stage::Joint => {
                let (rec, h) = stage_joint(&scenario, &resolved, opts, &mut writer)?;
                hierarchy = Some(h);
                rec
            }
            Stage::Diagnostics => {
                if hierarchy.is_none() {
                    hierarchy = Some(build_raw_hierarchy(&resolved)?);
                }
                stage_diagnostics(&scenario, hierarchy.as_ref().unwrap(), opts, &mut writer)?
            }
            Stage::Oracle => stage_oracle(&scenario, &resolved, opts, &mut writer)?,
            Stage::Limits => stage_limits(&scenario, &resolved, opts, &mut writer)?,
        };
        stages.push(StageRecord { millis: start.elapsed().as_millis(), ..record });
    }

    if let Some(golden) = opts.golden {
        let start = Instant::now();
        let record = stage_golden(&scenario, &hash, golden, opts, &mut writer)?;
        stages.push(StageRecord { millis: start.elapsed().as_millis(), ..record });
    }

    let all_passed = stages.iter().all(|s| s.passed);
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        scenario_hash: hash,
        versions: Versions {
            qtp_cli: env!("CARGO_PKG_VERSION").to_string(),
            qtp_core: qtp_core::VERSION.to_string(),
        },
        threads: opts.threads,
        tolerance_scale: opts.tolerance_scale,
        stages,
        files: writer.files().to_vec(),
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(out_dir.join("manifest.json"), text)?;

    Ok(if all_passed { EXIT_OK } else { EXIT_TOLERANCE })
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Io(e.into())
    }
}

fn stage_wightman(
    scenario: &Scenario,
    resolved: &Resolved,
    writer: &mut RunWriter,
) -> Result<StageRecord, RunError> {
    let cfg = scenario.wightman.as_ref().expect("validated");
    let names = scenario.axis_names();
    let dim = resolved.model.dim();
    let base = four_components(&cfg.base, dim, "wightman.base")?;
    let grid = crate::config::grid_spec(&cfg.grid, dim.d(), "wightman.grid")?;
    let mut re = Vec::with_capacity(grid.len());
    let mut im = Vec::with_capacity(grid.len());
    for c in 0..grid.len() {
        let idx = grid.unindex(c);
        let coords: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(d, &i)| grid.coord(d, i) + 0.5 * grid.step[d])
            .collect();
        let x = FourVector::from_components(&coords)?;
        let g = state_two_point(&resolved.state, &resolved.model, &base, &x)?;
        re.push(g.re);
        im.push(g.im);
    }
    let axes: Vec<AxisMeta> = names
        .iter()
        .enumerate()
        .map(|(d, n)| AxisMeta::spacetime(n, grid.origin[d], grid.step[d], grid.shape[d]))
        .collect();
    let fmt = scenario.outputs.grids;
    emit_grid(writer, fmt, "wightman_re", &axes, "Re G", "natural (mass = 1)", &re)?;
    emit_grid(writer, fmt, "wightman_im", &axes, "Im G", "natural (mass = 1)", &im)?;
    Ok(StageRecord {
        name: "wightman".into(),
        passed: true,
        detail: format!("{} points", grid.len()),
        millis: 0,
    })
}

fn stage_detect(
    scenario: &Scenario,
    resolved: &Resolved,
    opts: &RunOptions,
    writer: &mut RunWriter,
) -> Result<StageRecord, RunError> {
    let names = scenario.axis_names();
    let fmt = scenario.outputs.grids;
    let mut summaries = Vec::new();
    let mut passed = true;
    let mut details = Vec::new();
    for (i, (det, space)) in resolved.detectors.iter().zip(&resolved.spaces).enumerate() {
        let grid: ProbabilityGrid = density_grid_with(
            det,
            &resolved.model,
            &resolved.state,
            space,
            resolved.rel_grid.as_ref(),
        )?;
        let axes = axes_for(space, &names);
        emit_grid(
            writer,
            fmt,
            &format!("detect_{i}"),
            &axes,
            "density",
            "probability / volume",
            &grid.values,
        )?;
        let summary = detection_summary(&grid)?;
        // Clipped-negative mass must stay a vanishing fraction of the
        // detection probability.
        let clip_ok =
            grid.clip_mass <= opts.tolerance_scale * 1e-6 * summary.p_detect + f64::MIN_POSITIVE;
        passed &= clip_ok;
        details.push(format!("P{i} = {:.6e}", summary.p_detect));
        summaries.push(DetectorSummary {
            detector: i,
            p_detect: summary.p_detect,
            p_none: summary.p_none,
            clip_mass: grid.clip_mass,
        });
    }
    if scenario.outputs.reports {
        writer.write_json("detection_summary.json", &summaries)?;
    }
    Ok(StageRecord {
        name: "detect".into(),
        passed,
        detail: details.join(", "),
        millis: 0,
    })
}

fn build_raw_hierarchy(resolved: &Resolved) -> Result<Hierarchy, RunError> {
    let req = HierarchyRequest {
        detectors: resolved.detectors.clone(),
        spaces: resolved.spaces.clone(),
        levels: 2,
        rel_grid: resolved.rel_grid.clone(),
    };
    Ok(build_hierarchy(&req, &resolved.model, &resolved.state)?)
}

fn stage_joint(
    scenario: &Scenario,
    resolved: &Resolved,
    opts: &RunOptions,
    writer: &mut RunWriter,
) -> Result<(StageRecord, Hierarchy), RunError> {
    let h = build_raw_hierarchy(resolved)?;
    let l2 = h.level2.as_ref().expect("two detectors validated");
    let (n0, n1) = (h.spaces[0].n_outcomes(), h.spaces[1].n_outcomes());
    let fmt = scenario.outputs.grids;
    let joint_axes = [AxisMeta::index("outcome_0", n0), AxisMeta::index("outcome_1", n1)];
    emit_grid(writer, fmt, "joint", &joint_axes, "density", "probability / volume^2", &l2.joint)?;
    emit_grid(
        writer,
        fmt,
        "only_first",
        &[AxisMeta::index("outcome_0", n0)],
        "density",
        "probability / volume",
        &l2.only_first,
    )?;
    emit_grid(
        writer,
        fmt,
        "only_second",
        &[AxisMeta::index("outcome_1", n1)],
        "density",
        "probability / volume",
        &l2.only_second,
    )?;
    let w0 = h.spaces[0].measure();
    let w1 = h.spaces[1].measure();
    let joint_mass: f64 = l2.joint.iter().sum::<f64>() * w0 * w1;
    if scenario.outputs.reports {
        writer.write_json(
            "joint_report.json",
            &JointReport {
                neither: l2.neither,
                subtraction_deficit: l2.subtraction_deficit,
                joint_mass,
            },
        )?;
    }
    let tol = scenario.numerics.tolerance * opts.tolerance_scale;
    let passed = l2.subtraction_deficit <= tol;
    let detail = format!(
        "joint mass {joint_mass:.6e}, subtraction deficit {:.3e}",
        l2.subtraction_deficit
    );
    Ok((StageRecord { name: "joint".into(), passed, detail, millis: 0 }, h))
}

fn stage_diagnostics(
    scenario: &Scenario,
    hierarchy: &Hierarchy,
    opts: &RunOptions,
    writer: &mut RunWriter,
) -> Result<StageRecord, RunError> {
    let threshold = scenario.numerics.defect_threshold * opts.tolerance_scale;
    let report = qtp_core::diagnostics::diagnostics_report(
        hierarchy,
        scenario.numerics.min_mass,
        threshold,
    )?;
    writer.write_json("diagnostics.json", &report)?;
    let passed = report.kolmogorov_ok != Some(false);
    let detail = match (report.s_q, report.s_c) {
        (Some(sq), Some(sc)) => format!("S_Q = {sq:.3e}, S_C = {sc:.3e} nats"),
        _ => "level-1 entropies only".to_string(),
    };
    Ok(StageRecord { name: "diagnostics".into(), passed, detail, millis: 0 })
}

fn stage_oracle(
    scenario: &Scenario,
    resolved: &Resolved,
    opts: &RunOptions,
    writer: &mut RunWriter,
) -> Result<StageRecord, RunError> {
    let cfg = scenario.oracle.as_ref().expect("validated");
    let dim = resolved.model.dim();
    let lattice = match &resolved.model {
        FieldModel::Lattice(l) => l.clone(),
        FieldModel::Continuum { .. } => unreachable!("validated"),
    };
    let space = FockSpace::new(lattice, cfg.cutoff)?;
    let psi = space.state_vector(&resolved.state)?;
    let mut pairs = Vec::new();
    let mut max_dev = 0.0f64;
    for (i, [a, b]) in cfg.pairs.iter().enumerate() {
        let xa = four_components(a, dim, &format!("oracle.pairs[{i}][0]"))?;
        let xb = four_components(b, dim, &format!("oracle.pairs[{i}][1]"))?;
        let spec = CorrelatorSpec::new(vec![xb], vec![xa], resolved.state.clone());
        let engine = evaluate_correlator(&spec, &resolved.model)?;
        let oracle = oracle_correlator(&space, &psi, &[xa], &[xb])?;
        let dev = (engine - oracle).norm() / oracle.norm().max(f64::MIN_POSITIVE);
        max_dev = max_dev.max(dev);
        pairs.push(OraclePairReport {
            backward: a.clone(),
            forward: b.clone(),
            engine: [engine.re, engine.im],
            oracle: [oracle.re, oracle.im],
            rel_dev: dev,
        });
    }
    let tol = scenario.numerics.tolerance * opts.tolerance_scale;
    if scenario.outputs.reports {
        writer.write_json(
            "oracle_report.json",
            &OracleReport { tolerance: tol, max_rel_dev: max_dev, pairs },
        )?;
    }
    Ok(StageRecord {
        name: "oracle".into(),
        passed: max_dev <= tol,
        detail: format!("max rel dev {max_dev:.3e} (tol {tol:.1e})"),
        millis: 0,
    })
}

fn stage_limits(
    scenario: &Scenario,
    resolved: &Resolved,
    opts: &RunOptions,
    writer: &mut RunWriter,
) -> Result<StageRecord, RunError> {
    let cfg = scenario.limits.as_ref().expect("validated");
    let det = &resolved.detectors[0];
    let kernel = glauber_kernel(det)?;
    let packet = match &resolved.state {
        FieldState::Particles(ps) => &ps[0],
        _ => unreachable!("validated"),
    };
    let norm = resolved.model.packet_norm(packet)?;
    let mut intensity = Vec::new();
    let mut density = Vec::new();
    for &x in &cfg.positions {
        let mut coords = vec![cfg.time, x];
        coords.resize(resolved.model.dim().d(), 0.0);
        let p = FourVector::from_components(&coords)?;
        let u = resolved.model.mode_function(packet, norm, &p)?;
        intensity.push(u.norm_sqr());
        let with = lattice_density_exact(&kernel, &resolved.model, &resolved.state, &p)?;
        let vac =
            lattice_density_exact(&kernel, &resolved.model, &FieldState::Vacuum, &p)?;
        density.push(with - vac);
    }
    // Least-squares proportionality, then pointwise deviation over the
    // packet support (>= 10% of peak intensity).
    let num: f64 = density.iter().zip(&intensity).map(|(p, i)| p * i).sum();
    let den: f64 = intensity.iter().map(|i| i * i).sum();
    let c = num / den.max(f64::MIN_POSITIVE);
    let peak = intensity.iter().cloned().fold(0.0f64, f64::max);
    let mut worst = 0.0f64;
    for (p, i) in density.iter().zip(&intensity) {
        if *i >= 0.1 * peak && c * i != 0.0 {
            worst = worst.max((p - c * i).abs() / (c * i).abs());
        }
    }
    let tol = cfg.tolerance * opts.tolerance_scale;
    if scenario.outputs.reports {
        let points = cfg
            .positions
            .iter()
            .zip(intensity.iter().zip(&density))
            .map(|(&x, (&i, &d))| LimitsPoint { position: x, intensity: i, density: d })
            .collect();
        writer.write_json(
            "limits_report.json",
            &LimitsReport { proportionality: c, worst_rel_dev: worst, tolerance: tol, points },
        )?;
    }
    Ok(StageRecord {
        name: "limits".into(),
        passed: c > 0.0 && worst <= tol,
        detail: format!("intensity-law worst rel dev {worst:.3e} (tol {tol:.1e})"),
        millis: 0,
    })
}

fn stage_golden(
    scenario: &Scenario,
    hash: &str,
    golden: &Path,
    opts: &RunOptions,
    writer: &mut RunWriter,
) -> Result<StageRecord, RunError> {
    let entry_dir = golden.join(hash);
    let grid_names: Vec<String> = writer
        .files()
        .iter()
        .filter(|f| f.path.ends_with(".f64"))
        .map(|f| f.path.trim_end_matches(".f64").to_string())
        .collect();
    if opts.update_golden {
        std::fs::create_dir_all(&entry_dir)?;
        for name in &grid_names {
            for ext in ["f64", "json"] {
                std::fs::copy(
                    writer.dir().join(format!("{name}.{ext}")),
                    entry_dir.join(format!("{name}.{ext}")),
                )?;
            }
        }
        return Ok(StageRecord {
            name: "golden".into(),
            passed: true,
            detail: format!("updated {} grids under {}", grid_names.len(), entry_dir.display()),
            millis: 0,
        });
    }
    if !entry_dir.is_dir() {
        return Err(RunError::Config(ConfigError(format!(
            "no golden entry for scenario hash {hash} under {} (regenerate with --update-golden)",
            golden.display()
        ))));
    }
    let tol = scenario.numerics.tolerance * opts.tolerance_scale;
    let mut grids = Vec::new();
    let mut worst = 0.0f64;
    for name in &grid_names {
        let (here_meta, here) = read_grid(writer.dir(), name)?;
        let (gold_meta, gold) = read_grid(&entry_dir, name)?;
        if here_meta.axes != gold_meta.axes {
            return Err(RunError::Config(ConfigError(format!(
                "golden grid {name}: axis metadata mismatch"
            ))));
        }
        let dev = here.iter().zip(&gold).map(|(&a, &b)| rel_dev(a, b)).fold(0.0f64, f64::max);
        worst = worst.max(dev);
        grids.push(GoldenEntry { name: name.clone(), max_rel_dev: dev });
    }
    writer.write_json(
        "golden_report.json",
        &GoldenReport {
            scenario_hash: hash.to_string(),
            tolerance: tol,
            updated: false,
            grids,
        },
    )?;
    Ok(StageRecord {
        name: "golden".into(),
        passed: worst <= tol,
        detail: format!("max rel dev vs golden {worst:.3e} (tol {tol:.1e})"),
        millis: 0,
    })
}
