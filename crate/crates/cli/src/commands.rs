use std::path::PathBuf;

use fbpt_core::analysis::{classify_stability_with, sqrt_approximation, ApproxBranch, SweepClassification};
use fbpt_core::integrate::simulate_partial;
use fbpt_core::{
    bifurcation_sweep, critical_feedback_parameter, density_evolution, settling_time, steady_state_branches,
    uniform_state, Branch, BraggGeometry, DensityGrid, FeedbackConfig, IntegratorConfig, Stability, SweepRow,
    Trajectory,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Format, RunConfig, StudyVariable};
use crate::error::CliError;
use crate::output::{ensure_dir, num, opt_num, write_json, CsvWriter};

pub struct Context {
    pub cfg: RunConfig,
}

impl Context {
    fn dir(&self) -> &PathBuf {
        &self.cfg.output.dir
    }

    fn format(&self) -> Format {
        self.cfg.output.format
    }

    fn prepare(&self) -> Result<(), CliError> {
        ensure_dir(self.dir())?;
        let path = self.dir().join("config.toml");
        std::fs::write(&path, self.cfg.to_toml()).map_err(|e| CliError::io(&path, e))
    }

    fn bragg(&self) -> Result<Option<BraggGeometry>, CliError> {
        let Some(g) = self.cfg.geometry else {
            return Ok(None);
        };
        match BraggGeometry::solve(g.d, g.lambda_probe)? {
            Some(b) => Ok(Some(b)),
            None => Err(CliError::NoSolution(format!(
                "no Bragg angle for d = {}, lambda_probe = {} (need lambda_probe <= 2d)",
                g.d, g.lambda_probe
            ))),
        }
    }
}

#[derive(Serialize)]
struct CriticalReport {
    f_c: f64,
    omega_c: [f64; 2],
    n0_c: [f64; 2],
    #[serde(rename = "nL_c")]
    nl_c: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    bragg: Option<BraggGeometry>,
}

pub fn critical(ctx: &Context) -> Result<(), CliError> {
    let bragg = ctx.bragg()?;
    let cp = critical_feedback_parameter(&ctx.cfg.system)?;
    ctx.prepare()?;
    let report = CriticalReport {
        f_c: cp.f_c,
        omega_c: [cp.omega_c_plus, cp.omega_c_minus],
        n0_c: cp.n0_c,
        nl_c: cp.nl_c,
        bragg,
    };
    match ctx.format() {
        Format::Json => {
            let path = ctx.dir().join("critical.json");
            write_json(&path, &report)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Format::Csv => {
            let path = ctx.dir().join("critical.csv");
            let header = ["f_c", "omega_c_plus", "omega_c_minus", "n0_c_plus", "nL_c_plus", "n0_c_minus", "nL_c_minus"];
            let values = [cp.f_c, cp.omega_c_plus, cp.omega_c_minus, cp.n0_c[0], cp.nl_c[0], cp.n0_c[1], cp.nl_c[1]];
            let mut w = CsvWriter::create(&path, &header)?;
            w.row(values.iter().map(|v| num(*v)))?;
            w.finish()?;
            println!("{}", header.join(","));
            println!("{}", values.iter().map(|v| num(*v)).collect::<Vec<_>>().join(","));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Occupations {
    n0: f64,
    #[serde(rename = "nL")]
    n_l: f64,
    #[serde(rename = "nR")]
    n_r: f64,
}

#[derive(Serialize)]
struct MatchedBranch {
    omega: f64,
    n0: f64,
    #[serde(rename = "nL")]
    n_l: f64,
    #[serde(rename = "nR")]
    n_r: f64,
    stability: Stability,
}

impl From<Branch> for MatchedBranch {
    fn from(b: Branch) -> Self {
        MatchedBranch {
            omega: b.omega,
            n0: b.n0,
            n_l: b.n_l,
            n_r: b.n_r,
            stability: b.stability,
        }
    }
}

#[derive(Serialize)]
struct SimulationSummary {
    f: f64,
    final_time: f64,
    final_occupations: Occupations,
    max_relative_drift: f64,
    matched_branch: Option<MatchedBranch>,
    settling_band: f64,
    settling_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bragg: Option<BraggGeometry>,
    error: Option<String>,
}

#[derive(Serialize)]
struct TrajectoryJson<'a> {
    t: &'a [f64],
    n0: &'a [f64],
    #[serde(rename = "nL")]
    n_l: &'a [f64],
    #[serde(rename = "nR")]
    n_r: &'a [f64],
    intensity_i: &'a [f64],
    filter_s: &'a [f64],
    scattered: &'a [f64],
}

/// Stable branch nearest to `n_l` at the run's `F`, classified with the
/// run's own feedback.
fn matched_stable_branch(ctx: &Context, fb: &FeedbackConfig, n_l: f64) -> Result<Option<Branch>, CliError> {
    let f = fb.combined();
    if f.is_nan() || f <= 0.0 || ctx.cfg.system.eta <= 0.0 {
        return Ok(None);
    }
    let probe = ctx.cfg.analysis.probe;
    let mut stable = Vec::new();
    for mut b in steady_state_branches(&ctx.cfg.system, f)? {
        b.stability = classify_stability_with(&b, &ctx.cfg.system, fb, &probe)?;
        if b.stability == Stability::Stable {
            stable.push(b);
        }
    }
    Ok(stable
        .into_iter()
        .min_by(|a, b| (a.n_l - n_l).abs().total_cmp(&(b.n_l - n_l).abs())))
}

fn run(ctx: &Context, fb: &FeedbackConfig, icfg: &IntegratorConfig) -> Result<(Trajectory, Option<fbpt_core::Error>), CliError> {
    let p = &ctx.cfg.system;
    Ok(simulate_partial(&uniform_state(p), p, fb, icfg)?)
}

fn summarize(
    ctx: &Context,
    fb: &FeedbackConfig,
    traj: &Trajectory,
    err: &Option<fbpt_core::Error>,
    bragg: Option<BraggGeometry>,
) -> Result<SimulationSummary, CliError> {
    let (n0, n_l, n_r) = traj.final_occupations();
    let band = ctx.cfg.analysis.settling_band;
    let matched = if err.is_none() { matched_stable_branch(ctx, fb, n_l)? } else { None };
    Ok(SimulationSummary {
        f: fb.combined(),
        final_time: traj.times.last().copied().unwrap_or(0.0),
        final_occupations: Occupations { n0, n_l, n_r },
        max_relative_drift: traj.max_relative_drift(ctx.cfg.system.n_atoms),
        settling_time: matched.and_then(|b| settling_time(traj, b.n_l, band)),
        matched_branch: matched.map(MatchedBranch::from),
        settling_band: band,
        bragg,
        error: err.as_ref().map(|e| e.to_string()),
    })
}

fn write_trajectory(ctx: &Context, traj: &Trajectory) -> Result<PathBuf, CliError> {
    match ctx.format() {
        Format::Csv => {
            let path = ctx.dir().join("trajectory.csv");
            let mut w = CsvWriter::create(&path, &["t", "n0", "nL", "nR", "intensity_I", "filter_s", "scattered"])?;
            for i in 0..traj.len() {
                w.row(
                    [traj.times[i], traj.n0[i], traj.n_l[i], traj.n_r[i], traj.intensity[i], traj.filter_s[i], traj.scattered[i]]
                        .iter()
                        .map(|v| num(*v)),
                )?;
            }
            w.finish()?;
            Ok(path)
        }
        Format::Json => {
            let path = ctx.dir().join("trajectory.json");
            write_json(
                &path,
                &TrajectoryJson {
                    t: &traj.times,
                    n0: &traj.n0,
                    n_l: &traj.n_l,
                    n_r: &traj.n_r,
                    intensity_i: &traj.intensity,
                    filter_s: &traj.filter_s,
                    scattered: &traj.scattered,
                },
            )?;
            Ok(path)
        }
    }
}

fn divergence(err: Option<fbpt_core::Error>) -> Result<(), CliError> {
    match err {
        None => Ok(()),
        Some(e) => Err(CliError::Diverged(format!("{e}; partial output written"))),
    }
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let bragg = ctx.bragg()?;
    let fb = ctx.cfg.feedback()?;
    let icfg = ctx.cfg.integrator()?;
    ctx.prepare()?;
    let (traj, err) = run(ctx, &fb, &icfg)?;
    let path = write_trajectory(ctx, &traj)?;
    let summary = summarize(ctx, &fb, &traj, &err, bragg)?;
    write_json(&ctx.dir().join("summary.json"), &summary)?;
    let o = &summary.final_occupations;
    println!(
        "wrote {} ({} samples); final n0 = {:.6}, nL = {:.6}, nR = {:.6}; settling time {}",
        path.display(),
        traj.len(),
        o.n0,
        o.n_l,
        o.n_r,
        summary.settling_time.map_or("none".into(), |t| format!("{t:.6}"))
    );
    divergence(err)
}

pub fn density(ctx: &Context) -> Result<(), CliError> {
    let fb = ctx.cfg.feedback()?;
    let icfg = ctx.cfg.integrator()?;
    let dc = &ctx.cfg.density;
    let grid = DensityGrid::periodic(dc.periods, dc.points_per_period)?;
    ctx.prepare()?;
    let (traj, err) = run(ctx, &fb, &icfg)?;
    let frames = density_evolution(&traj, &grid, dc.frame_stride);
    let times: Vec<f64> = frames.iter().map(|f| f.t).collect();

    #[derive(Serialize)]
    struct Axis<'a> {
        x: &'a [f64],
        length: f64,
        periods: usize,
        points_per_period: usize,
        t: &'a [f64],
    }
    let axis = Axis {
        x: &grid.x,
        length: grid.length,
        periods: dc.periods,
        points_per_period: dc.points_per_period,
        t: &times,
    };
    let path = match ctx.format() {
        Format::Csv => {
            let path = ctx.dir().join("density.csv");
            let mut header = vec!["t".to_string()];
            header.extend((0..grid.x.len()).map(|i| format!("rho_{i}")));
            let refs: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut w = CsvWriter::create(&path, &refs)?;
            for f in &frames {
                w.row(std::iter::once(num(f.t)).chain(f.rho.iter().map(|v| num(*v))))?;
            }
            w.finish()?;
            write_json(&ctx.dir().join("density_axis.json"), &axis)?;
            path
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Frames<'a> {
                #[serde(flatten)]
                axis: Axis<'a>,
                rho: Vec<&'a [f64]>,
            }
            let path = ctx.dir().join("density.json");
            write_json(
                &path,
                &Frames {
                    axis,
                    rho: frames.iter().map(|f| f.rho.as_slice()).collect(),
                },
            )?;
            path
        }
    };
    println!("wrote {} ({} frames x {} points)", path.display(), frames.len(), grid.x.len());
    divergence(err)
}

pub struct SweepArgs {
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
    pub classify: bool,
    pub with_approx: bool,
}

#[derive(Serialize)]
struct SweepRecord {
    #[serde(rename = "F")]
    f: f64,
    omega: f64,
    n0: f64,
    #[serde(rename = "nL")]
    n_l: f64,
    #[serde(rename = "nR")]
    n_r: f64,
    stability: Stability,
    #[serde(skip_serializing_if = "Option::is_none")]
    approx: Option<ApproxBranch>,
}

pub fn sweep(ctx: &Context, args: &SweepArgs) -> Result<(), CliError> {
    if !(args.f_min.is_finite() && args.f_max.is_finite() && args.f_min > 0.0 && args.f_min < args.f_max) {
        return Err(CliError::Usage(format!(
            "invalid sweep range [{}, {}]: need 0 < f_min < f_max",
            args.f_min, args.f_max
        )));
    }
    if args.n_points < 2 {
        return Err(CliError::Usage("sweep needs n_points >= 2".into()));
    }
    let p = &ctx.cfg.system;
    let classify = if args.classify {
        let fb = ctx
            .cfg
            .feedback
            .ok_or_else(|| CliError::Config("stability classification needs feedback.tau".into()))?;
        Some(SweepClassification {
            tau: fb.tau,
            probe: ctx.cfg.analysis.probe,
        })
    } else {
        None
    };
    let cp = critical_feedback_parameter(p)?;
    ctx.prepare()?;
    let rows: Vec<SweepRow> = bifurcation_sweep(p, args.f_min, args.f_max, args.n_points, classify)?;
    let mut records = Vec::new();
    for row in &rows {
        let approx = if args.with_approx && row.f >= cp.f_c { Some(sqrt_approximation(p, row.f)?) } else { None };
        for (i, b) in row.branches.iter().enumerate() {
            records.push(SweepRecord {
                f: row.f,
                omega: b.omega,
                n0: b.n0,
                n_l: b.n_l,
                n_r: b.n_r,
                stability: b.stability,
                approx: approx.as_ref().and_then(|a| a.get(i).copied()),
            });
        }
    }
    let path = match ctx.format() {
        Format::Csv => {
            let path = ctx.dir().join("sweep.csv");
            let mut header = vec!["F", "omega", "n0", "nL", "nR", "stability"];
            if args.with_approx {
                header.extend(["approx_n0", "approx_nL", "approx_nR"]);
            }
            let mut w = CsvWriter::create(&path, &header)?;
            for r in &records {
                let mut fields: Vec<String> = [r.f, r.omega, r.n0, r.n_l, r.n_r].iter().map(|v| num(*v)).collect();
                fields.push(r.stability.as_str().to_string());
                if args.with_approx {
                    fields.push(opt_num(r.approx.map(|a| a.n0)));
                    fields.push(opt_num(r.approx.map(|a| a.n_l)));
                    fields.push(opt_num(r.approx.map(|a| a.n_r)));
                }
                w.row(fields)?;
            }
            w.finish()?;
            path
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                f_c: f64,
                rows: &'a [SweepRecord],
            }
            let path = ctx.dir().join("sweep.json");
            write_json(&path, &Doc { f_c: cp.f_c, rows: &records })?;
            path
        }
    };
    println!(
        "wrote {} ({} points, {} branch rows, F_c = {:.6})",
        path.display(),
        rows.len(),
        records.len(),
        cp.f_c
    );
    Ok(())
}

pub struct StudyArgs {
    pub variable: StudyVariable,
    pub values: Vec<f64>,
    pub gains: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct StudyRow {
    value: f64,
    #[serde(rename = "F")]
    f: f64,
    gain: f64,
    tau: f64,
    gain_d: f64,
    settling_time: Option<f64>,
    #[serde(rename = "final_nL")]
    final_n_l: f64,
    #[serde(rename = "target_nL")]
    target_n_l: Option<f64>,
    error: Option<String>,
}

pub fn study(ctx: &Context, args: &StudyArgs) -> Result<(), CliError> {
    if args.values.is_empty() {
        return Err(CliError::Usage("study needs at least one value".into()));
    }
    if let Some(g) = &args.gains {
        if g.len() != args.values.len() {
            return Err(CliError::Usage("--gains must have one entry per value".into()));
        }
    }
    let base = ctx.cfg.feedback()?;
    let icfg = ctx.cfg.integrator()?;
    let configs: Vec<FeedbackConfig> = args
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut fb = base;
            match args.variable {
                StudyVariable::Tau => fb.tau = v,
                StudyVariable::Kd => fb.gain_d = v,
            }
            if let Some(g) = &args.gains {
                fb.gain = g[i];
            }
            fb.validate().map(|_| fb)
        })
        .collect::<Result<_, _>>()?;
    ctx.prepare()?;
    let band = ctx.cfg.analysis.settling_band;
    let rows: Vec<StudyRow> = configs
        .par_iter()
        .zip(&args.values)
        .map(|(fb, &value)| -> Result<StudyRow, CliError> {
            let (traj, err) = run(ctx, fb, &icfg)?;
            let (_, n_l, _) = traj.final_occupations();
            let target = if err.is_none() { matched_stable_branch(ctx, fb, n_l)? } else { None };
            Ok(StudyRow {
                value,
                f: fb.combined(),
                gain: fb.gain,
                tau: fb.tau,
                gain_d: fb.gain_d,
                settling_time: target.and_then(|b| settling_time(&traj, b.n_l, band)),
                final_n_l: n_l,
                target_n_l: target.map(|b| b.n_l),
                error: err.map(|e| e.to_string()),
            })
        })
        .collect::<Result<_, _>>()?;

    let path = match ctx.format() {
        Format::Csv => {
            let path = ctx.dir().join("study.csv");
            let mut w = CsvWriter::create(&path, &["value", "F", "settling_time", "final_nL", "target_nL"])?;
            for r in &rows {
                w.row([num(r.value), num(r.f), opt_num(r.settling_time), num(r.final_n_l), opt_num(r.target_n_l)])?;
            }
            w.finish()?;
            path
        }
        Format::Json => {
            let path = ctx.dir().join("study.json");
            #[derive(Serialize)]
            struct Doc<'a> {
                variable: StudyVariable,
                settling_band: f64,
                rows: &'a [StudyRow],
            }
            write_json(
                &path,
                &Doc {
                    variable: args.variable,
                    settling_band: band,
                    rows: &rows,
                },
            )?;
            path
        }
    };
    for r in &rows {
        println!(
            "value {:>10}: F = {:.6}, settling time {}, final nL = {:.6}",
            r.value,
            r.f,
            r.settling_time.map_or("none".into(), |t| format!("{t:.6}")),
            r.final_n_l
        );
    }
    println!("wrote {}", path.display());
    match rows.iter().find_map(|r| r.error.clone()) {
        Some(e) => Err(CliError::Diverged(format!("{e}; partial output written"))),
        None => Ok(()),
    }
}

/// Overrides the photon-counting seed of the feedback section.
pub fn apply_seed(cfg: &mut RunConfig, seed: u64) {
    if let Some(fb) = cfg.feedback.as_mut() {
        fb.rng_seed = seed;
    }
}
