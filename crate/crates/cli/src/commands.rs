//! Subcommand implementations. Each one resolves its configuration, validates
//! inputs before touching the output directory, then writes its artifacts and
//! the resolved `config.toml`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sepba::ba::{solve_ba, BAProblem, ConvergenceReport};
use sepba::localizer::Localizer;
use sepba::mapgrid::{bounds_from_trajectory, build_map, GridMap};
use sepba::metrics::{
    aligned_errors, associate_by_time, ate, epe, loc_rpe, self_consistency, MetricReport,
};
use sepba::preprocess::{prepare_scan, select_keyframes, CumulativeMask, PreparedScan};
use sepba::scan::{Scan, WeightModel};
use sepba::se2::Pose2;
use sepba::sim::simulate;
use sepba::trajectory::Trajectory;

use crate::args::{BaArgs, Cli, Command, EvalArgs, LocalizeArgs, MapArgs, OutputArgs, SimulateArgs};
use crate::config::RunConfig;
use crate::dataset::{self, match_scans, read_scans, SCANS_DIR};
use crate::error::{CliError, CliResult};
use crate::export::write_map_png;
use crate::io::{prepare_output_dir, write_file, write_json};

pub const TRAJECTORY_OUT: &str = "trajectory.csv";
pub const MAP_STEM: &str = "map";
pub const BA_REPORT: &str = "report.json";
pub const HESSIAN_PATTERN: &str = "hessian_pattern.csv";
pub const LOCALIZE_SUMMARY: &str = "summary.json";
pub const FRAME_REPORTS_DIR: &str = "reports";
pub const METRICS: &str = "metrics.json";
pub const ALIGNED_ERRORS: &str = "aligned_errors.csv";

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate_cmd(&a, &mut config),
        Command::Ba(a) => ba_cmd(&a, &mut config),
        Command::Map(a) => map_cmd(&a, &mut config),
        Command::Localize(a) => localize_cmd(&a, &mut config),
        Command::Eval(a) => eval_cmd(&a, &mut config),
    }
}

fn output_dir(o: &OutputArgs, config: &RunConfig) -> CliResult<PathBuf> {
    o.out
        .clone()
        .or_else(|| config.paths.out.clone())
        .ok_or_else(|| CliError::Input("no output directory: pass --out or set paths.out".into()))
}

fn dataset_dir(flag: &Option<PathBuf>, config: &RunConfig) -> CliResult<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| config.paths.dataset.clone())
        .ok_or_else(|| CliError::Input("no dataset: pass --dataset or set paths.dataset".into()))?;
    if !dir.is_dir() {
        return Err(CliError::Input(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} file {} does not exist", path.display())))
    }
}

fn weight_model(config: &RunConfig) -> CliResult<WeightModel> {
    Ok(WeightModel::new(config.weight.sigma_pixel, config.weight.sigma_range_per_m)?)
}

fn prepare_all(scans: &[Scan], config: &RunConfig) -> Vec<PreparedScan> {
    let thresholds = config.mask.thresholds();
    scans.par_iter().map(|s| prepare_scan(s, &config.blur, thresholds)).collect()
}

fn split_prepared(prepared: Vec<PreparedScan>) -> (Vec<Scan>, Option<Vec<CumulativeMask>>, Vec<f64>) {
    let sigmas = prepared.iter().map(|p| p.blur_sigma_px).collect();
    let masked = prepared.iter().all(|p| p.mask.is_some());
    let mut scans = Vec::with_capacity(prepared.len());
    let mut masks = Vec::with_capacity(prepared.len());
    for p in prepared {
        scans.push(p.scan);
        if let Some(m) = p.mask {
            masks.push(m);
        }
    }
    (scans, masked.then_some(masks), sigmas)
}

/// Largest distance from a scan center to its corner.
fn scan_reach_m(scans: &[Scan]) -> f64 {
    scans.iter().map(|s| s.half_extent_m().norm()).fold(0.0, f64::max)
}

/// The map written by both `ba` and `map`: sized on the trajectory it is
/// built from, so equal inputs give equal bytes.
pub fn map_from_trajectory(
    scans: &[Scan],
    masks: Option<&[CumulativeMask]>,
    traj: &Trajectory,
    wm: &WeightModel,
    resolution_m: f64,
) -> CliResult<GridMap> {
    let layout = bounds_from_trajectory(traj, scan_reach_m(scans), resolution_m)?.layout;
    Ok(build_map(scans, &traj.pose_list(), wm, masks, layout)?)
}

fn write_map_outputs(map: &GridMap, out: &Path, png: bool) -> CliResult<()> {
    map.write(&out.join(MAP_STEM))?;
    if png {
        write_map_png(map, &out.join(MAP_STEM))?;
    }
    Ok(())
}

fn simulate_cmd(a: &SimulateArgs, config: &mut RunConfig) -> CliResult<()> {
    a.apply(config);
    config.validate()?;
    let out = output_dir(&a.output, config)?;
    let ds = simulate(&config.simulation)?;
    prepare_output_dir(&out, a.output.force)?;
    dataset::write_dataset(&out, &ds, config)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaReport {
    pub convergence: ConvergenceReport,
    /// Indices into the dataset's scan list.
    pub keyframes: Vec<usize>,
    pub blur_sigmas_px: Vec<f64>,
    /// Pixels excluded by the cumulative mask, per keyframe.
    pub masked_pixels: Vec<usize>,
    pub observed_cells: usize,
    /// Set when outputs were written although the solver did not converge.
    pub partial: bool,
}

fn ba_cmd(a: &BaArgs, config: &mut RunConfig) -> CliResult<()> {
    a.prep.apply(config);
    if let Some(m) = a.jacobian_mode {
        config.solver.jacobian_mode = m;
    }
    if let Some(n) = a.max_iterations {
        config.solver.max_iterations = n;
    }
    config.validate()?;
    let out = output_dir(&a.output, config)?;
    let dir = dataset_dir(&a.dataset, config)?;
    let init_path = a.init.clone().unwrap_or_else(|| dir.join(dataset::INITIAL));
    require_file(&init_path, "initial trajectory")?;
    let init = Trajectory::read(&init_path)?;
    let all_scans = read_scans(&dir.join(SCANS_DIR))?;
    let rows = match_scans(&init, &all_scans, &init_path)?;

    let keyframes = select_keyframes(&init, &config.keyframe);
    if keyframes.len() < 2 {
        return Err(CliError::Input(format!(
            "only {} keyframe(s) selected from {}; lower the keyframe thresholds",
            keyframes.len(),
            init_path.display()
        )));
    }
    let kf_init = init.subset(&keyframes);
    let kf_raw: Vec<Scan> = keyframes.iter().map(|&k| all_scans[rows[k]].clone()).collect();
    let (scans, masks, sigmas) = split_prepared(prepare_all(&kf_raw, config));
    let masked_pixels = match &masks {
        Some(ms) => kf_raw.iter().zip(ms).map(|(s, m)| m.excluded_count(s)).collect(),
        None => vec![0; scans.len()],
    };
    let wm = weight_model(config)?;
    let search = bounds_from_trajectory(&kf_init, scan_reach_m(&scans), config.map_resolution_m)?.layout;
    let problem = BAProblem::new(scans, kf_init, wm, search, masks)?;
    let solved = solve_ba(&problem, &config.solver)?;
    let map = map_from_trajectory(
        &problem.scans,
        problem.masks.as_deref(),
        &solved.trajectory,
        &wm,
        config.map_resolution_m,
    )?;

    prepare_output_dir(&out, a.output.force)?;
    solved.trajectory.write(&out.join(TRAJECTORY_OUT))?;
    write_map_outputs(&map, &out, a.png)?;
    let converged = solved.report.converged;
    let report = BaReport {
        convergence: solved.report.clone(),
        keyframes: keyframes.iter().map(|&k| rows[k]).collect(),
        blur_sigmas_px: sigmas,
        masked_pixels,
        observed_cells: map.observed_cells(),
        partial: !converged,
    };
    write_json(&out.join(BA_REPORT), &report)?;
    if a.dump_hessian_pattern {
        let mut text = String::from("row,col\n");
        for (r, c) in &solved.hessian_pattern {
            text.push_str(&format!("{r},{c}\n"));
        }
        write_file(&out.join(HESSIAN_PATTERN), text.as_bytes())?;
    }
    config.write_resolved(&out)?;
    if converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "bundle adjustment stopped after {} iterations ({:?}); partial results in {}",
            solved.report.iterations,
            solved.report.termination,
            out.display()
        )))
    }
}

fn map_cmd(a: &MapArgs, config: &mut RunConfig) -> CliResult<()> {
    a.prep.apply(config);
    config.validate()?;
    let out = output_dir(&a.output, config)?;
    let dir = dataset_dir(&a.dataset, config)?;
    require_file(&a.trajectory, "trajectory")?;
    let traj = Trajectory::read(&a.trajectory)?;
    if traj.is_empty() {
        return Err(CliError::Input(format!("{} has no poses", a.trajectory.display())));
    }
    let all_scans = read_scans(&dir.join(SCANS_DIR))?;
    let rows = match_scans(&traj, &all_scans, &a.trajectory)?;
    let raw: Vec<Scan> = rows.iter().map(|&i| all_scans[i].clone()).collect();
    let (scans, masks, _) = split_prepared(prepare_all(&raw, config));
    let wm = weight_model(config)?;
    let map = map_from_trajectory(&scans, masks.as_deref(), &traj, &wm, config.map_resolution_m)?;
    prepare_output_dir(&out, a.output.force)?;
    write_map_outputs(&map, &out, a.png)?;
    config.write_resolved(&out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Converged,
    NotConverged,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub timestamp_s: f64,
    pub status: FrameStatus,
    /// `[x_m, y_m, theta_rad]` kept for this frame.
    pub pose: [f64; 3],
    pub residuals: usize,
    pub blur_sigma_px: f64,
    pub error: Option<String>,
    pub convergence: Option<ConvergenceReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizeSummary {
    pub frames: usize,
    pub converged: usize,
    pub flagged_frames: Vec<usize>,
}

fn parse_pose(text: &str) -> CliResult<Pose2> {
    let v: Vec<f64> = text
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(format!("--initial `{text}`: {e}")))?;
    match v.as_slice() {
        [x, y, theta] => Ok(Pose2::new(*theta, *x, *y)),
        _ => Err(CliError::Input(format!("--initial `{text}`: expected x,y,theta"))),
    }
}

fn localize_cmd(a: &LocalizeArgs, config: &mut RunConfig) -> CliResult<()> {
    a.prep.apply(config);
    config.validate()?;
    let out = output_dir(&a.output, config)?;
    require_file(&a.map.with_extension("json"), "map")?;
    require_file(&a.odometry, "odometry")?;
    if !a.scans.is_dir() {
        return Err(CliError::Input(format!("scan directory {} does not exist", a.scans.display())));
    }
    let initial = match (&a.initial, &a.initial_from) {
        (Some(t), _) => parse_pose(t)?,
        (None, Some(p)) => {
            require_file(p, "initial trajectory")?;
            let t = Trajectory::read(p)?;
            *t.poses
                .first()
                .map(|tp| &tp.pose)
                .ok_or_else(|| CliError::Input(format!("{} has no poses", p.display())))?
        }
        (None, None) => return Err(CliError::Input("pass --initial or --initial-from".into())),
    };
    let map = GridMap::read(&a.map)?;
    let odometry = Trajectory::read(&a.odometry)?;
    let scans = read_scans(&a.scans)?;
    if odometry.len() != scans.len() {
        return Err(CliError::Input(format!(
            "{}: {} odometry rows for {} scans",
            a.odometry.display(),
            odometry.len(),
            scans.len()
        )));
    }
    let prepared = prepare_all(&scans, config);
    let wm = weight_model(config)?;

    let mut tracker = Localizer::new(&map, wm, config.localizer, initial);
    let mut frames = Vec::with_capacity(scans.len());
    for (k, p) in prepared.iter().enumerate() {
        if k > 0 {
            tracker.propagate(odometry.pose(k));
        }
        let (status, residuals, error, convergence) = match tracker.localize_frame(&p.scan, p.mask.as_ref()) {
            Ok(r) if r.report.converged => (FrameStatus::Converged, r.residuals, None, Some(r.report)),
            Ok(r) => (FrameStatus::NotConverged, r.residuals, None, Some(r.report)),
            Err(e) => (FrameStatus::Failed, 0, Some(e.to_string()), None),
        };
        let pose = tracker.pose();
        frames.push(FrameReport {
            frame: k,
            timestamp_s: scans[k].timestamp_s(),
            status,
            pose: [pose.x, pose.y, pose.theta],
            residuals,
            blur_sigma_px: p.blur_sigma_px,
            error,
            convergence,
        });
    }

    prepare_output_dir(&out, a.output.force)?;
    let traj = Trajectory::new(
        frames
            .iter()
            .map(|f| sepba::trajectory::TimedPose {
                timestamp_s: f.timestamp_s,
                pose: Pose2::new(f.pose[2], f.pose[0], f.pose[1]),
            })
            .collect(),
    );
    traj.write(&out.join(TRAJECTORY_OUT))?;
    let reports = out.join(FRAME_REPORTS_DIR);
    for f in &frames {
        write_json(&reports.join(format!("{:06}.json", f.frame)), f)?;
    }
    let flagged: Vec<usize> = frames
        .iter()
        .filter(|f| f.status != FrameStatus::Converged)
        .map(|f| f.frame)
        .collect();
    let summary = LocalizeSummary {
        frames: frames.len(),
        converged: frames.len() - flagged.len(),
        flagged_frames: flagged.clone(),
    };
    write_json(&out.join(LOCALIZE_SUMMARY), &summary)?;
    config.write_resolved(&out)?;
    if flagged.is_empty() {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "{} of {} frames flagged: {:?}",
            flagged.len(),
            frames.len(),
            flagged
        )))
    }
}

/// Rows of `est` paired with rows of `gt` by timestamp; every estimate row
/// must find a partner.
fn paired(est: &Trajectory, gt: &Trajectory, tol: f64, origin: &Path) -> CliResult<(Trajectory, Trajectory)> {
    let pairs = associate_by_time(gt, est, tol);
    if pairs.len() != est.len() {
        return Err(CliError::Input(format!(
            "{}: only {} of {} rows have a ground-truth timestamp within {} s",
            origin.display(),
            pairs.len(),
            est.len(),
            tol
        )));
    }
    let gi: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let ei: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    Ok((est.subset(&ei), gt.subset(&gi)))
}

fn read_trajectory(path: &Path, what: &str) -> CliResult<Trajectory> {
    require_file(path, what)?;
    Ok(Trajectory::read(path)?)
}

fn eval_cmd(a: &EvalArgs, config: &mut RunConfig) -> CliResult<()> {
    if let Some(s) = a.epe_start {
        config.eval.epe_start_index = s;
    }
    config.validate()?;
    let out = output_dir(&a.output, config)?;
    let tol = config.eval.time_tolerance_s;
    let est_all = read_trajectory(&a.estimate, "estimate")?;
    let gt_all = read_trajectory(&a.ground_truth, "ground truth")?;
    let (est, gt) = paired(&est_all, &gt_all, tol, &a.estimate)?;

    let loc = match &a.localized {
        None => None,
        Some(lp) => {
            let localized = read_trajectory(lp, "localized")?;
            let reference = match &a.reference {
                Some(rp) => read_trajectory(rp, "reference")?,
                None => est_all.clone(),
            };
            let pairs = associate_by_time(&reference, &localized, tol);
            if pairs.is_empty() {
                return Err(CliError::Input(format!(
                    "{}: no rows share a timestamp with the reference",
                    lp.display()
                )));
            }
            Some(loc_rpe(&reference, &localized, &pairs)?)
        }
    };
    let report = MetricReport {
        ate_m: ate(&est, &gt)?,
        epe_m: epe(&est, &gt, config.eval.epe_start_index)?,
        self_consistency: self_consistency(&est, &gt, config.eval.min_travel_m, config.eval.max_distance_m)?,
        loc_rpe: loc,
    };
    let errors = aligned_errors(&est, &gt)?;

    prepare_output_dir(&out, a.output.force)?;
    write_json(&out.join(METRICS), &report)?;
    let mut text = String::from("timestamp_s,error_x_m,error_y_m,error_m\n");
    for (tp, e) in est.poses.iter().zip(&errors) {
        text.push_str(&format!("{},{},{},{}\n", tp.timestamp_s, e.x, e.y, e.norm()));
    }
    write_file(&out.join(ALIGNED_ERRORS), text.as_bytes())?;
    config.write_resolved(&out)?;
    Ok(())
}
