//! Direct single-scan localization against a fixed intensity map.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::ba::{relax_damping, ConvergenceReport, SolverConfig, Termination, MAX_STEP_EXPANSIONS};
use crate::error::{Error, Result};
use crate::mapgrid::GridMap;
use crate::preprocess::CumulativeMask;
use crate::scan::{Scan, WeightModel};
use crate::se2::{Pose2, Twist2};

/// Fewer valid residuals than this and the pose is not observable enough.
pub const MIN_LOCALIZATION_RESIDUALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerConfig {
    pub solver: SolverConfig,
    pub min_residuals: usize,
    /// A result further than this from the initial guess is a divergence.
    pub max_correction_m: f64,
    pub max_correction_rad: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig {
                max_iterations: 20,
                ..SolverConfig::default()
            },
            min_residuals: MIN_LOCALIZATION_RESIDUALS,
            max_correction_m: 5.0,
            max_correction_rad: 20f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub pose: Pose2,
    pub report: ConvergenceReport,
    pub residuals: usize,
}

/// Observed map cells under the scan footprint at `pose`.
pub fn footprint_cells(map: &GridMap, scan: &Scan, pose: &Pose2) -> Vec<usize> {
    map.layout
        .cells_in_footprint(scan, pose, map.layout.resolution_m)
        .into_iter()
        .filter(|&c| map.is_observed(c))
        .collect()
}

/// `sum w (map - scan)^2` over the valid samples of `cells`, and their count.
pub fn localization_cost(
    map: &GridMap,
    scan: &Scan,
    pose: &Pose2,
    wm: &WeightModel,
    mask: Option<&CumulativeMask>,
    cells: &[usize],
) -> (f64, usize) {
    let mut cost = 0.0;
    let mut count = 0;
    for &c in cells {
        let s = scan.sample(&map.layout.center_of(c), pose, wm, mask);
        if s.valid {
            let r = map.intensity()[c] - s.intensity;
            cost += s.weight * r * r;
            count += 1;
        }
    }
    (cost, count)
}

/// Gauss-Newton normal equations `(H, b = -J^T e)`, cost and residual count.
pub fn localization_system(
    map: &GridMap,
    scan: &Scan,
    pose: &Pose2,
    wm: &WeightModel,
    mask: Option<&CumulativeMask>,
    cells: &[usize],
) -> (Matrix3<f64>, Vector3<f64>, f64, usize) {
    let mut h = Matrix3::zeros();
    let mut b = Vector3::zeros();
    let mut cost = 0.0;
    let mut count = 0;
    for &c in cells {
        let Some(s) = scan.sample_linearized(&map.layout.center_of(c), pose, wm, mask) else {
            continue;
        };
        let sw = s.weight.sqrt();
        let r = map.intensity()[c] - s.intensity;
        let e = sw * r;
        let j = -s.d_intensity * sw + s.d_weight * (r / (2.0 * sw));
        h += j * j.transpose();
        b -= j * e;
        cost += e * e;
        count += 1;
    }
    (h, b, cost, count)
}

/// Refines `initial` so that `scan` best matches `map`.
pub fn localize(
    map: &GridMap,
    scan: &Scan,
    initial: &Pose2,
    wm: &WeightModel,
    mask: Option<&CumulativeMask>,
    config: &LocalizerConfig,
) -> Result<LocalizationResult> {
    config.solver.validate()?;
    let start = Instant::now();
    let sc = &config.solver;
    let mut pose = *initial;
    let mut report = ConvergenceReport {
        iterations: 0,
        costs: Vec::new(),
        update_norms: Vec::new(),
        h_nnz: 9,
        wall_time_s: 0.0,
        converged: false,
        termination: Termination::MaxIterations,
        jacobian_mode: sc.jacobian_mode,
    };
    let mut residuals = 0;
    let mut carried = sc.damping;

    'outer: for iter in 0..sc.max_iterations {
        report.iterations = iter + 1;
        let cells = footprint_cells(map, scan, &pose);
        let (h, b, cost, count) = localization_system(map, scan, &pose, wm, mask, &cells);
        residuals = count;
        if count < config.min_residuals {
            return Err(Error::InsufficientOverlap {
                found: count,
                required: config.min_residuals,
            });
        }
        if report.costs.is_empty() {
            report.costs.push(cost);
        }
        let mut lambda = carried;
        let mut retries = 0;
        loop {
            let mut damped = h;
            for k in 0..3 {
                damped[(k, k)] += lambda * h[(k, k)];
            }
            let Some(ch) = damped.cholesky() else {
                if retries >= sc.max_damping_retries {
                    return Err(Error::RankDeficient { states: vec![0] });
                }
                lambda = SolverConfig::next_damping(lambda);
                retries += 1;
                continue;
            };
            let dx = ch.solve(&b);
            let step = dx.norm();
            if step < sc.update_tolerance {
                report.update_norms.push(step);
                report.converged = true;
                report.termination = Termination::UpdateTolerance;
                break 'outer;
            }
            let moved = |scale: f64| pose.apply_perturbation(&Twist2::from_vector(&(dx * scale)));
            let candidate = moved(1.0);
            let (new_cost, _) = localization_cost(map, scan, &candidate, wm, mask, &cells);
            if new_cost <= cost {
                carried = relax_damping(lambda, sc.damping);
                let (mut best, mut best_cost, mut scale) = (candidate, new_cost, 1.0);
                for _ in 0..MAX_STEP_EXPANSIONS {
                    let trial = moved(2.0 * scale);
                    let (c, _) = localization_cost(map, scan, &trial, wm, mask, &cells);
                    if c >= best_cost {
                        break;
                    }
                    (best, best_cost, scale) = (trial, c, 2.0 * scale);
                }
                let rel = (cost - best_cost) / cost.max(f64::MIN_POSITIVE);
                pose = best;
                report.costs.push(best_cost);
                report.update_norms.push(step * scale);
                if rel < sc.cost_rel_tolerance {
                    report.converged = true;
                    report.termination = Termination::CostTolerance;
                    break 'outer;
                }
                break;
            }
            if retries >= sc.max_damping_retries {
                report.converged = true;
                report.termination = Termination::Stalled;
                break 'outer;
            }
            lambda = SolverConfig::next_damping(lambda);
            retries += 1;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    let correction = initial.between(&pose);
    if correction.translation_norm() > config.max_correction_m
        || correction.theta.abs() > config.max_correction_rad
    {
        return Err(Error::Diverged {
            iterations: report.iterations,
            pose,
        });
    }
    Ok(LocalizationResult {
        pose,
        report,
        residuals,
    })
}

/// Frame-to-map tracker: odometry prediction followed by direct refinement.
#[derive(Debug, Clone)]
pub struct Localizer<'a> {
    map: &'a GridMap,
    wm: WeightModel,
    config: LocalizerConfig,
    pose: Pose2,
}

impl<'a> Localizer<'a> {
    pub fn new(map: &'a GridMap, wm: WeightModel, config: LocalizerConfig, initial: Pose2) -> Self {
        Self {
            map,
            wm,
            config,
            pose: initial,
        }
    }

    pub fn pose(&self) -> Pose2 {
        self.pose
    }

    /// Applies a body-frame odometry increment to the current estimate.
    pub fn propagate(&mut self, delta: &Pose2) -> Pose2 {
        self.pose = self.pose.compose(delta);
        self.pose
    }

    /// Localizes `scan` starting from the current estimate. On failure the
    /// estimate keeps the prediction so tracking can continue.
    pub fn localize_frame(
        &mut self,
        scan: &Scan,
        mask: Option<&CumulativeMask>,
    ) -> Result<LocalizationResult> {
        let result = localize(self.map, scan, &self.pose, &self.wm, mask, &self.config)?;
        self.pose = result.pose;
        Ok(result)
    }
}
