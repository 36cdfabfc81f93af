//! Reference solver that treats every observed map cell intensity as an
//! unknown next to the poses. Dense and slow; meant for validating the
//! reduced solver on small problems.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::ba::{
    apply_update, relax_damping, BAProblem, ConvergenceReport, SolverConfig, Termination, MAX_STEP_EXPANSIONS,
};
use crate::error::{Error, Result};
use crate::scan::LinearizedSample;
use crate::se2::Pose2;
use crate::trajectory::Trajectory;

pub const MAX_JOINT_RESIDUALS: usize = 1_000_000;
pub const MAX_JOINT_UNKNOWNS: usize = 6_000;

#[derive(Debug, Clone)]
pub struct JointOutput {
    pub trajectory: Trajectory,
    /// Estimated intensity of every cell that had a valid sample at the end.
    pub cells: BTreeMap<usize, f64>,
    pub report: ConvergenceReport,
}

/// Valid samples per cell at `poses`, over every cell any footprint touches.
fn observations(problem: &BAProblem, poses: &[Pose2]) -> BTreeMap<usize, Vec<(usize, LinearizedSample)>> {
    let mut obs: BTreeMap<usize, Vec<(usize, LinearizedSample)>> = BTreeMap::new();
    let margin = problem.layout.resolution_m;
    for (n, (scan, pose)) in problem.scans.iter().zip(poses).enumerate() {
        let mask = problem.masks.as_ref().map(|m| &m[n]);
        for cell in problem.layout.cells_in_footprint(scan, pose, margin) {
            let m = problem.layout.center_of(cell);
            if let Some(s) = scan.sample_linearized(&m, pose, &problem.wm, mask) {
                obs.entry(cell).or_default().push((n, s));
            }
        }
    }
    obs
}

fn weighted_mean(samples: &[(usize, LinearizedSample)]) -> f64 {
    let w: f64 = samples.iter().map(|(_, s)| s.weight).sum();
    samples.iter().map(|(_, s)| s.weight * s.intensity).sum::<f64>() / w
}

fn joint_cost(obs: &BTreeMap<usize, Vec<(usize, LinearizedSample)>>, cells: &BTreeMap<usize, f64>) -> f64 {
    obs.iter()
        .map(|(c, samples)| {
            let i = cells[c];
            samples
                .iter()
                .map(|(_, s)| s.weight * (i - s.intensity) * (i - s.intensity))
                .sum::<f64>()
        })
        .sum()
}

/// Intensities for the observed cells: previous estimates where available,
/// the weighted mean for newly observed cells.
fn carry_cells(
    obs: &BTreeMap<usize, Vec<(usize, LinearizedSample)>>,
    previous: &BTreeMap<usize, f64>,
) -> BTreeMap<usize, f64> {
    obs.iter()
        .map(|(c, s)| (*c, previous.get(c).copied().unwrap_or_else(|| weighted_mean(s))))
        .collect()
}

/// Damped Gauss-Newton over poses `1..N` and all observed cell intensities.
/// Cell intensities start at their weighted means.
pub fn solve_joint_oracle(problem: &BAProblem, config: &SolverConfig) -> Result<JointOutput> {
    config.validate()?;
    let start = Instant::now();
    let n_free = problem.len() - 1;
    let mut poses = problem.init_poses.pose_list();
    let mut obs = observations(problem, &poses);
    let mut cells = carry_cells(&obs, &BTreeMap::new());
    let mut cost = joint_cost(&obs, &cells);
    let mut report = ConvergenceReport {
        iterations: 0,
        costs: vec![cost],
        update_norms: Vec::new(),
        h_nnz: 0,
        wall_time_s: 0.0,
        converged: false,
        termination: Termination::MaxIterations,
        jacobian_mode: config.jacobian_mode,
    };

    let mut carried = config.damping;
    'outer: for iter in 0..config.max_iterations {
        report.iterations = iter + 1;
        let residuals: usize = obs.values().map(Vec::len).sum();
        let dim = 3 * n_free + cells.len();
        if residuals > MAX_JOINT_RESIDUALS || dim > MAX_JOINT_UNKNOWNS {
            return Err(Error::TooLarge(format!(
                "{residuals} residuals and {dim} unknowns"
            )));
        }
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        let mut pose_cell_pairs = 0usize;
        let mut active_poses = vec![false; n_free];
        for (ci, (cell, samples)) in obs.iter().enumerate() {
            let col = 3 * n_free + ci;
            let i = cells[cell];
            for (n, s) in samples {
                let sw = s.weight.sqrt();
                let r = i - s.intensity;
                let e = sw * r;
                h[(col, col)] += s.weight;
                b[col] -= sw * e;
                if *n == 0 {
                    continue;
                }
                let row = 3 * (n - 1);
                let jp: Vector3<f64> = -s.d_intensity * sw + s.d_weight * (r / (2.0 * sw));
                let mut hpp = h.fixed_view_mut::<3, 3>(row, row);
                hpp += jp * jp.transpose();
                for a in 0..3 {
                    h[(row + a, col)] += jp[a] * sw;
                    h[(col, row + a)] += jp[a] * sw;
                    b[row + a] -= jp[a] * e;
                }
                pose_cell_pairs += 1;
                active_poses[n - 1] = true;
            }
        }
        report.h_nnz = 9 * active_poses.iter().filter(|a| **a).count() + 6 * pose_cell_pairs + cells.len();

        let diag = h.diagonal();
        let mut lambda = carried;
        let mut retries = 0;
        loop {
            let mut damped = h.clone();
            for k in 0..dim {
                damped[(k, k)] += lambda * diag[k];
            }
            let dx = match damped.cholesky() {
                Some(ch) => ch.solve(&b),
                None => {
                    if retries >= config.max_damping_retries {
                        let states = (0..n_free)
                            .filter(|&s| (0..3).any(|a| diag[3 * s + a] <= 0.0))
                            .map(|s| s + 1)
                            .collect();
                        return Err(Error::RankDeficient { states });
                    }
                    lambda = SolverConfig::next_damping(lambda);
                    retries += 1;
                    continue;
                }
            };
            let step = dx.norm();
            if step < config.update_tolerance {
                report.update_norms.push(step);
                report.converged = true;
                report.termination = Termination::UpdateTolerance;
                break 'outer;
            }
            let trial = |scale: f64| {
                let candidate = apply_update(&poses, &(dx.rows(0, 3 * n_free) * scale));
                let mut moved = cells.clone();
                for (ci, v) in moved.values_mut().enumerate() {
                    *v += scale * dx[3 * n_free + ci];
                }
                let new_obs = observations(problem, &candidate);
                let new_cells = carry_cells(&new_obs, &moved);
                let new_cost = joint_cost(&new_obs, &new_cells);
                (candidate, new_obs, new_cells, new_cost)
            };
            let mut best = trial(1.0);
            if best.3 <= cost {
                carried = relax_damping(lambda, config.damping);
                let mut scale = 1.0;
                for _ in 0..MAX_STEP_EXPANSIONS {
                    let next = trial(2.0 * scale);
                    if next.3 >= best.3 {
                        break;
                    }
                    best = next;
                    scale *= 2.0;
                }
                let (candidate, new_obs, new_cells, new_cost) = best;
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                poses = candidate;
                obs = new_obs;
                cells = new_cells;
                cost = new_cost;
                report.costs.push(cost);
                report.update_norms.push(step * scale);
                if rel < config.cost_rel_tolerance {
                    report.converged = true;
                    report.termination = Termination::CostTolerance;
                    break 'outer;
                }
                break;
            }
            if retries >= config.max_damping_retries {
                report.converged = true;
                report.termination = Termination::Stalled;
                break 'outer;
            }
            lambda = SolverConfig::next_damping(lambda);
            retries += 1;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(JointOutput {
        trajectory: problem.init_poses.with_poses(&poses),
        cells,
        report,
    })
}

/// Number of observed cells and valid samples at `poses`.
pub fn problem_size(problem: &BAProblem, poses: &[Pose2]) -> (usize, usize) {
    let obs = observations(problem, poses);
    (obs.len(), obs.values().map(Vec::len).sum())
}
