//! Trajectory generators and perturbations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::se2::Pose2;
use crate::trajectory::Trajectory;

/// Counter-clockwise circle around the origin starting at polar angle
/// `start_rad`, heading along the tangent. Every pass after the first is
/// shifted by half a step so revisits do not land on identical poses.
pub fn circle_loop(radius_m: f64, poses_per_pass: usize, passes: usize, start_rad: f64, dt_s: f64) -> Trajectory {
    let mut poses = Vec::with_capacity(poses_per_pass * passes);
    for pass in 0..passes {
        for k in 0..poses_per_pass {
            let phase = if pass == 0 { 0.0 } else { 0.5 };
            let phi = start_rad + std::f64::consts::TAU * (k as f64 + phase) / poses_per_pass as f64;
            poses.push(Pose2::new(
                phi + std::f64::consts::FRAC_PI_2,
                radius_m * phi.cos(),
                radius_m * phi.sin(),
            ));
        }
    }
    Trajectory::from_poses(poses, dt_s)
}

/// Straight drive along the x axis.
pub fn straight_line(poses: usize, step_m: f64, dt_s: f64) -> Trajectory {
    Trajectory::from_poses((0..poses).map(|k| Pose2::new(0.0, k as f64 * step_m, 0.0)), dt_s)
}

pub fn stationary(poses: usize, pose: Pose2, dt_s: f64) -> Trajectory {
    Trajectory::from_poses(vec![pose; poses], dt_s)
}

/// Moves poses `from..` sideways by `offset_m` in their own body frame.
pub fn lateral_shift(traj: &Trajectory, from: usize, offset_m: f64) -> Trajectory {
    let shift = Pose2::new(0.0, 0.0, offset_m);
    let poses: Vec<Pose2> = traj
        .pose_list()
        .iter()
        .enumerate()
        .map(|(i, p)| if i >= from { p.compose(&shift) } else { *p })
        .collect();
    traj.with_poses(&poses)
}

/// Uniform per-axis translation in `[-max, max]` and uniform rotation in
/// `[-max_rot, max_rot]` added to every pose but the first.
pub fn perturb_trajectory(traj: &Trajectory, max_trans_m: f64, max_rot_deg: f64, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_rot = max_rot_deg.to_radians();
    let mut uniform = |a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
    let poses: Vec<Pose2> = traj
        .pose_list()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == 0 {
                return *p;
            }
            let (dx, dy, dt) = (uniform(max_trans_m), uniform(max_trans_m), uniform(max_rot));
            Pose2::new(p.theta + dt, p.x + dx, p.y + dy)
        })
        .collect();
    traj.with_poses(&poses)
}

/// Body-frame odometry increments of `gt` with additive Gaussian noise on
/// every increment after the first (identity) row.
pub fn noisy_odometry(gt: &Trajectory, sigma_m: f64, sigma_rad: f64, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trans = Normal::new(0.0, sigma_m.max(0.0)).expect("finite sigma");
    let rot = Normal::new(0.0, sigma_rad.max(0.0)).expect("finite sigma");
    let deltas = gt.to_deltas();
    let noisy: Vec<Pose2> = deltas
        .pose_list()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if i == 0 {
                return *d;
            }
            let (nx, ny, nt) = (trans.sample(&mut rng), trans.sample(&mut rng), rot.sample(&mut rng));
            Pose2::new(d.theta + nt, d.x + nx, d.y + ny)
        })
        .collect();
    deltas.with_poses(&noisy)
}
