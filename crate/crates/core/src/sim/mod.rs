//! Synthetic worlds, scans and trajectories for testing and benchmarks.

pub mod motion;
pub mod render;
pub mod world;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::Scan;
use crate::trajectory::Trajectory;

pub use motion::{circle_loop, lateral_shift, noisy_odometry, perturb_trajectory, stationary, straight_line};
pub use render::{render_clean, render_scan, shadowed_pixels, SensorModel};
pub use world::{FeatureSpec, SyntheticWorld, WorldPreset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryShape {
    Loop {
        radius_m: f64,
        poses_per_pass: usize,
        passes: usize,
        /// Polar angle of the first pose.
        start_rad: f64,
    },
    Line {
        poses: usize,
        step_m: f64,
    },
    Stationary {
        poses: usize,
    },
}

impl TrajectoryShape {
    pub fn generate(&self, dt_s: f64) -> Result<Trajectory> {
        let t = match *self {
            Self::Loop {
                radius_m,
                poses_per_pass,
                passes,
                start_rad,
            } => circle_loop(radius_m, poses_per_pass, passes, start_rad, dt_s),
            Self::Line { poses, step_m } => straight_line(poses, step_m, dt_s),
            Self::Stationary { poses } => stationary(poses, crate::se2::Pose2::identity(), dt_s),
        };
        if t.len() < 2 {
            return Err(Error::InvalidInput("trajectory needs at least two poses".into()));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub preset: WorldPreset,
    pub world_seed: u64,
    pub noise_seed: u64,
    pub trajectory: TrajectoryShape,
    pub sensor: SensorModel,
    /// Per-increment odometry noise.
    pub odometry_sigma_m: f64,
    pub odometry_sigma_rad: f64,
    pub dt_s: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            preset: WorldPreset::Structured,
            world_seed: 1,
            noise_seed: 2,
            trajectory: TrajectoryShape::Loop {
                radius_m: 40.0,
                poses_per_pass: 60,
                passes: 1,
                start_rad: 0.05,
            },
            sensor: SensorModel::default(),
            odometry_sigma_m: 0.05,
            odometry_sigma_rad: 0.002,
            dt_s: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub world: SyntheticWorld,
    pub ground_truth: Trajectory,
    /// Noisy body-frame increments; row 0 is the identity.
    pub odometry: Trajectory,
    /// Odometry integrated from the true first pose.
    pub initial: Trajectory,
    pub scans: Vec<Scan>,
}

/// Renders one scan per ground-truth pose. Scan `i` draws its noise from
/// stream `i + 1` of the noise seed; odometry uses stream 0.
pub fn render_sequence(
    world: &SyntheticWorld,
    poses: &Trajectory,
    sensor: &SensorModel,
    noise_seed: u64,
) -> Result<Vec<Scan>> {
    poses
        .poses
        .par_iter()
        .enumerate()
        .map(|(i, tp)| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            rng.set_stream(i as u64 + 1);
            render_scan(world, &tp.pose, sensor, i, tp.timestamp_s, &mut rng)
        })
        .collect()
}

pub fn simulate(config: &SimulationConfig) -> Result<SimulatedDataset> {
    config.sensor.validate()?;
    let world = SyntheticWorld::from_preset(config.preset, config.world_seed)?;
    let ground_truth = config.trajectory.generate(config.dt_s)?;
    let scans = render_sequence(&world, &ground_truth, &config.sensor, config.noise_seed)?;
    let odometry = noisy_odometry(
        &ground_truth,
        config.odometry_sigma_m,
        config.odometry_sigma_rad,
        config.noise_seed,
    );
    let initial = Trajectory::integrate_deltas(&odometry, *ground_truth.pose(0));
    Ok(SimulatedDataset {
        world,
        ground_truth,
        odometry,
        initial,
        scans,
    })
}
