#![allow(dead_code)]

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepba::ba::BAProblem;
use sepba::mapgrid::GridLayout;
use sepba::scan::WeightModel;
use sepba::se2::Pose2;
use sepba::sim::{render_sequence, SensorModel, SyntheticWorld};
use sepba::trajectory::Trajectory;

/// Sum of a few random plane waves around 0.5; smooth and richly textured.
pub fn smooth_world(seed: u64, half_extent_m: f64) -> SyntheticWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let k = rng.random_range(0.4..1.2);
            (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..6.3), rng.random_range(0.06..0.12))
        })
        .collect();
    let res = 0.1;
    let n = (2.0 * half_extent_m / res).round() as usize + 1;
    let layout = GridLayout::new(Vector2::new(-half_extent_m, -half_extent_m), res, n, n).unwrap();
    SyntheticWorld::from_field(layout, |m| {
        0.5 + waves.iter().map(|(kx, ky, ph, a)| a * (kx * m.x + ky * m.y + ph).sin()).sum::<f64>()
    })
    .unwrap()
}

pub fn small_sensor(noise_sigma: f64) -> SensorModel {
    SensorModel {
        width: 25,
        height: 25,
        resolution_m: 0.25,
        noise_sigma,
        ..SensorModel::default()
    }
}

/// Poses scattered within `spread_m` of the origin, headings within 0.3 rad.
pub fn random_poses(rng: &mut ChaCha8Rng, n: usize, spread_m: f64) -> Vec<Pose2> {
    (0..n)
        .map(|_| {
            Pose2::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-spread_m..spread_m),
                rng.random_range(-spread_m..spread_m),
            )
        })
        .collect()
}

/// Small overlapping problem: scans rendered at `truth`, solved from `init`.
pub fn problem(world: &SyntheticWorld, truth: &[Pose2], init: &[Pose2], sensor: &SensorModel, noise_seed: u64, res: f64) -> BAProblem {
    let gt = Trajectory::from_poses(truth.to_vec(), 1.0);
    let scans = render_sequence(world, &gt, sensor, noise_seed).unwrap();
    let n = (12.0 / res).ceil() as usize;
    let layout = GridLayout::new(Vector2::new(-6.0, -6.0), res, n, n).unwrap();
    BAProblem::new(scans, Trajectory::from_poses(init.to_vec(), 1.0), WeightModel::default(), layout, None).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}
