use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepba::mapgrid::build_map;

use crate::support::{problem, random_poses, sensor, smooth_world, Criterion};

/// Weighted least squares for one cell through a QR solve of the stacked system.
fn explicit_minimizer(samples: &[(f64, f64)]) -> f64 {
    let a = DMatrix::from_iterator(samples.len(), 1, samples.iter().map(|(_, w)| w.sqrt()));
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|(i, w)| w.sqrt() * i));
    let qr = a.qr();
    qr.r().solve_upper_triangular(&(qr.q().transpose() * b)).unwrap()[0]
}

#[test]
fn ac2_map_is_the_explicit_minimizer() {
    let c = Criterion::start(2, 5);
    let (mut worst, mut count_mismatch, mut cells): (f64, usize, usize) = (0.0, 0, 0);
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world = smooth_world(seed, 20.0);
        let n = rng.random_range(2..6);
        let truth = random_poses(&mut rng, n, 1.5);
        let res = rng.random_range(0.4..1.2);
        let p = problem(&world, &truth, &truth, &sensor(25, 0.25, 0.02), seed, res);
        let map = build_map(&p.scans, &truth, &p.wm, None, p.layout).unwrap();
        for cell in 0..p.layout.len() {
            let m = p.layout.center_of(cell);
            let samples: Vec<(f64, f64)> = p
                .scans
                .iter()
                .zip(&truth)
                .map(|(s, pose)| s.sample(&m, pose, &p.wm, None))
                .filter(|s| s.valid)
                .map(|s| (s.intensity, s.weight))
                .collect();
            if map.count()[cell] as usize != samples.len() {
                count_mismatch += 1;
            }
            if !samples.is_empty() {
                cells += 1;
                worst = worst.max((map.intensity()[cell] - explicit_minimizer(&samples)).abs());
            }
        }
    }
    c.finish(
        worst < 1e-12 && count_mismatch == 0,
        &format!("max |map - explicit| {worst:.2e} over {cells} cells in 50 instances"),
    );
}
