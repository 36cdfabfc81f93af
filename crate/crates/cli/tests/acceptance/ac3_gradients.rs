use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepba::ba::{reduced_cost, reduced_gradient, Covisibility};
use sepba::localizer::{footprint_cells, localization_cost, localization_system};
use sepba::mapgrid::build_map;
use sepba::scan::WeightModel;
use sepba::se2::{Pose2, Twist2};
use sepba::sim::render_sequence;
use sepba::trajectory::Trajectory;

use crate::support::{problem, random_poses, rel_err, sensor, smooth_world, Criterion};

const STEP: f64 = 1e-6;
const CONFIGS: u64 = 100;

fn nudge(pose: &Pose2, axis: usize, h: f64) -> Pose2 {
    let mut e = Vector3::zeros();
    e[axis] = h;
    pose.apply_perturbation(&Twist2::from_vector(&e))
}

fn reduced_errors() -> Vec<f64> {
    (0..CONFIGS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let world = smooth_world(seed, 20.0);
            let n = rng.random_range(2..5);
            let truth = random_poses(&mut rng, n, 1.0);
            let init = random_poses(&mut rng, n, 1.0);
            let res = rng.random_range(0.5..1.0);
            let p = problem(&world, &truth, &init, &sensor(25, 0.25, 0.01), seed, res);
            let poses = p.init_poses.pose_list();
            let covis = Covisibility::compute(&p, &poses);
            let grad = reduced_gradient(&p, &poses);
            let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
            for k in 1..n {
                for (a, &g) in grad[k - 1].iter().enumerate() {
                    let f = |h: f64| {
                        let mut ps = poses.clone();
                        ps[k] = nudge(&ps[k], a, h);
                        reduced_cost(&p, &covis, &ps)
                    };
                    numeric.push((f(STEP) - f(-STEP)) / (2.0 * STEP));
                    analytic.push(g);
                }
            }
            rel_err(&analytic, &numeric)
        })
        .collect()
}

fn localization_errors() -> Vec<f64> {
    (0..CONFIGS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let world = smooth_world(seed, 20.0);
            let sensor = sensor(25, 0.25, 0.01);
            let truth = random_poses(&mut rng, 3, 1.0);
            let p = problem(&world, &truth, &truth, &sensor, seed, 0.5);
            let map = build_map(&p.scans, &truth, &p.wm, None, p.layout).unwrap();
            let live = render_sequence(&world, &Trajectory::from_poses(vec![truth[1]], 1.0), &sensor, seed + 77)
                .unwrap()
                .remove(0);
            let pose = Pose2::new(
                truth[1].theta + rng.random_range(-0.05..0.05),
                truth[1].x + rng.random_range(-0.5..0.5),
                truth[1].y + rng.random_range(-0.5..0.5),
            );
            let cells = footprint_cells(&map, &live, &pose);
            let (_, b, _, _) = localization_system(&map, &live, &pose, &p.wm, None, &cells);
            let analytic: Vec<f64> = (-2.0 * b).iter().copied().collect();
            let numeric: Vec<f64> = (0..3)
                .map(|a| {
                    let f = |h: f64| localization_cost(&map, &live, &nudge(&pose, a, h), &p.wm, None, &cells).0;
                    (f(STEP) - f(-STEP)) / (2.0 * STEP)
                })
                .collect();
            rel_err(&analytic, &numeric)
        })
        .collect()
}

/// Per configuration, the worst relative error of intensity and weight
/// derivatives over 20 sample points.
fn sample_errors() -> Vec<f64> {
    let wm = WeightModel::default();
    (0..CONFIGS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
            let world = smooth_world(seed, 20.0);
            let pose = random_poses(&mut rng, 1, 2.0)[0];
            let scan = render_sequence(&world, &Trajectory::from_poses(vec![pose], 1.0), &sensor(25, 0.25, 0.0), 0)
                .unwrap()
                .remove(0);
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let q = Vector2::new(rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
                let m = pose.transform_point(&q);
                let lin = scan.sample_linearized(&m, &pose, &wm, None).unwrap();
                let (mut ai, mut ni, mut aw, mut nw) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for a in 0..3 {
                    let f = |h: f64| scan.sample(&m, &nudge(&pose, a, h), &wm, None);
                    let (hi, lo) = (f(STEP), f(-STEP));
                    ni.push((hi.intensity - lo.intensity) / (2.0 * STEP));
                    nw.push((hi.weight - lo.weight) / (2.0 * STEP));
                    ai.push(lin.d_intensity[a]);
                    aw.push(lin.d_weight[a]);
                }
                worst = worst.max(rel_err(&ai, &ni)).max(rel_err(&aw, &nw));
            }
            worst
        })
        .collect()
}

#[test]
fn ac3_gradients_match_finite_differences() {
    let c = Criterion::start(3, 120);
    let groups = [
        ("reduced", reduced_errors()),
        ("localization", localization_errors()),
        ("sample", sample_errors()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, errs) in &groups {
        let worst = errs.iter().copied().fold(0.0, f64::max);
        let bad = errs.iter().filter(|&&e| e.is_nan() || e >= 1e-4).count();
        pass &= bad == 0 && errs.len() == CONFIGS as usize;
        parts.push(format!("{name} worst {worst:.1e} ({bad} over)"));
    }
    c.finish(pass, &format!("{} configs each: {}", CONFIGS, parts.join(", ")));
}
