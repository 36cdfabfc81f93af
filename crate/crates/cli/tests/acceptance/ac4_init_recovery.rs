use sepba::ba::{solve_ba, BAProblem, SolverConfig};
use sepba::mapgrid::bounds_from_trajectory;
use sepba::metrics::ate;
use sepba::scan::WeightModel;
use sepba::sim::{perturb_trajectory, simulate, SimulationConfig};
use sepba::trajectory::Trajectory;

use crate::support::Criterion;

const MAGNITUDES_M: [f64; 3] = [1.0, 2.0, 3.0];
const SEEDS: u64 = 10;

#[test]
fn ac4_perturbed_initializations_are_recovered() {
    let c = Criterion::start(4, 600);
    let ds = simulate(&SimulationConfig::default()).unwrap();
    let layout = bounds_from_trajectory(&ds.ground_truth, 45.0, 1.0).unwrap().layout;
    let solve = |init: &Trajectory| {
        let p = BAProblem::new(ds.scans.clone(), init.clone(), WeightModel::default(), layout, None).unwrap();
        let out = solve_ba(&p, &SolverConfig::default()).unwrap();
        (ate(&out.trajectory, &ds.ground_truth).unwrap(), out.report.iterations)
    };
    let (baseline, _) = solve(&ds.ground_truth);

    let mut mean_iterations = Vec::new();
    let mut recovered = 0;
    let mut worst_ratio: f64 = 0.0;
    for mag in MAGNITUDES_M {
        let mut iters = 0usize;
        for seed in 0..SEEDS {
            // rotation bound in degrees is half the translation bound in meters
            let init = perturb_trajectory(&ds.ground_truth, mag, 0.5 * mag, seed);
            let (err, n) = solve(&init);
            iters += n;
            if mag == 3.0 {
                let ratio = err / baseline;
                worst_ratio = worst_ratio.max(ratio);
                if ratio <= 2.0 {
                    recovered += 1;
                }
            }
        }
        mean_iterations.push(iters as f64 / SEEDS as f64);
    }
    let monotone = mean_iterations.windows(2).all(|w| w[1] > w[0]);
    c.finish(
        recovered >= 9 && monotone,
        &format!(
            "3.0 m / 1.5 deg: {recovered}/{SEEDS} seeds within 2x of baseline ATE {baseline:.4} m (worst {worst_ratio:.2}x); mean iterations {mean_iterations:?}"
        ),
    );
}
