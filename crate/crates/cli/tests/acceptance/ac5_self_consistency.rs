use sepba::ba::{solve_ba, BAProblem, SolverConfig};
use sepba::mapgrid::bounds_from_trajectory;
use sepba::metrics::{self_consistency, SELF_CONSISTENCY_MAX_DISTANCE_M, SELF_CONSISTENCY_MIN_TRAVEL_M};
use sepba::scan::WeightModel;
use sepba::sim::{lateral_shift, simulate, SimulationConfig, TrajectoryShape};

use crate::support::Criterion;

const POSES_PER_PASS: usize = 60;

#[test]
fn ac5_misaligned_second_pass_is_pulled_into_agreement() {
    let c = Criterion::start(5, 300);
    let config = SimulationConfig {
        trajectory: TrajectoryShape::Loop {
            radius_m: 60.0,
            poses_per_pass: POSES_PER_PASS,
            passes: 2,
            start_rad: 0.05,
        },
        ..SimulationConfig::default()
    };
    let ds = simulate(&config).unwrap();
    // the second pass starts half a meter off to the side
    let init = lateral_shift(&ds.ground_truth, POSES_PER_PASS, 0.5);
    let layout = bounds_from_trajectory(&ds.ground_truth, 45.0, 1.0).unwrap().layout;
    let p = BAProblem::new(ds.scans.clone(), init.clone(), WeightModel::default(), layout, None).unwrap();
    let out = solve_ba(&p, &SolverConfig::default()).unwrap();
    let score = |t| {
        self_consistency(t, &ds.ground_truth, SELF_CONSISTENCY_MIN_TRAVEL_M, SELF_CONSISTENCY_MAX_DISTANCE_M)
            .unwrap()
            .expect("two passes revisit")
    };
    let before = score(&init);
    let after = score(&out.trajectory);
    let factor = before.translation_m / after.translation_m;
    c.finish(
        factor >= 5.0,
        &format!(
            "self-consistency {:.4} m -> {:.4} m ({factor:.0}x) over {} pairs, {} iterations",
            before.translation_m, after.translation_m, after.pairs, out.report.iterations
        ),
    );
}
