use sepba::localizer::{localize, Localizer, LocalizerConfig};
use sepba::mapgrid::{bounds_from_trajectory, build_map, GridMap};
use sepba::metrics::{associate_by_time, loc_rpe};
use sepba::scan::{Scan, WeightModel};
use sepba::se2::Pose2;
use sepba::sim::{render_clean, render_sequence, simulate, FeatureSpec, SimulationConfig, SyntheticWorld, WorldPreset};
use sepba::trajectory::Trajectory;

use crate::support::{sensor, Criterion};

fn world_from(map: &GridMap) -> SyntheticWorld {
    SyntheticWorld {
        spec: FeatureSpec::preset(WorldPreset::Structured),
        seed: 0,
        truth: map.clone(),
    }
}

/// Pose moved onto the nearest cell center with heading a multiple of 90 degrees,
/// so every scan pixel lands exactly on a map cell center.
fn lattice_pose(map: &GridMap, p: &Pose2) -> Pose2 {
    let o = map.layout.origin();
    let r = map.layout.resolution_m;
    let snap = |v: f64, o: f64| o + ((v - o) / r).round() * r;
    let quarter = std::f64::consts::FRAC_PI_2;
    Pose2::new((p.theta / quarter).round() * quarter, snap(p.x, o.x), snap(p.y, o.y))
}

#[test]
fn ac6_localization_fixed_point_basin_and_cross_session() {
    let c = Criterion::start(6, 300);
    let config = SimulationConfig::default();
    let ds = simulate(&config).unwrap();
    let wm = WeightModel::default();
    let lc = LocalizerConfig::default();
    let layout = bounds_from_trajectory(&ds.ground_truth, 45.0, 1.0).unwrap().layout;
    let map = build_map(&ds.scans, &ds.ground_truth.pose_list(), &wm, None, layout).unwrap();
    let world = world_from(&map);

    // fixed point: noise-free scans whose pixels coincide with map cells
    let lattice = sensor(61, map.layout.resolution_m, 0.0);
    let mut fixed_worst: f64 = 0.0;
    let mut fixed_ok = true;
    for (i, tp) in ds.ground_truth.poses.iter().enumerate().step_by(6) {
        let truth = lattice_pose(&map, &tp.pose);
        let px = render_clean(&world, &truth, &lattice);
        let scan = Scan::new(i, tp.timestamp_s, lattice.width, lattice.height, lattice.resolution_m, px).unwrap();
        match localize(&map, &scan, &truth, &wm, None, &lc) {
            Ok(r) => {
                let e = truth.between(&r.pose);
                fixed_worst = fixed_worst.max(e.translation_norm()).max(e.theta.abs());
            }
            Err(_) => fixed_ok = false,
        }
    }

    // basin: 2 m / 1 degree offsets in rotating directions
    let (mut basin_t, mut basin_r): (f64, f64) = (0.0, 0.0);
    let mut basin_ok = true;
    for (i, tp) in ds.ground_truth.poses.iter().enumerate().step_by(3) {
        let scan = render_sequence(&world, &Trajectory::from_poses(vec![tp.pose], 1.0), &config.sensor, 50 + i as u64)
            .unwrap()
            .remove(0);
        let ang = i as f64 * 2.39;
        let turn = if i % 2 == 0 { 1f64 } else { -1f64 }.to_radians();
        let start = tp.pose.compose(&Pose2::new(turn, 2.0 * ang.cos(), 2.0 * ang.sin()));
        match localize(&map, &scan, &start, &wm, None, &lc) {
            Ok(r) => {
                let e = tp.pose.between(&r.pose);
                basin_t = basin_t.max(e.translation_norm());
                basin_r = basin_r.max(e.theta.abs().to_degrees());
            }
            Err(_) => basin_ok = false,
        }
    }

    // cross session: same route, fresh noise, tracked with noisy odometry
    let session = simulate(&SimulationConfig {
        noise_seed: 99,
        ..config.clone()
    })
    .unwrap();
    let mut tracker = Localizer::new(&map, wm, lc, *session.ground_truth.pose(0));
    let mut failed = 0;
    let mut est = Vec::new();
    for (k, scan) in session.scans.iter().enumerate() {
        if k > 0 {
            tracker.propagate(session.odometry.pose(k));
        }
        if tracker.localize_frame(scan, None).is_err() {
            failed += 1;
        }
        est.push(tracker.pose());
    }
    let est = session.ground_truth.with_poses(&est);
    let pairs = associate_by_time(&ds.ground_truth, &est, 1e-6);
    let rpe = loc_rpe(&ds.ground_truth, &est, &pairs).unwrap();

    let pass = fixed_ok
        && fixed_worst < 1e-6
        && basin_ok
        && basin_t < 0.02
        && basin_r < 0.02
        && rpe.longitudinal_m < 0.10
        && rpe.lateral_m < 0.10
        && rpe.yaw_deg < 0.1;
    c.finish(
        pass,
        &format!(
            "fixed point {fixed_worst:.1e}; basin worst {basin_t:.4} m / {basin_r:.4} deg; cross-session RPE {:.4} / {:.4} m, {:.4} deg, {failed} failed frames",
            rpe.longitudinal_m, rpe.lateral_m, rpe.yaw_deg
        ),
    );
}
