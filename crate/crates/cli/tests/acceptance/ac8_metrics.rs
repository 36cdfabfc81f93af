use sepba::metrics::{ate, epe, evaluate, loc_rpe, self_consistency};
use sepba::se2::Pose2;
use sepba::sim::{circle_loop, lateral_shift, straight_line};
use sepba::trajectory::Trajectory;

use crate::support::Criterion;

fn moved(t: &Trajectory, a: &Pose2) -> Trajectory {
    let poses: Vec<Pose2> = t.pose_list().iter().map(|p| a.compose(p)).collect();
    t.with_poses(&poses)
}

/// RMSE after the best rigid alignment, by coarse-to-fine grid search.
fn brute_force_ate(est: &Trajectory, gt: &Trajectory) -> f64 {
    let rmse = |theta: f64, tx: f64, ty: f64| {
        let a = Pose2::new(theta, tx, ty);
        let s: f64 = est
            .poses
            .iter()
            .zip(&gt.poses)
            .map(|(e, g)| (g.pose.translation() - a.transform_point(&e.pose.translation())).norm_squared())
            .sum();
        (s / est.len() as f64).sqrt()
    };
    let (mut best, mut center) = (f64::INFINITY, (0.0, 0.0, 0.0));
    let (mut span_r, mut span_t) = (0.2, 2.0);
    while span_t > 1e-4 {
        let c = center;
        for i in -10..=10 {
            for j in -10..=10 {
                for k in -10..=10 {
                    let cand = (
                        c.0 + span_r * i as f64 / 10.0,
                        c.1 + span_t * j as f64 / 10.0,
                        c.2 + span_t * k as f64 / 10.0,
                    );
                    let v = rmse(cand.0, cand.1, cand.2);
                    if v < best {
                        best = v;
                        center = cand;
                    }
                }
            }
        }
        span_r /= 5.0;
        span_t /= 5.0;
    }
    best
}

#[test]
fn ac8_metrics_match_their_references() {
    let c = Criterion::start(8, 30);
    let mut fails: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };

    // identity and rigid invariance
    let loop2 = circle_loop(60.0, 80, 2, 0.0, 1.0);
    let r = evaluate(&loop2, &loop2, None).unwrap();
    let sc = r.self_consistency.unwrap();
    check("identity", r.ate_m < 1e-9 && r.epe_m < 1e-9 && sc.translation_m < 1e-9 && sc.rotation_deg < 1e-9);
    let shifted = moved(&loop2, &Pose2::new(1.1, -40.0, 7.5));
    check("rigid ate", ate(&shifted, &loop2).unwrap() < 1e-9);
    check("rigid epe", epe(&shifted, &loop2, 0).unwrap() < 1e-9);

    // brute-force alignment
    let mut worst_gap: f64 = 0.0;
    let gt = circle_loop(20.0, 40, 1, 0.3, 1.0);
    let wobble: Vec<Pose2> = gt
        .pose_list()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let f = i as f64;
            Pose2::new(p.theta, p.x + 0.2 * (1.3 * f).sin(), p.y + 0.15 * (0.7 * f).cos())
        })
        .collect();
    let est = moved(&gt.with_poses(&wobble), &Pose2::new(0.05, 0.4, -0.3));
    worst_gap = worst_gap.max((ate(&est, &gt).unwrap() - brute_force_ate(&est, &gt)).abs());
    let line = straight_line(100, 1.0, 1.0);
    let mut poses = line.pose_list();
    poses[37].y += 1.0;
    let est = line.with_poses(&poses);
    worst_gap = worst_gap.max((ate(&est, &line).unwrap() - brute_force_ate(&est, &line)).abs());
    check("brute-force alignment", worst_gap < 1e-3);

    // end point offset
    let one = circle_loop(30.0, 25, 1, 0.0, 1.0);
    let mut poses = one.pose_list();
    let last = poses.len() - 1;
    poses[last] = poses[last].compose(&Pose2::new(0.0, 2.0, 0.0));
    check("epe offset", (epe(&one.with_poses(&poses), &one, 0).unwrap() - 2.0).abs() < 1e-12);

    // revisit shift and empty sentinel
    let sc = self_consistency(&lateral_shift(&loop2, 80, 0.5), &loop2, 300.0, 25.0).unwrap().unwrap();
    check("self-consistency shift", (sc.translation_m - 0.5).abs() < 1e-9);
    check("no revisits", self_consistency(&line, &line, 300.0, 25.0).unwrap().is_none());
    let json = serde_json::to_string(&evaluate(&line, &line, None).unwrap()).unwrap();
    check("null sentinel", json.contains("\"self_consistency\":null") && json.contains("\"loc_rpe\":null"));

    // localization error in the reference frame
    let reference = circle_loop(20.0, 30, 1, 0.0, 1.0);
    let errors: Vec<Pose2> = (0..30)
        .map(|i| {
            let f = i as f64;
            Pose2::new(0.002 * (f * 0.9).sin(), 0.05 * (f * 1.7).cos(), 0.03 * (f * 0.4).sin())
        })
        .collect();
    let est: Vec<Pose2> = reference.pose_list().iter().zip(&errors).map(|(r, e)| r.compose(e)).collect();
    let pairs: Vec<(usize, usize)> = (0..30).map(|i| (i, i)).collect();
    let got = loc_rpe(&reference, &reference.with_poses(&est), &pairs).unwrap();
    let rms = |f: &dyn Fn(&Pose2) -> f64| (errors.iter().map(|e| f(e).powi(2)).sum::<f64>() / 30.0).sqrt();
    check(
        "loc_rpe",
        (got.longitudinal_m - rms(&|e| e.x)).abs() < 1e-12
            && (got.lateral_m - rms(&|e| e.y)).abs() < 1e-12
            && (got.yaw_deg - rms(&|e| e.theta.to_degrees())).abs() < 1e-9,
    );

    let pass = fails.is_empty();
    c.finish(
        pass,
        &format!("alignment gap to brute force {worst_gap:.1e} m; failed checks {fails:?}"),
    );
}
