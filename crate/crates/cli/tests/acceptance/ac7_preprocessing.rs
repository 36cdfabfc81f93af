use nalgebra::Vector2;
use sepba::preprocess::{
    adaptive_blur, build_cumulative_mask, cast_ray, cumulative_cap, select_keyframes, BlurPolicy, KeyframePolicy,
};
use sepba::scan::Scan;
use sepba::se2::Pose2;
use sepba::trajectory::Trajectory;

use crate::support::Criterion;

const SIZE: usize = 61;

/// Direct 2D convolution with the truncated, normalized Gaussian and zero padding.
fn blur_oracle(px: &[f64], sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let g: Vec<f64> = (-r..=r).map(|x| (-0.5 * (x * x) as f64 / (sigma * sigma)).exp()).collect();
    let norm: f64 = g.iter().sum();
    let n = SIZE as isize;
    let mut out = vec![0.0; px.len()];
    for v in 0..n {
        for u in 0..n {
            let mut acc = 0.0;
            for dv in -r..=r {
                for du in -r..=r {
                    let (uu, vv) = (u + du, v + dv);
                    if (0..n).contains(&uu) && (0..n).contains(&vv) {
                        acc += g[(du + r) as usize] * g[(dv + r) as usize] * px[(vv * n + uu) as usize];
                    }
                }
            }
            out[(v * n + u) as usize] = acc / (norm * norm);
        }
    }
    out
}

fn share_above(px: &[f64], threshold: f64) -> f64 {
    px.iter().filter(|&&p| p > threshold).count() as f64 / px.len() as f64
}

/// Image with `dots` isolated bright pixels.
fn dotted(dots: usize) -> Vec<f64> {
    let mut px = vec![0.0; SIZE * SIZE];
    for k in 0..dots {
        let (u, v) = (5 + 12 * (k % 5), 5 + 12 * (k / 5));
        px[v * SIZE + u] = 0.95;
    }
    px
}

/// Dots on a dim patch just under the threshold: blurring lifts the
/// neighborhood of each dot above it, so occupancy grows with sigma.
fn dotted_patch(dots: usize) -> Vec<f64> {
    let mut px = vec![0.0; SIZE * SIZE];
    for v in 10..40 {
        for u in 10..40 {
            px[v * SIZE + u] = 0.45;
        }
    }
    for k in 0..dots {
        let (u, v) = (14 + 5 * (k % 5), 14 + 5 * (k / 5));
        px[v * SIZE + u] = 1.0;
    }
    px
}

/// Sigma the schedule should stop at, found with the oracle blur.
fn expected_sigma(px: &[f64], p: &BlurPolicy) -> f64 {
    if share_above(px, p.intensity_threshold) >= p.occupancy_bound {
        return 0.0;
    }
    let mut step = 1.0;
    loop {
        let sigma = (step * p.sigma_step_px).min(p.sigma_max_px);
        if share_above(&blur_oracle(px, sigma), p.intensity_threshold) >= p.occupancy_bound || sigma >= p.sigma_max_px {
            return sigma;
        }
        step += 1.0;
    }
}

fn check_blur() -> (bool, String) {
    let policy = BlurPolicy::default();
    let ok_defaults = policy.intensity_threshold == 0.5 && policy.occupancy_bound == 0.003;
    // 11 of 3721 pixels is just under 0.3 %, 12 is just over
    let mut ok = ok_defaults;
    let mut sigmas = Vec::new();
    let mut halted_early = false;
    let cases = [1, 4, 11, 12, 20].map(|d| (d, dotted(d)));
    let patches = [2, 6, 10].map(|d| (100 + d, dotted_patch(d)));
    for (dots, px) in cases.into_iter().chain(patches) {
        let scan = Scan::new(0, 0.0, SIZE, SIZE, 0.5, px.clone()).unwrap();
        let (out, sigma) = adaptive_blur(&scan, &policy);
        let want = expected_sigma(&px, &policy);
        ok &= sigma == want;
        if sigma > 0.0 && sigma < policy.sigma_max_px {
            halted_early = true;
            // halted at the first sigma that reaches the bound
            ok &= share_above(out.pixels(), 0.5) >= policy.occupancy_bound;
            if sigma > policy.sigma_step_px {
                let before = blur_oracle(&px, sigma - policy.sigma_step_px);
                ok &= share_above(&before, 0.5) < policy.occupancy_bound;
            }
        }
        sigmas.push((dots, sigma));
    }
    ok &= sigmas.iter().find(|s| s.0 == 11).unwrap().1 > 0.0;
    ok &= sigmas.iter().find(|s| s.0 == 12).unwrap().1 == 0.0;
    ok &= halted_early;
    (ok, format!("blur sigmas by case (100+ = dots on a dim patch) {sigmas:?}"))
}

fn check_cumulative() -> (bool, String) {
    let w = 41;
    let center = Vector2::new(20.0, 20.0);
    let cap = cumulative_cap(w, w);

    // constant 0.25: along an axis the score after t steps is (t + 1) / 21
    let flat = Scan::new(0, 0.0, w, w, 0.5, vec![0.25; w * w]).unwrap();
    let mask = build_cumulative_mask(&flat, &center);
    let mut axis_err: f64 = 0.0;
    for t in 0..=20 {
        let want = (t + 1) as f64 * 0.25 / cap;
        axis_err = axis_err.max((mask.score(20 + t, 20) - want).abs());
    }
    let edge_is_one = (mask.score(40, 20) - 1.0).abs() < 1e-12;
    // only the tail beyond 0.9 is dropped, and nothing is a zero return
    let mut rule_ok = true;
    for t in 0..=20 {
        let want = (t + 1) as f64 / 21.0 > 0.9;
        rule_ok &= mask.is_excluded(20 + t, 20, 0.25) == want;
    }

    // a two-pixel wall at u = 28: zeros behind it are occluded, zeros in front are not
    let mut px = vec![0.0; w * w];
    for v in 0..w {
        px[v * w + 28] = 1.0;
        px[v * w + 29] = 1.0;
    }
    let walled = Scan::new(0, 0.0, w, w, 0.5, px.clone()).unwrap();
    let mask = build_cumulative_mask(&walled, &center);
    for u in 0..w {
        let score = mask.score(u, 20);
        let zero = px[20 * w + u] == 0.0;
        let want = (zero && score > 0.2) || score > 0.9;
        rule_ok &= mask.is_excluded(u, 20, px[20 * w + u]) == want;
    }
    rule_ok &= !mask.is_excluded(25, 20, 0.0);
    rule_ok &= mask.is_excluded(33, 20, 0.0);

    // scores never fall along any ray
    let mut monotone = true;
    for (u, v) in [(0, 0), (40, 7), (13, 40), (40, 40), (0, 29)] {
        let ray = cast_ray(&walled, &center, &Vector2::new(u as f64, v as f64), cap);
        monotone &= ray.windows(2).all(|p| p[1].1 >= p[0].1);
    }
    (
        axis_err < 1e-12 && edge_is_one && rule_ok && monotone,
        format!("axis score error {axis_err:.1e}, rules {rule_ok}, monotone {monotone}"),
    )
}

fn check_keyframes() -> (bool, String) {
    let policy = KeyframePolicy::default();
    let ok_defaults = policy.min_translation_m == 5.0 && (policy.min_rotation_rad.to_degrees() - 30.0).abs() < 1e-12;
    let line = Trajectory::from_poses((0..21).map(|k| Pose2::new(0.0, k as f64, 0.0)), 1.0);
    let spin = Trajectory::from_poses((0..13).map(|k| Pose2::new((7.5 * k as f64).to_radians(), 0.0, 0.0)), 1.0);
    let near = Trajectory::from_poses(
        vec![
            Pose2::identity(),
            Pose2::new(29.9f64.to_radians(), 4.9, 0.0),
            Pose2::new(0.0, 0.0, 4.99),
            Pose2::new(0.0, 3.0, 4.0),
        ],
        1.0,
    );
    let a = select_keyframes(&line, &policy);
    let b = select_keyframes(&spin, &policy);
    let c = select_keyframes(&near, &policy);
    let ok = ok_defaults && a == vec![0, 5, 10, 15, 20] && b == vec![0, 4, 8, 12] && c == vec![0, 3];
    (ok, format!("keyframes line {a:?}, spin {b:?}, threshold edge {c:?}"))
}

#[test]
fn ac7_preprocessing_properties() {
    let c = Criterion::start(7, 10);
    let checks = [check_blur(), check_cumulative(), check_keyframes()];
    let pass = checks.iter().all(|c| c.0);
    let detail: Vec<&str> = checks.iter().map(|c| c.1.as_str()).collect();
    c.finish(pass, &detail.join("; "));
}
