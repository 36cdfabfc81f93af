//! Trajectory and localization error metrics.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se2::Pose2;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfConsistency {
    pub translation_m: f64,
    pub rotation_deg: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationRpe {
    pub longitudinal_m: f64,
    pub lateral_m: f64,
    pub yaw_deg: f64,
}

/// Metric summary. Metrics that could not be computed serialize as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub ate_m: f64,
    pub epe_m: f64,
    pub self_consistency: Option<SelfConsistency>,
    pub loc_rpe: Option<LocalizationRpe>,
}

fn check_pair(est: &Trajectory, gt: &Trajectory) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < 2 {
        return Err(Error::InvalidInput("metrics need at least two poses".into()));
    }
    Ok(())
}

/// Rigid transform `A` minimizing `sum |A est_n - gt_n|^2` over positions.
pub fn align(est: &Trajectory, gt: &Trajectory) -> Result<Pose2> {
    check_pair(est, gt)?;
    let n = est.len() as f64;
    let p: Vec<Vector2<f64>> = est.poses.iter().map(|t| t.pose.translation()).collect();
    let q: Vec<Vector2<f64>> = gt.poses.iter().map(|t| t.pose.translation()).collect();
    let mp = p.iter().sum::<Vector2<f64>>() / n;
    let mq = q.iter().sum::<Vector2<f64>>() / n;
    let cov: Matrix2<f64> = p
        .iter()
        .zip(&q)
        .map(|(a, b)| (b - mq) * (a - mp).transpose())
        .sum::<Matrix2<f64>>()
        / n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let sign = (u.determinant() * vt.determinant()).signum();
    let rot = u * Matrix2::new(1.0, 0.0, 0.0, sign) * vt;
    let t = mq - rot * mp;
    Ok(Pose2::new(rot[(1, 0)].atan2(rot[(0, 0)]), t.x, t.y))
}

/// Position residuals `gt_n - A est_n` after alignment.
pub fn aligned_errors(est: &Trajectory, gt: &Trajectory) -> Result<Vec<Vector2<f64>>> {
    let a = align(est, gt)?;
    Ok(est
        .poses
        .iter()
        .zip(&gt.poses)
        .map(|(e, g)| g.pose.translation() - a.transform_point(&e.pose.translation()))
        .collect())
}

/// Absolute trajectory error: RMSE of aligned position residuals.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let errs = aligned_errors(est, gt)?;
    Ok((errs.iter().map(|e| e.norm_squared()).sum::<f64>() / errs.len() as f64).sqrt())
}

/// End-point error: translation of `gt_N^-1 gt_s est_s^-1 est_N` with `N`
/// the last pose and `s = start`.
pub fn epe(est: &Trajectory, gt: &Trajectory, start: usize) -> Result<f64> {
    check_pair(est, gt)?;
    let last = est.len() - 1;
    if start > last {
        return Err(Error::InvalidInput(format!("start index {start} out of range")));
    }
    let e = gt
        .pose(last)
        .inverse()
        .compose(gt.pose(start))
        .compose(&est.pose(start).inverse())
        .compose(est.pose(last));
    Ok(e.translation_norm())
}

/// Revisit consistency: for each pose, the nearest ground-truth pose at least
/// `min_travel_m` of path away but within `max_euclid_m`; compares estimated
/// and true relative poses. `None` if no pose has a partner.
pub fn self_consistency(
    est: &Trajectory,
    gt: &Trajectory,
    min_travel_m: f64,
    max_euclid_m: f64,
) -> Result<Option<SelfConsistency>> {
    check_pair(est, gt)?;
    let s = gt.arc_lengths();
    let (mut st, mut sr, mut count) = (0.0, 0.0, 0usize);
    for n in 0..gt.len() {
        let pn = gt.pose(n).translation();
        let candidates: Vec<(usize, f64)> = (0..gt.len())
            .filter(|&k| (s[k] - s[n]).abs() >= min_travel_m)
            .map(|k| (k, (gt.pose(k).translation() - pn).norm()))
            .filter(|&(_, d)| d <= max_euclid_m)
            .collect();
        let Some(nearest) = candidates.iter().map(|c| c.1).min_by(f64::total_cmp) else {
            continue;
        };
        // near-ties go to the lowest index so roundoff cannot swap partners
        let k = candidates
            .iter()
            .find(|c| c.1 <= nearest + PARTNER_TIE_M)
            .map(|c| c.0)
            .expect("nearest candidate exists");
        let rel_gt = gt.pose(n).between(gt.pose(k));
        let rel_est = est.pose(n).between(est.pose(k));
        let e = rel_gt.between(&rel_est);
        st += e.translation_norm().powi(2);
        sr += e.theta.to_degrees().powi(2);
        count += 1;
    }
    if count == 0 {
        return Ok(None);
    }
    Ok(Some(SelfConsistency {
        translation_m: (st / count as f64).sqrt(),
        rotation_deg: (sr / count as f64).sqrt(),
        pairs: count,
    }))
}

/// Localization error in the reference pose's body frame for each
/// `(reference, estimate)` index pair, as per-axis RMSE.
pub fn loc_rpe(
    reference: &Trajectory,
    estimate: &Trajectory,
    associations: &[(usize, usize)],
) -> Result<LocalizationRpe> {
    if associations.is_empty() {
        return Err(Error::InvalidInput("no localization associations".into()));
    }
    let (mut lon, mut lat, mut yaw) = (0.0, 0.0, 0.0);
    for &(i, j) in associations {
        if i >= reference.len() || j >= estimate.len() {
            return Err(Error::InvalidInput(format!("association ({i}, {j}) out of range")));
        }
        let e = reference.pose(i).between(estimate.pose(j));
        lon += e.x * e.x;
        lat += e.y * e.y;
        yaw += e.theta.to_degrees().powi(2);
    }
    let n = associations.len() as f64;
    Ok(LocalizationRpe {
        longitudinal_m: (lon / n).sqrt(),
        lateral_m: (lat / n).sqrt(),
        yaw_deg: (yaw / n).sqrt(),
    })
}

/// Pairs every estimate pose with the reference pose whose timestamp is
/// closest, keeping pairs within `tolerance_s`.
pub fn associate_by_time(reference: &Trajectory, estimate: &Trajectory, tolerance_s: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (j, e) in estimate.poses.iter().enumerate() {
        let best = reference
            .poses
            .iter()
            .enumerate()
            .map(|(i, r)| (i, (r.timestamp_s - e.timestamp_s).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, dt)) = best {
            if dt <= tolerance_s {
                out.push((i, j));
            }
        }
    }
    out
}

/// Partner distances closer than this count as equal.
pub const PARTNER_TIE_M: f64 = 1e-9;

/// Default revisit thresholds.
pub const SELF_CONSISTENCY_MIN_TRAVEL_M: f64 = 300.0;
pub const SELF_CONSISTENCY_MAX_DISTANCE_M: f64 = 25.0;

/// All trajectory metrics with default parameters.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, loc: Option<LocalizationRpe>) -> Result<MetricReport> {
    Ok(MetricReport {
        ate_m: ate(est, gt)?,
        epe_m: epe(est, gt, 0)?,
        self_consistency: self_consistency(
            est,
            gt,
            SELF_CONSISTENCY_MIN_TRAVEL_M,
            SELF_CONSISTENCY_MAX_DISTANCE_M,
        )?,
        loc_rpe: loc,
    })
}
