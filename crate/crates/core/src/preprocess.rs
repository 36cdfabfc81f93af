//! Scan filtering run once before optimization: motion-based keyframing,
//! adaptive Gaussian blurring of feature-sparse scans and the cumulative
//! (per-ray running intensity) mask that rejects occluded and saturated
//! returns.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::Scan;
use crate::se2::normalize_angle;
use crate::trajectory::Trajectory;

/// Slack on keyframe thresholds so that e.g. three 10 degree steps count as 30 degrees.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframePolicy {
    pub min_translation_m: f64,
    pub min_rotation_rad: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            min_translation_m: 5.0,
            min_rotation_rad: 30f64.to_radians(),
        }
    }
}

impl KeyframePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_translation_m > 0.0 && self.min_rotation_rad > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "keyframe thresholds must be strictly positive".into(),
            ))
        }
    }

    /// True when `b` has moved far enough from `a` to become a keyframe.
    pub fn is_sufficient_motion(&self, a: &crate::se2::Pose2, b: &crate::se2::Pose2) -> bool {
        let rel = a.between(b);
        rel.translation_norm() >= self.min_translation_m - THRESHOLD_SLACK
            || normalize_angle(rel.theta).abs() >= self.min_rotation_rad - THRESHOLD_SLACK
    }
}

/// Greedy keyframing: the first pose is always kept, later poses are kept
/// when they moved enough relative to the last kept one.
pub fn select_keyframes(traj: &Trajectory, policy: &KeyframePolicy) -> Vec<usize> {
    let mut kept = Vec::new();
    for (i, tp) in traj.poses.iter().enumerate() {
        match kept.last() {
            None => kept.push(i),
            Some(&last) => {
                if policy.is_sufficient_motion(traj.pose(last), &tp.pose) {
                    kept.push(i);
                }
            }
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurPolicy {
    pub intensity_threshold: f64,
    pub occupancy_bound: f64,
    pub sigma_step_px: f64,
    pub sigma_max_px: f64,
}

impl Default for BlurPolicy {
    fn default() -> Self {
        Self {
            intensity_threshold: 0.5,
            occupancy_bound: 0.003,
            sigma_step_px: 1.0,
            sigma_max_px: 15.0,
        }
    }
}

impl BlurPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.occupancy_bound > 0.0 && self.occupancy_bound < 1.0) {
            return Err(Error::InvalidInput(format!(
                "occupancy bound {} must be in (0, 1)",
                self.occupancy_bound
            )));
        }
        if self.sigma_step_px.is_nan() || self.sigma_step_px <= 0.0 || self.sigma_max_px < self.sigma_step_px {
            return Err(Error::InvalidInput(
                "blur schedule needs sigma_step_px > 0 and sigma_max_px >= sigma_step_px".into(),
            ));
        }
        Ok(())
    }
}

/// Fraction of pixels strictly above `threshold`.
pub fn occupancy(scan: &Scan, threshold: f64) -> f64 {
    let above = scan.pixels().iter().filter(|&&p| p > threshold).count();
    above as f64 / scan.pixels().len() as f64
}

/// Normalized Gaussian kernel truncated at 3 sigma.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with zero padding outside the image.
pub fn gaussian_blur(scan: &Scan, sigma: f64) -> Scan {
    if sigma <= 0.0 {
        return scan.clone();
    }
    let (w, h) = (scan.width(), scan.height());
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src = scan.pixels();
    let mut tmp = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in k.iter().enumerate() {
                let uu = u as isize + ki as isize - r;
                if uu >= 0 && (uu as usize) < w {
                    acc += kv * src[v * w + uu as usize];
                }
            }
            tmp[v * w + u] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in k.iter().enumerate() {
                let vv = v as isize + ki as isize - r;
                if vv >= 0 && (vv as usize) < h {
                    acc += kv * tmp[vv as usize * w + u];
                }
            }
            out[v * w + u] = acc;
        }
    }
    scan.with_pixels(out)
}

/// Blurs the scan with increasing sigma until its occupancy reaches the
/// bound or the schedule runs out. Returns the scan and the sigma applied
/// (0 when the scan was already informative).
pub fn adaptive_blur(scan: &Scan, policy: &BlurPolicy) -> (Scan, f64) {
    if occupancy(scan, policy.intensity_threshold) >= policy.occupancy_bound {
        return (scan.clone(), 0.0);
    }
    let mut step = 1;
    loop {
        let sigma = (step as f64 * policy.sigma_step_px).min(policy.sigma_max_px);
        let blurred = gaussian_blur(scan, sigma);
        if occupancy(&blurred, policy.intensity_threshold) >= policy.occupancy_bound
            || sigma >= policy.sigma_max_px
        {
            return (blurred, sigma);
        }
        step += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskThresholds {
    /// Zero returns above this score are treated as occluded.
    pub zero_ignore_threshold: f64,
    /// Any return above this score is treated as saturated.
    pub saturation_threshold: f64,
}

impl Default for MaskThresholds {
    fn default() -> Self {
        Self {
            zero_ignore_threshold: 0.2,
            saturation_threshold: 0.9,
        }
    }
}

/// Intensities at or below this are "zero" returns.
pub const ZERO_INTENSITY: f64 = 1e-6;

/// Normalized running sum of intensity outward from the sensor, per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeMask {
    width: usize,
    height: usize,
    cumulative: Vec<f64>,
    pub thresholds: MaskThresholds,
}

impl CumulativeMask {
    /// A mask that excludes nothing.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cumulative: vec![0.0; width * height],
            thresholds: MaskThresholds::default(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn scores(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn score(&self, u: usize, v: usize) -> f64 {
        self.cumulative[v * self.width + u]
    }

    pub fn with_thresholds(mut self, thresholds: MaskThresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn is_excluded(&self, u: usize, v: usize, intensity: f64) -> bool {
        exclusion_rule(self.score(u, v), intensity, &self.thresholds)
    }

    pub fn excluded_count(&self, scan: &Scan) -> usize {
        (0..self.height)
            .flat_map(|v| (0..self.width).map(move |u| (u, v)))
            .filter(|&(u, v)| self.is_excluded(u, v, scan.pixel(u, v)))
            .count()
    }
}

/// Occluded zeros above the low threshold, anything above the high one.
pub fn exclusion_rule(score: f64, intensity: f64, t: &MaskThresholds) -> bool {
    (intensity.abs() <= ZERO_INTENSITY && score > t.zero_ignore_threshold)
        || score > t.saturation_threshold
}

/// Normalization cap for running sums: a ray of constant intensity 0.25 over
/// the shortest axis-aligned range reaches exactly 1.
pub fn cumulative_cap(width: usize, height: usize) -> f64 {
    let steps = (width.min(height) - 1) / 2 + 1;
    0.25 * steps as f64
}

/// Walks from `center` towards `target` in unit steps, returning each step's
/// rounded pixel and the normalized running sum of bilinear samples.
pub fn cast_ray(
    scan: &Scan,
    center: &Vector2<f64>,
    target: &Vector2<f64>,
    cap: f64,
) -> Vec<((usize, usize), f64)> {
    let delta = target - center;
    let length = delta.norm();
    let dir = if length > 0.0 { delta / length } else { Vector2::zeros() };
    let steps = length.round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut running = 0.0;
    for t in 0..=steps {
        let p = center + dir * (t as f64).min(length);
        let Some((value, _)) = scan.interpolate(&p) else {
            break;
        };
        running += value;
        let u = p.x.round() as usize;
        let v = p.y.round() as usize;
        out.push(((u.min(scan.width() - 1), v.min(scan.height() - 1)), running / cap));
    }
    out
}

/// Builds the cumulative image of `scan` by casting one ray from
/// `sensor_center` (pixel coordinates) to every border pixel. Pixels hit by
/// several rays keep the largest score; pixels no ray visits get a ray of
/// their own.
pub fn build_cumulative_mask(scan: &Scan, sensor_center: &Vector2<f64>) -> CumulativeMask {
    let (w, h) = (scan.width(), scan.height());
    let cap = cumulative_cap(w, h);
    let mut cumulative = vec![f64::NAN; w * h];
    let mut visit = |ray: Vec<((usize, usize), f64)>| {
        for ((u, v), s) in ray {
            let c = &mut cumulative[v * w + u];
            if c.is_nan() || s > *c {
                *c = s;
            }
        }
    };
    for (u, v) in border_pixels(w, h) {
        let target = Vector2::new(u as f64, v as f64);
        visit(cast_ray(scan, sensor_center, &target, cap));
    }
    for v in 0..h {
        for u in 0..w {
            if cumulative[v * w + u].is_nan() {
                let target = Vector2::new(u as f64, v as f64);
                let ray = cast_ray(scan, sensor_center, &target, cap);
                let score = ray.last().map_or(0.0, |r| r.1);
                cumulative[v * w + u] = score;
            }
        }
    }
    CumulativeMask {
        width: w,
        height: h,
        cumulative,
        thresholds: MaskThresholds::default(),
    }
}

fn border_pixels(w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let top = (0..w).map(|u| (u, 0));
    let bottom = (0..w).map(move |u| (u, h - 1));
    let left = (1..h - 1).map(|v| (0, v));
    let right = (1..h - 1).map(move |v| (w - 1, v));
    top.chain(bottom).chain(left).chain(right)
}

/// A scan ready for mapping or localization.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScan {
    pub scan: Scan,
    pub mask: Option<CumulativeMask>,
    /// Blur applied, in pixels; 0 when the scan was informative enough.
    pub blur_sigma_px: f64,
}

/// Builds the cumulative mask on the raw image (when `mask` is given) and
/// then applies adaptive blurring, so blur never smears occlusion edges.
pub fn prepare_scan(scan: &Scan, blur: &BlurPolicy, mask: Option<MaskThresholds>) -> PreparedScan {
    let mask = mask.map(|t| build_cumulative_mask(scan, &scan.center_px()).with_thresholds(t));
    let (scan, blur_sigma_px) = adaptive_blur(scan, blur);
    PreparedScan {
        scan,
        mask,
        blur_sigma_px,
    }
}
