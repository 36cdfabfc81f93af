//! Synthetic scan rendering.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::Scan;
use crate::se2::Pose2;
use crate::sim::world::SyntheticWorld;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    /// Standard deviation of the additive intensity noise.
    pub noise_sigma: f64,
    /// Zero out returns behind the first bright hit along each ray.
    pub occlusion: bool,
    pub occlusion_threshold: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            width: 121,
            height: 121,
            resolution_m: 0.5,
            noise_sigma: 0.01,
            occlusion: false,
            occlusion_threshold: 0.8,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 || self.resolution_m.is_nan() || self.resolution_m <= 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::InvalidInput("invalid sensor model".into()));
        }
        Ok(())
    }
}

/// Noise-free image of the world at `pose`, row-major.
pub fn render_clean(world: &SyntheticWorld, pose: &Pose2, sensor: &SensorModel) -> Vec<f64> {
    let (w, h, r) = (sensor.width, sensor.height, sensor.resolution_m);
    let (cu, cv) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    (0..h)
        .into_par_iter()
        .flat_map_iter(|v| {
            (0..w).map(move |u| {
                let q = Vector2::new(-(v as f64 - cv) * r, (u as f64 - cu) * r);
                world.intensity(&pose.transform_point(&q))
            })
        })
        .collect()
}

/// Pixels hidden behind a return of at least `threshold` on the straight
/// ray from the image center. The bright pixel itself stays visible.
pub fn shadowed_pixels(clean: &[f64], width: usize, height: usize, threshold: f64) -> Vec<bool> {
    let c = Vector2::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    (0..height)
        .into_par_iter()
        .flat_map_iter(|v| {
            (0..width).map(move |u| {
                let target = Vector2::new(u as f64, v as f64);
                let d = (target - c).norm();
                if d < 1.0 {
                    return false;
                }
                let dir = (target - c) / d;
                let mut k = 0.0;
                while k < d {
                    let p = c + dir * k;
                    let (pu, pv) = (p.x.round() as usize, p.y.round() as usize);
                    if (pu, pv) != (u, v) && clean[pv * width + pu] >= threshold {
                        return true;
                    }
                    k += 1.0;
                }
                false
            })
        })
        .collect()
}

/// Renders a scan: bilinear truth samples plus clipped Gaussian noise, with
/// optional occlusion shadows (exact zeros).
pub fn render_scan(
    world: &SyntheticWorld,
    pose: &Pose2,
    sensor: &SensorModel,
    id: usize,
    timestamp_s: f64,
    rng: &mut impl Rng,
) -> Result<Scan> {
    sensor.validate()?;
    let clean = render_clean(world, pose, sensor);
    let shadow = if sensor.occlusion {
        shadowed_pixels(&clean, sensor.width, sensor.height, sensor.occlusion_threshold)
    } else {
        vec![false; clean.len()]
    };
    let noise = Normal::new(0.0, sensor.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let pixels: Vec<f64> = clean
        .iter()
        .zip(&shadow)
        .map(|(&v, &hidden)| {
            let n = if sensor.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            if hidden {
                0.0
            } else {
                (v + n).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(Scan::new(id, timestamp_s, sensor.width, sensor.height, sensor.resolution_m, pixels)?.with_pose_hint(*pose))
}
