//! Cartesian intensity scans: world-to-pixel projection, bilinear sampling,
//! the per-sample weight model and the pose Jacobian of a sample.
//!
//! Pixel convention: origin at the top-left, `u` to the right (columns), `v`
//! downwards (rows). Sensor `+x` points up in the image (`-v`), sensor `+y`
//! points right (`+u`).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::CumulativeMask;
use crate::se2::{local_point_jacobian, Pose2};

/// Per-sample uncertainty model. The inverse variance of a sample is
/// `1 / (sigma_pixel^2 + (sigma_range_per_m * range)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightModel {
    pub sigma_pixel: f64,
    pub sigma_range_per_m: f64,
}

impl Default for WeightModel {
    fn default() -> Self {
        Self {
            sigma_pixel: 0.1,
            sigma_range_per_m: 0.005,
        }
    }
}

impl WeightModel {
    pub fn new(sigma_pixel: f64, sigma_range_per_m: f64) -> Result<Self> {
        if !(sigma_pixel > 0.0 && sigma_range_per_m > 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight model sigmas must be positive, got {sigma_pixel} and {sigma_range_per_m}"
            )));
        }
        Ok(Self {
            sigma_pixel,
            sigma_range_per_m,
        })
    }

    /// Weight of a sample whose map point sits at `local` in the sensor frame.
    pub fn weight(&self, local: &Vector2<f64>) -> f64 {
        let sr = self.sigma_range_per_m;
        1.0 / (self.sigma_pixel * self.sigma_pixel + sr * sr * local.norm_squared())
    }

    /// Gradient of [`WeightModel::weight`] with respect to the body-frame
    /// perturbation of the sensor pose.
    fn weight_gradient(&self, local: &Vector2<f64>, weight: f64) -> Vector3<f64> {
        let sr2 = self.sigma_range_per_m * self.sigma_range_per_m;
        let dq = local_point_jacobian(local);
        (dq.transpose() * local) * (-2.0 * weight * weight * sr2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleResult {
    pub intensity: f64,
    pub weight: f64,
    pub valid: bool,
    /// `(dI/du, dI/dv)` of the interpolant.
    pub grad_px: Vector2<f64>,
}

impl SampleResult {
    pub const INVALID: SampleResult = SampleResult {
        intensity: 0.0,
        weight: 0.0,
        valid: false,
        grad_px: Vector2::new(0.0, 0.0),
    };
}

/// A valid sample together with its derivatives with respect to the
/// body-frame perturbation `[dx, dy, dtheta]` of the scan pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedSample {
    pub intensity: f64,
    pub weight: f64,
    pub d_intensity: Vector3<f64>,
    pub d_weight: Vector3<f64>,
}

/// Sidecar metadata of a scan on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanMeta {
    pub id: usize,
    pub timestamp_s: f64,
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    pub pose_hint: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    id: usize,
    timestamp_s: f64,
    width: usize,
    height: usize,
    resolution_m: f64,
    pose_hint: Pose2,
    pixels: Vec<f64>,
}

impl Scan {
    /// `pixels` is row-major, `height` rows of `width` values in `[0, 1]`.
    pub fn new(
        id: usize,
        timestamp_s: f64,
        width: usize,
        height: usize,
        resolution_m: f64,
        pixels: Vec<f64>,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidInput(format!(
                "scan must be at least 2x2, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "scan {id}: expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if resolution_m.is_nan() || resolution_m <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "scan {id}: resolution must be positive"
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!(
                "scan {id}: intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            id,
            timestamp_s,
            width,
            height,
            resolution_m,
            pose_hint: Pose2::identity(),
            pixels,
        })
    }

    /// Normalizes raw returns by their maximum so that every value is in `[0, 1]`.
    pub fn from_raw(
        id: usize,
        timestamp_s: f64,
        width: usize,
        height: usize,
        resolution_m: f64,
        raw: &[f64],
    ) -> Result<Self> {
        let max = raw.iter().copied().fold(0.0_f64, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let pixels = raw.iter().map(|r| (r * scale).clamp(0.0, 1.0)).collect();
        Self::new(id, timestamp_s, width, height, resolution_m, pixels)
    }

    pub fn with_pose_hint(mut self, pose: Pose2) -> Self {
        self.pose_hint = pose;
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }
    pub fn timestamp_s(&self) -> f64 {
        self.timestamp_s
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn resolution_m(&self) -> f64 {
        self.resolution_m
    }
    pub fn pose_hint(&self) -> Pose2 {
        self.pose_hint
    }
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, u: usize, v: usize) -> f64 {
        self.pixels[v * self.width + u]
    }

    /// Same geometry and metadata, new intensities (clipped to `[0, 1]`).
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Scan {
        assert_eq!(pixels.len(), self.pixels.len());
        Scan {
            pixels: pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Pixel coordinates of the sensor origin.
    pub fn center_px(&self) -> Vector2<f64> {
        Vector2::new(
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    /// Half extents of the image in the sensor frame, `(x, y)` in meters.
    pub fn half_extent_m(&self) -> Vector2<f64> {
        Vector2::new(
            (self.height as f64 - 1.0) / 2.0 * self.resolution_m,
            (self.width as f64 - 1.0) / 2.0 * self.resolution_m,
        )
    }

    /// Sensor-frame point to pixel coordinates.
    pub fn local_to_pixel(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let c = self.center_px();
        Vector2::new(q.y / self.resolution_m + c.x, -q.x / self.resolution_m + c.y)
    }

    /// Pixel coordinates to sensor-frame point.
    pub fn pixel_to_local(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let c = self.center_px();
        Vector2::new(-(p.y - c.y) * self.resolution_m, (p.x - c.x) * self.resolution_m)
    }

    /// `d(u, v) / d(q_x, q_y)`.
    pub fn pixel_jacobian(&self) -> Matrix2<f64> {
        let s = 1.0 / self.resolution_m;
        Matrix2::new(0.0, s, -s, 0.0)
    }

    pub fn world_to_pixel(&self, m: &Vector2<f64>, pose: &Pose2) -> Vector2<f64> {
        self.local_to_pixel(&pose.inverse_transform_point(m))
    }

    pub fn in_bounds(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation at pixel coordinates with its gradient, or
    /// `None` outside `[0, w-1] x [0, h-1]`.
    pub fn interpolate(&self, p: &Vector2<f64>) -> Option<(f64, Vector2<f64>)> {
        if !self.in_bounds(p) {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(self.width - 2);
        let y0 = (p.y.floor() as usize).min(self.height - 2);
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        let row0 = y0 * self.width + x0;
        let row1 = row0 + self.width;
        let i00 = self.pixels[row0];
        let i10 = self.pixels[row0 + 1];
        let i01 = self.pixels[row1];
        let i11 = self.pixels[row1 + 1];
        let top = i00 + fx * (i10 - i00);
        let bottom = i01 + fx * (i11 - i01);
        let value = top + fy * (bottom - top);
        let du = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
        let dv = bottom - top;
        Some((value, Vector2::new(du, dv)))
    }

    fn masked(&self, mask: Option<&CumulativeMask>, p: &Vector2<f64>, intensity: f64) -> bool {
        match mask {
            Some(mask) => {
                let u = (p.x.round() as usize).min(self.width - 1);
                let v = (p.y.round() as usize).min(self.height - 1);
                mask.is_excluded(u, v, intensity)
            }
            None => false,
        }
    }

    /// Measurement function: samples this scan at world point `m` with the
    /// scan held at `pose`.
    pub fn sample(
        &self,
        m: &Vector2<f64>,
        pose: &Pose2,
        wm: &WeightModel,
        mask: Option<&CumulativeMask>,
    ) -> SampleResult {
        let q = pose.inverse_transform_point(m);
        let p = self.local_to_pixel(&q);
        match self.interpolate(&p) {
            Some((intensity, grad_px)) if !self.masked(mask, &p, intensity) => SampleResult {
                intensity,
                weight: wm.weight(&q),
                valid: true,
                grad_px,
            },
            _ => SampleResult::INVALID,
        }
    }

    /// Sample plus derivatives of intensity and weight with respect to the
    /// body-frame pose perturbation.
    pub fn sample_linearized(
        &self,
        m: &Vector2<f64>,
        pose: &Pose2,
        wm: &WeightModel,
        mask: Option<&CumulativeMask>,
    ) -> Option<LinearizedSample> {
        let q = pose.inverse_transform_point(m);
        let p = self.local_to_pixel(&q);
        let (intensity, grad_px) = self.interpolate(&p)?;
        if self.masked(mask, &p, intensity) {
            return None;
        }
        let weight = wm.weight(&q);
        let dq = local_point_jacobian(&q);
        let d_intensity = (grad_px.transpose() * self.pixel_jacobian() * dq).transpose();
        Some(LinearizedSample {
            intensity,
            weight,
            d_intensity,
            d_weight: wm.weight_gradient(&q, weight),
        })
    }

    /// `d(intensity) / d(xi)` at `xi = 0` for the sample of `m` at `pose`.
    pub fn sample_jacobian_pose(&self, m: &Vector2<f64>, pose: &Pose2) -> Result<Vector3<f64>> {
        let q = pose.inverse_transform_point(m);
        let p = self.local_to_pixel(&q);
        let (_, grad_px) = self
            .interpolate(&p)
            .ok_or(Error::InvalidSample { u: p.x, v: p.y })?;
        let dq = local_point_jacobian(&q);
        Ok((grad_px.transpose() * self.pixel_jacobian() * dq).transpose())
    }

    /// World-frame axis-aligned bounding box of the image footprint at `pose`.
    pub fn footprint_aabb(&self, pose: &Pose2) -> (Vector2<f64>, Vector2<f64>) {
        let e = self.half_extent_m();
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        for (sx, sy) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
            let c = pose.transform_point(&Vector2::new(sx * e.x, sy * e.y));
            lo = lo.inf(&c);
            hi = hi.sup(&c);
        }
        (lo, hi)
    }

    pub fn meta(&self) -> ScanMeta {
        ScanMeta {
            id: self.id,
            timestamp_s: self.timestamp_s,
            width: self.width,
            height: self.height,
            resolution_m: self.resolution_m,
            pose_hint: [self.pose_hint.x, self.pose_hint.y, self.pose_hint.theta],
        }
    }

    /// Writes `<stem>.json` and `<stem>.bin` (little-endian f32, row-major).
    pub fn write(&self, stem: &Path) -> Result<()> {
        let json_path = stem.with_extension("json");
        let bin_path = stem.with_extension("bin");
        let mut json = serde_json::to_string_pretty(&self.meta())
            .map_err(|e| Error::format("scan sidecar", &json_path, e.to_string()))?;
        json.push('\n');
        fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        let mut bytes = Vec::with_capacity(self.pixels.len() * 4);
        for p in &self.pixels {
            bytes.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    /// Reads a scan written by [`Scan::write`]; `path` may name either file
    /// or the shared stem.
    pub fn read(path: &Path) -> Result<Scan> {
        let json_path = path.with_extension("json");
        let bin_path = path.with_extension("bin");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let meta: ScanMeta = serde_json::from_str(&text)
            .map_err(|e| Error::format("scan sidecar", &json_path, e.to_string()))?;
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        if bytes.len() != meta.width * meta.height * 4 {
            return Err(Error::format(
                "scan data",
                &bin_path,
                format!(
                    "expected {} bytes for {}x{}, found {}",
                    meta.width * meta.height * 4,
                    meta.width,
                    meta.height,
                    bytes.len()
                ),
            ));
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let scan = Scan::new(
            meta.id,
            meta.timestamp_s,
            meta.width,
            meta.height,
            meta.resolution_m,
            pixels,
        )
        .map_err(|e| Error::format("scan data", &bin_path, e.to_string()))?;
        Ok(scan.with_pose_hint(Pose2 {
            theta: meta.pose_hint[2],
            x: meta.pose_hint[0],
            y: meta.pose_hint[1],
        }))
    }

    /// Rounds intensities through f32 so the in-memory scan equals what a
    /// write/read cycle produces.
    pub fn quantized(&self) -> Scan {
        Scan {
            pixels: self.pixels.iter().map(|p| f64::from(*p as f32)).collect(),
            ..self.clone()
        }
    }
}

/// Lists `*.json` scan sidecars in a directory, sorted by file name.
pub fn list_scan_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}
