//! Regularly sampled intensity map. Each cell center is a map sample
//! location; its intensity is the weighted mean of every scan sample that
//! lands on it.

use std::fs;
use std::path::Path;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::CumulativeMask;
use crate::scan::{Scan, WeightModel};
use crate::se2::Pose2;
use crate::trajectory::Trajectory;

pub const DEFAULT_MAP_RESOLUTION_M: f64 = 1.0;

/// Boundary tolerance, in cells, for footprint tests; absorbs rounding in
/// rotated corners.
const EDGE_SLACK: f64 = 1e-9;

/// Cell `(col, row)` is centered at `origin + resolution * (col, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridLayout {
    pub origin_m: [f64; 2],
    pub resolution_m: f64,
    pub cols: usize,
    pub rows: usize,
}

impl GridLayout {
    pub fn new(origin: Vector2<f64>, resolution_m: f64, cols: usize, rows: usize) -> Result<Self> {
        if resolution_m.is_nan() || resolution_m <= 0.0 || cols == 0 || rows == 0 {
            return Err(Error::InvalidInput(format!(
                "grid needs positive resolution and size, got r={resolution_m} {cols}x{rows}"
            )));
        }
        Ok(Self {
            origin_m: [origin.x, origin.y],
            resolution_m,
            cols,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origin(&self) -> Vector2<f64> {
        Vector2::new(self.origin_m[0], self.origin_m[1])
    }

    pub fn center(&self, col: usize, row: usize) -> Vector2<f64> {
        Vector2::new(
            self.origin_m[0] + col as f64 * self.resolution_m,
            self.origin_m[1] + row as f64 * self.resolution_m,
        )
    }

    pub fn center_of(&self, index: usize) -> Vector2<f64> {
        self.center(index % self.cols, index / self.cols)
    }

    /// Nearest cell to a world point, or `None` outside the grid.
    pub fn nearest(&self, m: &Vector2<f64>) -> Option<usize> {
        let c = ((m.x - self.origin_m[0]) / self.resolution_m).round();
        let r = ((m.y - self.origin_m[1]) / self.resolution_m).round();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return None;
        }
        Some(r as usize * self.cols + c as usize)
    }

    /// Inclusive index range of cells whose centers fall in `[lo, hi]`, or
    /// `None` if the box misses the grid.
    pub fn cell_range(
        &self,
        lo: &Vector2<f64>,
        hi: &Vector2<f64>,
    ) -> Option<((usize, usize), (usize, usize))> {
        let r = self.resolution_m;
        let c0 = ((lo.x - self.origin_m[0]) / r - EDGE_SLACK).ceil().max(0.0);
        let r0 = ((lo.y - self.origin_m[1]) / r - EDGE_SLACK).ceil().max(0.0);
        let c1 = ((hi.x - self.origin_m[0]) / r + EDGE_SLACK).floor().min(self.cols as f64 - 1.0);
        let r1 = ((hi.y - self.origin_m[1]) / r + EDGE_SLACK).floor().min(self.rows as f64 - 1.0);
        if c0 > c1 || r0 > r1 {
            return None;
        }
        Some(((c0 as usize, r0 as usize), (c1 as usize, r1 as usize)))
    }

    /// Cells whose centers lie inside the scan's image rectangle at `pose`,
    /// grown by `margin_m` on every side. Sorted ascending.
    pub fn cells_in_footprint(&self, scan: &Scan, pose: &Pose2, margin_m: f64) -> Vec<usize> {
        let (lo, hi) = scan.footprint_aabb(pose);
        let pad = Vector2::repeat(margin_m);
        let Some(((c0, r0), (c1, r1))) = self.cell_range(&(lo - pad), &(hi + pad)) else {
            return Vec::new();
        };
        let half = scan.half_extent_m() + pad + Vector2::repeat(EDGE_SLACK * self.resolution_m);
        let mut out = Vec::new();
        for row in r0..=r1 {
            for col in c0..=c1 {
                let q = pose.inverse_transform_point(&self.center(col, row));
                if q.x.abs() <= half.x && q.y.abs() <= half.y {
                    out.push(row * self.cols + col);
                }
            }
        }
        out
    }
}

/// Axis-aligned grid covering every pose inflated by `scan_extent_m`.
pub fn bounds_from_trajectory(
    traj: &Trajectory,
    scan_extent_m: f64,
    resolution_m: f64,
) -> Result<GridMap> {
    if traj.is_empty() {
        return Err(Error::InvalidInput(
            "cannot size a map from an empty trajectory".into(),
        ));
    }
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for tp in &traj.poses {
        lo = lo.inf(&tp.pose.translation());
        hi = hi.sup(&tp.pose.translation());
    }
    lo -= Vector2::repeat(scan_extent_m);
    hi += Vector2::repeat(scan_extent_m);
    let count = |span: f64| (span / resolution_m - 1e-9).ceil().max(0.0) as usize + 1;
    let layout = GridLayout::new(lo, resolution_m, count(hi.x - lo.x), count(hi.y - lo.y))?;
    Ok(GridMap::empty(layout))
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Per-cell mergeable accumulator of `(sum w * i, sum w, count)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellAccumulator {
    weighted: CompensatedSum,
    weight: CompensatedSum,
    count: u32,
}

impl CellAccumulator {
    pub fn add(&mut self, intensity: f64, weight: f64) {
        self.weighted.add(weight * intensity);
        self.weight.add(weight);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &CellAccumulator) {
        self.weighted.add(other.weighted.sum);
        self.weighted.add(other.weighted.comp);
        self.weight.add(other.weight.sum);
        self.weight.add(other.weight.comp);
        self.count += other.count;
    }

    /// `(mean intensity, weight sum, count)`; mean is 0 when empty.
    pub fn finish(&self) -> (f64, f64, u32) {
        let w = self.weight.value();
        if self.count == 0 || w <= 0.0 {
            return (0.0, 0.0, 0);
        }
        (self.weighted.value() / w, w, self.count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub layout: GridLayout,
    intensity: Vec<f64>,
    weight_sum: Vec<f64>,
    count: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapHeader {
    origin_m: [f64; 2],
    resolution_m: f64,
    cols: usize,
    rows: usize,
}

impl GridMap {
    pub fn empty(layout: GridLayout) -> Self {
        let n = layout.len();
        Self {
            layout,
            intensity: vec![0.0; n],
            weight_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Map from explicit cell values; cells with `count == 0` must carry zero
    /// weight.
    pub fn from_parts(
        layout: GridLayout,
        intensity: Vec<f64>,
        weight_sum: Vec<f64>,
        count: Vec<u32>,
    ) -> Result<Self> {
        let n = layout.len();
        if intensity.len() != n || weight_sum.len() != n || count.len() != n {
            return Err(Error::InvalidInput("map grids do not match the layout".into()));
        }
        for i in 0..n {
            if (count[i] == 0) != (weight_sum[i] == 0.0) {
                return Err(Error::InvalidInput(format!(
                    "cell {i}: count {} inconsistent with weight {}",
                    count[i], weight_sum[i]
                )));
            }
        }
        Ok(Self {
            layout,
            intensity,
            weight_sum,
            count,
        })
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }
    pub fn weight_sum(&self) -> &[f64] {
        &self.weight_sum
    }
    pub fn count(&self) -> &[u32] {
        &self.count
    }

    pub fn is_observed(&self, index: usize) -> bool {
        self.count[index] > 0
    }

    pub fn observed_cells(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    /// `(intensity, weight)` of a cell, `None` if unobserved.
    pub fn cell(&self, index: usize) -> Option<(f64, f64)> {
        self.is_observed(index)
            .then(|| (self.intensity[index], self.weight_sum[index]))
    }

    /// Nearest-cell lookup.
    pub fn query(&self, m: &Vector2<f64>) -> Option<(f64, f64)> {
        self.layout.nearest(m).and_then(|i| self.cell(i))
    }

    /// Nearest-cell intensity treating unobserved cells as zero.
    pub fn intensity_at(&self, m: &Vector2<f64>) -> f64 {
        self.query(m).map_or(0.0, |(i, _)| i)
    }

    /// Bilinear interpolation of cell intensities (unobserved cells read as
    /// zero). Used to render synthetic scans from a fine ground-truth grid.
    pub fn interpolate(&self, m: &Vector2<f64>) -> f64 {
        let l = &self.layout;
        let gx = (m.x - l.origin_m[0]) / l.resolution_m;
        let gy = (m.y - l.origin_m[1]) / l.resolution_m;
        if gx < 0.0 || gy < 0.0 || gx > (l.cols - 1) as f64 || gy > (l.rows - 1) as f64 {
            return 0.0;
        }
        let c0 = (gx.floor() as usize).min(l.cols.saturating_sub(2));
        let r0 = (gy.floor() as usize).min(l.rows.saturating_sub(2));
        let c1 = (c0 + 1).min(l.cols - 1);
        let r1 = (r0 + 1).min(l.rows - 1);
        let fx = gx - c0 as f64;
        let fy = gy - r0 as f64;
        let at = |c: usize, r: usize| self.intensity[r * l.cols + c];
        let top = at(c0, r0) * (1.0 - fx) + at(c1, r0) * fx;
        let bottom = at(c0, r1) * (1.0 - fx) + at(c1, r1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Writes `<stem>.json` (header) and `<stem>.bin`: f32 intensity grid,
    /// f32 weight grid, u32 count grid, all little-endian and row-major.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let json_path = stem.with_extension("json");
        let bin_path = stem.with_extension("bin");
        let header = MapHeader {
            origin_m: self.layout.origin_m,
            resolution_m: self.layout.resolution_m,
            cols: self.layout.cols,
            rows: self.layout.rows,
        };
        let mut json = serde_json::to_string_pretty(&header)
            .map_err(|e| Error::format("map header", &json_path, e.to_string()))?;
        json.push('\n');
        fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        let n = self.len();
        let mut bytes = Vec::with_capacity(12 * n);
        for v in &self.intensity {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in &self.weight_sum {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in &self.count {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn read(path: &Path) -> Result<GridMap> {
        let json_path = path.with_extension("json");
        let bin_path = path.with_extension("bin");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let h: MapHeader = serde_json::from_str(&text)
            .map_err(|e| Error::format("map header", &json_path, e.to_string()))?;
        let layout = GridLayout::new(
            Vector2::new(h.origin_m[0], h.origin_m[1]),
            h.resolution_m,
            h.cols,
            h.rows,
        )
        .map_err(|e| Error::format("map header", &json_path, e.to_string()))?;
        let n = layout.len();
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        if bytes.len() != 12 * n {
            return Err(Error::format(
                "map data",
                &bin_path,
                format!("expected {} bytes, found {}", 12 * n, bytes.len()),
            ));
        }
        let word = |i: usize| [bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]];
        let intensity = (0..n).map(|i| f64::from(f32::from_le_bytes(word(i)))).collect();
        let weight_sum = (0..n)
            .map(|i| f64::from(f32::from_le_bytes(word(n + i))))
            .collect();
        let count = (0..n).map(|i| u32::from_le_bytes(word(2 * n + i))).collect();
        GridMap::from_parts(layout, intensity, weight_sum, count)
            .map_err(|e| Error::format("map data", &bin_path, e.to_string()))
    }

    /// Rounds stored values through f32, matching a write/read cycle.
    pub fn quantized(&self) -> GridMap {
        let q = |v: &Vec<f64>| v.iter().map(|x| f64::from(*x as f32)).collect();
        GridMap {
            layout: self.layout,
            intensity: q(&self.intensity),
            weight_sum: q(&self.weight_sum),
            count: self.count.clone(),
        }
    }
}

/// Closed-form map: every cell gets the weighted mean of the valid, unmasked
/// scan samples at its center. Cells are processed in parallel by row; scans
/// are visited in index order within a cell so the result does not depend on
/// the thread count.
pub fn build_map(
    scans: &[Scan],
    poses: &[Pose2],
    wm: &WeightModel,
    masks: Option<&[CumulativeMask]>,
    layout: GridLayout,
) -> Result<GridMap> {
    if scans.len() != poses.len() {
        return Err(Error::InvalidInput(format!(
            "{} scans but {} poses",
            scans.len(),
            poses.len()
        )));
    }
    if let Some(m) = masks {
        if m.len() != scans.len() {
            return Err(Error::InvalidInput(format!(
                "{} scans but {} masks",
                scans.len(),
                m.len()
            )));
        }
    }
    let boxes: Vec<_> = scans
        .iter()
        .zip(poses)
        .map(|(s, p)| s.footprint_aabb(p))
        .collect();
    let cols = layout.cols;
    let rows: Vec<Vec<(f64, f64, u32)>> = (0..layout.rows)
        .into_par_iter()
        .map(|row| {
            let y = layout.center(0, row).y;
            let active: Vec<usize> = (0..scans.len())
                .filter(|&n| boxes[n].0.y <= y && y <= boxes[n].1.y)
                .collect();
            (0..cols)
                .map(|col| {
                    let m = layout.center(col, row);
                    let mut acc = CellAccumulator::default();
                    for &n in &active {
                        if m.x < boxes[n].0.x || m.x > boxes[n].1.x {
                            continue;
                        }
                        let mask = masks.map(|ms| &ms[n]);
                        let s = scans[n].sample(&m, &poses[n], wm, mask);
                        if s.valid {
                            acc.add(s.intensity, s.weight);
                        }
                    }
                    acc.finish()
                })
                .collect()
        })
        .collect();
    let mut map = GridMap::empty(layout);
    for (i, (mean, w, c)) in rows.into_iter().flatten().enumerate() {
        map.intensity[i] = mean;
        map.weight_sum[i] = w;
        map.count[i] = c;
    }
    Ok(map)
}
