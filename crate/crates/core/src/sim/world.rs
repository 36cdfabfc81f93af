//! Procedural top-down intensity worlds.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapgrid::{GridLayout, GridMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldPreset {
    /// Building outlines, smooth blobs and point clutter.
    Structured,
    /// A handful of posts and faint blobs; most scans are nearly empty.
    SparseCorridor,
}

impl std::str::FromStr for WorldPreset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "structured" | "suburb" => Ok(Self::Structured),
            "sparse-corridor" | "sparse_corridor" => Ok(Self::SparseCorridor),
            _ => Err(format!("unknown world preset `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    /// The world spans `[-half_extent_m, half_extent_m]` on both axes.
    pub half_extent_m: f64,
    pub resolution_m: f64,
    /// Rectangular outlines drawn as soft walls.
    pub buildings: usize,
    pub building_size_m: [f64; 2],
    pub wall_sigma_m: f64,
    pub wall_intensity: [f64; 2],
    pub blobs: usize,
    pub blob_sigma_m: [f64; 2],
    pub blob_intensity: [f64; 2],
    /// Point reflectors per 100 m^2.
    pub clutter_density: f64,
    pub clutter_sigma_m: f64,
    pub clutter_intensity: [f64; 2],
    /// Share of the world height, centered on `y = 0`, left free of features.
    pub empty_corridor_fraction: f64,
}

impl FeatureSpec {
    pub fn preset(preset: WorldPreset) -> Self {
        match preset {
            WorldPreset::Structured => Self {
                half_extent_m: 100.0,
                resolution_m: 0.25,
                buildings: 70,
                building_size_m: [6.0, 20.0],
                wall_sigma_m: 1.0,
                wall_intensity: [0.5, 0.9],
                blobs: 320,
                blob_sigma_m: [1.5, 4.0],
                blob_intensity: [0.15, 0.45],
                clutter_density: 0.6,
                clutter_sigma_m: 0.8,
                clutter_intensity: [0.3, 0.8],
                empty_corridor_fraction: 0.0,
            },
            WorldPreset::SparseCorridor => Self {
                half_extent_m: 100.0,
                resolution_m: 0.25,
                buildings: 0,
                building_size_m: [6.0, 20.0],
                wall_sigma_m: 0.6,
                wall_intensity: [0.5, 0.9],
                blobs: 30,
                blob_sigma_m: [2.0, 5.0],
                blob_intensity: [0.05, 0.25],
                clutter_density: 0.02,
                clutter_sigma_m: 0.4,
                clutter_intensity: [0.8, 1.0],
                empty_corridor_fraction: 0.1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            self.building_size_m,
            self.wall_intensity,
            self.blob_sigma_m,
            self.blob_intensity,
            self.clutter_intensity,
        ];
        if !(self.half_extent_m > 0.0
            && self.resolution_m > 0.0
            && self.resolution_m <= 0.25
            && self.wall_sigma_m > 0.0
            && self.clutter_sigma_m > 0.0
            && self.clutter_density >= 0.0
            && (0.0..1.0).contains(&self.empty_corridor_fraction)
            && ranges.iter().all(|r| r[0] <= r[1] && r[0] >= 0.0))
        {
            return Err(Error::InvalidInput("invalid world feature spec".into()));
        }
        Ok(())
    }
}

/// Ground-truth intensity field on a fine grid, deterministic in `(spec, seed)`.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: FeatureSpec,
    pub seed: u64,
    pub truth: GridMap,
}

struct Canvas {
    layout: GridLayout,
    values: Vec<f64>,
}

impl Canvas {
    /// Adds `f(m)` to every cell whose center lies in the box `[lo, hi]`.
    fn paint(&mut self, lo: Vector2<f64>, hi: Vector2<f64>, f: impl Fn(&Vector2<f64>) -> f64) {
        let Some(((c0, r0), (c1, r1))) = self.layout.cell_range(&lo, &hi) else {
            return;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let m = self.layout.center(col, row);
                self.values[row * self.layout.cols + col] += f(&m);
            }
        }
    }
}

fn segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn draw(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

impl SyntheticWorld {
    pub fn generate(spec: &FeatureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let e = spec.half_extent_m;
        let r = spec.resolution_m;
        let n = (2.0 * e / r).round() as usize + 1;
        let layout = GridLayout::new(Vector2::new(-e, -e), r, n, n)?;
        let mut canvas = Canvas {
            layout,
            values: vec![0.0; layout.len()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let band = spec.empty_corridor_fraction * e;
        let position = |rng: &mut ChaCha8Rng, reach: f64| loop {
            let p = Vector2::new(rng.random_range(-e..e), rng.random_range(-e..e));
            if band == 0.0 || (p.y.abs() - reach) > band {
                return p;
            }
        };

        for _ in 0..spec.buildings {
            let size = Vector2::new(draw(&mut rng, spec.building_size_m), draw(&mut rng, spec.building_size_m));
            let reach = 0.5 * size.norm() + 3.0 * spec.wall_sigma_m;
            let c = position(&mut rng, reach);
            let heading = rng.random_range(0.0..std::f64::consts::PI);
            let amp = draw(&mut rng, spec.wall_intensity);
            let (s, co) = heading.sin_cos();
            let corner = |sx: f64, sy: f64| {
                let l = Vector2::new(sx * size.x / 2.0, sy * size.y / 2.0);
                c + Vector2::new(co * l.x - s * l.y, s * l.x + co * l.y)
            };
            let corners = [corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)];
            let sigma = spec.wall_sigma_m;
            for k in 0..4 {
                let (a, b) = (corners[k], corners[(k + 1) % 4]);
                let pad = Vector2::repeat(3.0 * sigma);
                canvas.paint(a.inf(&b) - pad, a.sup(&b) + pad, |m| {
                    let d = segment_distance(m, &a, &b);
                    amp * (-0.5 * d * d / (sigma * sigma)).exp()
                });
            }
        }

        let gaussian = |canvas: &mut Canvas, c: Vector2<f64>, sigma: f64, amp: f64| {
            let pad = Vector2::repeat(3.0 * sigma);
            canvas.paint(c - pad, c + pad, |m| {
                amp * (-0.5 * (m - c).norm_squared() / (sigma * sigma)).exp()
            });
        };
        for _ in 0..spec.blobs {
            let sigma = draw(&mut rng, spec.blob_sigma_m);
            let c = position(&mut rng, 3.0 * sigma);
            let amp = draw(&mut rng, spec.blob_intensity);
            gaussian(&mut canvas, c, sigma, amp);
        }
        let clutter = (spec.clutter_density * (2.0 * e) * (2.0 * e) / 100.0).round() as usize;
        for _ in 0..clutter {
            let c = position(&mut rng, 3.0 * spec.clutter_sigma_m);
            let amp = draw(&mut rng, spec.clutter_intensity);
            gaussian(&mut canvas, c, spec.clutter_sigma_m, amp);
        }

        let intensity: Vec<f64> = canvas.values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let len = intensity.len();
        let truth = GridMap::from_parts(layout, intensity, vec![1.0; len], vec![1; len])?;
        Ok(Self {
            spec: spec.clone(),
            seed,
            truth,
        })
    }

    pub fn from_preset(preset: WorldPreset, seed: u64) -> Result<Self> {
        Self::generate(&FeatureSpec::preset(preset), seed)
    }

    /// World sampled from an analytic field at the cell centers of `layout`.
    /// `spec` is kept only as a description and is not used for generation.
    pub fn from_field(layout: GridLayout, field: impl Fn(&Vector2<f64>) -> f64) -> Result<Self> {
        let intensity: Vec<f64> = (0..layout.len())
            .map(|i| field(&layout.center_of(i)).clamp(0.0, 1.0))
            .collect();
        let len = intensity.len();
        Ok(Self {
            spec: FeatureSpec::preset(WorldPreset::Structured),
            seed: 0,
            truth: GridMap::from_parts(layout, intensity, vec![1.0; len], vec![1; len])?,
        })
    }

    /// Bilinear truth intensity at `m`; zero outside the world.
    pub fn intensity(&self, m: &Vector2<f64>) -> f64 {
        self.truth.interpolate(m)
    }
}
