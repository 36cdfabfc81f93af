//! Command-line surface. Flags override values loaded from `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use sepba::ba::JacobianMode;
use sepba::sim::WorldPreset;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "sepba", version, about = "Direct bundle adjustment and localization for 2D intensity scans")]
pub struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
    /// Jointly refine keyframe poses and build the map.
    Ba(BaArgs),
    /// Build a map from scans and a fixed trajectory.
    Map(MapArgs),
    /// Track a scan sequence against a fixed map.
    Localize(LocalizeArgs),
    /// Score an estimated trajectory against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory; must be empty or absent unless --force is given.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Default)]
pub struct PrepArgs {
    #[arg(long, value_name = "M")]
    pub map_resolution: Option<f64>,
    /// Intensity above which a pixel counts as occupied for the blur test.
    #[arg(long, value_name = "I")]
    pub blur_threshold: Option<f64>,
    /// Occupied share below which a scan gets blurred.
    #[arg(long, value_name = "FRACTION")]
    pub blur_bound: Option<f64>,
    /// Cumulative score above which zero returns are masked.
    #[arg(long, value_name = "SCORE")]
    pub cum_low: Option<f64>,
    /// Cumulative score above which every return is masked.
    #[arg(long, value_name = "SCORE")]
    pub cum_high: Option<f64>,
    #[arg(long)]
    pub no_mask: bool,
    #[arg(long, value_name = "M")]
    pub kf_trans_m: Option<f64>,
    #[arg(long, value_name = "DEG")]
    pub kf_rot_deg: Option<f64>,
}

impl PrepArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.map_resolution {
            c.map_resolution_m = v;
        }
        if let Some(v) = self.blur_threshold {
            c.blur.intensity_threshold = v;
        }
        if let Some(v) = self.blur_bound {
            c.blur.occupancy_bound = v;
        }
        if let Some(v) = self.cum_low {
            c.mask.zero_ignore_threshold = v;
        }
        if let Some(v) = self.cum_high {
            c.mask.saturation_threshold = v;
        }
        if self.no_mask {
            c.mask.enabled = false;
        }
        if let Some(v) = self.kf_trans_m {
            c.keyframe.min_translation_m = v;
        }
        if let Some(v) = self.kf_rot_deg {
            c.keyframe.min_rotation_rad = v.to_radians();
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub preset: Option<WorldPreset>,
    #[arg(long)]
    pub world_seed: Option<u64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Intensity noise standard deviation.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Zero out returns behind bright hits.
    #[arg(long)]
    pub occlusion: bool,
}

impl SimulateArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let s = &mut c.simulation;
        if let Some(v) = self.preset {
            s.preset = v;
        }
        if let Some(v) = self.world_seed {
            s.world_seed = v;
        }
        if let Some(v) = self.noise_seed {
            s.noise_seed = v;
        }
        if let Some(v) = self.noise_sigma {
            s.sensor.noise_sigma = v;
        }
        if self.occlusion {
            s.sensor.occlusion = true;
        }
    }
}

#[derive(Debug, Args)]
pub struct BaArgs {
    /// Dataset directory holding `scans/` and the initial trajectory.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Initial trajectory (default: `<dataset>/initial.csv`).
    #[arg(long, value_name = "CSV")]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[arg(long, value_parser = parse_mode)]
    pub jacobian_mode: Option<JacobianMode>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Also write the block sparsity of the last normal system.
    #[arg(long)]
    pub dump_hessian_pattern: bool,
    /// Also write the map as PNG.
    #[arg(long)]
    pub png: bool,
}

fn parse_mode(s: &str) -> Result<JacobianMode, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Poses to map from; every row must match a scan timestamp.
    #[arg(long, value_name = "CSV")]
    pub trajectory: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Map header (`map.json`) or its stem.
    #[arg(long, value_name = "FILE")]
    pub map: PathBuf,
    /// Directory of scans to track, in file-name order.
    #[arg(long, value_name = "DIR")]
    pub scans: PathBuf,
    /// Body-frame increments, one row per scan; row 0 is ignored.
    #[arg(long, value_name = "CSV")]
    pub odometry: PathBuf,
    /// First pose as `x,y,theta`.
    #[arg(long, value_name = "X,Y,THETA", conflicts_with = "initial_from", allow_hyphen_values = true)]
    pub initial: Option<String>,
    /// Take the first pose from row 0 of a trajectory file.
    #[arg(long, value_name = "CSV")]
    pub initial_from: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "CSV")]
    pub estimate: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub ground_truth: PathBuf,
    /// Localized trajectory scored against `--reference`.
    #[arg(long, value_name = "CSV")]
    pub localized: Option<PathBuf>,
    /// Reference for the localized trajectory (default: the estimate).
    #[arg(long, value_name = "CSV", requires = "localized")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub epe_start: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}
