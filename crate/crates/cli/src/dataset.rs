//! On-disk dataset layout shared by every subcommand.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use sepba::mapgrid::GridMap;
use sepba::scan::{list_scan_files, Scan};
use sepba::sim::SimulatedDataset;
use sepba::trajectory::Trajectory;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::Manifest;

pub const WORLD_STEM: &str = "world";
pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const ODOMETRY: &str = "odometry.csv";
pub const INITIAL: &str = "initial.csv";
pub const SCANS_DIR: &str = "scans";

/// Two stamps name the same instant when closer than this.
pub const STAMP_TOLERANCE_S: f64 = 1e-6;

pub fn scan_stem(scans_dir: &Path, index: usize) -> PathBuf {
    scans_dir.join(format!("{index:06}"))
}

/// Writes a simulated dataset, the resolved configuration and the manifest.
pub fn write_dataset(dir: &Path, ds: &SimulatedDataset, config: &RunConfig) -> CliResult<Manifest> {
    ds.world.truth.write(&dir.join(WORLD_STEM))?;
    ds.ground_truth.write(&dir.join(GROUND_TRUTH))?;
    ds.odometry.write(&dir.join(ODOMETRY))?;
    ds.initial.write(&dir.join(INITIAL))?;
    let scans = dir.join(SCANS_DIR);
    std::fs::create_dir_all(&scans).map_err(|e| sepba::Error::io(&scans, e))?;
    ds.scans
        .par_iter()
        .enumerate()
        .try_for_each(|(i, s)| s.write(&scan_stem(&scans, i)))?;
    config.write_resolved(dir)?;
    let manifest = Manifest::scan(dir)?;
    manifest.write(dir)?;
    Ok(manifest)
}

/// All scans of a directory, in file-name order.
pub fn read_scans(dir: &Path) -> CliResult<Vec<Scan>> {
    let files = list_scan_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Input(format!("no scan sidecars (*.json) in {}", dir.display())));
    }
    Ok(files.par_iter().map(|p| Scan::read(p)).collect::<sepba::Result<Vec<_>>>()?)
}

pub fn read_world(dir: &Path) -> CliResult<GridMap> {
    Ok(GridMap::read(&dir.join(WORLD_STEM))?)
}

/// For every trajectory row, the index of the scan with the same stamp.
pub fn match_scans(traj: &Trajectory, scans: &[Scan], origin: &Path) -> CliResult<Vec<usize>> {
    let mut out = Vec::with_capacity(traj.len());
    let mut next = 0;
    for (row, tp) in traj.poses.iter().enumerate() {
        let found = (next..scans.len())
            .chain(0..next)
            .find(|&i| (scans[i].timestamp_s() - tp.timestamp_s).abs() <= STAMP_TOLERANCE_S);
        match found {
            Some(i) => {
                out.push(i);
                next = i + 1;
            }
            None => {
                return Err(CliError::Input(format!(
                    "{}: row {} (t = {}) has no scan with that timestamp",
                    origin.display(),
                    row,
                    tp.timestamp_s
                )))
            }
        }
    }
    Ok(out)
}
