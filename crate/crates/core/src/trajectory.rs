//! Timestamped pose sequences and their comma-separated text format.
//!
//! One record per line, `timestamp_s,x_m,y_m,theta_rad`, preceded by a single
//! header line. Floats are written in shortest round-trip form so that
//! read-then-write reproduces the file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se2::Pose2;

pub const TRAJECTORY_HEADER: &str = "timestamp_s,x_m,y_m,theta_rad";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub timestamp_s: f64,
    pub pose: Pose2,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<TimedPose>) -> Self {
        Self { poses }
    }

    /// Builds a trajectory with timestamps `0, dt, 2 dt, ...`.
    pub fn from_poses(poses: impl IntoIterator<Item = Pose2>, dt: f64) -> Self {
        Self {
            poses: poses
                .into_iter()
                .enumerate()
                .map(|(i, pose)| TimedPose {
                    timestamp_s: i as f64 * dt,
                    pose,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn pose(&self, i: usize) -> &Pose2 {
        &self.poses[i].pose
    }

    pub fn pose_list(&self) -> Vec<Pose2> {
        self.poses.iter().map(|p| p.pose).collect()
    }

    pub fn with_poses(&self, poses: &[Pose2]) -> Trajectory {
        assert_eq!(poses.len(), self.poses.len());
        Trajectory {
            poses: self
                .poses
                .iter()
                .zip(poses)
                .map(|(tp, p)| TimedPose {
                    timestamp_s: tp.timestamp_s,
                    pose: *p,
                })
                .collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Trajectory {
        Trajectory {
            poses: indices.iter().map(|&i| self.poses[i]).collect(),
        }
    }

    /// Cumulative travelled distance at each pose.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut s = 0.0;
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                s += (p.pose.translation() - self.poses[i - 1].pose.translation()).norm();
            }
            out.push(s);
        }
        out
    }

    /// Rows `k >= 1` hold the body-frame motion from pose `k - 1` to pose `k`;
    /// row 0 is the identity.
    pub fn to_deltas(&self) -> Trajectory {
        Trajectory {
            poses: self
                .poses
                .iter()
                .enumerate()
                .map(|(i, tp)| TimedPose {
                    timestamp_s: tp.timestamp_s,
                    pose: if i == 0 {
                        Pose2::identity()
                    } else {
                        self.poses[i - 1].pose.between(&tp.pose)
                    },
                })
                .collect(),
        }
    }

    /// Inverse of [`Trajectory::to_deltas`], starting from `start`.
    pub fn integrate_deltas(deltas: &Trajectory, start: Pose2) -> Trajectory {
        let mut pose = start;
        Trajectory {
            poses: deltas
                .poses
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    if i > 0 {
                        pose = pose.compose(&d.pose);
                    }
                    TimedPose {
                        timestamp_s: d.timestamp_s,
                        pose,
                    }
                })
                .collect(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(64 * (self.len() + 1));
        s.push_str(TRAJECTORY_HEADER);
        s.push('\n');
        for tp in &self.poses {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                tp.timestamp_s, tp.pose.x, tp.pose.y, tp.pose.theta
            );
        }
        s
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Trajectory> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRAJECTORY_HEADER => {}
            other => {
                return Err(Error::format(
                    "trajectory",
                    path,
                    format!("expected header `{TRAJECTORY_HEADER}`, found {other:?}"),
                ))
            }
        }
        let mut poses = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::format(
                    "trajectory",
                    path,
                    format!("line {}: expected 4 fields, got {}", lineno + 2, fields.len()),
                ));
            }
            let mut vals = [0.0; 4];
            for (v, f) in vals.iter_mut().zip(&fields) {
                *v = f.parse().map_err(|e| {
                    Error::format("trajectory", path, format!("line {}: {e}", lineno + 2))
                })?;
            }
            // stored angle is taken verbatim so rewriting is byte-identical
            poses.push(TimedPose {
                timestamp_s: vals[0],
                pose: Pose2 {
                    theta: vals[3],
                    x: vals[1],
                    y: vals[2],
                },
            });
        }
        Ok(Trajectory { poses })
    }

    pub fn read(path: &Path) -> Result<Trajectory> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}
