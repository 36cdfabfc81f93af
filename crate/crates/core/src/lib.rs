//! Direct bundle adjustment and localization for 2D intensity scans.
//!
//! Poses live on SE(2); scans are Cartesian intensity images sampled
//! bilinearly; the map is a dense grid whose cells are closed-form weighted
//! means of the scan samples that see them.

pub mod ba;
pub mod error;
pub mod joint;
pub mod localizer;
pub mod mapgrid;
pub mod metrics;
pub mod normal;
pub mod preprocess;
pub mod scan;
pub mod se2;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
