//! Transform representation, estimation and dense warp grids.
//!
//! The matcher works in three steps, mirroring the affine-then-TPS cascade:
//! part statistics are extracted from a pair of segmentation maps
//! ([`match_parts`]), a per-part affine is recovered from centroids and
//! moments with the rotation picked by landmark residuals, and a thin-plate
//! spline absorbs what the affine leaves over
//! ([`estimate_part_transform`]). Transforms realize as [`WarpGrid`]s of
//! backward (gather) source coordinates.

mod affine;
mod grid;
mod matching;
mod part_transform;
mod tps;

pub use affine::{estimate_affine, AffineParams};
pub use grid::{affine_grid, compose_grids, tps_grid, WarpGrid};
pub use matching::{
    match_parts, match_parts_with, MapSide, MatchReport, OmittedPart, PartCorrespondence,
    LANDMARKS_PER_PART,
};
pub use part_transform::{
    estimate_part_transform, estimate_part_transform_with, EstimateOptions, PartTransformEstimate,
};
pub use tps::{fit_tps, fit_tps_displacements, fit_tps_on_grid, TpsParams};

use serde::{Deserialize, Serialize};

/// A 2-D point or vector in whichever frame the context defines
/// (pixel or normalized coordinates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Affine + TPS parameter pair as serialized by the `estimate` CLI command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformParams {
    pub affine: AffineParams,
    pub tps: TpsParams,
}
