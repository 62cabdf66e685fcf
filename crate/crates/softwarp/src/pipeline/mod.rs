//! Desk-scale two-stage pose-transfer pipeline.
//!
//! Stage one turns a target pose into a part segmentation map by painting
//! each configured limb as a thick capsule ([`rasterize_parsing`]). Stage
//! two matches parts between the condition and target parsings, estimates
//! an affine plus TPS transform per part, warps the condition image through
//! the composed backward grid, and composites the result region by region
//! under a soft gate ([`render`]). Synthetic fixtures with known per-part
//! transforms ([`make_fixture`]) and a scoring report ([`evaluate`]) close
//! the loop.
//!
//! Every entry point is a pure function of its inputs; fixtures are
//! reproducible bit for bit from `(seed, config)`.

mod evaluate;
mod fixture;
mod render;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::tensor::NUM_JOINTS;
use crate::warp::BorderRule;

pub use evaluate::{
    evaluate, squash_score, AggregateReport, EvaluationReport, FixtureReport, PartReport,
};
pub use fixture::{
    canonical_pose, make_fixture, rasterize_parsing, rasterize_parsing_with_report, GroundTruthTransform,
    RasterReport, SynthFixture,
};
pub use render::{
    estimate_transform_set, realize_backward_grid, render, PartDiagnostics, RenderDiagnostics,
    RenderOutput, RenderTarget, TransformSet, TransformSetEntry,
};

/// One limb: the part label it paints, the joint pair it spans, and the
/// capsule half-width in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub label: u8,
    pub joints: (usize, usize),
    pub half_width: f64,
}

/// How the per-part soft gate is produced.
///
/// Serialized form: `"overlap"` or `{"constant": 0.75}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Product of the warped condition part mask and the target part mask.
    Overlap,
    /// The same gate value everywhere.
    Constant(f64),
}

/// Pipeline configuration: image frame, limb layout, TPS grid, gating and
/// sampling rules, and loss weights.
///
/// All fields have defaults, so a partial JSON config is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Image frame used by the rasterizer and fixture generator.
    pub height: usize,
    pub width: usize,
    /// Limbs in paint order; later entries overwrite earlier ones.
    pub parts: Vec<PartSpec>,
    /// TPS control grid (rows, cols) for per-part residual refinement.
    pub tps_grid: (usize, usize),
    pub gate_mode: GateMode,
    /// Border rule for mask warps; the feature path always follows the
    /// warping block's zeros-border contract.
    pub border: BorderRule,
    pub loss: LossConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            parts: default_parts(),
            tps_grid: (3, 3),
            gate_mode: GateMode::Overlap,
            border: BorderRule::Zeros,
            loss: LossConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::InvalidArgument(format!(
                "image frame must be at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        if self.parts.is_empty() {
            return Err(Error::InvalidArgument("no parts configured".into()));
        }
        let mut seen = [false; 20];
        for p in &self.parts {
            if p.label == 0 || p.label >= 20 {
                return Err(Error::InvalidArgument(format!(
                    "part label {} outside 1..=19 (0 is background)",
                    p.label
                )));
            }
            if seen[p.label as usize] {
                return Err(Error::InvalidArgument(format!(
                    "duplicate part label {}",
                    p.label
                )));
            }
            seen[p.label as usize] = true;
            let (a, b) = p.joints;
            if a >= NUM_JOINTS || b >= NUM_JOINTS {
                return Err(Error::InvalidArgument(format!(
                    "part {} references joint outside 0..{}",
                    p.label,
                    NUM_JOINTS - 1
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!(
                    "part {} uses the same joint twice",
                    p.label
                )));
            }
            if !(p.half_width > 0.0 && p.half_width.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "part {} half-width must be positive and finite",
                    p.label
                )));
            }
        }
        let (rows, cols) = self.tps_grid;
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidArgument(
                "TPS grid needs at least 2 rows and 2 cols".into(),
            ));
        }
        if let GateMode::Constant(c) = self.gate_mode {
            if !(0.0..=1.0).contains(&c) || !c.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "constant gate {c} outside [0, 1]"
                )));
            }
        }
        self.loss.extractor()?;
        Ok(())
    }
}

/// Default limb layout: five capsules over the 18-joint skeleton, labels
/// loosely following the LIP part numbering. No two capsules share a joint,
/// so within the perturbation bounds of [`make_fixture`] the painted regions
/// stay disjoint and every part keeps its full silhouette in both the
/// condition and the target parsing. Half-widths are absolute pixels sized
/// for the default 256-pixel frame; scale them along with the frame when
/// changing `height`/`width`, since the skeleton stretches but these do not.
fn default_parts() -> Vec<PartSpec> {
    let spec = |label, joints, half_width| PartSpec {
        label,
        joints,
        half_width,
    };
    vec![
        spec(2, (0, 1), 9.0),    // head: nose to neck
        spec(6, (2, 3), 8.5),    // right upper arm
        spec(7, (5, 6), 8.5),    // left upper arm
        spec(10, (8, 9), 9.0),   // right thigh
        spec(11, (11, 12), 9.0), // left thigh
    ]
}
