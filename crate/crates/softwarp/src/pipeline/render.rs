//! Stage-two rendering: per-part transform estimation, gated warping, and
//! region-wise compositing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    affine_grid, compose_grids, estimate_part_transform_with, match_parts, tps_grid,
    EstimateOptions, OmittedPart, TransformParams, WarpGrid,
};
use crate::tensor::{ImageTensor, PoseKeypoints, SegmentationMap, NUM_PART_LABELS};
use crate::warp::{bilinear_sample, gate_from_overlap, warping_block, BorderRule, GateMap};

use super::fixture::rasterize_parsing_with_report;
use super::{GateMode, PipelineConfig};

/// Gate values at or below this count a region pixel as a hole.
const HOLE_GATE: f64 = 0.05;

/// A part label with the backward grid that fetches its content from the
/// condition image.
pub(crate) struct RegionTransform {
    pub label: u8,
    pub grid: WarpGrid,
}

/// Compositing statistics for one target region.
pub(crate) struct RegionStats {
    pub label: u8,
    pub region_pixels: usize,
    pub gate_mean: f64,
    pub hole_pixels: usize,
    pub filled_from_mean: bool,
}

/// Turns estimated transform parameters into the dense backward grid that
/// realizes them: affine first, then the TPS refinement, sampled through
/// grid composition.
pub fn realize_backward_grid(
    params: &TransformParams,
    height: usize,
    width: usize,
) -> Result<WarpGrid> {
    compose_grids(
        &tps_grid(&params.tps, height, width),
        &affine_grid(&params.affine, height, width),
    )
}

fn mean_color(image: &ImageTensor, pixels: &[(usize, usize)]) -> Vec<f64> {
    let ch = image.channels();
    let mut sums = vec![0.0; ch];
    for &(y, x) in pixels {
        for (c, sum) in sums.iter_mut().enumerate() {
            *sum += image.at(y, x, c);
        }
    }
    let n = pixels.len().max(1) as f64;
    sums.iter().map(|s| s / n).collect()
}

fn global_mean_color(image: &ImageTensor) -> Vec<f64> {
    let ch = image.channels();
    let mut sums = vec![0.0; ch];
    for y in 0..image.height() {
        for x in 0..image.width() {
            for (c, sum) in sums.iter_mut().enumerate() {
                *sum += image.at(y, x, c);
            }
        }
    }
    let n = (image.height() * image.width()).max(1) as f64;
    sums.iter().map(|s| s / n).collect()
}

fn fill_region(canvas: &mut ImageTensor, pixels: &[(usize, usize)], color: &[f64]) {
    for &(y, x) in pixels {
        for (c, &v) in color.iter().enumerate() {
            canvas.set(y, x, c, v);
        }
    }
}

/// Renders one target region through its backward grid: the part's mean
/// source color is the identity path, the warped deviation from it is the
/// residual, and the gate blends between them. Returns the region's stats.
#[allow(clippy::too_many_arguments)]
fn composite_region(
    canvas: &mut ImageTensor,
    condition_image: &ImageTensor,
    condition_parsing: &SegmentationMap,
    region: &[(usize, usize)],
    label: u8,
    grid: &WarpGrid,
    gate_mode: GateMode,
    border: BorderRule,
) -> Result<RegionStats> {
    let (h, w) = (condition_image.height(), condition_image.width());
    let source_pixels: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| condition_parsing.label_at(y, x) == label)
        .collect();
    if source_pixels.is_empty() {
        let color = global_mean_color(condition_image);
        fill_region(canvas, region, &color);
        return Ok(RegionStats {
            label,
            region_pixels: region.len(),
            gate_mean: 0.0,
            hole_pixels: region.len(),
            filled_from_mean: true,
        });
    }
    let fill = mean_color(condition_image, &source_pixels);

    let source_mask = ImageTensor::from_fn(h, w, 1, |y, x, _| {
        if condition_parsing.label_at(y, x) == label {
            1.0
        } else {
            0.0
        }
    });
    let gate = match gate_mode {
        GateMode::Overlap => {
            let warped_mask = bilinear_sample(&source_mask, grid, border);
            // Interpolated masks can overshoot [0, 1] by rounding noise.
            let warped_mask = ImageTensor::from_fn(h, w, 1, |y, x, _| {
                warped_mask.at(y, x, 0).clamp(0.0, 1.0)
            });
            let mut target_mask = ImageTensor::zeros(h, w, 1);
            for &(y, x) in region {
                target_mask.set(y, x, 0, 1.0);
            }
            gate_from_overlap(&warped_mask, &target_mask)?
        }
        GateMode::Constant(c) => GateMap::constant(h, w, c)?,
    };

    let phi = ImageTensor::from_fn(h, w, condition_image.channels(), |_, _, c| fill[c]);
    let residual = ImageTensor::from_fn(h, w, condition_image.channels(), |y, x, c| {
        condition_image.at(y, x, c) - fill[c]
    });
    let blocked = warping_block(&phi, &residual, grid, &gate)?;

    let mut gate_sum = 0.0;
    let mut hole_pixels = 0;
    for &(y, x) in region {
        for c in 0..canvas.channels() {
            canvas.set(y, x, c, blocked.at(y, x, c));
        }
        let g = gate.at(y, x, 0);
        gate_sum += g;
        if g <= HOLE_GATE {
            hole_pixels += 1;
        }
    }
    Ok(RegionStats {
        label,
        region_pixels: region.len(),
        gate_mean: gate_sum / region.len().max(1) as f64,
        hole_pixels,
        filled_from_mean: false,
    })
}

/// Region-wise compositing shared by [`super::render`] and the fixture
/// builder: every target pixel is produced by its own label's rule.
///
/// Label 0 is the background region and always uses the identity grid, so
/// pixels that are background on both sides keep the condition image.
/// Labels with a transform are warped and gated; target labels without one
/// are filled with the condition image's mean color.
pub(crate) fn composite(
    condition_image: &ImageTensor,
    condition_parsing: &SegmentationMap,
    target_parsing: &SegmentationMap,
    transforms: &[RegionTransform],
    gate_mode: GateMode,
    border: BorderRule,
) -> Result<(ImageTensor, Vec<RegionStats>)> {
    let (h, w) = (condition_image.height(), condition_image.width());
    if (condition_parsing.height(), condition_parsing.width()) != (h, w)
        || (target_parsing.height(), target_parsing.width()) != (h, w)
    {
        return Err(Error::ShapeMismatch(
            "condition image and parsings must share dimensions".into(),
        ));
    }

    let mut regions: Vec<Vec<(usize, usize)>> = vec![Vec::new(); NUM_PART_LABELS as usize];
    for y in 0..h {
        for x in 0..w {
            regions[target_parsing.label_at(y, x) as usize].push((y, x));
        }
    }

    let mut canvas = ImageTensor::zeros(h, w, condition_image.channels());
    let mut stats = Vec::new();
    let mut covered = [false; NUM_PART_LABELS as usize];

    let identity = WarpGrid::identity(h, w);
    stats.push(composite_region(
        &mut canvas,
        condition_image,
        condition_parsing,
        &regions[0],
        0,
        &identity,
        gate_mode,
        border,
    )?);
    covered[0] = true;

    for t in transforms {
        covered[t.label as usize] = true;
        if regions[t.label as usize].is_empty() {
            continue;
        }
        stats.push(composite_region(
            &mut canvas,
            condition_image,
            condition_parsing,
            &regions[t.label as usize],
            t.label,
            &t.grid,
            gate_mode,
            border,
        )?);
    }

    let global = global_mean_color(condition_image);
    for label in 1..NUM_PART_LABELS {
        let region = &regions[label as usize];
        if covered[label as usize] || region.is_empty() {
            continue;
        }
        fill_region(&mut canvas, region, &global);
        stats.push(RegionStats {
            label,
            region_pixels: region.len(),
            gate_mean: 0.0,
            hole_pixels: region.len(),
            filled_from_mean: true,
        });
    }
    Ok((canvas, stats))
}

/// IoU between a condition part mask pushed through a backward grid
/// (bilinear, 0.5 threshold) and the same label's target region.
pub(crate) fn warped_mask_iou(
    condition_parsing: &SegmentationMap,
    target_parsing: &SegmentationMap,
    label: u8,
    grid: &WarpGrid,
) -> Result<f64> {
    let (h, w) = (condition_parsing.height(), condition_parsing.width());
    let mask = ImageTensor::from_fn(h, w, 1, |y, x, _| {
        if condition_parsing.label_at(y, x) == label {
            1.0
        } else {
            0.0
        }
    });
    let warped = bilinear_sample(&mask, grid, BorderRule::Zeros);
    let warped_bin = SegmentationMap::new(
        h,
        w,
        warped.data().iter().map(|&v| (v >= 0.5) as u8).collect(),
    )?;
    let target_bin = SegmentationMap::new(
        h,
        w,
        target_parsing
            .labels()
            .iter()
            .map(|&l| (l == label) as u8)
            .collect(),
    )?;
    crate::metrics::mean_iou(&warped_bin, &target_bin, &[1])
}

/// What the renderer should aim at: either a pose (rasterized internally)
/// or a ready-made target parsing.
#[derive(Debug, Clone, Copy)]
pub enum RenderTarget<'a> {
    Pose(&'a PoseKeypoints),
    Parsing(&'a SegmentationMap),
}

/// Estimation and compositing details for one rendered part.
#[derive(Debug, Clone, Serialize)]
pub struct PartDiagnostics {
    pub label: u8,
    /// Condition-to-target estimate.
    pub forward: TransformParams,
    /// Target-to-condition estimate realized by the warp grid.
    pub backward: TransformParams,
    pub degenerate: bool,
    pub mean_landmark_error: f64,
    /// Rotation of the forward affine, degrees.
    pub rotation_degrees: f64,
    pub region_pixels: usize,
    pub gate_mean: f64,
    pub hole_pixels: usize,
}

/// Everything the renderer can report besides the image itself.
#[derive(Debug, Clone, Serialize)]
pub struct RenderDiagnostics {
    pub parts: Vec<PartDiagnostics>,
    /// Labels present in only one of the two parsings.
    pub omitted: Vec<OmittedPart>,
    /// Target labels painted with the condition mean color because they
    /// have no condition counterpart to estimate a transform from.
    pub mean_filled: Vec<u8>,
    /// Limbs the rasterizer skipped (pose targets only).
    pub skipped_limbs: Vec<u8>,
}

/// A rendered image, the target parsing it followed, and diagnostics.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: ImageTensor,
    pub parsing: SegmentationMap,
    pub diagnostics: RenderDiagnostics,
}

/// Renders the condition image into the target layout.
///
/// The target parsing is rasterized from the pose (or taken as given);
/// parts shared with the condition parsing get an estimated affine+TPS
/// transform each, are warped through the composed backward grid, and are
/// blended into their target region by the soft gate. Missing parts are
/// reported, never fatal.
pub fn render(
    condition_image: &ImageTensor,
    condition_parsing: &SegmentationMap,
    target: RenderTarget,
    cfg: &PipelineConfig,
) -> Result<RenderOutput> {
    cfg.validate()?;
    let (h, w) = (condition_image.height(), condition_image.width());
    if (condition_parsing.height(), condition_parsing.width()) != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "condition parsing {}x{} does not match image {}x{}",
            condition_parsing.height(),
            condition_parsing.width(),
            h,
            w
        )));
    }
    let (target_parsing, skipped_limbs) = match target {
        RenderTarget::Parsing(p) => {
            if (p.height(), p.width()) != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "target parsing {}x{} does not match image {}x{}",
                    p.height(),
                    p.width(),
                    h,
                    w
                )));
            }
            (p.clone(), Vec::new())
        }
        RenderTarget::Pose(pose) => {
            let report = rasterize_parsing_with_report(pose, cfg, h, w)?;
            (report.map, report.skipped)
        }
    };

    let report = match_parts(condition_parsing, &target_parsing)?;
    let mut opts = EstimateOptions::new(h, w);
    opts.tps_rows = cfg.tps_grid.0;
    opts.tps_cols = cfg.tps_grid.1;

    let mut region_transforms = Vec::new();
    let mut parts = Vec::new();
    for part in &cfg.parts {
        let Some(corr) = report
            .correspondences
            .iter()
            .find(|c| c.label == part.label)
        else {
            continue;
        };
        let forward = estimate_part_transform_with(corr, &opts)?;
        let backward = estimate_part_transform_with(&corr.swapped(), &opts)?;
        let grid = realize_backward_grid(&backward.params(), h, w)?;
        parts.push(PartDiagnostics {
            label: part.label,
            rotation_degrees: forward.affine.rotation_angle().to_degrees(),
            degenerate: forward.degenerate || backward.degenerate,
            mean_landmark_error: forward.mean_landmark_error,
            forward: forward.params(),
            backward: backward.params(),
            region_pixels: 0,
            gate_mean: 0.0,
            hole_pixels: 0,
        });
        region_transforms.push(RegionTransform {
            label: part.label,
            grid,
        });
    }

    let (image, stats) = composite(
        condition_image,
        condition_parsing,
        &target_parsing,
        &region_transforms,
        cfg.gate_mode,
        cfg.border,
    )?;

    let mut mean_filled = Vec::new();
    for s in &stats {
        if s.filled_from_mean && s.label != 0 {
            mean_filled.push(s.label);
        }
        if let Some(d) = parts.iter_mut().find(|d| d.label == s.label) {
            d.region_pixels = s.region_pixels;
            d.gate_mean = s.gate_mean;
            d.hole_pixels = s.hole_pixels;
        }
    }

    Ok(RenderOutput {
        image,
        parsing: target_parsing,
        diagnostics: RenderDiagnostics {
            parts,
            omitted: report.omitted,
            mean_filled,
            skipped_limbs,
        },
    })
}

/// Per-part transforms estimated between two parsings, as written by the
/// `estimate` CLI subcommand and consumed by `warp`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformSetEntry {
    pub label: u8,
    pub forward: TransformParams,
    pub backward: TransformParams,
    pub degenerate: bool,
    pub mean_landmark_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformSet {
    /// Frame the transforms were estimated in.
    pub height: usize,
    pub width: usize,
    pub parts: Vec<TransformSetEntry>,
    pub omitted: Vec<OmittedPart>,
}

/// Estimates forward and backward transforms for every non-background
/// label the two parsings share.
pub fn estimate_transform_set(
    condition: &SegmentationMap,
    target: &SegmentationMap,
    tps_grid: (usize, usize),
) -> Result<TransformSet> {
    let report = match_parts(condition, target)?;
    let (h, w) = (condition.height(), condition.width());
    let mut opts = EstimateOptions::new(h, w);
    opts.tps_rows = tps_grid.0;
    opts.tps_cols = tps_grid.1;
    let mut parts = Vec::new();
    for corr in &report.correspondences {
        if corr.label == 0 {
            continue;
        }
        let forward = estimate_part_transform_with(corr, &opts)?;
        let backward = estimate_part_transform_with(&corr.swapped(), &opts)?;
        parts.push(TransformSetEntry {
            label: corr.label,
            degenerate: forward.degenerate || backward.degenerate,
            mean_landmark_error: forward.mean_landmark_error,
            forward: forward.params(),
            backward: backward.params(),
        });
    }
    Ok(TransformSet {
        height: h,
        width: w,
        parts,
        omitted: report.omitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AffineParams;
    use crate::pipeline::{make_fixture, SynthFixture};
    use crate::tensor::Joint;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    fn mae(a: &ImageTensor, b: &ImageTensor) -> f64 {
        let n = a.data().len() as f64;
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n
    }

    #[test]
    fn fixed_point_reproduces_the_condition_image() {
        let cfg = cfg();
        let f = make_fixture(21, &cfg).unwrap();
        let out = render(
            &f.condition_image,
            &f.condition_parsing,
            RenderTarget::Parsing(&f.condition_parsing),
            &cfg,
        )
        .unwrap();
        assert!(mae(&out.image, &f.condition_image) <= 1e-6);
        let identity = AffineParams::identity();
        for d in &out.diagnostics.parts {
            assert!(
                d.forward.affine.max_coeff_distance(&identity) <= 1e-6,
                "part {} affine {:?}",
                d.label,
                d.forward.affine
            );
            assert!(d.rotation_degrees.abs() <= 1e-6);
            assert!(!d.degenerate);
        }
    }

    #[test]
    fn pose_and_parsing_targets_agree() {
        let cfg = cfg();
        let f = make_fixture(4, &cfg).unwrap();
        let via_pose = render(
            &f.condition_image,
            &f.condition_parsing,
            RenderTarget::Pose(&f.target_pose),
            &cfg,
        )
        .unwrap();
        let via_parsing = render(
            &f.condition_image,
            &f.condition_parsing,
            RenderTarget::Parsing(&f.target_parsing),
            &cfg,
        )
        .unwrap();
        assert_eq!(via_pose.image.data(), via_parsing.image.data());
        assert_eq!(via_pose.parsing.labels(), via_parsing.parsing.labels());
    }

    #[test]
    fn render_is_deterministic() {
        let cfg = cfg();
        let f = make_fixture(8, &cfg).unwrap();
        let a = render(
            &f.condition_image,
            &f.condition_parsing,
            RenderTarget::Parsing(&f.target_parsing),
            &cfg,
        )
        .unwrap();
        let b = render(
            &f.condition_image,
            &f.condition_parsing,
            RenderTarget::Parsing(&f.target_parsing),
            &cfg,
        )
        .unwrap();
        assert_eq!(a.image.data(), b.image.data());
    }

    fn warped_part_iou(f: &SynthFixture, d: &PartDiagnostics, cfg: &PipelineConfig) -> f64 {
        let grid = realize_backward_grid(&d.backward, cfg.height, cfg.width).unwrap();
        warped_mask_iou(&f.condition_parsing, &f.target_parsing, d.label, &grid).unwrap()
    }

    #[test]
    fn global_translation_transfers_every_part() {
        let cfg = cfg();
        let f = make_fixture(30, &cfg).unwrap();
        let target_pose = f.condition_pose.translated(5.0, 3.0);
        let out = render(
            &f.condition_image,
            &f.condition_parsing,
            RenderTarget::Pose(&target_pose),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.diagnostics.parts.len(), cfg.parts.len());
        let shifted_fixture = SynthFixture {
            target_parsing: out.parsing.clone(),
            ..f.clone()
        };
        for d in &out.diagnostics.parts {
            let iou = warped_part_iou(&shifted_fixture, d, &cfg);
            assert!(iou >= 0.95, "part {} IoU {iou}", d.label);
            assert!(
                d.rotation_degrees.abs() <= 2.0,
                "part {} rotated {}",
                d.label,
                d.rotation_degrees
            );
        }
    }

    #[test]
    fn single_limb_rotation_is_recovered() {
        let cfg = cfg();
        let f = make_fixture(2, &cfg).unwrap();
        // Rotate the right elbow 30 degrees about the right shoulder; only
        // the right upper arm (label 6) moves.
        let shoulder = f.condition_pose.joint(2);
        let elbow = f.condition_pose.joint(3);
        let angle = 30f64.to_radians();
        let (sin, cos) = angle.sin_cos();
        let (dx, dy) = (elbow.x - shoulder.x, elbow.y - shoulder.y);
        let rotated = Joint {
            x: shoulder.x + cos * dx - sin * dy,
            y: shoulder.y + sin * dx + cos * dy,
            visible: true,
        };
        let target_pose = f.condition_pose.with_joint(3, rotated);
        let out = render(
            &f.condition_image,
            &f.condition_parsing,
            RenderTarget::Pose(&target_pose),
            &cfg,
        )
        .unwrap();
        for d in &out.diagnostics.parts {
            if d.label == 6 {
                assert!(
                    (d.rotation_degrees - 30.0).abs() <= 2.0,
                    "upper arm rotation {}",
                    d.rotation_degrees
                );
            } else {
                assert!(
                    d.rotation_degrees.abs() <= 2.0,
                    "part {} rotation {}",
                    d.label,
                    d.rotation_degrees
                );
            }
        }
    }

    #[test]
    fn missing_condition_part_is_mean_filled_and_flagged() {
        let cfg = cfg();
        let f = make_fixture(13, &cfg).unwrap();
        // Erase the left thigh from the condition parsing only.
        let labels: Vec<u8> = f
            .condition_parsing
            .labels()
            .iter()
            .map(|&l| if l == 11 { 0 } else { l })
            .collect();
        let cond_parsing =
            SegmentationMap::new(cfg.height, cfg.width, labels).unwrap();
        let out = render(
            &f.condition_image,
            &cond_parsing,
            RenderTarget::Parsing(&f.target_parsing),
            &cfg,
        )
        .unwrap();
        assert!(out.diagnostics.mean_filled.contains(&11));
        assert!(out
            .diagnostics
            .omitted
            .iter()
            .any(|o| o.label == 11));
        assert!(out.diagnostics.parts.iter().all(|d| d.label != 11));
        // The filled region is constant.
        let mut colors = std::collections::BTreeSet::new();
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                if f.target_parsing.label_at(y, x) == 11 {
                    colors.insert(out.image.at(y, x, 0).to_bits());
                }
            }
        }
        assert_eq!(colors.len(), 1);
    }

    #[test]
    fn constant_gate_moves_output_monotonically_toward_warped_content() {
        let base = cfg();
        let f = make_fixture(6, &base).unwrap();
        let outputs: Vec<ImageTensor> = [0.0, 0.25, 0.75, 1.0]
            .iter()
            .map(|&c| {
                let mut cfg = base.clone();
                cfg.gate_mode = GateMode::Constant(c);
                render(
                    &f.condition_image,
                    &f.condition_parsing,
                    RenderTarget::Parsing(&f.target_parsing),
                    &cfg,
                )
                .unwrap()
                .image
            })
            .collect();
        let full = outputs.last().unwrap();
        for pair in outputs.windows(2) {
            for ((lo, hi), target) in pair[0]
                .data()
                .iter()
                .zip(pair[1].data())
                .zip(full.data())
            {
                assert!((hi - target).abs() <= (lo - target).abs() + 1e-12);
            }
        }
    }

    #[test]
    fn integer_translation_of_all_inputs_translates_the_output() {
        let cfg = cfg();
        let f = make_fixture(19, &cfg).unwrap();
        let (dy, dx) = (4i64, 6i64);
        let (h, w) = (cfg.height, cfg.width);
        let shift_image = |img: &ImageTensor| {
            ImageTensor::from_fn(h, w, img.channels(), |y, x, c| {
                let (sy, sx) = (y as i64 - dy, x as i64 - dx);
                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    img.at(sy as usize, sx as usize, c)
                } else {
                    0.5
                }
            })
        };
        let shift_map = |map: &SegmentationMap| {
            let mut out = SegmentationMap::background(h, w);
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = (y as i64 - dy, x as i64 - dx);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        out.set_label(y, x, map.label_at(sy as usize, sx as usize));
                    }
                }
            }
            out
        };
        // The moment-alignment affine conjugates exactly under an integer
        // shift of both parsings: the linear part is unchanged and the
        // translation picks up `(I - L) d`.
        let orig =
            estimate_transform_set(&f.condition_parsing, &f.target_parsing, cfg.tps_grid).unwrap();
        let moved = estimate_transform_set(
            &shift_map(&f.condition_parsing),
            &shift_map(&f.target_parsing),
            cfg.tps_grid,
        )
        .unwrap();
        let (fdx, fdy) = (dx as f64, dy as f64);
        for (a, b) in orig.parts.iter().zip(&moved.parts) {
            assert_eq!(a.label, b.label);
            let fa = a.forward.affine;
            let expected = AffineParams {
                tx: fa.tx + fdx - (fa.a11 * fdx + fa.a12 * fdy),
                ty: fa.ty + fdy - (fa.a21 * fdx + fa.a22 * fdy),
                ..fa
            };
            assert!(
                b.forward.affine.max_coeff_distance(&expected) <= 1e-9,
                "part {} affine drifts under the shift",
                a.label
            );
        }

        // The TPS residual stage is anchored to a control grid fixed in the
        // normalized frame, which a shift does not map onto itself, so the
        // rendered output is only near-equivariant.
        let out = render(
            &f.condition_image,
            &f.condition_parsing,
            RenderTarget::Parsing(&f.target_parsing),
            &cfg,
        )
        .unwrap();
        let shifted = render(
            &shift_image(&f.condition_image),
            &shift_map(&f.condition_parsing),
            RenderTarget::Parsing(&shift_map(&f.target_parsing)),
            &cfg,
        )
        .unwrap();
        let mut max_err: f64 = 0.0;
        let mut sum_err = 0.0;
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (y as i64 - dy, x as i64 - dx);
                if sy < 0 || sx < 0 || sy as usize >= h || sx as usize >= w {
                    continue;
                }
                for c in 0..3 {
                    let err = (shifted.image.at(y, x, c)
                        - out.image.at(sy as usize, sx as usize, c))
                    .abs();
                    max_err = max_err.max(err);
                    sum_err += err;
                    count += 1;
                }
            }
        }
        assert!(max_err <= 0.1, "translation equivariance off by {max_err}");
        assert!(
            sum_err / count as f64 <= 2e-3,
            "mean translation error {}",
            sum_err / count as f64
        );
    }

    #[test]
    fn transform_set_round_trips_and_realizes_grids() {
        let cfg = cfg();
        let f = make_fixture(14, &cfg).unwrap();
        let set =
            estimate_transform_set(&f.condition_parsing, &f.target_parsing, cfg.tps_grid).unwrap();
        assert_eq!(set.parts.len(), cfg.parts.len());
        let json = serde_json::to_string(&set).unwrap();
        let back: TransformSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.parts.len(), set.parts.len());
        for (a, b) in set.parts.iter().zip(&back.parts) {
            assert_eq!(a.label, b.label);
            assert!(a.forward.affine.max_coeff_distance(&b.forward.affine) <= 1e-12);
            let ga = realize_backward_grid(&a.backward, cfg.height, cfg.width).unwrap();
            let gb = realize_backward_grid(&b.backward, cfg.height, cfg.width).unwrap();
            assert!(ga.max_coord_distance(&gb) <= 1e-9);
        }
    }
}

