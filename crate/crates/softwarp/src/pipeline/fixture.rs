//! Stage-one rasterization and seeded synthetic fixtures.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{affine_grid, AffineParams, Point, TpsParams};
use crate::io;
use crate::tensor::{ImageTensor, Joint, PoseKeypoints, SegmentationMap, NUM_JOINTS};
use crate::warp::BorderRule;

use super::render::{composite, RegionTransform};
use super::{GateMode, PipelineConfig};

/// Joint layout of the reference figure, in a 96x96 frame, `(x, y)` with y
/// pointing down. Indices follow the 18-joint order of
/// [`crate::tensor::JOINT_NAMES`].
const REFERENCE_SKELETON: [(f64, f64); NUM_JOINTS] = [
    (48.0, 18.0), // nose
    (48.0, 30.0), // neck
    (39.0, 30.0), // right shoulder
    (36.0, 42.0), // right elbow
    (35.0, 54.0), // right wrist
    (57.0, 30.0), // left shoulder
    (60.0, 42.0), // left elbow
    (61.0, 54.0), // left wrist
    (41.0, 57.0), // right hip
    (40.0, 70.0), // right knee
    (40.0, 83.0), // right ankle
    (55.0, 57.0), // left hip
    (56.0, 70.0), // left knee
    (56.0, 83.0), // left ankle
    (45.0, 15.0), // right eye
    (51.0, 15.0), // left eye
    (42.0, 16.0), // right ear
    (54.0, 16.0), // left ear
];

const REFERENCE_FRAME: f64 = 96.0;

/// Base colors per part label, unit-scaled RGB.
const PALETTE: [[f64; 3]; 20] = [
    [0.50, 0.50, 0.50], // 0: background (unused by parts)
    [0.85, 0.30, 0.30],
    [0.80, 0.65, 0.25], // 2: head
    [0.35, 0.75, 0.35],
    [0.30, 0.55, 0.80],
    [0.70, 0.35, 0.70], // 5: torso
    [0.85, 0.55, 0.25], // 6: right upper arm
    [0.25, 0.75, 0.65], // 7: left upper arm
    [0.80, 0.40, 0.55], // 8: right forearm
    [0.45, 0.45, 0.85], // 9: left forearm
    [0.55, 0.70, 0.25], // 10: right thigh
    [0.30, 0.65, 0.75], // 11: left thigh
    [0.75, 0.60, 0.45], // 12: right shin
    [0.60, 0.35, 0.80], // 13: left shin
    [0.85, 0.70, 0.40],
    [0.40, 0.80, 0.50],
    [0.70, 0.50, 0.30],
    [0.50, 0.30, 0.60],
    [0.35, 0.60, 0.60],
    [0.65, 0.45, 0.40],
];

const BACKGROUND_GRAY: f64 = 0.5;
const NOISE_AMPLITUDE: f64 = 0.08;
const DEG: f64 = std::f64::consts::PI / 180.0;

/// The reference figure scaled and centered into an `height` x `width`
/// frame, all joints visible.
pub fn canonical_pose(height: usize, width: usize) -> PoseKeypoints {
    let scale = (height.min(width) as f64) / REFERENCE_FRAME;
    let ox = (width as f64 - REFERENCE_FRAME * scale) / 2.0;
    let oy = (height as f64 - REFERENCE_FRAME * scale) / 2.0;
    let joints = REFERENCE_SKELETON
        .iter()
        .map(|&(x, y)| Joint {
            x: x * scale + ox,
            y: y * scale + oy,
            visible: true,
        })
        .collect();
    PoseKeypoints::new(joints).expect("reference skeleton is finite")
}

/// Rasterization result: the label map plus the labels of limbs skipped
/// because an endpoint joint was invisible.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterReport {
    pub map: SegmentationMap,
    pub skipped: Vec<u8>,
}

/// [`rasterize_parsing`] plus the list of skipped limb labels.
pub fn rasterize_parsing_with_report(
    pose: &PoseKeypoints,
    cfg: &PipelineConfig,
    height: usize,
    width: usize,
) -> Result<RasterReport> {
    cfg.validate()?;
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument(format!(
            "raster frame must be at least 2x2, got {height}x{width}"
        )));
    }
    let mut map = SegmentationMap::background(height, width);
    let mut skipped = Vec::new();
    for part in &cfg.parts {
        let a = pose.joint(part.joints.0);
        let b = pose.joint(part.joints.1);
        if !a.visible || !b.visible {
            skipped.push(part.label);
            continue;
        }
        paint_capsule(
            &mut map,
            Point::new(a.x, a.y),
            Point::new(b.x, b.y),
            part.half_width,
            part.label,
        );
    }
    Ok(RasterReport { map, skipped })
}

/// Paints each configured limb as a capsule (the joint segment dilated by
/// its half-width) in list order; later limbs overwrite earlier ones.
/// Limbs with an invisible endpoint are skipped.
pub fn rasterize_parsing(
    pose: &PoseKeypoints,
    cfg: &PipelineConfig,
    height: usize,
    width: usize,
) -> Result<SegmentationMap> {
    Ok(rasterize_parsing_with_report(pose, cfg, height, width)?.map)
}

fn paint_capsule(map: &mut SegmentationMap, a: Point, b: Point, half_width: f64, label: u8) {
    let (h, w) = (map.height() as f64, map.width() as f64);
    let x_lo = (a.x.min(b.x) - half_width).floor().max(0.0);
    let x_hi = (a.x.max(b.x) + half_width).ceil().min(w - 1.0);
    let y_lo = (a.y.min(b.y) - half_width).floor().max(0.0);
    let y_hi = (a.y.max(b.y) + half_width).ceil().min(h - 1.0);
    if x_lo > x_hi || y_lo > y_hi {
        return;
    }
    for y in y_lo as usize..=y_hi as usize {
        for x in x_lo as usize..=x_hi as usize {
            let p = Point::new(x as f64, y as f64);
            if point_segment_distance(p, a, b) <= half_width {
                map.set_label(y, x, label);
            }
        }
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let (apx, apy) = (p.x - a.x, p.y - a.y);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// Known rigid motion of one part: target capsule = `affine` applied to the
/// condition capsule; `tps` is the identity refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTransform {
    pub label: u8,
    pub affine: AffineParams,
    pub tps: TpsParams,
}

/// One synthetic condition/target pair with everything known: both poses,
/// both parsings (rasterized from the poses, so re-rasterization reproduces
/// them exactly), a textured condition image, the reference target
/// appearance obtained by warping the condition image through the known
/// transforms, and those transforms themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFixture {
    pub condition_image: ImageTensor,
    pub condition_pose: PoseKeypoints,
    pub target_pose: PoseKeypoints,
    pub condition_parsing: SegmentationMap,
    pub target_parsing: SegmentationMap,
    /// Condition image warped through the ground-truth transforms; the
    /// scoring reference for renders of this fixture.
    pub target_image: ImageTensor,
    pub ground_truth_transforms: Vec<GroundTruthTransform>,
}

fn rotated_about(j: Joint, pivot: (f64, f64), sin: f64, cos: f64) -> Joint {
    let (dx, dy) = (j.x - pivot.0, j.y - pivot.1);
    Joint {
        x: pivot.0 + cos * dx - sin * dy,
        y: pivot.1 + sin * dx + cos * dy,
        visible: j.visible,
    }
}

fn rotate_set(joints: &mut [Joint], idx: &[usize], pivot_idx: usize, angle: f64) {
    let pivot = (joints[pivot_idx].x, joints[pivot_idx].y);
    let (sin, cos) = angle.sin_cos();
    for &i in idx {
        joints[i] = rotated_about(joints[i], pivot, sin, cos);
    }
}

/// Bounded kinematic perturbation: small whole-figure rotation about the
/// neck, separate head tilt, per-segment arm and leg rotations about their
/// proximal joints, then a global translation. The bounds are chosen so
/// that the capsules of the default part layout can never collide, keeping
/// every painted region a complete silhouette.
fn perturb_pose(cond: &PoseKeypoints, rng: &mut ChaCha8Rng, shift_bound: f64) -> PoseKeypoints {
    let whole = rng.random_range(-6.0 * DEG..6.0 * DEG);
    let head = rng.random_range(-12.0 * DEG..12.0 * DEG);
    let mut limb = |proximal_bound: f64, distal_bound: f64| {
        (
            rng.random_range(-proximal_bound * DEG..proximal_bound * DEG),
            rng.random_range(-distal_bound * DEG..distal_bound * DEG),
        )
    };
    let (arm_r, arm_l) = (limb(15.0, 15.0), limb(15.0, 15.0));
    let (leg_r, leg_l) = (limb(10.0, 12.0), limb(10.0, 12.0));
    let tx = rng.random_range(-shift_bound..shift_bound);
    let ty = rng.random_range(-shift_bound..shift_bound);

    let mut j = cond.joints().to_vec();
    let all_but_neck: Vec<usize> = (0..NUM_JOINTS).filter(|&i| i != 1).collect();
    rotate_set(&mut j, &all_but_neck, 1, whole);
    rotate_set(&mut j, &[0, 14, 15, 16, 17], 1, head);
    for (shoulder, elbow, wrist, angles) in
        [(2, 3, 4, arm_r), (5, 6, 7, arm_l), (8, 9, 10, leg_r), (11, 12, 13, leg_l)]
    {
        rotate_set(&mut j, &[elbow, wrist], shoulder, angles.0);
        rotate_set(&mut j, &[wrist], elbow, angles.1);
    }
    for joint in j.iter_mut() {
        joint.x += tx;
        joint.y += ty;
    }
    PoseKeypoints::new(j).expect("rotations and shifts keep joints finite")
}

/// The rigid map sending segment `a -> b` onto segment `a2 -> b2`:
/// rotation by the angle between the segments about `a`, then translation
/// of `a` onto `a2`.
fn rigid_between(a: Point, b: Point, a2: Point, b2: Point) -> AffineParams {
    let theta = (b2.y - a2.y).atan2(b2.x - a2.x) - (b.y - a.y).atan2(b.x - a.x);
    let (sin, cos) = theta.sin_cos();
    AffineParams::from_parts(
        [[cos, -sin], [sin, cos]],
        (
            a2.x - (cos * a.x - sin * a.y),
            a2.y - (sin * a.x + cos * a.y),
        ),
    )
}

fn frame_margin_check(pose: &PoseKeypoints, cfg: &PipelineConfig) -> Result<()> {
    for part in &cfg.parts {
        for idx in [part.joints.0, part.joints.1] {
            let j = pose.joint(idx);
            let margin = part.half_width + 1.0;
            if j.x < margin
                || j.y < margin
                || j.x > cfg.width as f64 - 1.0 - margin
                || j.y > cfg.height as f64 - 1.0 - margin
            {
                return Err(Error::InvalidArgument(format!(
                    "part {} leaves the {}x{} frame; enlarge the frame or shrink the figure",
                    part.label, cfg.height, cfg.width
                )));
            }
        }
    }
    Ok(())
}

/// Builds a deterministic synthetic fixture from a seed.
///
/// The condition pose is the canonical figure with a little per-joint
/// jitter; the target pose is a bounded kinematic perturbation of it, so
/// every configured part moves rigidly and its true transform is known.
pub fn make_fixture(seed: u64, cfg: &PipelineConfig) -> Result<SynthFixture> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut joints = canonical_pose(h, w).joints().to_vec();
    for j in joints.iter_mut() {
        j.x += rng.random_range(-0.75..0.75);
        j.y += rng.random_range(-0.75..0.75);
    }
    let condition_pose = PoseKeypoints::new(joints)?;
    let shift_bound = 3.0 * (h.min(w) as f64) / REFERENCE_FRAME;
    let target_pose = perturb_pose(&condition_pose, &mut rng, shift_bound);
    frame_margin_check(&condition_pose, cfg)?;
    frame_margin_check(&target_pose, cfg)?;

    let condition_parsing = rasterize_parsing(&condition_pose, cfg, h, w)?;
    let target_parsing = rasterize_parsing(&target_pose, cfg, h, w)?;

    let ground_truth_transforms: Vec<GroundTruthTransform> = cfg
        .parts
        .iter()
        .map(|part| {
            let (ca, cb) = (condition_pose.joint(part.joints.0), condition_pose.joint(part.joints.1));
            let (ta, tb) = (target_pose.joint(part.joints.0), target_pose.joint(part.joints.1));
            GroundTruthTransform {
                label: part.label,
                affine: rigid_between(
                    Point::new(ca.x, ca.y),
                    Point::new(cb.x, cb.y),
                    Point::new(ta.x, ta.y),
                    Point::new(tb.x, tb.y),
                ),
                tps: TpsParams::identity(cfg.tps_grid.0, cfg.tps_grid.1),
            }
        })
        .collect();

    let mut condition_image = ImageTensor::from_fn(h, w, 3, |y, x, c| {
        let label = condition_parsing.label_at(y, x);
        if label == 0 {
            BACKGROUND_GRAY
        } else {
            PALETTE[label as usize][c]
        }
    });
    // Per-pixel noise on part pixels, drawn in row-major order so the
    // texture is a pure function of (seed, parsing).
    for y in 0..h {
        for x in 0..w {
            if condition_parsing.label_at(y, x) != 0 {
                for c in 0..3 {
                    let noisy = condition_image.at(y, x, c)
                        + rng.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
                    condition_image.set(y, x, c, noisy.clamp(0.02, 0.98));
                }
            }
        }
    }

    let mut region_transforms = Vec::with_capacity(ground_truth_transforms.len());
    for gt in &ground_truth_transforms {
        let backward = gt.affine.inverse()?;
        region_transforms.push(RegionTransform {
            label: gt.label,
            grid: affine_grid(&backward, h, w),
        });
    }
    let (target_image, _) = composite(
        &condition_image,
        &condition_parsing,
        &target_parsing,
        &region_transforms,
        GateMode::Overlap,
        BorderRule::Zeros,
    )?;

    Ok(SynthFixture {
        condition_image,
        condition_pose,
        target_pose,
        condition_parsing,
        target_parsing,
        target_image,
        ground_truth_transforms,
    })
}

impl SynthFixture {
    /// Writes the fixture as a directory of PNGs and JSON files.
    ///
    /// Images cross the 8-bit boundary, so a loaded fixture matches the
    /// saved one only at PNG precision.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        io::write_image_png(&dir.join("condition.png"), &self.condition_image)?;
        io::write_image_png(&dir.join("target.png"), &self.target_image)?;
        io::write_segmentation_png(&dir.join("condition_parsing.png"), &self.condition_parsing)?;
        io::write_segmentation_png(&dir.join("target_parsing.png"), &self.target_parsing)?;
        io::write_json(&dir.join("condition_pose.json"), &self.condition_pose)?;
        io::write_json(&dir.join("target_pose.json"), &self.target_pose)?;
        io::write_json(&dir.join("ground_truth.json"), &self.ground_truth_transforms)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            condition_image: io::read_image_png(&dir.join("condition.png"))?,
            target_image: io::read_image_png(&dir.join("target.png"))?,
            condition_parsing: io::read_segmentation_png(&dir.join("condition_parsing.png"))?,
            target_parsing: io::read_segmentation_png(&dir.join("target_parsing.png"))?,
            condition_pose: io::read_json(&dir.join("condition_pose.json"))?,
            target_pose: io::read_json(&dir.join("target_pose.json"))?,
            ground_truth_transforms: io::read_json(&dir.join("ground_truth.json"))?,
        })
    }
}
