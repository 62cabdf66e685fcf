//! Dense tensor containers and input encodings.
//!
//! [`ImageTensor`] is the row-major `(y, x, c)` container used for images,
//! feature maps, residual maps and gates. [`SegmentationMap`] holds per-pixel
//! part labels in `0..20`, and [`PoseKeypoints`] the fixed set of 18 body
//! joints. The encoders turn poses into binary disc heatmaps and label maps
//! into one-hot tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of part labels in a segmentation map.
pub const NUM_PART_LABELS: u8 = 20;

/// Number of body joints in a pose.
pub const NUM_JOINTS: usize = 18;

/// Radius (in pixels) of the filled disc painted per visible joint.
pub const POSE_DISC_RADIUS: f64 = 4.0;

/// Joint order used throughout this crate (index 0..17).
///
/// The order follows the common 18-joint body model; it is a convention of
/// this repository, fixed so that serialized poses are unambiguous.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

/// Dense H x W x C grid of real samples in row-major `(y, x, c)` order.
///
/// Samples are finite `f64`; constructors reject NaN and infinities so any
/// tensor obtained from a public operation is finite everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Wraps raw samples. Fails if the length is not `h * w * c` or any
    /// sample is non-finite.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{}x{} = {} samples, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample at flat index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Builds a tensor by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn<F: FnMut(usize, usize, usize) -> f64>(
        height: usize,
        width: usize,
        channels: usize,
        mut f: F,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn require_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }
}

/// H x W grid of part labels, each `< 20`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{} = {} labels, got {}",
                height,
                width,
                height * width,
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l >= NUM_PART_LABELS) {
            return Err(Error::InvalidArgument(format!(
                "label {} at flat index {} is out of range 0..{}",
                labels[i], i, NUM_PART_LABELS
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// All-background (label 0) map.
    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn label_at(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub(crate) fn set_label(&mut self, y: usize, x: usize, label: u8) {
        debug_assert!(label < NUM_PART_LABELS);
        self.labels[y * self.width + x] = label;
    }

    /// Sorted list of labels that occupy at least one cell.
    pub fn present_labels(&self) -> Vec<u8> {
        let mut seen = [false; NUM_PART_LABELS as usize];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..NUM_PART_LABELS).filter(|&l| seen[l as usize]).collect()
    }

    /// Count of cells holding `label`.
    pub fn label_area(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// One body joint: sub-pixel position plus a visibility flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// Exactly 18 joints in the order of [`JOINT_NAMES`].
///
/// Serializes as a JSON array of 18 `{"x", "y", "visible"}` objects.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PoseKeypoints {
    joints: Vec<Joint>,
}

impl PoseKeypoints {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.len() != NUM_JOINTS {
            return Err(Error::InvalidArgument(format!(
                "pose must have exactly {} joints, got {}",
                NUM_JOINTS,
                joints.len()
            )));
        }
        for (i, j) in joints.iter().enumerate() {
            if !j.x.is_finite() || !j.y.is_finite() {
                return Err(Error::NonFinite(format!("joint {i} coordinates")));
            }
        }
        Ok(Self { joints })
    }

    /// All joints placed at the origin, invisible.
    pub fn empty() -> Self {
        Self {
            joints: vec![
                Joint {
                    x: 0.0,
                    y: 0.0,
                    visible: false
                };
                NUM_JOINTS
            ],
        }
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    #[inline]
    pub fn joint(&self, index: usize) -> Joint {
        self.joints[index]
    }

    /// A copy of the pose with one joint replaced.
    pub fn with_joint(&self, index: usize, joint: Joint) -> Self {
        let mut joints = self.joints.clone();
        joints[index] = joint;
        Self { joints }
    }

    /// Same pose with every visible joint shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let joints = self
            .joints
            .iter()
            .map(|j| Joint {
                x: j.x + dx,
                y: j.y + dy,
                visible: j.visible,
            })
            .collect();
        Self { joints }
    }
}

impl<'de> Deserialize<'de> for PoseKeypoints {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let joints = Vec::<Joint>::deserialize(deserializer)?;
        PoseKeypoints::new(joints).map_err(serde::de::Error::custom)
    }
}

/// Rasterizes a pose into 18 binary heatmap channels.
///
/// Channel `k` holds 1.0 at every pixel whose Euclidean distance to joint
/// `k`'s center is at most [`POSE_DISC_RADIUS`] (boundary inclusive) and 0.0
/// elsewhere. Invisible joints produce an all-zero channel; discs are clipped
/// at the image border.
pub fn encode_pose(pose: &PoseKeypoints, height: usize, width: usize) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "pose heatmap dimensions must be positive".into(),
        ));
    }
    let mut out = ImageTensor::zeros(height, width, NUM_JOINTS);
    let r2 = POSE_DISC_RADIUS * POSE_DISC_RADIUS;
    for (k, joint) in pose.joints().iter().enumerate() {
        if !joint.visible {
            continue;
        }
        // Only pixels inside the disc's bounding box can pass the test.
        let x_lo = ((joint.x - POSE_DISC_RADIUS).floor().max(0.0)) as usize;
        let y_lo = ((joint.y - POSE_DISC_RADIUS).floor().max(0.0)) as usize;
        let x_hi = (joint.x + POSE_DISC_RADIUS).ceil().min((width - 1) as f64);
        let y_hi = (joint.y + POSE_DISC_RADIUS).ceil().min((height - 1) as f64);
        if x_hi < 0.0 || y_hi < 0.0 {
            continue;
        }
        for y in y_lo..=y_hi as usize {
            for x in x_lo..=x_hi as usize {
                let dx = x as f64 - joint.x;
                let dy = y as f64 - joint.y;
                if dx * dx + dy * dy <= r2 {
                    out.set(y, x, k, 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// One-hot encodes a segmentation map into 20 channels.
///
/// Channel `c` is 1.0 exactly where the label equals `c`, so the per-pixel
/// channel sum is exactly 1.0.
pub fn encode_parsing(seg: &SegmentationMap) -> ImageTensor {
    let mut out = ImageTensor::zeros(seg.height(), seg.width(), NUM_PART_LABELS as usize);
    for y in 0..seg.height() {
        for x in 0..seg.width() {
            out.set(y, x, seg.label_at(y, x) as usize, 1.0);
        }
    }
    out
}

/// Per-pixel argmax over 20 channels; ties break to the lowest channel index.
pub fn decode_parsing(t: &ImageTensor) -> Result<SegmentationMap> {
    if t.channels() != NUM_PART_LABELS as usize {
        return Err(Error::ShapeMismatch(format!(
            "decode_parsing needs {} channels, got {}",
            NUM_PART_LABELS,
            t.channels()
        )));
    }
    let mut labels = Vec::with_capacity(t.height() * t.width());
    for y in 0..t.height() {
        for x in 0..t.width() {
            let mut best = 0usize;
            let mut best_v = t.at(y, x, 0);
            for c in 1..t.channels() {
                let v = t.at(y, x, c);
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            labels.push(best as u8);
        }
    }
    SegmentationMap::new(t.height(), t.width(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose_with(index: usize, x: f64, y: f64) -> PoseKeypoints {
        PoseKeypoints::empty().with_joint(
            index,
            Joint {
                x,
                y,
                visible: true,
            },
        )
    }

    #[test]
    fn pose_disc_boundary_inclusive() {
        let pose = pose_with(0, 10.0, 10.0);
        let t = encode_pose(&pose, 32, 32).unwrap();
        // distance 3 -> inside, distance 4 -> on the boundary, distance 5 -> out
        assert_eq!(t.at(13, 10, 0), 1.0);
        assert_eq!(t.at(14, 10, 0), 1.0);
        assert_eq!(t.at(15, 10, 0), 0.0);
    }

    #[test]
    fn pose_invisible_joints_zero() {
        let t = encode_pose(&PoseKeypoints::empty(), 16, 16).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pose_channels_binary() {
        let pose = pose_with(3, 5.25, 7.75);
        let t = encode_pose(&pose, 20, 20).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn pose_disc_pixel_count_matches_lattice_enumeration() {
        // Interior integer-centered joint: brute-force count of lattice
        // points within radius 4.
        let (cx, cy) = (12.0f64, 9.0f64);
        let mut expected = 0usize;
        for y in 0..32i64 {
            for x in 0..32i64 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= 16.0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 49);

        let t = encode_pose(&pose_with(5, cx, cy), 32, 32).unwrap();
        let ones = t.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones, expected);
    }

    #[test]
    fn pose_subpixel_joint() {
        // Joint at (10.5, 10.0): pixel (14, 10) is at distance 3.5, pixel
        // (15, 10) at 4.5.
        let t = encode_pose(&pose_with(0, 10.5, 10.0), 32, 32).unwrap();
        assert_eq!(t.at(10, 14, 0), 1.0);
        assert_eq!(t.at(10, 15, 0), 0.0);
    }

    #[test]
    fn pose_rejects_wrong_joint_count() {
        let joints = vec![
            Joint {
                x: 0.0,
                y: 0.0,
                visible: false
            };
            17
        ];
        assert!(PoseKeypoints::new(joints).is_err());
    }

    #[test]
    fn pose_json_round_trip() {
        let pose = pose_with(2, 3.5, 4.25);
        let json = serde_json::to_string(&pose).unwrap();
        let back: PoseKeypoints = serde_json::from_str(&json).unwrap();
        assert_eq!(pose, back);

        // 17 entries must be rejected on deserialize as well.
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v.as_array_mut().unwrap().pop();
        assert!(serde_json::from_value::<PoseKeypoints>(v).is_err());
    }

    #[test]
    fn parsing_one_hot_basics() {
        let seg = SegmentationMap::new(2, 2, vec![5, 0, 19, 5]).unwrap();
        let t = encode_parsing(&seg);
        assert_eq!(t.at(0, 0, 5), 1.0);
        for c in 0..20 {
            if c != 5 {
                assert_eq!(t.at(0, 0, c), 0.0);
            }
        }
        // per-pixel channel sum is exactly 1
        for y in 0..2 {
            for x in 0..2 {
                let sum: f64 = (0..20).map(|c| t.at(y, x, c)).sum();
                assert_eq!(sum, 1.0);
            }
        }
    }

    #[test]
    fn parsing_uniform_label_zero() {
        let seg = SegmentationMap::background(3, 4);
        let t = encode_parsing(&seg);
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(t.at(y, x, 0), 1.0);
                for c in 1..20 {
                    assert_eq!(t.at(y, x, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn decode_inverts_encode() {
        let labels: Vec<u8> = (0..48).map(|i| (i * 7 % 20) as u8).collect();
        let seg = SegmentationMap::new(6, 8, labels).unwrap();
        assert_eq!(decode_parsing(&encode_parsing(&seg)).unwrap(), seg);
    }

    #[test]
    fn decode_tie_breaks_to_lowest_index() {
        let t = ImageTensor::from_fn(2, 2, 20, |_, _, _| 0.25);
        let seg = decode_parsing(&t).unwrap();
        assert!(seg.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn decode_plain_argmax() {
        let mut t = ImageTensor::zeros(1, 1, 20);
        t.set(0, 0, 3, 0.9);
        t.set(0, 0, 7, 0.8);
        assert_eq!(decode_parsing(&t).unwrap().label_at(0, 0), 3);
    }

    #[test]
    fn decode_rejects_wrong_channel_count() {
        let t = ImageTensor::zeros(2, 2, 19);
        assert!(decode_parsing(&t).is_err());
    }

    #[test]
    fn tensor_rejects_non_finite() {
        assert!(ImageTensor::new(1, 2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(ImageTensor::new(1, 2, 1, vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn seg_rejects_out_of_range_label() {
        assert!(SegmentationMap::new(1, 2, vec![0, 20]).is_err());
    }
}
