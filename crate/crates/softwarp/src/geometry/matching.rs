//! Deterministic part matching between two segmentation maps.
//!
//! For every label present in both maps the matcher computes centroids,
//! second central moments, and `K` boundary landmarks sampled at equal
//! arc-length fractions along the part outline, index-paired between the
//! maps. Labels present on only one side are omitted and reported.

use serde::{Deserialize, Serialize};

use super::Point;
use crate::error::{Error, Result};
use crate::tensor::{SegmentationMap, NUM_PART_LABELS};

/// Default number of boundary landmarks per part.
pub const LANDMARKS_PER_PART: usize = 16;

/// Which input map a part was missing from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapSide {
    Condition,
    Target,
}

/// A label that could not be matched because one map lacks it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmittedPart {
    pub label: u8,
    pub missing_from: MapSide,
}

/// Matched statistics for one part label: condition-side ("source") and
/// target-side centroids, 2x2 second central moment matrices, and
/// index-paired boundary landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartCorrespondence {
    pub label: u8,
    pub source_centroid: Point,
    pub target_centroid: Point,
    pub source_moments: [[f64; 2]; 2],
    pub target_moments: [[f64; 2]; 2],
    pub landmark_pairs: Vec<(Point, Point)>,
}

impl PartCorrespondence {
    /// The same correspondence with source and target roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            label: self.label,
            source_centroid: self.target_centroid,
            target_centroid: self.source_centroid,
            source_moments: self.target_moments,
            target_moments: self.source_moments,
            landmark_pairs: self
                .landmark_pairs
                .iter()
                .map(|&(s, t)| (t, s))
                .collect(),
        }
    }
}

/// Output of [`match_parts`]: correspondences for shared labels plus the
/// labels skipped because only one map contains them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub correspondences: Vec<PartCorrespondence>,
    pub omitted: Vec<OmittedPart>,
}

struct PartStats {
    centroid: Point,
    moments: [[f64; 2]; 2],
    landmarks: Vec<Point>,
}

fn part_pixels(map: &SegmentationMap, label: u8) -> Vec<(usize, usize)> {
    let mut pixels = Vec::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            if map.label_at(y, x) == label {
                pixels.push((y, x));
            }
        }
    }
    pixels
}

/// Largest 8-connected component of `pixels`, in row-major order. Size ties
/// go to the component whose first pixel comes earliest in row-major order.
fn largest_component(
    pixels: &[(usize, usize)],
    height: usize,
    width: usize,
) -> Vec<(usize, usize)> {
    let mut member = vec![false; height * width];
    for &(y, x) in pixels {
        member[y * width + x] = true;
    }
    let mut seen = vec![false; height * width];
    let mut best: Vec<(usize, usize)> = Vec::new();
    for &(y, x) in pixels {
        if seen[y * width + x] {
            continue;
        }
        let mut component = Vec::new();
        let mut queue = std::collections::VecDeque::from([(y, x)]);
        seen[y * width + x] = true;
        while let Some((cy, cx)) = queue.pop_front() {
            component.push((cy, cx));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (cy as i64 + dy, cx as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= height as i64 || nx >= width as i64 {
                        continue;
                    }
                    let idx = ny as usize * width + nx as usize;
                    if member[idx] && !seen[idx] {
                        seen[idx] = true;
                        queue.push_back((ny as usize, nx as usize));
                    }
                }
            }
        }
        component.sort_unstable();
        if component.len() > best.len() {
            best = component;
        }
    }
    best
}

/// 8-neighborhood ring in visually clockwise order (y grows downward),
/// starting at the west neighbor: W, NW, N, NE, E, SE, S, SW.
const RING: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

/// Moore-neighbor boundary trace of an 8-connected component, returning the
/// closed outline as pixel-center points in visit order.
fn trace_contour(component: &[(usize, usize)], height: usize, width: usize) -> Vec<Point> {
    let start = component[0];
    if component.len() == 1 {
        return vec![Point::new(start.1 as f64, start.0 as f64)];
    }
    let mut member = vec![false; height * width];
    for &(y, x) in component {
        member[y * width + x] = true;
    }
    let in_component = |x: i64, y: i64| {
        x >= 0
            && y >= 0
            && x < width as i64
            && y < height as i64
            && member[y as usize * width + x as usize]
    };

    // The start pixel is first in row-major order, so its west neighbor is
    // outside the component; that makes it a valid initial backtrack.
    let start_xy = (start.1 as i64, start.0 as i64);
    let initial_backtrack = (start_xy.0 - 1, start_xy.1);
    let mut p = start_xy;
    let mut backtrack = initial_backtrack;
    let mut contour = Vec::new();
    let limit = 4 * component.len() + 8;

    loop {
        contour.push(Point::new(p.0 as f64, p.1 as f64));
        let bi = RING
            .iter()
            .position(|&(dx, dy)| (p.0 + dx, p.1 + dy) == backtrack)
            .expect("backtrack is always an 8-neighbor");
        let mut advanced = false;
        for step in 1..=8 {
            let j = (bi + step) % 8;
            let n = (p.0 + RING[j].0, p.1 + RING[j].1);
            if in_component(n.0, n.1) {
                let prev = (j + 7) % 8;
                backtrack = (p.0 + RING[prev].0, p.1 + RING[prev].1);
                p = n;
                advanced = true;
                break;
            }
        }
        if !advanced || (p == start_xy && backtrack == initial_backtrack) || contour.len() >= limit
        {
            break;
        }
    }
    contour
}

/// Samples `k` points at equal arc-length fractions along a closed contour,
/// starting where the angle-0 ray from the centroid (pointing along +x)
/// crosses the outline. When several crossings exist the outermost wins;
/// when none exists the vertex closest to angle 0 anchors the walk.
fn sample_landmarks(contour: &[Point], centroid: Point, k: usize) -> Vec<Point> {
    if contour.len() == 1 {
        return vec![contour[0]; k];
    }
    let m = contour.len();
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(0.0f64);
    for i in 0..m {
        let a = contour[i];
        let b = contour[(i + 1) % m];
        prefix.push(prefix[i] + a.distance(&b));
    }
    let total = prefix[m];
    if total <= 0.0 {
        return vec![contour[0]; k];
    }

    let mut anchor: Option<(f64, f64)> = None; // (crossing x, arc position)
    for i in 0..m {
        let a = contour[i];
        let b = contour[(i + 1) % m];
        let straddles =
            (a.y <= centroid.y && b.y > centroid.y) || (b.y <= centroid.y && a.y > centroid.y);
        if !straddles {
            continue;
        }
        let t = (centroid.y - a.y) / (b.y - a.y);
        let x_cross = a.x + t * (b.x - a.x);
        if x_cross >= centroid.x - 1e-9
            && anchor.map_or(true, |(best_x, _)| x_cross > best_x)
        {
            anchor = Some((x_cross, prefix[i] + t * (prefix[i + 1] - prefix[i])));
        }
    }
    let start_arc = match anchor {
        Some((_, s)) => s,
        None => {
            let mut best = (f64::INFINITY, 0.0);
            for (i, v) in contour.iter().enumerate() {
                let angle = (v.y - centroid.y).atan2(v.x - centroid.x).abs();
                if angle < best.0 {
                    best = (angle, prefix[i]);
                }
            }
            best.1
        }
    };

    (0..k)
        .map(|i| {
            let mut s = (start_arc + i as f64 * total / k as f64) % total;
            if s < 0.0 {
                s += total;
            }
            let seg = prefix.partition_point(|&p| p <= s).saturating_sub(1).min(m - 1);
            let len = prefix[seg + 1] - prefix[seg];
            let t = if len > 0.0 { (s - prefix[seg]) / len } else { 0.0 };
            let a = contour[seg];
            let b = contour[(seg + 1) % m];
            Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        })
        .collect()
}

fn part_stats(map: &SegmentationMap, label: u8, k: usize) -> Option<PartStats> {
    let pixels = part_pixels(map, label);
    if pixels.is_empty() {
        return None;
    }
    let n = pixels.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for &(y, x) in &pixels {
        cx += x as f64;
        cy += y as f64;
    }
    cx /= n;
    cy /= n;
    let (mut mxx, mut mxy, mut myy) = (0.0, 0.0, 0.0);
    for &(y, x) in &pixels {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        mxx += dx * dx;
        mxy += dx * dy;
        myy += dy * dy;
    }
    mxx /= n;
    mxy /= n;
    myy /= n;

    let centroid = Point::new(cx, cy);
    let component = largest_component(&pixels, map.height(), map.width());
    let contour = trace_contour(&component, map.height(), map.width());
    let landmarks = sample_landmarks(&contour, centroid, k);
    Some(PartStats {
        centroid,
        moments: [[mxx, mxy], [mxy, myy]],
        landmarks,
    })
}

/// [`match_parts`] with an explicit landmark count.
pub fn match_parts_with(
    condition: &SegmentationMap,
    target: &SegmentationMap,
    landmarks_per_part: usize,
) -> Result<MatchReport> {
    if (condition.height(), condition.width()) != (target.height(), target.width()) {
        return Err(Error::ShapeMismatch(format!(
            "segmentation maps differ in shape: {}x{} vs {}x{}",
            condition.height(),
            condition.width(),
            target.height(),
            target.width()
        )));
    }
    if landmarks_per_part == 0 {
        return Err(Error::InvalidArgument(
            "landmark count must be positive".into(),
        ));
    }
    let mut correspondences = Vec::new();
    let mut omitted = Vec::new();
    for label in 0..NUM_PART_LABELS as u8 {
        let source = part_stats(condition, label, landmarks_per_part);
        let dest = part_stats(target, label, landmarks_per_part);
        match (source, dest) {
            (Some(s), Some(t)) => correspondences.push(PartCorrespondence {
                label,
                source_centroid: s.centroid,
                target_centroid: t.centroid,
                source_moments: s.moments,
                target_moments: t.moments,
                landmark_pairs: s.landmarks.into_iter().zip(t.landmarks).collect(),
            }),
            (Some(_), None) => omitted.push(OmittedPart {
                label,
                missing_from: MapSide::Target,
            }),
            (None, Some(_)) => omitted.push(OmittedPart {
                label,
                missing_from: MapSide::Condition,
            }),
            (None, None) => {}
        }
    }
    Ok(MatchReport {
        correspondences,
        omitted,
    })
}

/// Matches every label present in both maps, with [`LANDMARKS_PER_PART`]
/// boundary landmarks per part.
pub fn match_parts(condition: &SegmentationMap, target: &SegmentationMap) -> Result<MatchReport> {
    match_parts_with(condition, target, LANDMARKS_PER_PART)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from_rows(rows: &[&[u8]]) -> SegmentationMap {
        let height = rows.len();
        let width = rows[0].len();
        let mut labels = Vec::with_capacity(height * width);
        for row in rows {
            assert_eq!(row.len(), width);
            labels.extend_from_slice(row);
        }
        SegmentationMap::new(height, width, labels).unwrap()
    }

    fn disc_map(height: usize, width: usize, cx: f64, cy: f64, r: f64, label: u8) -> SegmentationMap {
        let mut map = SegmentationMap::background(height, width);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    map.set_label(y, x, label);
                }
            }
        }
        map
    }

    #[test]
    fn identical_maps_match_with_equal_statistics() {
        let map = disc_map(20, 20, 9.0, 9.0, 5.0, 3);
        let report = match_parts(&map, &map).unwrap();
        assert!(report.omitted.is_empty());
        // Background and the disc label both match.
        assert_eq!(report.correspondences.len(), 2);
        for c in &report.correspondences {
            assert_eq!(c.source_centroid, c.target_centroid);
            assert_eq!(c.source_moments, c.target_moments);
            assert_eq!(c.landmark_pairs.len(), LANDMARKS_PER_PART);
            for (s, t) in &c.landmark_pairs {
                assert_eq!(s, t);
            }
        }
    }

    #[test]
    fn integer_translation_shifts_centroids_and_landmarks_exactly() {
        let a = disc_map(24, 24, 8.0, 10.0, 4.5, 7);
        let mut b = SegmentationMap::background(24, 24);
        for y in 0..24 {
            for x in 0..24 {
                if a.label_at(y, x) == 7 && x + 3 < 24 {
                    b.set_label(y, x + 3, 7);
                }
            }
        }
        let report = match_parts(&a, &b).unwrap();
        let c = report
            .correspondences
            .iter()
            .find(|c| c.label == 7)
            .unwrap();
        assert!((c.target_centroid.x - c.source_centroid.x - 3.0).abs() < 1e-12);
        assert!((c.target_centroid.y - c.source_centroid.y).abs() < 1e-12);
        for row in 0..2 {
            for col in 0..2 {
                assert!(
                    (c.source_moments[row][col] - c.target_moments[row][col]).abs() < 1e-12
                );
            }
        }
        for (s, t) in &c.landmark_pairs {
            assert!((t.x - s.x - 3.0).abs() < 1e-9);
            assert!((t.y - s.y).abs() < 1e-9);
        }
    }

    #[test]
    fn one_sided_labels_are_omitted_with_the_right_side() {
        let a = disc_map(16, 16, 7.0, 7.0, 3.0, 2);
        let b = disc_map(16, 16, 7.0, 7.0, 3.0, 5);
        let report = match_parts(&a, &b).unwrap();
        assert_eq!(report.correspondences.len(), 1); // background only
        assert_eq!(
            report.omitted,
            vec![
                OmittedPart {
                    label: 2,
                    missing_from: MapSide::Target
                },
                OmittedPart {
                    label: 5,
                    missing_from: MapSide::Condition
                },
            ]
        );
    }

    #[test]
    fn matching_is_symmetric_under_input_swap() {
        let a = disc_map(20, 20, 6.0, 8.0, 4.0, 1);
        let b = disc_map(20, 20, 12.0, 10.0, 3.0, 1);
        let fwd = match_parts(&a, &b).unwrap();
        let rev = match_parts(&b, &a).unwrap();
        assert_eq!(fwd.correspondences.len(), rev.correspondences.len());
        for (f, r) in fwd.correspondences.iter().zip(&rev.correspondences) {
            assert_eq!(&f.swapped(), r);
        }
        assert_eq!(fwd.omitted.len(), rev.omitted.len());
    }

    #[test]
    fn landmarks_lie_on_the_part_boundary() {
        let map = disc_map(30, 30, 14.0, 13.0, 6.5, 4);
        let report = match_parts(&map, &map).unwrap();
        let c = report
            .correspondences
            .iter()
            .find(|c| c.label == 4)
            .unwrap();
        for (s, _) in &c.landmark_pairs {
            let near_part = (0..30).any(|y| {
                (0..30).any(|x| {
                    map.label_at(y, x) == 4
                        && (s.x - x as f64).abs() <= 0.71
                        && (s.y - y as f64).abs() <= 0.71
                })
            });
            assert!(near_part, "landmark ({}, {}) is off the outline", s.x, s.y);
        }
    }

    #[test]
    fn first_landmark_sits_on_the_positive_x_ray() {
        let map = disc_map(30, 30, 14.0, 14.0, 7.0, 9);
        let report = match_parts(&map, &map).unwrap();
        let c = report
            .correspondences
            .iter()
            .find(|c| c.label == 9)
            .unwrap();
        let first = c.landmark_pairs[0].0;
        assert!((first.y - c.source_centroid.y).abs() < 0.75);
        assert!(first.x > c.source_centroid.x + 6.0);
    }

    #[test]
    fn moments_are_positive_semidefinite_and_disc_moments_match_theory() {
        let r = 8.0;
        let map = disc_map(40, 40, 19.0, 19.0, r, 6);
        let report = match_parts(&map, &map).unwrap();
        let c = report
            .correspondences
            .iter()
            .find(|c| c.label == 6)
            .unwrap();
        let m = c.source_moments;
        assert!((m[0][1] - m[1][0]).abs() < 1e-12);
        let trace = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        assert!(trace >= 0.0 && det >= -1e-12);
        // A solid disc has mean second moments r^2 / 4 per axis.
        let expected = r * r / 4.0;
        assert!((m[0][0] - expected).abs() / expected < 0.05);
        assert!((m[1][1] - expected).abs() / expected < 0.05);
    }

    #[test]
    fn single_pixel_part_matches_with_degenerate_statistics() {
        let mut map = SegmentationMap::background(8, 8);
        map.set_label(3, 5, 2);
        let report = match_parts(&map, &map).unwrap();
        let c = report
            .correspondences
            .iter()
            .find(|c| c.label == 2)
            .unwrap();
        assert_eq!(c.source_centroid, Point::new(5.0, 3.0));
        assert_eq!(c.source_moments, [[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(c.landmark_pairs.len(), LANDMARKS_PER_PART);
        for (s, _) in &c.landmark_pairs {
            assert_eq!(*s, Point::new(5.0, 3.0));
        }
    }

    #[test]
    fn landmarks_come_from_the_largest_component() {
        let mut map = disc_map(30, 30, 9.0, 9.0, 5.0, 3);
        map.set_label(25, 27, 3);
        let report = match_parts(&map, &map).unwrap();
        let c = report
            .correspondences
            .iter()
            .find(|c| c.label == 3)
            .unwrap();
        for (s, _) in &c.landmark_pairs {
            assert!(s.x < 16.0 && s.y < 16.0, "landmark ({}, {})", s.x, s.y);
        }
    }

    #[test]
    fn concave_outline_is_traced_through_every_boundary_pixel() {
        let map = map_from_rows(&[
            &[0, 0, 0, 0, 0, 0, 0],
            &[0, 1, 1, 1, 1, 1, 0],
            &[0, 1, 0, 0, 0, 1, 0],
            &[0, 1, 0, 0, 0, 1, 0],
            &[0, 1, 1, 1, 1, 1, 0],
            &[0, 0, 0, 0, 0, 0, 0],
        ]);
        let pixels = part_pixels(&map, 1);
        let component = largest_component(&pixels, 6, 7);
        let contour = trace_contour(&component, 6, 7);
        // The ring is its own boundary: every part pixel appears.
        for &(y, x) in &pixels {
            assert!(
                contour
                    .iter()
                    .any(|p| p.x == x as f64 && p.y == y as f64),
                "pixel ({x}, {y}) missing from contour"
            );
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = SegmentationMap::background(4, 4);
        let b = SegmentationMap::background(4, 5);
        assert!(matches!(
            match_parts(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
