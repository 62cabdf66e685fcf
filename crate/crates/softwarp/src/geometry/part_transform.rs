//! Per-part transform estimation from a matched correspondence.
//!
//! The affine comes from closed-form moment alignment: the linear part is
//! `Mt^(1/2) R(theta) Ms^(-1/2)`, which maps the source moment ellipse onto
//! the target one for every rotation `theta`; the rotation is the residual
//! degree of freedom and is chosen by minimizing the mean distance from the
//! transformed source landmarks to the target landmark polygon. The
//! translation aligns the centroids. A thin-plate spline then absorbs what
//! the affine leaves behind, fitted to the landmark residuals in normalized
//! image coordinates on a small control grid.

use std::f64::consts::PI;

use super::grid::{from_normalized, to_normalized};
use super::matching::PartCorrespondence;
use super::tps::{fit_tps_displacements, TpsParams};
use super::{AffineParams, Point, TransformParams};
use crate::error::{Error, Result};

/// Trace below this counts as a zero-area (pointlike) part.
const ZERO_TRACE_EPS: f64 = 1e-12;
/// `det / trace^2` below this marks a degenerate sliver whose inverse
/// moment square root would blow up.
const SLIVER_DET_REL: f64 = 1e-9;
/// An outline-distance residual only overrides another when it is below
/// `other * (1 - REL)` by at least a noise floor proportional to the
/// part's RMS radius. The margin is wide on purpose: for near-elliptical
/// or centrally symmetric outlines the residuals at rival angles agree up
/// to rasterization and chord noise, and both can sit so close to zero
/// that a relative test alone fires on nothing.
const RESIDUAL_DECISIVE_REL: f64 = 0.2;
const RESIDUAL_NOISE_REL_SIZE: f64 = 0.05;
/// Moment eigenvalue ratio below which a shape counts as isotropic and its
/// principal axis as meaningless.
const ANISOTROPY_MIN: f64 = 1.4;

/// Knobs for [`estimate_part_transform_with`].
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    /// Image dimensions pinning the normalized TPS frame.
    pub image_height: usize,
    pub image_width: usize,
    /// TPS control grid for the residual fit.
    pub tps_rows: usize,
    pub tps_cols: usize,
    /// Ridge strength of the residual fit.
    pub tps_lambda: f64,
    /// Number of rotation angles scanned over a full turn before refinement.
    pub rotation_scan_steps: usize,
}

impl EstimateOptions {
    pub fn new(image_height: usize, image_width: usize) -> Self {
        Self {
            image_height,
            image_width,
            tps_rows: 3,
            tps_cols: 3,
            tps_lambda: 1e-3,
            rotation_scan_steps: 720,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.image_height < 2 || self.image_width < 2 {
            return Err(Error::InvalidArgument(
                "estimation needs at least a 2x2 image frame".into(),
            ));
        }
        if self.tps_rows < 2 || self.tps_cols < 2 {
            return Err(Error::InvalidArgument(
                "TPS control grid needs at least 2 rows and 2 cols".into(),
            ));
        }
        if !(self.tps_lambda >= 0.0 && self.tps_lambda.is_finite()) {
            return Err(Error::InvalidArgument(
                "TPS lambda must be finite and non-negative".into(),
            ));
        }
        if self.rotation_scan_steps < 8 {
            return Err(Error::InvalidArgument(
                "rotation scan needs at least 8 steps".into(),
            ));
        }
        Ok(())
    }
}

/// Estimated transform for one part: affine in pixel coordinates, TPS
/// refinement in the normalized frame, plus diagnostics.
#[derive(Debug, Clone)]
pub struct PartTransformEstimate {
    pub affine: AffineParams,
    pub tps: TpsParams,
    /// Set when the statistics were too degenerate for moment alignment
    /// and a fallback (identity or pure translation) was used.
    pub degenerate: bool,
    /// Mean distance in pixels from mapped source landmarks to their
    /// target counterparts under the full affine+TPS map.
    pub mean_landmark_error: f64,
}

impl PartTransformEstimate {
    pub fn params(&self) -> TransformParams {
        TransformParams {
            affine: self.affine,
            tps: self.tps.clone(),
        }
    }

    /// Applies the full map to a pixel-frame point: affine, then the TPS
    /// refinement through the normalized frame.
    pub fn apply(&self, p: Point, image_height: usize, image_width: usize) -> Point {
        let a = self.affine.apply(p);
        let n = Point::new(
            to_normalized(a.x, image_width),
            to_normalized(a.y, image_height),
        );
        let q = self.tps.evaluate(n);
        Point::new(
            from_normalized(q.x, image_width),
            from_normalized(q.y, image_height),
        )
    }
}

type Mat2 = [[f64; 2]; 2];

fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn mat_inv(m: Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Principal square root of a symmetric positive-definite 2x2 matrix:
/// `(M + sqrt(det) I) / sqrt(trace + 2 sqrt(det))`.
fn sqrt_spd(m: Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let trace = m[0][0] + m[1][1];
    if det < 0.0 || trace <= 0.0 {
        return None;
    }
    let s = det.sqrt();
    let t = (trace + 2.0 * s).sqrt();
    if !(t > 0.0) {
        return None;
    }
    Some([
        [(m[0][0] + s) / t, m[0][1] / t],
        [m[1][0] / t, (m[1][1] + s) / t],
    ])
}

fn rotation(theta: f64) -> Mat2 {
    let (sin, cos) = theta.sin_cos();
    [[cos, -sin], [sin, cos]]
}

/// Principal-axis angle of a moment matrix, `0.5 atan2(2 mxy, mxx - myy)`.
fn principal_angle(m: Mat2) -> f64 {
    0.5 * (2.0 * m[0][1]).atan2(m[0][0] - m[1][1])
}

fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Wraps an angle difference between two axis orientations (each of period
/// a half turn) to the representative of smallest magnitude.
fn wrap_half_turn(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(PI);
    if a > PI / 2.0 {
        a -= PI;
    }
    a
}

/// Eigenvalue ratio (largest over smallest) of a symmetric moment matrix.
fn anisotropy(m: Mat2) -> f64 {
    let half_trace = 0.5 * (m[0][0] + m[1][1]);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (half_trace * half_trace - det).max(0.0).sqrt();
    let low = half_trace - disc;
    if low <= 0.0 {
        f64::INFINITY
    } else {
        (half_trace + disc) / low
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    if len2 <= 0.0 {
        return p.distance(&a);
    }
    let t = (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0);
    p.distance(&Point::new(a.x + t * vx, a.y + t * vy))
}

/// Mean distance from `points` to the closed polyline through `polygon`.
fn mean_polygon_distance(points: &[Point], polygon: &[Point]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    if polygon.len() == 1 {
        return points.iter().map(|p| p.distance(&polygon[0])).sum::<f64>() / points.len() as f64;
    }
    let total: f64 = points
        .iter()
        .map(|&p| {
            (0..polygon.len())
                .map(|i| {
                    point_segment_distance(p, polygon[i], polygon[(i + 1) % polygon.len()])
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / points.len() as f64
}

fn affine_for(linear: Mat2, source_centroid: Point, target_centroid: Point) -> AffineParams {
    let tx = target_centroid.x - (linear[0][0] * source_centroid.x + linear[0][1] * source_centroid.y);
    let ty = target_centroid.y - (linear[1][0] * source_centroid.x + linear[1][1] * source_centroid.y);
    AffineParams {
        a11: linear[0][0],
        a12: linear[0][1],
        a21: linear[1][0],
        a22: linear[1][1],
        tx,
        ty,
    }
}

fn golden_minimize(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

fn symmetrize(m: Mat2) -> Mat2 {
    let off = 0.5 * (m[0][1] + m[1][0]);
    [[m[0][0], off], [off, m[1][1]]]
}

/// [`estimate_part_transform`] with explicit options.
pub fn estimate_part_transform_with(
    c: &PartCorrespondence,
    options: &EstimateOptions,
) -> Result<PartTransformEstimate> {
    options.validate()?;
    let ms = symmetrize(c.source_moments);
    let mt = symmetrize(c.target_moments);
    let trace_s = ms[0][0] + ms[1][1];
    let trace_t = mt[0][0] + mt[1][1];

    let identity_estimate = |affine: AffineParams| {
        let mean = landmark_error(&affine, &TpsParams::identity(options.tps_rows, options.tps_cols), c, options);
        PartTransformEstimate {
            affine,
            tps: TpsParams::identity(options.tps_rows, options.tps_cols),
            degenerate: true,
            mean_landmark_error: mean,
        }
    };

    if c.landmark_pairs.is_empty() || trace_s < ZERO_TRACE_EPS || trace_t < ZERO_TRACE_EPS {
        return Ok(identity_estimate(AffineParams::identity()));
    }

    let det_s = ms[0][0] * ms[1][1] - ms[0][1] * ms[1][0];
    let det_t = mt[0][0] * mt[1][1] - mt[0][1] * mt[1][0];
    if det_s < SLIVER_DET_REL * trace_s * trace_s || det_t < SLIVER_DET_REL * trace_t * trace_t {
        let shift = AffineParams::translation(
            c.target_centroid.x - c.source_centroid.x,
            c.target_centroid.y - c.source_centroid.y,
        );
        return Ok(identity_estimate(shift));
    }

    let source_sqrt = sqrt_spd(ms).ok_or_else(|| {
        Error::DegenerateGeometry("source moments are not positive definite".into())
    })?;
    let source_inv_sqrt = mat_inv(source_sqrt).ok_or_else(|| {
        Error::DegenerateGeometry("source moment square root is singular".into())
    })?;
    let target_sqrt = sqrt_spd(mt).ok_or_else(|| {
        Error::DegenerateGeometry("target moments are not positive definite".into())
    })?;

    let sources: Vec<Point> = c.landmark_pairs.iter().map(|p| p.0).collect();
    let targets: Vec<Point> = c.landmark_pairs.iter().map(|p| p.1).collect();
    let residual_at = |theta: f64| {
        let linear = mat_mul(mat_mul(target_sqrt, rotation(theta)), source_inv_sqrt);
        let affine = affine_for(linear, c.source_centroid, c.target_centroid);
        let mapped: Vec<Point> = sources.iter().map(|&s| affine.apply(s)).collect();
        mean_polygon_distance(&mapped, &targets)
    };

    // Dense outline-distance scan plus a local refinement of its minimum.
    let steps = options.rotation_scan_steps;
    let step = 2.0 * PI / steps as f64;
    let mut scan_best = (f64::INFINITY, 0.0);
    for i in 0..steps {
        let theta = wrap_angle(-PI + (i as f64 + 0.5) * step);
        let r = residual_at(theta);
        if r < scan_best.0 {
            scan_best = (r, theta);
        }
    }
    let refined = wrap_angle(golden_minimize(
        residual_at,
        scan_best.1 - step,
        scan_best.1 + step,
        80,
    ));

    let noise_floor = RESIDUAL_NOISE_REL_SIZE * (0.5 * (trace_s + trace_t)).sqrt();
    let decisively_below = |r: f64, reference: f64| {
        r < reference * (1.0 - RESIDUAL_DECISIVE_REL) - noise_floor
    };
    let theta = if anisotropy(ms) >= ANISOTROPY_MIN && anisotropy(mt) >= ANISOTROPY_MIN {
        // Both shapes have well-defined principal axes, and under a rigid
        // or affine motion those axes transform with the shape, so the
        // axis-angle difference pins the rotation up to a half turn. The
        // outline distance is a much noisier signal here (a near-elliptical
        // outline maps onto itself at every angle under the moment-matched
        // family), so it only overrides the axis estimate when it is
        // decisively better: first the flipped twin, then the scan minimum.
        let axis = wrap_half_turn(principal_angle(mt) - principal_angle(ms));
        let twin = wrap_angle(axis + PI);
        let mut theta = if decisively_below(residual_at(twin), residual_at(axis)) {
            twin
        } else {
            axis
        };
        if decisively_below(residual_at(refined), residual_at(theta)) {
            theta = refined;
        }
        theta
    } else {
        // No reliable axes: fall back to the scan, with near-ties broken
        // toward the smaller rotation so featureless shapes stay put.
        let mut best = (residual_at(0.0), 0.0f64);
        for theta in [scan_best.1, refined] {
            let r = residual_at(theta);
            let tie = noise_floor + RESIDUAL_DECISIVE_REL * r.min(best.0);
            if r < best.0 - tie || (r <= best.0 + tie && theta.abs() < best.1.abs() - 1e-15) {
                best = (r, theta);
            }
        }
        best.1
    };
    let linear = mat_mul(mat_mul(target_sqrt, rotation(theta)), source_inv_sqrt);
    let affine = affine_for(linear, c.source_centroid, c.target_centroid);

    // TPS refinement on what the affine leaves behind, in the normalized
    // frame the warp grids evaluate in.
    let (h, w) = (options.image_height, options.image_width);
    let norm = |p: Point| Point::new(to_normalized(p.x, w), to_normalized(p.y, h));
    let positions: Vec<Point> = sources.iter().map(|&s| norm(affine.apply(s))).collect();
    let displacements: Vec<(f64, f64)> = positions
        .iter()
        .zip(&targets)
        .map(|(u, &t)| {
            let v = norm(t);
            (v.x - u.x, v.y - u.y)
        })
        .collect();
    let (tps, degenerate) = if positions.len() >= 3 {
        match fit_tps_displacements(
            options.tps_rows,
            options.tps_cols,
            &positions,
            &displacements,
            options.tps_lambda,
        ) {
            Ok(t) => (t, false),
            Err(_) => (TpsParams::identity(options.tps_rows, options.tps_cols), true),
        }
    } else {
        (TpsParams::identity(options.tps_rows, options.tps_cols), false)
    };

    let mean = landmark_error(&affine, &tps, c, options);
    Ok(PartTransformEstimate {
        affine,
        tps,
        degenerate,
        mean_landmark_error: mean,
    })
}

fn landmark_error(
    affine: &AffineParams,
    tps: &TpsParams,
    c: &PartCorrespondence,
    options: &EstimateOptions,
) -> f64 {
    if c.landmark_pairs.is_empty() {
        return 0.0;
    }
    let (h, w) = (options.image_height, options.image_width);
    let total: f64 = c
        .landmark_pairs
        .iter()
        .map(|&(s, t)| {
            let a = affine.apply(s);
            let n = Point::new(to_normalized(a.x, w), to_normalized(a.y, h));
            let q = tps.evaluate(n);
            let mapped = Point::new(from_normalized(q.x, w), from_normalized(q.y, h));
            mapped.distance(&t)
        })
        .sum();
    total / c.landmark_pairs.len() as f64
}

/// Estimates the per-part affine + TPS cascade from a correspondence.
///
/// The normalized TPS frame is inferred from the extent of the landmarks
/// and centroids; use [`estimate_part_transform_with`] to pin it to the
/// actual image dimensions (the pipeline always does).
pub fn estimate_part_transform(c: &PartCorrespondence) -> Result<PartTransformEstimate> {
    let mut max_x = 1.0f64;
    let mut max_y = 1.0f64;
    let mut track = |p: &Point| {
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    };
    track(&c.source_centroid);
    track(&c.target_centroid);
    for (s, t) in &c.landmark_pairs {
        track(s);
        track(t);
    }
    let options = EstimateOptions::new(max_y.ceil() as usize + 2, max_x.ceil() as usize + 2);
    estimate_part_transform_with(c, &options)
}
