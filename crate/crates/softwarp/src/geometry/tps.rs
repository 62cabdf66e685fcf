//! Thin-plate-spline maps: `f(p) = A p + sum_i w_i U(|p - s_i|^2)` with the
//! radial kernel `U(s) = s ln s` and an affine term.
//!
//! Control points live in the normalized `[-1, 1]^2` square. A fit solves
//! the classic bordered system `[[K + lambda I, P], [P^T, 0]]` per output
//! coordinate; the bottom rows pin the side conditions (kernel weights sum
//! to zero, also against x and y), which keep the non-affine part free of
//! linear growth.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{AffineParams, Point};
use crate::error::{Error, Result};

/// Minimum pairwise control distance; anything closer is reported as a
/// coincident-point singularity before the solver sees it.
const COINCIDENT_EPS: f64 = 1e-9;

/// TPS kernel on a squared radius, `U(s) = s ln s`, extended by continuity
/// with `U(0) = 0`.
#[inline]
pub(crate) fn kernel(r2: f64) -> f64 {
    if r2 > 0.0 {
        r2 * r2.ln()
    } else {
        0.0
    }
}

/// Thin-plate-spline map parameters.
///
/// `target_displacements` are the raw fit inputs (`target - source` at each
/// control point); the kernel weights and affine term are the solution of
/// the `regularization`-damped system for those inputs, so a params value
/// can be reconstructed from `(rows, cols, displacements, lambda)` alone
/// when the control points are the canonical grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsParams {
    grid_rows: usize,
    grid_cols: usize,
    source_points: Vec<Point>,
    target_displacements: Vec<(f64, f64)>,
    kernel_weights: Vec<(f64, f64)>,
    affine_part: [f64; 6],
    regularization: f64,
}

impl TpsParams {
    /// Uniform `rows x cols` control grid over `[-1, 1]^2`, row-major.
    pub fn control_grid(rows: usize, cols: usize) -> Vec<Point> {
        let coord = |i: usize, n: usize| {
            if n > 1 {
                -1.0 + 2.0 * i as f64 / (n - 1) as f64
            } else {
                0.0
            }
        };
        let mut pts = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                pts.push(Point::new(coord(c, cols), coord(r, rows)));
            }
        }
        pts
    }

    /// Identity map on a canonical control grid: zero weights, identity
    /// affine part.
    pub fn identity(rows: usize, cols: usize) -> Self {
        let source_points = Self::control_grid(rows, cols);
        let n = source_points.len();
        Self {
            grid_rows: rows,
            grid_cols: cols,
            source_points,
            target_displacements: vec![(0.0, 0.0); n],
            kernel_weights: vec![(0.0, 0.0); n],
            affine_part: AffineParams::identity().to_array(),
            regularization: 0.0,
        }
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn source_points(&self) -> &[Point] {
        &self.source_points
    }

    pub fn target_displacements(&self) -> &[(f64, f64)] {
        &self.target_displacements
    }

    pub fn kernel_weights(&self) -> &[(f64, f64)] {
        &self.kernel_weights
    }

    pub fn affine_part(&self) -> AffineParams {
        AffineParams::from_array(self.affine_part)
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// Whether the control points are the canonical `[-1,1]^2` grid implied
    /// by `grid_rows x grid_cols` (required for JSON serialization).
    pub fn is_canonical_grid(&self) -> bool {
        let grid = Self::control_grid(self.grid_rows, self.grid_cols);
        grid.len() == self.source_points.len()
            && grid
                .iter()
                .zip(&self.source_points)
                .all(|(a, b)| (a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12)
    }

    /// Evaluates the map at `p` (same frame as the control points).
    pub fn evaluate(&self, p: Point) -> Point {
        let a = &self.affine_part;
        let mut x = a[0] * p.x + a[1] * p.y + a[2];
        let mut y = a[3] * p.x + a[4] * p.y + a[5];
        for (s, w) in self.source_points.iter().zip(&self.kernel_weights) {
            let (dx, dy) = (p.x - s.x, p.y - s.y);
            let u = kernel(dx * dx + dy * dy);
            x += w.0 * u;
            y += w.1 * u;
        }
        Point::new(x, y)
    }

    /// Largest violation of the three side conditions over both coordinates.
    pub fn side_condition_residual(&self) -> f64 {
        let mut sums = [0.0f64; 6];
        for (s, w) in self.source_points.iter().zip(&self.kernel_weights) {
            sums[0] += w.0;
            sums[1] += w.0 * s.x;
            sums[2] += w.0 * s.y;
            sums[3] += w.1;
            sums[4] += w.1 * s.x;
            sums[5] += w.1 * s.y;
        }
        sums.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_sources(points: &[Point]) -> Result<()> {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if points[i].distance(&points[j]) < COINCIDENT_EPS {
                return Err(Error::SingularSystem(format!(
                    "control points {i} and {j} coincide"
                )));
            }
        }
    }
    let design = DMatrix::from_fn(points.len(), 3, |i, j| match j {
        0 => points[i].x,
        1 => points[i].y,
        _ => 1.0,
    });
    let sv = design.svd(false, false).singular_values;
    if sv.min() < 1e-10 * sv.max() {
        return Err(Error::DegenerateGeometry(
            "control points are collinear".into(),
        ));
    }
    Ok(())
}

/// Fits a TPS with control points at `source_points` mapping each to its
/// counterpart in `target_points`.
///
/// With `regularization = 0` the map interpolates every pair exactly;
/// positive values damp the kernel weights (smoothing). At least three
/// non-collinear, pairwise-distinct sources are required.
pub fn fit_tps(
    source_points: &[Point],
    target_points: &[Point],
    regularization: f64,
) -> Result<TpsParams> {
    if source_points.len() != target_points.len() {
        return Err(Error::InvalidArgument(format!(
            "source/target point counts differ: {} vs {}",
            source_points.len(),
            target_points.len()
        )));
    }
    if source_points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "TPS needs at least 3 control points, got {}",
            source_points.len()
        )));
    }
    if !(regularization >= 0.0 && regularization.is_finite()) {
        return Err(Error::InvalidArgument(
            "regularization must be finite and non-negative".into(),
        ));
    }
    check_sources(source_points)?;

    let n = source_points.len();
    let mut system = DMatrix::zeros(n + 3, n + 3);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j {
                regularization
            } else {
                let (dx, dy) = (
                    source_points[i].x - source_points[j].x,
                    source_points[i].y - source_points[j].y,
                );
                kernel(dx * dx + dy * dy)
            };
            system[(i, j)] = v;
        }
        system[(i, n)] = 1.0;
        system[(i, n + 1)] = source_points[i].x;
        system[(i, n + 2)] = source_points[i].y;
        system[(n, i)] = 1.0;
        system[(n + 1, i)] = source_points[i].x;
        system[(n + 2, i)] = source_points[i].y;
    }

    let mut rhs = DMatrix::zeros(n + 3, 2);
    for i in 0..n {
        rhs[(i, 0)] = target_points[i].x;
        rhs[(i, 1)] = target_points[i].y;
    }

    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("TPS system is singular".into()))?;

    let kernel_weights: Vec<(f64, f64)> =
        (0..n).map(|i| (solution[(i, 0)], solution[(i, 1)])).collect();
    let affine_part = [
        solution[(n + 1, 0)],
        solution[(n + 2, 0)],
        solution[(n, 0)],
        solution[(n + 1, 1)],
        solution[(n + 2, 1)],
        solution[(n, 1)],
    ];
    let target_displacements = source_points
        .iter()
        .zip(target_points)
        .map(|(s, t)| (t.x - s.x, t.y - s.y))
        .collect();

    Ok(TpsParams {
        grid_rows: n,
        grid_cols: 1,
        source_points: source_points.to_vec(),
        target_displacements,
        kernel_weights,
        affine_part,
        regularization,
    })
}

/// [`fit_tps`] on the canonical `rows x cols` control grid.
pub fn fit_tps_on_grid(
    rows: usize,
    cols: usize,
    target_points: &[Point],
    regularization: f64,
) -> Result<TpsParams> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(
            "control grid needs at least 2 rows and 2 cols".into(),
        ));
    }
    let sources = TpsParams::control_grid(rows, cols);
    let mut params = fit_tps(&sources, target_points, regularization)?;
    params.grid_rows = rows;
    params.grid_cols = cols;
    Ok(params)
}

/// Ridge least-squares fit of a displacement field on a canonical control
/// grid, from scattered `(position, displacement)` samples.
///
/// Used when there are more samples than control points (part landmarks
/// against a 3x3 grid). The side conditions are enforced exactly through
/// Lagrange multipliers; `lambda` damps the kernel weights. The returned
/// params describe the full map `p + field(p)` and carry the fitted field's
/// own values at the control points, so they serialize exactly.
pub fn fit_tps_displacements(
    rows: usize,
    cols: usize,
    sample_points: &[Point],
    sample_displacements: &[(f64, f64)],
    lambda: f64,
) -> Result<TpsParams> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(
            "control grid needs at least 2 rows and 2 cols".into(),
        ));
    }
    if sample_points.len() != sample_displacements.len() {
        return Err(Error::InvalidArgument(
            "sample point/displacement counts differ".into(),
        ));
    }
    if sample_points.len() < 3 {
        return Err(Error::InvalidArgument(
            "displacement fit needs at least 3 samples".into(),
        ));
    }
    let controls = TpsParams::control_grid(rows, cols);
    let n = controls.len();
    let k = sample_points.len();

    // Design matrix: field(q) = sum_i w_i U(|q - s_i|^2) + c + ax*qx + ay*qy.
    let design = DMatrix::from_fn(k, n + 3, |r, c| {
        if c < n {
            let (dx, dy) = (
                sample_points[r].x - controls[c].x,
                sample_points[r].y - controls[c].y,
            );
            kernel(dx * dx + dy * dy)
        } else if c == n {
            1.0
        } else if c == n + 1 {
            sample_points[r].x
        } else {
            sample_points[r].y
        }
    });

    // KKT system: ridge-damped normal equations bordered by the hard side
    // conditions on the kernel weights.
    let m = n + 3 + 3;
    let mut kkt = DMatrix::zeros(m, m);
    let normal = design.transpose() * &design;
    for i in 0..n + 3 {
        for j in 0..n + 3 {
            kkt[(i, j)] = normal[(i, j)];
        }
    }
    for i in 0..n {
        kkt[(i, i)] += lambda;
        kkt[(n + 3, i)] = 1.0;
        kkt[(n + 4, i)] = controls[i].x;
        kkt[(n + 5, i)] = controls[i].y;
        kkt[(i, n + 3)] = 1.0;
        kkt[(i, n + 4)] = controls[i].x;
        kkt[(i, n + 5)] = controls[i].y;
    }

    let mut rhs = DMatrix::zeros(m, 2);
    for c in 0..n + 3 {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for r in 0..k {
            sx += design[(r, c)] * sample_displacements[r].0;
            sy += design[(r, c)] * sample_displacements[r].1;
        }
        rhs[(c, 0)] = sx;
        rhs[(c, 1)] = sy;
    }

    let solution = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("displacement-fit KKT system is singular".into()))?;

    let kernel_weights: Vec<(f64, f64)> =
        (0..n).map(|i| (solution[(i, 0)], solution[(i, 1)])).collect();
    // Map affine = identity + displacement-field affine.
    let affine_part = [
        1.0 + solution[(n + 1, 0)],
        solution[(n + 2, 0)],
        solution[(n, 0)],
        solution[(n + 1, 1)],
        1.0 + solution[(n + 2, 1)],
        solution[(n, 1)],
    ];

    let mut params = TpsParams {
        grid_rows: rows,
        grid_cols: cols,
        source_points: controls.clone(),
        target_displacements: vec![(0.0, 0.0); n],
        kernel_weights,
        affine_part,
        // The field's values at the controls are stored below as exact
        // interpolation inputs, so reconstruction uses lambda = 0.
        regularization: 0.0,
    };
    params.target_displacements = controls
        .iter()
        .map(|&s| {
            let out = params.evaluate(s);
            (out.x - s.x, out.y - s.y)
        })
        .collect();
    Ok(params)
}

#[derive(Serialize, Deserialize)]
struct TpsWire {
    rows: usize,
    cols: usize,
    displacements: Vec<(f64, f64)>,
    lambda: f64,
}

impl Serialize for TpsParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.is_canonical_grid() {
            return Err(S::Error::custom(
                "only TPS params on the canonical control grid are serializable",
            ));
        }
        TpsWire {
            rows: self.grid_rows,
            cols: self.grid_cols,
            displacements: self.target_displacements.clone(),
            lambda: self.regularization,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TpsParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = TpsWire::deserialize(deserializer)?;
        if wire.displacements.len() != wire.rows * wire.cols {
            return Err(D::Error::custom(format!(
                "expected {} displacements for a {}x{} grid, got {}",
                wire.rows * wire.cols,
                wire.rows,
                wire.cols,
                wire.displacements.len()
            )));
        }
        // All-zero displacements have the identity as their exact unique
        // solution at any regularization; constructing it directly keeps
        // the identity bitwise stable across a round trip.
        if wire.displacements.iter().all(|&(dx, dy)| dx == 0.0 && dy == 0.0) {
            let mut params = TpsParams::identity(wire.rows, wire.cols);
            params.regularization = wire.lambda;
            return Ok(params);
        }
        let sources = TpsParams::control_grid(wire.rows, wire.cols);
        let targets: Vec<Point> = sources
            .iter()
            .zip(&wire.displacements)
            .map(|(s, d)| Point::new(s.x + d.0, s.y + d.1))
            .collect();
        let mut params =
            fit_tps(&sources, &targets, wire.lambda).map_err(D::Error::custom)?;
        params.grid_rows = wire.rows;
        params.grid_cols = wire.cols;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn probe_points(count: usize) -> Vec<Point> {
        // Deterministic pseudo-random probes in [-1, 1]^2.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        (0..count).map(|_| Point::new(next(), next())).collect()
    }

    #[test]
    fn identity_fit_gives_zero_weights_and_identity_affine() {
        let grid = TpsParams::control_grid(3, 3);
        let params = fit_tps(&grid, &grid, 0.0).unwrap();
        for w in params.kernel_weights() {
            assert_abs_diff_eq!(w.0, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(w.1, 0.0, epsilon = 1e-10);
        }
        assert!(
            params
                .affine_part()
                .max_coeff_distance(&AffineParams::identity())
                < 1e-10
        );
        for p in probe_points(20) {
            let q = params.evaluate(p);
            assert_abs_diff_eq!(q.x, p.x, epsilon = 1e-9);
            assert_abs_diff_eq!(q.y, p.y, epsilon = 1e-9);
        }
    }

    #[test]
    fn unregularized_fit_interpolates_controls() {
        for (rows, cols) in [(3, 3), (4, 4)] {
            let sources = TpsParams::control_grid(rows, cols);
            // Smooth but clearly non-affine targets.
            let targets: Vec<Point> = sources
                .iter()
                .map(|p| {
                    Point::new(
                        p.x + 0.15 * (1.7 * p.y).sin(),
                        p.y - 0.12 * (2.3 * p.x).cos(),
                    )
                })
                .collect();
            let params = fit_tps(&sources, &targets, 0.0).unwrap();
            let mut max_resid = 0.0f64;
            for (s, t) in sources.iter().zip(&targets) {
                let q = params.evaluate(*s);
                max_resid = max_resid.max((q.x - t.x).abs()).max((q.y - t.y).abs());
            }
            assert!(max_resid <= 1e-9, "{rows}x{cols} residual {max_resid:.3e}");
        }
    }

    #[test]
    fn affine_targets_reproduce_the_affine_everywhere() {
        let affine = AffineParams {
            a11: 1.2,
            a12: 0.3,
            a21: -0.1,
            a22: 0.85,
            tx: 0.4,
            ty: -0.2,
        };
        let sources = TpsParams::control_grid(3, 3);
        let targets: Vec<Point> = sources.iter().map(|&p| affine.apply(p)).collect();
        let params = fit_tps(&sources, &targets, 0.0).unwrap();
        for p in probe_points(100) {
            let got = params.evaluate(p);
            let want = affine.apply(p);
            assert_abs_diff_eq!(got.x, want.x, epsilon = 1e-8);
            assert_abs_diff_eq!(got.y, want.y, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_displaced_control_is_interpolated() {
        let sources = TpsParams::control_grid(3, 3);
        let mut targets = sources.clone();
        targets[4] = Point::new(sources[4].x + 0.1, sources[4].y);
        let params = fit_tps(&sources, &targets, 0.0).unwrap();
        let q = params.evaluate(sources[4]);
        assert_abs_diff_eq!(q.x, targets[4].x, epsilon = 1e-9);
        assert_abs_diff_eq!(q.y, targets[4].y, epsilon = 1e-9);
    }

    #[test]
    fn side_conditions_hold() {
        let sources = TpsParams::control_grid(4, 3);
        let targets: Vec<Point> = sources
            .iter()
            .map(|p| Point::new(p.x * 1.1 + 0.07 * (3.0 * p.y).sin(), p.y - 0.05 * p.x * p.x))
            .collect();
        for lambda in [0.0, 1e-3, 0.1] {
            let params = fit_tps(&sources, &targets, lambda).unwrap();
            assert!(
                params.side_condition_residual() <= 1e-9,
                "lambda {lambda}: residual {:.3e}",
                params.side_condition_residual()
            );
        }
    }

    #[test]
    fn coincident_controls_reported() {
        let pts = vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ];
        assert!(matches!(
            fit_tps(&pts, &pts, 0.0),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn collinear_controls_reported() {
        let pts: Vec<Point> = (0..4).map(|i| Point::new(i as f64, i as f64 * 0.5)).collect();
        assert!(matches!(
            fit_tps(&pts, &pts, 0.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn grid_fit_serializes_and_round_trips() {
        let sources = TpsParams::control_grid(3, 3);
        let targets: Vec<Point> = sources
            .iter()
            .map(|p| Point::new(p.x + 0.05 * p.y * p.y, p.y - 0.04 * (2.0 * p.x).sin()))
            .collect();
        for lambda in [0.0, 1e-2] {
            let params = fit_tps_on_grid(3, 3, &targets, lambda).unwrap();
            let json = serde_json::to_string(&params).unwrap();
            let back: TpsParams = serde_json::from_str(&json).unwrap();
            for p in probe_points(25) {
                let a = params.evaluate(p);
                let b = back.evaluate(p);
                assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-12);
                assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-12);
            }
        }
        // Non-grid fits refuse to serialize.
        let scattered = vec![
            Point::new(0.1, 0.2),
            Point::new(-0.5, 0.4),
            Point::new(0.3, -0.6),
            Point::new(-0.2, -0.1),
        ];
        let params = fit_tps(&scattered, &scattered, 0.0).unwrap();
        assert!(serde_json::to_string(&params).is_err());
    }

    #[test]
    fn displacement_fit_of_zero_field_is_identity() {
        let samples = probe_points(16);
        let zeros = vec![(0.0, 0.0); samples.len()];
        let params = fit_tps_displacements(3, 3, &samples, &zeros, 1e-3).unwrap();
        for p in probe_points(20) {
            let q = params.evaluate(p);
            assert_abs_diff_eq!(q.x, p.x, epsilon = 1e-9);
            assert_abs_diff_eq!(q.y, p.y, epsilon = 1e-9);
        }
        for d in params.target_displacements() {
            assert!(d.0.abs() < 1e-9 && d.1.abs() < 1e-9);
        }
    }

    #[test]
    fn displacement_fit_tracks_a_smooth_field() {
        let samples = probe_points(40);
        let field = |p: Point| (0.08 * (1.3 * p.y).sin(), -0.06 * (1.1 * p.x).cos());
        let disps: Vec<(f64, f64)> = samples.iter().map(|&p| field(p)).collect();
        let params = fit_tps_displacements(4, 4, &samples, &disps, 1e-6).unwrap();
        let mut max_err = 0.0f64;
        for (&p, d) in samples.iter().zip(&disps) {
            let q = params.evaluate(p);
            max_err = max_err
                .max((q.x - (p.x + d.0)).abs())
                .max((q.y - (p.y + d.1)).abs());
        }
        assert!(max_err < 5e-3, "max sample error {max_err:.3e}");
        assert!(params.side_condition_residual() <= 1e-9);
        // Grid-backed, so it serializes and reconstructs to the same map.
        let json = serde_json::to_string(&params).unwrap();
        let back: TpsParams = serde_json::from_str(&json).unwrap();
        for p in probe_points(25) {
            let a = params.evaluate(p);
            let b = back.evaluate(p);
            assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-9);
            assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-9);
        }
    }
}
