//! 6-parameter planar affine transforms and their least-squares estimation.

use nalgebra::{DMatrix, DVector};
use serde::{de, ser::SerializeSeq, Deserialize, Deserializer, Serialize, Serializer};

use super::Point;
use crate::error::{Error, Result};

/// Relative singular-value cutoff below which a source configuration is
/// treated as rank deficient (collinear or coincident points).
const RANK_EPS: f64 = 1e-10;

/// Affine map `p -> linear * p + translation`.
///
/// Serializes as the 6-element JSON array `[a11, a12, tx, a21, a22, ty]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            a11: 1.0,
            a12: 0.0,
            a21: 0.0,
            a22: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            tx,
            ty,
            ..Self::identity()
        }
    }

    /// Counter-clockwise rotation (in the `x` right / `y` down frame) by
    /// `angle` radians about `center`.
    pub fn rotation_about(angle: f64, center: Point) -> Self {
        let (s, c) = angle.sin_cos();
        let tx = center.x - c * center.x + s * center.y;
        let ty = center.y - s * center.x - c * center.y;
        Self {
            a11: c,
            a12: -s,
            a21: s,
            a22: c,
            tx,
            ty,
        }
    }

    pub fn from_parts(linear: [[f64; 2]; 2], translation: (f64, f64)) -> Self {
        Self {
            a11: linear[0][0],
            a12: linear[0][1],
            a21: linear[1][0],
            a22: linear[1][1],
            tx: translation.0,
            ty: translation.1,
        }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        Point {
            x: self.a11 * p.x + self.a12 * p.y + self.tx,
            y: self.a21 * p.x + self.a22 * p.y + self.ty,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::SingularSystem(format!(
                "affine determinant {det:.3e} too small to invert"
            )));
        }
        let (b11, b12, b21, b22) = (
            self.a22 / det,
            -self.a12 / det,
            -self.a21 / det,
            self.a11 / det,
        );
        Ok(Self {
            a11: b11,
            a12: b12,
            a21: b21,
            a22: b22,
            tx: -(b11 * self.tx + b12 * self.ty),
            ty: -(b21 * self.tx + b22 * self.ty),
        })
    }

    /// `self . inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &AffineParams) -> Self {
        Self {
            a11: self.a11 * inner.a11 + self.a12 * inner.a21,
            a12: self.a11 * inner.a12 + self.a12 * inner.a22,
            a21: self.a21 * inner.a11 + self.a22 * inner.a21,
            a22: self.a21 * inner.a12 + self.a22 * inner.a22,
            tx: self.a11 * inner.tx + self.a12 * inner.ty + self.tx,
            ty: self.a21 * inner.tx + self.a22 * inner.ty + self.ty,
        }
    }

    /// Rotation angle (radians) of the polar decomposition of the linear
    /// part; the natural reading of "how much this transform rotates".
    pub fn rotation_angle(&self) -> f64 {
        (self.a21 - self.a12).atan2(self.a11 + self.a22)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a11, self.a12, self.tx, self.a21, self.a22, self.ty]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            a11: v[0],
            a12: v[1],
            tx: v[2],
            a21: v[3],
            a22: v[4],
            ty: v[5],
        }
    }

    /// Elementwise max abs difference, in the `to_array` layout.
    pub fn max_coeff_distance(&self, other: &AffineParams) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Serialize for AffineParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let arr = self.to_array();
        let mut seq = serializer.serialize_seq(Some(6))?;
        for v in arr {
            seq.serialize_element(&v)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for AffineParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(deserializer)?;
        let arr: [f64; 6] = v
            .try_into()
            .map_err(|v: Vec<f64>| de::Error::custom(format!("expected 6 coefficients, got {}", v.len())))?;
        Ok(Self::from_array(arr))
    }
}

/// Least-squares affine fit from point correspondences.
///
/// Finds the minimizer of `sum ||A s_i + t - g_i||^2` over all six
/// coefficients; exact (up to rounding) whenever the pairs are consistent
/// with a single affine. Requires at least three pairs with non-collinear
/// sources; rank-deficient configurations are reported as
/// [`Error::DegenerateGeometry`].
pub fn estimate_affine(pairs: &[(Point, Point)]) -> Result<AffineParams> {
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "affine estimation needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len();
    // The x and y target rows decouple into two n x 3 systems sharing the
    // same design matrix [sx sy 1].
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => pairs[i].0.x,
        1 => pairs[i].0.y,
        _ => 1.0,
    });
    let bx = DVector::from_fn(n, |i, _| pairs[i].1.x);
    let by = DVector::from_fn(n, |i, _| pairs[i].1.y);

    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin < RANK_EPS * smax {
        return Err(Error::DegenerateGeometry(
            "source points are collinear or coincident".into(),
        ));
    }
    let cx = svd
        .solve(&bx, 0.0)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    let cy = svd
        .solve(&by, 0.0)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;

    Ok(AffineParams {
        a11: cx[0],
        a12: cx[1],
        tx: cx[2],
        a21: cy[0],
        a22: cy[1],
        ty: cy[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Normal-equations solve of the same problem, kept deliberately
    /// independent of the SVD path.
    fn normal_equations_oracle(pairs: &[(Point, Point)]) -> AffineParams {
        let mut ata = [[0.0f64; 3]; 3];
        let mut atx = [0.0f64; 3];
        let mut aty = [0.0f64; 3];
        for (s, g) in pairs {
            let row = [s.x, s.y, 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atx[i] += row[i] * g.x;
                aty[i] += row[i] * g.y;
            }
        }
        let solve3 = |m: [[f64; 3]; 3], b: [f64; 3]| -> [f64; 3] {
            // Gaussian elimination with partial pivoting.
            let mut a = [[0.0f64; 4]; 3];
            for i in 0..3 {
                a[i][..3].copy_from_slice(&m[i]);
                a[i][3] = b[i];
            }
            for col in 0..3 {
                let piv = (col..3).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
                a.swap(col, piv);
                for r in col + 1..3 {
                    let f = a[r][col] / a[col][col];
                    for c in col..4 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
            let mut x = [0.0f64; 3];
            for i in (0..3).rev() {
                let mut v = a[i][3];
                for j in i + 1..3 {
                    v -= a[i][j] * x[j];
                }
                x[i] = v / a[i][i];
            }
            x
        };
        let cx = solve3(ata, atx);
        let cy = solve3(ata, aty);
        AffineParams {
            a11: cx[0],
            a12: cx[1],
            tx: cx[2],
            a21: cy[0],
            a22: cy[1],
            ty: cy[2],
        }
    }

    #[test]
    fn pure_translation_from_three_points() {
        let pairs = vec![
            (Point::new(0.0, 0.0), Point::new(1.0, 2.0)),
            (Point::new(1.0, 0.0), Point::new(2.0, 2.0)),
            (Point::new(0.0, 1.0), Point::new(1.0, 3.0)),
        ];
        let a = estimate_affine(&pairs).unwrap();
        assert_abs_diff_eq!(a.a11, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.a12, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.a21, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.a22, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.tx, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.ty, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_when_targets_equal_sources() {
        let pairs: Vec<_> = [(0.0, 0.0), (3.0, 1.0), (-2.0, 4.0), (1.5, -0.5)]
            .iter()
            .map(|&(x, y)| (Point::new(x, y), Point::new(x, y)))
            .collect();
        let a = estimate_affine(&pairs).unwrap();
        assert!(a.max_coeff_distance(&AffineParams::identity()) < 1e-12);
    }

    #[test]
    fn recovers_random_affine_and_matches_normal_equations() {
        // Fixed pseudo-random source cloud and ground-truth affine.
        let truth = AffineParams {
            a11: 1.3,
            a12: -0.4,
            a21: 0.25,
            a22: 0.9,
            tx: -2.0,
            ty: 5.5,
        };
        let sources = [
            (0.0, 0.0),
            (4.0, 1.0),
            (1.0, 3.0),
            (-2.0, 2.5),
            (3.5, -1.5),
            (-1.0, -2.0),
        ];
        let pairs: Vec<_> = sources
            .iter()
            .map(|&(x, y)| {
                let s = Point::new(x, y);
                (s, truth.apply(s))
            })
            .collect();
        let est = estimate_affine(&pairs).unwrap();
        assert!(est.max_coeff_distance(&truth) < 1e-9, "est {est:?}");

        let oracle = normal_equations_oracle(&pairs);
        assert!(est.max_coeff_distance(&oracle) < 1e-9);
    }

    #[test]
    fn collinear_sources_rejected() {
        let pairs: Vec<_> = (0..5)
            .map(|i| {
                let p = Point::new(i as f64, 2.0 * i as f64);
                (p, Point::new(p.x + 1.0, p.y))
            })
            .collect();
        match estimate_affine(&pairs) {
            Err(Error::DegenerateGeometry(_)) => {}
            other => panic!("expected degeneracy error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_sources_rejected() {
        let p = Point::new(1.0, 1.0);
        let pairs = vec![(p, p), (p, p), (p, p)];
        assert!(matches!(
            estimate_affine(&pairs),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn inverse_and_compose_round_trip() {
        let a = AffineParams {
            a11: 0.8,
            a12: 0.3,
            a21: -0.2,
            a22: 1.1,
            tx: 4.0,
            ty: -1.0,
        };
        let inv = a.inverse().unwrap();
        let id = a.compose(&inv);
        assert!(id.max_coeff_distance(&AffineParams::identity()) < 1e-12);
        let p = Point::new(2.5, -3.0);
        let q = inv.apply(a.apply(p));
        assert_abs_diff_eq!(q.x, p.x, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, p.y, epsilon = 1e-12);
    }

    #[test]
    fn rotation_about_center_maps_center_to_itself() {
        let c = Point::new(8.0, 6.0);
        let r = AffineParams::rotation_about(std::f64::consts::FRAC_PI_2, c);
        let q = r.apply(c);
        assert_abs_diff_eq!(q.x, c.x, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, c.y, epsilon = 1e-12);
        assert_abs_diff_eq!(r.rotation_angle(), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn json_layout_is_row_major_with_translations() {
        let a = AffineParams {
            a11: 1.0,
            a12: 2.0,
            a21: 4.0,
            a22: 5.0,
            tx: 3.0,
            ty: 6.0,
        };
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "[1.0,2.0,3.0,4.0,5.0,6.0]");
        let back: AffineParams = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }
}
