//! Dense backward warp grids: per-pixel continuous source coordinates.
//!
//! A grid realizes a transform as a lookup table: `coords[y][x]` says where
//! in the source the output pixel `(x, y)` reads from. Grids compose by
//! interpolating one coordinate field at the positions stored in another,
//! which chains lookups without flattening them through an image.

use super::tps::TpsParams;
use super::{AffineParams, Point};
use crate::error::{Error, Result};

/// `[0, size-1]` pixel coordinate to `[-1, 1]` (single-pixel axes map to 0).
pub(crate) fn to_normalized(value: f64, size: usize) -> f64 {
    if size > 1 {
        2.0 * value / (size - 1) as f64 - 1.0
    } else {
        0.0
    }
}

/// Inverse of [`to_normalized`].
pub(crate) fn from_normalized(value: f64, size: usize) -> f64 {
    if size > 1 {
        (value + 1.0) * (size - 1) as f64 / 2.0
    } else {
        0.0
    }
}

/// The pixel-to-normalized map of an `height x width` image as an affine.
#[cfg(test)]
pub(crate) fn normalization_affine(height: usize, width: usize) -> AffineParams {
    let scale = |n: usize| if n > 1 { 2.0 / (n - 1) as f64 } else { 1.0 };
    let offset = |n: usize| if n > 1 { -1.0 } else { 0.0 };
    AffineParams {
        a11: scale(width),
        a12: 0.0,
        tx: offset(width),
        a21: 0.0,
        a22: scale(height),
        ty: offset(height),
    }
}

/// H x W field of continuous `(source_x, source_y)` pixel coordinates.
///
/// Coordinates may leave the image bounds; the sampler's border rule decides
/// what out-of-bounds reads produce.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGrid {
    height: usize,
    width: usize,
    coords: Vec<(f64, f64)>,
}

impl WarpGrid {
    pub fn new(height: usize, width: usize, coords: Vec<(f64, f64)>) -> Result<Self> {
        if coords.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "grid {height}x{width} needs {} coords, got {}",
                height * width,
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.0.is_finite() || !c.1.is_finite()) {
            return Err(Error::NonFinite("warp grid coordinates".into()));
        }
        Ok(Self {
            height,
            width,
            coords,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut coords = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                coords.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            coords,
        }
    }

    /// The identity lattice: `coords[y][x] = (x, y)`.
    pub fn identity(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |y, x| (x as f64, y as f64))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        self.coords[y * self.width + x]
    }

    /// Largest per-coordinate absolute difference against another grid of
    /// the same shape.
    pub fn max_coord_distance(&self, other: &Self) -> f64 {
        assert_eq!(
            (self.height, self.width),
            (other.height, other.width),
            "grid shapes differ"
        );
        self.coords
            .iter()
            .zip(&other.coords)
            .fold(0.0f64, |m, (a, b)| {
                m.max((a.0 - b.0).abs()).max((a.1 - b.1).abs())
            })
    }

    /// Interpolates the coordinate field at a continuous position.
    ///
    /// Inside the lattice this is plain bilinear interpolation; outside, the
    /// nearest edge cell is extended linearly. Exact lattice hits return the
    /// stored coordinate unchanged, and affine fields are reproduced without
    /// interpolation error (their bilinear cross term vanishes).
    pub fn sample_field(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1, fx) = interp_cell(x, self.width);
        let (y0, y1, fy) = interp_cell(y, self.height);
        let v00 = self.at(y0, x0);
        let v10 = self.at(y0, x1);
        let v01 = self.at(y1, x0);
        let v11 = self.at(y1, x1);
        let blend = |v00: f64, v10: f64, v01: f64, v11: f64| {
            v00 + fx * (v10 - v00) + fy * (v01 - v00) + fx * fy * (v11 - v10 - v01 + v00)
        };
        (
            blend(v00.0, v10.0, v01.0, v11.0),
            blend(v00.1, v10.1, v01.1, v11.1),
        )
    }
}

/// Picks the interpolation cell `(i0, i1)` and fraction for coordinate `t`
/// on an axis of `n` lattice points. In-bounds integer `t` snaps to its
/// lattice point with fraction 0; everything else uses the nearest interior
/// cell, with fractions outside `[0, 1]` extrapolating.
fn interp_cell(t: f64, n: usize) -> (usize, usize, f64) {
    if n <= 1 {
        return (0, 0, 0.0);
    }
    let i = t.floor();
    if t == i && i >= 0.0 && i <= (n - 1) as f64 {
        let k = i as usize;
        return (k, k, 0.0);
    }
    let i0 = i.clamp(0.0, (n - 2) as f64);
    (i0 as usize, i0 as usize + 1, t - i0)
}

/// Backward grid applying `p` directly in pixel coordinates:
/// `coords[y][x] = p(x, y)`.
pub fn affine_grid(p: &AffineParams, height: usize, width: usize) -> WarpGrid {
    WarpGrid::from_fn(height, width, |y, x| {
        let q = p.apply(Point::new(x as f64, y as f64));
        (q.x, q.y)
    })
}

/// Backward grid evaluating `p` in normalized `[-1, 1]^2` coordinates and
/// converting the result back to pixels.
pub fn tps_grid(p: &TpsParams, height: usize, width: usize) -> WarpGrid {
    WarpGrid::from_fn(height, width, |y, x| {
        let q = p.evaluate(Point::new(
            to_normalized(x as f64, width),
            to_normalized(y as f64, height),
        ));
        (
            from_normalized(q.x, width),
            from_normalized(q.y, height),
        )
    })
}

/// Chains two backward grids: the result reads `first`'s coordinate field at
/// `second`'s coordinates, so sampling through it applies the transform of
/// `first` and then the transform of `second` to the image.
pub fn compose_grids(first: &WarpGrid, second: &WarpGrid) -> Result<WarpGrid> {
    if (first.height, first.width) != (second.height, second.width) {
        return Err(Error::ShapeMismatch(format!(
            "cannot compose {}x{} grid with {}x{} grid",
            first.height, first.width, second.height, second.width
        )));
    }
    Ok(WarpGrid::from_fn(second.height, second.width, |y, x| {
        let (sx, sy) = second.at(y, x);
        first.sample_field(sx, sy)
    }))
}

#[cfg(test)]
mod tests {
    use super::super::tps::{fit_tps_on_grid, TpsParams};
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_affine_gives_identity_lattice_bitwise() {
        let grid = affine_grid(&AffineParams::identity(), 4, 5);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(grid.at(y, x), (x as f64, y as f64));
            }
        }
        assert_eq!(grid, WarpGrid::identity(4, 5));
    }

    #[test]
    fn translation_grid_shifts_coordinates() {
        let p = AffineParams::translation(2.0, 0.0);
        let grid = affine_grid(&p, 3, 4);
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(grid.at(y, x), (x as f64 + 2.0, y as f64));
            }
        }
    }

    #[test]
    fn quarter_turn_about_center_maps_corner_to_corner() {
        let p = AffineParams::rotation_about(FRAC_PI_2, Point::new(2.0, 2.0));
        let grid = affine_grid(&p, 5, 5);
        let (x, y) = grid.at(0, 0);
        assert_abs_diff_eq!(x, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_tps_gives_identity_grid() {
        let grid = tps_grid(&TpsParams::identity(3, 3), 7, 9);
        assert!(grid.max_coord_distance(&WarpGrid::identity(7, 9)) <= 1e-9);
    }

    #[test]
    fn tps_grid_hits_fitted_targets_at_control_pixels() {
        // 33x33 puts the 3x3 control grid exactly on pixels {0, 16, 32}.
        let sources = TpsParams::control_grid(3, 3);
        let targets: Vec<Point> = sources
            .iter()
            .map(|p| Point::new(p.x + 0.06 * (2.0 * p.y).sin(), p.y - 0.05 * p.x * p.x))
            .collect();
        let params = fit_tps_on_grid(3, 3, &targets, 0.0).unwrap();
        let grid = tps_grid(&params, 33, 33);
        for (s, t) in sources.iter().zip(&targets) {
            let px = from_normalized(s.x, 33).round() as usize;
            let py = from_normalized(s.y, 33).round() as usize;
            let got = grid.at(py, px);
            assert_abs_diff_eq!(got.0, from_normalized(t.x, 33), epsilon = 1e-9);
            assert_abs_diff_eq!(got.1, from_normalized(t.y, 33), epsilon = 1e-9);
        }
    }

    #[test]
    fn tps_of_affine_matches_affine_grid_everywhere() {
        let norm_affine = AffineParams {
            a11: 1.1,
            a12: 0.2,
            a21: -0.15,
            a22: 0.9,
            tx: 0.05,
            ty: -0.1,
        };
        let sources = TpsParams::control_grid(3, 3);
        let targets: Vec<Point> = sources.iter().map(|&p| norm_affine.apply(p)).collect();
        let params = fit_tps_on_grid(3, 3, &targets, 0.0).unwrap();
        let (h, w) = (21, 17);
        let tps = tps_grid(&params, h, w);
        let n = normalization_affine(h, w);
        let pixel_affine = n.inverse().unwrap().compose(&norm_affine).compose(&n);
        let affine = affine_grid(&pixel_affine, h, w);
        assert!(
            tps.max_coord_distance(&affine) <= 1e-6,
            "max deviation {:.3e}",
            tps.max_coord_distance(&affine)
        );
    }

    #[test]
    fn compose_with_identity_is_exact_both_ways() {
        let g = WarpGrid::from_fn(6, 7, |y, x| {
            (
                x as f64 * 1.03 + 0.31 * (y as f64 * 0.7).sin() + 0.4,
                y as f64 * 0.97 + 0.27 * (x as f64 * 0.9).cos(),
            )
        });
        let id = WarpGrid::identity(6, 7);
        assert_eq!(compose_grids(&id, &g).unwrap(), g);
        assert_eq!(compose_grids(&g, &id).unwrap(), g);
    }

    #[test]
    fn translations_compose_by_addition() {
        let a = affine_grid(&AffineParams::translation(1.0, 0.0), 5, 5);
        let b = affine_grid(&AffineParams::translation(0.0, 1.0), 5, 5);
        let ab = compose_grids(&a, &b).unwrap();
        let want = affine_grid(&AffineParams::translation(1.0, 1.0), 5, 5);
        assert!(ab.max_coord_distance(&want) <= 1e-12);
    }

    #[test]
    fn affine_grids_compose_exactly() {
        let a = AffineParams {
            a11: 0.9,
            a12: 0.1,
            a21: -0.2,
            a22: 1.1,
            tx: 1.5,
            ty: -0.7,
        };
        let b = AffineParams {
            a11: 1.05,
            a12: -0.08,
            a21: 0.12,
            a22: 0.95,
            tx: -0.6,
            ty: 2.0,
        };
        let (h, w) = (9, 11);
        let composed = compose_grids(&affine_grid(&a, h, w), &affine_grid(&b, h, w)).unwrap();
        let direct = affine_grid(&a.compose(&b), h, w);
        assert!(
            composed.max_coord_distance(&direct) <= 1e-12,
            "max deviation {:.3e}",
            composed.max_coord_distance(&direct)
        );
    }

    #[test]
    fn composition_is_associative_on_smooth_grids() {
        let (h, w) = (12, 10);
        let a = affine_grid(
            &AffineParams {
                a11: 1.02,
                a12: 0.05,
                a21: -0.03,
                a22: 0.98,
                tx: 0.4,
                ty: -0.3,
            },
            h,
            w,
        );
        let b = WarpGrid::from_fn(h, w, |y, x| {
            (
                x as f64 + 0.3 * ((y as f64 + 1.0) * 0.35).sin(),
                y as f64 + 0.25 * ((x as f64 + 2.0) * 0.3).cos(),
            )
        });
        let c = WarpGrid::from_fn(h, w, |y, x| {
            (
                x as f64 * 0.99 + 0.2 * (y as f64 * 0.4).cos(),
                y as f64 * 1.01 + 0.15 * (x as f64 * 0.5).sin(),
            )
        });
        let left = compose_grids(&compose_grids(&a, &b).unwrap(), &c).unwrap();
        let right = compose_grids(&a, &compose_grids(&b, &c).unwrap()).unwrap();
        assert!(
            left.max_coord_distance(&right) <= 1e-9,
            "max deviation {:.3e}",
            left.max_coord_distance(&right)
        );
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = WarpGrid::identity(3, 3);
        let b = WarpGrid::identity(3, 4);
        assert!(matches!(
            compose_grids(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn grid_construction_validates() {
        assert!(WarpGrid::new(2, 2, vec![(0.0, 0.0); 3]).is_err());
        assert!(WarpGrid::new(1, 2, vec![(f64::NAN, 0.0), (0.0, 0.0)]).is_err());
        assert!(WarpGrid::new(1, 2, vec![(0.0, 0.0), (1.0, 0.0)]).is_ok());
    }
}
