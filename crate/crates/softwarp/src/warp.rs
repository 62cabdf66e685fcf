//! Bilinear feature sampling and the soft-gated warping block
//! `output = phi + gate (elementwise) warp(residual)`.
//!
//! The sampler reads features at the continuous coordinates of a
//! [`WarpGrid`]; its analytic gradients with respect to both the features
//! and the grid are exposed for verification. The gate scales the warped
//! residual per element before it is added back onto the base features, so
//! a zero gate passes the base through untouched and a unit gate adds the
//! full warped residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::WarpGrid;
use crate::tensor::ImageTensor;

/// How the sampler treats coordinates outside the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BorderRule {
    /// Out-of-bounds reads contribute zero.
    #[default]
    Zeros,
    /// Coordinates are clamped to the nearest edge pixel.
    Clamp,
}

/// Per-pixel gate values in `[0, 1]`, broadcast over feature channels when
/// single-channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl GateMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("gate needs at least one channel".into()));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "gate {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "gate value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    /// Like [`GateMap::new`] but clamps finite out-of-range values into
    /// `[0, 1]` instead of rejecting them.
    pub fn new_clamped(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("gate values".into()));
        }
        let clamped = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(height, width, channels, clamped)
    }

    /// Single-channel gate with the same value everywhere.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, 1, vec![value; height * width])
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Gate value for a feature channel; single-channel gates broadcast.
    #[inline]
    pub fn at(&self, y: usize, x: usize, channel: usize) -> f64 {
        let c = if self.channels == 1 { 0 } else { channel };
        self.values[(y * self.width + x) * self.channels + c]
    }
}

/// One bilinear footprint entry: the weight a source pixel contributes to
/// an output sample (shared across channels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputGradEntry {
    pub source_y: usize,
    pub source_x: usize,
    pub weight: f64,
}

/// Analytic sampler derivatives: per output pixel, the source-pixel
/// footprint (at most four entries) and the per-channel gradient with
/// respect to the grid coordinates.
#[derive(Debug, Clone)]
pub struct SamplerGradients {
    width: usize,
    channels: usize,
    input_weights: Vec<Vec<InputGradEntry>>,
    grid_gradients: Vec<(f64, f64)>,
}

impl SamplerGradients {
    /// Footprint of output pixel `(y, x)` over source pixels.
    pub fn input_weights(&self, y: usize, x: usize) -> &[InputGradEntry] {
        &self.input_weights[y * self.width + x]
    }

    /// `(d output / d grid_x, d output / d grid_y)` for one output sample.
    pub fn grid_gradient(&self, y: usize, x: usize, channel: usize) -> (f64, f64) {
        self.grid_gradients[(y * self.width + x) * self.channels + channel]
    }
}

/// The four corners of the interpolation cell around `(gx, gy)` with their
/// bilinear weights; `(y, x)` may be out of bounds (as signed indices).
struct Cell {
    corners: [(i64, i64, f64); 4],
    fx: f64,
    fy: f64,
}

fn cell_at(gx: f64, gy: f64) -> Cell {
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    Cell {
        corners: [
            (y0, x0, (1.0 - fx) * (1.0 - fy)),
            (y0, x0 + 1, fx * (1.0 - fy)),
            (y0 + 1, x0, (1.0 - fx) * fy),
            (y0 + 1, x0 + 1, fx * fy),
        ],
        fx,
        fy,
    }
}

/// Resolves a possibly out-of-bounds corner to a source pixel, or `None`
/// when the border rule zeroes it out.
fn resolve(y: i64, x: i64, height: usize, width: usize, border: BorderRule) -> Option<(usize, usize)> {
    match border {
        BorderRule::Zeros => {
            if y < 0 || x < 0 || y >= height as i64 || x >= width as i64 {
                None
            } else {
                Some((y as usize, x as usize))
            }
        }
        BorderRule::Clamp => {
            if height == 0 || width == 0 {
                return None;
            }
            Some((
                y.clamp(0, height as i64 - 1) as usize,
                x.clamp(0, width as i64 - 1) as usize,
            ))
        }
    }
}

/// Warps `features` by reading them at each grid coordinate with bilinear
/// interpolation; the grid dimensions define the output size.
pub fn bilinear_sample(features: &ImageTensor, grid: &WarpGrid, border: BorderRule) -> ImageTensor {
    let (h, w, c) = (features.height(), features.width(), features.channels());
    ImageTensor::from_fn(grid.height(), grid.width(), c, |y, x, ch| {
        let (gx, gy) = grid.at(y, x);
        let cell = cell_at(gx, gy);
        let mut acc = 0.0;
        for &(cy, cx, weight) in &cell.corners {
            if let Some((sy, sx)) = resolve(cy, cx, h, w, border) {
                acc += weight * features.at(sy, sx, ch);
            }
        }
        acc
    })
}

/// [`bilinear_sample`] plus analytic derivatives of every output sample
/// with respect to the source features and the grid coordinates.
pub fn bilinear_sample_with_grad(
    features: &ImageTensor,
    grid: &WarpGrid,
    border: BorderRule,
) -> (ImageTensor, SamplerGradients) {
    let (h, w, c) = (features.height(), features.width(), features.channels());
    let (out_h, out_w) = (grid.height(), grid.width());
    let mut output = ImageTensor::zeros(out_h, out_w, c);
    let mut input_weights = Vec::with_capacity(out_h * out_w);
    let mut grid_gradients = vec![(0.0, 0.0); out_h * out_w * c];

    for y in 0..out_h {
        for x in 0..out_w {
            let (gx, gy) = grid.at(y, x);
            let cell = cell_at(gx, gy);
            let mut entries: Vec<InputGradEntry> = Vec::with_capacity(4);
            for &(cy, cx, weight) in &cell.corners {
                if let Some((sy, sx)) = resolve(cy, cx, h, w, border) {
                    match entries
                        .iter_mut()
                        .find(|e| e.source_y == sy && e.source_x == sx)
                    {
                        Some(e) => e.weight += weight,
                        None => entries.push(InputGradEntry {
                            source_y: sy,
                            source_x: sx,
                            weight,
                        }),
                    }
                }
            }
            // Corner values per channel, zero where the border drops them.
            let corner_value = |idx: usize, ch: usize| {
                let (cy, cx, _) = cell.corners[idx];
                resolve(cy, cx, h, w, border)
                    .map_or(0.0, |(sy, sx)| features.at(sy, sx, ch))
            };
            for ch in 0..c {
                let v00 = corner_value(0, ch);
                let v10 = corner_value(1, ch);
                let v01 = corner_value(2, ch);
                let v11 = corner_value(3, ch);
                let value = v00
                    + cell.fx * (v10 - v00)
                    + cell.fy * (v01 - v00)
                    + cell.fx * cell.fy * (v11 - v10 - v01 + v00);
                output.set(y, x, ch, value);
                grid_gradients[(y * out_w + x) * c + ch] = (
                    (1.0 - cell.fy) * (v10 - v00) + cell.fy * (v11 - v01),
                    (1.0 - cell.fx) * (v01 - v00) + cell.fx * (v11 - v10),
                );
            }
            input_weights.push(entries);
        }
    }

    (
        output,
        SamplerGradients {
            width: out_w,
            channels: c,
            input_weights,
            grid_gradients,
        },
    )
}

/// Soft-gated warping block: `phi + gate (elementwise) warp(residual)`.
///
/// The residual is warped first and gated second; a single-channel gate
/// broadcasts over all feature channels.
pub fn warping_block(
    phi: &ImageTensor,
    residual: &ImageTensor,
    grid: &WarpGrid,
    gate: &GateMap,
) -> Result<ImageTensor> {
    phi.require_same_shape(residual, "warping-block phi vs residual")?;
    if (grid.height(), grid.width()) != (phi.height(), phi.width()) {
        return Err(Error::ShapeMismatch(format!(
            "grid {}x{} does not cover features {}x{}",
            grid.height(),
            grid.width(),
            phi.height(),
            phi.width()
        )));
    }
    if (gate.height(), gate.width()) != (phi.height(), phi.width()) {
        return Err(Error::ShapeMismatch(format!(
            "gate {}x{} does not cover features {}x{}",
            gate.height(),
            gate.width(),
            phi.height(),
            phi.width()
        )));
    }
    if gate.channels() != 1 && gate.channels() != phi.channels() {
        return Err(Error::ShapeMismatch(format!(
            "gate has {} channels, features have {}",
            gate.channels(),
            phi.channels()
        )));
    }
    let warped = bilinear_sample(residual, grid, BorderRule::Zeros);
    Ok(ImageTensor::from_fn(
        phi.height(),
        phi.width(),
        phi.channels(),
        |y, x, c| phi.at(y, x, c) + gate.at(y, x, c) * warped.at(y, x, c),
    ))
}

/// Deterministic gate: elementwise product of the warped source part mask
/// and the target part mask, i.e. confidence where the warped part agrees
/// with the target layout.
pub fn gate_from_overlap(
    warped_part_mask: &ImageTensor,
    target_part_mask: &ImageTensor,
) -> Result<GateMap> {
    warped_part_mask.require_same_shape(target_part_mask, "overlap masks")?;
    for (name, mask) in [("warped", warped_part_mask), ("target", target_part_mask)] {
        if mask.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "{name} mask has values outside [0, 1]"
            )));
        }
    }
    let values = warped_part_mask
        .data()
        .iter()
        .zip(target_part_mask.data())
        .map(|(a, b)| a * b)
        .collect();
    GateMap::new(
        warped_part_mask.height(),
        warped_part_mask.width(),
        warped_part_mask.channels(),
        values,
    )
}
