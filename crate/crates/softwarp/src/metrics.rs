//! Image quality scoring: windowed SSIM and per-label mean IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::pairwise_sum;
use crate::tensor::{ImageTensor, SegmentationMap};

/// SSIM parameters: Gaussian window size and spread, stability constants,
/// and the dynamic range of the sample values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    /// Canonical defaults with an explicit dynamic range (255 for 8-bit
    /// samples, 1 for unit-scaled tensors).
    pub fn with_range(dynamic_range: f64) -> Self {
        Self {
            dynamic_range,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument("SSIM sigma must be positive".into()));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.k1.is_finite() && self.k2.is_finite()) {
            return Err(Error::InvalidArgument(
                "SSIM k1 and k2 must be positive".into(),
            ));
        }
        if !(self.dynamic_range > 0.0 && self.dynamic_range.is_finite()) {
            return Err(Error::InvalidArgument(
                "SSIM dynamic range must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Normalized 2-D Gaussian window weights, row-major.
    fn window_weights(&self) -> Vec<f64> {
        let n = self.window;
        let center = (n as f64 - 1.0) / 2.0;
        let mut weights = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 - center, y as f64 - center);
                weights.push((-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        weights
    }
}

/// Mean structural similarity between two images.
///
/// Every fully-contained window position contributes one Gaussian-weighted
/// local score; the result averages those over positions and then over
/// channels. Symmetric in its arguments to the last bit.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    a.require_same_shape(b, "SSIM inputs")?;
    let n = cfg.window;
    if a.height() < n || a.width() < n {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is smaller than the {}x{} SSIM window",
            a.height(),
            a.width(),
            n,
            n
        )));
    }
    let weights = cfg.window_weights();
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);

    let mut channel_means = Vec::with_capacity(a.channels());
    for ch in 0..a.channels() {
        let mut local = Vec::with_capacity((a.height() - n + 1) * (a.width() - n + 1));
        for wy in 0..=a.height() - n {
            for wx in 0..=a.width() - n {
                let (mut mu_a, mut mu_b, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let w = weights[y * n + x];
                        let va = a.at(wy + y, wx + x, ch);
                        let vb = b.at(wy + y, wx + x, ch);
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * (va * va);
                        bb += w * (vb * vb);
                        ab += w * (va * vb);
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                local.push(
                    ((2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2))
                        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)),
                );
            }
        }
        channel_means.push(pairwise_sum(&local) / local.len() as f64);
    }
    Ok(pairwise_sum(&channel_means) / channel_means.len() as f64)
}

/// Mean intersection-over-union across the requested labels; labels absent
/// from both maps are skipped (vacuously 1.0 when all are).
pub fn mean_iou(a: &SegmentationMap, b: &SegmentationMap, labels: &[u8]) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::ShapeMismatch(format!(
            "segmentation maps differ in shape: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty label subset".into()));
    }
    let mut unique: Vec<u8> = labels.to_vec();
    unique.sort_unstable();
    unique.dedup();

    let mut total = 0.0;
    let mut counted = 0usize;
    for &label in &unique {
        let (mut inter, mut union) = (0usize, 0usize);
        for (la, lb) in a.labels().iter().zip(b.labels()) {
            let (in_a, in_b) = (*la == label, *lb == label);
            if in_a && in_b {
                inter += 1;
            }
            if in_a || in_b {
                union += 1;
            }
        }
        if union > 0 {
            total += inter as f64 / union as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        return Ok(1.0);
    }
    Ok(total / counted as f64)
}
