//! Objective terms: pixel L1, pyramidal-hierarchy L1, the standard GAN
//! adversarial pair, a perceptual stand-in, and their weighted total.
//!
//! The pyramid terms compare images across an average-pooling pyramid: level
//! 0 is the image itself and every further level halves both dimensions with
//! 2x2 mean pooling. All reductions use a fixed row-major pairwise summation
//! so results are bitwise reproducible across platforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Deterministic pairwise summation in row-major order.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}

/// Weights of the four terms in the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(rename = "adv")]
    pub lambda_adv: f64,
    #[serde(rename = "pixel")]
    pub lambda_pixel: f64,
    #[serde(rename = "perceptual")]
    pub lambda_perceptual: f64,
    #[serde(rename = "ph")]
    pub lambda_ph: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_pixel: 10.0,
            lambda_perceptual: 10.0,
            lambda_ph: 10.0,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_adv,
            self.lambda_pixel,
            self.lambda_perceptual,
            self.lambda_ph,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Average-pooling pyramid with per-level weights; level `i` compares
/// images after `i` halvings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidExtractor {
    alphas: Vec<f64>,
}

impl Default for PyramidExtractor {
    fn default() -> Self {
        Self {
            alphas: vec![1.0, 1.0, 1.0],
        }
    }
}

impl PyramidExtractor {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidArgument(
                "pyramid needs at least one level".into(),
            ));
        }
        if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidArgument(
                "pyramid alphas must be finite and non-negative".into(),
            ));
        }
        Ok(Self { alphas })
    }

    pub fn levels(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// 2x mean pooling; an odd trailing row or column is dropped.
fn average_pool(t: &ImageTensor) -> ImageTensor {
    let (h, w, c) = (t.height() / 2, t.width() / 2, t.channels());
    ImageTensor::from_fn(h, w, c, |y, x, ch| {
        0.25 * (t.at(2 * y, 2 * x, ch)
            + t.at(2 * y, 2 * x + 1, ch)
            + t.at(2 * y + 1, 2 * x, ch)
            + t.at(2 * y + 1, 2 * x + 1, ch))
    })
}

fn mean_l1(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let diffs: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .collect();
    mean(&diffs)
}

/// Mean absolute difference over all samples.
pub fn pixel_loss(generated: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    generated.require_same_shape(target, "pixel loss inputs")?;
    Ok(mean_l1(generated, target))
}

fn pyramid_l1(
    generated: &ImageTensor,
    target: &ImageTensor,
    extractor: &PyramidExtractor,
    what: &str,
) -> Result<f64> {
    generated.require_same_shape(target, what)?;
    let min_dim = generated.height().min(generated.width());
    if (1usize << extractor.levels()) > min_dim.max(1) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is too small for a {}-level pyramid",
            generated.height(),
            generated.width(),
            extractor.levels()
        )));
    }
    let mut total = 0.0;
    let mut a = generated.clone();
    let mut b = target.clone();
    for (i, alpha) in extractor.alphas().iter().enumerate() {
        if i > 0 {
            a = average_pool(&a);
            b = average_pool(&b);
        }
        total += alpha * mean_l1(&a, &b);
    }
    Ok(total)
}

/// Pyramidal-hierarchy loss: alpha-weighted mean L1 across pooling levels.
pub fn pyramid_loss(
    generated: &ImageTensor,
    target: &ImageTensor,
    extractor: &PyramidExtractor,
) -> Result<f64> {
    pyramid_l1(generated, target, extractor, "pyramid loss inputs")
}

/// Perceptual stand-in: the same multi-scale L1 machinery as
/// [`pyramid_loss`] with an independently chosen weight vector.
pub fn perceptual_loss(
    generated: &ImageTensor,
    target: &ImageTensor,
    extractor: &PyramidExtractor,
) -> Result<f64> {
    pyramid_l1(generated, target, extractor, "perceptual loss inputs")
}

/// Which player the adversarial loss scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversarialSide {
    Generator,
    Discriminator,
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(format!("no {what} scores given")));
    }
    if let Some(s) = scores.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "{what} score {s} outside the open interval (0, 1)"
        )));
    }
    Ok(())
}

/// Standard GAN objective over probability scores.
///
/// Discriminator side: `-mean(log real) - mean(log(1 - fake))`; generator
/// side: `-mean(log fake)`. Scores must lie strictly inside `(0, 1)`; any
/// squashing is the caller's business.
pub fn adversarial_loss(
    real_scores: &[f64],
    fake_scores: &[f64],
    side: AdversarialSide,
) -> Result<f64> {
    match side {
        AdversarialSide::Discriminator => {
            check_scores(real_scores, "real")?;
            check_scores(fake_scores, "fake")?;
            let real: Vec<f64> = real_scores.iter().map(|s| s.ln()).collect();
            let fake: Vec<f64> = fake_scores.iter().map(|s| (1.0 - s).ln()).collect();
            Ok(-mean(&real) - mean(&fake))
        }
        AdversarialSide::Generator => {
            check_scores(fake_scores, "fake")?;
            let fake: Vec<f64> = fake_scores.iter().map(|s| s.ln()).collect();
            Ok(-mean(&fake))
        }
    }
}

/// Weighted sum of the four loss terms, evaluated left to right as
/// `adv + pixel + perceptual + ph` accumulation of the products.
pub fn total_loss(adv: f64, pixel: f64, perceptual: f64, ph: f64, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    if ![adv, pixel, perceptual, ph].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("loss components".into()));
    }
    Ok(w.lambda_adv * adv
        + w.lambda_pixel * pixel
        + w.lambda_perceptual * perceptual
        + w.lambda_ph * ph)
}

/// Loss configuration as read from JSON: `{"lambda": {...}, "alphas": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: LossWeights,
    pub alphas: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: LossWeights::default(),
            alphas: PyramidExtractor::default().alphas,
        }
    }
}

impl LossConfig {
    pub fn extractor(&self) -> Result<PyramidExtractor> {
        PyramidExtractor::new(self.alphas.clone())
    }
}
