//! Fixture-set scoring: renders every fixture against its target parsing
//! and reports similarity metrics, geometric errors against the known
//! transforms, and all loss terms.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{
    adversarial_loss, perceptual_loss, pixel_loss, pyramid_loss, total_loss, AdversarialSide,
    PyramidExtractor,
};
use crate::metrics::{mean_iou, ssim, SsimConfig};
use crate::tensor::SegmentationMap;

use super::render::{realize_backward_grid, render, warped_mask_iou, RenderTarget};
use super::{PipelineConfig, SynthFixture};
use crate::geometry::Point;

/// Geometric scores for one part of one fixture, against its known
/// transform.
#[derive(Debug, Clone, Serialize)]
pub struct PartReport {
    pub label: u8,
    pub degenerate: bool,
    /// Absolute rotation gap between the estimated and true affine.
    pub rotation_error_degrees: f64,
    /// Distance between the estimated and true images of the part's
    /// condition centroid.
    pub translation_error_px: f64,
    /// IoU of the warped condition part mask against the target region.
    pub warped_iou: f64,
}

/// Scores for one rendered fixture.
#[derive(Debug, Clone, Serialize)]
pub struct FixtureReport {
    pub index: usize,
    /// SSIM between the render and the fixture's reference target image.
    pub ssim: f64,
    /// Mean IoU between the parsing the renderer followed and the
    /// fixture's target parsing, over all labels present in either.
    pub parsing_iou: f64,
    /// Mean of the per-part warped-mask IoUs.
    pub warped_part_iou: f64,
    pub adversarial: f64,
    pub pixel: f64,
    pub perceptual: f64,
    pub pyramid: f64,
    pub total: f64,
    pub parts: Vec<PartReport>,
}

/// Column means over the fixture set, plus worst-case geometric errors.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub fixtures: usize,
    pub ssim: f64,
    pub parsing_iou: f64,
    pub warped_part_iou: f64,
    pub adversarial: f64,
    pub pixel: f64,
    pub perceptual: f64,
    pub pyramid: f64,
    pub total: f64,
    pub mean_rotation_error_degrees: f64,
    pub max_rotation_error_degrees: f64,
    pub mean_translation_error_px: f64,
    pub max_translation_error_px: f64,
}

/// Per-fixture and aggregate scores; serializes to the JSON emitted by the
/// CLI.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub fixtures: Vec<FixtureReport>,
    pub aggregate: AggregateReport,
}

fn wrapped_angle_error_degrees(estimated: f64, truth: f64) -> f64 {
    let diff = (estimated - truth + 180.0).rem_euclid(360.0) - 180.0;
    diff.abs()
}

fn centroid(parsing: &SegmentationMap, label: u8) -> Option<Point> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..parsing.height() {
        for x in 0..parsing.width() {
            if parsing.label_at(y, x) == label {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| Point::new(sx / n as f64, sy / n as f64))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Maps the SSIM score in [-1, 1] into an open-interval probability for
/// the adversarial stand-in.
pub fn squash_score(ssim_value: f64) -> f64 {
    (0.5 + 0.5 * ssim_value).clamp(1e-6, 1.0 - 1e-6)
}

/// Renders and scores every fixture.
///
/// The adversarial term has no discriminator behind it at this scale; its
/// stand-in is the generator-side loss on the squashed SSIM score of the
/// render, everything else is computed exactly as configured.
pub fn evaluate(fixtures: &[SynthFixture], cfg: &PipelineConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    if fixtures.is_empty() {
        return Err(Error::InvalidArgument("no fixtures to evaluate".into()));
    }
    let extractor = cfg.loss.extractor()?;
    let perceptual_extractor = PyramidExtractor::default();
    let ssim_cfg = SsimConfig::default();

    let mut reports = Vec::with_capacity(fixtures.len());
    for (index, f) in fixtures.iter().enumerate() {
        let out = render(
            &f.condition_image,
            &f.condition_parsing,
            RenderTarget::Parsing(&f.target_parsing),
            cfg,
        )?;

        let ssim_value = ssim(&out.image, &f.target_image, &ssim_cfg)?;
        let mut labels: Vec<u8> = out
            .parsing
            .present_labels()
            .into_iter()
            .chain(f.target_parsing.present_labels())
            .collect();
        labels.sort_unstable();
        labels.dedup();
        let parsing_iou = mean_iou(&out.parsing, &f.target_parsing, &labels)?;

        let mut parts = Vec::new();
        for gt in &f.ground_truth_transforms {
            let Some(d) = out.diagnostics.parts.iter().find(|d| d.label == gt.label) else {
                continue;
            };
            let grid = realize_backward_grid(&d.backward, out.image.height(), out.image.width())?;
            let warped_iou =
                warped_mask_iou(&f.condition_parsing, &f.target_parsing, gt.label, &grid)?;
            let rotation_error_degrees = wrapped_angle_error_degrees(
                d.rotation_degrees,
                gt.affine.rotation_angle().to_degrees(),
            );
            let translation_error_px = match centroid(&f.condition_parsing, gt.label) {
                Some(c) => d.forward.affine.apply(c).distance(&gt.affine.apply(c)),
                None => 0.0,
            };
            parts.push(PartReport {
                label: gt.label,
                degenerate: d.degenerate,
                rotation_error_degrees,
                translation_error_px,
                warped_iou,
            });
        }

        let pixel = pixel_loss(&out.image, &f.target_image)?;
        let perceptual = perceptual_loss(&out.image, &f.target_image, &perceptual_extractor)?;
        let pyramid = pyramid_loss(&out.image, &f.target_image, &extractor)?;
        let adversarial =
            adversarial_loss(&[], &[squash_score(ssim_value)], AdversarialSide::Generator)?;
        let total = total_loss(adversarial, pixel, perceptual, pyramid, &cfg.loss.lambda)?;

        let warped_part_iou = mean(
            &parts
                .iter()
                .map(|p| p.warped_iou)
                .collect::<Vec<_>>(),
        );
        reports.push(FixtureReport {
            index,
            ssim: ssim_value,
            parsing_iou,
            warped_part_iou,
            adversarial,
            pixel,
            perceptual,
            pyramid,
            total,
            parts,
        });
    }

    let column = |f: fn(&FixtureReport) -> f64| -> f64 {
        mean(&reports.iter().map(f).collect::<Vec<_>>())
    };
    let rotation_errors: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.parts.iter().map(|p| p.rotation_error_degrees))
        .collect();
    let translation_errors: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.parts.iter().map(|p| p.translation_error_px))
        .collect();
    let aggregate = AggregateReport {
        fixtures: reports.len(),
        ssim: column(|r| r.ssim),
        parsing_iou: column(|r| r.parsing_iou),
        warped_part_iou: column(|r| r.warped_part_iou),
        adversarial: column(|r| r.adversarial),
        pixel: column(|r| r.pixel),
        perceptual: column(|r| r.perceptual),
        pyramid: column(|r| r.pyramid),
        total: column(|r| r.total),
        mean_rotation_error_degrees: mean(&rotation_errors),
        max_rotation_error_degrees: rotation_errors.iter().copied().fold(0.0, f64::max),
        mean_translation_error_px: mean(&translation_errors),
        max_translation_error_px: translation_errors.iter().copied().fold(0.0, f64::max),
    };
    Ok(EvaluationReport {
        fixtures: reports,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AffineParams, TpsParams};
    use crate::pipeline::{make_fixture, GroundTruthTransform};

    fn fixed_point_fixture(seed: u64, cfg: &PipelineConfig) -> SynthFixture {
        let f = make_fixture(seed, cfg).unwrap();
        let identity_gt = cfg
            .parts
            .iter()
            .map(|p| GroundTruthTransform {
                label: p.label,
                affine: AffineParams::identity(),
                tps: TpsParams::identity(cfg.tps_grid.0, cfg.tps_grid.1),
            })
            .collect();
        SynthFixture {
            target_pose: f.condition_pose.clone(),
            target_parsing: f.condition_parsing.clone(),
            target_image: f.condition_image.clone(),
            ground_truth_transforms: identity_gt,
            ..f
        }
    }

    #[test]
    fn fixed_point_fixtures_score_perfectly() {
        let cfg = PipelineConfig::default();
        let fixtures: Vec<SynthFixture> =
            (0..3).map(|s| fixed_point_fixture(s, &cfg)).collect();
        let report = evaluate(&fixtures, &cfg).unwrap();
        assert!((report.aggregate.ssim - 1.0).abs() <= 1e-9);
        assert!((report.aggregate.parsing_iou - 1.0).abs() <= 1e-12);
        assert!(report.aggregate.pixel <= 1e-6);
        assert!(report.aggregate.max_rotation_error_degrees <= 1e-6);
        assert!(report.aggregate.max_translation_error_px <= 1e-6);
    }

    #[test]
    fn aggregates_recompute_from_fixture_entries() {
        let cfg = PipelineConfig::default();
        let fixtures: Vec<SynthFixture> =
            (40..43).map(|s| make_fixture(s, &cfg).unwrap()).collect();
        let report = evaluate(&fixtures, &cfg).unwrap();
        let n = report.fixtures.len() as f64;
        let mean_of = |f: fn(&FixtureReport) -> f64| -> f64 {
            report.fixtures.iter().map(f).sum::<f64>() / n
        };
        assert_eq!(report.aggregate.ssim, mean_of(|r| r.ssim));
        assert_eq!(report.aggregate.pixel, mean_of(|r| r.pixel));
        assert_eq!(report.aggregate.total, mean_of(|r| r.total));
        let max_rot = report
            .fixtures
            .iter()
            .flat_map(|r| r.parts.iter().map(|p| p.rotation_error_degrees))
            .fold(0.0, f64::max);
        assert_eq!(report.aggregate.max_rotation_error_degrees, max_rot);
    }

    #[test]
    fn total_column_matches_the_weighted_sum() {
        let cfg = PipelineConfig::default();
        let fixtures = vec![make_fixture(50, &cfg).unwrap()];
        let report = evaluate(&fixtures, &cfg).unwrap();
        for r in &report.fixtures {
            let expected =
                total_loss(r.adversarial, r.pixel, r.perceptual, r.pyramid, &cfg.loss.lambda)
                    .unwrap();
            assert_eq!(r.total, expected);
        }
    }

    #[test]
    fn report_serializes_to_json() {
        let cfg = PipelineConfig::default();
        let fixtures = vec![make_fixture(60, &cfg).unwrap()];
        let report = evaluate(&fixtures, &cfg).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        assert!(json.contains("\"aggregate\""));
        assert!(json.contains("\"warped_part_iou\""));
    }

    #[test]
    fn empty_fixture_set_is_rejected() {
        assert!(evaluate(&[], &PipelineConfig::default()).is_err());
    }
}
