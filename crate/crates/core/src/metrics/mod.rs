//! Detection and segmentation evaluation.
//!
//! Predictions are matched greedily to same-class ground truth in descending
//! confidence order; AP uses all-point interpolation of the precision
//! envelope; mAP@0.5:0.95 averages ten thresholds 0.50, 0.55, …, 0.95.

mod ap;
mod confusion;
mod curves;
mod io;
mod labels;
mod matching;
pub mod polygon;

pub use ap::{average_precision, map_50_95, map_50_95_with, map_at, map_at_with, MapResult, MapSweep, COCO_THRESHOLDS};
pub use confusion::{confusion_matrix, ConfusionMatrix, ConfusionMode};
pub use curves::{curve_csv, f1_confidence_curve, f1_confidence_curve_with, CurvePoint, PRCurve};
pub use io::{evaluate, parse_ground_truth, parse_predictions, EvalOptions, EvalOutputs, EvalSummary};
pub use labels::{class_counts, label_stats, Histogram, LabelStats, LabelStatsError};
pub use matching::{match_predictions, match_predictions_with, MatchResult};
pub use polygon::{polygon_iou, polygon_iou_raster, PolygonIouError};

use crate::ingest::{BoundingBox, PolygonMask};
use crate::tracker::box_iou;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IouKind {
    #[default]
    Box,
    Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub class: String,
    pub bbox: BoundingBox,
    pub mask: Option<PolygonMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSample {
    pub image_id: String,
    pub objects: Vec<GroundTruthObject>,
    /// (width, height) in pixels, when known.
    pub image_size: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    pub class: String,
    pub confidence: f64,
    pub bbox: BoundingBox,
    pub mask: Option<PolygonMask>,
}

/// IoU between a prediction and a ground-truth region. Mask IoU falls back to
/// the box outline when either side lacks a mask; degenerate masks score 0.
pub(crate) fn region_iou(
    kind: IouKind,
    pred_box: &BoundingBox,
    pred_mask: Option<&PolygonMask>,
    gt_box: &BoundingBox,
    gt_mask: Option<&PolygonMask>,
) -> f64 {
    match kind {
        IouKind::Box => box_iou(pred_box, gt_box),
        IouKind::Mask => {
            let pm = pred_mask.cloned().unwrap_or_else(|| PolygonMask::from_box(pred_box));
            let gm = gt_mask.cloned().unwrap_or_else(|| PolygonMask::from_box(gt_box));
            polygon_iou(&pm, &gm).unwrap_or(0.0)
        }
    }
}

/// Sorted union of class names seen in ground truth and predictions.
pub fn class_list(preds: &[Prediction], gts: &[GroundTruthSample]) -> Vec<String> {
    let mut set: std::collections::BTreeSet<String> = preds.iter().map(|p| p.class.clone()).collect();
    set.extend(gts.iter().flat_map(|g| g.objects.iter().map(|o| o.class.clone())));
    set.into_iter().collect()
}

/// Prediction indices by descending confidence; ties keep input order.
pub(crate) fn confidence_order(preds: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

pub(crate) fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}
