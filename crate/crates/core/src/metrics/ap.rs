use std::collections::BTreeMap;

use serde::Serialize;

use super::matching::IouIndex;
use super::{class_list, GroundTruthSample, IouKind, MatchResult, Prediction};
use crate::par::{self, Execution};

/// 0.50, 0.55, …, 0.95, written out to avoid accumulated rounding.
pub const COCO_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// All-point interpolated AP for TP/FP flags given in descending confidence.
///
/// Returns 0 when there is no ground truth but there are predictions, and NaN
/// when both are absent (callers exclude it from means).
pub fn average_precision(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flags.is_empty() { f64::NAN } else { 0.0 };
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &hit) in flags.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // envelope: best precision at this rank or any later one
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let step = 1.0 / n_gt as f64;
    flags.iter().zip(&precision).filter(|(hit, _)| **hit).map(|(_, p)| step * p).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapResult {
    pub iou_thresh: f64,
    /// `None` when a class has neither ground truth nor predictions.
    pub ap_per_class: BTreeMap<String, Option<f64>>,
    /// Mean over classes with at least one ground-truth instance.
    pub map: Option<f64>,
}

pub(crate) fn ap_from_matches(
    preds: &[Prediction],
    gts: &[GroundTruthSample],
    order: &[usize],
    result: &MatchResult,
    classes: &[String],
    iou_thresh: f64,
) -> MapResult {
    let mut ap_per_class = BTreeMap::new();
    let mut with_gt = Vec::new();
    for class in classes {
        let flags: Vec<bool> = order.iter().filter(|&&k| &preds[k].class == class).map(|&k| result.pred_tp[k]).collect();
        let n_gt = gts.iter().map(|g| g.objects.iter().filter(|o| &o.class == class).count()).sum::<usize>();
        let ap = average_precision(&flags, n_gt);
        if n_gt > 0 {
            with_gt.push(ap);
        }
        ap_per_class.insert(class.clone(), (!ap.is_nan()).then_some(ap));
    }
    let map = (!with_gt.is_empty()).then(|| with_gt.iter().sum::<f64>() / with_gt.len() as f64);
    MapResult { iou_thresh, ap_per_class, map }
}

pub fn map_at(preds: &[Prediction], gts: &[GroundTruthSample], iou_thresh: f64, kind: IouKind) -> MapResult {
    map_at_with(preds, gts, iou_thresh, kind, Execution::default())
}

pub fn map_at_with(preds: &[Prediction], gts: &[GroundTruthSample], iou_thresh: f64, kind: IouKind, exec: Execution) -> MapResult {
    let index = IouIndex::build(preds, gts, kind, exec);
    let result = index.match_at(iou_thresh);
    ap_from_matches(preds, gts, &index.order, &result, &class_list(preds, gts), iou_thresh)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSweep {
    pub per_threshold: Vec<MapResult>,
    /// Mean of the per-threshold mAP values.
    pub map: Option<f64>,
}

pub fn map_50_95(preds: &[Prediction], gts: &[GroundTruthSample], kind: IouKind) -> MapSweep {
    map_50_95_with(preds, gts, kind, Execution::default())
}

/// IoUs are computed once; the ten threshold evaluations run through `exec`.
pub fn map_50_95_with(preds: &[Prediction], gts: &[GroundTruthSample], kind: IouKind, exec: Execution) -> MapSweep {
    let index = IouIndex::build(preds, gts, kind, exec);
    let classes = class_list(preds, gts);
    let per_threshold = par::map(exec, &COCO_THRESHOLDS, |&t| {
        let result = index.match_at(t);
        ap_from_matches(preds, gts, &index.order, &result, &classes, t)
    });
    let values: Vec<f64> = per_threshold.iter().filter_map(|r| r.map).collect();
    let map = (values.len() == per_threshold.len()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    MapSweep { per_threshold, map }
}
