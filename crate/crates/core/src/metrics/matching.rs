use std::collections::HashMap;

use super::{confidence_order, region_iou, GroundTruthSample, IouKind, Prediction};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Indexed like the input predictions.
    pub pred_tp: Vec<bool>,
    /// Matched ground-truth object as (sample index, object index).
    pub pred_match: Vec<Option<(usize, usize)>>,
    /// `gt_matched[sample][object]`.
    pub gt_matched: Vec<Vec<bool>>,
}

/// Same-class IoUs for every prediction, computed once and reusable across
/// thresholds.
#[derive(Debug, Clone)]
pub(crate) struct IouIndex {
    /// Global descending-confidence order.
    pub order: Vec<usize>,
    /// Sample index of each prediction, if its image has ground truth.
    pub sample_of: Vec<Option<usize>>,
    /// Per prediction: (object index, IoU) for same-class objects.
    pub candidates: Vec<Vec<(usize, f64)>>,
    pub gt_shape: Vec<usize>,
}

impl IouIndex {
    pub fn build(preds: &[Prediction], gts: &[GroundTruthSample], kind: IouKind, exec: Execution) -> Self {
        let by_image: HashMap<&str, usize> = gts.iter().enumerate().map(|(i, g)| (g.image_id.as_str(), i)).collect();
        let sample_of: Vec<Option<usize>> = preds.iter().map(|p| by_image.get(p.image_id.as_str()).copied()).collect();
        let candidates = par::map_range(exec, preds.len(), |k| {
            let p = &preds[k];
            let Some(s) = sample_of[k] else { return Vec::new() };
            gts[s]
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.class == p.class)
                .map(|(j, o)| (j, region_iou(kind, &p.bbox, p.mask.as_ref(), &o.bbox, o.mask.as_ref())))
                .collect()
        });
        Self { order: confidence_order(preds), sample_of, candidates, gt_shape: gts.iter().map(|g| g.objects.len()).collect() }
    }

    pub fn match_at(&self, iou_thresh: f64) -> MatchResult {
        let n = self.candidates.len();
        let mut pred_tp = vec![false; n];
        let mut pred_match = vec![None; n];
        let mut gt_matched: Vec<Vec<bool>> = self.gt_shape.iter().map(|&k| vec![false; k]).collect();
        for &k in &self.order {
            let Some(s) = self.sample_of[k] else { continue };
            let mut best: Option<(usize, f64)> = None;
            for &(j, iou) in &self.candidates[k] {
                if gt_matched[s][j] || iou < iou_thresh {
                    continue;
                }
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                gt_matched[s][j] = true;
                pred_tp[k] = true;
                pred_match[k] = Some((s, j));
            }
        }
        MatchResult { pred_tp, pred_match, gt_matched }
    }
}

/// Greedy one-to-one matching: in descending confidence, each prediction takes
/// the unmatched same-class object with the highest IoU ≥ `iou_thresh`
/// (ties to the lowest object index).
pub fn match_predictions(preds: &[Prediction], gts: &[GroundTruthSample], iou_thresh: f64, kind: IouKind) -> MatchResult {
    match_predictions_with(preds, gts, iou_thresh, kind, Execution::default())
}

pub fn match_predictions_with(
    preds: &[Prediction],
    gts: &[GroundTruthSample],
    iou_thresh: f64,
    kind: IouKind,
    exec: Execution,
) -> MatchResult {
    IouIndex::build(preds, gts, kind, exec).match_at(iou_thresh)
}
