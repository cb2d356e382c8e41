//! Precision / recall / F1 as functions of the confidence threshold.
//!
//! Because matching is greedy in descending confidence, the matching of the
//! predictions above a threshold is a prefix of the full matching; one pass
//! yields the whole curve.

use std::collections::BTreeMap;

use serde::Serialize;

use super::ap::ap_from_matches;
use super::matching::IouIndex;
use super::{class_list, f1_score, GroundTruthSample, IouKind, Prediction};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PRCurve {
    pub iou_thresh: f64,
    /// Global sweep over all classes, ascending confidence.
    pub all: Vec<CurvePoint>,
    /// Per-class sweeps over that class's predictions only.
    pub per_class: BTreeMap<String, Vec<CurvePoint>>,
    pub ap_per_class: BTreeMap<String, Option<f64>>,
    pub map: Option<f64>,
    pub best_conf: f64,
    pub best_f1: f64,
}

/// Sweeps thresholds at each distinct confidence. `ranked` is (confidence,
/// is_tp) in descending confidence.
fn sweep(ranked: &[(f64, bool)], n_gt: usize) -> Vec<CurvePoint> {
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (k, &(conf, hit)) in ranked.iter().enumerate() {
        tp += usize::from(hit);
        let last_of_level = ranked.get(k + 1).map_or(true, |next| next.0 != conf);
        if !last_of_level {
            continue;
        }
        let precision = tp as f64 / (k + 1) as f64;
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        points.push(CurvePoint { confidence: conf, precision, recall, f1: f1_score(precision, recall) });
    }
    points.reverse();
    points
}

/// Highest F1; ties go to the lowest confidence. `(0, 0)` for an empty curve.
fn best_point(points: &[CurvePoint]) -> (f64, f64) {
    let mut best: Option<&CurvePoint> = None;
    for p in points {
        if best.map_or(true, |b| p.f1 > b.f1) {
            best = Some(p);
        }
    }
    best.map_or((0.0, 0.0), |p| (p.confidence, p.f1))
}

pub fn f1_confidence_curve(preds: &[Prediction], gts: &[GroundTruthSample], iou_thresh: f64, kind: IouKind) -> PRCurve {
    f1_confidence_curve_with(preds, gts, iou_thresh, kind, Execution::default())
}

pub fn f1_confidence_curve_with(
    preds: &[Prediction],
    gts: &[GroundTruthSample],
    iou_thresh: f64,
    kind: IouKind,
    exec: Execution,
) -> PRCurve {
    let index = IouIndex::build(preds, gts, kind, exec);
    let result = index.match_at(iou_thresh);
    let classes = class_list(preds, gts);

    let ranked: Vec<(f64, bool)> = index.order.iter().map(|&k| (preds[k].confidence, result.pred_tp[k])).collect();
    let n_gt_total: usize = gts.iter().map(|g| g.objects.len()).sum();
    let all = sweep(&ranked, n_gt_total);

    let mut per_class = BTreeMap::new();
    for class in &classes {
        let ranked: Vec<(f64, bool)> =
            index.order.iter().filter(|&&k| &preds[k].class == class).map(|&k| (preds[k].confidence, result.pred_tp[k])).collect();
        let n_gt = gts.iter().map(|g| g.objects.iter().filter(|o| &o.class == class).count()).sum();
        per_class.insert(class.clone(), sweep(&ranked, n_gt));
    }

    let aps = ap_from_matches(preds, gts, &index.order, &result, &classes, iou_thresh);
    let (best_conf, best_f1) = best_point(&all);
    PRCurve { iou_thresh, all, per_class, ap_per_class: aps.ap_per_class, map: aps.map, best_conf, best_f1 }
}

/// CSV with columns `confidence,precision,recall,f1`.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("confidence,precision,recall,f1\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.confidence, p.precision, p.recall, p.f1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::BoundingBox;
    use crate::metrics::GroundTruthObject;

    fn sample(n: usize) -> Vec<GroundTruthSample> {
        vec![GroundTruthSample {
            image_id: "img".into(),
            objects: (0..n)
                .map(|i| GroundTruthObject {
                    class: "car".into(),
                    bbox: BoundingBox::new(100.0 * i as f64, 0.0, 50.0, 50.0),
                    mask: None,
                })
                .collect(),
            image_size: None,
        }]
    }

    fn pred(x: f64, conf: f64) -> Prediction {
        Prediction { image_id: "img".into(), class: "car".into(), confidence: conf, bbox: BoundingBox::new(x, 0.0, 50.0, 50.0), mask: None }
    }

    #[test]
    fn single_perfect_prediction() {
        let c = f1_confidence_curve(&[pred(0.0, 0.7)], &sample(1), 0.5, IouKind::Box);
        assert_eq!(c.best_f1, 1.0);
        assert!(c.best_conf <= 0.7);
        assert_eq!(c.all.len(), 1);
    }

    #[test]
    fn sweep_points_and_ties() {
        // TP@0.9, FP@0.8, TP@0.8 (shared level), 3 GT
        let preds = vec![pred(0.0, 0.9), pred(1000.0, 0.8), pred(100.0, 0.8)];
        let c = f1_confidence_curve(&preds, &sample(3), 0.5, IouKind::Box);
        assert_eq!(c.all.len(), 2);
        assert_eq!(c.all[0].confidence, 0.8);
        assert!((c.all[0].precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.all[0].recall - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.all[1].precision, 1.0);
        assert!((c.all[1].recall - 1.0 / 3.0).abs() < 1e-12);
        // f1: 0.8 → 2/3, 0.9 → 0.5
        assert_eq!(c.best_conf, 0.8);
        assert!(curve_csv(&c.all).starts_with("confidence,precision,recall,f1\n0.8,"));
    }

    #[test]
    fn empty_inputs() {
        let c = f1_confidence_curve(&[], &sample(2), 0.5, IouKind::Box);
        assert!(c.all.is_empty());
        assert_eq!((c.best_conf, c.best_f1), (0.0, 0.0));
        assert_eq!(c.map, Some(0.0));
    }
}
