//! Evaluation file dialect and the summary document.
//!
//! Ground truth and predictions use the detection-stream line format with
//! `image_id` (string or integer) in place of `frame`/`ts_ms`. Ground-truth
//! lines may carry `width`/`height`; their `conf` may be omitted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    class_list, confusion_matrix, f1_confidence_curve_with, label_stats, map_50_95_with, ConfusionMatrix, ConfusionMode,
    GroundTruthObject, GroundTruthSample, IouKind, LabelStats, MapSweep, PRCurve, Prediction,
};
use crate::ingest::{decode, detection_from_wire, IngestError, WireDetection};
use crate::par::Execution;

#[derive(Deserialize)]
#[serde(untagged)]
enum ImageId {
    Int(i64),
    Text(String),
}

#[derive(Deserialize)]
struct EvalLine {
    image_id: ImageId,
    #[serde(default)]
    width: Option<f64>,
    #[serde(default)]
    height: Option<f64>,
    dets: Vec<WireDetection>,
}

fn parse_lines(text: &str) -> impl Iterator<Item = Result<(String, Option<(f64, f64)>, Vec<crate::ingest::Detection>), IngestError>> + '_ {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, line)| {
        let n = i + 1;
        let parsed: EvalLine = decode(line, n)?;
        let image_id = match parsed.image_id {
            ImageId::Int(v) => v.to_string(),
            ImageId::Text(s) => s,
        };
        let size = parsed.width.zip(parsed.height);
        let dets = parsed
            .dets
            .into_iter()
            .enumerate()
            .map(|(k, d)| detection_from_wire(d, n, &format!("dets[{k}]")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((image_id, size, dets))
    })
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthSample>, IngestError> {
    parse_lines(text)
        .map(|r| {
            r.map(|(image_id, image_size, dets)| GroundTruthSample {
                image_id,
                image_size,
                objects: dets.into_iter().map(|d| GroundTruthObject { class: d.label, bbox: d.bbox, mask: d.mask }).collect(),
            })
        })
        .collect()
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>, IngestError> {
    let mut out = Vec::new();
    for r in parse_lines(text) {
        let (image_id, _, dets) = r?;
        out.extend(dets.into_iter().map(|d| Prediction {
            image_id: image_id.clone(),
            class: d.label,
            confidence: d.confidence,
            bbox: d.bbox,
            mask: d.mask,
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub iou_kind: String,
    pub classes: Vec<String>,
    pub predictions: usize,
    pub ground_truth_objects: usize,
    pub map_50: Option<f64>,
    pub map_50_95: Option<f64>,
    pub ap_50_per_class: BTreeMap<String, Option<f64>>,
    pub ap_50_95_per_class: BTreeMap<String, Option<f64>>,
    pub best_conf: f64,
    pub best_f1: f64,
    pub confusion_conf_thresh: f64,
    pub confusion_iou_thresh: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub kind: IouKind,
    pub curve_iou_thresh: f64,
    pub confusion_conf_thresh: f64,
    pub confusion_iou_thresh: f64,
    pub histogram_bins: usize,
    pub exec: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            kind: IouKind::Box,
            curve_iou_thresh: 0.5,
            confusion_conf_thresh: 0.25,
            confusion_iou_thresh: 0.45,
            histogram_bins: 10,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutputs {
    pub summary: EvalSummary,
    pub curve: PRCurve,
    pub sweep: MapSweep,
    pub confusion_raw: ConfusionMatrix,
    pub confusion_normalized: ConfusionMatrix,
    /// `None` when some image lacks a size.
    pub label_stats: Option<LabelStats>,
}

pub fn evaluate(preds: &[Prediction], gts: &[GroundTruthSample], opts: &EvalOptions) -> EvalOutputs {
    let classes = class_list(preds, gts);
    let curve = f1_confidence_curve_with(preds, gts, opts.curve_iou_thresh, opts.kind, opts.exec);
    let sweep = map_50_95_with(preds, gts, opts.kind, opts.exec);
    let confusion_raw = confusion_matrix(
        preds,
        gts,
        &classes,
        opts.confusion_conf_thresh,
        opts.confusion_iou_thresh,
        opts.kind,
        ConfusionMode::Raw,
    );
    let confusion_normalized = confusion_raw.normalized();
    let ap_50_95_per_class = classes
        .iter()
        .map(|c| {
            let vals: Vec<f64> = sweep.per_threshold.iter().filter_map(|r| r.ap_per_class.get(c).copied().flatten()).collect();
            let v = (vals.len() == sweep.per_threshold.len()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            (c.clone(), v)
        })
        .collect();
    let summary = EvalSummary {
        iou_kind: match opts.kind {
            IouKind::Box => "box".into(),
            IouKind::Mask => "mask".into(),
        },
        classes: classes.clone(),
        predictions: preds.len(),
        ground_truth_objects: gts.iter().map(|g| g.objects.len()).sum(),
        map_50: sweep.per_threshold.first().and_then(|r| r.map),
        map_50_95: sweep.map,
        ap_50_per_class: sweep.per_threshold.first().map(|r| r.ap_per_class.clone()).unwrap_or_default(),
        ap_50_95_per_class,
        best_conf: curve.best_conf,
        best_f1: curve.best_f1,
        confusion_conf_thresh: opts.confusion_conf_thresh,
        confusion_iou_thresh: opts.confusion_iou_thresh,
    };
    EvalOutputs { summary, curve, sweep, confusion_raw, confusion_normalized, label_stats: label_stats(gts, opts.histogram_bins).ok() }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GT: &str = r#"{"image_id":1,"width":100,"height":100,"dets":[{"box":[0,0,10,10],"label":"car"},{"box":[50,50,20,20],"label":"bus"}]}
{"image_id":"b","width":100,"height":100,"dets":[]}
"#;
    const PRED: &str = r#"{"image_id":1,"dets":[{"box":[0,0,10,10],"label":"car","conf":0.9},{"box":[50,50,20,20],"label":"car","conf":0.6}]}
{"image_id":"b","dets":[{"box":[5,5,5,5],"label":"bus","conf":0.3}]}
"#;

    #[test]
    fn parse_and_evaluate() {
        let gts = parse_ground_truth(GT).unwrap();
        let preds = parse_predictions(PRED).unwrap();
        assert_eq!(gts.len(), 2);
        assert_eq!(gts[0].image_id, "1");
        assert_eq!(gts[0].image_size, Some((100.0, 100.0)));
        assert_eq!(preds.len(), 3);
        let out = evaluate(&preds, &gts, &EvalOptions::default());
        assert_eq!(out.summary.ap_50_per_class["car"], Some(1.0));
        assert_eq!(out.summary.ap_50_per_class["bus"], Some(0.0));
        assert_eq!(out.summary.map_50, Some(0.5));
        assert_eq!(out.confusion_raw.get("bus", "car"), 1.0);
        assert!(out.label_stats.is_some());
    }

    #[test]
    fn bad_line_reports_line_number() {
        let err = parse_predictions("{\"image_id\":1,\"dets\":[]}\n{\"image_id\":2,\"dets\":[{\"box\":[0,0,0,1],\"label\":\"x\",\"conf\":1}]}")
            .unwrap_err();
        assert_eq!(err.line(), 2);
        assert_eq!(err.path(), "dets[0].box.w");
    }
}
