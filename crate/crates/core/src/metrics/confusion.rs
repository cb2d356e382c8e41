use std::collections::HashMap;

use serde::Serialize;

use super::{confidence_order, region_iou, GroundTruthSample, IouKind, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConfusionMode {
    Raw,
    RowNormalized,
}

/// Rows are actual classes, columns predicted classes; the last row and
/// column are background.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub mode: ConfusionMode,
    pub cells: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn background(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, actual: &str, predicted: &str) -> f64 {
        let idx = |c: &str| self.classes.iter().position(|k| k == c).unwrap_or(self.classes.len());
        self.cells[idx(actual)][idx(predicted)]
    }

    pub fn normalized(&self) -> Self {
        let cells = self
            .cells
            .iter()
            .map(|row| {
                let sum: f64 = row.iter().sum();
                if sum == 0.0 {
                    row.clone()
                } else {
                    row.iter().map(|v| v / sum).collect()
                }
            })
            .collect();
        Self { classes: self.classes.clone(), mode: ConfusionMode::RowNormalized, cells }
    }

    pub fn to_csv(&self) -> String {
        let mut labels = self.classes.clone();
        labels.push("background".into());
        let mut out = format!("actual\\predicted,{}\n", labels.join(","));
        for (label, row) in labels.iter().zip(&self.cells) {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{label},{}\n", vals.join(",")));
        }
        out
    }
}

/// Class-agnostic greedy matching so that class swaps land off the diagonal.
/// Predictions below `conf_thresh` are ignored.
pub fn confusion_matrix(
    preds: &[Prediction],
    gts: &[GroundTruthSample],
    classes: &[String],
    conf_thresh: f64,
    iou_thresh: f64,
    kind: IouKind,
    mode: ConfusionMode,
) -> ConfusionMatrix {
    let n = classes.len();
    let class_idx: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let idx = |c: &str| class_idx.get(c).copied().unwrap_or(n);
    let mut cells = vec![vec![0.0; n + 1]; n + 1];

    let by_image: HashMap<&str, usize> = gts.iter().enumerate().map(|(i, g)| (g.image_id.as_str(), i)).collect();
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.objects.len()]).collect();
    for k in confidence_order(preds) {
        let p = &preds[k];
        if p.confidence < conf_thresh {
            continue;
        }
        let hit = by_image.get(p.image_id.as_str()).and_then(|&s| {
            let mut best: Option<(usize, f64)> = None;
            for (j, o) in gts[s].objects.iter().enumerate() {
                if matched[s][j] {
                    continue;
                }
                let iou = region_iou(kind, &p.bbox, p.mask.as_ref(), &o.bbox, o.mask.as_ref());
                if iou >= iou_thresh && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            best.map(|(j, _)| (s, j))
        });
        match hit {
            Some((s, j)) => {
                matched[s][j] = true;
                cells[idx(&gts[s].objects[j].class)][idx(&p.class)] += 1.0;
            }
            None => cells[n][idx(&p.class)] += 1.0,
        }
    }
    for (s, g) in gts.iter().enumerate() {
        for (j, o) in g.objects.iter().enumerate() {
            if !matched[s][j] {
                cells[idx(&o.class)][n] += 1.0;
            }
        }
    }
    let raw = ConfusionMatrix { classes: classes.to_vec(), mode: ConfusionMode::Raw, cells };
    match mode {
        ConfusionMode::Raw => raw,
        ConfusionMode::RowNormalized => raw.normalized(),
    }
}
