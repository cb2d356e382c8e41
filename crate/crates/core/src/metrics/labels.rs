//! Ground-truth label statistics: class frequencies plus centroid and size
//! distributions in image-normalized coordinates.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::GroundTruthSample;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelStatsError {
    #[error("image `{0}` has no width/height; cannot normalize")]
    MissingImageSize(String),
}

/// Equal-width bins over [0, 1]; 1.0 lands in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    fn new(bins: usize) -> Self {
        Self { counts: vec![0; bins.max(1)] }
    }

    fn add(&mut self, v: f64) {
        let n = self.counts.len();
        let k = ((v.clamp(0.0, 1.0) * n as f64) as usize).min(n - 1);
        self.counts[k] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelStats {
    pub counts: BTreeMap<String, u64>,
    /// (class, [cx, cy, w, h]) per object, normalized by image size.
    pub boxes: Vec<(String, [f64; 4])>,
    pub x: Histogram,
    pub y: Histogram,
    pub w: Histogram,
    pub h: Histogram,
}

pub fn label_stats(gts: &[GroundTruthSample], bins: usize) -> Result<LabelStats, LabelStatsError> {
    let mut stats = LabelStats {
        counts: BTreeMap::new(),
        boxes: Vec::new(),
        x: Histogram::new(bins),
        y: Histogram::new(bins),
        w: Histogram::new(bins),
        h: Histogram::new(bins),
    };
    for g in gts {
        if g.objects.is_empty() {
            continue;
        }
        let Some((iw, ih)) = g.image_size.filter(|(w, h)| *w > 0.0 && *h > 0.0) else {
            return Err(LabelStatsError::MissingImageSize(g.image_id.clone()));
        };
        for o in &g.objects {
            *stats.counts.entry(o.class.clone()).or_insert(0) += 1;
            let (cx, cy) = o.bbox.center();
            let v = [cx / iw, cy / ih, o.bbox.w / iw, o.bbox.h / ih];
            stats.x.add(v[0]);
            stats.y.add(v[1]);
            stats.w.add(v[2]);
            stats.h.add(v[3]);
            stats.boxes.push((o.class.clone(), v));
        }
    }
    Ok(stats)
}

/// Class counts only; needs no image sizes.
pub fn class_counts(gts: &[GroundTruthSample]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for o in gts.iter().flat_map(|g| &g.objects) {
        *counts.entry(o.class.clone()).or_insert(0) += 1;
    }
    counts
}
