//! ByteTrack-style multi-object tracker.
//!
//! Each frame runs two association passes. High-confidence detections are
//! matched against every live track; leftover low-confidence detections then
//! get a second chance against tracks that are still `Active`. Both passes
//! use minimum-cost assignment on `1 - IoU` with an IoU gate.

pub mod assignment;
pub mod kalman;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ingest::{BoundingBox, Detection, FrameRecord, PlateCandidate};
use assignment::min_cost_assignment;
pub use kalman::{KalmanConfig, KalmanState};

/// Intersection over union of two axis-aligned boxes.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackState {
    Tentative,
    Active,
    Lost,
    Removed,
}

impl TrackState {
    pub fn can_transition_to(self, next: TrackState) -> bool {
        use TrackState::*;
        matches!((self, next), (Tentative, Active) | (Tentative, Removed) | (Active, Lost) | (Lost, Active) | (Lost, Removed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub cx: f64,
    pub cy: f64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub kalman: KalmanState,
    /// Raw detector label → number of frames it was observed with.
    pub label_votes: BTreeMap<String, u32>,
    pub last_label: String,
    pub last_box: BoundingBox,
    pub frames_since_update: u32,
    /// Consecutive matched frames.
    pub hits: u32,
    pub centroid_path: Vec<PathPoint>,
    pub plate_reads: Vec<PlateCandidate>,
    /// Set once the track has reached `Active`; only such tracks are counted.
    pub ever_active: bool,
}

impl Track {
    fn spawn(id: u64, det: &Detection, timestamp_ms: u64, cfg: &KalmanConfig) -> Self {
        let mut t = Self {
            id,
            state: TrackState::Tentative,
            kalman: KalmanState::initiate(&det.bbox, cfg),
            label_votes: BTreeMap::new(),
            last_label: det.label.clone(),
            last_box: det.bbox,
            frames_since_update: 0,
            hits: 1,
            centroid_path: Vec::new(),
            plate_reads: Vec::new(),
            ever_active: false,
        };
        t.absorb(det, timestamp_ms);
        t
    }

    fn absorb(&mut self, det: &Detection, timestamp_ms: u64) {
        *self.label_votes.entry(det.label.to_lowercase()).or_insert(0) += 1;
        self.last_label = det.label.to_lowercase();
        self.last_box = det.bbox;
        let (cx, cy) = det.bbox.center();
        let point = PathPoint { cx, cy, timestamp_ms };
        match self.centroid_path.last_mut() {
            // Frames sharing a timestamp collapse to the latest position.
            Some(last) if last.timestamp_ms >= timestamp_ms => *last = point,
            _ => self.centroid_path.push(point),
        }
        self.plate_reads.extend(det.plate_candidates.iter().cloned());
    }

    fn transition(&mut self, next: TrackState) {
        debug_assert!(self.state.can_transition_to(next), "{:?} -> {:?}", self.state, next);
        self.state = next;
        if next == TrackState::Active {
            self.ever_active = true;
        }
    }

    /// Label with the most votes; ties go to the most recent label.
    pub fn majority_label(&self) -> &str {
        let best = self.label_votes.values().copied().max().unwrap_or(0);
        if self.label_votes.get(&self.last_label).copied() == Some(best) {
            return &self.last_label;
        }
        self.label_votes.iter().find(|(_, &n)| n == best).map(|(l, _)| l.as_str()).unwrap_or(&self.last_label)
    }

    pub fn first_timestamp(&self) -> Option<u64> {
        self.centroid_path.first().map(|p| p.timestamp_ms)
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.centroid_path.last().map(|p| p.timestamp_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub det_conf_floor: f64,
    pub high_score_thresh: f64,
    pub match_iou_thresh: f64,
    pub low_match_iou_thresh: f64,
    pub track_buffer_frames: u32,
    pub min_hits_to_activate: u32,
    pub kalman: KalmanConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            det_conf_floor: 0.25,
            high_score_thresh: 0.5,
            match_iou_thresh: 0.45,
            low_match_iou_thresh: 0.3,
            track_buffer_frames: 30,
            min_hits_to_activate: 2,
            kalman: KalmanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error("frame {got} does not follow frame {previous}")]
    OutOfOrderFrame { previous: u64, got: u64 },
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(TrackerError::InvalidConfig(format!("{name}={v} must lie in (0,1)")))
            }
        };
        unit("det_conf_floor", self.det_conf_floor)?;
        unit("high_score_thresh", self.high_score_thresh)?;
        unit("match_iou_thresh", self.match_iou_thresh)?;
        unit("low_match_iou_thresh", self.low_match_iou_thresh)?;
        if self.low_match_iou_thresh > self.match_iou_thresh {
            return Err(TrackerError::InvalidConfig("low_match_iou_thresh exceeds match_iou_thresh".into()));
        }
        if self.track_buffer_frames == 0 || self.min_hits_to_activate == 0 {
            return Err(TrackerError::InvalidConfig("track_buffer_frames and min_hits_to_activate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// (track index, detection index) pairs, both into the caller's slices.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// One gated minimum-cost pass between boxes. Returns matched index pairs.
pub fn match_boxes(track_boxes: &[BoundingBox], det_boxes: &[BoundingBox], iou_thresh: f64) -> Vec<(usize, usize)> {
    if track_boxes.is_empty() || det_boxes.is_empty() {
        return Vec::new();
    }
    let ious: Vec<Vec<f64>> = track_boxes.iter().map(|t| det_boxes.iter().map(|d| box_iou(t, d)).collect()).collect();
    // Gated pairs cost more than any pair of valid ones combined, so the solver
    // first maximizes the number of admissible matches.
    let gated = 1.0 + 2.0 * track_boxes.len().max(det_boxes.len()) as f64;
    let cost: Vec<Vec<f64>> =
        ious.iter().map(|row| row.iter().map(|&iou| if iou >= iou_thresh { 1.0 - iou } else { gated }).collect()).collect();
    min_cost_assignment(&cost).into_iter().filter(|&(t, d)| ious[t][d] >= iou_thresh).collect()
}

fn complement(n: usize, taken: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut used = vec![false; n];
    for i in taken {
        used[i] = true;
    }
    (0..n).filter(|&i| !used[i]).collect()
}

/// Two-stage association against the tracks' predicted boxes.
///
/// `tracks` should already be predicted for this frame and ordered by id;
/// detections are expected to be pre-filtered at `det_conf_floor`.
pub fn associate(tracks: &[Track], detections: &[Detection], cfg: &TrackerConfig) -> Assignment {
    let live: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].state != TrackState::Removed).collect();
    let high: Vec<usize> = (0..detections.len()).filter(|&j| detections[j].confidence >= cfg.high_score_thresh).collect();
    let low: Vec<usize> = (0..detections.len()).filter(|&j| detections[j].confidence < cfg.high_score_thresh).collect();

    let predicted: Vec<BoundingBox> = tracks.iter().map(|t| t.kalman.predicted_box()).collect();

    let first = match_boxes(
        &live.iter().map(|&i| predicted[i]).collect::<Vec<_>>(),
        &high.iter().map(|&j| detections[j].bbox).collect::<Vec<_>>(),
        cfg.match_iou_thresh,
    );
    let mut matches: Vec<(usize, usize)> = first.iter().map(|&(t, d)| (live[t], high[d])).collect();

    let mut track_taken = vec![false; tracks.len()];
    for &(t, _) in &matches {
        track_taken[t] = true;
    }
    let second_tracks: Vec<usize> =
        live.iter().copied().filter(|&i| !track_taken[i] && tracks[i].state == TrackState::Active).collect();
    let second = match_boxes(
        &second_tracks.iter().map(|&i| predicted[i]).collect::<Vec<_>>(),
        &low.iter().map(|&j| detections[j].bbox).collect::<Vec<_>>(),
        cfg.low_match_iou_thresh,
    );
    matches.extend(second.iter().map(|&(t, d)| (second_tracks[t], low[d])));
    matches.sort_unstable();

    let unmatched_tracks =
        complement(tracks.len(), matches.iter().map(|m| m.0)).into_iter().filter(|&i| tracks[i].state != TrackState::Removed).collect();
    let unmatched_detections = complement(detections.len(), matches.iter().map(|m| m.1));
    Assignment { matches, unmatched_tracks, unmatched_detections }
}

/// A (track, detection) pair reported for a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEmission {
    pub track_id: u64,
    pub detection: Detection,
    /// True on the frame where the track first became `Active`.
    pub activated: bool,
}

/// Per-stream tracker. Owns live tracks; finished ones are handed back via
/// [`Tracker::drain_removed`] and [`Tracker::finish`].
#[derive(Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    removed: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Self { cfg, tracks: Vec::new(), removed: Vec::new(), next_id: 1, last_frame: None })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn live_tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn step(&mut self, frame: &FrameRecord) -> Result<Vec<TrackEmission>, TrackerError> {
        if let Some(previous) = self.last_frame {
            if frame.frame_index <= previous {
                return Err(TrackerError::OutOfOrderFrame { previous, got: frame.frame_index });
            }
        }
        self.last_frame = Some(frame.frame_index);

        let owned: Vec<Detection> =
            frame.detections.iter().filter(|d| d.confidence >= self.cfg.det_conf_floor).cloned().collect();
        for t in &mut self.tracks {
            t.kalman.predict(&self.cfg.kalman);
        }
        let assignment = associate(&self.tracks, &owned, &self.cfg);

        let mut emissions = Vec::new();
        for &(ti, di) in &assignment.matches {
            let det = &owned[di];
            let track = &mut self.tracks[ti];
            track.kalman.update(&det.bbox, &self.cfg.kalman);
            track.absorb(det, frame.timestamp_ms);
            track.frames_since_update = 0;
            track.hits += 1;
            let mut activated = false;
            match track.state {
                TrackState::Tentative if track.hits >= self.cfg.min_hits_to_activate => {
                    track.transition(TrackState::Active);
                    activated = true;
                }
                TrackState::Lost => track.transition(TrackState::Active),
                _ => {}
            }
            if track.state == TrackState::Active {
                emissions.push(TrackEmission { track_id: track.id, detection: det.clone(), activated });
            }
        }

        for &ti in &assignment.unmatched_tracks {
            let track = &mut self.tracks[ti];
            track.frames_since_update += 1;
            track.hits = 0;
            match track.state {
                TrackState::Tentative => track.transition(TrackState::Removed),
                TrackState::Active => track.transition(TrackState::Lost),
                TrackState::Lost if track.frames_since_update > self.cfg.track_buffer_frames => {
                    track.transition(TrackState::Removed)
                }
                _ => {}
            }
        }

        for &di in &assignment.unmatched_detections {
            let det = &owned[di];
            if det.confidence < self.cfg.high_score_thresh {
                continue;
            }
            let mut track = Track::spawn(self.next_id, det, frame.timestamp_ms, &self.cfg.kalman);
            self.next_id += 1;
            if track.hits >= self.cfg.min_hits_to_activate {
                track.transition(TrackState::Active);
                emissions.push(TrackEmission { track_id: track.id, detection: det.clone(), activated: true });
            }
            self.tracks.push(track);
        }

        let (gone, kept): (Vec<Track>, Vec<Track>) =
            std::mem::take(&mut self.tracks).into_iter().partition(|t| t.state == TrackState::Removed);
        self.tracks = kept;
        self.removed.extend(gone);
        emissions.sort_by_key(|e| e.track_id);
        Ok(emissions)
    }

    /// Tracks that reached `Removed` since the previous call, in id order.
    pub fn drain_removed(&mut self) -> Vec<Track> {
        let mut out = std::mem::take(&mut self.removed);
        out.sort_by_key(|t| t.id);
        out
    }

    /// Ends the stream: every remaining track is returned, in id order.
    pub fn finish(mut self) -> Vec<Track> {
        self.drain_all()
    }

    /// Removed and live tracks alike, leaving the tracker empty.
    pub fn drain_all(&mut self) -> Vec<Track> {
        let mut out = self.drain_removed();
        out.append(&mut self.tracks);
        out.sort_by_key(|t| t.id);
        out
    }
}
