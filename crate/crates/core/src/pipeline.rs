//! Streaming engine: frames in, per-window emission reports out.
//!
//! Memory is bounded by the live tracks plus the vehicles of windows not yet
//! reported. A finished vehicle's registry lookup runs on a worker pool while
//! later frames are processed; a window is reported once no live track can
//! still end inside it and all its lookups have resolved.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;
use tracing::{info, warn};

use crate::classmap::{ClassMapError, VehicleCounter};
use crate::config::PipelineConfig;
use crate::emission::{aggregate, estimate, EstimateInput, SegmentReport, VehicleEmissionEstimate, Window};
use crate::ingest::{FrameRecord, IngestError};
use crate::plate::{consensus_with, ConsensusConfig, ConsensusStatus, PlateConsensus};
use crate::registry::{LookupPool, RegistryClient, RegistryError, Ticket, VehicleRecord};
use crate::tracker::{PathPoint, Track, TrackEmission, Tracker, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error("frame {frame}: {source}")]
    ClassMap { frame: u64, source: ClassMapError },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

/// A track that has left the scene, with its counted category and plate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinishedVehicle {
    pub track_id: u64,
    pub category: String,
    pub plate: Option<String>,
    pub plate_status: ConsensusStatus,
    pub plate_support: usize,
    pub plate_score: f64,
    pub first_seen_ms: u64,
    pub last_seen_ms: u64,
    #[serde(skip)]
    pub path: Vec<PathPoint>,
    #[serde(skip)]
    pub consensus: PlateConsensus,
}

pub fn finalize_track(track: Track, category: String, cfg: &ConsensusConfig) -> FinishedVehicle {
    let consensus = consensus_with(&track.plate_reads, cfg);
    FinishedVehicle {
        track_id: track.id,
        category,
        plate: consensus.plate.as_ref().map(|p| p.as_str().to_string()),
        plate_status: consensus.status,
        plate_support: consensus.support,
        plate_score: consensus.score,
        first_seen_ms: track.first_timestamp().unwrap_or(0),
        last_seen_ms: track.last_timestamp().unwrap_or(0),
        path: track.centroid_path,
        consensus,
    }
}

/// Tracking, category counting and plate consensus.
#[derive(Debug)]
pub struct TrackStage {
    tracker: Tracker,
    counter: VehicleCounter,
    retired: BTreeMap<String, u64>,
    categories: crate::classmap::CategoryMap,
    consensus: ConsensusConfig,
    peak_live_tracks: usize,
}

impl TrackStage {
    pub fn new(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let mut counter = VehicleCounter::new();
        let mut retired = BTreeMap::new();
        for c in cfg.categories.categories() {
            counter.register_category(&c);
            retired.insert(c, 0);
        }
        Ok(Self {
            tracker: Tracker::new(cfg.tracker.clone())?,
            counter,
            retired,
            categories: cfg.categories.clone(),
            consensus: cfg.consensus.clone(),
            peak_live_tracks: 0,
        })
    }

    /// Emissions for this frame plus the vehicles that finished on it.
    pub fn push(&mut self, frame: &FrameRecord) -> Result<(Vec<TrackEmission>, Vec<FinishedVehicle>), PipelineError> {
        let emissions = self.tracker.step(frame)?;
        for e in &emissions {
            let category = self
                .categories
                .map_label(&e.detection.label)
                .map_err(|source| PipelineError::ClassMap { frame: frame.frame_index, source })?;
            self.counter.record(e.track_id, &category);
        }
        self.peak_live_tracks = self.peak_live_tracks.max(self.tracker.live_tracks().len());
        let removed = self.tracker.drain_removed();
        Ok((emissions, self.retire(removed)))
    }

    /// Finishes every live track.
    pub fn finish(&mut self) -> (Vec<FinishedVehicle>, BTreeMap<String, u64>) {
        let tracks = self.tracker.drain_all();
        let done = self.retire(tracks);
        (done, self.unique_counts())
    }

    fn retire(&mut self, tracks: Vec<Track>) -> Vec<FinishedVehicle> {
        tracks
            .into_iter()
            .filter(|t| t.ever_active)
            .map(|t| {
                let category = self.counter.retire(t.id).unwrap_or_else(|| {
                    self.categories.map_label(t.majority_label()).unwrap_or_else(|_| t.majority_label().to_string())
                });
                *self.retired.entry(category.clone()).or_insert(0) += 1;
                finalize_track(t, category, &self.consensus)
            })
            .collect()
    }

    /// Distinct vehicles per category so far, finished or live.
    pub fn unique_counts(&self) -> BTreeMap<String, u64> {
        let mut out = self.retired.clone();
        for (c, n) in self.counter.counts() {
            *out.entry(c).or_insert(0) += n;
        }
        out
    }

    pub fn live_tracks(&self) -> &[Track] {
        self.tracker.live_tracks()
    }

    pub fn peak_live_tracks(&self) -> usize {
        self.peak_live_tracks
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineStats {
    pub frames: u64,
    pub detections: u64,
    pub vehicles: u64,
    pub lookups: u64,
    pub lookup_failures: u64,
    pub peak_live_tracks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub unique_counts: BTreeMap<String, u64>,
    pub total_co2_grams: f64,
    pub stats: PipelineStats,
    pub windows: Vec<SegmentReport>,
}

impl EstimateReport {
    /// One row per vehicle plus a trailing totals row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "window_start_ms,window_end_ms,track_id,plate,plate_status,category,vehicle_class,fuel_type,distance_km,dwell_s,distance_method,factor_g_per_km,factor_source,co2_grams\n",
        );
        for w in &self.windows {
            for e in &w.estimates {
                out.push_str(&format!(
                    "{},{},{},{},{:?},{},{},{},{},{},{:?},{},{:?},{}\n",
                    w.window.start_ms,
                    w.window.end_ms,
                    e.track_id,
                    e.plate.as_deref().unwrap_or(""),
                    e.plate_status,
                    e.category,
                    csv_field(e.vehicle_class.as_deref().unwrap_or("")),
                    e.fuel_type.as_deref().unwrap_or(""),
                    e.distance_km,
                    e.dwell_s,
                    e.distance_method,
                    e.factor_g_per_km,
                    e.factor_source,
                    e.co2_grams
                ));
            }
        }
        let (start, end) = match (self.windows.first(), self.windows.last()) {
            (Some(a), Some(b)) => (a.window.start_ms.to_string(), b.window.end_ms.to_string()),
            _ => (String::new(), String::new()),
        };
        let distance: f64 = self.windows.iter().flat_map(|w| &w.estimates).map(|e| e.distance_km).sum();
        out.push_str(&format!("{start},{end},TOTAL,,,,,,{distance},,,,,{}\n", self.total_co2_grams));
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct Pending {
    vehicle: FinishedVehicle,
    ticket: Option<Ticket>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    stage: TrackStage,
    pool: Option<LookupPool>,
    pending: VecDeque<Pending>,
    window_ms: Option<u64>,
    /// Estimates keyed by window index (0 when unwindowed).
    ready: BTreeMap<u64, Vec<VehicleEmissionEstimate>>,
    next_window: Option<u64>,
    first_ts: Option<u64>,
    last_ts: u64,
    stats: PipelineStats,
}

impl Pipeline {
    /// Builds the registry client from `cfg.registry`, if any.
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let client = match &cfg.registry {
            Some(r) => Some(Arc::new(RegistryClient::new(r.clone())?)),
            None => {
                info!("no registry configured; using category default factors");
                None
            }
        };
        Self::with_client(cfg, client)
    }

    pub fn with_client(cfg: PipelineConfig, client: Option<Arc<RegistryClient>>) -> Result<Self, PipelineError> {
        let stage = TrackStage::new(&cfg)?;
        let pool = client.map(|c| LookupPool::new(c, cfg.max_in_flight));
        let window_ms = cfg.window_s.map(|s| ((s * 1000.0).round() as u64).max(1));
        Ok(Self {
            cfg,
            stage,
            pool,
            pending: VecDeque::new(),
            window_ms,
            ready: BTreeMap::new(),
            next_window: None,
            first_ts: None,
            last_ts: 0,
            stats: PipelineStats::default(),
        })
    }

    pub fn stats(&self) -> &PipelineStats {
        &self.stats
    }

    /// Feeds one frame; returns the windows that became complete.
    pub fn push(&mut self, frame: &FrameRecord) -> Result<Vec<SegmentReport>, PipelineError> {
        self.stats.frames += 1;
        self.stats.detections += frame.detections.len() as u64;
        self.first_ts.get_or_insert(frame.timestamp_ms);
        self.last_ts = frame.timestamp_ms;
        if let (Some(l), None) = (self.window_ms, self.next_window) {
            self.next_window = Some(frame.timestamp_ms / l);
        }
        let (_, finished) = self.stage.push(frame)?;
        self.stats.peak_live_tracks = self.stage.peak_live_tracks();
        for v in finished {
            self.enqueue(v);
        }
        self.resolve(None);

        let Some(l) = self.window_ms else { return Ok(Vec::new()) };
        let watermark =
            self.stage.live_tracks().iter().filter_map(|t| t.last_timestamp()).min().unwrap_or(frame.timestamp_ms).min(frame.timestamp_ms);
        Ok(self.flush_windows(|k| (k + 1) * l <= watermark))
    }

    /// Ends the stream and returns every remaining window.
    pub fn finish(mut self) -> (Vec<SegmentReport>, EstimateReport) {
        let (finished, counts) = self.stage.finish();
        for v in finished {
            self.enqueue(v);
        }
        self.resolve(Some(u64::MAX));
        let reports = match self.window_ms {
            Some(l) => {
                let last = self.last_ts / l;
                self.flush_windows(|k| k <= last)
            }
            None => {
                let estimates = self.ready.remove(&0).unwrap_or_default();
                let window = Window { start_ms: self.first_ts.unwrap_or(0), end_ms: self.last_ts };
                vec![self.report(estimates, window)]
            }
        };
        let summary = EstimateReport { unique_counts: counts, total_co2_grams: 0.0, stats: self.stats.clone(), windows: Vec::new() };
        (reports, summary)
    }

    /// Runs a whole stream and collects every window into one report.
    pub fn run<I>(cfg: PipelineConfig, client: Option<Arc<RegistryClient>>, frames: I) -> Result<EstimateReport, PipelineError>
    where
        I: IntoIterator<Item = Result<FrameRecord, PipelineError>>,
    {
        let mut p = Self::with_client(cfg, client)?;
        let mut windows = Vec::new();
        for f in frames {
            windows.extend(p.push(&f?)?);
        }
        let (rest, mut report) = p.finish();
        windows.extend(rest);
        report.total_co2_grams = windows.iter().fold(0.0, |acc, w| acc + w.total_co2_grams);
        report.windows = windows;
        Ok(report)
    }

    fn enqueue(&mut self, vehicle: FinishedVehicle) {
        self.stats.vehicles += 1;
        let ticket = match (&self.pool, &vehicle.consensus.plate) {
            (Some(pool), Some(plate)) => {
                self.stats.lookups += 1;
                Some(pool.submit(plate.clone()))
            }
            _ => None,
        };
        self.pending.push_back(Pending { vehicle, ticket });
    }

    /// Moves finished lookups into `ready`. Vehicles last seen before
    /// `block_before` are waited for.
    fn resolve(&mut self, block_before: Option<u64>) {
        let mut keep = VecDeque::with_capacity(self.pending.len());
        while let Some(mut p) = self.pending.pop_front() {
            let outcome = match p.ticket.take() {
                None => Some(None),
                Some(t) => match t.try_take() {
                    Some(r) => Some(Some(r)),
                    None if block_before.is_some_and(|b| p.vehicle.last_seen_ms < b) => Some(Some(t.wait())),
                    None => {
                        p.ticket = Some(t);
                        None
                    }
                },
            };
            match outcome {
                Some(result) => {
                    let record = result.and_then(|r| self.accept(&p.vehicle, r));
                    self.settle(p.vehicle, record.as_ref());
                }
                None => keep.push_back(p),
            }
        }
        self.pending = keep;
    }

    fn accept(&mut self, v: &FinishedVehicle, r: Result<VehicleRecord, RegistryError>) -> Option<VehicleRecord> {
        match r {
            Ok(rec) => Some(rec),
            Err(e) => {
                self.stats.lookup_failures += 1;
                warn!(track = v.track_id, plate = v.plate.as_deref().unwrap_or(""), error = %e, "registry lookup failed; using category default");
                None
            }
        }
    }

    fn settle(&mut self, v: FinishedVehicle, record: Option<&VehicleRecord>) {
        let est = estimate(
            &EstimateInput {
                track_id: v.track_id,
                path: &v.path,
                plate: v.plate.clone(),
                plate_status: v.plate_status,
                record,
                category: &v.category,
            },
            &self.cfg.table,
            &self.cfg.category_defaults,
            &self.cfg.calibration,
        );
        let key = self.window_ms.map_or(0, |l| est.last_seen_ms / l);
        self.ready.entry(key).or_default().push(est);
    }

    fn flush_windows(&mut self, done: impl Fn(u64) -> bool) -> Vec<SegmentReport> {
        let (Some(l), Some(mut k)) = (self.window_ms, self.next_window) else { return Vec::new() };
        let mut out = Vec::new();
        while done(k) {
            self.resolve(Some((k + 1) * l));
            let estimates = self.ready.remove(&k).unwrap_or_default();
            out.push(self.report(estimates, Window { start_ms: k * l, end_ms: (k + 1) * l }));
            k += 1;
        }
        self.next_window = Some(k);
        out
    }

    fn report(&self, mut estimates: Vec<VehicleEmissionEstimate>, window: Window) -> SegmentReport {
        estimates.sort_by_key(|e| e.track_id);
        let mut counts: BTreeMap<String, u64> = self.cfg.categories.categories().into_iter().map(|c| (c, 0)).collect();
        for e in &estimates {
            *counts.entry(e.category.clone()).or_insert(0) += 1;
        }
        aggregate(estimates, counts, window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::FactorSource;
    use crate::scenario::{Scenario, ScenarioConfig};

    fn frames(s: &Scenario) -> impl Iterator<Item = Result<FrameRecord, PipelineError>> + '_ {
        s.frames().map(Ok)
    }

    #[test]
    fn zero_noise_matches_ground_truth_without_registry() {
        let s = Scenario::new(ScenarioConfig { n_vehicles: 12, duration_s: 20.0, ..Default::default() }).unwrap();
        let gt = s.ground_truth();
        let report = Pipeline::run(PipelineConfig::default(), None, frames(&s)).unwrap();
        assert_eq!(report.stats.vehicles as usize, gt.vehicles.len());
        let nonzero: BTreeMap<_, _> = report.unique_counts.iter().filter(|(_, &n)| n > 0).map(|(k, v)| (k.clone(), *v)).collect();
        assert_eq!(nonzero, gt.unique_counts);
        let est: Vec<_> = report.windows.iter().flat_map(|w| &w.estimates).collect();
        assert!(est.iter().all(|e| e.factor_source == FactorSource::CategoryDefault));
        let mut plates: Vec<_> = est.iter().map(|e| e.plate.clone().unwrap()).collect();
        plates.sort();
        let mut gt_plates: Vec<_> = gt.vehicles.iter().map(|v| v.plate.clone()).collect();
        gt_plates.sort();
        assert_eq!(plates, gt_plates);
        for v in &gt.vehicles {
            let e = est.iter().find(|e| e.plate.as_deref() == Some(v.plate.as_str())).unwrap();
            assert!((e.distance_km - v.distance_km).abs() <= 1e-9 * v.distance_km.max(1e-9));
        }
    }

    #[test]
    fn windows_partition_the_vehicles() {
        let s = Scenario::new(ScenarioConfig { n_vehicles: 30, duration_s: 40.0, seed: 3, ..Default::default() }).unwrap();
        let whole = Pipeline::run(PipelineConfig::default(), None, frames(&s)).unwrap();
        let cfg = PipelineConfig { window_s: Some(10.0), ..Default::default() };
        let windowed = Pipeline::run(cfg, None, frames(&s)).unwrap();
        assert!(windowed.windows.len() >= 4);
        for w in &windowed.windows {
            assert_eq!(w.window.end_ms - w.window.start_ms, 10_000);
            assert!(w.estimates.iter().all(|e| e.last_seen_ms >= w.window.start_ms && e.last_seen_ms < w.window.end_ms));
        }
        let mut a: Vec<_> = whole.windows.iter().flat_map(|w| w.estimates.clone()).collect();
        let mut b: Vec<_> = windowed.windows.iter().flat_map(|w| w.estimates.clone()).collect();
        a.sort_by_key(|e| e.track_id);
        b.sort_by_key(|e| e.track_id);
        assert_eq!(a, b);
        assert!((whole.total_co2_grams - windowed.total_co2_grams).abs() < 1e-9 * whole.total_co2_grams);
        assert_eq!(whole.unique_counts, windowed.unique_counts);
    }

    #[test]
    fn windows_are_emitted_while_streaming() {
        let s = Scenario::new(ScenarioConfig { n_vehicles: 30, duration_s: 60.0, ..Default::default() }).unwrap();
        let mut p = Pipeline::with_client(PipelineConfig { window_s: Some(10.0), ..Default::default() }, None).unwrap();
        let mut early = 0;
        for f in s.frames() {
            early += p.push(&f).unwrap().len();
        }
        assert!(early >= 4, "only {early} windows emitted before finish");
    }

    #[test]
    fn csv_has_totals_row() {
        let s = Scenario::new(ScenarioConfig { n_vehicles: 3, duration_s: 10.0, ..Default::default() }).unwrap();
        let r = Pipeline::run(PipelineConfig::default(), None, frames(&s)).unwrap();
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 2 + r.stats.vehicles as usize);
        assert!(lines.last().unwrap().contains(",TOTAL,"));
    }

    #[test]
    fn strict_classmap_rejects_unknown_label() {
        let mut cfg = PipelineConfig::default();
        cfg.categories.set_unmapped(crate::classmap::UnmappedPolicy::Reject);
        let s = Scenario::new(ScenarioConfig {
            n_vehicles: 1,
            duration_s: 2.0,
            vehicles: vec![crate::scenario::VehicleOverride { raw_label: Some("hovercraft".into()), ..Default::default() }],
            ..Default::default()
        })
        .unwrap();
        let err = Pipeline::run(cfg, None, frames(&s)).unwrap_err();
        assert!(matches!(err, PipelineError::ClassMap { .. }));
    }
}
