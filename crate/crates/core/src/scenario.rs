//! Synthetic traffic with exact ground truth.
//!
//! Vehicles drive horizontally in fixed-height lanes, alternating direction
//! per lane. A lane takes its next vehicle once the previous one has left the
//! frame, so boxes never overlap. Frame noise (dropout, jitter, OCR
//! corruption, confidences) is drawn from a per-frame ChaCha stream, so any
//! frame can be regenerated independently and every run is reproducible.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ConfigMap};
use crate::emission::{CategoryDefaults, EmissionFactorTable, FactorSource};
use crate::ingest::{BoundingBox, Detection, FrameRecord, PlateCandidate};
use crate::registry::VehicleRecord;

pub const LANE_HEIGHT_PX: f64 = 75.0;
const PLAN_STREAM: u64 = u64::MAX;
const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
const MAKES: &[(&str, &str)] = &[("FORD", "FOCUS"), ("VAUXHALL", "CORSA"), ("TOYOTA", "COROLLA"), ("BMW", "3 SERIES"), ("VW", "GOLF")];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-vehicle overrides; unset fields are drawn from the seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VehicleOverride {
    pub category: Option<String>,
    pub raw_label: Option<String>,
    pub vehicle_class: Option<String>,
    pub fuel_type: Option<String>,
    pub co2_g_per_km: Option<f64>,
    pub plate: Option<String>,
    pub speed_px_s: Option<f64>,
    pub width: Option<f64>,
    pub height: Option<f64>,
    pub entry_frame: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_vehicles: usize,
    pub frame_rate_hz: f64,
    pub duration_s: f64,
    pub image_w: f64,
    pub image_h: f64,
    pub meters_per_pixel: f64,
    pub speed_min_px_s: f64,
    pub speed_max_px_s: f64,
    /// Probability that a vehicle's detection is missing from a frame.
    pub dropout: f64,
    /// Std-dev in pixels of the noise added to box positions.
    pub jitter_sigma: f64,
    /// Probability that a plate read has one substituted character.
    pub ocr_corruption: f64,
    pub conf_min: f64,
    pub conf_max: f64,
    /// Share of car/truck records carrying a numeric CO₂ value.
    pub numeric_co2_fraction: f64,
    /// Vehicles that would be visible for fewer frames are not generated.
    pub min_visible_frames: u64,
    pub vehicles: Vec<VehicleOverride>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_vehicles: 20,
            frame_rate_hz: 25.0,
            duration_s: 30.0,
            image_w: 1920.0,
            image_h: 1080.0,
            meters_per_pixel: 0.05,
            speed_min_px_s: 100.0,
            speed_max_px_s: 300.0,
            dropout: 0.0,
            jitter_sigma: 0.0,
            ocr_corruption: 0.0,
            conf_min: 0.6,
            conf_max: 0.95,
            numeric_co2_fraction: 0.25,
            min_visible_frames: 10,
            vehicles: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn total_frames(&self) -> u64 {
        (self.duration_s * self.frame_rate_hz - 1e-9).ceil().max(0.0) as u64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.frame_rate_hz > 0.0) || !(self.duration_s > 0.0) {
            return bad("frame_rate_hz and duration_s must be > 0");
        }
        if !(self.image_h >= LANE_HEIGHT_PX) || !(self.image_w > 0.0) {
            return bad("image must be at least one lane high");
        }
        if !(self.meters_per_pixel > 0.0) {
            return bad("meters_per_pixel must be > 0");
        }
        if !(self.speed_min_px_s > 0.0 && self.speed_min_px_s <= self.speed_max_px_s) {
            return bad("need 0 < speed_min_px_s ≤ speed_max_px_s");
        }
        if !prob(self.dropout) || !prob(self.ocr_corruption) || !prob(self.numeric_co2_fraction) {
            return bad("dropout, ocr_corruption and numeric_co2_fraction must be in [0, 1]");
        }
        if !(self.jitter_sigma >= 0.0) {
            return bad("jitter_sigma must be ≥ 0");
        }
        if !(0.0 < self.conf_min && self.conf_min <= self.conf_max && self.conf_max <= 1.0) {
            return bad("need 0 < conf_min ≤ conf_max ≤ 1");
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.height.is_some_and(|h| !(h > 0.0 && h <= LANE_HEIGHT_PX)) || v.width.is_some_and(|w| !(w > 0.0 && w < self.image_w)) {
                return Err(ScenarioError::Invalid(format!("vehicle.{i}: size does not fit a lane")));
            }
            if v.speed_px_s.is_some_and(|s| !(s > 0.0)) {
                return Err(ScenarioError::Invalid(format!("vehicle.{i}: speed must be > 0")));
            }
        }
        Ok(())
    }

    /// Reads `scenario.*` and `vehicle.<n>.*` keys.
    pub fn from_map(map: &ConfigMap) -> Result<Self, ScenarioError> {
        let mut c = Self::default();
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = map.get_parsed(concat!("scenario.", $key))? {
                    $field = v;
                }
            };
        }
        set!(c.seed, "seed");
        set!(c.n_vehicles, "n_vehicles");
        set!(c.frame_rate_hz, "frame_rate_hz");
        set!(c.duration_s, "duration_s");
        set!(c.image_w, "image_w");
        set!(c.image_h, "image_h");
        set!(c.meters_per_pixel, "meters_per_pixel");
        set!(c.speed_min_px_s, "speed_min_px_s");
        set!(c.speed_max_px_s, "speed_max_px_s");
        set!(c.dropout, "dropout");
        set!(c.jitter_sigma, "jitter_sigma");
        set!(c.ocr_corruption, "ocr_corruption");
        set!(c.conf_min, "conf_min");
        set!(c.conf_max, "conf_max");
        set!(c.numeric_co2_fraction, "numeric_co2_fraction");
        set!(c.min_visible_frames, "min_visible_frames");

        const SCENARIO_KEYS: &[&str] = &[
            "seed", "n_vehicles", "frame_rate_hz", "duration_s", "image_w", "image_h", "meters_per_pixel", "speed_min_px_s",
            "speed_max_px_s", "dropout", "jitter_sigma", "ocr_corruption", "conf_min", "conf_max", "numeric_co2_fraction",
            "min_visible_frames",
        ];
        for (k, _) in map.section("scenario") {
            if !SCENARIO_KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey(format!("scenario.{k}")).into());
            }
        }

        let mut overrides: BTreeMap<usize, VehicleOverride> = BTreeMap::new();
        for (k, v) in map.section("vehicle") {
            let full = format!("vehicle.{k}");
            let (idx, field) = k.split_once('.').ok_or_else(|| ConfigError::UnknownKey(full.clone()))?;
            let idx: usize = idx.parse().map_err(|_| ConfigError::Value { key: full.clone(), message: "index must be an integer".into() })?;
            let o = overrides.entry(idx).or_default();
            let num = |s: &str| s.parse::<f64>().map_err(|e| ConfigError::Value { key: full.clone(), message: e.to_string() });
            match field {
                "category" => o.category = Some(v.to_lowercase()),
                "raw_label" => o.raw_label = Some(v.to_string()),
                "vehicle_class" => o.vehicle_class = Some(v.to_string()),
                "fuel_type" => o.fuel_type = Some(v.to_string()),
                "co2_g_per_km" => o.co2_g_per_km = Some(num(v)?),
                "plate" => o.plate = Some(v.to_string()),
                "speed_px_s" => o.speed_px_s = Some(num(v)?),
                "width" => o.width = Some(num(v)?),
                "height" => o.height = Some(num(v)?),
                "entry_frame" => {
                    o.entry_frame =
                        Some(v.parse().map_err(|e: std::num::ParseIntError| ConfigError::Value { key: full.clone(), message: e.to_string() })?)
                }
                _ => return Err(ConfigError::UnknownKey(full).into()),
            }
        }
        if let Some((&max, _)) = overrides.iter().next_back() {
            c.vehicles = vec![VehicleOverride::default(); max + 1];
            for (i, o) in overrides {
                c.vehicles[i] = o;
            }
            c.n_vehicles = c.n_vehicles.max(c.vehicles.len());
        }
        c.validate()?;
        Ok(c)
    }
}

/// One generated vehicle and its exact trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehiclePlan {
    pub plate: String,
    pub category: String,
    pub raw_label: String,
    pub vehicle_class: String,
    pub fuel_type: String,
    pub co2_g_per_km: Option<f64>,
    pub make: String,
    pub model: String,
    pub width: f64,
    pub height: f64,
    pub y: f64,
    pub x0: f64,
    /// Signed pixels per frame.
    pub dx_per_frame: f64,
    pub speed_px_s: f64,
    pub entry_frame: u64,
    pub visible_frames: u64,
}

impl VehiclePlan {
    fn visible_at(&self, frame: u64) -> bool {
        frame >= self.entry_frame && frame < self.entry_frame + self.visible_frames
    }

    fn box_at(&self, frame: u64) -> BoundingBox {
        let k = (frame - self.entry_frame) as f64;
        BoundingBox { x: self.x0 + self.dx_per_frame * k, y: self.y, w: self.width, h: self.height }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthVehicle {
    pub plate: String,
    pub category: String,
    pub raw_label: String,
    pub vehicle_class: String,
    pub fuel_type: String,
    pub first_frame: u64,
    pub last_frame: u64,
    pub frames: u64,
    pub speed_px_s: f64,
    pub distance_km: f64,
    pub factor_g_per_km: f64,
    pub factor_source: FactorSource,
    pub co2_grams: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub frames: u64,
    pub frame_rate_hz: f64,
    pub meters_per_pixel: f64,
    pub vehicles: Vec<GroundTruthVehicle>,
    pub unique_counts: BTreeMap<String, u64>,
    pub total_distance_km: f64,
    pub total_co2_grams: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    cfg: ScenarioConfig,
    plans: Vec<VehiclePlan>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn random_plate(rng: &mut ChaCha8Rng) -> String {
    let l = |rng: &mut ChaCha8Rng| LETTERS[rng.gen_range(0..LETTERS.len())] as char;
    let d = |rng: &mut ChaCha8Rng| char::from(b'0' + rng.gen_range(0..10u8));
    [l(rng), l(rng), d(rng), d(rng), l(rng), l(rng), l(rng)].iter().collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty choice list")
}

fn pick_class(rng: &mut ChaCha8Rng, category: &str, raw: &str) -> (String, String) {
    let fuel = |rng: &mut ChaCha8Rng| pick(rng, &["Gasoline", "Diesel"]).to_string();
    match (category, raw) {
        ("car", "suv") => ("SUV".into(), fuel(rng)),
        ("car", _) => match rng.gen_range(0..7) {
            0 => ("Subcompact".into(), "Gasoline".into()),
            1 => ("Compact".into(), fuel(rng)),
            2 => ("Midsize".into(), fuel(rng)),
            3 => ("Full-size".into(), fuel(rng)),
            4 => ("Luxury".into(), "Gasoline".into()),
            5 => ("Electric".into(), "Electric".into()),
            _ => ("Hybrid".into(), "Hybrid".into()),
        },
        ("truck", "pickup") => ("Pickup".into(), fuel(rng)),
        ("truck", "van") => ("Van".into(), "Diesel".into()),
        ("truck", _) => ("HGV".into(), "Diesel".into()),
        ("bus", _) => ("Bus".into(), "Diesel".into()),
        ("motorcycle", _) => ("Motorcycle".into(), "Gasoline".into()),
        _ => ("Unknown".into(), "Gasoline".into()),
    }
}

fn raw_labels(category: &str) -> &'static [&'static str] {
    match category {
        "car" => &["car", "suv", "taxi", "private-car", "government-car"],
        "truck" => &["truck", "van", "pickup"],
        "bus" => &["bus", "minibus"],
        "motorcycle" => &["motorbike", "motorcycle"],
        _ => &["car"],
    }
}

fn size_range(category: &str) -> ((f64, f64), (f64, f64)) {
    match category {
        "truck" => ((110.0, 160.0), (50.0, 65.0)),
        "bus" => ((150.0, 200.0), (55.0, 70.0)),
        "motorcycle" => ((60.0, 75.0), (40.0, 50.0)),
        _ => ((80.0, 120.0), (40.0, 55.0)),
    }
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ScenarioError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(PLAN_STREAM);
        let total = cfg.total_frames();
        let n_lanes = (cfg.image_h / LANE_HEIGHT_PX).floor() as usize;
        let stagger = (2.0 * cfg.frame_rate_hz).ceil() as u64;
        let mut lane_free: Vec<u64> = (0..n_lanes).map(|_| rng.gen_range(0..=stagger)).collect();
        let mut used: HashSet<String> = cfg.vehicles.iter().filter_map(|v| v.plate.clone()).collect();
        let table = EmissionFactorTable::default();
        let mut plans = Vec::with_capacity(cfg.n_vehicles);

        for i in 0..cfg.n_vehicles {
            let o = cfg.vehicles.get(i).cloned().unwrap_or_default();
            let category = o.category.clone().unwrap_or_else(|| {
                let r: f64 = rng.gen();
                match r {
                    r if r < 0.6 => "car",
                    r if r < 0.8 => "truck",
                    r if r < 0.9 => "bus",
                    _ => "motorcycle",
                }
                .to_string()
            });
            let raw_label = o.raw_label.clone().unwrap_or_else(|| pick(&mut rng, raw_labels(&category)).to_string());
            let (class, fuel) = pick_class(&mut rng, &category, &raw_label);
            let vehicle_class = o.vehicle_class.clone().unwrap_or(class);
            let fuel_type = o.fuel_type.clone().unwrap_or(fuel);
            let numeric = matches!(category.as_str(), "car" | "truck") && rng.gen_bool(cfg.numeric_co2_fraction);
            let co2_g_per_km = o.co2_g_per_km.or_else(|| {
                let base = table.factor_for(&vehicle_class, &fuel_type).ok()?;
                numeric.then(|| if base == 0.0 { 0.0 } else { ((base + rng.gen_range(-20.0..20.0)) * 10.0).round() / 10.0 })
            });
            let plate = match o.plate.clone() {
                Some(p) => p,
                None => loop {
                    let p = random_plate(&mut rng);
                    if used.insert(p.clone()) {
                        break p;
                    }
                },
            };
            let ((wl, wh), (hl, hh)) = size_range(&category);
            let width = o.width.unwrap_or_else(|| uniform(&mut rng, wl, wh).round());
            let height = o.height.unwrap_or_else(|| uniform(&mut rng, hl, hh).round());
            let speed_px_s = o.speed_px_s.unwrap_or_else(|| uniform(&mut rng, cfg.speed_min_px_s, cfg.speed_max_px_s));
            let (make, model) = *MAKES.choose(&mut rng).expect("non-empty makes");
            let gap = 1 + rng.gen_range(0..=cfg.frame_rate_hz.ceil() as u64);

            let lane = (0..n_lanes).min_by_key(|&l| (lane_free[l], l)).expect("at least one lane");
            let entry_frame = o.entry_frame.unwrap_or(lane_free[lane]);
            let step = speed_px_s / cfg.frame_rate_hz;
            let span = cfg.image_w - width;
            let crossing = (span / step + 1e-9).floor() as u64 + 1;
            lane_free[lane] = lane_free[lane].max(entry_frame + crossing + gap);
            let visible_frames = crossing.min(total.saturating_sub(entry_frame));
            if visible_frames < cfg.min_visible_frames.max(2) {
                continue;
            }
            let rightward = lane % 2 == 0;
            plans.push(VehiclePlan {
                plate,
                category,
                raw_label,
                vehicle_class,
                fuel_type,
                co2_g_per_km,
                make: make.into(),
                model: model.into(),
                width,
                height,
                y: lane as f64 * LANE_HEIGHT_PX + (LANE_HEIGHT_PX - height) / 2.0,
                x0: if rightward { 0.0 } else { span },
                dx_per_frame: if rightward { step } else { -step },
                speed_px_s,
                entry_frame,
                visible_frames,
            });
        }
        plans.sort_by_key(|p| p.entry_frame);
        Ok(Self { cfg, plans })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn plans(&self) -> &[VehiclePlan] {
        &self.plans
    }

    pub fn timestamp_ms(&self, frame: u64) -> u64 {
        (frame as f64 * 1000.0 / self.cfg.frame_rate_hz).round() as u64
    }

    /// The frame as a noisy detector would report it.
    pub fn frame(&self, frame_index: u64) -> FrameRecord {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(frame_index);
        let jitter = Normal::new(0.0, c.jitter_sigma).expect("validated sigma");
        let end = self.plans.partition_point(|p| p.entry_frame <= frame_index);
        let mut detections = Vec::new();
        for plan in self.plans[..end].iter().filter(|p| p.visible_at(frame_index)) {
            if rng.gen_bool(c.dropout) {
                continue;
            }
            let mut b = plan.box_at(frame_index);
            if c.jitter_sigma > 0.0 {
                b.x = (b.x + jitter.sample(&mut rng)).clamp(0.0, c.image_w - b.w);
                b.y = (b.y + jitter.sample(&mut rng)).clamp(0.0, c.image_h - b.h);
            }
            let mut text: Vec<u8> = plan.plate.bytes().collect();
            if rng.gen_bool(c.ocr_corruption) && !text.is_empty() {
                let pos = rng.gen_range(0..text.len());
                let orig = text[pos];
                text[pos] = loop {
                    let ch = ALNUM[rng.gen_range(0..ALNUM.len())];
                    if ch != orig {
                        break ch;
                    }
                };
            }
            let mut read = String::from_utf8(text).expect("ascii plate");
            if read.len() == 7 {
                read.insert(4, ' ');
            }
            let mut det = Detection::new(b, plan.raw_label.clone(), uniform(&mut rng, c.conf_min, c.conf_max));
            det.plate_candidates.push(PlateCandidate { text: read, confidence: uniform(&mut rng, 0.6, 0.95) });
            detections.push(det);
        }
        FrameRecord { frame_index, timestamp_ms: self.timestamp_ms(frame_index), detections }
    }

    pub fn frames(&self) -> impl Iterator<Item = FrameRecord> + '_ {
        (0..self.cfg.total_frames()).map(move |k| self.frame(k))
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let c = &self.cfg;
        let table = EmissionFactorTable::default();
        let defaults = CategoryDefaults::default();
        let mut vehicles: Vec<GroundTruthVehicle> = self
            .plans
            .iter()
            .map(|p| {
                let observed_s = (p.visible_frames - 1) as f64 / c.frame_rate_hz;
                let distance_km = p.speed_px_s * observed_s * c.meters_per_pixel / 1000.0;
                let (factor, source) = match (p.co2_g_per_km, table.factor_for(&p.vehicle_class, &p.fuel_type)) {
                    (Some(g), _) => (g, FactorSource::RegistryNumeric),
                    (None, Ok(g)) => (g, FactorSource::TableLookup),
                    (None, Err(_)) => (defaults.factor(&p.category), FactorSource::CategoryDefault),
                };
                GroundTruthVehicle {
                    plate: p.plate.clone(),
                    category: p.category.clone(),
                    raw_label: p.raw_label.clone(),
                    vehicle_class: p.vehicle_class.clone(),
                    fuel_type: p.fuel_type.clone(),
                    first_frame: p.entry_frame,
                    last_frame: p.entry_frame + p.visible_frames - 1,
                    frames: p.visible_frames,
                    speed_px_s: p.speed_px_s,
                    distance_km,
                    factor_g_per_km: factor,
                    factor_source: source,
                    co2_grams: factor * distance_km,
                }
            })
            .collect();
        vehicles.sort_by(|a, b| a.plate.cmp(&b.plate));
        let mut unique_counts = BTreeMap::new();
        for v in &vehicles {
            *unique_counts.entry(v.category.clone()).or_insert(0) += 1;
        }
        GroundTruth {
            seed: c.seed,
            frames: c.total_frames(),
            frame_rate_hz: c.frame_rate_hz,
            meters_per_pixel: c.meters_per_pixel,
            total_distance_km: vehicles.iter().map(|v| v.distance_km).sum(),
            total_co2_grams: vehicles.iter().map(|v| v.co2_grams).sum(),
            unique_counts,
            vehicles,
        }
    }

    /// Registry records for every generated vehicle.
    pub fn fixtures(&self) -> Vec<VehicleRecord> {
        let mut out: Vec<VehicleRecord> = self
            .plans
            .iter()
            .map(|p| VehicleRecord {
                registration: p.plate.clone(),
                make: p.make.clone(),
                model: p.model.clone(),
                fuel_type: p.fuel_type.clone(),
                vehicle_class: p.vehicle_class.clone(),
                co2_g_per_km: p.co2_g_per_km,
            })
            .collect();
        out.sort_by(|a, b| a.registration.cmp(&b.registration));
        out
    }

    pub fn write_stream(&self, mut out: impl Write) -> std::io::Result<()> {
        for f in self.frames() {
            out.write_all(f.to_line().as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Writes `stream.jsonl`, `ground_truth.json` and `fixtures.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir)?;
        let file = std::fs::File::create(dir.join("stream.jsonl"))?;
        self.write_stream(std::io::BufWriter::new(file))?;
        std::fs::write(dir.join("ground_truth.json"), pretty(&self.ground_truth()))?;
        std::fs::write(dir.join("fixtures.json"), pretty(&self.fixtures()))?;
        Ok(())
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plate::normalize;

    fn one_vehicle() -> ScenarioConfig {
        ScenarioConfig {
            n_vehicles: 1,
            duration_s: 2.0,
            vehicles: vec![VehicleOverride {
                category: Some("car".into()),
                vehicle_class: Some("Midsize".into()),
                fuel_type: Some("Diesel".into()),
                speed_px_s: Some(100.0),
                width: Some(100.0),
                height: Some(50.0),
                entry_frame: Some(0),
                ..Default::default()
            }],
            numeric_co2_fraction: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn single_vehicle_ground_truth() {
        let s = Scenario::new(one_vehicle()).unwrap();
        let frames: Vec<_> = s.frames().collect();
        assert_eq!(frames.len(), 50);
        assert!(frames.iter().all(|f| f.detections.len() == 1));
        let gt = s.ground_truth();
        assert_eq!(gt.vehicles.len(), 1);
        let v = &gt.vehicles[0];
        assert_eq!(v.frames, 50);
        let expected_km = 100.0 * (49.0 / 25.0) * 0.05 / 1000.0;
        assert!((v.distance_km - expected_km).abs() < 1e-15);
        assert_eq!(v.factor_g_per_km, 140.0);
        assert_eq!(v.factor_source, FactorSource::TableLookup);
        let read = &frames[0].detections[0].plate_candidates[0].text;
        assert_eq!(normalize(read).unwrap().as_str(), v.plate);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = ScenarioConfig { dropout: 0.2, jitter_sigma: 1.0, ocr_corruption: 0.1, seed: 7, ..Default::default() };
        let a = Scenario::new(cfg.clone()).unwrap();
        let b = Scenario::new(cfg.clone()).unwrap();
        assert_eq!(a.frame(123), b.frame(123));
        assert_eq!(a.ground_truth(), b.ground_truth());
        let c = Scenario::new(ScenarioConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.ground_truth(), c.ground_truth());
    }

    #[test]
    fn boxes_stay_inside_and_lanes_do_not_overlap() {
        let s = Scenario::new(ScenarioConfig { n_vehicles: 60, jitter_sigma: 2.0, ..Default::default() }).unwrap();
        for f in s.frames() {
            for (i, a) in f.detections.iter().enumerate() {
                let b = a.bbox;
                assert!(b.x >= 0.0 && b.y >= 0.0 && b.right() <= 1920.0 + 1e-9 && b.bottom() <= 1080.0 + 1e-9);
                for c in &f.detections[i + 1..] {
                    assert_eq!(crate::tracker::box_iou(&b, &c.bbox), 0.0);
                }
            }
        }
        let gt = s.ground_truth();
        let plates: HashSet<_> = gt.vehicles.iter().map(|v| &v.plate).collect();
        assert_eq!(plates.len(), gt.vehicles.len());
    }

    #[test]
    fn config_map_overrides() {
        let m = ConfigMap::parse("[scenario]\nseed = 3\nduration_s = 5\n[vehicle]\n0.category = bus\n0.plate = AB12CDE\n").unwrap();
        let c = ScenarioConfig::from_map(&m).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.vehicles[0].category.as_deref(), Some("bus"));
        assert!(ScenarioConfig::from_map(&ConfigMap::parse("scenario.nope = 1").unwrap()).is_err());
        assert!(ScenarioConfig::from_map(&ConfigMap::parse("scenario.dropout = 2").unwrap()).is_err());
    }

    #[test]
    fn fixtures_match_plans() {
        let s = Scenario::new(ScenarioConfig::default()).unwrap();
        let fx = s.fixtures();
        assert_eq!(fx.len(), s.plans().len());
        assert!(fx.iter().all(|r| r.validate().is_ok()));
    }
}
