//! Emission factors and per-vehicle / per-window CO₂ accounting.
//!
//! Factors are grams of CO₂ per kilometre, keyed by (vehicle class, fuel).
//! The shipped table holds the average tailpipe figures per car segment;
//! classes listed as "Gas/Diesel" apply to both fuels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plate::ConsensusStatus;
use crate::registry::VehicleRecord;
use crate::tracker::PathPoint;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmissionError {
    #[error("no emission factor for class `{class}` with fuel `{fuel}`")]
    UnknownClass { class: String, fuel: String },
    #[error("invalid emission config: {0}")]
    InvalidConfig(String),
}

/// One row of the shipped table: class, accepted fuels, g/km.
pub const DEFAULT_FACTORS: &[(&str, &[&str], f64)] = &[
    ("Subcompact", &["Gasoline"], 115.0),
    ("Compact", &["Gasoline", "Diesel"], 125.0),
    ("Midsize", &["Gasoline", "Diesel"], 140.0),
    ("Full-size", &["Gasoline", "Diesel"], 160.0),
    ("SUV", &["Gasoline", "Diesel"], 180.0),
    ("Pickup", &["Gasoline", "Diesel"], 200.0),
    ("Luxury", &["Gasoline"], 170.0),
    ("Electric", &["Electric"], 0.0),
    ("Hybrid", &["Hybrid"], 90.0),
];

fn fuel_key(fuel: &str) -> String {
    match fuel.trim().to_lowercase().as_str() {
        "petrol" | "gas" => "gasoline".to_string(),
        other => other.to_string(),
    }
}

fn class_key(class: &str) -> String {
    class.trim().to_lowercase().replace(['_', ' '], "-")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionFactorTable {
    factors: BTreeMap<(String, String), f64>,
}

impl Default for EmissionFactorTable {
    fn default() -> Self {
        let mut t = Self { factors: BTreeMap::new() };
        for &(class, fuels, g) in DEFAULT_FACTORS {
            for fuel in fuels {
                t.set(class, fuel, g).expect("shipped factors are valid");
            }
        }
        t
    }
}

impl EmissionFactorTable {
    pub fn empty() -> Self {
        Self { factors: BTreeMap::new() }
    }

    pub fn set(&mut self, class: &str, fuel: &str, grams_per_km: f64) -> Result<(), EmissionError> {
        if !grams_per_km.is_finite() || grams_per_km < 0.0 {
            return Err(EmissionError::InvalidConfig(format!("factor {grams_per_km} for {class}/{fuel} must be ≥ 0")));
        }
        if fuel_key(fuel) == "electric" && grams_per_km != 0.0 {
            return Err(EmissionError::InvalidConfig(format!("electric factor for {class} must be 0")));
        }
        self.factors.insert((class_key(class), fuel_key(fuel)), grams_per_km);
        Ok(())
    }

    pub fn factor_for(&self, vehicle_class: &str, fuel_type: &str) -> Result<f64, EmissionError> {
        self.factors.get(&(class_key(vehicle_class), fuel_key(fuel_type))).copied().ok_or_else(|| EmissionError::UnknownClass {
            class: vehicle_class.to_string(),
            fuel: fuel_type.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// Per-category factors used when the registry gives nothing usable.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryDefaults {
    pub by_category: BTreeMap<String, f64>,
    /// For categories missing from `by_category`.
    pub fallback: f64,
}

impl Default for CategoryDefaults {
    fn default() -> Self {
        // Borrowed from the nearest table rows: car = Midsize, truck and bus =
        // Pickup, motorcycle = Subcompact.
        let by_category = [("car", 140.0), ("truck", 200.0), ("bus", 200.0), ("motorcycle", 115.0)]
            .into_iter()
            .map(|(c, g)| (c.to_string(), g))
            .collect();
        Self { by_category, fallback: 140.0 }
    }
}

impl CategoryDefaults {
    pub fn factor(&self, category: &str) -> f64 {
        self.by_category.get(&category.to_lowercase()).copied().unwrap_or(self.fallback)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub meters_per_pixel: f64,
    pub fallback_speed_kmh: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { meters_per_pixel: 0.05, fallback_speed_kmh: 50.0 }
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<(), EmissionError> {
        if !(self.meters_per_pixel > 0.0 && self.meters_per_pixel.is_finite()) {
            return Err(EmissionError::InvalidConfig("meters_per_pixel must be > 0".into()));
        }
        if !(self.fallback_speed_kmh > 0.0 && self.fallback_speed_kmh.is_finite()) {
            return Err(EmissionError::InvalidConfig("fallback_speed_kmh must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMethod {
    Path,
    DwellFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEstimate {
    pub km: f64,
    pub dwell_s: f64,
    pub method: DistanceMethod,
}

/// Path length of the centroid trail, or dwell × fallback speed when the
/// trail has fewer than two points.
pub fn distance_from_path(path: &[PathPoint], cal: &Calibration) -> DistanceEstimate {
    let dwell_s = match (path.first(), path.last()) {
        (Some(a), Some(b)) => (b.timestamp_ms - a.timestamp_ms) as f64 / 1000.0,
        _ => 0.0,
    };
    if path.len() < 2 {
        return DistanceEstimate { km: cal.fallback_speed_kmh * dwell_s / 3600.0, dwell_s, method: DistanceMethod::DwellFallback };
    }
    let pixels: f64 = path.windows(2).map(|w| (w[1].cx - w[0].cx).hypot(w[1].cy - w[0].cy)).sum();
    DistanceEstimate { km: pixels * cal.meters_per_pixel / 1000.0, dwell_s, method: DistanceMethod::Path }
}

pub fn distance_from_track(track: &crate::tracker::Track, cal: &Calibration) -> DistanceEstimate {
    distance_from_path(&track.centroid_path, cal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorSource {
    RegistryNumeric,
    TableLookup,
    CategoryDefault,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleEmissionEstimate {
    pub track_id: u64,
    pub plate: Option<String>,
    pub plate_status: ConsensusStatus,
    pub category: String,
    pub vehicle_class: Option<String>,
    pub fuel_type: Option<String>,
    pub distance_km: f64,
    pub dwell_s: f64,
    pub distance_method: DistanceMethod,
    pub factor_g_per_km: f64,
    pub co2_grams: f64,
    pub factor_source: FactorSource,
    /// Timestamp of the last observation; decides the report window.
    pub last_seen_ms: u64,
}

/// Factor precedence: numeric registry value, then table lookup on the
/// registry's class/fuel, then the category default.
pub fn select_factor(
    record: Option<&VehicleRecord>,
    category: &str,
    table: &EmissionFactorTable,
    defaults: &CategoryDefaults,
) -> (f64, FactorSource) {
    if let Some(r) = record {
        if let Some(g) = r.co2_g_per_km {
            return (g, FactorSource::RegistryNumeric);
        }
        if let Ok(g) = table.factor_for(&r.vehicle_class, &r.fuel_type) {
            return (g, FactorSource::TableLookup);
        }
    }
    (defaults.factor(category), FactorSource::CategoryDefault)
}

#[derive(Debug, Clone)]
pub struct EstimateInput<'a> {
    pub track_id: u64,
    pub path: &'a [PathPoint],
    pub plate: Option<String>,
    pub plate_status: ConsensusStatus,
    pub record: Option<&'a VehicleRecord>,
    pub category: &'a str,
}

pub fn estimate(
    input: &EstimateInput<'_>,
    table: &EmissionFactorTable,
    defaults: &CategoryDefaults,
    cal: &Calibration,
) -> VehicleEmissionEstimate {
    let distance = distance_from_path(input.path, cal);
    let (factor, source) = select_factor(input.record, input.category, table, defaults);
    VehicleEmissionEstimate {
        track_id: input.track_id,
        plate: input.plate.clone(),
        plate_status: input.plate_status,
        category: input.category.to_string(),
        vehicle_class: input.record.map(|r| r.vehicle_class.clone()),
        fuel_type: input.record.map(|r| r.fuel_type.clone()),
        distance_km: distance.km,
        dwell_s: distance.dwell_s,
        distance_method: distance.method,
        factor_g_per_km: factor,
        co2_grams: factor * distance.km,
        factor_source: source,
        last_seen_ms: input.path.last().map(|p| p.timestamp_ms).unwrap_or(0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub window: Window,
    pub unique_counts: BTreeMap<String, u64>,
    pub estimates: Vec<VehicleEmissionEstimate>,
    pub total_co2_grams: f64,
}

pub fn aggregate(estimates: Vec<VehicleEmissionEstimate>, counts: BTreeMap<String, u64>, window: Window) -> SegmentReport {
    let total_co2_grams = estimates.iter().fold(0.0, |acc, e| acc + e.co2_grams);
    SegmentReport { window, unique_counts: counts, estimates, total_co2_grams }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(cx: f64, cy: f64, ts: u64) -> PathPoint {
        PathPoint { cx, cy, timestamp_ms: ts }
    }

    fn record(class: &str, fuel: &str, co2: Option<f64>) -> VehicleRecord {
        VehicleRecord {
            registration: "AB12CDE".into(),
            make: "M".into(),
            model: "X".into(),
            fuel_type: fuel.into(),
            vehicle_class: class.into(),
            co2_g_per_km: co2,
        }
    }

    #[test]
    fn table_rows() {
        let t = EmissionFactorTable::default();
        assert_eq!(t.factor_for("SUV", "Diesel").unwrap(), 180.0);
        assert_eq!(t.factor_for("SUV", "Gasoline").unwrap(), 180.0);
        assert_eq!(t.factor_for("Electric", "Electric").unwrap(), 0.0);
        assert_eq!(t.factor_for("Hybrid", "Hybrid").unwrap(), 90.0);
        assert_eq!(t.factor_for("full size", "petrol").unwrap(), 160.0);
        assert!(matches!(t.factor_for("Tractor", "Diesel"), Err(EmissionError::UnknownClass { .. })));
        assert!(t.factor_for("Subcompact", "Diesel").is_err());
    }

    #[test]
    fn table_rejects_bad_factors() {
        let mut t = EmissionFactorTable::empty();
        assert!(t.set("SUV", "Diesel", -1.0).is_err());
        assert!(t.set("Electric", "Electric", 5.0).is_err());
        assert!(t.set("SUV", "Diesel", 190.0).is_ok());
        assert_eq!(t.factor_for("suv", "diesel").unwrap(), 190.0);
    }

    #[test]
    fn distances() {
        let cal = Calibration { meters_per_pixel: 0.1, fallback_speed_kmh: 50.0 };
        let d = distance_from_path(&[pt(0.0, 0.0, 0), pt(300.0, 400.0, 40)], &cal);
        assert!((d.km - 0.05).abs() < 1e-15);
        assert_eq!(d.method, DistanceMethod::Path);
        let d = distance_from_path(&[pt(5.0, 5.0, 1000)], &cal);
        assert_eq!(d.km, 0.0);
        assert_eq!(d.method, DistanceMethod::DwellFallback);
        let still: Vec<PathPoint> = (0..10).map(|k| pt(7.0, 7.0, k * 40)).collect();
        assert_eq!(distance_from_path(&still, &cal).km, 0.0);
    }

    fn straight_path(km: f64) -> Vec<PathPoint> {
        // 1 m/px calibration below, so km*1000 pixels
        vec![pt(0.0, 0.0, 0), pt(km * 1000.0, 0.0, 1000)]
    }

    #[test]
    fn estimate_precedence() {
        let t = EmissionFactorTable::default();
        let d = CategoryDefaults::default();
        let cal = Calibration { meters_per_pixel: 1.0, fallback_speed_kmh: 50.0 };
        let path = straight_path(2.0);
        let suv = record("SUV", "Diesel", None);
        let input = EstimateInput {
            track_id: 1,
            path: &path,
            plate: Some("AB12CDE".into()),
            plate_status: ConsensusStatus::Confirmed,
            record: Some(&suv),
            category: "car",
        };
        let e = estimate(&input, &t, &d, &cal);
        assert_eq!(e.co2_grams, 360.0);
        assert_eq!(e.factor_source, FactorSource::TableLookup);

        let path = straight_path(1.0);
        let numeric = record("SUV", "Diesel", Some(120.0));
        let e = estimate(&EstimateInput { path: &path, record: Some(&numeric), ..input.clone() }, &t, &d, &cal);
        assert_eq!(e.co2_grams, 120.0);
        assert_eq!(e.factor_source, FactorSource::RegistryNumeric);

        let still = [pt(3.0, 3.0, 0)];
        let e = estimate(&EstimateInput { path: &still, record: None, ..input.clone() }, &t, &d, &cal);
        assert_eq!(e.co2_grams, 0.0);
        assert_eq!(e.factor_g_per_km, 140.0);
        assert_eq!(e.factor_source, FactorSource::CategoryDefault);

        let odd = record("Tractor", "Diesel", None);
        let e = estimate(&EstimateInput { record: Some(&odd), category: "truck", ..input }, &t, &d, &cal);
        assert_eq!(e.factor_source, FactorSource::CategoryDefault);
        assert_eq!(e.factor_g_per_km, 200.0);
    }

    fn est(g: f64) -> VehicleEmissionEstimate {
        VehicleEmissionEstimate {
            track_id: 0,
            plate: None,
            plate_status: ConsensusStatus::NoPlate,
            category: "car".into(),
            vehicle_class: None,
            fuel_type: None,
            distance_km: 1.0,
            dwell_s: 0.0,
            distance_method: DistanceMethod::Path,
            factor_g_per_km: g,
            co2_grams: g,
            factor_source: FactorSource::CategoryDefault,
            last_seen_ms: 0,
        }
    }

    #[test]
    fn aggregation() {
        let w = Window { start_ms: 0, end_ms: 1000 };
        assert_eq!(aggregate(vec![], BTreeMap::new(), w).total_co2_grams, 0.0);
        let r = aggregate(vec![est(360.0), est(120.0), est(0.0)], BTreeMap::new(), w);
        assert_eq!(r.total_co2_grams, 480.0);
        let a = aggregate(vec![est(360.0)], BTreeMap::new(), w).total_co2_grams;
        let b = aggregate(vec![est(120.0), est(0.0)], BTreeMap::new(), w).total_co2_grams;
        assert_eq!(a + b, r.total_co2_grams);
    }

    fn arb_path() -> impl Strategy<Value = Vec<PathPoint>> {
        proptest::collection::vec((-1000.0..1000.0f64, -1000.0..1000.0f64), 1..30)
            .prop_map(|pts| pts.into_iter().enumerate().map(|(k, (x, y))| pt(x, y, k as u64 * 40)).collect())
    }

    proptest! {
        #[test]
        fn estimate_invariants(path in arb_path(), mpp in 0.001..1.0f64, class_idx in 0usize..9) {
            let t = EmissionFactorTable::default();
            let d = CategoryDefaults::default();
            let (class, fuels, g) = DEFAULT_FACTORS[class_idx];
            let rec = record(class, fuels[0], None);
            let input = EstimateInput { track_id: 1, path: &path, plate: None, plate_status: ConsensusStatus::NoPlate, record: Some(&rec), category: "car" };
            let cal = Calibration { meters_per_pixel: mpp, fallback_speed_kmh: 50.0 };
            let e = estimate(&input, &t, &d, &cal);
            prop_assert_eq!(e.factor_g_per_km, g);
            let expected = e.factor_g_per_km * e.distance_km;
            prop_assert!((e.co2_grams - expected).abs() <= 1e-9 * expected.abs());

            let doubled = Calibration { meters_per_pixel: 2.0 * mpp, ..cal };
            let e2 = estimate(&input, &t, &d, &doubled);
            if path.len() >= 2 {
                prop_assert_eq!(e2.distance_km, 2.0 * e.distance_km);
                prop_assert_eq!(e2.co2_grams, 2.0 * e.co2_grams);
            }

            // stretching the last leg never lowers the estimate
            let mut farther = path.clone();
            farther.push(pt(path.last().unwrap().cx + 5.0, path.last().unwrap().cy, path.len() as u64 * 40));
            let e3 = estimate(&EstimateInput { path: &farther, ..input.clone() }, &t, &d, &cal);
            prop_assert!(e3.co2_grams >= e.co2_grams);
        }

        #[test]
        fn total_is_ordered_sum(gs in proptest::collection::vec(0.0..1e4f64, 0..50)) {
            let r = aggregate(gs.iter().map(|&g| est(g)).collect(), BTreeMap::new(), Window { start_ms: 0, end_ms: 1 });
            let mut acc = 0.0;
            for g in &gs { acc += g; }
            prop_assert_eq!(r.total_co2_grams, acc);
        }
    }
}
