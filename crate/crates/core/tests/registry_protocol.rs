use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use co2stream::config::PipelineConfig;
use co2stream::emission::FactorSource;
use co2stream::pipeline::Pipeline;
use co2stream::plate::normalize;
use co2stream::registry::{load_fixtures, serve_mock, MockOptions, MockServer, RegistryClient, RegistryConfig, RegistryError};
use co2stream::scenario::{Scenario, ScenarioConfig};

fn fixtures_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/registry.json"))
}

fn mock() -> MockServer {
    serve_mock(load_fixtures(fixtures_path()).unwrap(), "127.0.0.1:0", MockOptions { timeout_delay: Duration::from_secs(3) }).unwrap()
}

fn client(server: &MockServer, tweak: impl FnOnce(&mut RegistryConfig)) -> RegistryClient {
    let mut cfg = RegistryConfig { timeout_ms: 500, backoff_base_ms: 10, ..RegistryConfig::with_base_url(server.base_url()) };
    tweak(&mut cfg);
    RegistryClient::new(cfg).unwrap()
}

#[test]
fn fixture_round_trip_is_field_exact() {
    let server = mock();
    let c = client(&server, |_| {});
    for record in load_fixtures(fixtures_path()).unwrap() {
        let got = c.lookup(&normalize(&record.registration).unwrap()).unwrap();
        assert_eq!(got, record);
    }
}

#[test]
fn known_and_unknown_plates() {
    let server = mock();
    let c = client(&server, |_| {});
    let r = c.lookup(&normalize("AB12CDE").unwrap()).unwrap();
    assert_eq!((r.make.as_str(), r.vehicle_class.as_str(), r.fuel_type.as_str()), ("FIXTMAKE", "SUV", "Diesel"));
    assert_eq!(c.lookup(&normalize("ZZ99ZZZ").unwrap()), Err(RegistryError::NotFound("ZZ99ZZZ".into())));
}

#[test]
fn cache_prevents_second_request() {
    let server = mock();
    let c = client(&server, |_| {});
    let plate = normalize("AB12CDE").unwrap();
    let a = c.lookup(&plate).unwrap();
    let b = c.lookup(&plate).unwrap();
    assert_eq!(a, b);
    assert_eq!(server.hits_for("AB12CDE"), 1);
    assert_eq!(c.requests_sent(), 1);
}

#[test]
fn without_cache_every_lookup_hits() {
    let server = mock();
    let c = client(&server, |cfg| cfg.cache_capacity = 0);
    let plate = normalize("AB12CDE").unwrap();
    for _ in 0..3 {
        c.lookup(&plate).unwrap();
    }
    assert_eq!(server.hits_for("AB12CDE"), 3);
}

#[test]
fn zero_ttl_expires_immediately() {
    let server = mock();
    let c = client(&server, |cfg| cfg.cache_ttl_s = 0);
    let plate = normalize("EV70ZAP").unwrap();
    c.lookup(&plate).unwrap();
    c.lookup(&plate).unwrap();
    assert_eq!(server.hits_for("EV70ZAP"), 2);
}

#[test]
fn survives_one_server_error() {
    let server = mock();
    server.arm("500", 1).unwrap();
    let c = client(&server, |_| {});
    let r = c.lookup(&normalize("HY19BRD").unwrap()).unwrap();
    assert_eq!(r.fuel_type, "Hybrid");
    assert_eq!(server.hits_for("HY19BRD"), 2);
}

#[test]
fn survives_one_timeout_within_budget() {
    let server = mock();
    server.arm("timeout", 1).unwrap();
    let c = client(&server, |cfg| cfg.timeout_ms = 300);
    let start = Instant::now();
    let r = c.lookup(&normalize("LX21GTI").unwrap()).unwrap();
    assert_eq!(r.co2_g_per_km, Some(176.5));
    assert!(start.elapsed() <= c.config().time_budget(), "{:?}", start.elapsed());
}

#[test]
fn persistent_fault_header_exhausts_retries() {
    let server = mock();
    let c = client(&server, |cfg| {
        cfg.inject_fault = Some("500".into());
        cfg.max_retries = 2;
    });
    let err = c.lookup(&normalize("AB12CDE").unwrap()).unwrap_err();
    assert!(matches!(err, RegistryError::Unavailable { attempts: 3, .. }), "{err:?}");
    assert_eq!(server.hits_for("AB12CDE"), 3);
}

#[test]
fn metrics_endpoint_reports_hits() {
    let server = mock();
    let c = client(&server, |cfg| cfg.cache_capacity = 0);
    for _ in 0..3 {
        c.lookup(&normalize("PK68HLX").unwrap()).unwrap();
    }
    let body = reqwest::blocking::get(format!("{}/metrics/hits", server.base_url())).unwrap().text().unwrap();
    let hits: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(hits["PK68HLX"], 3);
}

#[test]
fn outage_degrades_to_category_default() {
    let server = mock();
    let url = server.base_url();
    server.shutdown();
    let s = Scenario::new(ScenarioConfig { n_vehicles: 4, duration_s: 10.0, ..Default::default() }).unwrap();
    let cfg = PipelineConfig {
        registry: Some(RegistryConfig { timeout_ms: 200, max_retries: 1, backoff_base_ms: 5, ..RegistryConfig::with_base_url(url) }),
        ..Default::default()
    };
    let report = Pipeline::run(cfg.clone(), Some(Arc::new(RegistryClient::new(cfg.registry.clone().unwrap()).unwrap())), s.frames().map(Ok))
        .unwrap();
    let est: Vec<_> = report.windows.iter().flat_map(|w| &w.estimates).collect();
    assert_eq!(est.len(), s.ground_truth().vehicles.len());
    assert!(est.iter().all(|e| e.factor_source == FactorSource::CategoryDefault));
    assert_eq!(report.stats.lookup_failures, est.len() as u64);
}
