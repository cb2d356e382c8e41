use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use lru::LruCache;
use parking_lot::Mutex;
use serde::Serialize;

use super::{RegistryError, VehicleRecord, FAULT_HEADER};
use crate::plate::NormalizedPlate;

pub const REGISTRY_URL_ENV: &str = "CO2STREAM_REGISTRY_URL";

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub cache_capacity: usize,
    pub cache_ttl_s: u64,
    /// First retry delay; doubles on every further retry.
    pub backoff_base_ms: u64,
    /// Sent as `X-Inject-Fault` on every request. Test hook for the mock.
    pub inject_fault: Option<String>,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8089".into(),
            timeout_ms: 2000,
            max_retries: 2,
            cache_capacity: 4096,
            cache_ttl_s: 3600,
            backoff_base_ms: 50,
            inject_fault: None,
        }
    }
}

impl RegistryConfig {
    pub fn with_base_url(base_url: impl Into<String>) -> Self {
        Self { base_url: base_url.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.timeout_ms == 0 {
            return Err(RegistryError::InvalidConfig("timeout_ms must be positive".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(RegistryError::InvalidConfig("base_url is empty".into()));
        }
        Ok(())
    }

    /// Upper bound on the wall time a single lookup can take.
    pub fn time_budget(&self) -> Duration {
        let attempts = u64::from(self.max_retries) + 1;
        let backoff: u64 = (0..self.max_retries).map(|k| self.backoff_base_ms << k.min(20)).sum();
        Duration::from_millis(attempts * self.timeout_ms + backoff)
    }
}

#[derive(Serialize)]
struct LookupBody<'a> {
    #[serde(rename = "registrationNumber")]
    registration_number: &'a str,
}

/// Blocking registry client with an LRU+TTL cache. Safe to share across
/// threads.
pub struct RegistryClient {
    cfg: RegistryConfig,
    http: reqwest::blocking::Client,
    // LRU reads reorder entries, so reads take the lock too.
    cache: Option<Mutex<LruCache<NormalizedPlate, (Instant, VehicleRecord)>>>,
    requests: AtomicU64,
}

impl std::fmt::Debug for RegistryClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistryClient").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

enum Attempt {
    Done(Result<VehicleRecord, RegistryError>),
    Retry(String),
}

impl RegistryClient {
    pub fn new(cfg: RegistryConfig) -> Result<Self, RegistryError> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| RegistryError::InvalidConfig(e.to_string()))?;
        let cache = NonZeroUsize::new(cfg.cache_capacity).map(|n| Mutex::new(LruCache::new(n)));
        Ok(Self { cfg, http, cache, requests: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.cfg
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn cached(&self, plate: &NormalizedPlate) -> Option<VehicleRecord> {
        let cache = self.cache.as_ref()?;
        let mut cache = cache.lock();
        let ttl = Duration::from_secs(self.cfg.cache_ttl_s);
        match cache.get(plate) {
            Some((at, record)) if at.elapsed() < ttl => Some(record.clone()),
            Some(_) => {
                cache.pop(plate);
                None
            }
            None => None,
        }
    }

    pub fn lookup(&self, plate: &NormalizedPlate) -> Result<VehicleRecord, RegistryError> {
        if let Some(hit) = self.cached(plate) {
            return Ok(hit);
        }
        let record = self.fetch(plate)?;
        if let Some(cache) = &self.cache {
            cache.lock().put(plate.clone(), (Instant::now(), record.clone()));
        }
        Ok(record)
    }

    fn fetch(&self, plate: &NormalizedPlate) -> Result<VehicleRecord, RegistryError> {
        let url = format!("{}/vehicles", self.cfg.base_url.trim_end_matches('/'));
        let mut last_error = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_base_ms << (attempt - 1).min(20)));
            }
            match self.attempt(&url, plate) {
                Attempt::Done(result) => return result,
                Attempt::Retry(msg) => {
                    tracing::debug!(plate = plate.as_str(), attempt, error = %msg, "registry attempt failed");
                    last_error = msg;
                }
            }
        }
        Err(RegistryError::Unavailable { attempts: self.cfg.max_retries + 1, last_error })
    }

    fn attempt(&self, url: &str, plate: &NormalizedPlate) -> Attempt {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.http.post(url).json(&LookupBody { registration_number: plate.as_str() });
        if let Some(fault) = &self.cfg.inject_fault {
            req = req.header(FAULT_HEADER, fault);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        if status == reqwest::StatusCode::NOT_FOUND {
            return Attempt::Done(Err(RegistryError::NotFound(plate.to_string())));
        }
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !status.is_success() {
            return Attempt::Done(Err(RegistryError::MalformedResponse(format!("unexpected HTTP {status}"))));
        }
        let body = match resp.text() {
            Ok(b) => b,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        Attempt::Done(parse_record(&body, plate))
    }
}

fn parse_record(body: &str, plate: &NormalizedPlate) -> Result<VehicleRecord, RegistryError> {
    let record: VehicleRecord = serde_json::from_str(body).map_err(|e| RegistryError::MalformedResponse(e.to_string()))?;
    record.validate().map_err(RegistryError::MalformedResponse)?;
    let returned = crate::plate::normalize(&record.registration).map_err(|e| RegistryError::MalformedResponse(e.to_string()))?;
    if &returned != plate {
        return Err(RegistryError::MalformedResponse(format!("asked for {plate}, got {}", record.registration)));
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plate::normalize;

    #[test]
    fn budget_accounts_for_backoff() {
        let cfg = RegistryConfig { timeout_ms: 100, max_retries: 3, backoff_base_ms: 10, ..Default::default() };
        assert_eq!(cfg.time_budget(), Duration::from_millis(4 * 100 + 10 + 20 + 40));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = RegistryConfig { timeout_ms: 0, ..Default::default() };
        assert!(RegistryClient::new(cfg).is_err());
    }

    #[test]
    fn response_must_match_plate() {
        let p = normalize("AB12CDE").unwrap();
        let body = r#"{"registration":"ZZ99ZZZ","make":"a","model":"b","fuel_type":"Diesel","vehicle_class":"SUV"}"#;
        assert!(matches!(parse_record(body, &p), Err(RegistryError::MalformedResponse(_))));
        assert!(matches!(parse_record("[]", &p), Err(RegistryError::MalformedResponse(_))));
        let body = r#"{"registration":"ab12 cde","make":"a","model":"b","fuel_type":"Diesel","vehicle_class":"SUV"}"#;
        assert!(parse_record(body, &p).is_ok());
    }
}
