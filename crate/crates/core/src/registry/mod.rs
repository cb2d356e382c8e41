//! Vehicle registry enquiry: record schema, HTTP client and a mock server.
//!
//! Wire protocol: `POST {base}/vehicles` with `{"registrationNumber": "AB12CDE"}`.
//! A 200 response carries a [`VehicleRecord`] as JSON; unknown plates get 404
//! with `{"error":"not found"}`.

mod client;
mod mock;
mod pool;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{RegistryClient, RegistryConfig, REGISTRY_URL_ENV};
pub use mock::{serve_mock, MockOptions, MockServer, FAULT_HEADER};
pub use pool::{LookupPool, Ticket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub registration: String,
    pub make: String,
    pub model: String,
    pub fuel_type: String,
    pub vehicle_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub co2_g_per_km: Option<f64>,
}

impl VehicleRecord {
    pub fn validate(&self) -> Result<(), String> {
        if crate::plate::normalize(&self.registration).is_err() {
            return Err(format!("registration `{}` is not a valid plate", self.registration));
        }
        if let Some(g) = self.co2_g_per_km {
            if !g.is_finite() || g < 0.0 {
                return Err(format!("co2_g_per_km {g} must be a nonnegative number"));
            }
            if self.fuel_type.eq_ignore_ascii_case("electric") && g != 0.0 {
                return Err(format!("electric vehicle {} reports {g} g/km", self.registration));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("plate {0} not found")]
    NotFound(String),
    #[error("registry unavailable after {attempts} attempt(s): {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("malformed registry response: {0}")]
    MalformedResponse(String),
    #[error("invalid registry config: {0}")]
    InvalidConfig(String),
    #[error("cannot bind mock server: {0}")]
    BindFailure(String),
    #[error("cannot load fixtures: {0}")]
    FixtureParseError(String),
}

/// Parses a fixture document: a JSON array of vehicle records.
pub fn parse_fixtures(text: &str) -> Result<Vec<VehicleRecord>, RegistryError> {
    let records: Vec<VehicleRecord> = serde_json::from_str(text).map_err(|e| RegistryError::FixtureParseError(e.to_string()))?;
    for r in &records {
        r.validate().map_err(RegistryError::FixtureParseError)?;
    }
    Ok(records)
}

pub fn load_fixtures(path: &Path) -> Result<Vec<VehicleRecord>, RegistryError> {
    let text = std::fs::read_to_string(path).map_err(|e| RegistryError::FixtureParseError(format!("{}: {e}", path.display())))?;
    parse_fixtures(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn electric_must_be_zero() {
        let mut r = VehicleRecord {
            registration: "EV12ABC".into(),
            make: "M".into(),
            model: "X".into(),
            fuel_type: "Electric".into(),
            vehicle_class: "Electric".into(),
            co2_g_per_km: Some(0.0),
        };
        assert!(r.validate().is_ok());
        r.co2_g_per_km = Some(10.0);
        assert!(r.validate().is_err());
        r.co2_g_per_km = None;
        assert!(r.validate().is_ok());
    }

    #[test]
    fn fixture_parse_errors() {
        assert!(matches!(parse_fixtures("{"), Err(RegistryError::FixtureParseError(_))));
        assert!(matches!(
            parse_fixtures(r#"[{"registration":"X","make":"a","model":"b","fuel_type":"Diesel","vehicle_class":"SUV"}]"#),
            Err(RegistryError::FixtureParseError(_))
        ));
        let shipped = include_str!("../../fixtures/registry.json");
        assert!(!parse_fixtures(shipped).unwrap().is_empty());
    }
}
