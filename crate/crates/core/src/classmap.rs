//! Raw detector label → broad vehicle category, and duplicate-free counting.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassMapError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
}

/// What to do with labels the map does not know.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnmappedPolicy {
    Reject,
    Default(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap {
    entries: BTreeMap<String, String>,
    unmapped: UnmappedPolicy,
}

pub const DEFAULT_MAPPING: &[(&str, &str)] = &[
    ("suv", "car"),
    ("van", "truck"),
    ("pickup", "truck"),
    ("taxi", "car"),
    ("private-car", "car"),
    ("government-car", "car"),
    ("car", "car"),
    ("minibus", "bus"),
    ("bus", "bus"),
    ("motorbike", "motorcycle"),
    ("motorcycle", "motorcycle"),
    ("truck", "truck"),
];

impl Default for CategoryMap {
    fn default() -> Self {
        Self::new(DEFAULT_MAPPING.iter().map(|&(k, v)| (k.to_string(), v.to_string())), UnmappedPolicy::Default("car".into()))
    }
}

impl CategoryMap {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>, unmapped: UnmappedPolicy) -> Self {
        let entries = entries.into_iter().map(|(k, v)| (k.trim().to_lowercase(), v.trim().to_lowercase())).collect();
        Self { entries, unmapped }
    }

    pub fn strict(mut self) -> Self {
        self.unmapped = UnmappedPolicy::Reject;
        self
    }

    pub fn insert(&mut self, raw: &str, category: &str) {
        self.entries.insert(raw.trim().to_lowercase(), category.trim().to_lowercase());
    }

    pub fn set_unmapped(&mut self, policy: UnmappedPolicy) {
        self.unmapped = policy;
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Every category this map can produce.
    pub fn categories(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.entries.values().cloned().collect();
        if let UnmappedPolicy::Default(d) = &self.unmapped {
            out.insert(d.clone());
        }
        out
    }

    pub fn map_label(&self, raw: &str) -> Result<String, ClassMapError> {
        let key = raw.trim().to_lowercase();
        if let Some(c) = self.entries.get(&key) {
            return Ok(c.clone());
        }
        match &self.unmapped {
            UnmappedPolicy::Default(c) => Ok(c.clone()),
            UnmappedPolicy::Reject => Err(ClassMapError::UnknownLabel(raw.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Votes {
    tally: BTreeMap<String, u64>,
    latest: String,
    current: String,
}

impl Votes {
    fn winner(&self) -> &str {
        let best = self.tally.values().copied().max().unwrap_or(0);
        if self.tally.get(&self.latest).copied() == Some(best) {
            return &self.latest;
        }
        self.tally.iter().find(|(_, &n)| n == best).map(|(c, _)| c.as_str()).unwrap_or(&self.latest)
    }
}

/// Category → set of counted track ids. A track lives under exactly one
/// category, chosen by majority vote over the categories it was recorded
/// with (ties go to the most recent one).
#[derive(Debug, Clone, Default)]
pub struct VehicleCounter {
    members: BTreeMap<String, BTreeSet<u64>>,
    votes: HashMap<u64, Votes>,
}

impl VehicleCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, track_id: u64, category: &str) {
        let votes = self.votes.entry(track_id).or_default();
        *votes.tally.entry(category.to_string()).or_insert(0) += 1;
        votes.latest = category.to_string();
        let winner = votes.winner().to_string();
        if votes.current == winner {
            return;
        }
        if !votes.current.is_empty() {
            if let Some(set) = self.members.get_mut(&votes.current) {
                set.remove(&track_id);
            }
        }
        votes.current = winner.clone();
        self.members.entry(winner).or_default().insert(track_id);
    }

    /// Registers a category with a zero count so snapshots list it.
    pub fn register_category(&mut self, category: &str) {
        self.members.entry(category.to_string()).or_default();
    }

    pub fn category_of(&self, track_id: u64) -> Option<&str> {
        self.votes.get(&track_id).map(|v| v.current.as_str())
    }

    pub fn counts(&self) -> BTreeMap<String, u64> {
        self.members.iter().map(|(c, ids)| (c.clone(), ids.len() as u64)).collect()
    }

    pub fn total(&self) -> u64 {
        self.members.values().map(|s| s.len() as u64).sum()
    }

    pub fn distinct_tracks(&self) -> usize {
        self.votes.len()
    }

    /// Forgets a finished track and returns its final category. The track no
    /// longer contributes to [`counts`](Self::counts).
    pub fn retire(&mut self, track_id: u64) -> Option<String> {
        let votes = self.votes.remove(&track_id)?;
        if let Some(set) = self.members.get_mut(&votes.current) {
            set.remove(&track_id);
        }
        Some(votes.current)
    }
}
