//! Licence-plate read normalization and per-track consensus.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PlateCandidate;

pub const MIN_PLATE_LEN: usize = 6;
pub const MAX_PLATE_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    TooShort,
    TooLong,
    BadChars,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("rejected plate read: {reason:?}")]
pub struct RejectedRead {
    pub reason: RejectReason,
}

/// Uppercase alphanumeric plate text of length 6..=8.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NormalizedPlate(String);

impl NormalizedPlate {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NormalizedPlate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for NormalizedPlate {
    type Error = RejectedRead;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        normalize(&s)
    }
}

impl From<NormalizedPlate> for String {
    fn from(p: NormalizedPlate) -> String {
        p.0
    }
}

/// Uppercases, drops whitespace and ASCII punctuation, then enforces the
/// length bounds and the `[A-Z0-9]` alphabet.
pub fn normalize(raw: &str) -> Result<NormalizedPlate, RejectedRead> {
    let cleaned: String =
        raw.chars().filter(|c| !c.is_whitespace() && !c.is_ascii_punctuation()).flat_map(char::to_uppercase).collect();
    let len = cleaned.chars().count();
    if len < MIN_PLATE_LEN {
        return Err(RejectedRead { reason: RejectReason::TooShort });
    }
    if len > MAX_PLATE_LEN {
        return Err(RejectedRead { reason: RejectReason::TooLong });
    }
    if !cleaned.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()) {
        return Err(RejectedRead { reason: RejectReason::BadChars });
    }
    Ok(NormalizedPlate(cleaned))
}

/// Character classes of the preferred 7-character format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlateFormat {
    /// `L` = letter, `D` = digit, anything else matches any character.
    pub pattern: String,
}

impl Default for PlateFormat {
    fn default() -> Self {
        // current UK format, e.g. AB12CDE
        Self { pattern: "LLDDLLL".into() }
    }
}

impl PlateFormat {
    pub fn new(pattern: impl Into<String>) -> Self {
        Self { pattern: pattern.into() }
    }

    fn matches(&self, text: &str) -> bool {
        text.chars().count() == self.pattern.chars().count()
            && text.chars().zip(self.pattern.chars()).all(|(c, p)| match p {
                'L' => c.is_ascii_uppercase(),
                'D' => c.is_ascii_digit(),
                _ => true,
            })
    }

    /// 2 for a pattern match, 1 for any other 7-character plate, else 0.
    pub fn score(&self, p: &NormalizedPlate) -> u8 {
        if self.matches(p.as_str()) {
            2
        } else if p.as_str().len() == 7 {
            1
        } else {
            0
        }
    }
}

pub fn format_score(p: &NormalizedPlate) -> u8 {
    PlateFormat::default().score(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsensusStatus {
    Confirmed,
    LowSupport,
    NoPlate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlateConsensus {
    pub plate: Option<NormalizedPlate>,
    pub score: f64,
    pub support: usize,
    pub status: ConsensusStatus,
}

impl PlateConsensus {
    pub fn none() -> Self {
        Self { plate: None, score: 0.0, support: 0, status: ConsensusStatus::NoPlate }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusConfig {
    pub min_support: usize,
    pub format: PlateFormat,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self { min_support: 2, format: PlateFormat::default() }
    }
}

/// Elects one plate from per-frame reads.
///
/// Reads are grouped by normalized text; the winner maximizes
/// (format score, summed confidence, support), then the smallest text.
pub fn consensus_with(reads: &[PlateCandidate], cfg: &ConsensusConfig) -> PlateConsensus {
    // Confidence sums use a per-group sorted order so the result does not
    // depend on read order down to the last bit.
    let mut groups: BTreeMap<NormalizedPlate, Vec<f64>> = BTreeMap::new();
    for r in reads {
        if let Ok(p) = normalize(&r.text) {
            groups.entry(p).or_default().push(r.confidence);
        }
    }
    let mut best: Option<Ranked> = None;
    for (plate, mut confs) in groups {
        confs.sort_by(f64::total_cmp);
        let score: f64 = confs.iter().sum();
        let key = (cfg.format.score(&plate), score, confs.len(), plate);
        let better = match &best {
            None => true,
            Some(b) => rank(&key, b).is_gt(),
        };
        if better {
            best = Some(key);
        }
    }
    match best {
        None => PlateConsensus::none(),
        Some((_, score, support, plate)) => PlateConsensus {
            plate: Some(plate),
            score,
            support,
            status: if support >= cfg.min_support { ConsensusStatus::Confirmed } else { ConsensusStatus::LowSupport },
        },
    }
}

type Ranked = (u8, f64, usize, NormalizedPlate);

fn rank(a: &Ranked, b: &Ranked) -> std::cmp::Ordering {
    a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)).then(b.3.cmp(&a.3))
}

pub fn consensus(reads: &[PlateCandidate]) -> PlateConsensus {
    consensus_with(reads, &ConsensusConfig::default())
}
