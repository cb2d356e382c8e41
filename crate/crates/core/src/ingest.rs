//! Detection-stream wire format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"frame":3,"ts_ms":120,"dets":[{"box":[10,20,50,40],"label":"suv","conf":0.9,
//!   "mask":[10,20,60,20,60,60],"plates":[{"text":"AB12 CDE","conf":0.8}]}]}
//! ```
//!
//! Boxes are `[x, y, w, h]` in pixels with the origin at the top-left corner.
//! Unknown keys are ignored so newer exporters can add fields.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Axis-aligned box, top-left corner plus size, in pixels.
///
/// The fields are public because the tracker also works with predicted boxes
/// that may leave the image; [`BoundingBox::validate`] enforces the wire
/// invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Returns the name of the first violated field, if any.
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.x.is_finite() && self.x >= 0.0) {
            return Err("x");
        }
        if !(self.y.is_finite() && self.y >= 0.0) {
            return Err("y");
        }
        if !(self.w.is_finite() && self.w > 0.0) {
            return Err("w");
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err("h");
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// Closed simple polygon in image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonMask {
    vertices: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PolygonError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon coordinate is not finite")]
    NonFinite,
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
}

impl PolygonMask {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self, PolygonError> {
        if vertices.len() < 3 {
            return Err(PolygonError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(PolygonError::NonFinite);
        }
        if let Some((i, j)) = first_self_intersection(&vertices) {
            return Err(PolygonError::SelfIntersecting(i, j));
        }
        Ok(Self { vertices })
    }

    /// Builds a polygon from a flat `[x1, y1, x2, y2, ...]` array.
    pub fn from_flat(flat: &[f64]) -> Result<Self, PolygonError> {
        if flat.len() % 2 != 0 {
            return Err(PolygonError::TooFewVertices(flat.len() / 2));
        }
        Self::new(flat.chunks_exact(2).map(|c| (c[0], c[1])).collect())
    }

    /// Axis-aligned rectangle as a 4-vertex polygon.
    pub fn from_box(b: &BoundingBox) -> Self {
        Self {
            vertices: vec![(b.x, b.y), (b.right(), b.y), (b.right(), b.bottom()), (b.x, b.bottom())],
        }
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|&(x, y)| [x, y]).collect()
    }

    /// Shoelace area, always nonnegative.
    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }
}

pub(crate) fn signed_area(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// O(n²) check over non-adjacent edge pairs. Masks are small enough.
fn first_self_intersection(pts: &[(f64, f64)]) -> Option<(usize, usize)> {
    let n = pts.len();
    for i in 0..n {
        let (a1, a2) = (pts[i], pts[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (b1, b2) = (pts[j], pts[(j + 1) % n]);
            if adjacent {
                // Adjacent edges share one vertex; they only conflict when they fold back onto each other.
                let shared = if j == i + 1 { a2 } else { a1 };
                let (other_a, other_b) = if j == i + 1 { (a1, b2) } else { (a2, b1) };
                if orient(shared, other_a, other_b) == 0.0
                    && (on_segment(shared, other_a, other_b) || on_segment(shared, other_b, other_a))
                    && n > 3
                {
                    return Some((i, j));
                }
                continue;
            }
            if segments_intersect(a1, a2, b1, b2) {
                return Some((i, j));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateCandidate {
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub mask: Option<PolygonMask>,
    pub label: String,
    pub confidence: f64,
    pub plate_candidates: Vec<PlateCandidate>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, label: impl Into<String>, confidence: f64) -> Self {
        Self { bbox, mask: None, label: label.into(), confidence, plate_candidates: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record at `{path}`: {message}")]
    MalformedRecord { line: usize, path: String, message: String },
    #[error("line {line}: schema violation at `{path}`: {message}")]
    SchemaViolation { line: usize, path: String, message: String },
}

impl IngestError {
    pub fn line(&self) -> usize {
        match self {
            IngestError::MalformedRecord { line, .. } | IngestError::SchemaViolation { line, .. } => *line,
        }
    }

    pub fn path(&self) -> &str {
        match self {
            IngestError::MalformedRecord { path, .. } | IngestError::SchemaViolation { path, .. } => path,
        }
    }
}

// Wire-level structs shared with the evaluation file dialect.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct WirePlate {
    pub text: String,
    pub conf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct WireDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub label: String,
    #[serde(default = "default_conf")]
    pub conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plates: Option<Vec<WirePlate>>,
}

// Ground-truth files may omit confidences.
fn default_conf() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
struct WireFrame {
    frame: u64,
    ts_ms: u64,
    dets: Vec<WireDetection>,
}

/// Deserializes `text` as `T`, classifying failures into the two error kinds.
pub(crate) fn decode<T: serde::de::DeserializeOwned>(text: &str, line: usize) -> Result<T, IngestError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        if inner.is_data() {
            IngestError::SchemaViolation { line, path, message }
        } else {
            IngestError::MalformedRecord { line, path, message }
        }
    })?;
    de.end().map_err(|e| IngestError::MalformedRecord { line, path: ".".into(), message: e.to_string() })?;
    Ok(value)
}

fn unit_interval(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

pub(crate) fn detection_from_wire(wire: WireDetection, line: usize, prefix: &str) -> Result<Detection, IngestError> {
    let violation = |field: &str, message: String| IngestError::SchemaViolation {
        line,
        path: format!("{prefix}.{field}"),
        message,
    };
    let [x, y, w, h] = wire.bbox;
    let bbox = BoundingBox::new(x, y, w, h);
    if let Err(field) = bbox.validate() {
        let value = match field {
            "x" => x,
            "y" => y,
            "w" => w,
            _ => h,
        };
        return Err(violation(&format!("box.{field}"), format!("invalid value {value}")));
    }
    if wire.label.trim().is_empty() {
        return Err(violation("label", "label must be non-empty".into()));
    }
    if !unit_interval(wire.conf) {
        return Err(violation("conf", format!("confidence {} outside [0,1]", wire.conf)));
    }
    let mask = match wire.mask {
        Some(flat) => Some(PolygonMask::from_flat(&flat).map_err(|e| violation("mask", e.to_string()))?),
        None => None,
    };
    let mut plate_candidates = Vec::new();
    for (k, p) in wire.plates.unwrap_or_default().into_iter().enumerate() {
        if !unit_interval(p.conf) {
            return Err(violation(&format!("plates[{k}].conf"), format!("confidence {} outside [0,1]", p.conf)));
        }
        plate_candidates.push(PlateCandidate { text: p.text, confidence: p.conf });
    }
    Ok(Detection { bbox, mask, label: wire.label, confidence: wire.conf, plate_candidates })
}

pub(crate) fn detection_to_wire(d: &Detection) -> WireDetection {
    WireDetection {
        bbox: d.bbox.to_array(),
        label: d.label.clone(),
        conf: d.confidence,
        mask: d.mask.as_ref().map(PolygonMask::to_flat),
        plates: if d.plate_candidates.is_empty() {
            None
        } else {
            Some(d.plate_candidates.iter().map(|p| WirePlate { text: p.text.clone(), conf: p.confidence }).collect())
        },
    }
}

/// Parses one JSONL record. `line_number` is 1-based and only used in errors.
pub fn parse_frame_line(line: &str, line_number: usize) -> Result<FrameRecord, IngestError> {
    let wire: WireFrame = decode(line, line_number)?;
    let detections = wire
        .dets
        .into_iter()
        .enumerate()
        .map(|(i, d)| detection_from_wire(d, line_number, &format!("dets[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrameRecord { frame_index: wire.frame, timestamp_ms: wire.ts_ms, detections })
}

/// Same as [`parse_frame_line`] but for raw bytes; invalid UTF-8 is a malformed record.
pub fn parse_frame_bytes(bytes: &[u8], line_number: usize) -> Result<FrameRecord, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::MalformedRecord {
        line: line_number,
        path: ".".into(),
        message: e.to_string(),
    })?;
    parse_frame_line(text, line_number)
}

impl FrameRecord {
    /// Serializes to a single JSONL line (no trailing newline).
    pub fn to_line(&self) -> String {
        let wire = WireFrame {
            frame: self.frame_index,
            ts_ms: self.timestamp_ms,
            dets: self.detections.iter().map(detection_to_wire).collect(),
        };
        serde_json::to_string(&wire).expect("wire frame serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OrderViolationKind {
    FrameNotIncreasing,
    TimestampDecreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderViolation {
    /// 0-based index of the offending record.
    pub record_index: usize,
    pub kind: OrderViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StreamSummary {
    pub frames: usize,
    pub detections: usize,
    pub first_violation: Option<OrderViolation>,
}

impl StreamSummary {
    pub fn is_clean(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Incremental ordering checker, so streams never have to be buffered.
#[derive(Debug, Default)]
pub struct StreamValidator {
    summary: StreamSummary,
    last: Option<(u64, u64)>,
}

impl StreamValidator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: &FrameRecord) {
        let index = self.summary.frames;
        self.summary.frames += 1;
        self.summary.detections += record.detections.len();
        if let Some((frame, ts)) = self.last {
            let kind = if record.frame_index <= frame {
                Some(OrderViolationKind::FrameNotIncreasing)
            } else if record.timestamp_ms < ts {
                Some(OrderViolationKind::TimestampDecreasing)
            } else {
                None
            };
            if let (Some(kind), None) = (kind, self.summary.first_violation) {
                self.summary.first_violation = Some(OrderViolation { record_index: index, kind });
            }
        }
        self.last = Some((record.frame_index, record.timestamp_ms));
    }

    pub fn finish(self) -> StreamSummary {
        self.summary
    }
}

pub fn validate_stream<'a>(records: impl IntoIterator<Item = &'a FrameRecord>) -> StreamSummary {
    let mut v = StreamValidator::new();
    for r in records {
        v.push(r);
    }
    v.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(index: u64, ts: u64) -> FrameRecord {
        FrameRecord { frame_index: index, timestamp_ms: ts, detections: vec![] }
    }

    #[test]
    fn empty_frame() {
        let r = parse_frame_line(r#"{"frame":0,"ts_ms":0,"dets":[]}"#, 1).unwrap();
        assert_eq!(r, frame(0, 0));
    }

    #[test]
    fn minimal_detection() {
        let r = parse_frame_line(r#"{"frame":3,"ts_ms":120,"dets":[{"box":[10,20,50,40],"label":"suv","conf":0.9}]}"#, 1)
            .unwrap();
        assert_eq!(r.frame_index, 3);
        assert_eq!(r.timestamp_ms, 120);
        assert_eq!(r.detections.len(), 1);
        let d = &r.detections[0];
        assert_eq!(d.bbox, BoundingBox::new(10.0, 20.0, 50.0, 40.0));
        assert!(d.mask.is_none());
        assert!(d.plate_candidates.is_empty());
        assert_eq!(d.label, "suv");
    }

    #[test]
    fn negative_width_is_schema_violation() {
        let err = parse_frame_line(r#"{"frame":1,"ts_ms":40,"dets":[{"box":[0,0,-5,10],"label":"car","conf":0.5}]}"#, 7)
            .unwrap_err();
        match err {
            IngestError::SchemaViolation { line, ref path, .. } => {
                assert_eq!(line, 7);
                assert_eq!(path, "dets[0].box.w");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_and_bad_syntax() {
        let err = parse_frame_line(r#"{"frame":1,"dets":[]}"#, 2).unwrap_err();
        assert!(matches!(err, IngestError::SchemaViolation { .. }), "{err:?}");
        assert!(err.to_string().contains("ts_ms"));
        let err = parse_frame_line(r#"{"frame":1,"ts_ms":"#, 3).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRecord { line: 3, .. }));
        let err = parse_frame_line(r#"{"frame":1,"ts_ms":0,"dets":[]} trailing"#, 4).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRecord { .. }));
    }

    #[test]
    fn type_error_carries_path() {
        let err = parse_frame_line(r#"{"frame":1,"ts_ms":0,"dets":[{"box":[0,0,5,5],"label":3,"conf":0.5}]}"#, 1)
            .unwrap_err();
        assert_eq!(err.path(), "dets[0].label");
    }

    #[test]
    fn unknown_fields_ignored() {
        let r = parse_frame_line(
            r#"{"frame":0,"ts_ms":0,"camera":"north","dets":[{"box":[1,1,2,2],"label":"bus","conf":1,"track_hint":4}]}"#,
            1,
        )
        .unwrap();
        assert_eq!(r.detections.len(), 1);
    }

    #[test]
    fn mask_and_plates() {
        let r = parse_frame_line(
            r#"{"frame":0,"ts_ms":0,"dets":[{"box":[0,0,10,10],"label":"car","conf":0.7,"mask":[0,0,10,0,10,10,0,10],"plates":[{"text":"AB12 CDE","conf":0.8}]}]}"#,
            1,
        )
        .unwrap();
        let d = &r.detections[0];
        assert_eq!(d.mask.as_ref().unwrap().area(), 100.0);
        assert_eq!(d.plate_candidates[0].text, "AB12 CDE");
        let err = parse_frame_line(
            r#"{"frame":0,"ts_ms":0,"dets":[{"box":[0,0,10,10],"label":"car","conf":0.7,"plates":[{"text":"X","conf":1.5}]}]}"#,
            1,
        )
        .unwrap_err();
        assert_eq!(err.path(), "dets[0].plates[0].conf");
    }

    #[test]
    fn self_intersecting_mask_rejected() {
        // bow-tie
        let err = PolygonMask::from_flat(&[0.0, 0.0, 10.0, 10.0, 10.0, 0.0, 0.0, 10.0]).unwrap_err();
        assert!(matches!(err, PolygonError::SelfIntersecting(..)));
        assert!(PolygonMask::from_flat(&[0.0, 0.0, 1.0, 1.0]).is_err());
        // concave L-shape is fine
        assert!(PolygonMask::from_flat(&[0.0, 0.0, 2.0, 0.0, 2.0, 1.0, 1.0, 1.0, 1.0, 2.0, 0.0, 2.0]).is_ok());
    }

    #[test]
    fn stream_ordering() {
        let s = validate_stream(&[frame(0, 0), frame(1, 40), frame(2, 80)]);
        assert!(s.is_clean());
        assert_eq!(s.frames, 3);
        let s = validate_stream(&[frame(0, 0), frame(2, 40), frame(1, 80)]);
        assert_eq!(s.first_violation.unwrap().record_index, 2);
        assert_eq!(s.first_violation.unwrap().kind, OrderViolationKind::FrameNotIncreasing);
        let s = validate_stream(&[frame(0, 100), frame(1, 50)]);
        assert_eq!(
            s.first_violation,
            Some(OrderViolation { record_index: 1, kind: OrderViolationKind::TimestampDecreasing })
        );
    }

    fn arb_detection() -> impl Strategy<Value = Detection> {
        (
            0.0..1000.0f64,
            0.0..1000.0f64,
            0.5..300.0f64,
            0.5..300.0f64,
            "[a-z]{1,8}",
            0.0..=1.0f64,
            proptest::collection::vec(("[A-Z0-9 ]{0,9}", 0.0..=1.0f64), 0..3),
            any::<bool>(),
        )
            .prop_map(|(x, y, w, h, label, conf, plates, with_mask)| Detection {
                bbox: BoundingBox::new(x, y, w, h),
                mask: with_mask.then(|| PolygonMask::from_box(&BoundingBox::new(x, y, w, h))),
                label,
                confidence: conf,
                plate_candidates: plates.into_iter().map(|(text, confidence)| PlateCandidate { text, confidence }).collect(),
            })
    }

    proptest! {
        #[test]
        fn round_trip(frame_index in 0u64..1_000_000, ts in 0u64..10_000_000, dets in proptest::collection::vec(arb_detection(), 0..5)) {
            let rec = FrameRecord { frame_index, timestamp_ms: ts, detections: dets };
            let back = parse_frame_line(&rec.to_line(), 1).unwrap();
            prop_assert_eq!(back, rec);
        }

        #[test]
        fn never_panics_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = parse_frame_bytes(&bytes, 1);
        }

        #[test]
        fn never_panics_on_jsonish(s in r#"[\{\}\[\]":,0-9a-z_.\- ]{0,80}"#) {
            let _ = parse_frame_line(&s, 1);
        }
    }
}
