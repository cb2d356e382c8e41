//! Mask IoU by exact polygon clipping, with a rasterized cross-check.

use geo::{BooleanOps, Coord, LineString, Polygon};
use thiserror::Error;

use crate::ingest::{signed_area, PolygonMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PolygonIouError {
    #[error("polygon has zero area")]
    DegeneratePolygon,
}

fn to_geo(p: &PolygonMask) -> Polygon<f64> {
    let ring: Vec<Coord<f64>> = p.vertices().iter().map(|&(x, y)| Coord { x, y }).collect();
    Polygon::new(LineString::new(ring), vec![])
}

fn ring_area(ls: &LineString<f64>) -> f64 {
    let pts: Vec<(f64, f64)> = ls.coords().map(|c| (c.x, c.y)).collect();
    signed_area(&pts).abs()
}

/// Area of `a ∩ b`, clipped exactly; areas by the shoelace formula.
pub fn intersection_area(a: &PolygonMask, b: &PolygonMask) -> f64 {
    let clipped = to_geo(a).intersection(&to_geo(b));
    clipped
        .0
        .iter()
        .map(|poly| ring_area(poly.exterior()) - poly.interiors().iter().map(ring_area).sum::<f64>())
        .sum::<f64>()
        .max(0.0)
}

pub fn polygon_iou(a: &PolygonMask, b: &PolygonMask) -> Result<f64, PolygonIouError> {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 || area_b <= 0.0 {
        return Err(PolygonIouError::DegeneratePolygon);
    }
    let inter = intersection_area(a, b).min(area_a).min(area_b);
    let union = area_a + area_b - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

fn contains(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    // even-odd rule
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// IoU estimated on a `resolution × resolution` grid of cell centres over the
/// joint bounding box. Converges to [`polygon_iou`] as resolution grows.
pub fn polygon_iou_raster(a: &PolygonMask, b: &PolygonMask, resolution: usize) -> Result<f64, PolygonIouError> {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return Err(PolygonIouError::DegeneratePolygon);
    }
    let all = a.vertices().iter().chain(b.vertices());
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let res = resolution.max(1);
    let (dx, dy) = ((x1 - x0) / res as f64, (y1 - y0) / res as f64);
    let (mut inter, mut union) = (0u64, 0u64);
    for i in 0..res {
        let x = x0 + (i as f64 + 0.5) * dx;
        for j in 0..res {
            let y = y0 + (j as f64 + 0.5) * dy;
            let (ia, ib) = (contains(a.vertices(), x, y), contains(b.vertices(), x, y));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}
