use serde::{Deserialize, Serialize};

use super::{GeoError, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Closed ring: first vertex equals last vertex.
pub type Ring = Vec<Point>;

/// Polygon with one exterior ring and zero or more holes, in map coordinates.
///
/// Construction normalizes orientation (exterior counter-clockwise, holes
/// clockwise, with y pointing north) so area signs and serialization are
/// unambiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    exterior: Ring,
    holes: Vec<Ring>,
}

impl Polygon {
    /// Validating constructor: rings must be closed, have at least four
    /// vertices, and be free of crossings.
    pub fn new(exterior: Ring, holes: Vec<Ring>) -> Result<Self, GeoError> {
        validate_ring(&exterior).map_err(|e| GeoError::InvalidPolygon(format!("exterior: {e}")))?;
        for (i, h) in holes.iter().enumerate() {
            validate_ring(h).map_err(|e| GeoError::InvalidPolygon(format!("hole {i}: {e}")))?;
        }
        Ok(Self::from_rings_unchecked(exterior, holes))
    }

    /// Orientation-normalizing constructor for rings already known to be valid
    /// (e.g. traced along the pixel lattice).
    pub(crate) fn from_rings_unchecked(mut exterior: Ring, mut holes: Vec<Ring>) -> Self {
        if signed_area(&exterior) < 0.0 {
            exterior.reverse();
        }
        for h in &mut holes {
            if signed_area(h) > 0.0 {
                h.reverse();
            }
        }
        Self { exterior, holes }
    }

    /// Axis-aligned rectangle, counter-clockwise.
    pub fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, GeoError> {
        Self::new(
            vec![
                Point::new(min_x, min_y),
                Point::new(max_x, min_y),
                Point::new(max_x, max_y),
                Point::new(min_x, max_y),
                Point::new(min_x, min_y),
            ],
            vec![],
        )
    }

    /// Closes the ring if needed, then validates.
    pub fn from_vertices(vertices: &[Point]) -> Result<Self, GeoError> {
        let mut ring = vertices.to_vec();
        if ring.first() != ring.last() {
            if let Some(&p) = ring.first() {
                ring.push(p);
            }
        }
        Self::new(ring, vec![])
    }

    pub fn exterior(&self) -> &Ring {
        &self.exterior
    }

    pub fn holes(&self) -> &[Ring] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    /// Net area (exterior minus holes), map units squared.
    pub fn area(&self) -> f64 {
        signed_area(&self.exterior) + self.holes.iter().map(|h| signed_area(h)).sum::<f64>()
    }

    pub fn bbox(&self) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.exterior {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        r
    }

    /// Even-odd containment over all rings.
    pub fn contains(&self, p: Point) -> bool {
        self.rings().fold(false, |inside, ring| inside ^ point_in_ring(ring, p))
    }

    /// Apply `f` to every vertex and re-normalize orientation (mirroring
    /// transforms flip it).
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Polygon {
        let ext = self.exterior.iter().map(|&p| f(p)).collect();
        let holes = self.holes.iter().map(|h| h.iter().map(|&p| f(p)).collect()).collect();
        Polygon::from_rings_unchecked(ext, holes)
    }

    /// Iterator over every edge `(a, b)` of every ring.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings().flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }
}

/// Shoelace signed area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    ring.windows(2).map(|w| w[0].x * w[1].y - w[1].x * w[0].y).sum::<f64>() / 2.0
}

/// Even-odd ray casting (ray toward +x) against one closed ring.
pub fn point_in_ring(ring: &[Point], p: Point) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn validate_ring(ring: &[Point]) -> Result<(), String> {
    if ring.len() < 4 {
        return Err(format!("{} vertices, need at least 4", ring.len()));
    }
    if ring.first() != ring.last() {
        return Err("ring is not closed".into());
    }
    if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    if signed_area(ring) == 0.0 {
        return Err("zero-area ring".into());
    }
    let n = ring.len() - 1;
    for i in 0..n {
        if ring[i] == ring[i + 1] {
            return Err(format!("repeated vertex at {i}"));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (a, b) = (ring[i], ring[i + 1]);
            let (c, d) = (ring[j], ring[j + 1]);
            if adjacent {
                // Adjacent edges share one endpoint; they may not fold back onto each other.
                let shared = if j == i + 1 { b } else { a };
                let (p, q) = if j == i + 1 { (a, d) } else { (b, c) };
                if cross(shared, p, q) == 0.0 && dot(shared, p, q) > 0.0 {
                    return Err(format!("edges {i} and {j} overlap"));
                }
                continue;
            }
            if let Some(reason) = segments_conflict(a, b, c, d) {
                return Err(format!("edges {i} and {j} {reason}"));
            }
        }
    }
    Ok(())
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn dot(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.x - o.x) + (a.y - o.y) * (b.y - o.y)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Non-adjacent edges may share a vertex (a ring touching itself at a point,
/// as lattice-traced outlines do at diagonal pinches) but may not cross,
/// overlap, or touch in an edge interior.
fn segments_conflict(a: Point, b: Point, c: Point, d: Point) -> Option<&'static str> {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return Some("cross");
    }
    if d1 == 0.0 && d2 == 0.0 {
        // Collinear: overlap of positive length is a conflict.
        let (lo, hi) = if (a.x - b.x).abs() >= (a.y - b.y).abs() {
            let (ab0, ab1) = (a.x.min(b.x), a.x.max(b.x));
            let (cd0, cd1) = (c.x.min(d.x), c.x.max(d.x));
            (ab0.max(cd0), ab1.min(cd1))
        } else {
            let (ab0, ab1) = (a.y.min(b.y), a.y.max(b.y));
            let (cd0, cd1) = (c.y.min(d.y), c.y.max(d.y));
            (ab0.max(cd0), ab1.min(cd1))
        };
        if lo < hi {
            return Some("overlap");
        }
        return None;
    }
    let is_vertex = |p: Point| p == a || p == b;
    if d1 == 0.0 && on_segment(c, d, a) && !(a == c || a == d) {
        return Some("touch at an edge interior");
    }
    if d2 == 0.0 && on_segment(c, d, b) && !(b == c || b == d) {
        return Some("touch at an edge interior");
    }
    if d3 == 0.0 && on_segment(a, b, c) && !is_vertex(c) {
        return Some("touch at an edge interior");
    }
    if d4 == 0.0 && on_segment(a, b, d) && !is_vertex(d) {
        return Some("touch at an edge interior");
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Maturity {
    Young,
    Mature,
    Unknown,
}

impl Maturity {
    pub fn as_str(self) -> &'static str {
        match self {
            Maturity::Young => "young",
            Maturity::Mature => "mature",
            Maturity::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expert,
    ModelProposed,
    ModelApproved,
    Synthetic,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Expert => "expert",
            Provenance::ModelProposed => "model_proposed",
            Provenance::ModelApproved => "model_approved",
            Provenance::Synthetic => "synthetic",
        }
    }
}

/// A labeled crop parcel. Serializes with the polygon as a GeoJSON geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParcelLabel {
    pub id: String,
    pub polygon: Polygon,
    pub maturity: Maturity,
    pub provenance: Provenance,
    pub phase: u8,
}

impl ParcelLabel {
    pub fn new(
        id: impl Into<String>,
        polygon: Polygon,
        maturity: Maturity,
        provenance: Provenance,
        phase: u8,
    ) -> Result<Self, GeoError> {
        if !(1..=3).contains(&phase) {
            return Err(GeoError::InvalidInput(format!("phase {phase} outside 1..=3")));
        }
        Ok(Self {
            id: id.into(),
            polygon,
            maturity,
            provenance,
            phase,
        })
    }
}
