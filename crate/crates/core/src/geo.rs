//! Dissemination-area boundaries, point-in-polygon lookup and address geocoding.
//!
//! Coordinates are (lon, lat) in degrees treated as planar: DAs are city-scale,
//! so the distortion is far below the precision of the input polygons.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("geocoding {address:?} failed: {message}")]
    Client { address: String, message: String },
}

pub type Point = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    fn of(points: impl IntoIterator<Item = Point>) -> Self {
        let mut b = BBox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for (x, y) in points {
            b.min_x = b.min_x.min(x);
            b.min_y = b.min_y.min(y);
            b.max_x = b.max_x.max(x);
            b.max_y = b.max_y.max(y);
        }
        b
    }

    pub fn contains(&self, (x, y): Point) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn center(&self) -> Point {
        ((self.min_x + self.max_x) / 2.0, (self.min_y + self.max_y) / 2.0)
    }
}

/// Closed ring: first vertex repeated as the last.
pub type Ring = Vec<Point>;

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonPart {
    pub outer: Ring,
    pub holes: Vec<Ring>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DAPolygon {
    pub da_id: String,
    /// One entry per polygon of a MultiPolygon.
    pub parts: Vec<PolygonPart>,
}

impl DAPolygon {
    pub fn new(da_id: impl Into<String>, parts: Vec<PolygonPart>) -> Result<Self, GeoError> {
        let da_id = da_id.into();
        if parts.is_empty() {
            return Err(GeoError::Validation(format!("DA {da_id} has no polygon")));
        }
        for part in &parts {
            validate_ring(&da_id, &part.outer)?;
            if ring_self_intersects(&part.outer) {
                return Err(GeoError::Validation(format!(
                    "DA {da_id}: outer ring self-intersects"
                )));
            }
            for hole in &part.holes {
                validate_ring(&da_id, hole)?;
            }
        }
        Ok(Self { da_id, parts })
    }

    /// Convenience constructor for an axis-aligned rectangle.
    pub fn rectangle(da_id: impl Into<String>, min: Point, max: Point) -> Self {
        let ring = vec![
            (min.0, min.1),
            (max.0, min.1),
            (max.0, max.1),
            (min.0, max.1),
            (min.0, min.1),
        ];
        Self::new(
            da_id,
            vec![PolygonPart {
                outer: ring,
                holes: Vec::new(),
            }],
        )
        .expect("rectangle is a valid polygon")
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        self.parts
            .iter()
            .flat_map(|p| std::iter::once(&p.outer).chain(p.holes.iter()))
    }

    pub fn bbox(&self) -> BBox {
        BBox::of(self.parts.iter().flat_map(|p| p.outer.iter().copied()))
    }

    /// Even-odd containment over every ring; points on any edge count as inside.
    pub fn contains(&self, p: Point) -> bool {
        if self.rings().any(|r| on_ring_boundary(r, p)) {
            return true;
        }
        let crossings: usize = self.rings().map(|r| ray_crossings(r, p)).sum();
        crossings % 2 == 1
    }
}

fn validate_ring(da_id: &str, ring: &Ring) -> Result<(), GeoError> {
    if ring.len() < 4 {
        return Err(GeoError::Validation(format!(
            "DA {da_id}: ring has {} points, need at least 4",
            ring.len()
        )));
    }
    if ring.first() != ring.last() {
        return Err(GeoError::Validation(format!("DA {da_id}: ring is not closed")));
    }
    if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(GeoError::Validation(format!("DA {da_id}: non-finite coordinate")));
    }
    Ok(())
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    orient(a, b, p) == 0.0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

/// Pairwise test of non-adjacent edges.
fn ring_self_intersects(ring: &Ring) -> bool {
    let n = ring.len() - 1;
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

fn on_ring_boundary(ring: &Ring, p: Point) -> bool {
    ring.windows(2).any(|w| on_segment(w[0], w[1], p))
}

fn ray_crossings(ring: &Ring, (px, py): Point) -> usize {
    ring.windows(2)
        .filter(|w| {
            let ((x1, y1), (x2, y2)) = (w[0], w[1]);
            if (y1 > py) == (y2 > py) {
                return false;
            }
            let x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
            px < x_at
        })
        .count()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeoIndex {
    polygons: BTreeMap<String, DAPolygon>,
    bboxes: BTreeMap<String, BBox>,
}

impl GeoIndex {
    pub fn new(polygons: Vec<DAPolygon>) -> Result<Self, GeoError> {
        let mut index = GeoIndex::default();
        for poly in polygons {
            if index.polygons.contains_key(&poly.da_id) {
                return Err(GeoError::Validation(format!("duplicate DAUID {}", poly.da_id)));
            }
            index.bboxes.insert(poly.da_id.clone(), poly.bbox());
            index.polygons.insert(poly.da_id.clone(), poly);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn get(&self, da_id: &str) -> Option<&DAPolygon> {
        self.polygons.get(da_id)
    }

    pub fn bbox(&self, da_id: &str) -> Option<BBox> {
        self.bboxes.get(da_id).copied()
    }

    /// Polygons in ascending DAUID order.
    pub fn polygons(&self) -> impl Iterator<Item = &DAPolygon> {
        self.polygons.values()
    }

    /// The DA containing `point`. When several polygons contain it (shared
    /// edges), the lexicographically smallest DAUID wins.
    pub fn locate(&self, point: Point) -> Option<&str> {
        // BTreeMap iteration is already in DAUID order
        self.polygons
            .iter()
            .find(|(id, poly)| self.bboxes[*id].contains(point) && poly.contains(point))
            .map(|(id, _)| id.as_str())
    }
}

pub fn locate(point: Point, index: &GeoIndex) -> Option<&str> {
    index.locate(point)
}

pub fn load_geojson(path: &Path) -> Result<GeoIndex, GeoError> {
    let text = fs::read_to_string(path).map_err(|e| GeoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_geojson(&text)
}

pub fn parse_geojson(text: &str) -> Result<GeoIndex, GeoError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| GeoError::Parse(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::Parse("expected a FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeoError::Parse("FeatureCollection without features array".into()))?;
    let mut polygons = Vec::with_capacity(features.len());
    for (i, feature) in features.iter().enumerate() {
        let id = match feature.pointer("/properties/DAUID") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => {
                return Err(GeoError::Validation(format!(
                    "feature {i} has no DAUID property"
                )))
            }
        };
        let geometry = feature
            .get("geometry")
            .filter(|g| !g.is_null())
            .ok_or_else(|| GeoError::Validation(format!("DA {id} has no geometry")))?;
        polygons.push(DAPolygon::new(id.clone(), parse_geometry(&id, geometry)?)?);
    }
    GeoIndex::new(polygons)
}

fn parse_geometry(id: &str, geometry: &Value) -> Result<Vec<PolygonPart>, GeoError> {
    let coords = geometry
        .get("coordinates")
        .ok_or_else(|| GeoError::Parse(format!("DA {id}: geometry without coordinates")))?;
    match geometry.get("type").and_then(Value::as_str) {
        Some("Polygon") => Ok(vec![parse_polygon(id, coords)?]),
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or_else(|| GeoError::Parse(format!("DA {id}: bad MultiPolygon")))?
            .iter()
            .map(|p| parse_polygon(id, p))
            .collect(),
        other => Err(GeoError::Parse(format!(
            "DA {id}: unsupported geometry type {other:?}"
        ))),
    }
}

fn parse_polygon(id: &str, coords: &Value) -> Result<PolygonPart, GeoError> {
    let rings = coords
        .as_array()
        .ok_or_else(|| GeoError::Parse(format!("DA {id}: polygon is not an array")))?;
    let mut rings = rings.iter().map(|r| parse_ring(id, r));
    let outer = rings
        .next()
        .ok_or_else(|| GeoError::Validation(format!("DA {id}: polygon without rings")))??;
    let holes = rings.collect::<Result<Vec<_>, _>>()?;
    Ok(PolygonPart { outer, holes })
}

fn parse_ring(id: &str, ring: &Value) -> Result<Ring, GeoError> {
    ring.as_array()
        .ok_or_else(|| GeoError::Parse(format!("DA {id}: ring is not an array")))?
        .iter()
        .map(|pt| match pt.as_array().map(Vec::as_slice) {
            Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => Err(GeoError::Parse(format!("DA {id}: non-numeric coordinate"))),
            },
            _ => Err(GeoError::Parse(format!("DA {id}: malformed position"))),
        })
        .collect()
}

pub fn geometry_json(poly: &DAPolygon) -> Value {
    let part_json = |p: &PolygonPart| -> Value {
        let rings: Vec<Value> = std::iter::once(&p.outer)
            .chain(p.holes.iter())
            .map(|r| Value::Array(r.iter().map(|&(x, y)| json!([x, y])).collect()))
            .collect();
        Value::Array(rings)
    };
    if poly.parts.len() == 1 {
        json!({"type": "Polygon", "coordinates": part_json(&poly.parts[0])})
    } else {
        json!({
            "type": "MultiPolygon",
            "coordinates": poly.parts.iter().map(part_json).collect::<Vec<_>>(),
        })
    }
}

pub fn write_geojson(index: &GeoIndex) -> String {
    let features: Vec<Value> = index
        .polygons()
        .map(|p| {
            let mut props = Map::new();
            props.insert("DAUID".into(), Value::String(p.da_id.clone()));
            json!({"type": "Feature", "properties": props, "geometry": geometry_json(p)})
        })
        .collect();
    serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": features}))
        .expect("geojson serializes")
}

/// Address → coordinate resolution. Implementations must be callable from
/// several threads at once.
pub trait GeocodeClient: Send + Sync {
    /// `Ok(None)` means the service has no match for the address.
    fn geocode(&self, address: &str) -> Result<Option<Point>, String>;
}

/// Offline geocoder backed by a JSON object `{address: [lon, lat]}`.
#[derive(Debug, Clone, Default)]
pub struct FixtureGeocoder {
    table: BTreeMap<String, Point>,
}

impl FixtureGeocoder {
    pub fn new(table: BTreeMap<String, Point>) -> Self {
        Self { table }
    }

    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let text = fs::read_to_string(path).map_err(|e| GeoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GeoError> {
        let raw: BTreeMap<String, [f64; 2]> =
            serde_json::from_str(text).map_err(|e| GeoError::Parse(format!("address fixture: {e}")))?;
        Ok(Self {
            table: raw.into_iter().map(|(k, [x, y])| (k, (x, y))).collect(),
        })
    }

    pub fn addresses(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&str, [f64; 2]> =
            self.table.iter().map(|(k, &(x, y))| (k.as_str(), [x, y])).collect();
        serde_json::to_string_pretty(&raw).expect("fixture serializes")
    }
}

impl GeocodeClient for FixtureGeocoder {
    fn geocode(&self, address: &str) -> Result<Option<Point>, String> {
        Ok(self.table.get(address).copied())
    }
}

/// Generic HTTP geocoder: GET on a URL template, coordinates pulled from the
/// JSON response with dotted paths (`results.0.geometry.location.lng`).
#[derive(Debug, Clone)]
pub struct HttpGeocoder {
    pub url_template: String,
    pub api_key: String,
    pub lon_path: String,
    pub lat_path: String,
}

impl HttpGeocoder {
    pub const DEFAULT_LON_PATH: &'static str = "results.0.geometry.location.lng";
    pub const DEFAULT_LAT_PATH: &'static str = "results.0.geometry.location.lat";

    /// Reads GEOCODER_URL_TEMPLATE and GEOCODER_API_KEY (and optionally
    /// GEOCODER_LON_PATH / GEOCODER_LAT_PATH). `None` when unconfigured.
    pub fn from_env() -> Option<Self> {
        let url_template = std::env::var("GEOCODER_URL_TEMPLATE").ok()?;
        Some(Self {
            url_template,
            api_key: std::env::var("GEOCODER_API_KEY").unwrap_or_default(),
            lon_path: std::env::var("GEOCODER_LON_PATH")
                .unwrap_or_else(|_| Self::DEFAULT_LON_PATH.into()),
            lat_path: std::env::var("GEOCODER_LAT_PATH")
                .unwrap_or_else(|_| Self::DEFAULT_LAT_PATH.into()),
        })
    }

    /// Substitutes `{address}` and `{key}` with percent-encoded values.
    pub fn request_url(&self, address: &str) -> String {
        self.url_template
            .replace("{address}", &percent_encode(address))
            .replace("{key}", &percent_encode(&self.api_key))
    }

    pub fn extract(&self, body: &Value) -> Option<Point> {
        let lon = json_path(body, &self.lon_path)?.as_f64()?;
        let lat = json_path(body, &self.lat_path)?.as_f64()?;
        Some((lon, lat))
    }
}

impl GeocodeClient for HttpGeocoder {
    fn geocode(&self, address: &str) -> Result<Option<Point>, String> {
        let url = self.request_url(address);
        let mut response = ureq::get(&url).call().map_err(|e| e.to_string())?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        let body: Value =
            serde_json::from_str(&text).map_err(|e| format!("response is not JSON: {e}"))?;
        Ok(self.extract(&body))
    }
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

pub fn json_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').filter(|s| !s.is_empty()).try_fold(value, |v, seg| match v {
        Value::Array(items) => items.get(seg.parse::<usize>().ok()?),
        Value::Object(map) => map.get(seg),
        _ => None,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AddressAssignment {
    pub counts: BTreeMap<String, usize>,
    /// Addresses the client could not resolve or that fell outside every DA.
    pub rejects: Vec<String>,
}

pub fn assign_addresses<S: AsRef<str>>(
    addresses: &[S],
    client: &dyn GeocodeClient,
    index: &GeoIndex,
) -> Result<AddressAssignment, GeoError> {
    let mut out = AddressAssignment::default();
    for address in addresses {
        let address = address.as_ref();
        let point = client.geocode(address).map_err(|message| GeoError::Client {
            address: address.to_string(),
            message,
        })?;
        match point.and_then(|p| index.locate(p)) {
            Some(id) => *out.counts.entry(id.to_string()).or_default() += 1,
            None => out.rejects.push(address.to_string()),
        }
    }
    Ok(out)
}
