//! Shared domain model: positions, AIS records, port polygons and run config.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Heading value AIS uses for "not available".
pub const HEADING_UNAVAILABLE: f64 = 511.0;
/// Navigational status code for a moored vessel.
pub const NAV_STATUS_MOORED: u8 = 5;

/// WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VesselType {
    Cargo,
    Tanker,
    Passenger,
    Fishing,
    Other,
}

impl VesselType {
    /// Maps an AIS ship-type code onto the coarse categories.
    pub fn from_ais_code(code: i64) -> Self {
        match code {
            70..=79 => VesselType::Cargo,
            80..=89 => VesselType::Tanker,
            60..=69 => VesselType::Passenger,
            30 => VesselType::Fishing,
            _ => VesselType::Other,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            VesselType::Cargo => "Cargo",
            VesselType::Tanker => "Tanker",
            VesselType::Passenger => "Passenger",
            VesselType::Fishing => "Fishing",
            VesselType::Other => "Other",
        }
    }

    fn parse(s: &str) -> Self {
        let s = s.trim();
        if let Ok(code) = s.parse::<i64>() {
            return Self::from_ais_code(code);
        }
        match s.to_ascii_lowercase().as_str() {
            "cargo" => VesselType::Cargo,
            "tanker" => VesselType::Tanker,
            "passenger" => VesselType::Passenger,
            "fishing" => VesselType::Fishing,
            _ => VesselType::Other,
        }
    }

    pub fn is_cargo_or_tanker(&self) -> bool {
        matches!(self, VesselType::Cargo | VesselType::Tanker)
    }
}

impl fmt::Display for VesselType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for VesselType {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for VesselType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Code(i64),
            Name(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Code(c) => VesselType::from_ais_code(c),
            Raw::Name(s) => VesselType::parse(&s),
        })
    }
}

/// Distances from the AIS receiver to bow, stern, port side and starboard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dimensions {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Dimensions {
    pub fn length(&self) -> f64 {
        self.a + self.b
    }

    pub fn beam(&self) -> f64 {
        self.c + self.d
    }
}

/// One normalized AIS message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "AisRow", into = "AisRow")]
pub struct AisRecord {
    pub mmsi: u64,
    /// UTC seconds.
    pub timestamp: i64,
    pub position: GeoPoint,
    /// Knots.
    pub speed_over_ground: f64,
    /// Degrees clockwise from true north, or 511.
    pub heading: f64,
    pub nav_status: u8,
    pub vessel_type: VesselType,
    pub dim_a: Option<f64>,
    pub dim_b: Option<f64>,
    pub dim_c: Option<f64>,
    pub dim_d: Option<f64>,
}

impl AisRecord {
    pub fn heading_available(&self) -> bool {
        self.heading != HEADING_UNAVAILABLE
    }

    /// All four dimensions, if present.
    pub fn dimensions(&self) -> Option<Dimensions> {
        Some(Dimensions {
            a: self.dim_a?,
            b: self.dim_b?,
            c: self.dim_c?,
            d: self.dim_d?,
        })
    }

    pub fn is_moored(&self) -> bool {
        self.nav_status == NAV_STATUS_MOORED
    }
}

/// Flat wire form shared by the JSON Lines and CSV readers.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct AisRow {
    mmsi: u64,
    timestamp: i64,
    lat: f64,
    lon: f64,
    speed_over_ground: f64,
    heading: f64,
    nav_status: u8,
    vessel_type: VesselType,
    #[serde(default)]
    dim_a: Option<f64>,
    #[serde(default)]
    dim_b: Option<f64>,
    #[serde(default)]
    dim_c: Option<f64>,
    #[serde(default)]
    dim_d: Option<f64>,
}

impl From<AisRow> for AisRecord {
    fn from(r: AisRow) -> Self {
        AisRecord {
            mmsi: r.mmsi,
            timestamp: r.timestamp,
            position: GeoPoint::new(r.lat, r.lon),
            speed_over_ground: r.speed_over_ground,
            heading: r.heading,
            nav_status: r.nav_status,
            vessel_type: r.vessel_type,
            dim_a: r.dim_a,
            dim_b: r.dim_b,
            dim_c: r.dim_c,
            dim_d: r.dim_d,
        }
    }
}

impl From<AisRecord> for AisRow {
    fn from(r: AisRecord) -> Self {
        AisRow {
            mmsi: r.mmsi,
            timestamp: r.timestamp,
            lat: r.position.lat,
            lon: r.position.lon,
            speed_over_ground: r.speed_over_ground,
            heading: r.heading,
            nav_status: r.nav_status,
            vessel_type: r.vessel_type,
            dim_a: r.dim_a,
            dim_b: r.dim_b,
            dim_c: r.dim_c,
            dim_d: r.dim_d,
        }
    }
}

/// Why a record was rejected by [`validate_record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    BadLatitude,
    BadLongitude,
    BadHeading,
    PartialDimensions,
    NegativeDimension,
    BadSpeed,
}

pub fn validate_record(raw: AisRecord) -> std::result::Result<AisRecord, Rejection> {
    let p = raw.position;
    if !(-90.0..=90.0).contains(&p.lat) {
        return Err(Rejection::BadLatitude);
    }
    if !(-180.0..=180.0).contains(&p.lon) {
        return Err(Rejection::BadLongitude);
    }
    if raw.heading != HEADING_UNAVAILABLE && !(0.0..360.0).contains(&raw.heading) {
        return Err(Rejection::BadHeading);
    }
    let dims = [raw.dim_a, raw.dim_b, raw.dim_c, raw.dim_d];
    let present = dims.iter().filter(|d| d.is_some()).count();
    if present != 0 && present != 4 {
        return Err(Rejection::PartialDimensions);
    }
    if dims.iter().flatten().any(|&d| !(d >= 0.0)) {
        return Err(Rejection::NegativeDimension);
    }
    if !(raw.speed_over_ground >= 0.0) {
        return Err(Rejection::BadSpeed);
    }
    Ok(raw)
}

/// Simple closed polygon in geographic coordinates.
///
/// The closing vertex is implicit: `vertices` never repeats the first point.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPolygon {
    vertices: Vec<GeoPoint>,
}

impl RoiPolygon {
    pub fn new(mut vertices: Vec<GeoPoint>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        let mut distinct = vertices.clone();
        distinct.sort_by(|a, b| a.lat.total_cmp(&b.lat).then(a.lon.total_cmp(&b.lon)));
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(Error::Config("polygon needs at least 3 distinct vertices".into()));
        }
        if let Some(bad) = vertices.iter().find(|v| !v.is_valid()) {
            return Err(Error::Config(format!("polygon vertex out of range: {bad:?}")));
        }
        let poly = Self { vertices };
        if !poly.is_simple() {
            return Err(Error::Config("polygon ring self-intersects".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle, convenient for tests and synthetic ports.
    pub fn rectangle(min: GeoPoint, max: GeoPoint) -> Result<Self> {
        Self::new(vec![
            GeoPoint::new(min.lat, min.lon),
            GeoPoint::new(min.lat, max.lon),
            GeoPoint::new(max.lat, max.lon),
            GeoPoint::new(max.lat, min.lon),
        ])
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    /// Vertices with the first point repeated at the end.
    pub fn closed_ring(&self) -> Vec<GeoPoint> {
        let mut ring = self.vertices.clone();
        ring.push(self.vertices[0]);
        ring
    }

    pub fn edges(&self) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn centroid(&self) -> GeoPoint {
        let n = self.vertices.len() as f64;
        let lat = self.vertices.iter().map(|v| v.lat).sum::<f64>() / n;
        let lon = self.vertices.iter().map(|v| v.lon).sum::<f64>() / n;
        GeoPoint::new(lat, lon)
    }

    /// (min, max) corners of the bounding box.
    pub fn bounds(&self) -> (GeoPoint, GeoPoint) {
        let mut lo = GeoPoint::new(f64::INFINITY, f64::INFINITY);
        let mut hi = GeoPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.lat = lo.lat.min(v.lat);
            lo.lon = lo.lon.min(v.lon);
            hi.lat = hi.lat.max(v.lat);
            hi.lon = hi.lon.max(v.lon);
        }
        (lo, hi)
    }

    fn is_simple(&self) -> bool {
        let edges: Vec<_> = self.edges().collect();
        let n = edges.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Parses a GeoJSON Polygon geometry or a Feature wrapping one.
    pub fn from_geojson(value: &serde_json::Value) -> Result<Self> {
        let geometry = match value.get("type").and_then(|t| t.as_str()) {
            Some("Feature") => value
                .get("geometry")
                .ok_or_else(|| Error::Config("feature has no geometry".into()))?,
            Some("FeatureCollection") => value
                .get("features")
                .and_then(|f| f.get(0))
                .and_then(|f| f.get("geometry"))
                .ok_or_else(|| Error::Config("feature collection is empty".into()))?,
            Some("Polygon") => value,
            other => {
                return Err(Error::Config(format!(
                    "expected a GeoJSON Polygon, got {other:?}"
                )))
            }
        };
        if geometry.get("type").and_then(|t| t.as_str()) != Some("Polygon") {
            return Err(Error::Config("geometry is not a Polygon".into()));
        }
        let ring = geometry
            .get("coordinates")
            .and_then(|c| c.get(0))
            .and_then(|r| r.as_array())
            .ok_or_else(|| Error::Config("polygon has no outer ring".into()))?;
        let mut vertices = Vec::with_capacity(ring.len());
        for pos in ring {
            let lon = pos.get(0).and_then(|v| v.as_f64());
            let lat = pos.get(1).and_then(|v| v.as_f64());
            match (lon, lat) {
                (Some(lon), Some(lat)) => vertices.push(GeoPoint::new(lat, lon)),
                _ => return Err(Error::Config("malformed polygon position".into())),
            }
        }
        Self::new(vertices)
    }

    pub fn to_geojson(&self) -> serde_json::Value {
        let ring: Vec<[f64; 2]> = self.closed_ring().iter().map(|p| [p.lon, p.lat]).collect();
        serde_json::json!({ "type": "Polygon", "coordinates": [ring] })
    }
}

impl Serialize for RoiPolygon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_geojson().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RoiPolygon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        RoiPolygon::from_geojson(&v).map_err(serde::de::Error::custom)
    }
}

fn orient(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn on_segment(a: GeoPoint, b: GeoPoint, p: GeoPoint) -> bool {
    p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn segments_intersect(a: GeoPoint, b: GeoPoint, c: GeoPoint, d: GeoPoint) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

const EDGE_TOLERANCE_DEG: f64 = 1e-12;

/// Ray-casting containment; points on the boundary count as inside.
pub fn point_in_roi(p: GeoPoint, roi: &RoiPolygon) -> bool {
    let mut inside = false;
    for (a, b) in roi.edges() {
        // on-edge check first
        let cross = orient(a, b, p);
        let len = ((b.lon - a.lon).powi(2) + (b.lat - a.lat).powi(2)).sqrt();
        if cross.abs() <= EDGE_TOLERANCE_DEG * len.max(1.0) && on_segment(a, b, p) {
            return true;
        }
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn default_interpolation_period() -> i64 {
    3600
}
fn default_speed_threshold() -> f64 {
    3.0
}
fn default_heading_delta() -> f64 {
    10.0
}
fn default_train_aug() -> usize {
    10
}
fn default_eval_aug() -> usize {
    20
}
fn default_true() -> bool {
    true
}
fn default_geohash_precision() -> usize {
    9
}
fn default_tpe_trials() -> usize {
    100
}
fn default_warm_start() -> usize {
    30
}
fn default_mci_samples() -> usize {
    10_000
}
fn default_mci_reruns() -> usize {
    200
}
fn default_kl_samples() -> usize {
    10_000
}
fn default_step() -> usize {
    1
}
fn default_schema() -> u32 {
    PortConfig::SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortSizeClass {
    Small,
    Large,
}

impl PortSizeClass {
    /// Default inclusive range of component counts searched by MDL.
    pub fn default_ncomponents_range(&self) -> (usize, usize) {
        match self {
            PortSizeClass::Small => (3, 50),
            PortSizeClass::Large => (30, 250),
        }
    }
}

/// Per-port run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub port_name: String,
    pub roi: RoiPolygon,
    /// UTC seconds, inclusive.
    pub poi_start: i64,
    /// UTC seconds, exclusive.
    pub poi_end: i64,
    pub port_size_class: PortSizeClass,
    #[serde(default = "default_interpolation_period")]
    pub interpolation_period: i64,
    #[serde(default = "default_speed_threshold")]
    pub speed_threshold: f64,
    #[serde(default = "default_heading_delta")]
    pub heading_delta_threshold: f64,
    #[serde(default = "default_train_aug")]
    pub train_aug_points: usize,
    #[serde(default = "default_eval_aug")]
    pub eval_aug_points: usize,
    #[serde(default = "default_true")]
    pub geohash_enabled: bool,
    #[serde(default = "default_geohash_precision")]
    pub geohash_precision: usize,
    /// Inclusive; defaults from the size class when absent.
    #[serde(default)]
    pub ncomponents_range: Option<(usize, usize)>,
    #[serde(default = "default_step")]
    pub ncomponents_step: usize,
    #[serde(default = "default_tpe_trials")]
    pub tpe_trials: usize,
    #[serde(default = "default_warm_start")]
    pub tpe_warm_start: usize,
    #[serde(default = "default_kl_samples")]
    pub kl_samples: usize,
    #[serde(default = "default_mci_samples")]
    pub mci_samples: usize,
    #[serde(default = "default_mci_reruns")]
    pub mci_reruns: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

impl PortConfig {
    pub const SCHEMA_VERSION: u32 = 1;

    /// Config with every tunable at its default.
    pub fn new(
        port_name: impl Into<String>,
        roi: RoiPolygon,
        poi_start: i64,
        poi_end: i64,
        port_size_class: PortSizeClass,
    ) -> Self {
        Self {
            schema_version: Self::SCHEMA_VERSION,
            port_name: port_name.into(),
            roi,
            poi_start,
            poi_end,
            port_size_class,
            interpolation_period: default_interpolation_period(),
            speed_threshold: default_speed_threshold(),
            heading_delta_threshold: default_heading_delta(),
            train_aug_points: default_train_aug(),
            eval_aug_points: default_eval_aug(),
            geohash_enabled: true,
            geohash_precision: default_geohash_precision(),
            ncomponents_range: None,
            ncomponents_step: 1,
            tpe_trials: default_tpe_trials(),
            tpe_warm_start: default_warm_start(),
            kl_samples: default_kl_samples(),
            mci_samples: default_mci_samples(),
            mci_reruns: default_mci_reruns(),
            rng_seed: 0,
        }
    }

    pub fn ncomponents_range(&self) -> (usize, usize) {
        self.ncomponents_range
            .unwrap_or_else(|| self.port_size_class.default_ncomponents_range())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.schema_version != Self::SCHEMA_VERSION {
            return Err(Error::SchemaVersionMismatch(format!(
                "config schema {} (expected {})",
                self.schema_version,
                Self::SCHEMA_VERSION
            )));
        }
        if self.poi_start >= self.poi_end {
            return fail("poi_start must precede poi_end");
        }
        if self.interpolation_period < 1 {
            return fail("interpolation_period must be >= 1");
        }
        if self.tpe_trials < 1
            || self.kl_samples < 1
            || self.mci_samples < 1
            || self.mci_reruns < 1
            || self.ncomponents_step < 1
        {
            return fail("all counts must be >= 1");
        }
        if !(1..=12).contains(&self.geohash_precision) {
            return fail("geohash_precision must be in [1, 12]");
        }
        let (lo, hi) = self.ncomponents_range();
        if lo < 2 || lo > hi {
            return fail("ncomponents_range needs 2 <= low <= high");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PortConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
