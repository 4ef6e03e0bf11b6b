//! Seeded synthetic AIS generator with known berth layouts, plus scoring of
//! localized berths against the truth.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::augment::Footprint;
use crate::error::{Error, Result};
use crate::geometry::{from_plane, polygon_area, to_plane, BerthPolygon, RotatedRect};
use crate::seed::{rng_from, Rng as SeedRng};
use crate::stopdetect::haversine;
use crate::types::{point_in_roi, AisRecord, GeoPoint, RoiPolygon, VesselType, HEADING_UNAVAILABLE};

const KNOT: f64 = 1852.0 / 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerthSpec {
    pub center: GeoPoint,
    /// Bearing of the quay line, degrees clockwise from north.
    pub orientation: f64,
    pub length: f64,
    pub width: f64,
}

impl BerthSpec {
    pub fn rect(&self) -> RotatedRect {
        RotatedRect {
            center: self.center,
            half_length: self.length / 2.0,
            half_width: self.width / 2.0,
            angle: self.orientation.rem_euclid(180.0),
            frame: self.center,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorageSpec {
    pub center: GeoPoint,
    pub radius: f64,
}

fn d_emission() -> (f64, f64) {
    (120.0, 600.0)
}
fn d_dropout() -> f64 {
    0.1
}
fn d_jitter() -> f64 {
    5.0
}
fn d_spread() -> f64 {
    0.5
}
fn d_dwell() -> (f64, f64) {
    (6.0, 48.0)
}
// keeps berth occupancy near 60% for the demo fleet
fn d_away() -> (f64, f64) {
    (168.0, 480.0)
}
fn d_anchor_dwell() -> (f64, f64) {
    (2.0, 10.0)
}
fn d_anchor_prob() -> f64 {
    0.3
}
fn d_transit_speed() -> (f64, f64) {
    (8.0, 15.0)
}
fn d_vessel_length() -> (f64, f64) {
    (90.0, 180.0)
}
fn d_vessel_beam() -> (f64, f64) {
    (14.0, 28.0)
}
fn d_passenger() -> f64 {
    0.1
}
fn d_heading_511() -> f64 {
    0.05
}
fn d_start() -> i64 {
    1_700_000_000
}

/// Scenario description. Everything after `seed` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPort {
    pub name: String,
    pub roi: RoiPolygon,
    pub berths: Vec<BerthSpec>,
    #[serde(default)]
    pub anchorages: Vec<AnchorageSpec>,
    /// Each lane runs from the port entrance inwards.
    pub lanes: Vec<Vec<GeoPoint>>,
    pub vessels: usize,
    pub days: f64,
    pub seed: u64,
    #[serde(default = "d_start")]
    pub start_time: i64,
    /// Seconds between messages, uniform.
    #[serde(default = "d_emission")]
    pub emission_interval: (f64, f64),
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    /// Maximum receiver-position jitter at berth, meters.
    #[serde(default = "d_jitter")]
    pub berth_jitter: f64,
    /// Standard deviation of the mooring position, as a fraction of the
    /// free room along and across the berth.
    #[serde(default = "d_spread")]
    pub placement_spread: f64,
    /// Hours.
    #[serde(default = "d_dwell")]
    pub berth_dwell: (f64, f64),
    /// Hours spent outside the port between visits.
    #[serde(default = "d_away")]
    pub away: (f64, f64),
    #[serde(default = "d_anchor_dwell")]
    pub anchorage_dwell: (f64, f64),
    #[serde(default = "d_anchor_prob")]
    pub anchorage_probability: f64,
    /// Knots.
    #[serde(default = "d_transit_speed")]
    pub transit_speed: (f64, f64),
    #[serde(default = "d_vessel_length")]
    pub vessel_length: (f64, f64),
    #[serde(default = "d_vessel_beam")]
    pub vessel_beam: (f64, f64),
    #[serde(default = "d_passenger")]
    pub passenger_fraction: f64,
    /// Chance that a transit message reports heading 511.
    #[serde(default = "d_heading_511")]
    pub heading_unavailable: f64,
}

/// What a generated record was doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordLabel {
    AtBerth(usize),
    Anchored,
    Transit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub berths: Vec<RotatedRect>,
    /// Parallel to the generated records.
    pub labels: Vec<RecordLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub records: Vec<AisRecord>,
    pub truth: GroundTruth,
}

fn ordered(r: (f64, f64)) -> bool {
    r.0 <= r.1 && r.0.is_finite() && r.1.is_finite()
}

impl SynthPort {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidSpec(m));
        if self.berths.is_empty() || self.lanes.is_empty() || self.vessels == 0 || !(self.days > 0.0) {
            return fail("need berths, lanes, vessels and a positive duration".into());
        }
        for (name, r) in [
            ("emission_interval", self.emission_interval),
            ("berth_dwell", self.berth_dwell),
            ("away", self.away),
            ("anchorage_dwell", self.anchorage_dwell),
            ("transit_speed", self.transit_speed),
            ("vessel_length", self.vessel_length),
            ("vessel_beam", self.vessel_beam),
        ] {
            if !ordered(r) || r.0 < 0.0 {
                return fail(format!("{name} must be an ordered non-negative range"));
            }
        }
        if !(self.placement_spread >= 0.0) || !(self.berth_jitter >= 0.0) {
            return fail("placement_spread and berth_jitter must be non-negative".into());
        }
        if self.emission_interval.0 <= 0.0 || self.transit_speed.0 <= 0.0 {
            return fail("emission interval and transit speed must be positive".into());
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("anchorage_probability", self.anchorage_probability),
            ("passenger_fraction", self.passenger_fraction),
            ("heading_unavailable", self.heading_unavailable),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1)"));
            }
        }
        let margin = 2.0 * self.berth_jitter;
        for (i, b) in self.berths.iter().enumerate() {
            if b.length < self.vessel_length.1 + margin || b.width < self.vessel_beam.1 + margin {
                return fail(format!("berth {i} cannot hold the largest vessel"));
            }
            if b.rect().corners().iter().any(|c| !point_in_roi(*c, &self.roi)) {
                return fail(format!("berth {i} is not inside the ROI"));
            }
            for (j, o) in self.berths.iter().enumerate().skip(i + 1) {
                if intersection_area(&b.rect(), &o.rect(), self.roi.centroid()) > 0.0 {
                    return fail(format!("berths {i} and {j} overlap"));
                }
            }
        }
        for lane in &self.lanes {
            if lane.len() < 2 || lane.iter().any(|p| !point_in_roi(*p, &self.roi)) {
                return fail("lanes need two or more points inside the ROI".into());
            }
        }
        for a in &self.anchorages {
            if !point_in_roi(a.center, &self.roi) || a.radius <= 0.0 {
                return fail("anchorages must sit inside the ROI".into());
            }
        }
        Ok(())
    }

    /// Five berths on two quays, one anchorage and two lanes.
    pub fn demo(vessels: usize, days: f64, seed: u64) -> Self {
        let origin = GeoPoint::new(51.95, 4.05);
        let at = |east: f64, north: f64| from_plane(origin, [east, north]);
        let berth = |east: f64, north: f64, orientation: f64, length: f64| BerthSpec {
            center: at(east, north),
            orientation,
            length,
            width: 40.0,
        };
        Self {
            name: "demo".into(),
            roi: RoiPolygon::new(vec![at(-1500.0, -1500.0), at(2500.0, -1500.0), at(2500.0, 1500.0), at(-1500.0, 1500.0)])
                .expect("demo ROI is valid"),
            berths: vec![
                berth(0.0, 0.0, 90.0, 400.0),
                berth(500.0, 0.0, 90.0, 420.0),
                berth(1000.0, 0.0, 90.0, 380.0),
                berth(-300.0, 400.0, 0.0, 400.0),
                berth(-300.0, 900.0, 0.0, 440.0),
            ],
            anchorages: vec![AnchorageSpec { center: at(1800.0, -1000.0), radius: 250.0 }],
            lanes: vec![
                vec![at(2400.0, -1400.0), at(1200.0, -600.0), at(400.0, -200.0)],
                vec![at(-1400.0, -1400.0), at(-700.0, -300.0), at(-150.0, 300.0)],
            ],
            vessels,
            days,
            seed,
            start_time: d_start(),
            emission_interval: d_emission(),
            dropout: d_dropout(),
            berth_jitter: d_jitter(),
            placement_spread: d_spread(),
            berth_dwell: d_dwell(),
            away: d_away(),
            anchorage_dwell: d_anchor_dwell(),
            anchorage_probability: d_anchor_prob(),
            transit_speed: d_transit_speed(),
            vessel_length: d_vessel_length(),
            vessel_beam: d_vessel_beam(),
            passenger_fraction: d_passenger(),
            heading_unavailable: d_heading_511(),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

fn bearing(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[0] - from[0]).atan2(to[1] - from[1]).to_degrees().rem_euclid(360.0)
}

struct Vessel {
    mmsi: u64,
    kind: VesselType,
    length: f64,
    beam: f64,
    /// Receiver distance to bow and to port side.
    bow: f64,
    port_side: f64,
}

impl Vessel {
    fn record(&self, t: i64, p: GeoPoint, speed: f64, heading: f64, nav: u8) -> AisRecord {
        AisRecord {
            mmsi: self.mmsi,
            timestamp: t,
            position: p,
            speed_over_ground: speed,
            heading,
            nav_status: nav,
            vessel_type: self.kind,
            dim_a: Some(self.bow),
            dim_b: Some(self.length - self.bow),
            dim_c: Some(self.port_side),
            dim_d: Some(self.beam - self.port_side),
        }
    }
}

/// Message clock for one vessel.
struct Emitter<'a> {
    spec: &'a SynthPort,
    rng: SeedRng,
    next: f64,
    end: f64,
    out: Vec<(AisRecord, RecordLabel)>,
}

impl Emitter<'_> {
    /// Emits every scheduled message in `[from, to)` using `state(t)`.
    fn run(&mut self, from: f64, to: f64, mut state: impl FnMut(f64, &mut SeedRng) -> (AisRecord, RecordLabel)) {
        if self.next < from {
            self.next = from;
        }
        let to = to.min(self.end);
        while self.next < to {
            let t = self.next;
            let keep = self.rng.random::<f64>() >= self.spec.dropout;
            let rec = state(t, &mut self.rng);
            if keep {
                self.out.push(rec);
            }
            self.next = t + uniform(&mut self.rng, self.spec.emission_interval);
        }
    }
}

/// Polyline in port-plane meters with cumulative lengths.
struct Polyline {
    pts: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

impl Polyline {
    fn new(pts: Vec<[f64; 2]>) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cum.push(cum.last().unwrap() + d);
        }
        Self { pts, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Position and bearing at distance `s` along the path.
    fn at(&self, s: f64) -> ([f64; 2], f64) {
        let i = self.cum.partition_point(|&c| c <= s).clamp(1, self.pts.len() - 1);
        let (a, b) = (self.pts[i - 1], self.pts[i]);
        let seg = self.cum[i] - self.cum[i - 1];
        let f = if seg > 0.0 { ((s - self.cum[i - 1]) / seg).clamp(0.0, 1.0) } else { 0.0 };
        ([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])], bearing(a, b))
    }
}

/// Simulates the scenario. Output records are sorted by time, then mmsi.
pub fn generate(spec: &SynthPort) -> Result<SynthOutput> {
    spec.validate()?;
    let origin = spec.roi.centroid();
    let plane = |p: GeoPoint| to_plane(origin, p);
    let end = spec.days * 86_400.0;
    let mut all: Vec<(AisRecord, RecordLabel)> = Vec::new();

    for i in 0..spec.vessels {
        let mut rng = rng_from(spec.seed, "vessel", i as u64);
        let length = uniform(&mut rng, spec.vessel_length);
        let beam = uniform(&mut rng, spec.vessel_beam);
        let vessel = Vessel {
            mmsi: 200_000_000 + i as u64,
            kind: if rng.random::<f64>() < spec.passenger_fraction {
                VesselType::Passenger
            } else if rng.random::<f64>() < 0.7 {
                VesselType::Cargo
            } else {
                VesselType::Tanker
            },
            length,
            beam,
            bow: length * rng.random_range(0.55..0.85),
            port_side: beam * rng.random_range(0.3..0.7),
        };
        let mut em = Emitter { spec, rng: rng_from(spec.seed, "emit", i as u64), next: 0.0, end, out: Vec::new() };
        let mut t = -uniform(&mut rng, (0.0, spec.away.1 * 3600.0));
        while t < end {
            t += uniform(&mut rng, spec.away) * 3600.0;
            if t >= end {
                break;
            }
            let lane = &spec.lanes[rng.random_range(0..spec.lanes.len())];
            let berth_idx = rng.random_range(0..spec.berths.len());
            let berth = spec.berths[berth_idx];
            let pose = berth_pose(&berth, &vessel, spec.berth_jitter, spec.placement_spread, &mut rng);
            let mut inbound: Vec<[f64; 2]> = lane.iter().map(|p| plane(*p)).collect();
            if !spec.anchorages.is_empty() && rng.random::<f64>() < spec.anchorage_probability {
                let a = spec.anchorages[rng.random_range(0..spec.anchorages.len())];
                let r = a.radius * rng.random::<f64>().sqrt();
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                let c = plane(a.center);
                let spot = [c[0] + r * th.cos(), c[1] + r * th.sin()];
                t = transit(&mut em, &vessel, &Polyline::new(vec![inbound[0], spot]), t, &mut rng, origin);
                let stay = uniform(&mut rng, spec.anchorage_dwell) * 3600.0;
                let swing: f64 = rng.random_range(0.0..360.0);
                em.run(t, t + stay, |ts, r| {
                    let d = [spot[0] + r.random_range(-15.0..15.0), spot[1] + r.random_range(-15.0..15.0)];
                    let h = (swing + r.random_range(-40.0..40.0)).rem_euclid(360.0);
                    let rec = vessel.record(ts as i64 + spec.start_time, from_plane(origin, d), r.random_range(0.0..0.5), h, 1);
                    (rec, RecordLabel::Anchored)
                });
                t += stay;
                inbound = vec![spot, *inbound.last().unwrap()];
            }
            inbound.push(plane(pose.antenna));
            t = transit(&mut em, &vessel, &Polyline::new(inbound.clone()), t, &mut rng, origin);
            let stay = uniform(&mut rng, spec.berth_dwell) * 3600.0;
            let jitter = spec.berth_jitter;
            em.run(t, t + stay, |ts, r| {
                let rad = jitter * r.random::<f64>().sqrt();
                let th = r.random_range(0.0..std::f64::consts::TAU);
                let a = plane(pose.antenna);
                let p = from_plane(origin, [a[0] + rad * th.cos(), a[1] + rad * th.sin()]);
                let h = (pose.heading + r.random_range(-0.5..0.5)).clamp(pose.heading_lo, pose.heading_hi).rem_euclid(360.0);
                let rec = vessel.record(ts as i64 + spec.start_time, p, r.random_range(0.0..0.2), h, 5);
                (rec, RecordLabel::AtBerth(berth_idx))
            });
            t += stay;
            inbound.reverse();
            t = transit(&mut em, &vessel, &Polyline::new(inbound), t, &mut rng, origin);
        }
        all.extend(em.out);
    }
    all.sort_by_key(|(r, _)| (r.timestamp, r.mmsi));
    all.dedup_by_key(|(r, _)| (r.timestamp, r.mmsi));
    let (records, labels) = all.into_iter().unzip();
    Ok(SynthOutput {
        records,
        truth: GroundTruth { berths: spec.berths.iter().map(BerthSpec::rect).collect(), labels },
    })
}

struct Pose {
    antenna: GeoPoint,
    heading: f64,
    heading_lo: f64,
    heading_hi: f64,
}

/// Places the hull inside the berth with room for the jitter, and returns
/// where the receiver sits.
fn berth_pose<R: Rng + ?Sized>(b: &BerthSpec, v: &Vessel, jitter: f64, spread: f64, rng: &mut R) -> Pose {
    let offset = rng.random_range(-3.0..3.0);
    let heading = b.orientation + offset;
    let slack_u = ((b.length - v.length) / 2.0 - jitter).max(0.0);
    let slack_v = ((b.width - v.beam) / 2.0 - jitter).max(0.0);
    let mut offset_in = |slack: f64| {
        let g: f64 = StandardNormal.sample(rng);
        (g * spread * slack).clamp(-slack, slack)
    };
    let (su, sv) = (offset_in(slack_u), offset_in(slack_v));
    let axis = Footprint { anchor: b.center, heading: b.orientation, fore: 0.0, aft: 0.0, port_side: 0.0, starboard: 0.0 };
    let hull_center = axis.point_at(su, sv);
    let fp = Footprint { anchor: hull_center, heading, fore: 0.0, aft: 0.0, port_side: 0.0, starboard: 0.0 };
    // receiver sits (bow - L/2) ahead of and (port_side - B/2) to port of the hull center
    let u = -(v.bow - v.length / 2.0);
    let s = v.port_side - v.beam / 2.0;
    Pose {
        antenna: fp.point_at(u, s),
        heading,
        heading_lo: b.orientation - 3.0,
        heading_hi: b.orientation + 3.0,
    }
}

/// Sails `path` at a constant random speed; returns the arrival time.
fn transit<R: Rng + ?Sized>(em: &mut Emitter, v: &Vessel, path: &Polyline, t0: f64, rng: &mut R, origin: GeoPoint) -> f64 {
    let speed = uniform(rng, em.spec.transit_speed);
    let duration = path.length() / (speed * KNOT);
    let p511 = em.spec.heading_unavailable;
    let start = em.spec.start_time;
    em.run(t0, t0 + duration, |ts, r| {
        let (xy, course) = path.at((ts - t0) * speed * KNOT);
        let heading = if r.random::<f64>() < p511 { HEADING_UNAVAILABLE } else { course.round() % 360.0 };
        let rec = v.record(ts as i64 + start, from_plane(origin, xy), speed, heading, 0);
        (rec, RecordLabel::Transit)
    });
    t0 + duration
}

/// Writes records in the ingest JSON Lines schema.
pub fn write_records(records: &[AisRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::InvalidInput(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

impl GroundTruth {
    /// Berths as a FeatureCollection; per-record labels ride along as a
    /// top-level `labels` array (berth index, -1 anchored, -2 transit).
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .berths
            .iter()
            .enumerate()
            .map(|(i, b)| {
                json!({
                    "type": "Feature",
                    "geometry": {"type": "Polygon", "coordinates": [b.ring()]},
                    "properties": {"berth": i, "rect": b},
                })
            })
            .collect();
        let labels: Vec<i64> = self
            .labels
            .iter()
            .map(|l| match l {
                RecordLabel::AtBerth(i) => *i as i64,
                RecordLabel::Anchored => -1,
                RecordLabel::Transit => -2,
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features, "labels": labels})
    }

    pub fn from_geojson(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("ground truth: {m}"));
        let berths = v["features"]
            .as_array()
            .ok_or_else(|| bad("missing features"))?
            .iter()
            .map(|f| serde_json::from_value::<RotatedRect>(f["properties"]["rect"].clone()).map_err(|e| bad(&e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let labels = v["labels"]
            .as_array()
            .map(|a| {
                a.iter()
                    .map(|x| match x.as_i64() {
                        Some(-1) => RecordLabel::Anchored,
                        Some(i) if i >= 0 => RecordLabel::AtBerth(i as usize),
                        _ => RecordLabel::Transit,
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(Self { berths, labels })
    }
}

/// Clips convex polygon `subject` by convex `clip` (both counter-clockwise).
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        if out.is_empty() {
            break;
        }
    }
    out
}

fn plane_corners(r: &RotatedRect, origin: GeoPoint) -> Vec<[f64; 2]> {
    r.corners().iter().map(|c| to_plane(origin, *c)).collect()
}

/// Overlap area in square meters on the tangent plane at `origin`.
pub fn intersection_area(a: &RotatedRect, b: &RotatedRect, origin: GeoPoint) -> f64 {
    polygon_area(&clip_convex(&plane_corners(a, origin), &plane_corners(b, origin)))
}

/// Intersection over union of two rectangles.
pub fn iou(a: &RotatedRect, b: &RotatedRect, origin: GeoPoint) -> f64 {
    let inter = intersection_area(a, b, origin);
    let union = polygon_area(&plane_corners(a, origin)) + polygon_area(&plane_corners(b, origin)) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub const MATCH_IOU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerthMatch {
    pub truth: usize,
    pub predicted: usize,
    pub iou: f64,
    pub center_offset_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub recall: f64,
    pub precision: f64,
    pub mean_center_offset_m: f64,
    pub matches: Vec<BerthMatch>,
    pub n_truth: usize,
    pub n_predicted: usize,
}

/// Greedy one-to-one matching by descending IoU, accepting pairs with
/// IoU >= 0.3.
pub fn score_against_truth(predicted: &[BerthPolygon], truth: &GroundTruth) -> ScoreReport {
    let origin = truth.berths.first().map_or(GeoPoint::new(0.0, 0.0), |b| b.center);
    let mut pairs = Vec::new();
    for (ti, t) in truth.berths.iter().enumerate() {
        for (pi, p) in predicted.iter().enumerate() {
            let v = iou(t, &p.rect, origin);
            if v >= MATCH_IOU {
                pairs.push((v, ti, pi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut t_used, mut p_used) = (vec![false; truth.berths.len()], vec![false; predicted.len()]);
    let mut matches = Vec::new();
    for (v, ti, pi) in pairs {
        if t_used[ti] || p_used[pi] {
            continue;
        }
        t_used[ti] = true;
        p_used[pi] = true;
        matches.push(BerthMatch {
            truth: ti,
            predicted: pi,
            iou: v,
            center_offset_m: haversine(truth.berths[ti].center, predicted[pi].rect.center),
        });
    }
    matches.sort_by_key(|m| m.truth);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mean_center_offset_m = if matches.is_empty() {
        f64::NAN
    } else {
        matches.iter().map(|m| m.center_offset_m).sum::<f64>() / matches.len() as f64
    };
    ScoreReport {
        recall: ratio(matches.len(), truth.berths.len()),
        precision: ratio(matches.len(), predicted.len()),
        mean_center_offset_m,
        n_truth: truth.berths.len(),
        n_predicted: predicted.len(),
        matches,
    }
}
