//! Mooring-event baseline: events from runs of moored-status messages,
//! DBSCAN over event medians, and a rotated rectangle per cluster.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::divergence::Density;
use crate::error::{Error, Result};
use crate::geometry::{berths_to_geojson, convex_hull, from_plane, mean_point, to_plane, BerthPolygon, RotatedRect, MARKER_SIDE_M};
use crate::ingest::Dataset;
use crate::mixture::Point;
use crate::preprocess::Standardizer;
use crate::stopdetect::{dbscan, haversine, DbscanParams, StopLabel};
use crate::types::{point_in_roi, AisRecord, GeoPoint, RoiPolygon};

pub const STAGE_BASELINE_ROI: &str = "baseline_roi";
pub const STAGE_BASELINE_SPEED: &str = "baseline_moored_speed";

/// Moored records faster than this (knots) are dropped.
pub const MOORED_SPEED_LIMIT: f64 = 1.0;
/// Events must last strictly longer than this (seconds).
pub const MIN_EVENT_DURATION: i64 = 3600;
/// A silence longer than this (seconds) breaks a mooring run.
pub const MAX_RUN_GAP: i64 = 6 * 3600;

pub const BASELINE_DBSCAN: DbscanParams = DbscanParams { epsilon: 50.0, min_points: 3 };

/// Keeps records inside the port polygon and drops moored records moving
/// faster than 1 kn. Repeated `(mmsi, timestamp)` pairs were already
/// collapsed when the dataset was built.
pub fn baseline_preprocess(raw: &Dataset, roi: &RoiPolygon) -> Result<Dataset> {
    let d = raw
        .filter_records(STAGE_BASELINE_ROI, |r| point_in_roi(r.position, roi))
        .filter_records(STAGE_BASELINE_SPEED, |r| !(r.is_moored() && r.speed_over_ground > MOORED_SPEED_LIMIT));
    if d.is_empty() {
        return Err(Error::empty(STAGE_BASELINE_SPEED));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MooringEvent {
    pub mmsi: u64,
    pub start: i64,
    pub end: i64,
    pub records: Vec<AisRecord>,
    pub berth_event_id: usize,
    pub median: GeoPoint,
}

impl MooringEvent {
    pub fn duration(&self) -> i64 {
        self.end - self.start
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-axis median position.
pub fn median_position(records: &[AisRecord]) -> GeoPoint {
    GeoPoint::new(
        median(records.iter().map(|r| r.position.lat).collect()),
        median(records.iter().map(|r| r.position.lon).collect()),
    )
}

fn vessel_runs(records: &[AisRecord]) -> Vec<Vec<AisRecord>> {
    let mut runs = Vec::new();
    let mut cur: Vec<AisRecord> = Vec::new();
    for r in records {
        let breaks = !r.is_moored() || cur.last().is_some_and(|p| r.timestamp - p.timestamp > MAX_RUN_GAP);
        if breaks && !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
        if r.is_moored() {
            cur.push(r.clone());
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

/// Maximal moored runs per vessel lasting over an hour. Ids follow vessel
/// (mmsi) order, then time.
pub fn detect_events(d: &Dataset) -> Vec<MooringEvent> {
    let per_vessel: Vec<Vec<Vec<AisRecord>>> = d.tracks.par_iter().map(|t| vessel_runs(&t.records)).collect();
    let mut out = Vec::new();
    for run in per_vessel.into_iter().flatten() {
        let (start, end) = (run[0].timestamp, run[run.len() - 1].timestamp);
        if end - start <= MIN_EVENT_DURATION {
            continue;
        }
        out.push(MooringEvent {
            mmsi: run[0].mmsi,
            start,
            end,
            median: median_position(&run),
            berth_event_id: out.len(),
            records: run,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCluster {
    /// Counter-clockwise hull of the member medians.
    pub hull: Vec<GeoPoint>,
    pub rect: RotatedRect,
    /// `berth_event_id`s.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineBerthSet {
    pub clusters: Vec<BaselineCluster>,
    pub noise: Vec<usize>,
}

/// DBSCAN (haversine, 50 m, 3 events) over event medians scanned in start
/// order, then hull and minimum-area rectangle per cluster. Rectangles with
/// a zero side are widened to the 5 m marker size.
pub fn baseline_cluster(events: &[MooringEvent]) -> Result<BaselineBerthSet> {
    if events.is_empty() {
        return Err(Error::empty("mooring events"));
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (events[i].start, events[i].mmsi, events[i].berth_event_id));
    let medians: Vec<GeoPoint> = order.iter().map(|&i| events[i].median).collect();
    let labels = dbscan(&medians, BASELINE_DBSCAN.epsilon, BASELINE_DBSCAN.min_points, |a, b| haversine(*a, *b));
    let n_clusters = labels.iter().filter_map(|l| match l {
        StopLabel::Cluster(c) => Some(c + 1),
        StopLabel::Noise => None,
    }).max().unwrap_or(0);
    if n_clusters == 0 {
        return Err(Error::NoClusters);
    }
    let mut members = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (pos, l) in labels.iter().enumerate() {
        let id = events[order[pos]].berth_event_id;
        match l {
            StopLabel::Cluster(c) => members[*c].push(id),
            StopLabel::Noise => noise.push(id),
        }
    }
    let by_id = |id: usize| events.iter().find(|e| e.berth_event_id == id).expect("known event id");
    let clusters = members
        .into_iter()
        .map(|mut ids| {
            ids.sort_unstable();
            let pts: Vec<GeoPoint> = ids.iter().map(|&id| by_id(id).median).collect();
            let frame = mean_point(&pts);
            let planar: Vec<[f64; 2]> = pts.iter().map(|p| to_plane(frame, *p)).collect();
            let hull = convex_hull(&planar).into_iter().map(|xy| from_plane(frame, xy)).collect();
            let rect = RotatedRect::fit(&pts, frame).buffered(MARKER_SIDE_M / 2.0);
            BaselineCluster { hull, rect, members: ids }
        })
        .collect();
    noise.sort_unstable();
    Ok(BaselineBerthSet { clusters, noise })
}

/// Preprocess, detect events, cluster.
pub fn run_baseline(raw: &Dataset, roi: &RoiPolygon) -> Result<BaselineBerthSet> {
    let d = baseline_preprocess(raw, roi)?;
    baseline_cluster(&detect_events(&d))
}

/// 1 inside any cluster rectangle (boundary included), else 0.
pub fn baseline_density(set: &BaselineBerthSet, p: GeoPoint) -> f64 {
    if set.clusters.iter().any(|c| c.rect.contains(p, 1e-9)) {
        1.0
    } else {
        0.0
    }
}

/// Binary membership of a berth set viewed in a model space.
#[derive(Debug, Clone)]
pub struct MembershipModel {
    pub set: BaselineBerthSet,
    pub transform: Standardizer<f64>,
}

impl Density<f64> for MembershipModel {
    fn log_density(&self, x: Point<f64>) -> f64 {
        if baseline_density(&self.set, self.transform.invert_geo(x)) > 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn transform(&self) -> &Standardizer<f64> {
        &self.transform
    }
}

impl BaselineBerthSet {
    /// Berth polygons in the shared output schema; `weight` is the member
    /// share of clustered events.
    pub fn berths(&self, port: &str) -> Vec<BerthPolygon> {
        let total: usize = self.clusters.iter().map(|c| c.members.len()).sum();
        self.clusters
            .iter()
            .enumerate()
            .map(|(i, c)| BerthPolygon {
                rect: c.rect,
                component: i,
                weight: c.members.len() as f64 / total as f64,
                n_points: c.members.len(),
                port: port.to_string(),
                marker: false,
            })
            .collect()
    }

    pub fn to_geojson(&self, port: &str) -> Value {
        let mut extra = serde_json::Map::new();
        extra.insert("method".into(), json!("steenari"));
        berths_to_geojson(&self.berths(port), &extra)
    }
}
