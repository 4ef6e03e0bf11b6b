//! Per-vessel DBSCAN over haversine distance to keep dwell records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::scalar::Real;
use crate::types::GeoPoint;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const STAGE_DBSCAN: &str = "dbscan";

/// Great-circle distance in meters between `(lat, lon)` pairs in degrees.
pub fn haversine_deg<T: Real>(lat1: T, lon1: T, lat2: T, lon2: T) -> T {
    let to_rad = T::PI() / T::lit(180.0);
    let (p1, p2) = (lat1 * to_rad, lat2 * to_rad);
    let dphi = p2 - p1;
    let dlambda = (lon2 - lon1) * to_rad;
    let two = T::lit(2.0);
    let h = (dphi / two).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / two).sin().powi(2);
    two * T::lit(EARTH_RADIUS_M) * h.sqrt().min(T::one()).asin()
}

pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    haversine_deg(a.lat, a.lon, b.lat, b.lon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighborhood radius in meters.
    pub epsilon: f64,
    pub min_points: usize,
}

impl DbscanParams {
    pub fn new(epsilon: f64, min_points: usize) -> Result<Self> {
        if !(epsilon > 0.0) || min_points < 2 {
            return Err(Error::Config(format!(
                "invalid DBSCAN params eps={epsilon} min_points={min_points}"
            )));
        }
        Ok(Self {
            epsilon,
            min_points,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopLabel {
    Noise,
    Cluster(usize),
}

impl StopLabel {
    pub fn is_noise(&self) -> bool {
        matches!(self, StopLabel::Noise)
    }
}

/// DBSCAN with closed-ball neighborhoods that include the point itself.
///
/// Points are scanned in slice order; a border point joins the first
/// cluster that reaches it.
pub fn dbscan<P, T, F>(points: &[P], epsilon: T, min_points: usize, dist: F) -> Vec<StopLabel>
where
    T: Real,
    F: Fn(&P, &P) -> T,
{
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| i == j || dist(&points[i], &points[j]) <= epsilon)
                .collect()
        })
        .collect();
    let is_core = |i: usize| neighbors[i].len() >= min_points;

    let mut labels: Vec<Option<StopLabel>> = vec![None; n];
    let mut next_cluster = 0;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        if !is_core(i) {
            labels[i] = Some(StopLabel::Noise);
            continue;
        }
        let cluster = StopLabel::Cluster(next_cluster);
        next_cluster += 1;
        labels[i] = Some(cluster);
        let mut frontier: Vec<usize> = neighbors[i].clone();
        while let Some(q) = frontier.pop() {
            match labels[q] {
                Some(StopLabel::Noise) => labels[q] = Some(cluster),
                None => {
                    labels[q] = Some(cluster);
                    if is_core(q) {
                        frontier.extend(neighbors[q].iter().copied().filter(|&r| {
                            !matches!(labels[r], Some(StopLabel::Cluster(_)))
                        }));
                    }
                }
                Some(StopLabel::Cluster(_)) => {}
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap_or(StopLabel::Noise)).collect()
}

/// DBSCAN over one vessel's (time-ordered) positions.
pub fn dbscan_vessel(points: &[GeoPoint], params: &DbscanParams) -> Vec<StopLabel> {
    dbscan(points, params.epsilon, params.min_points, |a, b| haversine(*a, *b))
}

/// Keeps records DBSCAN labels as part of a cluster on their own track.
pub fn filter_stops(d: &Dataset, params: &DbscanParams) -> Result<Dataset> {
    let out = d.map_tracks(STAGE_DBSCAN, |t| {
        let pts: Vec<GeoPoint> = t.records.iter().map(|r| r.position).collect();
        let labels = dbscan_vessel(&pts, params);
        t.records
            .iter()
            .zip(labels)
            .filter(|(_, l)| !l.is_noise())
            .map(|(r, _)| r.clone())
            .collect()
    });
    if out.is_empty() {
        return Err(Error::empty(STAGE_DBSCAN));
    }
    Ok(out)
}
