//! Planar hulls and minimum-area rectangles, and their use for turning a
//! fitted mixture plus point cloud into berth rectangles.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::augment::{local_meters, offset_geo, PointCloud};
use crate::error::{Error, Result};
use crate::mixture::Gmm;
use crate::scalar::Real;
use crate::types::GeoPoint;

/// Side length of the marker square emitted for under-populated components.
pub const MARKER_SIDE_M: f64 = 5.0;

/// Twice the signed area of triangle `o, a, b`; positive when counter-clockwise.
#[inline]
pub fn cross<T: Real>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull by Andrew's monotone chain. Collinear
/// boundary points are dropped; one or two distinct inputs come back as-is.
pub fn convex_hull<T: Real>(points: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut pts: Vec<[T; 2]> = points.to_vec();
    pts.sort_by(|a, b| {
        a[0].partial_cmp(&b[0])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a[1].partial_cmp(&b[1]).unwrap_or(std::cmp::Ordering::Equal))
    });
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<[T; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[T; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= T::zero() {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() == 2 && hull[0] == hull[1] {
        hull.truncate(1);
    }
    hull
}

/// Absolute shoelace area of a ring (closing vertex optional).
pub fn polygon_area<T: Real>(ring: &[[T; 2]]) -> T {
    let n = ring.len();
    if n < 3 {
        return T::zero();
    }
    let mut s = T::zero();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        s = s + a[0] * b[1] - b[0] * a[1];
    }
    (s / T::lit(2.0)).abs()
}

/// Ray-casting containment; points on an edge count as inside.
pub fn point_in_ring<T: Real>(p: [T; 2], ring: &[[T; 2]]) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if on_segment(a, b, p) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn on_segment<T: Real>(a: [T; 2], b: [T; 2], p: [T; 2]) -> bool {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let tol = T::lit(1e-12) * (T::one() + len);
    cross(a, b, p).abs() <= tol * len.max(T::one())
        && p[0] >= a[0].min(b[0]) - tol
        && p[0] <= a[0].max(b[0]) + tol
        && p[1] >= a[1].min(b[1]) - tol
        && p[1] <= a[1].max(b[1]) + tol
}

/// Rotated rectangle in a planar frame. `angle` is the direction of the long
/// side in degrees counter-clockwise from the x axis, in `[0, 180)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarRect<T> {
    pub center: [T; 2],
    pub half_length: T,
    pub half_width: T,
    pub angle: T,
}

impl<T: Real> PlanarRect<T> {
    pub fn area(&self) -> T {
        T::lit(4.0) * self.half_length * self.half_width
    }

    fn axes(&self) -> ([T; 2], [T; 2]) {
        let t = self.angle.to_radians();
        ([t.cos(), t.sin()], [-t.sin(), t.cos()])
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[T; 2]; 4] {
        let (a, b) = self.axes();
        let c = self.center;
        let at = |s: T, t: T| {
            [
                c[0] + s * self.half_length * a[0] + t * self.half_width * b[0],
                c[1] + s * self.half_length * a[1] + t * self.half_width * b[1],
            ]
        };
        let one = T::one();
        [at(-one, -one), at(one, -one), at(one, one), at(-one, one)]
    }

    /// Containment with an absolute tolerance in frame units.
    pub fn contains(&self, p: [T; 2], tol: T) -> bool {
        let (a, b) = self.axes();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let s = d[0] * a[0] + d[1] * a[1];
        let t = d[0] * b[0] + d[1] * b[1];
        s.abs() <= self.half_length + tol && t.abs() <= self.half_width + tol
    }
}

fn normalize_angle<T: Real>(deg: T) -> T {
    let full = T::lit(180.0);
    let mut a = deg % full;
    if a < T::zero() {
        a = a + full;
    }
    if a >= full {
        a = a - full;
    }
    a
}

/// Box aligned with direction `theta` (radians) around `points`.
fn aligned_box<T: Real>(points: &[[T; 2]], theta: T) -> PlanarRect<T> {
    let (u, v) = ([theta.cos(), theta.sin()], [-theta.sin(), theta.cos()]);
    let (mut umin, mut umax) = (T::infinity(), T::neg_infinity());
    let (mut vmin, mut vmax) = (T::infinity(), T::neg_infinity());
    for p in points {
        let pu = p[0] * u[0] + p[1] * u[1];
        let pv = p[0] * v[0] + p[1] * v[1];
        umin = umin.min(pu);
        umax = umax.max(pu);
        vmin = vmin.min(pv);
        vmax = vmax.max(pv);
    }
    let two = T::lit(2.0);
    let (cu, cv) = ((umin + umax) / two, (vmin + vmax) / two);
    let center = [cu * u[0] + cv * v[0], cu * u[1] + cv * v[1]];
    let (hu, hv) = ((umax - umin) / two, (vmax - vmin) / two);
    let deg = theta.to_degrees();
    if hu >= hv {
        PlanarRect { center, half_length: hu, half_width: hv, angle: normalize_angle(deg) }
    } else {
        PlanarRect { center, half_length: hv, half_width: hu, angle: normalize_angle(deg + T::lit(90.0)) }
    }
}

/// Minimum-area enclosing rectangle by rotating calipers over hull edges.
/// Ties in area go to the smaller angle.
///
/// # Panics
/// Panics on empty input.
pub fn min_area_rect<T: Real>(points: &[[T; 2]]) -> PlanarRect<T> {
    assert!(!points.is_empty(), "min_area_rect needs at least one point");
    let hull = convex_hull(points);
    if hull.len() == 1 {
        return PlanarRect { center: hull[0], half_length: T::zero(), half_width: T::zero(), angle: T::zero() };
    }
    let n = hull.len();
    let edges = if n == 2 { 1 } else { n };
    let mut best: Option<PlanarRect<T>> = None;
    let eps = T::lit(1e-12);
    for i in 0..edges {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        let theta = (b[1] - a[1]).atan2(b[0] - a[0]);
        let r = aligned_box(&hull, theta);
        best = match best {
            None => Some(r),
            Some(cur) => {
                let (ra, ca) = (r.area(), cur.area());
                let scale = ca.max(T::min_positive_value());
                if ra < ca - eps * scale || ((ra - ca).abs() <= eps * scale && r.angle < cur.angle) {
                    Some(r)
                } else {
                    Some(cur)
                }
            }
        };
    }
    best.expect("hull has at least one edge")
}

/// Rectangle on the earth's surface, defined in the tangent-plane meter frame
/// at `frame`. `angle` is the compass bearing of the long side, clockwise from
/// north, in `[0, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: GeoPoint,
    pub half_length: f64,
    pub half_width: f64,
    pub angle: f64,
    pub frame: GeoPoint,
}

impl RotatedRect {
    /// Fits the minimum-area rectangle to `points` in the frame at `frame`.
    pub fn fit(points: &[GeoPoint], frame: GeoPoint) -> Self {
        let planar: Vec<[f64; 2]> = points.iter().map(|p| to_plane(frame, *p)).collect();
        Self::from_planar(min_area_rect(&planar), frame)
    }

    pub fn from_planar(r: PlanarRect<f64>, frame: GeoPoint) -> Self {
        Self {
            center: from_plane(frame, r.center),
            half_length: r.half_length,
            half_width: r.half_width,
            angle: normalize_angle(90.0 - r.angle),
            frame,
        }
    }

    /// Square of side `side` meters centered on `p`.
    pub fn marker(p: GeoPoint, side: f64) -> Self {
        Self { center: p, half_length: side / 2.0, half_width: side / 2.0, angle: 0.0, frame: p }
    }

    /// Same rectangle with each half-extent raised to at least `min_half`.
    pub fn buffered(mut self, min_half: f64) -> Self {
        self.half_length = self.half_length.max(min_half);
        self.half_width = self.half_width.max(min_half);
        self
    }

    pub fn planar(&self) -> PlanarRect<f64> {
        PlanarRect {
            center: to_plane(self.frame, self.center),
            half_length: self.half_length,
            half_width: self.half_width,
            angle: normalize_angle(90.0 - self.angle),
        }
    }

    pub fn area_m2(&self) -> f64 {
        4.0 * self.half_length * self.half_width
    }

    pub fn corners(&self) -> [GeoPoint; 4] {
        self.planar().corners().map(|c| from_plane(self.frame, c))
    }

    /// Containment with an absolute tolerance in meters.
    pub fn contains(&self, p: GeoPoint, tol_m: f64) -> bool {
        self.planar().contains(to_plane(self.frame, p), tol_m)
    }

    /// Closed 5-point `[lon, lat]` ring.
    pub fn ring(&self) -> Vec<[f64; 2]> {
        let c = self.corners();
        let mut ring: Vec<[f64; 2]> = c.iter().map(|p| [p.lon, p.lat]).collect();
        ring.push(ring[0]);
        ring
    }
}

/// `[east, north]` meters of `p` in the tangent frame at `origin`.
pub fn to_plane(origin: GeoPoint, p: GeoPoint) -> [f64; 2] {
    let (north, east) = local_meters(origin, p);
    [east, north]
}

pub fn from_plane(origin: GeoPoint, xy: [f64; 2]) -> GeoPoint {
    offset_geo(origin, xy[1], xy[0])
}

/// One localized berth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerthPolygon {
    pub rect: RotatedRect,
    pub component: usize,
    pub weight: f64,
    pub n_points: usize,
    pub port: String,
    /// True when the component had too few points for a fitted rectangle.
    pub marker: bool,
}

/// Hard-assigns every cloud point to its most responsible component and fits
/// one rectangle per component in a tangent frame at the component mean.
pub fn localize_berths(model: &Gmm<f64>, cloud: &PointCloud, port: &str) -> Result<Vec<BerthPolygon>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let labels: Vec<usize> = cloud
        .points
        .par_iter()
        .map(|p| model.predict(model.transform.apply_geo(*p)))
        .collect();
    let mut groups: BTreeMap<usize, Vec<GeoPoint>> = BTreeMap::new();
    for (p, c) in cloud.points.iter().zip(&labels) {
        groups.entry(*c).or_default().push(*p);
    }
    let means = model.means();
    let berths = (0..model.n_components())
        .into_par_iter()
        .map(|c| {
            let members = groups.get(&c).map(Vec::as_slice).unwrap_or(&[]);
            let weight = model.weights()[c];
            let frame = model.transform.invert_geo(means[c]);
            let (rect, marker) = if members.len() >= 3 && weight > 0.0 {
                (RotatedRect::fit(members, frame), false)
            } else {
                log::warn!("component {c} has {} assigned points; emitting a marker", members.len());
                let at = if members.is_empty() { frame } else { mean_point(members) };
                (RotatedRect::marker(at, MARKER_SIDE_M), true)
            };
            BerthPolygon { rect, component: c, weight, n_points: members.len(), port: port.to_string(), marker }
        })
        .collect();
    Ok(berths)
}

pub fn mean_point(points: &[GeoPoint]) -> GeoPoint {
    let n = points.len() as f64;
    GeoPoint::new(
        points.iter().map(|p| p.lat).sum::<f64>() / n,
        points.iter().map(|p| p.lon).sum::<f64>() / n,
    )
}

/// GeoJSON FeatureCollection of berth polygons. `extra` is merged into every
/// feature's properties.
pub fn berths_to_geojson(berths: &[BerthPolygon], extra: &serde_json::Map<String, Value>) -> Value {
    let features: Vec<Value> = berths
        .iter()
        .map(|b| {
            let mut props = serde_json::Map::new();
            props.insert("component".into(), json!(b.component));
            props.insert("weight".into(), json!(b.weight));
            props.insert("n_points".into(), json!(b.n_points));
            props.insert("port".into(), json!(b.port));
            props.insert("marker".into(), json!(b.marker));
            props.insert("angle".into(), json!(b.rect.angle));
            props.insert("length_m".into(), json!(2.0 * b.rect.half_length));
            props.insert("width_m".into(), json!(2.0 * b.rect.half_width));
            props.extend(extra.clone());
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [b.rect.ring()]},
                "properties": Value::Object(props),
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}
