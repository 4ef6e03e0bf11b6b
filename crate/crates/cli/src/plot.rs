//! Static SVG maps: cloud points, 3-sigma mixture ellipses and berth
//! rectangles on a tangent plane at the ROI centroid.

use std::fmt::Write;

use berthfinder::geometry::{to_plane, BerthPolygon};
use berthfinder::mixture::symmetric_eigenvalues;
use berthfinder::{GeoPoint, GmmModel, RoiPolygon};

const SIZE: f64 = 800.0;
const MAX_POINTS: usize = 20_000;

struct Frame {
    origin: GeoPoint,
    min: [f64; 2],
    scale: f64,
}

impl Frame {
    fn new(roi: &RoiPolygon) -> Self {
        let origin = roi.centroid();
        let pts: Vec<[f64; 2]> = roi.vertices().iter().map(|v| to_plane(origin, *v)).collect();
        let lo = [pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)];
        let hi = [pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max), pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max)];
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
        Self { origin, min: lo, scale: SIZE / span }
    }

    fn xy(&self, p: GeoPoint) -> (f64, f64) {
        let q = to_plane(self.origin, p);
        ((q[0] - self.min[0]) * self.scale, SIZE - (q[1] - self.min[1]) * self.scale)
    }

    fn path(&self, ring: impl IntoIterator<Item = GeoPoint>) -> String {
        let mut d = String::new();
        for (i, p) in ring.into_iter().enumerate() {
            let (x, y) = self.xy(p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        d.push('Z');
        d
    }
}

/// 3-sigma ellipse of one component as a polygon in geographic space.
fn ellipse(model: &GmmModel, c: usize) -> Vec<GeoPoint> {
    let comp = &model.components()[c];
    let m = comp.mean();
    let s = comp.covariance();
    let (l1, l2) = symmetric_eigenvalues(s);
    // eigenvector of the larger eigenvalue
    let theta = if s[0][1].abs() > 1e-15 { (l1 - s[0][0]).atan2(s[0][1]) } else if s[0][0] >= s[1][1] { 0.0 } else { std::f64::consts::FRAC_PI_2 };
    let (a, b) = (3.0 * l1.max(0.0).sqrt(), 3.0 * l2.max(0.0).sqrt());
    (0..48)
        .map(|i| {
            let t = i as f64 / 48.0 * std::f64::consts::TAU;
            let (u, v) = (a * t.cos(), b * t.sin());
            let z = [m[0] + u * theta.cos() - v * theta.sin(), m[1] + u * theta.sin() + v * theta.cos()];
            model.transform.invert_geo(z)
        })
        .collect()
}

pub fn render(roi: &RoiPolygon, points: &[GeoPoint], model: Option<&GmmModel>, berths: &[BerthPolygon]) -> String {
    let f = Frame::new(roi);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(svg, r##"<path d="{}" fill="none" stroke="#888888" stroke-dasharray="4 4"/>"##, f.path(roi.vertices().iter().copied()));
    let step = points.len().div_ceil(MAX_POINTS).max(1);
    for p in points.iter().step_by(step) {
        let (x, y) = f.xy(*p);
        let _ = writeln!(svg, r##"<circle cx="{x:.2}" cy="{y:.2}" r="0.8" fill="#1f77b4" fill-opacity="0.4"/>"##);
    }
    if let Some(m) = model {
        for c in 0..m.n_components() {
            let _ = writeln!(svg, r##"<path d="{}" fill="none" stroke="#2ca02c"/>"##, f.path(ellipse(m, c)));
        }
    }
    for b in berths {
        let colour = if b.marker { "#ff7f0e" } else { "#d62728" };
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, f.path(b.rect.corners()));
    }
    svg.push_str("</svg>\n");
    svg
}
