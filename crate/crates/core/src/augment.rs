//! Footprint augmentation: replace each AIS fix with points sampled
//! uniformly over the hull rectangle implied by heading and dimensions.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geohash;
use crate::ingest::Dataset;
use crate::seed::rng_from;
use crate::types::{AisRecord, GeoPoint};

/// Meters per degree of latitude in the local tangent-plane conversion.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Vessel hull rectangle around the AIS receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub anchor: GeoPoint,
    /// Degrees clockwise from north.
    pub heading: f64,
    pub fore: f64,
    pub aft: f64,
    pub port_side: f64,
    pub starboard: f64,
}

impl Footprint {
    pub fn from_record(r: &AisRecord) -> Option<Self> {
        let dims = r.dimensions()?;
        Some(Self {
            anchor: r.position,
            heading: r.heading,
            fore: dims.a,
            aft: dims.b,
            port_side: dims.c,
            starboard: dims.d,
        })
    }

    /// `(north, east)` meters for an along-heading offset `u` and a
    /// starboard offset `v`.
    pub fn offset_meters(&self, u: f64, v: f64) -> (f64, f64) {
        let h = self.heading.to_radians();
        let cross = h + std::f64::consts::FRAC_PI_2;
        (u * h.cos() + v * cross.cos(), u * h.sin() + v * cross.sin())
    }

    /// Inverse of [`Self::offset_meters`].
    pub fn body_coordinates(&self, north: f64, east: f64) -> (f64, f64) {
        let h = self.heading.to_radians();
        (north * h.cos() + east * h.sin(), -north * h.sin() + east * h.cos())
    }

    pub fn point_at(&self, u: f64, v: f64) -> GeoPoint {
        let (north, east) = self.offset_meters(u, v);
        offset_geo(self.anchor, north, east)
    }
}

/// Moves `p` by `(north, east)` meters on the local tangent plane.
pub fn offset_geo(p: GeoPoint, north: f64, east: f64) -> GeoPoint {
    GeoPoint::new(
        p.lat + north / METERS_PER_DEGREE,
        p.lon + east / (METERS_PER_DEGREE * p.lat.to_radians().cos()),
    )
}

/// `(north, east)` meters of `p` relative to `origin`; inverse of [`offset_geo`].
pub fn local_meters(origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
    (
        (p.lat - origin.lat) * METERS_PER_DEGREE,
        (p.lon - origin.lon) * METERS_PER_DEGREE * origin.lat.to_radians().cos(),
    )
}

/// `n` i.i.d. uniform points over the footprint.
pub fn sample_footprint<R: Rng + ?Sized>(fp: &Footprint, n: usize, rng: &mut R) -> Result<Vec<GeoPoint>> {
    if fp.heading == crate::types::HEADING_UNAVAILABLE {
        return Err(Error::HeadingUnavailable);
    }
    let uniform = |rng: &mut R, lo: f64, hi: f64| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    Ok((0..n)
        .map(|_| {
            let u = uniform(rng, -fp.aft, fp.fore);
            let v = uniform(rng, -fp.port_side, fp.starboard);
            fp.point_at(u, v)
        })
        .collect())
}

/// Generated points plus the index of the record each came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<GeoPoint>,
    /// Source record id per point, non-decreasing.
    pub sources: Vec<usize>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Generated point count per source record.
    pub fn source_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &s in &self.sources {
            *counts.entry(s).or_insert(0) += 1;
        }
        counts
    }

    fn push_group(&mut self, source: usize, pts: Vec<GeoPoint>) {
        self.sources.extend(std::iter::repeat_n(source, pts.len()));
        self.points.extend(pts);
    }
}

/// Samples `n_per_record` footprint points for every record (anchors are
/// not included). With `n_per_record == 0` the anchors themselves form the
/// cloud. Record ids follow dataset iteration order; each record has its own
/// RNG stream derived from `seed`.
pub fn augment_dataset(d: &Dataset, n_per_record: usize, seed: u64) -> Result<PointCloud> {
    let records: Vec<&AisRecord> = d.records().collect();
    let groups: Vec<Vec<GeoPoint>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            if n_per_record == 0 {
                return Ok(vec![r.position]);
            }
            let fp = Footprint::from_record(r).ok_or_else(|| {
                Error::InvalidInput(format!("record {i} of vessel {} lacks dimensions", r.mmsi))
            })?;
            let mut rng = rng_from(seed, "augment", i as u64);
            sample_footprint(&fp, n_per_record, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut cloud = PointCloud::default();
    for (i, g) in groups.into_iter().enumerate() {
        cloud.push_group(i, g);
    }
    Ok(cloud)
}

/// Replaces points by their geohash cell centers and removes repeated cells
/// within each source record.
pub fn snap_cloud(c: &PointCloud, precision: usize) -> PointCloud {
    let mut out = PointCloud::default();
    let mut start = 0;
    while start < c.len() {
        let source = c.sources[start];
        let end = start + c.sources[start..].iter().take_while(|&&s| s == source).count();
        let mut seen = HashSet::new();
        let mut group = Vec::new();
        for p in &c.points[start..end] {
            let hash = geohash::encode(*p, precision);
            if seen.insert(hash.clone()) {
                group.push(geohash::decode(&hash).expect("valid hash"));
            }
        }
        out.push_group(source, group);
        start = end;
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CloudRow {
    record: usize,
    lon: f64,
    lat: f64,
}

pub fn save_cloud(c: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (p, &s) in c.points.iter().zip(&c.sources) {
        let row = CloudRow {
            record: s,
            lon: p.lon,
            lat: p.lat,
        };
        serde_json::to_writer(&mut w, &row).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).map_err(|source| Error::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut c = PointCloud::default();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CloudRow = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("bad point cloud row: {e}")))?;
        c.points.push(GeoPoint::new(row.lat, row.lon));
        c.sources.push(row.record);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Rng as SeedRng;
    use crate::types::{PortConfig, PortSizeClass, RoiPolygon, VesselType};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn footprint(heading: f64) -> Footprint {
        Footprint {
            anchor: GeoPoint::new(40.0, 10.0),
            heading,
            fore: 100.0,
            aft: 20.0,
            port_side: 10.0,
            starboard: 10.0,
        }
    }

    #[test]
    fn axis_aligned_samples_stay_in_box() {
        let fp = footprint(0.0);
        let mut rng = SeedRng::seed_from_u64(1);
        for p in sample_footprint(&fp, 2000, &mut rng).unwrap() {
            let (n, e) = local_meters(fp.anchor, p);
            assert!((-20.0 - 1e-6..=100.0 + 1e-6).contains(&n));
            assert!((-10.0 - 1e-6..=10.0 + 1e-6).contains(&e));
        }
    }

    #[test]
    fn quarter_turn_points_east() {
        let fp = footprint(90.0);
        let (n, e) = fp.offset_meters(100.0, 0.0);
        assert!(n.abs() < 1e-9);
        assert!((e - 100.0).abs() < 1e-9);
        let (n, e) = fp.offset_meters(0.0, 10.0);
        assert!((n + 10.0).abs() < 1e-9, "starboard of an east-bound ship is south");
        assert!(e.abs() < 1e-9);
    }

    #[test]
    fn mean_along_offset() {
        let fp = footprint(0.0);
        let mut rng = SeedRng::seed_from_u64(7);
        let pts = sample_footprint(&fp, 10_000, &mut rng).unwrap();
        let mean_north = pts.iter().map(|p| local_meters(fp.anchor, *p).0).sum::<f64>() / pts.len() as f64;
        assert!((mean_north - 40.0).abs() < 2.0, "mean north {mean_north}");
    }

    #[test]
    fn unavailable_heading_is_rejected() {
        let mut rng = SeedRng::seed_from_u64(7);
        assert!(matches!(
            sample_footprint(&footprint(511.0), 3, &mut rng),
            Err(Error::HeadingUnavailable)
        ));
    }

    fn dataset(n: usize) -> Dataset {
        let roi = RoiPolygon::rectangle(GeoPoint::new(0.0, 0.0), GeoPoint::new(50.0, 50.0)).unwrap();
        let cfg = PortConfig::new("t", roi, 0, 1000, PortSizeClass::Small);
        let recs = (0..n).map(|i| AisRecord {
            mmsi: 1 + (i % 2) as u64,
            timestamp: i as i64,
            position: GeoPoint::new(40.0, 10.0 + i as f64 * 0.01),
            speed_over_ground: 0.0,
            heading: 30.0,
            nav_status: 5,
            vessel_type: VesselType::Tanker,
            dim_a: Some(80.0),
            dim_b: Some(20.0),
            dim_c: Some(8.0),
            dim_d: Some(12.0),
        });
        Dataset::from_records(cfg, recs, vec![])
    }

    #[test]
    fn augment_counts_and_determinism() {
        let d = dataset(5);
        let c10 = augment_dataset(&d, 10, 3).unwrap();
        assert_eq!(c10.len(), 50);
        assert!(c10.source_counts().values().all(|&n| n == 10));
        assert_eq!(augment_dataset(&d, 20, 3).unwrap().len(), 100);
        assert_eq!(augment_dataset(&d, 10, 3).unwrap(), c10);
        assert_ne!(augment_dataset(&d, 10, 4).unwrap(), c10);
        let anchors = augment_dataset(&d, 0, 3).unwrap();
        let expected: Vec<GeoPoint> = d.records().map(|r| r.position).collect();
        assert_eq!(anchors.points, expected);
    }

    #[test]
    fn snapping_dedups_per_record() {
        let p = GeoPoint::new(40.0, 10.0);
        let q = GeoPoint::new(40.0 + 1e-7, 10.0 + 1e-7);
        let c = PointCloud {
            points: vec![p, q, p],
            sources: vec![0, 0, 1],
        };
        let s = snap_cloud(&c, 9);
        assert_eq!(s.sources, vec![0, 1]);
        assert_eq!(s.points[0], s.points[1]);
        assert!(snap_cloud(&PointCloud::default(), 9).is_empty());
    }

    #[test]
    fn cloud_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = augment_dataset(&dataset(3), 4, 1).unwrap();
        let path = dir.path().join("c.jsonl");
        save_cloud(&c, &path).unwrap();
        assert_eq!(load_cloud(&path).unwrap(), c);
    }

    proptest! {
        #[test]
        fn samples_inside_rotated_rectangle(
            heading in 0f64..360.0,
            fore in 0f64..300.0, aft in 0f64..100.0,
            port in 0f64..30.0, starboard in 0f64..30.0,
            seed in any::<u64>(),
        ) {
            let fp = Footprint { anchor: GeoPoint::new(-33.9, 18.4), heading, fore, aft, port_side: port, starboard };
            let mut rng = SeedRng::seed_from_u64(seed);
            let h = heading.to_radians();
            let cross = h + std::f64::consts::FRAC_PI_2;
            for _ in 0..20 {
                let u = if fore + aft > 0.0 { rng.random_range(-aft..=fore) } else { 0.0 };
                let v = if port + starboard > 0.0 { rng.random_range(-port..=starboard) } else { 0.0 };
                let (n, e) = fp.offset_meters(u, v);
                // invert the rotation independently
                let back_u = n * h.cos() + e * h.sin();
                let back_v = n * cross.cos() + e * cross.sin();
                prop_assert!(back_u >= -aft - 1e-9 && back_u <= fore + 1e-9);
                prop_assert!(back_v >= -port - 1e-9 && back_v <= starboard + 1e-9);
            }
            for p in sample_footprint(&fp, 20, &mut rng).unwrap() {
                let (n, e) = local_meters(fp.anchor, p);
                let (u, v) = fp.body_coordinates(n, e);
                prop_assert!(u >= -aft - 1e-6 && u <= fore + 1e-6);
                prop_assert!(v >= -port - 1e-6 && v <= starboard + 1e-6);
            }
        }

        #[test]
        fn snap_is_idempotent(seed in any::<u64>(), n in 1usize..40) {
            let d = dataset(3);
            let c = augment_dataset(&d, n, seed).unwrap();
            let once = snap_cloud(&c, 9);
            prop_assert_eq!(snap_cloud(&once, 9), once.clone());
            prop_assert_eq!(once.len(), once.source_counts().values().sum::<usize>());
        }
    }
}
