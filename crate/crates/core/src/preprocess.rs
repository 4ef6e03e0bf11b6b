//! Cleaning ladder, hourly resampling, vessel-exclusive split and the
//! standardization transform.
//!
//! Stage order follows the per-stage message counts the method reports:
//! ROI, speed, unavailable heading (with the dimension check), split,
//! interpolation, heading change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, VesselTrack};
use crate::scalar::Real;
use crate::types::{AisRecord, GeoPoint, PortConfig};

pub const STAGE_VESSEL_TYPE: &str = "vessel_type";
pub const STAGE_SPEED: &str = "speed";
pub const STAGE_HEADING_511: &str = "heading_511";
pub const STAGE_SPLIT: &str = "split";
pub const STAGE_INTERPOLATION: &str = "interpolation";
pub const STAGE_HEADING_DELTA: &str = "heading_delta";

/// Vessel type, speed, unavailable heading and missing dimensions.
pub fn clean(d: &Dataset, config: &PortConfig) -> Result<Dataset> {
    let threshold = config.speed_threshold;
    let out = d
        .filter_records(STAGE_VESSEL_TYPE, |r| r.vessel_type.is_cargo_or_tanker())
        .filter_records(STAGE_SPEED, |r| r.speed_over_ground < threshold)
        .filter_records(STAGE_HEADING_511, |r| {
            r.heading_available() && r.dimensions().is_some()
        });
    if out.is_empty() {
        return Err(Error::empty("cleaning"));
    }
    Ok(out)
}

/// Keeps the latest record in each `period`-second bin anchored at
/// `poi_start`. Nothing is synthesized for empty bins.
pub fn interpolate(d: &Dataset, period: i64) -> Dataset {
    let origin = d.port.poi_start;
    let period = period.max(1);
    d.map_tracks(STAGE_INTERPOLATION, |t| resample_track(t, origin, period))
}

fn resample_track(t: &VesselTrack, origin: i64, period: i64) -> Vec<AisRecord> {
    let mut out: Vec<AisRecord> = Vec::new();
    let mut current_bin: Option<i64> = None;
    for r in &t.records {
        let bin = (r.timestamp - origin).div_euclid(period);
        if current_bin == Some(bin) {
            *out.last_mut().expect("bin has a record") = r.clone();
        } else {
            out.push(r.clone());
            current_bin = Some(bin);
        }
    }
    out
}

/// Smallest angle between two headings, in degrees.
pub fn circular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Drops a record whose heading differs from the previous retained record
/// by more than `threshold` degrees. The first record always survives.
pub fn heading_delta_filter(d: &Dataset, threshold: f64) -> Dataset {
    d.map_tracks(STAGE_HEADING_DELTA, |t| {
        let mut out: Vec<AisRecord> = Vec::with_capacity(t.len());
        for r in &t.records {
            match out.last() {
                Some(prev) if circular_difference(prev.heading, r.heading) > threshold => {}
                _ => out.push(r.clone()),
            }
        }
        out
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub split_a: Dataset,
    pub split_b: Dataset,
}

/// Ranks vessels by descending message count (ties: ascending mmsi) and
/// deals them alternately into A and B.
pub fn split(d: &Dataset) -> Result<SplitPair> {
    if d.vessel_count() < 2 {
        return Err(Error::FewerThanTwoVessels(d.vessel_count()));
    }
    let mut ranked: Vec<(usize, u64)> = d.tracks.iter().map(|t| (t.len(), t.mmsi)).collect();
    ranked.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut a: Vec<u64> = ranked.iter().step_by(2).map(|r| r.1).collect();
    let mut b: Vec<u64> = ranked.iter().skip(1).step_by(2).map(|r| r.1).collect();
    a.sort_unstable();
    b.sort_unstable();
    let total = d.record_count();
    let mut split_a = d.with_vessels(&a);
    split_a.push_stage(STAGE_SPLIT, total);
    let mut split_b = d.with_vessels(&b);
    split_b.push_stage(STAGE_SPLIT, total);
    Ok(SplitPair { split_a, split_b })
}

/// Everything after ROI/POI filtering for one tuning or evaluation split:
/// interpolation and heading-change filtering.
pub fn resample_and_filter(d: &Dataset) -> Dataset {
    let resampled = interpolate(d, d.port.interpolation_period);
    heading_delta_filter(&resampled, d.port.heading_delta_threshold)
}

/// Output of the full preprocessing ladder.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub split_a: Dataset,
    pub split_b: Dataset,
    pub full: Dataset,
}

/// Clean, split, then resample each split and the unsplit data.
pub fn preprocess(d: &Dataset) -> Result<Preprocessed> {
    let cleaned = clean(d, &d.port)?;
    let pair = split(&cleaned)?;
    let split_a = resample_and_filter(&pair.split_a);
    let split_b = resample_and_filter(&pair.split_b);
    let full = resample_and_filter(&cleaned);
    Ok(Preprocessed {
        split_a,
        split_b,
        full,
    })
}

/// Provenance table shaped like the per-stage message-count table:
/// one row per stage, with the dataset label.
pub fn provenance_csv(rows: &[(&str, &Dataset)]) -> String {
    let mut out = String::from("dataset,stage,before,after\n");
    for (label, d) in rows {
        for s in &d.provenance {
            out.push_str(&format!("{label},{},{},{}\n", s.name, s.before, s.after));
        }
    }
    out
}

/// Per-axis z-score transform mapping `(lon, lat)` degrees to model space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean_lon: T,
    pub mean_lat: T,
    pub std_lon: T,
    pub std_lat: T,
}

impl<T: Real> Standardizer<T> {
    /// Sample mean and population standard deviation of `[lon, lat]` pairs.
    pub fn fit(points: &[[T; 2]]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateSpread { axis: "both" });
        }
        let n = T::from_usize_lossy(points.len());
        let mean = |axis: usize| points.iter().fold(T::zero(), |s, p| s + p[axis]) / n;
        let (mean_lon, mean_lat) = (mean(0), mean(1));
        let std = |axis: usize, m: T| {
            (points
                .iter()
                .fold(T::zero(), |s, p| s + (p[axis] - m) * (p[axis] - m))
                / n)
                .sqrt()
        };
        let (std_lon, std_lat) = (std(0, mean_lon), std(1, mean_lat));
        if !(std_lon > T::zero()) {
            return Err(Error::DegenerateSpread { axis: "longitude" });
        }
        if !(std_lat > T::zero()) {
            return Err(Error::DegenerateSpread { axis: "latitude" });
        }
        Ok(Self {
            mean_lon,
            mean_lat,
            std_lon,
            std_lat,
        })
    }

    #[inline]
    pub fn apply(&self, lon: T, lat: T) -> [T; 2] {
        [
            (lon - self.mean_lon) / self.std_lon,
            (lat - self.mean_lat) / self.std_lat,
        ]
    }

    /// Returns `[lon, lat]`.
    #[inline]
    pub fn invert(&self, z: [T; 2]) -> [T; 2] {
        [
            z[0] * self.std_lon + self.mean_lon,
            z[1] * self.std_lat + self.mean_lat,
        ]
    }

    /// Jacobian determinant of the forward map (standardized area per
    /// square degree).
    pub fn area_scale(&self) -> T {
        T::one() / (self.std_lon * self.std_lat)
    }
}

impl Standardizer<f64> {
    pub fn fit_geo(points: &[GeoPoint]) -> Result<Self> {
        let pts: Vec<[f64; 2]> = points.iter().map(|p| [p.lon, p.lat]).collect();
        Self::fit(&pts)
    }

    pub fn apply_geo(&self, p: GeoPoint) -> [f64; 2] {
        self.apply(p.lon, p.lat)
    }

    pub fn invert_geo(&self, z: [f64; 2]) -> GeoPoint {
        let [lon, lat] = self.invert(z);
        GeoPoint::new(lat, lon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{PortSizeClass, RoiPolygon, VesselType};
    use proptest::prelude::*;

    fn config() -> PortConfig {
        let roi = RoiPolygon::rectangle(GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 1.0)).unwrap();
        PortConfig::new("test", roi, 36_000, 1_000_000, PortSizeClass::Small)
    }

    fn rec(mmsi: u64, t: i64) -> AisRecord {
        AisRecord {
            mmsi,
            timestamp: t,
            position: GeoPoint::new(0.5, 0.5),
            speed_over_ground: 0.1,
            heading: 10.0,
            nav_status: 5,
            vessel_type: VesselType::Cargo,
            dim_a: Some(50.0),
            dim_b: Some(10.0),
            dim_c: Some(5.0),
            dim_d: Some(5.0),
        }
    }

    fn dataset(recs: Vec<AisRecord>) -> Dataset {
        Dataset::from_records(config(), recs, vec![])
    }

    const H10: i64 = 36_000;

    #[test]
    fn speed_threshold_is_strict() {
        let mut fast = rec(1, 1);
        fast.speed_over_ground = 3.0;
        let mut slow = rec(1, 2);
        slow.speed_over_ground = 2.99;
        let d = clean(&dataset(vec![fast, slow]), &config()).unwrap();
        assert_eq!(d.record_count(), 1);
        assert_eq!(d.records().next().unwrap().timestamp, 2);
    }

    #[test]
    fn clean_drops_passenger_and_511_and_partial_dims() {
        let mut p = rec(1, 1);
        p.vessel_type = VesselType::Passenger;
        let mut h = rec(1, 2);
        h.heading = 511.0;
        let mut nod = rec(1, 3);
        nod.dim_a = None;
        nod.dim_b = None;
        nod.dim_c = None;
        nod.dim_d = None;
        let keep = rec(1, 4);
        let d = clean(&dataset(vec![p, h, nod, keep]), &config()).unwrap();
        assert_eq!(d.record_count(), 1);
        assert_eq!(
            d.stage_names(),
            vec![STAGE_VESSEL_TYPE, STAGE_SPEED, STAGE_HEADING_511]
        );
        let mut only_bad = rec(1, 1);
        only_bad.speed_over_ground = 10.0;
        assert!(clean(&dataset(vec![only_bad]), &config()).is_err());
    }

    #[test]
    fn hourly_resampling_keeps_last_per_bin() {
        let times = [H10 + 300, H10 + 2400, H10 + 4200];
        let d = dataset(times.iter().map(|&t| rec(1, t)).collect());
        let hourly = interpolate(&d, 3600);
        let kept: Vec<i64> = hourly.records().map(|r| r.timestamp).collect();
        assert_eq!(kept, vec![H10 + 2400, H10 + 4200]);

        let half = interpolate(&d, 1800);
        let kept: Vec<i64> = half.records().map(|r| r.timestamp).collect();
        assert_eq!(kept, vec![H10 + 300, H10 + 2400, H10 + 4200]);

        let single = interpolate(&dataset(vec![rec(1, H10 + 5)]), 3600);
        assert_eq!(single.record_count(), 1);
    }

    #[test]
    fn heading_changes() {
        let mk = |hs: &[f64]| {
            dataset(
                hs.iter()
                    .enumerate()
                    .map(|(i, &h)| {
                        let mut r = rec(1, i as i64);
                        r.heading = h;
                        r
                    })
                    .collect(),
            )
        };
        let kept = |d: &Dataset| d.records().map(|r| r.heading).collect::<Vec<_>>();
        assert_eq!(kept(&heading_delta_filter(&mk(&[10.0, 15.0, 80.0]), 10.0)), vec![10.0, 15.0]);
        assert_eq!(kept(&heading_delta_filter(&mk(&[359.0, 2.0]), 10.0)), vec![359.0, 2.0]);
        assert_eq!(kept(&heading_delta_filter(&mk(&[42.0]), 10.0)), vec![42.0]);
        assert_eq!(circular_difference(359.0, 2.0), 3.0);
        assert_eq!(circular_difference(2.0, 359.0), 3.0);
    }

    #[test]
    fn split_alternates_by_count() {
        let mut recs = vec![];
        for (mmsi, n) in [(1u64, 10), (2, 8), (3, 5), (4, 3)] {
            recs.extend((0..n).map(|t| rec(mmsi, t)));
        }
        let pair = split(&dataset(recs)).unwrap();
        let ids = |d: &Dataset| d.tracks.iter().map(|t| t.mmsi).collect::<Vec<_>>();
        assert_eq!(ids(&pair.split_a), vec![1, 3]);
        assert_eq!(ids(&pair.split_b), vec![2, 4]);

        let tie = split(&dataset(vec![rec(9, 0), rec(4, 0)])).unwrap();
        assert_eq!(ids(&tie.split_a), vec![4]);
        assert!(matches!(
            split(&dataset(vec![rec(1, 0)])),
            Err(Error::FewerThanTwoVessels(1))
        ));
    }

    #[test]
    fn standardizer_basics() {
        let s = Standardizer::fit(&[[5.0, 0.0], [7.0, 2.0]]).unwrap();
        assert_eq!(s.mean_lat, 1.0);
        assert_eq!(s.std_lat, 1.0);
        assert_eq!(s.apply(5.0, 0.0)[1], -1.0);
        assert_eq!(s.apply(7.0, 2.0)[1], 1.0);
        assert!(matches!(
            Standardizer::fit(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]),
            Err(Error::DegenerateSpread { .. })
        ));
        let f = Standardizer::<f32>::fit(&[[0.0, 0.0], [2.0, 4.0]]).unwrap();
        assert_eq!(f.invert(f.apply(2.0, 4.0)), [2.0, 4.0]);
    }

    #[test]
    fn full_ladder_stage_order() {
        let mut recs = vec![];
        for mmsi in 1..=4u64 {
            recs.extend((0..20).map(|i| rec(mmsi, H10 + i * 900)));
        }
        let d = Dataset::from_records(config(), recs, vec![]);
        let pre = preprocess(&d).unwrap();
        let expected = [
            STAGE_VESSEL_TYPE,
            STAGE_SPEED,
            STAGE_HEADING_511,
            STAGE_SPLIT,
            STAGE_INTERPOLATION,
            STAGE_HEADING_DELTA,
        ];
        assert_eq!(pre.split_a.stage_names(), expected);
        assert_eq!(pre.split_b.stage_names(), expected);
        assert!(!pre.full.stage_names().contains(&STAGE_SPLIT));
        assert_eq!(pre.full.record_count(), 4 * 5);
        let csv = provenance_csv(&[("a", &pre.split_a)]);
        assert!(csv.starts_with("dataset,stage,before,after\na,vessel_type,80,80\n"));
    }

    proptest! {
        #[test]
        fn standardizer_round_trip(
            pts in proptest::collection::vec((-180f64..180.0, -90f64..90.0), 2..50)
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a, b]).collect();
            prop_assume!(Standardizer::fit(&pts).is_ok());
            let s = Standardizer::fit(&pts).unwrap();
            for p in &pts {
                let back = s.invert(s.apply(p[0], p[1]));
                prop_assert!((back[0] - p[0]).abs() < 1e-12);
                prop_assert!((back[1] - p[1]).abs() < 1e-12);
            }
        }

        #[test]
        fn split_partitions_vessels(counts in proptest::collection::vec(1usize..30, 2..20)) {
            let mut recs = vec![];
            for (i, n) in counts.iter().enumerate() {
                recs.extend((0..*n as i64).map(|t| rec(100 + i as u64, t)));
            }
            let d = dataset(recs);
            let pair = split(&d).unwrap();
            let a: Vec<u64> = pair.split_a.tracks.iter().map(|t| t.mmsi).collect();
            let b: Vec<u64> = pair.split_b.tracks.iter().map(|t| t.mmsi).collect();
            prop_assert!(a.iter().all(|m| !b.contains(m)));
            prop_assert_eq!(a.len() + b.len(), d.vessel_count());
            let largest = counts.iter().max().unwrap();
            let diff = pair.split_a.record_count().abs_diff(pair.split_b.record_count());
            prop_assert!(diff <= *largest);
        }

        #[test]
        fn resampling_keeps_one_per_bin(
            times in proptest::collection::btree_set(0i64..200_000, 1..80),
            period in prop_oneof![Just(900i64), Just(1800), Just(3600), Just(7200)],
        ) {
            let d = dataset(times.iter().map(|&t| rec(1, H10 + t)).collect());
            let out = interpolate(&d, period);
            let bins: Vec<i64> = out.records().map(|r| (r.timestamp - H10) / period).collect();
            let mut dedup = bins.clone();
            dedup.dedup();
            prop_assert_eq!(bins.len(), dedup.len());
            for r in out.records() {
                prop_assert!(times.contains(&(r.timestamp - H10)));
            }
        }

        #[test]
        fn heading_filter_keeps_first(hs in proptest::collection::vec(0f64..360.0, 1..40)) {
            let d = dataset(hs.iter().enumerate().map(|(i, &h)| {
                let mut r = rec(1, i as i64);
                r.heading = h;
                r
            }).collect());
            let out = heading_delta_filter(&d, 10.0);
            prop_assert_eq!(out.records().next().unwrap().heading, hs[0]);
        }
    }
}
