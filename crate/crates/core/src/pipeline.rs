//! Shared stage chains: stop filtering, augmentation, snapping and
//! standardization feeding the mixture fits.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::augment::{augment_dataset, snap_cloud, PointCloud};
use crate::baseline::{run_baseline, MembershipModel};
use crate::divergence::{evaluate, BhattacharyyaEstimate, PortArea};
use crate::error::{Error, Result};
use crate::geometry::{berths_to_geojson, localize_berths, BerthPolygon};
use crate::ingest::Dataset;
use crate::mixture::{fit_gmm, FitOptions, Gmm, Point};
use crate::preprocess::{clean, preprocess, resample_and_filter, split, Standardizer};
use crate::seed::derive_seed;
use crate::stopdetect::{filter_stops, DbscanParams};
use crate::tuner::{tune, TuneResult, TuningTrial};
use crate::types::PortConfig;

/// How a point cloud is built from a preprocessed dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudSettings {
    pub aug_points: usize,
    /// Geohash precision used for snapping, if enabled.
    pub geohash: Option<usize>,
}

impl CloudSettings {
    pub fn training(config: &PortConfig) -> Self {
        Self {
            aug_points: config.train_aug_points,
            geohash: config.geohash_enabled.then_some(config.geohash_precision),
        }
    }

    pub fn evaluation(config: &PortConfig) -> Self {
        Self {
            aug_points: config.eval_aug_points,
            ..Self::training(config)
        }
    }
}

/// Stop filter, footprint augmentation and optional geohash snapping.
pub fn stop_cloud(d: &Dataset, params: &DbscanParams, settings: CloudSettings, seed: u64) -> Result<PointCloud> {
    let stops = filter_stops(d, params)?;
    let cloud = augment_dataset(&stops, settings.aug_points, seed)?;
    let cloud = match settings.geohash {
        Some(p) => snap_cloud(&cloud, p),
        None => cloud,
    };
    if cloud.is_empty() {
        return Err(Error::empty("augment"));
    }
    Ok(cloud)
}

/// One transform fitted on the union of the clouds.
pub fn pooled_transform(clouds: &[&PointCloud]) -> Result<Standardizer<f64>> {
    let pts: Vec<[f64; 2]> = clouds
        .iter()
        .flat_map(|c| c.points.iter().map(|p| [p.lon, p.lat]))
        .collect();
    Standardizer::fit(&pts)
}

pub fn standardize(cloud: &PointCloud, t: &Standardizer<f64>) -> Vec<Point<f64>> {
    cloud.points.iter().map(|p| t.apply_geo(*p)).collect()
}

/// Two splits in one model space.
#[derive(Debug, Clone)]
pub struct SplitClouds {
    pub cloud_a: PointCloud,
    pub cloud_b: PointCloud,
    pub transform: Standardizer<f64>,
    pub points_a: Vec<Point<f64>>,
    pub points_b: Vec<Point<f64>>,
}

/// Builds both clouds with the same augmentation seed and standardizes them
/// with their pooled transform.
pub fn split_clouds(
    split_a: &Dataset,
    split_b: &Dataset,
    params: &DbscanParams,
    settings: CloudSettings,
    seed: u64,
) -> Result<SplitClouds> {
    let aug_seed = derive_seed(seed, "augment", 0);
    let cloud_a = stop_cloud(split_a, params, settings, aug_seed)?;
    let cloud_b = stop_cloud(split_b, params, settings, aug_seed)?;
    let transform = pooled_transform(&[&cloud_a, &cloud_b])?;
    let points_a = standardize(&cloud_a, &transform);
    let points_b = standardize(&cloud_b, &transform);
    Ok(SplitClouds { cloud_a, cloud_b, transform, points_a, points_b })
}

/// Fits one mixture per split with identical seeds.
pub fn fit_pair(clouds: &SplitClouds, k: usize, options: &FitOptions) -> Result<(Gmm<f64>, Gmm<f64>)> {
    let a = fit_gmm(&clouds.points_a, k, options, clouds.transform)?;
    let b = fit_gmm(&clouds.points_b, k, options, clouds.transform)?;
    Ok((a, b))
}

/// Stop-filter parameters and component count chosen by tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub params: DbscanParams,
    pub n_components: usize,
}

impl TunedParams {
    /// Best successful trial of a history.
    pub fn from_trials(history: &[TuningTrial]) -> Result<Self> {
        let best = TuneResult::from_history(history.to_vec()).map_err(|_| Error::MissingTuning)?;
        let n_components = best.best.n_components.ok_or(Error::MissingTuning)?;
        Ok(Self { params: best.best.params, n_components })
    }
}

/// Cleans, splits and tunes; `on_trial` sees every new trial.
pub fn run_tuning(
    raw: &Dataset,
    history: Vec<TuningTrial>,
    on_trial: impl FnMut(&TuningTrial) -> Result<()>,
) -> Result<TuneResult> {
    let pre = preprocess(raw)?;
    tune(&pre.split_a, &pre.split_b, &raw.port, history, on_trial)
}

/// Output of the full-data localization path.
#[derive(Debug, Clone)]
pub struct Localization {
    pub berths: Vec<BerthPolygon>,
    pub model: Gmm<f64>,
    pub cloud: PointCloud,
    pub geojson: Value,
}

/// Whole-data path: no split, evaluation augmentation, final fit at the
/// tuned component count, then berth polygons.
pub fn cmd_localize(raw: &Dataset, tuned: Option<&TunedParams>) -> Result<Localization> {
    let tuned = tuned.ok_or(Error::MissingTuning)?;
    let config = &raw.port;
    let seed = config.rng_seed;
    let full = resample_and_filter(&clean(raw, config)?);
    let cloud = stop_cloud(
        &full,
        &tuned.params,
        CloudSettings::evaluation(config),
        derive_seed(seed, "augment", 0),
    )?;
    let transform = pooled_transform(&[&cloud])?;
    let points = standardize(&cloud, &transform);
    let opts = FitOptions::final_fit(derive_seed(seed, "localize", tuned.n_components as u64));
    let model = fit_gmm(&points, tuned.n_components, &opts, transform)?;
    let berths = localize_berths(&model, &cloud, &config.port_name)?;
    let mut extra = Map::new();
    extra.insert("method".into(), json!(method_label(config)));
    let geojson = berths_to_geojson(&berths, &extra);
    Ok(Localization { berths, model, cloud, geojson })
}

fn method_label(config: &PortConfig) -> &'static str {
    if config.geohash_enabled {
        "gmm-geohash"
    } else {
        "gmm"
    }
}

pub const METHOD_BASELINE: &str = "steenari";

/// One method's row of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    /// `None` when every rerun diverged or the method produced no model.
    pub estimate: Option<BhattacharyyaEstimate>,
    pub error: Option<String>,
}

impl MethodScore {
    fn from_result(method: &str, r: Result<BhattacharyyaEstimate>) -> Self {
        match r {
            Ok(e) => Self { method: method.into(), estimate: Some(e), error: None },
            Err(e) => Self { method: method.into(), estimate: None, error: Some(e.to_string()) },
        }
    }

    /// Mean distance; a method without an estimate scores `+inf`.
    pub fn mean(&self) -> f64 {
        self.estimate.as_ref().map_or(f64::INFINITY, |e| e.mean)
    }

    pub fn std(&self) -> f64 {
        self.estimate.as_ref().map_or(f64::NAN, |e| e.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub port: String,
    pub tuned: TunedParams,
    pub proposed: MethodScore,
    pub baseline: Option<MethodScore>,
}

impl EvaluationReport {
    /// `port,method,mean,std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("port,method,mean,std\n");
        for m in std::iter::once(&self.proposed).chain(self.baseline.as_ref()) {
            out.push_str(&format!("{},{},{},{}\n", self.port, m.method, m.mean(), m.std()));
        }
        out
    }
}

/// Split-consistency of the proposed method only.
pub fn evaluate_proposed(raw: &Dataset, tuned: &TunedParams) -> Result<(BhattacharyyaEstimate, SplitClouds)> {
    let config = &raw.port;
    let seed = config.rng_seed;
    let pre = preprocess(raw)?;
    let clouds = split_clouds(&pre.split_a, &pre.split_b, &tuned.params, CloudSettings::evaluation(config), seed)?;
    let k = tuned.n_components;
    let (ga, gb) = fit_pair(&clouds, k, &FitOptions::final_fit(derive_seed(seed, "final", k as u64)))?;
    let area = PortArea::new(&config.roi, &clouds.transform)?;
    let estimate = evaluate(&ga, &gb, &area, config.mci_samples, config.mci_reruns, derive_seed(seed, "mci", 0))?;
    Ok((estimate, clouds))
}

/// The baseline run separately on the raw records of each split's vessels,
/// scored in the proposed method's model space.
pub fn evaluate_baseline(raw: &Dataset, clouds_transform: &Standardizer<f64>) -> Result<BhattacharyyaEstimate> {
    let config = &raw.port;
    let pair = split(&clean(raw, config)?)?;
    let vessels = |d: &Dataset| d.tracks.iter().map(|t| t.mmsi).collect::<Vec<_>>();
    let model = |mmsis: &[u64]| -> Result<MembershipModel> {
        let set = run_baseline(&raw.with_vessels(mmsis), &config.roi)?;
        Ok(MembershipModel { set, transform: *clouds_transform })
    };
    let a = model(&vessels(&pair.split_a))?;
    let b = model(&vessels(&pair.split_b))?;
    let area = PortArea::new(&config.roi, clouds_transform)?;
    evaluate(&a, &b, &area, config.mci_samples, config.mci_reruns, derive_seed(config.rng_seed, "mci", 1))
}

/// Proposed and baseline split-consistency side by side.
pub fn cmd_evaluate(raw: &Dataset, tuned: Option<&TunedParams>, with_baseline: bool) -> Result<EvaluationReport> {
    let tuned = *tuned.ok_or(Error::MissingTuning)?;
    let (estimate, clouds) = evaluate_proposed(raw, &tuned)?;
    let proposed = MethodScore { method: method_label(&raw.port).into(), estimate: Some(estimate), error: None };
    let baseline = with_baseline.then(|| {
        let r = evaluate_baseline(raw, &clouds.transform);
        if let Err(e) = &r {
            log::warn!("baseline scored +inf: {e}");
        }
        MethodScore::from_result(METHOD_BASELINE, r)
    });
    Ok(EvaluationReport { port: raw.port.port_name.clone(), tuned, proposed, baseline })
}

/// Axis of an ablation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Poi,
    AugPoints,
    Interpolation,
}

impl AblationAxis {
    /// Default sweep values: days, points per record, seconds.
    pub fn default_values(&self) -> Vec<u64> {
        match self {
            AblationAxis::Poi => vec![3, 7, 14, 30],
            AblationAxis::AugPoints => vec![0, 2, 5, 10, 20, 40],
            AblationAxis::Interpolation => vec![900, 1800, 3600, 7200],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "poi" => Ok(AblationAxis::Poi),
            "aug_points" | "aug-points" => Ok(AblationAxis::AugPoints),
            "interpolation" => Ok(AblationAxis::Interpolation),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }

    /// The dataset and config for one sweep value.
    pub fn apply(&self, raw: &Dataset, value: u64) -> Result<Dataset> {
        let mut d = raw.clone();
        match self {
            AblationAxis::Poi => {
                let end = raw.port.poi_start + value as i64 * 86_400;
                if end > raw.port.poi_end {
                    return Err(Error::Config(format!("POI of {value} days exceeds the loaded period")));
                }
                d = raw.filter_records("poi", |r| r.timestamp < end);
                d.port.poi_end = end;
            }
            AblationAxis::AugPoints => {
                d.port.train_aug_points = value as usize;
                d.port.eval_aug_points = value as usize;
            }
            AblationAxis::Interpolation => d.port.interpolation_period = value as i64,
        }
        d.port.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: u64,
    pub tuned: Option<TunedParams>,
    pub score: MethodScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub port: String,
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("port,axis,value,mean,std,lower_95,upper_95\n");
        let axis = serde_json::to_value(self.axis).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        for r in &self.rows {
            let (lo, hi) = r.score.estimate.as_ref().map_or((f64::NAN, f64::NAN), |e| (e.lower_95, e.upper_95));
            out.push_str(&format!("{},{},{},{},{},{},{}\n", self.port, axis, r.value, r.score.mean(), r.score.std(), lo, hi));
        }
        out
    }
}

/// Tunes and evaluates once per sweep value. A value whose run fails is
/// reported with its error and scores `+inf`.
pub fn cmd_ablate(raw: &Dataset, axis: AblationAxis, values: &[u64]) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let d = axis.apply(raw, value)?;
        let run = run_tuning(&d, Vec::new(), |_| Ok(()))
            .and_then(|t| TunedParams::from_trials(&t.history))
            .and_then(|tuned| evaluate_proposed(&d, &tuned).map(|(e, _)| (tuned, e)));
        let row = match run {
            Ok((tuned, e)) => AblationRow {
                value,
                tuned: Some(tuned),
                score: MethodScore { method: method_label(&d.port).into(), estimate: Some(e), error: None },
            },
            Err(e) => {
                log::warn!("ablation value {value} failed: {e}");
                AblationRow { value, tuned: None, score: MethodScore::from_result(method_label(&d.port), Err(e)) }
            }
        };
        log::info!("ablation {axis:?}={value}: mean BD {}", row.score.mean());
        rows.push(row);
    }
    Ok(AblationReport { port: raw.port.port_name.clone(), axis, rows })
}
