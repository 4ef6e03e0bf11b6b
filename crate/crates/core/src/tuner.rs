//! Tree-structured Parzen Estimator over the stop-detection hyperparameters
//! and the per-trial objective it minimizes.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::divergence::kl_symm;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::mixture::{candidate_range, select_n_components, FitOptions};
use crate::pipeline::{fit_pair, split_clouds, CloudSettings};
use crate::seed::{derive_seed, rng_from};
use crate::stopdetect::DbscanParams;
use crate::types::PortConfig;

/// Bounds of the search: log-uniform epsilon (meters) and uniform integer
/// min_points, both inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub epsilon: (f64, f64),
    pub min_points: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { epsilon: (5.0, 70.0), min_points: (2, 25) }
    }
}

impl SearchSpace {
    fn log_eps(&self) -> (f64, f64) {
        (self.epsilon.0.ln(), self.epsilon.1.ln())
    }

    fn n_levels(&self) -> usize {
        self.min_points.1 - self.min_points.0 + 1
    }

    pub fn contains(&self, p: &DbscanParams) -> bool {
        (self.epsilon.0..=self.epsilon.1).contains(&p.epsilon)
            && (self.min_points.0..=self.min_points.1).contains(&p.min_points)
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> DbscanParams {
        let (lo, hi) = self.log_eps();
        let eps = rng.random_range(lo..=hi).exp().clamp(self.epsilon.0, self.epsilon.1);
        let mp = rng.random_range(self.min_points.0..=self.min_points.1);
        DbscanParams { epsilon: eps, min_points: mp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeOptions {
    pub trials: usize,
    pub warm_start: usize,
    pub gamma: f64,
    pub candidates: usize,
    pub seed: u64,
}

impl TpeOptions {
    pub fn new(trials: usize, warm_start: usize, seed: u64) -> Self {
        Self { trials, warm_start, gamma: 0.25, candidates: 24, seed }
    }

    pub fn from_config(config: &PortConfig) -> Self {
        Self::new(config.tpe_trials, config.tpe_warm_start.min(config.tpe_trials), config.rng_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.candidates == 0 {
            return Err(Error::Config("trials and candidates must be positive".into()));
        }
        if self.warm_start > self.trials {
            return Err(Error::Config("warm_start cannot exceed trials".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One evaluated hyperparameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningTrial {
    pub index: usize,
    pub params: DbscanParams,
    pub n_components: Option<usize>,
    /// Symmetric KL in nats; `+inf` when the trial failed.
    #[serde(serialize_with = "ser_objective", deserialize_with = "de_objective")]
    pub objective: f64,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn ser_objective<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn de_objective<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl TuningTrial {
    pub fn failed(&self) -> bool {
        !self.objective.is_finite()
    }
}

/// Result of an objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub objective: f64,
    pub n_components: Option<usize>,
}

/// Gaussian KDE over log-epsilon, mixed with the uniform prior as one extra
/// component. The Silverman bandwidth is floored at `range / min(100, n + 1)`,
/// which tends to 1% of the range as history grows.
struct LogKde {
    centers: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
}

impl LogKde {
    fn new(centers: Vec<f64>, lo: f64, hi: f64) -> Self {
        let n = centers.len() as f64;
        let sd = if centers.len() > 1 {
            let m = centers.iter().sum::<f64>() / n;
            (centers.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let silverman = 1.06 * sd * n.powf(-0.2);
        let floor = (hi - lo) / (1.0 + n).min(100.0);
        Self { centers, bandwidth: silverman.max(floor), lo, hi }
    }

    fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let kernel = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        let sum = self.centers.iter().map(|c| kernel * (-0.5 * ((x - c) / h).powi(2)).exp()).sum::<f64>();
        (sum + 1.0 / (self.hi - self.lo)) / (self.centers.len() + 1) as f64
    }

    /// Draw truncated to the bounds by resampling; clamps only if every
    /// attempt lands outside.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = (self.lo, self.hi);
        let pick = rng.random_range(0..=self.centers.len());
        if pick == self.centers.len() {
            return rng.random_range(lo..=hi);
        }
        let c = self.centers[pick];
        let mut x = c;
        for _ in 0..100 {
            let z: f64 = StandardNormal.sample(rng);
            x = c + self.bandwidth * z;
            if (lo..=hi).contains(&x) {
                return x;
            }
        }
        x.clamp(lo, hi)
    }
}

/// Categorical over min_points levels with add-one smoothing.
struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    fn new(levels: &[usize], space: &SearchSpace) -> Self {
        let mut counts = vec![1.0; space.n_levels()];
        for &m in levels {
            counts[m - space.min_points.0] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        Self { probs: counts.into_iter().map(|c| c / total).collect() }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Proposes the next setting. Within the warm start it samples the priors;
/// afterwards it maximizes `l(x) / g(x)` over candidates drawn from `l`.
pub fn tpe_suggest<R: Rng + ?Sized>(
    history: &[TuningTrial],
    space: &SearchSpace,
    options: &TpeOptions,
    rng: &mut R,
) -> DbscanParams {
    if history.len() < options.warm_start.max(1) {
        return space.sample_prior(rng);
    }
    let mut order: Vec<&TuningTrial> = history.iter().collect();
    order.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)));
    let n_good = ((options.gamma * order.len() as f64).ceil() as usize).clamp(1, order.len());
    let (good, bad) = order.split_at(n_good);

    let (lo, hi) = space.log_eps();
    let log_eps = |t: &[&TuningTrial]| t.iter().map(|t| t.params.epsilon.ln()).collect::<Vec<_>>();
    let levels = |t: &[&TuningTrial]| t.iter().map(|t| t.params.min_points).collect::<Vec<_>>();
    let l_eps = LogKde::new(log_eps(good), lo, hi);
    let l_mp = Categorical::new(&levels(good), space);
    let g_eps = LogKde::new(log_eps(bad), lo, hi);
    let g_mp = Categorical::new(&levels(bad), space);

    let mut best: Option<(f64, DbscanParams)> = None;
    for _ in 0..options.candidates {
        let x = l_eps.sample(rng);
        let m = l_mp.sample(rng);
        let score = l_eps.density(x).ln() + l_mp.probs[m].ln()
            - g_eps.density(x).ln()
            - g_mp.probs[m].ln();
        let params = DbscanParams {
            epsilon: x.exp().clamp(space.epsilon.0, space.epsilon.1),
            min_points: m + space.min_points.0,
        };
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, params));
        }
    }
    best.expect("at least one candidate").1
}

/// Tunes `objective` starting from `history` (for resuming) and calls
/// `on_trial` after every new trial. Trial `i` suggests from its own RNG
/// stream and receives a seed derived from `(options.seed, i)`.
pub fn tune_with<F, C>(
    space: &SearchSpace,
    options: &TpeOptions,
    mut history: Vec<TuningTrial>,
    mut objective: F,
    mut on_trial: C,
) -> Result<TuneResult>
where
    F: FnMut(&DbscanParams, u64) -> Result<Outcome>,
    C: FnMut(&TuningTrial) -> Result<()>,
{
    options.validate()?;
    for i in history.len()..options.trials {
        let mut rng = rng_from(options.seed, "suggest", i as u64);
        let params = tpe_suggest(&history, space, options, &mut rng);
        let start = Instant::now();
        let (outcome, error) = match objective(&params, derive_seed(options.seed, "trial", i as u64)) {
            Ok(o) => (o, None),
            Err(e) => {
                log::info!("trial {i} failed: {e}");
                (Outcome { objective: f64::INFINITY, n_components: None }, Some(e.to_string()))
            }
        };
        let trial = TuningTrial {
            index: i,
            params,
            n_components: outcome.n_components,
            objective: if outcome.objective.is_nan() { f64::INFINITY } else { outcome.objective },
            wall_time_s: start.elapsed().as_secs_f64(),
            error,
        };
        log::debug!("trial {i}: eps={:.2} min_points={} objective={}", params.epsilon, params.min_points, trial.objective);
        on_trial(&trial)?;
        history.push(trial);
    }
    TuneResult::from_history(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: TuningTrial,
    pub history: Vec<TuningTrial>,
}

impl TuneResult {
    /// Lowest objective wins, ties to the earliest trial.
    pub fn from_history(history: Vec<TuningTrial>) -> Result<Self> {
        let best = history
            .iter()
            .filter(|t| !t.failed())
            .fold(None::<&TuningTrial>, |b, t| match b {
                Some(b) if b.objective <= t.objective => Some(b),
                _ => Some(t),
            })
            .cloned()
            .ok_or(Error::AllTrialsFailed)?;
        Ok(Self { best, history })
    }
}

/// The tuning objective: stop filter, augmentation and snapping per split,
/// a pooled transform, MDL component selection, one mixture per split and
/// their symmetric KL divergence.
pub fn trial_objective(
    params: &DbscanParams,
    split_a: &Dataset,
    split_b: &Dataset,
    config: &PortConfig,
    seed: u64,
) -> Result<Outcome> {
    let clouds = split_clouds(split_a, split_b, params, CloudSettings::training(config), seed)?;
    let candidates = candidate_range(config.ncomponents_range(), config.ncomponents_step);
    let opts = FitOptions::tuning(derive_seed(seed, "fit", 0));
    let report = select_n_components(&clouds.points_a, &clouds.points_b, &candidates, &opts, clouds.transform)?;
    let k = report.selected_n_components;
    let final_opts = FitOptions::tuning(derive_seed(seed, "final", k as u64));
    let (ga, gb) = fit_pair(&clouds, k, &final_opts)?;
    let objective = kl_symm(&ga, &gb, config.kl_samples, derive_seed(seed, "kl", 0))?;
    Ok(Outcome { objective, n_components: Some(k) })
}

/// Evaluates one setting and records it as a trial; failures score `+inf`.
pub fn run_trial(
    index: usize,
    params: DbscanParams,
    split_a: &Dataset,
    split_b: &Dataset,
    config: &PortConfig,
    seed: u64,
) -> TuningTrial {
    let start = Instant::now();
    let (objective, n_components, error) = match trial_objective(&params, split_a, split_b, config, seed) {
        Ok(o) => (o.objective, o.n_components, None),
        Err(e) => (f64::INFINITY, None, Some(e.to_string())),
    };
    TuningTrial { index, params, n_components, objective, wall_time_s: start.elapsed().as_secs_f64(), error }
}

/// Full tuning loop over two preprocessed splits.
pub fn tune(
    split_a: &Dataset,
    split_b: &Dataset,
    config: &PortConfig,
    history: Vec<TuningTrial>,
    on_trial: impl FnMut(&TuningTrial) -> Result<()>,
) -> Result<TuneResult> {
    let options = TpeOptions::from_config(config);
    tune_with(
        &SearchSpace::default(),
        &options,
        history,
        |p, seed| trial_objective(p, split_a, split_b, config, seed),
        on_trial,
    )
}

/// Reads a JSON Lines trials file; a missing file is an empty history.
pub fn read_trials(path: &Path) -> Result<Vec<TuningTrial>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(|e| Error::FileUnreadable { path: path.to_path_buf(), source: e })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TuningTrial = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if t.index != out.len() {
            return Err(Error::InvalidInput(format!("{}: trial indices are not contiguous", path.display())));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn append_trial(path: &Path, trial: &TuningTrial) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(trial).map_err(|e| Error::InvalidInput(e.to_string()))?)?;
    Ok(())
}

/// Branin function over `[-5, 10] x [0, 15]`; global minimum 0.397887.
pub fn branin(x1: f64, x2: f64) -> f64 {
    use std::f64::consts::PI;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Branin with its domain mapped onto the search space: log-epsilon onto
/// `x1`, min_points onto `x2`.
pub fn branin_objective(space: &SearchSpace, p: &DbscanParams) -> f64 {
    let (lo, hi) = space.log_eps();
    let u = (p.epsilon.ln() - lo) / (hi - lo);
    let v = (p.min_points - space.min_points.0) as f64 / (space.n_levels() - 1) as f64;
    branin(-5.0 + 15.0 * u, 15.0 * v)
}
