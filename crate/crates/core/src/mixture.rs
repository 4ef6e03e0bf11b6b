//! Full-covariance Gaussian mixtures in two dimensions: EM fitting with
//! restarts, description length, and component-count selection.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Standardizer;
use crate::scalar::{log_sum_exp, Real};
use crate::seed::{derive_seed, rng_from, Rng as SeedRng};

/// Input dimensionality (longitude, latitude).
pub const N_FEATURES: usize = 2;

pub type Point<T> = [T; 2];
pub type Matrix2<T> = [[T; 2]; 2];

/// Free parameters of a full-covariance mixture: means, covariance entries
/// and weights, less one for the simplex constraint.
pub fn n_parameters(n_components: usize, n_features: usize) -> usize {
    n_components * (2 * n_features + (n_features * n_features - n_features) / 2 + 1) - 1
}

/// One bivariate normal with cached inverse and log normalizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2<T> {
    mean: Point<T>,
    cov: Matrix2<T>,
    inv: Matrix2<T>,
    log_norm: T,
}

impl<T: Real> Gaussian2<T> {
    /// Fails when `cov` is not symmetric positive definite.
    pub fn new(mean: Point<T>, cov: Matrix2<T>) -> Option<Self> {
        let (a, b, d) = (cov[0][0], cov[0][1], cov[1][1]);
        let det = a * d - b * b;
        if !(a > T::zero()) || !(det > T::zero()) || !det.is_finite() {
            return None;
        }
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let log_norm = -(T::lit(2.0) * T::PI()).ln() - T::lit(0.5) * det.ln();
        Some(Self {
            mean,
            cov: [[a, b], [b, d]],
            inv,
            log_norm,
        })
    }

    pub fn mean(&self) -> Point<T> {
        self.mean
    }

    pub fn covariance(&self) -> Matrix2<T> {
        self.cov
    }

    #[inline]
    pub fn log_pdf(&self, x: Point<T>) -> T {
        let dx = x[0] - self.mean[0];
        let dy = x[1] - self.mean[1];
        let q = self.inv[0][0] * dx * dx
            + T::lit(2.0) * self.inv[0][1] * dx * dy
            + self.inv[1][1] * dy * dy;
        self.log_norm - T::lit(0.5) * q
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> Matrix2<T> {
        let l00 = self.cov[0][0].sqrt();
        let l10 = self.cov[1][0] / l00;
        let l11 = (self.cov[1][1] - l10 * l10).max(T::zero()).sqrt();
        [[l00, T::zero()], [l10, l11]]
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> (T, T) {
        symmetric_eigenvalues(self.cov)
    }
}

pub fn symmetric_eigenvalues<T: Real>(m: Matrix2<T>) -> (T, T) {
    let half_trace = (m[0][0] + m[1][1]) / T::lit(2.0);
    let diff = (m[0][0] - m[1][1]) / T::lit(2.0);
    let r = (diff * diff + m[0][1] * m[0][1]).sqrt();
    (half_trace + r, half_trace - r)
}

/// Raises every eigenvalue of a symmetric matrix to at least `floor`,
/// keeping the eigenvectors. This is the exact maximizer of the M-step
/// objective under that constraint, so EM stays monotone.
pub fn clip_eigenvalues<T: Real>(m: Matrix2<T>, floor: T) -> Matrix2<T> {
    let (l1, l2) = symmetric_eigenvalues(m);
    if l2 >= floor {
        return m;
    }
    if l1 <= floor {
        return [[floor, T::zero()], [T::zero(), floor]];
    }
    // spectral projector onto the larger eigenvalue
    let gap = l1 - l2;
    let p1 = [[(m[0][0] - l2) / gap, m[0][1] / gap], [m[1][0] / gap, (m[1][1] - l2) / gap]];
    let mut out = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let eye = if r == c { T::one() } else { T::zero() };
            out[r][c] = l1 * p1[r][c] + floor * (eye - p1[r][c]);
        }
    }
    let off = (out[0][1] + out[1][0]) / T::lit(2.0);
    out[0][1] = off;
    out[1][0] = off;
    out
}

/// Fit settings for one mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative log-likelihood improvement below which EM stops.
    pub tolerance: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Lower bound on covariance eigenvalues after each M-step
    /// (standardized units).
    pub covariance_floor: f64,
    pub seed: u64,
}

impl FitOptions {
    /// Settings used for the per-split component sweep and tuning.
    pub fn tuning(seed: u64) -> Self {
        Self {
            tolerance: 1e-4,
            restarts: 2,
            max_iterations: 500,
            covariance_floor: 1e-6,
            seed,
        }
    }

    /// Settings used for evaluation and final localization fits.
    pub fn final_fit(seed: u64) -> Self {
        Self {
            tolerance: 1e-5,
            restarts: 5,
            ..Self::tuning(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.restarts < 1 || self.max_iterations < 1 {
            return Err(Error::Config(format!("invalid fit options {self:?}")));
        }
        Ok(())
    }
}

/// Fitted mixture in standardized coordinates plus the transform that maps
/// geographic points into them.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm<T> {
    weights: Vec<T>,
    log_weights: Vec<T>,
    components: Vec<Gaussian2<T>>,
    pub transform: Standardizer<T>,
    /// Total log-likelihood of the training data, nats.
    pub fit_log_likelihood: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> Gmm<T> {
    pub fn from_parts(
        weights: Vec<T>,
        means: Vec<Point<T>>,
        covariances: Vec<Matrix2<T>>,
        transform: Standardizer<T>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::InvalidInput("mixture parts have mismatched lengths".into()));
        }
        let total = weights.iter().fold(T::zero(), |s, &w| s + w);
        if weights.iter().any(|w| !(*w > T::zero())) || (total - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::InvalidInput("mixture weights must form a simplex".into()));
        }
        let components = means
            .into_iter()
            .zip(covariances)
            .enumerate()
            .map(|(c, (m, s))| Gaussian2::new(m, s).ok_or(Error::DegenerateFit { component: c }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            components,
            transform,
            fit_log_likelihood: T::nan(),
            iterations: 0,
            converged: true,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian2<T>] {
        &self.components
    }

    pub fn means(&self) -> Vec<Point<T>> {
        self.components.iter().map(|c| c.mean).collect()
    }

    pub fn covariances(&self) -> Vec<Matrix2<T>> {
        self.components.iter().map(|c| c.cov).collect()
    }

    pub fn n_parameters(&self) -> usize {
        n_parameters(self.n_components(), N_FEATURES)
    }

    /// `ln Σ_c w_c N(x; μ_c, Σ_c)`.
    pub fn log_density(&self, x: Point<T>) -> T {
        let mut buf = [T::zero(); 64];
        if self.components.len() <= buf.len() {
            let terms = &mut buf[..self.components.len()];
            self.joint_log(x, terms);
            log_sum_exp(terms)
        } else {
            let mut terms = vec![T::zero(); self.components.len()];
            self.joint_log(x, &mut terms);
            log_sum_exp(&terms)
        }
    }

    fn joint_log(&self, x: Point<T>, out: &mut [T]) {
        for ((o, c), lw) in out.iter_mut().zip(&self.components).zip(&self.log_weights) {
            *o = *lw + c.log_pdf(x);
        }
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: Point<T>) -> Vec<T> {
        let mut terms = vec![T::zero(); self.components.len()];
        self.joint_log(x, &mut terms);
        let lse = log_sum_exp(&terms);
        terms.iter().map(|t| (*t - lse).exp()).collect()
    }

    /// Component with the highest posterior; ties go to the lower index.
    pub fn predict(&self, x: Point<T>) -> usize {
        let mut terms = vec![T::zero(); self.components.len()];
        self.joint_log(x, &mut terms);
        let mut best = 0;
        for (i, t) in terms.iter().enumerate() {
            if *t > terms[best] {
                best = i;
            }
        }
        best
    }

    /// Ancestral sample: pick a component by weight, then draw from it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point<T> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w.as_f64();
            if u < acc {
                chosen = i;
                break;
            }
        }
        let c = &self.components[chosen];
        let l = c.cholesky();
        let z0 = T::lit(StandardNormal.sample(rng));
        let z1 = T::lit(StandardNormal.sample(rng));
        [
            c.mean[0] + l[0][0] * z0,
            c.mean[1] + l[1][0] * z0 + l[1][1] * z1,
        ]
    }

    pub fn total_log_likelihood(&self, points: &[Point<T>]) -> T {
        points
            .iter()
            .fold(T::zero(), |s, p| s + self.log_density(*p))
    }
}

/// Description length in bits: `½·N_M·log₂N − Σ log₂ P(dᵢ)`.
pub fn mdl<T: Real>(model: &Gmm<T>, points: &[Point<T>]) -> f64 {
    let n = points.len() as f64;
    let param_bits = 0.5 * model.n_parameters() as f64 * n.log2();
    let data_nats: f64 = points.iter().map(|p| model.log_density(*p).as_f64()).sum();
    param_bits - data_nats / std::f64::consts::LN_2
}

/// Diagnostics of a single EM run.
#[derive(Debug, Clone)]
pub struct EmRun<T> {
    pub model: Gmm<T>,
    /// Total log-likelihood at each E-step, nats.
    pub log_likelihood_trace: Vec<f64>,
    /// Largest deviation of a responsibility row sum from one.
    pub max_responsibility_error: f64,
    /// Trace indices whose log-likelihood follows a component reseed; the
    /// likelihood may drop there.
    pub reseeds: Vec<usize>,
}

fn kmeanspp_means<T: Real, R: Rng + ?Sized>(points: &[Point<T>], k: usize, rng: &mut R) -> Vec<Point<T>> {
    let n = points.len();
    let mut means = vec![points[rng.random_range(0..n)]];
    let sq = |a: Point<T>, b: Point<T>| {
        let dx = (a[0] - b[0]).as_f64();
        let dy = (a[1] - b[1]).as_f64();
        dx * dx + dy * dy
    };
    let mut d2: Vec<f64> = points.iter().map(|p| sq(*p, means[0])).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let m = points[idx];
        means.push(m);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq(*p, m));
        }
    }
    means
}

/// Weights and covariances of the hard nearest-seed partition, around the
/// seeds themselves.
fn nearest_seed_moments<T: Real>(points: &[Point<T>], seeds: &[Point<T>], floor: T) -> (Vec<T>, Vec<Matrix2<T>>) {
    let k = seeds.len();
    let mut count = vec![0usize; k];
    let mut acc = vec![[0.0f64; 3]; k];
    for x in points {
        let (mut best, mut bd) = (0, f64::INFINITY);
        for (c, m) in seeds.iter().enumerate() {
            let d = (x[0] - m[0]).as_f64().powi(2) + (x[1] - m[1]).as_f64().powi(2);
            if d < bd {
                best = c;
                bd = d;
            }
        }
        let (dx, dy) = ((x[0] - seeds[best][0]).as_f64(), (x[1] - seeds[best][1]).as_f64());
        count[best] += 1;
        acc[best][0] += dx * dx;
        acc[best][1] += dx * dy;
        acc[best][2] += dy * dy;
    }
    let n = points.len() as f64;
    let weights = count.iter().map(|&c| T::lit(c as f64 / n)).collect();
    let covs = acc
        .iter()
        .zip(&count)
        .map(|(a, &c)| {
            let c = c.max(1) as f64;
            clip_eigenvalues([[T::lit(a[0] / c), T::lit(a[1] / c)], [T::lit(a[1] / c), T::lit(a[2] / c)]], floor)
        })
        .collect();
    (weights, covs)
}

/// One EM run from k-means++ means, with weights and covariances taken from
/// the nearest-seed partition.
pub fn em_run<T: Real, R: Rng + ?Sized>(
    points: &[Point<T>],
    k: usize,
    options: &FitOptions,
    transform: Standardizer<T>,
    rng: &mut R,
) -> Result<EmRun<T>> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::TooFewPoints {
            points: n,
            components: k,
        });
    }
    let floor = T::lit(options.covariance_floor);
    let tol = options.tolerance;
    let identity = [[T::one(), T::zero()], [T::zero(), T::one()]];
    let uniform = T::one() / T::from_usize_lossy(k);
    let means = kmeanspp_means(points, k, rng);
    let (weights, covs) = nearest_seed_moments(points, &means, floor);
    let mut model = Gmm::from_parts(weights, means, covs, transform)?;

    let collapse_weight = 1.0 / (10.0 * n as f64);
    let mut reseeded = vec![false; k];
    let mut resp = vec![T::zero(); n * k];
    let mut point_ll = vec![T::zero(); n];
    let mut trace = Vec::new();
    let mut max_resp_err = 0.0f64;
    let mut prev_ll: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut reseeds = Vec::new();
    let mut just_reseeded = false;

    loop {
        // E-step
        let mut total = 0.0f64;
        for (i, x) in points.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            model.joint_log(*x, row);
            let lse = log_sum_exp(row);
            point_ll[i] = lse;
            total += lse.as_f64();
            let mut row_sum = 0.0;
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
                row_sum += r.as_f64();
            }
            max_resp_err = max_resp_err.max((row_sum - 1.0).abs());
        }
        if !total.is_finite() {
            return Err(Error::DegenerateFit { component: 0 });
        }
        trace.push(total);
        if just_reseeded {
            reseeds.push(trace.len() - 1);
        }
        if let (Some(prev), false) = (prev_ll, just_reseeded) {
            if (total - prev) < tol * prev.abs().max(1.0) {
                converged = true;
            }
        }
        prev_ll = Some(total);
        model.fit_log_likelihood = T::lit(total);
        if converged || iterations >= options.max_iterations {
            break;
        }
        iterations += 1;
        just_reseeded = false;

        // M-step
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for c in 0..k {
            let nk = (0..n).fold(T::zero(), |s, i| s + resp[i * k + c]);
            if nk.as_f64() / (n as f64) < collapse_weight {
                if reseeded[c] {
                    return Err(Error::DegenerateFit { component: c });
                }
                reseeded[c] = true;
                just_reseeded = true;
                // restart the component on the worst-explained point
                let worst = (0..n)
                    .min_by(|&a, &b| point_ll[a].partial_cmp(&point_ll[b]).unwrap_or(std::cmp::Ordering::Equal))
                    .expect("non-empty");
                weights.push(uniform);
                means.push(points[worst]);
                covs.push(identity);
                continue;
            }
            let mut m = [T::zero(); 2];
            for (i, x) in points.iter().enumerate() {
                let r = resp[i * k + c];
                m[0] = m[0] + r * x[0];
                m[1] = m[1] + r * x[1];
            }
            m[0] = m[0] / nk;
            m[1] = m[1] / nk;
            let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
            for (i, x) in points.iter().enumerate() {
                let r = resp[i * k + c];
                let dx = x[0] - m[0];
                let dy = x[1] - m[1];
                sxx = sxx + r * dx * dx;
                sxy = sxy + r * dx * dy;
                syy = syy + r * dy * dy;
            }
            weights.push(nk / T::from_usize_lossy(n));
            means.push(m);
            covs.push(clip_eigenvalues([[sxx / nk, sxy / nk], [sxy / nk, syy / nk]], floor));
        }
        let wsum = weights.iter().fold(T::zero(), |s, &w| s + w);
        let weights: Vec<T> = weights.into_iter().map(|w| w / wsum).collect();
        let components = means
            .into_iter()
            .zip(covs)
            .enumerate()
            .map(|(c, (m, s))| Gaussian2::new(m, s).ok_or(Error::DegenerateFit { component: c }))
            .collect::<Result<Vec<_>>>()?;
        model.log_weights = weights.iter().map(|w| w.ln()).collect();
        model.weights = weights;
        model.components = components;
    }
    model.iterations = iterations;
    model.converged = converged;
    Ok(EmRun {
        model,
        log_likelihood_trace: trace,
        max_responsibility_error: max_resp_err,
        reseeds,
    })
}

/// Best-of-restarts EM fit. Restart `r` draws from its own seeded stream;
/// the highest final log-likelihood wins, ties to the lower restart.
pub fn fit_gmm<T: Real>(
    points: &[Point<T>],
    n_components: usize,
    options: &FitOptions,
    transform: Standardizer<T>,
) -> Result<Gmm<T>> {
    options.validate()?;
    if points.len() < n_components || n_components == 0 {
        return Err(Error::TooFewPoints {
            points: points.len(),
            components: n_components,
        });
    }
    let mut best: Option<Gmm<T>> = None;
    let mut first_err = None;
    for r in 0..options.restarts {
        let mut rng = rng_from(options.seed, "em-restart", r as u64);
        match em_run(points, n_components, options, transform, &mut rng) {
            Ok(run) => {
                let better = best
                    .as_ref()
                    .is_none_or(|b| run.model.fit_log_likelihood > b.fit_log_likelihood);
                if better {
                    best = Some(run.model);
                }
            }
            Err(e) => {
                log::debug!("restart {r} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one restart ran"))
}

/// One row of the component sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlRow {
    pub n_components: usize,
    pub n_parameters: usize,
    pub dl_a: f64,
    pub dl_b: f64,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlReport {
    pub rows: Vec<MdlRow>,
    pub selected_n_components: usize,
}

/// Candidate component counts `lo, lo+step, …, ≤ hi`.
pub fn candidate_range(range: (usize, usize), step: usize) -> Vec<usize> {
    (range.0..=range.1).step_by(step.max(1)).collect()
}

/// Fits one mixture per split for every candidate count, scores each on its
/// own split, and selects the count with the lowest mean description length
/// (ties to the smaller count). Candidates that fail to fit are skipped.
pub fn select_n_components<T: Real>(
    split_a: &[Point<T>],
    split_b: &[Point<T>],
    candidates: &[usize],
    options: &FitOptions,
    transform: Standardizer<T>,
) -> Result<MdlReport> {
    if split_a.is_empty() || split_b.is_empty() {
        return Err(Error::empty("component selection"));
    }
    let rows: Vec<Option<MdlRow>> = candidates
        .par_iter()
        .map(|&k| {
            let fit_one = |pts: &[Point<T>], which: u64| -> Result<f64> {
                let opts = FitOptions {
                    seed: derive_seed(options.seed, "mdl", 2 * k as u64 + which),
                    ..*options
                };
                let m = fit_gmm(pts, k, &opts, transform)?;
                Ok(mdl(&m, pts))
            };
            match (fit_one(split_a, 0), fit_one(split_b, 1)) {
                (Ok(dl_a), Ok(dl_b)) => Some(MdlRow {
                    n_components: k,
                    n_parameters: n_parameters(k, N_FEATURES),
                    dl_a,
                    dl_b,
                    average: 0.5 * (dl_a + dl_b),
                }),
                (a, b) => {
                    let e = a.err().or(b.err()).expect("one side failed");
                    log::warn!("skipping n_components={k}: {e}");
                    None
                }
            }
        })
        .collect();
    let rows: Vec<MdlRow> = rows.into_iter().flatten().collect();
    let best = rows
        .iter()
        .fold(None::<&MdlRow>, |best, r| match best {
            Some(b) if b.average <= r.average => Some(b),
            _ => Some(r),
        })
        .ok_or(Error::NoCandidateFitted)?;
    let selected_n_components = best.n_components;
    Ok(MdlReport {
        rows,
        selected_n_components,
    })
}

/// JSON form of a mixture: row-major covariances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmFile {
    pub n_components: usize,
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub covariances: Vec<[f64; 4]>,
    pub transform: Standardizer<f64>,
    pub fit_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> Gmm<T> {
    pub fn to_file(&self) -> GmmFile {
        let f = |v: T| v.as_f64();
        GmmFile {
            n_components: self.n_components(),
            weights: self.weights.iter().map(|w| f(*w)).collect(),
            means: self.components.iter().map(|c| [f(c.mean[0]), f(c.mean[1])]).collect(),
            covariances: self
                .components
                .iter()
                .map(|c| [f(c.cov[0][0]), f(c.cov[0][1]), f(c.cov[1][0]), f(c.cov[1][1])])
                .collect(),
            transform: Standardizer {
                mean_lon: f(self.transform.mean_lon),
                mean_lat: f(self.transform.mean_lat),
                std_lon: f(self.transform.std_lon),
                std_lat: f(self.transform.std_lat),
            },
            fit_log_likelihood: f(self.fit_log_likelihood),
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

impl Gmm<f64> {
    pub fn from_file(f: &GmmFile) -> Result<Self> {
        if f.n_components != f.weights.len() {
            return Err(Error::InvalidInput("n_components disagrees with weights".into()));
        }
        let covs = f.covariances.iter().map(|c| [[c[0], c[1]], [c[2], c[3]]]).collect();
        let mut m = Self::from_parts(f.weights.clone(), f.means.clone(), covs, f.transform)?;
        m.fit_log_likelihood = f.fit_log_likelihood;
        m.iterations = f.iterations;
        m.converged = f.converged;
        Ok(m)
    }
}

/// Seeded helper for tests and synthetic benchmarks: `n` draws from the
/// model.
pub fn sample_n<T: Real>(model: &Gmm<T>, n: usize, seed: u64) -> Vec<Point<T>> {
    use rand::SeedableRng;
    let mut rng = SeedRng::seed_from_u64(seed);
    (0..n).map(|_| model.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub(crate) fn identity_transform<T: Real>() -> Standardizer<T> {
        Standardizer {
            mean_lon: T::zero(),
            mean_lat: T::zero(),
            std_lon: T::one(),
            std_lat: T::one(),
        }
    }

    fn normals(n: usize, center: [f64; 2], sigma: f64, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = SeedRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [center[0] + sigma * a, center[1] + sigma * b]
            })
            .collect()
    }

    #[test]
    fn seeding_partition_moments() {
        let pts = vec![[0.0, 0.0], [2.0, 0.0], [10.0, 10.0], [10.0, 12.0]];
        let (w, c) = nearest_seed_moments(&pts, &[[0.0, 0.0], [10.0, 10.0]], 0.0);
        assert_eq!(w, vec![0.5, 0.5]);
        assert_eq!(c[0], [[2.0, 0.0], [0.0, 0.0]]);
        assert_eq!(c[1], [[0.0, 0.0], [0.0, 2.0]]);
    }

    #[test]
    fn clipping_cases() {
        let c: Matrix2<f64> = clip_eigenvalues([[2.0, 0.0], [0.0, 1e-9]], 1e-6);
        assert!((c[0][0] - 2.0).abs() < 1e-12 && c[0][1] == 0.0 && (c[1][1] - 1e-6).abs() < 1e-15);
        assert_eq!(clip_eigenvalues([[0.0; 2]; 2], 1e-6), [[1e-6, 0.0], [0.0, 1e-6]]);
        let ok = [[2.0, 0.5], [0.5, 1.0]];
        assert_eq!(clip_eigenvalues(ok, 1e-6), ok);
    }

    // -(log|C| + tr(C^-1 S)), the per-component M-step objective up to scale
    fn m_step_objective(c: Matrix2<f64>, s: Matrix2<f64>) -> f64 {
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let tr = (c[1][1] * s[0][0] - c[0][1] * s[1][0] - c[1][0] * s[0][1] + c[0][0] * s[1][1]) / det;
        -(det.ln() + tr)
    }

    proptest::proptest! {
        #[test]
        fn clipped_eigenvalues_and_optimality(
            a in 0.0f64..2.0, b in 0.0f64..2.0, angle in 0.0f64..3.2, floor in 1e-3f64..1.0,
            cand in proptest::collection::vec((0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.2), 20),
        ) {
            let rot = |l1: f64, l2: f64, t: f64| {
                let (c, s) = (t.cos(), t.sin());
                [[l1 * c * c + l2 * s * s, (l1 - l2) * c * s], [(l1 - l2) * c * s, l1 * s * s + l2 * c * c]]
            };
            let s = rot(a, b, angle);
            let clipped = clip_eigenvalues(s, floor);
            let (hi, lo) = symmetric_eigenvalues(clipped);
            let (want_hi, want_lo) = (a.max(b).max(floor), a.min(b).max(floor));
            proptest::prop_assert!((hi - want_hi).abs() < 1e-9 && (lo - want_lo).abs() < 1e-9);
            let best = m_step_objective(clipped, s);
            for (l1, l2, t) in cand {
                let c = rot(l1 + floor, l2 + floor, t);
                proptest::prop_assert!(m_step_objective(c, s) <= best + 1e-9);
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(40))]
        #[test]
        fn log_likelihood_never_drops(seed in 0u64..10_000, k in 1usize..6) {
            let mut pts = normals(120, [0.0, 0.0], 1.0, seed);
            pts.extend(normals(80, [3.0, 1.0], 0.5, seed + 1));
            let opts = FitOptions { tolerance: 1e-10, ..FitOptions::tuning(seed) };
            let mut rng = rng_from(seed, "prop", 0);
            let run = em_run(&pts, k, &opts, identity_transform(), &mut rng).unwrap();
            for (i, w) in run.log_likelihood_trace.windows(2).enumerate() {
                if !run.reseeds.contains(&(i + 1)) {
                    proptest::prop_assert!(w[1] >= w[0] - 1e-9, "step {} fell {}", i, w[0] - w[1]);
                }
            }
            proptest::prop_assert!(run.max_responsibility_error < 1e-9);
        }
    }

    #[test]
    fn parameter_count() {
        assert_eq!(n_parameters(1, 2), 5);
        assert_eq!(n_parameters(10, 2), 59);
        for nc in 1..=300 {
            // means 2, covariance 3, weight 1 per component, minus one
            assert_eq!(n_parameters(nc, 2), 6 * nc - 1);
        }
    }

    #[test]
    fn standard_normal_density_at_origin() {
        let g = Gmm::<f64>::from_parts(
            vec![1.0],
            vec![[0.0, 0.0]],
            vec![[[1.0, 0.0], [0.0, 1.0]]],
            identity_transform(),
        )
        .unwrap();
        assert!((g.log_density([0.0, 0.0]) - (-1.837877)).abs() < 1e-6);
        let far = g.log_density([100.0, 0.0]);
        assert!(far.is_finite() && far < -1000.0);
    }

    #[test]
    fn density_integrates_to_one() {
        let g = Gmm::<f64>::from_parts(
            vec![0.3, 0.7],
            vec![[-1.0, 0.5], [2.0, -1.0]],
            vec![[[0.5, 0.2], [0.2, 0.4]], [[1.0, -0.3], [-0.3, 0.8]]],
            identity_transform(),
        )
        .unwrap();
        let mut rng = SeedRng::seed_from_u64(11);
        let (lo, hi) = (-10.0, 10.0);
        let n = 200_000;
        let area = (hi - lo) * (hi - lo);
        let s: f64 = (0..n)
            .map(|_| {
                let x = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
                g.log_density(x).exp()
            })
            .sum();
        let integral = area * s / n as f64;
        assert!((integral - 1.0).abs() < 0.02, "integral {integral}");
    }

    #[test]
    fn recovers_single_gaussian() {
        let pts = normals(200, [0.0, 0.0], 1.0, 3);
        let g = fit_gmm(&pts, 1, &FitOptions::tuning(1), identity_transform()).unwrap();
        let m = g.means()[0];
        assert!(m[0].abs() < 0.2 && m[1].abs() < 0.2);
        let c = g.covariances()[0];
        assert!((c[0][0] - 1.0).abs() < 0.3 && (c[1][1] - 1.0).abs() < 0.3 && c[0][1].abs() < 0.3);
    }

    #[test]
    fn recovers_separated_pair() {
        let mut pts = normals(150, [-5.0, 0.0], 0.1, 4);
        pts.extend(normals(150, [5.0, 0.0], 0.1, 5));
        let g = fit_gmm(&pts, 2, &FitOptions::tuning(2), identity_transform()).unwrap();
        let mut means = g.means();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((means[0][0] + 5.0).abs() < 0.05 && means[0][1].abs() < 0.05);
        assert!((means[1][0] - 5.0).abs() < 0.05 && means[1][1].abs() < 0.05);
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn generic_over_f32() {
        let pts: Vec<[f32; 2]> = normals(300, [1.0, -1.0], 0.5, 8)
            .into_iter()
            .map(|p| [p[0] as f32, p[1] as f32])
            .collect();
        let g = fit_gmm(&pts, 1, &FitOptions::tuning(3), identity_transform::<f32>()).unwrap();
        let m = g.means()[0];
        assert!((m[0] - 1.0).abs() < 0.1 && (m[1] + 1.0).abs() < 0.1);
    }

    #[test]
    fn too_few_points() {
        let pts = normals(3, [0.0, 0.0], 1.0, 1);
        assert!(matches!(
            fit_gmm(&pts, 4, &FitOptions::tuning(0), identity_transform()),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn coincident_points_stay_finite() {
        let mut pts = vec![[0.0, 0.0]; 50];
        pts.extend(vec![[1.0, 1.0]; 50]);
        let g = fit_gmm(&pts, 2, &FitOptions::tuning(0), identity_transform()).unwrap();
        for c in g.components() {
            let (_, small) = c.eigenvalues();
            assert!(small >= 1e-6 * 0.999);
        }
        assert!(g.log_density([0.0f64, 0.0]).is_finite());
    }

    #[test]
    fn mdl_matches_nat_conversion() {
        let pts = normals(100, [0.0, 0.0], 1.0, 9);
        let g = fit_gmm(&pts, 1, &FitOptions::tuning(0), identity_transform()).unwrap();
        let nats: f64 = pts.iter().map(|p| g.log_density(*p)).sum();
        let expected = 0.5 * 5.0 * 100f64.log2() - nats / std::f64::consts::LN_2;
        assert!((mdl(&g, &pts) - expected).abs() < 1e-9);
        assert!((0.5 * 5.0 * 100f64.log2() - 16.6096).abs() < 1e-4);
    }

    #[test]
    fn selection_singleton_and_report() {
        let pts = normals(100, [0.0, 0.0], 1.0, 10);
        let r = select_n_components(&pts, &pts, &[3], &FitOptions::tuning(0), identity_transform()).unwrap();
        assert_eq!(r.selected_n_components, 3);
        assert_eq!(r.rows[0].n_parameters, 17);
        assert_eq!(candidate_range((3, 10), 3), vec![3, 6, 9]);
    }

    #[test]
    fn file_round_trip() {
        let pts = normals(100, [0.0, 0.0], 1.0, 12);
        let g = fit_gmm(&pts, 2, &FitOptions::tuning(0), identity_transform()).unwrap();
        let json = serde_json::to_string(&g.to_file()).unwrap();
        let back = Gmm::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.weights(), g.weights());
        assert_eq!(back.means(), g.means());
        assert_eq!(back.covariances(), g.covariances());
        assert_eq!(back.log_density([0.3, 0.1]), g.log_density([0.3, 0.1]));
    }
}
