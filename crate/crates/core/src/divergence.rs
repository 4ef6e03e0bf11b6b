//! Monte-Carlo divergence estimators: symmetric KL between mixtures and the
//! Bhattacharyya distance by uniform integration over the port area.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_ring, polygon_area};
use crate::mixture::{Gmm, Point};
use crate::preprocess::Standardizer;
use crate::scalar::Real;
use crate::seed::{derive_seed, rng_from};
use crate::types::RoiPolygon;

/// A density over standardized coordinates.
pub trait Density<T: Real>: Sync {
    /// Natural log of the density; `-inf` where it vanishes.
    fn log_density(&self, x: Point<T>) -> T;
    fn transform(&self) -> &Standardizer<T>;
}

impl<T: Real> Density<T> for Gmm<T> {
    fn log_density(&self, x: Point<T>) -> T {
        Gmm::log_density(self, x)
    }

    fn transform(&self) -> &Standardizer<T> {
        &self.transform
    }
}

/// The port polygon mapped into standardized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PortArea<T> {
    ring: Vec<[T; 2]>,
    area: T,
    min: [T; 2],
    max: [T; 2],
}

impl<T: Real> PortArea<T> {
    pub fn new(roi: &RoiPolygon, transform: &Standardizer<T>) -> Result<Self> {
        let ring: Vec<[T; 2]> = roi
            .vertices()
            .iter()
            .map(|v| transform.apply(T::lit(v.lon), T::lit(v.lat)))
            .collect();
        Self::from_ring(ring)
    }

    pub fn from_ring(ring: Vec<[T; 2]>) -> Result<Self> {
        let area = polygon_area(&ring);
        if !(area > T::zero()) || !area.is_finite() {
            return Err(Error::InvalidInput("port area must be positive".into()));
        }
        let mut min = [T::infinity(); 2];
        let mut max = [T::neg_infinity(); 2];
        for p in &ring {
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Ok(Self { ring, area, min, max })
    }

    pub fn area(&self) -> T {
        self.area
    }

    pub fn ring(&self) -> &[[T; 2]] {
        &self.ring
    }

    pub fn bounding_box(&self) -> ([T; 2], [T; 2]) {
        (self.min, self.max)
    }

    pub fn contains(&self, p: [T; 2]) -> bool {
        point_in_ring(p, &self.ring)
    }

    /// Share of the bounding box covered by the region: the expected
    /// acceptance rate of rejection sampling.
    pub fn acceptance_rate(&self) -> T {
        self.area / ((self.max[0] - self.min[0]) * (self.max[1] - self.min[1]))
    }

    /// One uniform draw from the region by rejection from the bounding box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [T; 2] {
        loop {
            let x = self.min[0] + (self.max[0] - self.min[0]) * T::lit(rng.random::<f64>());
            let y = self.min[1] + (self.max[1] - self.min[1]) * T::lit(rng.random::<f64>());
            if self.contains([x, y]) {
                return [x, y];
            }
        }
    }
}

fn check_transforms<T: Real>(a: &Standardizer<T>, b: &Standardizer<T>) -> Result<()> {
    if a != b {
        return Err(Error::MismatchedTransforms);
    }
    Ok(())
}

/// KL(p‖q) in nats from `n_samples` ancestral draws of `p`.
pub fn kl_divergence_mc<T: Real>(p: &Gmm<T>, q: &Gmm<T>, n_samples: usize, seed: u64) -> Result<f64> {
    check_transforms(&p.transform, &q.transform)?;
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    let mut rng = rng_from(seed, "kl", 0);
    let mut sum = 0.0;
    for _ in 0..n_samples {
        let x = p.sample(&mut rng);
        sum += (p.log_density(x) - q.log_density(x)).as_f64();
    }
    Ok(sum / n_samples as f64)
}

/// `max(KL(p‖q), KL(q‖p))`. Each direction draws its own sample set from its
/// first argument; both directions use the same seed so the result does not
/// depend on argument order.
pub fn kl_symm<T: Real>(p: &Gmm<T>, q: &Gmm<T>, n_samples: usize, seed: u64) -> Result<f64> {
    let pq = kl_divergence_mc(p, q, n_samples, seed)?;
    let qp = kl_divergence_mc(q, p, n_samples, seed)?;
    Ok(pq.max(qp))
}

/// One Monte-Carlo estimate of the Bhattacharyya distance over `area`.
/// A zero coefficient yields `+inf`.
pub fn bhattacharyya_mci<T: Real, P: Density<T> + ?Sized, Q: Density<T> + ?Sized>(
    p: &P,
    q: &Q,
    area: &PortArea<T>,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    check_transforms(p.transform(), q.transform())?;
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    let mut rng = rng_from(seed, "mci", 0);
    let half = T::lit(0.5);
    let mut sum = 0.0;
    for _ in 0..n_samples {
        let x = area.sample(&mut rng);
        sum += (half * (p.log_density(x) + q.log_density(x))).exp().as_f64();
    }
    let bc = area.area().as_f64() * sum / n_samples as f64;
    Ok(if bc > 0.0 { -bc.ln() } else { f64::INFINITY })
}

/// Bhattacharyya distance summarized over independent reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhattacharyyaEstimate {
    /// Mean over finite reruns.
    pub mean: f64,
    /// Sample standard deviation over finite reruns.
    pub std: f64,
    /// 2.5th and 97.5th percentiles of the finite reruns.
    pub lower_95: f64,
    pub upper_95: f64,
    pub samples_per_rerun: usize,
    pub reruns: usize,
    pub infinite_reruns: usize,
    pub acceptance_rate: f64,
    pub values: Vec<f64>,
}

impl BhattacharyyaEstimate {
    pub fn from_values(values: Vec<f64>, samples_per_rerun: usize, acceptance_rate: f64) -> Result<Self> {
        let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Err(Error::AllRerunsInfinite);
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let std = if finite.len() > 1 {
            (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        finite.sort_by(f64::total_cmp);
        Ok(Self {
            mean,
            std,
            lower_95: percentile(&finite, 0.025),
            upper_95: percentile(&finite, 0.975),
            samples_per_rerun,
            reruns: values.len(),
            infinite_reruns: values.len() - finite.len(),
            acceptance_rate,
            values,
        })
    }
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `reruns` independent Bhattacharyya estimates, rerun `r` seeded from
/// `(seed, r)`.
pub fn evaluate<T: Real, P: Density<T> + ?Sized, Q: Density<T> + ?Sized>(
    p: &P,
    q: &Q,
    area: &PortArea<T>,
    n_samples: usize,
    reruns: usize,
    seed: u64,
) -> Result<BhattacharyyaEstimate> {
    if reruns == 0 {
        return Err(Error::InvalidInput("reruns must be positive".into()));
    }
    let values = (0..reruns)
        .into_par_iter()
        .map(|r| bhattacharyya_mci(p, q, area, n_samples, derive_seed(seed, "mci-rerun", r as u64)))
        .collect::<Result<Vec<f64>>>()?;
    if values.iter().any(|v| v.is_infinite()) {
        log::warn!(
            "{} of {reruns} reruns had zero overlap",
            values.iter().filter(|v| v.is_infinite()).count()
        );
    }
    BhattacharyyaEstimate::from_values(values, n_samples, area.acceptance_rate().as_f64())
}
