//! K-means baseline: k-means++ seeding followed by Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMap, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Positions only.
    Xyz,
    /// Positions followed by `normal_weight × normal`.
    XyzNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub feature_mode: FeatureMode,
    pub normal_weight: f64,
    pub rng_seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 6,
            max_iters: 100,
            tol: 1e-6,
            feature_mode: FeatureMode::Xyz,
            normal_weight: 0.0,
            rng_seed: 0,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be >= 0, got {}", self.tol));
        }
        if !(self.normal_weight >= 0.0 && self.normal_weight.is_finite()) {
            return bad(format!("normal_weight must be finite and >= 0, got {}", self.normal_weight));
        }
        Ok(())
    }
}

/// Result of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: LabelMap,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after every update step, first to last.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap()
    }
}

pub fn kmeans_segment(cloud: &PointCloud, config: &KMeansConfig) -> Result<LabelMap> {
    Ok(kmeans_fit(cloud, config)?.labels)
}

/// Feature rows fed to k-means.
pub fn features(cloud: &PointCloud, config: &KMeansConfig) -> Result<Vec<Vec<f64>>> {
    match config.feature_mode {
        FeatureMode::Xyz => Ok(cloud.positions().iter().map(|p| p.to_vec()).collect()),
        FeatureMode::XyzNormal => {
            let normals = cloud.normals().ok_or(Error::MissingNormals)?;
            let w = config.normal_weight;
            Ok(cloud
                .positions()
                .iter()
                .zip(normals)
                .map(|(p, n)| vec![p[0], p[1], p[2], w * n[0], w * n[1], w * n[2]])
                .collect())
        }
    }
}

pub fn kmeans_fit(cloud: &PointCloud, config: &KMeansConfig) -> Result<KMeansFit> {
    config.validate()?;
    if cloud.len() < config.k {
        return Err(Error::TooFewPoints {
            required: config.k,
            actual: cloud.len(),
        });
    }
    let x = features(cloud, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut centroids = plus_plus(&x, config.k, &mut rng);
    let mut assign = vec![0usize; x.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        assign_nearest(&x, &centroids, &mut assign);
        let mut next = mean_of_clusters(&x, &assign, config.k);
        reseed_empty(&x, &mut assign, &mut next);
        history.push(inertia(&x, &assign, &next));
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < config.tol || iterations >= config.max_iters {
            break;
        }
    }
    Ok(KMeansFit {
        labels: LabelMap::new(assign)?,
        centroids,
        inertia_history: history,
        iterations,
    })
}

fn inertia(x: &[Vec<f64>], assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    x.iter().zip(assign).map(|(p, &a)| sq(p, &centroids[a])).sum()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(x: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![x[rng.random_range(0..x.len())].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap();
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            // Every point coincides with a centroid already.
            rng.random_range(0..x.len())
        };
        let c = x[pick].clone();
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(sq(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid for every point, lowest index on ties.
fn assign_nearest(x: &[Vec<f64>], centroids: &[Vec<f64>], assign: &mut [usize]) {
    for (p, a) in x.iter().zip(assign.iter_mut()) {
        let (best, _) = centroids
            .iter()
            .enumerate()
            .map(|(c, m)| (c, sq(p, m)))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        *a = best;
    }
}

fn mean_of_clusters(x: &[Vec<f64>], assign: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = x[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in x.iter().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        } else {
            s.iter_mut().for_each(|v| *v = f64::NAN);
        }
    }
    sums
}

/// Gives every empty cluster the point lying farthest from its own centroid
/// (taken from a cluster with at least two members).
fn reseed_empty(x: &[Vec<f64>], assign: &mut [usize], next: &mut [Vec<f64>]) {
    let k = next.len();
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..x.len())
            .filter(|&i| counts[assign[i]] > 1)
            .map(|i| (i, sq(&x[i], &next[assign[i]])))
            .fold((usize::MAX, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
            .0;
        let donor = assign[far];
        assign[far] = empty;
        next[empty] = x[far].clone();
        // Recompute the donor mean without the moved point.
        let members: Vec<&Vec<f64>> = (0..x.len()).filter(|&i| assign[i] == donor).map(|i| &x[i]).collect();
        let dim = x[0].len();
        next[donor] = (0..dim)
            .map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64)
            .collect();
    }
}
