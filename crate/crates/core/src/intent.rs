//! Intent discovery: prefix segmentation, K-means prototypes, nearest
//! prototype assignment, and silhouette-based cluster quality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::InteractionDataset;
use crate::error::{Error, Result};
use crate::tensor::{squared_distance, Matrix};

/// The `[intent]` configuration section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntentConfig {
    pub k: usize,
    pub min_prefix: usize,
    /// Prototypes are refit before every optimizer step divisible by this.
    pub clustering_interval: usize,
    /// Cap on the number of prefixes encoded per refit.
    pub max_fit_points: usize,
    pub max_iters: usize,
}

impl Default for IntentConfig {
    fn default() -> Self {
        Self { k: 16, min_prefix: 2, clustering_interval: 128, max_fit_points: 50_000, max_iters: 100 }
    }
}

impl IntentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("intent.k must be at least 2, got {}", self.k)));
        }
        if self.min_prefix == 0 || self.clustering_interval == 0 || self.max_iters == 0 {
            return Err(Error::Config(
                "intent.min_prefix, intent.clustering_interval and intent.max_iters must be positive".into(),
            ));
        }
        if self.max_fit_points < self.k {
            return Err(Error::Config("intent.max_fit_points must be at least intent.k".into()));
        }
        Ok(())
    }
}

/// The first `len` training items of user `user`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prefix {
    pub user: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrefixSet {
    pub prefixes: Vec<Prefix>,
}

impl PrefixSet {
    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    pub fn items<'a>(&self, ds: &'a InteractionDataset, p: Prefix) -> &'a [usize] {
        &ds.users[p.user].train[..p.len]
    }
}

/// Every head `train[..j]` with `min_prefix <= j <= len(train)`.
pub fn segment_prefixes(ds: &InteractionDataset, min_prefix: usize) -> Result<PrefixSet> {
    if min_prefix == 0 {
        return Err(Error::Config("intent.min_prefix must be at least 1".into()));
    }
    let prefixes = ds
        .users
        .iter()
        .enumerate()
        .flat_map(|(user, u)| (min_prefix..=u.train.len()).map(move |len| Prefix { user, len }))
        .collect();
    Ok(PrefixSet { prefixes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentPrototypes {
    /// `K × d`.
    pub centroids: Matrix,
    /// Optimizer step of the fit.
    pub fit_step: usize,
}

impl IntentPrototypes {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Nearest centroid by Euclidean distance, lower index on ties.
    pub fn nearest(&self, h: &[f64]) -> usize {
        nearest(&self.centroids, h).0
    }
}

/// Holder for prototypes that may not have been fitted yet.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntentModel {
    pub prototypes: Option<IntentPrototypes>,
}

impl IntentModel {
    /// Returns the nearest prototype index and its centroid, which is the
    /// conditioning signal for the denoiser.
    pub fn assign<'a>(&'a self, h: &[f64]) -> Result<(usize, &'a [f64])> {
        let p = self
            .prototypes
            .as_ref()
            .ok_or_else(|| Error::State("intent prototypes have not been fitted".into()))?;
        assign_intent(h, p)
    }
}

pub fn assign_intent<'a>(h: &[f64], prototypes: &'a IntentPrototypes) -> Result<(usize, &'a [f64])> {
    if h.len() != prototypes.centroids.cols() {
        return Err(Error::Shape(format!(
            "representation width {} vs prototype width {}",
            h.len(),
            prototypes.centroids.cols()
        )));
    }
    let k = prototypes.nearest(h);
    Ok((k, prototypes.centroids.row(k)))
}

fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centroids.rows() {
        let d = squared_distance(centroids.row(k), x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub prototypes: IntentPrototypes,
    pub labels: Vec<usize>,
    /// Objective after every update and every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("history is never empty")
    }
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Empty clusters are repaired during assignment by moving the point farthest
/// from its centroid (taken from a cluster with at least two members) into
/// the empty cluster and placing that centroid on it.
pub fn kmeans_fit(points: &Matrix, k: usize, max_iters: usize, seed: u64) -> Result<KMeansFit> {
    let n = points.rows();
    if k < 2 {
        return Err(Error::Config(format!("K must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::Invalid(format!("K-means needs at least K = {k} points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);

    let mut labels = assign_and_repair(points, &mut centroids);
    let mut history = vec![inertia(points, &centroids, &labels)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        centroids = means(points, &labels, k, &centroids);
        history.push(inertia(points, &centroids, &labels));
        let next = assign_and_repair(points, &mut centroids);
        history.push(inertia(points, &centroids, &next));
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    Ok(KMeansFit {
        prototypes: IntentPrototypes { centroids, fit_step: 0 },
        labels,
        inertia_history: history,
        iterations,
        converged,
    })
}

fn kmeans_pp<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn assign_and_repair(points: &Matrix, centroids: &mut Matrix) -> Vec<usize> {
    let k = centroids.rows();
    let mut labels: Vec<usize> = (0..points.rows()).map(|i| nearest(centroids, points.row(i)).0).collect();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { break };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &l) in labels.iter().enumerate() {
            if sizes[l] < 2 {
                continue;
            }
            let d = squared_distance(points.row(i), centroids.row(l));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        labels[i] = empty;
        centroids.row_mut(empty).copy_from_slice(points.row(i));
    }
    labels
}

fn means(points: &Matrix, labels: &[usize], k: usize, previous: &Matrix) -> Matrix {
    let d = points.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, x) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
        } else {
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|v| *v *= inv);
        }
    }
    sums
}

pub fn inertia(points: &Matrix, centroids: &Matrix, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| squared_distance(points.row(i), centroids.row(l)))
        .sum()
}

/// Mean silhouette coefficient with Euclidean distance. Points in singleton
/// clusters score 0.
pub fn silhouette_score(points: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    if n < 3 {
        return Err(Error::Invalid(format!("silhouette needs at least 3 points, got {n}")));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Invalid("silhouette needs at least two non-empty clusters".into()));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += squared_distance(points.row(i), points.row(j)).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}
