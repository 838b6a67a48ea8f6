//! Ranking metrics, stratified reports and a 2-D projection export.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataio::{truncate_recent, InteractionDataset, ItemStratum, StrataLabels, UserStratum};
use crate::encoder::{rank_of, score_items};
use crate::error::{Error, Result};
use crate::intent::silhouette_score;
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Drop items of the input sequence from the candidate set.
    pub mask_history: bool,
    pub silhouette: bool,
    /// Test encodings used for the silhouette (sampled when exceeded).
    pub silhouette_max_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mask_history: false, silhouette: true, silhouette_max_points: 5_000 }
    }
}

fn check(ranks: &[usize], k: usize) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Invalid("metrics need at least one rank".into()));
    }
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    Ok(())
}

/// Fraction of 1-based ranks that are `<= k`.
pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check(ranks, k)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean of `1 / log2(rank + 1)` over ranks within the cutoff.
pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check(ranks, k)?;
    let s: f64 = ranks
        .iter()
        .filter(|&&r| r <= k)
        .map(|&r| 1.0 / ((r + 1) as f64).log2())
        .sum();
    Ok(s / ranks.len() as f64)
}

/// Full-vocabulary rank of each target given its input sequence.
pub fn rank_targets(
    model: &Model,
    params: &ParamStore,
    semantic_items: &Matrix,
    inputs: &[&[usize]],
    targets: &[usize],
    mask_history: bool,
) -> Result<Vec<usize>> {
    let (fused, scoring) = model.tables(params, semantic_items)?;
    let h = model.encode(params, &fused, inputs, 256)?;
    ranks_from_summaries(&h, &scoring, inputs, targets, mask_history)
}

fn ranks_from_summaries(
    h: &Matrix,
    scoring: &Matrix,
    inputs: &[&[usize]],
    targets: &[usize],
    mask_history: bool,
) -> Result<Vec<usize>> {
    let n = scoring.rows();
    let mut mask = vec![false; n];
    let mut out = Vec::with_capacity(targets.len());
    for (r, &t) in targets.iter().enumerate() {
        if t >= n {
            return Err(Error::Invalid(format!("target {t} outside the {n}-item vocabulary")));
        }
        let scores = score_items(h.row(r), scoring)?;
        if mask_history {
            inputs[r].iter().for_each(|&i| mask[i] = true);
            out.push(rank_of(&scores, t, Some(&mask)));
            inputs[r].iter().for_each(|&i| mask[i] = false);
        } else {
            out.push(rank_of(&scores, t, None));
        }
    }
    Ok(out)
}

/// One test user's outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub user: usize,
    pub rank: usize,
    pub item_stratum: ItemStratum,
    pub user_stratum: UserStratum,
}

/// Metrics over one subset of test users. Metrics are `None` when the subset
/// is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub users: usize,
    pub hr5: Option<f64>,
    pub ndcg5: Option<f64>,
    pub hr10: Option<f64>,
    pub ndcg10: Option<f64>,
}

impl Cell {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Self { users: 0, hr5: None, ndcg5: None, hr10: None, ndcg10: None };
        }
        let m = |f: fn(&[usize], usize) -> Result<f64>, k| f(ranks, k).ok();
        Self {
            users: ranks.len(),
            hr5: m(hr_at_k, 5),
            ndcg5: m(ndcg_at_k, 5),
            hr10: m(hr_at_k, 10),
            ndcg10: m(ndcg_at_k, 10),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Cell,
    pub tail_item: Cell,
    pub head_item: Cell,
    pub cold_user: Cell,
    pub hot_user: Cell,
    pub silhouette: Option<f64>,
    /// Candidate protocol: always the full vocabulary.
    pub candidates: String,
    pub mask_history: bool,
}

impl EvalReport {
    pub fn from_results(results: &[RankResult], mask_history: bool) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::Invalid("no test users to evaluate".into()));
        }
        let pick = |f: &dyn Fn(&RankResult) -> bool| -> Vec<usize> {
            results.iter().filter(|r| f(r)).map(|r| r.rank).collect()
        };
        Ok(Self {
            overall: Cell::from_ranks(&pick(&|_| true)),
            tail_item: Cell::from_ranks(&pick(&|r| r.item_stratum == ItemStratum::Tail)),
            head_item: Cell::from_ranks(&pick(&|r| r.item_stratum == ItemStratum::Head)),
            cold_user: Cell::from_ranks(&pick(&|r| r.user_stratum == UserStratum::Cold)),
            hot_user: Cell::from_ranks(&pick(&|r| r.user_stratum == UserStratum::Hot)),
            silhouette: None,
            candidates: "full".into(),
            mask_history,
        })
    }

    pub fn cells(&self) -> [(&'static str, &Cell); 5] {
        [
            ("Overall", &self.overall),
            ("Tail Item", &self.tail_item),
            ("Head Item", &self.head_item),
            ("Cold User", &self.cold_user),
            ("Hot User", &self.hot_user),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table, one column per subset.
    pub fn to_table(&self) -> String {
        let cells = self.cells();
        let mut s = format!("{:<10}", "Metric");
        for (name, _) in &cells {
            let _ = write!(s, " {name:>10}");
        }
        s.push('\n');
        let rows: [(&str, fn(&Cell) -> Option<f64>); 4] = [
            ("HR@5", |c| c.hr5),
            ("HR@10", |c| c.hr10),
            ("NDCG@5", |c| c.ndcg5),
            ("NDCG@10", |c| c.ndcg10),
        ];
        for (label, get) in rows {
            let _ = write!(s, "{label:<10}");
            for (_, c) in &cells {
                match get(c) {
                    Some(v) => {
                        let _ = write!(s, " {v:>10.4}");
                    }
                    None => {
                        let _ = write!(s, " {:>10}", "-");
                    }
                }
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<10}", "Users");
        for (_, c) in &cells {
            let _ = write!(s, " {:>10}", c.users);
        }
        s.push('\n');
        if let Some(v) = self.silhouette {
            let _ = writeln!(s, "Silhouette {v:.4}");
        }
        s
    }
}

/// Report plus the test encodings and their prototype labels.
pub struct Evaluation {
    pub report: EvalReport,
    pub results: Vec<RankResult>,
    pub encodings: Matrix,
    pub labels: Option<Vec<usize>>,
}

pub fn evaluate(checkpoint: &Checkpoint, ds: &InteractionDataset, strata: &StrataLabels) -> Result<EvalReport> {
    Ok(evaluate_detailed(checkpoint, ds, strata)?.report)
}

/// Ranks every test item from the user's training prefix plus validation
/// item and assembles the stratified report.
pub fn evaluate_detailed(checkpoint: &Checkpoint, ds: &InteractionDataset, strata: &StrataLabels) -> Result<Evaluation> {
    checkpoint.check_vocabulary(ds)?;
    if strata.item.len() != ds.n_items() || strata.user.len() != ds.n_users() {
        return Err(Error::Shape("strata were computed on a different dataset".into()));
    }
    let cfg = &checkpoint.config;
    let model = checkpoint.model()?;
    let params = &checkpoint.params;
    let sem = checkpoint.semantic.items_matrix();
    let full: Vec<Vec<usize>> = ds.users.iter().map(|u| u.test_input()).collect();
    let inputs: Vec<&[usize]> = full.iter().map(|s| truncate_recent(s, cfg.encoder.max_len)).collect();
    let targets: Vec<usize> = ds.users.iter().map(|u| u.test).collect();

    let (fused, scoring) = model.tables(params, &sem)?;
    let h = model.encode(params, &fused, &inputs, 256)?;
    let ranks = ranks_from_summaries(&h, &scoring, &inputs, &targets, cfg.eval.mask_history)?;
    let results: Vec<RankResult> = ranks
        .iter()
        .enumerate()
        .map(|(u, &rank)| RankResult {
            user: u,
            rank,
            item_stratum: strata.item[targets[u]],
            user_stratum: strata.user[u],
        })
        .collect();
    let mut report = EvalReport::from_results(&results, cfg.eval.mask_history)?;

    let labels = checkpoint
        .prototypes
        .as_ref()
        .map(|p| (0..h.rows()).map(|r| p.nearest(h.row(r))).collect::<Vec<_>>());
    if cfg.eval.silhouette {
        if let Some(labels) = &labels {
            report.silhouette = sampled_silhouette(&h, labels, cfg.eval.silhouette_max_points, cfg.seeds.cluster);
        }
    }
    Ok(Evaluation { report, results, encodings: h, labels })
}

fn sampled_silhouette(points: &Matrix, labels: &[usize], cap: usize, seed: u64) -> Option<f64> {
    let (pts, lab) = if points.rows() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, points.rows(), cap).into_vec();
        idx.sort_unstable();
        (points.select_rows(&idx), idx.iter().map(|&i| labels[i]).collect())
    } else {
        (points.clone(), labels.to_vec())
    };
    match silhouette_score(&pts, &lab) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("silhouette unavailable: {e}");
            None
        }
    }
}

/// 2-D principal-component coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `N × 2`.
    pub coords: Matrix,
    pub labels: Vec<usize>,
    /// Variance along each of the two axes.
    pub explained: [f64; 2],
}

impl Projection {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,cluster\n");
        for r in 0..self.coords.rows() {
            let _ = writeln!(s, "{},{},{}", self.coords.get(r, 0), self.coords.get(r, 1), self.labels[r]);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Projects centred `encodings` onto the two leading covariance
/// eigenvectors. Each axis is oriented so its largest-magnitude loading is
/// positive, which makes the output deterministic.
pub fn export_projection(encodings: &Matrix, labels: &[usize]) -> Result<Projection> {
    let (n, d) = encodings.shape();
    if n < 3 {
        return Err(Error::Invalid(format!("projection needs at least 3 points, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(encodings.row(r)) {
            *m += v / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, d, |r, c| encodings.get(r, c) - mean[c]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    if cov.trace() <= 0.0 {
        return Err(Error::Invalid("degenerate covariance: all points are identical".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut coords = Matrix::zeros(n, 2);
    let mut explained = [0.0; 2];
    for (axis, &j) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        explained[axis] = eig.eigenvalues[j].max(0.0);
        for r in 0..n {
            let p: f64 = centred.row(r).iter().zip(&v).map(|(a, b)| a * b).sum();
            coords.set(r, axis, p);
        }
    }
    Ok(Projection { coords, labels: labels.to_vec(), explained })
}
