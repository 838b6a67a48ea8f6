//! Generator for interaction logs with planted intents.
//!
//! Items are split into equal intent blocks and laid out on a ring inside
//! each block. A user walks within one intent, preferring popular items close
//! on the ring to the current one, and occasionally switches intent. Each
//! item's semantic vector encodes its intent and ring position plus noise, so
//! semantics carry exactly the structure that sparse (tail) items lack in
//! the interaction data.

use std::f64::consts::TAU;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{build_dataset, Interaction, InteractionDataset};
use crate::embeddings::SemanticMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub intents: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Popularity weight of the item with popularity rank `r` is
    /// `(r + 1)^-zipf_exponent`; ranks are a random permutation.
    pub zipf_exponent: f64,
    /// Decay length of ring proximity, in item positions.
    pub ring_scale: f64,
    pub switch_prob: f64,
    pub semantic_dim: usize,
    pub semantic_noise: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 500,
            items: 200,
            intents: 4,
            min_len: 8,
            max_len: 20,
            zipf_exponent: 1.0,
            ring_scale: 2.0,
            switch_prob: 0.05,
            semantic_dim: 32,
            semantic_noise: 0.1,
            min_count: 5,
            seed: 0,
        }
    }
}

pub struct SyntheticData {
    pub interactions: Vec<Interaction>,
    pub dataset: InteractionDataset,
    /// Rows aligned with `dataset.items`.
    pub semantic: SemanticMatrix,
    /// Planted intent of each dataset item.
    pub item_intent: Vec<usize>,
}

fn item_id(i: usize) -> String {
    format!("i{i:04}")
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.intents == 0 || spec.items < spec.intents || spec.min_len < 3 || spec.max_len < spec.min_len {
        return Err(Error::Config("synthetic spec needs items >= intents >= 1 and 3 <= min_len <= max_len".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per = spec.items / spec.intents;
    let n = per * spec.intents;
    let intent_of = |i: usize| i / per;
    let pos_of = |i: usize| i % per;

    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(&mut rng);
    let pop: Vec<f64> = ranks.iter().map(|&r| ((r + 1) as f64).powf(-spec.zipf_exponent)).collect();

    let ring = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(per - d) as f64
    };
    // within-intent transition tables, one per source item
    let transitions: Vec<WeightedIndex<f64>> = (0..n)
        .map(|i| {
            let k = intent_of(i);
            let w: Vec<f64> = (0..per)
                .map(|p| {
                    let j = k * per + p;
                    if j == i {
                        0.0
                    } else {
                        pop[j] * (-ring(pos_of(i), p) / spec.ring_scale).exp()
                    }
                })
                .collect();
            WeightedIndex::new(w).expect("positive weights")
        })
        .collect();
    let entry: Vec<WeightedIndex<f64>> = (0..spec.intents)
        .map(|k| WeightedIndex::new(&pop[k * per..(k + 1) * per]).expect("positive weights"))
        .collect();

    let mut interactions = Vec::new();
    for u in 0..spec.users {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut k = rng.gen_range(0..spec.intents);
        let mut cur = k * per + entry[k].sample(&mut rng);
        for t in 0..len {
            if t > 0 {
                if spec.intents > 1 && rng.gen::<f64>() < spec.switch_prob {
                    let mut next = rng.gen_range(0..spec.intents - 1);
                    if next >= k {
                        next += 1;
                    }
                    k = next;
                    cur = k * per + entry[k].sample(&mut rng);
                } else {
                    cur = k * per + transitions[cur].sample(&mut rng);
                }
            }
            interactions.push(Interaction { user: format!("u{u:04}"), item: item_id(cur), timestamp: t as i64 });
        }
    }
    let dataset = build_dataset(&interactions, spec.min_count)?;

    let d = spec.semantic_dim;
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.sample(StandardNormal)).collect() };
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let centres: Vec<Vec<f64>> = (0..spec.intents).map(|_| unit(gauss(&mut rng))).collect();
    let planes: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.intents).map(|_| (unit(gauss(&mut rng)), unit(gauss(&mut rng)))).collect();
    let noise_scale = spec.semantic_noise / (d as f64).sqrt();
    let mut rows = Vec::with_capacity(dataset.n_items());
    let mut item_intent = Vec::with_capacity(dataset.n_items());
    for id in &dataset.items {
        let i: usize = id[1..].parse().expect("generated id");
        let (k, theta) = (intent_of(i), TAU * pos_of(i) as f64 / per as f64);
        let (a, b) = &planes[k];
        let row: Vec<f32> = (0..d)
            .map(|c| {
                let z: f64 = rng.sample(StandardNormal);
                (centres[k][c] + 0.5 * (theta.cos() * a[c] + theta.sin() * b[c]) + noise_scale * z) as f32
            })
            .collect();
        rows.push(row);
        item_intent.push(k);
    }
    let semantic = SemanticMatrix::from_rows(&rows, "synthetic")?;
    Ok(SyntheticData { interactions, dataset, semantic, item_intent })
}
