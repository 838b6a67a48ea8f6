use serde::{Deserialize, Serialize};

use super::InteractionDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStratum {
    Tail,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserStratum {
    Cold,
    Hot,
}

/// Popularity and activity labels, indexed by dense item / user index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrataLabels {
    pub item: Vec<ItemStratum>,
    pub user: Vec<UserStratum>,
    pub tail_fraction: f64,
    pub cold_threshold: usize,
}

impl StrataLabels {
    pub fn n_tail(&self) -> usize {
        self.item.iter().filter(|s| **s == ItemStratum::Tail).count()
    }

    pub fn n_cold(&self) -> usize {
        self.user.iter().filter(|s| **s == UserStratum::Cold).count()
    }
}

/// Tail items are the `floor(tail_fraction · |I|)` least-interacted items in
/// the training prefixes, lower index first on ties. A user is cold when
/// their training prefix has at most `cold_threshold` items.
pub fn compute_strata(ds: &InteractionDataset, tail_fraction: f64, cold_threshold: usize) -> Result<StrataLabels> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::Config(format!("tail_fraction must lie in (0, 1), got {tail_fraction}")));
    }
    if cold_threshold == 0 {
        return Err(Error::Config("cold_threshold must be at least 1".into()));
    }
    let n = ds.n_items();
    let mut counts = vec![0usize; n];
    for u in &ds.users {
        for &i in &u.train {
            counts[i] += 1;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (counts[i], i));
    let n_tail = (tail_fraction * n as f64).floor() as usize;
    let mut item = vec![ItemStratum::Head; n];
    for &i in &order[..n_tail] {
        item[i] = ItemStratum::Tail;
    }
    let user = ds
        .users
        .iter()
        .map(|u| if u.train.len() <= cold_threshold { UserStratum::Cold } else { UserStratum::Hot })
        .collect();
    Ok(StrataLabels { item, user, tail_fraction, cold_threshold })
}
