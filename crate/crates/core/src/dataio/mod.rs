//! Interaction logs: loading, five-core style filtering, leave-one-out split.

mod prompt;
mod strata;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use prompt::{load_attributes, render_prompt, PromptRecord, PromptTemplate};
pub use strata::{compute_strata, ItemStratum, StrataLabels, UserStratum};

/// One raw `(user, item, timestamp)` event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    /// Seconds, or the row ordinal when the source has no timestamp column.
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" | "json-lines" | "ndjson" => Ok(InputFormat::Jsonl),
            other => Err(Error::Config(format!("unknown input format `{other}` (expected csv or jsonl)"))),
        }
    }
}

impl InputFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) => ext.parse(),
            None => Err(Error::Config(format!("cannot infer input format of {}", path.display()))),
        }
    }
}

pub fn load_interactions(path: &Path, format: InputFormat) -> Result<Vec<Interaction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        InputFormat::Csv => parse_csv(file),
        InputFormat::Jsonl => parse_jsonl(BufReader::new(file)),
    }
}

/// Parses CSV with a `user,item[,timestamp]` header. Column order is free.
pub fn parse_csv<R: Read>(reader: R) -> Result<Vec<Interaction>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (user_col, item_col, ts_col) = (col("user"), col("item"), col("timestamp"));

    let mut rows = Vec::new();
    for (ordinal, record) in rdr.records().enumerate() {
        let line = ordinal + 2;
        let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let field = |c: Option<usize>, name: &str| -> Result<String> {
            match c.and_then(|c| record.get(c)) {
                Some(v) if !v.is_empty() => Ok(v.to_string()),
                _ => Err(Error::Parse { line, message: format!("missing field {name}") }),
            }
        };
        let user = field(user_col, "user")?;
        let item = field(item_col, "item")?;
        let timestamp = match ts_col {
            None => ordinal as i64,
            Some(_) => {
                let raw = field(ts_col, "timestamp")?;
                parse_timestamp(&raw).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("invalid timestamp `{raw}`"),
                })?
            }
        };
        rows.push(Interaction { user, item, timestamp });
    }
    Ok(rows)
}

/// Parses JSON-lines objects with `user`, `item` and optional `timestamp`
/// keys. Blank lines are skipped but still counted.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<Interaction>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        let field = |name: &str| -> Result<String> {
            match value.get(name) {
                Some(serde_json::Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
                _ => Err(Error::Parse { line: lineno, message: format!("missing field {name}") }),
            }
        };
        let user = field("user")?;
        let item = field("item")?;
        let timestamp = match value.get("timestamp") {
            None | Some(serde_json::Value::Null) => rows.len() as i64,
            Some(v) => {
                let raw = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                parse_timestamp(&raw).ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("invalid timestamp `{raw}`"),
                })?
            }
        };
        rows.push(Interaction { user, item, timestamp });
    }
    Ok(rows)
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    // Some dumps store integral seconds as floats ("978300760.0").
    raw.parse::<f64>().ok().filter(|v| v.fract() == 0.0 && v.is_finite()).map(|v| v as i64)
}

/// A user's chronological history after the leave-one-out split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: String,
    pub train: Vec<usize>,
    pub valid: usize,
    pub test: usize,
}

impl UserSequence {
    /// Training prefix followed by the validation item: the input used when
    /// predicting the test item.
    pub fn test_input(&self) -> Vec<usize> {
        let mut s = self.train.clone();
        s.push(self.valid);
        s
    }

    pub fn full_len(&self) -> usize {
        self.train.len() + 2
    }
}

/// Filtered, split and densely indexed interaction data.
///
/// Item indices run over `0..n_items()`; `n_items()` itself is the padding
/// sentinel and never a real item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionDataset {
    pub items: Vec<String>,
    pub users: Vec<UserSequence>,
}

impl InteractionDataset {
    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn padding_index(&self) -> usize {
        self.items.len()
    }

    pub fn n_actions(&self) -> usize {
        self.users.iter().map(UserSequence::full_len).sum()
    }

    pub fn item_index(&self) -> HashMap<&str, usize> {
        self.items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Self = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_items();
        for u in &self.users {
            if u.train.is_empty() {
                return Err(Error::Invalid(format!("user `{}` has an empty training prefix", u.user)));
            }
            if u.train.iter().chain([&u.valid, &u.test]).any(|&i| i >= n) {
                return Err(Error::Invalid(format!("user `{}` references an item outside 0..{n}", u.user)));
            }
        }
        Ok(())
    }
}

/// Filters users and items below `min_count` interactions, repeating until
/// nothing changes, then splits each surviving history leave-one-out.
pub fn build_dataset(rows: &[Interaction], min_count: usize) -> Result<InteractionDataset> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut alive = vec![true; rows.len()];
    loop {
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for (r, _) in rows.iter().zip(&alive).filter(|(_, &a)| a) {
            *user_counts.entry(&r.user).or_default() += 1;
            *item_counts.entry(&r.item).or_default() += 1;
        }
        let mut changed = false;
        for (r, a) in rows.iter().zip(alive.iter_mut()) {
            if *a && (user_counts[r.user.as_str()] < min_count || item_counts[r.item.as_str()] < min_count) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Group surviving rows per user in first-appearance order.
    let mut user_slot: HashMap<&str, usize> = HashMap::new();
    let mut grouped: Vec<(&str, Vec<usize>)> = Vec::new();
    for (pos, r) in rows.iter().enumerate().filter(|&(p, _)| alive[p]) {
        let slot = *user_slot.entry(&r.user).or_insert_with(|| {
            grouped.push((&r.user, Vec::new()));
            grouped.len() - 1
        });
        grouped[slot].1.push(pos);
    }
    for (_, positions) in &mut grouped {
        // stable: equal timestamps keep file order
        positions.sort_by_key(|&p| rows[p].timestamp);
    }
    grouped.retain(|(_, positions)| positions.len() >= 3);
    if grouped.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut keep = vec![false; rows.len()];
    for (_, positions) in &grouped {
        for &p in positions {
            keep[p] = true;
        }
    }
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    let mut items = Vec::new();
    for r in rows.iter().zip(&keep).filter(|(_, &k)| k).map(|(r, _)| r) {
        item_ids.entry(&r.item).or_insert_with(|| {
            items.push(r.item.clone());
            items.len() - 1
        });
    }

    let users = grouped
        .into_iter()
        .map(|(user, positions)| {
            let seq: Vec<usize> = positions.iter().map(|&p| item_ids[rows[p].item.as_str()]).collect();
            let n = seq.len();
            UserSequence { user: user.to_string(), train: seq[..n - 2].to_vec(), valid: seq[n - 2], test: seq[n - 1] }
        })
        .collect();
    Ok(InteractionDataset { items, users })
}

/// Keeps the most recent `max_len` entries.
pub fn truncate_recent(seq: &[usize], max_len: usize) -> &[usize] {
    &seq[seq.len().saturating_sub(max_len)..]
}
