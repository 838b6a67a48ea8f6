//! Causal self-attention sequence encoder (pre-norm transformer blocks with
//! learned positions).
//!
//! Sequences are right-aligned at position 0 and processed packed: only real
//! items are ever materialized, so padding contributes nothing by
//! construction. The summary `h` of a sequence is the final state at its last
//! real position.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{dropout, LayerNorm, Linear};
use crate::params::{Bound, ParamStore};
use crate::tensor::{dot, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 2, dropout: 0.2, max_len: 50 }
    }
}

pub const POSITIONS: &str = "encoder.pos";

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub dim: usize,
}

/// Output of a batched forward pass.
pub struct EncodedBatch {
    /// `Σ len × d`, sequences stacked in input order.
    pub states: Var,
    /// `B × d`, one summary per sequence.
    pub summaries: Var,
    pub segments: Vec<(usize, usize)>,
}

struct Block {
    ln1: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    ln2: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

impl Encoder {
    pub fn new(config: EncoderConfig, dim: usize) -> Result<Self> {
        if config.heads == 0 || dim % config.heads != 0 {
            return Err(Error::Config(format!("encoder.heads = {} must divide width {dim}", config.heads)));
        }
        if config.layers == 0 || config.max_len == 0 {
            return Err(Error::Config("encoder.layers and encoder.max_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("encoder.dropout must lie in [0, 1), got {}", config.dropout)));
        }
        Ok(Self { config, dim })
    }

    fn block(&self, l: usize) -> Block {
        let d = self.dim;
        let n = |s: &str| format!("encoder.{l}.{s}");
        Block {
            ln1: LayerNorm::new(n("ln1"), d),
            query: Linear::new(n("query"), d, d, true),
            key: Linear::new(n("key"), d, d, true),
            value: Linear::new(n("value"), d, d, true),
            out: Linear::new(n("out"), d, d, true),
            ln2: LayerNorm::new(n("ln2"), d),
            ffn_in: Linear::new(n("ffn_in"), d, d, true),
            ffn_out: Linear::new(n("ffn_out"), d, d, true),
        }
    }

    fn final_norm(&self) -> LayerNorm {
        LayerNorm::new("encoder.ln_out", self.dim)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, init_std: f64, rng: &mut R) {
        store.insert(POSITIONS, Matrix::randn(self.config.max_len, self.dim, init_std, rng));
        for l in 0..self.config.layers {
            let b = self.block(l);
            b.ln1.init(store);
            for lin in [&b.query, &b.key, &b.value, &b.out, &b.ffn_in, &b.ffn_out] {
                lin.init(store, rng);
            }
            b.ln2.init(store);
        }
        self.final_norm().init(store);
    }

    /// Encodes `sequences` (item indices into the rows of `item_table`).
    /// Dropout is active only when `rng` is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &Bound,
        item_table: Var,
        sequences: &[&[usize]],
        mut rng: Option<&mut R>,
    ) -> Result<EncodedBatch> {
        let n_rows = tape.value(item_table).rows();
        let mut flat = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::with_capacity(sequences.len());
        for seq in sequences {
            if seq.is_empty() {
                return Err(Error::Invalid("cannot encode an empty sequence".into()));
            }
            if seq.len() > self.config.max_len {
                return Err(Error::Invalid(format!(
                    "sequence of length {} exceeds max_len {}",
                    seq.len(),
                    self.config.max_len
                )));
            }
            if let Some(&bad) = seq.iter().find(|&&i| i >= n_rows) {
                return Err(Error::Invalid(format!("item index {bad} outside the {n_rows}-row item table")));
            }
            segments.push((flat.len(), seq.len()));
            flat.extend_from_slice(seq);
            positions.extend(0..seq.len());
        }

        let items = tape.gather(item_table, &flat);
        let pos = tape.gather(params.var(POSITIONS), &positions);
        let mut x = tape.add(items, pos);
        x = dropout(tape, x, self.config.dropout, rng.as_deref_mut());

        for l in 0..self.config.layers {
            let b = self.block(l);
            let a = b.ln1.forward(tape, params, x);
            let q = b.query.forward(tape, params, a)?;
            let k = b.key.forward(tape, params, a)?;
            let v = b.value.forward(tape, params, a)?;
            let att = tape.causal_attention(q, k, v, &segments, self.config.heads);
            let o = b.out.forward(tape, params, att)?;
            let o = dropout(tape, o, self.config.dropout, rng.as_deref_mut());
            x = tape.add(x, o);

            let f = b.ln2.forward(tape, params, x);
            let f = b.ffn_in.forward(tape, params, f)?;
            let f = tape.gelu(f);
            let f = b.ffn_out.forward(tape, params, f)?;
            let f = dropout(tape, f, self.config.dropout, rng.as_deref_mut());
            x = tape.add(x, f);
        }
        let states = self.final_norm().forward(tape, params, x);
        let last: Vec<usize> = segments.iter().map(|&(s, len)| s + len - 1).collect();
        let summaries = tape.gather(states, &last);
        Ok(EncodedBatch { states, summaries, segments })
    }
}

/// Per-position states of one sequence and its summary.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRepresentation {
    /// `max_len × d`; rows past the last real item are zero.
    pub states: Matrix,
    pub h: Vec<f64>,
}

/// Evaluation-mode encoding of one right-padded index list.
pub fn encode_sequence(
    encoder: &Encoder,
    params: &ParamStore,
    item_table: &Matrix,
    padded: &[usize],
    padding: usize,
) -> Result<SequenceRepresentation> {
    if padded.len() > encoder.config.max_len {
        return Err(Error::Invalid(format!(
            "sequence of length {} exceeds max_len {}",
            padded.len(),
            encoder.config.max_len
        )));
    }
    let real = padded.iter().position(|&i| i == padding).unwrap_or(padded.len());
    if padded[real..].iter().any(|&i| i != padding) {
        return Err(Error::Invalid("padding must follow all real items".into()));
    }
    let seq = &padded[..real];
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let table = tape.constant(item_table.clone());
    let out = encoder.forward::<rand::rngs::ThreadRng>(&mut tape, &bound, table, &[seq], None)?;
    let mut states = Matrix::zeros(encoder.config.max_len, encoder.dim);
    for r in 0..seq.len() {
        states.row_mut(r).copy_from_slice(tape.value(out.states).row(r));
    }
    Ok(SequenceRepresentation { states, h: tape.value(out.summaries).row(0).to_vec() })
}

/// Dot-product scores of `h` against each candidate row.
pub fn score_items(h: &[f64], candidates: &Matrix) -> Result<Vec<f64>> {
    if candidates.cols() != h.len() {
        return Err(Error::Shape(format!(
            "summary width {} vs candidate width {}",
            h.len(),
            candidates.cols()
        )));
    }
    Ok((0..candidates.rows()).map(|r| dot(candidates.row(r), h)).collect())
}

/// 1-based rank of `target` under descending scores; ties go to the lower
/// index. Items flagged in `excluded` (other than the target) are skipped.
pub fn rank_of(scores: &[f64], target: usize, excluded: Option<&[bool]>) -> usize {
    let st = scores[target];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target && !excluded.is_some_and(|e| e[j]))
        .filter(|&(j, &s)| s > st || (s == st && j < target))
        .count();
    ahead + 1
}

/// Candidate order by descending score, lower index first on ties.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}
