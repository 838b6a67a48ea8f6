//! Per-item fusion of the collaborative embedding with the adapted semantic
//! embedding.
//!
//! | strategy          | output                                             |
//! |-------------------|----------------------------------------------------|
//! | `gated`           | `γ ⊙ e_id + (1 − γ) ⊙ a`, `γ = σ([e_id; a]·W + b)` |
//! | `weighted`        | `α·e_id + (1 − α)·a`, `α` learned or fixed         |
//! | `concat`          | `[e_id; a]·P`                                      |
//! | `cross_attention` | `LN(e_id + Attn(q = e_id, kv = {e_id, a}))`        |
//! | `id_only`         | `e_id` (semantics ignored; the ID-only baseline)   |

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::params::{Bound, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    Gated,
    Weighted,
    Concat,
    CrossAttention,
    IdOnly,
}

impl FusionStrategy {
    pub fn uses_semantics(self) -> bool {
        self != FusionStrategy::IdOnly
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    /// Fixes α for the weighted strategy; learned when absent.
    #[serde(default)]
    pub weighted_alpha: Option<f64>,
    #[serde(default = "default_heads")]
    pub ca_heads: usize,
}

fn default_heads() -> usize {
    1
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { strategy: FusionStrategy::Gated, weighted_alpha: None, ca_heads: 1 }
    }
}

impl FusionConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let Some(a) = self.weighted_alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("fusion.weighted_alpha must lie in [0, 1], got {a}")));
            }
        }
        if self.ca_heads == 0 || dim % self.ca_heads != 0 {
            return Err(Error::Config(format!(
                "fusion.ca_heads = {} must be positive and divide the embedding width {dim}",
                self.ca_heads
            )));
        }
        Ok(())
    }
}

pub const GATE: &str = "fusion.gate";
pub const ALPHA_LOGIT: &str = "fusion.alpha_logit";
pub const CONCAT_PROJ: &str = "fusion.proj";
pub const CA_QUERY: &str = "fusion.ca.query";
pub const CA_KEY: &str = "fusion.ca.key";
pub const CA_VALUE: &str = "fusion.ca.value";
pub const CA_NORM: &str = "fusion.ca.norm";

#[derive(Clone, Debug)]
pub struct Fusion {
    pub config: FusionConfig,
    pub dim: usize,
}

impl Fusion {
    pub fn new(config: FusionConfig, dim: usize) -> Result<Self> {
        config.validate(dim)?;
        Ok(Self { config, dim })
    }

    fn gate(&self) -> Linear {
        Linear::new(GATE, 2 * self.dim, self.dim, true)
    }

    fn proj(&self) -> Linear {
        Linear::new(CONCAT_PROJ, 2 * self.dim, self.dim, false)
    }

    fn ca(&self) -> [Linear; 3] {
        [
            Linear::new(CA_QUERY, self.dim, self.dim, false),
            Linear::new(CA_KEY, self.dim, self.dim, false),
            Linear::new(CA_VALUE, self.dim, self.dim, false),
        ]
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        match self.config.strategy {
            FusionStrategy::Gated => self.gate().init(store, rng),
            FusionStrategy::Weighted => {
                if self.config.weighted_alpha.is_none() {
                    store.insert(ALPHA_LOGIT, Matrix::scalar(0.0));
                }
            }
            FusionStrategy::Concat => self.proj().init(store, rng),
            FusionStrategy::CrossAttention => {
                for l in self.ca() {
                    l.init(store, rng);
                }
                LayerNorm::new(CA_NORM, self.dim).init(store);
            }
            FusionStrategy::IdOnly => {}
        }
    }

    /// Fuses row-aligned `e_id` and adapted semantic `sem` (both `n × d`).
    pub fn forward(&self, tape: &mut Tape, params: &Bound, e_id: Var, sem: Var) -> Result<Var> {
        let (a, b) = (tape.value(e_id).shape(), tape.value(sem).shape());
        if a != b || a.1 != self.dim {
            return Err(Error::Shape(format!("fusion inputs {a:?} and {b:?}, expected width {}", self.dim)));
        }
        match self.config.strategy {
            FusionStrategy::Gated => {
                let cat = tape.concat_cols(&[e_id, sem]);
                let logits = self.gate().forward(tape, params, cat)?;
                let gamma = tape.sigmoid(logits);
                Ok(convex(tape, gamma, e_id, sem))
            }
            FusionStrategy::Weighted => {
                let alpha = match self.config.weighted_alpha {
                    Some(a) => tape.constant(Matrix::scalar(a)),
                    None => {
                        let logit = params.var(ALPHA_LOGIT);
                        tape.sigmoid(logit)
                    }
                };
                let one_minus = tape.affine(alpha, -1.0, 1.0);
                let x = tape.mul_scalar(e_id, alpha);
                let y = tape.mul_scalar(sem, one_minus);
                Ok(tape.add(x, y))
            }
            FusionStrategy::Concat => {
                let cat = tape.concat_cols(&[e_id, sem]);
                self.proj().forward(tape, params, cat)
            }
            FusionStrategy::CrossAttention => self.cross_attention(tape, params, e_id, sem),
            FusionStrategy::IdOnly => Ok(e_id),
        }
    }

    fn cross_attention(&self, tape: &mut Tape, params: &Bound, e_id: Var, sem: Var) -> Result<Var> {
        let [lq, lk, lv] = self.ca();
        let q = lq.forward(tape, params, e_id)?;
        let k_id = lk.forward(tape, params, e_id)?;
        let k_sem = lk.forward(tape, params, sem)?;
        let v_id = lv.forward(tape, params, e_id)?;
        let v_sem = lv.forward(tape, params, sem)?;
        let heads = self.config.ca_heads;
        let dh = self.dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (s, e) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, s, e);
            let score = |tape: &mut Tape, k: Var| {
                let kh = tape.slice_cols(k, s, e);
                let prod = tape.mul(qh, kh);
                let dotp = tape.row_sum(prod);
                tape.scale(dotp, scale)
            };
            let s_id = score(tape, k_id);
            let s_sem = score(tape, k_sem);
            // two-way softmax: w_id = σ(s_id − s_sem)
            let diff = tape.sub(s_id, s_sem);
            let w_id = tape.sigmoid(diff);
            let w_sem = tape.affine(w_id, -1.0, 1.0);
            let vh_id = tape.slice_cols(v_id, s, e);
            let vh_sem = tape.slice_cols(v_sem, s, e);
            let a = tape.mul_col(vh_id, w_id);
            let b = tape.mul_col(vh_sem, w_sem);
            outs.push(tape.add(a, b));
        }
        let attn = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let res = tape.add(e_id, attn);
        Ok(LayerNorm::new(CA_NORM, self.dim).forward(tape, params, res))
    }

    /// Fuses a single item given plain vectors.
    pub fn apply(&self, params: &ParamStore, e_id: &[f64], sem: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let a = tape.constant(Matrix::row_vector(e_id.to_vec()));
        let b = tape.constant(Matrix::row_vector(sem.to_vec()));
        let y = self.forward(&mut tape, &bound, a, b)?;
        Ok(tape.value(y).data().to_vec())
    }
}

/// `γ ⊙ x + (1 − γ) ⊙ y`.
fn convex(tape: &mut Tape, gamma: Var, x: Var, y: Var) -> Var {
    let gx = tape.mul(gamma, x);
    let inv = tape.affine(gamma, -1.0, 1.0);
    let gy = tape.mul(inv, y);
    tape.add(gx, gy)
}

fn check_widths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("fusion inputs of width {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// Gated fusion on plain vectors. `weight` is `2d × d`, `bias` has width `d`.
pub fn fuse_gated(e_id: &[f64], sem: &[f64], weight: &Matrix, bias: &[f64]) -> Result<Vec<f64>> {
    check_widths(e_id, sem)?;
    let d = e_id.len();
    if weight.shape() != (2 * d, d) || bias.len() != d {
        return Err(Error::Shape(format!("gate weight {:?} / bias {} for width {d}", weight.shape(), bias.len())));
    }
    let cat = Matrix::row_vector(e_id.iter().chain(sem).copied().collect());
    let logits = cat.matmul(weight);
    Ok((0..d)
        .map(|j| {
            let g = sigmoid(logits.data()[j] + bias[j]);
            g * e_id[j] + (1.0 - g) * sem[j]
        })
        .collect())
}

pub fn fuse_weighted(e_id: &[f64], sem: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_widths(e_id, sem)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("weighted fusion alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(e_id.iter().zip(sem).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect())
}

/// `proj` is `2d × d` (row-vector convention: output = `[e_id; sem] · proj`).
pub fn fuse_concat(e_id: &[f64], sem: &[f64], proj: &Matrix) -> Result<Vec<f64>> {
    check_widths(e_id, sem)?;
    let d = e_id.len();
    if proj.shape() != (2 * d, d) {
        return Err(Error::Shape(format!("concat projection {:?} for width {d}", proj.shape())));
    }
    let cat = Matrix::row_vector(e_id.iter().chain(sem).copied().collect());
    Ok(cat.matmul(proj).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn saturated_gate_returns_id() {
        let d = 4;
        let w = Matrix::randn(2 * d, d, 0.1, &mut rng());
        let out = fuse_gated(&[1.0, 2.0, 3.0, 4.0], &[-1.0, 0.5, 0.0, 9.0], &w, &[30.0; 4]).unwrap();
        for (o, e) in out.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((o - e).abs() < 1e-6);
        }
    }

    #[test]
    fn gated_identical_inputs_pass_through() {
        let w = Matrix::randn(6, 3, 1.0, &mut rng());
        let v = [0.3, -0.7, 1.1];
        let out = fuse_gated(&v, &v, &w, &[0.2, -0.1, 0.0]).unwrap();
        for (o, e) in out.iter().zip(v) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gate_is_midpoint() {
        let out = fuse_gated(&[1.0, 3.0], &[3.0, -1.0], &Matrix::zeros(4, 2), &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![2.0, 1.0]);
    }

    #[test]
    fn weighted_endpoints_and_midrange() {
        let (a, b) = ([1.0, -2.0, 0.5], [4.0, 0.0, -1.0]);
        assert_eq!(fuse_weighted(&a, &b, 1.0).unwrap(), a.to_vec());
        assert_eq!(fuse_weighted(&a, &b, 0.0).unwrap(), b.to_vec());
        let got = fuse_weighted(&a, &b, 0.3).unwrap();
        let want = [0.3 * 1.0 + 0.7 * 4.0, 0.3 * -2.0, 0.3 * 0.5 + 0.7 * -1.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert!(matches!(fuse_weighted(&a, &b, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn concat_block_identities() {
        let d = 3;
        let (a, b) = ([1.0, 2.0, 3.0], [-4.0, 5.0, -6.0]);
        let mut left = Matrix::zeros(2 * d, d);
        let mut right = Matrix::zeros(2 * d, d);
        for i in 0..d {
            left.set(i, i, 1.0);
            right.set(d + i, i, 1.0);
        }
        assert_eq!(fuse_concat(&a, &b, &left).unwrap(), a.to_vec());
        assert_eq!(fuse_concat(&a, &b, &right).unwrap(), b.to_vec());
        assert!(fuse_concat(&a, &b, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn store_backed_gated_matches_free_function() {
        let fusion = Fusion::new(FusionConfig::default(), 3).unwrap();
        let mut store = ParamStore::new();
        fusion.init(&mut store, &mut rng());
        store.insert("fusion.gate.bias", Matrix::row_vector(vec![0.1, -0.2, 0.3]));
        let (a, b) = ([0.5, 1.0, -1.0], [2.0, -0.5, 0.25]);
        let got = fusion.apply(&store, &a, &b).unwrap();
        let want = fuse_gated(&a, &b, store.get("fusion.gate.weight").unwrap(), &[0.1, -0.2, 0.3]).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn cross_attention_zero_value_is_layernorm_of_id() {
        let d = 4;
        let fusion = Fusion::new(
            FusionConfig { strategy: FusionStrategy::CrossAttention, weighted_alpha: None, ca_heads: 2 },
            d,
        )
        .unwrap();
        let mut store = ParamStore::new();
        fusion.init(&mut store, &mut rng());
        store.insert("fusion.ca.value.weight", Matrix::zeros(d, d));
        let a = [1.0, 2.0, 4.0, -1.0];
        let got = fusion.apply(&store, &a, &[3.0, 3.0, 3.0, 0.0]).unwrap();
        let mean = a.iter().sum::<f64>() / 4.0;
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        for (g, x) in got.iter().zip(a) {
            assert!((g - (x - mean) / (var + 1e-8).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn config_rejects_bad_heads_and_alpha() {
        let bad_heads = FusionConfig { strategy: FusionStrategy::CrossAttention, weighted_alpha: None, ca_heads: 3 };
        assert!(Fusion::new(bad_heads, 4).is_err());
        let bad_alpha = FusionConfig { strategy: FusionStrategy::Weighted, weighted_alpha: Some(-0.1), ca_heads: 1 };
        assert!(Fusion::new(bad_alpha, 4).is_err());
    }
}
