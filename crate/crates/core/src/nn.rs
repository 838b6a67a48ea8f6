//! Layer descriptors shared by the model components.
//!
//! A descriptor only knows parameter names and widths; the tensors live in a
//! [`ParamStore`] so the optimizer and checkpoints see a flat namespace.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self { name: name.into(), in_dim, out_dim, bias }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Uniform `±1/sqrt(in_dim)` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let bound = 1.0 / (self.in_dim as f64).sqrt();
        store.insert(self.weight_name(), Matrix::uniform(self.in_dim, self.out_dim, bound, rng));
        if self.bias {
            store.insert(self.bias_name(), Matrix::zeros(1, self.out_dim));
        }
    }

    /// `x · W (+ b)` for `x` of shape `n × in_dim`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.in_dim {
            return Err(Error::Shape(format!("{}: input width {width}, expected {}", self.name, self.in_dim)));
        }
        let y = tape.matmul(x, params.var(&self.weight_name()));
        Ok(if self.bias { tape.add_row(y, params.var(&self.bias_name())) } else { y })
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(format!("{}.gamma", self.name), Matrix::filled(1, self.dim, 1.0));
        store.insert(format!("{}.beta", self.name), Matrix::zeros(1, self.dim));
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Var {
        let g = params.var(&format!("{}.gamma", self.name));
        let b = params.var(&format!("{}.beta", self.name));
        tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Gelu => tape.gelu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Inverted dropout. A no-op when `rng` is `None` (evaluation) or `p == 0`.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, p: f64, rng: Option<&mut R>) -> Var {
    let Some(rng) = rng else { return x };
    if p <= 0.0 {
        return x;
    }
    let (r, c) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..r * c).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    let m = tape.constant(Matrix::from_vec(r, c, mask).expect("mask shape"));
    tape.mul(x, m)
}
