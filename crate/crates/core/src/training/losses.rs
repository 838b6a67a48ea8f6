//! The four training objectives and their weighted combination.
//!
//! Each loss comes in two forms: a tape builder (`*_term`) used by the
//! trainer and gradient checks, and a plain-value wrapper for inspection.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Weights of the four loss terms plus the contrastive temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_diff: f64,
    pub lambda_cl: f64,
    pub lambda_align: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_rec: 1.0, lambda_diff: 1.0, lambda_cl: 0.1, lambda_align: 0.1, temperature: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rec > 0.0 && self.lambda_rec.is_finite()) {
            return Err(Error::Config(format!("loss.lambda_rec must be positive, got {}", self.lambda_rec)));
        }
        for (name, v) in [
            ("lambda_diff", self.lambda_diff),
            ("lambda_cl", self.lambda_cl),
            ("lambda_align", self.lambda_align),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be non-negative, got {v}")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("loss.temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda_rec, self.lambda_diff, self.lambda_cl, self.lambda_align]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Rec,
    Diff,
    Cl,
    Align,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::Rec, Term::Diff, Term::Cl, Term::Align];

    pub fn name(self) -> &'static str {
        match self {
            Term::Rec => "rec",
            Term::Diff => "diff",
            Term::Cl => "cl",
            Term::Align => "align",
        }
    }
}

/// Which terms are built at all, and their weights. A term can be built with
/// weight zero, which must behave exactly like not building it.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub include: [bool; 4],
}

impl Objective {
    /// Builds exactly the terms with non-zero weight.
    pub fn from_weights(weights: LossWeights) -> Self {
        let w = weights.as_array();
        Self { include: [true, w[1] > 0.0, w[2] > 0.0, w[3] > 0.0], weights }
    }

    pub fn includes(&self, t: Term) -> bool {
        self.include[t as usize]
    }

    pub fn weight(&self, t: Term) -> f64 {
        self.weights.as_array()[t as usize]
    }
}

/// Component values of one evaluation; `None` marks a term not built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub rec: f64,
    pub diff: f64,
    pub cl: f64,
    pub align: f64,
}

impl LossComponents {
    pub fn get(&self, t: Term) -> f64 {
        match t {
            Term::Rec => self.rec,
            Term::Diff => self.diff,
            Term::Cl => self.cl,
            Term::Align => self.align,
        }
    }

    pub fn set(&mut self, t: Term, v: f64) {
        match t {
            Term::Rec => self.rec = v,
            Term::Diff => self.diff = v,
            Term::Cl => self.cl = v,
            Term::Align => self.align = v,
        }
    }
}

/// `λ_rec·rec + λ_diff·diff + λ_cl·cl + λ_align·align`.
pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> Result<f64> {
    let w = weights.as_array();
    let mut total = 0.0;
    for t in Term::ALL {
        let v = components.get(t);
        if !v.is_finite() {
            return Err(Error::Invalid(format!("{} loss is not finite ({v})", t.name())));
        }
        total += w[t as usize] * v;
    }
    Ok(total)
}

/// Weighted sum of the built terms on the tape.
pub fn total_term(tape: &mut Tape, terms: &[(Term, Var)], objective: &Objective) -> Var {
    let mut acc: Option<Var> = None;
    for &(t, v) in terms {
        let scaled = tape.scale(v, objective.weight(t));
        acc = Some(match acc {
            None => scaled,
            Some(a) => tape.add(a, scaled),
        });
    }
    acc.expect("at least one term is built")
}

/// Mean cross-entropy of `h · tableᵀ` against `targets` over the full table.
pub fn rec_term(tape: &mut Tape, h: Var, table: Var, targets: &[usize]) -> Result<Var> {
    let n = tape.value(table).rows();
    if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::Invalid(format!("target {bad} is padding or outside the {n}-item vocabulary")));
    }
    if tape.value(h).rows() != targets.len() {
        return Err(Error::Shape(format!("{} summaries for {} targets", tape.value(h).rows(), targets.len())));
    }
    let logits = tape.matmul_t(h, table);
    Ok(tape.cross_entropy(logits, targets))
}

pub fn rec_loss(h: &Matrix, targets: &[usize], table: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let (h, t) = (tape.constant(h.clone()), tape.constant(table.clone()));
    let v = rec_term(&mut tape, h, t, targets)?;
    Ok(tape.value(v).item())
}

fn check_nonzero(tape: &Tape, v: Var, what: &str) -> Result<()> {
    let m = tape.value(v);
    for r in 0..m.rows() {
        if m.row(r).iter().all(|&x| x == 0.0) {
            return Err(Error::Invalid(format!("{what} row {r} is the zero vector; cosine is undefined")));
        }
    }
    Ok(())
}

/// Symmetric in-batch InfoNCE with cosine similarity over temperature.
pub fn infonce_term(tape: &mut Tape, a: Var, b: Var, temperature: f64) -> Result<Var> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(Error::Shape(format!("contrastive views {sa:?} and {sb:?}")));
    }
    if sa.0 < 2 {
        return Err(Error::Invalid(format!("InfoNCE needs a batch of at least 2, got {}", sa.0)));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    check_nonzero(tape, a, "original view")?;
    check_nonzero(tape, b, "augmented view")?;
    let na = tape.row_normalize(a);
    let nb = tape.row_normalize(b);
    let sim = tape.matmul_t(na, nb);
    let sim = tape.scale(sim, 1.0 / temperature);
    let diag: Vec<usize> = (0..sa.0).collect();
    let fwd = tape.cross_entropy(sim, &diag);
    let simt = tape.transpose(sim);
    let bwd = tape.cross_entropy(simt, &diag);
    let both = tape.add(fwd, bwd);
    Ok(tape.scale(both, 0.5))
}

pub fn infonce_loss(h_orig: &Matrix, h_aug: &Matrix, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(h_orig.clone()), tape.constant(h_aug.clone()));
    let v = infonce_term(&mut tape, a, b, temperature)?;
    Ok(tape.value(v).item())
}

/// Mean of `1 − cos(e_id_i, adapted_i)`.
pub fn align_term(tape: &mut Tape, e_id: Var, adapted: Var) -> Result<Var> {
    let (sa, sb) = (tape.value(e_id).shape(), tape.value(adapted).shape());
    if sa != sb {
        return Err(Error::Shape(format!("alignment inputs {sa:?} and {sb:?}")));
    }
    check_nonzero(tape, e_id, "collaborative embedding")?;
    check_nonzero(tape, adapted, "adapted semantic embedding")?;
    let na = tape.row_normalize(e_id);
    let nb = tape.row_normalize(adapted);
    let prod = tape.mul(na, nb);
    let cos = tape.row_sum(prod);
    let m = tape.mean(cos);
    Ok(tape.affine(m, -1.0, 1.0))
}

pub fn align_loss(e_id: &Matrix, adapted: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(e_id.clone()), tape.constant(adapted.clone()));
    let v = align_term(&mut tape, a, b)?;
    Ok(tape.value(v).item())
}
