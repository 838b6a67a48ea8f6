//! The assembled recommender: item views, fusion, encoder, scoring head and
//! denoiser, all sharing one parameter namespace.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::diffusion::{Denoiser, DiffusionConfig};
use crate::embeddings::{init_collaborative, Adapter, EmbeddingConfig, ITEM_TABLE};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionConfig};
use crate::params::{Bound, ParamStore};
use crate::tensor::Matrix;

/// Untied scoring table (`|I| × d`), present only when weights are not tied.
pub const OUTPUT_TABLE: &str = "output.item";

#[derive(Clone, Debug)]
pub struct Model {
    pub n_items: usize,
    pub dim: usize,
    pub init_std: f64,
    pub tie_weights: bool,
    /// `None` for the ID-only strategy, which never reads semantics.
    pub adapter: Option<Adapter>,
    pub fusion: Fusion,
    pub encoder: Encoder,
    pub denoiser: Denoiser,
}

/// Per-item tensors for the real items `0..n_items`.
pub struct ItemViews {
    pub e_id: Var,
    pub adapted: Option<Var>,
    pub fused: Var,
}

impl Model {
    pub fn new(
        n_items: usize,
        semantic_dim: usize,
        embedding: &EmbeddingConfig,
        fusion: &FusionConfig,
        encoder: &EncoderConfig,
        diffusion: &DiffusionConfig,
    ) -> Result<Self> {
        let dim = embedding.dim;
        if dim == 0 || n_items == 0 {
            return Err(Error::Config("embedding.dim and the item vocabulary must be non-empty".into()));
        }
        let fusion = Fusion::new(fusion.clone(), dim)?;
        let adapter = if fusion.config.strategy.uses_semantics() {
            Some(Adapter::new(semantic_dim, dim, embedding.adapter())?)
        } else {
            None
        };
        Ok(Self {
            n_items,
            dim,
            init_std: embedding.init_std,
            tie_weights: embedding.tie_weights,
            adapter,
            fusion,
            encoder: Encoder::new(encoder.clone(), dim)?,
            denoiser: Denoiser::new(dim, diffusion)?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        init_collaborative(&mut store, self.n_items, self.dim, self.init_std, rng);
        if let Some(a) = &self.adapter {
            a.init(&mut store, rng);
        }
        self.fusion.init(&mut store, rng);
        self.encoder.init(&mut store, self.init_std, rng);
        if !self.tie_weights {
            store.insert(OUTPUT_TABLE, Matrix::randn(self.n_items, self.dim, self.init_std, rng));
        }
        self.denoiser.init(&mut store, rng);
        store
    }

    /// `semantic` is the `|I| × d'` real-item block of the frozen matrix and
    /// should be a constant leaf.
    pub fn item_views(&self, tape: &mut Tape, params: &Bound, semantic: Var) -> Result<ItemViews> {
        let all: Vec<usize> = (0..self.n_items).collect();
        let e_id = tape.gather(params.var(ITEM_TABLE), &all);
        let (adapted, fused) = match &self.adapter {
            Some(a) => {
                let rows = tape.value(semantic).rows();
                if rows != self.n_items {
                    return Err(Error::Shape(format!("semantic block has {rows} rows, expected {}", self.n_items)));
                }
                let ad = a.forward(tape, params, semantic)?;
                (Some(ad), self.fusion.forward(tape, params, e_id, ad)?)
            }
            None => (None, self.fusion.forward(tape, params, e_id, e_id)?),
        };
        Ok(ItemViews { e_id, adapted, fused })
    }

    pub fn scoring_table(&self, params: &Bound, views: &ItemViews) -> Var {
        if self.tie_weights {
            views.fused
        } else {
            params.var(OUTPUT_TABLE)
        }
    }

    /// Evaluation-mode fused and scoring tables.
    pub fn tables(&self, params: &ParamStore, semantic: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let sem = tape.constant(semantic.clone());
        let views = self.item_views(&mut tape, &bound, sem)?;
        let fused = tape.value(views.fused).clone();
        let scoring = tape.value(self.scoring_table(&bound, &views)).clone();
        Ok((fused, scoring))
    }

    /// Evaluation-mode summaries `h` (`B × d`) of non-empty sequences, in
    /// chunks of `chunk` sequences.
    pub fn encode(&self, params: &ParamStore, fused: &Matrix, sequences: &[&[usize]], chunk: usize) -> Result<Matrix> {
        let mut out = Matrix::zeros(sequences.len(), self.dim);
        let names: Vec<String> = params
            .names()
            .filter(|n| n.starts_with("encoder."))
            .cloned()
            .collect();
        for (c, part) in sequences.chunks(chunk.max(1)).enumerate() {
            let mut tape = Tape::new();
            let bound = params.bind_subset(&mut tape, &names)?;
            let table = tape.constant(fused.clone());
            let enc = self
                .encoder
                .forward::<rand::rngs::ThreadRng>(&mut tape, &bound, table, part, None)?;
            let h = tape.value(enc.summaries);
            for r in 0..part.len() {
                out.row_mut(c * chunk.max(1) + r).copy_from_slice(h.row(r));
            }
        }
        Ok(out)
    }
}
