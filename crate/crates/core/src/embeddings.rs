//! Item tables: the trainable collaborative table, the frozen semantic
//! matrix, and the adapter that maps semantic vectors into model width.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Linear};
use crate::params::{Bound, ParamStore};
use crate::tensor::Matrix;

pub const ITEM_TABLE: &str = "item_id";

/// Adds the `(n_items + 1) × dim` collaborative table to `store`. Row
/// `n_items` is padding and stays zero: no lookup ever reads it, so it never
/// receives a gradient.
pub fn init_collaborative<R: Rng + ?Sized>(store: &mut ParamStore, n_items: usize, dim: usize, std: f64, rng: &mut R) {
    let mut table = Matrix::randn(n_items + 1, dim, std, rng);
    table.row_mut(n_items).fill(0.0);
    store.insert(ITEM_TABLE, table);
}

/// Frozen per-item semantic vectors, stored as `f32` exactly as read from
/// disk. The last row is the all-zero padding row.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMatrix {
    n_items: usize,
    width: usize,
    data: Vec<f32>,
    pub source_tag: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    rows: usize,
    cols: usize,
    dtype: String,
    source_tag: String,
}

const HEADER_FILE: &str = "header.json";
const PAYLOAD_FILE: &str = "payload.f32";

impl SemanticMatrix {
    /// Builds from one row per real item; the padding row is appended.
    pub fn from_rows(rows: &[Vec<f32>], source_tag: impl Into<String>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 {
            return Err(Error::Shape("semantic matrix needs at least one non-empty row".into()));
        }
        let mut data = Vec::with_capacity((rows.len() + 1) * width);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::Shape(format!("semantic row {i} has width {}, expected {width}", r.len())));
            }
            data.extend_from_slice(r);
        }
        data.extend(std::iter::repeat(0.0).take(width));
        Ok(Self { n_items: rows.len(), width, data, source_tag: source_tag.into() })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    /// All rows including padding, widened to `f64`.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.data.iter().map(|&v| v as f64).collect();
        Matrix::from_vec(self.n_items + 1, self.width, data).expect("semantic shape")
    }

    /// Real item rows, row-major, as stored.
    pub fn real_data(&self) -> &[f32] {
        &self.data[..self.n_items * self.width]
    }

    /// Real item rows only, widened to `f64`.
    pub fn items_matrix(&self) -> Matrix {
        let data = self.data[..self.n_items * self.width].iter().map(|&v| v as f64).collect();
        Matrix::from_vec(self.n_items, self.width, data).expect("semantic shape")
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes `header.json` and the little-endian `f32` payload (real rows
    /// only) into directory `dir`.
    pub fn save_binary(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = Header {
            rows: self.n_items,
            cols: self.width,
            dtype: "float32".into(),
            source_tag: self.source_tag.clone(),
        };
        let hp = dir.join(HEADER_FILE);
        fs::write(&hp, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&hp, e))?;
        let pp = dir.join(PAYLOAD_FILE);
        let mut bytes = Vec::with_capacity(self.n_items * self.width * 4);
        for v in &self.data[..self.n_items * self.width] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&pp, bytes).map_err(|e| Error::io(&pp, e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for i in 0..self.n_items {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Loads either a binary directory (`header.json` + payload) or a headerless
/// CSV with one row per item, and checks the row count against the dataset.
pub fn load_semantic_matrix(path: &Path, expected_items: usize) -> Result<SemanticMatrix> {
    let m = if path.is_dir() { load_binary(path)? } else { load_csv(path)? };
    if m.n_items != expected_items {
        return Err(Error::Shape(format!(
            "semantic matrix has {} rows, expected {expected_items}",
            m.n_items
        )));
    }
    Ok(m)
}

fn load_binary(dir: &Path) -> Result<SemanticMatrix> {
    let hp = dir.join(HEADER_FILE);
    let header: Header = serde_json::from_str(&fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?)?;
    if header.dtype != "float32" {
        return Err(Error::Invalid(format!("unsupported semantic dtype `{}`", header.dtype)));
    }
    let pp = dir.join(PAYLOAD_FILE);
    let bytes = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    if bytes.len() != header.rows * header.cols * 4 {
        return Err(Error::Shape(format!(
            "semantic payload has {} bytes, header declares {}x{} float32",
            bytes.len(),
            header.rows,
            header.cols
        )));
    }
    let rows: Vec<Vec<f32>> = bytes
        .chunks_exact(header.cols * 4)
        .map(|row| row.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
        .collect();
    SemanticMatrix::from_rows(&rows, header.source_tag)
}

fn load_csv(path: &Path) -> Result<SemanticMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(Error::Shape(format!("line {}: ragged semantic row of width {}, expected {first}", i + 1, row.len())));
            }
        }
        rows.push(row);
    }
    let tag = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv").to_string();
    SemanticMatrix::from_rows(&rows, tag)
}

/// Deterministic unit-norm stand-in for a text embedding model: a Gaussian
/// vector seeded by SHA-256 of `(seed, prompt)`.
pub fn pseudo_embed(prompt: &str, d_prime: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(prompt.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..d_prime).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Builds a semantic matrix for `prompts[i]` = description of item `i`.
pub fn pseudo_semantic_matrix(prompts: &[String], d_prime: usize, seed: u64) -> Result<SemanticMatrix> {
    let rows: Vec<Vec<f32>> = prompts
        .iter()
        .map(|p| pseudo_embed(p, d_prime, seed).into_iter().map(|v| v as f32).collect())
        .collect();
    SemanticMatrix::from_rows(&rows, "pseudo")
}

/// The `[embedding]` configuration section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub init_std: f64,
    /// Score with the fused input table instead of a separate output table.
    pub tie_weights: bool,
    pub adapter_layers: usize,
    pub adapter_activation: Activation,
    /// Width and seed of the pseudo-embedder when no semantic file is given.
    pub pseudo_dim: usize,
    pub pseudo_seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            init_std: 0.02,
            tie_weights: true,
            adapter_layers: 2,
            adapter_activation: Activation::Gelu,
            pseudo_dim: 64,
            pseudo_seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn adapter(&self) -> AdapterConfig {
        AdapterConfig { layers: self.adapter_layers, activation: self.adapter_activation }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub layers: usize,
    pub activation: Activation,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self { layers: 2, activation: Activation::Gelu }
    }
}

/// Trainable projection `d' → d` (one affine layer, or affine-nonlinear-affine).
#[derive(Clone, Debug)]
pub struct Adapter {
    pub config: AdapterConfig,
    layers: Vec<Linear>,
}

impl Adapter {
    pub fn new(semantic_dim: usize, dim: usize, config: AdapterConfig) -> Result<Self> {
        let layers = match config.layers {
            1 => vec![Linear::new("adapter.0", semantic_dim, dim, true)],
            2 => vec![Linear::new("adapter.0", semantic_dim, dim, true), Linear::new("adapter.1", dim, dim, true)],
            n => return Err(Error::Config(format!("embedding.adapter_layers must be 1 or 2, got {n}"))),
        };
        Ok(Self { config, layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in &self.layers {
            l.init(store, rng);
        }
    }

    /// Maps rows of `x` (`n × d'`). `x` is expected to be a constant leaf so
    /// the semantic input stays frozen.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let mut h = self.layers[0].forward(tape, params, x)?;
        for l in &self.layers[1..] {
            h = self.config.activation.apply(tape, h);
            h = l.forward(tape, params, h)?;
        }
        Ok(h)
    }
}

/// Single-vector convenience wrapper around [`Adapter::forward`].
pub fn adapt(e_llm: &[f64], adapter: &Adapter, params: &ParamStore) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.constant(Matrix::row_vector(e_llm.to_vec()));
    let y = adapter.forward(&mut tape, &bound, x)?;
    Ok(tape.value(y).data().to_vec())
}
