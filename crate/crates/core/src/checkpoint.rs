//! Single-file model archive: magic bytes, a JSON header, then raw
//! little-endian payloads (semantic `f32`, parameters and prototypes `f64`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::dataio::InteractionDataset;
use crate::embeddings::SemanticMatrix;
use crate::error::{Error, Result};
use crate::intent::IntentPrototypes;
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"RECDIFF1";

/// SHA-256 over the item vocabulary in index order.
pub fn vocab_hash(items: &[String]) -> String {
    let mut h = Sha256::new();
    for it in items {
        h.update(it.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub n_items: usize,
    pub vocab_hash: String,
    pub semantic: SemanticMatrix,
    pub params: ParamStore,
    pub prototypes: Option<IntentPrototypes>,
    pub best_epoch: usize,
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    config: ExperimentConfig,
    n_items: usize,
    vocab_hash: String,
    best_epoch: usize,
    step: usize,
    semantic_cols: usize,
    semantic_tag: String,
    tensors: Vec<TensorEntry>,
    prototypes: Option<(usize, usize, usize)>,
}

impl Checkpoint {
    pub fn new(
        config: ExperimentConfig,
        ds: &InteractionDataset,
        semantic: SemanticMatrix,
        params: ParamStore,
        prototypes: Option<IntentPrototypes>,
        best_epoch: usize,
        step: usize,
    ) -> Self {
        Self {
            config,
            n_items: ds.n_items(),
            vocab_hash: vocab_hash(&ds.items),
            semantic,
            params,
            prototypes,
            best_epoch,
            step,
        }
    }

    pub fn model(&self) -> Result<Model> {
        let c = &self.config;
        Model::new(self.n_items, self.semantic.width(), &c.embedding, &c.fusion, &c.encoder, &c.diffusion)
    }

    pub fn check_vocabulary(&self, ds: &InteractionDataset) -> Result<()> {
        if ds.n_items() != self.n_items || vocab_hash(&ds.items) != self.vocab_hash {
            return Err(Error::VocabMismatch(format!(
                "checkpoint was trained on {} items (vocabulary {}), dataset has {} (vocabulary {})",
                self.n_items,
                &self.vocab_hash[..12],
                ds.n_items(),
                &vocab_hash(&ds.items)[..12]
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: 1,
            config: self.config.clone(),
            n_items: self.n_items,
            vocab_hash: self.vocab_hash.clone(),
            best_epoch: self.best_epoch,
            step: self.step,
            semantic_cols: self.semantic.width(),
            semantic_tag: self.semantic.source_tag.clone(),
            tensors: self
                .params
                .iter()
                .map(|(n, m)| TensorEntry { name: n.clone(), rows: m.rows(), cols: m.cols() })
                .collect(),
            prototypes: self.prototypes.as_ref().map(|p| (p.centroids.rows(), p.centroids.cols(), p.fit_step)),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.semantic.real_data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (_, m) in self.params.iter() {
            m.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        if let Some(p) = &self.prototypes {
            p.centroids.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("corrupt checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut cur = Cursor { bytes, pos: 16 + hlen };

        let sem_len = header.n_items * header.semantic_cols;
        let sem: Vec<f32> = cur.take(sem_len * 4).ok_or_else(|| bad("truncated semantic payload"))?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let rows: Vec<Vec<f32>> = sem.chunks(header.semantic_cols.max(1)).map(<[f32]>::to_vec).collect();
        let semantic = SemanticMatrix::from_rows(&rows, header.semantic_tag)?;

        let mut params = ParamStore::new();
        for t in &header.tensors {
            let data = cur.f64s(t.rows * t.cols).ok_or_else(|| bad("truncated parameter payload"))?;
            params.insert(t.name.clone(), Matrix::from_vec(t.rows, t.cols, data)?);
        }
        let prototypes = match header.prototypes {
            Some((r, c, fit_step)) => {
                let data = cur.f64s(r * c).ok_or_else(|| bad("truncated prototype payload"))?;
                Some(IntentPrototypes { centroids: Matrix::from_vec(r, c, data)?, fit_step })
            }
            None => None,
        };
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            config: header.config,
            n_items: header.n_items,
            vocab_hash: header.vocab_hash,
            semantic,
            params,
            prototypes,
            best_epoch: header.best_epoch,
            step: header.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Some(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
    }
}
