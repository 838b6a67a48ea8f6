//! The optimizer loop: batches of (prefix, next item) samples, scheduled
//! prototype refits, diffusion augmentation, the weighted objective, Adam,
//! per-epoch validation and early stopping.

mod losses;

pub use losses::{
    align_loss, align_term, infonce_loss, infonce_term, rec_loss, rec_term, total_loss, total_term, LossComponents,
    LossWeights, Objective, Term,
};

use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::dataio::{truncate_recent, InteractionDataset};
use crate::diffusion::{augment, BoundDenoiser, NoiseDraw, NoiseSchedule};
use crate::embeddings::SemanticMatrix;
use crate::error::{Error, Result};
use crate::evaluation::{hr_at_k, ndcg_at_k, rank_targets};
use crate::intent::{kmeans_fit, segment_prefixes, IntentPrototypes};
use crate::model::Model;
use crate::params::{Adam, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs without validation NDCG@10 improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 256, lr: 1e-3, adam_beta1: 0.9, adam_beta2: 0.999, adam_eps: 1e-8, patience: 10 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.patience == 0 {
            return Err(Error::Config("train.epochs and train.patience must be positive, train.batch_size at least 2".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("train.lr must be positive and Adam betas in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Predict `train[len]` from `train[..len]` of user `user`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub user: usize,
    pub len: usize,
}

/// Every (prefix, next item) pair inside the training prefixes.
pub fn training_samples(ds: &InteractionDataset) -> Vec<Sample> {
    ds.users
        .iter()
        .enumerate()
        .flat_map(|(user, u)| (1..u.train.len()).map(move |len| Sample { user, len }))
        .collect()
}

/// Per-epoch loss averages; `None` for terms that were not built.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub rec: Option<f64>,
    pub diff: Option<f64>,
    pub cl: Option<f64>,
    pub align: Option<f64>,
    pub total: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub losses: EpochLosses,
    pub val_hr10: f64,
    pub val_ndcg10: f64,
}

/// Loop bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub epoch: usize,
    pub best_ndcg10: f64,
    pub best_epoch: usize,
    pub epochs_since_best: usize,
}

/// What one optimizer step computed.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub components: LossComponents,
    pub built: [bool; 4],
    pub total: f64,
    pub refit: bool,
}

struct Streams {
    data: ChaCha8Rng,
    dropout: ChaCha8Rng,
    diffusion: ChaCha8Rng,
    augment: ChaCha8Rng,
    cluster: ChaCha8Rng,
}

/// Mutable training session over a fixed dataset and semantic matrix.
pub struct Trainer<'a> {
    pub config: ExperimentConfig,
    pub model: Model,
    pub objective: Objective,
    pub params: ParamStore,
    pub prototypes: Option<IntentPrototypes>,
    pub state: TrainState,
    /// Steps before which prototypes were refit.
    pub refit_steps: Vec<usize>,
    ds: &'a InteractionDataset,
    semantic: &'a SemanticMatrix,
    semantic_items: Matrix,
    schedule: NoiseSchedule,
    adam: Adam,
    rng: Streams,
    aug_cache: HashMap<(usize, usize), (usize, Vec<f64>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(ds: &'a InteractionDataset, semantic: &'a SemanticMatrix, config: &ExperimentConfig) -> Result<Self> {
        Self::with_objective(ds, semantic, config, Objective::from_weights(config.loss.clone()))
    }

    pub fn with_objective(
        ds: &'a InteractionDataset,
        semantic: &'a SemanticMatrix,
        config: &ExperimentConfig,
        objective: Objective,
    ) -> Result<Self> {
        config.validate()?;
        ds.validate()?;
        if semantic.n_items() != ds.n_items() {
            return Err(Error::Shape(format!(
                "semantic matrix has {} rows, expected {}",
                semantic.n_items(),
                ds.n_items()
            )));
        }
        if !objective.include.iter().any(|&b| b) {
            return Err(Error::Config("the objective builds no loss terms".into()));
        }
        if objective.includes(Term::Align) && !config.fusion.strategy.uses_semantics() {
            return Err(Error::Config("the alignment term needs a fusion strategy that reads semantics".into()));
        }
        let model = Model::new(
            ds.n_items(),
            semantic.width(),
            &config.embedding,
            &config.fusion,
            &config.encoder,
            &config.diffusion,
        )?;
        let s = &config.seeds;
        let params = model.init(&mut ChaCha8Rng::seed_from_u64(s.init));
        let t = &config.train;
        Ok(Self {
            model,
            objective,
            params,
            prototypes: None,
            state: TrainState { step: 0, epoch: 0, best_ndcg10: f64::NEG_INFINITY, best_epoch: 0, epochs_since_best: 0 },
            refit_steps: Vec::new(),
            ds,
            semantic,
            semantic_items: semantic.items_matrix(),
            schedule: config.diffusion.schedule()?,
            adam: Adam::new(t.lr, t.adam_beta1, t.adam_beta2, t.adam_eps),
            rng: Streams {
                data: ChaCha8Rng::seed_from_u64(s.data),
                dropout: ChaCha8Rng::seed_from_u64(s.dropout),
                diffusion: ChaCha8Rng::seed_from_u64(s.diffusion),
                augment: ChaCha8Rng::seed_from_u64(s.augment),
                cluster: ChaCha8Rng::seed_from_u64(s.cluster),
            },
            aug_cache: HashMap::new(),
            config: config.clone(),
        })
    }

    fn needs_intents(&self) -> bool {
        self.objective.includes(Term::Diff) || self.objective.includes(Term::Cl)
    }

    fn input_of(&self, s: Sample) -> &'a [usize] {
        truncate_recent(&self.ds.users[s.user].train[..s.len], self.config.encoder.max_len)
    }

    /// Fits prototypes on (a seeded sample of) all training prefixes encoded
    /// with the current parameters.
    pub fn refit_prototypes(&mut self) -> Result<()> {
        let ic = &self.config.intent;
        let prefixes = segment_prefixes(self.ds, ic.min_prefix)?;
        let mut chosen: Vec<usize> = if prefixes.len() > ic.max_fit_points {
            rand::seq::index::sample(&mut self.rng.cluster, prefixes.len(), ic.max_fit_points).into_vec()
        } else {
            (0..prefixes.len()).collect()
        };
        chosen.sort_unstable();
        let seqs: Vec<&[usize]> = chosen
            .iter()
            .map(|&i| truncate_recent(prefixes.items(self.ds, prefixes.prefixes[i]), self.config.encoder.max_len))
            .collect();
        let (fused, _) = self.model.tables(&self.params, &self.semantic_items)?;
        let points = self.model.encode(&self.params, &fused, &seqs, 512)?;
        let seed = self.rng.cluster.gen();
        let fit = kmeans_fit(&points, ic.k, ic.max_iters, seed)?;
        debug!("step {}: refit {} prototypes on {} prefixes (inertia {:.4})", self.state.step, ic.k, seqs.len(), fit.inertia());
        self.prototypes = Some(IntentPrototypes { centroids: fit.prototypes.centroids, fit_step: self.state.step });
        self.refit_steps.push(self.state.step);
        Ok(())
    }

    /// One optimizer update on `batch`. Prototypes are refit first when the
    /// step counter hits the clustering interval.
    pub fn step(&mut self, batch: &[Sample]) -> Result<StepReport> {
        if batch.len() < 2 && self.objective.includes(Term::Cl) {
            return Err(Error::Invalid("contrastive training needs batches of at least 2".into()));
        }
        let step = self.state.step;
        let refit = self.needs_intents() && step % self.config.intent.clustering_interval == 0;
        if refit {
            self.refit_prototypes()?;
        }

        let model = &self.model;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let sem = tape.constant(self.semantic_items.clone());
        let views = model.item_views(&mut tape, &bound, sem)?;
        let seqs: Vec<&[usize]> = batch.iter().map(|&s| self.input_of(s)).collect();
        let targets: Vec<usize> = batch.iter().map(|s| self.ds.users[s.user].train[s.len]).collect();
        let enc = model.encoder.forward(&mut tape, &bound, views.fused, &seqs, Some(&mut self.rng.dropout))?;
        let h = enc.summaries;
        let table = model.scoring_table(&bound, &views);
        let mut terms = Vec::new();
        if self.objective.includes(Term::Rec) {
            terms.push((Term::Rec, rec_term(&mut tape, h, table, &targets)?));
        }

        let h_val = tape.value(h).clone();
        let labels: Option<Vec<usize>> = if self.needs_intents() {
            let p = self
                .prototypes
                .as_ref()
                .ok_or_else(|| Error::State("intent prototypes have not been fitted".into()))?;
            Some((0..h_val.rows()).map(|r| p.nearest(h_val.row(r))).collect())
        } else {
            None
        };

        if self.objective.includes(Term::Diff) {
            let p = self.prototypes.as_ref().expect("fitted above");
            let labels = labels.as_ref().expect("assigned above");
            let draw = NoiseDraw::sample(&mut self.rng.diffusion, h_val.rows(), h_val.cols(), &self.schedule);
            let x0 = tape.constant(h_val.clone());
            let s = tape.constant(p.centroids.select_rows(labels));
            let term = model.denoiser.loss(&mut tape, &bound, x0, s, &self.schedule, &draw)?;
            terms.push((Term::Diff, term));
        }

        if self.objective.includes(Term::Cl) {
            let views_aug = self.augmentations(batch, &h_val, labels.as_deref().expect("assigned above"))?;
            let a = tape.constant(views_aug);
            let term = infonce_term(&mut tape, h, a, self.objective.weights.temperature)?;
            terms.push((Term::Cl, term));
        }

        if self.objective.includes(Term::Align) {
            let adapted = views
                .adapted
                .ok_or_else(|| Error::Config("the alignment term needs a semantic view".into()))?;
            let mut items: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).chain(targets.iter().copied()).collect();
            items.sort_unstable();
            items.dedup();
            let e = tape.gather(views.e_id, &items);
            let a = tape.gather(adapted, &items);
            terms.push((Term::Align, align_term(&mut tape, e, a)?));
        }

        let mut components = LossComponents::default();
        let mut built = [false; 4];
        for &(t, v) in &terms {
            let x = tape.value(v).item();
            if !x.is_finite() {
                log::error!("non-finite {} loss at step {step}", t.name());
                return Err(Error::Diverged { step, component: t.name().into() });
            }
            components.set(t, x);
            built[t as usize] = true;
        }
        let total = total_term(&mut tape, &terms, &self.objective);
        let total_val = tape.value(total).item();
        let grads = bound.collect(tape.backward(total));
        self.adam.step(&mut self.params, &grads)?;
        self.state.step += 1;
        Ok(StepReport { step, components, built, total: total_val, refit })
    }

    /// Intent-conditioned views for the batch, reusing cached views that
    /// are younger than the augmentation interval.
    fn augmentations(&mut self, batch: &[Sample], h: &Matrix, labels: &[usize]) -> Result<Matrix> {
        let interval = self.config.diffusion.augment_interval;
        let step = self.state.step;
        let stale: Vec<usize> = (0..batch.len())
            .filter(|&r| {
                self.aug_cache
                    .get(&(batch[r].user, batch[r].len))
                    .map_or(true, |(at, _)| step - at >= interval)
            })
            .collect();
        if !stale.is_empty() {
            let src = h.select_rows(&stale);
            let lab: Vec<usize> = stale.iter().map(|&r| labels[r]).collect();
            let p = self.prototypes.as_ref().expect("fitted before augmentation");
            let predictor = BoundDenoiser { denoiser: &self.model.denoiser, params: &self.params };
            let out = augment(&src, &lab, &p.centroids, self.config.diffusion.init, &predictor, &self.schedule, &mut self.rng.augment)?;
            for (view, &r) in out.into_iter().zip(&stale) {
                self.aug_cache.insert((batch[r].user, batch[r].len), (step, view.representation));
            }
        }
        let mut m = Matrix::zeros(batch.len(), h.cols());
        for (r, s) in batch.iter().enumerate() {
            m.row_mut(r).copy_from_slice(&self.aug_cache[&(s.user, s.len)].1);
        }
        if interval == 1 {
            self.aug_cache.clear();
        }
        Ok(m)
    }

    /// Validation HR@10 and NDCG@10 (predict each user's validation item from
    /// the training prefix).
    pub fn validate(&self) -> Result<(f64, f64)> {
        let inputs: Vec<&[usize]> = self
            .ds
            .users
            .iter()
            .map(|u| truncate_recent(&u.train, self.config.encoder.max_len))
            .collect();
        let targets: Vec<usize> = self.ds.users.iter().map(|u| u.valid).collect();
        let ranks = rank_targets(
            &self.model,
            &self.params,
            &self.semantic_items,
            &inputs,
            &targets,
            self.config.eval.mask_history,
        )?;
        Ok((hr_at_k(&ranks, 10)?, ndcg_at_k(&ranks, 10)?))
    }

    /// Shuffled batches for one epoch; a trailing batch of one is merged into
    /// its predecessor so every batch has in-batch negatives.
    pub fn epoch_batches(&mut self, samples: &[Sample]) -> Vec<Vec<Sample>> {
        let mut order = samples.to_vec();
        order.shuffle(&mut self.rng.data);
        let mut batches: Vec<Vec<Sample>> = order.chunks(self.config.train.batch_size).map(<[Sample]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
            let last = batches.pop().expect("non-empty");
            batches.last_mut().expect("non-empty").extend(last);
        }
        batches
    }

    pub fn semantic(&self) -> &SemanticMatrix {
        self.semantic
    }
}

/// A finished run: the restored best checkpoint and the epoch log.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub refit_steps: Vec<usize>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Trains with early stopping on validation NDCG@10 and returns the best
/// parameters, with prototypes refit on them.
pub fn fit(ds: &InteractionDataset, semantic: &SemanticMatrix, config: &ExperimentConfig) -> Result<TrainOutcome> {
    fit_with(ds, semantic, config, |_| Ok(()))
}

/// [`fit`] with a callback run after every logged epoch (e.g. to stream the
/// log to disk).
pub fn fit_with(
    ds: &InteractionDataset,
    semantic: &SemanticMatrix,
    config: &ExperimentConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut tr = Trainer::new(ds, semantic, config)?;
    let samples = training_samples(ds);
    if samples.len() < 2 {
        return Err(Error::Invalid(format!("only {} training samples; need at least 2", samples.len())));
    }
    info!(
        "training on {} samples from {} users, {} items, {} parameters",
        samples.len(),
        ds.n_users(),
        ds.n_items(),
        tr.params.num_scalars()
    );
    let mut log = Vec::new();
    let mut best: Option<(ParamStore, Option<IntentPrototypes>)> = None;
    for epoch in 1..=config.train.epochs {
        tr.state.epoch = epoch;
        let batches = tr.epoch_batches(&samples);
        let mut sums = [0.0; 4];
        let mut built = [false; 4];
        let mut total = 0.0;
        for b in &batches {
            let r = tr.step(b)?;
            for t in Term::ALL {
                sums[t as usize] += r.components.get(t);
                built[t as usize] |= r.built[t as usize];
            }
            total += r.total;
        }
        let n = batches.len() as f64;
        let avg = |t: Term| built[t as usize].then(|| sums[t as usize] / n);
        let (hr, ndcg) = tr.validate()?;
        let rec = EpochRecord {
            epoch,
            step: tr.state.step,
            losses: EpochLosses {
                rec: avg(Term::Rec),
                diff: avg(Term::Diff),
                cl: avg(Term::Cl),
                align: avg(Term::Align),
                total: total / n,
            },
            val_hr10: hr,
            val_ndcg10: ndcg,
        };
        info!("epoch {epoch}: loss {:.4}, val HR@10 {hr:.4}, NDCG@10 {ndcg:.4}", rec.losses.total);
        on_epoch(&rec)?;
        log.push(rec);
        if ndcg > tr.state.best_ndcg10 {
            tr.state.best_ndcg10 = ndcg;
            tr.state.best_epoch = epoch;
            tr.state.epochs_since_best = 0;
            best = Some((tr.params.clone(), tr.prototypes.clone()));
        } else {
            tr.state.epochs_since_best += 1;
            if tr.state.epochs_since_best >= config.train.patience {
                info!("early stop after epoch {epoch}; best epoch {}", tr.state.best_epoch);
                break;
            }
        }
    }
    let (params, protos) = best.expect("at least one epoch ran");
    tr.params = params;
    tr.prototypes = protos;
    tr.refit_prototypes()?;
    let checkpoint = Checkpoint::new(config.clone(), ds, semantic.clone(), tr.params.clone(), tr.prototypes.clone(), tr.state.best_epoch, tr.state.step);
    Ok(TrainOutcome {
        checkpoint,
        best_epoch: tr.state.best_epoch,
        epochs_run: tr.state.epoch,
        refit_steps: tr.refit_steps,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::UserSequence;

    #[test]
    fn samples_cover_every_next_item() {
        let ds = InteractionDataset {
            items: (0..5).map(|i| i.to_string()).collect(),
            users: vec![
                UserSequence { user: "a".into(), train: vec![0, 1, 2], valid: 3, test: 4 },
                UserSequence { user: "b".into(), train: vec![4], valid: 3, test: 2 },
            ],
        };
        assert_eq!(training_samples(&ds), vec![Sample { user: 0, len: 1 }, Sample { user: 0, len: 2 }]);
    }
}
