//! The two training loops: supervised multi-label classification over
//! trailer logits, then self-supervised contrastive fine-tuning on
//! trailer-half view pairs. Single-threaded and bitwise deterministic
//! given the seed; checkpoint persistence lives in the companion crate and
//! hooks in through the per-epoch callback.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use num_traits::Float;

use crate::corpus::{Corpus, SplitAssignment, TrailerRecord};
use crate::error::{CoreError, Result};
use crate::loss::{
    batch_contrastive_loss, bce_with_logits, BceConfig, DenominatorMode, NtxentConfig, Reduction,
};
use crate::metrics::{compute_report, silhouette, MetricsReport};
use crate::model::{FusionModel, ModelConfig};
use crate::nn::{sigmoid, zero_grads};
use crate::optim::{Adam, AdamConfig, LrSchedule};
use crate::rng::SeededRng;
use crate::tensor::Tensor2;

/// Training phase identifier, carried through logs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Supervised,
    Finetune,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Supervised => "supervised",
            Phase::Finetune => "finetune",
        }
    }
}

/// Hyper-parameters of both phases.
#[derive(Debug, Clone)]
pub struct TrainConfig<F> {
    pub batch_size: usize,
    pub supervised_epochs: usize,
    pub finetune_epochs: usize,
    pub supervised_lr: F,
    pub finetune_lr: F,
    /// Fine-tune epochs at the base rate before cosine annealing starts.
    pub warm_epochs: usize,
    pub min_lr: F,
    pub temperature: F,
    pub denominator_mode: DenominatorMode,
    /// Sigmoid threshold for the per-epoch validation F1.
    pub eval_threshold: F,
    pub seed: u64,
    pub deterministic: bool,
}

impl<F: Float> Default for TrainConfig<F> {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            supervised_epochs: 200,
            finetune_epochs: 50,
            supervised_lr: F::from(3e-5).unwrap(),
            finetune_lr: F::from(1e-4).unwrap(),
            warm_epochs: 10,
            min_lr: F::from(1e-6).unwrap(),
            temperature: F::from(0.5).unwrap(),
            denominator_mode: DenominatorMode::IncludePositive,
            eval_threshold: F::from(0.3).unwrap(),
            seed: 7,
            deterministic: true,
        }
    }
}

impl<F: Float> TrainConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(CoreError::domain("batch size must be at least 2"));
        }
        if self.supervised_lr <= F::zero() || self.finetune_lr <= F::zero() {
            return Err(CoreError::domain("learning rates must be positive"));
        }
        if self.warm_epochs > self.finetune_epochs {
            return Err(CoreError::domain("warm epochs exceed fine-tune epochs"));
        }
        if self.temperature <= F::zero() {
            return Err(CoreError::domain("temperature must be positive"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct EpochStats<F> {
    pub phase: Phase,
    /// 0-based epoch within the phase.
    pub epoch: usize,
    pub lr: F,
    pub train_loss: F,
    pub val_loss: Option<F>,
    pub val_f1_weighted: Option<F>,
    pub silhouette: Option<F>,
}

/// Splits a trailer's real sequences into two equal-length views: first
/// half and second half, dropping the middle sequence on odd counts.
pub fn split_views(seq_count: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if seq_count < 2 {
        return Err(CoreError::domain(
            "view split needs at least two sequences",
        ));
    }
    let half = seq_count / 2;
    Ok(((0..half).collect(), (half..2 * half).collect()))
}

/// Model plus optimizer plus the seeded stream that drives shuffling.
/// Everything a checkpoint must capture to resume bit-exactly.
pub struct Trainer<F> {
    pub model: FusionModel<F>,
    pub optimizer: Adam<F>,
    pub rng: SeededRng,
    pub config: TrainConfig<F>,
    pub pos_weights: Vec<F>,
    /// Next epoch to run within the current phase.
    pub epoch: usize,
    pub phase: Phase,
}

impl<F: Float> Trainer<F> {
    /// Builds a fresh trainer: seeds the generator, initializes the model
    /// (re-seeding NetVLAD centers from training-split frames) and computes
    /// the inverse-frequency positive class weights on the train split.
    pub fn new(
        model_config: ModelConfig,
        corpus: &Corpus<F>,
        split: &SplitAssignment,
        config: TrainConfig<F>,
    ) -> Result<Self> {
        config.validate()?;
        if split.train.is_empty() {
            return Err(CoreError::domain("train split is empty"));
        }
        let mut rng = SeededRng::new(config.seed);
        let mut model = FusionModel::new(model_config, &mut rng)?;
        let samples = netvlad_center_samples(&model, corpus, &split.train, &mut rng);
        model.init_netvlad_centers(&samples, &mut rng);
        let pos_weights = crate::corpus::positive_class_weights(corpus, &split.train)?;
        Ok(Trainer {
            model,
            optimizer: Adam::new(AdamConfig::default()),
            rng,
            config,
            pos_weights,
            epoch: 0,
            phase: Phase::Supervised,
        })
    }

    /// Restores a trainer from checkpointed parts.
    pub fn resume(
        model: FusionModel<F>,
        optimizer: Adam<F>,
        rng: SeededRng,
        config: TrainConfig<F>,
        pos_weights: Vec<F>,
        epoch: usize,
        phase: Phase,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            model,
            optimizer,
            rng,
            config,
            pos_weights,
            epoch,
            phase,
        })
    }

    fn bce_config(&self) -> BceConfig<F> {
        BceConfig {
            pos_weight: self.pos_weights.clone(),
            reduction: Reduction::Mean,
        }
    }

    /// Runs the supervised phase from the current epoch to the configured
    /// end. The callback fires after each epoch with the trainer itself,
    /// so the caller can checkpoint or log.
    pub fn run_supervised(
        &mut self,
        corpus: &Corpus<F>,
        split: &SplitAssignment,
        mut on_epoch: impl FnMut(&mut Trainer<F>, &EpochStats<F>) -> Result<()>,
    ) -> Result<()> {
        if self.phase != Phase::Supervised {
            return Err(CoreError::state("trainer is past the supervised phase"));
        }
        let schedule = LrSchedule::constant(self.config.supervised_lr, self.config.supervised_epochs);
        let bce = self.bce_config();
        while self.epoch < self.config.supervised_epochs {
            let lr = schedule.lr_at(self.epoch)?;
            let train_loss = self.supervised_epoch(corpus, split, lr, &bce)?;
            let (val_loss, val_f1) = self.validation_stats(corpus, &split.val, &bce)?;
            let stats = EpochStats {
                phase: Phase::Supervised,
                epoch: self.epoch,
                lr,
                train_loss,
                val_loss,
                val_f1_weighted: val_f1,
                silhouette: None,
            };
            self.epoch += 1;
            on_epoch(self, &stats)?;
        }
        Ok(())
    }

    /// Switches the trainer into the contrastive phase: fresh optimizer,
    /// epoch counter reset. Call once after the supervised phase (or after
    /// loading a supervised checkpoint).
    pub fn begin_finetune(&mut self) {
        self.phase = Phase::Finetune;
        self.epoch = 0;
        self.optimizer = Adam::new(AdamConfig::default());
    }

    /// Runs the contrastive phase. Silhouette of the bottleneck embeddings
    /// against the primary genre is computed over `silhouette_ids` each
    /// epoch (and once before the first epoch, via `pre_stats`).
    pub fn run_finetune(
        &mut self,
        corpus: &Corpus<F>,
        split: &SplitAssignment,
        silhouette_ids: &[String],
        mut on_epoch: impl FnMut(&mut Trainer<F>, &EpochStats<F>) -> Result<()>,
    ) -> Result<()> {
        if self.phase != Phase::Finetune {
            return Err(CoreError::state("call begin_finetune first"));
        }
        let schedule = LrSchedule::new(
            self.config.finetune_lr,
            self.config.warm_epochs,
            self.config.finetune_epochs,
            self.config.min_lr,
        )?;
        // Trailers that cannot produce two views are skipped up front.
        let eligible: Vec<String> = split
            .train
            .iter()
            .filter(|id| {
                corpus
                    .find(id)
                    .map(|t| self.real_sequence_count(t) >= 2)
                    .unwrap_or(false)
            })
            .cloned()
            .collect();
        if eligible.len() < 2 {
            return Err(CoreError::domain(
                "fewer than two trailers have enough sequences for view pairs",
            ));
        }
        while self.epoch < self.config.finetune_epochs {
            let lr = schedule.lr_at(self.epoch)?;
            let train_loss = self.contrastive_epoch(corpus, &eligible, lr)?;
            let sil = self.silhouette_primary(corpus, silhouette_ids)?;
            let stats = EpochStats {
                phase: Phase::Finetune,
                epoch: self.epoch,
                lr,
                train_loss,
                val_loss: None,
                val_f1_weighted: None,
                silhouette: sil,
            };
            self.epoch += 1;
            on_epoch(self, &stats)?;
        }
        Ok(())
    }

    /// Silhouette of the bottleneck space w.r.t. primary genre, or `None`
    /// when the subset is degenerate (fewer than two distinct genres).
    pub fn silhouette_primary(&self, corpus: &Corpus<F>, ids: &[String]) -> Result<Option<F>> {
        if ids.len() < 3 {
            return Ok(None);
        }
        let mut embeddings = Vec::with_capacity(ids.len());
        let mut clusters = Vec::with_capacity(ids.len());
        for id in ids {
            let record = lookup(corpus, id)?;
            let trunk = self.model.encode_trunk(record)?;
            let (emb, _) = self.model.encode_trailer(&trunk)?;
            embeddings.push(emb);
            clusters.push(record.primary_genre());
        }
        match silhouette(&embeddings, &clusters) {
            Ok(s) => Ok(Some(s)),
            Err(CoreError::Domain(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn real_sequence_count(&self, record: &TrailerRecord<F>) -> usize {
        crate::model::clip_windows(record.clip_count, self.model.dims().n_clips)
            .map(|w| w.len())
            .unwrap_or(0)
    }

    fn supervised_epoch(
        &mut self,
        corpus: &Corpus<F>,
        split: &SplitAssignment,
        lr: F,
        bce: &BceConfig<F>,
    ) -> Result<F> {
        let mut order = split.train.clone();
        self.rng.shuffle(&mut order);
        let mut epoch_loss = F::zero();
        let mut seen = 0usize;
        for batch in order.chunks(self.config.batch_size) {
            zero_grads(&mut self.model);
            let inv_b = F::one() / F::from(batch.len()).unwrap();
            let mut batch_loss = F::zero();
            for id in batch {
                let record = lookup(corpus, id)?;
                let trunk = self.model.encode_trunk(record)?;
                let (emb, enc) = self.model.encode_trailer(&trunk)?;
                let (logits, ccache) = self.model.classify(&emb)?;
                let targets = record.label_targets();
                let (loss, mut d_logits) = bce_with_logits(&logits, &targets, F::one(), bce)?;
                if !loss.is_finite() {
                    return Err(CoreError::numeric(format!(
                        "supervised loss diverged on trailer {id} at epoch {}",
                        self.epoch
                    )));
                }
                for d in d_logits.iter_mut() {
                    *d = *d * inv_b;
                }
                let d_bn = self.model.backward_classifier(&ccache, &d_logits);
                self.model
                    .backward_trailer(record, &trunk, &[(&enc, d_bn.as_slice())])?;
                batch_loss = batch_loss + loss;
            }
            self.optimizer.step(&mut self.model, lr)?;
            self.model.note_params_changed();
            epoch_loss = epoch_loss + batch_loss;
            seen += batch.len();
        }
        Ok(epoch_loss / F::from(seen.max(1)).unwrap())
    }

    fn contrastive_epoch(&mut self, corpus: &Corpus<F>, eligible: &[String], lr: F) -> Result<F> {
        let ntx = NtxentConfig::new(self.config.temperature, self.config.denominator_mode)?;
        let mut order = eligible.to_vec();
        self.rng.shuffle(&mut order);
        let mut epoch_loss = F::zero();
        let mut batches = 0usize;
        for batch in order.chunks(self.config.batch_size) {
            if batch.len() < 2 {
                continue; // a lone trailer has no negatives
            }
            zero_grads(&mut self.model);
            // Forward every view first; the loss couples the whole batch.
            let mut trunks = Vec::with_capacity(batch.len());
            let mut encs = Vec::with_capacity(batch.len());
            let mut head_caches = Vec::with_capacity(batch.len());
            let mut views = Vec::with_capacity(batch.len() * 2);
            for id in batch {
                let record = lookup(corpus, id)?;
                let trunk = self.model.encode_trunk(record)?;
                let (ids_a, ids_b) = split_views(trunk.seq_embs.len())?;
                let (emb_a, enc_a) = self.model.encode_from_trunk(&trunk, &ids_a)?;
                let (emb_b, enc_b) = self.model.encode_from_trunk(&trunk, &ids_b)?;
                let (z_a, hc_a) = self.model.project_view(&emb_a)?;
                let (z_b, hc_b) = self.model.project_view(&emb_b)?;
                trunks.push(trunk);
                encs.push((enc_a, enc_b));
                head_caches.push((hc_a, hc_b));
                views.push(z_a);
                views.push(z_b);
            }
            let (loss, d_views) = batch_contrastive_loss(&views, &ntx, Reduction::Mean)?;
            if !loss.is_finite() {
                return Err(CoreError::numeric(format!(
                    "contrastive loss diverged at epoch {}",
                    self.epoch
                )));
            }
            for (i, id) in batch.iter().enumerate() {
                let record = lookup(corpus, id)?;
                let d_bn_a = self.model.backward_view(&head_caches[i].0, &d_views[2 * i]);
                let d_bn_b = self.model.backward_view(&head_caches[i].1, &d_views[2 * i + 1]);
                let (enc_a, enc_b) = &encs[i];
                self.model.backward_trailer(
                    record,
                    &trunks[i],
                    &[(enc_a, d_bn_a.as_slice()), (enc_b, d_bn_b.as_slice())],
                )?;
            }
            self.optimizer.step(&mut self.model, lr)?;
            self.model.note_params_changed();
            epoch_loss = epoch_loss + loss;
            batches += 1;
        }
        if batches == 0 {
            return Err(CoreError::domain("no usable contrastive batches"));
        }
        Ok(epoch_loss / F::from(batches).unwrap())
    }

    fn validation_stats(
        &self,
        corpus: &Corpus<F>,
        ids: &[String],
        bce: &BceConfig<F>,
    ) -> Result<(Option<F>, Option<F>)> {
        if ids.is_empty() {
            return Ok((None, None));
        }
        let (probs, labels, losses) = self.score_ids(corpus, ids, Some(bce))?;
        let val_loss = losses.unwrap();
        let f1 = match compute_report(&probs, &labels, self.config.eval_threshold) {
            Ok(report) => Some(report.f1_weighted),
            Err(CoreError::Domain(_)) => None,
            Err(e) => return Err(e),
        };
        Ok((Some(val_loss), f1))
    }

    /// Sigmoid probabilities and label matrix over a subset; optionally the
    /// mean BCE loss.
    pub fn score_ids(
        &self,
        corpus: &Corpus<F>,
        ids: &[String],
        bce: Option<&BceConfig<F>>,
    ) -> Result<(Tensor2<F>, Tensor2<F>, Option<F>)> {
        let g_count = self.model.dims().genre_count;
        let mut probs = Tensor2::zeros(ids.len(), g_count);
        let mut labels = Tensor2::zeros(ids.len(), g_count);
        let mut loss_sum = F::zero();
        for (row, id) in ids.iter().enumerate() {
            let record = lookup(corpus, id)?;
            let trunk = self.model.encode_trunk(record)?;
            let (emb, _) = self.model.encode_trailer(&trunk)?;
            let (logits, _) = self.model.classify(&emb)?;
            let targets = record.label_targets();
            if let Some(cfg) = bce {
                let (loss, _) = bce_with_logits(&logits, &targets, F::one(), cfg)?;
                loss_sum = loss_sum + loss;
            }
            for g in 0..g_count {
                probs.set(row, g, sigmoid(logits[g]));
                labels.set(row, g, targets[g]);
            }
        }
        let mean_loss = bce.map(|_| loss_sum / F::from(ids.len()).unwrap());
        Ok((probs, labels, mean_loss))
    }

    /// Full evaluation report over a subset at the configured threshold.
    pub fn evaluate(&self, corpus: &Corpus<F>, ids: &[String]) -> Result<MetricsReport<F>> {
        let (probs, labels, _) = self.score_ids(corpus, ids, None)?;
        compute_report(&probs, &labels, self.config.eval_threshold)
    }

    /// Bottleneck embeddings (full-clip packing) for a subset.
    pub fn embeddings(&self, corpus: &Corpus<F>, ids: &[String]) -> Result<Vec<(String, Vec<F>)>> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let record = lookup(corpus, id)?;
            let trunk = self.model.encode_trunk(record)?;
            let (emb, _) = self.model.encode_trailer(&trunk)?;
            out.push((id.clone(), emb));
        }
        Ok(out)
    }
}

fn netvlad_center_samples<F: Float>(
    model: &FusionModel<F>,
    corpus: &Corpus<F>,
    train_ids: &[String],
    rng: &mut SeededRng,
) -> Vec<Vec<Vec<F>>> {
    // Up to 64 random frames per NetVLAD expert, drawn from the train split.
    let per_expert = 64;
    model
        .config
        .experts
        .iter()
        .map(|spec| {
            if spec.aggregator != crate::model::Aggregator::NetVlad {
                return Vec::new();
            }
            let mut frames = Vec::new();
            for _ in 0..per_expert {
                if train_ids.is_empty() {
                    break;
                }
                let id = &train_ids[rng.next_index(train_ids.len())];
                let Some(record) = corpus.find(id) else { continue };
                let Some(track) = record.tracks.get(&spec.name) else {
                    continue;
                };
                if track.native_dim != spec.native_dim || track.clips.is_empty() {
                    continue;
                }
                let clip = &track.clips[rng.next_index(track.clips.len())];
                let row = rng.next_index(clip.rows());
                frames.push(clip.row(row).to_vec());
            }
            frames
        })
        .collect()
}

fn lookup<'a, F: Float>(corpus: &'a Corpus<F>, id: &str) -> Result<&'a TrailerRecord<F>> {
    corpus
        .find(id)
        .ok_or_else(|| CoreError::domain(format!("unknown trailer id {id}")))
}
