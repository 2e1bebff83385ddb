//! Cosine retrieval over bottleneck embeddings, genre-label augmentation,
//! and the frozen-trunk per-sequence readout.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use num_traits::Float;

use crate::corpus::{Corpus, TrailerRecord};
use crate::error::{CoreError, Result};
use crate::loss::{bce_with_logits, BceConfig};
use crate::model::FusionModel;
use crate::nn::{sigmoid, DenseLayer, Parameterized};
use crate::optim::{Adam, AdamConfig};
use crate::rng::SeededRng;
use crate::tensor::l2_norm;

/// Immutable trailer-id -> embedding table with precomputed norms.
/// Similarity arithmetic runs in f64 regardless of the model precision, so
/// rankings match a double-precision full scan exactly.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

/// Ranked retrieval hits for one query; scores non-increasing, ties broken
/// by ascending trailer id.
#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub query: String,
    pub hits: Vec<(String, f64)>,
}

impl EmbeddingIndex {
    /// Builds the index over the given ids: one deterministic bottleneck
    /// embedding per trailer (full-clip packing, no view split).
    pub fn build<F: Float>(
        model: &FusionModel<F>,
        corpus: &Corpus<F>,
        ids: &[String],
    ) -> Result<Self> {
        let mut embeddings = Vec::with_capacity(ids.len());
        let mut norms = Vec::with_capacity(ids.len());
        let mut out_ids = Vec::with_capacity(ids.len());
        for id in ids {
            let record = corpus
                .find(id)
                .ok_or_else(|| CoreError::domain(format!("unknown trailer id {id}")))?;
            let trunk = model.encode_trunk(record)?;
            let (emb, _) = model.encode_trailer(&trunk)?;
            let emb64: Vec<f64> = emb.iter().map(|v| v.to_f64().unwrap()).collect();
            if emb64.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::numeric(format!("non-finite embedding for {id}")));
            }
            norms.push(l2_norm(&emb64));
            embeddings.push(emb64);
            out_ids.push(id.clone());
        }
        for i in 0..out_ids.len() {
            for j in (i + 1)..out_ids.len() {
                if out_ids[i] == out_ids[j] {
                    return Err(CoreError::domain(format!("duplicate trailer id {}", out_ids[i])));
                }
            }
        }
        Ok(EmbeddingIndex {
            ids: out_ids,
            embeddings,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embedding(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|i| self.embeddings[i].as_slice())
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    /// Exact brute-force top-k by cosine similarity for a stored trailer;
    /// the query itself is excluded from its results.
    pub fn query_by_id(&self, id: &str, k: usize) -> Result<RetrievalResult> {
        let pos = self
            .position(id)
            .ok_or_else(|| CoreError::domain(format!("id {id} not in index")))?;
        self.rank(&self.embeddings[pos], self.norms[pos], Some(pos), id, k)
    }

    /// Top-k for a raw embedding.
    pub fn query_embedding(&self, embedding: &[f64], k: usize) -> Result<RetrievalResult> {
        let norm = l2_norm(embedding);
        self.rank(embedding, norm, None, "<embedding>", k)
    }

    fn rank(
        &self,
        query: &[f64],
        query_norm: f64,
        exclude: Option<usize>,
        query_name: &str,
        k: usize,
    ) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(CoreError::domain("k must be at least 1"));
        }
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            if exclude == Some(i) {
                continue;
            }
            let stored = &self.embeddings[i];
            if stored.len() != query.len() {
                return Err(CoreError::dimension("query embedding", stored.len(), query.len()));
            }
            let denom = query_norm * self.norms[i];
            let score = if denom > 0.0 {
                let mut dot = 0.0;
                for d in 0..query.len() {
                    dot += query[d] * stored[d];
                }
                dot / denom
            } else {
                0.0
            };
            scored.push((i, score));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        });
        scored.truncate(k);
        Ok(RetrievalResult {
            query: String::from(query_name),
            hits: scored
                .into_iter()
                .map(|(i, s)| (self.ids[i].clone(), s))
                .collect(),
        })
    }
}

/// Genres whose sigmoid probability clears the threshold; never empty —
/// when nothing clears it, the argmax genre is returned (lowest index wins
/// ties).
pub fn augment_labels<F: Float>(logits: &[F], threshold: F) -> Result<Vec<usize>> {
    if logits.is_empty() {
        return Err(CoreError::domain("no logits to threshold"));
    }
    for (g, u) in logits.iter().enumerate() {
        if !u.is_finite() {
            return Err(CoreError::numeric(format!("non-finite logit at class {g}")));
        }
    }
    let mut out: Vec<usize> = (0..logits.len())
        .filter(|&g| sigmoid(logits[g]) >= threshold)
        .collect();
    if out.is_empty() {
        let mut best = 0;
        for g in 1..logits.len() {
            if logits[g] > logits[best] {
                best = g;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Settings for fitting the auxiliary per-sequence readout head.
#[derive(Debug, Clone)]
pub struct SeqHeadConfig<F> {
    pub epochs: usize,
    pub lr: F,
    pub batch_size: usize,
    pub seed: u64,
}

impl<F: Float> Default for SeqHeadConfig<F> {
    fn default() -> Self {
        SeqHeadConfig {
            epochs: 30,
            lr: F::from(1e-3).unwrap(),
            batch_size: 64,
            seed: 7,
        }
    }
}

struct HeadOnly<'a, F>(&'a mut DenseLayer<F>);

impl<F: Float> Parameterized<F> for HeadOnly<'_, F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut [F], &mut [F])) {
        crate::nn::visit_child(self.0, "seq_head", f);
    }
}

/// Trains the per-sequence readout with the trunk frozen: every sequence
/// embedding of every training trailer inherits its trailer's label vector
/// and the head minimizes plain BCE over those pairs. The trunk is only
/// run forward, so trailer-level behaviour is untouched.
pub fn train_sequence_head<F: Float>(
    model: &mut FusionModel<F>,
    corpus: &Corpus<F>,
    train_ids: &[String],
    cfg: &SeqHeadConfig<F>,
) -> Result<()> {
    if train_ids.is_empty() {
        return Err(CoreError::domain("no trailers to train the sequence head on"));
    }
    // Frozen trunk: collect (sequence embedding, targets) pairs once.
    let mut inputs: Vec<Vec<F>> = Vec::new();
    let mut targets: Vec<Vec<F>> = Vec::new();
    for id in train_ids {
        let record = corpus
            .find(id)
            .ok_or_else(|| CoreError::domain(format!("unknown trailer id {id}")))?;
        let trunk = model.encode_trunk(record)?;
        let t = record.label_targets();
        for seq in trunk.seq_embs {
            inputs.push(seq);
            targets.push(t.clone());
        }
    }
    let mut rng = SeededRng::new(cfg.seed);
    model.install_seq_head(&mut rng);
    let bce = BceConfig::uniform(model.dims().genre_count);
    let mut optimizer = Adam::new(AdamConfig::default());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let head = model.seq_head_mut().unwrap();
            let mut wrapper = HeadOnly(head);
            crate::nn::zero_grads(&mut wrapper);
            let inv_b = F::one() / F::from(batch.len()).unwrap();
            for &i in batch {
                let head = wrapper.0 as &DenseLayer<F>;
                let (logits, cache) = head.forward(&inputs[i])?;
                let (_, mut d_logits) = bce_with_logits(&logits, &targets[i], F::one(), &bce)?;
                for d in d_logits.iter_mut() {
                    *d = *d * inv_b;
                }
                wrapper.0.backward(&cache, &d_logits, None);
            }
            optimizer.step(&mut wrapper, cfg.lr)?;
        }
    }
    Ok(())
}

/// Per-sequence genre predictions at the sigmoid threshold: one label set
/// per sequence window of the trailer. Requires a trained sequence head.
pub fn per_sequence_predict<F: Float>(
    model: &FusionModel<F>,
    record: &TrailerRecord<F>,
    threshold: F,
) -> Result<Vec<Vec<usize>>> {
    if model.seq_head().is_none() {
        return Err(CoreError::state("no sequence head installed; train it first"));
    }
    let trunk = model.encode_trunk(record)?;
    let mut out = Vec::with_capacity(trunk.seq_embs.len());
    for seq in &trunk.seq_embs {
        let logits = model.sequence_logits(seq)?;
        let set: Vec<usize> = (0..logits.len())
            .filter(|&g| sigmoid(logits[g]) >= threshold)
            .collect();
        out.push(set);
    }
    Ok(out)
}

/// Per-sequence raw logits, for argmax-style evaluation.
pub fn per_sequence_logits<F: Float>(
    model: &FusionModel<F>,
    record: &TrailerRecord<F>,
) -> Result<Vec<Vec<F>>> {
    if model.seq_head().is_none() {
        return Err(CoreError::state("no sequence head installed; train it first"));
    }
    let trunk = model.encode_trunk(record)?;
    let mut out = Vec::with_capacity(trunk.seq_embs.len());
    for seq in &trunk.seq_embs {
        out.push(model.sequence_logits(seq)?);
    }
    Ok(out)
}
