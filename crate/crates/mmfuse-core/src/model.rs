//! The full encoder: per-expert aggregation and projection into the common
//! space, collaborative gating, per-expert GEMs, the clip projector, the
//! sequence MLP, the trailer bottleneck, and the classification and
//! contrastive heads.
//!
//! Shapes at the defaults: experts project to 768; four gated experts
//! concatenate to 3072 and compress to a unit-norm 128 clip embedding;
//! nine clip embeddings concatenate to 1152 and map to a 256 sequence
//! vector; S sequence vectors concatenate and map through the bottleneck
//! to the 2048 trailer embedding. The classifier maps 2048 -> 1024 -> G
//! logits; the contrastive head maps 2048 -> 512 -> 128.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::aggregate::{mean_pool, NetVlad, NetVladCache};
use crate::corpus::TrailerRecord;
use crate::error::{CoreError, Result};
use crate::gating::{Gem, GemCache, GatingCache, GatingUnit};
use crate::nn::{visit_child, Activation, DenseCache, DenseLayer, Mlp2, Mlp2Cache, Parameterized};
use crate::rng::SeededRng;
use crate::tensor::{l2_normalize, l2_normalize_backward};

/// How an expert's frame features collapse to one clip vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    Mean,
    NetVlad,
}

/// One expert as the model sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertSpec {
    pub name: String,
    pub native_dim: usize,
    pub aggregator: Aggregator,
}

/// Gated fusion or the gating-bypassed concatenation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Gated,
    Concat,
}

/// Every width in the network. `paper_default` pins the published sizes;
/// tests and desk-scale runs shrink them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub common_dim: usize,
    pub clip_hidden: usize,
    pub clip_dim: usize,
    pub seq_hidden: usize,
    pub seq_dim: usize,
    pub bottleneck_hidden: usize,
    pub bottleneck_dim: usize,
    pub classifier_hidden: usize,
    pub head_hidden: usize,
    pub head_dim: usize,
    /// Clips per sequence window.
    pub n_clips: usize,
    /// Sequence slots per trailer.
    pub sequences: usize,
    pub genre_count: usize,
    pub netvlad_clusters: usize,
}

impl ModelDims {
    /// The published dimensions: common 768, clip 3072 -> 512 -> 128,
    /// sequence 1152 -> 512 -> 256, bottleneck -> 4096 -> 2048, classifier
    /// 2048 -> 1024 -> G, heads 2048 -> 512 and 512 -> 128, 9 clips per
    /// sequence.
    pub fn paper_default(genre_count: usize) -> Self {
        ModelDims {
            common_dim: 768,
            clip_hidden: 512,
            clip_dim: 128,
            seq_hidden: 512,
            seq_dim: 256,
            bottleneck_hidden: 4096,
            bottleneck_dim: 2048,
            classifier_hidden: 1024,
            head_hidden: 512,
            head_dim: 128,
            n_clips: 9,
            sequences: 4,
            genre_count,
            netvlad_clusters: 8,
        }
    }

    /// Small dimensions for fast experiments and tests.
    pub fn desk(genre_count: usize) -> Self {
        ModelDims {
            common_dim: 64,
            clip_hidden: 96,
            clip_dim: 48,
            seq_hidden: 128,
            seq_dim: 64,
            bottleneck_hidden: 256,
            bottleneck_dim: 128,
            classifier_hidden: 64,
            head_hidden: 64,
            head_dim: 32,
            n_clips: 9,
            sequences: 4,
            genre_count,
            netvlad_clusters: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.common_dim,
            self.clip_hidden,
            self.clip_dim,
            self.seq_hidden,
            self.seq_dim,
            self.bottleneck_hidden,
            self.bottleneck_dim,
            self.classifier_hidden,
            self.head_hidden,
            self.head_dim,
            self.n_clips,
            self.sequences,
            self.genre_count,
            self.netvlad_clusters,
        ];
        if all.iter().any(|&d| d == 0) {
            return Err(CoreError::config("all model dimensions must be positive"));
        }
        Ok(())
    }
}

/// Model architecture: dimensions, expert list and fusion mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub experts: Vec<ExpertSpec>,
    pub fusion_mode: FusionMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.experts.len() < 2 {
            return Err(CoreError::config("the model needs at least two experts"));
        }
        for i in 0..self.experts.len() {
            if self.experts[i].native_dim == 0 {
                return Err(CoreError::config(format!(
                    "expert {} has zero native dim",
                    self.experts[i].name
                )));
            }
            for j in (i + 1)..self.experts.len() {
                if self.experts[i].name == self.experts[j].name {
                    return Err(CoreError::config(format!(
                        "duplicate expert {}",
                        self.experts[i].name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Cache of one clip's forward pass.
#[derive(Debug, Clone)]
pub struct ClipCache<F> {
    vlad_caches: Vec<Option<NetVladCache<F>>>,
    proj_caches: Vec<Option<DenseCache<F>>>,
    gating_cache: Option<GatingCache<F>>,
    gem_caches: Vec<GemCache<F>>,
    clip_mlp: Mlp2Cache<F>,
    emb: Vec<F>,
    norm: F,
}

/// Shared per-trailer forward state: clip embeddings and sequence
/// embeddings over the trailer's real sequence windows. Bottleneck passes
/// (full packing or view halves) run on top of this.
#[derive(Debug, Clone)]
pub struct TrunkCache<F> {
    /// Real sequence windows as clip indices.
    pub windows: Vec<Vec<usize>>,
    /// Unique clip indices in ascending order; caches align with this.
    pub used_clips: Vec<usize>,
    clip_caches: Vec<ClipCache<F>>,
    pub clip_embs: Vec<Vec<F>>,
    seq_caches: Vec<Mlp2Cache<F>>,
    pub seq_embs: Vec<Vec<F>>,
    param_version: u64,
}

/// Cache of one bottleneck pass over packed sequence slots.
#[derive(Debug, Clone)]
pub struct EncodeCache<F> {
    slots: Vec<usize>,
    bn_cache: Mlp2Cache<F>,
    pub bottleneck: Vec<F>,
}

/// Non-overlapping clip windows of length `n`. Trailers shorter than one
/// window wrap circularly; leftover clips past the last full window are
/// dropped.
pub fn clip_windows(clip_count: usize, n: usize) -> Result<Vec<Vec<usize>>> {
    if clip_count == 0 {
        return Err(CoreError::domain("trailer has no clips"));
    }
    if n == 0 {
        return Err(CoreError::domain("sequence length must be positive"));
    }
    if clip_count < n {
        return Ok(vec![(0..n).map(|j| j % clip_count).collect()]);
    }
    Ok((0..clip_count / n)
        .map(|w| (w * n..(w + 1) * n).collect())
        .collect())
}

/// Packs `count` real sequences into exactly `slots` entries by circular
/// repetition, truncating past `slots`.
pub fn pack_slots(count: usize, slots: usize) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(CoreError::domain("no sequences to pack"));
    }
    Ok((0..slots).map(|i| i % count).collect())
}

/// The trainable network.
#[derive(Debug, Clone)]
pub struct FusionModel<F> {
    pub config: ModelConfig,
    netvlads: Vec<Option<NetVlad<F>>>,
    projections: Vec<DenseLayer<F>>,
    pub gating: GatingUnit<F>,
    gems: Vec<Gem<F>>,
    clip_proj: Mlp2<F>,
    seq_mlp: Mlp2<F>,
    bottleneck: Mlp2<F>,
    classifier: Mlp2<F>,
    head_m: DenseLayer<F>,
    head_n: DenseLayer<F>,
    /// Auxiliary per-sequence readout, trained post hoc with the trunk
    /// frozen. Not visited by `for_each_param`.
    seq_head: Option<DenseLayer<F>>,
    param_version: u64,
}

impl<F: Float> FusionModel<F> {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = &config.dims;
        let mut netvlads = Vec::with_capacity(config.experts.len());
        let mut projections = Vec::with_capacity(config.experts.len());
        for e in &config.experts {
            let (vlad, agg_dim) = match e.aggregator {
                Aggregator::Mean => (None, e.native_dim),
                Aggregator::NetVlad => {
                    let vlad = NetVlad::new(d.netvlad_clusters, e.native_dim, rng)?;
                    let out = vlad.out_dim();
                    (Some(vlad), out)
                }
            };
            netvlads.push(vlad);
            projections.push(DenseLayer::new(agg_dim, d.common_dim, Activation::Identity, rng));
        }
        let gating = GatingUnit::new(d.common_dim, rng);
        let gems = config
            .experts
            .iter()
            .map(|_| Gem::new(d.common_dim, rng))
            .collect();
        let concat_dim = config.experts.len() * d.common_dim;
        let clip_proj = Mlp2::new(concat_dim, d.clip_hidden, d.clip_dim, rng);
        let seq_mlp = Mlp2::new(d.n_clips * d.clip_dim, d.seq_hidden, d.seq_dim, rng);
        let bottleneck = Mlp2::new(d.sequences * d.seq_dim, d.bottleneck_hidden, d.bottleneck_dim, rng);
        let classifier = Mlp2::new(d.bottleneck_dim, d.classifier_hidden, d.genre_count, rng);
        let head_m = DenseLayer::new(d.bottleneck_dim, d.head_hidden, Activation::Relu, rng);
        let head_n = DenseLayer::new(d.head_hidden, d.head_dim, Activation::Identity, rng);
        Ok(FusionModel {
            config,
            netvlads,
            projections,
            gating,
            gems,
            clip_proj,
            seq_mlp,
            bottleneck,
            classifier,
            head_m,
            head_n,
            seq_head: None,
            param_version: 0,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.config.dims
    }

    pub fn param_version(&self) -> u64 {
        self.param_version
    }

    /// Call after any in-place parameter change (optimizer step, checkpoint
    /// load). Outstanding forward caches become stale.
    pub fn note_params_changed(&mut self) {
        self.param_version += 1;
    }

    /// Re-seeds NetVLAD centers from sample frames, expert by expert.
    /// `samples[i]` holds frames for expert `i` (ignored for mean experts).
    pub fn init_netvlad_centers(&mut self, samples: &[Vec<Vec<F>>], rng: &mut SeededRng) {
        for (i, vlad) in self.netvlads.iter_mut().enumerate() {
            if let Some(v) = vlad {
                if let Some(frames) = samples.get(i) {
                    let refs: Vec<&[F]> = frames.iter().map(|f| f.as_slice()).collect();
                    v.set_centers_from_samples(&refs, rng);
                }
            }
        }
    }

    pub fn seq_head(&self) -> Option<&DenseLayer<F>> {
        self.seq_head.as_ref()
    }

    pub fn seq_head_mut(&mut self) -> Option<&mut DenseLayer<F>> {
        self.seq_head.as_mut()
    }

    /// Installs a fresh per-sequence readout head (seq_dim -> G).
    pub fn install_seq_head(&mut self, rng: &mut SeededRng) {
        let d = &self.config.dims;
        self.seq_head = Some(DenseLayer::new(
            d.seq_dim,
            d.genre_count,
            Activation::Identity,
            rng,
        ));
    }

    pub fn set_seq_head(&mut self, head: Option<DenseLayer<F>>) {
        self.seq_head = head;
    }

    /// Encodes one clip into a unit-norm `clip_dim` embedding.
    pub fn encode_clip(&self, record: &TrailerRecord<F>, clip: usize) -> Result<(Vec<F>, ClipCache<F>)> {
        let d = &self.config.dims;
        let e_count = self.config.experts.len();
        let mut psis: Vec<Vec<F>> = Vec::with_capacity(e_count);
        let mut vlad_caches = Vec::with_capacity(e_count);
        let mut proj_caches = Vec::with_capacity(e_count);
        for (i, spec) in self.config.experts.iter().enumerate() {
            match record.tracks.get(&spec.name) {
                None => {
                    // Absent expert: zero vector at the common-projection
                    // output; the gate learns to down-weight it.
                    psis.push(vec![F::zero(); d.common_dim]);
                    vlad_caches.push(None);
                    proj_caches.push(None);
                }
                Some(track) => {
                    if track.native_dim != spec.native_dim {
                        return Err(CoreError::config(format!(
                            "expert {} native dim {} does not match the model's {}",
                            spec.name, track.native_dim, spec.native_dim
                        )));
                    }
                    let frames = track.clips.get(clip).ok_or_else(|| {
                        CoreError::domain(format!(
                            "clip {clip} out of range for trailer {}",
                            record.id
                        ))
                    })?;
                    let (agg, vlad_cache) = match (&self.netvlads[i], spec.aggregator) {
                        (Some(vlad), Aggregator::NetVlad) => {
                            let (out, cache) = vlad.forward(frames)?;
                            (out, Some(cache))
                        }
                        // Mean pooling; a clip-level track has one row, so
                        // this is the pre-aggregated bypass as well.
                        _ => (mean_pool(frames)?, None),
                    };
                    let (psi, cache) = self.projections[i].forward(&agg)?;
                    psis.push(psi);
                    vlad_caches.push(vlad_cache);
                    proj_caches.push(Some(cache));
                }
            }
        }

        let (modulated, gating_cache) = match self.config.fusion_mode {
            FusionMode::Gated => {
                let (m, c) = self.gating.forward(&psis)?;
                (m, Some(c))
            }
            FusionMode::Concat => (psis.clone(), None),
        };

        let mut concat = Vec::with_capacity(e_count * d.common_dim);
        let mut gem_caches = Vec::with_capacity(e_count);
        for (e, m) in modulated.iter().enumerate() {
            let (r, cache) = self.gems[e].forward(m)?;
            concat.extend_from_slice(&r);
            gem_caches.push(cache);
        }
        let (mut emb, clip_mlp) = self.clip_proj.forward(&concat)?;
        let norm = l2_normalize(&mut emb);
        Ok((
            emb.clone(),
            ClipCache {
                vlad_caches,
                proj_caches,
                gating_cache,
                gem_caches,
                clip_mlp,
                emb,
                norm,
            },
        ))
    }

    /// Encodes every clip and sequence window of a trailer.
    pub fn encode_trunk(&self, record: &TrailerRecord<F>) -> Result<TrunkCache<F>> {
        let d = &self.config.dims;
        let windows = clip_windows(record.clip_count, d.n_clips)?;
        let mut used = vec![false; record.clip_count];
        for w in &windows {
            for &c in w {
                used[c] = true;
            }
        }
        let used_clips: Vec<usize> = (0..record.clip_count).filter(|&c| used[c]).collect();
        let mut slot_of = vec![usize::MAX; record.clip_count];
        for (slot, &c) in used_clips.iter().enumerate() {
            slot_of[c] = slot;
        }

        let mut clip_caches = Vec::with_capacity(used_clips.len());
        let mut clip_embs = Vec::with_capacity(used_clips.len());
        for &c in &used_clips {
            let (emb, cache) = self.encode_clip(record, c)?;
            clip_embs.push(emb);
            clip_caches.push(cache);
        }

        let mut seq_caches = Vec::with_capacity(windows.len());
        let mut seq_embs = Vec::with_capacity(windows.len());
        let mut cat = vec![F::zero(); d.n_clips * d.clip_dim];
        for w in &windows {
            for (j, &c) in w.iter().enumerate() {
                cat[j * d.clip_dim..(j + 1) * d.clip_dim].copy_from_slice(&clip_embs[slot_of[c]]);
            }
            let (emb, cache) = self.seq_mlp.forward(&cat)?;
            seq_embs.push(emb);
            seq_caches.push(cache);
        }
        Ok(TrunkCache {
            windows,
            used_clips,
            clip_caches,
            clip_embs,
            seq_caches,
            seq_embs,
            param_version: self.param_version,
        })
    }

    /// Packs the given real sequence indices into the S slots and runs the
    /// bottleneck, yielding the trailer embedding.
    pub fn encode_from_trunk(
        &self,
        trunk: &TrunkCache<F>,
        seq_ids: &[usize],
    ) -> Result<(Vec<F>, EncodeCache<F>)> {
        let d = &self.config.dims;
        if seq_ids.is_empty() {
            return Err(CoreError::domain("no sequences selected for encoding"));
        }
        for &s in seq_ids {
            if s >= trunk.seq_embs.len() {
                return Err(CoreError::domain(format!("sequence index {s} out of range")));
            }
        }
        let packing = pack_slots(seq_ids.len(), d.sequences)?;
        let slots: Vec<usize> = packing.iter().map(|&i| seq_ids[i]).collect();
        let mut cat = vec![F::zero(); d.sequences * d.seq_dim];
        for (i, &s) in slots.iter().enumerate() {
            cat[i * d.seq_dim..(i + 1) * d.seq_dim].copy_from_slice(&trunk.seq_embs[s]);
        }
        let (emb, bn_cache) = self.bottleneck.forward(&cat)?;
        Ok((
            emb.clone(),
            EncodeCache {
                slots,
                bn_cache,
                bottleneck: emb,
            },
        ))
    }

    /// Trailer embedding over all real sequences (full-clip packing).
    pub fn encode_trailer(&self, trunk: &TrunkCache<F>) -> Result<(Vec<F>, EncodeCache<F>)> {
        let all: Vec<usize> = (0..trunk.seq_embs.len()).collect();
        self.encode_from_trunk(trunk, &all)
    }

    /// Raw genre logits; the loss applies the sigmoid.
    pub fn classify(&self, bottleneck: &[F]) -> Result<(Vec<F>, Mlp2Cache<F>)> {
        self.classifier.forward(bottleneck)
    }

    /// Contrastive projection `n(m(x))`, un-normalized.
    pub fn project_view(&self, bottleneck: &[F]) -> Result<(Vec<F>, (DenseCache<F>, DenseCache<F>))> {
        let (mid, c1) = self.head_m.forward(bottleneck)?;
        let (z, c2) = self.head_n.forward(&mid)?;
        Ok((z, (c1, c2)))
    }

    /// Per-sequence logits from the auxiliary readout head.
    pub fn sequence_logits(&self, seq_emb: &[F]) -> Result<Vec<F>> {
        let head = self
            .seq_head
            .as_ref()
            .ok_or_else(|| CoreError::state("no sequence head installed; train it first"))?;
        Ok(head.forward(seq_emb)?.0)
    }

    /// Backward for classification: pushes `d_logits` through the
    /// classifier and returns the bottleneck gradient.
    pub fn backward_classifier(&mut self, cache: &Mlp2Cache<F>, d_logits: &[F]) -> Vec<F> {
        let mut d_bn = vec![F::zero(); self.config.dims.bottleneck_dim];
        self.classifier.backward(cache, d_logits, Some(&mut d_bn));
        d_bn
    }

    /// Backward for a contrastive view projection.
    pub fn backward_view(
        &mut self,
        cache: &(DenseCache<F>, DenseCache<F>),
        d_z: &[F],
    ) -> Vec<F> {
        let mut d_mid = vec![F::zero(); self.config.dims.head_hidden];
        self.head_n.backward(&cache.1, d_z, Some(&mut d_mid));
        let mut d_bn = vec![F::zero(); self.config.dims.bottleneck_dim];
        self.head_m.backward(&cache.0, &d_mid, Some(&mut d_bn));
        d_bn
    }

    /// Backward through the trunk for one trailer, accumulating parameter
    /// gradients. `passes` pairs each bottleneck pass with the gradient of
    /// the loss w.r.t. its trailer embedding. Fails if the trunk cache is
    /// stale (parameters changed since the forward pass).
    pub fn backward_trailer(
        &mut self,
        record: &TrailerRecord<F>,
        trunk: &TrunkCache<F>,
        passes: &[(&EncodeCache<F>, &[F])],
    ) -> Result<()> {
        if trunk.param_version != self.param_version {
            return Err(CoreError::state(
                "backward against a stale forward cache; parameters changed since encode",
            ));
        }
        let d = &self.config.dims;
        let seq_dim = d.seq_dim;
        let mut d_seq = vec![vec![F::zero(); seq_dim]; trunk.seq_embs.len()];
        let mut d_cat_bn = vec![F::zero(); d.sequences * seq_dim];
        for (enc, d_bn) in passes {
            for v in d_cat_bn.iter_mut() {
                *v = F::zero();
            }
            self.bottleneck.backward(&enc.bn_cache, d_bn, Some(&mut d_cat_bn));
            for (i, &s) in enc.slots.iter().enumerate() {
                let src = &d_cat_bn[i * seq_dim..(i + 1) * seq_dim];
                let dst = &mut d_seq[s];
                for k in 0..seq_dim {
                    dst[k] = dst[k] + src[k];
                }
            }
        }

        let mut slot_of = vec![usize::MAX; record.clip_count];
        for (slot, &c) in trunk.used_clips.iter().enumerate() {
            slot_of[c] = slot;
        }
        let clip_dim = d.clip_dim;
        let mut d_clip = vec![vec![F::zero(); clip_dim]; trunk.used_clips.len()];
        let mut d_cat_seq = vec![F::zero(); d.n_clips * clip_dim];
        for (s, window) in trunk.windows.iter().enumerate() {
            for v in d_cat_seq.iter_mut() {
                *v = F::zero();
            }
            self.seq_mlp
                .backward(&trunk.seq_caches[s], &d_seq[s], Some(&mut d_cat_seq));
            for (j, &c) in window.iter().enumerate() {
                let src = &d_cat_seq[j * clip_dim..(j + 1) * clip_dim];
                let dst = &mut d_clip[slot_of[c]];
                for k in 0..clip_dim {
                    dst[k] = dst[k] + src[k];
                }
            }
        }

        for (slot, &c) in trunk.used_clips.iter().enumerate() {
            self.backward_clip(record, c, &trunk.clip_caches[slot], &d_clip[slot])?;
        }
        Ok(())
    }

    fn backward_clip(
        &mut self,
        record: &TrailerRecord<F>,
        clip: usize,
        cache: &ClipCache<F>,
        d_emb: &[F],
    ) -> Result<()> {
        let d = &self.config.dims;
        let e_count = self.config.experts.len();
        let mut d_c = vec![F::zero(); d.clip_dim];
        l2_normalize_backward(&cache.emb, cache.norm, d_emb, &mut d_c);

        let mut d_concat = vec![F::zero(); e_count * d.common_dim];
        self.clip_proj.backward(&cache.clip_mlp, &d_c, Some(&mut d_concat));

        let mut d_modulated: Vec<Vec<F>> = Vec::with_capacity(e_count);
        for e in 0..e_count {
            let mut d_m = vec![F::zero(); d.common_dim];
            self.gems[e].backward(
                &cache.gem_caches[e],
                &d_concat[e * d.common_dim..(e + 1) * d.common_dim],
                Some(&mut d_m),
            );
            d_modulated.push(d_m);
        }

        let mut d_psi = vec![vec![F::zero(); d.common_dim]; e_count];
        match (&cache.gating_cache, self.config.fusion_mode) {
            (Some(gc), FusionMode::Gated) => {
                self.gating.backward(gc, &d_modulated, &mut d_psi);
            }
            _ => {
                d_psi = d_modulated;
            }
        }

        for (e, spec) in self.config.experts.iter().enumerate() {
            let Some(proj_cache) = &cache.proj_caches[e] else {
                continue; // absent expert: zeros carry no gradient
            };
            match &cache.vlad_caches[e] {
                Some(vlad_cache) => {
                    let mut d_agg = vec![F::zero(); self.projections[e].in_dim()];
                    self.projections[e].backward(proj_cache, &d_psi[e], Some(&mut d_agg));
                    let track = record.tracks.get(&spec.name).ok_or_else(|| {
                        CoreError::state("track disappeared between forward and backward")
                    })?;
                    let vlad = self.netvlads[e].as_mut().ok_or_else(|| {
                        CoreError::state("netvlad cache without netvlad parameters")
                    })?;
                    vlad.backward(&track.clips[clip], vlad_cache, &d_agg);
                }
                None => {
                    // Mean pooling has no parameters and frames are leaves.
                    self.projections[e].backward(proj_cache, &d_psi[e], None);
                }
            }
        }
        Ok(())
    }
}

impl<F: Float> FusionModel<F> {
    /// Smallest |relu pre-activation| across every relu layer touched by a
    /// full forward pass of `record` (trunk, full packing, both view
    /// halves, classifier and contrastive head). Used by gradient checks
    /// to skip configurations where finite differences straddle a kink.
    pub fn min_relu_margin(&self, record: &TrailerRecord<F>) -> Result<F> {
        let mut margin = F::infinity();
        let trunk = self.encode_trunk(record)?;
        for cache in &trunk.clip_caches {
            margin = margin.min(self.clip_proj.l1.min_abs_preact(&cache.clip_mlp.c1));
            if let Some(gc) = &cache.gating_cache {
                margin = margin.min(self.gating.min_relu_margin(gc));
            }
        }
        for sc in &trunk.seq_caches {
            margin = margin.min(self.seq_mlp.l1.min_abs_preact(&sc.c1));
        }
        let mut passes: Vec<Vec<usize>> = vec![(0..trunk.seq_embs.len()).collect()];
        if trunk.seq_embs.len() >= 2 {
            let half = trunk.seq_embs.len() / 2;
            passes.push((0..half).collect());
            passes.push((half..2 * half).collect());
        }
        for seq_ids in passes {
            let (emb, enc) = self.encode_from_trunk(&trunk, &seq_ids)?;
            margin = margin.min(self.bottleneck.l1.min_abs_preact(&enc.bn_cache.c1));
            let (_, ccache) = self.classify(&emb)?;
            margin = margin.min(self.classifier.l1.min_abs_preact(&ccache.c1));
            let (_, (mc, _)) = self.project_view(&emb)?;
            margin = margin.min(self.head_m.min_abs_preact(&mc));
        }
        Ok(margin)
    }
}

impl<F: Float> Parameterized<F> for FusionModel<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut [F], &mut [F])) {
        for (i, spec) in self.config.experts.iter().enumerate() {
            if let Some(vlad) = &mut self.netvlads[i] {
                visit_child(vlad, &format!("vlad.{}", spec.name), f);
            }
            visit_child(&mut self.projections[i], &format!("proj.{}", spec.name), f);
        }
        visit_child(&mut self.gating, "gating", f);
        for (i, spec) in self.config.experts.iter().enumerate() {
            visit_child(&mut self.gems[i], &format!("gem.{}", spec.name), f);
        }
        visit_child(&mut self.clip_proj, "clip_proj", f);
        visit_child(&mut self.seq_mlp, "seq_mlp", f);
        visit_child(&mut self.bottleneck, "bottleneck", f);
        visit_child(&mut self.classifier, "classifier", f);
        visit_child(&mut self.head_m, "head_m", f);
        visit_child(&mut self.head_n, "head_n", f);
    }
}
