//! Corpus model: trailer records with per-expert feature tracks, the
//! synthetic corpus generator with planted genres and sub-styles, and
//! dataset splitting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::rng::SeededRng;
use crate::tensor::{l2_normalize, Tensor2};

/// Trailers with fewer clips than this are excluded before splitting.
pub const MIN_CLIPS: usize = 10;

/// Most labels a single trailer may carry.
pub const MAX_LABELS: usize = 6;

/// The default 20-genre vocabulary.
pub const DEFAULT_GENRES: [&str; 20] = [
    "Action",
    "Adventure",
    "Animation",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Family",
    "Fantasy",
    "History",
    "Horror",
    "Music",
    "Mystery",
    "Science-Fiction",
    "Western",
    "Sport",
    "Short",
    "Biography",
    "Thriller",
    "War",
];

/// Ordered, unique genre names. Label vectors are positional against this
/// order, so it is fixed for the life of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenreVocabulary {
    names: Vec<String>,
}

impl GenreVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(CoreError::domain("genre vocabulary is empty"));
        }
        for i in 0..names.len() {
            for j in (i + 1)..names.len() {
                if names[i] == names[j] {
                    return Err(CoreError::domain(format!("duplicate genre name {}", names[i])));
                }
            }
        }
        Ok(GenreVocabulary { names })
    }

    /// The standard 20-genre list.
    pub fn default_20() -> Self {
        GenreVocabulary {
            names: DEFAULT_GENRES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// First `count` standard names, or generated names past 20.
    pub fn with_count(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(CoreError::domain("genre count must be positive"));
        }
        let mut names = Vec::with_capacity(count);
        for i in 0..count {
            if i < DEFAULT_GENRES.len() {
                names.push(DEFAULT_GENRES[i].to_string());
            } else {
                names.push(format!("genre-{i:02}"));
            }
        }
        Ok(GenreVocabulary { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }
}

/// Whether a track stores raw frame features or pre-aggregated clip
/// features (one row per clip).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackLevel {
    Frame,
    Clip,
}

/// Per-expert feature sequence for one trailer: one `frames x native_dim`
/// matrix per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrack<F> {
    pub expert: String,
    pub native_dim: usize,
    pub level: TrackLevel,
    pub clips: Vec<Tensor2<F>>,
}

impl<F: Float> ExpertTrack<F> {
    pub fn validate(&self) -> Result<()> {
        for (i, clip) in self.clips.iter().enumerate() {
            if clip.rows() == 0 {
                return Err(CoreError::domain(format!(
                    "expert {} clip {i} has zero frames",
                    self.expert
                )));
            }
            if clip.cols() != self.native_dim {
                return Err(CoreError::dimension(
                    format!("expert {} clip {i}", self.expert),
                    self.native_dim,
                    clip.cols(),
                ));
            }
            if self.level == TrackLevel::Clip && clip.rows() != 1 {
                return Err(CoreError::domain(format!(
                    "clip-level expert {} clip {i} has {} rows",
                    self.expert,
                    clip.rows()
                )));
            }
        }
        Ok(())
    }
}

/// One trailer: labels, planted ground truth (when synthetic) and the
/// expert tracks, all with exactly `clip_count` clips.
#[derive(Debug, Clone, PartialEq)]
pub struct TrailerRecord<F> {
    pub id: String,
    pub title: String,
    pub year: i32,
    /// Binary label vector, positional against the vocabulary.
    pub labels: Vec<u8>,
    /// Genre ids in listing order; the first entry is the primary genre.
    pub genre_order: Vec<usize>,
    /// Planted `(genre, substyle)` pairs; empty for non-synthetic data.
    pub substyles: Vec<(usize, usize)>,
    /// Planted per-clip genre, when the corpus was generated per clip.
    pub clip_genres: Vec<usize>,
    pub clip_count: usize,
    pub tracks: BTreeMap<String, ExpertTrack<F>>,
}

impl<F: Float> TrailerRecord<F> {
    /// Checks label arity, genre order consistency and that every track has
    /// exactly `clip_count` clips.
    pub fn validate(&self, genre_count: usize) -> Result<()> {
        if self.labels.len() != genre_count {
            return Err(CoreError::dimension(
                format!("trailer {} labels", self.id),
                genre_count,
                self.labels.len(),
            ));
        }
        let set: usize = self.labels.iter().map(|l| *l as usize).sum();
        if set == 0 || set > MAX_LABELS {
            return Err(CoreError::domain(format!(
                "trailer {} has {set} labels; need 1..={MAX_LABELS}",
                self.id
            )));
        }
        if self.genre_order.len() != set {
            return Err(CoreError::domain(format!(
                "trailer {} genre_order disagrees with labels",
                self.id
            )));
        }
        for &g in &self.genre_order {
            if g >= genre_count || self.labels[g] == 0 {
                return Err(CoreError::domain(format!(
                    "trailer {} genre_order lists unlabelled genre {g}",
                    self.id
                )));
            }
        }
        for track in self.tracks.values() {
            track.validate()?;
            if track.clips.len() != self.clip_count {
                return Err(CoreError::domain(format!(
                    "trailer {}: expert {} has {} clips, trailer has {}",
                    self.id,
                    track.expert,
                    track.clips.len(),
                    self.clip_count
                )));
            }
        }
        Ok(())
    }

    /// Primary genre: the first listed.
    pub fn primary_genre(&self) -> usize {
        self.genre_order[0]
    }

    /// Planted substyle of the primary genre, if synthetic.
    pub fn primary_substyle(&self) -> Option<usize> {
        let primary = self.primary_genre();
        self.substyles
            .iter()
            .find(|(g, _)| *g == primary)
            .map(|(_, s)| *s)
    }

    pub fn label_targets(&self) -> Vec<F> {
        self.labels
            .iter()
            .map(|&l| if l != 0 { F::one() } else { F::zero() })
            .collect()
    }
}

/// A full corpus in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<F> {
    pub genres: GenreVocabulary,
    pub trailers: Vec<TrailerRecord<F>>,
}

impl<F: Float> Corpus<F> {
    pub fn validate(&self) -> Result<()> {
        for t in &self.trailers {
            t.validate(self.genres.len())?;
        }
        Ok(())
    }

    pub fn find(&self, id: &str) -> Option<&TrailerRecord<F>> {
        self.trailers.iter().find(|t| t.id == id)
    }
}

/// One expert in a synthetic spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertGenSpec {
    pub name: String,
    pub native_dim: usize,
    /// Inclusive frames-per-clip range.
    pub frames_per_clip: (usize, usize),
}

impl ExpertGenSpec {
    pub fn new(name: &str, native_dim: usize, frames: (usize, usize)) -> Self {
        ExpertGenSpec {
            name: name.to_string(),
            native_dim,
            frames_per_clip: frames,
        }
    }

    /// The four standard experts at their full native dimensions
    /// (appearance 2048, scene 1024, motion 1024, audio 128).
    pub fn standard_full() -> Vec<ExpertGenSpec> {
        vec![
            ExpertGenSpec::new("appearance", 2048, (4, 12)),
            ExpertGenSpec::new("scene", 1024, (4, 12)),
            ExpertGenSpec::new("motion", 1024, (4, 12)),
            ExpertGenSpec::new("audio", 128, (4, 12)),
        ]
    }

    /// The same four experts at desk-scale dimensions.
    pub fn standard_desk() -> Vec<ExpertGenSpec> {
        vec![
            ExpertGenSpec::new("appearance", 48, (3, 6)),
            ExpertGenSpec::new("scene", 32, (3, 6)),
            ExpertGenSpec::new("motion", 32, (3, 6)),
            ExpertGenSpec::new("audio", 16, (3, 6)),
        ]
    }
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub genre_count: usize,
    pub substyles_per_genre: usize,
    pub trailers: usize,
    pub experts: Vec<ExpertGenSpec>,
    /// Inclusive clips-per-trailer range.
    pub clips_per_trailer: (usize, usize),
    /// Unnormalized weights for label cardinalities 1..=len.
    pub label_cardinality_weights: Vec<f64>,
    /// Gaussian noise added to every frame component.
    pub prototype_noise_sigma: f64,
    /// Norm of the sub-style offset relative to the unit prototype.
    pub substyle_strength: f64,
    /// Mixture weight of non-primary genres (the primary has weight 1).
    pub secondary_weight: f64,
    /// Degree of per-genre expert specialization in [0, 1): for each genre
    /// a random half of the experts carry the full signal and the rest are
    /// attenuated to `1 - specialization`, so expert reliability varies
    /// with content. 0 keeps every expert equally informative.
    pub expert_specialization: f64,
    /// Probability that an informative expert is silenced on a given clip
    /// (its frames carry only noise), modelling scenes where a modality
    /// says nothing. At least one expert always survives per clip.
    pub clip_expert_dropout: f64,
    /// Append a pure-noise expert carrying no genre signal.
    pub noise_expert: bool,
    /// Plant one genre per clip instead of mixing the trailer's genres.
    pub per_clip_genres: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            genre_count: 6,
            substyles_per_genre: 2,
            trailers: 120,
            experts: ExpertGenSpec::standard_desk(),
            clips_per_trailer: (18, 27),
            label_cardinality_weights: vec![0.35, 0.30, 0.15, 0.10, 0.06, 0.04],
            prototype_noise_sigma: 0.08,
            substyle_strength: 0.5,
            secondary_weight: 0.4,
            expert_specialization: 0.0,
            clip_expert_dropout: 0.0,
            noise_expert: false,
            per_clip_genres: false,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.genre_count == 0
            || self.substyles_per_genre == 0
            || self.trailers == 0
            || self.experts.is_empty()
        {
            return Err(CoreError::domain("synthetic spec counts must be positive"));
        }
        if self.prototype_noise_sigma < 0.0 {
            return Err(CoreError::domain("noise sigma must be non-negative"));
        }
        if self.clips_per_trailer.0 == 0 || self.clips_per_trailer.0 > self.clips_per_trailer.1 {
            return Err(CoreError::domain("bad clips-per-trailer range"));
        }
        if !(0.0..1.0).contains(&self.expert_specialization) {
            return Err(CoreError::domain("expert specialization must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.clip_expert_dropout) {
            return Err(CoreError::domain("clip expert dropout must lie in [0, 1)"));
        }
        if self.label_cardinality_weights.is_empty()
            || self.label_cardinality_weights.len() > MAX_LABELS
            || self.label_cardinality_weights.iter().any(|w| *w < 0.0)
            || self.label_cardinality_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(CoreError::domain("bad label cardinality weights"));
        }
        for e in &self.experts {
            if e.native_dim == 0 || e.frames_per_clip.0 == 0 || e.frames_per_clip.0 > e.frames_per_clip.1 {
                return Err(CoreError::domain(format!("bad expert spec {}", e.name)));
            }
        }
        Ok(())
    }
}

/// Name and dimension of the optional pure-noise expert.
pub const NOISE_EXPERT_NAME: &str = "noise";
pub const NOISE_EXPERT_DIM: usize = 32;

/// Generator output: the corpus plus the planted structure, which tests use
/// as ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus<F> {
    pub corpus: Corpus<F>,
    /// `prototypes[genre][expert]` unit vectors (informative experts only).
    pub prototypes: Vec<Vec<Vec<F>>>,
    /// `offsets[genre][substyle][expert]`.
    pub offsets: Vec<Vec<Vec<Vec<F>>>>,
}

/// Generates a corpus with planted coarse genres and fine sub-styles.
///
/// For each genre and expert a unit prototype is drawn; each (genre,
/// substyle) additionally owns an offset of norm `substyle_strength`. A
/// trailer samples 1..=6 genres (the first is primary and dominates the
/// mixture), one substyle per genre, and each frame is the normalized
/// mixture plus `sigma` Gaussian noise. Fully deterministic given the seed.
pub fn generate_synthetic<F: Float>(spec: &SyntheticSpec) -> Result<SyntheticCorpus<F>> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let genres = GenreVocabulary::with_count(spec.genre_count)?;

    let mut experts = spec.experts.clone();
    if spec.noise_expert {
        experts.push(ExpertGenSpec::new(NOISE_EXPERT_NAME, NOISE_EXPERT_DIM, (3, 6)));
    }
    let informative = spec.experts.len();

    // Planted structure. Draw order is fixed: genres, then substyles.
    let mut prototypes: Vec<Vec<Vec<F>>> = Vec::with_capacity(spec.genre_count);
    for _ in 0..spec.genre_count {
        let mut per_expert = Vec::with_capacity(informative);
        for e in &spec.experts {
            let mut v: Vec<F> = (0..e.native_dim).map(|_| rng.normal()).collect();
            l2_normalize(&mut v);
            per_expert.push(v);
        }
        prototypes.push(per_expert);
    }
    let strength = F::from(spec.substyle_strength).unwrap();
    let mut offsets: Vec<Vec<Vec<Vec<F>>>> = Vec::with_capacity(spec.genre_count);
    for _ in 0..spec.genre_count {
        let mut styles = Vec::with_capacity(spec.substyles_per_genre);
        for _ in 0..spec.substyles_per_genre {
            let mut per_expert = Vec::with_capacity(informative);
            for e in &spec.experts {
                let mut v: Vec<F> = (0..e.native_dim).map(|_| rng.normal()).collect();
                l2_normalize(&mut v);
                for x in &mut v {
                    *x = *x * strength;
                }
                per_expert.push(v);
            }
            styles.push(per_expert);
        }
        offsets.push(styles);
    }

    // Per-(genre, expert) signal strength. A random half of the experts
    // carry each genre at full strength, the rest attenuated.
    let mut signal_strength: Vec<Vec<F>> =
        vec![vec![F::one(); informative]; spec.genre_count];
    if spec.expert_specialization > 0.0 {
        let weak = F::from(1.0 - spec.expert_specialization).unwrap();
        let strong_count = informative.div_ceil(2);
        for row in signal_strength.iter_mut() {
            let strong = rng.sample_distinct(informative, strong_count);
            for e in 0..informative {
                if !strong.contains(&e) {
                    row[e] = weak;
                }
            }
        }
    }

    let max_card = spec.label_cardinality_weights.len().min(spec.genre_count);
    let sigma = spec.prototype_noise_sigma;
    let secondary = F::from(spec.secondary_weight).unwrap();

    let mut trailers = Vec::with_capacity(spec.trailers);
    for t in 0..spec.trailers {
        let id = format!("t{t:05}");
        let title = format!("synthetic-{t:05}");
        let year = 1930 + rng.next_index(95) as i32;
        let cardinality = 1 + rng.weighted_index(&spec.label_cardinality_weights[..max_card]);
        let genre_order = rng.sample_distinct(spec.genre_count, cardinality);
        let mut labels = vec![0u8; spec.genre_count];
        for &g in &genre_order {
            labels[g] = 1;
        }
        let substyles: Vec<(usize, usize)> = genre_order
            .iter()
            .map(|&g| (g, rng.next_index(spec.substyles_per_genre)))
            .collect();
        let clip_count = spec.clips_per_trailer.0
            + rng.next_index(spec.clips_per_trailer.1 - spec.clips_per_trailer.0 + 1);
        let clip_genres: Vec<usize> = if spec.per_clip_genres {
            (0..clip_count)
                .map(|_| genre_order[rng.next_index(genre_order.len())])
                .collect()
        } else {
            Vec::new()
        };

        // Which informative experts stay live on each clip.
        let live: Vec<Vec<bool>> = (0..clip_count)
            .map(|_| {
                let mut row: Vec<bool> = (0..informative)
                    .map(|_| {
                        spec.clip_expert_dropout == 0.0
                            || rng.next_f64() >= spec.clip_expert_dropout
                    })
                    .collect();
                if row.iter().all(|l| !l) {
                    row[0] = true;
                }
                row
            })
            .collect();

        // Trailer-level mixture direction per informative expert.
        let mixture: Vec<Vec<F>> = (0..informative)
            .map(|e| {
                let dim = spec.experts[e].native_dim;
                let mut dir = vec![F::zero(); dim];
                for (slot, &(g, style)) in substyles.iter().enumerate() {
                    let w = if slot == 0 { F::one() } else { secondary };
                    let proto = &prototypes[g][e];
                    let off = &offsets[g][style][e];
                    for i in 0..dim {
                        dir[i] = dir[i] + w * (proto[i] + off[i]);
                    }
                }
                l2_normalize(&mut dir);
                dir
            })
            .collect();

        let mut tracks = BTreeMap::new();
        for (e_idx, e) in experts.iter().enumerate() {
            let is_noise = e_idx >= informative;
            let mut clips = Vec::with_capacity(clip_count);
            for clip in 0..clip_count {
                let frames = e.frames_per_clip.0
                    + rng.next_index(e.frames_per_clip.1 - e.frames_per_clip.0 + 1);
                let mut data: Vec<F> = Vec::with_capacity(frames * e.native_dim);
                // Per-clip direction: single planted genre or trailer mixture.
                let dir: Option<Vec<F>> = if is_noise {
                    None
                } else if spec.per_clip_genres {
                    let g = clip_genres[clip];
                    let style = substyles.iter().find(|(gg, _)| *gg == g).unwrap().1;
                    let mut d: Vec<F> = prototypes[g][e_idx]
                        .iter()
                        .zip(&offsets[g][style][e_idx])
                        .map(|(&p, &o)| p + o)
                        .collect();
                    l2_normalize(&mut d);
                    Some(d)
                } else {
                    Some(mixture[e_idx].clone())
                };
                let strength = if is_noise || !live[clip][e_idx] {
                    F::zero()
                } else if spec.per_clip_genres {
                    signal_strength[clip_genres[clip]][e_idx]
                } else {
                    signal_strength[genre_order[0]][e_idx]
                };
                for _ in 0..frames {
                    for i in 0..e.native_dim {
                        let base = match &dir {
                            Some(d) => strength * d[i],
                            None => F::zero(),
                        };
                        let noise: F = if is_noise {
                            rng.normal()
                        } else if sigma > 0.0 {
                            rng.normal::<F>() * F::from(sigma).unwrap()
                        } else {
                            F::zero()
                        };
                        data.push(base + noise);
                    }
                }
                clips.push(Tensor2::from_data(frames, e.native_dim, data)?);
            }
            tracks.insert(
                e.name.clone(),
                ExpertTrack {
                    expert: e.name.clone(),
                    native_dim: e.native_dim,
                    level: TrackLevel::Frame,
                    clips,
                },
            );
        }

        trailers.push(TrailerRecord {
            id,
            title,
            year,
            labels,
            genre_order,
            substyles,
            clip_genres,
            clip_count,
            tracks,
        });
    }

    let corpus = Corpus { genres, trailers };
    corpus.validate()?;
    Ok(SyntheticCorpus {
        corpus,
        prototypes,
        offsets,
    })
}

/// Train/val/test id lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn subset(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(CoreError::domain(format!("unknown split subset {name}"))),
        }
    }
}

/// Filters short trailers, shuffles with the seed, then partitions by the
/// ratios with the remainder going to train.
pub fn split_dataset<F: Float>(
    corpus: &Corpus<F>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 || ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(CoreError::domain("split ratios must be non-negative and sum to 1"));
    }
    let mut ids: Vec<String> = corpus
        .trailers
        .iter()
        .filter(|t| t.clip_count >= MIN_CLIPS)
        .map(|t| t.id.clone())
        .collect();
    if ids.is_empty() {
        return Err(CoreError::domain(format!(
            "corpus is empty after the {MIN_CLIPS}-clip filter"
        )));
    }
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut ids);
    let n = ids.len();
    let n_val = (ratios.1 * n as f64).floor() as usize;
    let n_test = (ratios.2 * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    let train = ids[..n_train].to_vec();
    let val = ids[n_train..n_train + n_val].to_vec();
    let test = ids[n_train + n_val..].to_vec();
    Ok(SplitAssignment {
        train,
        val,
        test,
        seed,
    })
}

/// Inverse-frequency positive weights over the given subset, clipped to
/// `[1, 10]`: `p_g = clamp(#neg_g / #pos_g, 1, 10)`.
pub fn positive_class_weights<F: Float>(corpus: &Corpus<F>, ids: &[String]) -> Result<Vec<F>> {
    let g_count = corpus.genres.len();
    let mut pos = vec![0usize; g_count];
    let mut total = 0usize;
    for id in ids {
        let t = corpus
            .find(id)
            .ok_or_else(|| CoreError::domain(format!("unknown trailer id {id}")))?;
        for g in 0..g_count {
            if t.labels[g] != 0 {
                pos[g] += 1;
            }
        }
        total += 1;
    }
    let mut weights = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let w = if pos[g] == 0 {
            10.0
        } else {
            ((total - pos[g]) as f64 / pos[g] as f64).clamp(1.0, 10.0)
        };
        weights.push(F::from(w).unwrap());
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::mean_pool;
    use crate::tensor::dot;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            genre_count: 4,
            substyles_per_genre: 2,
            trailers: 30,
            experts: vec![
                ExpertGenSpec::new("appearance", 12, (2, 4)),
                ExpertGenSpec::new("audio", 6, (2, 4)),
            ],
            clips_per_trailer: (10, 14),
            seed: 11,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_spec_and_seed_is_identical() {
        let a: SyntheticCorpus<f32> = generate_synthetic(&tiny_spec()).unwrap();
        let b: SyntheticCorpus<f32> = generate_synthetic(&tiny_spec()).unwrap();
        assert_eq!(a.corpus, b.corpus);
    }

    #[test]
    fn different_seed_differs() {
        let mut spec = tiny_spec();
        let a: SyntheticCorpus<f32> = generate_synthetic(&spec).unwrap();
        spec.seed = 12;
        let b: SyntheticCorpus<f32> = generate_synthetic(&spec).unwrap();
        assert_ne!(a.corpus, b.corpus);
    }

    #[test]
    fn zero_sigma_single_genre_gives_identical_clips() {
        let spec = SyntheticSpec {
            genre_count: 1,
            substyles_per_genre: 1,
            trailers: 3,
            prototype_noise_sigma: 0.0,
            label_cardinality_weights: vec![1.0],
            experts: vec![ExpertGenSpec::new("appearance", 8, (2, 2))],
            clips_per_trailer: (10, 10),
            seed: 3,
            ..SyntheticSpec::default()
        };
        let out: SyntheticCorpus<f64> = generate_synthetic(&spec).unwrap();
        for trailer in &out.corpus.trailers {
            let track = &trailer.tracks["appearance"];
            let first = mean_pool(&track.clips[0]).unwrap();
            for clip in &track.clips {
                let pooled = mean_pool(clip).unwrap();
                for i in 0..8 {
                    assert!((pooled[i] - first[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn label_cardinality_within_bounds() {
        let spec = SyntheticSpec {
            genre_count: 8,
            trailers: 200,
            label_cardinality_weights: vec![0.2, 0.2, 0.15, 0.15, 0.15, 0.15],
            seed: 5,
            ..tiny_spec()
        };
        let out: SyntheticCorpus<f32> = generate_synthetic(&spec).unwrap();
        for t in &out.corpus.trailers {
            let set: usize = t.labels.iter().map(|l| *l as usize).sum();
            assert!((1..=MAX_LABELS).contains(&set), "{set} labels");
            assert_eq!(set, t.genre_order.len());
        }
    }

    #[test]
    fn noise_expert_is_appended() {
        let spec = SyntheticSpec {
            noise_expert: true,
            ..tiny_spec()
        };
        let out: SyntheticCorpus<f32> = generate_synthetic(&spec).unwrap();
        for t in &out.corpus.trailers {
            assert!(t.tracks.contains_key(NOISE_EXPERT_NAME));
        }
        // Prototypes exist only for the informative experts.
        assert_eq!(out.prototypes[0].len(), 2);
    }

    #[test]
    fn nearest_prototype_recovers_primary_genre() {
        // Low noise relative to prototype separation: a brute-force
        // nearest-prototype read of mean clip features must recover the
        // planted primary genre almost always.
        let spec = SyntheticSpec {
            genre_count: 5,
            substyles_per_genre: 2,
            trailers: 80,
            prototype_noise_sigma: 0.05,
            substyle_strength: 0.3,
            secondary_weight: 0.35,
            experts: vec![
                ExpertGenSpec::new("appearance", 24, (2, 4)),
                ExpertGenSpec::new("audio", 12, (2, 4)),
            ],
            clips_per_trailer: (10, 14),
            seed: 23,
            ..SyntheticSpec::default()
        };
        let out: SyntheticCorpus<f64> = generate_synthetic(&spec).unwrap();
        let expert_names = ["appearance", "audio"];
        let mut hits = 0usize;
        for trailer in &out.corpus.trailers {
            // Mean of clip means per expert.
            let mut best_genre = 0;
            let mut best_score = f64::NEG_INFINITY;
            for g in 0..spec.genre_count {
                let mut score = 0.0;
                for (e_idx, name) in expert_names.iter().enumerate() {
                    let track = &trailer.tracks[*name];
                    let mut mean = vec![0.0f64; track.native_dim];
                    for clip in &track.clips {
                        let pooled = mean_pool(clip).unwrap();
                        for i in 0..mean.len() {
                            mean[i] += pooled[i];
                        }
                    }
                    for v in &mut mean {
                        *v /= track.clips.len() as f64;
                    }
                    let norm = crate::tensor::l2_norm(&mean);
                    score += dot(&mean, &out.prototypes[g][e_idx]) / norm;
                }
                if score > best_score {
                    best_score = score;
                    best_genre = g;
                }
            }
            if best_genre == trailer.primary_genre() {
                hits += 1;
            }
        }
        let accuracy = hits as f64 / out.corpus.trailers.len() as f64;
        assert!(accuracy > 0.95, "nearest-prototype accuracy {accuracy}");
    }

    #[test]
    fn split_sizes_and_determinism() {
        let spec = SyntheticSpec {
            trailers: 100,
            clips_per_trailer: (10, 12),
            ..tiny_spec()
        };
        let out: SyntheticCorpus<f32> = generate_synthetic(&spec).unwrap();
        let split = split_dataset(&out.corpus, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!(split.train.len(), 80);
        assert_eq!(split.val.len(), 10);
        assert_eq!(split.test.len(), 10);
        let again = split_dataset(&out.corpus, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!(split, again);
        // Disjoint and covering.
        let mut all: Vec<&String> = split.train.iter().chain(&split.val).chain(&split.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn split_filters_short_trailers_before_ratios() {
        let spec = SyntheticSpec {
            trailers: 100,
            clips_per_trailer: (9, 9),
            ..tiny_spec()
        };
        let mut out: SyntheticCorpus<f32> = generate_synthetic(&spec).unwrap();
        // Give 80 trailers enough clips by duplicating their last clip.
        for t in out.corpus.trailers.iter_mut().take(80) {
            for track in t.tracks.values_mut() {
                let last = track.clips.last().unwrap().clone();
                track.clips.push(last);
            }
            t.clip_count = 10;
            if !t.clip_genres.is_empty() {
                t.clip_genres.push(*t.clip_genres.last().unwrap());
            }
        }
        let split = split_dataset(&out.corpus, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), 80);
        assert_eq!(split.val.len(), 8);
        assert_eq!(split.test.len(), 8);
    }

    #[test]
    fn split_rejects_empty_corpus() {
        let spec = SyntheticSpec {
            clips_per_trailer: (5, 8),
            trailers: 10,
            ..tiny_spec()
        };
        let out: SyntheticCorpus<f32> = generate_synthetic(&spec).unwrap();
        assert!(split_dataset(&out.corpus, (0.8, 0.1, 0.1), 1).is_err());
    }

    #[test]
    fn positive_weights_are_clipped() {
        let spec = SyntheticSpec {
            trailers: 60,
            ..tiny_spec()
        };
        let out: SyntheticCorpus<f32> = generate_synthetic(&spec).unwrap();
        let ids: Vec<String> = out.corpus.trailers.iter().map(|t| t.id.clone()).collect();
        let weights: Vec<f32> = positive_class_weights(&out.corpus, &ids).unwrap();
        for w in weights {
            assert!((1.0..=10.0).contains(&w));
        }
    }
}
