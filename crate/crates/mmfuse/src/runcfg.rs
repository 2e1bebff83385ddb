//! Run configuration: a TOML file with nested sections covering corpus
//! paths, architecture dimensions, optimizer constants and seeds. Unknown
//! keys are rejected, and every run writes its fully-resolved form next to
//! its outputs so the output directory is self-describing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mmfuse_core::corpus::{Corpus, ExpertGenSpec, SyntheticSpec};
use mmfuse_core::model::{Aggregator, ExpertSpec, FusionMode, ModelConfig, ModelDims};
use mmfuse_core::train::TrainConfig;

use crate::checkpoint::{parse_denominator, parse_fusion_mode};
use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub store: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Base dimension preset: "desk" or "paper".
    pub preset: String,
    pub fusion_mode: String,
    /// Experts aggregated with NetVLAD; all others use mean pooling.
    pub netvlad_experts: Vec<String>,
    pub genre_count: Option<usize>,
    pub common_dim: Option<usize>,
    pub clip_hidden: Option<usize>,
    pub clip_dim: Option<usize>,
    pub seq_hidden: Option<usize>,
    pub seq_dim: Option<usize>,
    pub bottleneck_hidden: Option<usize>,
    pub bottleneck_dim: Option<usize>,
    pub classifier_hidden: Option<usize>,
    pub head_hidden: Option<usize>,
    pub head_dim: Option<usize>,
    pub n_clips: Option<usize>,
    pub sequences: Option<usize>,
    pub netvlad_clusters: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "desk".to_string(),
            fusion_mode: "gated".to_string(),
            netvlad_experts: vec!["audio".to_string()],
            genre_count: None,
            common_dim: None,
            clip_hidden: None,
            clip_dim: None,
            seq_hidden: None,
            seq_dim: None,
            bottleneck_hidden: None,
            bottleneck_dim: None,
            classifier_hidden: None,
            head_hidden: None,
            head_dim: None,
            n_clips: None,
            sequences: None,
            netvlad_clusters: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub supervised_epochs: usize,
    pub finetune_epochs: usize,
    pub supervised_lr: f64,
    pub finetune_lr: f64,
    pub warm_epochs: usize,
    pub min_lr: f64,
    pub temperature: f64,
    pub denominator_mode: String,
    pub eval_threshold: f64,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 32,
            supervised_epochs: 200,
            finetune_epochs: 50,
            supervised_lr: 3e-5,
            finetune_lr: 1e-4,
            warm_epochs: 10,
            min_lr: 1e-6,
            temperature: 0.5,
            denominator_mode: "include-positive".to_string(),
            eval_threshold: 0.3,
            seed: 7,
            deterministic: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| PipelineError::Toml(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| PipelineError::Toml(e.to_string()))
    }

    /// Builds the model architecture for a corpus: expert names and native
    /// dims come from the corpus tracks, dimension overrides from the
    /// config.
    pub fn model_config(&self, corpus: &Corpus<f32>) -> Result<ModelConfig> {
        let mut dims = match self.model.preset.as_str() {
            "desk" => ModelDims::desk(corpus.genres.len()),
            "paper" => ModelDims::paper_default(corpus.genres.len()),
            other => {
                return Err(PipelineError::usage(format!(
                    "unknown model preset {other}; use desk or paper"
                )))
            }
        };
        if let Some(g) = self.model.genre_count {
            if g != corpus.genres.len() {
                return Err(PipelineError::usage(format!(
                    "config says {g} genres but the corpus has {}",
                    corpus.genres.len()
                )));
            }
        }
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.model.$field { dims.$field = v; })*
            };
        }
        apply!(
            common_dim,
            clip_hidden,
            clip_dim,
            seq_hidden,
            seq_dim,
            bottleneck_hidden,
            bottleneck_dim,
            classifier_hidden,
            head_hidden,
            head_dim,
            n_clips,
            sequences,
            netvlad_clusters
        );

        // Expert inventory: union over all trailers, dims must agree.
        let mut inventory: BTreeMap<String, usize> = BTreeMap::new();
        for t in &corpus.trailers {
            for (name, track) in &t.tracks {
                match inventory.get(name) {
                    None => {
                        inventory.insert(name.clone(), track.native_dim);
                    }
                    Some(&dim) if dim != track.native_dim => {
                        return Err(PipelineError::consistency(format!(
                            "expert {name} has native dim {dim} and {} in different trailers",
                            track.native_dim
                        )));
                    }
                    _ => {}
                }
            }
        }
        let experts: Vec<ExpertSpec> = inventory
            .into_iter()
            .map(|(name, native_dim)| {
                let aggregator = if self.model.netvlad_experts.iter().any(|n| *n == name) {
                    Aggregator::NetVlad
                } else {
                    Aggregator::Mean
                };
                ExpertSpec {
                    name,
                    native_dim,
                    aggregator,
                }
            })
            .collect();

        let fusion_mode: FusionMode = parse_fusion_mode(&self.model.fusion_mode)?;
        Ok(ModelConfig {
            dims,
            experts,
            fusion_mode,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig<f32>> {
        let t = &self.train;
        Ok(TrainConfig {
            batch_size: t.batch_size,
            supervised_epochs: t.supervised_epochs,
            finetune_epochs: t.finetune_epochs,
            supervised_lr: t.supervised_lr as f32,
            finetune_lr: t.finetune_lr as f32,
            warm_epochs: t.warm_epochs,
            min_lr: t.min_lr as f32,
            temperature: t.temperature as f32,
            denominator_mode: parse_denominator(&t.denominator_mode)?,
            eval_threshold: t.eval_threshold as f32,
            seed: t.seed,
            deterministic: t.deterministic,
        })
    }
}

/// TOML form of a synthetic corpus spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFile {
    pub synthetic: SyntheticSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub genre_count: usize,
    pub substyles_per_genre: usize,
    pub trailers: usize,
    pub clips_per_trailer: [usize; 2],
    pub label_cardinality_weights: Vec<f64>,
    pub prototype_noise_sigma: f64,
    pub substyle_strength: f64,
    pub secondary_weight: f64,
    pub expert_specialization: f64,
    pub clip_expert_dropout: f64,
    pub noise_expert: bool,
    pub per_clip_genres: bool,
    pub seed: u64,
    pub experts: Vec<SyntheticExpert>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticExpert {
    pub name: String,
    pub native_dim: usize,
    pub frames_per_clip: [usize; 2],
}

impl SyntheticSection {
    pub fn from_spec(spec: &SyntheticSpec) -> Self {
        SyntheticSection {
            genre_count: spec.genre_count,
            substyles_per_genre: spec.substyles_per_genre,
            trailers: spec.trailers,
            clips_per_trailer: [spec.clips_per_trailer.0, spec.clips_per_trailer.1],
            label_cardinality_weights: spec.label_cardinality_weights.clone(),
            prototype_noise_sigma: spec.prototype_noise_sigma,
            substyle_strength: spec.substyle_strength,
            secondary_weight: spec.secondary_weight,
            expert_specialization: spec.expert_specialization,
            clip_expert_dropout: spec.clip_expert_dropout,
            noise_expert: spec.noise_expert,
            per_clip_genres: spec.per_clip_genres,
            seed: spec.seed,
            experts: spec
                .experts
                .iter()
                .map(|e| SyntheticExpert {
                    name: e.name.clone(),
                    native_dim: e.native_dim,
                    frames_per_clip: [e.frames_per_clip.0, e.frames_per_clip.1],
                })
                .collect(),
        }
    }

    pub fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            genre_count: self.genre_count,
            substyles_per_genre: self.substyles_per_genre,
            trailers: self.trailers,
            experts: self
                .experts
                .iter()
                .map(|e| ExpertGenSpec::new(&e.name, e.native_dim, (e.frames_per_clip[0], e.frames_per_clip[1])))
                .collect(),
            clips_per_trailer: (self.clips_per_trailer[0], self.clips_per_trailer[1]),
            label_cardinality_weights: self.label_cardinality_weights.clone(),
            prototype_noise_sigma: self.prototype_noise_sigma,
            substyle_strength: self.substyle_strength,
            secondary_weight: self.secondary_weight,
            expert_specialization: self.expert_specialization,
            clip_expert_dropout: self.clip_expert_dropout,
            noise_expert: self.noise_expert,
            per_clip_genres: self.per_clip_genres,
            seed: self.seed,
        }
    }
}

pub fn load_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::usage(format!("cannot read spec {}: {e}", path.display())))?;
    let file: SyntheticFile =
        toml::from_str(&text).map_err(|e| PipelineError::Toml(format!("{}: {e}", path.display())))?;
    Ok(file.synthetic.to_spec())
}
