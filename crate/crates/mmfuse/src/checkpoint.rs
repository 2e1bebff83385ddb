//! Checkpoint format: everything needed to resume training bit-exactly.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic "GFCK" | version u32 | config_len u32 | config JSON (UTF-8)
//! | tensor_count u32
//! | per tensor: name_len u16, name UTF-8, dtype u8 (0 = f32, 1 = f64),
//!   rank u8, dims u32[rank], values little-endian
//! ```
//!
//! The config blob carries the architecture, the training configuration,
//! the phase/epoch cursor, the optimizer constants and the RNG state (as
//! decimal strings; u64 does not survive JSON numbers). Model parameters,
//! optimizer moments and the positive class weights travel as tensors.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use mmfuse_core::loss::DenominatorMode;
use mmfuse_core::model::{Aggregator, ExpertSpec, FusionMode, FusionModel, ModelConfig, ModelDims};
use mmfuse_core::nn::{Activation, DenseLayer, Parameterized};
use mmfuse_core::optim::{Adam, AdamConfig, MomentSlot};
use mmfuse_core::rng::SeededRng;
use mmfuse_core::train::{Phase, TrainConfig, Trainer};

use crate::error::{PipelineError, Result};

pub const CKPT_MAGIC: &[u8; 4] = b"GFCK";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimsBlob {
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
    pub n_clips: usize,
    pub sequences: usize,
    pub genre_count: usize,
    pub netvlad_clusters: usize,
}

impl From<&ModelDims> for DimsBlob {
    fn from(d: &ModelDims) -> Self {
        DimsBlob {
            common_dim: d.common_dim,
            clip_hidden: d.clip_hidden,
            clip_dim: d.clip_dim,
            seq_hidden: d.seq_hidden,
            seq_dim: d.seq_dim,
            bottleneck_hidden: d.bottleneck_hidden,
            bottleneck_dim: d.bottleneck_dim,
            classifier_hidden: d.classifier_hidden,
            head_hidden: d.head_hidden,
            head_dim: d.head_dim,
            n_clips: d.n_clips,
            sequences: d.sequences,
            genre_count: d.genre_count,
            netvlad_clusters: d.netvlad_clusters,
        }
    }
}

impl From<&DimsBlob> for ModelDims {
    fn from(d: &DimsBlob) -> Self {
        ModelDims {
            common_dim: d.common_dim,
            clip_hidden: d.clip_hidden,
            clip_dim: d.clip_dim,
            seq_hidden: d.seq_hidden,
            seq_dim: d.seq_dim,
            bottleneck_hidden: d.bottleneck_hidden,
            bottleneck_dim: d.bottleneck_dim,
            classifier_hidden: d.classifier_hidden,
            head_hidden: d.head_hidden,
            head_dim: d.head_dim,
            n_clips: d.n_clips,
            sequences: d.sequences,
            genre_count: d.genre_count,
            netvlad_clusters: d.netvlad_clusters,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertBlob {
    pub name: String,
    pub native_dim: usize,
    pub aggregator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainBlob {
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

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: String,
    pub epoch: usize,
    pub dims: DimsBlob,
    pub experts: Vec<ExpertBlob>,
    pub fusion_mode: String,
    pub train: TrainBlob,
    pub optimizer_step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// xoshiro256** words, decimal strings.
    pub rng_state: [String; 4],
    pub has_seq_head: bool,
}

pub fn fusion_mode_name(mode: FusionMode) -> &'static str {
    match mode {
        FusionMode::Gated => "gated",
        FusionMode::Concat => "concat",
    }
}

pub fn parse_fusion_mode(name: &str) -> Result<FusionMode> {
    match name {
        "gated" => Ok(FusionMode::Gated),
        "concat" => Ok(FusionMode::Concat),
        other => Err(PipelineError::format(format!("unknown fusion mode {other}"))),
    }
}

pub fn aggregator_name(a: Aggregator) -> &'static str {
    match a {
        Aggregator::Mean => "mean",
        Aggregator::NetVlad => "netvlad",
    }
}

pub fn parse_aggregator(name: &str) -> Result<Aggregator> {
    match name {
        "mean" => Ok(Aggregator::Mean),
        "netvlad" => Ok(Aggregator::NetVlad),
        other => Err(PipelineError::format(format!("unknown aggregator {other}"))),
    }
}

pub fn denominator_name(mode: DenominatorMode) -> &'static str {
    match mode {
        DenominatorMode::IncludePositive => "include-positive",
        DenominatorMode::ExcludePositive => "exclude-positive",
    }
}

pub fn parse_denominator(name: &str) -> Result<DenominatorMode> {
    match name {
        "include-positive" => Ok(DenominatorMode::IncludePositive),
        "exclude-positive" => Ok(DenominatorMode::ExcludePositive),
        other => Err(PipelineError::format(format!("unknown denominator mode {other}"))),
    }
}

fn train_blob(cfg: &TrainConfig<f32>) -> TrainBlob {
    TrainBlob {
        batch_size: cfg.batch_size,
        supervised_epochs: cfg.supervised_epochs,
        finetune_epochs: cfg.finetune_epochs,
        supervised_lr: cfg.supervised_lr as f64,
        finetune_lr: cfg.finetune_lr as f64,
        warm_epochs: cfg.warm_epochs,
        min_lr: cfg.min_lr as f64,
        temperature: cfg.temperature as f64,
        denominator_mode: denominator_name(cfg.denominator_mode).to_string(),
        eval_threshold: cfg.eval_threshold as f64,
        seed: cfg.seed,
        deterministic: cfg.deterministic,
    }
}

fn train_config_from(blob: &TrainBlob) -> Result<TrainConfig<f32>> {
    Ok(TrainConfig {
        batch_size: blob.batch_size,
        supervised_epochs: blob.supervised_epochs,
        finetune_epochs: blob.finetune_epochs,
        supervised_lr: blob.supervised_lr as f32,
        finetune_lr: blob.finetune_lr as f32,
        warm_epochs: blob.warm_epochs,
        min_lr: blob.min_lr as f32,
        temperature: blob.temperature as f32,
        denominator_mode: parse_denominator(&blob.denominator_mode)?,
        eval_threshold: blob.eval_threshold as f32,
        seed: blob.seed,
        deterministic: blob.deterministic,
    })
}

struct TensorWriter<W: Write> {
    inner: W,
    count: u32,
}

impl<W: Write> TensorWriter<W> {
    fn write(&mut self, name: &str, dims: &[u32], values: &[f32]) -> Result<()> {
        let bytes = name.as_bytes();
        self.inner.write_all(&(bytes.len() as u16).to_le_bytes())?;
        self.inner.write_all(bytes)?;
        self.inner.write_all(&[0u8])?; // dtype f32
        self.inner.write_all(&[dims.len() as u8])?;
        for d in dims {
            self.inner.write_all(&d.to_le_bytes())?;
        }
        debug_assert_eq!(dims.iter().product::<u32>() as usize, values.len());
        for v in values {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        self.count += 1;
        Ok(())
    }
}

/// Saves the full trainer state.
pub fn save_checkpoint(trainer: &mut Trainer<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let meta = CheckpointMeta {
        phase: trainer.phase.as_str().to_string(),
        epoch: trainer.epoch,
        dims: DimsBlob::from(&trainer.model.config.dims),
        experts: trainer
            .model
            .config
            .experts
            .iter()
            .map(|e| ExpertBlob {
                name: e.name.clone(),
                native_dim: e.native_dim,
                aggregator: aggregator_name(e.aggregator).to_string(),
            })
            .collect(),
        fusion_mode: fusion_mode_name(trainer.model.config.fusion_mode).to_string(),
        train: train_blob(&trainer.config),
        optimizer_step: trainer.optimizer.step_count(),
        beta1: trainer.optimizer.config.beta1 as f64,
        beta2: trainer.optimizer.config.beta2 as f64,
        epsilon: trainer.optimizer.config.epsilon as f64,
        rng_state: {
            let s = trainer.rng.state();
            [
                s[0].to_string(),
                s[1].to_string(),
                s[2].to_string(),
                s[3].to_string(),
            ]
        },
        has_seq_head: trainer.model.seq_head().is_some(),
    };
    let config_json = serde_json::to_vec(&meta)?;

    // Collect tensors first so the count prefix is exact.
    let mut tensors: Vec<(String, Vec<u32>, Vec<f32>)> = Vec::new();
    trainer.model.for_each_param(&mut |name, p, _| {
        tensors.push((name.to_string(), vec![p.len() as u32], p.to_vec()));
    });
    for slot in trainer.optimizer.slots() {
        tensors.push((
            format!("optim.m.{}", slot.name),
            vec![slot.m.len() as u32],
            slot.m.clone(),
        ));
        tensors.push((
            format!("optim.v.{}", slot.name),
            vec![slot.v.len() as u32],
            slot.v.clone(),
        ));
        tensors.push((
            format!("optim.vmax.{}", slot.name),
            vec![slot.v_max.len() as u32],
            slot.v_max.clone(),
        ));
    }
    tensors.push((
        "trainer.pos_weights".to_string(),
        vec![trainer.pos_weights.len() as u32],
        trainer.pos_weights.clone(),
    ));
    if let Some(head) = trainer.model.seq_head_mut() {
        let mut pairs: Vec<(String, Vec<f32>)> = Vec::new();
        head.for_each_param(&mut |name, p, _| {
            pairs.push((format!("seq_head.{name}"), p.to_vec()));
        });
        for (name, values) in pairs {
            let len = values.len() as u32;
            tensors.push((name, vec![len], values));
        }
    }

    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&(config_json.len() as u32).to_le_bytes())?;
    w.write_all(&config_json)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    let mut tw = TensorWriter { inner: w, count: 0 };
    for (name, dims, values) in &tensors {
        tw.write(name, dims, values)?;
    }
    tw.inner.flush()?;
    Ok(())
}

struct CkptReader {
    inner: BufReader<fs::File>,
    offset: usize,
    path: String,
}

impl CkptReader {
    fn take(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| {
            PipelineError::format(format!("{}: truncated at offset {}", self.path, self.offset))
        })?;
        self.offset += buf.len();
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b)?;
        Ok(b[0])
    }
}

/// Loads a checkpoint into a fully reconstructed trainer.
pub fn load_checkpoint(path: &Path) -> Result<Trainer<f32>> {
    let file = fs::File::open(path)
        .map_err(|e| PipelineError::format(format!("cannot open {}: {e}", path.display())))?;
    let mut r = CkptReader {
        inner: BufReader::new(file),
        offset: 0,
        path: path.display().to_string(),
    };
    let mut magic = [0u8; 4];
    r.take(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(PipelineError::format(format!("{}: bad magic", r.path)));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(PipelineError::format(format!(
            "{}: unsupported checkpoint version {version}",
            r.path
        )));
    }
    let config_len = r.u32()? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.take(&mut config_bytes)?;
    let meta: CheckpointMeta = serde_json::from_slice(&config_bytes)
        .map_err(|e| PipelineError::format(format!("{}: bad config blob: {e}", r.path)))?;

    let tensor_count = r.u32()? as usize;
    let mut tensors: Vec<(String, Vec<f32>)> = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = r.u16()? as usize;
        let mut name = vec![0u8; name_len];
        r.take(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| PipelineError::format(format!("{}: tensor name not UTF-8", r.path)))?;
        let dtype = r.u8()?;
        if dtype != 0 {
            return Err(PipelineError::format(format!(
                "{}: tensor {name}: unsupported dtype {dtype}",
                r.path
            )));
        }
        let rank = r.u8()? as usize;
        let mut len = 1usize;
        for _ in 0..rank {
            len *= r.u32()? as usize;
        }
        let mut bytes = vec![0u8; len * 4];
        r.take(&mut bytes).map_err(|_| {
            PipelineError::format(format!("{}: tensor {name} truncated", r.path))
        })?;
        let mut values = vec![0f32; len];
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            values[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        tensors.push((name, values));
    }

    build_trainer(meta, tensors, &r.path)
}

fn build_trainer(
    meta: CheckpointMeta,
    tensors: Vec<(String, Vec<f32>)>,
    path: &str,
) -> Result<Trainer<f32>> {
    let model_config = ModelConfig {
        dims: ModelDims::from(&meta.dims),
        experts: meta
            .experts
            .iter()
            .map(|e| {
                Ok(ExpertSpec {
                    name: e.name.clone(),
                    native_dim: e.native_dim,
                    aggregator: parse_aggregator(&e.aggregator)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        fusion_mode: parse_fusion_mode(&meta.fusion_mode)?,
    };
    let mut scratch_rng = SeededRng::new(0);
    let mut model =
        FusionModel::<f32>::new(model_config, &mut scratch_rng).map_err(PipelineError::Core)?;

    let lookup = |name: &str| -> Result<&Vec<f32>> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| PipelineError::format(format!("{path}: missing tensor {name}")))
    };

    // Model parameters.
    let mut fill_err: Option<PipelineError> = None;
    model.for_each_param(&mut |name, p, _| {
        if fill_err.is_some() {
            return;
        }
        match tensors.iter().find(|(n, _)| n == name) {
            None => fill_err = Some(PipelineError::format(format!("{path}: missing tensor {name}"))),
            Some((_, values)) => {
                if values.len() != p.len() {
                    fill_err = Some(PipelineError::format(format!(
                        "{path}: tensor {name} has {} values, architecture needs {}",
                        values.len(),
                        p.len()
                    )));
                } else {
                    p.copy_from_slice(values);
                }
            }
        }
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    model.note_params_changed();

    // Optimizer slots follow the same visitation order.
    let mut slot_names: Vec<(String, usize)> = Vec::new();
    model.for_each_param(&mut |name, p, _| {
        slot_names.push((name.to_string(), p.len()));
    });
    let mut slots = Vec::with_capacity(slot_names.len());
    if meta.optimizer_step > 0 {
        for (name, len) in &slot_names {
            let m = lookup(&format!("optim.m.{name}"))?;
            let v = lookup(&format!("optim.v.{name}"))?;
            let v_max = lookup(&format!("optim.vmax.{name}"))?;
            if m.len() != *len || v.len() != *len || v_max.len() != *len {
                return Err(PipelineError::format(format!(
                    "{path}: optimizer state for {name} has the wrong shape"
                )));
            }
            slots.push(MomentSlot {
                name: name.clone(),
                m: m.clone(),
                v: v.clone(),
                v_max: v_max.clone(),
            });
        }
    }
    let optimizer = Adam::restore(
        AdamConfig {
            beta1: meta.beta1 as f32,
            beta2: meta.beta2 as f32,
            epsilon: meta.epsilon as f32,
        },
        meta.optimizer_step,
        slots,
    );

    if meta.has_seq_head {
        let d = &model.config.dims;
        let mut head = DenseLayer::new(d.seq_dim, d.genre_count, Activation::Identity, &mut scratch_rng);
        let w = lookup("seq_head.weight")?;
        let b = lookup("seq_head.bias")?;
        if w.len() != head.weight.len() || b.len() != head.bias.len() {
            return Err(PipelineError::format(format!(
                "{path}: sequence head tensors have the wrong shape"
            )));
        }
        head.weight.data_mut().copy_from_slice(w);
        head.bias.copy_from_slice(b);
        model.set_seq_head(Some(head));
    }

    let rng_state = [
        parse_u64(&meta.rng_state[0], path)?,
        parse_u64(&meta.rng_state[1], path)?,
        parse_u64(&meta.rng_state[2], path)?,
        parse_u64(&meta.rng_state[3], path)?,
    ];
    let rng = SeededRng::from_state(rng_state);
    let phase = match meta.phase.as_str() {
        "supervised" => Phase::Supervised,
        "finetune" => Phase::Finetune,
        other => return Err(PipelineError::format(format!("{path}: unknown phase {other}"))),
    };
    let pos_weights = lookup("trainer.pos_weights")?.clone();
    let config = train_config_from(&meta.train)?;
    Trainer::resume(model, optimizer, rng, config, pos_weights, meta.epoch, phase)
        .map_err(PipelineError::Core)
}

fn parse_u64(s: &str, path: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| PipelineError::format(format!("{path}: bad rng state word {s}")))
}
