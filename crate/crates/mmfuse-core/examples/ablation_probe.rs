// Scratch harness for the gated-vs-concat, sequence-length and label
// augmentation experiments. Not part of the library.

use mmfuse_core::corpus::{
    generate_synthetic, split_dataset, ExpertGenSpec, SyntheticSpec, NOISE_EXPERT_DIM,
    NOISE_EXPERT_NAME,
};
use mmfuse_core::model::{Aggregator, ExpertSpec, FusionMode, ModelConfig, ModelDims};
use mmfuse_core::retrieval::augment_labels;
use mmfuse_core::train::{TrainConfig, Trainer};

fn desk_experts(with_noise: bool) -> Vec<ExpertSpec> {
    let mut v = vec![
        ExpertSpec { name: "appearance".into(), native_dim: 48, aggregator: Aggregator::Mean },
        ExpertSpec { name: "scene".into(), native_dim: 32, aggregator: Aggregator::Mean },
        ExpertSpec { name: "motion".into(), native_dim: 32, aggregator: Aggregator::Mean },
        ExpertSpec { name: "audio".into(), native_dim: 16, aggregator: Aggregator::NetVlad },
    ];
    if with_noise {
        v.push(ExpertSpec {
            name: NOISE_EXPERT_NAME.into(),
            native_dim: NOISE_EXPERT_DIM,
            aggregator: Aggregator::Mean,
        });
    }
    v
}

fn gating_vs_concat(seed: u64, epochs: usize, lr: f32) {
    let sigma: f64 = std::env::var("PROBE_SIGMA").ok().and_then(|v| v.parse().ok()).unwrap_or(0.25);
    let trailers: usize = std::env::var("PROBE_TRAILERS").ok().and_then(|v| v.parse().ok()).unwrap_or(150);
    let spec = SyntheticSpec {
        genre_count: 6,
        substyles_per_genre: 2,
        trailers,
        experts: ExpertGenSpec::standard_desk(),
        clips_per_trailer: (10, 14),
        prototype_noise_sigma: sigma,
        expert_specialization: std::env::var("PROBE_SPEC").ok().and_then(|v| v.parse().ok()).unwrap_or(0.0),
        clip_expert_dropout: std::env::var("PROBE_DROP").ok().and_then(|v| v.parse().ok()).unwrap_or(0.0),
        noise_expert: true,
        seed,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic::<f32>(&spec).unwrap().corpus;
    let split = split_dataset(&corpus, (0.7, 0.1, 0.2), seed).unwrap();
    let mut results = Vec::new();
    for mode in [FusionMode::Gated, FusionMode::Concat] {
        let config = ModelConfig {
            dims: ModelDims::desk(6),
            experts: desk_experts(true),
            fusion_mode: mode,
        };
        let tc = TrainConfig::<f32> {
            supervised_epochs: epochs,
            supervised_lr: lr,
            seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config, &corpus, &split, tc).unwrap();
        trainer.run_supervised(&corpus, &split, |_, _| Ok(())).unwrap();
        let report = trainer.evaluate(&corpus, &split.test).unwrap();
        results.push((mode, report.ap_support_weighted, report.f1_weighted));
    }
    let (gated, concat) = (results[0].1, results[1].1);
    println!(
        "seed {seed}: gated ap_w {gated:.4} (f1 {:.4})  concat ap_w {concat:.4} (f1 {:.4})  -> {}",
        results[0].2,
        results[1].2,
        if gated >= concat { "GATED>=CONCAT ok" } else { "concat wins BAD" }
    );
}

fn seq_length(seed: u64, epochs: usize, lr: f32) {
    let spec = SyntheticSpec {
        genre_count: 6,
        substyles_per_genre: 2,
        trailers: 150,
        experts: ExpertGenSpec::standard_desk(),
        clips_per_trailer: (18, 27),
        prototype_noise_sigma: 0.35,
        seed,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic::<f32>(&spec).unwrap().corpus;
    let split = split_dataset(&corpus, (0.8, 0.1, 0.1), seed).unwrap();
    let mut out = Vec::new();
    for n_clips in [1usize, 9] {
        let mut dims = ModelDims::desk(6);
        dims.n_clips = n_clips;
        let config = ModelConfig {
            dims,
            experts: desk_experts(false),
            fusion_mode: FusionMode::Gated,
        };
        let tc = TrainConfig::<f32> {
            supervised_epochs: epochs,
            supervised_lr: lr,
            seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config, &corpus, &split, tc).unwrap();
        trainer.run_supervised(&corpus, &split, |_, _| Ok(())).unwrap();
        let report = trainer.evaluate(&corpus, &split.test).unwrap();
        out.push((n_clips, report.f1_weighted));
    }
    println!(
        "seed {seed}: n=1 f1 {:.4}  n=9 f1 {:.4}  -> {}",
        out[0].1,
        out[1].1,
        if out[1].1 >= out[0].1 { "9>=1 ok" } else { "BAD" }
    );
}

fn augmentation(seed: u64, epochs: usize, lr: f32) {
    let spec = SyntheticSpec {
        genre_count: 8,
        substyles_per_genre: 2,
        trailers: 200,
        experts: ExpertGenSpec::standard_desk(),
        clips_per_trailer: (10, 14),
        prototype_noise_sigma: 0.08,
        label_cardinality_weights: vec![0.0, 0.5, 0.35, 0.15],
        secondary_weight: 0.55,
        seed,
        ..SyntheticSpec::default()
    };
    let full = generate_synthetic::<f32>(&spec).unwrap().corpus;
    // Truncate: hide the last listed genre of every multi-genre trailer.
    let mut truncated = full.clone();
    let mut hidden: Vec<(String, usize)> = Vec::new();
    for t in truncated.trailers.iter_mut() {
        if t.genre_order.len() >= 2 {
            let gone = t.genre_order.pop().unwrap();
            t.labels[gone] = 0;
            t.substyles.retain(|(g, _)| *g != gone);
            hidden.push((t.id.clone(), gone));
        }
    }
    let split = split_dataset(&truncated, (0.8, 0.1, 0.1), seed).unwrap();
    let config = ModelConfig {
        dims: ModelDims::desk(8),
        experts: desk_experts(false),
        fusion_mode: FusionMode::Gated,
    };
    let tc = TrainConfig::<f32> {
        supervised_epochs: epochs,
        supervised_lr: lr,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, &truncated, &split, tc).unwrap();
    trainer.run_supervised(&truncated, &split, |_, _| Ok(())).unwrap();

    let mut recovered = 0usize;
    let mut oversize = 0usize;
    for (id, gone) in &hidden {
        let record = truncated.find(id).unwrap();
        let trunk = trainer.model.encode_trunk(record).unwrap();
        let (emb, _) = trainer.model.encode_trailer(&trunk).unwrap();
        let (logits, _) = trainer.model.classify(&emb).unwrap();
        let set = augment_labels(&logits, 0.30f32).unwrap();
        if set.contains(gone) {
            recovered += 1;
        }
        if set.len() > 6 {
            oversize += 1;
        }
    }
    let rate = recovered as f64 / hidden.len() as f64;
    println!(
        "seed {seed}: augmentation recovered {recovered}/{} = {rate:.3}, oversize {oversize}  -> {}",
        hidden.len(),
        if rate >= 0.70 && oversize == 0 { "ok" } else { "BAD" }
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("all");
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);
    let lr: f32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    if which == "gate" || which == "all" {
        let seeds: Vec<u64> = std::env::var("PROBE_SEEDS")
            .map(|v| v.split(',').map(|x| x.parse().unwrap()).collect())
            .unwrap_or_else(|_| vec![1, 2, 3]);
        for seed in seeds {
            gating_vs_concat(seed, epochs, lr);
        }
    }
    if which == "seq" || which == "all" {
        for seed in [1, 2, 3] {
            seq_length(seed, epochs, lr);
        }
    }
    if which == "aug" || which == "all" {
        for seed in [1] {
            augmentation(seed, epochs, lr);
        }
    }
}
