// Scratch harness for the contrastive phase. Not part of the library.

use std::time::Instant;

use mmfuse_core::corpus::{generate_synthetic, split_dataset, Corpus, ExpertGenSpec, SyntheticSpec};
use mmfuse_core::model::{Aggregator, ExpertSpec, FusionMode, ModelConfig, ModelDims};
use mmfuse_core::retrieval::EmbeddingIndex;
use mmfuse_core::train::{TrainConfig, Trainer};

fn purity_at_5(trainer: &Trainer<f32>, corpus: &Corpus<f32>, queries: &[String]) -> f64 {
    let all_ids: Vec<String> = corpus.trailers.iter().map(|t| t.id.clone()).collect();
    let index = EmbeddingIndex::build(&trainer.model, corpus, &all_ids).unwrap();
    let mut total = 0.0;
    for q in queries {
        let qr = corpus.find(q).unwrap();
        let key = (qr.primary_genre(), qr.primary_substyle().unwrap());
        let result = index.query_by_id(q, 5).unwrap();
        let mut hits = 0;
        for (id, _) in &result.hits {
            let r = corpus.find(id).unwrap();
            if (r.primary_genre(), r.primary_substyle().unwrap()) == key {
                hits += 1;
            }
        }
        total += hits as f64 / result.hits.len() as f64;
    }
    total / queries.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let sup_epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let sup_lr: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let trailers: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(120);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);

    let spec = SyntheticSpec {
        genre_count: 6,
        substyles_per_genre: 2,
        trailers,
        experts: ExpertGenSpec::standard_desk(),
        clips_per_trailer: (18, 27),
        prototype_noise_sigma: 0.08,
        substyle_strength: 0.35,
        label_cardinality_weights: vec![0.75, 0.25],
        seed,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic::<f32>(&spec).unwrap().corpus;
    let split = split_dataset(&corpus, (0.8, 0.1, 0.1), seed).unwrap();

    let model_config = ModelConfig {
        dims: ModelDims::desk(6),
        experts: vec![
            ExpertSpec { name: "appearance".into(), native_dim: 48, aggregator: Aggregator::Mean },
            ExpertSpec { name: "scene".into(), native_dim: 32, aggregator: Aggregator::Mean },
            ExpertSpec { name: "motion".into(), native_dim: 32, aggregator: Aggregator::NetVlad },
            ExpertSpec { name: "audio".into(), native_dim: 16, aggregator: Aggregator::NetVlad },
        ],
        fusion_mode: FusionMode::Gated,
    };
    let train_config = TrainConfig::<f32> {
        supervised_epochs: sup_epochs,
        supervised_lr: sup_lr,
        finetune_epochs: 50,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model_config, &corpus, &split, train_config).unwrap();
    let t0 = Instant::now();
    trainer
        .run_supervised(&corpus, &split, |_, stats| {
            if stats.epoch % 20 == 0 || stats.epoch + 1 == sup_epochs {
                println!(
                    "sup {:3} train {:.4} val {:.4} f1 {:.4}",
                    stats.epoch,
                    stats.train_loss,
                    stats.val_loss.unwrap_or(f32::NAN),
                    stats.val_f1_weighted.unwrap_or(f32::NAN)
                );
            }
            Ok(())
        })
        .unwrap();
    println!("supervised done in {:?}", t0.elapsed());

    let report = trainer.evaluate(&corpus, &split.test).unwrap();
    println!("coarse test f1_w {:.4} ap_w {:.4}", report.f1_weighted, report.ap_support_weighted);

    let sil_ids = &split.val;
    let pre_sil = trainer.silhouette_primary(&corpus, sil_ids).unwrap().unwrap();
    let pre_purity = purity_at_5(&trainer, &corpus, &split.test);
    println!("pre-finetune: silhouette {pre_sil:.4}  purity@5 {pre_purity:.4}");

    trainer.begin_finetune();
    let t1 = Instant::now();
    trainer
        .run_finetune(&corpus, &split, sil_ids, |_, stats| {
            if stats.epoch % 10 == 0 || stats.epoch + 1 == 50 {
                println!(
                    "ft {:3} lr {:.2e} loss {:.4} sil {:.4}",
                    stats.epoch,
                    stats.lr,
                    stats.train_loss,
                    stats.silhouette.unwrap_or(f32::NAN)
                );
            }
            Ok(())
        })
        .unwrap();
    println!("finetune done in {:?}", t1.elapsed());

    let post_sil = trainer.silhouette_primary(&corpus, sil_ids).unwrap().unwrap();
    let post_purity = purity_at_5(&trainer, &corpus, &split.test);
    let report2 = trainer.evaluate(&corpus, &split.test).unwrap();
    println!("post-finetune: silhouette {post_sil:.4}  purity@5 {post_purity:.4}  f1_w {:.4}", report2.f1_weighted);
    println!(
        "VERDICT seed {seed}: silhouette {} ({pre_sil:.4} -> {post_sil:.4}), purity {} ({pre_purity:.4} -> {post_purity:.4})",
        if post_sil < pre_sil { "DOWN ok" } else { "UP bad" },
        if post_purity > pre_purity { "UP ok" } else { "DOWN bad" },
    );
}
