// Scratch harness for tuning desk-scale training. Not part of the library.

use std::time::Instant;

use mmfuse_core::corpus::{generate_synthetic, split_dataset, ExpertGenSpec, SyntheticSpec};
use mmfuse_core::model::{Aggregator, ExpertSpec, FusionMode, ModelConfig, ModelDims};
use mmfuse_core::train::{TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-5);
    let trailers: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);

    let spec = SyntheticSpec {
        genre_count: 6,
        substyles_per_genre: 2,
        trailers,
        experts: ExpertGenSpec::standard_desk(),
        clips_per_trailer: (10, 14),
        prototype_noise_sigma: 0.08,
        seed: 7,
        ..SyntheticSpec::default()
    };
    let t0 = Instant::now();
    let corpus = generate_synthetic::<f32>(&spec).unwrap().corpus;
    let split = split_dataset(&corpus, (0.8, 0.1, 0.1), 7).unwrap();
    println!(
        "corpus: {} trailers gen in {:?}; split {}/{}/{}",
        corpus.trailers.len(),
        t0.elapsed(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let model_config = ModelConfig {
        dims: ModelDims::desk(6),
        experts: vec![
            ExpertSpec { name: "appearance".into(), native_dim: 48, aggregator: Aggregator::Mean },
            ExpertSpec { name: "scene".into(), native_dim: 32, aggregator: Aggregator::Mean },
            ExpertSpec { name: "motion".into(), native_dim: 32, aggregator: Aggregator::Mean },
            ExpertSpec { name: "audio".into(), native_dim: 16, aggregator: Aggregator::NetVlad },
        ],
        fusion_mode: FusionMode::Gated,
    };
    let train_config = TrainConfig::<f32> {
        supervised_epochs: epochs,
        supervised_lr: lr,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model_config, &corpus, &split, train_config).unwrap();
    let t1 = Instant::now();
    trainer
        .run_supervised(&corpus, &split, |tr, stats| {
            if stats.epoch % 10 == 0 || stats.epoch + 1 == epochs {
                println!(
                    "epoch {:3} lr {:.2e} train {:.4} val {:.4} f1 {:.4}  [{:?}]",
                    stats.epoch,
                    stats.lr,
                    stats.train_loss,
                    stats.val_loss.unwrap_or(f32::NAN),
                    stats.val_f1_weighted.unwrap_or(f32::NAN),
                    t1.elapsed() / (stats.epoch as u32 + 1)
                );
            }
            let _ = tr;
            Ok(())
        })
        .unwrap();
    println!("total train time {:?}", t1.elapsed());
    let report = trainer.evaluate(&corpus, &split.test).unwrap();
    println!(
        "test: f1_w {:.4} p_w {:.4} r_w {:.4} ap(mean/pooled/weighted) {:.4}/{:.4}/{:.4}",
        report.f1_weighted,
        report.precision_weighted,
        report.recall_weighted,
        report.ap_per_genre_mean,
        report.ap_pooled,
        report.ap_support_weighted
    );
}
