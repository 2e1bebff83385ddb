//! Central finite-difference gradient checking.
//!
//! The harness is the independent oracle for every analytic backward pass
//! in this crate: it perturbs each parameter component in turn, recomputes
//! the loss, and compares `(f(θ+ε) − f(θ−ε)) / 2ε` against the accumulated
//! analytic gradient. It knows nothing about how the loss is computed; it
//! only needs parameter access and two loss closures.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::nn::Parameterized;

/// Outcome of a full gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport<F> {
    /// Worst relative error over the checked parameter components.
    pub max_rel_error: F,
    /// Name of the parameter holding the worst component.
    pub worst_param: String,
    /// Flat index of the worst component within that parameter.
    pub worst_index: usize,
    /// Number of components compared by relative error.
    pub checked: usize,
    /// Components where both gradients sat below the significance floor.
    pub skipped_small: usize,
    /// Worst |analytic - numeric| among the skipped components.
    pub max_abs_error_small: F,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error<F: Float>(analytic: F, numeric: F) -> F {
    let denom = analytic
        .abs()
        .max(numeric.abs())
        .max(F::from(1e-12).unwrap());
    (analytic - numeric).abs() / denom
}

/// Checks every parameter component of `model`.
///
/// `loss_and_grad` must zero the gradients, run forward + backward and
/// return the loss; it is called once. `loss_only` must run the same
/// forward computation without touching gradients; it is called twice per
/// component. A non-finite loss anywhere aborts with a numeric error.
pub fn grad_check<F, M, LG, LO>(
    model: &mut M,
    loss_and_grad: LG,
    loss_only: LO,
    eps: F,
) -> Result<GradCheckReport<F>>
where
    F: Float,
    M: Parameterized<F>,
    LG: FnMut(&mut M) -> Result<F>,
    LO: FnMut(&mut M) -> Result<F>,
{
    grad_check_floored(model, loss_and_grad, loss_only, eps, F::zero())
}

/// [`grad_check`] with a significance floor. A central difference has
/// absolute noise around `machine_eps * |loss| / (2 * eps)`, so components
/// whose analytic and numeric gradients both fall below `floor` cannot be
/// compared by relative error at all; they are instead required to agree
/// absolutely and are reported via `skipped_small` / `max_abs_error_small`.
/// `floor = 0` disables the floor.
pub fn grad_check_floored<F, M, LG, LO>(
    model: &mut M,
    mut loss_and_grad: LG,
    mut loss_only: LO,
    eps: F,
    floor: F,
) -> Result<GradCheckReport<F>>
where
    F: Float,
    M: Parameterized<F>,
    LG: FnMut(&mut M) -> Result<F>,
    LO: FnMut(&mut M) -> Result<F>,
{
    if eps <= F::zero() {
        return Err(CoreError::domain("grad_check eps must be positive"));
    }
    let base = loss_and_grad(model)?;
    if !base.is_finite() {
        return Err(CoreError::numeric("non-finite loss in grad_check"));
    }

    // Snapshot the analytic gradients; the perturbation loop below reuses
    // the model's parameter storage.
    let mut names: Vec<String> = Vec::new();
    let mut grads: Vec<Vec<F>> = Vec::new();
    model.for_each_param(&mut |name, _, g| {
        names.push(name.to_string());
        grads.push(g.to_vec());
    });

    let mut report = GradCheckReport {
        max_rel_error: F::zero(),
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        skipped_small: 0,
        max_abs_error_small: F::zero(),
    };

    for (slot, analytic) in grads.iter().enumerate() {
        for comp in 0..analytic.len() {
            let plus = eval_perturbed(model, &mut loss_only, slot, comp, eps)?;
            let minus = eval_perturbed(model, &mut loss_only, slot, comp, -eps)?;
            let numeric = (plus - minus) / (eps + eps);
            let a = analytic[comp];
            if a.abs() < floor && numeric.abs() < floor {
                report.skipped_small += 1;
                report.max_abs_error_small = report.max_abs_error_small.max((a - numeric).abs());
                continue;
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = names[slot].clone();
                report.worst_index = comp;
            }
        }
    }
    Ok(report)
}

fn eval_perturbed<F, M, LO>(
    model: &mut M,
    loss_only: &mut LO,
    slot: usize,
    comp: usize,
    delta: F,
) -> Result<F>
where
    F: Float,
    M: Parameterized<F>,
    LO: FnMut(&mut M) -> Result<F>,
{
    shift_param(model, slot, comp, delta);
    let value = loss_only(model);
    shift_param(model, slot, comp, -delta);
    let value = value?;
    if !value.is_finite() {
        return Err(CoreError::numeric("non-finite loss in grad_check"));
    }
    Ok(value)
}

fn shift_param<F: Float, M: Parameterized<F>>(model: &mut M, slot: usize, comp: usize, delta: F) {
    let mut idx = 0usize;
    model.for_each_param(&mut |_, p, _| {
        if idx == slot {
            p[comp] = p[comp] + delta;
        }
        idx += 1;
    });
}

/// One entry of the standard check suite.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Components below the significance floor (see `grad_check_floored`).
    pub skipped_small: usize,
    /// Worst absolute disagreement among the skipped components.
    pub max_abs_error_small: f64,
    /// Parameter holding the worst component, for diagnostics.
    pub worst_param: String,
}

/// Runs the full 64-bit check battery: each dense activation, NetVLAD, the
/// GEM, the gating unit, and the composed network under both losses on a
/// tiny synthetic corpus. This is what the `gradcheck` command executes.
pub fn standard_suite(seed: u64) -> Result<alloc::vec::Vec<SuiteEntry>> {
    use crate::corpus::{generate_synthetic, ExpertGenSpec, SyntheticSpec};
    use crate::loss::{
        batch_contrastive_loss, bce_with_logits, BceConfig, NtxentConfig, Reduction,
    };
    use crate::model::{
        Aggregator, ExpertSpec, FusionMode, FusionModel, ModelConfig, ModelDims,
    };
    use crate::nn::{zero_grads, Activation, DenseLayer, Mlp2};
    use crate::rng::SeededRng;
    use crate::tensor::dot;
    use alloc::string::ToString;
    use alloc::vec::Vec;

    let eps = 1e-5f64;
    // Components whose gradient is this small drown in the difference
    // noise of an O(1) loss; they are held to absolute agreement instead.
    const GRAD_FLOOR: f64 = 1e-5;
    let mut rng = SeededRng::new(seed);
    let mut entries = Vec::new();

    // Individual dense layers, one per activation.
    for (label, act) in [
        ("dense-identity", Activation::Identity),
        ("dense-relu", Activation::Relu),
        ("dense-sigmoid", Activation::Sigmoid),
    ] {
        let mut layer: DenseLayer<f64> = DenseLayer::new(5, 4, act, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let report = grad_check(
            &mut layer,
            |l| {
                zero_grads(l);
                let (out, cache) = l.forward(&x)?;
                l.backward(&cache, &w, None);
                Ok(dot(&out, &w))
            },
            |l| Ok(dot(&l.forward(&x)?.0, &w)),
            eps,
        )?;
        entries.push(SuiteEntry {
            name: label.to_string(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            skipped_small: report.skipped_small,
            max_abs_error_small: report.max_abs_error_small,
            worst_param: report.worst_param,
        });
    }

    // Two-layer relu MLP.
    {
        let mut mlp: Mlp2<f64> = Mlp2::new(6, 5, 4, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let report = grad_check(
            &mut mlp,
            |m| {
                zero_grads(m);
                let (out, cache) = m.forward(&x)?;
                m.backward(&cache, &w, None);
                Ok(dot(&out, &w))
            },
            |m| Ok(dot(&m.forward(&x)?.0, &w)),
            eps,
        )?;
        entries.push(SuiteEntry {
            name: "mlp2-relu".to_string(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            skipped_small: report.skipped_small,
            max_abs_error_small: report.max_abs_error_small,
            worst_param: report.worst_param,
        });
    }

    // NetVLAD.
    {
        let mut vlad: crate::aggregate::NetVlad<f64> =
            crate::aggregate::NetVlad::new(3, 4, &mut rng)?;
        let mut data = Vec::new();
        for _ in 0..12 {
            data.push(rng.uniform(-1.0, 1.0));
        }
        let frames = crate::tensor::Tensor2::from_data(3, 4, data)?;
        let w: Vec<f64> = (0..vlad.out_dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let report = grad_check(
            &mut vlad,
            |v| {
                zero_grads(v);
                let (out, cache) = v.forward(&frames)?;
                v.backward(&frames, &cache, &w);
                Ok(dot(&out, &w))
            },
            |v| Ok(dot(&v.forward(&frames)?.0, &w)),
            eps,
        )?;
        entries.push(SuiteEntry {
            name: "netvlad".to_string(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            skipped_small: report.skipped_small,
            max_abs_error_small: report.max_abs_error_small,
            worst_param: report.worst_param,
        });
    }

    // Gated Embedding Module.
    {
        let mut gem: crate::gating::Gem<f64> = crate::gating::Gem::new(5, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let report = grad_check(
            &mut gem,
            |g| {
                zero_grads(g);
                let (out, cache) = g.forward(&x)?;
                g.backward(&cache, &w, None);
                Ok(dot(&out, &w))
            },
            |g| Ok(dot(&g.forward(&x)?.0, &w)),
            eps,
        )?;
        entries.push(SuiteEntry {
            name: "gem".to_string(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            skipped_small: report.skipped_small,
            max_abs_error_small: report.max_abs_error_small,
            worst_param: report.worst_param,
        });
    }

    // Collaborative gating unit.
    {
        let mut unit: crate::gating::GatingUnit<f64> = crate::gating::GatingUnit::new(4, &mut rng);
        let experts: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let w: Vec<f64> = (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let report = grad_check(
            &mut unit,
            |u| {
                zero_grads(u);
                let (modulated, cache) = u.forward(&experts)?;
                let d_mod: Vec<Vec<f64>> =
                    (0..3).map(|e| w[e * 4..(e + 1) * 4].to_vec()).collect();
                let mut d_experts = alloc::vec![alloc::vec![0.0; 4]; 3];
                u.backward(&cache, &d_mod, &mut d_experts);
                let mut acc = 0.0;
                for (e, m) in modulated.iter().enumerate() {
                    acc += dot(m, &w[e * 4..(e + 1) * 4]);
                }
                Ok(acc)
            },
            |u| {
                let (modulated, _) = u.forward(&experts)?;
                let mut acc = 0.0;
                for (e, m) in modulated.iter().enumerate() {
                    acc += dot(m, &w[e * 4..(e + 1) * 4]);
                }
                Ok(acc)
            },
            eps,
        )?;
        entries.push(SuiteEntry {
            name: "gating-unit".to_string(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            skipped_small: report.skipped_small,
            max_abs_error_small: report.max_abs_error_small,
            worst_param: report.worst_param,
        });
    }

    // The composed network. Tiny dims, two experts (one NetVLAD), a
    // four-trailer corpus.
    let spec = SyntheticSpec {
        genre_count: 3,
        substyles_per_genre: 1,
        trailers: 4,
        experts: alloc::vec![
            ExpertGenSpec::new("appearance", 7, (2, 3)),
            ExpertGenSpec::new("audio", 4, (2, 3)),
        ],
        clips_per_trailer: (4, 6),
        label_cardinality_weights: alloc::vec![0.6, 0.4],
        seed: seed ^ 0x5EED,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic::<f64>(&spec)?.corpus;
    let config = ModelConfig {
        dims: ModelDims {
            common_dim: 6,
            clip_hidden: 8,
            clip_dim: 5,
            seq_hidden: 7,
            seq_dim: 6,
            bottleneck_hidden: 9,
            bottleneck_dim: 8,
            classifier_hidden: 6,
            head_hidden: 6,
            head_dim: 4,
            n_clips: 2,
            sequences: 2,
            genre_count: 3,
            netvlad_clusters: 2,
        },
        experts: alloc::vec![
            ExpertSpec {
                name: "appearance".to_string(),
                native_dim: 7,
                aggregator: Aggregator::Mean,
            },
            ExpertSpec {
                name: "audio".to_string(),
                native_dim: 4,
                aggregator: Aggregator::NetVlad,
            },
        ],
        fusion_mode: FusionMode::Gated,
    };

    // Finite differences are invalid when a relu pre-activation sits
    // within eps of zero: the two-sided difference straddles the kink.
    // Re-seed the model until every margin clears the step size.
    let kink_margin = 2e-4;
    let model_for = |records: &[&crate::corpus::TrailerRecord<f64>],
                     base: u64|
     -> Result<FusionModel<f64>> {
        for attempt in 0..32u64 {
            let mut mrng = SeededRng::new(base.wrapping_add(attempt.wrapping_mul(0x9E37)));
            let model = FusionModel::new(config.clone(), &mut mrng)?;
            let mut margin = f64::INFINITY;
            for r in records {
                margin = margin.min(model.min_relu_margin(r)?);
            }
            if margin > kink_margin {
                return Ok(model);
            }
        }
        Err(CoreError::numeric(
            "no kink-free model initialization found for the composed-network check",
        ))
    };

    // Supervised loss through the whole network.
    {
        let bce = BceConfig::uniform(3);
        let record = &corpus.trailers[0];
        let mut model = model_for(&[record], rng.next_u64())?;
        let loss_fn = |m: &FusionModel<f64>| -> Result<(f64, Vec<f64>, _, _)> {
            let trunk = m.encode_trunk(record)?;
            let (emb, enc) = m.encode_trailer(&trunk)?;
            let (logits, ccache) = m.classify(&emb)?;
            let (loss, d_logits) = bce_with_logits(&logits, &record.label_targets(), 1.0, &bce)?;
            Ok((loss, d_logits, (trunk, enc), ccache))
        };
        let report = grad_check_floored(
            &mut model,
            |m| {
                zero_grads(m);
                let (loss, d_logits, (trunk, enc), ccache) = loss_fn(m)?;
                let d_bn = m.backward_classifier(&ccache, &d_logits);
                m.backward_trailer(record, &trunk, &[(&enc, d_bn.as_slice())])?;
                Ok(loss)
            },
            |m| Ok(loss_fn(m)?.0),
            eps,
            GRAD_FLOOR,
        )?;
        entries.push(SuiteEntry {
            name: "full-net-bce".to_string(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            skipped_small: report.skipped_small,
            max_abs_error_small: report.max_abs_error_small,
            worst_param: report.worst_param,
        });
    }

    // Contrastive loss through the whole network, two trailers, four views.
    {
        let records = [&corpus.trailers[1], &corpus.trailers[2]];
        let mut model = model_for(&records, rng.next_u64())?;
        let ntx = NtxentConfig::new(0.5, crate::loss::DenominatorMode::IncludePositive)?;
        let report = grad_check_floored(
            &mut model,
            |m| {
                zero_grads(m);
                let mut trunks = Vec::new();
                let mut encs = Vec::new();
                let mut head_caches = Vec::new();
                let mut views = Vec::new();
                for record in records {
                    let trunk = m.encode_trunk(record)?;
                    let (ids_a, ids_b) = crate::train::split_views(trunk.seq_embs.len())?;
                    let (emb_a, enc_a) = m.encode_from_trunk(&trunk, &ids_a)?;
                    let (emb_b, enc_b) = m.encode_from_trunk(&trunk, &ids_b)?;
                    let (z_a, hc_a) = m.project_view(&emb_a)?;
                    let (z_b, hc_b) = m.project_view(&emb_b)?;
                    trunks.push(trunk);
                    encs.push((enc_a, enc_b));
                    head_caches.push((hc_a, hc_b));
                    views.push(z_a);
                    views.push(z_b);
                }
                let (loss, d_views) = batch_contrastive_loss(&views, &ntx, Reduction::Mean)?;
                for (i, record) in records.iter().enumerate() {
                    let d_a = m.backward_view(&head_caches[i].0, &d_views[2 * i]);
                    let d_b = m.backward_view(&head_caches[i].1, &d_views[2 * i + 1]);
                    let (enc_a, enc_b) = &encs[i];
                    m.backward_trailer(
                        record,
                        &trunks[i],
                        &[(enc_a, d_a.as_slice()), (enc_b, d_b.as_slice())],
                    )?;
                }
                Ok(loss)
            },
            |m| {
                let mut views = Vec::new();
                for record in records {
                    let trunk = m.encode_trunk(record)?;
                    let (ids_a, ids_b) = crate::train::split_views(trunk.seq_embs.len())?;
                    let (emb_a, _) = m.encode_from_trunk(&trunk, &ids_a)?;
                    let (emb_b, _) = m.encode_from_trunk(&trunk, &ids_b)?;
                    views.push(m.project_view(&emb_a)?.0);
                    views.push(m.project_view(&emb_b)?.0);
                }
                Ok(batch_contrastive_loss(&views, &ntx, Reduction::Mean)?.0)
            },
            eps,
            GRAD_FLOOR,
        )?;
        entries.push(SuiteEntry {
            name: "full-net-contrastive".to_string(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            skipped_small: report.skipped_small,
            max_abs_error_small: report.max_abs_error_small,
            worst_param: report.worst_param,
        });
    }

    Ok(entries)
}
