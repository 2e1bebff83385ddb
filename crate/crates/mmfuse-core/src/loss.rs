//! Training losses: weighted binary cross-entropy over logits for the
//! supervised phase, and the temperature-scaled contrastive loss over
//! cosine similarities for the self-supervised phase.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::nn::sigmoid;
use crate::tensor::{dot, l2_norm};

/// How per-class losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Configuration of the weighted BCE-with-logits loss.
///
/// `pos_weight[g]` scales the positive term of class `g`; per-sample
/// weights default to 1.
#[derive(Debug, Clone)]
pub struct BceConfig<F> {
    pub pos_weight: Vec<F>,
    pub reduction: Reduction,
}

impl<F: Float> BceConfig<F> {
    pub fn uniform(classes: usize) -> Self {
        BceConfig {
            pos_weight: vec![F::one(); classes],
            reduction: Reduction::Mean,
        }
    }

    pub fn with_pos_weight(pos_weight: Vec<F>) -> Result<Self> {
        if pos_weight.iter().any(|p| *p <= F::zero()) {
            return Err(CoreError::domain("pos_weight entries must be positive"));
        }
        Ok(BceConfig {
            pos_weight,
            reduction: Reduction::Mean,
        })
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus<F: Float>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

/// Weighted binary cross-entropy straight from the logits.
///
/// Per class: `-w [ p_g y log sigmoid(u) + (1 - y) log(1 - sigmoid(u)) ]`,
/// computed in softplus form so large |u| never sees `log(0)` or an
/// overflowing `exp`. Returns the reduced loss and its gradient w.r.t. `u`.
pub fn bce_with_logits<F: Float>(
    logits: &[F],
    targets: &[F],
    sample_weight: F,
    cfg: &BceConfig<F>,
) -> Result<(F, Vec<F>)> {
    if targets.len() != logits.len() {
        return Err(CoreError::dimension("bce targets", logits.len(), targets.len()));
    }
    if cfg.pos_weight.len() != logits.len() {
        return Err(CoreError::dimension("bce pos_weight", logits.len(), cfg.pos_weight.len()));
    }
    let mut total = F::zero();
    let mut grad = vec![F::zero(); logits.len()];
    for g in 0..logits.len() {
        let u = logits[g];
        if !u.is_finite() {
            return Err(CoreError::numeric(format!("non-finite logit at class {g}")));
        }
        let y = targets[g];
        if y != F::zero() && y != F::one() {
            return Err(CoreError::domain(format!("target at class {g} is not 0 or 1")));
        }
        let p = cfg.pos_weight[g];
        // -y log sigmoid(u) = y softplus(-u); -(1-y) log(1-sigmoid(u)) = (1-y) softplus(u)
        let term = p * y * softplus(-u) + (F::one() - y) * softplus(u);
        total = total + sample_weight * term;
        let s = sigmoid(u);
        grad[g] = sample_weight * ((F::one() - y) * s - p * y * (F::one() - s));
    }
    let scale = match cfg.reduction {
        Reduction::Mean => F::one() / F::from(logits.len()).unwrap(),
        Reduction::Sum => F::one(),
    };
    for d in &mut grad {
        *d = *d * scale;
    }
    Ok((total * scale, grad))
}

/// Which views appear in the contrastive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenominatorMode {
    /// All non-anchor views, the positive included (the usual convention).
    IncludePositive,
    /// Negatives only.
    ExcludePositive,
}

/// Temperature and denominator convention for the contrastive loss.
#[derive(Debug, Clone, Copy)]
pub struct NtxentConfig<F> {
    pub temperature: F,
    pub mode: DenominatorMode,
}

impl<F: Float> NtxentConfig<F> {
    pub fn new(temperature: F, mode: DenominatorMode) -> Result<Self> {
        if temperature <= F::zero() {
            return Err(CoreError::domain("temperature must be positive"));
        }
        Ok(NtxentConfig { temperature, mode })
    }
}

impl<F: Float> Default for NtxentConfig<F> {
    fn default() -> Self {
        NtxentConfig {
            temperature: F::from(0.5).unwrap(),
            mode: DenominatorMode::IncludePositive,
        }
    }
}

fn cosine<F: Float>(a: &[F], b: &[F], na: F, nb: F) -> F {
    dot(a, b) / (na * nb)
}

fn checked_norm<F: Float>(v: &[F], what: &str) -> Result<F> {
    let n = l2_norm(v);
    if n <= F::zero() || !n.is_finite() {
        return Err(CoreError::numeric(format!(
            "degenerate similarity: {what} has zero or non-finite norm"
        )));
    }
    Ok(n)
}

/// Contrastive loss for a single anchor/positive pair against explicit
/// negatives:
/// `-log( exp(cos(xi, xp)/t) / sum_c exp(cos(xi, xc)/t) )`.
pub fn ntxent_pair_loss<F: Float>(
    anchor: &[F],
    positive: &[F],
    negatives: &[&[F]],
    cfg: &NtxentConfig<F>,
) -> Result<F> {
    let na = checked_norm(anchor, "anchor")?;
    let np = checked_norm(positive, "positive")?;
    let s_pos = cosine(anchor, positive, na, np) / cfg.temperature;
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    if cfg.mode == DenominatorMode::IncludePositive {
        scores.push(s_pos);
    }
    for neg in negatives {
        let nn = checked_norm(neg, "negative")?;
        scores.push(cosine(anchor, neg, na, nn) / cfg.temperature);
    }
    if scores.is_empty() {
        return Err(CoreError::domain(
            "contrastive denominator has no candidates (exclude-positive with no negatives)",
        ));
    }
    Ok(log_sum_exp(&scores) - s_pos)
}

fn log_sum_exp<F: Float>(scores: &[F]) -> F {
    let mut max = F::neg_infinity();
    for s in scores {
        if *s > max {
            max = *s;
        }
    }
    let mut sum = F::zero();
    for s in scores {
        sum = sum + (*s - max).exp();
    }
    max + sum.ln()
}

/// Batch contrastive loss over `2B` views where `views[2i]` and
/// `views[2i+1]` are the two halves of trailer `i`. Every view anchors once
/// with its sibling as the positive and the other `2B - 2` views as
/// negatives. Returns the reduced loss and the gradient w.r.t. every view.
pub fn batch_contrastive_loss<F: Float>(
    views: &[Vec<F>],
    cfg: &NtxentConfig<F>,
    reduction: Reduction,
) -> Result<(F, Vec<Vec<F>>)> {
    let n_views = views.len();
    if n_views < 4 || n_views % 2 != 0 {
        return Err(CoreError::domain(
            "batch contrastive loss needs at least two trailers (four views)",
        ));
    }
    let dim = views[0].len();
    for v in views {
        if v.len() != dim {
            return Err(CoreError::dimension("contrastive view", dim, v.len()));
        }
    }
    let mut norms = Vec::with_capacity(n_views);
    for (i, v) in views.iter().enumerate() {
        norms.push(checked_norm(v, &format!("view {i}"))?);
    }

    // Full cosine similarity matrix (symmetric, self entries unused).
    let mut sims = vec![F::zero(); n_views * n_views];
    for i in 0..n_views {
        for j in (i + 1)..n_views {
            let s = cosine(&views[i], &views[j], norms[i], norms[j]);
            sims[i * n_views + j] = s;
            sims[j * n_views + i] = s;
        }
    }

    let inv_t = F::one() / cfg.temperature;
    let anchor_scale = match reduction {
        Reduction::Mean => F::one() / F::from(n_views).unwrap(),
        Reduction::Sum => F::one(),
    };

    let mut total = F::zero();
    // d(loss)/d(sim[i][j]) accumulated over anchors.
    let mut d_sims = vec![F::zero(); n_views * n_views];
    let mut candidates: Vec<usize> = Vec::with_capacity(n_views - 1);
    let mut scores: Vec<F> = Vec::with_capacity(n_views - 1);
    for i in 0..n_views {
        let sib = i ^ 1;
        candidates.clear();
        scores.clear();
        for j in 0..n_views {
            if j == i {
                continue;
            }
            if cfg.mode == DenominatorMode::ExcludePositive && j == sib {
                continue;
            }
            candidates.push(j);
            scores.push(sims[i * n_views + j] * inv_t);
        }
        let s_pos = sims[i * n_views + sib] * inv_t;
        let lse = log_sum_exp(&scores);
        total = total + (lse - s_pos);

        // d/ds_ij = (softmax_j - [j == sib]) / t, scaled by the reduction.
        for (slot, &j) in candidates.iter().enumerate() {
            let p = (scores[slot] - lse).exp();
            d_sims[i * n_views + j] = d_sims[i * n_views + j] + anchor_scale * inv_t * p;
        }
        d_sims[i * n_views + sib] = d_sims[i * n_views + sib] - anchor_scale * inv_t;
    }

    // Push similarity gradients into the views. For s = cos(a, b):
    // ds/da = b/(|a||b|) - s a/|a|^2.
    let mut grads = vec![vec![F::zero(); dim]; n_views];
    for i in 0..n_views {
        for j in 0..n_views {
            if i == j {
                continue;
            }
            let ds = d_sims[i * n_views + j];
            if ds == F::zero() {
                continue;
            }
            let s = sims[i * n_views + j];
            let ni = norms[i];
            let nj = norms[j];
            let inv_ij = F::one() / (ni * nj);
            let self_coef_i = s / (ni * ni);
            let self_coef_j = s / (nj * nj);
            for d in 0..dim {
                grads[i][d] = grads[i][d] + ds * (views[j][d] * inv_ij - views[i][d] * self_coef_i);
                grads[j][d] = grads[j][d] + ds * (views[i][d] * inv_ij - views[j][d] * self_coef_j);
            }
        }
    }

    Ok((total * anchor_scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use alloc::vec;

    const LN2: f64 = core::f64::consts::LN_2;

    fn uniform_cfg(classes: usize) -> BceConfig<f64> {
        BceConfig::uniform(classes)
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let (loss, _) = bce_with_logits(&[0.0], &[1.0], 1.0, &uniform_cfg(1)).unwrap();
        assert!((loss - LN2).abs() < 1e-12);
        let (loss0, _) = bce_with_logits(&[0.0], &[0.0], 1.0, &uniform_cfg(1)).unwrap();
        assert!((loss0 - LN2).abs() < 1e-12);
    }

    #[test]
    fn bce_large_logit_stays_finite_and_tiny() {
        let (loss, grad) = bce_with_logits(&[100.0], &[1.0], 1.0, &uniform_cfg(1)).unwrap();
        assert!(loss.is_finite());
        assert!(loss < 1e-40);
        assert!(grad[0].is_finite());
        let (loss2, _) = bce_with_logits(&[-100.0], &[0.0], 1.0, &uniform_cfg(1)).unwrap();
        assert!(loss2.is_finite() && loss2 < 1e-40);
    }

    #[test]
    fn bce_never_nan_for_huge_logits() {
        for &u in &[-1e4f64, -123.0, 0.0, 123.0, 1e4] {
            for &y in &[0.0, 1.0] {
                let (loss, grad) = bce_with_logits(&[u], &[y], 1.0, &uniform_cfg(1)).unwrap();
                assert!(loss.is_finite(), "loss not finite at u={u} y={y}");
                assert!(grad[0].is_finite());
            }
        }
    }

    #[test]
    fn bce_positive_weight_scales_positive_term() {
        let cfg = BceConfig::with_pos_weight(vec![2.0]).unwrap();
        let (loss, _) = bce_with_logits(&[0.0], &[1.0], 1.0, &cfg).unwrap();
        assert!((loss - 2.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_naive_formulation() {
        // Naive sigmoid-then-log oracle, valid for moderate logits.
        let mut rng = SeededRng::new(123);
        for _ in 0..500 {
            let g = 1 + rng.next_index(8);
            let logits: Vec<f64> = (0..g).map(|_| rng.uniform(-20.0, 20.0)).collect();
            let targets: Vec<f64> = (0..g)
                .map(|_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 })
                .collect();
            let pw: Vec<f64> = (0..g).map(|_| rng.uniform(0.5, 3.0)).collect();
            let cfg = BceConfig::with_pos_weight(pw.clone()).unwrap();
            let (loss, _) = bce_with_logits(&logits, &targets, 1.0, &cfg).unwrap();
            let mut naive = 0.0;
            for i in 0..g {
                let s = 1.0 / (1.0 + (-logits[i]).exp());
                naive -= pw[i] * targets[i] * s.ln() + (1.0 - targets[i]) * (1.0 - s).ln();
            }
            naive /= g as f64;
            assert!((loss - naive).abs() < 1e-6, "stable {loss} vs naive {naive}");
        }
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(7);
        let logits: Vec<f64> = (0..5).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let targets = vec![1.0, 0.0, 1.0, 0.0, 0.0];
        let cfg = BceConfig::with_pos_weight(vec![1.5, 1.0, 2.0, 1.0, 0.7]).unwrap();
        let (_, grad) = bce_with_logits(&logits, &targets, 1.0, &cfg).unwrap();
        let eps = 1e-6;
        for i in 0..5 {
            let mut up = logits.clone();
            up[i] += eps;
            let mut dn = logits.clone();
            dn[i] -= eps;
            let (lu, _) = bce_with_logits(&up, &targets, 1.0, &cfg).unwrap();
            let (ld, _) = bce_with_logits(&dn, &targets, 1.0, &cfg).unwrap();
            let numeric = (lu - ld) / (2.0 * eps);
            assert!((grad[i] - numeric).abs() < 1e-8, "class {i}");
        }
    }

    #[test]
    fn bce_rejects_non_binary_targets() {
        let err = bce_with_logits(&[0.0], &[0.5], 1.0, &uniform_cfg(1)).unwrap_err();
        assert!(matches!(err, CoreError::Domain(_)));
    }

    #[test]
    fn ntxent_pair_no_negatives_include_mode_is_zero() {
        let cfg = NtxentConfig::<f64>::default();
        let loss = ntxent_pair_loss(&[1.0, 0.0], &[1.0, 0.0], &[], &cfg).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn ntxent_pair_orthogonal_negative_closed_form() {
        // Identical unit anchor/positive, one orthogonal negative, t = 0.5:
        // -log(e^2 / (e^2 + 1)) = ln(1 + e^-2) ~ 0.126928.
        let cfg = NtxentConfig::<f64>::default();
        let anchor = [1.0, 0.0];
        let neg = [0.0, 1.0];
        let loss = ntxent_pair_loss(&anchor, &anchor, &[&neg], &cfg).unwrap();
        let expected = (1.0f64 + (-2.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
        assert!((expected - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn ntxent_pair_scale_invariant() {
        let cfg = NtxentConfig::<f64>::default();
        let a = [0.3, -0.8, 0.5];
        let p = [0.1, -0.7, 0.6];
        let n1 = [0.9, 0.2, -0.1];
        let base = ntxent_pair_loss(&a, &p, &[&n1], &cfg).unwrap();
        for c in [0.1, 2.0, 37.5] {
            let ac: Vec<f64> = a.iter().map(|v| v * c).collect();
            let pc: Vec<f64> = p.iter().map(|v| v * c).collect();
            let nc: Vec<f64> = n1.iter().map(|v| v * c).collect();
            let scaled = ntxent_pair_loss(&ac, &pc, &[nc.as_slice()], &cfg).unwrap();
            assert!((scaled - base).abs() < 1e-9);
        }
    }

    #[test]
    fn ntxent_zero_vector_is_degenerate() {
        let cfg = NtxentConfig::<f64>::default();
        let err = ntxent_pair_loss(&[0.0, 0.0], &[1.0, 0.0], &[], &cfg).unwrap_err();
        assert!(matches!(err, CoreError::Numeric(_)));
    }

    /// Direct enumeration of every anchor with naive exp/log arithmetic.
    fn brute_force_batch(views: &[Vec<f64>], t: f64, mode: DenominatorMode, mean: bool) -> f64 {
        let n = views.len();
        let cos = |a: &[f64], b: &[f64]| {
            let na = l2_norm(a);
            let nb = l2_norm(b);
            dot(a, b) / (na * nb)
        };
        let mut total = 0.0;
        for i in 0..n {
            let sib = i ^ 1;
            let mut denom = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                if mode == DenominatorMode::ExcludePositive && j == sib {
                    continue;
                }
                denom += (cos(&views[i], &views[j]) / t).exp();
            }
            let num = (cos(&views[i], &views[sib]) / t).exp();
            total += -(num / denom).ln();
        }
        if mean {
            total / n as f64
        } else {
            total
        }
    }

    #[test]
    fn batch_orthogonal_pairs_closed_form() {
        // B = 2: sibling pairs identical, everything else orthogonal, t = 0.5.
        // Each anchor: -log(e^2 / (e^2 + 2)).
        let views = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ];
        let cfg = NtxentConfig::<f64>::default();
        let (loss, _) = batch_contrastive_loss(&views, &cfg, Reduction::Mean).unwrap();
        let e2 = (2.0f64).exp();
        let expected = -(e2 / (e2 + 2.0)).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn batch_identical_views_give_log_2b_minus_1() {
        for b in [2usize, 3, 5] {
            let views: Vec<Vec<f64>> = (0..2 * b).map(|_| vec![0.4, -0.3, 0.8]).collect();
            let cfg = NtxentConfig::<f64>::default();
            let (loss, _) = batch_contrastive_loss(&views, &cfg, Reduction::Mean).unwrap();
            let expected = ((2 * b - 1) as f64).ln();
            assert!((loss - expected).abs() < 1e-12, "B={b}: {loss} vs {expected}");
        }
    }

    #[test]
    fn batch_matches_brute_force_over_seeds() {
        for seed in 0..100u64 {
            let mut rng = SeededRng::new(seed);
            let b = [2usize, 3, 4, 8][rng.next_index(4)];
            let dim = 3 + rng.next_index(5);
            let views: Vec<Vec<f64>> = (0..2 * b)
                .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
                .collect();
            let mode = if seed % 2 == 0 {
                DenominatorMode::IncludePositive
            } else {
                DenominatorMode::ExcludePositive
            };
            let cfg = NtxentConfig::new(0.5, mode).unwrap();
            let (loss, _) = batch_contrastive_loss(&views, &cfg, Reduction::Mean).unwrap();
            let oracle = brute_force_batch(&views, 0.5, mode, true);
            assert!((loss - oracle).abs() < 1e-6, "seed {seed}: {loss} vs {oracle}");
            let (sum_loss, _) = batch_contrastive_loss(&views, &cfg, Reduction::Sum).unwrap();
            let sum_oracle = brute_force_batch(&views, 0.5, mode, false);
            assert!((sum_loss - sum_oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_permutation_invariant() {
        let mut rng = SeededRng::new(99);
        let views: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let cfg = NtxentConfig::<f64>::default();
        let (base, _) = batch_contrastive_loss(&views, &cfg, Reduction::Mean).unwrap();
        // Permute at the trailer level, keeping sibling pairs adjacent.
        let order = [3usize, 0, 2, 1];
        let mut permuted = Vec::new();
        for &t in &order {
            permuted.push(views[2 * t].clone());
            permuted.push(views[2 * t + 1].clone());
        }
        let (shuffled, _) = batch_contrastive_loss(&permuted, &cfg, Reduction::Mean).unwrap();
        assert!((base - shuffled).abs() < 1e-12);
    }

    #[test]
    fn batch_scale_invariant() {
        let mut rng = SeededRng::new(101);
        let views: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let cfg = NtxentConfig::<f64>::default();
        let (base, _) = batch_contrastive_loss(&views, &cfg, Reduction::Mean).unwrap();
        let scaled: Vec<Vec<f64>> = views
            .iter()
            .map(|v| v.iter().map(|x| x * 7.3).collect())
            .collect();
        let (loss, _) = batch_contrastive_loss(&scaled, &cfg, Reduction::Mean).unwrap();
        assert!((base - loss).abs() < 1e-9);
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(55);
        let views: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        for mode in [DenominatorMode::IncludePositive, DenominatorMode::ExcludePositive] {
            let cfg = NtxentConfig::new(0.5, mode).unwrap();
            let (_, grads) = batch_contrastive_loss(&views, &cfg, Reduction::Mean).unwrap();
            let eps = 1e-6;
            for v in 0..views.len() {
                for d in 0..4 {
                    let mut up = views.clone();
                    up[v][d] += eps;
                    let mut dn = views.clone();
                    dn[v][d] -= eps;
                    let (lu, _) = batch_contrastive_loss(&up, &cfg, Reduction::Mean).unwrap();
                    let (ld, _) = batch_contrastive_loss(&dn, &cfg, Reduction::Mean).unwrap();
                    let numeric = (lu - ld) / (2.0 * eps);
                    assert!(
                        (grads[v][d] - numeric).abs() < 1e-7,
                        "view {v} dim {d}: {} vs {}",
                        grads[v][d],
                        numeric
                    );
                }
            }
        }
    }

    #[test]
    fn batch_needs_two_trailers() {
        let cfg = NtxentConfig::<f64>::default();
        let views = vec![vec![1.0, 0.0], vec![0.9, 0.1]];
        assert!(matches!(
            batch_contrastive_loss(&views, &cfg, Reduction::Mean),
            Err(CoreError::Domain(_))
        ));
    }
}
