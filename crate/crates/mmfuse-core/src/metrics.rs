//! Multi-label evaluation: per-genre average precision, the three AU-PRC
//! aggregates, support-weighted precision/recall/F1 at a sigmoid threshold,
//! silhouette scoring and the random baseline.
//!
//! Average precision uses step interpolation over descending-score
//! thresholds with ties grouped at a single threshold — the standard
//! information-retrieval definition, exactly reproducible by threshold
//! enumeration.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor2;

/// One precision-recall curve: points ordered by descending threshold, so
/// recall is non-decreasing along the curve.
#[derive(Debug, Clone)]
pub struct PrCurve<F> {
    pub class_name: String,
    pub support: usize,
    /// `(threshold, precision, recall)` per distinct score.
    pub points: Vec<(F, F, F)>,
}

/// Aggregate evaluation report.
///
/// The three area aggregates are stored under unambiguous names:
/// `ap_per_genre_mean` (unweighted mean over classes with at least one
/// positive), `ap_pooled` (single ranking over all sample/class pairs) and
/// `ap_support_weighted` (per-genre AP weighted by positive counts).
#[derive(Debug, Clone)]
pub struct MetricsReport<F> {
    /// Per-genre AP; `None` for classes without positives (skipped).
    pub per_genre_ap: Vec<Option<F>>,
    pub ap_per_genre_mean: F,
    pub ap_pooled: F,
    pub ap_support_weighted: F,
    pub precision_weighted: F,
    pub recall_weighted: F,
    pub f1_weighted: F,
    pub support: Vec<usize>,
    pub threshold: F,
    pub silhouette: Option<F>,
}

/// Average precision of one ranking, step-interpolated, ties grouped.
pub fn average_precision<F: Float>(scores: &[F], labels: &[bool]) -> Result<F> {
    if scores.len() != labels.len() {
        return Err(CoreError::dimension("average_precision labels", scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(CoreError::domain("average_precision needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Descending score; index as the deterministic tie-breaker (ties are
    // grouped below, so the within-tie order never matters).
    order.sort_by(|&a, &b| match scores[b].partial_cmp(&scores[a]) {
        Some(o) => o.then(a.cmp(&b)),
        None => a.cmp(&b),
    });

    let total_pos = F::from(positives).unwrap();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = F::zero();
    let mut ap = F::zero();
    let mut i = 0;
    while i < order.len() {
        // Consume the whole tie group at this threshold.
        let threshold = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == threshold {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = F::from(tp).unwrap() / total_pos;
        let precision = F::from(tp).unwrap() / F::from(tp + fp).unwrap();
        ap = ap + (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Full precision-recall curve for one class.
pub fn pr_curve<F: Float>(scores: &[F], labels: &[bool], class_name: &str) -> Result<PrCurve<F>> {
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(CoreError::domain("pr_curve needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].partial_cmp(&scores[a]) {
        Some(o) => o.then(a.cmp(&b)),
        None => a.cmp(&b),
    });
    let total_pos = F::from(positives).unwrap();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == threshold {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = F::from(tp).unwrap() / total_pos;
        let precision = F::from(tp).unwrap() / F::from(tp + fp).unwrap();
        points.push((threshold, precision, recall));
        i = j;
    }
    Ok(PrCurve {
        class_name: String::from(class_name),
        support: positives,
        points,
    })
}

/// The three AU-PRC aggregates over an `N x G` score/label pair.
pub fn auprc_suite<F: Float>(
    scores: &Tensor2<F>,
    labels: &Tensor2<F>,
) -> Result<(Vec<Option<F>>, F, F, F)> {
    check_matrices(scores, labels)?;
    let n = scores.rows();
    let g_count = scores.cols();

    let mut per_genre: Vec<Option<F>> = Vec::with_capacity(g_count);
    let mut supports: Vec<usize> = Vec::with_capacity(g_count);
    let mut col_scores = vec![F::zero(); n];
    let mut col_labels = vec![false; n];
    for g in 0..g_count {
        for s in 0..n {
            col_scores[s] = scores.get(s, g);
            col_labels[s] = labels.get(s, g) != F::zero();
        }
        let support = col_labels.iter().filter(|l| **l).count();
        supports.push(support);
        if support == 0 {
            per_genre.push(None);
        } else {
            per_genre.push(Some(average_precision(&col_scores, &col_labels)?));
        }
    }

    let classes_with_pos: Vec<usize> = (0..g_count).filter(|g| supports[*g] > 0).collect();
    if classes_with_pos.is_empty() {
        return Err(CoreError::domain("every class is empty; AU-PRC is undefined"));
    }

    let mut mean = F::zero();
    for &g in &classes_with_pos {
        mean = mean + per_genre[g].unwrap();
    }
    mean = mean / F::from(classes_with_pos.len()).unwrap();

    // Globally pooled: one ranking over all N*G (score, label) pairs.
    let mut flat_scores = Vec::with_capacity(n * g_count);
    let mut flat_labels = Vec::with_capacity(n * g_count);
    for s in 0..n {
        for g in 0..g_count {
            flat_scores.push(scores.get(s, g));
            flat_labels.push(labels.get(s, g) != F::zero());
        }
    }
    let pooled = average_precision(&flat_scores, &flat_labels)?;

    let mut weighted = F::zero();
    let mut total_support = F::zero();
    for &g in &classes_with_pos {
        let w = F::from(supports[g]).unwrap();
        weighted = weighted + w * per_genre[g].unwrap();
        total_support = total_support + w;
    }
    weighted = weighted / total_support;

    Ok((per_genre, mean, pooled, weighted))
}

/// Support-weighted precision, recall and F1 after thresholding the scores
/// (probabilities) at `threshold` with `>=` semantics. A class with zero
/// predicted positives contributes precision 0.
pub fn thresholded_prf<F: Float>(
    scores: &Tensor2<F>,
    labels: &Tensor2<F>,
    threshold: F,
) -> Result<(F, F, F)> {
    check_matrices(scores, labels)?;
    if threshold <= F::zero() || threshold >= F::one() {
        return Err(CoreError::domain("threshold must lie in (0, 1)"));
    }
    let n = scores.rows();
    let g_count = scores.cols();
    let mut p_acc = F::zero();
    let mut r_acc = F::zero();
    let mut f_acc = F::zero();
    let mut total_support = F::zero();
    for g in 0..g_count {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for s in 0..n {
            let predicted = scores.get(s, g) >= threshold;
            let actual = labels.get(s, g) != F::zero();
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let support = tp + fn_;
        if support == 0 {
            continue;
        }
        let precision = if tp + fp == 0 {
            F::zero()
        } else {
            F::from(tp).unwrap() / F::from(tp + fp).unwrap()
        };
        let recall = F::from(tp).unwrap() / F::from(support).unwrap();
        let f1 = if precision + recall == F::zero() {
            F::zero()
        } else {
            F::from(2.0).unwrap() * precision * recall / (precision + recall)
        };
        let w = F::from(support).unwrap();
        p_acc = p_acc + w * precision;
        r_acc = r_acc + w * recall;
        f_acc = f_acc + w * f1;
        total_support = total_support + w;
    }
    if total_support == F::zero() {
        return Err(CoreError::domain("no class has any positive label"));
    }
    Ok((p_acc / total_support, r_acc / total_support, f_acc / total_support))
}

/// Silhouette score with Euclidean distance: mean over samples of
/// `(b - a) / max(a, b)`. Singleton clusters contribute 0.
pub fn silhouette<F: Float>(embeddings: &[Vec<F>], clusters: &[usize]) -> Result<F> {
    let n = embeddings.len();
    if n != clusters.len() {
        return Err(CoreError::dimension("silhouette clusters", n, clusters.len()));
    }
    if n < 3 {
        return Err(CoreError::domain("silhouette needs at least 3 samples"));
    }
    let max_cluster = *clusters.iter().max().unwrap();
    let mut sizes = vec![0usize; max_cluster + 1];
    for &c in clusters {
        sizes[c] += 1;
    }
    let distinct = sizes.iter().filter(|s| **s > 0).count();
    if distinct < 2 {
        return Err(CoreError::domain("silhouette needs at least 2 distinct clusters"));
    }

    let mut total = F::zero();
    let mut dist_sums = vec![F::zero(); max_cluster + 1];
    for i in 0..n {
        for v in dist_sums.iter_mut() {
            *v = F::zero();
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut acc = F::zero();
            let (a, b) = (&embeddings[i], &embeddings[j]);
            for d in 0..a.len() {
                let diff = a[d] - b[d];
                acc = acc + diff * diff;
            }
            dist_sums[clusters[j]] = dist_sums[clusters[j]] + acc.sqrt();
        }
        let own = clusters[i];
        if sizes[own] == 1 {
            continue; // contributes s = 0
        }
        let a_val = dist_sums[own] / F::from(sizes[own] - 1).unwrap();
        let mut b_val = F::infinity();
        for c in 0..sizes.len() {
            if c == own || sizes[c] == 0 {
                continue;
            }
            let mean = dist_sums[c] / F::from(sizes[c]).unwrap();
            if mean < b_val {
                b_val = mean;
            }
        }
        let denom = a_val.max(b_val);
        if denom > F::zero() {
            total = total + (b_val - a_val) / denom;
        }
    }
    Ok(total / F::from(n).unwrap())
}

/// Builds the full report from probability scores.
pub fn compute_report<F: Float>(
    scores: &Tensor2<F>,
    labels: &Tensor2<F>,
    threshold: F,
) -> Result<MetricsReport<F>> {
    let (per_genre, mean, pooled, weighted) = auprc_suite(scores, labels)?;
    let (p_w, r_w, f1_w) = thresholded_prf(scores, labels, threshold)?;
    let mut support = vec![0usize; scores.cols()];
    for g in 0..scores.cols() {
        for s in 0..scores.rows() {
            if labels.get(s, g) != F::zero() {
                support[g] += 1;
            }
        }
    }
    Ok(MetricsReport {
        per_genre_ap: per_genre,
        ap_per_genre_mean: mean,
        ap_pooled: pooled,
        ap_support_weighted: weighted,
        precision_weighted: p_w,
        recall_weighted: r_w,
        f1_weighted: f1_w,
        support,
        threshold,
        silhouette: None,
    })
}

/// Uniform-random scores averaged over `trials`: the floor every trained
/// model has to beat.
pub fn random_baseline<F: Float>(
    labels: &Tensor2<F>,
    trials: usize,
    seed: u64,
    threshold: F,
) -> Result<MetricsReport<F>> {
    if trials == 0 {
        return Err(CoreError::domain("random_baseline needs at least one trial"));
    }
    let mut rng = SeededRng::new(seed);
    let mut acc: Option<MetricsReport<F>> = None;
    for _ in 0..trials {
        let mut scores = Tensor2::zeros(labels.rows(), labels.cols());
        for v in scores.data_mut() {
            *v = F::from(rng.next_f64()).unwrap();
        }
        let report = compute_report(&scores, labels, threshold)?;
        acc = Some(match acc {
            None => report,
            Some(mut sum) => {
                sum.ap_per_genre_mean = sum.ap_per_genre_mean + report.ap_per_genre_mean;
                sum.ap_pooled = sum.ap_pooled + report.ap_pooled;
                sum.ap_support_weighted = sum.ap_support_weighted + report.ap_support_weighted;
                sum.precision_weighted = sum.precision_weighted + report.precision_weighted;
                sum.recall_weighted = sum.recall_weighted + report.recall_weighted;
                sum.f1_weighted = sum.f1_weighted + report.f1_weighted;
                for (a, b) in sum.per_genre_ap.iter_mut().zip(&report.per_genre_ap) {
                    if let (Some(x), Some(y)) = (a.as_mut(), b) {
                        *x = *x + *y;
                    }
                }
                sum
            }
        });
    }
    let mut report = acc.unwrap();
    let inv = F::one() / F::from(trials).unwrap();
    report.ap_per_genre_mean = report.ap_per_genre_mean * inv;
    report.ap_pooled = report.ap_pooled * inv;
    report.ap_support_weighted = report.ap_support_weighted * inv;
    report.precision_weighted = report.precision_weighted * inv;
    report.recall_weighted = report.recall_weighted * inv;
    report.f1_weighted = report.f1_weighted * inv;
    for ap in report.per_genre_ap.iter_mut() {
        if let Some(v) = ap.as_mut() {
            *v = *v * inv;
        }
    }
    Ok(report)
}

fn check_matrices<F: Float>(scores: &Tensor2<F>, labels: &Tensor2<F>) -> Result<()> {
    if scores.rows() != labels.rows() || scores.cols() != labels.cols() {
        return Err(CoreError::dimension(
            "metrics score/label shapes",
            scores.len(),
            labels.len(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Independent threshold-enumeration oracle: for every distinct score,
    /// binarize at that value and accumulate step-interpolated area in
    /// ascending-recall order.
    fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let total_pos = labels.iter().filter(|l| **l).count() as f64;
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for t in thresholds {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for i in 0..scores.len() {
                if scores[i] >= t {
                    if labels[i] {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let recall = tp / total_pos;
            let precision = tp / (tp + fp);
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn perfect_ranking_gives_one() {
        let scores = [0.9, 0.8, 0.3, 0.2, 0.1];
        let labels = [true, true, false, false, false];
        let ap = average_precision(&scores, &labels).unwrap();
        assert!((ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_positive_ranked_last() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5];
        let labels = [false, false, false, false, true];
        let ap = average_precision(&scores, &labels).unwrap();
        assert!((ap - 0.2).abs() < 1e-12);
        assert!((ap_oracle(&scores, &labels) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn all_ties_collapse_to_prevalence() {
        let scores = [0.5; 10];
        let labels = [true, true, true, false, false, false, false, false, false, false];
        let ap = average_precision(&scores, &labels).unwrap();
        assert!((ap - 0.3).abs() < 1e-12);
        assert!((ap_oracle(&scores, &labels) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn no_positives_is_an_error() {
        assert!(average_precision(&[0.4, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn ap_matches_oracle_over_1000_seeds() {
        for seed in 0..1000u64 {
            let mut rng = SeededRng::new(seed);
            let n = 2 + rng.next_index(49);
            let mut scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            // Inject ties on some seeds.
            if seed % 3 == 0 {
                for v in scores.iter_mut() {
                    *v = (*v * 4.0).floor() / 4.0;
                }
            }
            let mut labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.4).collect();
            if !labels.iter().any(|l| *l) {
                labels[0] = true;
            }
            let ap = average_precision(&scores, &labels).unwrap();
            let oracle = ap_oracle(&scores, &labels);
            assert!((ap - oracle).abs() < 1e-9, "seed {seed}: {ap} vs {oracle}");
        }
    }

    #[test]
    fn ap_invariant_under_monotonic_transform() {
        let mut rng = SeededRng::new(400);
        for _ in 0..50 {
            let n = 5 + rng.next_index(30);
            let scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.3).collect();
            if !labels.iter().any(|l| *l) {
                labels[0] = true;
            }
            let base = average_precision(&scores, &labels).unwrap();
            let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            let transformed = average_precision(&squashed, &labels).unwrap();
            assert!((base - transformed).abs() < 1e-12);
        }
    }

    fn matrix(rows: usize, cols: usize, data: &[f64]) -> Tensor2<f64> {
        Tensor2::from_data(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn auprc_perfect_classifier_all_ones() {
        let scores = matrix(4, 2, &[0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8]);
        let labels = matrix(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let (_, mean, pooled, weighted) = auprc_suite(&scores, &labels).unwrap();
        assert!((mean - 1.0).abs() < 1e-12);
        assert!((pooled - 1.0).abs() < 1e-12);
        assert!((weighted - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auprc_weighted_hand_computation() {
        // Two classes with APs 0.5 and 1.0 and supports 3 and 1:
        // weighted = (3 * 0.5 + 1 * 1.0) / 4 = 0.625.
        // Class 0: positives at ranks 1, 3, 5 of 6 -> AP = 0.5 needs care;
        // simpler: single positive at rank 2 of 2 scores gives AP 0.5.
        let scores = matrix(
            6,
            2,
            &[
                0.9, 0.99, //
                0.8, 0.5, //
                0.7, 0.4, //
                0.6, 0.3, //
                0.5, 0.2, //
                0.4, 0.1,
            ],
        );
        // Class 0 has supports at rows 1, 3, 5 -> AP for alternating pattern:
        // precisions at positives: 1/2, 2/4, 3/6 -> AP = (0.5 + 0.5 + 0.5)/3 = 0.5.
        let labels = matrix(
            6,
            2,
            &[
                0.0, 1.0, //
                1.0, 0.0, //
                0.0, 0.0, //
                1.0, 0.0, //
                0.0, 0.0, //
                1.0, 0.0,
            ],
        );
        let (per, _, _, weighted) = auprc_suite(&scores, &labels).unwrap();
        assert!((per[0].unwrap() - 0.5).abs() < 1e-12);
        assert!((per[1].unwrap() - 1.0).abs() < 1e-12);
        assert!((weighted - 0.625).abs() < 1e-12);
    }

    #[test]
    fn auprc_single_class_all_equal() {
        let scores = matrix(4, 1, &[0.9, 0.2, 0.7, 0.4]);
        let labels = matrix(4, 1, &[1.0, 0.0, 1.0, 0.0]);
        let (per, mean, pooled, weighted) = auprc_suite(&scores, &labels).unwrap();
        let ap = per[0].unwrap();
        assert!((mean - ap).abs() < 1e-12);
        assert!((pooled - ap).abs() < 1e-12);
        assert!((weighted - ap).abs() < 1e-12);
    }

    #[test]
    fn prf_all_positive_predictor_has_recall_one() {
        let scores = matrix(3, 2, &[0.9, 0.9, 0.9, 0.9, 0.9, 0.9]);
        let labels = matrix(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let (_, r_w, _) = thresholded_prf(&scores, &labels, 0.3).unwrap();
        assert!((r_w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prf_perfect_predictor_is_all_ones() {
        let scores = matrix(3, 2, &[0.9, 0.1, 0.1, 0.9, 0.9, 0.1]);
        let labels = matrix(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let (p, r, f1) = thresholded_prf(&scores, &labels, 0.3).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert!((r - 1.0).abs() < 1e-12);
        assert!((f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prf_threshold_is_inclusive_at_0_30() {
        // sigma = 0.31 predicts positive, 0.29 negative at threshold 0.30.
        let scores = matrix(2, 1, &[0.31, 0.29]);
        let labels = matrix(2, 1, &[1.0, 1.0]);
        let (_, r_w, _) = thresholded_prf(&scores, &labels, 0.30).unwrap();
        assert!((r_w - 0.5).abs() < 1e-12);
        // Exactly at the threshold counts as positive.
        let scores_eq = matrix(1, 1, &[0.30]);
        let labels_eq = matrix(1, 1, &[1.0]);
        let (_, r_eq, _) = thresholded_prf(&scores_eq, &labels_eq, 0.30).unwrap();
        assert!((r_eq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prf_weighted_equals_unweighted_for_equal_supports() {
        let scores = matrix(4, 2, &[0.9, 0.1, 0.1, 0.9, 0.9, 0.9, 0.1, 0.1]);
        let labels = matrix(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let (p_w, r_w, _) = thresholded_prf(&scores, &labels, 0.3).unwrap();
        // Both classes have support 2; weighting cannot change the mean.
        // Per-class precision/recall computed by hand: class 0 -> P=1, R=1;
        // class 1 -> P=1, R=1 (0.9 >= 0.3 only on true rows).
        assert!((p_w - 1.0).abs() < 1e-12);
        assert!((r_w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silhouette_far_tight_clusters() {
        let embeddings = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![100.0, 0.0],
            vec![100.0, 0.0],
        ];
        let s = silhouette(&embeddings, &[0, 0, 1, 1]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silhouette_equidistant_sample_contributes_zero() {
        // Middle point at distance 1 from its own cluster mate and from the
        // other cluster's single point: a = b so s = 0 for it.
        let embeddings = vec![vec![0.0], vec![1.0], vec![2.0]];
        let s = silhouette(&embeddings, &[0, 0, 1]).unwrap();
        // Sample 0: a=1, b=2 -> 0.5; sample 1: a=1, b=1 -> 0; sample 2:
        // singleton... cluster 1 has one member -> 0.
        assert!((s - 0.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn silhouette_single_cluster_is_error() {
        let embeddings = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(silhouette(&embeddings, &[0, 0, 0]).is_err());
    }

    #[test]
    fn silhouette_invariant_under_translation() {
        let mut rng = SeededRng::new(9);
        let embeddings: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let clusters: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let base = silhouette(&embeddings, &clusters).unwrap();
        let shifted: Vec<Vec<f64>> = embeddings
            .iter()
            .map(|e| e.iter().map(|v| v + 42.0).collect())
            .collect();
        let s = silhouette(&shifted, &clusters).unwrap();
        assert!((base - s).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn random_baseline_macro_ap_tracks_prevalence() {
        // 500 x 6 labels with prevalence 0.3 per class.
        let mut rng = SeededRng::new(31);
        let mut labels = Tensor2::<f64>::zeros(500, 6);
        for g in 0..6 {
            for s in 0..500 {
                if rng.next_f64() < 0.3 {
                    labels.set(s, g, 1.0);
                }
            }
        }
        let mut prevalence = 0.0;
        for g in 0..6 {
            let mut count = 0;
            for s in 0..500 {
                if labels.get(s, g) != 0.0 {
                    count += 1;
                }
            }
            prevalence += count as f64 / 500.0;
        }
        prevalence /= 6.0;
        let report = random_baseline(&labels, 100, 77, 0.3).unwrap();
        assert!(
            (report.ap_per_genre_mean - prevalence).abs() < 0.02,
            "macro AP {} vs prevalence {}",
            report.ap_per_genre_mean,
            prevalence
        );
    }

    #[test]
    fn random_baseline_deterministic_given_seed() {
        let labels = matrix(6, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let a = random_baseline(&labels, 10, 5, 0.3).unwrap();
        let b = random_baseline(&labels, 10, 5, 0.3).unwrap();
        assert_eq!(a.ap_per_genre_mean, b.ap_per_genre_mean);
        assert_eq!(a.f1_weighted, b.f1_weighted);
    }

    #[test]
    fn pr_curve_contains_perfect_point_for_perfect_ranking() {
        let curve = pr_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false], "g").unwrap();
        assert!(curve
            .points
            .iter()
            .any(|&(_, p, r)| (p - 1.0).abs() < 1e-12 && (r - 1.0).abs() < 1e-12));
        // Recall non-decreasing.
        for w in curve.points.windows(2) {
            assert!(w[1].2 >= w[0].2);
        }
    }
}
