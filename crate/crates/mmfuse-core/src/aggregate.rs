//! Temporal aggregation of frame features into one vector per clip.
//!
//! Visual experts use plain average pooling. The audio expert uses a
//! learnable NetVLAD: soft-assign every frame to K clusters, accumulate
//! residuals against the cluster centers, then L2-normalize per cluster and
//! globally. Both are permutation-invariant over frames.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::nn::Parameterized;
use crate::rng::SeededRng;
use crate::tensor::{l2_normalize, l2_normalize_backward, Tensor2};

/// Element-wise mean over frames (rows of `frames`).
pub fn mean_pool<F: Float>(frames: &Tensor2<F>) -> Result<Vec<F>> {
    if frames.rows() == 0 {
        return Err(CoreError::domain("mean_pool over zero frames"));
    }
    let inv = F::one() / F::from(frames.rows()).unwrap();
    let mut out = vec![F::zero(); frames.cols()];
    for t in 0..frames.rows() {
        let row = frames.row(t);
        for i in 0..out.len() {
            out[i] = out[i] + row[i];
        }
    }
    for v in &mut out {
        *v = *v * inv;
    }
    Ok(out)
}

/// Learnable NetVLAD parameters: K cluster centers plus the linear
/// soft-assignment map.
#[derive(Debug, Clone)]
pub struct NetVlad<F> {
    pub centers: Tensor2<F>,       // K x dim
    pub assign_weight: Tensor2<F>, // K x dim
    pub assign_bias: Vec<F>,       // K
    pub grad_centers: Tensor2<F>,
    pub grad_assign_weight: Tensor2<F>,
    pub grad_assign_bias: Vec<F>,
}

/// Forward cache for one clip.
#[derive(Debug, Clone)]
pub struct NetVladCache<F> {
    /// Soft assignments, frames x K.
    assigns: Tensor2<F>,
    /// Norm of each residual row.
    v_norms: Vec<F>,
    /// Flattened intra-normalized descriptor (input to the global norm).
    intra: Vec<F>,
    /// Final output and its pre-normalization norm.
    out: Vec<F>,
    out_norm: F,
}

impl<F: Float> NetVlad<F> {
    /// `cluster_count >= 1`, `dim >= 1`. Centers start as random unit
    /// vectors; call [`NetVlad::set_centers_from_samples`] to re-seed them
    /// from real frames of the training split.
    pub fn new(cluster_count: usize, dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if cluster_count == 0 || dim == 0 {
            return Err(CoreError::config("NetVLAD needs cluster_count >= 1 and dim >= 1"));
        }
        let mut centers = Tensor2::zeros(cluster_count, dim);
        for k in 0..cluster_count {
            let row = centers.row_mut(k);
            for v in row.iter_mut() {
                *v = rng.normal();
            }
            l2_normalize(row);
        }
        let limit = (6.0 / (dim + cluster_count) as f64).sqrt();
        let mut assign_weight = Tensor2::zeros(cluster_count, dim);
        for v in assign_weight.data_mut() {
            *v = rng.uniform(F::from(-limit).unwrap(), F::from(limit).unwrap());
        }
        Ok(NetVlad {
            centers,
            assign_weight,
            assign_bias: vec![F::zero(); cluster_count],
            grad_centers: Tensor2::zeros(cluster_count, dim),
            grad_assign_weight: Tensor2::zeros(cluster_count, dim),
            grad_assign_bias: vec![F::zero(); cluster_count],
        })
    }

    pub fn cluster_count(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    /// Output dimension: K * dim.
    pub fn out_dim(&self) -> usize {
        self.centers.len()
    }

    /// Replaces each center with a randomly drawn sample frame.
    pub fn set_centers_from_samples(&mut self, samples: &[&[F]], rng: &mut SeededRng) {
        if samples.is_empty() {
            return;
        }
        for k in 0..self.cluster_count() {
            let pick = samples[rng.next_index(samples.len())];
            debug_assert_eq!(pick.len(), self.dim());
            self.centers.row_mut(k).copy_from_slice(pick);
        }
    }

    /// Aggregates `frames` (rows) into a `K * dim` descriptor.
    pub fn forward(&self, frames: &Tensor2<F>) -> Result<(Vec<F>, NetVladCache<F>)> {
        if frames.rows() == 0 {
            return Err(CoreError::domain("netvlad over zero frames"));
        }
        if frames.cols() != self.dim() {
            return Err(CoreError::dimension("netvlad frame dim", self.dim(), frames.cols()));
        }
        let t_count = frames.rows();
        let k_count = self.cluster_count();
        let dim = self.dim();

        let mut assigns = Tensor2::zeros(t_count, k_count);
        for t in 0..t_count {
            let x = frames.row(t);
            let logits = assigns.row_mut(t);
            for k in 0..k_count {
                let w = self.assign_weight.row(k);
                let mut s = self.assign_bias[k];
                for i in 0..dim {
                    s = s + w[i] * x[i];
                }
                logits[k] = s;
            }
            softmax_in_place(logits);
        }

        let mut v_pre = Tensor2::zeros(k_count, dim);
        for t in 0..t_count {
            let x = frames.row(t);
            let a = assigns.row(t);
            for k in 0..k_count {
                let ak = a[k];
                let c = self.centers.row(k);
                let vk = v_pre.row_mut(k);
                for i in 0..dim {
                    vk[i] = vk[i] + ak * (x[i] - c[i]);
                }
            }
        }

        let mut intra = v_pre.data().to_vec();
        let mut v_norms = vec![F::zero(); k_count];
        for k in 0..k_count {
            v_norms[k] = l2_normalize(&mut intra[k * dim..(k + 1) * dim]);
        }
        let mut out = intra.clone();
        let out_norm = l2_normalize(&mut out);

        Ok((
            out.clone(),
            NetVladCache {
                assigns,
                v_norms,
                intra,
                out,
                out_norm,
            },
        ))
    }

    /// Accumulates parameter gradients for one cached forward pass. The
    /// original frames must be passed back in; the cache does not copy them.
    /// Gradients w.r.t. the frames themselves are not produced (frames are
    /// corpus inputs, not learnable).
    pub fn backward(&mut self, frames: &Tensor2<F>, cache: &NetVladCache<F>, d_out: &[F]) {
        let t_count = frames.rows();
        let k_count = self.cluster_count();
        let dim = self.dim();
        debug_assert_eq!(d_out.len(), k_count * dim);

        let mut d_intra = vec![F::zero(); k_count * dim];
        l2_normalize_backward(&cache.out, cache.out_norm, d_out, &mut d_intra);

        let mut d_v = vec![F::zero(); k_count * dim];
        for k in 0..k_count {
            let range = k * dim..(k + 1) * dim;
            let norm = cache.v_norms[k];
            l2_normalize_backward(
                &cache.intra[range.clone()],
                norm,
                &d_intra[range.clone()],
                &mut d_v[range],
            );
        }

        // Through V[k] = sum_t a_{t,k} (x_t - c_k).
        let mut a_sums = vec![F::zero(); k_count];
        for t in 0..t_count {
            let a = cache.assigns.row(t);
            for k in 0..k_count {
                a_sums[k] = a_sums[k] + a[k];
            }
        }
        for k in 0..k_count {
            let dv = &d_v[k * dim..(k + 1) * dim];
            let gc = self.grad_centers.row_mut(k);
            for i in 0..dim {
                gc[i] = gc[i] - a_sums[k] * dv[i];
            }
        }

        let mut d_assign = vec![F::zero(); k_count];
        let mut d_logits = vec![F::zero(); k_count];
        for t in 0..t_count {
            let x = frames.row(t);
            let a = cache.assigns.row(t);
            for k in 0..k_count {
                let dv = &d_v[k * dim..(k + 1) * dim];
                let c = self.centers.row(k);
                let mut acc = F::zero();
                for i in 0..dim {
                    acc = acc + dv[i] * (x[i] - c[i]);
                }
                d_assign[k] = acc;
            }
            // Softmax backward.
            let mut inner = F::zero();
            for k in 0..k_count {
                inner = inner + a[k] * d_assign[k];
            }
            for k in 0..k_count {
                d_logits[k] = a[k] * (d_assign[k] - inner);
            }
            for k in 0..k_count {
                let dl = d_logits[k];
                self.grad_assign_bias[k] = self.grad_assign_bias[k] + dl;
                let gw = self.grad_assign_weight.row_mut(k);
                for i in 0..dim {
                    gw[i] = gw[i] + dl * x[i];
                }
            }
        }
    }
}

impl<F: Float> Parameterized<F> for NetVlad<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut [F], &mut [F])) {
        f("centers", self.centers.data_mut(), self.grad_centers.data_mut());
        f(
            "assign_weight",
            self.assign_weight.data_mut(),
            self.grad_assign_weight.data_mut(),
        );
        f("assign_bias", &mut self.assign_bias, &mut self.grad_assign_bias);
    }
}

fn softmax_in_place<F: Float>(logits: &mut [F]) {
    let mut max = F::neg_infinity();
    for v in logits.iter() {
        if *v > max {
            max = *v;
        }
    }
    let mut sum = F::zero();
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in logits.iter_mut() {
        *v = *v / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::nn::zero_grads;
    use crate::tensor::l2_norm;
    use alloc::vec;

    fn frames_from(rows: &[&[f64]]) -> Tensor2<f64> {
        let cols = rows[0].len();
        let mut data = Vec::new();
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor2::from_data(rows.len(), cols, data).unwrap()
    }

    #[test]
    fn mean_pool_identical_frames() {
        let f = frames_from(&[&[1.0, -2.0], &[1.0, -2.0], &[1.0, -2.0], &[1.0, -2.0], &[1.0, -2.0]]);
        assert_eq!(mean_pool(&f).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn mean_pool_averages() {
        let f = frames_from(&[&[0.0, 2.0], &[2.0, 0.0]]);
        assert_eq!(mean_pool(&f).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn mean_pool_zero_frames_errors() {
        let f = Tensor2::<f64>::zeros(0, 3);
        assert!(mean_pool(&f).is_err());
    }

    #[test]
    fn mean_pool_permutation_invariant() {
        let mut rng = SeededRng::new(17);
        for _ in 0..50 {
            let t = 2 + rng.next_index(6);
            let mut data = Vec::new();
            for _ in 0..t * 4 {
                data.push(rng.uniform(-1.0, 1.0));
            }
            let f = Tensor2::from_data(t, 4, data.clone()).unwrap();
            let base = mean_pool(&f).unwrap();
            let mut order: Vec<usize> = (0..t).collect();
            rng.shuffle(&mut order);
            let mut permuted = Vec::new();
            for &r in &order {
                permuted.extend_from_slice(&data[r * 4..(r + 1) * 4]);
            }
            let fp = Tensor2::from_data(t, 4, permuted).unwrap();
            let shuffled = mean_pool(&fp).unwrap();
            for i in 0..4 {
                assert!((base[i] - shuffled[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn netvlad_single_cluster_is_normalized_residual_sum() {
        let mut rng = SeededRng::new(1);
        let vlad: NetVlad<f64> = NetVlad::new(1, 3, &mut rng).unwrap();
        let f = frames_from(&[&[1.0, 0.0, 0.5], &[0.0, 1.0, 0.5]]);
        let (out, _) = vlad.forward(&f).unwrap();
        // K = 1 forces assignment 1; output is the normalized residual sum.
        let c = vlad.centers.row(0);
        let mut expected = vec![0.0f64; 3];
        for t in 0..2 {
            for i in 0..3 {
                expected[i] += f.row(t)[i] - c[i];
            }
        }
        l2_normalize(&mut expected);
        // Intra and global normalization coincide for K = 1.
        for i in 0..3 {
            assert!((out[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn netvlad_frame_at_center_gives_zero() {
        let mut rng = SeededRng::new(2);
        let vlad: NetVlad<f64> = NetVlad::new(1, 4, &mut rng).unwrap();
        let center = vlad.centers.row(0).to_vec();
        let f = Tensor2::from_data(1, 4, center).unwrap();
        let (out, _) = vlad.forward(&f).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn netvlad_output_norm_is_zero_or_one() {
        let mut rng = SeededRng::new(3);
        let vlad: NetVlad<f64> = NetVlad::new(4, 5, &mut rng).unwrap();
        for seed in 0..20 {
            let mut r = SeededRng::new(seed);
            let t = 1 + r.next_index(7);
            let mut data = Vec::new();
            for _ in 0..t * 5 {
                data.push(r.uniform(-2.0, 2.0));
            }
            let f = Tensor2::from_data(t, 5, data).unwrap();
            let (out, _) = vlad.forward(&f).unwrap();
            let n = l2_norm(&out);
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-9, "norm {n}");
        }
    }

    #[test]
    fn netvlad_permutation_invariant() {
        let mut rng = SeededRng::new(4);
        let vlad: NetVlad<f64> = NetVlad::new(3, 4, &mut rng).unwrap();
        for seed in 0..30 {
            let mut r = SeededRng::new(1000 + seed);
            let t = 2 + r.next_index(5);
            let mut data = Vec::new();
            for _ in 0..t * 4 {
                data.push(r.uniform(-1.0, 1.0));
            }
            let f = Tensor2::from_data(t, 4, data.clone()).unwrap();
            let (base, _) = vlad.forward(&f).unwrap();
            let mut order: Vec<usize> = (0..t).collect();
            r.shuffle(&mut order);
            let mut permuted = Vec::new();
            for &row in &order {
                permuted.extend_from_slice(&data[row * 4..(row + 1) * 4]);
            }
            let fp = Tensor2::from_data(t, 4, permuted).unwrap();
            let (shuffled, _) = vlad.forward(&fp).unwrap();
            for i in 0..base.len() {
                assert!((base[i] - shuffled[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn netvlad_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(5);
        let mut vlad: NetVlad<f64> = NetVlad::new(3, 4, &mut rng).unwrap();
        let mut data = Vec::new();
        for _ in 0..3 * 4 {
            data.push(rng.uniform(-1.0, 1.0));
        }
        let frames = Tensor2::from_data(3, 4, data).unwrap();
        // Loss: fixed weighted sum of the descriptor.
        let mut weights = Vec::new();
        for _ in 0..vlad.out_dim() {
            weights.push(rng.uniform(-1.0, 1.0));
        }
        let report = grad_check(
            &mut vlad,
            |v| {
                zero_grads(v);
                let (out, cache) = v.forward(&frames)?;
                v.backward(&frames, &cache, &weights);
                Ok(crate::tensor::dot(&out, &weights))
            },
            |v| {
                let (out, _) = v.forward(&frames)?;
                Ok(crate::tensor::dot(&out, &weights))
            },
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-5,
            "netvlad grad error {} at {}[{}]",
            report.max_rel_error,
            report.worst_param,
            report.worst_index
        );
    }
}
