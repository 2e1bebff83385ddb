//! Collaborative expert gating.
//!
//! For expert `e`, an attention vector is built from all pairwise relations
//! with the other experts,
//!
//! `T_e = h( sum_{f != e} g(concat(psi_e, psi_f)) )`,
//!
//! and the expert embedding is modulated element-wise through a sigmoid,
//! `psi_e * sigmoid(T_e)`, suppressing or amplifying each channel. One
//! `(g, h)` pair is shared across experts. Each gated embedding then runs
//! through its expert's Gated Embedding Module: a linear map self-gated by
//! a second linear map and L2-normalized.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::nn::{sigmoid, visit_child, Activation, DenseCache, DenseLayer, Mlp2, Mlp2Cache, Parameterized};
use crate::rng::SeededRng;
use crate::tensor::{l2_normalize, l2_normalize_backward};

/// Shared pairwise (`g`) and attention (`h`) MLPs.
///
/// `g` maps the concatenated pair `2D -> D (relu) -> D`; `h` maps
/// `D -> D (relu) -> D`. The attention vector length must equal the expert
/// embedding length for the element-wise modulation to type-check.
#[derive(Debug, Clone)]
pub struct GatingUnit<F> {
    pub pairwise: Mlp2<F>,
    pub attention: Mlp2<F>,
}

/// Forward cache for one clip's gating pass.
#[derive(Debug, Clone)]
pub struct GatingCache<F> {
    /// Expert embeddings as seen by the gate.
    inputs: Vec<Vec<F>>,
    /// Pair caches per expert, ordered by ascending partner index.
    pair_caches: Vec<Vec<Mlp2Cache<F>>>,
    h_caches: Vec<Mlp2Cache<F>>,
    /// sigmoid(T_e) per expert.
    gates: Vec<Vec<F>>,
}

impl<F: Float> GatingUnit<F> {
    pub fn new(dim: usize, rng: &mut SeededRng) -> Self {
        GatingUnit {
            pairwise: Mlp2::new(2 * dim, dim, dim, rng),
            attention: Mlp2::new(dim, dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.attention.out_dim()
    }

    /// Attention vector `T_e` for expert `e`. The sum over partners runs in
    /// ascending expert index, skipping the self pair.
    pub fn attention_vector(&self, experts: &[Vec<F>], e: usize) -> Result<Vec<F>> {
        self.check_experts(experts)?;
        if e >= experts.len() {
            return Err(CoreError::domain("expert index out of range"));
        }
        let (t, _, _) = self.attention_with_cache(experts, e)?;
        Ok(t)
    }

    /// Gates every expert: attention, sigmoid modulation. Returns the
    /// modulated embeddings and the cache for the backward pass.
    pub fn forward(&self, experts: &[Vec<F>]) -> Result<(Vec<Vec<F>>, GatingCache<F>)> {
        self.check_experts(experts)?;
        let e_count = experts.len();
        let mut modulated = Vec::with_capacity(e_count);
        let mut pair_caches = Vec::with_capacity(e_count);
        let mut h_caches = Vec::with_capacity(e_count);
        let mut gates = Vec::with_capacity(e_count);
        for e in 0..e_count {
            let (t, pairs, hc) = self.attention_with_cache(experts, e)?;
            let gate: Vec<F> = t.iter().map(|&v| sigmoid(v)).collect();
            let m: Vec<F> = experts[e]
                .iter()
                .zip(&gate)
                .map(|(&p, &s)| p * s)
                .collect();
            modulated.push(m);
            pair_caches.push(pairs);
            h_caches.push(hc);
            gates.push(gate);
        }
        Ok((
            modulated,
            GatingCache {
                inputs: experts.to_vec(),
                pair_caches,
                h_caches,
                gates,
            },
        ))
    }

    /// Accumulates parameter gradients and the gradients w.r.t. the expert
    /// embeddings for one cached forward pass.
    pub fn backward(
        &mut self,
        cache: &GatingCache<F>,
        d_modulated: &[Vec<F>],
        d_experts: &mut [Vec<F>],
    ) {
        let e_count = cache.inputs.len();
        let dim = self.dim();
        debug_assert_eq!(d_modulated.len(), e_count);
        debug_assert_eq!(d_experts.len(), e_count);
        let mut d_t = vec![F::zero(); dim];
        let mut d_p = vec![F::zero(); dim];
        let mut d_cat = vec![F::zero(); 2 * dim];
        for e in 0..e_count {
            let gate = &cache.gates[e];
            let psi = &cache.inputs[e];
            let dm = &d_modulated[e];
            for i in 0..dim {
                d_experts[e][i] = d_experts[e][i] + dm[i] * gate[i];
                d_t[i] = dm[i] * psi[i] * gate[i] * (F::one() - gate[i]);
            }
            for v in d_p.iter_mut() {
                *v = F::zero();
            }
            self.attention.backward(&cache.h_caches[e], &d_t, Some(&mut d_p));
            // Every pair summand receives the same upstream gradient d_p.
            let mut slot = 0;
            for f in 0..e_count {
                if f == e {
                    continue;
                }
                for v in d_cat.iter_mut() {
                    *v = F::zero();
                }
                self.pairwise
                    .backward(&cache.pair_caches[e][slot], &d_p, Some(&mut d_cat));
                for i in 0..dim {
                    d_experts[e][i] = d_experts[e][i] + d_cat[i];
                    d_experts[f][i] = d_experts[f][i] + d_cat[dim + i];
                }
                slot += 1;
            }
        }
    }

    fn attention_with_cache(
        &self,
        experts: &[Vec<F>],
        e: usize,
    ) -> Result<(Vec<F>, Vec<Mlp2Cache<F>>, Mlp2Cache<F>)> {
        let dim = self.dim();
        let mut sum = vec![F::zero(); dim];
        let mut pairs = Vec::with_capacity(experts.len() - 1);
        let mut cat = vec![F::zero(); 2 * dim];
        for (f, other) in experts.iter().enumerate() {
            if f == e {
                continue;
            }
            cat[..dim].copy_from_slice(&experts[e]);
            cat[dim..].copy_from_slice(other);
            let (out, cache) = self.pairwise.forward(&cat)?;
            for i in 0..dim {
                sum[i] = sum[i] + out[i];
            }
            pairs.push(cache);
        }
        let (t, hc) = self.attention.forward(&sum)?;
        Ok((t, pairs, hc))
    }

    /// Smallest |relu pre-activation| across the cached pairwise and
    /// attention MLPs. Finite-difference checks skip configurations whose
    /// margin is too small: the numeric difference straddles the kink.
    pub fn min_relu_margin(&self, cache: &GatingCache<F>) -> F {
        let mut margin = F::infinity();
        for pairs in &cache.pair_caches {
            for c in pairs {
                margin = margin.min(self.pairwise.l1.min_abs_preact(&c.c1));
            }
        }
        for hc in &cache.h_caches {
            margin = margin.min(self.attention.l1.min_abs_preact(&hc.c1));
        }
        margin
    }

    fn check_experts(&self, experts: &[Vec<F>]) -> Result<()> {
        if experts.len() < 2 {
            return Err(CoreError::domain(
                "collaborative gating needs at least two experts",
            ));
        }
        for psi in experts {
            if psi.len() != self.dim() {
                return Err(CoreError::dimension("gating expert embedding", self.dim(), psi.len()));
            }
        }
        Ok(())
    }
}

impl<F: Float> Parameterized<F> for GatingUnit<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut [F], &mut [F])) {
        visit_child(&mut self.pairwise, "g", f);
        visit_child(&mut self.attention, "h", f);
    }
}

/// Element-wise sigmoid modulation: `out_i = psi_i * sigmoid(t_i)`.
pub fn modulate<F: Float>(psi: &[F], t: &[F]) -> Result<Vec<F>> {
    if psi.len() != t.len() {
        return Err(CoreError::dimension("modulate", psi.len(), t.len()));
    }
    Ok(psi.iter().zip(t).map(|(&p, &v)| p * sigmoid(v)).collect())
}

/// Gated Embedding Module: `z = W1 x + b1`, `y = z * sigmoid(W2 z + b2)`,
/// output `y / ||y||` (the zero vector stays zero).
#[derive(Debug, Clone)]
pub struct Gem<F> {
    pub linear: DenseLayer<F>,
    pub gate: DenseLayer<F>,
}

#[derive(Debug, Clone)]
pub struct GemCache<F> {
    c1: DenseCache<F>,
    z: Vec<F>,
    c2: DenseCache<F>,
    s: Vec<F>,
    out: Vec<F>,
    norm: F,
}

impl<F: Float> Gem<F> {
    pub fn new(dim: usize, rng: &mut SeededRng) -> Self {
        Gem {
            linear: DenseLayer::new(dim, dim, Activation::Identity, rng),
            gate: DenseLayer::new(dim, dim, Activation::Sigmoid, rng),
        }
    }

    pub fn forward(&self, x: &[F]) -> Result<(Vec<F>, GemCache<F>)> {
        let (z, c1) = self.linear.forward(x)?;
        let (s, c2) = self.gate.forward(&z)?;
        let mut out: Vec<F> = z.iter().zip(&s).map(|(&a, &b)| a * b).collect();
        let norm = l2_normalize(&mut out);
        Ok((
            out.clone(),
            GemCache {
                c1,
                z,
                c2,
                s,
                out,
                norm,
            },
        ))
    }

    pub fn backward(&mut self, cache: &GemCache<F>, d_out: &[F], d_x: Option<&mut [F]>) {
        let dim = cache.z.len();
        let mut d_q = vec![F::zero(); dim];
        l2_normalize_backward(&cache.out, cache.norm, d_out, &mut d_q);
        let mut d_z = vec![F::zero(); dim];
        let mut d_s = vec![F::zero(); dim];
        for i in 0..dim {
            d_z[i] = d_q[i] * cache.s[i];
            d_s[i] = d_q[i] * cache.z[i];
        }
        self.gate.backward(&cache.c2, &d_s, Some(&mut d_z));
        self.linear.backward(&cache.c1, &d_z, d_x);
    }
}

impl<F: Float> Parameterized<F> for Gem<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut [F], &mut [F])) {
        visit_child(&mut self.linear, "linear", f);
        visit_child(&mut self.gate, "gate", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::nn::zero_grads;
    use crate::tensor::{dot, l2_norm};
    use alloc::vec;

    fn random_experts(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SeededRng::new(seed);
        (0..count)
            .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect()
    }

    #[test]
    fn gating_rejects_single_expert() {
        let mut rng = SeededRng::new(0);
        let unit: GatingUnit<f64> = GatingUnit::new(4, &mut rng);
        let experts = random_experts(1, 4, 1);
        assert!(matches!(unit.forward(&experts), Err(CoreError::Domain(_))));
    }

    #[test]
    fn two_experts_collapse_to_single_pair() {
        // With E = 2 the sum has one term: T_e = h(g(psi_e, psi_f)).
        let mut rng = SeededRng::new(3);
        let unit: GatingUnit<f64> = GatingUnit::new(5, &mut rng);
        let experts = random_experts(2, 5, 4);
        let t0 = unit.attention_vector(&experts, 0).unwrap();
        let mut cat = experts[0].clone();
        cat.extend_from_slice(&experts[1]);
        let (g_out, _) = unit.pairwise.forward(&cat).unwrap();
        let (expected, _) = unit.attention.forward(&g_out).unwrap();
        assert_eq!(t0, expected);
    }

    #[test]
    fn four_experts_sum_three_pairs() {
        let mut rng = SeededRng::new(5);
        let unit: GatingUnit<f64> = GatingUnit::new(3, &mut rng);
        let experts = random_experts(4, 3, 6);
        let t2 = unit.attention_vector(&experts, 2).unwrap();
        // Rebuild by hand: partners 0, 1, 3 in ascending order.
        let mut sum = vec![0.0; 3];
        for f in [0usize, 1, 3] {
            let mut cat = experts[2].clone();
            cat.extend_from_slice(&experts[f]);
            let (g_out, _) = unit.pairwise.forward(&cat).unwrap();
            for i in 0..3 {
                sum[i] += g_out[i];
            }
        }
        let (expected, _) = unit.attention.forward(&sum).unwrap();
        for i in 0..3 {
            assert!((t2[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mlps_give_zero_attention() {
        let mut rng = SeededRng::new(7);
        let mut unit: GatingUnit<f64> = GatingUnit::new(4, &mut rng);
        unit.for_each_param(&mut |_, p, _| {
            for v in p.iter_mut() {
                *v = 0.0;
            }
        });
        let experts = random_experts(3, 4, 8);
        let t = unit.attention_vector(&experts, 1).unwrap();
        assert!(t.iter().all(|v| *v == 0.0));
        // sigmoid(0) = 0.5, so modulation halves the embedding.
        let (modulated, _) = unit.forward(&experts).unwrap();
        for i in 0..4 {
            assert!((modulated[1][i] - 0.5 * experts[1][i]).abs() < 1e-15);
        }
    }

    #[test]
    fn modulate_limits() {
        let psi = vec![2.0f64, -3.0, 4.0];
        let half = modulate(&psi, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(half, vec![1.0, -1.5, 2.0]);
        let all = modulate(&psi, &[1e4, 1e4, 1e4]).unwrap();
        for i in 0..3 {
            assert!((all[i] - psi[i]).abs() < 1e-12);
        }
        let none = modulate(&psi, &[-1e4, -1e4, -1e4]).unwrap();
        assert!(none.iter().all(|v| v.abs() < 1e-12));
        assert!(modulate(&psi, &[0.0]).is_err());
    }

    #[test]
    fn modulate_never_amplifies() {
        let mut rng = SeededRng::new(9);
        for _ in 0..200 {
            let p: f64 = rng.uniform(-5.0, 5.0);
            let t: f64 = rng.uniform(-20.0, 20.0);
            let out = modulate(&[p], &[t]).unwrap()[0];
            assert!(out.abs() <= p.abs());
        }
    }

    #[test]
    fn gem_zero_gate_params_reduce_to_normalized_linear() {
        let mut rng = SeededRng::new(11);
        let mut gem: Gem<f64> = Gem::new(4, &mut rng);
        gem.gate.weight.fill(0.0);
        for b in gem.gate.bias.iter_mut() {
            *b = 0.0;
        }
        let x = vec![0.3, -0.7, 0.2, 0.9];
        let (out, _) = gem.forward(&x).unwrap();
        let (mut z, _) = gem.linear.forward(&x).unwrap();
        l2_normalize(&mut z);
        for i in 0..4 {
            assert!((out[i] - z[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gem_output_is_unit_or_zero() {
        let mut rng = SeededRng::new(13);
        let gem: Gem<f64> = Gem::new(6, &mut rng);
        let x: Vec<f64> = (0..6).map(|i| (i as f64) * 0.3 - 0.9).collect();
        let (out, _) = gem.forward(&x).unwrap();
        assert!((l2_norm(&out) - 1.0).abs() < 1e-12);
        // z = 0 stays zero: zero linear weights and bias give z = 0.
        let mut gem0: Gem<f64> = Gem::new(3, &mut rng);
        gem0.linear.weight.fill(0.0);
        let (out0, _) = gem0.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(out0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gem_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(15);
        let mut gem: Gem<f64> = Gem::new(4, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let report = grad_check(
            &mut gem,
            |g| {
                zero_grads(g);
                let (out, cache) = g.forward(&x)?;
                g.backward(&cache, &w, None);
                Ok(dot(&out, &w))
            },
            |g| {
                let (out, _) = g.forward(&x)?;
                Ok(dot(&out, &w))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "gem grad err {}", report.max_rel_error);
    }

    #[test]
    fn gating_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(17);
        let mut unit: GatingUnit<f64> = GatingUnit::new(3, &mut rng);
        let experts = random_experts(3, 3, 18);
        let w: Vec<f64> = (0..9).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let loss = |modulated: &[Vec<f64>]| -> f64 {
            let mut acc = 0.0;
            for (e, m) in modulated.iter().enumerate() {
                acc += dot(m, &w[e * 3..(e + 1) * 3]);
            }
            acc
        };
        let report = grad_check(
            &mut unit,
            |u| {
                zero_grads(u);
                let (modulated, cache) = u.forward(&experts)?;
                let d_mod: Vec<Vec<f64>> = (0..3).map(|e| w[e * 3..(e + 1) * 3].to_vec()).collect();
                let mut d_experts = vec![vec![0.0; 3]; 3];
                u.backward(&cache, &d_mod, &mut d_experts);
                Ok(loss(&modulated))
            },
            |u| {
                let (modulated, _) = u.forward(&experts)?;
                Ok(loss(&modulated))
            },
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-5,
            "gating grad err {} at {}",
            report.max_rel_error,
            report.worst_param
        );
    }

    #[test]
    fn gating_input_gradients_match_finite_differences() {
        // Treat the expert embeddings themselves as parameters so the
        // harness verifies d_experts too.
        struct WithInputs {
            unit: GatingUnit<f64>,
            experts: Vec<Vec<f64>>,
            grads: Vec<Vec<f64>>,
        }
        impl Parameterized<f64> for WithInputs {
            fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
                let names = ["e0", "e1", "e2"];
                for (i, (e, g)) in self.experts.iter_mut().zip(&mut self.grads).enumerate() {
                    f(names[i], e, g);
                }
            }
        }
        let mut rng = SeededRng::new(19);
        let unit: GatingUnit<f64> = GatingUnit::new(3, &mut rng);
        let experts = random_experts(3, 3, 20);
        let w: Vec<f64> = (0..9).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut holder = WithInputs {
            unit,
            experts,
            grads: vec![vec![0.0; 3]; 3],
        };
        let report = grad_check(
            &mut holder,
            |h| {
                zero_grads(&mut h.unit);
                let (modulated, cache) = h.unit.forward(&h.experts)?;
                let d_mod: Vec<Vec<f64>> = (0..3).map(|e| w[e * 3..(e + 1) * 3].to_vec()).collect();
                let mut d_experts = vec![vec![0.0; 3]; 3];
                h.unit.backward(&cache, &d_mod, &mut d_experts);
                h.grads = d_experts;
                let mut acc = 0.0;
                for (e, m) in modulated.iter().enumerate() {
                    acc += dot(m, &w[e * 3..(e + 1) * 3]);
                }
                Ok(acc)
            },
            |h| {
                let (modulated, _) = h.unit.forward(&h.experts)?;
                let mut acc = 0.0;
                for (e, m) in modulated.iter().enumerate() {
                    acc += dot(m, &w[e * 3..(e + 1) * 3]);
                }
                Ok(acc)
            },
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-6,
            "gating input grad err {}",
            report.max_rel_error
        );
    }
}
