//! Dense layers with cached forward passes and hand-written backward passes.
//!
//! Layers accumulate parameter gradients internally. A forward pass returns
//! the output together with a cache holding whatever the backward pass
//! needs; the caller keeps the cache alive until backward time. This keeps
//! the layers stateless across samples so one parameter set can serve many
//! in-flight forward passes (clips, sequences, views).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::rng::SeededRng;
use crate::tensor::{matvec, matvec_t_accum, Tensor2};

/// Element-wise activation applied after the affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<F: Float>(self, z: F) -> F {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > F::zero() {
                    z
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative as a function of the pre-activation.
    pub fn grad<F: Float>(self, z: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (F::one() - s)
            }
        }
    }
}

/// Numerically safe logistic function.
pub fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Visits every learnable parameter as `(name, values, gradients)`.
///
/// The visitation order is fixed per implementation; the optimizer, the
/// gradient checker and checkpointing all rely on it.
pub trait Parameterized<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut [F], &mut [F]));
}

/// Zeroes all accumulated gradients.
pub fn zero_grads<F: Float, M: Parameterized<F> + ?Sized>(model: &mut M) {
    model.for_each_param(&mut |_, _, g| {
        for v in g.iter_mut() {
            *v = F::zero();
        }
    });
}

/// Forward cache of a [`DenseLayer`]: the input and the pre-activation.
#[derive(Debug, Clone)]
pub struct DenseCache<F> {
    pub input: Vec<F>,
    pub preact: Vec<F>,
}

/// A dense affine layer `y = act(W x + b)` with gradient accumulators.
///
/// Weights are row-major `(out, in)`. Initialization is uniform in
/// `±sqrt(6 / (fan_in + fan_out))`; biases start at zero.
#[derive(Debug, Clone)]
pub struct DenseLayer<F> {
    pub weight: Tensor2<F>,
    pub bias: Vec<F>,
    pub activation: Activation,
    pub grad_weight: Tensor2<F>,
    pub grad_bias: Vec<F>,
}

impl<F: Float> DenseLayer<F> {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut weight = Tensor2::zeros(out_dim, in_dim);
        for w in weight.data_mut() {
            *w = rng.uniform(F::from(-limit).unwrap(), F::from(limit).unwrap());
        }
        DenseLayer {
            weight,
            bias: vec![F::zero(); out_dim],
            activation,
            grad_weight: Tensor2::zeros(out_dim, in_dim),
            grad_bias: vec![F::zero(); out_dim],
        }
    }

    /// Layer with explicit weights, for tests and hand-built examples.
    pub fn from_parts(weight: Tensor2<F>, bias: Vec<F>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(CoreError::dimension("DenseLayer bias", weight.rows(), bias.len()));
        }
        let grad_weight = Tensor2::zeros(weight.rows(), weight.cols());
        let grad_bias = vec![F::zero(); bias.len()];
        Ok(DenseLayer {
            weight,
            bias,
            activation,
            grad_weight,
            grad_bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Computes `act(Wx + b)`, returning the output and the backward cache.
    pub fn forward(&self, input: &[F]) -> Result<(Vec<F>, DenseCache<F>)> {
        if input.len() != self.in_dim() {
            return Err(CoreError::dimension("dense input", self.in_dim(), input.len()));
        }
        let mut preact = vec![F::zero(); self.out_dim()];
        matvec(&self.weight, input, &mut preact);
        for (z, b) in preact.iter_mut().zip(&self.bias) {
            *z = *z + *b;
        }
        let out = preact.iter().map(|&z| self.activation.apply(z)).collect();
        Ok((
            out,
            DenseCache {
                input: input.to_vec(),
                preact,
            },
        ))
    }

    /// Accumulates parameter gradients for one cached forward pass and, when
    /// `d_input` is given, accumulates the gradient w.r.t. the input into it.
    pub fn backward(&mut self, cache: &DenseCache<F>, d_out: &[F], d_input: Option<&mut [F]>) {
        debug_assert_eq!(d_out.len(), self.out_dim());
        debug_assert_eq!(cache.input.len(), self.in_dim());
        let mut d_pre = vec![F::zero(); self.out_dim()];
        for o in 0..self.out_dim() {
            d_pre[o] = d_out[o] * self.activation.grad(cache.preact[o]);
        }
        for o in 0..self.out_dim() {
            let dz = d_pre[o];
            self.grad_bias[o] = self.grad_bias[o] + dz;
            let row = self.grad_weight.row_mut(o);
            for i in 0..row.len() {
                row[i] = row[i] + dz * cache.input[i];
            }
        }
        if let Some(d_in) = d_input {
            matvec_t_accum(&self.weight, &d_pre, d_in);
        }
    }

    /// Smallest |pre-activation| over a cache; used by the gradient-check
    /// harness to skip inputs that sit on a relu kink.
    pub fn min_abs_preact(&self, cache: &DenseCache<F>) -> F {
        cache
            .preact
            .iter()
            .fold(F::infinity(), |m, z| m.min(z.abs()))
    }
}

impl<F: Float> Parameterized<F> for DenseLayer<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut [F], &mut [F])) {
        f("weight", self.weight.data_mut(), self.grad_weight.data_mut());
        f("bias", &mut self.bias, &mut self.grad_bias);
    }
}

/// Two-layer perceptron: hidden relu layer followed by an identity output
/// layer. This is the MLP shape used for the pairwise/attention maps, the
/// clip projector, the sequence MLP, the bottleneck and the classifier.
#[derive(Debug, Clone)]
pub struct Mlp2<F> {
    pub l1: DenseLayer<F>,
    pub l2: DenseLayer<F>,
}

#[derive(Debug, Clone)]
pub struct Mlp2Cache<F> {
    pub c1: DenseCache<F>,
    pub c2: DenseCache<F>,
}

impl<F: Float> Mlp2<F> {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        Mlp2 {
            l1: DenseLayer::new(in_dim, hidden, Activation::Relu, rng),
            l2: DenseLayer::new(hidden, out_dim, Activation::Identity, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim()
    }

    pub fn forward(&self, input: &[F]) -> Result<(Vec<F>, Mlp2Cache<F>)> {
        let (mid, c1) = self.l1.forward(input)?;
        let (out, c2) = self.l2.forward(&mid)?;
        Ok((out, Mlp2Cache { c1, c2 }))
    }

    pub fn backward(&mut self, cache: &Mlp2Cache<F>, d_out: &[F], d_input: Option<&mut [F]>) {
        let mut d_mid = vec![F::zero(); self.l1.out_dim()];
        self.l2.backward(&cache.c2, d_out, Some(&mut d_mid));
        self.l1.backward(&cache.c1, &d_mid, d_input);
    }
}

impl<F: Float> Parameterized<F> for Mlp2<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut [F], &mut [F])) {
        visit_child(&mut self.l1, "l1", f);
        visit_child(&mut self.l2, "l2", f);
    }
}

/// Prefixes a child's parameter names with `<prefix>.`.
pub fn visit_child<F, M: Parameterized<F>>(
    child: &mut M,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut [F], &mut [F]),
) {
    let mut name = String::new();
    child.for_each_param(&mut |n, p, g| {
        name.clear();
        name.push_str(prefix);
        name.push('.');
        name.push_str(n);
        f(&name, p, g);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_layer_passes_through() {
        let w = Tensor2::from_data(2, 2, vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let layer = DenseLayer::from_parts(w, vec![0.0, 0.0], Activation::Identity).unwrap();
        let (y, _) = layer.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_relu_gives_zero() {
        let layer = DenseLayer::from_parts(
            Tensor2::zeros(3, 2),
            vec![0.0f64; 3],
            Activation::Relu,
        )
        .unwrap();
        let (y, _) = layer.forward(&[4.0, -7.0]).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sigmoid_of_zero_preact_is_half() {
        let w = Tensor2::from_data(1, 2, vec![1.0f64, 1.0]).unwrap();
        let layer = DenseLayer::from_parts(w, vec![0.0], Activation::Sigmoid).unwrap();
        let (y, _) = layer.forward(&[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![0.5]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = SeededRng::new(0);
        let layer: DenseLayer<f64> = DenseLayer::new(3, 2, Activation::Identity, &mut rng);
        assert!(matches!(
            layer.forward(&[1.0, 2.0]),
            Err(CoreError::Dimension { .. })
        ));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let mut r1 = SeededRng::new(9);
        let mut r2 = SeededRng::new(9);
        let a: DenseLayer<f32> = DenseLayer::new(4, 3, Activation::Relu, &mut r1);
        let b: DenseLayer<f32> = DenseLayer::new(4, 3, Activation::Relu, &mut r2);
        assert_eq!(a.weight.data(), b.weight.data());
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = SeededRng::new(21);
        let layer: DenseLayer<f32> = DenseLayer::new(5, 4, Activation::Sigmoid, &mut rng);
        let x = [0.1f32, -0.2, 0.3, 0.7, -0.9];
        let (a, _) = layer.forward(&x).unwrap();
        let (b, _) = layer.forward(&x).unwrap();
        assert_eq!(a, b);
    }
}
