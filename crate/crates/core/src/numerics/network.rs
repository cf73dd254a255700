use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{
    affine_backward, affine_forward, column_norms, dropout_apply, leaky_relu, leaky_relu_backward, tanh,
    tanh_backward, weight_norm_apply, weight_norm_backward,
};
use super::{ParamId, ParamStore, Tensor};
use crate::{math, Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    LeakyRelu(f64),
}

impl Activation {
    fn forward(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Tanh => tanh(x),
            Activation::LeakyRelu(s) => leaky_relu(x, s),
        }
    }

    fn backward(self, pre: &Tensor, post: &Tensor, dy: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Identity => Ok(dy.clone()),
            Activation::Tanh => tanh_backward(post, dy),
            Activation::LeakyRelu(s) => leaky_relu_backward(pre, dy, s),
        }
    }
}

/// Weight-normalized affine layer: `y = x · (g ⊙ v / ‖v‖_col) + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub v: ParamId,
    pub g: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Tensor,
    w: Tensor,
}

impl Dense {
    /// Registers `{prefix}.v`, `{prefix}.g`, `{prefix}.b`. Directions are
    /// He-scaled Gaussians and the gain starts at the column norms, so the
    /// first forward pass equals the unnormalized initialization.
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!("layer `{prefix}` has a zero dimension")));
        }
        let std = math::sqrt(2.0 / in_dim as f64);
        let v: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let v = Tensor::matrix(in_dim, out_dim, v)?;
        let g = Tensor::vector(column_norms(&v)?);
        Ok(Dense {
            v: store.add(format!("{prefix}.v"), v)?,
            g: store.add(format!("{prefix}.g"), g)?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[out_dim]))?,
            in_dim,
            out_dim,
        })
    }

    pub fn weights(&self, store: &ParamStore) -> Result<Tensor> {
        weight_norm_apply(store.value(self.v), store.value(self.g))
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, DenseCache)> {
        let w = self.weights(store)?;
        let y = affine_forward(x, &w, store.value(self.b))?;
        Ok((y, DenseCache { x: x.clone(), w }))
    }

    /// Gradient with respect to the input only.
    pub fn backward_input(&self, cache: &DenseCache, dy: &Tensor) -> Result<Tensor> {
        super::matmul(dy, false, &cache.w, true)
    }

    /// Accumulates parameter gradients into `store` and returns the input gradient.
    pub fn backward(&self, store: &mut ParamStore, cache: &DenseCache, dy: &Tensor) -> Result<Tensor> {
        let grads = affine_backward(&cache.x, &cache.w, dy)?;
        let (dv, dg) = weight_norm_backward(store.value(self.v), store.value(self.g), &grads.dweights)?;
        store.accumulate(self.v, &dv)?;
        store.accumulate(self.g, &dg)?;
        store.accumulate(self.b, &grads.dbias)?;
        Ok(grads.dx)
    }
}

/// Stack of [`Dense`] layers with a shared hidden activation, optional
/// dropout after each hidden activation, and an output activation.
///
/// The *feature layer* is the last hidden activation before dropout.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
    dropout: f64,
}

struct LayerTrace {
    dense: DenseCache,
    pre: Tensor,
    post: Tensor,
    mask: Option<Tensor>,
}

/// Everything [`Mlp::backward`] needs from a forward pass.
pub struct MlpTrace {
    layers: Vec<LayerTrace>,
    pub output: Tensor,
}

impl MlpTrace {
    /// Activations of the last hidden layer (pre-dropout).
    pub fn features(&self) -> &Tensor {
        let n = self.layers.len();
        &self.layers[n.saturating_sub(2)].post
    }
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("an Mlp needs at least one hidden layer".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for (i, &w) in hidden.iter().chain(core::iter::once(&out_dim)).enumerate() {
            layers.push(Dense::new(store, &format!("{prefix}.layer{i}"), prev, w, rng)?);
            prev = w;
        }
        Ok(Mlp {
            layers,
            hidden: hidden_activation,
            output: output_activation,
            dropout,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 2].out_dim
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.out_dim).collect()
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    /// Forward pass. Dropout is active only when `rng` is given.
    pub fn forward(&self, store: &ParamStore, x: &Tensor, mut rng: Option<&mut Rng>) -> Result<MlpTrace> {
        if x.cols() != self.in_dim() {
            return Err(Error::dim("Mlp::forward", format!("input width {}", self.in_dim()), x.cols()));
        }
        let last = self.layers.len() - 1;
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (pre, dense) = layer.forward(store, &h)?;
            let act = if i == last { self.output } else { self.hidden };
            let post = act.forward(&pre);
            let (next, mask) = match (i == last, rng.as_deref_mut()) {
                (false, Some(r)) => dropout_apply(&post, self.dropout, true, r)?,
                _ => (post.clone(), None),
            };
            traces.push(LayerTrace { dense, pre, post, mask });
            h = next;
        }
        h.check_finite("Mlp::forward")?;
        Ok(MlpTrace { layers: traces, output: h })
    }

    /// Backward pass. `d_output` flows in at the output activation and
    /// `d_features` at the feature layer. With `grads` set, parameter
    /// gradients are accumulated there; otherwise only the input gradient is
    /// computed. Returns the gradient with respect to the input.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        d_output: Option<&Tensor>,
        d_features: Option<&Tensor>,
        mut grads: Option<&mut ParamStore>,
    ) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let rows = trace.output.rows();
        let mut d = match d_output {
            Some(d) => d.clone(),
            None => Tensor::zeros(&[rows, self.out_dim()]),
        };
        for i in (0..=last).rev() {
            let t = &trace.layers[i];
            if i != last {
                if let Some(m) = &t.mask {
                    d = d.zip_map(m, |a, b| a * b)?;
                }
                if i == last - 1 {
                    if let Some(df) = d_features {
                        d.add_scaled(df, 1.0)?;
                    }
                }
            }
            let act = if i == last { self.output } else { self.hidden };
            let d_pre = act.backward(&t.pre, &t.post, &d)?;
            d = match grads.as_deref_mut() {
                Some(store) => self.layers[i].backward(store, &t.dense, &d_pre)?,
                None => self.layers[i].backward_input(&t.dense, &d_pre)?,
            };
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use alloc::vec;
    use rand::Rng as _;

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = crate::rng_from_seed(21);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "net", 3, &[5, 4], 2, Activation::LeakyRelu(0.2), Activation::Tanh, 0.3, &mut rng)
            .unwrap();
        let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let c_out: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c_feat: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta = store.flat_values();
        let f = |th: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut s = store.clone();
            s.set_flat_values(th)?;
            let trace = mlp.forward(&s, &x, None)?;
            let loss = math::dot(trace.output.data(), &c_out) + math::dot(trace.features().data(), &c_feat);
            let d_out = Tensor::matrix(4, 2, c_out.clone())?;
            let d_feat = Tensor::matrix(4, 4, c_feat.clone())?;
            s.zero_grad();
            mlp.backward(&trace, Some(&d_out), Some(&d_feat), Some(&mut s))?;
            Ok((loss, s.flat_grads()))
        };
        let report = grad_check(f, &theta, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = crate::rng_from_seed(22);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "net", 3, &[6, 4], 2, Activation::LeakyRelu(0.2), Activation::Identity, 0.0, &mut rng)
            .unwrap();
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |xs: &[f64]| -> Result<(f64, Vec<f64>)> {
            let x = Tensor::matrix(2, 3, xs.to_vec())?;
            let trace = mlp.forward(&store, &x, None)?;
            let dx = mlp.backward(&trace, Some(&Tensor::matrix(2, 2, c.clone())?), None, None)?;
            Ok((math::dot(trace.output.data(), &c), dx.into_data()))
        };
        let report = grad_check(f, &x0, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn weight_norm_init_reproduces_direction() {
        let mut rng = crate::rng_from_seed(1);
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, "d", 4, 3, &mut rng).unwrap();
        let w = layer.weights(&store).unwrap();
        for (a, b) in w.data().iter().zip(store.value(layer.v).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let mut rng = crate::rng_from_seed(2);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "n", 2, &[8], 1, Activation::LeakyRelu(0.2), Activation::Identity, 0.5, &mut rng).unwrap();
        let x = Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let a = mlp.forward(&store, &x, None).unwrap().output;
        let b = mlp.forward(&store, &x, None).unwrap().output;
        assert_eq!(a, b);
        let c = mlp.forward(&store, &x, Some(&mut rng)).unwrap().output;
        assert_ne!(a, c);
    }
}
