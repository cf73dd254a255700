use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
    has_grad: bool,
}

/// Named parameters with their gradients and Adam moments.
///
/// A gradient counts as populated once something has written to it since the
/// last optimizer step; stepping with an unpopulated gradient is an error.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::DuplicateParameter(name));
        }
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
            has_grad: false,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    /// Mutable gradient buffer; marks the gradient as populated.
    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        let p = &mut self.params[id.0];
        p.has_grad = true;
        &mut p.grad
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.shape() != g.shape() {
            return Err(Error::dim(
                "ParamStore::accumulate",
                format!("{} {:?}", p.name, p.grad.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        p.grad.add_scaled(g, 1.0)?;
        p.has_grad = true;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
            p.has_grad = false;
        }
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p.name.as_str(), &p.value))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// First and second Adam moments of one parameter.
    pub fn moments(&self, id: ParamId) -> (&Tensor, &Tensor) {
        let p = &self.params[id.0];
        (&p.m, &p.v)
    }

    /// All parameter values concatenated in insertion order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.data().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::dim("set_flat_values", self.num_scalars(), flat.len()));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Overwrites values from `(name, tensor)` pairs. Every stored parameter
    /// must be present with the same shape.
    pub fn load_named(&mut self, items: &[(String, Tensor)]) -> Result<()> {
        for p in &mut self.params {
            let (_, t) = items
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::dim("load_named", format!("{} {:?}", p.name, p.value.shape()), format!("{:?}", t.shape())));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for p in &self.params {
            if !p.value.is_finite() {
                return Err(Error::NonFinite(format!("parameter `{}`", p.name)));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam step over every parameter, then zeroes the
    /// gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        cfg.validate()?;
        if let Some(p) = self.params.iter().find(|p| !p.has_grad) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let (c1, c2) = self.corrections(cfg);
        for p in &mut self.params {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
            }
            let Param { value, grad, m, v, .. } = p;
            adam_update(value.data_mut(), grad.data(), m.data_mut(), v.data_mut(), cfg, c1, c2);
            p.grad.fill(0.0);
            p.has_grad = false;
        }
        Ok(())
    }

    /// Lazy (row-sparse) Adam: only the listed rows of the listed matrices are
    /// updated and have their moments decayed. Bias correction uses the shared
    /// step counter. Touched gradient rows are zeroed afterwards.
    pub fn adam_step_rows(&mut self, updates: &[(ParamId, &[usize])], cfg: &AdamConfig) -> Result<()> {
        cfg.validate()?;
        self.step += 1;
        let (c1, c2) = self.corrections(cfg);
        for &(id, rows) in updates {
            let p = &mut self.params[id.0];
            let cols = p.value.cols();
            for &r in rows {
                let span = r * cols..(r + 1) * cols;
                if !p.grad.data()[span.clone()].iter().all(|g| g.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of `{}` row {r}", p.name)));
                }
                let Param { value, grad, m, v, .. } = p;
                adam_update(
                    &mut value.data_mut()[span.clone()],
                    &grad.data()[span.clone()],
                    &mut m.data_mut()[span.clone()],
                    &mut v.data_mut()[span.clone()],
                    cfg,
                    c1,
                    c2,
                );
                p.grad.data_mut()[span].iter_mut().for_each(|g| *g = 0.0);
            }
            p.has_grad = false;
        }
        Ok(())
    }

    fn corrections(&self, cfg: &AdamConfig) -> (f64, f64) {
        let t = self.step as f64;
        (1.0 - math::powf(cfg.beta1, t), 1.0 - math::powf(cfg.beta2, t))
    }
}

fn adam_update(value: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, c1: f64, c2: f64) {
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        value[i] -= cfg.learning_rate * m_hat / (math::sqrt(v_hat) + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn store_with(values: Vec<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let n = values.len();
        let id = s.add("w", Tensor::new(vec![n], values).unwrap()).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut s, id) = store_with(vec![1.5, -2.0, 0.0, -0.0]);
        let before: Vec<u64> = s.value(id).data().iter().map(|x| x.to_bits()).collect();
        s.grad_mut(id);
        s.adam_step(&AdamConfig::default()).unwrap();
        let after: Vec<u64> = s.value(id).data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let cfg = AdamConfig::default();
        let (mut s, id) = store_with(vec![1.0, 1.0, 1.0]);
        s.accumulate(id, &Tensor::vector(vec![0.3, -4.0, 1e-3])).unwrap();
        s.adam_step(&cfg).unwrap();
        // t = 1: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        let expected = [
            1.0 - 0.001 * 0.3 / (0.3 + 1e-8),
            1.0 + 0.001 * 4.0 / (4.0 + 1e-8),
            1.0 - 0.001 * 1e-3 / (1e-3 + 1e-8),
        ];
        for (got, want) in s.value(id).data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        assert!(s.grad(id).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn second_moment_grows_under_repeated_gradient() {
        let (mut s, id) = store_with(vec![0.0]);
        s.accumulate(id, &Tensor::vector(vec![0.5])).unwrap();
        s.adam_step(&AdamConfig::default()).unwrap();
        let v1 = s.moments(id).1.data()[0];
        s.accumulate(id, &Tensor::vector(vec![0.5])).unwrap();
        s.adam_step(&AdamConfig::default()).unwrap();
        let v2 = s.moments(id).1.data()[0];
        // v1 = 0.001 * 0.25, v2 = 0.999 * v1 + 0.001 * 0.25
        assert!((v1 - 0.00025).abs() < 1e-18);
        assert!((v2 - (0.999 * 0.00025 + 0.00025)).abs() < 1e-18);
        assert!(v2 > v1);
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = ParamStore::new();
        let a = s.add("layer.a", Tensor::zeros(&[2])).unwrap();
        s.add("layer.b", Tensor::zeros(&[2])).unwrap();
        s.grad_mut(a);
        match s.adam_step(&AdamConfig::default()) {
            Err(Error::MissingGradient(name)) => assert_eq!(name, "layer.b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradient_shape_must_match() {
        let (mut s, id) = store_with(vec![0.0, 0.0]);
        assert!(s.accumulate(id, &Tensor::zeros(&[3])).is_err());
        assert!(s.add("w", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn sparse_rows_leave_untouched_rows_alone() {
        let mut s = ParamStore::new();
        let id = s.add("emb", Tensor::matrix(3, 2, vec![1.0; 6]).unwrap()).unwrap();
        s.grad_mut(id).set(1, 0, 2.0);
        s.adam_step_rows(&[(id, &[1])], &AdamConfig::default()).unwrap();
        assert_eq!(s.value(id).row(0), &[1.0, 1.0]);
        assert_eq!(s.value(id).row(2), &[1.0, 1.0]);
        assert!(s.value(id).get(1, 0) < 1.0);
        assert_eq!(s.value(id).get(1, 1), 1.0);
    }

    proptest! {
        #[test]
        fn zero_gradients_never_move_parameters(values in proptest::collection::vec(-1e3f64..1e3, 1..20), steps in 1usize..5) {
            let (mut s, id) = store_with(values.clone());
            for _ in 0..steps {
                s.grad_mut(id);
                s.adam_step(&AdamConfig::default()).unwrap();
            }
            prop_assert_eq!(s.value(id).data(), values.as_slice());
        }
    }
}
