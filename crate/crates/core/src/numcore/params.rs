use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numcore::scalar::Scalar;
use crate::numcore::tensor::Tensor;

/// One named model parameter: value plus an equally-shaped gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub trainable: bool,
}

/// Ordered parameter collection. Iteration order is creation order, which
/// keeps optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    params: Vec<Parameter<S>>,
    by_name: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>, trainable: bool) -> usize {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape().to_vec());
        let idx = self.params.len();
        self.by_name.insert(name.clone(), idx);
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
        });
        idx
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.params[idx].name
    }

    pub fn value(&self, idx: usize) -> &Tensor<S> {
        &self.params[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor<S> {
        &mut self.params[idx].value
    }

    pub fn grad_of(&self, idx: usize) -> &Tensor<S> {
        &self.params[idx].grad
    }

    pub fn trainable(&self, idx: usize) -> bool {
        self.params[idx].trainable
    }

    pub fn set_trainable(&mut self, idx: usize, trainable: bool) {
        self.params[idx].trainable = trainable;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn add_grad(&mut self, idx: usize, grad: &[S]) {
        let g = self.params[idx].grad.data_mut();
        debug_assert_eq!(g.len(), grad.len());
        for (t, &s) in g.iter_mut().zip(grad) {
            *t = *t + s;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            for v in p.grad.data_mut() {
                *v = S::zero();
            }
        }
    }

    /// Scale every gradient in place (used for batch averaging).
    pub fn scale_grads(&mut self, factor: S) {
        for p in self.params.iter_mut() {
            for v in p.grad.data_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn assert_finite(&self) -> Result<()> {
        for p in &self.params {
            p.value.assert_finite("parameter values")?;
        }
        Ok(())
    }

    /// Order-insensitive content checksum over values, for freeze guarantees.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in &self.params {
            for &v in p.value.data() {
                let bits = v.as_f64().to_bits();
                h ^= bits;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub fn load_value(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| Error::Internal(format!("unknown parameter {name}")))?;
        if self.params[idx].value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "load_value",
                left: self.params[idx].value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.params[idx].value = value;
        Ok(())
    }
}

/// Truncated normal draw: resample anything beyond two standard deviations.
pub fn trunc_normal<S: Scalar, R: Rng>(rng: &mut R, std: f64) -> S {
    let dist = Normal::new(0.0, std).expect("valid normal");
    loop {
        let x: f64 = dist.sample(rng);
        if x.abs() <= 2.0 * std {
            return S::of(x);
        }
    }
}

/// Matrix initialized with truncated normal entries, std 0.02.
pub fn init_weight<S: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor<S> {
    let data: Vec<S> = (0..rows * cols).map(|_| trunc_normal(rng, 0.02)).collect();
    Tensor::matrix(rows, cols, data).expect("init shape")
}

pub fn init_zeros<S: Scalar>(rows: usize, cols: usize) -> Tensor<S> {
    Tensor::zeros(vec![rows, cols])
}

pub fn init_ones<S: Scalar>(rows: usize, cols: usize) -> Tensor<S> {
    Tensor::matrix(rows, cols, vec![S::one(); rows * cols]).expect("init shape")
}
