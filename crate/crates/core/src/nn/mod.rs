//! Differentiable building blocks on top of `candle`.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names. Initial values are drawn
//! from a stream derived from the store seed and the parameter name, so a model's
//! initialization does not depend on construction order.

mod gradcheck;
mod layers;
pub mod spectral;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use layers::{
    Conv1d, DepthwiseConv1d, FeedForward, GroupNorm, LayerNorm, Linear, Lstm, MultiHeadAttention,
    TransformerLayer,
};

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Uniform on [-bound, bound].
    Uniform(f64),
    Normal(f64),
}

/// Named, seeded collection of trainable variables.
pub struct ParamStore {
    vars: Mutex<BTreeMap<String, Var>>,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.len())
            .field("seed", &self.seed)
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self { vars: Mutex::new(BTreeMap::new()), seed, dtype, device: Device::Cpu }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope<'_> {
        Scope { store: self, prefix: String::new() }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, Var>> {
        self.vars.lock().expect("parameter store poisoned")
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }

    /// Variables sorted by name.
    pub fn vars(&self) -> Vec<Var> {
        self.lock().values().cloned().collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.lock().iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v.clone()).collect()
    }

    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        self.lock().iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.lock().values().map(|v| v.elem_count()).sum()
    }

    pub fn num_params_with_prefix(&self, prefix: &str) -> usize {
        self.lock().iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites parameter values from `tensors`. Every parameter must be present with a
    /// matching shape; extra entries are ignored.
    pub fn load(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.lock().iter() {
            let src = tensors.get(name).ok_or_else(|| Error::Shape(format!("missing parameter `{name}`")))?;
            if src.dims() != var.dims() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            var.set(&src.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    /// Copies every parameter of `other` whose name exists here.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        let theirs = other.named_tensors();
        for (name, var) in self.lock().iter() {
            if let Some(src) = theirs.get(name) {
                var.set(&src.to_dtype(self.dtype)?.copy()?)?;
            }
        }
        Ok(())
    }

    /// SHA-256 over parameter names, shapes and values.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in self.lock().iter() {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                h.update(v.to_le_bytes());
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    fn create(&self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut vars = self.lock();
        if vars.contains_key(&name) {
            return Err(Error::Shape(format!("parameter `{name}` defined twice")));
        }
        let n: usize = shape.iter().product();
        let mut r = rng::indexed(self.seed, &name, 0);
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(b) => (0..n).map(|_| r.gen_range(-b..=b)).collect(),
            Init::Normal(s) => (0..n).map(|_| s * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        vars.insert(name, var);
        Ok(out)
    }
}

/// A name prefix inside a [`ParamStore`].
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl std::fmt::Display) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Scope { store: self.store, prefix }
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.create(self.pp(name).prefix, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu_erf()?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Softmax over the last dimension; the running max is treated as a constant.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let d = x.rank() - 1;
    let m = x.max_keepdim(d)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(d)?)?)
}

/// Sinusoidal position table of shape (len, dim).
pub fn sinusoidal_positions(len: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0.0f64; len * dim];
    for t in 0..len {
        for i in 0..dim {
            let k = (i / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * k / dim as f64);
            v[t * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Ok(Tensor::from_vec(v, (len, dim), device)?.to_dtype(dtype)?)
}

/// Global L2 norm of the gradients of `vars`; rescales them in place when it exceeds `max_norm`.
pub fn clip_grad_norm(grads: &mut candle_core::backprop::GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut total = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / (norm + 1e-6);
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

/// Scalar value of a rank-0 or single-element tensor.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let a = ParamStore::new(1, DType::F32);
        let b = ParamStore::new(1, DType::F32);
        let a1 = a.root().param("x", &[3], Init::Normal(1.0)).unwrap();
        let _ = a.root().param("y", &[3], Init::Normal(1.0)).unwrap();
        let _ = b.root().param("y", &[3], Init::Normal(1.0)).unwrap();
        let b1 = b.root().param("x", &[3], Init::Normal(1.0)).unwrap();
        assert_eq!(a1.to_vec1::<f32>().unwrap(), b1.to_vec1::<f32>().unwrap());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn duplicate_names_rejected() {
        let s = ParamStore::new(1, DType::F32);
        s.root().pp("a").param("w", &[2], Init::Zeros).unwrap();
        assert!(s.root().pp("a").param("w", &[2], Init::Zeros).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [0.0, 0.0, 1000.0]], &Device::Cpu).unwrap();
        let s = softmax_last(&x).unwrap().sum(1).unwrap().to_vec1::<f64>().unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::new(&[-2.0f64, 0.0, 3.0], &Device::Cpu).unwrap();
        assert_eq!(leaky_relu(&x, 0.1).unwrap().to_vec1::<f64>().unwrap(), vec![-0.2, 0.0, 3.0]);
    }

    #[test]
    fn clipping_rescales_gradients() {
        let s = ParamStore::new(0, DType::F64);
        let w = s.root().param("w", &[2], Init::Const(3.0)).unwrap();
        let loss = w.sqr().unwrap().sum_all().unwrap();
        let mut g = loss.backward().unwrap();
        let norm = clip_grad_norm(&mut g, &s.vars(), 1.0).unwrap();
        assert!((norm - (72f64).sqrt()).abs() < 1e-9);
        let clipped = g.get(&w).unwrap().sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap().sqrt();
        assert!((clipped - 1.0).abs() < 1e-5);
    }
}
