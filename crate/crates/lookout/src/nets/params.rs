//! Ordered parameter registry.
//!
//! Parameters are kept in declaration order; checkpoints and gradient probes
//! rely on that order being stable.

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Normal with standard deviation `sqrt(gain / fan_in)`.
    Scaled {
        fan_in: usize,
        gain: f64,
    },
}

#[derive(Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
}

pub struct ParamStore {
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    entries: Vec<Param>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            entries: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Scaled { fan_in, gain } => {
                let std = (gain / fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| normal.sample(&mut self.rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.entries.push(Param {
            name: name.into(),
            var: var.clone(),
        });
        Ok(var)
    }

    pub fn params(&self) -> &[Param] {
        &self.entries
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|p| p.var.clone()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|p| p.var.elem_count()).sum()
    }

    /// Parameter count of every entry whose name starts with `prefix.`.
    pub fn block_parameter_count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|p| p.name.split('.').next() == Some(prefix))
            .map(|p| p.var.elem_count())
            .sum()
    }

    pub fn zero_all(&self) -> Result<()> {
        for p in &self.entries {
            p.var.set(&p.var.zeros_like()?)?;
        }
        Ok(())
    }

    /// Adds independent `N(0, std²)` noise to every parameter entry. Used to
    /// move off the exactly-zero biases of a fresh model (where rectifiers sit
    /// on their kinks) before probing gradients.
    pub fn perturb(&self, seed: u64, std: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| crate::Error::Invalid(e.to_string()))?;
        for p in &self.entries {
            let t = p.var.as_tensor();
            let noise: Vec<f64> = (0..t.elem_count()).map(|_| normal.sample(&mut rng)).collect();
            let noise = Tensor::from_vec(noise, t.shape(), &self.device)?.to_dtype(self.dtype)?;
            p.var.set(&(t + noise)?)?;
        }
        Ok(())
    }

    /// Copies values from `other`, which must declare the same parameters.
    /// Values are cast to this store's dtype.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(crate::Error::Invalid(format!(
                "parameter lists differ: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.var.dims() != b.var.dims() {
                return Err(crate::Error::Invalid(format!("parameter mismatch at {}", a.name)));
            }
            a.var.set(&b.var.as_tensor().to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Copies every parameter that `other` also has (same name); parameters
    /// only this store has keep their values. Returns how many were copied.
    pub fn copy_shared_from(&self, other: &ParamStore) -> Result<usize> {
        let mut copied = 0;
        for a in &self.entries {
            let Some(b) = other.entries.iter().find(|b| b.name == a.name) else {
                continue;
            };
            if a.var.dims() != b.var.dims() {
                return Err(crate::Error::Invalid(format!(
                    "parameter {} has shape {:?}, source has {:?}",
                    a.name,
                    a.var.dims(),
                    b.var.dims()
                )));
            }
            a.var.set(&b.var.as_tensor().to_dtype(self.dtype)?)?;
            copied += 1;
        }
        if copied == 0 {
            return Err(crate::Error::Invalid("no parameters in common".into()));
        }
        Ok(copied)
    }

    /// All parameters as little-endian f32 values, in declaration order.
    pub fn flat_values(&self) -> Result<Vec<Vec<f32>>> {
        self.entries
            .iter()
            .map(|p| {
                Ok(p.var
                    .as_tensor()
                    .to_dtype(DType::F32)?
                    .flatten_all()?
                    .to_vec1::<f32>()?)
            })
            .collect()
    }
}
