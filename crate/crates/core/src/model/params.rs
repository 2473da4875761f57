use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics and other state mutated outside of the optimizer.
    Buffer,
}

#[derive(Debug, Clone)]
struct Param {
    var: Var,
    kind: ParamKind,
}

/// Owns every tensor of a model under a hierarchical dotted name.
///
/// Initial values are drawn from a seeded ChaCha stream in construction
/// order, so a (config, seed) pair always yields the same weights.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    rng: ChaCha8Rng,
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            device,
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, values: Vec<f64>, shape: &[usize], kind: ParamKind) -> Result<Var> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.params.insert(
            name.to_string(),
            Param {
                var: var.clone(),
                kind,
            },
        );
        Ok(var)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.insert(name, values, shape, ParamKind::Trainable)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.insert(name, vec![value; n], shape, ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.insert(name, vec![value; n], shape, ParamKind::Buffer)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).map(|p| &p.var)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Trainable parameters in name order.
    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Trainable)
            .map(|(k, p)| (k.as_str(), &p.var))
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.trainable().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Deep copy of every tensor (trainable and buffers).
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(k, p)| Ok((k.clone(), p.var.as_tensor().copy()?)))
            .collect()
    }

    /// Checks that `tensors` holds exactly this store's keys with matching shapes.
    pub fn check_compatible(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let missing: Vec<String> = self
            .params
            .keys()
            .filter(|k| !tensors.contains_key(*k))
            .cloned()
            .collect();
        let unexpected: Vec<String> = tensors
            .keys()
            .filter(|k| !self.params.contains_key(*k))
            .cloned()
            .collect();
        let mismatched: Vec<String> = tensors
            .iter()
            .filter_map(|(k, t)| {
                let p = self.params.get(k)?;
                (p.var.dims() != t.dims())
                    .then(|| format!("{k}: expected {:?}, found {:?}", p.var.dims(), t.dims()))
            })
            .collect();
        if missing.is_empty() && unexpected.is_empty() && mismatched.is_empty() {
            Ok(())
        } else {
            Err(Error::CheckpointKeys {
                missing,
                unexpected,
                mismatched,
            })
        }
    }

    /// Overwrites every tensor from `tensors`, failing on any missing, extra
    /// or mis-shaped key before anything is modified.
    pub fn restore(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        self.check_compatible(tensors)?;
        for (k, p) in &self.params {
            let t = tensors[k].to_dtype(self.dtype)?.to_device(&self.device)?;
            p.var.set(&t)?;
        }
        Ok(())
    }
}
