use std::collections::{BTreeMap, BTreeSet};

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::util::keyed_rng;

/// Initializer family for a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    /// Normal with the given standard deviation (Box-Muller on the keyed stream).
    Normal(f64),
}

impl Init {
    fn draw(self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..=b)).collect(),
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let u1: f64 = 1.0 - rng.random::<f64>();
                    let u2: f64 = rng.random();
                    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect(),
        }
    }
}

/// Parameter values copied to the host.
#[derive(Debug, Clone, PartialEq)]
pub struct HostTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named trainable parameters. The group of a parameter is the name prefix
/// before the first `.`. Initial values depend only on `(seed, name)`, so
/// creation order never changes them.
pub struct ParamStore {
    dtype: DType,
    device: Device,
    seed: u64,
    vars: BTreeMap<String, (Var, Init)>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            seed,
            vars: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn init_tensor(&self, seed: u64, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut rng = keyed_rng(seed, &format!("param:{name}"));
        let n = shape.iter().product();
        let data = init.draw(n, &mut rng);
        Ok(Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    /// Creates a parameter and returns a handle sharing its storage.
    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let t = self.init_tensor(self.seed, name, shape, init)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), (var, init));
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name).map(|(v, _)| v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, (v, _))| (k.as_str(), v))
    }

    pub fn group_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.vars.keys().map(|k| Self::group_of(k).to_string()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|(v, _)| v.elem_count()).sum()
    }

    /// Redraws every parameter of `group` from its initializer with `seed`.
    pub fn reinit_group(&mut self, group: &str, seed: u64) -> Result<()> {
        let mut any = false;
        for (name, (var, init)) in &self.vars {
            if Self::group_of(name) == group {
                let t = self.init_tensor(seed, name, var.dims(), *init)?;
                var.set(&t)?;
                any = true;
            }
        }
        if !any {
            return Err(Error::Checkpoint(format!("no parameter group '{group}'")));
        }
        Ok(())
    }

    pub fn to_host(&self) -> Result<BTreeMap<String, HostTensor>> {
        self.vars
            .iter()
            .map(|(k, (v, _))| {
                let data = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
                Ok((
                    k.clone(),
                    HostTensor {
                        shape: v.dims().to_vec(),
                        data,
                    },
                ))
            })
            .collect()
    }

    /// Overwrites parameters from host values. Every store parameter must be
    /// present with a matching shape; extra entries are an error.
    pub fn load_host(&self, values: &BTreeMap<String, HostTensor>) -> Result<()> {
        for name in values.keys() {
            if !self.vars.contains_key(name) {
                return Err(Error::Checkpoint(format!("unexpected parameter '{name}'")));
            }
        }
        for (name, (var, _)) in &self.vars {
            let h = values
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            if h.shape != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    h.shape,
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(h.data.clone(), h.shape.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// SHA-256 over the names, shapes and values of one group (all groups if `None`).
    pub fn content_hash(&self, group: Option<&str>) -> Result<String> {
        let mut h = Sha256::new();
        for (name, t) in self.to_host()? {
            if group.is_some_and(|g| Self::group_of(&name) != g) {
                continue;
            }
            h.update(name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}
