//! Named parameter and buffer storage with seeded initialisation.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::seed;
use crate::{Error, Result};

/// Trainable parameters and non-trainable buffers (batch-norm running statistics), keyed by name.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

/// How a new parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given std, redrawn outside ±2 std.
    TruncNormal(f64),
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn make(&self, name: &str, shape: &[usize], init: Init, master_seed: u64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::TruncNormal(std) => {
                let mut rng = seed::derived_rng(master_seed, &[b"init", name.as_bytes()]);
                (0..n)
                    .map(|_| loop {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        if z.abs() <= 2.0 {
                            break z * std;
                        }
                        // keep the generator moving deterministically
                        let _ = rng.random::<u32>();
                    })
                    .collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    /// Create a trainable parameter. Each parameter's values depend only on
    /// `(seed, name)`, not on creation order.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) -> Result<Tensor> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::contract(format!("parameter `{name}` defined twice")));
        }
        let v = self.make(name, shape, init, seed)?;
        let t = v.as_tensor().clone();
        self.params.insert(name.to_string(), v);
        Ok(t)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::contract(format!("buffer `{name}` defined twice")));
        }
        let v = self.make(name, shape, init, 0)?;
        self.buffers.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Every parameter and buffer, by name.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter().chain(self.buffers.iter())
    }

    /// Overwrite values from `source`; every name must be present with a matching shape.
    pub fn load(&self, source: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.named_tensors() {
            let t = source
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` missing from checkpoint")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        if let Some(extra) = source.keys().find(|k| self.get(k).is_none()) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}` in checkpoint")));
        }
        Ok(())
    }
}
