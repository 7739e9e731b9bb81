//! Named, seeded parameter storage with a frozen flag.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-b, b]`.
    Uniform(f64),
    Normal(f64),
}

impl Init {
    /// Default fan-in uniform init for a weight with `fan_in` inputs.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform(1.0 / (fan_in.max(1) as f64).sqrt())
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the set seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// A set of trainable variables. Parameters are created on first request with
/// a deterministic per-name initialization, so construction order never matters.
#[derive(Debug)]
pub struct ParamSet {
    vars: RefCell<BTreeMap<String, Var>>,
    seed: u64,
    dtype: DType,
    device: Device,
    frozen: bool,
}

impl ParamSet {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: RefCell::new(BTreeMap::new()),
            seed,
            dtype,
            device: Device::Cpu,
            frozen: false,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn root(&self) -> Params<'_> {
        Params {
            set: self,
            prefix: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vars.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.borrow().keys().cloned().collect()
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.borrow().get(name).cloned()
    }

    /// All variables in name order.
    pub fn vars(&self) -> Vec<Var> {
        self.vars.borrow().values().cloned().collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.vars.borrow().values().map(|v| v.elem_count()).sum()
    }

    fn get_or_init(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.borrow().get(name) {
            if v.dims() != shape {
                return Err(Error::Shape(format!("parameter {name}: stored {:?}, requested {shape:?}", v.dims())));
            }
            return Ok(self.expose(v));
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) if b > 0.0 => {
                let d = Uniform::new_inclusive(-b, b);
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::Uniform(_) => vec![0.0; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        let out = self.expose(&v);
        self.vars.borrow_mut().insert(name.to_string(), v);
        Ok(out)
    }

    /// Frozen sets hand out detached tensors so no gradient can reach them.
    fn expose(&self, v: &Var) -> Tensor {
        if self.frozen {
            v.as_tensor().detach()
        } else {
            v.as_tensor().clone()
        }
    }

    /// Overwrites parameters under `dst_prefix` with same-named values under `src_prefix` of `src`.
    pub fn copy_from(&self, src: &ParamSet, src_prefix: &str, dst_prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, v) in src.vars.borrow().iter() {
            if let Some(rest) = name.strip_prefix(src_prefix) {
                let dst = format!("{dst_prefix}{rest}");
                let vars = self.vars.borrow();
                let target = vars.get(&dst).ok_or_else(|| Error::Checkpoint(format!("no parameter {dst} to copy into")))?;
                target.set(&v.as_tensor().to_dtype(self.dtype)?)?;
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Replaces every value with one from `tensors`; names and shapes must match exactly.
    pub fn load_tensors(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let vars = self.vars.borrow();
        let have: Vec<&String> = vars.keys().collect();
        let want: Vec<&String> = tensors.keys().collect();
        if have != want {
            let missing: Vec<_> = vars.keys().filter(|k| !tensors.contains_key(*k)).cloned().collect();
            let extra: Vec<_> = tensors.keys().filter(|k| !vars.contains_key(*k)).cloned().collect();
            return Err(Error::Checkpoint(format!("parameter names differ: missing {missing:?}, unexpected {extra:?}")));
        }
        for (name, v) in vars.iter() {
            let t = &tensors[name];
            if t.dims() != v.dims() {
                return Err(Error::Checkpoint(format!("parameter {name}: shape {:?} vs {:?}", t.dims(), v.dims())));
            }
            v.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars.borrow().iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: std::collections::HashMap<String, Tensor> = self.tensors().into_iter().collect();
        candle_core::safetensors::save(&map, path).map_err(Error::from)
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::Checkpoint(format!("missing component {}", path.display())));
        }
        let map = candle_core::safetensors::load(path, &self.device)?;
        self.load_tensors(&map.into_iter().collect())
    }

    /// Hex sha256 over names, shapes and raw little-endian values.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, v) in self.vars.borrow().iter() {
            h.update(name.as_bytes());
            h.update(format!("{:?}", v.dims()).as_bytes());
            let flat = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for x in flat {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Bit-exact snapshot of all values for equality checks.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<u64>>> {
        let mut out = BTreeMap::new();
        for (name, v) in self.vars.borrow().iter() {
            let flat = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            out.insert(name.clone(), flat.into_iter().map(f64::to_bits).collect());
        }
        Ok(out)
    }

    /// Replaces every value with a fresh random draw (used to leave the zero-init regime in tests).
    pub fn randomize(&self, seed: u64, std: f64) -> Result<()> {
        for (name, v) in self.vars.borrow().iter() {
            let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
            let d = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
            let vals: Vec<f64> = (0..v.elem_count()).map(|_| d.sample(&mut rng)).collect();
            v.set(&Tensor::from_vec(vals, v.dims(), &self.device)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// Prefixed view into a `ParamSet`.
#[derive(Clone)]
pub struct Params<'a> {
    set: &'a ParamSet,
    prefix: String,
}

impl<'a> Params<'a> {
    pub fn pp(&self, name: impl AsRef<str>) -> Params<'a> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Params { set: self.set, prefix }
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.set.get_or_init(&full, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.set.dtype
    }

    pub fn device(&self) -> &Device {
        &self.set.device
    }
}
