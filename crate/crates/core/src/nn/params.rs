//! Named parameter stores with deterministic initialization, digests and a
//! safetensors archive format.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::rc::Rc;

use candle_core::{DType, Device, Tensor, Var};
use rand_distr::{Distribution, Normal, Uniform};
use safetensors::tensor::{Dtype as StDtype, TensorView};
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

const METADATA_KEY: &str = "codectrace";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    Normal(f64),
    Uniform(f64),
    /// Uniform in ±1/sqrt(fan_in), fan_in = first dimension.
    FanIn,
}

/// A set of trainable variables keyed by layer path. Cloning shares storage.
#[derive(Clone)]
pub struct ParamStore {
    vars: Rc<RefCell<BTreeMap<String, Var>>>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.vars.borrow().len())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: Rc::new(RefCell::new(BTreeMap::new())),
            dtype,
            device: Device::Cpu,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Builder {
        Builder {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vars.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.borrow().is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.borrow().keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.borrow().get(name).cloned()
    }

    /// Adds a variable holding `value`; an existing name is an error.
    pub fn insert(&self, name: &str, value: Tensor) -> Result<()> {
        let mut vars = self.vars.borrow_mut();
        if vars.contains_key(name) {
            return Err(Error::config(format!("parameter `{name}` already exists")));
        }
        vars.insert(name.to_string(), Var::from_tensor(&value.to_dtype(self.dtype)?)?);
        Ok(())
    }

    /// Variables in name order.
    pub fn vars(&self) -> Vec<(String, Var)> {
        self.vars
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.borrow().values().map(|v| v.elem_count()).sum()
    }

    fn fetch(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.borrow().get(name) {
            if v.dims() != shape {
                return Err(Error::shape(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let mut rng = seed::rng(self.seed, name, &[]);
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::Uniform(a) => {
                let d = Uniform::new_inclusive(-a, a).map_err(|e| Error::config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::FanIn => {
                let a = 1.0 / (shape.first().copied().unwrap_or(1).max(1) as f64).sqrt();
                let d = Uniform::new_inclusive(-a, a).map_err(|e| Error::config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.borrow_mut().insert(name.to_string(), var);
        Ok(out)
    }

    /// SHA-256 over (name, shape, little-endian values) in name order. The
    /// empty store hashes to the digest of no input.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in self.vars.borrow().iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((var.rank() as u64).to_le_bytes());
            for &d in var.dims() {
                h.update((d as u64).to_le_bytes());
            }
            h.update(tensor_bytes(var.as_tensor())?);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Copies every value of `other` into the same-named variables here.
    pub fn copy_from(&self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, var) in other.vars() {
            if let Some(dst) = self.get(&format!("{prefix}{name}")) {
                dst.set(&var.as_tensor().to_dtype(self.dtype)?)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Copies the values of `other` whose names start with `prefix.` into
    /// the same-named variables here.
    pub fn copy_subtree(&self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let lead = format!("{prefix}.");
        let mut n = 0;
        for (name, var) in other.vars() {
            if !name.starts_with(&lead) {
                continue;
            }
            if let Some(dst) = self.get(&name) {
                dst.set(&var.as_tensor().to_dtype(self.dtype)?.copy()?)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Deep copy with independent storage.
    pub fn snapshot(&self) -> Result<ParamStore> {
        let out = ParamStore::new(self.dtype, self.seed);
        for (name, var) in self.vars() {
            out.vars.borrow_mut().insert(name, Var::from_tensor(&var.as_tensor().copy()?)?);
        }
        Ok(out)
    }

    /// Same names and values in another dtype (for double-precision checks).
    pub fn to_dtype(&self, dtype: DType) -> Result<ParamStore> {
        let out = ParamStore::new(dtype, self.seed);
        for (name, var) in self.vars() {
            let t = var.as_tensor().to_dtype(dtype)?;
            out.vars.borrow_mut().insert(name, Var::from_tensor(&t)?);
        }
        Ok(out)
    }

    /// Serializes to safetensors bytes with a JSON metadata header.
    pub fn to_bytes<M: Serialize>(&self, meta: &M) -> Result<Vec<u8>> {
        let vars = self.vars();
        let mut buffers = Vec::with_capacity(vars.len());
        for (name, var) in &vars {
            buffers.push((name.clone(), var.dims().to_vec(), tensor_bytes(var.as_tensor())?));
        }
        let dtype = st_dtype(self.dtype)?;
        let views = buffers
            .iter()
            .map(|(n, s, b)| Ok((n.clone(), TensorView::new(dtype, s.clone(), b)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut info = HashMap::new();
        info.insert(METADATA_KEY.to_string(), serde_json::to_string(meta)?);
        Ok(safetensors::serialize(views, Some(info))?)
    }

    pub fn save<M: Serialize>(&self, path: &Path, meta: &M) -> Result<()> {
        let bytes = self.to_bytes(meta)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Parses safetensors bytes into a store (seeded for any later additions).
    pub fn from_bytes<M: DeserializeOwned>(bytes: &[u8], seed: u64, context: &str) -> Result<(ParamStore, M)> {
        let (_, metadata) = safetensors::SafeTensors::read_metadata(bytes)?;
        let meta_json = metadata
            .metadata()
            .as_ref()
            .and_then(|m| m.get(METADATA_KEY))
            .ok_or_else(|| Error::Schema {
                context: context.to_string(),
                field: METADATA_KEY.to_string(),
            })?;
        let meta: M = crate::corpus::manifest::parse_json(meta_json, context)?;
        let st = safetensors::SafeTensors::deserialize(bytes)?;
        let mut dtype = None;
        let mut loaded = BTreeMap::new();
        for (name, view) in st.tensors() {
            let (dt, values) = match view.dtype() {
                StDtype::F32 => (
                    DType::F32,
                    Tensor::from_vec(
                        view.data()
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                            .collect::<Vec<_>>(),
                        view.shape(),
                        &Device::Cpu,
                    )?,
                ),
                StDtype::F64 => (
                    DType::F64,
                    Tensor::from_vec(
                        view.data()
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect::<Vec<_>>(),
                        view.shape(),
                        &Device::Cpu,
                    )?,
                ),
                other => return Err(Error::SafeTensors(format!("unsupported dtype {other:?} in `{name}`"))),
            };
            dtype.get_or_insert(dt);
            loaded.insert(name, Var::from_tensor(&values)?);
        }
        let store = ParamStore {
            vars: Rc::new(RefCell::new(loaded)),
            dtype: dtype.unwrap_or(DType::F32),
            device: Device::Cpu,
            seed,
        };
        Ok((store, meta))
    }

    pub fn load<M: DeserializeOwned>(path: &Path, seed: u64) -> Result<(ParamStore, M)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, seed, &path.display().to_string())
    }
}

fn st_dtype(dt: DType) -> Result<StDtype> {
    match dt {
        DType::F32 => Ok(StDtype::F32),
        DType::F64 => Ok(StDtype::F64),
        other => Err(Error::SafeTensors(format!("unsupported dtype {other:?}"))),
    }
}

/// Little-endian bytes of a tensor's values in row-major order.
pub fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        other => return Err(Error::SafeTensors(format!("unsupported dtype {other:?}"))),
    })
}

/// Hands out parameters under a name prefix.
#[derive(Clone, Debug)]
pub struct Builder {
    store: ParamStore,
    prefix: String,
}

impl Builder {
    pub fn sub(&self, name: impl std::fmt::Display) -> Builder {
        Builder {
            store: self.store.clone(),
            prefix: if self.prefix.is_empty() {
                name.to_string()
            } else {
                format!("{}.{name}", self.prefix)
            },
        }
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.fetch(&full, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_keyed_by_name_not_order() {
        let a = ParamStore::new(DType::F32, 3);
        let b = ParamStore::new(DType::F32, 3);
        a.root().param("x", &[4, 4], Init::Normal(1.0)).unwrap();
        a.root().param("y", &[2], Init::FanIn).unwrap();
        b.root().param("y", &[2], Init::FanIn).unwrap();
        b.root().param("x", &[4, 4], Init::Normal(1.0)).unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn archive_round_trip_is_byte_exact() {
        let s = ParamStore::new(DType::F32, 1);
        s.root().sub("layer").param("w", &[3, 5], Init::Normal(0.1)).unwrap();
        s.root().param("b", &[5], Init::Zeros).unwrap();
        let bytes = s.to_bytes(&serde_json::json!({"k": 1})).unwrap();
        let (back, meta): (ParamStore, serde_json::Value) = ParamStore::from_bytes(&bytes, 1, "test").unwrap();
        assert_eq!(meta["k"], 1);
        assert_eq!(back.digest().unwrap(), s.digest().unwrap());
        assert_eq!(back.to_bytes(&serde_json::json!({"k": 1})).unwrap(), bytes);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let s = ParamStore::new(DType::F32, 1);
        s.root().param("w", &[3], Init::Zeros).unwrap();
        assert!(s.root().param("w", &[4], Init::Zeros).is_err());
    }

    #[test]
    fn digest_tracks_values() {
        let s = ParamStore::new(DType::F32, 1);
        let before = s.digest().unwrap();
        s.root().param("w", &[3], Init::Zeros).unwrap();
        let mid = s.digest().unwrap();
        assert_ne!(before, mid);
        s.get("w").unwrap().set(&Tensor::new(&[1f32, 0.0, 0.0], &Device::Cpu).unwrap()).unwrap();
        assert_ne!(s.digest().unwrap(), mid);
    }
}
