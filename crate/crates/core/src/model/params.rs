//! Named parameter storage, deterministic initialization and the `MMF1`
//! parameter file.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "MMF1"            4 bytes
//! config_hash       u64
//! tensor_count      u32
//! per tensor:       name_len u16, name bytes (UTF-8), ndim u8,
//!                   dims u64 × ndim, payload byte offset u64
//! payload           f64 LE values, tensors back to back in directory order
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MMF1";

/// How a parameter is filled at initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±gain·sqrt(3 / fan_in)` with the leaky-ReLU gain for slope 0.2.
    KaimingUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered, uniquely named model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config_hash: u64,
    tensors: Vec<ParamTensor>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn from_tensors(config_hash: u64, tensors: Vec<ParamTensor>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tensors.len());
        for (i, t) in tensors.iter().enumerate() {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::ParamMismatch(format!(
                    "`{}` has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            if index.insert(t.name.clone(), i).is_some() {
                return Err(Error::ParamMismatch(format!("duplicate parameter `{}`", t.name)));
            }
        }
        Ok(Self {
            config_hash,
            tensors,
            index,
        })
    }

    /// Draws every parameter from `specs` in order from one seeded stream.
    pub fn init(config_hash: u64, specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = (2.0 / (1.0 + 0.2f64 * 0.2)).sqrt();
        let tensors = specs
            .iter()
            .map(|s| {
                let n = s.numel();
                let data = match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::KaimingUniform { fan_in } => {
                        let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                    }
                };
                ParamTensor {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    data,
                }
            })
            .collect();
        Self::from_tensors(config_hash, tensors)
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks names, order and shapes against `specs`.
    pub fn check_layout(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.tensors.len() {
            return Err(Error::ParamMismatch(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&self.tensors) {
            if s.name != t.name {
                return Err(Error::ParamMismatch(format!(
                    "expected tensor `{}`, found `{}`",
                    s.name, t.name
                )));
            }
            if s.shape != t.shape {
                return Err(Error::ParamMismatch(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    t.name, t.shape, s.shape
                )));
            }
        }
        Ok(())
    }

    /// Wraps every parameter in a leaf tensor for one forward pass.
    pub fn bind(&self, requires_grad: bool) -> Bound {
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                Tensor::leaf(&t.shape, t.data.clone(), requires_grad)
                    .expect("shape checked at construction")
            })
            .collect();
        Bound {
            tensors,
            index: self.index.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * t.data.len() as u64;
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4)? != MAGIC {
            return Err(Error::corrupt(path, "bad magic (expected MMF1)"));
        }
        let hash = r.u64()?;
        let count = r.u32()? as usize;
        let mut dir = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::corrupt(path, "tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let offset = r.u64()? as usize;
            dir.push((name, shape, offset));
        }
        let payload = r.rest();
        let mut tensors = Vec::with_capacity(dir.len());
        let mut expected_offset = 0usize;
        for (name, shape, offset) in dir {
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::corrupt(path, format!("`{name}` has an absurd shape")))?;
            if offset != expected_offset {
                return Err(Error::corrupt(
                    path,
                    format!("`{name}` payload offset {offset}, expected {expected_offset}"),
                ));
            }
            let end = n
                .checked_mul(8)
                .and_then(|b| b.checked_add(offset))
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| Error::corrupt(path, format!("payload of `{name}` is truncated")))?;
            let data = payload[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            expected_offset = end;
            tensors.push(ParamTensor { name, shape, data });
        }
        if expected_offset != payload.len() {
            return Err(Error::corrupt(path, "trailing bytes after payload"));
        }
        Self::from_tensors(hash, tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a parameter file without checking it against any config.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Parameters wrapped as tape leaves for a single forward pass.
pub struct Bound {
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.index
            .get(name)
            .map(|&i| self.tensors[i].clone())
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter `{name}`")))
    }

    /// Leaves in parameter order, for reading gradients after backward.
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
}

/// FNV-1a, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
