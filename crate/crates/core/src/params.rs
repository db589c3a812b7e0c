//! Named parameter storage, tape binding, and the checkpoint container.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "LSEGCKPT"
//! version      u32      1
//! config_len   u64, then config_len bytes of canonical config text
//! state_len    u64, then state_len bytes of `key = value` lines
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u32, then name_len bytes of UTF-8 name
//!   ndim       u32, then ndim × u64 extents
//!   dtype      u8       8 = f64, 4 = f32
//!   payload    product(extents) little-endian IEEE-754 values
//! ```
//!
//! Tensors are written in name order, so equal stores give equal files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lesionseg_autodiff::{Real, Tape, Tensor, Var};
use rand::Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_TAG: u8 = std::mem::size_of::<Real>() as u8;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.map
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Records every parameter on `tape`; those rejected by `trainable`
    /// become constants.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .map
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable(k))))
            .collect();
        Bound { vars }
    }
}

/// Parameter handles on one tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Binds names to existing tape variables.
    pub fn from_vars<I, S>(vars: I) -> Self
    where
        I: IntoIterator<Item = (S, Var)>,
        S: Into<String>,
    {
        Self {
            vars: vars.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("parameter `{name}` is not bound")))
    }

    /// Gradients of every trainable parameter after `tape.backward`.
    pub fn grads(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(k, &v)| tape.grad(v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}

/// Uniform in ±√(6 / fan_in).
pub fn he_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt() as Real;
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound)).expect("valid shape")
}

/// Weights of a conv kernel `[co, ci, k, k, k]`.
pub fn conv_kernel(rng: &mut impl Rng, co: usize, ci: usize, k: usize) -> Tensor {
    he_uniform(rng, &[co, ci, k, k, k], ci * k * k * k)
}

/// Everything needed to resume or evaluate a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Free-form `key = value` lines (epoch, phase, ...).
    pub state: String,
    pub tensors: ParamStore,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                what,
                format!("truncated at byte {} (need {n} more)", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len_prefixed_u64(&mut self, what: &'static str) -> Result<&'a [u8]> {
        let n = self.u64(what)?;
        let n = usize::try_from(n).map_err(|_| Error::format(self.path, what, "length overflow"))?;
        self.take(n, what)
    }

    fn text(&mut self, raw: &'a [u8], what: &'static str) -> Result<&'a str> {
        std::str::from_utf8(raw).map_err(|_| Error::format(self.path, what, "not UTF-8"))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let config = self.config.to_canonical();
        put_u64(&mut out, config.len() as u64);
        out.extend_from_slice(config.as_bytes());
        put_u64(&mut out, self.state.len() as u64);
        out.extend_from_slice(self.state.as_bytes());
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in self.tensors.iter() {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.ndim() as u32);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            out.push(DTYPE_TAG);
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { path, bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "magic", "not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, "version", format!("unsupported version {version}")));
        }
        let raw = r.len_prefixed_u64("config")?;
        let config = RunConfig::from_canonical(r.text(raw, "config")?)
            .map_err(|e| Error::format(path, "config", e.to_string()))?;
        let raw = r.len_prefixed_u64("state")?;
        let state = r.text(raw, "state")?.to_string();
        let count = r.u32("tensor count")?;
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let n = r.u32("tensor name")? as usize;
            let raw = r.take(n, "tensor name")?;
            let name = r.text(raw, "tensor name")?.to_string();
            let ndim = r.u32("tensor rank")? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64("tensor shape").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let tag = r.take(1, "dtype")?[0];
            if tag != DTYPE_TAG {
                return Err(Error::format(
                    path,
                    "dtype",
                    format!("tensor `{name}` has {}-byte floats, expected {DTYPE_TAG}", tag),
                ));
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::format(path, "tensor shape", "overflow"))?;
            let width = std::mem::size_of::<Real>();
            let payload = r.take(numel * width, "tensor payload")?;
            let data = payload
                .chunks_exact(width)
                .map(|b| Real::from_le_bytes(b.try_into().expect("chunk width")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::format(path, "tensor shape", e.to_string()))?;
            if tensors.contains(&name) {
                return Err(Error::format(path, "tensor name", format!("duplicate `{name}`")));
            }
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailer", format!("{} unexpected bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config, state, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Value of `key` in the state block.
    pub fn state_value(&self, key: &str) -> Option<&str> {
        self.state.lines().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }
}
