//! Parameter layout, initialization, and the `APCT` model file.
//!
//! File layout (little-endian): magic `APCT`, `u32` version, `u32` length of
//! the JSON config document followed by its bytes, `u32` record count, then
//! per record: `u32` name length, name bytes, `u32` rank, `rank × u32` dims,
//! `f32` values.

use std::fs;
use std::path::Path;

use super::config::{ModelConfig, STAGES};
use crate::error::{Error, Result};
use crate::rng::{self, StreamKey};
use crate::tensor::{Scalar, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"APCT";
pub const MODEL_VERSION: u32 = 1;

/// Index of the first tensor of each component in the flat parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tokenizer: usize,
    pub pos: usize,
    /// `blocks[stage][block]`
    pub blocks: Vec<Vec<usize>>,
    /// Aux heads for stages `0..STAGES - 1`.
    pub aux: Vec<usize>,
    pub norm: usize,
    pub head: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Xavier-normal with the given fan-in and fan-out.
    Xavier(usize, usize),
}

fn linear(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push(ParamSpec { name: format!("{prefix}.weight"), shape: vec![fan_in, fan_out], init: Init::Xavier(fan_in, fan_out) });
    out.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![1, fan_out], init: Init::Zeros });
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    out.push(ParamSpec { name: format!("{prefix}.gamma"), shape: vec![1, c], init: Init::Ones });
    out.push(ParamSpec { name: format!("{prefix}.beta"), shape: vec![1, c], init: Init::Zeros });
}

/// Every learnable tensor with its shape, in storage order.
pub fn param_specs(cfg: &ModelConfig) -> (Vec<ParamSpec>, Layout) {
    let c = cfg.dim;
    let mut specs = Vec::new();
    let tokenizer = specs.len();
    linear(&mut specs, "tokenizer.fc1", 3, c / 2);
    linear(&mut specs, "tokenizer.fc2", c / 2, c);
    let pos = specs.len();
    linear(&mut specs, "pos.fc1", 3, c);
    linear(&mut specs, "pos.fc2", c, c);
    let mut blocks = Vec::new();
    for (s, &depth) in cfg.depths.iter().enumerate() {
        let mut stage = Vec::new();
        for b in 0..depth {
            stage.push(specs.len());
            let p = format!("stage{s}.block{b}");
            norm(&mut specs, &format!("{p}.ln1"), c);
            for w in ["wq", "wk", "wv"] {
                specs.push(ParamSpec { name: format!("{p}.{w}"), shape: vec![c, c], init: Init::Xavier(c, c) });
            }
            linear(&mut specs, &format!("{p}.proj"), c, c);
            norm(&mut specs, &format!("{p}.ln2"), c);
            linear(&mut specs, &format!("{p}.ff1"), c, 4 * c);
            linear(&mut specs, &format!("{p}.ff2"), 4 * c, c);
        }
        blocks.push(stage);
    }
    let mut aux = Vec::new();
    for s in 0..STAGES - 1 {
        aux.push(specs.len());
        linear(&mut specs, &format!("aux{s}"), c, cfg.classes);
    }
    let norm_at = specs.len();
    norm(&mut specs, "final.ln", c);
    let head = specs.len();
    linear(&mut specs, "head.fc1", c, c);
    linear(&mut specs, "head.fc2", c, cfg.classes);
    let len = specs.len();
    (specs, Layout { tokenizer, pos, blocks, aux, norm: norm_at, head, len })
}

/// Tensors per block in [`param_specs`] order.
pub const PER_BLOCK: usize = 13;

/// All learnable tensors plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    layout: Layout,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded random initialization; every tensor has its own stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = param_specs(config);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in specs {
            let n: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::Xavier(fi, fo) => {
                    let std = (2.0 / (fi + fo) as f64).sqrt();
                    let mut r = StreamKey::new(seed).with_str(&spec.name).rng();
                    (0..n).map(|_| T::of(std * rng::gaussian(&mut r))).collect()
                }
            };
            tensors.push(Tensor::new(spec.shape, data)?.with_grad());
            names.push(spec.name);
        }
        Ok(ModelParams { config: config.clone(), names, tensors, layout })
    }

    fn from_parts(config: ModelConfig, named: Vec<(String, Tensor<T>)>, path: &Path) -> Result<Self> {
        config.validate().map_err(|e| Error::format(path, e.to_string()))?;
        let (specs, layout) = param_specs(&config);
        if named.len() != specs.len() {
            return Err(Error::format(path, format!("{} records, config needs {}", named.len(), specs.len())));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (spec, (name, t)) in specs.into_iter().zip(named) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::format(
                    path,
                    format!("record `{name}` {:?} where `{}` {:?} was expected", t.shape(), spec.name, spec.shape),
                ));
            }
            if !t.is_finite() {
                return Err(Error::format(path, format!("record `{name}` holds non-finite values")));
            }
            names.push(name);
            tensors.push(t.with_grad());
        }
        Ok(ModelParams { config, names, tensors, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast::<U>().with_grad()).collect(),
            layout: self.layout.clone(),
        }
    }
}

impl ModelParams<f32> {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let cfg = serde_json::to_vec(&self.config)?;
        let mut buf = Vec::with_capacity(16 + cfg.len() + self.numel() * 4 + self.names.len() * 48);
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(&cfg);
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::format(path, "bad magic"));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let cfg_len = r.u32()? as usize;
        let config: ModelConfig =
            serde_json::from_slice(r.take(cfg_len)?).map_err(|e| Error::format(path, format!("config: {e}")))?;
        let count = r.u32()? as usize;
        let mut named = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(path, "name is not utf-8"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(path, "record too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            named.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes"));
        }
        Self::from_parts(config, named, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
    path: &'b Path,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
