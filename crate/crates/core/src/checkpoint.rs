//! Versioned binary checkpoint container. The byte layout is described in
//! `docs/FORMATS.md`; every integer and float is little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{build_architecture, build_mlp, Arch, Layer, SnnModel};
use crate::neuron::LifParams;
use crate::optim::Sgd;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SSCK";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const BEST_FILE: &str = "checkpoint_best.ssck";
pub const LAST_FILE: &str = "checkpoint_last.ssck";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: Arch,
    pub seed: u64,
    /// Epochs completed when the checkpoint was taken.
    pub epoch: usize,
    pub input_shape: [usize; 3],
    pub classes: usize,
    /// Hidden widths of an MLP backbone; empty for conv backbones.
    pub hidden: Vec<usize>,
    pub lif: LifParams,
    pub dense_hooks: bool,
    pub params: Vec<Tensor>,
    /// Momentum buffers; empty when no optimizer step was taken.
    pub velocity: Vec<Tensor>,
    pub momentum: f64,
    pub weight_decay: f64,
}

fn hidden_widths(model: &SnnModel) -> Vec<usize> {
    if model.arch != Arch::MlpSnn {
        return Vec::new();
    }
    model
        .backbone
        .iter()
        .filter_map(|l| match *l {
            Layer::Linear { weight, .. } => Some(model.params[weight].shape()[1]),
            _ => None,
        })
        .collect()
}

impl Checkpoint {
    pub fn new(model: &SnnModel, opt: Option<&Sgd>, epoch: usize) -> Self {
        Self {
            arch: model.arch,
            seed: model.seed,
            epoch,
            input_shape: model.input_shape,
            classes: model.classes,
            hidden: hidden_widths(model),
            lif: model.lif,
            dense_hooks: model.dense_hooks,
            params: model.params.clone(),
            velocity: opt.map(|o| o.velocity.clone()).unwrap_or_default(),
            momentum: opt.map_or(0.0, |o| o.momentum),
            weight_decay: opt.map_or(0.0, |o| o.weight_decay),
        }
    }

    /// Rebuild the model and install the stored weights.
    pub fn model(&self) -> Result<SnnModel> {
        let mut m = match self.arch {
            Arch::MlpSnn => build_mlp(self.input_shape, &self.hidden, self.classes, self.seed)?,
            Arch::ConvSnnMini => build_architecture(self.arch, self.input_shape, self.classes, self.seed)?,
        };
        if m.params.len() != self.params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors stored, architecture has {}", self.params.len(), m.params.len()),
            ));
        }
        for (dst, src) in m.params.iter_mut().zip(&self.params) {
            if dst.shape() != src.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor shape {:?} does not fit {:?}", src.shape(), dst.shape()),
                ));
            }
            *dst = src.clone();
        }
        m.lif = self.lif;
        m.dense_hooks = self.dense_hooks;
        Ok(m)
    }

    pub fn optimizer(&self) -> Sgd {
        Sgd {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            velocity: self.velocity.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(&CHECKPOINT_MAGIC);
        w.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let name = self.arch.to_string();
        w.extend_from_slice(&(name.len() as u16).to_le_bytes());
        w.extend_from_slice(name.as_bytes());
        put_u64(&mut w, self.seed);
        put_u64(&mut w, self.epoch as u64);
        for d in self.input_shape {
            put_u32(&mut w, d as u32);
        }
        put_u32(&mut w, self.classes as u32);
        put_u32(&mut w, self.hidden.len() as u32);
        for &h in &self.hidden {
            put_u32(&mut w, h as u32);
        }
        for v in [self.lif.tau, self.lif.theta, self.lif.surrogate_width] {
            put_f64(&mut w, v);
        }
        w.push(u8::from(self.dense_hooks));
        put_tensors(&mut w, &self.params);
        put_f64(&mut w, self.momentum);
        put_f64(&mut w, self.weight_decay);
        put_tensors(&mut w, &self.velocity);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "missing SSCK header"));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::format("checkpoint", "architecture name is not UTF-8"))?;
        let arch: Arch = name.parse()?;
        let seed = r.u64()?;
        let epoch = r.u64()? as usize;
        let input_shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let classes = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        let hidden = (0..n_hidden).map(|_| r.u32().map(|h| h as usize)).collect::<Result<_>>()?;
        let lif = LifParams {
            tau: r.f64()?,
            theta: r.f64()?,
            surrogate_width: r.f64()?,
        };
        let dense_hooks = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::format("checkpoint", format!("bad dense flag {b}"))),
        };
        let params = r.tensors()?;
        let momentum = r.f64()?;
        let weight_decay = r.f64()?;
        let velocity = r.tensors()?;
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            arch,
            seed,
            epoch,
            input_shape,
            classes,
            hidden,
            lif,
            dense_hooks,
            params,
            velocity,
            momentum,
            weight_decay,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { what, msg } => Error::Format {
                what,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_tensors(w: &mut Vec<u8>, ts: &[Tensor]) {
    put_u32(w, ts.len() as u32);
    for t in ts {
        put_u32(w, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(w, d as u32);
        }
        for &v in t.data() {
            put_f64(w, v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format("checkpoint", format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensors(&mut self) -> Result<Vec<Tensor>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let rank = self.u32()? as usize;
            let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            if len.saturating_mul(8) > self.bytes.len() - self.pos {
                return Err(Error::format("checkpoint", format!("tensor {shape:?} exceeds the file")));
            }
            let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            out.push(Tensor::new(shape, data)?);
        }
        Ok(out)
    }
}
