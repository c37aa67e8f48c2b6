//! Binary checkpoint container.
//!
//! All integers and floats are little-endian. Layout, in order:
//!
//! | field | encoding |
//! |-------|----------|
//! | magic | 8 bytes `MIXACKPT` |
//! | version | u32, currently 1 |
//! | seed | u64 |
//! | phases_done | u32 |
//! | epochs_done | u64, index of the next shuffle stream |
//! | model config | u32 conv1_channels, u32 conv2_channels, u32 hidden, u32 classes, 3 × u8 basis codes |
//! | param_count | u32 |
//! | per parameter | u32 name length, UTF-8 name, u8 group (0 backbone, 1 mixture), u32 ndim, ndim × u64 dims, f64 data |
//! | adam | f64 beta1, f64 beta2, f64 eps, u64 t, then per parameter f64 m followed by f64 v |
//!
//! Parameters appear in the model's canonical layout order, so a
//! save → load → save cycle reproduces the bytes exactly.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::mixture::Basis;
use crate::model::{Group, Model, ModelConfig, Param};
use crate::optim::{AdamState, Moments};

const MAGIC: &[u8; 8] = b"MIXACKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub phases_done: u32,
    pub epochs_done: u64,
    pub model: Model,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u64(&mut out, self.seed);
        put_u32(&mut out, self.phases_done);
        put_u64(&mut out, self.epochs_done);

        let cfg = self.model.config();
        for v in [
            cfg.conv1_channels,
            cfg.conv2_channels,
            cfg.hidden,
            cfg.classes,
        ] {
            put_u32(&mut out, v as u32);
        }
        out.extend(cfg.bases.iter().map(|b| b.code()));

        let params = self.model.params();
        put_u32(&mut out, params.len() as u32);
        for p in params {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            out.push(match p.group {
                Group::Backbone => 0,
                Group::Mixture => 1,
            });
            put_u32(&mut out, p.tensor.shape().len() as u32);
            for &d in p.tensor.shape() {
                put_u64(&mut out, d as u64);
            }
            put_f64s(&mut out, p.tensor.data());
        }

        for v in [self.adam.beta1, self.adam.beta2, self.adam.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u64(&mut out, self.adam.t);
        for mo in &self.adam.moments {
            put_f64s(&mut out, &mo.m);
            put_f64s(&mut out, &mo.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let seed = r.u64()?;
        let phases_done = r.u32()?;
        let epochs_done = r.u64()?;

        let dims: Vec<usize> = (0..4)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<_>>()?;
        let mut bases = [Basis::Relu; 3];
        for b in &mut bases {
            let code = r.take(1)?[0];
            *b = Basis::from_code(code)
                .ok_or_else(|| Error::Checkpoint(format!("unknown basis code {code}")))?;
        }
        let config = ModelConfig {
            conv1_channels: dims[0],
            conv2_channels: dims[1],
            hidden: dims[2],
            classes: dims[3],
            bases,
        };

        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let group = match r.take(1)?[0] {
                0 => Group::Backbone,
                1 => Group::Mixture,
                g => return Err(Error::Checkpoint(format!("unknown group code {g}"))),
            };
            let ndim = r.u32()? as usize;
            let shape: Vec<usize> = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<_>>()?;
            let n = shape.iter().product();
            let data = r.f64s(n)?;
            params.push(Param {
                name,
                group,
                tensor: Tensor::new(&shape, data)?.with_grad(true),
            });
        }
        let model = Model::from_params(config, params)?;

        let mut adam = AdamState::new(model.params());
        adam.beta1 = r.f64()?;
        adam.beta2 = r.f64()?;
        adam.eps = r.f64()?;
        adam.t = r.u64()?;
        for (mo, p) in adam.moments.iter_mut().zip(model.params()) {
            let n = p.tensor.len();
            *mo = Moments {
                m: r.f64s(n)?,
                v: r.f64s(n)?,
            };
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            seed,
            phases_done,
            epochs_done,
            model,
            adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::data(path, format!("cannot read: {e}")))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = Model::new(ModelConfig::tiny(), 9);
        let mut adam = AdamState::new(model.params());
        adam.t = 17;
        adam.moments[2].m[5] = 0.25;
        adam.moments[8].v[1] = 1e-9;
        Checkpoint {
            seed: 9,
            phases_done: 2,
            epochs_done: 4,
            model,
            adam,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
