//! Versioned binary checkpoint container.
//!
//! Layout (little endian): magic `DMCKPT\0\0`, `u32` version, `u32`-prefixed config
//! TOML, `u32` tensor count, then per tensor a `u32`-prefixed UTF-8 name, `u32` rank,
//! `u64` extents and `f64` values; `u32` router state count, then per state a `u32`
//! expert count, bias, momentum and the four balancer parameters as `f64`; a `u64`
//! step; finally a CRC-32 of every preceding byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::weights::ModelWeights;
use crate::moe::{BalancerParams, RouterState};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"DMCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub weights: ModelWeights<T>,
    pub states: Vec<RouterState>,
    pub step: u64,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::Checkpoint {
        offset: out.len() as u64,
        message: format!("length {n} does not fit in u32"),
    })?;
    put_u32(out, v);
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let cfg = self.config.to_toml()?;
        put_len(&mut out, cfg.len())?;
        out.extend_from_slice(cfg.as_bytes());
        let named = self.weights.named();
        put_len(&mut out, named.len())?;
        for (name, t) in named {
            put_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_len(&mut out, t.shape().len())?;
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data().iter().map(|v| v.as_f64()));
        }
        put_len(&mut out, self.states.len())?;
        for s in &self.states {
            put_len(&mut out, s.bias.len())?;
            put_f64s(&mut out, s.bias.iter().copied());
            put_f64s(&mut out, s.momentum.iter().copied());
            let p = s.params;
            put_f64s(&mut out, [p.gamma, p.lambda, p.kappa, p.beta]);
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::Checkpoint {
                offset: bytes.len() as u64,
                message: "file too short".into(),
            });
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint {
                offset: 0,
                message: "bad magic".into(),
            });
        }
        let body_len = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[..body_len]) != stored {
            return Err(Error::Checkpoint {
                offset: body_len as u64,
                message: "checksum mismatch".into(),
            });
        }
        let mut r = Reader {
            buf: &bytes[..body_len],
            pos: 0,
        };
        r.take(MAGIC.len())?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error_at(8, &format!("unsupported version {version}")));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_at = r.pos;
        let cfg_src = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| r.error_at(cfg_at, "config is not UTF-8"))?;
        let config =
            ModelConfig::from_toml(cfg_src).map_err(|e| r.error_at(cfg_at, &e.to_string()))?;
        let shapes = config.parameter_shapes();
        let count = r.u32()? as usize;
        if count != shapes.len() {
            return Err(r.error_at(
                r.pos - 4,
                &format!("expected {} tensors, found {count}", shapes.len()),
            ));
        }
        let mut tensors = Vec::with_capacity(count);
        for (want_name, want_shape) in &shapes {
            let at = r.pos;
            let n = r.u32()? as usize;
            let name = r.take(n)?;
            if name != want_name.as_bytes() {
                return Err(r.error_at(at, &format!("expected tensor {want_name}")));
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            if &shape != want_shape {
                return Err(r.error_at(
                    at,
                    &format!("tensor {want_name} has shape {shape:?}, expected {want_shape:?}"),
                ));
            }
            let len: usize = shape.iter().product();
            let data = r.f64s(len)?.into_iter().map(T::of).collect();
            tensors.push(Tensor::new(shape, data).map_err(|e| r.error_at(at, &e.to_string()))?);
        }
        let weights = ModelWeights::from_tensors(&config, tensors)?;
        let n_states = r.u32()? as usize;
        if n_states != config.moe_layers() {
            return Err(r.error_at(
                r.pos - 4,
                &format!("expected {} router states", config.moe_layers()),
            ));
        }
        let mut states = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let n = r.u32()? as usize;
            let bias = r.f64s(n)?;
            let momentum = r.f64s(n)?;
            let p = r.f64s(4)?;
            states.push(RouterState {
                bias,
                momentum,
                params: BalancerParams {
                    gamma: p[0],
                    lambda: p[1],
                    kappa: p[2],
                    beta: p[3],
                },
            });
        }
        let step = r.u64()?;
        if r.pos != r.buf.len() {
            return Err(r.error_at(r.pos, "trailing bytes"));
        }
        Ok(Self {
            config,
            weights,
            states,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: &str) -> Error {
        Error::Checkpoint {
            offset: offset as u64,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                &format!("unexpected end of data reading {n} bytes"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.error_at(self.pos, "length overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
