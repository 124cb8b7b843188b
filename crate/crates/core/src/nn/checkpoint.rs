//! Binary checkpoints: `SELDCKPT`, version, named parameter sections,
//! optional AdamW state per section, and a free-form config echo.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::optim::{AdamWConfig, AdamWState};
use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"SELDCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub sections: Vec<(String, ParamSet<f32>)>,
    pub optimizers: Vec<(String, AdamWState<f32>)>,
    pub config: String,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Option<&ParamSet<f32>> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn optimizer(&self, name: &str) -> Option<&AdamWState<f32>> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        put_u32(&mut w, self.sections.len() as u32);
        for (name, p) in &self.sections {
            put_str(&mut w, name);
            put_params(&mut w, p);
        }
        put_u32(&mut w, self.optimizers.len() as u32);
        for (name, s) in &self.optimizers {
            put_str(&mut w, name);
            let c = s.config;
            for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
                w.extend_from_slice(&v.to_le_bytes());
            }
            w.extend_from_slice(&s.step.to_le_bytes());
            put_params(&mut w, &s.m);
            put_params(&mut w, &s.v);
        }
        put_str(&mut w, &self.config);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut ck = Checkpoint::default();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            ck.sections.push((name, r.params()?));
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let mut f = [0.0; 5];
            for v in &mut f {
                *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            }
            let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let m = r.params()?;
            let v = r.params()?;
            m.check_aligned(&v, "checkpoint").map_err(|_| Error::Format(format!("optimizer '{name}' moments differ in layout")))?;
            let config = AdamWConfig { lr: f[0], beta1: f[1], beta2: f[2], eps: f[3], weight_decay: f[4] };
            ck.optimizers.push((name, AdamWState { config, step, m, v }));
        }
        ck.config = r.string()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut b = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut b)?;
        Self::from_bytes(&b).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

fn put_params<T: Scalar>(w: &mut Vec<u8>, p: &ParamSet<T>) {
    put_u32(w, p.len() as u32);
    for (name, param) in p.iter() {
        put_str(w, name);
        put_u32(w, param.layer as u32);
        w.push(T::DTYPE);
        put_u32(w, param.value.shape.len() as u32);
        for d in &param.value.shape {
            w.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &param.value.data {
            match T::DTYPE {
                0 => w.extend_from_slice(&v.to_f32().unwrap().to_le_bytes()),
                _ => w.extend_from_slice(&v.to_f64().unwrap().to_le_bytes()),
            }
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.b.len()).ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8 in checkpoint".into()))
    }

    fn params(&mut self) -> Result<ParamSet<f32>> {
        let mut p = ParamSet::new();
        for _ in 0..self.u32()? {
            let name = self.string()?;
            let layer = self.u32()? as usize;
            let dtype = self.take(1)?[0];
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or_else(|| Error::Format("tensor too large".into()))?;
            let data: Vec<f32> = match dtype {
                0 => self.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                1 => self.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
                    .collect(),
                d => return Err(Error::Format(format!("unknown dtype code {d}"))),
            };
            p.insert(&name, layer, Tensor::new(shape, data)).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(p)
    }
}
