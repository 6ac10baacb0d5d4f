//! Little-endian checkpoint files.
//!
//! ```text
//! "SSDK" | version u32 | config len u32 | config UTF-8 | sha256(config) [32]
//! | epoch u32 | dev loss f64 | members u32
//! | per member: params u32, per param: name len u32 | name | ndim u32 | dims u32.. | f64 data..
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::SsdModel;

pub const MAGIC: &[u8; 4] = b"SSDK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Epoch of the best dev-loss snapshot.
    pub epoch: u32,
    pub dev_loss: f64,
    /// One parameter set, or several when scores are averaged.
    pub members: Vec<Vec<(String, Tensor)>>,
}

fn config_digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

impl Checkpoint {
    pub fn from_model(config: TrainConfig, model: &SsdModel, epoch: u32, dev_loss: f64) -> Self {
        Checkpoint {
            config,
            epoch,
            dev_loss,
            members: vec![model.params().into_iter().map(|(n, t)| (n, t.clone())).collect()],
        }
    }

    /// Rebuilds every member model.
    pub fn models(&self) -> Result<Vec<SsdModel>> {
        self.members
            .iter()
            .map(|params| {
                let mut m = SsdModel::new(self.config.model.clone(), self.config.seed)?;
                m.set_params(params.clone()).map_err(|e| Error::Checkpoint {
                    field: "parameters",
                    message: e.to_string(),
                })?;
                Ok(m)
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let put_u32 = |b: &mut Vec<u8>, v: usize| b.extend_from_slice(&(v as u32).to_le_bytes());
        b.extend_from_slice(MAGIC);
        put_u32(&mut b, VERSION as usize);
        let text = self.config.to_config_text();
        put_u32(&mut b, text.len());
        b.extend_from_slice(text.as_bytes());
        b.extend_from_slice(&config_digest(&text));
        put_u32(&mut b, self.epoch as usize);
        b.extend_from_slice(&self.dev_loss.to_le_bytes());
        put_u32(&mut b, self.members.len());
        for params in &self.members {
            put_u32(&mut b, params.len());
            for (name, t) in params {
                put_u32(&mut b, name.len());
                b.extend_from_slice(name.as_bytes());
                put_u32(&mut b, t.ndim());
                for &d in t.shape() {
                    put_u32(&mut b, d);
                }
                for v in t.data() {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        b
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(bad("magic", "not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(bad(
                "version",
                format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let len = r.u32("config")? as usize;
        let text = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| bad("config", "not UTF-8"))?
            .to_string();
        if r.take(32, "digest")? != config_digest(&text) {
            return Err(bad("digest", "config digest mismatch"));
        }
        let config = TrainConfig::from_config_text(&text).map_err(|e| bad("config", e.to_string()))?;
        let epoch = r.u32("epoch")?;
        let dev_loss = f64::from_le_bytes(r.take(8, "dev_loss")?.try_into().unwrap());
        let count = r.u32("members")? as usize;
        if count == 0 {
            return Err(bad("members", "checkpoint holds no parameters"));
        }
        let mut members = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let n = r.u32("parameter count")? as usize;
            let mut params = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                let len = r.u32("parameter name")? as usize;
                let name = std::str::from_utf8(r.take(len, "parameter name")?)
                    .map_err(|_| bad("parameter name", "not UTF-8"))?
                    .to_string();
                let ndim = r.u32("shape")? as usize;
                let shape = (0..ndim)
                    .map(|_| r.u32("shape").map(|d| d as usize))
                    .collect::<Result<Vec<_>>>()?;
                let numel = shape
                    .iter()
                    .try_fold(1usize, |a, &d| a.checked_mul(d))
                    .and_then(|n| n.checked_mul(8))
                    .ok_or_else(|| bad("shape", format!("shape {shape:?} of `{name}` overflows")))?;
                let values = r
                    .take(numel, "parameter data")?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let t = Tensor::new(shape, values).map_err(|e| bad("shape", e.to_string()))?;
                params.push((name, t));
            }
            members.push(params);
        }
        if r.pos != data.len() {
            return Err(bad(
                "trailer",
                format!("{} unexpected bytes after the last parameter", data.len() - r.pos),
            ));
        }
        let ckpt = Checkpoint {
            config,
            epoch,
            dev_loss,
            members,
        };
        ckpt.check_layout()?;
        Ok(ckpt)
    }

    /// Every member must carry exactly the model's parameters.
    fn check_layout(&self) -> Result<()> {
        let reference =
            SsdModel::new(self.config.model.clone(), self.config.seed).map_err(|e| bad("config", e.to_string()))?;
        let expected = reference.params();
        for params in &self.members {
            if params.len() != expected.len() {
                return Err(bad(
                    "parameters",
                    format!("expected {} tensors, found {}", expected.len(), params.len()),
                ));
            }
            for ((name, t), (ename, et)) in params.iter().zip(&expected) {
                if name != ename || t.shape() != et.shape() {
                    return Err(bad(
                        "parameters",
                        format!(
                            "found `{name}` {:?} where `{ename}` {:?} belongs",
                            t.shape(),
                            et.shape()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

fn bad(field: &'static str, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        field,
        message: message.into(),
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if n > self.data.len() - self.pos {
            return Err(bad(field, "file is truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}
