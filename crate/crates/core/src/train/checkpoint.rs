//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PPTCKPT\0" | u32 version | [u8; 32] config hash
//! u64 len | metadata JSON (config, class names, vocabulary)
//! u64 step | u32 parameter count
//! name table:  per parameter, u32 len | utf-8 name
//! shape table: per parameter, u8 trainable | u32 ndim | u64 dims...
//! value blocks: per parameter, numel × f64
//! u8 has_optimizer [| u64 step | u32 count | per entry: u32 len | name | u64 n | n × f64 m | n × f64 v]
//! [u8; 32] SHA-256 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::param::Module;
use crate::train::config::RunConfig;
use crate::train::model::Model;
use crate::train::optim::{AdamW, Moments};

pub const MAGIC: &[u8; 8] = b"PPTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRecord {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    config: RunConfig,
    class_names: Option<Vec<String>>,
    vocabulary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub class_names: Option<Vec<String>>,
    pub vocabulary: Vec<String>,
    pub step: u64,
    pub tensors: Vec<TensorRecord>,
    pub optimizer: Option<OptimizerRecord>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(bad(format!("truncated file at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, limit: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > limit {
            return Err(bad(format!("length {n} exceeds remaining {limit} bytes")));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("name is not utf-8"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("block size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    v.iter().for_each(|x| out.extend(x.to_le_bytes()));
}

impl Checkpoint {
    /// Snapshot of every parameter of `model` and the optimizer moments.
    pub fn capture(model: &Model, opt: Option<&AdamW>, config: &RunConfig) -> Self {
        let mut tensors = Vec::new();
        model.visit(&mut |p| {
            tensors.push(TensorRecord {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
                trainable: p.trainable(),
                values: p.values().to_vec(),
            })
        });
        Self {
            config: config.clone(),
            class_names: model.class_names().map(<[String]>::to_vec),
            vocabulary: model.backbone.vocab.words().to_vec(),
            step: opt.map_or(0, |o| o.step),
            tensors,
            optimizer: opt.map(|o| OptimizerRecord {
                step: o.step,
                moments: o.moments.clone(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(self.config.hash_bytes());
        let meta = serde_json::to_vec(&Metadata {
            config: self.config.clone(),
            class_names: self.class_names.clone(),
            vocabulary: self.vocabulary.clone(),
        })
        .expect("metadata serializes");
        out.extend((meta.len() as u64).to_le_bytes());
        out.extend(&meta);
        out.extend(self.step.to_le_bytes());
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
        }
        for t in &self.tensors {
            out.push(t.trainable as u8);
            out.extend((t.shape.len() as u32).to_le_bytes());
            t.shape.iter().for_each(|d| out.extend((*d as u64).to_le_bytes()));
        }
        for t in &self.tensors {
            put_f64s(&mut out, &t.values);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend(o.step.to_le_bytes());
                out.extend((o.moments.len() as u32).to_le_bytes());
                for (name, m) in &o.moments {
                    put_str(&mut out, name);
                    out.extend((m.m.len() as u64).to_le_bytes());
                    put_f64s(&mut out, &m.m);
                    put_f64s(&mut out, &m.v);
                }
            }
        }
        let digest: [u8; 32] = Sha256::digest(&out).into();
        out.extend(digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 + 32 {
            return Err(bad("truncated file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("format version {version}, expected {VERSION}")));
        }
        let actual: [u8; 32] = Sha256::digest(body).into();
        if actual != digest {
            return Err(bad("checksum mismatch (file is corrupt or truncated)"));
        }
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let meta_len = r.len(body.len())?;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| bad(format!("metadata: {e}")))?;
        if meta.config.hash_bytes() != hash {
            return Err(bad("config hash does not match the stored config"));
        }
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let names = (0..count).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let mut shapes = Vec::with_capacity(count);
        for name in &names {
            let trainable = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(bad(format!("bad trainable flag {other} for `{name}`"))),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            shapes.push((trainable, shape));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, (trainable, shape)) in names.into_iter().zip(shapes) {
            let numel = shape.iter().product();
            tensors.push(TensorRecord {
                values: r.f64s(numel)?,
                name,
                shape,
                trainable,
            });
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let n = r.u32()? as usize;
                let mut moments = BTreeMap::new();
                for _ in 0..n {
                    let name = r.string()?;
                    let len = r.len(body.len())?;
                    let m = r.f64s(len)?;
                    let v = r.f64s(len)?;
                    moments.insert(name, Moments { m, v });
                }
                Some(OptimizerRecord { step, moments })
            }
            other => return Err(bad(format!("bad optimizer flag {other}"))),
        };
        if r.pos != body.len() {
            return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            config: meta.config,
            class_names: meta.class_names,
            vocabulary: meta.vocabulary,
            step,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn apply_inner(&self, model: &mut Model, require_all: bool) -> Result<()> {
        let index: BTreeMap<&str, &TensorRecord> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut seen = 0;
        let mut failure = None;
        model.visit_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            match index.get(p.name()) {
                Some(rec) if rec.shape != p.shape() => {
                    failure = Some(bad(format!(
                        "shape mismatch for `{}`: checkpoint {:?}, model {:?}",
                        p.name(),
                        rec.shape,
                        p.shape()
                    )));
                }
                Some(rec) => {
                    seen += 1;
                    if let Err(e) = p.set_values(rec.values.clone()) {
                        failure = Some(e);
                    }
                    p.set_trainable(rec.trainable);
                }
                None if require_all => failure = Some(bad(format!("checkpoint lacks `{}`", p.name()))),
                None => {}
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if seen != self.tensors.len() {
            return Err(bad(format!(
                "checkpoint has {} parameters the model does not",
                self.tensors.len() - seen
            )));
        }
        Ok(())
    }

    /// Overwrites every parameter of `model`; names and shapes must match
    /// one-to-one.
    pub fn apply(&self, model: &mut Model) -> Result<()> {
        self.apply_inner(model, true)
    }

    /// Loads a backbone-only checkpoint into a model that may carry extra
    /// tuning parameters.
    pub fn apply_backbone(&self, model: &mut Model) -> Result<()> {
        self.apply_inner(model, false)
    }

    /// Rebuilds the stored model exactly.
    pub fn build_model(&self) -> Result<Model> {
        let vocab = Vocabulary::from_words(self.vocabulary.iter().skip(4).cloned())?;
        if vocab.words() != self.vocabulary.as_slice() {
            return Err(bad("stored vocabulary does not start with the special tokens"));
        }
        let mut model = Model::backbone(&self.config, vocab)?;
        if let Some(names) = &self.class_names {
            model.attach_tuning(&self.config, names)?;
        }
        self.apply(&mut model)?;
        Ok(model)
    }

    pub fn optimizer_state(&self) -> Result<Option<AdamW>> {
        let Some(rec) = &self.optimizer else {
            return Ok(None);
        };
        let mut opt = AdamW::new(self.config.optim())?;
        opt.step = rec.step;
        opt.moments = rec.moments.clone();
        Ok(Some(opt))
    }
}
