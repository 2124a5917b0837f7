//! Binary parameter container with a JSON metadata block.
//!
//! Layout, all integers little-endian:
//! magic `FORGECKP`, u32 version, u64 metadata length + UTF-8 JSON,
//! u32 tensor count, then per tensor: u32 name length + name, u32 rank,
//! u64 per dimension, f64 data. An optional optimizer section follows:
//! u8 present flag, u32 kind length + JSON kind, f64 lr, u64 step,
//! u32 moment count, then each moment as an unnamed tensor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::aligner::{Aligner, AlignerConfig};
use crate::autodiff::{Optimizer, OptimizerKind, ParamStore, Tensor};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::rl::BaselineRegressor;

pub const MAGIC: &[u8; 8] = b"FORGECKP";
pub const VERSION: u32 = 1;

const MAX_NAME: u32 = 4096;
const MAX_RANK: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerSnapshot {
    pub fn of(optimizer: &Optimizer) -> Self {
        let (m, v) = optimizer.moments();
        OptimizerSnapshot {
            kind: optimizer.kind,
            lr: optimizer.lr,
            step: optimizer.steps(),
            first_moment: m.to_vec(),
            second_moment: v.to_vec(),
        }
    }

    /// An optimizer over `params` continuing from this state.
    pub fn restore(&self, params: &ParamStore, clip_norm: Option<f64>) -> Result<Optimizer> {
        let mut opt = Optimizer::new(self.kind, self.lr, params).with_clip(clip_norm);
        opt.restore(self.step, self.first_moment.clone(), self.second_moment.clone())?;
        Ok(opt)
    }
}

/// Named tensors, free-form metadata and optionally the optimizer state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl Checkpoint {
    pub fn new<M: Serialize>(metadata: &M, params: &ParamStore) -> Result<Self> {
        let metadata = serde_json::to_value(metadata).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let tensors = params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
        Ok(Checkpoint {
            metadata,
            tensors,
            optimizer: None,
        })
    }

    pub fn with_optimizer(mut self, optimizer: &Optimizer) -> Self {
        self.optimizer = Some(OptimizerSnapshot::of(optimizer));
        self
    }

    pub fn metadata<M: DeserializeOwned>(&self) -> Result<M> {
        serde_json::from_value(self.metadata.clone()).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))
    }

    /// Rebuilds a parameter store in the saved order.
    pub fn param_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            store.add(name, t.clone())?;
        }
        Ok(store)
    }

    /// One `name<TAB>shape` line per tensor, for diffing.
    pub fn manifest(&self) -> String {
        let mut out = format!("version\t{VERSION}\n");
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("{name}\t[{}]\n", dims.join(",")));
        }
        if let Some(o) = &self.optimizer {
            out.push_str(&format!("optimizer\tstep {}\n", o.step));
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        w.write_u32::<LE>(VERSION).map_err(io)?;
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_u64::<LE>(meta.len() as u64).map_err(io)?;
        w.write_all(&meta).map_err(io)?;
        w.write_u32::<LE>(self.tensors.len() as u32).map_err(io)?;
        for (name, t) in &self.tensors {
            w.write_u32::<LE>(name.len() as u32).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            write_tensor(w, t).map_err(io)?;
        }
        match &self.optimizer {
            None => w.write_u8(0).map_err(io)?,
            Some(o) => {
                w.write_u8(1).map_err(io)?;
                let kind = serde_json::to_vec(&o.kind).map_err(|e| Error::Checkpoint(e.to_string()))?;
                w.write_u32::<LE>(kind.len() as u32).map_err(io)?;
                w.write_all(&kind).map_err(io)?;
                w.write_f64::<LE>(o.lr).map_err(io)?;
                w.write_u64::<LE>(o.step).map_err(io)?;
                w.write_u32::<LE>(o.first_moment.len() as u32).map_err(io)?;
                for t in o.first_moment.iter().chain(&o.second_moment) {
                    write_tensor(w, t).map_err(io)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a forge checkpoint".into()));
        }
        let version = r.read_u32::<LE>().map_err(io)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.read_u64::<LE>().map_err(io)?;
        let meta = read_bytes(r, len).map_err(io)?;
        let metadata = serde_json::from_slice(&meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let count = r.read_u32::<LE>().map_err(io)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let n = r.read_u32::<LE>().map_err(io)?;
            if n > MAX_NAME {
                return Err(Error::Checkpoint(format!("tensor name of {n} bytes")));
            }
            let name = String::from_utf8(read_bytes(r, n as u64).map_err(io)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            tensors.push((name, read_tensor(r)?));
        }
        let optimizer = match r.read_u8().map_err(io)? {
            0 => None,
            1 => {
                let n = r.read_u32::<LE>().map_err(io)?;
                let kind = read_bytes(r, n as u64).map_err(io)?;
                let kind = serde_json::from_slice(&kind).map_err(|e| Error::Checkpoint(format!("optimizer kind: {e}")))?;
                let lr = r.read_f64::<LE>().map_err(io)?;
                let step = r.read_u64::<LE>().map_err(io)?;
                let moments = r.read_u32::<LE>().map_err(io)?;
                let mut first_moment = Vec::new();
                for _ in 0..moments {
                    first_moment.push(read_tensor(r)?);
                }
                let mut second_moment = Vec::new();
                for _ in 0..moments {
                    second_moment.push(read_tensor(r)?);
                }
                Some(OptimizerSnapshot {
                    kind,
                    lr,
                    step,
                    first_moment,
                    second_moment,
                })
            }
            b => return Err(Error::Checkpoint(format!("bad optimizer flag {b}"))),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            metadata,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read_from(&mut BufReader::new(file))
    }
}

fn read_bytes<R: Read>(r: &mut R, len: u64) -> std::io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf)?;
    if buf.len() as u64 != len {
        return Err(std::io::ErrorKind::UnexpectedEof.into());
    }
    Ok(buf)
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_u32::<LE>(t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_u64::<LE>(d as u64)?;
    }
    for &x in t.data() {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let io = |e: std::io::Error| Error::Checkpoint(format!("truncated tensor: {e}"));
    let rank = r.read_u32::<LE>().map_err(io)?;
    if rank > MAX_RANK {
        return Err(Error::Checkpoint(format!("tensor of rank {rank}")));
    }
    let mut shape = Vec::new();
    for _ in 0..rank {
        shape.push(r.read_u64::<LE>().map_err(io)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
    let bytes = read_bytes(r, n as u64 * 8).map_err(io)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor::new(shape, data)?)
}

#[derive(Serialize, Deserialize)]
struct GeneratorMeta {
    model: String,
    config: GeneratorConfig,
    input_vocab: Vocabulary,
    output_vocab: Vocabulary,
    #[serde(default)]
    baseline: Option<BaselineRegressor>,
}

#[derive(Serialize, Deserialize)]
struct AlignerMeta {
    model: String,
    config: AlignerConfig,
    vocab: Vocabulary,
    threshold: Option<f64>,
}

fn expect_model(meta: &serde_json::Value, model: &str) -> Result<()> {
    match meta.get("model").and_then(|m| m.as_str()) {
        Some(m) if m == model => Ok(()),
        other => Err(Error::Checkpoint(format!("expected a {model} checkpoint, found {other:?}"))),
    }
}

impl Generator {
    pub fn to_checkpoint(&self, baseline: Option<&BaselineRegressor>) -> Result<Checkpoint> {
        let meta = GeneratorMeta {
            model: "generator".into(),
            config: self.config.clone(),
            input_vocab: self.input_vocab.clone(),
            output_vocab: self.output_vocab.clone(),
            baseline: baseline.cloned(),
        };
        Checkpoint::new(&meta, &self.params)
    }

    /// The generator and, after RL training, its baseline regressor.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Option<BaselineRegressor>)> {
        expect_model(&ck.metadata, "generator")?;
        let meta: GeneratorMeta = ck.metadata()?;
        let g = Generator::from_parts(ck.param_store()?, meta.input_vocab, meta.output_vocab, meta.config)?;
        Ok((g, meta.baseline))
    }
}

impl Aligner {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = AlignerMeta {
            model: "aligner".into(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            threshold: self.threshold,
        };
        Checkpoint::new(&meta, &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        expect_model(&ck.metadata, "aligner")?;
        let meta: AlignerMeta = ck.metadata()?;
        Aligner::from_parts(ck.param_store()?, meta.vocab, meta.config, meta.threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, 0.0, f64::MIN_POSITIVE, 7.0]).unwrap()).unwrap();
        s.add("b", Tensor::vector(vec![0.1, 0.2])).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = store();
        let opt = Optimizer::adam(0.01, &s);
        let ck = Checkpoint::new(&serde_json::json!({"kind": "test"}), &s).unwrap().with_optimizer(&opt);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.tensors, ck.tensors);
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!(back.metadata["kind"], "test");
        assert_eq!(back.manifest(), "version\t1\na\t[2,3]\nb\t[2]\noptimizer\tstep 0\n");
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let ck = Checkpoint::new(&(), &store()).unwrap();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(&mut &buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&mut bad.as_slice()).is_err());
        buf.push(0);
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
