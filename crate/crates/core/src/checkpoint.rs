//! Checkpoints: a flat binary container of named `f64` arrays plus a JSON
//! sidecar with everything needed to rebuild and resume a run.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic "CARFLOW\0" | version u32 | count u32
//! count x { name_len u32 | name utf-8 | ndim u32 | dims u64 x ndim | values f64 x prod(dims) }
//! ```

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::net::NetConfig;
use crate::optim::AdamWState;
use crate::reparam::CarVariant;

const MAGIC: &[u8; 8] = b"CARFLOW\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape { expected: n, got: data.len() });
        }
        Ok(NamedArray { name: name.into(), shape, data })
    }
}

pub fn encode_arrays(arrays: &[NamedArray]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
        for &d in &a.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_arrays(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Checkpoint("array name is not utf-8".into()))?.to_string();
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Checkpoint(format!("array `{name}` too large")))?;
        let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("array `{name}` too large")))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        out.push(NamedArray { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last array".into()));
    }
    Ok(out)
}

pub fn write_arrays(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_arrays(arrays)).map_err(|e| Error::io(path, e))
}

pub fn read_arrays(path: &Path) -> Result<Vec<NamedArray>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    decode_arrays(&bytes)
}

/// JSON sidecar describing a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: u64,
    pub variant: CarVariant,
    pub global_source_shift: bool,
    pub net: NetConfig,
    pub config_hash: String,
    pub seed: u64,
    /// Word position of the training RNG, as a decimal string.
    pub rng_word_pos: String,
    pub adam_step: u64,
    pub param_count: usize,
    pub arrays: Vec<String>,
}

/// Everything restored from disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model,
    pub optimizer: AdamWState,
    pub loss_ema: f64,
}

impl Checkpoint {
    pub fn rng(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self.meta.rng_word_pos.parse().map_err(|_| Error::Checkpoint(format!("bad rng position `{}`", self.meta.rng_word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.meta.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Sidecar path next to a binary checkpoint.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Training state to persist.
pub struct TrainState<'a> {
    pub model: &'a Model,
    pub optimizer: &'a AdamWState,
    pub step: u64,
    pub loss_ema: f64,
    pub seed: u64,
    pub rng: &'a ChaCha8Rng,
    pub config_hash: &'a str,
}

/// Write `<path>` and its JSON sidecar.
pub fn save_checkpoint(path: &Path, st: &TrainState) -> Result<()> {
    let mut arrays = Vec::new();
    for (group, params) in st.model.groups() {
        for spec in params.specs() {
            arrays.push(NamedArray::new(format!("param/{group}/{}", spec.name), spec.shape.clone(), params.data()[spec.range()].to_vec())?);
        }
        let gs = st.optimizer.group(group).ok_or_else(|| Error::Checkpoint(format!("optimizer has no group `{group}`")))?;
        for (kind, buf) in [("adam_m", &gs.m), ("adam_v", &gs.v)] {
            for spec in params.specs() {
                arrays.push(NamedArray::new(format!("{kind}/{group}/{}", spec.name), spec.shape.clone(), buf[spec.range()].to_vec())?);
            }
        }
    }
    arrays.push(NamedArray::new("state/loss_ema", vec![1], vec![st.loss_ema])?);
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        step: st.step,
        variant: st.model.variant(),
        global_source_shift: st.model.reparam.has_global_source_shift(),
        net: st.model.net.config().clone(),
        config_hash: st.config_hash.to_string(),
        seed: st.seed,
        rng_word_pos: st.rng.get_word_pos().to_string(),
        adam_step: st.optimizer.step,
        param_count: st.model.param_count(),
        arrays: arrays.iter().map(|a| a.name.clone()).collect(),
    };
    write_arrays(path, &arrays)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", meta.format_version)));
    }
    let arrays = read_arrays(path)?;
    let find = |name: &str| arrays.iter().find(|a| a.name == name).ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")));

    let mut model = Model::new(meta.net.clone(), meta.variant, meta.global_source_shift)?;
    let mut optimizer = AdamWState::new(&model);
    for (group, params) in model.groups_mut() {
        let gs = optimizer.groups.iter_mut().find(|g| g.name == group).expect("state built from model");
        let specs = params.specs().to_vec();
        for spec in &specs {
            for (kind, dst) in [("param", params.data_mut()), ("adam_m", &mut gs.m[..]), ("adam_v", &mut gs.v[..])] {
                let name = format!("{kind}/{group}/{}", spec.name);
                let a = find(&name)?;
                if a.shape != spec.shape {
                    return Err(Error::Checkpoint(format!("array `{name}` has shape {:?}, expected {:?}", a.shape, spec.shape)));
                }
                dst[spec.range()].copy_from_slice(&a.data);
            }
        }
    }
    optimizer.step = meta.adam_step;
    let loss_ema = find("state/loss_ema")?.data[0];
    if model.param_count() != meta.param_count {
        return Err(Error::Checkpoint(format!("parameter count {} does not match sidecar {}", model.param_count(), meta.param_count)));
    }
    Ok(Checkpoint { meta, model, optimizer, loss_ema })
}
