//! Binary training checkpoint.
//!
//! ```text
//! magic      8 bytes  "RFLNCKPT"
//! version    u32 LE
//! header_len u32 LE
//! header     UTF-8 TOML: epoch, step, model/train/loss echo, dilations,
//!            RNG position, Adam step counters, tensor manifest
//! data_len   u64 LE
//! data       f32 LE arrays at the manifest's byte offsets
//! crc32      u32 LE over every preceding byte
//! ```
//!
//! Arrays appear in declaration order: generator parameters, discriminator
//! parameters, then the generator's Adam `m` and `v`, then the
//! discriminator's.

use std::fs;
use std::path::Path;

use reflectnet_core::model::{Discriminator, Generator, ParamStore, DILATIONS};
use reflectnet_core::optim::AdamState;
use reflectnet_core::train::{RngState, TrainState};
use serde::{Deserialize, Serialize};

use crate::config::{LossSection, ModelSection, RunConfig, TrainSection};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"RFLNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    epoch: usize,
    step: u64,
    dilations: Vec<usize>,
    model: ModelSection,
    train: TrainSection,
    loss: LossSection,
    rng: RngHeader,
    adam: AdamHeader,
    tensor: Vec<Entry>,
}

/// Integers that may exceed TOML's signed 64-bit range are kept as text.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngHeader {
    seed: String,
    stream: String,
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    generator_step: u64,
    discriminator_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

fn bad(msg: impl std::fmt::Display) -> CliError {
    CliError::Format(format!("checkpoint: {msg}"))
}

/// The arrays of a state in file order, with their manifest names.
fn sections(state: &TrainState) -> Vec<(String, Vec<usize>, &[f32])> {
    let mut out = Vec::new();
    for (prefix, store) in [("generator", &state.generator), ("discriminator", &state.discriminator)] {
        for p in store.params() {
            out.push((format!("{prefix}/{}", p.name), p.shape.clone(), p.data.as_slice()));
        }
    }
    for (net, store, adam) in [
        ("generator", &state.generator, &state.adam_g),
        ("discriminator", &state.discriminator, &state.adam_d),
    ] {
        for (moment, arrays) in [("m", &adam.m), ("v", &adam.v)] {
            for (p, a) in store.params().iter().zip(arrays) {
                out.push((format!("adam.{net}.{moment}/{}", p.name), p.shape.clone(), a.as_slice()));
            }
        }
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex32(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let arrays = sections(state);
    let mut offset = 0u64;
    let mut tensor = Vec::with_capacity(arrays.len());
    for (name, shape, data) in &arrays {
        tensor.push(Entry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
        });
        offset += 4 * data.len() as u64;
    }
    let echo = RunConfig::from_train_config(&state.config);
    let header = Header {
        epoch: state.epoch,
        step: state.step,
        dilations: DILATIONS.to_vec(),
        model: echo.model,
        train: echo.train,
        loss: echo.loss,
        rng: RngHeader {
            seed: hex(&state.rng.seed),
            stream: state.rng.stream.to_string(),
            word_pos: state.rng.word_pos.to_string(),
        },
        adam: AdamHeader {
            generator_step: state.adam_g.step,
            discriminator_step: state.adam_d.step,
        },
        tensor,
    };
    let text = toml::to_string(&header).map_err(|e| CliError::Usage(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(32 + text.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&offset.to_le_bytes());
    for (_, _, data) in &arrays {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn fill(store: &mut ParamStore, prefix: &str, entries: &mut std::slice::Iter<'_, Entry>, data: &[u8]) -> Result<()> {
    let names: Vec<(String, Vec<usize>, usize)> = store.table();
    for (name, shape, len) in names {
        let want = format!("{prefix}/{name}");
        let e = entries
            .next()
            .ok_or_else(|| bad(format!("manifest ends before `{want}`")))?;
        if e.name != want || e.shape != shape {
            return Err(bad(format!(
                "manifest has `{}` {:?} where the model expects `{want}` {shape:?}",
                e.name, e.shape
            )));
        }
        let start = e.offset as usize;
        let bytes = start
            .checked_add(4 * len)
            .and_then(|end| data.get(start..end))
            .ok_or_else(|| bad(format!("`{want}` lies outside the data block")))?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.load(&name, &values).map_err(bad)?;
    }
    Ok(())
}

fn moments(store: &ParamStore, prefix: &str, entries: &mut std::slice::Iter<'_, Entry>, data: &[u8]) -> Result<Vec<Vec<f32>>> {
    let mut scratch = store.clone();
    fill(&mut scratch, prefix, entries, data)?;
    Ok(scratch.params().iter().map(|p| p.data.clone()).collect())
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(bad("not a reflectnet checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}, expected {VERSION}")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch; the file is corrupt or truncated"));
    }
    let header_len = r.u32("header length")? as usize;
    let text = std::str::from_utf8(r.take(header_len, "header")?).map_err(|_| bad("header is not UTF-8"))?;
    let header: Header = toml::from_str(text).map_err(|e| bad(format!("header: {}", e.message())))?;
    let data_len = r.u64("data length")? as usize;
    let data = r.take(data_len, "data")?;
    if r.pos != body.len() {
        return Err(bad("trailing bytes after the data block"));
    }
    if header.dilations != DILATIONS {
        return Err(bad(format!(
            "dilation schedule {:?} differs from this build's {:?}",
            header.dilations, DILATIONS
        )));
    }
    let echo = RunConfig {
        model: header.model,
        train: header.train,
        loss: header.loss,
        ..RunConfig::default()
    };
    let config = echo
        .train_config()
        .map_err(|e| bad(format!("config echo: {e}")))?;
    let mut generator = Generator::new(config.generator).map_err(bad)?.params().clone();
    let mut discriminator = Discriminator::new(config.discriminator).map_err(bad)?.params().clone();
    let mut entries = header.tensor.iter();
    fill(&mut generator, "generator", &mut entries, data)?;
    fill(&mut discriminator, "discriminator", &mut entries, data)?;
    let g_m = moments(&generator, "adam.generator.m", &mut entries, data)?;
    let g_v = moments(&generator, "adam.generator.v", &mut entries, data)?;
    let d_m = moments(&discriminator, "adam.discriminator.m", &mut entries, data)?;
    let d_v = moments(&discriminator, "adam.discriminator.v", &mut entries, data)?;
    if let Some(e) = entries.next() {
        return Err(bad(format!("unexpected manifest entry `{}`", e.name)));
    }
    let rng = RngState {
        seed: unhex32(&header.rng.seed).ok_or_else(|| bad("rng seed must be 64 hex digits"))?,
        stream: header.rng.stream.parse().map_err(|_| bad("rng stream"))?,
        word_pos: header.rng.word_pos.parse().map_err(|_| bad("rng word_pos"))?,
    };
    Ok(TrainState {
        config,
        generator,
        discriminator,
        adam_g: AdamState {
            step: header.adam.generator_step,
            m: g_m,
            v: g_v,
        },
        adam_d: AdamState {
            step: header.adam.discriminator_step,
            m: d_m,
            v: d_v,
        },
        epoch: header.epoch,
        step: header.step,
        rng,
    })
}

/// Write through a temporary file so an interrupted save never leaves a
/// half-written checkpoint under the final name.
pub fn save(path: &Path, state: &TrainState) -> Result<()> {
    let bytes = encode(state)?;
    let tmp = path.with_extension("ckpt.partial");
    fs::write(&tmp, &bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Generator with the weights stored in a checkpoint.
pub fn load_generator(path: &Path) -> Result<Generator> {
    let state = load(path)?;
    let mut g = Generator::new(state.config.generator).map_err(bad)?;
    for p in state.generator.params() {
        g.params_mut().load(&p.name, &p.data).map_err(bad)?;
    }
    Ok(g)
}
