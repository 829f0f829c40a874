//! Binary container for a trained session.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FALNET" | u32 version | u32 header_len | header JSON
//! u32 entry_count | entries...
//! entry = u16 name_len | name | u32 rows | u32 cols | rows·cols f64
//! ```
//!
//! The header echoes the configuration and carries the scalar state needed to
//! rebuild the preprocessor. Entries hold the parameters, both Adam moments,
//! the scaler bounds and every per-channel decomposition array.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MinMaxScaler;
use crate::decomposition::{Decomposition, DenoiseConfig};
use crate::error::{FalnetError, Result};
use crate::model::FalnetParams;
use crate::pipeline::{PipelineConfig, Preprocessor};
use crate::tensor::ParamSet;
use crate::training::AdamState;

pub const MAGIC: &[u8; 6] = b"FALNET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: PipelineConfig,
    input_dim: usize,
    channels: Vec<String>,
    target: usize,
    n_fit: usize,
    period: usize,
    adam_step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: PipelineConfig,
    pub pre: Preprocessor,
    pub params: FalnetParams,
    pub adam: AdamState,
}

const DECOMPOSITION_PARTS: [&str; 4] = ["trend", "seasonal", "residual", "denoised_residual"];

fn bad(msg: impl Into<String>) -> FalnetError {
    FalnetError::Checkpoint(msg.into())
}

fn put_entry(out: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    let name_len = u16::try_from(name.len()).map_err(|_| bad(format!("entry name too long: {name}")))?;
    let r = u32::try_from(rows).map_err(|_| bad("entry too large"))?;
    let c = u32::try_from(cols).map_err(|_| bad("entry too large"))?;
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&r.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn entry(&mut self) -> Result<Entry> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| bad("entry name is not UTF-8"))?
            .to_string();
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let count = rows.checked_mul(cols).ok_or_else(|| bad("entry shape overflows"))?;
        let raw = self.take(count.checked_mul(8).ok_or_else(|| bad("entry shape overflows"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes")))
            .collect();
        Ok(Entry { name, rows, cols, data })
    }
}

fn put_params(out: &mut Vec<u8>, prefix: &str, p: &FalnetParams) -> Result<()> {
    for t in p.tensors() {
        put_entry(out, &format!("{prefix}{}", t.name), t.shape.0, t.shape.1, t.data)?;
    }
    Ok(())
}

fn fill_params<I: Iterator<Item = Entry>>(entries: &mut I, prefix: &str, target: &mut FalnetParams) -> Result<()> {
    let expected: Vec<(String, (usize, usize))> = target
        .tensors()
        .into_iter()
        .map(|t| (format!("{prefix}{}", t.name), t.shape))
        .collect();
    for ((name, shape), slot) in expected.into_iter().zip(target.tensors_mut()) {
        let e = entries.next().ok_or_else(|| bad(format!("missing entry {name}")))?;
        if e.name != name || (e.rows, e.cols) != shape {
            return Err(bad(format!(
                "expected {name} {shape:?}, found {} ({}, {})",
                e.name, e.rows, e.cols
            )));
        }
        slot.copy_from_slice(&e.data);
    }
    Ok(())
}

fn expect_vector<I: Iterator<Item = Entry>>(entries: &mut I, name: &str, len: Option<usize>) -> Result<Vec<f64>> {
    let e = entries.next().ok_or_else(|| bad(format!("missing entry {name}")))?;
    if e.name != name || e.rows != 1 || len.is_some_and(|l| l != e.cols) {
        return Err(bad(format!("expected vector {name}, found {} ({}, {})", e.name, e.rows, e.cols)));
    }
    Ok(e.data)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            input_dim: self.params.lstm_layers.first().map_or(0, |l| l.input),
            channels: self.pre.channels.clone(),
            target: self.pre.target,
            n_fit: self.pre.n_fit,
            period: self.pre.decompositions.first().map_or(self.config.period, |d| d.period),
            adam_step: self.adam.t,
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);

        let mut body = Vec::new();
        put_params(&mut body, "param.", &self.params)?;
        put_params(&mut body, "adam.m.", &self.adam.m)?;
        put_params(&mut body, "adam.v.", &self.adam.v)?;
        let c = self.pre.channels.len();
        put_entry(&mut body, "scaler.min", 1, c, &self.pre.scaler.min)?;
        put_entry(&mut body, "scaler.max", 1, c, &self.pre.scaler.max)?;
        for (i, d) in self.pre.decompositions.iter().enumerate() {
            for (part, data) in DECOMPOSITION_PARTS
                .iter()
                .zip([&d.trend, &d.seasonal, &d.residual, &d.denoised_residual])
            {
                put_entry(&mut body, &format!("decomposition.{i}.{part}"), 1, data.len(), data)?;
            }
        }
        let count = 3 * self.params.tensors().len() + 2 + DECOMPOSITION_PARTS.len() * self.pre.decompositions.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(bad("not a FALNET checkpoint"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?).map_err(|e| bad(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            entries.push(r.entry()?);
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut it = entries.into_iter();

        let model = header.config.train.model_config(header.input_dim);
        let mut params = FalnetParams::zeros(&model)?;
        fill_params(&mut it, "param.", &mut params)?;
        let mut adam = AdamState::new(&params);
        fill_params(&mut it, "adam.m.", &mut adam.m)?;
        fill_params(&mut it, "adam.v.", &mut adam.v)?;
        adam.t = header.adam_step;

        let c = header.channels.len();
        if header.target >= c {
            return Err(bad(format!("target index {} out of {c} channels", header.target)));
        }
        let scaler = MinMaxScaler {
            channels: header.channels.clone(),
            min: expect_vector(&mut it, "scaler.min", Some(c))?,
            max: expect_vector(&mut it, "scaler.max", Some(c))?,
        };
        let mut decompositions = Vec::with_capacity(c);
        for i in 0..c {
            let mut parts = Vec::with_capacity(4);
            for part in DECOMPOSITION_PARTS {
                parts.push(expect_vector(&mut it, &format!("decomposition.{i}.{part}"), Some(header.n_fit))?);
            }
            let mut parts = parts.into_iter();
            let mut next = || parts.next().expect("four parts");
            decompositions.push(Decomposition {
                trend: next(),
                seasonal: next(),
                residual: next(),
                denoised_residual: next(),
                period: header.period,
            });
        }
        if it.next().is_some() {
            return Err(bad("unexpected extra entries"));
        }
        let pre = Preprocessor {
            channels: header.channels,
            target: header.target,
            n_fit: header.n_fit,
            denoise: DenoiseConfig::new(header.config.tau)?,
            decompositions,
            scaler,
        };
        Ok(Self {
            config: header.config,
            pre,
            params,
            adam,
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
