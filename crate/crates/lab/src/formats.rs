//! Binary containers: the dataset format (magic "PSL1") and the model
//! parameter container (magic "PMD1"). Both little-endian, both designed
//! so write -> read -> write is bit-exact.
//!
//! Dataset layout:
//!   "PSL1"
//!   u32 n, channels, height, width, classes
//!   n   x u16 labels (0xFFFF = unlabeled)
//!   n   x u8  poison flags
//!   n*channels*height*width x f32 pixels in [0,1]
//!   optional: 0x47 marker + n x u16 hidden ground-truth labels
//!
//! Model layout:
//!   "PMD1"
//!   u32 version (1)
//!   u32 in_channels, image_size, classes, conv1, conv2, hidden, kernel
//!   u32 n_tensors, then per tensor: u32 ndim, ndim x u32 dims, f32 data

use std::fs;
use std::path::Path;

use psl_core::datakit::{LabeledDataset, UNLABELED};
use psl_core::model::{CnnConfig, DeskCnn};
use psl_core::numgrad::Tensor;

use crate::error::{LabError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"PSL1";
pub const MODEL_MAGIC: &[u8; 4] = b"PMD1";
pub const MODEL_VERSION: u32 = 1;
const HIDDEN_MARKER: u8 = 0x47;

// ── cursor ──────────────────────────────────────────────────────────

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(LabError::format(
                self.pos as u64,
                format!("truncated while reading {what}: expected {n} more bytes, file has {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16s(&mut self, n: usize, what: &str) -> Result<Vec<u16>> {
        let b = self.take(n * 2, what)?;
        Ok(b.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(LabError::format(
                self.pos as u64,
                format!("unexpected trailing bytes: file is {} bytes, parsed {}", self.buf.len(), self.pos),
            ));
        }
        Ok(())
    }
}

// ── dataset ─────────────────────────────────────────────────────────

pub fn encode_dataset(ds: &LabeledDataset) -> Vec<u8> {
    let n = ds.len();
    let mut buf = Vec::with_capacity(24 + n * 3 + ds.images_raw().len() * 4);
    buf.extend_from_slice(DATASET_MAGIC);
    for v in [n as u32, ds.channels() as u32, ds.height() as u32, ds.width() as u32, ds.class_count() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &l in ds.labels() {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for &f in ds.poison_flags() {
        buf.push(f as u8);
    }
    for &p in ds.images_raw() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(hidden) = ds.hidden_labels() {
        buf.push(HIDDEN_MARKER);
        for &l in hidden {
            buf.extend_from_slice(&l.to_le_bytes());
        }
    }
    buf
}

pub fn decode_dataset(buf: &[u8]) -> Result<LabeledDataset> {
    let mut cur = Cursor::new(buf);
    let magic = cur.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(LabError::format(0, format!("bad magic {magic:?}, expected {DATASET_MAGIC:?}")));
    }
    let n = cur.u32("sample count")? as usize;
    let channels = cur.u32("channels")? as usize;
    let height = cur.u32("height")? as usize;
    let width = cur.u32("width")? as usize;
    let classes = cur.u32("class count")? as usize;

    let label_off = cur.offset();
    let labels = cur.u16s(n, "labels")?;
    if let Some(i) = labels.iter().position(|&l| l != UNLABELED && l as usize >= classes) {
        return Err(LabError::format(label_off + 2 * i as u64, format!("label {} out of range [0,{classes})", labels[i])));
    }
    let flag_off = cur.offset();
    let flag_bytes = cur.take(n, "poison flags")?;
    if let Some(i) = flag_bytes.iter().position(|&b| b > 1) {
        return Err(LabError::format(flag_off + i as u64, format!("poison flag byte {} is not 0 or 1", flag_bytes[i])));
    }
    let flags: Vec<bool> = flag_bytes.iter().map(|&b| b == 1).collect();
    let pix_off = cur.offset();
    let pixels = cur.f32s(n * channels * height * width, "pixels")?;
    if let Some(i) = pixels.iter().position(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(LabError::format(pix_off + 4 * i as u64, format!("pixel {} outside [0,1]", pixels[i])));
    }
    let hidden = if cur.pos < buf.len() {
        let marker = cur.take(1, "hidden-label marker")?[0];
        if marker != HIDDEN_MARKER {
            return Err(LabError::format(cur.offset() - 1, format!("unknown section marker 0x{marker:02X}")));
        }
        let h_off = cur.offset();
        let hidden = cur.u16s(n, "hidden labels")?;
        if let Some(i) = hidden.iter().position(|&l| l != UNLABELED && l as usize >= classes) {
            return Err(LabError::format(h_off + 2 * i as u64, format!("hidden label {} out of range", hidden[i])));
        }
        Some(hidden)
    } else {
        None
    };
    cur.finish()?;
    LabeledDataset::from_parts(channels, height, width, classes, pixels, labels, flags, hidden).map_err(LabError::from)
}

pub fn write_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    decode_dataset(&fs::read(path)?)
}

// ── model ───────────────────────────────────────────────────────────

pub fn encode_model(model: &DeskCnn) -> Vec<u8> {
    let cfg = model.cfg();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    for v in [
        MODEL_VERSION,
        cfg.in_channels as u32,
        cfg.image_size as u32,
        cfg.classes as u32,
        cfg.conv1 as u32,
        cfg.conv2 as u32,
        cfg.hidden as u32,
        cfg.kernel as u32,
        model.params().len() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for p in model.params() {
        buf.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &d in p.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_model(buf: &[u8]) -> Result<DeskCnn> {
    let mut cur = Cursor::new(buf);
    let magic = cur.take(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(LabError::format(0, format!("bad magic {magic:?}, expected {MODEL_MAGIC:?}")));
    }
    let version = cur.u32("version")?;
    if version != MODEL_VERSION {
        return Err(LabError::format(4, format!("unsupported model version {version}, expected {MODEL_VERSION}")));
    }
    let cfg = CnnConfig {
        in_channels: cur.u32("in_channels")? as usize,
        image_size: cur.u32("image_size")? as usize,
        classes: cur.u32("classes")? as usize,
        conv1: cur.u32("conv1")? as usize,
        conv2: cur.u32("conv2")? as usize,
        hidden: cur.u32("hidden")? as usize,
        kernel: cur.u32("kernel")? as usize,
    };
    let n_tensors = cur.u32("tensor count")? as usize;
    let mut params = Vec::with_capacity(n_tensors);
    for t in 0..n_tensors {
        let ndim = cur.u32("tensor rank")? as usize;
        if ndim > 8 {
            return Err(LabError::format(cur.offset() - 4, format!("implausible tensor rank {ndim} for tensor {t}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("tensor dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data_off = cur.offset();
        let data = cur.f32s(numel, "tensor data")?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LabError::format(data_off + 4 * i as u64, "non-finite parameter value"));
        }
        params.push(Tensor::from_vec(&shape, data).map_err(LabError::from)?);
    }
    cur.finish()?;
    DeskCnn::from_params(cfg, params).map_err(LabError::from)
}

pub fn write_model(model: &DeskCnn, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<DeskCnn> {
    decode_model(&fs::read(path)?)
}
