//! On-disk formats: checkpoints, latent datasets, image archives, dataset
//! files, index lists, and the CIFAR-10 binary reader.
//!
//! All binary formats are little-endian and start with an 8-byte magic.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Architecture, Network};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != magic {
            return Err(Error::format(path, format!("missing magic {:?}", String::from_utf8_lossy(magic))));
        }
        Ok(Self { path, bytes, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.path, "truncated file")),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len() * 8)
            .ok_or_else(|| Error::format(self.path, format!("implausible {what} {v}")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.path, "overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// checkpoints

const CKPT_MAGIC: &[u8; 8] = b"GOMICKPT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// generator, critic, discriminator, latent-generator, classifier
    pub role: String,
    pub arch: Architecture,
    #[serde(default)]
    pub latent_dim: Option<usize>,
    pub output_shape: Vec<usize>,
    pub config_hash: String,
    /// Role-specific settings (critic mode, class count, feature layer).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        Network::from_params(self.header.arch.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let mut c = Cursor::new(path, &bytes, CKPT_MAGIC)?;
        let hlen = c.len("header length")?;
        let header: CheckpointHeader = serde_json::from_slice(c.take(hlen)?)
            .map_err(|e| Error::format(path, format!("bad checkpoint header: {e}")))?;
        let n = c.len("parameter count")?;
        let params = c.f64s(n)?;
        c.finish()?;
        if params.len() != header.arch.param_count() {
            return Err(Error::format(path, "parameter count does not match architecture"));
        }
        Ok(Self { header, params })
    }
}

// ---------------------------------------------------------------------------
// index lists

/// One integer per line, sorted ascending.
pub fn write_index_list(path: &Path, indices: &[usize]) -> Result<()> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let mut text = String::with_capacity(sorted.len() * 6);
    for i in sorted {
        text.push_str(&i.to_string());
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

pub fn read_index_list(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::format(path, format!("not an index: {l:?}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// image archives

const IMG_MAGIC: &[u8; 8] = b"GOMIIMG1";

/// Generator-range images (`[-1, 1]`), optionally quantized to 8 bits.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageArchive {
    pub shape: [usize; 3],
    pub images: Vec<f32>,
}

impl ImageArchive {
    pub fn len(&self) -> usize {
        let p: usize = self.shape.iter().product();
        self.images.len() / p.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn to_bytes(&self, quantize: bool) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(IMG_MAGIC);
        out.push(quantize as u8);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for s in self.shape {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        if quantize {
            out.extend(self.images.iter().map(|&v| quantize_signed(v)));
        } else {
            for v in &self.images {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path, quantize: bool) -> Result<()> {
        write_bytes(path, &self.to_bytes(quantize))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let mut c = Cursor::new(path, &bytes, IMG_MAGIC)?;
        let quantized = c.u8()? != 0;
        let n = c.len("image count")?;
        let shape = [c.u32()? as usize, c.u32()? as usize, c.u32()? as usize];
        let total = n * shape.iter().product::<usize>();
        let images = if quantized {
            c.take(total)?.iter().map(|&b| b as f32 / 127.5 - 1.0).collect()
        } else {
            c.f32s(total)?
        };
        c.finish()?;
        Ok(Self { shape, images })
    }
}

fn quantize_signed(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

// ---------------------------------------------------------------------------
// dataset files

const DSET_MAGIC: &[u8; 8] = b"GOMIDSET";

pub fn save_dataset(path: &Path, data: &LabeledDataset) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(DSET_MAGIC);
    out.extend_from_slice(&(data.name.len() as u64).to_le_bytes());
    out.extend_from_slice(data.name.as_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for s in data.shape() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&(data.num_classes() as u32).to_le_bytes());
    for v in data.raw_images() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in data.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    write_bytes(path, &out)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor::new(path, &bytes, DSET_MAGIC)?;
    let name_len = c.len("name length")?;
    let name = String::from_utf8(c.take(name_len)?.to_vec())
        .map_err(|_| Error::format(path, "dataset name is not UTF-8"))?;
    let n = c.len("example count")?;
    let shape = [c.u32()? as usize, c.u32()? as usize, c.u32()? as usize];
    let k = c.u32()? as usize;
    let images = c.f32s(n * shape.iter().product::<usize>())?;
    let labels: Vec<u32> = (0..n).map(|_| c.u32()).collect::<Result<_>>()?;
    c.finish()?;
    LabeledDataset::new(name, shape, k, images, labels)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Reads the CIFAR-10 binary distribution (`data_batch_{1..5}.bin`,
/// `test_batch.bin`), converting planar RGB to HWC in `[0, 1]`.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let read = |files: &[String], name: &str| -> Result<LabeledDataset> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for f in files {
            let path = dir.join(f);
            let bytes = read_bytes(&path)?;
            if bytes.len() % 3073 != 0 {
                return Err(Error::format(&path, "CIFAR-10 records are 3073 bytes"));
            }
            for rec in bytes.chunks_exact(3073) {
                labels.push(rec[0] as u32);
                let planes = &rec[1..];
                for px in 0..1024 {
                    for ch in 0..3 {
                        images.push(planes[ch * 1024 + px] as f32 / 255.0);
                    }
                }
            }
        }
        LabeledDataset::new(name, [32, 32, 3], 10, images, labels)
    };
    let train: Vec<String> = (1..=5).map(|i| format!("data_batch_{i}.bin")).collect();
    Ok((read(&train, "cifar10-train")?, read(&["test_batch.bin".to_string()], "cifar10-test")?))
}

// ---------------------------------------------------------------------------
// latent datasets

const LAT_MAGIC: &[u8; 8] = b"GOMILAT1";

pub(crate) struct LatentFileContents {
    pub dim: usize,
    pub generator_checksum: String,
    pub method: u8,
    pub vectors: Vec<f32>,
    pub labels: Option<Vec<u32>>,
}

pub(crate) fn encode_latents(c: &LatentFileContents) -> Result<Vec<u8>> {
    let checksum = hex::decode(&c.generator_checksum)
        .ok()
        .filter(|b| b.len() == 32)
        .ok_or_else(|| Error::invalid("generator checksum must be 64 hex digits"))?;
    let count = if c.dim == 0 { 0 } else { c.vectors.len() / c.dim };
    let mut out = Vec::new();
    out.extend_from_slice(LAT_MAGIC);
    out.extend_from_slice(&(c.dim as u32).to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    out.extend_from_slice(&checksum);
    out.push(c.method);
    out.push(c.labels.is_some() as u8);
    for v in &c.vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &c.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) fn decode_latents(path: &Path, bytes: &[u8]) -> Result<LatentFileContents> {
    let mut c = Cursor::new(path, bytes, LAT_MAGIC)?;
    let dim = c.u32()? as usize;
    let count = c.len("latent count")?;
    let generator_checksum = hex::encode(c.take(32)?);
    let method = c.u8()?;
    let has_labels = c.u8()? != 0;
    let vectors = c.f32s(count * dim)?;
    let labels = if has_labels {
        Some((0..count).map(|_| c.u32()).collect::<Result<_>>()?)
    } else {
        None
    };
    c.finish()?;
    Ok(LatentFileContents {
        dim,
        generator_checksum,
        method,
        vectors,
        labels,
    })
}
