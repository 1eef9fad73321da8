//! Checkpoint container and averaging of the last K checkpoints.
//!
//! Container layout (little-endian):
//!
//! ```text
//! "CAVG1"  u32 tensor_count
//! per tensor: u16 name_len, name (UTF-8), u8 rank, rank x u64 dims, f32 values
//! optional trailer: u32 meta_count, per entry u16 key_len, key, u32 val_len, val
//! ```
//!
//! Readers that stop after the tensors see a valid file; the trailer carries
//! metadata such as the averaging window.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"CAVG1";

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("truncated file")]
    TruncatedFile,
    #[error("shape mismatch for tensor {name:?}: {detail}")]
    ShapeMismatch { name: String, detail: String },
    #[error("tensor {name:?} missing from {file}")]
    MissingTensor { name: String, file: String },
    #[error("K={k} exceeds the {available} checkpoints given")]
    KTooLarge { k: usize, available: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("duplicate tensor name {0:?}")]
    DuplicateTensor(String),
    #[error("invalid UTF-8 in name")]
    BadName,
    #[error("{0} too long for the container format")]
    TooLong(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<u64>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<u64>, values: Vec<f32>) -> Result<Self, CkptError> {
        let expected = checked_numel(&shape).ok_or_else(|| CkptError::ShapeMismatch {
            name: String::new(),
            detail: format!("invalid shape {shape:?}"),
        })?;
        if expected != values.len() as u64 {
            return Err(CkptError::ShapeMismatch {
                name: String::new(),
                detail: format!("shape {shape:?} needs {expected} values, got {}", values.len()),
            });
        }
        Ok(Tensor { shape, values })
    }
}

fn checked_numel(shape: &[u64]) -> Option<u64> {
    shape.iter().try_fold(1u64, |acc, &d| if d == 0 { None } else { acc.checked_mul(d) })
}

/// Named tensors in file order plus string metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    tensors: Vec<(String, Tensor)>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), CkptError> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(CkptError::DuplicateTensor(name));
        }
        self.tensors.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), CkptError> {
        let mut w = BufWriter::new(w);
        w.write_all(MAGIC)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let name_len: u16 = name.len().try_into().map_err(|_| CkptError::TooLong(format!("name {name:?}")))?;
            let rank: u8 = t.shape.len().try_into().map_err(|_| CkptError::TooLong("rank".into()))?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[rank])?;
            for d in &t.shape {
                w.write_all(&d.to_le_bytes())?;
            }
            for v in &t.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        if !self.metadata.is_empty() {
            w.write_all(&(self.metadata.len() as u32).to_le_bytes())?;
            for (k, v) in &self.metadata {
                let kl: u16 = k.len().try_into().map_err(|_| CkptError::TooLong("metadata key".into()))?;
                let vl: u32 = v.len().try_into().map_err(|_| CkptError::TooLong("metadata value".into()))?;
                w.write_all(&kl.to_le_bytes())?;
                w.write_all(k.as_bytes())?;
                w.write_all(&vl.to_le_bytes())?;
                w.write_all(v.as_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, CkptError> {
        let mut r = Reader(BufReader::new(r));
        let mut magic = [0u8; 5];
        r.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(CkptError::BadMagic);
        }
        let count = u32::from_le_bytes(r.array()?);
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = r.string(name_len)?;
            let rank = r.array::<1>()?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.array()?));
            }
            let numel = checked_numel(&shape).ok_or_else(|| CkptError::ShapeMismatch {
                name: name.clone(),
                detail: format!("invalid shape {shape:?}"),
            })?;
            let mut values = Vec::new();
            let mut buf = [0u8; 4096];
            let mut remaining = numel.checked_mul(4).ok_or(CkptError::TruncatedFile)?;
            while remaining > 0 {
                let take = remaining.min(buf.len() as u64) as usize;
                r.fill(&mut buf[..take])?;
                values.extend(buf[..take].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
                remaining -= take as u64;
            }
            ckpt.insert(name, Tensor { shape, values })?;
        }
        if let Some(meta_count) = r.optional_u32()? {
            for _ in 0..meta_count {
                let kl = u16::from_le_bytes(r.array()?) as usize;
                let key = r.string(kl)?;
                let vl = u32::from_le_bytes(r.array()?) as usize;
                let val = r.string(vl)?;
                ckpt.metadata.insert(key, val);
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CkptError> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, CkptError> {
        Self::read_from(File::open(path)?)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<(), CkptError> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => CkptError::TruncatedFile,
            _ => CkptError::Io(e),
        })
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CkptError> {
        let mut b = [0u8; N];
        self.fill(&mut b)?;
        Ok(b)
    }

    fn string(&mut self, len: usize) -> Result<String, CkptError> {
        let mut b = vec![0u8; len];
        self.fill(&mut b)?;
        String::from_utf8(b).map_err(|_| CkptError::BadName)
    }

    /// `None` at a clean end of file.
    fn optional_u32(&mut self) -> Result<Option<u32>, CkptError> {
        let mut b = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.0.read(&mut b[got..])? {
                0 if got == 0 => return Ok(None),
                0 => return Err(CkptError::TruncatedFile),
                n => got += n,
            }
        }
        Ok(Some(u32::from_le_bytes(b)))
    }
}

/// Elementwise mean of the last `k` checkpoints, accumulated in f64 in the
/// order given and rounded once to f32.
pub fn average_checkpoints(ckpts: &[Checkpoint], k: usize) -> Result<Checkpoint, CkptError> {
    let names: Vec<String> = (0..ckpts.len()).map(|i| format!("#{i}")).collect();
    average_named(ckpts, &names, k)
}

fn average_named(ckpts: &[Checkpoint], names: &[String], k: usize) -> Result<Checkpoint, CkptError> {
    if k == 0 {
        return Err(CkptError::ZeroK);
    }
    if k > ckpts.len() {
        return Err(CkptError::KTooLarge { k, available: ckpts.len() });
    }
    let window = &ckpts[ckpts.len() - k..];
    let window_names = &names[names.len() - k..];
    let reference = &window[0];
    for (c, file) in window.iter().zip(window_names).skip(1) {
        for (name, t) in reference.tensors() {
            let other = c.get(name).ok_or_else(|| CkptError::MissingTensor { name: name.into(), file: file.clone() })?;
            if other.shape != t.shape {
                return Err(CkptError::ShapeMismatch {
                    name: name.into(),
                    detail: format!("{:?} in {} vs {:?} in {}", other.shape, file, t.shape, window_names[0]),
                });
            }
        }
        if let Some((extra, _)) = c.tensors().find(|(n, _)| reference.get(n).is_none()) {
            return Err(CkptError::MissingTensor { name: extra.into(), file: window_names[0].clone() });
        }
    }

    let averaged: Vec<(String, Tensor)> = reference
        .tensors
        .par_iter()
        .map(|(name, t)| {
            let mut acc = vec![0f64; t.values.len()];
            for c in window {
                let src = &c.get(name).expect("checked above").values;
                for (a, v) in acc.iter_mut().zip(src) {
                    *a += *v as f64;
                }
            }
            let values = acc.into_iter().map(|s| (s / k as f64) as f32).collect();
            (name.clone(), Tensor { shape: t.shape.clone(), values })
        })
        .collect();

    let mut out = Checkpoint { tensors: averaged, metadata: BTreeMap::new() };
    out.metadata.insert("avg.k".into(), k.to_string());
    out.metadata.insert("avg.sources".into(), window_names.join(","));
    Ok(out)
}

/// Loads only the last `k` of `paths` and averages them.
pub fn average_checkpoint_files(paths: &[PathBuf], k: usize) -> Result<Checkpoint, CkptError> {
    if k == 0 {
        return Err(CkptError::ZeroK);
    }
    if k > paths.len() {
        return Err(CkptError::KTooLarge { k, available: paths.len() });
    }
    let window = &paths[paths.len() - k..];
    let ckpts = window.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = window
        .iter()
        .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
        .collect();
    average_named(&ckpts, &names, k)
}
