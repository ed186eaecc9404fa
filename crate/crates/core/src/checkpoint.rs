//! Self-describing binary containers for features and checkpoints.
//!
//! Both files open with the magic bytes `PGTN` and a little-endian `u32`
//! version. A feature container continues with the molecule count, then per
//! molecule `n`, `F_n`, `F_p` as `u32` followed by the node-feature and
//! path-feature arrays as raw `f64` little-endian, row-major. A checkpoint
//! continues with a kind marker (so the two container types cannot be
//! confused), the model kind and hyperparameters, the feature-layout
//! descriptor, target-normalization statistics, the training seed, and
//! every parameter tensor with explicit shape and name. All floats are
//! written bit-exactly, so save/load round-trips reproduce predictions
//! bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::model::{Model, ModelConfig, ModelKind};
use crate::training::{TargetNorm, TaskKind};

pub const MAGIC: &[u8; 4] = b"PGTN";
pub const FORMAT_VERSION: u32 = 1;
/// Kind marker distinguishing checkpoints from feature containers, chosen
/// far above any plausible molecule count.
pub const CHECKPOINT_KIND: u32 = 0xC8C8_0001;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a PGTN container)")]
    BadMagic,
    #[error("unsupported container version {0} (expected {FORMAT_VERSION})")]
    VersionMismatch(u32),
    #[error("not a checkpoint container")]
    NotACheckpoint,
    #[error("not a feature container")]
    NotFeatures,
    #[error("corrupt container: {0}")]
    Corrupt(String),
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    for &v in vs {
        write_f64(w, v)?;
    }
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(read_exact::<R, 4>(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    Ok(u64::from_le_bytes(read_exact::<R, 8>(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, CheckpointError> {
    Ok(f64::from_le_bytes(read_exact::<R, 8>(r)?))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

fn read_str<R: Read>(r: &mut R) -> Result<String, CheckpointError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(CheckpointError::Corrupt(format!("string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt("non-UTF8 string".into()))
}

fn check_header<R: Read>(r: &mut R) -> Result<(), CheckpointError> {
    let magic = read_exact::<R, 4>(r)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }
    Ok(())
}

/// Per-molecule feature block in a feature container.
#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeFeatures {
    pub n: u32,
    pub node: Tensor,
    pub path: Tensor,
}

/// Write featurized molecules: header `PGTN`, version, count; per molecule
/// `n`, `F_n`, `F_p` (`u32` LE) then the `f64` arrays row-major.
pub fn write_features(path: &Path, molecules: &[MoleculeFeatures]) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, molecules.len() as u32)?;
    for m in molecules {
        write_u32(&mut w, m.n)?;
        write_u32(&mut w, m.node.cols as u32)?;
        write_u32(&mut w, m.path.cols as u32)?;
        write_f64s(&mut w, &m.node.data)?;
        write_f64s(&mut w, &m.path.data)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<MoleculeFeatures>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r)?;
    let count = read_u32(&mut r)?;
    if count == CHECKPOINT_KIND {
        return Err(CheckpointError::NotFeatures);
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n = read_u32(&mut r)? as usize;
        let f_n = read_u32(&mut r)? as usize;
        let f_p = read_u32(&mut r)? as usize;
        let node = Tensor::from_vec(n, f_n, read_f64s(&mut r, n * f_n)?);
        let path = Tensor::from_vec(n * n, f_p, read_f64s(&mut r, n * n * f_p)?);
        out.push(MoleculeFeatures {
            n: n as u32,
            node,
            path,
        });
    }
    Ok(out)
}

/// Everything needed to restore a trained model and evaluate it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub task_kind: TaskKind,
    pub norm: TargetNorm,
    pub seed: u64,
}

fn kind_code(kind: ModelKind) -> u32 {
    match kind {
        ModelKind::PagtnGlobal => 0,
        ModelKind::PagtnLocal => 1,
        ModelKind::Gcn => 2,
    }
}

fn kind_from_code(code: u32) -> Result<ModelKind, CheckpointError> {
    Ok(match code {
        0 => ModelKind::PagtnGlobal,
        1 => ModelKind::PagtnLocal,
        2 => ModelKind::Gcn,
        other => {
            return Err(CheckpointError::Corrupt(format!(
                "unknown model kind {other}"
            )))
        }
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, CHECKPOINT_KIND)?;

    let m = &ckpt.model;
    write_u32(&mut w, kind_code(m.kind))?;
    write_u32(&mut w, m.config.layers as u32)?;
    write_u32(&mut w, m.config.heads as u32)?;
    write_u32(&mut w, m.config.dim as u32)?;
    write_u32(&mut w, m.config.d as u32)?;
    write_f64(&mut w, m.config.leaky_slope)?;
    write_u32(&mut w, m.config.layer_norm as u32)?;
    write_u32(&mut w, m.n_node_features as u32)?;
    write_u32(&mut w, m.n_path_features as u32)?;
    write_u32(&mut w, m.n_targets as u32)?;
    write_u32(
        &mut w,
        matches!(ckpt.task_kind, TaskKind::Classification) as u32,
    )?;
    write_u64(&mut w, ckpt.seed)?;

    write_u32(&mut w, ckpt.norm.enabled as u32)?;
    write_u32(&mut w, ckpt.norm.mean.len() as u32)?;
    write_f64s(&mut w, &ckpt.norm.mean)?;
    write_f64s(&mut w, &ckpt.norm.std)?;

    let params = m.named_params();
    write_u32(&mut w, params.len() as u32)?;
    for (name, tensor) in params {
        write_str(&mut w, &name)?;
        write_u32(&mut w, tensor.rows as u32)?;
        write_u32(&mut w, tensor.cols as u32)?;
        write_f64s(&mut w, &tensor.data)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r)?;
    if read_u32(&mut r)? != CHECKPOINT_KIND {
        return Err(CheckpointError::NotACheckpoint);
    }

    let kind = kind_from_code(read_u32(&mut r)?)?;
    let layers = read_u32(&mut r)? as usize;
    let heads = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let leaky_slope = read_f64(&mut r)?;
    let layer_norm = read_u32(&mut r)? != 0;
    let n_node = read_u32(&mut r)? as usize;
    let n_path = read_u32(&mut r)? as usize;
    let n_targets = read_u32(&mut r)? as usize;
    let task_kind = if read_u32(&mut r)? != 0 {
        TaskKind::Classification
    } else {
        TaskKind::Regression
    };
    let seed = read_u64(&mut r)?;

    let norm_enabled = read_u32(&mut r)? != 0;
    let n_norm = read_u32(&mut r)? as usize;
    if n_norm != n_targets {
        return Err(CheckpointError::Corrupt(format!(
            "normalization width {n_norm} != targets {n_targets}"
        )));
    }
    let mean = read_f64s(&mut r, n_norm)?;
    let std = read_f64s(&mut r, n_norm)?;
    let norm = TargetNorm {
        mean,
        std,
        enabled: norm_enabled,
    };

    let config = ModelConfig {
        layers,
        heads,
        dim,
        d,
        leaky_slope,
        layer_norm,
    };
    // rebuild with the right shapes, then overwrite every tensor from file
    let mut model = Model::init(kind, config, n_node, n_path, n_targets, seed);
    let n_params = read_u32(&mut r)? as usize;
    {
        let mut named = model.named_params_mut();
        if n_params != named.len() {
            return Err(CheckpointError::Corrupt(format!(
                "parameter count {n_params} != expected {}",
                named.len()
            )));
        }
        for (name, tensor) in named.iter_mut() {
            let file_name = read_str(&mut r)?;
            if &file_name != name {
                return Err(CheckpointError::Corrupt(format!(
                    "parameter order mismatch: file has '{file_name}', expected '{name}'"
                )));
            }
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            if (rows, cols) != tensor.shape() {
                return Err(CheckpointError::Corrupt(format!(
                    "shape mismatch for '{name}': file {rows}x{cols}, expected {}x{}",
                    tensor.rows, tensor.cols
                )));
            }
            tensor.data = read_f64s(&mut r, rows * cols)?;
        }
    }
    // reject trailing garbage
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }

    Ok(Checkpoint {
        model,
        task_kind,
        norm,
        seed,
    })
}
