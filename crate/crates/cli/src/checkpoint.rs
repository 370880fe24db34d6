//! Final-model checkpoints.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "HFLCKPT\0"
//! version     u32      1
//! input_dim   u32
//! n_hidden    u32, then n_hidden x u32 widths
//! classes     u32
//! activation  u8       0 = tanh
//! n_params    u64, then n_params x f64
//! has_amp     u8       0 or 1
//! if has_amp: frozen u8, height u32, width u32, channels u32,
//!             then height*width*channels x f64
//! ```
//!
//! A JSON sidecar next to the binary records the config hash, seed,
//! algorithm and a sha256 of the binary, which is checked on load.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use harmofl::fourier::{Grid, Shape};
use harmofl::harmonize::GlobalAmplitude;
use harmofl::model::{MlpArch, ParamVector};
use harmofl::Algorithm;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"HFLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector<f64>,
    pub amplitude: Option<GlobalAmplitude<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub config_sha256: String,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub checkpoint_sha256: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        self.write(&mut w).expect("writing to a Vec cannot fail");
        w
    }

    fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let arch = self.params.arch();
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(arch.input_dim as u32)?;
        w.write_u32::<LittleEndian>(arch.hidden_dims.len() as u32)?;
        for &h in &arch.hidden_dims {
            w.write_u32::<LittleEndian>(h as u32)?;
        }
        w.write_u32::<LittleEndian>(arch.num_classes as u32)?;
        w.write_u8(0)?;
        w.write_u64::<LittleEndian>(self.params.len() as u64)?;
        for &v in self.params.values() {
            w.write_f64::<LittleEndian>(v)?;
        }
        match &self.amplitude {
            None => w.write_u8(0)?,
            Some(g) => {
                w.write_u8(1)?;
                w.write_u8(g.frozen as u8)?;
                let s = g.avg.shape;
                for d in [s.height, s.width, s.channels] {
                    w.write_u32::<LittleEndian>(d as u32)?;
                }
                for &v in &g.avg.data {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let bad = |what: String| CliError::Format(format!("checkpoint: {what}"));
        let eof = |e: std::io::Error| CliError::Format(format!("checkpoint truncated: {e}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(eof)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let input_dim = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let n_hidden = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        if n_hidden > 64 {
            return Err(bad(format!("{n_hidden} hidden layers")));
        }
        let hidden = (0..n_hidden)
            .map(|_| r.read_u32::<LittleEndian>().map(|h| h as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(eof)?;
        let classes = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let activation = r.read_u8().map_err(eof)?;
        if activation != 0 {
            return Err(bad(format!("unknown activation code {activation}")));
        }
        let arch = MlpArch::new(input_dim, hidden, classes).map_err(|e| bad(e.to_string()))?;
        let n = r.read_u64::<LittleEndian>().map_err(eof)? as usize;
        if n != arch.num_params() {
            return Err(bad(format!(
                "{n} parameters for an architecture with {}",
                arch.num_params()
            )));
        }
        if r.len() < n * 8 {
            return Err(bad("parameter block truncated".into()));
        }
        let mut values = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut values).map_err(eof)?;
        let params = ParamVector::new(Arc::new(arch), values).map_err(|e| bad(e.to_string()))?;
        let amplitude = match r.read_u8().map_err(eof)? {
            0 => None,
            1 => {
                let frozen = match r.read_u8().map_err(eof)? {
                    0 => false,
                    1 => true,
                    f => return Err(bad(format!("frozen flag {f}"))),
                };
                let mut d = [0usize; 3];
                for x in &mut d {
                    *x = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
                }
                let shape = Shape::new(d[0], d[1], d[2]);
                if r.len() < shape.len() * 8 {
                    return Err(bad("amplitude block truncated".into()));
                }
                let mut data = vec![0.0; shape.len()];
                r.read_f64_into::<LittleEndian>(&mut data).map_err(eof)?;
                Some(GlobalAmplitude {
                    avg: Grid { shape, data },
                    frozen,
                })
            }
            f => return Err(bad(format!("amplitude flag {f}"))),
        };
        if !r.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { params, amplitude })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `<path>` and its sidecar.
pub fn save(
    path: &Path,
    ckpt: &Checkpoint,
    config_sha256: &str,
    seed: u64,
    algorithm: Algorithm,
    rounds: usize,
) -> CliResult<()> {
    let bytes = ckpt.to_bytes();
    let sidecar = Sidecar {
        format_version: VERSION,
        config_sha256: config_sha256.to_string(),
        seed,
        algorithm,
        rounds,
        checkpoint_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    std::fs::write(path, &bytes).map_err(|e| CliError::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&side, json + "\n").map_err(|e| CliError::io(&side, e))
}

/// Reads a checkpoint and its sidecar, verifying the binary's hash.
pub fn load(path: &Path) -> CliResult<(Checkpoint, Sidecar)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| CliError::Format(format!("checkpoint sidecar {}: {e}", side.display())))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    if digest != sidecar.checkpoint_sha256 {
        return Err(CliError::Format(format!(
            "checkpoint {} does not match the hash in its sidecar",
            path.display()
        )));
    }
    Ok((Checkpoint::from_bytes(&bytes)?, sidecar))
}
