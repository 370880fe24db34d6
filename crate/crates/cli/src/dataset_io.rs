//! Binary container for generated client datasets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "HFLDATA\0"
//! version  u32      1
//! clients  u32
//! height, width, channels  u32 each
//! per client:
//!   n      u32
//!   n x (label u32, pixels f64 x height*width*channels)
//!   train  u32 count, then u32 indices
//!   eval   u32 count, then u32 indices
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use harmofl::fourier::{Image, Shape};
use harmofl::ClientDataset;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"HFLDATA\0";
pub const VERSION: u32 = 1;

pub fn write_datasets<W: Write>(mut w: W, datasets: &[ClientDataset]) -> std::io::Result<()> {
    let shape = datasets
        .first()
        .map(|d| d.shape())
        .unwrap_or(Shape::new(0, 0, 0));
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(datasets.len() as u32)?;
    for v in [shape.height, shape.width, shape.channels] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    for d in datasets {
        w.write_u32::<LittleEndian>(d.len() as u32)?;
        for (img, &label) in d.images.iter().zip(&d.labels) {
            w.write_u32::<LittleEndian>(label as u32)?;
            for &p in img.data() {
                w.write_f64::<LittleEndian>(p)?;
            }
        }
        for split in [&d.train, &d.eval] {
            w.write_u32::<LittleEndian>(split.len() as u32)?;
            for &i in split.iter() {
                w.write_u32::<LittleEndian>(i as u32)?;
            }
        }
    }
    w.flush()
}

pub fn read_datasets<R: Read>(mut r: R) -> CliResult<Vec<ClientDataset>> {
    let bad = |what: &str| CliError::Format(format!("dataset file: {what}"));
    let eof = |e: std::io::Error| CliError::Format(format!("dataset file truncated: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(eof)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let clients = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2]);
    if clients == 0 || shape.is_empty() {
        return Err(bad("no clients or empty image shape"));
    }
    let mut out = Vec::with_capacity(clients);
    for _ in 0..clients {
        let n = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.read_u32::<LittleEndian>().map_err(eof)? as usize);
            let mut px = vec![0.0; shape.len()];
            r.read_f64_into::<LittleEndian>(&mut px).map_err(eof)?;
            images.push(Image::new(shape, px).map_err(|e| bad(&e.to_string()))?);
        }
        let mut splits = [Vec::new(), Vec::new()];
        for split in &mut splits {
            let len = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            if len > n {
                return Err(bad("split longer than client"));
            }
            for _ in 0..len {
                split.push(r.read_u32::<LittleEndian>().map_err(eof)? as usize);
            }
        }
        let [train, eval] = splits;
        out.push(ClientDataset::new(images, labels, train, eval).map_err(|e| bad(&e.to_string()))?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(eof)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

pub fn save(path: &Path, datasets: &[ClientDataset]) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_datasets(BufWriter::new(f), datasets).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> CliResult<Vec<ClientDataset>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_datasets(BufReader::new(f))
}
