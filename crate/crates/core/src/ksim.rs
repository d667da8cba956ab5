//! "KSIM v1" image files.
//!
//! Layout: magic `KSIM`, `u8` version (1), `u32` LE size N, `f64` LE DFOV in
//! cm, then N² `f32` LE pixels in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const MAGIC: &[u8; 4] = b"KSIM";
pub const VERSION: u8 = 1;

pub fn write_ksim<W: Write>(mut w: W, image: &Image) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    let n = u32::try_from(image.size()).map_err(|_| Error::Format {
        what: "KSIM",
        reason: "image too large".into(),
    })?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&image.dfov_cm().to_le_bytes())?;
    let mut buf = Vec::with_capacity(image.pixels().len() * 4);
    for &p in image.pixels() {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_ksim<R: Read>(mut r: R) -> Result<Image> {
    let bad = |reason: &str| Error::Format {
        what: "KSIM",
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version).map_err(|_| bad("truncated header"))?;
    if version[0] != VERSION {
        return Err(bad(&format!("unsupported version {}", version[0])));
    }
    let mut n = [0u8; 4];
    r.read_exact(&mut n).map_err(|_| bad("truncated header"))?;
    let n = u32::from_le_bytes(n) as usize;
    let mut dfov = [0u8; 8];
    r.read_exact(&mut dfov).map_err(|_| bad("truncated header"))?;
    let dfov = f64::from_le_bytes(dfov);
    let mut raw = vec![0u8; n * n * 4];
    r.read_exact(&mut raw).map_err(|_| bad("truncated pixel data"))?;
    let pixels = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Image::new(n, dfov, pixels)
}

pub fn save_ksim(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ksim(&mut w, image)?;
    w.flush()?;
    Ok(())
}

pub fn load_ksim(path: impl AsRef<Path>) -> Result<Image> {
    read_ksim(BufReader::new(File::open(path)?))
}
