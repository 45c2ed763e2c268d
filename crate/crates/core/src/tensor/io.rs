//! Flat binary tensor format: `b"TNSR"`, `u32` rank, `rank × u32` extents,
//! then the payload as little-endian `f64`. All integers are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Parses one tensor; `origin` only labels errors.
pub fn read_tensor<R: Read>(mut r: R, origin: &Path) -> Result<Tensor> {
    let bad = |msg: String| Error::Format {
        what: "tensor file",
        path: origin.to_path_buf(),
        msg,
    };
    let io = Error::io(origin);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(Error::io(origin))?;
    if &magic != TENSOR_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let rank = read_u32(&mut r).map_err(Error::io(origin))? as usize;
    if rank > 8 {
        return Err(bad(format!("implausible rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(Error::io(origin))?;
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(io)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let f = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(f);
    write_tensor(&mut w, t).map_err(Error::io(path))?;
    w.flush().map_err(Error::io(path))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let f = File::open(path).map_err(Error::io(path))?;
    read_tensor(BufReader::new(f), path)
}
