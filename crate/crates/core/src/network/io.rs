//! Binary weight files.
//!
//! Layout, all integers `u32` little-endian, all reals `f64` little-endian:
//!
//! ```text
//! "TSNW1"            5 bytes magic
//! mode               u8: 0 = ss, 1 = ts, 2 = ts-lrc
//! L                  depth
//! n_0 .. n_L         widths
//! n*_1 .. n*_L       rotation widths (equal to n_l outside LRC mode)
//! m                  classes
//! matrices           W_1..W_L, then W*_1..W*_L (LRC), W_Z (TS), W_X (SS, LRC);
//!                    each as rows, cols, then rows*cols values row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Mode, NetworkSpec, Weights};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

pub const MAGIC: &[u8; 5] = b"TSNW1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(w: &Weights) -> Result<Vec<u8>> {
    w.validate()?;
    let spec = &w.spec;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(spec.mode().tag());
    put_u32(&mut out, spec.depth())?;
    for &n in spec.widths() {
        put_u32(&mut out, n)?;
    }
    for &n in spec.rotation_widths() {
        put_u32(&mut out, n)?;
    }
    put_u32(&mut out, spec.classes())?;
    for t in w.tensors() {
        put_u32(&mut out, t.rows())?;
        put_u32(&mut out, t.cols())?;
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn matrix(&mut self) -> std::result::Result<DenseTensor, String> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or("matrix size overflows")?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        DenseTensor::matrix(rows, cols, data).map_err(|e| e.to_string())
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Weights, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err("bad magic, expected TSNW1".into());
    }
    let tag = cur.take(1)?[0];
    let mode = Mode::from_tag(tag).ok_or_else(|| format!("unknown mode tag {tag}"))?;
    let depth = cur.u32()?;
    let widths = (0..=depth).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
    let rotation = (0..depth).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
    let classes = cur.u32()?;
    let spec = NetworkSpec::new(widths, mode, classes)
        .and_then(|s| s.with_rotation_widths(rotation))
        .map_err(|e| e.to_string())?;
    let activation = (0..depth).map(|_| cur.matrix()).collect::<Result<Vec<_>, _>>()?;
    let rotation = if mode == Mode::TsLrc {
        (0..depth).map(|_| cur.matrix()).collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let analysis = (mode == Mode::Ts).then(|| cur.matrix()).transpose()?;
    let readout = (mode != Mode::Ts).then(|| cur.matrix()).transpose()?;
    if cur.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
    }
    let w = Weights {
        spec,
        activation,
        rotation,
        analysis,
        readout,
    };
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

pub fn write_weights(w: &Weights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(w)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Weights> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}
