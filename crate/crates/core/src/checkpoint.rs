//! Binary checkpoint of model parameters.
//!
//! ```text
//! magic  b"CIATRCK1"
//! u32    height, width, num_classes, tensor count
//! per tensor: u32 name length, name bytes, u64 element count, f64 values
//! ```
//!
//! All integers and floats are little-endian, so values round-trip bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape, TENSOR_NAMES};

const MAGIC: &[u8; 8] = b"CIATRCK1";

pub fn write_checkpoint(params: &ModelParams, mut out: impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    let s = params.shape;
    for v in [s.height, s.width, s.num_classes, TENSOR_NAMES.len()] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for (name, tensor) in TENSOR_NAMES.iter().zip(params.tensors()) {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(tensor.len() as u64).to_le_bytes())?;
        for v in tensor {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<const N: usize>(input: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
    Ok(buf)
}

fn read_u32(input: &mut impl Read, what: &str) -> Result<usize> {
    Ok(u32::from_le_bytes(read_exact(input, what)?) as usize)
}

pub fn read_checkpoint(mut input: impl Read) -> Result<ModelParams> {
    let magic: [u8; 8] = read_exact(&mut input, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let height = read_u32(&mut input, "height")?;
    let width = read_u32(&mut input, "width")?;
    let classes = read_u32(&mut input, "class count")?;
    let count = read_u32(&mut input, "tensor count")?;
    let shape = ModelShape::new(height, width, classes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if count != TENSOR_NAMES.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", TENSOR_NAMES.len())));
    }
    let expected = ModelParams::zeros(shape);
    let mut tensors = Vec::with_capacity(count);
    for (name, want) in TENSOR_NAMES.iter().zip(expected.tensors()) {
        let len = read_u32(&mut input, "name length")?;
        if len != name.len() {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`")));
        }
        let mut buf = vec![0u8; len];
        input
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated tensor name".into()))?;
        if buf != name.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected tensor `{name}`, found `{}`",
                String::from_utf8_lossy(&buf)
            )));
        }
        let n = u64::from_le_bytes(read_exact(&mut input, "element count")?) as usize;
        if n != want.len() {
            return Err(Error::Checkpoint(format!("tensor `{name}` has {n} elements, expected {}", want.len())));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(read_exact(&mut input, name)?));
        }
        tensors.push(values);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    ModelParams::from_tensors(shape, tensors)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(params, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
