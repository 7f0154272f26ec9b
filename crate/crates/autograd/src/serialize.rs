//! Binary tensor blobs: magic, dtype, then `(name, shape, little-endian data)`
//! records. Values round-trip bit-exactly.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::float::Float;
use crate::tensor::Tensor;
use crate::Error;

const MAGIC: &[u8; 8] = b"SHUFATN1";

pub fn write_tensors<T: Float, W: Write>(mut w: W, entries: &[(String, Tensor<T>)]) -> Result<(), Error> {
    w.write_all(MAGIC)?;
    w.write_u8(T::BYTES as u8)?;
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, t) in entries {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.ndim() as u32)?;
        for &d in t.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in t.data() {
            match T::BYTES {
                4 => w.write_f32::<LittleEndian>(v.to_f64_lossy() as f32)?,
                _ => w.write_f64::<LittleEndian>(v.to_f64_lossy())?,
            }
        }
    }
    Ok(())
}

pub fn read_tensors<T: Float, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<T>)>, Error> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a tensor blob (bad magic)".into()));
    }
    let width = r.read_u8()? as usize;
    if width != T::BYTES {
        return Err(Error::Checkpoint(format!(
            "blob stores {width}-byte scalars, expected {} ({})",
            T::BYTES,
            T::DTYPE
        )));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let shape = (0..ndim)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = match width {
                4 => r.read_f32::<LittleEndian>()? as f64,
                _ => r.read_f64::<LittleEndian>()?,
            };
            data.push(T::from_f64_lossy(v));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let t = Tensor::<f32>::new(vec![2, 2], vec![0.1, -3.5e-20, f32::MAX, 7.0]).unwrap();
        let entries = vec![("w".to_string(), t)];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &entries).unwrap();
        let back: Vec<(String, Tensor<f32>)> = read_tensors(buf.as_slice()).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn dtype_mismatch_is_an_error() {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("x".to_string(), Tensor::<f32>::scalar(1.0))]).unwrap();
        assert!(read_tensors::<f64, _>(buf.as_slice()).is_err());
    }
}
