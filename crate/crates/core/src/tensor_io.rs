//! Little-endian binary containers for matrices, sample tables and weight blobs.
//!
//! Every file starts with a 4-byte magic and a `u32` format version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::data::Sample;
use crate::error::{Error, Result};

const MATRIX_MAGIC: &[u8; 4] = b"ICMX";
const SAMPLES_MAGIC: &[u8; 4] = b"ICSM";
const WEIGHTS_MAGIC: &[u8; 4] = b"ICWT";
const VERSION: u32 = 1;

/// One named-by-position parameter tensor: shape plus row-major values.
pub type Tensor = (Vec<usize>, Vec<f64>);

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn header(w: &mut impl Write, magic: &[u8; 4]) -> std::io::Result<()> {
    w.write_all(magic)?;
    put_u32(w, VERSION)
}

fn check_header(r: &mut impl Read, magic: &[u8; 4], path: &Path) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::corrupt(path, format!("bad magic {m:?}")));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::corrupt(path, format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, MATRIX_MAGIC)?;
    put_u64(&mut w, m.nrows() as u64)?;
    put_u64(&mut w, m.ncols() as u64)?;
    for v in m.iter() {
        put_f64(&mut w, *v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, MATRIX_MAGIC, path)?;
    let rows = get_u64(&mut r)? as usize;
    let cols = get_u64(&mut r)? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(get_f64(&mut r)?);
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::corrupt(path, e.to_string()))
}

/// Rows of `(id, task_label, attribute, property, features...)`.
pub fn write_samples(path: &Path, samples: &[Sample], feature_dim: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, SAMPLES_MAGIC)?;
    put_u64(&mut w, samples.len() as u64)?;
    put_u64(&mut w, feature_dim as u64)?;
    for s in samples {
        if s.features.len() != feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "sample {} has {} features, expected {feature_dim}",
                s.id,
                s.features.len()
            )));
        }
        put_u64(&mut w, s.id)?;
        put_u32(&mut w, s.task_label as u32)?;
        put_u32(&mut w, s.attribute as u32)?;
        put_u32(&mut w, s.property as u32)?;
        for v in &s.features {
            put_f64(&mut w, *v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, SAMPLES_MAGIC, path)?;
    let rows = get_u64(&mut r)? as usize;
    let dim = get_u64(&mut r)? as usize;
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let id = get_u64(&mut r)?;
        let task_label = get_u32(&mut r)? as usize;
        let attribute = get_u32(&mut r)? as usize;
        let property = get_u32(&mut r)? as usize;
        let mut features = Vec::with_capacity(dim);
        for _ in 0..dim {
            features.push(get_f64(&mut r)?);
        }
        out.push(Sample { id, features, task_label, attribute, property });
    }
    Ok(out)
}

/// Flat weight blob with a per-tensor dimension header.
pub fn write_weights(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, WEIGHTS_MAGIC)?;
    put_u64(&mut w, tensors.len() as u64)?;
    for (shape, values) in tensors {
        put_u64(&mut w, shape.len() as u64)?;
        for d in shape {
            put_u64(&mut w, *d as u64)?;
        }
        for v in values {
            put_f64(&mut w, *v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<Vec<Tensor>> {
    let mut r = BufReader::new(File::open(path)?);
    check_header(&mut r, WEIGHTS_MAGIC, path)?;
    let n = get_u64(&mut r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ndim = get_u64(&mut r)? as usize;
        let shape = (0..ndim).map(|_| get_u64(&mut r).map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let values = (0..count).map(|_| get_f64(&mut r)).collect::<std::io::Result<Vec<_>>>()?;
        out.push((shape, values));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::corrupt(path, "trailing bytes after last tensor"));
    }
    Ok(out)
}
