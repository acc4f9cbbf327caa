//! Binary container for [`ReducedModel`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "CPRBMDL\0"
//! version      u32
//! problem      u32 length + UTF-8 bytes
//! fine_dim     u64
//! sample_count u64
//! epsilon, eta f64, f64
//! rhs_mode     u8 (0 direct, 1 interpolated)
//! skeleton_indices, additional_indices, sample_columns
//!              u64 length + u64 entries each
//! singular_values
//!              u64 length + f64 entries
//! basis, mixing, projected_operators
//!              u64 rows + u64 cols + column-major f64 entries each
//! projected_offset, projected_rhs
//!              u8 presence flag, then a matrix as above if 1
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{RbError, Result};
use crate::numerics::Matrix;
use crate::offline::{ReducedModel, Thresholds};
use crate::oracle::RhsMode;

pub const MAGIC: &[u8; 8] = b"CPRBMDL\0";
pub const VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &ReducedModel, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let name = model.problem.as_bytes();
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name)?;
    write_u64(w, model.fine_dim as u64)?;
    write_u64(w, model.sample_count as u64)?;
    w.write_all(&model.thresholds.epsilon.to_le_bytes())?;
    w.write_all(&model.thresholds.eta.to_le_bytes())?;
    w.write_all(&[match model.rhs_mode {
        RhsMode::Direct => 0u8,
        RhsMode::Interpolated => 1u8,
    }])?;
    write_indices(w, &model.skeleton_indices)?;
    write_indices(w, &model.additional_indices)?;
    write_indices(w, &model.sample_columns)?;
    write_u64(w, model.singular_values.len() as u64)?;
    for v in &model.singular_values {
        w.write_all(&v.to_le_bytes())?;
    }
    write_matrix(w, &model.basis)?;
    write_matrix(w, &model.mixing)?;
    write_matrix(w, &model.projected_operators)?;
    write_optional(w, model.projected_offset.as_ref())?;
    write_optional(w, model.projected_rhs.as_ref())?;
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<ReducedModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(RbError::Model("not a reduced model file (bad magic bytes)".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(RbError::Model(format!(
            "unsupported model file version {version}, expected {VERSION}"
        )));
    }
    let len = read_u32(r)? as usize;
    let mut name = vec![0u8; len];
    r.read_exact(&mut name).map_err(truncated)?;
    let problem =
        String::from_utf8(name).map_err(|_| RbError::Model("problem name is not UTF-8".into()))?;
    let fine_dim = read_usize(r)?;
    let sample_count = read_usize(r)?;
    let epsilon = read_f64(r)?;
    let eta = read_f64(r)?;
    let thresholds =
        Thresholds::new(epsilon, eta).map_err(|e| RbError::Model(format!("bad thresholds: {e}")))?;
    let rhs_mode = match read_u8(r)? {
        0 => RhsMode::Direct,
        1 => RhsMode::Interpolated,
        other => return Err(RbError::Model(format!("unknown rhs mode tag {other}"))),
    };
    let skeleton_indices = read_indices(r)?;
    let additional_indices = read_indices(r)?;
    let sample_columns = read_indices(r)?;
    let count = read_usize(r)?;
    let singular_values = (0..count).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    let basis = read_matrix(r)?;
    let mixing = read_matrix(r)?;
    let projected_operators = read_matrix(r)?;
    let projected_offset = read_optional(r)?;
    let projected_rhs = read_optional(r)?;

    let model = ReducedModel {
        problem,
        fine_dim,
        sample_count,
        thresholds,
        skeleton_indices,
        additional_indices,
        basis,
        singular_values,
        mixing,
        projected_operators,
        projected_offset,
        projected_rhs,
        rhs_mode,
        sample_columns,
    };
    check_consistency(&model)?;
    Ok(model)
}

fn check_consistency(m: &ReducedModel) -> Result<()> {
    let s = m.skeleton_count();
    let nrb = m.basis.ncols();
    let bad = m.basis.nrows() != m.fine_dim
        || m.mixing.shape() != (s, m.sample_count)
        || m.projected_operators.shape() != (nrb * nrb, s)
        || m.singular_values.len() != nrb
        || m.projected_offset.as_ref().is_some_and(|o| o.shape() != (nrb, nrb))
        || m.projected_rhs.as_ref().is_some_and(|f| f.shape() != (nrb, s))
        || (m.rhs_mode == RhsMode::Interpolated && m.projected_rhs.is_none());
    if bad {
        return Err(RbError::Model("inconsistent matrix dimensions in model file".into()));
    }
    Ok(())
}

pub fn save_model(model: &ReducedModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ReducedModel> {
    let bytes = std::fs::read(path)
        .map_err(|e| RbError::Model(format!("cannot read {}: {e}", path.display())))?;
    let mut cursor = bytes.as_slice();
    let model = read_model(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(RbError::Model(format!(
            "{} trailing bytes after model data",
            cursor.len()
        )));
    }
    Ok(model)
}

fn truncated(e: std::io::Error) -> RbError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        RbError::Model("model file is truncated".into())
    } else {
        RbError::Io(e)
    }
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_indices<W: Write>(w: &mut W, idx: &[usize]) -> Result<()> {
    write_u64(w, idx.len() as u64)?;
    for &i in idx {
        write_u64(w, i as u64)?;
    }
    Ok(())
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    let mut buf = Vec::with_capacity(m.len() * 8);
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn write_optional<W: Write>(w: &mut W, m: Option<&Matrix>) -> Result<()> {
    match m {
        Some(m) => {
            w.write_all(&[1])?;
            write_matrix(w, m)
        }
        None => {
            w.write_all(&[0])?;
            Ok(())
        }
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_usize<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| RbError::Model("size field overflows usize".into()))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn read_indices<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let n = read_usize(r)?;
    (0..n).map(|_| read_usize(r)).collect()
}

fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let rows = read_usize(r)?;
    let cols = read_usize(r)?;
    let len = rows
        .checked_mul(cols)
        .filter(|l| *l <= 1 << 32)
        .ok_or_else(|| RbError::Model(format!("implausible matrix size {rows} x {cols}")))?;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8 bytes")))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

fn read_optional<R: Read>(r: &mut R) -> Result<Option<Matrix>> {
    match read_u8(r)? {
        0 => Ok(None),
        1 => read_matrix(r).map(Some),
        other => Err(RbError::Model(format!("bad presence flag {other}"))),
    }
}
