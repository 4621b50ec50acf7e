//! Binary instance bundles.
//!
//! Layout (little-endian): the 8-byte magic `RSSMINST`, a `u32` format
//! version, a `u8` kind tag, kind-specific scalars, then each matrix as
//! `rows: u64`, `cols: u64` and `rows·cols` column-major `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{OdlInstance, RsrInstance};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::stiefel::StiefelPoint;

const MAGIC: &[u8; 8] = b"RSSMINST";
const VERSION: u32 = 1;
const KIND_RSR: u8 = 0;
const KIND_ODL: u8 = 1;
/// Refuse to allocate more than this many entries for one matrix.
const MAX_ENTRIES: u64 = 1 << 31;

#[derive(Debug, Clone)]
pub enum Instance {
    Rsr(RsrInstance),
    Odl(OdlInstance),
}

impl Instance {
    pub fn kind(&self) -> &'static str {
        match self {
            Instance::Rsr(_) => "rsr",
            Instance::Odl(_) => "odl",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_matrix(w: &mut impl Write, m: &DenseMatrix) -> std::io::Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_matrix(r: &mut impl Read) -> std::io::Result<std::result::Result<DenseMatrix, String>> {
    let rows = u64::from_le_bytes(read_array(r)?);
    let cols = u64::from_le_bytes(read_array(r)?);
    let Some(len) = rows.checked_mul(cols).filter(|&l| l <= MAX_ENTRIES) else {
        return Ok(Err(format!("matrix header {rows}×{cols} is too large")));
    };
    let mut values = Vec::with_capacity(len as usize);
    for _ in 0..len {
        values.push(f64::from_le_bytes(read_array(r)?));
    }
    Ok(Ok(DenseMatrix::from_vec(rows as usize, cols as usize, values)))
}

pub fn save_instance(instance: &Instance, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let body = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        match instance {
            Instance::Rsr(inst) => {
                w.write_all(&[KIND_RSR])?;
                write_matrix(w, inst.data())?;
                write_matrix(w, inst.basis().matrix())?;
                let mask = DenseMatrix::from_iterator(
                    1,
                    inst.m(),
                    inst.inlier_mask().iter().map(|&b| if b { 1.0 } else { 0.0 }),
                );
                write_matrix(w, &mask)?;
            }
            Instance::Odl(inst) => {
                w.write_all(&[KIND_ODL])?;
                w.write_all(&inst.theta().to_le_bytes())?;
                write_matrix(w, inst.dictionary().matrix())?;
                write_matrix(w, inst.codes())?;
            }
        }
        w.flush()
    };
    body(&mut w).map_err(io_err(path))
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let fmt = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let magic: [u8; 8] = read_array(&mut r).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r).map_err(io_err(path))?);
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let [kind] = read_array::<1>(&mut r).map_err(io_err(path))?;
    let next = |r: &mut BufReader<File>| -> Result<DenseMatrix> { read_matrix(r).map_err(io_err(path))?.map_err(fmt) };
    let instance = match kind {
        KIND_RSR => {
            let data = next(&mut r)?;
            let basis = StiefelPoint::new(next(&mut r)?)?;
            let mask = next(&mut r)?;
            let inlier = mask.iter().map(|&v| v != 0.0).collect();
            Instance::Rsr(RsrInstance::new(data, basis, inlier)?)
        }
        KIND_ODL => {
            let theta = f64::from_le_bytes(read_array(&mut r).map_err(io_err(path))?);
            let dictionary = StiefelPoint::new(next(&mut r)?)?;
            let codes = next(&mut r)?;
            Instance::Odl(OdlInstance::new(dictionary, codes, theta)?)
        }
        other => return Err(fmt(format!("unknown instance kind {other}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(Error::Format(format!("{}: trailing bytes after instance", path.display())));
    }
    Ok(instance)
}
