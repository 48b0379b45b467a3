//! Binary field format: a 20-byte little-endian header (magic `H2DF`,
//! version `u16`, components `u16`, `N` as `u32`, `L` as `f64`) followed by
//! the components one after another, each as `N²` row-major `f64`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

pub const MAGIC: &[u8; 4] = b"H2DF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Scalar(ScalarField),
    Vector(VectorField),
}

impl Field {
    pub fn grid(&self) -> Grid {
        match self {
            Field::Scalar(f) => f.grid,
            Field::Vector(f) => f.grid,
        }
    }

    fn components(&self) -> Vec<&[f64]> {
        match self {
            Field::Scalar(f) => vec![&f.data],
            Field::Vector(f) => vec![&f.x, &f.y],
        }
    }

    pub fn into_scalar(self) -> Result<ScalarField> {
        match self {
            Field::Scalar(f) => Ok(f),
            Field::Vector(_) => Err(Error::Format(
                "expected a scalar field, found a vector field".into(),
            )),
        }
    }

    pub fn into_vector(self) -> Result<VectorField> {
        match self {
            Field::Vector(f) => Ok(f),
            Field::Scalar(_) => Err(Error::Format(
                "expected a vector field, found a scalar field".into(),
            )),
        }
    }
}

impl From<ScalarField> for Field {
    fn from(f: ScalarField) -> Self {
        Field::Scalar(f)
    }
}

impl From<VectorField> for Field {
    fn from(f: VectorField) -> Self {
        Field::Vector(f)
    }
}

pub fn encode(field: &Field) -> Vec<u8> {
    let g = field.grid();
    let comps = field.components();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.len() * comps.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(comps.len() as u16).to_le_bytes());
    out.extend_from_slice(&(g.n as u32).to_le_bytes());
    out.extend_from_slice(&g.length.to_le_bytes());
    for c in comps {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let comps = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if comps != 1 && comps != 2 {
        return Err(Error::Format(format!(
            "unsupported component count {comps}"
        )));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if n == 0 {
        return Err(Error::Format("grid size N = 0".into()));
    }
    let length = f64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let grid = Grid::new(n, length).map_err(|e| Error::Format(e.to_string()))?;
    let expect = n
        .checked_mul(n)
        .and_then(|v| v.checked_mul(8 * comps))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("grid size N = {n} is too large")))?;
    if bytes.len() != expect {
        return Err(Error::Format(format!(
            "payload of {} bytes, expected {expect} for {comps} x {n}²",
            bytes.len()
        )));
    }
    let mut data: Vec<Vec<f64>> = bytes[HEADER_LEN..]
        .chunks_exact(8 * n * n)
        .map(|c| {
            c.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect()
        })
        .collect();
    Ok(if comps == 1 {
        Field::Scalar(ScalarField {
            grid,
            data: data.pop().expect("one component"),
        })
    } else {
        let y = data.pop().expect("two components");
        let x = data.pop().expect("two components");
        Field::Vector(VectorField { grid, x, y })
    })
}

pub fn write_field(field: &Field, path: &Path) -> Result<()> {
    std::fs::write(path, encode(field)).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<Field> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
