//! Binary basis cache: `DSB1`, u32 n, u32 k, f64 λ (k), f64 Φ (n x k,
//! row-major), f64 areas (n), all little-endian.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::SpectralBasis;
use crate::error::{Error, Result};
use crate::mesh::VertexAreas;

const MAGIC: &[u8; 4] = b"DSB1";

pub fn write_basis(path: impl AsRef<Path>, basis: &SpectralBasis) -> Result<()> {
    let path = path.as_ref();
    let (n, k) = (basis.n(), basis.k());
    let as_u32 = |x: usize| {
        u32::try_from(x).map_err(|_| Error::Argument(format!("dimension {x} exceeds u32")))
    };
    let mut out = Vec::with_capacity(12 + 8 * (k + n * k + n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&as_u32(n)?.to_le_bytes());
    out.extend_from_slice(&as_u32(k)?.to_le_bytes());
    for l in basis.eigenvalues() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for i in 0..n {
        for j in 0..k {
            out.extend_from_slice(&basis.phi()[(i, j)].to_le_bytes());
        }
    }
    for a in basis.areas().as_slice() {
        out.extend_from_slice(&a.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_basis(path: impl AsRef<Path>) -> Result<SpectralBasis> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "byte offset 0", "missing DSB1 header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 8 * (k + n * k + n);
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("byte offset {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for n = {n}, k = {k}, found {}", bytes.len()),
        ));
    }
    let mut vals = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let lambda: Vec<f64> = vals.by_ref().take(k).collect();
    let phi_rows: Vec<f64> = vals.by_ref().take(n * k).collect();
    let areas: Vec<f64> = vals.collect();
    let phi = DMatrix::from_row_slice(n, k, &phi_rows);
    let areas = VertexAreas::new(areas).map_err(|e| Error::format(path, "areas", e.to_string()))?;
    SpectralBasis::from_parts(phi, lambda, areas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cotangent_weights, primitives, vertex_areas};
    use crate::spectral::eigenbasis;

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = primitives::torus(1.0, 0.3, 12, 7);
        let b = eigenbasis(&cotangent_weights(&m), &vertex_areas(&m), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.dsb");
        write_basis(&p, &b).unwrap();
        assert_eq!(read_basis(&p).unwrap(), b);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"DSB1");
        assert_eq!(bytes.len(), 12 + 8 * (9 + 84 * 9 + 84));
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_basis(&p).is_err());
    }
}
