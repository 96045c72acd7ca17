use std::io::{Read, Write};
use std::path::Path;

use crate::error::{QpatError, Result};
use crate::geometry::SpatialMesh;

const FIELD_MAGIC: &[u8; 8] = b"QPATFLD1";

/// Nodal field as stored on disk, bound to a mesh by its hash.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub values: Vec<f64>,
    pub mesh_hash: u64,
}

impl FieldFile {
    pub fn new(mesh: &SpatialMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_vertices() {
            return Err(QpatError::InvalidArgument(format!(
                "field has {} values, mesh has {} vertices",
                values.len(),
                mesh.n_vertices()
            )));
        }
        Ok(FieldFile {
            values,
            mesh_hash: mesh.mesh_hash(),
        })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(FIELD_MAGIC)?;
        out.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.mesh_hash.to_le_bytes())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let io = |e: std::io::Error| QpatError::Integrity(format!("truncated field file: {e}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != FIELD_MAGIC {
            return Err(QpatError::Integrity("not a field file (bad magic)".into()));
        }
        let mut word = [0u8; 8];
        input.read_exact(&mut word).map_err(io)?;
        let n = u64::from_le_bytes(word) as usize;
        if n > 1 << 30 {
            return Err(QpatError::Integrity(format!("implausible field length {n}")));
        }
        let mut buf = vec![0u8; 8 * n];
        input.read_exact(&mut buf).map_err(io)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        input.read_exact(&mut word).map_err(io)?;
        let mut rest = [0u8; 1];
        if input.read(&mut rest).map_err(io)? != 0 {
            return Err(QpatError::Integrity("trailing bytes after field data".into()));
        }
        Ok(FieldFile {
            values,
            mesh_hash: u64::from_le_bytes(word),
        })
    }

    /// Checks that the field belongs to `mesh`.
    pub fn check_mesh(&self, mesh: &SpatialMesh) -> Result<()> {
        if self.values.len() != mesh.n_vertices() || self.mesh_hash != mesh.mesh_hash() {
            return Err(QpatError::Integrity(format!(
                "field (hash {:016x}, {} values) does not belong to the N = {} mesh",
                self.mesh_hash,
                self.values.len(),
                mesh.resolution()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + 8 * self.values.len());
        self.write_to(&mut buf).map_err(|e| QpatError::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| QpatError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| QpatError::io(path, e))?;
        Self::read_from(&bytes[..])
    }
}

/// Mesh resolution `N` whose vertex count `(N+1)^2` equals `n_vertices`.
pub fn resolution_for(n_vertices: usize) -> Option<usize> {
    let s = (n_vertices as f64).sqrt().round() as usize;
    (s >= 2 && s * s == n_vertices).then(|| s - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_mesh_binding() {
        let mesh = SpatialMesh::uniform(5).unwrap();
        let f = FieldFile::new(&mesh, (0..36).map(|i| i as f64 / 7.0).collect()).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let back = FieldFile::read_from(&buf[..]).unwrap();
        assert_eq!(back, f);
        back.check_mesh(&mesh).unwrap();
        assert!(back.check_mesh(&SpatialMesh::uniform(6).unwrap()).is_err());
        assert!(FieldFile::read_from(&buf[..buf.len() - 1]).is_err());
        assert_eq!(resolution_for(36), Some(5));
        assert_eq!(resolution_for(35), None);
    }
}
