//! Angular averaging, the heating operator `H(mu, sigma) = mu A T(mu, sigma)`
//! and zero extension of heating fields to the plane.
//!
//! Products are nodal: `H` is exactly bilinear in the nodal values of `mu` and
//! of the radiance.

use crate::error::{ensure_arg, Result};
use crate::geometry::{AngularGrid, SpatialMesh};
use crate::transport::{CoefficientPair, RadianceField};

/// Nodal heating values tied to the mesh they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatingField {
    pub values: Vec<f64>,
    pub mesh_hash: u64,
}

impl HeatingField {
    pub fn new(mesh: &SpatialMesh, values: Vec<f64>) -> Result<Self> {
        ensure_arg!(
            values.len() == mesh.n_vertices(),
            "heating field has {} values, mesh has {} vertices",
            values.len(),
            mesh.n_vertices()
        );
        ensure_arg!(values.iter().all(|v| v.is_finite()), "heating field is not finite");
        Ok(HeatingField {
            values,
            mesh_hash: mesh.mesh_hash(),
        })
    }
}

/// `(A Phi)(x_v) = sum_k w_k Phi(x_v, theta_k)`.
pub fn average(phi: &RadianceField, grid: &AngularGrid) -> Vec<f64> {
    let nv = phi.n_vertices();
    let mut out = vec![0.0; nv];
    for (k, w) in grid.weights().into_iter().enumerate().take(phi.n_angles()) {
        for (o, v) in out.iter_mut().zip(phi.direction(k)) {
            *o += w * v;
        }
    }
    out
}

/// Transpose of [`average`]: spreads a spatial field over all directions with the weights.
pub fn average_transpose(field: &[f64], grid: &AngularGrid) -> RadianceField {
    let w = grid.weights();
    RadianceField::from_fn(field.len(), grid.len(), |v, k| w[k] * field[v])
}

/// `mu . A Phi` nodewise.
pub fn heating(mesh: &SpatialMesh, coeffs: &CoefficientPair, phi: &RadianceField, grid: &AngularGrid) -> Result<HeatingField> {
    ensure_arg!(coeffs.len() == phi.n_vertices(), "coefficients do not match radiance");
    let avg = average(phi, grid);
    HeatingField::new(mesh, coeffs.mu.iter().zip(&avg).map(|(m, a)| m * a).collect())
}

/// `h_mu . A Phi + mu . A Psi` nodewise.
pub fn heating_derivative(
    coeffs: &CoefficientPair,
    phi: &RadianceField,
    psi: &RadianceField,
    h_mu: &[f64],
    grid: &AngularGrid,
) -> Result<Vec<f64>> {
    let nv = coeffs.len();
    ensure_arg!(
        phi.n_vertices() == nv && psi.n_vertices() == nv && h_mu.len() == nv,
        "dimension mismatch in heating derivative"
    );
    let a_phi = average(phi, grid);
    let a_psi = average(psi, grid);
    Ok((0..nv).map(|v| h_mu[v] * a_phi[v] + coeffs.mu[v] * a_psi[v]).collect())
}

/// Heating field extended by zero outside the square.
#[derive(Debug, Clone, Copy)]
pub struct ZeroExtended<'a> {
    mesh: &'a SpatialMesh,
    values: &'a [f64],
}

impl<'a> ZeroExtended<'a> {
    pub fn mesh(&self) -> &'a SpatialMesh {
        self.mesh
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.mesh.interpolate(self.values, p)
    }
}

pub fn extend_by_zero<'a>(mesh: &'a SpatialMesh, h: &'a HeatingField) -> Result<ZeroExtended<'a>> {
    ensure_arg!(
        h.mesh_hash == mesh.mesh_hash(),
        "heating field belongs to a different mesh"
    );
    Ok(ZeroExtended {
        mesh,
        values: &h.values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn average_of_constants_and_harmonics() {
        let grid = AngularGrid::uniform(16).unwrap();
        let c = RadianceField::from_fn(5, 16, |_, _| 3.0);
        assert!(average(&c, &grid).iter().all(|v| (v - 6.0 * PI).abs() < 1e-12));
        let cos = RadianceField::from_fn(5, 16, |_, k| grid.angles()[k].cos());
        assert!(average(&cos, &grid).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn average_matches_oversampled_p1_interpolant() {
        let grid = AngularGrid::uniform(8).unwrap();
        let vals: Vec<f64> = (0..8).map(|k| ((k * 7 + 3) % 5) as f64 - 1.3).collect();
        let phi = RadianceField::from_fn(1, 8, |_, k| vals[k]);
        let fine = 80;
        let mut oracle = 0.0;
        for m in 0..fine {
            let s = m as f64 * 8.0 / fine as f64;
            let k = s.floor() as usize;
            let t = s - k as f64;
            oracle += (1.0 - t) * vals[k] + t * vals[(k + 1) % 8];
        }
        oracle *= 2.0 * PI / fine as f64;
        assert!((average(&phi, &grid)[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn heating_examples() {
        let mesh = SpatialMesh::uniform(4).unwrap();
        let grid = AngularGrid::uniform(16).unwrap();
        let nv = mesh.n_vertices();
        let phi = RadianceField::from_fn(nv, 16, |_, _| 1.0);
        let c = CoefficientPair::constant(nv, 0.2, 3.0, 1.0, 5.0).unwrap();
        let h = heating(&mesh, &c, &phi, &grid).unwrap();
        assert!(h.values.iter().all(|v| (v - 0.4 * PI).abs() < 1e-12));
        let zero = CoefficientPair::constant(nv, 0.0, 3.0, 1.0, 5.0).unwrap();
        assert!(heating(&mesh, &zero, &phi, &grid).unwrap().values.iter().all(|&v| v == 0.0));

        let ones = vec![1.0; nv];
        let psi = RadianceField::from_fn(nv, 16, |v, k| (v + k) as f64);
        let d = heating_derivative(&zero, &phi, &psi, &ones, &grid).unwrap();
        assert_eq!(d, average(&phi, &grid));
    }

    #[test]
    fn zero_extension() {
        let mesh = SpatialMesh::uniform(4).unwrap();
        let vals: Vec<f64> = (0..mesh.n_vertices()).map(|v| v as f64 * 0.5).collect();
        let h = HeatingField::new(&mesh, vals.clone()).unwrap();
        let e = extend_by_zero(&mesh, &h).unwrap();
        assert_eq!(e.eval([5.0, 5.0]), 0.0);
        for (v, p) in mesh.vertices().iter().enumerate() {
            assert!((e.eval(*p) - vals[v]).abs() < 1e-12);
        }
        let tri = mesh.triangles()[7];
        let c = tri.iter().fold([0.0, 0.0], |acc, &v| {
            [acc[0] + mesh.vertices()[v][0] / 3.0, acc[1] + mesh.vertices()[v][1] / 3.0]
        });
        let mean = tri.iter().map(|&v| vals[v]).sum::<f64>() / 3.0;
        assert!((e.eval(c) - mean).abs() < 1e-12);
    }
}
