//! Self-consistency checks run by `qpat selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acoustics::{AcousticSetup, DetectorGeometry, TimeGrid, WaveOperator, DEFAULT_RAMP};
use crate::error::Result;
use crate::experiment::{make_bottom_illumination, make_phantom, PhantomSpec};
use crate::geometry::{AngularGrid, SpatialMesh};
use crate::heating::heating;
use crate::inversion::{Objective, PressureMisfit};
use crate::sparse::dot;
use crate::transport::{
    assemble_transport_system, CoefficientPair, ScatteringKernelSpec, ScatteringMatrix, TransportContext,
};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Coefficients whose `mu + sigma` crosses the stabilization threshold
/// inside the domain but stays away from it at every vertex of `mesh`.
fn mixed_coefficients(mesh: &SpatialMesh) -> Result<CoefficientPair> {
    let sigma = mesh.vertices().iter().map(|p| 0.43 + 0.4 * (p[0] + 1.0)).collect();
    CoefficientPair::new(vec![0.15; mesh.n_vertices()], sigma, 1.0, 5.0)
}

/// `<M u, w>` against `<u, M^T w>` for random vectors.
pub fn transport_adjoint_check() -> Result<CheckOutcome> {
    let mesh = SpatialMesh::uniform(8)?;
    let grid = AngularGrid::uniform(8)?;
    let kmat = ScatteringMatrix::assemble(&grid, &ScatteringKernelSpec::new(0.6)?);
    let ctx = TransportContext::new(mesh.clone(), grid, kmat)?;
    let system = assemble_transport_system(&ctx, &mixed_coefficients(&mesh)?)?;
    let n = ctx.n_unknowns();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = random_vec(&mut rng, n, -1.0, 1.0);
    let w = random_vec(&mut rng, n, -1.0, 1.0);
    let mut mu = vec![0.0; n];
    let mut mtw = vec![0.0; n];
    system.apply(&u, &mut mu);
    system.apply_transpose(&w, &mut mtw);
    Ok(CheckOutcome {
        name: "transport adjoint pairing",
        value: relative_gap(dot(&mu, &w), dot(&u, &mtw)),
        tolerance: 1e-12,
    })
}

/// `<W h, v>` against `<h, W^T v>` for random vectors.
pub fn wave_transpose_check() -> Result<CheckOutcome> {
    let mesh = SpatialMesh::uniform(12)?;
    let setup = AcousticSetup::new(DetectorGeometry::half_circle(20)?, TimeGrid::new(3.5, 80)?, DEFAULT_RAMP)?;
    let wave = WaveOperator::new(&mesh, &setup)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = random_vec(&mut rng, wave.ncols(), -1.0, 1.0);
    let v = random_vec(&mut rng, wave.nrows(), -1.0, 1.0);
    Ok(CheckOutcome {
        name: "wave transpose pairing",
        value: relative_gap(dot(&wave.apply(&h), &v), dot(&h, &wave.apply_transpose(&v))),
        tolerance: 1e-12,
    })
}

/// Adjoint-state gradient against central differences of the discrete
/// objective: N = 16, 8 directions, 120 x 300 samples, 10 random directions.
pub fn gradient_check() -> Result<CheckOutcome> {
    let mesh = SpatialMesh::uniform(16)?;
    let grid = AngularGrid::uniform(8)?;
    let kmat = ScatteringMatrix::assemble(&grid, &ScatteringKernelSpec::new(0.6)?);
    let ctx = TransportContext::new(mesh.clone(), grid, kmat)?;
    let setup = AcousticSetup::new(DetectorGeometry::half_circle(120)?, TimeGrid::new(3.5, 300)?, DEFAULT_RAMP)?;
    let wave = WaveOperator::new(&mesh, &setup)?;

    let illum = vec![make_bottom_illumination(&mesh, ctx.grid())?];
    let truth = make_phantom(&PhantomSpec::standard(3.0, 0.6), &mesh)?;
    let phi = assemble_transport_system(&ctx, &truth)?.solve_forward(&illum[0])?;
    let data = vec![wave.forward(&heating(&mesh, &truth, &phi, ctx.grid())?)?];
    let objective = Objective::new(&ctx, &illum, PressureMisfit::new(&wave, &data)?, 0.0)?;

    let base = mixed_coefficients(&mesh)?;
    let grad = objective.gradient(&objective.evaluate(&base)?)?;
    let nv = mesh.n_vertices();
    let s = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let dm = random_vec(&mut rng, nv, -0.1, 0.1);
        let ds = random_vec(&mut rng, nv, -0.1, 0.1);
        let at = |e: f64| -> Result<f64> {
            let mu = base.mu.iter().zip(&dm).map(|(a, b)| a + e * b).collect();
            let sigma = base.sigma.iter().zip(&ds).map(|(a, b)| a + e * b).collect();
            Ok(objective.evaluate(&CoefficientPair::new(mu, sigma, 1.0, 5.0)?)?.fidelity)
        };
        let fd = (at(s)? - at(-s)?) / (2.0 * s);
        let exact = dot(&grad.grad_mu, &dm) + dot(&grad.grad_sigma, &ds);
        worst = worst.max(relative_gap(fd, exact));
    }
    Ok(CheckOutcome {
        name: "gradient vs central differences",
        value: worst,
        tolerance: 1e-4,
    })
}

/// Every check in order.
pub fn run_all() -> Result<Vec<CheckOutcome>> {
    Ok(vec![transport_adjoint_check()?, wave_transpose_check()?, gradient_check()?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_checks_pass() {
        assert!(transport_adjoint_check().unwrap().passed());
        assert!(wave_transpose_check().unwrap().passed());
    }
}
