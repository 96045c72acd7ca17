//! Phantoms, illumination, data simulation on a fine mesh, noise, error
//! metrics and the end-to-end reconstruction drivers.

mod config;
mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

pub use config::{
    ExperimentConfig, DEFAULT_LAMBDA, DEFAULT_LAMBDA_TWO_STAGE, LAMBDA_SWEEP, OPTIONAL_KEYS, REQUIRED_KEYS,
};
pub use io::{resolution_for, FieldFile};

use crate::acoustics::{wave_forward, AcousticSetup, DetectorGeometry, PressureData, TimeGrid, WaveOperator, DEFAULT_RAMP};
use crate::error::{ensure_arg, QpatError, Result};
use crate::geometry::{AngularGrid, BoundaryClassification, Side, SpatialMesh};
use crate::heating::{heating, HeatingField};
use crate::inversion::{run_single_stage, run_two_stage, IterationTrace, SolverConfig, StepRule};
use crate::transport::{
    assemble_transport_system, CoefficientPair, IlluminationPattern, RadianceField, ScatteringKernelSpec,
    ScatteringMatrix, TransportContext,
};

/// Name of the generator behind [`add_noise`], recorded in run manifests.
pub const NOISE_GENERATOR: &str = "ChaCha20Rng + rand_distr::Normal";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Disk { center: [f64; 2], radius: f64 },
    Rectangle { center: [f64; 2], size: [f64; 2] },
}

impl Shape {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Shape::Disk { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) <= radius,
            Shape::Rectangle { center, size } => {
                (p[0] - center[0]).abs() <= 0.5 * size[0] && (p[1] - center[1]).abs() <= 0.5 * size[1]
            }
        }
    }

    fn inside_square(&self) -> bool {
        let (c, half) = match *self {
            Shape::Disk { center, radius } => (center, [radius, radius]),
            Shape::Rectangle { center, size } => (center, [0.5 * size[0], 0.5 * size[1]]),
        };
        half[0] > 0.0
            && half[1] > 0.0
            && c[0] - half[0] >= -1.0
            && c[0] + half[0] <= 1.0
            && c[1] - half[1] >= -1.0
            && c[1] + half[1] <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    pub shape: Shape,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub background_mu: f64,
    /// Later inclusions win where shapes overlap.
    pub inclusions: Vec<Inclusion>,
    pub sigma: f64,
    pub g: f64,
    pub mu_max: f64,
    pub sigma_max: f64,
}

impl PhantomSpec {
    /// Two disks and a rectangle of contrasting absorption on a weak background.
    pub fn standard(sigma: f64, g: f64) -> Self {
        PhantomSpec {
            background_mu: 0.05,
            inclusions: vec![
                Inclusion {
                    shape: Shape::Disk {
                        center: [-0.4, -0.3],
                        radius: 0.25,
                    },
                    mu: 0.3,
                },
                Inclusion {
                    shape: Shape::Rectangle {
                        center: [0.3, 0.35],
                        size: [0.5, 0.3],
                    },
                    mu: 0.2,
                },
                Inclusion {
                    shape: Shape::Disk {
                        center: [0.45, -0.45],
                        radius: 0.15,
                    },
                    mu: 0.25,
                },
            ],
            sigma,
            g,
            mu_max: 1.0,
            sigma_max: sigma.max(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.mu_max > 0.0 && self.sigma_max > 0.0, "bounds must be positive");
        ensure_arg!(
            (0.0..=self.mu_max).contains(&self.background_mu),
            "background absorption outside [0, {}]",
            self.mu_max
        );
        ensure_arg!(
            (0.0..=self.sigma_max).contains(&self.sigma),
            "scattering outside [0, {}]",
            self.sigma_max
        );
        for (i, inc) in self.inclusions.iter().enumerate() {
            ensure_arg!(inc.shape.inside_square(), "inclusion {i} does not lie inside the square");
            ensure_arg!(
                (0.0..=self.mu_max).contains(&inc.mu),
                "inclusion {i} absorption outside [0, {}]",
                self.mu_max
            );
        }
        Ok(())
    }

    pub fn mu_at(&self, p: [f64; 2]) -> f64 {
        self.inclusions
            .iter()
            .rev()
            .find(|inc| inc.shape.contains(p))
            .map_or(self.background_mu, |inc| inc.mu)
    }
}

/// Nodal coefficients of the phantom on `mesh`.
pub fn make_phantom(spec: &PhantomSpec, mesh: &SpatialMesh) -> Result<CoefficientPair> {
    spec.validate()?;
    let mu = mesh.vertices().iter().map(|&p| spec.mu_at(p)).collect();
    CoefficientPair::new(mu, vec![spec.sigma; mesh.n_vertices()], spec.mu_max, spec.sigma_max)
}

/// Planar vertical beam: `f = 1` on bottom-edge inflow pairs of the direction nearest `(0, 1)`.
pub fn make_bottom_illumination(mesh: &SpatialMesh, grid: &AngularGrid) -> Result<IlluminationPattern> {
    let k = grid.nearest(std::f64::consts::FRAC_PI_2);
    let bc = BoundaryClassification::new(mesh, grid);
    let nv = mesh.n_vertices();
    let mut f = vec![0.0; nv * grid.len()];
    for p in bc.inflow() {
        if p.angle == k && mesh.boundary_edges()[p.edge].side == Side::Bottom {
            f[k * nv + p.vertex] = 1.0;
        }
    }
    IlluminationPattern::new(RadianceField::from_vec(nv, grid.len(), f)?, None)
}

/// Discrete inflow flux `sum_{Gamma_-} w_k |nu . theta_k| f` of an illumination.
pub fn inflow_flux(mesh: &SpatialMesh, grid: &AngularGrid, illum: &IlluminationPattern) -> f64 {
    let bc = BoundaryClassification::new(mesh, grid);
    let nv = mesh.n_vertices();
    let w = grid.weight();
    bc.inflow()
        .map(|p| w * p.weight * illum.inflow.as_slice()[p.angle * nv + p.vertex])
        .sum()
}

/// P1 interpolation of a nodal field onto the vertices of another mesh.
pub fn interpolate_field(from: &SpatialMesh, values: &[f64], to: &SpatialMesh) -> Vec<f64> {
    to.vertices().iter().map(|&p| from.interpolate(values, p)).collect()
}

/// Transport discretization for the given mesh resolution and config.
pub fn transport_context(n: usize, config: &ExperimentConfig) -> Result<TransportContext> {
    let mesh = SpatialMesh::uniform(n)?;
    let grid = AngularGrid::uniform(config.n_angles)?;
    let spec = ScatteringKernelSpec::with_form(config.g, config.kernel_form)?;
    let kmat = ScatteringMatrix::assemble(&grid, &spec);
    TransportContext::new(mesh, grid, kmat)
}

/// Half-circle detector arc with the configured sampling.
pub fn acoustic_setup(config: &ExperimentConfig) -> Result<AcousticSetup> {
    AcousticSetup::new(
        DetectorGeometry::half_circle(config.n_detectors)?,
        TimeGrid::new(config.t_max, config.n_times)?,
        DEFAULT_RAMP,
    )
}

/// Output of [`simulate_data`].
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Clean pressure data, one per illumination.
    pub data: Vec<PressureData>,
    pub truth_fine: CoefficientPair,
    pub heating_fine: HeatingField,
    /// Truth interpolated to the inversion mesh.
    pub mu_coarse: Vec<f64>,
    pub heating_coarse: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Phantom on the simulation mesh, transport solve, heating, wave data.
pub fn simulate_data(spec: &PhantomSpec, config: &ExperimentConfig) -> Result<Simulation> {
    let ctx = transport_context(config.sim_n, config)?;
    let mesh = ctx.mesh();
    let truth = make_phantom(spec, mesh)?;
    let system = assemble_transport_system(&ctx, &truth)?;
    let illum = make_bottom_illumination(mesh, ctx.grid())?;
    let phi = system.solve_forward(&illum)?;
    let h = heating(mesh, &truth, &phi, ctx.grid())?;
    let setup = acoustic_setup(config)?;
    let data = wave_forward(mesh, &h, &setup)?;
    if !data.is_finite() {
        return Err(QpatError::Numerical("simulated pressure is not finite".into()));
    }
    let coarse = SpatialMesh::uniform(config.inv_n)?;
    Ok(Simulation {
        data: vec![data],
        mu_coarse: interpolate_field(mesh, &truth.mu, &coarse),
        heating_coarse: interpolate_field(mesh, &h.values, &coarse),
        truth_fine: truth,
        heating_fine: h,
        warnings: config.warnings(),
    })
}

/// Adds i.i.d. Gaussian noise with standard deviation `level * max|v|`.
pub fn add_noise(v: &PressureData, level: f64, seed: u64) -> Result<PressureData> {
    ensure_arg!(level >= 0.0 && level.is_finite(), "noise level must be nonnegative");
    if level == 0.0 {
        return Ok(v.clone());
    }
    let std = level * v.max_abs();
    let normal = Normal::new(0.0, std).map_err(|e| QpatError::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = v.clone();
    for x in &mut out.values {
        *x += normal.sample(&mut rng);
    }
    Ok(out)
}

/// `||recon - truth||_{L^2} / ||truth||_{L^2}` with the consistent mass matrix.
pub fn relative_error(recon: &[f64], truth: &[f64], mesh: &SpatialMesh) -> Result<f64> {
    let n = mesh.n_vertices();
    ensure_arg!(recon.len() == n && truth.len() == n, "fields do not match the mesh");
    let mass = mesh.mass_matrix();
    let denom = mass.quadratic_form(truth).max(0.0).sqrt();
    if denom == 0.0 {
        return Err(QpatError::InvalidArgument("relative error against a zero field".into()));
    }
    let diff: Vec<f64> = recon.iter().zip(truth).map(|(a, b)| a - b).collect();
    Ok(mass.quadratic_form(&diff).max(0.0).sqrt() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SingleStage,
    TwoStage,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SingleStage => "single",
            Method::TwoStage => "two",
        }
    }
}

/// Solver settings derived from a config for one of the pipelines.
pub fn solver_config(config: &ExperimentConfig, method: Method) -> SolverConfig {
    SolverConfig {
        lambda: match method {
            Method::SingleStage => config.lambda,
            Method::TwoStage => config.lambda_two_stage,
        },
        step: config.step.map_or(StepRule::Lipschitz, StepRule::Fixed),
        max_iters: config.iters,
        ..SolverConfig::default()
    }
}

/// Default initial guess: `mu = 0.01 mu_max`, `sigma` known.
pub fn initial_guess(n_vertices: usize, spec: &PhantomSpec) -> Result<CoefficientPair> {
    CoefficientPair::constant(
        n_vertices,
        0.01 * spec.mu_max,
        spec.sigma,
        spec.mu_max,
        spec.sigma_max,
    )
}

/// Reconstructs `mu` on the inversion mesh from (possibly noisy) pressure data.
pub fn reconstruct(
    spec: &PhantomSpec,
    config: &ExperimentConfig,
    data: &[PressureData],
    method: Method,
) -> Result<(CoefficientPair, IterationTrace)> {
    let ctx = transport_context(config.inv_n, config)?;
    let setup = match data.first() {
        Some(d) => AcousticSetup::for_data(d, DEFAULT_RAMP)?,
        None => return Err(QpatError::InvalidArgument("no pressure data".into())),
    };
    let illum = vec![make_bottom_illumination(ctx.mesh(), ctx.grid())?; data.len()];
    let initial = initial_guess(ctx.mesh().n_vertices(), spec)?;
    let solver = solver_config(config, method);
    match method {
        Method::SingleStage => {
            let wave = WaveOperator::new(ctx.mesh(), &setup)?;
            run_single_stage(&ctx, &wave, &illum, data, &solver, &initial)
        }
        Method::TwoStage => run_two_stage(&ctx, &setup, &illum, data, &solver, &initial),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_rules() {
        let mesh = SpatialMesh::uniform(20).unwrap();
        let empty = PhantomSpec {
            inclusions: vec![],
            ..PhantomSpec::standard(3.0, 0.6)
        };
        let c = make_phantom(&empty, &mesh).unwrap();
        assert!(c.mu.iter().all(|&m| m == 0.05));

        let overlap = PhantomSpec {
            inclusions: vec![
                Inclusion {
                    shape: Shape::Disk {
                        center: [0.0, 0.0],
                        radius: 0.5,
                    },
                    mu: 0.4,
                },
                Inclusion {
                    shape: Shape::Rectangle {
                        center: [0.0, 0.0],
                        size: [0.2, 0.2],
                    },
                    mu: 0.7,
                },
            ],
            ..empty.clone()
        };
        let c = make_phantom(&overlap, &mesh).unwrap();
        let centre = mesh.vertex_index(10, 10);
        assert_eq!(c.mu[centre], 0.7);

        let outside = PhantomSpec {
            inclusions: vec![Inclusion {
                shape: Shape::Disk {
                    center: [0.9, 0.0],
                    radius: 0.3,
                },
                mu: 0.2,
            }],
            ..empty
        };
        assert!(make_phantom(&outside, &mesh).is_err());
    }

    #[test]
    fn bottom_beam() {
        let mesh = SpatialMesh::uniform(8).unwrap();
        let grid = AngularGrid::uniform(16).unwrap();
        let illum = make_bottom_illumination(&mesh, &grid).unwrap();
        let nv = mesh.n_vertices();
        let k = grid.nearest(std::f64::consts::FRAC_PI_2);
        assert_eq!(k, 12);
        for (idx, &f) in illum.inflow.as_slice().iter().enumerate() {
            let (kk, v) = (idx / nv, idx % nv);
            let on_bottom = mesh.vertices()[v][1] == -1.0;
            assert_eq!(f, if kk == k && on_bottom { 1.0 } else { 0.0 });
        }
        // Edge length 2, |nu . theta| = 1, one direction of weight 2 pi / 16.
        let flux = inflow_flux(&mesh, &grid, &illum);
        assert!((flux - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn noise_determinism() {
        let setup = AcousticSetup::new(
            DetectorGeometry::half_circle(4).unwrap(),
            TimeGrid::new(3.5, 50).unwrap(),
            DEFAULT_RAMP,
        )
        .unwrap();
        let mut v = setup.zero_data();
        v.values.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64).sin());
        assert_eq!(add_noise(&v, 0.0, 3).unwrap(), v);
        let a = add_noise(&v, 0.05, 3).unwrap();
        let b = add_noise(&v, 0.05, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_noise(&v, 0.05, 4).unwrap());
    }

    #[test]
    fn relative_error_examples() {
        let mesh = SpatialMesh::uniform(6).unwrap();
        let truth: Vec<f64> = mesh.vertices().iter().map(|p| 1.0 + p[0] * p[1]).collect();
        assert_eq!(relative_error(&truth, &truth, &mesh).unwrap(), 0.0);
        let double: Vec<f64> = truth.iter().map(|v| 2.0 * v).collect();
        assert!((relative_error(&double, &truth, &mesh).unwrap() - 1.0).abs() < 1e-14);
        assert!(relative_error(&truth, &vec![0.0; truth.len()], &mesh).is_err());
    }
}
