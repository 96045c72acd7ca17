//! Tikhonov functional for the absorption coefficient, its adjoint-state
//! gradient and the proximal gradient iteration.
//!
//! The objective is `F(mu, sigma) + lambda R(mu)` with
//! `R(mu) = 1/2 mu^T L mu` (`L` the P1 stiffness matrix). Two data terms are
//! provided: [`PressureMisfit`] compares `W H_i(mu, sigma)` with measured
//! pressure (single-stage), [`HeatingMisfit`] compares `H_i(mu, sigma)` with a
//! heating estimate in the `L^2` norm (second stage of the two-stage baseline).
//!
//! Gradients are exact derivatives of the discrete objective: the adjoint
//! radiance solves the transposed transport system and the wave part uses the
//! transpose of the frozen wave operator.

mod solver;

use std::path::Path;

use rayon::prelude::*;

pub use solver::{
    prox_step, run_proximal_gradient, run_single_stage, run_two_stage, IterationRecord, IterationTrace, SolverConfig,
    StepRule,
};

use crate::acoustics::{PressureData, WaveOperator};
use crate::error::{ensure_arg, QpatError, Result};
use crate::heating::{average, average_transpose};
use crate::sparse::CsrMatrix;
use crate::transport::{
    assemble_transport_system, CoefficientPair, IlluminationPattern, RadianceField, TransportContext, TransportSystem,
};

/// Data term as a function of the nodal heating of each illumination.
pub trait DataTerm: Sync {
    fn n_illuminations(&self) -> usize;

    /// Misfit value and residual for illumination `i`.
    fn residual(&self, i: usize, heating: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Gradient of the misfit with respect to the nodal heating, given the residual.
    fn pullback(&self, i: usize, residual: &[f64]) -> Vec<f64>;
}

/// `1/2 || W h - v ||^2` in the discrete `L^2(arc x (0, T))` norm.
pub struct PressureMisfit<'a> {
    wave: &'a WaveOperator,
    data: &'a [PressureData],
    weights: Vec<f64>,
}

impl<'a> PressureMisfit<'a> {
    pub fn new(wave: &'a WaveOperator, data: &'a [PressureData]) -> Result<Self> {
        let setup = wave.setup();
        for d in data {
            ensure_arg!(
                d.geometry == setup.geometry && d.time == setup.time,
                "pressure data do not match the wave operator sampling"
            );
        }
        Ok(PressureMisfit {
            wave,
            data,
            weights: setup.data_weights(),
        })
    }
}

impl DataTerm for PressureMisfit<'_> {
    fn n_illuminations(&self) -> usize {
        self.data.len()
    }

    fn residual(&self, i: usize, heating: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = self.wave.apply(heating);
        let r: Vec<f64> = p.iter().zip(&self.data[i].values).map(|(a, b)| a - b).collect();
        let value = 0.5 * r.iter().zip(&self.weights).map(|(x, w)| w * x * x).sum::<f64>();
        Ok((value, r))
    }

    fn pullback(&self, _i: usize, residual: &[f64]) -> Vec<f64> {
        let weighted: Vec<f64> = residual.iter().zip(&self.weights).map(|(r, w)| r * w).collect();
        self.wave.apply_transpose(&weighted)
    }
}

/// `1/2 || H - h_hat ||^2_{L^2}` with the consistent mass matrix.
pub struct HeatingMisfit {
    mass: CsrMatrix,
    targets: Vec<Vec<f64>>,
}

impl HeatingMisfit {
    pub fn new(mass: CsrMatrix, targets: Vec<Vec<f64>>) -> Result<Self> {
        ensure_arg!(
            targets.iter().all(|t| t.len() == mass.nrows()),
            "heating targets do not match the mesh"
        );
        Ok(HeatingMisfit { mass, targets })
    }
}

impl DataTerm for HeatingMisfit {
    fn n_illuminations(&self) -> usize {
        self.targets.len()
    }

    fn residual(&self, i: usize, heating: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r: Vec<f64> = heating.iter().zip(&self.targets[i]).map(|(a, b)| a - b).collect();
        Ok((0.5 * self.mass.quadratic_form(&r), r))
    }

    fn pullback(&self, _i: usize, residual: &[f64]) -> Vec<f64> {
        self.mass.apply(residual)
    }
}

/// Fidelity value together with everything the gradient needs.
pub struct ObjectiveState<'a> {
    pub coeffs: CoefficientPair,
    pub fidelity: f64,
    pub penalty: f64,
    pub residuals: Vec<Vec<f64>>,
    pub radiance: Vec<RadianceField>,
    system: TransportSystem<'a>,
}

impl ObjectiveState<'_> {
    pub fn total(&self) -> f64 {
        self.fidelity + self.penalty
    }

    pub fn system(&self) -> &TransportSystem<'_> {
        &self.system
    }
}

/// Gradients of the fidelity with respect to nodal `mu` and `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub grad_mu: Vec<f64>,
    pub grad_sigma: Vec<f64>,
}

/// `1/2 mu^T L mu`.
pub fn penalty_value(mu: &[f64], stiffness: &CsrMatrix) -> f64 {
    0.5 * stiffness.quadratic_form(mu)
}

/// Transport context, illuminations, data term and regularization weight.
pub struct Objective<'a, D: DataTerm> {
    ctx: &'a TransportContext,
    illuminations: &'a [IlluminationPattern],
    data: D,
    lambda: f64,
    stiffness: CsrMatrix,
}

impl<'a, D: DataTerm> Objective<'a, D> {
    pub fn new(ctx: &'a TransportContext, illuminations: &'a [IlluminationPattern], data: D, lambda: f64) -> Result<Self> {
        ensure_arg!(lambda >= 0.0 && lambda.is_finite(), "regularization parameter must be nonnegative");
        ensure_arg!(
            data.n_illuminations() == illuminations.len(),
            "{} illuminations but {} data sets",
            illuminations.len(),
            data.n_illuminations()
        );
        ensure_arg!(!illuminations.is_empty(), "at least one illumination required");
        Ok(Objective {
            ctx,
            illuminations,
            data,
            lambda,
            stiffness: ctx.mesh().stiffness_matrix(),
        })
    }

    pub fn context(&self) -> &'a TransportContext {
        self.ctx
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Heating `mu . A Phi_i` for every illumination.
    pub fn heatings(&self, state: &ObjectiveState<'_>) -> Vec<Vec<f64>> {
        state
            .radiance
            .iter()
            .map(|phi| {
                average(phi, self.ctx.grid())
                    .iter()
                    .zip(&state.coeffs.mu)
                    .map(|(a, m)| a * m)
                    .collect()
            })
            .collect()
    }

    /// Solves the forward problems and evaluates fidelity and penalty.
    pub fn evaluate(&self, coeffs: &CoefficientPair) -> Result<ObjectiveState<'a>> {
        let system = assemble_transport_system(self.ctx, coeffs)?;
        let per_illum: Vec<Result<(f64, Vec<f64>, RadianceField)>> = self
            .illuminations
            .par_iter()
            .enumerate()
            .map(|(i, illum)| {
                let phi = system.solve_forward(illum)?;
                let heating: Vec<f64> = average(&phi, self.ctx.grid())
                    .iter()
                    .zip(&coeffs.mu)
                    .map(|(a, m)| a * m)
                    .collect();
                let (value, r) = self.data.residual(i, &heating)?;
                Ok((value, r, phi))
            })
            .collect();
        let mut fidelity = 0.0;
        let mut residuals = Vec::new();
        let mut radiance = Vec::new();
        for item in per_illum {
            let (value, r, phi) = item?;
            fidelity += value;
            residuals.push(r);
            radiance.push(phi);
        }
        if !fidelity.is_finite() {
            return Err(QpatError::Numerical("objective is not finite".into()));
        }
        Ok(ObjectiveState {
            coeffs: coeffs.clone(),
            fidelity,
            penalty: self.lambda * penalty_value(&coeffs.mu, &self.stiffness),
            residuals,
            radiance,
            system,
        })
    }

    /// Adjoint-state gradient of the fidelity at `state`.
    pub fn gradient(&self, state: &ObjectiveState<'_>) -> Result<GradientPair> {
        let nv = self.ctx.mesh().n_vertices();
        let grid = self.ctx.grid();
        let parts: Vec<Result<GradientPair>> = (0..self.illuminations.len())
            .into_par_iter()
            .map(|i| {
                let phi = &state.radiance[i];
                let b = self.data.pullback(i, &state.residuals[i]);
                let load: Vec<f64> = b.iter().zip(&state.coeffs.mu).map(|(x, m)| x * m).collect();
                let adjoint = state.system.solve_transpose(average_transpose(&load, grid).as_slice())?;
                let (mut g_mu, g_sigma) = state.system.coefficient_sensitivity(phi.as_slice(), &adjoint);
                for ((g, a), x) in g_mu.iter_mut().zip(average(phi, grid)).zip(&b) {
                    *g += a * x;
                }
                Ok(GradientPair {
                    grad_mu: g_mu,
                    grad_sigma: g_sigma,
                })
            })
            .collect();
        let mut total = GradientPair {
            grad_mu: vec![0.0; nv],
            grad_sigma: vec![0.0; nv],
        };
        for p in parts {
            let p = p?;
            for (t, x) in total.grad_mu.iter_mut().zip(p.grad_mu) {
                *t += x;
            }
            for (t, x) in total.grad_sigma.iter_mut().zip(p.grad_sigma) {
                *t += x;
            }
        }
        if !total.grad_mu.iter().chain(&total.grad_sigma).all(|v| v.is_finite()) {
            return Err(QpatError::Numerical("gradient is not finite".into()));
        }
        Ok(total)
    }
}

impl IterationTrace {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| QpatError::io(path, e))
    }
}
