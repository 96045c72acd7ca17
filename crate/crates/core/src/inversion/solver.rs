use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataTerm, HeatingMisfit, Objective, PressureMisfit};
use crate::acoustics::{backprojection_inverse, AcousticSetup, PressureData, WaveOperator};
use crate::error::{ensure_arg, QpatError, Result};
use crate::sparse::{conjugate_gradient, CsrMatrix};
use crate::transport::{CoefficientPair, IlluminationPattern, TransportContext};

const CG_TOL: f64 = 1e-12;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// `s = 1 / (2 L)` with `L` estimated by power iteration on gradient differences.
    Lipschitz,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub step: StepRule,
    pub backtracking: bool,
    pub max_iters: usize,
    pub stagnation_tol: f64,
    pub stagnation_window: usize,
    pub reconstruct_sigma: bool,
    pub lipschitz_probes: usize,
    pub probe_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1e-7,
            step: StepRule::Lipschitz,
            backtracking: true,
            max_iters: 40,
            stagnation_tol: 1e-6,
            stagnation_window: 5,
            reconstruct_sigma: false,
            lipschitz_probes: 5,
            probe_seed: 7,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.lambda > 0.0 && self.lambda.is_finite(), "lambda must be positive");
        ensure_arg!(self.max_iters >= 1, "max_iters must be at least 1");
        if let StepRule::Fixed(s) = self.step {
            ensure_arg!(s > 0.0 && s.is_finite(), "step size must be positive");
        }
        ensure_arg!(self.stagnation_window >= 1, "stagnation window must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub fidelity: f64,
    pub penalty: f64,
    pub objective: f64,
    pub step: f64,
    pub grad_norm: f64,
    pub clip_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub stop_reason: String,
}

impl IterationTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,fidelity,penalty,objective,step,grad_norm,clip_count\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{}\n",
                r.iter, r.fidelity, r.penalty, r.objective, r.step, r.grad_norm, r.clip_count
            ));
        }
        s
    }

    /// Number of accepted proximal gradient steps.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

fn clip(v: f64, hi: f64) -> f64 {
    v.clamp(0.0, hi)
}

/// Approximate proximal map: minimize `1/2 ||mu - mu_hat||_M^2 + s_lambda R(mu)`
/// without constraints, then clip to `[0, mu_max]`. Returns the field and the
/// number of clipped nodes.
pub fn prox_step(
    mu_hat: &[f64],
    s_lambda: f64,
    mass: &CsrMatrix,
    stiffness: &CsrMatrix,
    mu_max: f64,
) -> Result<(Vec<f64>, usize)> {
    ensure_arg!(s_lambda >= 0.0, "s * lambda must be nonnegative");
    let unconstrained = if s_lambda == 0.0 {
        mu_hat.to_vec()
    } else {
        let system = mass.add_scaled(s_lambda, stiffness);
        let rhs = mass.apply(mu_hat);
        let mut x = mu_hat.to_vec();
        conjugate_gradient(&system, &rhs, &mut x, CG_TOL, 20 * mu_hat.len() + 100)?;
        x
    };
    let mut clipped = 0;
    let out = unconstrained
        .into_iter()
        .map(|v| {
            let c = clip(v, mu_max);
            if c != v {
                clipped += 1;
            }
            c
        })
        .collect();
    Ok((out, clipped))
}

/// `M^{-1} g`, the `L^2` Riesz representative of a Euclidean gradient.
fn riesz(mass: &CsrMatrix, g: &[f64]) -> Result<Vec<f64>> {
    let mut x = vec![0.0; g.len()];
    conjugate_gradient(mass, g, &mut x, CG_TOL, 20 * g.len() + 100)?;
    Ok(x)
}

fn mass_norm(mass: &CsrMatrix, v: &[f64]) -> f64 {
    mass.quadratic_form(v).max(0.0).sqrt()
}

/// Power-iteration estimate of the Lipschitz constant of the `L^2` gradient of
/// the fidelity in `mu` at `coeffs`.
fn estimate_lipschitz<D: DataTerm>(
    objective: &Objective<'_, D>,
    coeffs: &CoefficientPair,
    g0: &[f64],
    mass: &CsrMatrix,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let nv = coeffs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d: Vec<f64> = (0..nv).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = mass_norm(mass, &d);
    d.iter_mut().for_each(|v| *v /= n);
    let margin = coeffs
        .mu
        .iter()
        .map(|&m| m.min(coeffs.mu_max - m))
        .fold(f64::INFINITY, f64::min);
    let mut estimate = 0.0;
    for _ in 0..probes.max(1) {
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let eps = if margin > 0.0 { 0.5 * margin / dmax } else { 1e-6 * coeffs.mu_max / dmax };
        let mu: Vec<f64> = coeffs.mu.iter().zip(&d).map(|(m, v)| clip(m + eps * v, coeffs.mu_max)).collect();
        let shifted = coeffs.with_mu(mu)?;
        let state = objective.evaluate(&shifted)?;
        let g1 = objective.gradient(&state)?.grad_mu;
        let diff: Vec<f64> = g1.iter().zip(g0).map(|(a, b)| (a - b) / eps).collect();
        let next = riesz(mass, &diff)?;
        let norm = mass_norm(mass, &next);
        estimate = norm;
        if norm == 0.0 {
            break;
        }
        d = next.into_iter().map(|v| v / norm).collect();
    }
    Ok(estimate)
}

/// Proximal gradient iteration `mu <- prox_{s lambda R}(mu - s grad F)` with
/// projection onto `[0, mu_max]`.
pub fn run_proximal_gradient<D: DataTerm>(
    objective: &Objective<'_, D>,
    config: &SolverConfig,
    initial: &CoefficientPair,
) -> Result<(CoefficientPair, IterationTrace)> {
    config.validate()?;
    initial.validate()?;
    let mesh = objective.context().mesh();
    let mass = mesh.mass_matrix();
    let stiffness = objective.stiffness().clone();
    let lambda = objective.lambda();

    let mut state = objective.evaluate(initial)?;
    let mut grad = objective.gradient(&state)?;
    let mut step = match config.step {
        StepRule::Fixed(s) => s,
        StepRule::Lipschitz => {
            let l = estimate_lipschitz(
                objective,
                initial,
                &grad.grad_mu,
                &mass,
                config.lipschitz_probes,
                config.probe_seed,
            )?;
            if l > 0.0 && l.is_finite() {
                0.5 / l
            } else {
                1.0
            }
        }
    };

    let mut trace = IterationTrace::default();
    trace.records.push(IterationRecord {
        iter: 0,
        fidelity: state.fidelity,
        penalty: state.penalty,
        objective: state.total(),
        step: 0.0,
        grad_norm: crate::sparse::norm2(&grad.grad_mu),
        clip_count: 0,
    });
    let mut increases = 0;
    trace.stop_reason = "max_iters".into();

    for iter in 1..=config.max_iters {
        let dir_mu = riesz(&mass, &grad.grad_mu)?;
        let dir_sigma = if config.reconstruct_sigma {
            Some(riesz(&mass, &grad.grad_sigma)?)
        } else {
            None
        };
        let mut halvings = 0;
        let accepted = loop {
            let mu_hat: Vec<f64> = state.coeffs.mu.iter().zip(&dir_mu).map(|(m, d)| m - step * d).collect();
            let (mu, mut clips) = prox_step(&mu_hat, step * lambda, &mass, &stiffness, state.coeffs.mu_max)?;
            let sigma = match &dir_sigma {
                Some(ds) => state
                    .coeffs
                    .sigma
                    .iter()
                    .zip(ds)
                    .map(|(s, d)| {
                        let v = s - step * d;
                        let c = clip(v, state.coeffs.sigma_max);
                        if c != v {
                            clips += 1;
                        }
                        c
                    })
                    .collect(),
                None => state.coeffs.sigma.clone(),
            };
            let candidate = CoefficientPair::new(mu, sigma, state.coeffs.mu_max, state.coeffs.sigma_max)?;
            let next = objective.evaluate(&candidate)?;
            if !config.backtracking {
                break Some((next, clips));
            }
            let moved: Vec<f64> = candidate.mu.iter().zip(&state.coeffs.mu).map(|(a, b)| a - b).collect();
            let mut dist2 = mass.quadratic_form(&moved);
            if config.reconstruct_sigma {
                let ms: Vec<f64> = candidate.sigma.iter().zip(&state.coeffs.sigma).map(|(a, b)| a - b).collect();
                dist2 += mass.quadratic_form(&ms);
            }
            if next.total() <= state.total() - ARMIJO / step * dist2 {
                break Some((next, clips));
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                break None;
            }
            step *= 0.5;
        };
        let Some((next, clips)) = accepted else {
            trace.stop_reason = "no_descent".into();
            break;
        };
        if next.coeffs.validate().is_err() {
            return Err(QpatError::Numerical("iterate left the admissible set".into()));
        }
        if next.total() > state.total() {
            increases += 1;
            if increases >= 5 {
                return Err(QpatError::Numerical(format!(
                    "objective increased in 5 consecutive iterations with step {step:e}; use a smaller step"
                )));
            }
        } else {
            increases = 0;
        }
        state = next;
        grad = objective.gradient(&state)?;
        trace.records.push(IterationRecord {
            iter,
            fidelity: state.fidelity,
            penalty: state.penalty,
            objective: state.total(),
            step,
            grad_norm: crate::sparse::norm2(&grad.grad_mu),
            clip_count: clips,
        });
        let w = config.stagnation_window;
        if trace.records.len() > w {
            let old = trace.records[trace.records.len() - 1 - w].objective;
            let new = state.total();
            if old > 0.0 && (old - new) / old < config.stagnation_tol {
                trace.stop_reason = "stagnation".into();
                break;
            }
        }
    }
    Ok((state.coeffs, trace))
}

/// Reconstructs `mu` directly from pressure data.
pub fn run_single_stage(
    ctx: &TransportContext,
    wave: &WaveOperator,
    illuminations: &[IlluminationPattern],
    data: &[PressureData],
    config: &SolverConfig,
    initial: &CoefficientPair,
) -> Result<(CoefficientPair, IterationTrace)> {
    let misfit = PressureMisfit::new(wave, data)?;
    let objective = Objective::new(ctx, illuminations, misfit, config.lambda)?;
    run_proximal_gradient(&objective, config, initial)
}

/// Backprojects each data set to a heating estimate, then fits `H_i(mu)` to it.
pub fn run_two_stage(
    ctx: &TransportContext,
    setup: &AcousticSetup,
    illuminations: &[IlluminationPattern],
    data: &[PressureData],
    config: &SolverConfig,
    initial: &CoefficientPair,
) -> Result<(CoefficientPair, IterationTrace)> {
    let mesh = ctx.mesh();
    let targets = data
        .iter()
        .map(|v| backprojection_inverse(v, mesh, setup).map(|h| h.values))
        .collect::<Result<Vec<_>>>()?;
    let misfit = HeatingMisfit::new(mesh.mass_matrix(), targets)?;
    let objective = Objective::new(ctx, illuminations, misfit, config.lambda)?;
    run_proximal_gradient(&objective, config, initial)
}
