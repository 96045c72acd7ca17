use qpat::acoustics::{AcousticSetup, DetectorGeometry, PressureData, TimeGrid, WaveOperator, DEFAULT_RAMP};
use qpat::experiment::{make_bottom_illumination, make_phantom, PhantomSpec};
use qpat::geometry::{AngularGrid, SpatialMesh};
use qpat::heating::heating;
use qpat::inversion::{
    penalty_value, prox_step, run_proximal_gradient, run_single_stage, HeatingMisfit, IterationTrace, Objective,
    PressureMisfit, SolverConfig, StepRule,
};
use qpat::sparse::norm2;
use qpat::transport::{
    assemble_transport_system, CoefficientPair, IlluminationPattern, ScatteringKernelSpec, ScatteringMatrix,
    TransportContext,
};
use qpat::QpatError;

struct Problem {
    ctx: TransportContext,
    wave: WaveOperator,
    illum: Vec<IlluminationPattern>,
    truth: CoefficientPair,
}

impl Problem {
    fn new() -> Self {
        let grid = AngularGrid::uniform(8).unwrap();
        let kmat = ScatteringMatrix::assemble(&grid, &ScatteringKernelSpec::new(0.6).unwrap());
        let ctx = TransportContext::new(SpatialMesh::uniform(10).unwrap(), grid, kmat).unwrap();
        let setup = AcousticSetup::new(
            DetectorGeometry::half_circle(30).unwrap(),
            TimeGrid::new(3.5, 100).unwrap(),
            DEFAULT_RAMP,
        )
        .unwrap();
        let wave = WaveOperator::new(ctx.mesh(), &setup).unwrap();
        let illum = vec![make_bottom_illumination(ctx.mesh(), ctx.grid()).unwrap()];
        let truth = make_phantom(&PhantomSpec::standard(3.0, 0.6), ctx.mesh()).unwrap();
        Problem {
            ctx,
            wave,
            illum,
            truth,
        }
    }

    fn heating(&self, c: &CoefficientPair) -> Vec<f64> {
        let phi = assemble_transport_system(&self.ctx, c).unwrap().solve_forward(&self.illum[0]).unwrap();
        heating(self.ctx.mesh(), c, &phi, self.ctx.grid()).unwrap().values
    }

    fn data(&self, c: &CoefficientPair) -> Vec<PressureData> {
        let h = qpat::heating::HeatingField::new(self.ctx.mesh(), self.heating(c)).unwrap();
        vec![self.wave.forward(&h).unwrap()]
    }

    fn constant(&self, mu: f64) -> CoefficientPair {
        CoefficientPair::constant(self.ctx.mesh().n_vertices(), mu, 3.0, 1.0, 3.0).unwrap()
    }
}

fn objective_non_increasing(trace: &IterationTrace) -> bool {
    trace.records.windows(2).all(|w| w[1].objective <= w[0].objective)
}

#[test]
fn fidelity_examples() {
    let p = Problem::new();
    let data = p.data(&p.truth);
    let obj = Objective::new(&p.ctx, &p.illum, PressureMisfit::new(&p.wave, &data).unwrap(), 1e-6).unwrap();
    let exact = obj.evaluate(&p.truth).unwrap();
    assert!(exact.fidelity <= 1e-20 * norm2(&data[0].values).powi(2));
    let g = obj.gradient(&exact).unwrap();
    assert!(norm2(&g.grad_mu) < 1e-10 && norm2(&g.grad_sigma) < 1e-10);

    // No absorption, no pressure: fidelity is half the weighted data norm.
    let weights = p.wave.setup().data_weights();
    let half_norm: f64 = 0.5 * data[0].values.iter().zip(&weights).map(|(v, w)| w * v * v).sum::<f64>();
    let zero = obj.evaluate(&p.constant(0.0)).unwrap();
    assert!((zero.fidelity - half_norm).abs() < 1e-12 * half_norm);

    let doubled: Vec<PressureData> = data
        .iter()
        .map(|d| PressureData::new(d.geometry.clone(), d.time, d.values.iter().map(|v| 2.0 * v).collect()).unwrap())
        .collect();
    let obj2 = Objective::new(&p.ctx, &p.illum, PressureMisfit::new(&p.wave, &doubled).unwrap(), 1e-6).unwrap();
    let four = obj2.evaluate(&p.constant(0.0)).unwrap().fidelity;
    assert!((four - 4.0 * zero.fidelity).abs() < 1e-12 * four);

    // Fidelity is recomputable from the cached residuals.
    let some = obj.evaluate(&p.constant(0.1)).unwrap();
    let recomputed: f64 = 0.5 * some.residuals[0].iter().zip(&weights).map(|(r, w)| w * r * r).sum::<f64>();
    assert!((recomputed - some.fidelity).abs() <= 1e-12 * some.fidelity);
    assert!(some.fidelity > 0.0 && some.penalty.abs() < 1e-15);
}

#[test]
fn inadmissible_coefficients_are_rejected() {
    let p = Problem::new();
    let nv = p.ctx.mesh().n_vertices();
    assert!(matches!(
        CoefficientPair::new(vec![-0.1; nv], vec![3.0; nv], 1.0, 3.0),
        Err(QpatError::Domain(_))
    ));
}

#[test]
fn penalty_examples() {
    let mesh = SpatialMesh::uniform(12).unwrap();
    let l = mesh.stiffness_matrix();
    assert!(penalty_value(&vec![0.3; mesh.n_vertices()], &l).abs() < 1e-14);
    let x: Vec<f64> = mesh.vertices().iter().map(|p| p[0]).collect();
    assert!((penalty_value(&x, &l) - 2.0).abs() < 1e-12);
}

#[test]
fn prox_smoothing_limit() {
    let mesh = SpatialMesh::uniform(10).unwrap();
    let (m, l) = (mesh.mass_matrix(), mesh.stiffness_matrix());
    let mu_hat: Vec<f64> = mesh
        .vertices()
        .iter()
        .map(|p| 0.5 + 0.4 * (3.0 * p[0]).sin() * (2.0 * p[1]).cos())
        .collect();
    let mut last = f64::INFINITY;
    for s in [0.01, 0.1, 1.0, 10.0] {
        let (mu, _) = prox_step(&mu_hat, s, &m, &l, 1.0).unwrap();
        let pen = penalty_value(&mu, &l);
        assert!(pen < last, "penalty not decreasing at s_lambda = {s}");
        last = pen;
    }
    // Large weight: mass-preserving constant.
    let mean = m.apply(&mu_hat).iter().sum::<f64>() / 4.0;
    let (mu, _) = prox_step(&mu_hat, 1e6, &m, &l, 1.0).unwrap();
    assert!(mu.iter().all(|v| (v - mean).abs() < 1e-4));
}

#[test]
fn single_stage_descends_and_stays_admissible() {
    let p = Problem::new();
    let data = p.data(&p.truth);
    let cfg = SolverConfig {
        max_iters: 8,
        ..SolverConfig::default()
    };
    let initial = p.constant(0.01);
    let (c, trace) = run_single_stage(&p.ctx, &p.wave, &p.illum, &data, &cfg, &initial).unwrap();
    assert!(c.mu.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(objective_non_increasing(&trace));
    assert!(trace.records.last().unwrap().objective < trace.records[0].objective);
    let csv = trace.to_csv();
    assert!(csv.starts_with("iter,fidelity,penalty,objective,step,grad_norm,clip_count\n"));
    assert_eq!(csv.lines().count(), trace.records.len() + 1);
}

#[test]
fn backtracking_rescues_an_oversized_step() {
    let p = Problem::new();
    let data = p.data(&p.truth);
    let cfg = SolverConfig {
        step: StepRule::Fixed(1e6),
        max_iters: 4,
        ..SolverConfig::default()
    };
    let (_, trace) = run_single_stage(&p.ctx, &p.wave, &p.illum, &data, &cfg, &p.constant(0.01)).unwrap();
    assert!(objective_non_increasing(&trace));
    assert!(trace.records[1..].iter().all(|r| r.step < 1e6));
}

#[test]
fn divergence_guard_without_backtracking() {
    let p = Problem::new();
    let data = p.data(&p.truth);
    let cfg = SolverConfig {
        step: StepRule::Fixed(1e6),
        backtracking: false,
        max_iters: 30,
        ..SolverConfig::default()
    };
    // An oversized fixed step either oscillates into the guard or stalls at the box bounds.
    match run_single_stage(&p.ctx, &p.wave, &p.illum, &data, &cfg, &p.constant(0.01)) {
        Err(QpatError::Numerical(msg)) => assert!(msg.contains("smaller step")),
        Ok((_, trace)) => assert!(trace.records.windows(2).any(|w| w[1].objective > w[0].objective)),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn already_optimal_start_does_not_move() {
    let p = Problem::new();
    let initial = p.constant(0.2);
    let data = p.data(&initial);
    let cfg = SolverConfig {
        max_iters: 3,
        ..SolverConfig::default()
    };
    let (c, trace) = run_single_stage(&p.ctx, &p.wave, &p.illum, &data, &cfg, &initial).unwrap();
    assert!(trace.records.iter().all(|r| r.fidelity <= 1e-10));
    assert!(c.mu.iter().all(|v| (v - 0.2).abs() < 1e-8));
}

#[test]
fn heating_fit_stationary_at_truth() {
    let p = Problem::new();
    let target = vec![p.heating(&p.truth)];
    let misfit = HeatingMisfit::new(p.ctx.mesh().mass_matrix(), target).unwrap();
    let obj = Objective::new(&p.ctx, &p.illum, misfit, 1e-14).unwrap();
    let cfg = SolverConfig {
        lambda: 1e-14,
        max_iters: 3,
        ..SolverConfig::default()
    };
    let (c, _) = run_proximal_gradient(&obj, &cfg, &p.truth).unwrap();
    let dev = c.mu.iter().zip(&p.truth.mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-8, "{dev}");
}

#[test]
fn bad_solver_settings_are_rejected() {
    for cfg in [
        SolverConfig {
            lambda: 0.0,
            ..SolverConfig::default()
        },
        SolverConfig {
            max_iters: 0,
            ..SolverConfig::default()
        },
        SolverConfig {
            step: StepRule::Fixed(-1.0),
            ..SolverConfig::default()
        },
    ] {
        assert!(cfg.validate().is_err());
    }
}
