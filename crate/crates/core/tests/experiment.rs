use qpat::acoustics::PressureData;
use qpat::experiment::{
    acoustic_setup, add_noise, make_phantom, relative_error, simulate_data, ExperimentConfig, Inclusion, PhantomSpec,
    Shape,
};
use qpat::geometry::SpatialMesh;
use qpat::sparse::norm2;

fn small(sim_n: usize) -> ExperimentConfig {
    ExperimentConfig {
        sim_n,
        inv_n: 10,
        n_angles: 8,
        n_detectors: 24,
        n_times: 120,
        ..Default::default()
    }
}

fn disk(background: f64, mu: f64) -> PhantomSpec {
    PhantomSpec {
        background_mu: background,
        inclusions: vec![Inclusion {
            shape: Shape::Disk {
                center: [0.0, 0.0],
                radius: 0.3,
            },
            mu,
        }],
        ..PhantomSpec::standard(2.0, 0.5)
    }
}

fn rel_diff(a: &PressureData, b: &PressureData) -> f64 {
    let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(&b.values)
}

#[test]
fn disk_covers_its_area_fraction() {
    let mesh = SpatialMesh::uniform(61).unwrap();
    let c = make_phantom(&disk(0.1, 0.5), &mesh).unwrap();
    assert!(c.mu.iter().all(|&m| m == 0.5 || m == 0.1));
    let lumped = mesh.lumped_mass();
    let fraction: f64 = c.mu.iter().zip(&lumped).filter(|(&m, _)| m == 0.5).map(|(_, w)| w).sum::<f64>() / 4.0;
    let expect = std::f64::consts::PI * 0.09 / 4.0;
    assert!((fraction - expect).abs() < 0.05 * expect, "{fraction} vs {expect}");
}

#[test]
fn weak_absorption_is_nearly_linear() {
    let cfg = small(24);
    let a = simulate_data(&disk(0.01, 0.025), &cfg).unwrap();
    let b = simulate_data(&disk(0.02, 0.05), &cfg).unwrap();
    let ratio = norm2(&b.data[0].values) / norm2(&a.data[0].values);
    assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    assert!(ratio < 2.0);
}

#[test]
fn zero_absorption_gives_zero_data() {
    let cfg = small(16);
    let sim = simulate_data(&disk(0.0, 0.0), &cfg).unwrap();
    assert!(sim.data[0].values.iter().all(|&v| v == 0.0));
    assert!(sim.heating_fine.values.iter().all(|&v| v == 0.0));
}

#[test]
fn noise_has_the_requested_level() {
    let cfg = ExperimentConfig::default();
    let mut clean = acoustic_setup(&cfg).unwrap().zero_data();
    assert_eq!(clean.values.len(), 120 * 600);
    let n = clean.values.len() as f64;
    clean.values.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 / n * 40.0).sin());
    let noisy = add_noise(&clean, 0.05, 77).unwrap();
    let diff: Vec<f64> = noisy.values.iter().zip(&clean.values).map(|(a, b)| a - b).collect();
    let mean = diff.iter().sum::<f64>() / n;
    let std = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let target = 0.05 * clean.max_abs();
    assert!((std - target).abs() < 0.02 * target, "{std} vs {target}");
    assert!(mean.abs() < 0.02 * target);
    assert!(add_noise(&clean, -0.1, 1).is_err());
}

#[test]
fn truth_transfer_to_the_inversion_mesh() {
    let sim = simulate_data(&disk(0.1, 0.5), &small(20)).unwrap();
    let coarse = SpatialMesh::uniform(10).unwrap();
    assert_eq!(sim.mu_coarse.len(), coarse.n_vertices());
    assert_eq!(sim.heating_coarse.len(), coarse.n_vertices());
    // Coarse vertices are fine vertices here, so the transfer is exact.
    for (i, p) in coarse.vertices().iter().enumerate() {
        assert!((sim.mu_coarse[i] - disk(0.1, 0.5).mu_at(*p)).abs() < 1e-14);
    }
}

#[test]
fn data_converges_under_refinement() {
    let spec = disk(0.1, 0.3);
    let reference = simulate_data(&spec, &small(48)).unwrap();
    let d12 = rel_diff(&simulate_data(&spec, &small(12)).unwrap().data[0], &reference.data[0]);
    let d24 = rel_diff(&simulate_data(&spec, &small(24)).unwrap().data[0], &reference.data[0]);
    assert!(d24 < d12, "{d24} !< {d12}");
}

#[test]
fn inverse_crime_is_flagged() {
    let cfg = ExperimentConfig {
        inv_n: 10,
        ..small(10)
    };
    let sim = simulate_data(&disk(0.1, 0.3), &cfg).unwrap();
    assert!(sim.warnings.iter().any(|w| w.contains("inverse crime")));
    assert!(small(20).warnings().is_empty());
    let mesh = SpatialMesh::uniform(10).unwrap();
    assert!(relative_error(&sim.mu_coarse, &sim.truth_fine.mu, &mesh).unwrap() < 1e-14);
}
