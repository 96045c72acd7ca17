use std::f64::consts::PI;

use rayon::prelude::*;

use super::means::circle_weights;
use super::{AcousticSetup, PressureData};
use crate::error::{ensure_arg, QpatError, Result};
use crate::geometry::SpatialMesh;
use crate::heating::HeatingField;
use crate::sparse::CsrMatrix;

/// Largest number of stored circular-mean weights before [`WaveOperator::new`] refuses.
pub const MAX_STORED_ENTRIES: usize = 40_000_000;

/// Factor turning the formula adjoint into the full-view inverse.
pub const BACKPROJECTION_SCALE: f64 = 2.0;

/// Dense `n x n` matrix (row-major) mapping circular means sampled at `r_m = t_m`
/// to `d/dt int_0^t r G(r) / sqrt(t^2 - r^2) dr` at `t_n`, with `G` piecewise linear.
pub fn abel_derivative_matrix(n: usize, dt: f64) -> Vec<f64> {
    let mut abel = vec![0.0; n * n];
    for row in 1..n {
        let t = row as f64 * dt;
        let t2 = t * t;
        let root = |r: f64| (t2 - r * r).max(0.0).sqrt();
        let prim = |r: f64| 0.5 * t2 * (r / t).min(1.0).asin() - 0.5 * r * root(r);
        for i in 0..row {
            let (ra, rb) = (i as f64 * dt, (i + 1) as f64 * dt);
            let j0 = root(ra) - root(rb);
            let j1 = prim(rb) - prim(ra);
            abel[row * n + i] += (rb * j0 - j1) / dt;
            abel[row * n + i + 1] += (j1 - ra * j0) / dt;
        }
    }
    let mut out = vec![0.0; n * n];
    let h = 0.5 / dt;
    let mut combine = |row: usize, coeffs: &[(usize, f64)]| {
        for &(src, c) in coeffs {
            for k in 0..n {
                out[row * n + k] += c * h * abel[src * n + k];
            }
        }
    };
    combine(0, &[(0, -3.0), (1, 4.0), (2, -1.0)]);
    for row in 1..n - 1 {
        combine(row, &[(row + 1, 1.0), (row - 1, -1.0)]);
    }
    combine(n - 1, &[(n - 1, 3.0), (n - 2, -4.0), (n - 3, 1.0)]);
    out
}

/// Second-order time derivative of a sampled trace.
fn time_derivative(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    let h = 0.5 / dt;
    let mut d = vec![0.0; n];
    d[0] = h * (-3.0 * v[0] + 4.0 * v[1] - v[2]);
    for m in 1..n - 1 {
        d[m] = h * (v[m + 1] - v[m - 1]);
    }
    d[n - 1] = h * (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]);
    d
}

/// Circular-mean rows of one detector: `n_times x n_vertices`.
fn detector_rows(mesh: &SpatialMesh, setup: &AcousticSetup, j: usize) -> CsrMatrix {
    let y = setup.geometry.point(j);
    let nt = setup.time.len();
    let mut trip = Vec::new();
    let mut scratch = Vec::new();
    let mut w = Vec::new();
    for m in 0..nt {
        w.clear();
        circle_weights(mesh, y, setup.time.time(m), &mut scratch, &mut w);
        trip.extend(w.iter().map(|&(v, c)| (m, v, c)));
    }
    CsrMatrix::from_triplets(nt, mesh.n_vertices(), &trip)
}

fn dense_mul(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    a.chunks_exact(n)
        .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

fn dense_mul_transpose(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (row, &xi) in a.chunks_exact(n).zip(x) {
        if xi != 0.0 {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p * xi;
            }
        }
    }
    out
}

/// Discrete wave operator `h -> w . D A M h` with its exact transpose.
///
/// Rows are stored per detector when they fit under [`MAX_STORED_ENTRIES`];
/// [`WaveOperator::matrix_free`] rebuilds them on every application instead.
/// Applications are parallel over detectors and deterministic.
#[derive(Debug, Clone)]
pub struct WaveOperator {
    mesh: SpatialMesh,
    setup: AcousticSetup,
    da: Vec<f64>,
    cutoff: Vec<f64>,
    rows: Option<Vec<CsrMatrix>>,
}

impl WaveOperator {
    pub fn new(mesh: &SpatialMesh, setup: &AcousticSetup) -> Result<Self> {
        let mut op = Self::matrix_free(mesh, setup);
        let mut rows = Vec::with_capacity(setup.geometry.len());
        let mut total = 0usize;
        for j in 0..setup.geometry.len() {
            let r = detector_rows(mesh, setup, j);
            total += r.nnz();
            if total > MAX_STORED_ENTRIES {
                return Err(QpatError::Config(format!(
                    "wave operator needs more than {MAX_STORED_ENTRIES} stored weights; use the matrix-free operator"
                )));
            }
            rows.push(r);
        }
        op.rows = Some(rows);
        Ok(op)
    }

    pub fn matrix_free(mesh: &SpatialMesh, setup: &AcousticSetup) -> Self {
        let nt = setup.time.len();
        WaveOperator {
            mesh: mesh.clone(),
            setup: setup.clone(),
            da: abel_derivative_matrix(nt, setup.time.dt()),
            cutoff: setup.cutoff.sample(&setup.time),
            rows: None,
        }
    }

    pub fn setup(&self) -> &AcousticSetup {
        &self.setup
    }

    pub fn mesh(&self) -> &SpatialMesh {
        &self.mesh
    }

    pub fn nrows(&self) -> usize {
        self.setup.n_samples()
    }

    pub fn ncols(&self) -> usize {
        self.mesh.n_vertices()
    }

    pub fn stored_entries(&self) -> usize {
        self.rows.as_ref().map_or(0, |r| r.iter().map(|m| m.nnz()).sum())
    }

    fn with_rows<T: Send>(&self, f: impl Fn(usize, &CsrMatrix) -> T + Sync) -> Vec<T> {
        match &self.rows {
            Some(rows) => rows.par_iter().enumerate().map(|(j, r)| f(j, r)).collect(),
            None => (0..self.setup.geometry.len())
                .into_par_iter()
                .map(|j| f(j, &detector_rows(&self.mesh, &self.setup, j)))
                .collect(),
        }
    }

    /// Row-major `n_detectors x n_times` samples of `W h`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let nt = self.setup.time.len();
        let traces = self.with_rows(|_, rows| {
            let means = rows.apply(h);
            let p = dense_mul(&self.da, nt, &means);
            p.iter().zip(&self.cutoff).map(|(a, w)| a * w).collect::<Vec<f64>>()
        });
        traces.concat()
    }

    /// `W^T v` in the Euclidean pairing.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let nt = self.setup.time.len();
        let parts = self.with_rows(|j, rows| {
            let wv: Vec<f64> = v[j * nt..(j + 1) * nt].iter().zip(&self.cutoff).map(|(a, w)| a * w).collect();
            let u = dense_mul_transpose(&self.da, nt, &wv);
            let mut out = vec![0.0; rows.ncols()];
            rows.mul_transpose_vec_add(1.0, &u, &mut out);
            out
        });
        let mut out = vec![0.0; self.ncols()];
        for p in parts {
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        out
    }

    pub fn forward(&self, h: &HeatingField) -> Result<PressureData> {
        ensure_arg!(h.mesh_hash == self.mesh.mesh_hash(), "heating field belongs to a different mesh");
        PressureData::new(self.setup.geometry.clone(), self.setup.time, self.apply(&h.values))
    }
}

/// `W h` sampled on the setup grid. Same arithmetic as [`WaveOperator::apply`].
pub fn wave_forward(mesh: &SpatialMesh, h: &HeatingField, setup: &AcousticSetup) -> Result<PressureData> {
    WaveOperator::matrix_free(mesh, setup).forward(h)
}

/// Continuous adjoint of the wave operator evaluated at the mesh vertices:
/// `-(1/2pi) int_arc int_rho^T d/dt(w v)(y, t) / sqrt(t^2 - rho^2) dt dS(y)`, `rho = |x - y|`.
pub fn wave_adjoint_formula(v: &PressureData, mesh: &SpatialMesh, setup: &AcousticSetup) -> Result<Vec<f64>> {
    ensure_arg!(
        v.geometry == setup.geometry && v.time == setup.time,
        "pressure data do not match the acoustic setup"
    );
    let dt = setup.time.dt();
    let nt = setup.time.len();
    let w = setup.cutoff.sample(&setup.time);
    let filtered: Vec<Vec<f64>> = (0..setup.geometry.len())
        .map(|j| {
            let wv: Vec<f64> = v.trace(j).iter().zip(&w).map(|(a, b)| a * b).collect();
            time_derivative(&wv, dt)
        })
        .collect();
    // Last sample with nonzero filtered data; nothing beyond it contributes.
    let last = filtered
        .iter()
        .filter_map(|q| q.iter().rposition(|&x| x != 0.0))
        .max()
        .map_or(0, |m| (m + 1).min(nt - 1));
    let points = setup.geometry.points();
    let weight = setup.geometry.weight();
    let out = mesh
        .vertices()
        .par_iter()
        .map(|x| {
            let mut acc = 0.0;
            for (y, q) in points.iter().zip(&filtered) {
                let rho = (x[0] - y[0]).hypot(x[1] - y[1]);
                acc += abel_tail(q, dt, rho, last);
            }
            -weight * acc / (2.0 * PI)
        })
        .collect();
    Ok(out)
}

/// `int_rho^{t_last} q(t) / sqrt(t^2 - rho^2) dt` for piecewise-linear `q`.
fn abel_tail(q: &[f64], dt: f64, rho: f64, last: usize) -> f64 {
    let first = (rho / dt).floor() as usize;
    if first >= last {
        return 0.0;
    }
    let f = |t: f64| -> (f64, f64) {
        if t <= rho {
            (0.0, 0.0)
        } else {
            let s = (t * t - rho * rho).sqrt();
            (((t + s) / rho).ln(), s)
        }
    };
    let mut acc = 0.0;
    let mut prev = f(first as f64 * dt);
    for i in first..last {
        let (ta, tb) = (i as f64 * dt, (i + 1) as f64 * dt);
        let next = f(tb);
        let d0 = next.0 - prev.0;
        let d1 = next.1 - prev.1;
        acc += (q[i] * (tb * d0 - d1) + q[i + 1] * (d1 - ta * d0)) / dt;
        prev = next;
    }
    acc
}

/// Angle subtended by the detector arc as seen from `x`, by the detector quadrature.
pub fn visible_angle(setup: &AcousticSetup, x: [f64; 2]) -> f64 {
    let g = &setup.geometry;
    let r = g.radius();
    (0..g.len())
        .map(|j| {
            let y = g.point(j);
            let d = [y[0] - x[0], y[1] - x[1]];
            // Outward normal of the circle at y is y / r.
            (y[0] * d[0] + y[1] * d[1]) / (r * (d[0] * d[0] + d[1] * d[1]))
        })
        .sum::<f64>()
        * g.weight()
}

/// Derivative-filtered backprojection estimate of the initial pressure.
///
/// The formula adjoint is scaled by [`BACKPROJECTION_SCALE`] and, for partial
/// arcs, by `2 pi / visible_angle(x)` so that smooth parts keep their amplitude.
pub fn backprojection_inverse(v: &PressureData, mesh: &SpatialMesh, setup: &AcousticSetup) -> Result<HeatingField> {
    let adj = wave_adjoint_formula(v, mesh, setup)?;
    let full = setup.geometry.is_full_circle();
    let values = adj
        .into_iter()
        .zip(mesh.vertices())
        .map(|(a, &x)| {
            let coverage = if full { 1.0 } else { 2.0 * PI / visible_angle(setup, x) };
            BACKPROJECTION_SCALE * coverage * a
        })
        .collect();
    HeatingField::new(mesh, values)
}
