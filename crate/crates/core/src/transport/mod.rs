//! Stabilized P1 x discrete-ordinates finite elements for the stationary
//! radiative transfer equation
//!
//! ```text
//! theta . grad Phi + (mu + sigma) Phi - sigma K Phi = q   in Omega x S^1
//! Phi = f                                                 on Gamma_-
//! ```
//!
//! Space uses P1 Lagrange elements on [`SpatialMesh`]; angle uses periodic P1
//! elements with trapezoidal quadrature, which collapses to collocation at the
//! grid directions. Test functions carry the streamline-diffusion term
//! `delta theta . grad psi_j`, with `delta = 3h/100` on triangles where the
//! total attenuation drops below one. Inflow data enter weakly through the
//! boundary term on `Gamma_-`; the outflow term stays on the left-hand side.
//!
//! Unknowns are stored angle-major: entry `(v, k)` lives at `k * n_vertices + v`.
//! The assembled operator is kept in block form (one spatial matrix per
//! direction plus the per-direction scattering mass), so products with the
//! matrix and with its exact transpose never materialize the dense angular
//! coupling. Solves use restarted GMRES preconditioned by sparse LU factors of
//! the per-direction diagonal blocks; the factors are computed once per
//! coefficient pair and reused for forward, adjoint and derivative solves.
//! A [`TransportSystem`] is immutable after assembly and may be shared between
//! threads for concurrent solves.

pub mod kernel;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::MatMut;

pub use kernel::{hg_kernel, KernelForm, ScatteringKernelSpec, ScatteringMatrix};

use crate::error::{ensure_arg, QpatError, Result};
use crate::geometry::{AngularGrid, BoundaryClassification, SpatialMesh};
use crate::sparse::{gmres, CsrMatrix, GmresOptions, KrylovStats};

/// Streamline-diffusion parameter as a multiple of the mesh size.
pub const STABILIZATION_FACTOR: f64 = 3.0 / 100.0;
/// Attenuation threshold below which stabilization switches on.
pub const STABILIZATION_THRESHOLD: f64 = 1.0;

/// Nodal absorption and scattering fields with their admissibility bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPair {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mu_max: f64,
    pub sigma_max: f64,
}

impl CoefficientPair {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, mu_max: f64, sigma_max: f64) -> Result<Self> {
        let c = CoefficientPair {
            mu,
            sigma,
            mu_max,
            sigma_max,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn constant(n_vertices: usize, mu: f64, sigma: f64, mu_max: f64, sigma_max: f64) -> Result<Self> {
        Self::new(vec![mu; n_vertices], vec![sigma; n_vertices], mu_max, sigma_max)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Checks `0 <= mu <= mu_max`, `0 <= sigma <= sigma_max` nodewise.
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_max > 0.0 && self.sigma_max > 0.0) {
            return Err(QpatError::Domain(format!(
                "bounds must be positive (mu_max = {}, sigma_max = {})",
                self.mu_max, self.sigma_max
            )));
        }
        if self.mu.len() != self.sigma.len() {
            return Err(QpatError::Domain("mu and sigma have different lengths".into()));
        }
        if let Some((i, v)) = self
            .mu
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= self.mu_max))
        {
            return Err(QpatError::Domain(format!(
                "mu[{i}] = {v} outside [0, {}]",
                self.mu_max
            )));
        }
        if let Some((i, v)) = self
            .sigma
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= self.sigma_max))
        {
            return Err(QpatError::Domain(format!(
                "sigma[{i}] = {v} outside [0, {}]",
                self.sigma_max
            )));
        }
        Ok(())
    }

    pub fn with_mu(&self, mu: Vec<f64>) -> Result<Self> {
        Self::new(mu, self.sigma.clone(), self.mu_max, self.sigma_max)
    }
}

/// Nodal coefficients of a function on `Omega x S^1`, angle-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField {
    n_vertices: usize,
    n_angles: usize,
    values: Vec<f64>,
}

impl RadianceField {
    pub fn zeros(n_vertices: usize, n_angles: usize) -> Self {
        RadianceField {
            n_vertices,
            n_angles,
            values: vec![0.0; n_vertices * n_angles],
        }
    }

    pub fn from_vec(n_vertices: usize, n_angles: usize, values: Vec<f64>) -> Result<Self> {
        ensure_arg!(
            values.len() == n_vertices * n_angles,
            "radiance vector has {} entries, expected {}",
            values.len(),
            n_vertices * n_angles
        );
        Ok(RadianceField {
            n_vertices,
            n_angles,
            values,
        })
    }

    /// Fills entry `(v, k)` with `f(v, k)`.
    pub fn from_fn(n_vertices: usize, n_angles: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_vertices * n_angles);
        for k in 0..n_angles {
            for v in 0..n_vertices {
                values.push(f(v, k));
            }
        }
        RadianceField {
            n_vertices,
            n_angles,
            values,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn get(&self, v: usize, k: usize) -> f64 {
        self.values[k * self.n_vertices + v]
    }

    pub fn direction(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_vertices..(k + 1) * self.n_vertices]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Boundary source `f` on inflow pairs and optional interior source `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationPattern {
    /// Angle-major nodal values; only entries belonging to inflow pairs are read.
    pub inflow: RadianceField,
    pub source: Option<RadianceField>,
}

impl IlluminationPattern {
    pub fn new(inflow: RadianceField, source: Option<RadianceField>) -> Result<Self> {
        ensure_arg!(
            inflow.as_slice().iter().all(|&v| v >= 0.0 && v.is_finite()),
            "inflow data must be finite and nonnegative"
        );
        Ok(IlluminationPattern { inflow, source })
    }

    /// `f = value` on every inflow pair.
    pub fn uniform(mesh: &SpatialMesh, grid: &AngularGrid, value: f64) -> Result<Self> {
        let bc = BoundaryClassification::new(mesh, grid);
        let mut f = RadianceField::zeros(mesh.n_vertices(), grid.len());
        for p in bc.inflow() {
            f.values[p.angle * mesh.n_vertices() + p.vertex] = value;
        }
        Self::new(f, None)
    }
}

/// Exact integrals of products of barycentric coordinates over a triangle of unit area:
/// `int lambda_a lambda_i lambda_j = 2 |T| a! b! c! / (a+b+c+2)!`.
fn triple_products() -> [[[f64; 3]; 3]; 3] {
    let mut out = [[[0.0; 3]; 3]; 3];
    for a in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut count = [0usize; 3];
                count[a] += 1;
                count[i] += 1;
                count[j] += 1;
                let fact = |n: usize| (1..=n).product::<usize>() as f64;
                out[a][i][j] = 2.0 * count.iter().map(|&c| fact(c)).product::<f64>() / fact(5);
            }
        }
    }
    out
}

fn pair_products() -> [[f64; 3]; 3] {
    let mut out = [[1.0 / 12.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = 1.0 / 6.0;
    }
    out
}

/// Geometry, angular discretization and sparsity shared by every assembled system.
#[derive(Debug)]
pub struct TransportContext {
    mesh: SpatialMesh,
    grid: AngularGrid,
    kmat: ScatteringMatrix,
    boundary: BoundaryClassification,
    pattern: CsrMatrix,
    // For triangle t, value-array slots of the 3x3 local block, [test][trial].
    slots: Vec<[[usize; 3]; 3]>,
    symbolic: SymbolicLu<usize>,
    options: GmresOptions,
    i3: [[[f64; 3]; 3]; 3],
    i2: [[f64; 3]; 3],
}

impl TransportContext {
    pub fn new(mesh: SpatialMesh, grid: AngularGrid, kmat: ScatteringMatrix) -> Result<Self> {
        ensure_arg!(
            kmat.len() == grid.len(),
            "scattering matrix has {} directions, grid has {}",
            kmat.len(),
            grid.len()
        );
        let boundary = BoundaryClassification::new(&mesh, &grid);
        let nv = mesh.n_vertices();
        let mut trip = Vec::with_capacity(9 * mesh.n_triangles());
        for tri in mesh.triangles() {
            for &r in tri {
                for &c in tri {
                    trip.push((r, c, 0.0));
                }
            }
        }
        let pattern = CsrMatrix::from_triplets(nv, nv, &trip);
        let slots = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut s = [[0usize; 3]; 3];
                for (j, &r) in tri.iter().enumerate() {
                    for (i, &c) in tri.iter().enumerate() {
                        s[j][i] = pattern.find(r, c).expect("pattern covers element couplings");
                    }
                }
                s
            })
            .collect();
        let symbolic_triplets: Vec<Triplet<usize, usize, f64>> = pattern
            .triplets()
            .map(|(r, c, _)| Triplet::new(r, c, 1.0))
            .collect();
        let probe = SparseColMat::<usize, f64>::try_new_from_triplets(nv, nv, &symbolic_triplets)
            .map_err(|e| QpatError::Assembly(format!("sparsity pattern: {e:?}")))?;
        let symbolic = SymbolicLu::try_new(probe.symbolic())
            .map_err(|e| QpatError::Assembly(format!("symbolic LU: {e:?}")))?;
        Ok(TransportContext {
            mesh,
            grid,
            kmat,
            boundary,
            pattern,
            slots,
            symbolic,
            options: GmresOptions::default(),
            i3: triple_products(),
            i2: pair_products(),
        })
    }

    pub fn with_solver_options(mut self, options: GmresOptions) -> Self {
        self.options = options;
        self
    }

    pub fn mesh(&self) -> &SpatialMesh {
        &self.mesh
    }

    pub fn grid(&self) -> &AngularGrid {
        &self.grid
    }

    pub fn kmat(&self) -> &ScatteringMatrix {
        &self.kmat
    }

    pub fn boundary(&self) -> &BoundaryClassification {
        &self.boundary
    }

    pub fn n_unknowns(&self) -> usize {
        self.mesh.n_vertices() * self.grid.len()
    }

    /// Applies the angular scattering operator at every node: `(K u)(x, theta_k)`.
    pub fn scatter(&self, u: &[f64]) -> Vec<f64> {
        let nv = self.mesh.n_vertices();
        let na = self.grid.len();
        let w = self.grid.weight();
        let mut out = vec![0.0; nv * na];
        for k in 0..na {
            let dst = &mut out[k * nv..(k + 1) * nv];
            for l in 0..na {
                let c = self.kmat.get(k, l) * w;
                if c == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(&u[l * nv..(l + 1) * nv]) {
                    *d += c * s;
                }
            }
        }
        out
    }

    /// Transpose of [`Self::scatter`] in the Euclidean pairing.
    fn scatter_transpose(&self, u: &[f64]) -> Vec<f64> {
        let nv = self.mesh.n_vertices();
        let na = self.grid.len();
        let w = self.grid.weight();
        let mut out = vec![0.0; nv * na];
        for l in 0..na {
            let dst = &mut out[l * nv..(l + 1) * nv];
            for k in 0..na {
                let c = self.kmat.get(k, l) * w;
                if c == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(&u[k * nv..(k + 1) * nv]) {
                    *d += c * s;
                }
            }
        }
        out
    }

    fn stabilization(&self, total: &[f64]) -> Vec<f64> {
        let delta = STABILIZATION_FACTOR * self.mesh.h();
        self.mesh
            .triangles()
            .iter()
            .map(|tri| {
                if tri.iter().any(|&v| total[v] < STABILIZATION_THRESHOLD) {
                    delta
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `D(c) u` where `D(c)` is the reaction block with nodal coefficient `c`
    /// and stabilized test functions:
    /// `out[(j,k)] = w_k sum_i u[(i,k)] int c psi_i (psi_j + delta theta_k . grad psi_j)`.
    fn reaction_product(&self, delta: &[f64], coef: &[f64], u: &[f64]) -> Vec<f64> {
        let mesh = &self.mesh;
        let nv = mesh.n_vertices();
        let w = self.grid.weight();
        let mut out = vec![0.0; u.len()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let c = tri.map(|v| coef[v]);
            if c.iter().all(|&x| x == 0.0) {
                continue;
            }
            let area = mesh.area(t);
            let g = mesh.gradients(t);
            let local = self.reaction_local(area, c);
            let lumped = self.reaction_first_moment(area, c);
            for (k, theta) in self.grid.directions().iter().enumerate() {
                let beta = [0, 1, 2].map(|a| theta[0] * g[a][0] + theta[1] * g[a][1]);
                let base = k * nv;
                let uk = tri.map(|v| u[base + v]);
                for j in 0..3 {
                    let mut acc = 0.0;
                    for i in 0..3 {
                        acc += (local[j][i] + delta[t] * beta[j] * lumped[i]) * uk[i];
                    }
                    out[base + tri[j]] += w * acc;
                }
            }
        }
        out
    }

    /// Gradient of `<z, D(c) u>` with respect to the nodal values of `c`.
    fn reaction_sensitivity(&self, delta: &[f64], u: &[f64], z: &[f64]) -> Vec<f64> {
        let mesh = &self.mesh;
        let nv = mesh.n_vertices();
        let w = self.grid.weight();
        let mut out = vec![0.0; nv];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let area = mesh.area(t);
            let g = mesh.gradients(t);
            let mut acc = [0.0; 3];
            for (k, theta) in self.grid.directions().iter().enumerate() {
                let beta = [0, 1, 2].map(|a| theta[0] * g[a][0] + theta[1] * g[a][1]);
                let base = k * nv;
                let uk = tri.map(|v| u[base + v]);
                let zk = tri.map(|v| z[base + v]);
                for (a, acc_a) in acc.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (i, ui) in uk.iter().enumerate() {
                        let mut inner = 0.0;
                        for j in 0..3 {
                            inner += zk[j] * (self.i3[a][i][j] + delta[t] * beta[j] * self.i2[a][i]);
                        }
                        s += ui * inner;
                    }
                    *acc_a += s;
                }
            }
            for a in 0..3 {
                out[tri[a]] += w * area * acc[a];
            }
        }
        out
    }

    /// `int c lambda_i lambda_j` for nodal `c`, `[test j][trial i]`.
    fn reaction_local(&self, area: f64, c: [f64; 3]) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (j, row) in m.iter_mut().enumerate() {
            for (i, entry) in row.iter_mut().enumerate() {
                *entry = area * (0..3).map(|a| c[a] * self.i3[a][i][j]).sum::<f64>();
            }
        }
        m
    }

    /// `int c lambda_i` for nodal `c`.
    fn reaction_first_moment(&self, area: f64, c: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| area * (0..3).map(|a| c[a] * self.i2[a][i]).sum::<f64>())
    }
}

/// Assembled stabilized system `M c = b` for one coefficient pair.
pub struct TransportSystem<'a> {
    ctx: &'a TransportContext,
    coeffs: CoefficientPair,
    delta: Vec<f64>,
    /// Per direction: `w_k (transport + reaction(mu + sigma) + outflow)`.
    streaming: Vec<CsrMatrix>,
    /// Per direction: stabilized mass with coefficient sigma, without angular weights.
    scattering: Vec<CsrMatrix>,
    factors: Vec<Lu<usize, f64>>,
}

impl std::fmt::Debug for TransportSystem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransportSystem")
            .field("n_unknowns", &self.ctx.n_unknowns())
            .field("stabilized_triangles", &self.delta.iter().filter(|&&d| d > 0.0).count())
            .finish()
    }
}

/// Builds `M^(h)` for `coeffs` and factors its per-direction diagonal blocks.
pub fn assemble_transport_system<'a>(
    ctx: &'a TransportContext,
    coeffs: &CoefficientPair,
) -> Result<TransportSystem<'a>> {
    coeffs.validate()?;
    let mesh = ctx.mesh();
    let nv = mesh.n_vertices();
    if coeffs.len() != nv {
        return Err(QpatError::Domain(format!(
            "coefficients have {} nodes, mesh has {nv}",
            coeffs.len()
        )));
    }
    let total: Vec<f64> = coeffs.mu.iter().zip(&coeffs.sigma).map(|(m, s)| m + s).collect();
    let delta = ctx.stabilization(&total);
    let w = ctx.grid.weight();
    let na = ctx.grid.len();

    let mut streaming = Vec::with_capacity(na);
    let mut scattering = Vec::with_capacity(na);
    for (k, theta) in ctx.grid.directions().iter().enumerate() {
        let mut a_vals = vec![0.0; ctx.pattern.nnz()];
        let mut s_vals = vec![0.0; ctx.pattern.nnz()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let area = mesh.area(t);
            let g = mesh.gradients(t);
            let beta = [0, 1, 2].map(|a| theta[0] * g[a][0] + theta[1] * g[a][1]);
            let ct = tri.map(|v| total[v]);
            let cs = tri.map(|v| coeffs.sigma[v]);
            let rt = ctx.reaction_local(area, ct);
            let rt1 = ctx.reaction_first_moment(area, ct);
            let rs = ctx.reaction_local(area, cs);
            let rs1 = ctx.reaction_first_moment(area, cs);
            let d = delta[t];
            let slots = &ctx.slots[t];
            for j in 0..3 {
                for i in 0..3 {
                    let transport = d * beta[i] * beta[j] * area - beta[j] * area / 3.0;
                    let reaction = rt[j][i] + d * beta[j] * rt1[i];
                    a_vals[slots[j][i]] += w * (transport + reaction);
                    s_vals[slots[j][i]] += rs[j][i] + d * beta[j] * rs1[i];
                }
            }
        }
        for p in ctx.boundary.outflow().filter(|p| p.angle == k) {
            let slot = ctx.pattern.find(p.vertex, p.vertex).expect("diagonal present");
            a_vals[slot] += w * p.weight;
        }
        streaming.push(ctx.pattern.with_values(a_vals));
        scattering.push(ctx.pattern.with_values(s_vals));
    }

    let mut factors = Vec::with_capacity(na);
    for k in 0..na {
        let self_scatter = w * ctx.kmat.get(k, k) * w;
        let block = streaming[k].add_scaled(-self_scatter, &scattering[k]);
        let trip: Vec<Triplet<usize, usize, f64>> =
            block.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(nv, nv, &trip)
            .map_err(|e| QpatError::Assembly(format!("block {k}: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(ctx.symbolic.clone(), mat.as_ref())
            .map_err(|e| QpatError::Assembly(format!("LU of direction block {k} failed: {e:?}")))?;
        factors.push(lu);
    }

    Ok(TransportSystem {
        ctx,
        coeffs: coeffs.clone(),
        delta,
        streaming,
        scattering,
        factors,
    })
}

impl<'a> TransportSystem<'a> {
    pub fn context(&self) -> &'a TransportContext {
        self.ctx
    }

    pub fn coefficients(&self) -> &CoefficientPair {
        &self.coeffs
    }

    /// Streamline-diffusion parameter of triangle `t` for direction `k`.
    pub fn delta(&self, t: usize, _k: usize) -> f64 {
        self.delta[t]
    }

    pub fn delta_field(&self) -> &[f64] {
        &self.delta
    }

    pub fn n_unknowns(&self) -> usize {
        self.ctx.n_unknowns()
    }

    /// `y = M x`
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nv = self.ctx.mesh.n_vertices();
        let w = self.ctx.grid.weight();
        let mixed = self.ctx.scatter(x);
        for k in 0..self.ctx.grid.len() {
            let r = k * nv..(k + 1) * nv;
            self.streaming[k].mul_vec(&x[r.clone()], &mut y[r.clone()]);
            self.scattering[k].mul_vec_add(-w, &mixed[r.clone()], &mut y[r]);
        }
    }

    /// `y = M^T x`
    pub fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        let nv = self.ctx.mesh.n_vertices();
        let w = self.ctx.grid.weight();
        let mut pulled = vec![0.0; x.len()];
        for k in 0..self.ctx.grid.len() {
            let r = k * nv..(k + 1) * nv;
            self.scattering[k].mul_transpose_vec_add(-w, &x[r.clone()], &mut pulled[r]);
        }
        let mixed = self.ctx.scatter_transpose(&pulled);
        y.copy_from_slice(&mixed);
        for k in 0..self.ctx.grid.len() {
            let r = k * nv..(k + 1) * nv;
            self.streaming[k].mul_transpose_vec_add(1.0, &x[r.clone()], &mut y[r]);
        }
    }

    fn precondition(&self, x: &[f64], y: &mut [f64], transpose: bool) {
        let nv = self.ctx.mesh.n_vertices();
        y.copy_from_slice(x);
        for (k, lu) in self.factors.iter().enumerate() {
            let block = MatMut::from_column_major_slice_mut(&mut y[k * nv..(k + 1) * nv], nv, 1);
            if transpose {
                lu.solve_transpose_in_place(block);
            } else {
                lu.solve_in_place(block);
            }
        }
    }

    fn krylov(&self, rhs: &[f64], transpose: bool) -> Result<(Vec<f64>, KrylovStats)> {
        let n = self.n_unknowns();
        ensure_arg!(rhs.len() == n, "right-hand side has {} entries, expected {n}", rhs.len());
        let mut x = vec![0.0; n];
        let outcome = if transpose {
            gmres(
                |u, v| self.apply_transpose(u, v),
                |u, v| self.precondition(u, v, true),
                rhs,
                &mut x,
                self.ctx.options,
            )
        } else {
            gmres(
                |u, v| self.apply(u, v),
                |u, v| self.precondition(u, v, false),
                rhs,
                &mut x,
                self.ctx.options,
            )
        };
        match outcome {
            Ok(stats) => Ok((x, stats)),
            Err(stats) => Err(QpatError::Solver {
                context: if transpose { "adjoint transport" } else { "transport" }.into(),
                iterations: stats.iterations,
                residual: stats.relative_residual,
            }),
        }
    }

    /// Solves `M x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.krylov(rhs, false).map(|(x, _)| x)
    }

    /// Solves `M^T x = rhs`.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.krylov(rhs, true).map(|(x, _)| x)
    }

    /// Like [`Self::solve`] but also reports the iteration count and residual.
    pub fn solve_with_stats(&self, rhs: &[f64]) -> Result<(Vec<f64>, KrylovStats)> {
        self.krylov(rhs, false)
    }

    /// Right-hand side from inflow data on `Gamma_-` plus the stabilized load of `q`.
    pub fn load(&self, illum: &IlluminationPattern) -> Result<Vec<f64>> {
        let nv = self.ctx.mesh.n_vertices();
        let na = self.ctx.grid.len();
        ensure_arg!(
            illum.inflow.n_vertices() == nv && illum.inflow.n_angles() == na,
            "illumination does not match the discretization"
        );
        let w = self.ctx.grid.weight();
        let mut b = match &illum.source {
            Some(q) => self.source_load(q)?,
            None => vec![0.0; nv * na],
        };
        for p in self.ctx.boundary.inflow() {
            let idx = p.angle * nv + p.vertex;
            b[idx] += w * p.weight * illum.inflow.as_slice()[idx];
        }
        Ok(b)
    }

    /// Stabilized load vector of an interior source field.
    pub fn source_load(&self, q: &RadianceField) -> Result<Vec<f64>> {
        ensure_arg!(
            q.as_slice().len() == self.n_unknowns(),
            "source field does not match the discretization"
        );
        let ones = vec![1.0; self.ctx.mesh.n_vertices()];
        Ok(self.ctx.reaction_product(&self.delta, &ones, q.as_slice()))
    }

    /// Discrete `T(mu, sigma) f`.
    pub fn solve_forward(&self, illum: &IlluminationPattern) -> Result<RadianceField> {
        let b = self.load(illum)?;
        let x = self.solve(&b)?;
        self.field(x)
    }

    /// Solves the transposed system with the stabilized load of `source`.
    pub fn solve_adjoint(&self, source: &RadianceField) -> Result<RadianceField> {
        let r = self.source_load(source)?;
        let x = self.solve_transpose(&r)?;
        self.field(x)
    }

    /// `(dM/d(mu, sigma))[h_mu, h_sigma] u`.
    pub fn coefficient_derivative_product(&self, h_mu: &[f64], h_sigma: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = self.ctx.reaction_product(&self.delta, h_mu, u);
        if h_sigma.iter().any(|&v| v != 0.0) {
            let ku = self.ctx.scatter(u);
            let diff: Vec<f64> = u.iter().zip(&ku).map(|(a, b)| a - b).collect();
            let s = self.ctx.reaction_product(&self.delta, h_sigma, &diff);
            for (o, v) in out.iter_mut().zip(s) {
                *o += v;
            }
        }
        out
    }

    /// Directional derivative `Psi` of `Phi = T(mu, sigma)` along `(h_mu, h_sigma)`:
    /// same system, zero inflow, right-hand side `-(h_mu + h_sigma - h_sigma K) Phi`.
    pub fn directional_derivative(
        &self,
        phi: &RadianceField,
        h_mu: &[f64],
        h_sigma: &[f64],
    ) -> Result<RadianceField> {
        let nv = self.ctx.mesh.n_vertices();
        ensure_arg!(h_mu.len() == nv && h_sigma.len() == nv, "perturbation length mismatch");
        let mut rhs = self.coefficient_derivative_product(h_mu, h_sigma, phi.as_slice());
        rhs.iter_mut().for_each(|v| *v = -*v);
        let x = self.solve(&rhs)?;
        self.field(x)
    }

    /// Gradients of `-<z, M(mu, sigma) u>` with respect to nodal `mu` and `sigma`.
    ///
    /// With `u = Phi` and `z` the adjoint solution this is the transport part of the
    /// objective gradient.
    pub fn coefficient_sensitivity(&self, u: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g_mu = self.ctx.reaction_sensitivity(&self.delta, u, z);
        let ku = self.ctx.scatter(u);
        let diff: Vec<f64> = u.iter().zip(&ku).map(|(a, b)| a - b).collect();
        let mut g_sigma = self.ctx.reaction_sensitivity(&self.delta, &diff, z);
        g_mu.iter_mut().for_each(|v| *v = -*v);
        g_sigma.iter_mut().for_each(|v| *v = -*v);
        (g_mu, g_sigma)
    }

    fn field(&self, x: Vec<f64>) -> Result<RadianceField> {
        let f = RadianceField::from_vec(self.ctx.mesh.n_vertices(), self.ctx.grid.len(), x)?;
        if !f.is_finite() {
            return Err(QpatError::Numerical("transport solution is not finite".into()));
        }
        Ok(f)
    }

    /// Materializes `M` as a CSR matrix (testing and small problems only).
    pub fn to_csr(&self) -> CsrMatrix {
        let nv = self.ctx.mesh.n_vertices();
        let na = self.ctx.grid.len();
        let w = self.ctx.grid.weight();
        let mut trip = Vec::new();
        for k in 0..na {
            for (r, c, v) in self.streaming[k].triplets() {
                trip.push((k * nv + r, k * nv + c, v));
            }
            for (r, c, v) in self.scattering[k].triplets() {
                for l in 0..na {
                    let coupling = w * self.ctx.kmat.get(k, l) * w;
                    trip.push((k * nv + r, l * nv + c, -coupling * v));
                }
            }
        }
        CsrMatrix::from_triplets(nv * na, nv * na, &trip)
    }
}
