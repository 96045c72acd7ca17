//! Uniform triangulation of the square `[-1,1]^2`, the periodic angular grid
//! on the unit circle, and the inflow/outflow split of the boundary.

use std::f64::consts::PI;
use std::io::Write;

use sha2::{Digest, Sha256};

use crate::error::{ensure_arg, Result};
use crate::sparse::CsrMatrix;

/// Which side of the square a boundary edge belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub normal: [f64; 2],
    pub side: Side,
    pub length: f64,
}

/// Uniform triangulation of `[-1,1]^2` with `2 N^2` triangles.
///
/// Vertex `(i, j)` sits at `(-1 + i h, -1 + j h)` and has index `j (N+1) + i`.
/// Every grid square is split along its bottom-left to top-right diagonal.
#[derive(Debug, Clone)]
pub struct SpatialMesh {
    n: usize,
    h: f64,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    // Per triangle: area and the constant gradients of the three barycentric coordinates.
    areas: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
}

impl SpatialMesh {
    pub fn uniform(n: usize) -> Result<Self> {
        ensure_arg!(n >= 1, "mesh resolution N must be at least 1");
        let h = 2.0 / n as f64;
        let np = n + 1;
        let idx = |i: usize, j: usize| j * np + i;

        let mut vertices = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                // Snap the last row/column to exactly +1.
                let x = if i == n { 1.0 } else { -1.0 + i as f64 * h };
                let y = if j == n { 1.0 } else { -1.0 + j as f64 * h };
                vertices.push([x, y]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let a = idx(i, j);
                let b = idx(i + 1, j);
                let c = idx(i + 1, j + 1);
                let d = idx(i, j + 1);
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }

        let mut boundary_edges = Vec::with_capacity(4 * n);
        let mut push = |v0: usize, v1: usize, side: Side| {
            boundary_edges.push(BoundaryEdge {
                vertices: [v0, v1],
                normal: side.outward_normal(),
                side,
                length: h,
            })
        };
        for i in 0..n {
            push(idx(i, 0), idx(i + 1, 0), Side::Bottom);
        }
        for j in 0..n {
            push(idx(n, j), idx(n, j + 1), Side::Right);
        }
        for i in (0..n).rev() {
            push(idx(i + 1, n), idx(i, n), Side::Top);
        }
        for j in (0..n).rev() {
            push(idx(0, j + 1), idx(0, j), Side::Left);
        }

        let mut areas = Vec::with_capacity(triangles.len());
        let mut grads = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let (area, g) = barycentric_gradients(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            areas.push(area);
            grads.push(g);
        }

        Ok(SpatialMesh {
            n,
            h,
            vertices,
            triangles,
            boundary_edges,
            areas,
            grads,
        })
    }

    /// Grid resolution `N` (cells per side).
    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Edge length of the uniform grid, `2 / N`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    /// Gradients of the barycentric coordinates of triangle `t`.
    pub fn gradients(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.grads[t]
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    /// Signed area (positive for counter-clockwise orientation).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Triangle containing `p` together with its barycentric coordinates,
    /// or `None` outside the closed square.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let [x, y] = p;
        if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
            return None;
        }
        let n = self.n;
        let fi = (x + 1.0) / self.h;
        let fj = (y + 1.0) / self.h;
        let i = (fi.floor() as usize).min(n - 1);
        let j = (fj.floor() as usize).min(n - 1);
        let u = fi - i as f64;
        let v = fj - j as f64;
        // Lower triangle [a,b,c] holds v <= u.
        let t = 2 * (j * n + i) + usize::from(v > u);
        Some((t, self.barycentric(t, p)))
    }

    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let tri = self.triangles[t];
        let g = &self.grads[t];
        let mut lam = [0.0; 3];
        for a in 0..3 {
            // lambda_a is affine and vanishes at the opposite edge; anchor at the next vertex.
            let anchor = self.vertices[tri[(a + 1) % 3]];
            lam[a] = g[a][0] * (p[0] - anchor[0]) + g[a][1] * (p[1] - anchor[1]);
        }
        lam
    }

    /// Evaluates a P1 nodal field at `p`; zero outside the square.
    pub fn interpolate(&self, field: &[f64], p: [f64; 2]) -> f64 {
        match self.locate(p) {
            Some((t, lam)) => {
                let tri = self.triangles[t];
                lam[0] * field[tri[0]] + lam[1] * field[tri[1]] + lam[2] * field[tri[2]]
            }
            None => 0.0,
        }
    }

    /// Consistent P1 mass matrix.
    pub fn mass_matrix(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(9 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.areas[t];
            for i in 0..3 {
                for j in 0..3 {
                    let m = if i == j { a / 6.0 } else { a / 12.0 };
                    trip.push((tri[i], tri[j], m));
                }
            }
        }
        let n = self.n_vertices();
        CsrMatrix::from_triplets(n, n, &trip)
    }

    /// Row sums of the consistent mass matrix.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_vertices()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                m[v] += self.areas[t] / 3.0;
            }
        }
        m
    }

    /// P1 stiffness matrix of the Dirichlet energy, natural boundary conditions.
    pub fn stiffness_matrix(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(9 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.areas[t];
            let g = &self.grads[t];
            for i in 0..3 {
                for j in 0..3 {
                    trip.push((tri[i], tri[j], a * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
                }
            }
        }
        let n = self.n_vertices();
        CsrMatrix::from_triplets(n, n, &trip)
    }

    /// 64-bit fingerprint binding nodal fields to this mesh.
    pub fn mesh_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(b"qpat-uniform-mesh");
        hasher.update((self.n as u64).to_le_bytes());
        for v in &self.vertices {
            hasher.update(v[0].to_le_bytes());
            hasher.update(v[1].to_le_bytes());
        }
        for t in &self.triangles {
            for &v in t {
                hasher.update((v as u64).to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Plain-text export: header line, one `x y` line per vertex, one `i j k` line per triangle.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "vertices {} triangles {}", self.n_vertices(), self.n_triangles())?;
        for v in &self.vertices {
            writeln!(out, "{} {}", v[0], v[1])?;
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

fn barycentric_gradients(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> (f64, [[f64; 2]; 3]) {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let area = 0.5 * det;
    // grad lambda_a = rot90(opposite edge) / det
    let g0 = [(b[1] - c[1]) / det, (c[0] - b[0]) / det];
    let g1 = [(c[1] - a[1]) / det, (a[0] - c[0]) / det];
    let g2 = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    (area, [g0, g1, g2])
}

/// Uniform periodic grid on the unit circle with trapezoidal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    angles: Vec<f64>,
    directions: Vec<[f64; 2]>,
    weight: f64,
}

impl AngularGrid {
    /// `n` directions at `phi_k = -pi + 2 pi k / n`.
    pub fn uniform(n: usize) -> Result<Self> {
        ensure_arg!(n >= 2, "angular grid needs at least 2 directions, got {n}");
        let angles: Vec<f64> = (0..n).map(|k| -PI + 2.0 * PI * k as f64 / n as f64).collect();
        let directions = angles.iter().map(|&a| [a.cos(), a.sin()]).collect();
        Ok(AngularGrid {
            angles,
            directions,
            weight: 2.0 * PI / n as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn direction(&self, k: usize) -> [f64; 2] {
        self.directions[k]
    }

    pub fn directions(&self) -> &[[f64; 2]] {
        &self.directions
    }

    /// Quadrature weight of every node, `2 pi / n`.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![self.weight; self.len()]
    }

    /// Index of the grid direction closest in angle to `phi`.
    pub fn nearest(&self, phi: f64) -> usize {
        let n = self.len() as f64;
        let k = ((phi + PI) / self.weight).round().rem_euclid(n);
        k as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Inflow,
    Outflow,
}

/// One (boundary edge endpoint, direction) pair with its lumped boundary weight
/// `|nu . theta| * length / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPair {
    pub edge: usize,
    pub vertex: usize,
    pub angle: usize,
    pub weight: f64,
    pub flow: Flow,
}

/// Split of boundary-direction pairs into inflow (`nu . theta < 0`) and outflow.
///
/// Corner vertices appear once per adjacent edge, each with that edge's normal.
/// Grazing pairs are dropped.
#[derive(Debug, Clone)]
pub struct BoundaryClassification {
    pairs: Vec<BoundaryPair>,
}

impl BoundaryClassification {
    pub fn new(mesh: &SpatialMesh, grid: &AngularGrid) -> Self {
        // Directions are exact unit vectors only up to rounding; treat |cos| below this as grazing.
        const GRAZING: f64 = 1e-12;
        let mut pairs = Vec::new();
        for (e, edge) in mesh.boundary_edges().iter().enumerate() {
            for (k, theta) in grid.directions().iter().enumerate() {
                let c = edge.normal[0] * theta[0] + edge.normal[1] * theta[1];
                if c.abs() <= GRAZING {
                    continue;
                }
                let flow = if c < 0.0 { Flow::Inflow } else { Flow::Outflow };
                for &v in &edge.vertices {
                    pairs.push(BoundaryPair {
                        edge: e,
                        vertex: v,
                        angle: k,
                        weight: c.abs() * edge.length * 0.5,
                        flow,
                    });
                }
            }
        }
        BoundaryClassification { pairs }
    }

    pub fn pairs(&self) -> &[BoundaryPair] {
        &self.pairs
    }

    pub fn inflow(&self) -> impl Iterator<Item = &BoundaryPair> {
        self.pairs.iter().filter(|p| p.flow == Flow::Inflow)
    }

    pub fn outflow(&self) -> impl Iterator<Item = &BoundaryPair> {
        self.pairs.iter().filter(|p| p.flow == Flow::Outflow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_mesh_counts() {
        let m = SpatialMesh::uniform(1).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.h(), 2.0);
        assert_eq!(m.boundary_edges().len(), 4);
    }

    #[test]
    fn zero_resolution_is_rejected() {
        assert!(SpatialMesh::uniform(0).is_err());
    }

    #[test]
    fn mesh_counts_at_inversion_and_simulation_resolution() {
        assert_eq!(SpatialMesh::uniform(61).unwrap().n_triangles(), 7442);
        assert_eq!(SpatialMesh::uniform(101).unwrap().n_triangles(), 20402);
    }

    #[test]
    fn triangles_positive_and_cover_square() {
        for n in [1, 2, 7, 32] {
            let m = SpatialMesh::uniform(n).unwrap();
            let mut total = 0.0;
            for t in 0..m.n_triangles() {
                let a = m.signed_area(t);
                assert!(a > 0.0);
                total += a;
            }
            assert!((total - 4.0).abs() < 1e-12);
            assert_eq!(m.n_vertices(), (n + 1) * (n + 1));
            assert_eq!(m.boundary_edges().len(), 4 * n);
        }
    }

    #[test]
    fn boundary_normals_are_outward_units() {
        let m = SpatialMesh::uniform(5).unwrap();
        for e in m.boundary_edges() {
            let [nx, ny] = e.normal;
            assert!(((nx * nx + ny * ny).sqrt() - 1.0).abs() < 1e-15);
            let [a, b] = e.vertices.map(|v| m.vertices()[v]);
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            // Stepping along the normal leaves the square.
            let out = [mid[0] + 1e-3 * nx, mid[1] + 1e-3 * ny];
            assert!(out[0].abs() > 1.0 || out[1].abs() > 1.0);
        }
    }

    #[test]
    fn locate_and_interpolate() {
        let m = SpatialMesh::uniform(4).unwrap();
        let f: Vec<f64> = m.vertices().iter().map(|v| 2.0 * v[0] - v[1] + 0.5).collect();
        for p in [[0.1, 0.3], [-0.99, 0.99], [1.0, 1.0], [0.37, -0.81]] {
            let val = m.interpolate(&f, p);
            assert!((val - (2.0 * p[0] - p[1] + 0.5)).abs() < 1e-12, "{p:?}");
        }
        assert_eq!(m.interpolate(&f, [5.0, 5.0]), 0.0);
    }

    #[test]
    fn mass_and_stiffness_identities() {
        let m = SpatialMesh::uniform(6).unwrap();
        let ones = vec![1.0; m.n_vertices()];
        assert!((m.mass_matrix().quadratic_form(&ones) - 4.0).abs() < 1e-12);
        assert!(m.stiffness_matrix().quadratic_form(&ones).abs() < 1e-12);
        let x: Vec<f64> = m.vertices().iter().map(|v| v[0]).collect();
        // Integral of |grad x|^2 over the square.
        assert!((m.stiffness_matrix().quadratic_form(&x) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn angular_grid_examples() {
        let g = AngularGrid::uniform(4).unwrap();
        let expected = [[-1.0, 0.0], [0.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        for (d, e) in g.directions().iter().zip(expected) {
            assert!((d[0] - e[0]).abs() < 1e-15 && (d[1] - e[1]).abs() < 1e-15);
        }
        assert_eq!(g.weight(), PI / 2.0);

        let g16 = AngularGrid::uniform(16).unwrap();
        assert!((g16.weight() - std::f64::consts::FRAC_PI_8).abs() < 1e-15);

        let g2 = AngularGrid::uniform(2).unwrap();
        assert_eq!(g2.weight(), PI);
        assert!(AngularGrid::uniform(1).is_err());
    }

    #[test]
    fn angular_quadrature_exactness() {
        for n in [2, 3, 8, 16, 33] {
            let g = AngularGrid::uniform(n).unwrap();
            let w = g.weights();
            let one: f64 = w.iter().sum();
            let c: f64 = g.angles().iter().zip(&w).map(|(a, w)| a.cos() * w).sum();
            let s: f64 = g.angles().iter().zip(&w).map(|(a, w)| a.sin() * w).sum();
            assert!((one - 2.0 * PI).abs() < 1e-12);
            assert!(c.abs() < 1e-12 && s.abs() < 1e-12);
            for d in g.directions() {
                assert!(((d[0] * d[0] + d[1] * d[1]).sqrt() - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn nearest_direction_wraps() {
        let g = AngularGrid::uniform(16).unwrap();
        assert_eq!(g.nearest(PI / 2.0), 12);
        assert_eq!(g.nearest(PI - 1e-9), 0);
        assert_eq!(g.nearest(-PI), 0);
    }

    #[test]
    fn bottom_edge_classification() {
        let m = SpatialMesh::uniform(2).unwrap();
        let g = AngularGrid::uniform(4).unwrap();
        let bc = BoundaryClassification::new(&m, &g);
        let bottom = |p: &&BoundaryPair| m.boundary_edges()[p.edge].side == Side::Bottom;
        // theta index 3 is (0,1): enters through the bottom.
        assert!(bc.inflow().filter(bottom).all(|p| p.angle == 3));
        assert!(bc.outflow().filter(bottom).all(|p| p.angle == 1));
        // theta = (1,0) and (-1,0) graze the bottom edge.
        assert!(!bc.pairs().iter().filter(bottom).any(|p| p.angle == 0 || p.angle == 2));
        assert!(bc.pairs().iter().all(|p| p.weight > 0.0));
    }

    #[test]
    fn mesh_export_format() {
        let m = SpatialMesh::uniform(1).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "vertices 4 triangles 2");
        assert_eq!(lines.len(), 1 + 4 + 2);
        assert_eq!(lines[5], "0 1 3");
    }
}
