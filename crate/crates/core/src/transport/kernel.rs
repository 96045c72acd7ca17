//! Two-dimensional Henyey-Greenstein scattering kernel and its discretization
//! on the angular grid.

use std::f64::consts::PI;

use crate::error::{ensure_arg, Result};
use crate::geometry::AngularGrid;

/// Which denominator the kernel uses.
///
/// `Conventional` is `1 + g^2 - 2 g (theta . theta')`. `Literal` evaluates
/// `1 + g^2 - 2 g cos(theta . theta')`, i.e. the cosine is applied to the
/// dot product itself; it is kept for reproducing that reading and is not
/// normalized analytically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelForm {
    #[default]
    Conventional,
    Literal,
}

impl KernelForm {
    pub fn name(self) -> &'static str {
        match self {
            KernelForm::Conventional => "conventional",
            KernelForm::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conventional" => Some(KernelForm::Conventional),
            "literal" => Some(KernelForm::Literal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringKernelSpec {
    g: f64,
    form: KernelForm,
}

impl ScatteringKernelSpec {
    /// Anisotropy factor `g` in `[0, 1)`.
    pub fn new(g: f64) -> Result<Self> {
        Self::with_form(g, KernelForm::Conventional)
    }

    pub fn with_form(g: f64, form: KernelForm) -> Result<Self> {
        ensure_arg!((0.0..1.0).contains(&g), "anisotropy factor must lie in [0,1), got {g}");
        Ok(ScatteringKernelSpec { g, form })
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn form(&self) -> KernelForm {
        self.form
    }

    /// Kernel value as a function of `c = theta . theta'`.
    pub fn eval_cos(&self, c: f64) -> f64 {
        let g = self.g;
        let arg = match self.form {
            KernelForm::Conventional => c,
            KernelForm::Literal => c.cos(),
        };
        (1.0 - g * g) / (1.0 + g * g - 2.0 * g * arg) / (2.0 * PI)
    }
}

/// `k(theta, theta')` for unit vectors `theta`, `theta'`.
pub fn hg_kernel(spec: &ScatteringKernelSpec, theta: [f64; 2], theta_prime: [f64; 2]) -> Result<f64> {
    for d in [theta, theta_prime] {
        let norm = d[0].hypot(d[1]);
        ensure_arg!((norm - 1.0).abs() <= 1e-10, "direction {d:?} is not a unit vector");
    }
    let c = (theta[0] * theta_prime[0] + theta[1] * theta_prime[1]).clamp(-1.0, 1.0);
    Ok(spec.eval_cos(c))
}

/// Dense `n x n` matrix `K[j][k] ~ k(theta_j, theta_k)` whose rows, weighted by
/// the angular quadrature, sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringMatrix {
    n: usize,
    entries: Vec<f64>,
    weight: f64,
    normalization: f64,
}

impl ScatteringMatrix {
    pub fn assemble(grid: &AngularGrid, spec: &ScatteringKernelSpec) -> Self {
        let n = grid.len();
        let dirs = grid.directions();
        let w = grid.weight();
        let mut entries = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                let c = (dirs[j][0] * dirs[k][0] + dirs[j][1] * dirs[k][1]).clamp(-1.0, 1.0);
                entries[j * n + k] = spec.eval_cos(c);
            }
        }
        // The grid is uniform and the kernel depends only on the angle difference,
        // so every row carries the same sum; one scale keeps the matrix symmetric.
        let row0: f64 = entries[..n].iter().sum::<f64>() * w;
        for v in &mut entries {
            *v /= row0;
        }
        ScatteringMatrix {
            n,
            entries,
            weight: w,
            normalization: row0,
        }
    }

    /// Identity-like operator (`K Phi = Phi`), used to check the scattering sensitivity.
    pub fn identity(grid: &AngularGrid) -> Self {
        let n = grid.len();
        let w = grid.weight();
        let mut entries = vec![0.0; n * n];
        for j in 0..n {
            entries[j * n + j] = 1.0 / w;
        }
        ScatteringMatrix {
            n,
            entries,
            weight: w,
            normalization: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[j * self.n + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.entries[j * self.n..(j + 1) * self.n]
    }

    /// Weighted sum of the raw kernel row before rescaling.
    pub fn raw_row_integral(&self) -> f64 {
        self.normalization
    }

    /// Quadrature weight the rows were normalized against.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// `(K u)_j = sum_k K[j][k] w u_k` for an angular vector.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.row(j).iter().zip(u).map(|(k, x)| k * x).sum::<f64>() * self.weight)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(phi: f64) -> [f64; 2] {
        [phi.cos(), phi.sin()]
    }

    #[test]
    fn isotropic_limit() {
        let spec = ScatteringKernelSpec::new(0.0).unwrap();
        for (a, b) in [(0.0, 1.0), (0.3, -2.0), (1.0, 1.0)] {
            let k = hg_kernel(&spec, dir(a), dir(b)).unwrap();
            assert!((k - 1.0 / (2.0 * PI)).abs() < 1e-15);
        }
    }

    #[test]
    fn aligned_directions_both_forms() {
        let conv = ScatteringKernelSpec::new(0.6).unwrap();
        let lit = ScatteringKernelSpec::with_form(0.6, KernelForm::Literal).unwrap();
        let k = hg_kernel(&conv, dir(0.4), dir(0.4)).unwrap();
        // (1/2pi)(1-g^2)/(1-g)^2 = (1/2pi)(1+g)/(1-g)
        assert!((k - 4.0 / (2.0 * PI)).abs() < 1e-12);
        let kl = hg_kernel(&lit, dir(0.4), dir(0.4)).unwrap();
        let expect = (1.0 - 0.36) / (1.0 + 0.36 - 1.2 * 1f64.cos()) / (2.0 * PI);
        assert!((kl - expect).abs() < 1e-14);
        assert!((kl - 0.143_133_550_159_244_37).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ScatteringKernelSpec::new(1.0).is_err());
        assert!(ScatteringKernelSpec::new(-0.1).is_err());
        let spec = ScatteringKernelSpec::new(0.3).unwrap();
        assert!(hg_kernel(&spec, [1.0, 1.0], [1.0, 0.0]).is_err());
    }

    #[test]
    fn matrix_isotropic_entries() {
        let grid = AngularGrid::uniform(8).unwrap();
        let k = ScatteringMatrix::assemble(&grid, &ScatteringKernelSpec::new(0.0).unwrap());
        for j in 0..8 {
            for l in 0..8 {
                assert!((k.get(j, l) - 1.0 / (2.0 * PI)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matrix_forward_peaked_and_symmetric() {
        let grid = AngularGrid::uniform(16).unwrap();
        let k = ScatteringMatrix::assemble(&grid, &ScatteringKernelSpec::new(0.6).unwrap());
        for j in 0..16 {
            let row = k.row(j);
            let argmax = (0..16).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, j);
            let s: f64 = row.iter().sum::<f64>() * grid.weight();
            assert!((s - 1.0).abs() < 1e-12);
            for l in 0..16 {
                assert!(k.get(j, l) >= 0.0);
                assert_eq!(k.get(j, l), k.get(l, j));
            }
        }
        let ones = k.apply(&[1.0; 16]);
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}
