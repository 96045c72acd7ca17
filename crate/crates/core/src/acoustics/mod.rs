//! Two-dimensional photoacoustic wave operator.
//!
//! For an initial pressure `h` supported in the square, the pressure recorded
//! at a detector `y` is
//!
//! ```text
//! p(y, t) = d/dt int_0^t r (M h)(y, r) / sqrt(t^2 - r^2) dr
//! ```
//!
//! with `M` the normalized circular mean. Detectors sit on an arc of the
//! circle of radius `R >= 3/2` and data are multiplied by a smooth temporal
//! cutoff `w`. Circular means of P1 fields are computed exactly by splitting
//! each circle at its crossings with the grid lines ([`means`]); the Abel
//! integral is integrated exactly for the piecewise-linear interpolant of the
//! means in `r`, and the time derivative uses second-order differences.
//!
//! [`WaveOperator`] freezes these quadratures into per-detector sparse rows
//! and exposes the exact transpose. [`wave_adjoint_formula`] evaluates the
//! continuous adjoint and [`backprojection_inverse`] the derivative-filtered
//! backprojection built on the same traversal.

pub mod means;
mod wave;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::{Read, Write};
use std::path::Path;

pub use wave::{
    abel_derivative_matrix, backprojection_inverse, visible_angle, wave_adjoint_formula, wave_forward, WaveOperator,
    BACKPROJECTION_SCALE, MAX_STORED_ENTRIES,
};

use crate::error::{ensure_arg, QpatError, Result};

/// Radius of the detector circle used throughout the experiments.
pub const DEFAULT_RADIUS: f64 = 1.5;
pub const DEFAULT_DETECTORS: usize = 120;
pub const DEFAULT_TIMES: usize = 600;
pub const DEFAULT_T_MAX: f64 = 3.5;
/// Default taper length of the temporal cutoff.
pub const DEFAULT_RAMP: f64 = 0.08;

/// Detectors uniformly spaced on an arc of the circle `|y| = radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorGeometry {
    radius: f64,
    arc: (f64, f64),
    angles: Vec<f64>,
}

impl DetectorGeometry {
    /// `n` detectors at the midpoints of `n` equal sub-arcs of `[start, end]`.
    pub fn new(radius: f64, start: f64, end: f64, n: usize) -> Result<Self> {
        ensure_arg!(radius >= 1.5, "detector radius must be at least 1.5, got {radius}");
        ensure_arg!(n >= 1, "need at least one detector");
        ensure_arg!(
            end > start && end - start <= 2.0 * PI + 1e-12,
            "invalid detector arc [{start}, {end}]"
        );
        let step = (end - start) / n as f64;
        let angles: Vec<f64> = (0..n).map(|j| start + (j as f64 + 0.5) * step).collect();
        let arc = if n >= 2 { arc_from_angles(&angles) } else { (start, end) };
        Ok(DetectorGeometry { radius, arc, angles })
    }

    /// Lower half circle `(-pi, 0)` of radius 3/2.
    pub fn half_circle(n: usize) -> Result<Self> {
        Self::new(DEFAULT_RADIUS, -PI, 0.0, n)
    }

    /// Full circle of radius 3/2.
    pub fn full_circle(n: usize) -> Result<Self> {
        Self::new(DEFAULT_RADIUS, -PI, PI, n)
    }

    /// Rebuilds a geometry from stored detector angles, which must be uniformly spaced.
    pub fn from_angles(radius: f64, angles: Vec<f64>) -> Result<Self> {
        if angles.len() < 2 {
            return Err(QpatError::Integrity("at least two detector angles required".into()));
        }
        let n = angles.len();
        let step = (angles[n - 1] - angles[0]) / (n - 1) as f64;
        let uniform = angles
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs().max(1.0));
        if !(step > 0.0 && uniform) {
            return Err(QpatError::Integrity("detector angles are not uniformly spaced".into()));
        }
        let (start, end) = arc_from_angles(&angles);
        let mut g = Self::new(radius, start, end, n)
            .map_err(|e| QpatError::Integrity(format!("stored detector geometry: {e}")))?;
        g.angles = angles;
        Ok(g)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn arc(&self) -> (f64, f64) {
        self.arc
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

    pub fn point(&self, j: usize) -> [f64; 2] {
        let a = self.angles[j];
        [self.radius * a.cos(), self.radius * a.sin()]
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|j| self.point(j)).collect()
    }

    /// Arc-length quadrature weight of each detector (midpoint rule).
    pub fn weight(&self) -> f64 {
        self.radius * (self.arc.1 - self.arc.0) / self.len() as f64
    }

    pub fn is_full_circle(&self) -> bool {
        (self.arc.1 - self.arc.0 - 2.0 * PI).abs() < 1e-12
    }

    /// Distance from the arc to the square `[-1, 1]^2`.
    pub fn distance_to_square(&self) -> f64 {
        let (a, b) = self.arc;
        let mut candidates = vec![a, b];
        // The distance is monotone between axis and diagonal directions, so its
        // minimum over an arc sits at an endpoint or at a diagonal direction.
        let first = ((a - FRAC_PI_4) / FRAC_PI_2).ceil() as i64;
        let last = ((b - FRAC_PI_4) / FRAC_PI_2).floor() as i64;
        for k in first..=last {
            candidates.push(FRAC_PI_4 + k as f64 * FRAC_PI_2);
        }
        candidates
            .into_iter()
            .map(|phi| square_distance([self.radius * phi.cos(), self.radius * phi.sin()]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Diameter of the ball bounded by the detector circle.
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

fn arc_from_angles(angles: &[f64]) -> (f64, f64) {
    let n = angles.len();
    let step = (angles[n - 1] - angles[0]) / (n - 1) as f64;
    (angles[0] - 0.5 * step, angles[n - 1] + 0.5 * step)
}

/// Euclidean distance from `p` to `[-1, 1]^2`.
pub fn square_distance(p: [f64; 2]) -> f64 {
    let dx = (p[0].abs() - 1.0).max(0.0);
    let dy = (p[1].abs() - 1.0).max(0.0);
    dx.hypot(dy)
}

/// Uniform samples `t_m = m dt`, `m = 0..n`, ending at `t_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t_max: f64, n: usize) -> Result<Self> {
        ensure_arg!(n >= 3, "need at least three time samples");
        ensure_arg!(t_max >= 3.0, "time window must reach the diameter 3, got {t_max}");
        Ok(TimeGrid {
            n,
            dt: t_max / (n - 1) as f64,
        })
    }

    pub fn from_step(dt: f64, n: usize) -> Result<Self> {
        ensure_arg!(dt > 0.0 && dt.is_finite(), "time step must be positive");
        ensure_arg!(n >= 3, "need at least three time samples");
        Ok(TimeGrid { n, dt })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.dt * (self.n - 1) as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|m| self.time(m)).collect()
    }

    /// Trapezoidal weights.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.n];
        w[0] *= 0.5;
        w[self.n - 1] *= 0.5;
        w
    }
}

/// Smooth temporal cutoff: zero before `t_lo - ramp`, one on `[t_lo, t_hi]`,
/// zero after `t_hi + ramp`, quintic smoothstep in between (C^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffProfile {
    pub t_lo: f64,
    pub t_hi: f64,
    pub ramp: f64,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

impl CutoffProfile {
    pub fn eval(&self, t: f64) -> f64 {
        if t >= self.t_lo && t <= self.t_hi {
            1.0
        } else if t < self.t_lo {
            smoothstep((t - (self.t_lo - self.ramp)) / self.ramp)
        } else {
            smoothstep((self.t_hi + self.ramp - t) / self.ramp)
        }
    }

    pub fn sample(&self, tgrid: &TimeGrid) -> Vec<f64> {
        tgrid.times().into_iter().map(|t| self.eval(t)).collect()
    }

    pub fn end(&self) -> f64 {
        self.t_hi + self.ramp
    }
}

/// Cutoff with plateau `[dist(square, arc), 2R - dist(square, arc)]`.
pub fn build_cutoff(geom: &DetectorGeometry, ramp: f64) -> Result<CutoffProfile> {
    let t_lo = geom.distance_to_square();
    ensure_arg!(ramp > 0.0, "ramp must be positive");
    ensure_arg!(
        t_lo - ramp >= 0.0,
        "ramp {ramp} exceeds the arc-to-square distance {t_lo}"
    );
    Ok(CutoffProfile {
        t_lo,
        t_hi: geom.diameter() - t_lo,
        ramp,
    })
}

/// Everything needed to evaluate the wave operator on a detector/time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticSetup {
    pub geometry: DetectorGeometry,
    pub time: TimeGrid,
    pub cutoff: CutoffProfile,
}

impl AcousticSetup {
    pub fn new(geometry: DetectorGeometry, time: TimeGrid, ramp: f64) -> Result<Self> {
        let cutoff = build_cutoff(&geometry, ramp)?;
        ensure_arg!(
            time.t_max() >= cutoff.end() - 1e-12,
            "time grid ends at {} before the cutoff ends at {}",
            time.t_max(),
            cutoff.end()
        );
        Ok(AcousticSetup {
            geometry,
            time,
            cutoff,
        })
    }

    /// Half circle with the default detector and time sampling.
    pub fn default_half_circle() -> Result<Self> {
        Self::new(
            DetectorGeometry::half_circle(DEFAULT_DETECTORS)?,
            TimeGrid::new(DEFAULT_T_MAX, DEFAULT_TIMES)?,
            DEFAULT_RAMP,
        )
    }

    /// Setup matching the geometry and time grid stored with `data`.
    pub fn for_data(data: &PressureData, ramp: f64) -> Result<Self> {
        Self::new(data.geometry.clone(), data.time, ramp)
    }

    pub fn n_samples(&self) -> usize {
        self.geometry.len() * self.time.len()
    }

    /// Weights of the discrete `L^2(arc x (0, T))` inner product, row-major.
    pub fn data_weights(&self) -> Vec<f64> {
        let a = self.geometry.weight();
        let tw = self.time.weights();
        (0..self.geometry.len())
            .flat_map(|_| tw.iter().map(move |w| a * w))
            .collect()
    }

    pub fn zero_data(&self) -> PressureData {
        PressureData {
            geometry: self.geometry.clone(),
            time: self.time,
            values: vec![0.0; self.n_samples()],
        }
    }
}

const PRESSURE_MAGIC: &[u8; 9] = b"QPATPRES1";

/// Samples of the (cut off) pressure at each detector and time, row-major by detector.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureData {
    pub geometry: DetectorGeometry,
    pub time: TimeGrid,
    pub values: Vec<f64>,
}

impl PressureData {
    pub fn new(geometry: DetectorGeometry, time: TimeGrid, values: Vec<f64>) -> Result<Self> {
        ensure_arg!(
            values.len() == geometry.len() * time.len(),
            "pressure data has {} samples, expected {}",
            values.len(),
            geometry.len() * time.len()
        );
        Ok(PressureData {
            geometry,
            time,
            values,
        })
    }

    pub fn trace(&self, j: usize) -> &[f64] {
        let n = self.time.len();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(PRESSURE_MAGIC)?;
        out.write_all(&(self.geometry.len() as u64).to_le_bytes())?;
        out.write_all(&(self.time.len() as u64).to_le_bytes())?;
        out.write_all(&0u64.to_le_bytes())?;
        out.write_all(&self.geometry.radius().to_le_bytes())?;
        out.write_all(&self.time.dt().to_le_bytes())?;
        for a in self.geometry.angles() {
            out.write_all(&a.to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let io = |e: std::io::Error| QpatError::Integrity(format!("truncated pressure data: {e}"));
        let mut magic = [0u8; 9];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != PRESSURE_MAGIC {
            return Err(QpatError::Integrity("not a pressure data file (bad magic)".into()));
        }
        let mut u = [0u8; 8];
        let mut next_u64 = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut u).map_err(io)?;
            Ok(u64::from_le_bytes(u))
        };
        let n_det = next_u64(&mut input)? as usize;
        let n_t = next_u64(&mut input)? as usize;
        let reserved = next_u64(&mut input)?;
        if reserved != 0 {
            return Err(QpatError::Integrity("reserved header field is not zero".into()));
        }
        if n_det == 0 || n_t < 3 || n_det.checked_mul(n_t).is_none_or(|n| n > 1 << 32) {
            return Err(QpatError::Integrity(format!(
                "implausible dimensions {n_det} x {n_t}"
            )));
        }
        let read_f64s = |input: &mut R, n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; 8 * n];
            input.read_exact(&mut buf).map_err(io)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let head = read_f64s(&mut input, 2)?;
        let (radius, dt) = (head[0], head[1]);
        let angles = read_f64s(&mut input, n_det)?;
        let values = read_f64s(&mut input, n_det * n_t)?;
        let mut rest = [0u8; 1];
        if input.read(&mut rest).map_err(io)? != 0 {
            return Err(QpatError::Integrity("trailing bytes after pressure data".into()));
        }
        let geometry = DetectorGeometry::from_angles(radius, angles)?;
        let time = TimeGrid::from_step(dt, n_t).map_err(|e| QpatError::Integrity(e.to_string()))?;
        let data = PressureData {
            geometry,
            time,
            values,
        };
        if !data.is_finite() {
            return Err(QpatError::Integrity("pressure samples are not finite".into()));
        }
        Ok(data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| QpatError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| QpatError::io(path, e))?;
        w.flush().map_err(|e| QpatError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| QpatError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detectors_on_open_arc() {
        let g = DetectorGeometry::half_circle(120).unwrap();
        for (j, p) in g.points().iter().enumerate() {
            assert!((p[0].hypot(p[1]) - 1.5).abs() < 1e-12);
            let a = g.angles()[j];
            assert!(a > -PI && a < 0.0);
        }
        assert!((g.weight() * 120.0 - 1.5 * PI).abs() < 1e-12);
        assert!(DetectorGeometry::new(1.4, -PI, 0.0, 10).is_err());
    }

    #[test]
    fn arc_distance_matches_brute_force() {
        for (a, b) in [(-PI, 0.0), (-PI, PI), (-2.0, -1.2), (-1.7, -1.5), (0.1, 0.5)] {
            let g = DetectorGeometry::new(1.5, a, b, 8).unwrap();
            let brute = (0..=200_000)
                .map(|i| {
                    let phi = a + (b - a) * i as f64 / 200_000.0;
                    square_distance([1.5 * phi.cos(), 1.5 * phi.sin()])
                })
                .fold(f64::INFINITY, f64::min);
            assert!((g.distance_to_square() - brute).abs() < 1e-9, "{a} {b}");
        }
        let half = DetectorGeometry::half_circle(4).unwrap();
        assert!((half.distance_to_square() - (1.5 - 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn cutoff_shape() {
        let g = DetectorGeometry::half_circle(4).unwrap();
        let c = build_cutoff(&g, 0.08).unwrap();
        assert_eq!(c.eval(0.5 * (c.t_lo + c.t_hi)), 1.0);
        assert_eq!(c.eval(c.t_lo), 1.0);
        assert_eq!(c.eval(c.t_hi), 1.0);
        assert_eq!(c.eval(0.0), 0.0);
        assert_eq!(c.eval(c.t_hi + 0.08), 0.0);
        assert!((c.t_hi - (3.0 - c.t_lo)).abs() < 1e-15);
        assert!(build_cutoff(&g, 0.2).is_err());
        let mut prev = 0.0;
        for i in 0..=100 {
            let v = c.eval(c.t_lo - 0.08 + 0.0008 * i as f64);
            assert!(v >= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn time_grid_rules() {
        let t = TimeGrid::new(3.5, 600).unwrap();
        assert!((t.t_max() - 3.5).abs() < 1e-12);
        assert!((t.weights().iter().sum::<f64>() - 3.5).abs() < 1e-12);
        assert!(TimeGrid::new(2.5, 600).is_err());
    }

    #[test]
    fn pressure_round_trip_and_corruption() {
        let setup = AcousticSetup::default_half_circle().unwrap();
        let mut data = setup.zero_data();
        for (i, v) in data.values.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin() * 1e-3;
        }
        let mut buf = Vec::new();
        data.write_to(&mut buf).unwrap();
        let back = PressureData::read_from(&buf[..]).unwrap();
        assert_eq!(back, data);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(PressureData::read_from(&bad[..]), Err(QpatError::Integrity(_))));
        assert!(PressureData::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
