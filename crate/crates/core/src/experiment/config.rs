use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::acoustics::{DEFAULT_DETECTORS, DEFAULT_TIMES, DEFAULT_T_MAX};
use crate::error::{QpatError, Result};
use crate::transport::KernelForm;

/// Keys every config file must set.
pub const REQUIRED_KEYS: [&str; 13] = [
    "mesh.sim_N",
    "mesh.inv_N",
    "angles.n",
    "kernel.g",
    "coeff.sigma",
    "noise.level",
    "noise.seed",
    "solver.lambda",
    "solver.iters",
    "solver.step",
    "detector.n",
    "time.n",
    "time.max",
];

/// Keys that may be omitted.
pub const OPTIONAL_KEYS: [&str; 2] = ["kernel.form", "solver.lambda_two_stage"];

/// Regularization weights tried by `qpat reconstruct --sweep-lambda`.
pub const LAMBDA_SWEEP: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];
/// Best point of [`LAMBDA_SWEEP`] for the single-stage pipeline on the clean standard phantom.
pub const DEFAULT_LAMBDA: f64 = 1e-7;
/// Best point of [`LAMBDA_SWEEP`] for the second stage of the baseline on the same data.
pub const DEFAULT_LAMBDA_TWO_STAGE: f64 = 1e-7;

/// Full description of one simulate/reconstruct run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub sim_n: usize,
    pub inv_n: usize,
    pub n_angles: usize,
    pub g: f64,
    #[serde(serialize_with = "ser_form")]
    pub kernel_form: KernelForm,
    pub sigma: f64,
    pub noise_level: f64,
    pub noise_seed: u64,
    pub lambda: f64,
    pub lambda_two_stage: f64,
    pub iters: usize,
    /// `None` selects the Lipschitz-estimated step.
    pub step: Option<f64>,
    pub n_detectors: usize,
    pub n_times: usize,
    pub t_max: f64,
}

fn ser_form<S: serde::Serializer>(f: &KernelForm, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(f.name())
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim_n: 101,
            inv_n: 61,
            n_angles: 16,
            g: 0.6,
            kernel_form: KernelForm::Conventional,
            sigma: 3.0,
            noise_level: 0.0,
            noise_seed: 1,
            lambda: DEFAULT_LAMBDA,
            lambda_two_stage: DEFAULT_LAMBDA_TWO_STAGE,
            iters: 40,
            step: None,
            n_detectors: DEFAULT_DETECTORS,
            n_times: DEFAULT_TIMES,
            t_max: DEFAULT_T_MAX,
        }
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. `origin` names the source in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut seen: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| QpatError::ConfigLine {
                path: origin.to_string(),
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim();
            let value = value.trim();
            if !REQUIRED_KEYS.contains(&key) && !OPTIONAL_KEYS.contains(&key) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(err(format!("empty value for `{key}`")));
            }
            if seen.insert(key, (line_no, value)).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        for key in REQUIRED_KEYS {
            if !seen.contains_key(key) {
                return Err(QpatError::Config(format!("{origin}: missing required key `{key}`")));
            }
        }

        let mut cfg = ExperimentConfig::default();
        for (&key, &(line, value)) in &seen {
            let err = |message: String| QpatError::ConfigLine {
                path: origin.to_string(),
                line,
                message,
            };
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|_| err(format!("`{key}` expects a nonnegative integer, got `{value}`")))
            };
            let real = || {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("`{key}` expects a number, got `{value}`")))
            };
            match key {
                "mesh.sim_N" => cfg.sim_n = int()?,
                "mesh.inv_N" => cfg.inv_n = int()?,
                "angles.n" => cfg.n_angles = int()?,
                "kernel.g" => cfg.g = real()?,
                "kernel.form" => {
                    cfg.kernel_form = KernelForm::parse(value)
                        .ok_or_else(|| err(format!("`kernel.form` must be conventional or literal, got `{value}`")))?
                }
                "coeff.sigma" => cfg.sigma = real()?,
                "noise.level" => cfg.noise_level = real()?,
                "noise.seed" => {
                    cfg.noise_seed = value
                        .parse::<u64>()
                        .map_err(|_| err(format!("`noise.seed` expects an unsigned integer, got `{value}`")))?
                }
                "solver.lambda" => cfg.lambda = real()?,
                "solver.lambda_two_stage" => cfg.lambda_two_stage = real()?,
                "solver.iters" => cfg.iters = int()?,
                "solver.step" => {
                    cfg.step = if value == "auto" { None } else { Some(real()?) };
                }
                "detector.n" => cfg.n_detectors = int()?,
                "time.n" => cfg.n_times = int()?,
                "time.max" => cfg.t_max = real()?,
                _ => unreachable!("key validated above"),
            }
        }
        if !seen.contains_key("solver.lambda_two_stage") {
            cfg.lambda_two_stage = cfg.lambda;
        }
        cfg.validate().map_err(|e| QpatError::Config(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QpatError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let checks: [(bool, &str); 12] = [
            (self.sim_n >= 1, "mesh.sim_N must be positive"),
            (self.inv_n >= 1, "mesh.inv_N must be positive"),
            (self.n_angles >= 2, "angles.n must be at least 2"),
            ((0.0..1.0).contains(&self.g), "kernel.g must lie in [0, 1)"),
            (self.sigma >= 0.0, "coeff.sigma must be nonnegative"),
            (self.noise_level >= 0.0, "noise.level must be nonnegative"),
            (self.lambda > 0.0, "solver.lambda must be positive"),
            (self.lambda_two_stage > 0.0, "solver.lambda_two_stage must be positive"),
            (self.iters >= 1, "solver.iters must be positive"),
            (self.step.is_none_or(|s| s > 0.0), "solver.step must be positive or auto"),
            (self.n_detectors >= 2, "detector.n must be at least 2"),
            (self.n_times >= 3 && self.t_max >= 3.0, "time grid needs time.n >= 3 and time.max >= 3"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }

    /// Inverse-crime warning when simulation and inversion meshes coincide.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.sim_n == self.inv_n {
            w.push(format!(
                "inverse crime: simulation and inversion use the same mesh (N = {})",
                self.sim_n
            ));
        }
        w
    }

    /// Config file text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let step = self.step.map_or("auto".to_string(), |s| format!("{s:?}"));
        format!(
            "mesh.sim_N = {}\nmesh.inv_N = {}\nangles.n = {}\nkernel.g = {:?}\nkernel.form = {}\ncoeff.sigma = {:?}\n\
             noise.level = {:?}\nnoise.seed = {}\nsolver.lambda = {:?}\nsolver.lambda_two_stage = {:?}\n\
             solver.iters = {}\nsolver.step = {}\ndetector.n = {}\ntime.n = {}\ntime.max = {:?}\n",
            self.sim_n,
            self.inv_n,
            self.n_angles,
            self.g,
            self.kernel_form.name(),
            self.sigma,
            self.noise_level,
            self.noise_seed,
            self.lambda,
            self.lambda_two_stage,
            self.iters,
            step,
            self.n_detectors,
            self.n_times,
            self.t_max
        )
    }
}
