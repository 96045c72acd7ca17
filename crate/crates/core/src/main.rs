use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use qpat::acoustics::PressureData;
use qpat::checks;
use qpat::experiment::{
    add_noise, reconstruct, relative_error, resolution_for, simulate_data, ExperimentConfig, FieldFile, Method,
    PhantomSpec, LAMBDA_SWEEP, NOISE_GENERATOR,
};
use qpat::geometry::SpatialMesh;
use qpat::{QpatError, Result};

const PRESSURE_FILE: &str = "pressure.bin";
const CLEAN_PRESSURE_FILE: &str = "pressure_clean.bin";
const TRUTH_FILE: &str = "mu_true.bin";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "qpat", version, about = "Quantitative photoacoustic tomography: simulation and reconstruction")]
struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate pressure data for the standard phantom.
    Simulate {
        config: PathBuf,
        /// Output directory.
        #[arg(long, short, default_value = "qpat-data")]
        out: PathBuf,
    },
    /// Reconstruct the absorption coefficient from simulated data.
    Reconstruct {
        config: PathBuf,
        data_dir: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Output directory, defaults to the data directory.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Try every weight of the built-in sweep and keep the one closest to the truth.
        #[arg(long)]
        sweep_lambda: bool,
    },
    /// Relative errors of two reconstructions and cross-section CSV.
    Compare {
        recon_a: PathBuf,
        recon_b: PathBuf,
        truth: PathBuf,
        /// Cross-section CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        action: MeshCommand,
    },
    /// Adjoint and gradient consistency checks.
    Selftest,
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Write the uniform mesh as text.
    Export {
        #[arg(long)]
        n: usize,
        /// Output file, stdout if omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Single,
    Two,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Single => Method::SingleStage,
            MethodArg::Two => Method::TwoStage,
        }
    }
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct NoiseRecord {
    generator: &'static str,
    level: f64,
    seed: u64,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: &'static str,
    config: ExperimentConfig,
    kernel_form: &'static str,
    noise: NoiseRecord,
    warnings: Vec<String>,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    timings_s: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    results: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    fn new(command: &str, config: &ExperimentConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config: config.clone(),
            kernel_form: config.kernel_form.name(),
            noise: NoiseRecord {
                generator: NOISE_GENERATOR,
                level: config.noise_level,
                seed: config.noise_seed,
            },
            warnings: config.warnings(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_s: Vec::new(),
            results: serde_json::Map::new(),
        }
    }

    fn time(&mut self, phase: &str, start: Instant) {
        self.timings_s.push((phase.to_string(), start.elapsed().as_secs_f64()));
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| QpatError::Numerical(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> QpatError {
    QpatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn record(path: &Path) -> Result<FileRecord> {
    Ok(FileRecord {
        path: path.file_name().unwrap_or(path.as_os_str()).to_string_lossy().into_owned(),
        sha256: sha256_file(path)?,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Checks `file` against the hash recorded for it in the directory manifest, if any.
fn verify_against_manifest(dir: &Path, file: &str) -> Result<()> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(&manifest).map_err(|e| io_error(&manifest, e))?;
    let json: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| QpatError::Integrity(format!("{}: {e}", manifest.display())))?;
    let recorded = json["outputs"]
        .as_array()
        .into_iter()
        .flatten()
        .find(|o| o["path"] == file)
        .and_then(|o| o["sha256"].as_str());
    if let Some(expected) = recorded {
        let actual = sha256_file(&dir.join(file))?;
        if actual != expected {
            return Err(QpatError::Integrity(format!(
                "{file} does not match the hash recorded in {}",
                manifest.display()
            )));
        }
    }
    Ok(())
}

fn cmd_simulate(config_path: &Path, out: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let mut manifest = RunManifest::new("simulate", &config);
    manifest.inputs.push(record(config_path)?);
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    create_dir(out)?;

    let start = Instant::now();
    let spec = PhantomSpec::standard(config.sigma, config.g);
    let sim = simulate_data(&spec, &config)?;
    manifest.time("simulate", start);
    let start = Instant::now();
    let noisy = add_noise(&sim.data[0], config.noise_level, config.noise_seed)?;
    manifest.time("noise", start);

    let coarse = SpatialMesh::uniform(config.inv_n)?;
    let fine = SpatialMesh::uniform(config.sim_n)?;
    let mut paths = Vec::new();
    let mut save_field = |name: &str, mesh: &SpatialMesh, values: &[f64]| -> Result<()> {
        let path = out.join(name);
        FieldFile::new(mesh, values.to_vec())?.save(&path)?;
        paths.push(path);
        Ok(())
    };
    save_field(TRUTH_FILE, &coarse, &sim.mu_coarse)?;
    save_field("mu_true_fine.bin", &fine, &sim.truth_fine.mu)?;
    save_field("heating_true.bin", &coarse, &sim.heating_coarse)?;
    save_field("heating_true_fine.bin", &fine, &sim.heating_fine.values)?;
    for (name, data) in [(PRESSURE_FILE, &noisy), (CLEAN_PRESSURE_FILE, &sim.data[0])] {
        let path = out.join(name);
        data.save(&path)?;
        paths.push(path);
    }
    let config_copy = out.join("config.txt");
    std::fs::write(&config_copy, config.to_text()).map_err(|e| io_error(&config_copy, e))?;
    paths.push(config_copy);
    for p in &paths {
        manifest.outputs.push(record(p)?);
    }
    manifest.write(&out.join(MANIFEST_FILE))?;
    println!("simulated {} samples into {}", noisy.values.len(), out.display());
    Ok(())
}

fn cmd_reconstruct(config_path: &Path, data_dir: &Path, method: Method, out: &Path, sweep: bool) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let name = method.name();
    let mut manifest = RunManifest::new(&format!("reconstruct --method {name}"), &config);
    manifest.inputs.push(record(config_path)?);

    verify_against_manifest(data_dir, PRESSURE_FILE)?;
    let pressure_path = data_dir.join(PRESSURE_FILE);
    let data = vec![PressureData::load(&pressure_path)?];
    manifest.inputs.push(record(&pressure_path)?);
    let mesh = SpatialMesh::uniform(config.inv_n)?;
    let truth_path = data_dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() {
        verify_against_manifest(data_dir, TRUTH_FILE)?;
        let t = FieldFile::load(&truth_path)?;
        t.check_mesh(&mesh)?;
        manifest.inputs.push(record(&truth_path)?);
        Some(t.values)
    } else {
        None
    };
    create_dir(out)?;
    let spec = PhantomSpec::standard(config.sigma, config.g);

    let base_lambda = match method {
        Method::SingleStage => config.lambda,
        Method::TwoStage => config.lambda_two_stage,
    };
    let lambdas: Vec<f64> = if sweep {
        if truth.is_none() {
            return Err(QpatError::InvalidArgument(format!(
                "--sweep-lambda needs {} in the data directory",
                TRUTH_FILE
            )));
        }
        LAMBDA_SWEEP.to_vec()
    } else {
        vec![base_lambda]
    };

    let mut best: Option<(f64, f64, qpat::transport::CoefficientPair, qpat::inversion::IterationTrace)> = None;
    let mut sweep_csv = String::from("lambda,relative_error,iterations,stop_reason\n");
    for &lambda in &lambdas {
        let mut cfg = config.clone();
        match method {
            Method::SingleStage => cfg.lambda = lambda,
            Method::TwoStage => cfg.lambda_two_stage = lambda,
        }
        let start = Instant::now();
        let (coeffs, trace) = reconstruct(&spec, &cfg, &data, method)?;
        manifest.time(&format!("reconstruct lambda={lambda:e}"), start);
        let err = match &truth {
            Some(t) => relative_error(&coeffs.mu, t, &mesh)?,
            None => f64::NAN,
        };
        sweep_csv.push_str(&format!("{lambda:e},{err},{},{}\n", trace.iterations(), trace.stop_reason));
        if sweep {
            println!("lambda {lambda:e}: relative error {err:.6}");
        }
        if best.as_ref().is_none_or(|b| err < b.1) {
            best = Some((lambda, err, coeffs, trace));
        }
    }
    let (lambda, err, coeffs, trace) = best.expect("at least one lambda");

    let mut outputs = Vec::new();
    let field_path = out.join(format!("mu_{name}.bin"));
    FieldFile::new(&mesh, coeffs.mu)?.save(&field_path)?;
    outputs.push(field_path);
    let trace_path = out.join(format!("trace_{name}.csv"));
    trace.save_csv(&trace_path)?;
    outputs.push(trace_path);
    if sweep {
        let p = out.join(format!("sweep_{name}.csv"));
        std::fs::write(&p, sweep_csv).map_err(|e| io_error(&p, e))?;
        outputs.push(p);
    }
    for p in &outputs {
        manifest.outputs.push(record(p)?);
    }
    let results = &mut manifest.results;
    results.insert("lambda".into(), lambda.into());
    results.insert("iterations".into(), trace.iterations().into());
    results.insert("stop_reason".into(), trace.stop_reason.clone().into());
    if err.is_finite() {
        results.insert("relative_error".into(), err.into());
    }
    manifest.write(&out.join(format!("manifest_{name}.json")))?;

    println!(
        "{name}-stage: {} iterations ({}), lambda {lambda:e}{}",
        trace.iterations(),
        trace.stop_reason,
        if err.is_finite() { format!(", relative error {err:.6}") } else { String::new() }
    );
    Ok(())
}

fn load_on_common_mesh(paths: [&Path; 3]) -> Result<(SpatialMesh, [Vec<f64>; 3])> {
    let [a, b, t] = paths.map(FieldFile::load);
    let (a, b, t) = (a?, b?, t?);
    let n = resolution_for(t.values.len())
        .ok_or_else(|| QpatError::Integrity(format!("{} values do not form a uniform mesh", t.values.len())))?;
    let mesh = SpatialMesh::uniform(n)?;
    for f in [&a, &b, &t] {
        f.check_mesh(&mesh)?;
    }
    Ok((mesh, [a.values, b.values, t.values]))
}

fn cmd_compare(a: &Path, b: &Path, truth: &Path, csv: Option<&Path>) -> Result<()> {
    let (mesh, [va, vb, vt]) = load_on_common_mesh([a, b, truth])?;
    let ea = relative_error(&va, &vt, &mesh)?;
    let eb = relative_error(&vb, &vt, &mesh)?;
    println!("{:<40} relative L2 error", "reconstruction");
    println!("{:<40} {ea:.6}", a.display());
    println!("{:<40} {eb:.6}", b.display());
    if let Some(path) = csv {
        let n = mesh.resolution();
        let mid = n / 2;
        let mut text = String::from("section,index,x,y,truth,a,b\n");
        let mut row = |section: &str, idx: usize, v: usize| {
            let p = mesh.vertices()[v];
            text.push_str(&format!("{section},{idx},{},{},{},{},{}\n", p[0], p[1], vt[v], va[v], vb[v]));
        };
        for i in 0..=n {
            row("horizontal", i, mesh.vertex_index(i, mid));
        }
        for j in 0..=n {
            row("vertical", j, mesh.vertex_index(mid, j));
        }
        std::fs::write(path, text).map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

fn cmd_mesh_export(n: usize, out: Option<&Path>) -> Result<()> {
    let mesh = SpatialMesh::uniform(n)?;
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
            let mut w = std::io::BufWriter::new(file);
            mesh.write_text(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = std::io::stdout();
            match mesh.write_text(stdout.lock()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_error(Path::new("<stdout>"), e)),
                _ => Ok(()),
            }
        }
    }
}

fn cmd_selftest() -> Result<bool> {
    let mut ok = true;
    for check in checks::run_all()? {
        let status = if check.passed() { "PASS" } else { "FAIL" };
        println!("{status} {:<36} {:.3e} (tolerance {:.0e})", check.name, check.value, check.tolerance);
        ok &= check.passed();
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(QpatError::InvalidArgument("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| QpatError::InvalidArgument(e.to_string()))?;
    }
    faer::set_global_parallelism(faer::Par::Seq);
    match cli.command {
        Command::Simulate { config, out } => cmd_simulate(&config, &out)?,
        Command::Reconstruct {
            config,
            data_dir,
            method,
            out,
            sweep_lambda,
        } => {
            let out = out.unwrap_or_else(|| data_dir.clone());
            cmd_reconstruct(&config, &data_dir, method.into(), &out, sweep_lambda)?
        }
        Command::Compare {
            recon_a,
            recon_b,
            truth,
            csv,
        } => cmd_compare(&recon_a, &recon_b, &truth, csv.as_deref())?,
        Command::Mesh {
            action: MeshCommand::Export { n, out },
        } => cmd_mesh_export(n, out.as_deref())?,
        Command::Selftest => {
            if !cmd_selftest()? {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
