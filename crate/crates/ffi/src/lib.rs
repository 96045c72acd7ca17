//! C ABI for the qpat library.
//!
//! Objects are exposed as opaque handles created by `qpat_*_new`/`load`
//! functions and released with the matching `qpat_*_free`. Every fallible call
//! returns a [`QpatStatus`]; the message of the most recent failure on the
//! calling thread is available through [`qpat_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use qpat::acoustics::PressureData;
use qpat::experiment::{add_noise, reconstruct, relative_error, simulate_data, ExperimentConfig, Method, PhantomSpec};
use qpat::geometry::SpatialMesh;
use qpat::QpatError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Integrity = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Reconstruction pipeline.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpatMethod {
    SingleStage = 0,
    TwoStage = 1,
}

/// Experiment configuration.
pub struct QpatConfig(ExperimentConfig);

/// Pressure samples on the detector arc.
pub struct QpatPressure(PressureData);

/// Nodal field on a uniform mesh.
pub struct QpatField {
    mesh: SpatialMesh,
    values: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &QpatError) -> QpatStatus {
    match err {
        QpatError::InvalidArgument(_) | QpatError::Domain(_) => QpatStatus::InvalidArgument,
        QpatError::Config(_) | QpatError::ConfigLine { .. } => QpatStatus::Config,
        QpatError::Integrity(_) => QpatStatus::Integrity,
        QpatError::Io { .. } => QpatStatus::Io,
        QpatError::Assembly(_) | QpatError::Solver { .. } | QpatError::Numerical(_) => QpatStatus::Numerical,
    }
}

struct Failure(QpatStatus, String);

impl From<QpatError> for Failure {
    fn from(e: QpatError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(QpatStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QpatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QpatStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            QpatStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(QpatStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err(Failure(
            QpatStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qpat_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qpat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qpat_config_default(out: *mut *mut QpatConfig) -> QpatStatus {
    guard(|| store(out, QpatConfig(ExperimentConfig::default())))
}

/// Parses a `key = value` config file.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qpat_config_load(path: *const c_char, out: *mut *mut QpatConfig) -> QpatStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(&path_arg(path)?)?;
        store(out, QpatConfig(cfg))
    })
}

/// Overrides mesh resolutions and sampling counts.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpat_config_set_sizes(
    cfg: *mut QpatConfig,
    sim_n: usize,
    inv_n: usize,
    n_angles: usize,
    n_detectors: usize,
    n_times: usize,
) -> QpatStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        let next = ExperimentConfig {
            sim_n,
            inv_n,
            n_angles,
            n_detectors,
            n_times,
            ..cfg.0.clone()
        };
        next.validate().map_err(|m| Failure(QpatStatus::Config, m))?;
        cfg.0 = next;
        Ok(())
    })
}

/// Sets the number of proximal-gradient iterations.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpat_config_set_iterations(cfg: *mut QpatConfig, iters: usize) -> QpatStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        if iters == 0 {
            return Err(Failure(QpatStatus::Config, "iterations must be positive".into()));
        }
        cfg.0.iters = iters;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qpat_config_free(cfg: *mut QpatConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Simulates clean pressure data for the standard phantom and returns the
/// true absorption coefficient on the inversion mesh.
///
/// # Safety
/// `cfg` must be a live handle; `data` and `truth` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qpat_simulate(
    cfg: *const QpatConfig,
    data: *mut *mut QpatPressure,
    truth: *mut *mut QpatField,
) -> QpatStatus {
    guard(|| {
        let cfg = &borrow(cfg, "config")?.0;
        if data.is_null() || truth.is_null() {
            return Err(null("output pointer"));
        }
        let sim = simulate_data(&PhantomSpec::standard(cfg.sigma, cfg.g), cfg)?;
        let mesh = SpatialMesh::uniform(cfg.inv_n)?;
        let pressure = sim.data.into_iter().next().expect("one illumination");
        store(data, QpatPressure(pressure))?;
        store(
            truth,
            QpatField {
                mesh,
                values: sim.mu_coarse,
            },
        )
    })
}

/// Adds Gaussian noise with standard deviation `level * max|v|`.
///
/// # Safety
/// `data` must be a live handle, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qpat_pressure_add_noise(
    data: *const QpatPressure,
    level: f64,
    seed: u64,
    out: *mut *mut QpatPressure,
) -> QpatStatus {
    guard(|| {
        let noisy = add_noise(&borrow(data, "pressure")?.0, level, seed)?;
        store(out, QpatPressure(noisy))
    })
}

/// Number of samples, `n_detectors * n_times`; 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpat_pressure_len(data: *const QpatPressure) -> usize {
    data.as_ref().map_or(0, |d| d.0.values.len())
}

/// Copies the samples (detector-major) into `buf`.
///
/// # Safety
/// `data` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qpat_pressure_copy(data: *const QpatPressure, buf: *mut f64, len: usize) -> QpatStatus {
    guard(|| copy_out(&borrow(data, "pressure")?.0.values, buf, len))
}

/// # Safety
/// `data` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qpat_pressure_save(data: *const QpatPressure, path: *const c_char) -> QpatStatus {
    guard(|| Ok(borrow(data, "pressure")?.0.save(&path_arg(path)?)?))
}

/// # Safety
/// `path` must be a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qpat_pressure_load(path: *const c_char, out: *mut *mut QpatPressure) -> QpatStatus {
    guard(|| {
        let data = PressureData::load(&path_arg(path)?)?;
        store(out, QpatPressure(data))
    })
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qpat_pressure_free(data: *mut QpatPressure) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Reconstructs the absorption coefficient on the inversion mesh.
///
/// # Safety
/// `cfg` and `data` must be live handles, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qpat_reconstruct(
    cfg: *const QpatConfig,
    data: *const QpatPressure,
    method: QpatMethod,
    out: *mut *mut QpatField,
) -> QpatStatus {
    guard(|| {
        let cfg = &borrow(cfg, "config")?.0;
        let data = std::slice::from_ref(&borrow(data, "pressure")?.0);
        let method = match method {
            QpatMethod::SingleStage => Method::SingleStage,
            QpatMethod::TwoStage => Method::TwoStage,
        };
        let (coeffs, _) = reconstruct(&PhantomSpec::standard(cfg.sigma, cfg.g), cfg, data, method)?;
        store(
            out,
            QpatField {
                mesh: SpatialMesh::uniform(cfg.inv_n)?,
                values: coeffs.mu,
            },
        )
    })
}

/// Number of nodal values; 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qpat_field_len(field: *const QpatField) -> usize {
    field.as_ref().map_or(0, |f| f.values.len())
}

/// Copies the nodal values into `buf`.
///
/// # Safety
/// `field` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qpat_field_copy(field: *const QpatField, buf: *mut f64, len: usize) -> QpatStatus {
    guard(|| copy_out(&borrow(field, "field")?.values, buf, len))
}

/// Relative `L^2` error of `recon` against `truth`.
///
/// # Safety
/// `recon` and `truth` must be live handles, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qpat_field_relative_error(
    recon: *const QpatField,
    truth: *const QpatField,
    out: *mut f64,
) -> QpatStatus {
    guard(|| {
        let (a, t) = (borrow(recon, "recon")?, borrow(truth, "truth")?);
        if a.mesh.mesh_hash() != t.mesh.mesh_hash() {
            return Err(Failure(QpatStatus::Integrity, "fields live on different meshes".into()));
        }
        let e = relative_error(&a.values, &t.values, &t.mesh)?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = e;
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qpat_field_free(field: *mut QpatField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}
