//! C ABI over the `lsdm` crate: load trained networks and generator bundles,
//! run them on row-major `double` buffers, and compute exact W1 distances and
//! f-divergences.
//!
//! Every function returns an [`LsdmStatus`]. On failure a message is kept per
//! thread and can be read with [`lsdm_last_error`]. Panics never cross the
//! boundary; they are reported as `LSDM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lsdm::engine::checkpoint::CheckpointError;
use lsdm::engine::{lipschitz_upper_bound, Network, Tensor};
use lsdm::harness::{load_checkpoint, Checkpoint};
use lsdm::lsdm::{generate_conditional, load_bundle, GeneratorBundle};
use lsdm::ot::{f_divergence, w1_1d_weighted, w1_exact_equal, DiscreteDist1D, DivergenceKind, EmpiricalSample, Histogram};
use lsdm::Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    /// Malformed file, version mismatch or wrong kind.
    Checkpoint = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsdmDivergence {
    Kl = 0,
    Js = 1,
    Chi2 = 2,
    Tv = 3,
    Hellinger2 = 4,
}

impl From<LsdmDivergence> for DivergenceKind {
    fn from(d: LsdmDivergence) -> Self {
        match d {
            LsdmDivergence::Kl => DivergenceKind::Kl,
            LsdmDivergence::Js => DivergenceKind::Js,
            LsdmDivergence::Chi2 => DivergenceKind::Chi2,
            LsdmDivergence::Tv => DivergenceKind::Tv,
            LsdmDivergence::Hellinger2 => DivergenceKind::Hellinger2,
        }
    }
}

/// Opaque trained MLP.
pub struct LsdmNetwork {
    net: Network,
}

/// Opaque generator bundle (autoencoder plus latent generator).
pub struct LsdmBundle {
    bundle: GeneratorBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LsdmStatus, String);

impl Failure {
    fn new(status: LsdmStatus, msg: impl ToString) -> Self {
        Failure(status, msg.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = match e {
            CheckpointError::Io { .. } => LsdmStatus::Io,
            CheckpointError::Shape(_) => LsdmStatus::ShapeMismatch,
            _ => LsdmStatus::Checkpoint,
        };
        Failure::new(status, e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LsdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsdmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            LsdmStatus::Panic
        }
    }
}

fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(Failure::new(LsdmStatus::NullPointer, "path is null"));
    }
    let s = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| Failure::new(LsdmStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(LsdmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn write_out(out: *mut f64, out_len: usize, values: &[f64]) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(LsdmStatus::NullPointer, "output buffer is null"));
    }
    if out_len < values.len() {
        return Err(Failure::new(
            LsdmStatus::ShapeMismatch,
            format!("output buffer holds {out_len} values, {} needed", values.len()),
        ));
    }
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
    Ok(())
}

fn write_scalar(out: *mut f64, v: f64) -> Result<(), Failure> {
    write_out(out, 1, &[v])
}

fn tensor(data: &[f64], rows: usize, cols: usize) -> Result<Tensor, Failure> {
    Tensor::new(rows, cols, data.to_vec()).map_err(|e| Failure::new(LsdmStatus::ShapeMismatch, e))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lsdm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads an `mlp` checkpoint. Free with [`lsdm_network_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lsdm_network_load(path: *const c_char, out: *mut *mut LsdmNetwork) -> LsdmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(LsdmStatus::NullPointer, "out is null"));
        }
        let net = match load_checkpoint(&path_arg(path)?)? {
            Checkpoint::Mlp(net, _) => net,
            other => {
                return Err(Failure::new(LsdmStatus::Checkpoint, format!("expected an mlp checkpoint, found {}", other.kind())))
            }
        };
        unsafe { *out = Box::into_raw(Box::new(LsdmNetwork { net })) };
        Ok(())
    })
}

/// # Safety
/// `net` must come from [`lsdm_network_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lsdm_network_free(net: *mut LsdmNetwork) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

/// Writes the input and output widths.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lsdm_network_dims(net: *const LsdmNetwork, input_dim: *mut usize, output_dim: *mut usize) -> LsdmStatus {
    guard(|| {
        if net.is_null() || input_dim.is_null() || output_dim.is_null() {
            return Err(Failure::new(LsdmStatus::NullPointer, "null argument"));
        }
        let net = unsafe { &(*net).net };
        unsafe {
            *input_dim = net.input_dim();
            *output_dim = net.output_dim();
        }
        Ok(())
    })
}

/// Forward pass on `rows × input_dim` row-major input; writes `rows × output_dim` values.
///
/// # Safety
/// `input` must hold `rows * input_dim` values and `output` `output_len` values.
#[no_mangle]
pub unsafe extern "C" fn lsdm_network_forward(
    net: *const LsdmNetwork,
    input: *const f64,
    rows: usize,
    input_dim: usize,
    output: *mut f64,
    output_len: usize,
) -> LsdmStatus {
    guard(|| {
        if net.is_null() {
            return Err(Failure::new(LsdmStatus::NullPointer, "network is null"));
        }
        let net = unsafe { &(*net).net };
        if input_dim != net.input_dim() {
            return Err(Failure::new(
                LsdmStatus::ShapeMismatch,
                format!("network expects {} inputs, got {input_dim}", net.input_dim()),
            ));
        }
        let x = tensor(slice(input, rows * input_dim, "input")?, rows, input_dim)?;
        let y = net.forward(&x).map_err(|e| Failure::new(LsdmStatus::ShapeMismatch, e))?;
        write_out(output, output_len, y.data())
    })
}

/// Product of layer spectral norms and activation slope bounds.
///
/// # Safety
/// `net` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lsdm_network_lipschitz_bound(net: *const LsdmNetwork, out: *mut f64) -> LsdmStatus {
    guard(|| {
        if net.is_null() {
            return Err(Failure::new(LsdmStatus::NullPointer, "network is null"));
        }
        let k = lipschitz_upper_bound(unsafe { &(*net).net }).map_err(|e| Failure::new(LsdmStatus::Numeric, e))?;
        write_scalar(out, k)
    })
}

/// Loads a `bundle` checkpoint. Free with [`lsdm_bundle_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lsdm_bundle_load(path: *const c_char, out: *mut *mut LsdmBundle) -> LsdmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(LsdmStatus::NullPointer, "out is null"));
        }
        let bundle = load_bundle(&path_arg(path)?)?;
        unsafe { *out = Box::into_raw(Box::new(LsdmBundle { bundle })) };
        Ok(())
    })
}

/// # Safety
/// `bundle` must come from [`lsdm_bundle_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lsdm_bundle_free(bundle: *mut LsdmBundle) {
    if !bundle.is_null() {
        drop(unsafe { Box::from_raw(bundle) });
    }
}

/// Writes the predictor width `p` and the response width.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lsdm_bundle_dims(bundle: *const LsdmBundle, predictor_dim: *mut usize, response_dim: *mut usize) -> LsdmStatus {
    guard(|| {
        if bundle.is_null() || predictor_dim.is_null() || response_dim.is_null() {
            return Err(Failure::new(LsdmStatus::NullPointer, "null argument"));
        }
        let b = unsafe { &(*bundle).bundle };
        unsafe {
            *predictor_dim = b.generator.predictor_dim();
            *response_dim = b.ae.response_dim();
        }
        Ok(())
    })
}

/// Draws `count` responses per row of `x` (`rows × predictor_dim`), grouped by
/// row, into `output` (`rows * count * response_dim` values). The same `seed`
/// gives the same draws.
///
/// # Safety
/// Buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn lsdm_bundle_generate(
    bundle: *const LsdmBundle,
    x: *const f64,
    rows: usize,
    predictor_dim: usize,
    count: usize,
    seed: u64,
    output: *mut f64,
    output_len: usize,
) -> LsdmStatus {
    guard(|| {
        if bundle.is_null() {
            return Err(Failure::new(LsdmStatus::NullPointer, "bundle is null"));
        }
        let b = unsafe { &(*bundle).bundle };
        if predictor_dim != b.generator.predictor_dim() {
            return Err(Failure::new(
                LsdmStatus::ShapeMismatch,
                format!("bundle expects {} predictors, got {predictor_dim}", b.generator.predictor_dim()),
            ));
        }
        let x = tensor(slice(x, rows * predictor_dim, "x")?, rows, predictor_dim)?;
        let y = generate_conditional(b, &x, count, &mut Rng::new(seed)).map_err(|e| Failure::new(LsdmStatus::Numeric, e))?;
        write_out(output, output_len, y.data())
    })
}

/// Exact W1 between two equal-size point clouds (`n × dim`, row-major).
///
/// # Safety
/// `a` and `b` must hold `n * dim` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lsdm_w1_exact(a: *const f64, b: *const f64, n: usize, dim: usize, out: *mut f64) -> LsdmStatus {
    guard(|| {
        let sample = |p, what| -> Result<EmpiricalSample, Failure> {
            EmpiricalSample::new(tensor(slice(p, n * dim, what)?, n, dim)?).map_err(|e| Failure::new(LsdmStatus::InvalidArgument, e))
        };
        let (sa, sb) = (sample(a, "a")?, sample(b, "b")?);
        let w = w1_exact_equal(&sa, &sb).map_err(|e| Failure::new(LsdmStatus::InvalidArgument, e))?.0;
        write_scalar(out, w)
    })
}

/// W1 between two weighted distributions on the line. Supports must be
/// strictly increasing; weights are normalized.
///
/// # Safety
/// Each support/weight pair must hold its stated count; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lsdm_w1_1d(
    support_p: *const f64,
    weights_p: *const f64,
    len_p: usize,
    support_q: *const f64,
    weights_q: *const f64,
    len_q: usize,
    out: *mut f64,
) -> LsdmStatus {
    guard(|| {
        let dist = |s, w, len| -> Result<DiscreteDist1D, Failure> {
            DiscreteDist1D::from_weights(slice(s, len, "support")?.to_vec(), slice(w, len, "weights")?)
                .map_err(|e| Failure::new(LsdmStatus::InvalidArgument, e))
        };
        let w = w1_1d_weighted(&dist(support_p, weights_p, len_p)?, &dist(support_q, weights_q, len_q)?);
        write_scalar(out, w)
    })
}

/// `D_f(p‖q)` for two histograms on the same `len` bins.
///
/// # Safety
/// `p` and `q` must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lsdm_f_divergence(
    p: *const f64,
    q: *const f64,
    len: usize,
    kind: LsdmDivergence,
    out: *mut f64,
) -> LsdmStatus {
    guard(|| {
        let hist = |v, what| -> Result<Histogram, Failure> {
            Histogram::new(slice(v, len, what)?.to_vec()).map_err(|e| Failure::new(LsdmStatus::InvalidArgument, e))
        };
        let d = f_divergence(&hist(p, "p")?, &hist(q, "q")?, kind.into()).map_err(|e| Failure::new(LsdmStatus::InvalidArgument, e))?;
        write_scalar(out, d)
    })
}
