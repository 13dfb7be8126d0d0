//! C ABI for the fracritz solver.
//!
//! Every fallible function returns a [`FrzStatus`]; on failure the message
//! is kept per thread and read with [`frz_last_error_message`]. Models are
//! opaque [`FrzModel`] handles released with [`frz_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fracritz::ad::FnnShape;
use fracritz::ansatz::{read_checkpoint, write_checkpoint, AnsatzEval, AnsatzKind, NetParams, ProblemSpec, TrialFunction};
use fracritz::config::RunConfig;
use fracritz::domain::uniform_test_points;
use fracritz::quadrature::sinc_scheme;
use fracritz::reference::{network_l2_error, ModelProblem};
use fracritz::training::{init_params, train_from, InitRange, TrainHooks};
use fracritz::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrzStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Checkpoint = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Ansatz selector for [`frz_model_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrzAnsatz {
    Special = 0,
    Simple = 1,
}

/// Trained or freshly initialized network bound to its problem.
pub struct FrzModel {
    params: NetParams,
    spec: ProblemSpec,
    model: Option<ModelProblem>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FrzStatus {
    match e {
        Error::Config(_) => FrzStatus::Config,
        Error::Checkpoint(_) => FrzStatus::Checkpoint,
        Error::Io { .. } => FrzStatus::Io,
        Error::Contract(_) | Error::PsiTable(_) => FrzStatus::InvalidArgument,
        _ => FrzStatus::Numerical,
    }
}

struct Fail(FrzStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FrzStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(FrzStatus::InvalidArgument, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> FrzStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FrzStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside fracritz".into());
            FrzStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(m: *const FrzModel) -> Result<&'a FrzModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn boxed(params: NetParams, spec: ProblemSpec, model: Option<ModelProblem>) -> *mut FrzModel {
    Box::into_raw(Box::new(FrzModel { params, spec, model }))
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating NUL; 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn frz_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message into `buf` (NUL terminated, truncated to
/// `len − 1` bytes). Returns the number of bytes written without the NUL.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn frz_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// NUL-terminated crate version; static storage.
#[no_mangle]
pub extern "C" fn frz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of sinc nodes for fraction `s` and step `h_bar`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn frz_sinc_node_count(s: f64, h_bar: f64, out: *mut usize) -> FrzStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = sinc_scheme(s, h_bar)?.len();
        Ok(())
    })
}

/// Seeded initialization on `(−1, 1)^dim` with the sine-product source.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn frz_model_new(
    kind: FrzAnsatz,
    depth: usize,
    width: usize,
    dim: usize,
    s: f64,
    seed: u64,
    out: *mut *mut FrzModel,
) -> FrzStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let kind = match kind {
            FrzAnsatz::Special => AnsatzKind::Special,
            FrzAnsatz::Simple => AnsatzKind::Simple,
        };
        let mp = ModelProblem::new(dim, s)?;
        let shape = FnnShape::new(depth, width, dim + 1)?;
        let params = init_params(kind, shape, InitRange::Scaled, seed);
        *out = boxed(params, mp.spec().clone(), Some(mp));
        Ok(())
    })
}

/// Loads a checkpoint written by `solve` or [`frz_model_save`]; the config
/// supplies the problem and must agree with the stored shape.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn frz_model_load(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut FrzModel,
) -> FrzStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = RunConfig::load(&path_arg(config_path, "config_path")?)?;
        let params = read_checkpoint(&path_arg(checkpoint_path, "checkpoint_path")?)?;
        if params.kind() != cfg.ansatz.kind || params.shape() != cfg.shape()? {
            return Err(Fail(
                FrzStatus::Checkpoint,
                "checkpoint ansatz or shape differs from the config".into(),
            ));
        }
        *out = boxed(params, cfg.problem_spec()?, cfg.model_problem()?);
        Ok(())
    })
}

/// Trains from the config at `config_path`; `seed < 0` keeps the config's
/// seed. `model_out` and `error_out` may be null. `error_out` receives NaN
/// when the problem has no closed-form solution.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; non-null outputs must be
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn frz_solve(
    config_path: *const c_char,
    seed: i64,
    model_out: *mut *mut FrzModel,
    error_out: *mut f64,
) -> FrzStatus {
    guard(|| {
        let mut cfg = RunConfig::load(&path_arg(config_path, "config_path")?)?;
        if seed >= 0 {
            cfg.training.seed = seed as u64;
        }
        let spec = cfg.problem_spec()?;
        let mp = cfg.model_problem()?;
        let tc = cfg.train_config();
        let init = init_params(cfg.ansatz.kind, cfg.shape()?, tc.init, tc.seed);
        let out = train_from(&spec, init, &cfg.quad_config(), &tc, mp.as_ref(), TrainHooks::default())?;
        if let Some(e) = error_out.as_mut() {
            *e = out.report.final_error.unwrap_or(f64::NAN);
        }
        if let Some(m) = model_out.as_mut() {
            *m = boxed(out.params, spec, mp);
        }
        Ok(())
    })
}

/// Writes the model's parameters as a checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn frz_model_save(model: *const FrzModel, path: *const c_char) -> FrzStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_checkpoint(&path_arg(path, "path")?, &m.params)?;
        Ok(())
    })
}

/// Spatial dimension `d`.
///
/// # Safety
/// `model` must come from this library; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn frz_model_dim(model: *const FrzModel, out: *mut usize) -> FrzStatus {
    guard(|| {
        *out_ref(out, "out")? = model_ref(model)?.spec.dim();
        Ok(())
    })
}

/// Total number of trainable scalars.
///
/// # Safety
/// `model` must come from this library; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn frz_model_param_count(model: *const FrzModel, out: *mut usize) -> FrzStatus {
    guard(|| {
        *out_ref(out, "out")? = model_ref(model)?.params.len();
        Ok(())
    })
}

/// `φ(x, y)` at one point; `x` holds `dim` coordinates.
///
/// # Safety
/// `model` must come from this library; `x` must hold `dim` values; `out`
/// must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn frz_model_eval(
    model: *const FrzModel,
    x: *const f64,
    dim: usize,
    y: f64,
    out: *mut f64,
) -> FrzStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_ref(out, "out")?;
        if x.is_null() {
            return Err(null("x"));
        }
        if dim != m.spec.dim() {
            return Err(invalid(format!("dim = {dim}, the model has {}", m.spec.dim())));
        }
        let x = std::slice::from_raw_parts(x, dim);
        *out = AnsatzEval::new(&m.params, &m.spec)?.value(x, y)?;
        Ok(())
    })
}

/// Traces `φ(x, 0)` at `count` points stored row-major in `xs`
/// (`count · dim` values), written to `out` (`count` values).
///
/// # Safety
/// `model` must come from this library; `xs` and `out` must hold the stated
/// number of values.
#[no_mangle]
pub unsafe extern "C" fn frz_model_trace(
    model: *const FrzModel,
    xs: *const f64,
    count: usize,
    dim: usize,
    out: *mut f64,
) -> FrzStatus {
    guard(|| {
        let m = model_ref(model)?;
        if xs.is_null() {
            return Err(null("xs"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if dim != m.spec.dim() {
            return Err(invalid(format!("dim = {dim}, the model has {}", m.spec.dim())));
        }
        let xs = std::slice::from_raw_parts(xs, count * dim);
        let out = std::slice::from_raw_parts_mut(out, count);
        let mut eval = AnsatzEval::new(&m.params, &m.spec)?;
        for (x, o) in xs.chunks_exact(dim).zip(out.iter_mut()) {
            *o = eval.trace(x)?;
        }
        Ok(())
    })
}

/// Learned decay rates `(γ′, γ″)`; `(0.5, 0.5)` for the simple ansatz.
///
/// # Safety
/// `model` must come from this library; outputs must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn frz_model_decay_rates(model: *const FrzModel, g1: *mut f64, g2: *mut f64) -> FrzStatus {
    guard(|| {
        let m = model_ref(model)?;
        let (a, b) = m.params.decay_rates();
        *out_ref(g1, "g1")? = a;
        *out_ref(g2, "g2")? = b;
        Ok(())
    })
}

/// Relative `ℓ²` trace error against the closed-form solution on `points`
/// uniform test points drawn with `seed`.
///
/// # Safety
/// `model` must come from this library; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn frz_model_error(model: *const FrzModel, points: usize, seed: u64, out: *mut f64) -> FrzStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_ref(out, "out")?;
        let mp = m
            .model
            .as_ref()
            .ok_or_else(|| invalid("no closed-form solution for this problem"))?;
        let test = uniform_test_points(mp.spec().domain(), points, seed)?;
        *out = network_l2_error(&m.params, mp, &test)?;
        Ok(())
    })
}

/// Releases a model; null is a no-op.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn frz_model_free(model: *mut FrzModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let mut buf = vec![0 as c_char; 512];
        let n = unsafe { frz_last_error_message(buf.as_mut_ptr(), buf.len()) };
        let bytes: Vec<u8> = buf[..n].iter().map(|&c| c as u8).collect();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn null_outputs_are_reported() {
        let st = unsafe { frz_sinc_node_count(0.5, 1.0 / 3.0, ptr::null_mut()) };
        assert_eq!(st, FrzStatus::NullPointer);
        assert_eq!(last_error(), "out is null");
        assert_eq!(frz_last_error_length(), "out is null".len());
    }

    #[test]
    fn success_clears_the_error() {
        let mut n = 0;
        assert_eq!(unsafe { frz_sinc_node_count(2.0, 1.0, &mut n) }, FrzStatus::InvalidArgument);
        assert!(frz_last_error_length() > 0);
        assert_eq!(unsafe { frz_sinc_node_count(0.5, 1.0 / 3.0, &mut n) }, FrzStatus::Ok);
        assert_eq!(frz_last_error_length(), 0);
        assert_eq!(n, sinc_scheme(0.5, 1.0 / 3.0).unwrap().len());
    }

    #[test]
    fn truncated_message_is_terminated() {
        unsafe { frz_model_free(ptr::null_mut()) };
        let st = unsafe { frz_model_param_count(ptr::null(), ptr::null_mut()) };
        assert_eq!(st, FrzStatus::NullPointer);
        let mut buf = [1 as c_char; 4];
        let n = unsafe { frz_last_error_message(buf.as_mut_ptr(), 4) };
        assert_eq!(n, 3);
        assert_eq!(buf[3], 0);
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(frz_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
