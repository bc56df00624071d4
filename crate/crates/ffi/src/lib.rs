//! C ABI over the `ctxid` core.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `*_load` and released by the matching `*_free`. Every fallible call returns
//! a [`CtxidStatus`] code; the message of the last failure on the calling
//! thread is available from [`ctxid_last_error`]. Output buffers are supplied
//! by the caller together with their lengths, which must match exactly.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ctxid::diffnet::{self, Activation, MlpSpec, ParameterSet};
use ctxid::metalearn::{self, ContextVector, Normalizer, TrainedModel};
use ctxid::systems::{self, SpringParams};
use ctxid::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtxidStatus {
    Ok = 0,
    NullPointer = 1,
    Shape = 2,
    InvalidArgument = 3,
    NonFinite = 4,
    Numerical = 5,
    Config = 6,
    Format = 7,
    Io = 8,
    Panic = 9,
}

impl From<&Error> for CtxidStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) => CtxidStatus::Shape,
            Error::InvalidArgument(_) => CtxidStatus::InvalidArgument,
            Error::NonFinite(_) => CtxidStatus::NonFinite,
            Error::Numerical(_) => CtxidStatus::Numerical,
            Error::Config(_) => CtxidStatus::Config,
            Error::Format(_) | Error::Csv(_) => CtxidStatus::Format,
            Error::Io(_) => CtxidStatus::Io,
        }
    }
}

/// Multi-layer perceptron: layer sizes, SiLU hidden activations, parameters.
pub struct CtxidMlp {
    spec: MlpSpec,
    params: ParameterSet,
}

/// Trained context model loaded from a manifest, with its normalizer if one
/// was saved.
pub struct CtxidModel {
    model: TrainedModel,
    norm: Option<Normalizer>,
}

/// Constants of the two-mass, three-spring chain.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CtxidSpringParams {
    pub m1: f64,
    pub m2: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_error(msg: String) {
    LAST_ERROR.with(|m| *m.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtxidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CtxidStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CtxidStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            CtxidStatus::from(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CtxidStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

fn copy_out(src: &[f64], dst: &mut [f64], what: &str) -> Result<(), Failure> {
    if src.len() != dst.len() {
        return Err(Error::shape(format!("{what}: expected length {}, got {}", src.len(), dst.len())).into());
    }
    dst.copy_from_slice(src);
    Ok(())
}

fn rows(flat: &[f64], width: usize, n: usize, what: &str) -> Result<Vec<Vec<f64>>, Failure> {
    if flat.len() != width * n {
        return Err(Error::shape(format!("{what}: expected {n} rows of {width}, got {} values", flat.len())).into());
    }
    Ok(flat.chunks(width.max(1)).map(<[f64]>::to_vec).collect())
}

/// Copies the last error message of this thread into `buf` (NUL terminated,
/// truncated to `len - 1` bytes) and returns the full message length. An
/// empty string means the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ctxid_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|m| {
        let m = m.borrow();
        if !buf.is_null() && len > 0 {
            let n = m.len().min(len - 1);
            std::ptr::copy_nonoverlapping(m.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        m.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ctxid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `x * sigmoid(x)`.
#[no_mangle]
pub extern "C" fn ctxid_silu(x: f64) -> f64 {
    diffnet::silu(x)
}

/// Creates a network with `n_layers` sizes (input first), SiLU hidden
/// layers and Glorot-uniform weights drawn from `seed`.
///
/// # Safety
/// `sizes` must point to `n_layers` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctxid_mlp_new(sizes: *const usize, n_layers: usize, seed: u64, out: *mut *mut CtxidMlp) -> CtxidStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if sizes.is_null() {
            return Err(Failure::Null("sizes"));
        }
        let sizes = std::slice::from_raw_parts(sizes, n_layers).to_vec();
        let spec = MlpSpec::new(sizes, Activation::Silu)?;
        let params = diffnet::init_params(&spec, seed);
        *out = Box::into_raw(Box::new(CtxidMlp { spec, params }));
        Ok(())
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `mlp` must come from [`ctxid_mlp_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctxid_mlp_free(mlp: *mut CtxidMlp) {
    if !mlp.is_null() {
        drop(Box::from_raw(mlp));
    }
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `mlp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxid_mlp_param_count(mlp: *const CtxidMlp) -> usize {
    mlp.as_ref().map_or(0, |m| m.params.len())
}

/// Input width, or 0 for a null handle.
///
/// # Safety
/// `mlp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxid_mlp_input_dim(mlp: *const CtxidMlp) -> usize {
    mlp.as_ref().map_or(0, |m| m.spec.input_dim())
}

/// Output width, or 0 for a null handle.
///
/// # Safety
/// `mlp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxid_mlp_output_dim(mlp: *const CtxidMlp) -> usize {
    mlp.as_ref().map_or(0, |m| m.spec.output_dim())
}

/// Copies the flat parameter vector into `dst`.
///
/// # Safety
/// `dst` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ctxid_mlp_get_params(mlp: *const CtxidMlp, dst: *mut f64, len: usize) -> CtxidStatus {
    guard(|| {
        let m = obj(mlp, "mlp")?;
        copy_out(m.params.values(), slice_mut(dst, len, "dst")?, "parameters")
    })
}

/// Replaces the flat parameter vector. Values must be finite.
///
/// # Safety
/// `mlp` must be a live handle and `src` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn ctxid_mlp_set_params(mlp: *mut CtxidMlp, src: *const f64, len: usize) -> CtxidStatus {
    guard(|| {
        let m = mlp.as_mut().ok_or(Failure::Null("mlp"))?;
        let src = slice(src, len, "src")?;
        let p = ParameterSet::new(m.spec.layer_shapes(), src.to_vec())?;
        m.params = p;
        Ok(())
    })
}

/// Evaluates the network on one input.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ctxid_mlp_forward(
    mlp: *const CtxidMlp,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
) -> CtxidStatus {
    guard(|| {
        let m = obj(mlp, "mlp")?;
        let y = diffnet::forward(&m.spec, &m.params, slice(input, input_len, "input")?)?;
        copy_out(&y, slice_mut(output, output_len, "output")?, "output")
    })
}

/// Gradients of `upstream . f(input)` with respect to the parameters and the
/// input.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ctxid_mlp_backward(
    mlp: *const CtxidMlp,
    input: *const f64,
    input_len: usize,
    upstream: *const f64,
    upstream_len: usize,
    grad_params: *mut f64,
    grad_params_len: usize,
    grad_input: *mut f64,
    grad_input_len: usize,
) -> CtxidStatus {
    guard(|| {
        let m = obj(mlp, "mlp")?;
        let g = diffnet::backward(
            &m.spec,
            &m.params,
            slice(input, input_len, "input")?,
            slice(upstream, upstream_len, "upstream")?,
        )?;
        copy_out(&g.wrt_params, slice_mut(grad_params, grad_params_len, "grad_params")?, "parameter gradient")?;
        copy_out(&g.wrt_inputs, slice_mut(grad_input, grad_input_len, "grad_input")?, "input gradient")
    })
}

/// Loads a trained context model from its manifest file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctxid_model_load(path: *const c_char, out: *mut *mut CtxidModel) -> CtxidStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::invalid("path is not valid UTF-8"))?;
        let (model, manifest) = metalearn::load_trained_model(Path::new(path))?;
        *out = Box::into_raw(Box::new(CtxidModel {
            model,
            norm: manifest.normalizer,
        }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`ctxid_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctxid_model_free(model: *mut CtxidModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of `x`, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxid_model_x_dim(model: *const CtxidModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.x_dim())
}

/// Width of `y`, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxid_model_y_dim(model: *const CtxidModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.spec.output_dim())
}

/// Context dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxid_model_context_dim(model: *const CtxidModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.cfg.d_c)
}

/// Fits a context to `n` observed pairs with `steps` inner steps from zero,
/// using the live parameters. `xs` and `ys` are row-major. Inputs and outputs
/// are in physical units; a saved normalizer is applied internally.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ctxid_model_infer_context(
    model: *const CtxidModel,
    xs: *const f64,
    ys: *const f64,
    n: usize,
    steps: usize,
    context: *mut f64,
    context_len: usize,
) -> CtxidStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let (dx, dy) = (m.model.x_dim(), m.model.spec.output_dim());
        let mut xr = rows(slice(xs, n * dx, "xs")?, dx, n, "xs")?;
        let mut yr = rows(slice(ys, n * dy, "ys")?, dy, n, "ys")?;
        if let Some(norm) = &m.norm {
            xr = xr.iter().map(|x| norm.apply_x(x)).collect();
            yr = yr.iter().map(|y| norm.apply_y(y)).collect();
        }
        let (c, _) = metalearn::infer_context(&m.model, &xr, &yr, steps, false)?;
        copy_out(&c.values, slice_mut(context, context_len, "context")?, "context")
    })
}

/// Predicts `y` for one `x` under a context from
/// [`ctxid_model_infer_context`].
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ctxid_model_predict(
    model: *const CtxidModel,
    context: *const f64,
    context_len: usize,
    x: *const f64,
    x_len: usize,
    y: *mut f64,
    y_len: usize,
) -> CtxidStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let c = ContextVector::new(slice(context, context_len, "context")?.to_vec())?;
        let mut x = slice(x, x_len, "x")?.to_vec();
        if let Some(norm) = &m.norm {
            if x.len() == norm.x_dim() {
                x = norm.apply_x(&x);
            }
        }
        let mut pred = metalearn::predict_adapted(&m.model, &c, &x)?;
        if let Some(norm) = &m.norm {
            pred = norm.invert_y(&pred);
        }
        copy_out(&pred, slice_mut(y, y_len, "y")?, "prediction")
    })
}

/// Minimum-norm least-squares polynomial fit of degree `degree` to `n`
/// points. Writes `degree + 1` coefficients in ascending order.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ctxid_classical_poly_fit(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    degree: usize,
    coeffs: *mut f64,
    coeffs_len: usize,
) -> CtxidStatus {
    guard(|| {
        let c = metalearn::classical_sysid_poly(slice(xs, n, "xs")?, slice(ys, n, "ys")?, degree)?;
        copy_out(&c, slice_mut(coeffs, coeffs_len, "coeffs")?, "coefficients")
    })
}

/// Number of states [`ctxid_spring_simulate`] writes for this horizon,
/// including the initial one, or 0 when the step is invalid.
#[no_mangle]
pub extern "C" fn ctxid_spring_state_count(duration: f64, dt: f64) -> usize {
    systems::steps_for(duration, dt).map_or(0, |n| n + 1)
}

/// Integrates the spring chain with RK4 from `s0 = (x1, x2, v1, v2)` and
/// writes the states row-major into `states` (`4 * count` values).
///
/// # Safety
/// `params` and `s0` (4 values) must be readable; `states` must point to
/// `states_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ctxid_spring_simulate(
    params: *const CtxidSpringParams,
    s0: *const f64,
    duration: f64,
    dt: f64,
    states: *mut f64,
    states_len: usize,
) -> CtxidStatus {
    guard(|| {
        let p = obj(params, "params")?;
        let p = SpringParams {
            m1: p.m1,
            m2: p.m2,
            k1: p.k1,
            k2: p.k2,
            k3: p.k3,
        };
        let s = slice(s0, 4, "s0")?;
        let traj = systems::simulate_spring(&p, &[s[0], s[1], s[2], s[3]], duration, dt)?;
        let flat: Vec<f64> = traj.states.concat();
        copy_out(&flat, slice_mut(states, states_len, "states")?, "states")
    })
}
