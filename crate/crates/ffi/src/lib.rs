//! C ABI over `ldsa_core`.
//!
//! Objects cross the boundary as opaque heap handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! [`LdsaStatus`]; the message of the most recent failure on the calling
//! thread is available from [`ldsa_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ldsa_core::attention::{AttentionParams, Mechanism};
use ldsa_core::checkpoint::{load_attention, load_encoder, save_attention, save_encoder};
use ldsa_core::encoder::{count_params, encoder_forward, EncoderConfig, EncoderParams};
use ldsa_core::numerics::{Matrix, Rng};
use ldsa_core::train::noam_lr;
use ldsa_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdsaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Capacity = 4,
    TooShort = 5,
    Config = 6,
    Parse = 7,
    Io = 8,
    Numerical = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdsaMechanism {
    Sa = 0,
    Dsa = 1,
    Ldsa = 2,
}

impl From<LdsaMechanism> for Mechanism {
    fn from(m: LdsaMechanism) -> Self {
        match m {
            LdsaMechanism::Sa => Mechanism::Sa,
            LdsaMechanism::Dsa => Mechanism::Dsa,
            LdsaMechanism::Ldsa => Mechanism::Ldsa,
        }
    }
}

/// Dense row-major `f64` matrix.
pub struct LdsaMatrix(Matrix);

/// One attention layer (SA, DSA or LDSA) with its weights.
pub struct LdsaAttention(AttentionParams);

/// Full encoder: config plus weights.
pub struct LdsaEncoder {
    config: EncoderConfig,
    params: EncoderParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> LdsaStatus {
    match e {
        Error::Shape { .. } => LdsaStatus::Shape,
        Error::Capacity { .. } => LdsaStatus::Capacity,
        Error::TooShort { .. } => LdsaStatus::TooShort,
        Error::Config(_) => LdsaStatus::Config,
        Error::Parse(_) | Error::Json(_) | Error::Csv(_) => LdsaStatus::Parse,
        Error::Io(_) => LdsaStatus::Io,
        Error::Divergence { .. } | Error::InsufficientPoints { .. } => LdsaStatus::Numerical,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (LdsaStatus, String)>) -> LdsaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LdsaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            LdsaStatus::Panic
        }
    }
}

fn core<T>(r: ldsa_core::Result<T>) -> Result<T, (LdsaStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (LdsaStatus, String) {
    (LdsaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (LdsaStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (LdsaStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (LdsaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (LdsaStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ldsa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Copies `rows * cols` values from `data` (row-major) into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldsa_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut LdsaMatrix,
) -> LdsaStatus {
    guard(|| {
        if data.is_null() && rows * cols > 0 {
            return Err(null("data"));
        }
        let values = if rows * cols == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(data, rows * cols).to_vec()
        };
        put(out, LdsaMatrix(core(Matrix::new(rows, cols, values))?))
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ldsa_matrix_free(m: *mut LdsaMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn ldsa_matrix_rows(m: *const LdsaMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn ldsa_matrix_cols(m: *const LdsaMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the matrix into `dst`, which must hold at least `rows * cols` values.
///
/// # Safety
/// `m` must be a live matrix handle and `dst` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ldsa_matrix_copy_data(m: *const LdsaMatrix, dst: *mut f64, len: usize) -> LdsaStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        let src = m.0.data();
        if len < src.len() {
            return Err((
                LdsaStatus::InvalidArgument,
                format!("destination holds {len} values, matrix has {}", src.len()),
            ));
        }
        if !src.is_empty() {
            if dst.is_null() {
                return Err(null("destination"));
            }
            ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
        }
        Ok(())
    })
}

/// New Xavier-initialized attention layer. `context` is used by LDSA (odd)
/// and `t_max` by DSA; both are ignored otherwise.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldsa_attention_new(
    mechanism: LdsaMechanism,
    d: usize,
    heads: usize,
    context: usize,
    t_max: usize,
    seed: u64,
    out: *mut *mut LdsaAttention,
) -> LdsaStatus {
    guard(|| {
        let p = core(AttentionParams::init(
            mechanism.into(),
            d,
            heads,
            context,
            t_max,
            &mut Rng::new(seed),
        ))?;
        put(out, LdsaAttention(p))
    })
}

/// # Safety
/// `layer` must be NULL or a live attention handle.
#[no_mangle]
pub unsafe extern "C" fn ldsa_attention_free(layer: *mut LdsaAttention) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// `y = layer(x)` for a `T × d` input. The optional `weights_out` receives
/// the attention weights of head `head` (`T × T` for SA/DSA, `T × c` for LDSA).
///
/// # Safety
/// Handles must be live; `y_out` must be writable; `weights_out` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ldsa_attention_forward(
    layer: *const LdsaAttention,
    x: *const LdsaMatrix,
    y_out: *mut *mut LdsaMatrix,
    head: usize,
    weights_out: *mut *mut LdsaMatrix,
) -> LdsaStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        let x = deref(x, "x")?;
        if y_out.is_null() {
            return Err(null("y_out"));
        }
        let out = core(layer.0.forward(&x.0))?;
        if !weights_out.is_null() {
            let w = out.weights.get(head).ok_or_else(|| {
                (
                    LdsaStatus::InvalidArgument,
                    format!("head {head} out of range for {} heads", out.weights.len()),
                )
            })?;
            put(weights_out, LdsaMatrix(w.clone()))?;
        }
        put(y_out, LdsaMatrix(out.y))
    })
}

/// # Safety
/// `layer` must be live and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn ldsa_attention_save(layer: *const LdsaAttention, dir: *const c_char) -> LdsaStatus {
    guard(|| {
        let layer = deref(layer, "layer")?;
        let dir = PathBuf::from(c_str(dir, "dir")?);
        core(save_attention(&dir, &layer.0))
    })
}

/// # Safety
/// `dir` must be a NUL-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldsa_attention_load(dir: *const c_char, out: *mut *mut LdsaAttention) -> LdsaStatus {
    guard(|| {
        let dir = PathBuf::from(c_str(dir, "dir")?);
        put(out, LdsaAttention(core(load_attention(&dir))?))
    })
}

/// New encoder from an EncoderConfig JSON string with freshly initialized weights.
///
/// # Safety
/// `config_json` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldsa_encoder_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut LdsaEncoder,
) -> LdsaStatus {
    guard(|| {
        let config = core(EncoderConfig::from_json(c_str(config_json, "config_json")?))?;
        let params = core(EncoderParams::init(&config, &mut Rng::new(seed)))?;
        put(out, LdsaEncoder { config, params })
    })
}

/// # Safety
/// `dir` must be a NUL-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldsa_encoder_load(dir: *const c_char, out: *mut *mut LdsaEncoder) -> LdsaStatus {
    guard(|| {
        let dir = PathBuf::from(c_str(dir, "dir")?);
        let (config, params) = core(load_encoder(&dir, None))?;
        put(out, LdsaEncoder { config, params })
    })
}

/// # Safety
/// `encoder` must be live and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn ldsa_encoder_save(encoder: *const LdsaEncoder, dir: *const c_char) -> LdsaStatus {
    guard(|| {
        let enc = deref(encoder, "encoder")?;
        let dir = PathBuf::from(c_str(dir, "dir")?);
        core(save_encoder(&dir, &enc.config, &enc.params))
    })
}

/// # Safety
/// `encoder` must be NULL or a live encoder handle.
#[no_mangle]
pub unsafe extern "C" fn ldsa_encoder_free(encoder: *mut LdsaEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Encodes a `T × feat_dim` feature matrix into `T' × d`.
///
/// # Safety
/// Handles must be live and `y_out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldsa_encoder_forward(
    encoder: *const LdsaEncoder,
    features: *const LdsaMatrix,
    y_out: *mut *mut LdsaMatrix,
) -> LdsaStatus {
    guard(|| {
        let enc = deref(encoder, "encoder")?;
        let features = deref(features, "features")?;
        if y_out.is_null() {
            return Err(null("y_out"));
        }
        let y = core(encoder_forward(&features.0, &enc.config, &enc.params))?;
        put(y_out, LdsaMatrix(y))
    })
}

/// Whole-encoder parameter totals for an EncoderConfig JSON string.
/// `weights_out` excludes biases and norm parameters; `total_out` includes them.
/// Either output may be NULL.
///
/// # Safety
/// `config_json` must be NUL-terminated; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ldsa_count_params(
    config_json: *const c_char,
    weights_out: *mut u64,
    total_out: *mut u64,
) -> LdsaStatus {
    guard(|| {
        let config = core(EncoderConfig::from_json(c_str(config_json, "config_json")?))?;
        let table = core(count_params(&config))?;
        if !weights_out.is_null() {
            *weights_out = table.total.weights as u64;
        }
        if !total_out.is_null() {
            *total_out = table.total.total as u64;
        }
        Ok(())
    })
}

/// Full parameter table as a JSON string; release it with [`ldsa_string_free`].
///
/// # Safety
/// `config_json` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ldsa_param_table_json(config_json: *const c_char, out: *mut *mut c_char) -> LdsaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = core(EncoderConfig::from_json(c_str(config_json, "config_json")?))?;
        let json = core(count_params(&config))?.to_json();
        *out = CString::new(json)
            .map_err(|_| (LdsaStatus::Panic, "table contains NUL".to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ldsa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `scale · d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
#[no_mangle]
pub extern "C" fn ldsa_noam_lr(step: u64, d_model: u64, warmup: u64, scale: f64) -> f64 {
    noam_lr(step as usize, d_model as usize, warmup as usize, scale)
}

/// Version string of the library, statically allocated.
#[no_mangle]
pub extern "C" fn ldsa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
