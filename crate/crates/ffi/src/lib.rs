//! C interface to vid2voc.
//!
//! Handles are opaque and owned by the caller once returned; free each
//! with its matching `*_free`. Every function returns a [`V2vStatus`]
//! except the free functions and accessors that cannot fail. After a
//! failure, [`v2v_last_error`] describes it for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vid2voc::ctc::{best_path_decode, ctc_loss};
use vid2voc::dsp::Waveform;
use vid2voc::features::{FeatureConfig, FeaturePipeline, NormalizationStats};
use vid2voc::io::load_stats;
use vid2voc::metrics::estoi;
use vid2voc::model::{ModelOutput, Vid2Voc};
use vid2voc::training::load_checkpoint;
use vid2voc::video::VideoClipTensor;
use vid2voc::vocoder::synthesize;
use vid2voc::Error;

/// Result codes. Values 2 to 5 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V2vStatus {
    Ok = 0,
    NotFound = 2,
    InvalidData = 3,
    ConfigMismatch = 4,
    Numerical = 5,
    NullArgument = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Arrays of a network output, in `[frame, coefficient, sub-frame]` order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V2vField {
    /// Spectral envelope, 75 x 60 x 8.
    Se = 0,
    /// Masked band aperiodicity complement, 75 x 5 x 8.
    Nap = 1,
    /// Masked normalized F0, 75 x 8.
    F0 = 2,
    /// Binary voicing, 75 x 8.
    Vuv = 3,
    /// Character log-probabilities, 75 x 28.
    Vsr = 4,
}

/// A trained network.
pub struct V2vModel {
    inner: Vid2Voc<f32>,
}

/// The result of one forward pass.
pub struct V2vOutput {
    inner: ModelOutput,
}

/// Feature pipeline with normalization statistics, for resynthesis.
pub struct V2vVocoder {
    pipeline: FeaturePipeline,
    stats: NormalizationStats,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> V2vStatus {
    match e.exit_code() {
        2 => V2vStatus::NotFound,
        4 => V2vStatus::ConfigMismatch,
        5 => V2vStatus::Numerical,
        _ => V2vStatus::InvalidData,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Small { needed: usize, given: usize },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> V2vStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => V2vStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer for {what}"));
            V2vStatus::NullArgument
        }
        Ok(Err(Failure::Small { needed, given })) => {
            set_error(format!("buffer holds {given} values, {needed} needed"));
            V2vStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            V2vStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass pointers obtained from this library or valid
    // for reads; null is rejected here.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and documented as a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) };
    let s = s
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))?;
    Ok(PathBuf::from(s))
}

fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and documented as valid for `len` reads.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len < needed {
        return Err(Failure::Small { needed, given: len });
    }
    if p.is_null() && needed > 0 {
        return Err(Failure::Null(what));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    // SAFETY: non-null and documented as valid for `len >= needed` writes.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, needed) })
}

fn write_out<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and documented as valid for one write.
    unsafe { p.write(v) };
    Ok(())
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` byte writes.
#[no_mangle]
pub unsafe extern "C" fn v2v_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: caller guarantees `len` writable bytes; n + 1 <= len.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn v2v_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn v2v_model_load(path: *const c_char, out: *mut *mut V2vModel) -> V2vStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let model = load_checkpoint(&path)?.model;
        write_out(out, Box::into_raw(Box::new(V2vModel { inner: model })), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from [`v2v_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn v2v_model_free(model: *mut V2vModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in v2v_model_load.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Expected clip geometry: frames, channels, height, width.
///
/// # Safety
/// `model` must be a live handle; `dims` valid for 4 writes.
#[no_mangle]
pub unsafe extern "C" fn v2v_model_input_dims(model: *const V2vModel, dims: *mut usize) -> V2vStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let c = m.inner.config();
        out_slice(dims, 4, 4, "dims")?.copy_from_slice(&[c.seq_len, c.channels, c.height, c.width]);
        Ok(())
    })
}

/// Runs the network on one clip of `frames * channels * height * width`
/// values in `[-1, 1]`, row-major.
///
/// # Safety
/// `model` must be a live handle, `video` valid for `len` reads and `out`
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn v2v_model_forward(
    model: *const V2vModel,
    video: *const f32,
    len: usize,
    out: *mut *mut V2vOutput,
) -> V2vStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let data = slice_arg(video, len, "video")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let c = m.inner.config();
        let expected = c.seq_len * c.channels * c.height * c.width;
        if len != expected {
            return Err(Error::ConfigMismatch(format!("clip has {len} values, model expects {expected}")).into());
        }
        let clip = VideoClipTensor::new(data.to_vec(), c.seq_len, c.channels, c.height, c.width)?;
        let result = m.inner.forward(&[&clip])?.remove(0);
        write_out(out, Box::into_raw(Box::new(V2vOutput { inner: result })), "out")
    })
}

/// # Safety
/// `out` must be null or a handle from [`v2v_model_forward`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn v2v_output_free(out: *mut V2vOutput) {
    if !out.is_null() {
        // SAFETY: created by Box::into_raw in v2v_model_forward.
        drop(unsafe { Box::from_raw(out) });
    }
}

fn field_data(o: &ModelOutput, field: V2vField) -> &[f64] {
    match field {
        V2vField::Se => &o.w_se,
        V2vField::Nap => &o.w_nap,
        V2vField::F0 => &o.w_f0,
        V2vField::Vuv => &o.w_vuv,
        V2vField::Vsr => &o.vsr,
    }
}

/// Number of values in a field, or 0 for a null handle.
///
/// # Safety
/// `out` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn v2v_output_len(out: *const V2vOutput, field: V2vField) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { out.as_ref() }.map_or(0, |o| field_data(&o.inner, field).len())
}

/// Copies a field into `buf`, which must hold [`v2v_output_len`] values.
///
/// # Safety
/// `out` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn v2v_output_copy(
    out: *const V2vOutput,
    field: V2vField,
    buf: *mut f64,
    len: usize,
) -> V2vStatus {
    guard(|| {
        let o = non_null(out, "output")?;
        let data = field_data(&o.inner, field);
        out_slice(buf, len, data.len(), "buf")?.copy_from_slice(data);
        Ok(())
    })
}

/// Best-path transcript of an output as a NUL-terminated string. `needed`
/// receives the byte count including the terminator; when `len` is
/// smaller nothing is written and the status is `BufferTooSmall`.
///
/// # Safety
/// `out` must be a live handle, `buf` valid for `len` writes and `needed`
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn v2v_output_transcript(
    out: *const V2vOutput,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> V2vStatus {
    guard(|| {
        let o = non_null(out, "output")?;
        let text = best_path_decode(&o.inner.vsr)?;
        let bytes = text.text().as_bytes();
        write_out(needed, bytes.len() + 1, "needed")?;
        let dst = out_slice(buf, len, bytes.len() + 1, "buf")?;
        for (d, &s) in dst.iter_mut().zip(bytes) {
            *d = s as c_char;
        }
        dst[bytes.len()] = 0;
        Ok(())
    })
}

/// Builds the default feature pipeline with statistics loaded from a
/// `VST1` file.
///
/// # Safety
/// `stats_path` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn v2v_vocoder_new(stats_path: *const c_char, out: *mut *mut V2vVocoder) -> V2vStatus {
    guard(|| {
        let path = path_arg(stats_path, "stats_path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let pipeline = FeaturePipeline::new(FeatureConfig::default())?;
        let stats = load_stats(&path)?;
        pipeline.check_stats(&stats)?;
        write_out(out, Box::into_raw(Box::new(V2vVocoder { pipeline, stats })), "out")
    })
}

/// # Safety
/// `v` must be null or a handle from [`v2v_vocoder_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn v2v_vocoder_free(v: *mut V2vVocoder) {
    if !v.is_null() {
        // SAFETY: created by Box::into_raw in v2v_vocoder_new.
        drop(unsafe { Box::from_raw(v) });
    }
}

/// Audio samples a vocoder produces for an output (frames times hop).
///
/// # Safety
/// Both arguments must be null or live handles.
#[no_mangle]
pub unsafe extern "C" fn v2v_vocoder_output_len(v: *const V2vVocoder, out: *const V2vOutput) -> usize {
    // SAFETY: null or live per the contract.
    match unsafe { (v.as_ref(), out.as_ref()) } {
        (Some(v), Some(o)) => o.inner.w_f0.len() * v.pipeline.config().vocoder.hop,
        _ => 0,
    }
}

/// Resynthesizes an output to audio at the vocoder sample rate.
///
/// # Safety
/// Handles must be live; `samples` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn v2v_vocoder_synthesize(
    v: *const V2vVocoder,
    out: *const V2vOutput,
    samples: *mut f64,
    len: usize,
) -> V2vStatus {
    guard(|| {
        let v = non_null(v, "vocoder")?;
        let o = non_null(out, "output")?;
        let e = v.pipeline.expand(&o.inner.assemble(), &v.stats)?;
        let y = synthesize(&e.sp, &e.ap, &e.f0, &e.vuv, &v.pipeline.config().vocoder)?;
        out_slice(samples, len, y.len(), "samples")?.copy_from_slice(y.samples());
        Ok(())
    })
}

/// ESTOI between two equally sampled signals.
///
/// # Safety
/// `clean` and `degraded` must be valid for `len` reads; `score` for one
/// write.
#[no_mangle]
pub unsafe extern "C" fn v2v_estoi(
    clean: *const f64,
    degraded: *const f64,
    len: usize,
    sample_rate: u32,
    score: *mut f64,
) -> V2vStatus {
    guard(|| {
        let x = Waveform::new(slice_arg(clean, len, "clean")?.to_vec(), sample_rate)?;
        let y = Waveform::new(slice_arg(degraded, len, "degraded")?.to_vec(), sample_rate)?;
        write_out(score, estoi(&x, &y)?, "score")
    })
}

/// CTC loss of `labels` under row-major log-probabilities
/// `[steps x classes]`, with its gradient written to `grad` (same size,
/// may be null).
///
/// # Safety
/// Pointers must be valid for the stated counts; `loss` for one write.
#[no_mangle]
pub unsafe extern "C" fn v2v_ctc_loss(
    log_probs: *const f64,
    steps: usize,
    classes: usize,
    labels: *const usize,
    num_labels: usize,
    blank: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> V2vStatus {
    guard(|| {
        let n = steps
            .checked_mul(classes)
            .ok_or_else(|| Error::InvalidArgument("size overflow".into()))?;
        let lp = slice_arg(log_probs, n, "log_probs")?;
        let labels = slice_arg(labels, num_labels, "labels")?;
        let r = ctc_loss(lp, classes, labels, blank)?;
        write_out(loss, r.loss, "loss")?;
        if !grad.is_null() {
            out_slice(grad, n, n, "grad")?.copy_from_slice(&r.grad);
        }
        Ok(())
    })
}
