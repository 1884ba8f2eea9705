//! C ABI over `timbrelab`: load a trained model, decode latent positions
//! to magnitude frames and render audio hops.
//!
//! Handles are opaque and owned by the caller; free each with its
//! `*_free` function. Functions return a [`TlStatus`]; on failure
//! [`tl_last_error`] describes the most recent error on the calling
//! thread. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use timbrelab::chroma::{ChromaVector, PitchClass};
use timbrelab::model::{load_model, Autoencoder};
use timbrelab::synth::{synthesis_bank, ControlState, FrameRenderer};
use timbrelab::Error;

/// Samples produced per rendered frame.
pub const TL_HOP_SIZE: usize = 1024;
/// Bins in a decoded magnitude frame.
pub const TL_NUM_BINS: usize = 2049;
pub const TL_SAMPLE_RATE: u32 = 44100;
/// Pass as `chroma_class` for an all-zero chroma vector.
pub const TL_NO_CHROMA: i32 = -1;

const _: () = assert!(TL_HOP_SIZE == timbrelab::HOP_SIZE && TL_NUM_BINS == timbrelab::NUM_BINS);
const _: () = assert!(TL_SAMPLE_RATE == timbrelab::SAMPLE_RATE);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    UnsupportedVersion = 5,
    UnsupportedModel = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A loaded model.
pub struct TlModel {
    model: Arc<Autoencoder>,
}

/// Streaming renderer bound to a model and a phase bank.
pub struct TlRenderer {
    renderer: FrameRenderer,
    state: ControlState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TlStatus, msg: impl Into<String>) -> TlStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> TlStatus {
    let status = match &e {
        Error::Io(_) | Error::Wav(_) => TlStatus::Io,
        Error::Corrupt(_) | Error::Json(_) => TlStatus::Corrupt,
        Error::UnsupportedVersion { .. } => TlStatus::UnsupportedVersion,
        Error::UnsupportedModel(_) => TlStatus::UnsupportedModel,
        _ => TlStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> TlStatus) -> TlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TlStatus::Panic, "internal panic"),
    }
}

fn chroma(class: i32) -> Result<ChromaVector, TlStatus> {
    if class == TL_NO_CHROMA {
        return Ok(ChromaVector::silent());
    }
    usize::try_from(class)
        .ok()
        .and_then(|c| PitchClass::new(c).ok())
        .map(ChromaVector::from)
        .ok_or_else(|| fail(TlStatus::InvalidArgument, format!("chroma class {class} is not in 0..=11 or -1")))
}

/// # Safety
/// `ptr` must be null or point to `len` readable floats.
unsafe fn input<'a>(ptr: *const f32, len: usize, what: &str) -> Result<&'a [f32], TlStatus> {
    if ptr.is_null() {
        return Err(fail(TlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or point to `len` writable floats.
unsafe fn output<'a>(ptr: *mut f32, len: usize, need: usize, what: &str) -> Result<&'a mut [f32], TlStatus> {
    if ptr.is_null() {
        return Err(fail(TlStatus::NullPointer, format!("{what} is null")));
    }
    if len < need {
        return Err(fail(TlStatus::BufferTooSmall, format!("{what} holds {len} floats, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `.mann` file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tl_model_load(path: *const c_char, out: *mut *mut TlModel) -> TlStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(TlStatus::NullPointer, "path and out must not be null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(TlStatus::InvalidArgument, "path is not UTF-8");
        };
        match load_model(Path::new(path)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(TlModel { model: Arc::new(m) }));
                TlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must be null or a handle from [`tl_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tl_model_free(model: *mut TlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Bottleneck width, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_model_bottleneck(model: *const TlModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.bottleneck_width())
}

/// 1 when the decoder takes the chroma vector, 0 otherwise or for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_model_has_skip(model: *const TlModel) -> i32 {
    model.as_ref().map_or(0, |m| m.model.config().chroma_skip as i32)
}

/// 1 for a sigmoid bottleneck (latents in `[0, 1]`), 0 otherwise or for
/// null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_model_is_bounded(model: *const TlModel) -> i32 {
    model.as_ref().map_or(0, |m| m.model.config().is_bounded() as i32)
}

/// Decodes one latent point into `TL_NUM_BINS` magnitudes.
///
/// # Safety
/// `model` must be a live handle, `latent` must hold `latent_len` floats
/// and `out` must hold `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn tl_model_decode(
    model: *const TlModel,
    latent: *const f32,
    latent_len: usize,
    chroma_class: i32,
    out: *mut f32,
    out_len: usize,
) -> TlStatus {
    guard(|| {
        let run = || -> Result<(), TlStatus> {
            let m = model.as_ref().ok_or_else(|| fail(TlStatus::NullPointer, "model is null"))?;
            let latent = input(latent, latent_len, "latent")?;
            let chroma = chroma(chroma_class)?;
            let out = output(out, out_len, TL_NUM_BINS, "out")?;
            let y = m.model.decode(latent, chroma).map_err(from_error)?;
            out[..TL_NUM_BINS].copy_from_slice(&y);
            Ok(())
        };
        run().err().unwrap_or(TlStatus::Ok)
    })
}

/// Creates a renderer whose phase bank is drawn from `seed`. The renderer
/// keeps the model alive; the model handle may be freed first.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tl_renderer_new(model: *const TlModel, seed: u64, out: *mut *mut TlRenderer) -> TlStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(TlStatus::NullPointer, "model and out must not be null");
        };
        *out = ptr::null_mut();
        let build = || -> timbrelab::Result<TlRenderer> {
            let state = ControlState::initial(&m.model);
            let renderer = FrameRenderer::new(m.model.clone(), Arc::new(synthesis_bank(seed)?))?;
            Ok(TlRenderer { renderer, state })
        };
        match build() {
            Ok(r) => {
                *out = Box::into_raw(Box::new(r));
                TlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `renderer` must be null or a handle from [`tl_renderer_new`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn tl_renderer_free(renderer: *mut TlRenderer) {
    if !renderer.is_null() {
        drop(Box::from_raw(renderer));
    }
}

/// Renders the next `TL_HOP_SIZE` samples for the given control values.
///
/// # Safety
/// `renderer` must be a live handle, `latent` must hold `latent_len`
/// floats and `out` must hold `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn tl_renderer_render(
    renderer: *mut TlRenderer,
    latent: *const f32,
    latent_len: usize,
    chroma_class: i32,
    gain: f32,
    out: *mut f32,
    out_len: usize,
) -> TlStatus {
    guard(|| {
        let run = || -> Result<(), TlStatus> {
            let r = renderer.as_mut().ok_or_else(|| fail(TlStatus::NullPointer, "renderer is null"))?;
            let latent = input(latent, latent_len, "latent")?;
            let chroma = chroma(chroma_class)?;
            let out = output(out, out_len, TL_HOP_SIZE, "out")?;
            r.state.latent.clear();
            r.state.latent.extend_from_slice(latent);
            r.state.chroma = chroma.class();
            r.state.gain = gain;
            r.state.generation += 1;
            let hop = r.renderer.render_frame(&r.state).map_err(from_error)?;
            out[..TL_HOP_SIZE].copy_from_slice(hop);
            Ok(())
        };
        run().err().unwrap_or(TlStatus::Ok)
    })
}

/// Frames rendered so far, or 0 for null.
///
/// # Safety
/// `renderer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_renderer_frame_index(renderer: *const TlRenderer) -> u64 {
    renderer.as_ref().map_or(0, |r| r.renderer.frame_index() as u64)
}
