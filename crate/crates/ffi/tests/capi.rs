use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use timbrelab::chroma::PitchClass;
use timbrelab::corpus::Augmentation;
use timbrelab::model::{build_model, save_model, ModelConfig};
use timbrelab::nn::Activation;
use timbrelab::synth::{synthesis_bank, ControlState, FrameRenderer};
use timbrelab_ffi::*;

fn saved_model(dir: &Path) -> (CString, timbrelab::model::Autoencoder) {
    let mut cfg = ModelConfig::new(3, Activation::Sigmoid, Augmentation::Chroma, true);
    cfg.encoder_widths = vec![32, 16];
    let model = build_model(cfg, 11).unwrap();
    let path = dir.join("m.mann");
    save_model(&model, &path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), model)
}

fn last_error() -> String {
    let p = tl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn decode_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = saved_model(dir.path());
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { tl_model_load(path.as_ptr(), &mut handle) }, TlStatus::Ok);
    unsafe {
        assert_eq!(tl_model_bottleneck(handle), 3);
        assert_eq!(tl_model_has_skip(handle), 1);
        assert_eq!(tl_model_is_bounded(handle), 1);
    }
    let z = [0.2f32, 0.7, 0.4];
    let mut out = vec![0.0f32; TL_NUM_BINS];
    let st = unsafe { tl_model_decode(handle, z.as_ptr(), 3, 9, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, TlStatus::Ok);
    assert_eq!(out, model.decode(&z, PitchClass::A.into()).unwrap());
    unsafe { tl_model_free(handle) };
}

#[test]
fn renderer_matches_library_and_outlives_model() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = saved_model(dir.path());
    let mut handle = ptr::null_mut();
    let mut renderer = ptr::null_mut();
    unsafe {
        assert_eq!(tl_model_load(path.as_ptr(), &mut handle), TlStatus::Ok);
        assert_eq!(tl_renderer_new(handle, 5, &mut renderer), TlStatus::Ok);
        tl_model_free(handle);
    }
    let mut reference = FrameRenderer::new(Arc::new(model), Arc::new(synthesis_bank(5).unwrap())).unwrap();
    let mut out = vec![0.0f32; TL_HOP_SIZE];
    for f in 0..6 {
        let z = [0.1 * f as f32, 0.5, 0.9];
        let class = (f % 12) as i32;
        let st = unsafe { tl_renderer_render(renderer, z.as_ptr(), 3, class, 0.3, out.as_mut_ptr(), out.len()) };
        assert_eq!(st, TlStatus::Ok);
        let state = ControlState { latent: z.to_vec(), chroma: PitchClass::new(class as usize).ok(), gain: 0.3, generation: f };
        assert_eq!(out.as_slice(), reference.render_frame(&state).unwrap());
    }
    assert_eq!(unsafe { tl_renderer_frame_index(renderer) }, 6);
    unsafe { tl_renderer_free(renderer) };
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut handle = ptr::null_mut();
    let missing = CString::new(dir.path().join("none.mann").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tl_model_load(missing.as_ptr(), &mut handle) }, TlStatus::Io);
    assert!(handle.is_null());
    std::fs::write(dir.path().join("bad.mann"), b"NOPE....").unwrap();
    let bad = CString::new(dir.path().join("bad.mann").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tl_model_load(bad.as_ptr(), &mut handle) }, TlStatus::Corrupt);
    assert!(last_error().contains("magic"));
    assert_eq!(unsafe { tl_model_load(ptr::null(), &mut handle) }, TlStatus::NullPointer);

    let (path, _) = saved_model(dir.path());
    assert_eq!(unsafe { tl_model_load(path.as_ptr(), &mut handle) }, TlStatus::Ok);
    let z = [0.5f32; 3];
    let mut out = vec![0.0f32; TL_NUM_BINS];
    let decode = |z: &[f32], class: i32, out: &mut [f32]| unsafe {
        tl_model_decode(handle, z.as_ptr(), z.len(), class, out.as_mut_ptr(), out.len())
    };
    assert_eq!(decode(&z[..2], 0, &mut out), TlStatus::InvalidArgument);
    assert!(last_error().contains('3'), "{}", last_error());
    assert_eq!(decode(&z, 12, &mut out), TlStatus::InvalidArgument);
    assert!(last_error().contains("12"));
    assert_eq!(decode(&z, TL_NO_CHROMA, &mut out[..100]), TlStatus::BufferTooSmall);
    assert_eq!(decode(&z, TL_NO_CHROMA, &mut out), TlStatus::Ok);
    let st = unsafe { tl_model_decode(handle, z.as_ptr(), 3, 0, ptr::null_mut(), 0) };
    assert_eq!(st, TlStatus::NullPointer);
    assert_eq!(unsafe { tl_model_bottleneck(ptr::null()) }, 0);
    unsafe {
        tl_model_free(handle);
        tl_model_free(ptr::null_mut());
        tl_renderer_free(ptr::null_mut());
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(tl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/timbrelab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "tl_model_load",
        "tl_model_free",
        "tl_model_decode",
        "tl_renderer_new",
        "tl_renderer_render",
        "tl_renderer_free",
        "tl_last_error",
        "typedef struct TlModel TlModel",
        "TL_STATUS_BUFFER_TOO_SMALL",
        "#define TL_HOP_SIZE 1024",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // Compile check only where a C compiler is installed.
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
    else {
        return;
    };
    assert!(status.success(), "header does not compile as C99");
}
