//! C ABI over the facegan library.
//!
//! Conventions:
//! - Every fallible call returns a `FaceganStatus`; `Ok` is 0. On failure a
//!   thread-local message is retrievable via `facegan_last_error`.
//! - Images cross the boundary as interleaved 8-bit RGB, row-major, top-left
//!   origin: `buf[(y*width + x)*3 + channel]`.
//! - `FaceganModel` is an opaque handle created by `facegan_model_load` and
//!   released by `facegan_model_free`. Handles are not thread-safe; callers
//!   synchronize or use one handle per thread.
//! - Panics never cross the boundary; they surface as `Panic` status.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use facegan::engine::Trainer;
use facegan::error::Error;
use facegan::metrics::{self, SsimWindow};
use ndarray::Array3;

/// Result of every fallible call. Nonzero values mirror the library's error
/// categories; `NullArgument`, `Utf8`, `BufferSize`, and `Panic` are
/// boundary-specific.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceganStatus {
    Ok = 0,
    Config = 1,
    Manifest = 2,
    Shape = 3,
    Data = 4,
    Train = 5,
    Checkpoint = 6,
    Metric = 7,
    Io = 8,
    Image = 9,
    NullArgument = 10,
    Utf8 = 11,
    BufferSize = 12,
    Panic = 13,
}

/// SSIM window selector, matching the library's two supported windows.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceganSsimWindow {
    Gaussian11 = 0,
    Uniform8 = 1,
}

impl From<FaceganSsimWindow> for SsimWindow {
    fn from(w: FaceganSsimWindow) -> SsimWindow {
        match w {
            FaceganSsimWindow::Gaussian11 => SsimWindow::Gaussian11,
            FaceganSsimWindow::Uniform8 => SsimWindow::Uniform8,
        }
    }
}

/// Opaque handle to a loaded checkpoint: generator, recognizer, and the
/// configuration they were trained with.
pub struct FaceganModel {
    trainer: Trainer,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).expect("NULs removed"));
}

fn status_of(err: &Error) -> FaceganStatus {
    match err {
        Error::Config(_) => FaceganStatus::Config,
        Error::Manifest(_) => FaceganStatus::Manifest,
        Error::Shape(_) => FaceganStatus::Shape,
        Error::Data(_) => FaceganStatus::Data,
        Error::Train(_) => FaceganStatus::Train,
        Error::Checkpoint(_) => FaceganStatus::Checkpoint,
        Error::Metric(_) => FaceganStatus::Metric,
        Error::Io(_) => FaceganStatus::Io,
        Error::Image(_) => FaceganStatus::Image,
    }
}

fn fail(err: &Error) -> FaceganStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn fail_with(status: FaceganStatus, msg: &str) -> FaceganStatus {
    set_error(msg);
    status
}

/// Run `f` with panics converted to a status, never unwinding into C.
fn guarded<F: FnOnce() -> FaceganStatus>(f: F) -> FaceganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".into());
            fail_with(FaceganStatus::Panic, &format!("internal panic: {msg}"))
        }
    }
}

/// Interleaved RGB8 -> planar (3, h, w) in [-1, 1].
fn rgb8_to_array(buf: &[u8], width: usize, height: usize) -> Array3<f64> {
    let mut out = Array3::zeros((3, height, width));
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                out[(c, y, x)] = buf[(y * width + x) * 3 + c] as f64 / 127.5 - 1.0;
            }
        }
    }
    out
}

/// Planar (3, h, w) in [-1, 1] -> interleaved RGB8, rounding and clamping.
fn array_to_rgb8(arr: &Array3<f64>, out: &mut [u8]) {
    let (_, h, w) = arr.dim();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[(y * w + x) * 3 + c] = ((arr[(c, y, x)] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn facegan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the current thread's last error message (NUL-terminated) into `buf`.
/// Returns the full message length in bytes excluding the NUL; the copy is
/// truncated to `cap - 1` bytes. `buf` may be null to query the length.
#[no_mangle]
pub unsafe extern "C" fn facegan_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Load a checkpoint file into a new model handle. On success `*out` owns
/// the model and must be released with `facegan_model_free`.
#[no_mangle]
pub unsafe extern "C" fn facegan_model_load(path: *const c_char, out: *mut *mut FaceganModel) -> FaceganStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail_with(FaceganStatus::NullArgument, "path and out must be non-null");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => return fail_with(FaceganStatus::Utf8, "path is not valid UTF-8"),
        };
        match Trainer::load(Path::new(path)) {
            Ok(trainer) => {
                *out = Box::into_raw(Box::new(FaceganModel { trainer }));
                FaceganStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a model handle. A null pointer is a no-op.
#[no_mangle]
pub unsafe extern "C" fn facegan_model_free(model: *mut FaceganModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Upscaling factor of the loaded model (0 on null).
#[no_mangle]
pub unsafe extern "C" fn facegan_model_upscale(model: *const FaceganModel) -> c_int {
    model.as_ref().map_or(0, |m| m.trainer.cfg.upscale as c_int)
}

/// Side length of the square images the recognizer embeds (0 on null).
#[no_mangle]
pub unsafe extern "C" fn facegan_model_input_size(model: *const FaceganModel) -> c_int {
    model.as_ref().map_or(0, |m| m.trainer.cfg.input_size as c_int)
}

/// Length of identity embeddings (0 on null).
#[no_mangle]
pub unsafe extern "C" fn facegan_model_embedding_dim(model: *const FaceganModel) -> c_int {
    model.as_ref().map_or(0, |m| m.trainer.cfg.embedding_dim as c_int)
}

/// Upscale one RGB8 image by the model's factor. `out` must hold
/// `(width*factor) * (height*factor) * 3` bytes; `out_len` is checked.
#[no_mangle]
pub unsafe extern "C" fn facegan_hallucinate_rgb8(
    model: *const FaceganModel,
    lr: *const u8,
    width: usize,
    height: usize,
    out: *mut u8,
    out_len: usize,
) -> FaceganStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail_with(FaceganStatus::NullArgument, "model must be non-null");
        };
        if lr.is_null() || out.is_null() {
            return fail_with(FaceganStatus::NullArgument, "lr and out must be non-null");
        }
        if width == 0 || height == 0 {
            return fail_with(FaceganStatus::Shape, "image dimensions must be positive");
        }
        let factor = model.trainer.cfg.upscale;
        let expected = width * factor * height * factor * 3;
        if out_len != expected {
            return fail_with(
                FaceganStatus::BufferSize,
                &format!("out buffer holds {out_len} bytes, expected {expected}"),
            );
        }
        let input = std::slice::from_raw_parts(lr, width * height * 3);
        let arr = rgb8_to_array(input, width, height);
        let batch = facegan::data::stack_batch(&[&arr]);
        let sr = match model.trainer.gen.hallucinate(&batch) {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        let sr = sr
            .index_axis_move(ndarray::Axis(0), 0)
            .into_dimensionality::<ndarray::Ix3>()
            .expect("generator output is (N, 3, h, w)");
        array_to_rgb8(&sr, std::slice::from_raw_parts_mut(out, out_len));
        FaceganStatus::Ok
    })
}

/// Embed one RGB8 image with the identity recognizer. The image must be the
/// model's square input size; `out` must hold `embedding_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn facegan_embed_rgb8(
    model: *const FaceganModel,
    img: *const u8,
    width: usize,
    height: usize,
    out: *mut f64,
    out_len: usize,
) -> FaceganStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail_with(FaceganStatus::NullArgument, "model must be non-null");
        };
        if img.is_null() || out.is_null() {
            return fail_with(FaceganStatus::NullArgument, "img and out must be non-null");
        }
        let side = model.trainer.cfg.input_size;
        if width != side || height != side {
            return fail_with(
                FaceganStatus::Shape,
                &format!("recognizer expects {side}x{side} images, got {width}x{height}"),
            );
        }
        let dim = model.trainer.cfg.embedding_dim;
        if out_len != dim {
            return fail_with(
                FaceganStatus::BufferSize,
                &format!("out buffer holds {out_len} doubles, expected {dim}"),
            );
        }
        let input = std::slice::from_raw_parts(img, width * height * 3);
        let arr = rgb8_to_array(input, width, height);
        let batch = facegan::data::stack_batch(&[&arr]);
        let emb = match model.trainer.rec.embed_values(&batch) {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        let row = emb.index_axis_move(ndarray::Axis(0), 0);
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for (d, v) in dst.iter_mut().zip(row.iter()) {
            *d = *v;
        }
        FaceganStatus::Ok
    })
}

unsafe fn pair_to_arrays(
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
) -> Result<(Array3<f64>, Array3<f64>), FaceganStatus> {
    if a.is_null() || b.is_null() {
        return Err(fail_with(FaceganStatus::NullArgument, "both images must be non-null"));
    }
    if width == 0 || height == 0 {
        return Err(fail_with(FaceganStatus::Shape, "image dimensions must be positive"));
    }
    let n = width * height * 3;
    let a = rgb8_to_array(std::slice::from_raw_parts(a, n), width, height);
    let b = rgb8_to_array(std::slice::from_raw_parts(b, n), width, height);
    Ok((a, b))
}

/// Peak signal-to-noise ratio between two same-size RGB8 images, in dB.
/// Identical images yield +infinity.
#[no_mangle]
pub unsafe extern "C" fn facegan_psnr_rgb8(
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
    out: *mut f64,
) -> FaceganStatus {
    guarded(|| {
        if out.is_null() {
            return fail_with(FaceganStatus::NullArgument, "out must be non-null");
        }
        let (a, b) = match pair_to_arrays(a, b, width, height) {
            Ok(v) => v,
            Err(s) => return s,
        };
        match metrics::psnr(&a, &b) {
            Ok(v) => {
                *out = v;
                FaceganStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Mean structural similarity between two same-size RGB8 images.
#[no_mangle]
pub unsafe extern "C" fn facegan_ssim_rgb8(
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
    window: FaceganSsimWindow,
    out: *mut f64,
) -> FaceganStatus {
    guarded(|| {
        if out.is_null() {
            return fail_with(FaceganStatus::NullArgument, "out must be non-null");
        }
        let (a, b) = match pair_to_arrays(a, b, width, height) {
            Ok(v) => v,
            Err(s) => return s,
        };
        match metrics::ssim(&a, &b, window.into()) {
            Ok(v) => {
                *out = v;
                FaceganStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use facegan::config::RunConfig;
    use facegan::data;
    use facegan::engine::Phase;
    use std::ffi::CString;
    use std::ptr;

    fn tiny_checkpoint(dir: &Path) -> std::path::PathBuf {
        let manifest = data::synth_toy_dataset(&dir.join("data"), 3, 2, 16, 0).unwrap();
        let ds = facegan::data::Dataset::load(&manifest, 16, 4).unwrap();
        let mut cfg = RunConfig::default();
        cfg.input_size = 16;
        cfg.blocks = 2;
        cfg.layers_per_block = 3;
        cfg.growth = 8;
        cfg.llfe_channels = 16;
        cfg.bottleneck_channels = 16;
        cfg.upsample_channels = 4;
        cfg.critic_channels = vec![4, 8];
        cfg.fr_widths = vec![2, 3, 4];
        cfg.embedding_dim = 8;
        cfg.batch_size = 4;
        cfg.verify_pairs = 2;
        cfg.lambda_perceptual = 0.0;
        cfg.lambda_adversarial = 0.0;
        cfg.lambda_identity = 0.0;
        cfg.gan_iters = 2;
        let mut tr = Trainer::new(cfg, ds.num_classes).unwrap();
        tr.run_phase(&ds, Phase::GanPretrain, &mut |_| Ok(()), None).unwrap();
        let path = dir.join("model.fgcp");
        tr.save(&path).unwrap();
        path
    }

    fn load(path: &Path) -> *mut FaceganModel {
        let c = CString::new(path.to_str().unwrap()).unwrap();
        let mut model: *mut FaceganModel = ptr::null_mut();
        let status = unsafe { facegan_model_load(c.as_ptr(), &mut model) };
        assert_eq!(status, FaceganStatus::Ok, "FAIL: loading a valid checkpoint");
        assert!(!model.is_null());
        model
    }

    fn last_error() -> String {
        let mut buf = vec![0i8; 256];
        let n = unsafe { facegan_last_error(buf.as_mut_ptr(), buf.len()) };
        let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&b| b as u8).collect();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn load_hallucinate_and_embed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = tiny_checkpoint(dir.path());
        let model = load(&ckpt);
        unsafe {
            assert_eq!(facegan_model_upscale(model), 4);
            assert_eq!(facegan_model_input_size(model), 16);
            assert_eq!(facegan_model_embedding_dim(model), 8);

            let lr: Vec<u8> = (0..4 * 4 * 3).map(|i| (i * 5) as u8).collect();
            let mut sr = vec![0u8; 16 * 16 * 3];
            let status = facegan_hallucinate_rgb8(model, lr.as_ptr(), 4, 4, sr.as_mut_ptr(), sr.len());
            assert_eq!(status, FaceganStatus::Ok, "FAIL: hallucinate on a valid buffer");
            let mut sr2 = vec![0u8; 16 * 16 * 3];
            facegan_hallucinate_rgb8(model, lr.as_ptr(), 4, 4, sr2.as_mut_ptr(), sr2.len());
            assert_eq!(sr, sr2, "FAIL: hallucination must be deterministic");

            let mut emb = vec![0.0f64; 8];
            let status = facegan_embed_rgb8(model, sr.as_ptr(), 16, 16, emb.as_mut_ptr(), emb.len());
            assert_eq!(status, FaceganStatus::Ok, "FAIL: embed on a valid buffer");
            let norm: f64 = emb.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "FAIL: embedding norm {norm} is not 1");

            facegan_model_free(model);
        }
    }

    #[test]
    fn error_paths_set_status_and_message() {
        let dir = tempfile::tempdir().unwrap();
        unsafe {
            let mut model: *mut FaceganModel = ptr::null_mut();
            assert_eq!(
                facegan_model_load(ptr::null(), &mut model),
                FaceganStatus::NullArgument
            );
            let missing = CString::new(dir.path().join("no.fgcp").to_str().unwrap()).unwrap();
            let status = facegan_model_load(missing.as_ptr(), &mut model);
            assert_eq!(
                status,
                FaceganStatus::Checkpoint,
                "FAIL: missing file maps to Checkpoint"
            );
            assert!(last_error().contains("no.fgcp"), "FAIL: {}", last_error());

            let ckpt = tiny_checkpoint(dir.path());
            let model = load(&ckpt);
            let lr = vec![0u8; 4 * 4 * 3];
            let mut small = vec![0u8; 3];
            assert_eq!(
                facegan_hallucinate_rgb8(model, lr.as_ptr(), 4, 4, small.as_mut_ptr(), small.len()),
                FaceganStatus::BufferSize,
                "FAIL: short output buffer must be rejected"
            );
            assert!(last_error().contains("expected"), "FAIL: {}", last_error());
            let mut emb = vec![0.0f64; 8];
            assert_eq!(
                facegan_embed_rgb8(model, lr.as_ptr(), 4, 4, emb.as_mut_ptr(), emb.len()),
                FaceganStatus::Shape,
                "FAIL: wrong recognizer input size must be rejected"
            );
            facegan_model_free(model);
            facegan_model_free(ptr::null_mut()); // no-op, must not crash
        }
    }

    #[test]
    fn stateless_metrics_match_the_library() {
        let a: Vec<u8> = vec![100; 8 * 8 * 3];
        let b: Vec<u8> = vec![116; 8 * 8 * 3];
        let mut v = 0.0f64;
        unsafe {
            assert_eq!(facegan_psnr_rgb8(a.as_ptr(), b.as_ptr(), 8, 8, &mut v), FaceganStatus::Ok);
            assert!((v - 24.05).abs() < 0.01, "FAIL: PSNR {v} not 24.05 +/- 0.01");
            assert_eq!(facegan_psnr_rgb8(a.as_ptr(), a.as_ptr(), 8, 8, &mut v), FaceganStatus::Ok);
            assert!(v.is_infinite(), "FAIL: identical images must hit the sentinel");
            assert_eq!(
                facegan_ssim_rgb8(a.as_ptr(), a.as_ptr(), 8, 8, FaceganSsimWindow::Uniform8, &mut v),
                FaceganStatus::Ok
            );
            assert_eq!(v, 1.0, "FAIL: identical images must score SSIM 1.0");
            assert_eq!(
                facegan_psnr_rgb8(ptr::null(), b.as_ptr(), 8, 8, &mut v),
                FaceganStatus::NullArgument
            );
        }
    }

    #[test]
    fn version_is_a_nul_terminated_static() {
        let v = unsafe { CStr::from_ptr(facegan_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
