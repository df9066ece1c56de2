//! C ABI for the codec: opaque model handles, integer error codes, and a
//! thread-local last-error message. The contract is mirrored in
//! `include/gpcc.h`, which is maintained by hand and checked by a test.
//!
//! Ownership rules: every out-pointer the library fills is released with the
//! matching `gpcc_*_free` function and nothing else. Passing a buffer to a
//! free function transfers ownership back; all other calls borrow.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gpcc::codec::{decode, encode};
use gpcc::geometry::{dequantize, quantize};
use gpcc::io::{read_ply, write_ply, PlyMode, RawCloud};
use gpcc::model::{Fop, FopModel, Grouping, ModelConfig};

pub const GPCC_OK: i32 = 0;
/// Null pointer or invalid argument value.
pub const GPCC_ERR_ARG: i32 = 1;
/// Malformed checkpoint, PLY, or configuration.
pub const GPCC_ERR_PARSE: i32 = 2;
/// Corrupt or truncated stream.
pub const GPCC_ERR_STREAM: i32 = 3;
/// Stream was produced by a different model (digest mismatch).
pub const GPCC_ERR_MODEL: i32 = 4;
pub const GPCC_ERR_IO: i32 = 5;
/// Library bug: a panic was caught at the boundary.
pub const GPCC_ERR_INTERNAL: i32 = 6;

/// Opaque model handle.
pub struct GpccModel {
    inner: FopModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes replaced");
    });
}

fn code_for(e: &gpcc::Error) -> i32 {
    use gpcc::Error::*;
    match e {
        EmptyCloud | InvalidPoint(_) | CoordinateOverflow => GPCC_ERR_ARG,
        ParseError(_) | MissingPositions | ConfigMismatch(_) => GPCC_ERR_PARSE,
        CorruptStream(_) => GPCC_ERR_STREAM,
        WrongModel => GPCC_ERR_MODEL,
        Io(_) => GPCC_ERR_IO,
        _ => GPCC_ERR_INTERNAL,
    }
}

fn fail(e: gpcc::Error) -> i32 {
    set_error(&e.to_string());
    code_for(&e)
}

fn arg_error(msg: &str) -> i32 {
    set_error(msg);
    GPCC_ERR_ARG
}

/// Runs a fallible body, translating panics into GPCC_ERR_INTERNAL.
fn guarded(body: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic at the FFI boundary");
            GPCC_ERR_INTERNAL
        }
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<PathBuf, i32> {
    if ptr.is_null() {
        return Err(arg_error("path is null"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(arg_error("path is not valid UTF-8")),
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gpcc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a .gpcm checkpoint into a fresh handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpcc_model_load(path: *const c_char, out: *mut *mut GpccModel) -> i32 {
    guarded(|| {
        if out.is_null() {
            return arg_error("out pointer is null");
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(c) => return c,
        };
        match Fop::load(&path) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(GpccModel { inner: model }));
                GPCC_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Creates a randomly initialized model. `grouping` uses the stream flag
/// values (0 two-stage, 1 four-stage uniform, 2 four-stage non-uniform);
/// boolean flags are 0/1.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpcc_model_create(
    channels: usize,
    kernel_size: usize,
    grouping: u8,
    neighbor_prior: u8,
    conv_blocks_per_stage: usize,
    stage_refresh: u8,
    seed: u64,
    out: *mut *mut GpccModel,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            return arg_error("out pointer is null");
        }
        let grouping = match Grouping::from_flag(grouping) {
            Ok(g) => g,
            Err(e) => return fail(e),
        };
        let config = ModelConfig {
            channels,
            kernel_size,
            grouping,
            neighbor_prior: neighbor_prior != 0,
            conv_blocks_per_stage,
            stage_refresh: stage_refresh != 0,
        };
        match Fop::seeded(config, seed) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(GpccModel { inner: model }));
                GPCC_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gpcc_model_save(model: *const GpccModel, path: *const c_char) -> i32 {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return arg_error("model is null");
        };
        let path = match path_from(path) {
            Ok(p) => p,
            Err(c) => return c,
        };
        match model.inner.save(&path) {
            Ok(()) => GPCC_OK,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpcc_model_digest(model: *const GpccModel, out: *mut u64) -> i32 {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return arg_error("model is null");
        };
        if out.is_null() {
            return arg_error("out pointer is null");
        }
        *out = model.inner.digest();
        GPCC_OK
    })
}

/// # Safety
/// `model` must come from this library and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn gpcc_model_free(model: *mut GpccModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Compresses `count` points given as interleaved x,y,z doubles. On success
/// `*out_buf`/`*out_len` hold a stream owned by the caller; release it with
/// `gpcc_buffer_free`.
///
/// # Safety
/// `points` must reference `3 * count` doubles; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpcc_encode_points(
    model: *const GpccModel,
    points: *const f64,
    count: usize,
    step: f64,
    out_buf: *mut *mut u8,
    out_len: *mut usize,
) -> i32 {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return arg_error("model is null");
        };
        if points.is_null() && count > 0 {
            return arg_error("points is null");
        }
        if out_buf.is_null() || out_len.is_null() {
            return arg_error("out pointer is null");
        }
        if !(step > 0.0 && step.is_finite()) {
            return arg_error("step must be positive and finite");
        }
        let pts: Vec<[f64; 3]> = if count == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(points, count * 3)
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect()
        };
        let stream = match quantize(&pts, step).and_then(|q| encode(&q, &model.inner)) {
            Ok((stream, _)) => stream,
            Err(e) => return fail(e),
        };
        let boxed = stream.into_boxed_slice();
        *out_len = boxed.len();
        *out_buf = Box::into_raw(boxed) as *mut u8;
        GPCC_OK
    })
}

/// Decompresses a stream into voxel centers, interleaved x,y,z doubles.
/// `*out_points` is owned by the caller; release with `gpcc_points_free`
/// passing the returned `*out_count`.
///
/// # Safety
/// `buf` must reference `len` bytes; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpcc_decode_points(
    model: *const GpccModel,
    buf: *const u8,
    len: usize,
    out_points: *mut *mut f64,
    out_count: *mut usize,
) -> i32 {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return arg_error("model is null");
        };
        if buf.is_null() {
            return arg_error("buffer is null");
        }
        if out_points.is_null() || out_count.is_null() {
            return arg_error("out pointer is null");
        }
        let stream = std::slice::from_raw_parts(buf, len);
        let cloud = match decode(stream, &model.inner) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let flat: Vec<f64> = dequantize(&cloud).into_iter().flatten().collect();
        let n = cloud.coords.len();
        let boxed = flat.into_boxed_slice();
        *out_count = n;
        *out_points = Box::into_raw(boxed) as *mut f64;
        GPCC_OK
    })
}

/// Encodes a .ply file to a stream file. `out_bpp` may be null.
///
/// # Safety
/// Paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gpcc_encode_file(
    model: *const GpccModel,
    input_ply: *const c_char,
    output_path: *const c_char,
    step: f64,
    out_bpp: *mut f64,
) -> i32 {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return arg_error("model is null");
        };
        let (input, output) = match (path_from(input_ply), path_from(output_path)) {
            (Ok(i), Ok(o)) => (i, o),
            (Err(c), _) | (_, Err(c)) => return c,
        };
        if !(step > 0.0 && step.is_finite()) {
            return arg_error("step must be positive and finite");
        }
        let run = || -> gpcc::Result<f64> {
            let raw = read_ply(&input)?;
            let cloud = quantize(&raw.positions, step)?;
            let (stream, report) = encode(&cloud, &model.inner)?;
            std::fs::write(&output, &stream)?;
            Ok(report.bpp)
        };
        match run() {
            Ok(bpp) => {
                if !out_bpp.is_null() {
                    *out_bpp = bpp;
                }
                GPCC_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Decodes a stream file to a .ply of voxel centers (binary unless
/// `ascii` is nonzero).
///
/// # Safety
/// Paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gpcc_decode_file(
    model: *const GpccModel,
    input_path: *const c_char,
    output_ply: *const c_char,
    ascii: u8,
) -> i32 {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return arg_error("model is null");
        };
        let (input, output) = match (path_from(input_path), path_from(output_ply)) {
            (Ok(i), Ok(o)) => (i, o),
            (Err(c), _) | (_, Err(c)) => return c,
        };
        let run = || -> gpcc::Result<()> {
            let stream = std::fs::read(&input)?;
            let cloud = decode(&stream, &model.inner)?;
            let raw = RawCloud {
                positions: dequantize(&cloud),
                source: input.display().to_string(),
            };
            let mode = if ascii != 0 { PlyMode::Ascii } else { PlyMode::BinaryLittleEndian };
            write_ply(&raw, &output, mode)
        };
        match run() {
            Ok(()) => GPCC_OK,
            Err(e) => fail(e),
        }
    })
}

/// Releases a buffer returned by `gpcc_encode_points`.
///
/// # Safety
/// `(buf, len)` must be exactly as returned; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn gpcc_buffer_free(buf: *mut u8, len: usize) {
    if !buf.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf, len)));
    }
}

/// Releases a point array returned by `gpcc_decode_points`; `count` is the
/// point count that call reported.
///
/// # Safety
/// `(points, count)` must be exactly as returned; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn gpcc_points_free(points: *mut f64, count: usize) {
    if !points.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(points, count * 3)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn make_model() -> *mut GpccModel {
        let mut out: *mut GpccModel = ptr::null_mut();
        let rc = unsafe { gpcc_model_create(4, 3, 2, 1, 1, 1, 11, &mut out) };
        assert_eq!(rc, GPCC_OK);
        assert!(!out.is_null());
        out
    }

    #[test]
    fn points_round_trip() {
        let model = make_model();
        let pts: Vec<f64> = vec![
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 3.0, 3.0, 3.0, 1.0, 2.0, 2.0,
        ];
        let n = pts.len() / 3;
        let mut buf: *mut u8 = ptr::null_mut();
        let mut len = 0usize;
        let rc = unsafe { gpcc_encode_points(model, pts.as_ptr(), n, 1.0, &mut buf, &mut len) };
        assert_eq!(rc, GPCC_OK);
        assert!(len > 0);

        let mut out: *mut f64 = ptr::null_mut();
        let mut count = 0usize;
        let rc = unsafe { gpcc_decode_points(model, buf, len, &mut out, &mut count) };
        assert_eq!(rc, GPCC_OK);
        assert_eq!(count, n);
        let decoded = unsafe { std::slice::from_raw_parts(out, count * 3) };
        let mut got: Vec<[f64; 3]> = decoded.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let mut want: Vec<[f64; 3]> = pts.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);

        unsafe {
            gpcc_points_free(out, count);
            gpcc_buffer_free(buf, len);
            gpcc_model_free(model);
        }
    }

    #[test]
    fn error_paths_set_codes_and_messages() {
        let model = make_model();
        let mut buf: *mut u8 = ptr::null_mut();
        let mut len = 0usize;

        // Empty cloud is an argument error.
        let rc = unsafe { gpcc_encode_points(model, ptr::null(), 0, 1.0, &mut buf, &mut len) };
        assert_eq!(rc, GPCC_ERR_ARG);

        // Bad step.
        let pts = [0.0f64, 0.0, 0.0];
        let rc = unsafe { gpcc_encode_points(model, pts.as_ptr(), 1, 0.0, &mut buf, &mut len) };
        assert_eq!(rc, GPCC_ERR_ARG);
        let msg = unsafe { CStr::from_ptr(gpcc_last_error()) }.to_str().unwrap();
        assert!(msg.contains("step"));

        // Corrupt stream.
        let rc = unsafe { gpcc_encode_points(model, pts.as_ptr(), 1, 1.0, &mut buf, &mut len) };
        assert_eq!(rc, GPCC_OK);
        let truncated = unsafe { std::slice::from_raw_parts(buf, len - 1).to_vec() };
        let mut out: *mut f64 = ptr::null_mut();
        let mut count = 0usize;
        let rc = unsafe {
            gpcc_decode_points(model, truncated.as_ptr(), truncated.len(), &mut out, &mut count)
        };
        assert_eq!(rc, GPCC_ERR_STREAM);

        // Wrong model.
        let other = {
            let mut o: *mut GpccModel = ptr::null_mut();
            let rc = unsafe { gpcc_model_create(4, 3, 2, 1, 1, 1, 99, &mut o) };
            assert_eq!(rc, GPCC_OK);
            o
        };
        let rc = unsafe { gpcc_decode_points(other, buf, len, &mut out, &mut count) };
        assert_eq!(rc, GPCC_ERR_MODEL);
        let msg = unsafe { CStr::from_ptr(gpcc_last_error()) }.to_str().unwrap();
        assert!(msg.contains("model"));

        unsafe {
            gpcc_buffer_free(buf, len);
            gpcc_model_free(model);
            gpcc_model_free(other);
        }
    }

    #[test]
    fn model_save_load_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.gpcm").to_str().unwrap()).unwrap();
        let model = make_model();
        let mut d0 = 0u64;
        unsafe {
            assert_eq!(gpcc_model_digest(model, &mut d0), GPCC_OK);
            assert_eq!(gpcc_model_save(model, path.as_ptr()), GPCC_OK);
        }
        let mut loaded: *mut GpccModel = ptr::null_mut();
        let mut d1 = 0u64;
        unsafe {
            assert_eq!(gpcc_model_load(path.as_ptr(), &mut loaded), GPCC_OK);
            assert_eq!(gpcc_model_digest(loaded, &mut d1), GPCC_OK);
        }
        assert_eq!(d0, d1);

        let missing = CString::new(dir.path().join("absent.gpcm").to_str().unwrap()).unwrap();
        let mut m: *mut GpccModel = ptr::null_mut();
        let rc = unsafe { gpcc_model_load(missing.as_ptr(), &mut m) };
        assert_eq!(rc, GPCC_ERR_IO);

        unsafe {
            gpcc_model_free(model);
            gpcc_model_free(loaded);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ply_in = dir.path().join("in.ply");
        let spec = gpcc::io::SyntheticSpec {
            clusters: 3,
            points_per_cluster: (50, 80),
            sigma: 2.0,
            extent: 60.0,
            background_fraction: 0.1,
            seed: 4,
        };
        let cloud = gpcc::io::generate(&spec);
        write_ply(&cloud, &ply_in, PlyMode::BinaryLittleEndian).unwrap();

        let model = make_model();
        let c_in = CString::new(ply_in.to_str().unwrap()).unwrap();
        let c_stream = CString::new(dir.path().join("out.gpcc").to_str().unwrap()).unwrap();
        let c_back = CString::new(dir.path().join("back.ply").to_str().unwrap()).unwrap();
        let mut bpp = 0.0f64;
        unsafe {
            assert_eq!(
                gpcc_encode_file(model, c_in.as_ptr(), c_stream.as_ptr(), 1.0, &mut bpp),
                GPCC_OK
            );
            assert!(bpp > 0.0);
            assert_eq!(gpcc_decode_file(model, c_stream.as_ptr(), c_back.as_ptr(), 0), GPCC_OK);
        }
        let back = read_ply(dir.path().join("back.ply")).unwrap();
        let expect = quantize(&cloud.positions, 1.0).unwrap();
        let got = quantize(&back.positions, 1.0).unwrap();
        assert_eq!(got.coords, expect.coords);
        unsafe { gpcc_model_free(model) };
    }

    #[test]
    fn header_declares_every_export() {
        let header = include_str!("../include/gpcc.h");
        for name in [
            "gpcc_last_error",
            "gpcc_model_load",
            "gpcc_model_create",
            "gpcc_model_save",
            "gpcc_model_digest",
            "gpcc_model_free",
            "gpcc_encode_points",
            "gpcc_decode_points",
            "gpcc_encode_file",
            "gpcc_decode_file",
            "gpcc_buffer_free",
            "gpcc_points_free",
        ] {
            assert!(header.contains(name), "header is missing {}", name);
        }
        for (code, value) in [
            ("GPCC_OK", GPCC_OK),
            ("GPCC_ERR_ARG", GPCC_ERR_ARG),
            ("GPCC_ERR_PARSE", GPCC_ERR_PARSE),
            ("GPCC_ERR_STREAM", GPCC_ERR_STREAM),
            ("GPCC_ERR_MODEL", GPCC_ERR_MODEL),
            ("GPCC_ERR_IO", GPCC_ERR_IO),
            ("GPCC_ERR_INTERNAL", GPCC_ERR_INTERNAL),
        ] {
            let needle = format!("#define {} {}", code, value);
            assert!(header.contains(&needle), "header is missing '{}'", needle);
        }
    }

    #[test]
    fn null_and_invalid_arguments() {
        let mut out: *mut GpccModel = ptr::null_mut();
        // Even kernel size is a config error.
        let rc = unsafe { gpcc_model_create(4, 4, 2, 1, 1, 1, 0, &mut out) };
        assert_eq!(rc, GPCC_ERR_PARSE);
        // Unknown grouping flag.
        let rc = unsafe { gpcc_model_create(4, 3, 9, 1, 1, 1, 0, &mut out) };
        assert_eq!(rc, GPCC_ERR_PARSE);
        // Null out pointer.
        let rc = unsafe { gpcc_model_create(4, 3, 2, 1, 1, 1, 0, ptr::null_mut()) };
        assert_eq!(rc, GPCC_ERR_ARG);
        // Null model handle.
        let mut d = 0u64;
        let rc = unsafe { gpcc_model_digest(ptr::null(), &mut d) };
        assert_eq!(rc, GPCC_ERR_ARG);
        // Free of null is a no-op.
        unsafe {
            gpcc_model_free(ptr::null_mut());
            gpcc_buffer_free(ptr::null_mut(), 0);
            gpcc_points_free(ptr::null_mut(), 0);
        }
    }
}
