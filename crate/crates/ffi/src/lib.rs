//! C ABI over the embedsafe core.
//!
//! Every fallible call returns an [`EsStatus`]. On failure the message is
//! kept per thread and can be copied out with [`es_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.
//! Images cross the boundary as `float` buffers in channel-major order with
//! intensities in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use embedsafe::checkpoint::ModelCheckpoint;
use embedsafe::embedding::EmbeddingNet;
use embedsafe::eval::TemplateStore;
use embedsafe::generator::{Distort, Generator};
use embedsafe::image::Shape;
use embedsafe::metrics::{self, ImageDistance};
use embedsafe::{Error, Image};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    BufferTooSmall = 6,
    Failure = 7,
    Panic = 8,
}

/// Pixel distance selector for [`es_image_distance`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsDistanceKind {
    L1 = 0,
    L2 = 1,
    Dssim = 2,
    Sobel = 3,
    Combined = 4,
}

/// Result of [`es_store_verify`]. `identity` is -1 and `distance` is NaN
/// when no template was eligible.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsVerification {
    pub accepted: bool,
    pub identity: i32,
    pub distance: f64,
}

/// Opaque embedding network.
pub struct EsEmbedding(EmbeddingNet<f32>);

/// Opaque distortion generator.
pub struct EsGenerator(Generator);

/// Opaque in-memory template store.
pub struct EsTemplateStore(TemplateStore);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EsStatus {
    match e {
        Error::Dimension(_) => EsStatus::Shape,
        Error::Validation(_) | Error::Migration(_) => EsStatus::Checkpoint,
        Error::Io { .. } | Error::MissingArtifact(_) => EsStatus::Io,
        Error::Parameter(_) | Error::Config(_) => EsStatus::InvalidArgument,
        _ => EsStatus::Failure,
    }
}

struct Fail(EsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside embedsafe".into());
            EsStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Fail(EsStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn image_arg(pixels: *const f32, len: usize, shape: Shape) -> Result<Image, Fail> {
    let px = slice_arg(pixels, len, "pixels")?;
    Ok(Image::new(shape, px.to_vec())?)
}

unsafe fn out_slice<'a, T>(ptr: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(
            EsStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, need))
}

unsafe fn write_out<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr.write(value);
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// including the terminator, or 0 if there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn es_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn es_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an embedding checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_embedding_load(path: *const c_char, out: *mut *mut EsEmbedding) -> EsStatus {
    guard(|| {
        let path = path_arg(path)?;
        let net = ModelCheckpoint::load(&path)?.to_embedding()?;
        write_out(out, Box::into_raw(Box::new(EsEmbedding(net))), "out")
    })
}

/// # Safety
/// `handle` must come from [`es_embedding_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn es_embedding_free(handle: *mut EsEmbedding) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `handle` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn es_embedding_dim(handle: *const EsEmbedding) -> usize {
    handle.as_ref().map_or(0, |h| h.0.dim())
}

/// Number of input values (`width·height·channels`), or 0 for null.
///
/// # Safety
/// `handle` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn es_embedding_input_len(handle: *const EsEmbedding) -> usize {
    handle.as_ref().map_or(0, |h| h.0.arch().input_shape().len())
}

/// Writes the unit-norm embedding of `pixels` into `out`.
///
/// # Safety
/// `pixels` must hold `len` floats and `out` `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn es_embed(
    handle: *const EsEmbedding,
    pixels: *const f32,
    len: usize,
    out: *mut f32,
    out_len: usize,
) -> EsStatus {
    guard(|| {
        let emb = &handle.as_ref().ok_or_else(|| null("handle"))?.0;
        let img = image_arg(pixels, len, emb.arch().input_shape())?;
        let e = emb.embed(&img)?;
        out_slice(out, out_len, e.len(), "out")?.copy_from_slice(&e);
        Ok(())
    })
}

/// Loads a generator checkpoint (trained network or identity double).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_generator_load(path: *const c_char, out: *mut *mut EsGenerator) -> EsStatus {
    guard(|| {
        let path = path_arg(path)?;
        let gen = ModelCheckpoint::load(&path)?.to_generator()?;
        write_out(out, Box::into_raw(Box::new(EsGenerator(gen))), "out")
    })
}

/// # Safety
/// `handle` must come from [`es_generator_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn es_generator_free(handle: *mut EsGenerator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of input (and output) values, or 0 for null.
///
/// # Safety
/// `handle` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn es_generator_input_len(handle: *const EsGenerator) -> usize {
    handle.as_ref().map_or(0, |h| h.0.input_shape().len())
}

/// Writes the distorted image into `out`.
///
/// # Safety
/// `pixels` must hold `len` floats and `out` `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn es_distort(
    handle: *const EsGenerator,
    pixels: *const f32,
    len: usize,
    out: *mut f32,
    out_len: usize,
) -> EsStatus {
    guard(|| {
        let gen = &handle.as_ref().ok_or_else(|| null("handle"))?.0;
        let img = image_arg(pixels, len, gen.input_shape())?;
        let y = gen.distort(&img)?;
        out_slice(out, out_len, y.pixels().len(), "out")?.copy_from_slice(y.pixels());
        Ok(())
    })
}

/// Squared Euclidean distance between two embeddings.
///
/// # Safety
/// `u` and `v` must each hold `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_embedding_distance(
    u: *const f32,
    v: *const f32,
    len: usize,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        let d = metrics::embedding_distance(slice_arg(u, len, "u")?, slice_arg(v, len, "v")?)?;
        write_out(out, d, "out")
    })
}

/// Pixel-space distance between two images of the given shape. `param` is
/// omega for `Combined` and ignored otherwise; DSSIM uses the default
/// stabilizing constants.
///
/// # Safety
/// `pred` and `truth` must each hold `width·height·channels` floats.
#[no_mangle]
pub unsafe extern "C" fn es_image_distance(
    kind: EsDistanceKind,
    param: f64,
    pred: *const f32,
    truth: *const f32,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        let shape = Shape::new(width, height, channels);
        let p = image_arg(pred, shape.len(), shape)?;
        let t = image_arg(truth, shape.len(), shape)?;
        let dist = match kind {
            EsDistanceKind::L1 => ImageDistance::L1,
            EsDistanceKind::L2 => ImageDistance::L2,
            EsDistanceKind::Dssim => ImageDistance::dssim(),
            EsDistanceKind::Sobel => ImageDistance::Sobel,
            EsDistanceKind::Combined => ImageDistance::Combined { omega: param },
        };
        write_out(out, dist.distance(&p, &t)?, "out")
    })
}

/// Creates an empty template store.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_store_new(out: *mut *mut EsTemplateStore) -> EsStatus {
    guard(|| {
        write_out(
            out,
            Box::into_raw(Box::new(EsTemplateStore(TemplateStore::new()))),
            "out",
        )
    })
}

/// # Safety
/// `handle` must come from [`es_store_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn es_store_free(handle: *mut EsTemplateStore) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of stored templates, or 0 for null.
///
/// # Safety
/// `handle` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn es_store_len(handle: *const EsTemplateStore) -> usize {
    handle.as_ref().map_or(0, |h| h.0.len())
}

/// Distorts `pixels` with `gen` and stores the result under `identity`.
///
/// # Safety
/// All handles must be live; `pixels` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn es_store_enroll(
    store: *mut EsTemplateStore,
    gen: *const EsGenerator,
    emb: *const EsEmbedding,
    pixels: *const f32,
    len: usize,
    identity: u8,
) -> EsStatus {
    guard(|| {
        let store = &mut store.as_mut().ok_or_else(|| null("store"))?.0;
        let gen = &gen.as_ref().ok_or_else(|| null("generator"))?.0;
        let emb = &emb.as_ref().ok_or_else(|| null("embedding"))?.0;
        let img = image_arg(pixels, len, gen.input_shape())?;
        store.enroll(&img, identity, gen, emb)?;
        Ok(())
    })
}

/// Verifies a probe against the store. Pass `claimed = -1` to compare with
/// every template; otherwise only templates of that identity are used.
///
/// # Safety
/// All handles must be live; `pixels` must hold `len` floats; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn es_store_verify(
    store: *const EsTemplateStore,
    emb: *const EsEmbedding,
    pixels: *const f32,
    len: usize,
    tau: f64,
    claimed: i32,
    out: *mut EsVerification,
) -> EsStatus {
    guard(|| {
        let store = &store.as_ref().ok_or_else(|| null("store"))?.0;
        let emb = &emb.as_ref().ok_or_else(|| null("embedding"))?.0;
        let img = image_arg(pixels, len, emb.arch().input_shape())?;
        let claimed = match claimed {
            -1 => None,
            c @ 0..=255 => Some(c as u8),
            c => {
                return Err(Fail(
                    EsStatus::InvalidArgument,
                    format!("claimed identity {c} out of range"),
                ))
            }
        };
        let v = store.verify_claim(&img, emb, tau, claimed)?;
        write_out(
            out,
            EsVerification {
                accepted: v.accepted,
                identity: v.identity.map_or(-1, i32::from),
                distance: v.distance.unwrap_or(f64::NAN),
            },
            "out",
        )
    })
}
