//! C interface to the cascade detector.
//!
//! A model is loaded from a training checkpoint into an opaque
//! [`CascadeModel`] handle. Every fallible call returns a [`CascadeStatus`];
//! on failure the message is kept per thread and can be copied out with
//! [`cascade_last_error_message`]. Panics never cross the boundary.
//!
//! Images are 64×64 interleaved RGB, row-major, one byte per channel.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cascade_core::evalkit::{box_iou, image_tensor, paste_mask, CascadeModel as _, EvalOptions};
use cascade_core::geometry::BBox;
use cascade_core::netcore::{load_checkpoint, ModelParams};
use cascade_core::scenegen::RgbImage;
use cascade_core::{Error, IMAGE_SIZE};

/// Side length of the square input image in pixels.
pub const CASCADE_IMAGE_SIZE: usize = 64;
/// Bytes in one input image.
pub const CASCADE_IMAGE_BYTES: usize = CASCADE_IMAGE_SIZE * CASCADE_IMAGE_SIZE * 3;

const _: () = assert!(CASCADE_IMAGE_SIZE == IMAGE_SIZE);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascadeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    NotFound = 4,
    Corrupt = 5,
    BufferTooSmall = 6,
    Internal = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct CascadeModel {
    params: ModelParams,
    options: EvalOptions,
}

/// One detection with its mask area and decoded pose.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CascadeDetection {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    /// 0 arrow, 1 tee, 2 ellipse.
    pub class_id: u32,
    pub score: f64,
    pub angle: f64,
    pub depth: f64,
    pub mask_pixels: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(message: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(message.bytes().filter(|&b| b != 0));
    });
}

struct Failure(CascadeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::MissingInput(_) => CascadeStatus::NotFound,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => CascadeStatus::NotFound,
            Error::Io { .. } => CascadeStatus::Io,
            Error::DatasetCorrupt { .. } | Error::Parse { .. } => CascadeStatus::Corrupt,
            Error::InvalidInput(_) | Error::Shape { .. } | Error::Config(_) => CascadeStatus::InvalidArgument,
            _ => CascadeStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: CascadeStatus, message: impl Into<String>) -> Failure {
    Failure(status, message.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CascadeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CascadeStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("panic inside cascade");
            CascadeStatus::Panic
        }
    }
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn cascade_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` with a
/// terminating NUL. `required` receives the full size including the NUL.
/// Passing a null `buf` only queries the size.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes; `required` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cascade_last_error_message(
    buf: *mut c_char,
    len: usize,
    required: *mut usize,
) -> CascadeStatus {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let need = e.len() + 1;
        if !required.is_null() {
            *required = need;
        }
        if buf.is_null() {
            return CascadeStatus::Ok;
        }
        if len < need {
            return CascadeStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), e.len());
        *buf.add(e.len()) = 0;
        CascadeStatus::Ok
    })
}

/// Loads the parameters stored in a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cascade_model_load(path: *const c_char, out: *mut *mut CascadeModel) -> CascadeStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(CascadeStatus::NullPointer, "path and out must not be null"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(CascadeStatus::InvalidArgument, "path is not valid UTF-8"))?;
        let checkpoint = load_checkpoint(Path::new(path))?;
        let model = CascadeModel {
            params: checkpoint.params,
            options: EvalOptions::default(),
        };
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`cascade_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cascade_model_free(model: *mut CascadeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sets the minimum detection score, in `[0, 1]`.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cascade_model_set_score_threshold(model: *mut CascadeModel, threshold: f64) -> CascadeStatus {
    guard(|| {
        let model = model
            .as_mut()
            .ok_or_else(|| fail(CascadeStatus::NullPointer, "model is null"))?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(fail(
                CascadeStatus::InvalidArgument,
                format!("score threshold {threshold} outside [0, 1]"),
            ));
        }
        model.options.score_threshold = threshold;
        Ok(())
    })
}

/// Runs detection, mask and pose heads on one image.
///
/// Writes at most `capacity` detections, best first, and the total number
/// found to `count`. If `count > capacity` the call returns
/// `BufferTooSmall` after filling the buffer.
///
/// # Safety
/// `model` must be a live handle, `rgb` valid for `rgb_len` bytes,
/// `detections` null or valid for `capacity` elements, `count` writable.
#[no_mangle]
pub unsafe extern "C" fn cascade_model_detect(
    model: *const CascadeModel,
    rgb: *const u8,
    rgb_len: usize,
    detections: *mut CascadeDetection,
    capacity: usize,
    count: *mut usize,
) -> CascadeStatus {
    guard(|| {
        let model = model
            .as_ref()
            .ok_or_else(|| fail(CascadeStatus::NullPointer, "model is null"))?;
        if rgb.is_null() || count.is_null() || (detections.is_null() && capacity > 0) {
            return Err(fail(
                CascadeStatus::NullPointer,
                "rgb, detections and count must not be null",
            ));
        }
        *count = 0;
        if rgb_len != CASCADE_IMAGE_BYTES {
            return Err(fail(
                CascadeStatus::InvalidArgument,
                format!("expected {CASCADE_IMAGE_BYTES} image bytes, got {rgb_len}"),
            ));
        }
        let image = RgbImage {
            height: IMAGE_SIZE,
            width: IMAGE_SIZE,
            data: std::slice::from_raw_parts(rgb, rgb_len).to_vec(),
        };
        let found = detect(model, &image)?;
        *count = found.len();
        for (i, d) in found.iter().take(capacity).enumerate() {
            *detections.add(i) = *d;
        }
        if found.len() > capacity {
            return Err(fail(
                CascadeStatus::BufferTooSmall,
                format!("{} detections, room for {capacity}", found.len()),
            ));
        }
        Ok(())
    })
}

fn detect(model: &CascadeModel, image: &RgbImage) -> Result<Vec<CascadeDetection>, Failure> {
    let params = &model.params;
    let features = params.features(&image_tensor(image))?;
    let mut out = Vec::new();
    for d in params.detect(&features, &model.options)? {
        let (probs, pose) = params.attributes(0, &features, &d.bbox, d.class_id)?;
        let mask = paste_mask(&probs, &d.bbox, IMAGE_SIZE, IMAGE_SIZE, model.options.mask_threshold);
        out.push(CascadeDetection {
            x_min: d.bbox.x_min,
            y_min: d.bbox.y_min,
            x_max: d.bbox.x_max,
            y_max: d.bbox.y_max,
            class_id: d.class_id as u32,
            score: d.score,
            angle: pose.angle,
            depth: pose.depth,
            mask_pixels: mask.count() as u32,
        });
    }
    Ok(out)
}

/// Intersection over union of two `[x_min, y_min, x_max, y_max]` boxes.
///
/// # Safety
/// `a` and `b` must point to four doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cascade_box_iou(a: *const f64, b: *const f64, out: *mut f64) -> CascadeStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(fail(CascadeStatus::NullPointer, "a, b and out must not be null"));
        }
        let read = |p: *const f64| {
            let v = std::slice::from_raw_parts(p, 4);
            let bbox = BBox::new(v[0], v[1], v[2], v[3]);
            if v.iter().all(|x| x.is_finite()) && v[0] <= v[2] && v[1] <= v[3] {
                Ok(bbox)
            } else {
                Err(fail(CascadeStatus::InvalidArgument, format!("malformed box {v:?}")))
            }
        };
        *out = box_iou(&read(a)?, &read(b)?);
        Ok(())
    })
}
