//! C ABI over the softwarp library.
//!
//! Handles are opaque pointers created and destroyed by `sw_*` calls; the
//! caller must free every returned handle and string with the matching
//! `sw_*_free` function. Fallible calls either return NULL (pointer
//! results) or a [`SwStatus`] other than `SW_STATUS_OK`, and leave a
//! human-readable explanation in a thread-local slot readable through
//! [`sw_last_error_message`]. No call unwinds across the boundary; panics
//! are caught and reported as `SW_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use softwarp::io;
use softwarp::losses::{
    adversarial_loss, perceptual_loss, pixel_loss, pyramid_loss, total_loss, AdversarialSide,
    PyramidExtractor,
};
use softwarp::metrics::{mean_iou, ssim, SsimConfig};
use softwarp::pipeline::{
    estimate_transform_set, realize_backward_grid, render, squash_score, PipelineConfig,
    RenderTarget, TransformSet,
};
use softwarp::warp::{bilinear_sample, BorderRule};
use softwarp::{Error, ImageTensor, SegmentationMap};

/// Outcome of a status-returning call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    ShapeMismatch = 3,
    InvalidArgument = 4,
    DegenerateGeometry = 5,
    SingularSystem = 6,
    NonFinite = 7,
    FormatError = 8,
    IoError = 9,
    ImageError = 10,
    JsonError = 11,
    /// The library panicked; state is consistent but the call did nothing.
    Panic = 12,
}

/// A dense image, values in `[0, 1]`, laid out row-major as `(y, x, channel)`.
pub struct SwImage(ImageTensor);

/// A part-label map, one byte per pixel, labels below 20.
pub struct SwSegmentation(SegmentationMap);

/// Per-part forward and backward transforms between two parsings.
pub struct SwTransformSet(TransformSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained NUL").expect("literal"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(e: &Error) -> SwStatus {
    match e {
        Error::ShapeMismatch(_) => SwStatus::ShapeMismatch,
        Error::InvalidArgument(_) => SwStatus::InvalidArgument,
        Error::DegenerateGeometry(_) => SwStatus::DegenerateGeometry,
        Error::SingularSystem(_) => SwStatus::SingularSystem,
        Error::NonFinite(_) => SwStatus::NonFinite,
        Error::Format(_) => SwStatus::FormatError,
        Error::Io(_) => SwStatus::IoError,
        Error::Image(_) => SwStatus::ImageError,
        Error::Json(_) => SwStatus::JsonError,
    }
}

fn fail(e: &Error) -> SwStatus {
    set_error(e.to_string());
    status_of(e)
}

/// Runs a fallible body, translating errors and panics into a status.
fn guarded(f: impl FnOnce() -> Result<(), Error>) -> SwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            SwStatus::Ok
        }
        Ok(Err(e)) => fail(&e),
        Err(_) => {
            set_error("panic inside the library".into());
            SwStatus::Panic
        }
    }
}

/// Runs a pointer-producing body, translating errors and panics into NULL.
fn guarded_ptr<T>(f: impl FnOnce() -> Result<*mut T, Error>) -> *mut T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(p)) => {
            clear_error();
            p
        }
        Ok(Err(e)) => {
            fail(&e);
            ptr::null_mut()
        }
        Err(_) => {
            set_error("panic inside the library".into());
            ptr::null_mut()
        }
    }
}

fn null_error<T>(what: &str) -> Result<T, Error> {
    Err(Error::InvalidArgument(format!("{what} must not be NULL")))
}

unsafe fn ref_from<'a, T>(p: *const T, what: &str) -> Result<&'a T, Error> {
    if p.is_null() {
        return null_error(what);
    }
    Ok(&*p)
}

unsafe fn path_from<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Error> {
    if p.is_null() {
        return null_error(what);
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not valid UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn str_from<'a>(p: *const c_char, what: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return null_error(what);
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not valid UTF-8")))
}

fn boxed<H>(h: H) -> *mut H {
    Box::into_raw(Box::new(h))
}

fn config_from(json: *const c_char) -> Result<PipelineConfig, Error> {
    let cfg = if json.is_null() {
        PipelineConfig::default()
    } else {
        serde_json::from_str(unsafe { str_from(json, "config JSON")? })?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn json_string(value: &impl serde::Serialize) -> Result<*mut c_char, Error> {
    let text = serde_json::to_string_pretty(value)?;
    let c = CString::new(text)
        .map_err(|_| Error::InvalidArgument("JSON contained a NUL byte".into()))?;
    Ok(c.into_raw())
}

/// Library version as a static NUL-terminated string; never freed.
#[no_mangle]
pub extern "C" fn sw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for this thread's most recent failure, or NULL after a success.
/// The pointer stays valid until the next `sw_` call on the same thread.
#[no_mangle]
pub extern "C" fn sw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |m| m.as_ptr())
    })
}

/// Frees a string returned by this library. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads an 8-bit gray or RGB PNG into an image handle.
#[no_mangle]
pub unsafe extern "C" fn sw_image_read_png(path: *const c_char) -> *mut SwImage {
    guarded_ptr(|| {
        let path = path_from(path, "path")?;
        Ok(boxed(SwImage(io::read_image_png(path)?)))
    })
}

/// Writes an image handle as PNG (gray for one channel, RGB for three).
#[no_mangle]
pub unsafe extern "C" fn sw_image_write_png(
    image: *const SwImage,
    path: *const c_char,
) -> SwStatus {
    guarded(|| {
        let image = ref_from(image, "image")?;
        io::write_image_png(path_from(path, "path")?, &image.0)
    })
}

/// Builds an image from `height * width * channels` doubles in `[0, 1]`,
/// ordered row-major by `(y, x, channel)`.
#[no_mangle]
pub unsafe extern "C" fn sw_image_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
) -> *mut SwImage {
    guarded_ptr(|| {
        if data.is_null() {
            return null_error("data");
        }
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidArgument("image dimensions overflow".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        Ok(boxed(SwImage(ImageTensor::new(height, width, channels, values)?)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sw_image_height(image: *const SwImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.height())
}

#[no_mangle]
pub unsafe extern "C" fn sw_image_width(image: *const SwImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.width())
}

#[no_mangle]
pub unsafe extern "C" fn sw_image_channels(image: *const SwImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.channels())
}

/// Copies the image's doubles into `out`, which must hold `len` values
/// equal to `height * width * channels`.
#[no_mangle]
pub unsafe extern "C" fn sw_image_copy_data(
    image: *const SwImage,
    out: *mut f64,
    len: usize,
) -> SwStatus {
    guarded(|| {
        let image = ref_from(image, "image")?;
        if out.is_null() {
            return null_error("out");
        }
        let data = image.0.data();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "buffer holds {len} values but the image has {}",
                data.len()
            )));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(data);
        Ok(())
    })
}

/// Frees an image handle. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sw_image_free(image: *mut SwImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Reads a gray PNG whose pixel values are part labels below 20.
#[no_mangle]
pub unsafe extern "C" fn sw_segmentation_read_png(path: *const c_char) -> *mut SwSegmentation {
    guarded_ptr(|| {
        let path = path_from(path, "path")?;
        Ok(boxed(SwSegmentation(io::read_segmentation_png(path)?)))
    })
}

/// Writes a segmentation handle as a gray PNG, pixel value = label.
#[no_mangle]
pub unsafe extern "C" fn sw_segmentation_write_png(
    seg: *const SwSegmentation,
    path: *const c_char,
) -> SwStatus {
    guarded(|| {
        let seg = ref_from(seg, "segmentation")?;
        io::write_segmentation_png(path_from(path, "path")?, &seg.0)
    })
}

/// Builds a segmentation from `height * width` row-major labels below 20.
#[no_mangle]
pub unsafe extern "C" fn sw_segmentation_new(
    height: usize,
    width: usize,
    labels: *const u8,
) -> *mut SwSegmentation {
    guarded_ptr(|| {
        if labels.is_null() {
            return null_error("labels");
        }
        let len = height
            .checked_mul(width)
            .ok_or_else(|| Error::InvalidArgument("segmentation dimensions overflow".into()))?;
        let values = std::slice::from_raw_parts(labels, len).to_vec();
        Ok(boxed(SwSegmentation(SegmentationMap::new(height, width, values)?)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sw_segmentation_height(seg: *const SwSegmentation) -> usize {
    seg.as_ref().map_or(0, |s| s.0.height())
}

#[no_mangle]
pub unsafe extern "C" fn sw_segmentation_width(seg: *const SwSegmentation) -> usize {
    seg.as_ref().map_or(0, |s| s.0.width())
}

/// Label at `(y, x)`, or -1 when the handle is NULL or the point is
/// outside the map.
#[no_mangle]
pub unsafe extern "C" fn sw_segmentation_label_at(
    seg: *const SwSegmentation,
    y: usize,
    x: usize,
) -> i32 {
    match seg.as_ref() {
        Some(s) if y < s.0.height() && x < s.0.width() => i32::from(s.0.label_at(y, x)),
        _ => -1,
    }
}

/// Frees a segmentation handle. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sw_segmentation_free(seg: *mut SwSegmentation) {
    if !seg.is_null() {
        drop(Box::from_raw(seg));
    }
}

/// Estimates affine+TPS transforms for every part label the two parsings
/// share, with a `tps_rows` by `tps_cols` control grid for the residual.
#[no_mangle]
pub unsafe extern "C" fn sw_estimate_transforms(
    condition: *const SwSegmentation,
    target: *const SwSegmentation,
    tps_rows: usize,
    tps_cols: usize,
) -> *mut SwTransformSet {
    guarded_ptr(|| {
        let condition = ref_from(condition, "condition segmentation")?;
        let target = ref_from(target, "target segmentation")?;
        let set = estimate_transform_set(&condition.0, &target.0, (tps_rows, tps_cols))?;
        Ok(boxed(SwTransformSet(set)))
    })
}

/// Serializes a transform set to a JSON string; free with `sw_string_free`.
#[no_mangle]
pub unsafe extern "C" fn sw_transform_set_to_json(set: *const SwTransformSet) -> *mut c_char {
    guarded_ptr(|| {
        let set = ref_from(set, "transform set")?;
        json_string(&set.0)
    })
}

/// Parses a transform set from the JSON produced by
/// `sw_transform_set_to_json` or the `estimate` subcommand.
#[no_mangle]
pub unsafe extern "C" fn sw_transform_set_from_json(json: *const c_char) -> *mut SwTransformSet {
    guarded_ptr(|| {
        let set: TransformSet = serde_json::from_str(str_from(json, "JSON")?)?;
        Ok(boxed(SwTransformSet(set)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sw_transform_set_part_count(set: *const SwTransformSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.parts.len())
}

/// Label of the part at `index`, or -1 when out of range or NULL.
#[no_mangle]
pub unsafe extern "C" fn sw_transform_set_label_at(
    set: *const SwTransformSet,
    index: usize,
) -> i32 {
    set.as_ref()
        .and_then(|s| s.0.parts.get(index))
        .map_or(-1, |p| i32::from(p.label))
}

/// Frees a transform set handle. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sw_transform_set_free(set: *mut SwTransformSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Warps a whole image through the backward map stored for `label`,
/// sampling bilinearly with a zero border. The image must match the frame
/// the transforms were estimated on.
#[no_mangle]
pub unsafe extern "C" fn sw_warp_image(
    image: *const SwImage,
    set: *const SwTransformSet,
    label: u8,
) -> *mut SwImage {
    guarded_ptr(|| {
        let image = ref_from(image, "image")?;
        let set = ref_from(set, "transform set")?;
        let entry = set
            .0
            .parts
            .iter()
            .find(|p| p.label == label)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("transform set has no part labeled {label}"))
            })?;
        if (set.0.height, set.0.width) != (image.0.height(), image.0.width()) {
            return Err(Error::ShapeMismatch(format!(
                "transforms were estimated on a {}x{} frame but the image is {}x{}",
                set.0.height,
                set.0.width,
                image.0.height(),
                image.0.width()
            )));
        }
        let grid = realize_backward_grid(&entry.backward, set.0.height, set.0.width)?;
        Ok(boxed(SwImage(bilinear_sample(&image.0, &grid, BorderRule::Zeros))))
    })
}

/// Renders the condition image into the target parsing's layout.
///
/// `config_json` may be NULL for the default configuration. When
/// `diagnostics_json_out` is not NULL it receives a JSON string (free with
/// `sw_string_free`) describing per-part estimates and omissions.
#[no_mangle]
pub unsafe extern "C" fn sw_render(
    condition_image: *const SwImage,
    condition_parsing: *const SwSegmentation,
    target_parsing: *const SwSegmentation,
    config_json: *const c_char,
    diagnostics_json_out: *mut *mut c_char,
) -> *mut SwImage {
    guarded_ptr(|| {
        let image = ref_from(condition_image, "condition image")?;
        let parsing = ref_from(condition_parsing, "condition parsing")?;
        let target = ref_from(target_parsing, "target parsing")?;
        let cfg = config_from(config_json)?;
        let out = render(&image.0, &parsing.0, RenderTarget::Parsing(&target.0), &cfg)?;
        if !diagnostics_json_out.is_null() {
            *diagnostics_json_out = json_string(&out.diagnostics)?;
        }
        Ok(boxed(SwImage(out.image)))
    })
}

/// Mean SSIM between two images of the same shape, written to `out`.
#[no_mangle]
pub unsafe extern "C" fn sw_ssim(
    a: *const SwImage,
    b: *const SwImage,
    out: *mut f64,
) -> SwStatus {
    guarded(|| {
        let a = ref_from(a, "first image")?;
        let b = ref_from(b, "second image")?;
        if out.is_null() {
            return null_error("out");
        }
        *out = ssim(&a.0, &b.0, &SsimConfig::default())?;
        Ok(())
    })
}

/// Mean IoU between two label maps over `label_count` labels, written to
/// `out`.
#[no_mangle]
pub unsafe extern "C" fn sw_mean_iou(
    a: *const SwSegmentation,
    b: *const SwSegmentation,
    labels: *const u8,
    label_count: usize,
    out: *mut f64,
) -> SwStatus {
    guarded(|| {
        let a = ref_from(a, "first segmentation")?;
        let b = ref_from(b, "second segmentation")?;
        if labels.is_null() {
            return null_error("labels");
        }
        if out.is_null() {
            return null_error("out");
        }
        let labels = std::slice::from_raw_parts(labels, label_count);
        *out = mean_iou(&a.0, &b.0, labels)?;
        Ok(())
    })
}

/// All loss terms between a generated and a target image as a JSON string
/// `{"adversarial", "pixel", "perceptual", "pyramid", "total"}`; free with
/// `sw_string_free`. `config_json` may be NULL for defaults.
#[no_mangle]
pub unsafe extern "C" fn sw_losses_json(
    generated: *const SwImage,
    target: *const SwImage,
    config_json: *const c_char,
) -> *mut c_char {
    guarded_ptr(|| {
        let generated = ref_from(generated, "generated image")?;
        let target = ref_from(target, "target image")?;
        let cfg = config_from(config_json)?;
        let pixel = pixel_loss(&generated.0, &target.0)?;
        let perceptual = perceptual_loss(&generated.0, &target.0, &PyramidExtractor::default())?;
        let pyramid = pyramid_loss(&generated.0, &target.0, &cfg.loss.extractor()?)?;
        let score = squash_score(ssim(&generated.0, &target.0, &SsimConfig::default())?);
        let adversarial = adversarial_loss(&[], &[score], AdversarialSide::Generator)?;
        let total = total_loss(adversarial, pixel, perceptual, pyramid, &cfg.loss.lambda)?;
        json_string(&serde_json::json!({
            "adversarial": adversarial,
            "pixel": pixel,
            "perceptual": perceptual,
            "pyramid": pyramid,
            "total": total,
        }))
    })
}
