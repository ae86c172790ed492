//! C ABI over `crowdflow`.
//!
//! Every fallible function returns a [`CfStatus`]; on failure the message is
//! available from [`cf_last_error_message`]. Objects are opaque handles
//! created by `cf_*_load`/`cf_*_new`/producer calls and released with the
//! matching `cf_*_free`. Maps are row-major `height × width` arrays of
//! `double`; images are channel-planar `float` in `[0, 1]`.

use std::ffi::{c_char, CStr};
use std::path::Path;

use crowdflow::groundtruth::{density_map, HeadAnnotation, Image, KernelConfig, ScalarMap};
use crowdflow::metrics::{l_map, mae_mse, CountRecord};
use crowdflow::postprocess::{localize, track, Detection, FlowParams, NmsConfig, Tracklet};
use crowdflow::stanet::Model;

mod status;

pub use status::{cf_clear_error, cf_last_error_message, CfStatus};
use status::{guard, invalid, null, Fail};

/// A point detection. Coordinates are in pixels, origin at the top-left
/// image corner.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfDetection {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// An annotated head with its identity.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfHead {
    pub frame: usize,
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

impl From<&Detection> for CfDetection {
    fn from(d: &Detection) -> Self {
        CfDetection {
            frame: d.frame,
            x: d.x,
            y: d.y,
            confidence: d.confidence,
        }
    }
}

impl From<CfDetection> for Detection {
    fn from(d: CfDetection) -> Self {
        Detection {
            frame: d.frame,
            x: d.x,
            y: d.y,
            confidence: d.confidence,
        }
    }
}

/// Trained network.
pub struct CfModel(Model);

/// Growable list of detections.
pub struct CfDetections(Vec<Detection>);

/// Tracking result.
pub struct CfTracklets(Vec<Tracklet>);

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn reference<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn area(width: usize, height: usize) -> Result<usize, Fail> {
    width
        .checked_mul(height)
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("bad map extents {width}x{height}")))
}

unsafe fn map_from(values: *const f64, width: usize, height: usize) -> Result<ScalarMap, Fail> {
    let n = area(width, height)?;
    let v = slice(values, n, "map")?;
    let mut m = ScalarMap::zeros(width, height);
    m.values.copy_from_slice(v);
    Ok(m)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_model_load(path: *const c_char, out: *mut *mut CfModel) -> CfStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| Fail(CfStatus::Utf8, format!("path: {e}")))?;
        let model = Model::load(Path::new(p))?;
        write_out(out, Box::into_raw(Box::new(CfModel(model))), "out")
    })
}

/// # Safety
/// `model` must come from [`cf_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_model_free(model: *mut CfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Frame pairing gap of the model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_model_tau(model: *const CfModel, out: *mut usize) -> CfStatus {
    guard(|| write_out(out, reference(model, "model")?.0.config.tau, "out"))
}

/// Run the network on a frame and its earlier partner. Both images are
/// 3-channel planar `width × height`; extents must be multiples of 8.
/// Writes the finest density map to `out_density` and, if the model has a
/// localization head and `out_localization` is non-null, the finest
/// localization map.
///
/// # Safety
/// Image buffers must hold `3·width·height` floats, outputs
/// `width·height` doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_model_predict(
    model: *const CfModel,
    current: *const f32,
    previous: *const f32,
    width: usize,
    height: usize,
    out_density: *mut f64,
    out_localization: *mut f64,
) -> CfStatus {
    guard(|| {
        let model = &reference(model, "model")?.0;
        let n = area(width, height)?;
        let image = |ptr, what| -> Result<Image, Fail> {
            Ok(Image {
                width,
                height,
                channels: 3,
                data: slice(ptr, 3 * n, what)?.to_vec(),
            })
        };
        let pred = model.predict(&image(current, "current")?, &image(previous, "previous")?)?;
        slice_mut(out_density, n, "out_density")?.copy_from_slice(&pred.final_density().values);
        if !out_localization.is_null() {
            if let Some(l) = pred.final_localization() {
                slice_mut(out_localization, n, "out_localization")?.copy_from_slice(&l.values);
            }
        }
        Ok(())
    })
}

/// Empty detection list.
#[no_mangle]
pub extern "C" fn cf_detections_new() -> *mut CfDetections {
    Box::into_raw(Box::new(CfDetections(Vec::new())))
}

/// # Safety
/// `dets` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cf_detections_free(dets: *mut CfDetections) {
    if !dets.is_null() {
        drop(Box::from_raw(dets));
    }
}

/// # Safety
/// `dets` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_detections_push(dets: *mut CfDetections, det: CfDetection) -> CfStatus {
    guard(|| {
        let d = dets.as_mut().ok_or_else(|| null("dets"))?;
        if !(det.x.is_finite() && det.y.is_finite() && det.confidence.is_finite()) {
            return Err(Fail(
                CfStatus::NonFinite,
                "detection has non-finite fields".into(),
            ));
        }
        d.0.push(det.into());
        Ok(())
    })
}

/// Number of detections, 0 for a null handle.
///
/// # Safety
/// `dets` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cf_detections_len(dets: *const CfDetections) -> usize {
    dets.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dets` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_detections_get(
    dets: *const CfDetections,
    index: usize,
    out: *mut CfDetection,
) -> CfStatus {
    guard(|| {
        let d = &reference(dets, "dets")?.0;
        let det = d.get(index).ok_or_else(|| {
            Fail(
                CfStatus::OutOfBounds,
                format!("detection {index} of {}", d.len()),
            )
        })?;
        write_out(out, det.into(), "out")
    })
}

/// Non-maximum suppression on a localization map; appends the peaks,
/// stamped with `frame`, to `dets`.
///
/// # Safety
/// `map` must hold `width·height` doubles; `dets` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_localize(
    map: *const f64,
    width: usize,
    height: usize,
    frame: usize,
    theta: f64,
    radius: usize,
    dets: *mut CfDetections,
) -> CfStatus {
    guard(|| {
        let m = map_from(map, width, height)?;
        let d = dets.as_mut().ok_or_else(|| null("dets"))?;
        d.0.extend(localize(&m, frame, NmsConfig { theta, radius })?);
        Ok(())
    })
}

/// Link detections into tracklets by min-cost flow.
///
/// # Safety
/// `dets` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_track(
    dets: *const CfDetections,
    gate: f64,
    entry_cost: f64,
    exit_cost: f64,
    out: *mut *mut CfTracklets,
) -> CfStatus {
    guard(|| {
        let d = &reference(dets, "dets")?.0;
        let params = FlowParams {
            gate,
            entry_cost,
            exit_cost,
            ..FlowParams::default()
        };
        let t = track(d, &params)?;
        write_out(out, Box::into_raw(Box::new(CfTracklets(t))), "out")
    })
}

/// # Safety
/// `t` must come from [`cf_track`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_tracklets_free(t: *mut CfTracklets) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of tracklets, 0 for a null handle.
///
/// # Safety
/// `t` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cf_tracklets_len(t: *const CfTracklets) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

unsafe fn tracklet<'a>(t: *const CfTracklets, index: usize) -> Result<&'a Tracklet, Fail> {
    let all = &reference(t, "tracklets")?.0;
    all.get(index).ok_or_else(|| {
        Fail(
            CfStatus::OutOfBounds,
            format!("tracklet {index} of {}", all.len()),
        )
    })
}

/// Identity, length and average confidence of tracklet `index`. Any output
/// pointer may be null.
///
/// # Safety
/// `t` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_tracklet_info(
    t: *const CfTracklets,
    index: usize,
    out_id: *mut u64,
    out_len: *mut usize,
    out_confidence: *mut f64,
) -> CfStatus {
    guard(|| {
        let tr = tracklet(t, index)?;
        if !out_id.is_null() {
            out_id.write(tr.id);
        }
        if !out_len.is_null() {
            out_len.write(tr.len());
        }
        if !out_confidence.is_null() {
            out_confidence.write(tr.average_confidence);
        }
        Ok(())
    })
}

/// Detection `k` of tracklet `index`, in frame order.
///
/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_tracklet_detection(
    t: *const CfTracklets,
    index: usize,
    k: usize,
    out: *mut CfDetection,
) -> CfStatus {
    guard(|| {
        let tr = tracklet(t, index)?;
        let d = tr.detections.get(k).ok_or_else(|| {
            Fail(
                CfStatus::OutOfBounds,
                format!("detection {k} of {}", tr.len()),
            )
        })?;
        write_out(out, d.into(), "out")
    })
}

/// Counting MAE and MSE (root of the mean squared error) over `n` frames.
///
/// # Safety
/// `truth` and `estimate` must hold `n` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_mae_mse(
    truth: *const f64,
    estimate: *const f64,
    n: usize,
    out_mae: *mut f64,
    out_mse: *mut f64,
) -> CfStatus {
    guard(|| {
        let t = slice(truth, n, "truth")?;
        let e = slice(estimate, n, "estimate")?;
        let records: Vec<CountRecord> = t
            .iter()
            .zip(e)
            .enumerate()
            .map(|(frame, (&truth, &estimate))| CountRecord {
                video: 0,
                frame,
                truth,
                estimate,
            })
            .collect();
        let (mae, mse) = mae_mse(&records)?;
        write_out(out_mae, mae, "out_mae")?;
        write_out(out_mse, mse, "out_mse")
    })
}

/// Localization mean average precision over the 1–25 px thresholds.
///
/// # Safety
/// `dets` must be a live handle, `heads` must hold `n_heads` entries and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_l_map(
    dets: *const CfDetections,
    heads: *const CfHead,
    n_heads: usize,
    out: *mut f64,
) -> CfStatus {
    guard(|| {
        let d = &reference(dets, "dets")?.0;
        let gts: Vec<HeadAnnotation> = slice(heads, n_heads, "heads")?
            .iter()
            .map(|h| HeadAnnotation {
                frame: h.frame,
                id: h.id,
                x: h.x,
                y: h.y,
            })
            .collect();
        write_out(out, l_map(d, &gts)?.l_map, "out")
    })
}

/// Ground-truth density map of `n` heads given as interleaved `x, y`
/// pairs. `fixed_sigma > 0` selects a fixed kernel, otherwise the
/// neighbour-adaptive one.
///
/// # Safety
/// `xy` must hold `2n` doubles, `out` `width·height` doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_density_map(
    xy: *const f64,
    n: usize,
    width: usize,
    height: usize,
    fixed_sigma: f64,
    out: *mut f64,
) -> CfStatus {
    guard(|| {
        let cells = area(width, height)?;
        let pts: Vec<(f64, f64)> = slice(xy, 2 * n, "xy")?
            .chunks_exact(2)
            .map(|p| (p[0], p[1]))
            .collect();
        let kernel = if fixed_sigma > 0.0 {
            KernelConfig::fixed(fixed_sigma)
        } else {
            KernelConfig::default()
        };
        let m = density_map(&pts, width, height, &kernel)?;
        slice_mut(out, cells, "out")?.copy_from_slice(&m.values);
        Ok(())
    })
}
