//! C interface to the slice-graph spectral encoder.
//!
//! Every function returns a [`CtssgStatus`]; results come back through
//! out-pointers. On any non-Ok status the failing thread can fetch a
//! message with [`ctssg_last_error`]. Handles are opaque and owned by
//! the caller: whatever a `_build`, `_new`, or `_load` call hands out
//! must go back through the matching `_free`.
//!
//! No function panics across the boundary; every entry point is wrapped
//! in `catch_unwind` and reports `Internal` instead.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ctssg::encoder::{ModelContext, ModelParams};
use ctssg::experiment::{load_checkpoint, make_context, ExperimentConfig};
use ctssg::graph::{build_graph, GraphConfig, SliceGraph};
use ctssg::{Error, Tensor};

/// Outcome of a call. Everything except `Ok` leaves a message in
/// `ctssg_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtssgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument violated the documented contract.
    InvalidArgument = 2,
    /// A numerical procedure failed to produce a finite result.
    Numeric = 3,
    /// The filesystem said no.
    Io = 4,
    /// A bug: an unexpected panic was caught at the boundary.
    Internal = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(cleaned).expect("nul bytes removed"));
    });
}

fn status_of(err: &Error) -> CtssgStatus {
    match err {
        Error::Dimension(_) | Error::Validation(_) | Error::Index(_) | Error::Json(_) => {
            CtssgStatus::InvalidArgument
        }
        Error::Numeric(_) => CtssgStatus::Numeric,
        Error::Load(_) | Error::Io(_) => CtssgStatus::Io,
    }
}

fn fail(err: Error) -> CtssgStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn fail_null(what: &str) -> CtssgStatus {
    set_error(&format!("{what} is null"));
    CtssgStatus::NullPointer
}

/// Runs a closure, converting panics into `Internal`.
fn guarded(f: impl FnOnce() -> CtssgStatus) -> CtssgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with a non-string payload".to_string());
            set_error(&format!("internal panic: {msg}"));
            CtssgStatus::Internal
        }
    }
}

/// Reads a UTF-8 C string argument.
///
/// # Safety
/// `ptr` must be null or a valid nul-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, CtssgStatus> {
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        CtssgStatus::InvalidArgument
    })
}

/// Message from the most recent failing call on this thread, or null
/// when every call so far succeeded. The pointer stays valid until the
/// next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn ctssg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Library version as a static string; do not free it.
#[no_mangle]
pub extern "C" fn ctssg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from a `ctssg_*` call that
/// documents this as its deallocator, passed at most once.
#[no_mangle]
pub unsafe extern "C" fn ctssg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Distance-weighted sequence graph over slice triplets.
pub struct CtssgGraph {
    inner: SliceGraph,
}

/// Builds a banded graph with `nodes` triplets, edges up to
/// `receptive_field` index steps apart, and physical slice spacing
/// `spacing_dm` (decimeters). The handle goes to `out`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctssg_graph_build(
    nodes: usize,
    receptive_field: usize,
    spacing_dm: f64,
    out: *mut *mut CtssgGraph,
) -> CtssgStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        match build_graph(&GraphConfig::new(nodes, receptive_field, spacing_dm)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CtssgGraph { inner }));
                CtssgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `graph` must be null or an unfreed handle from `ctssg_graph_build`.
#[no_mangle]
pub unsafe extern "C" fn ctssg_graph_free(graph: *mut CtssgGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ctssg_graph_node_count(
    graph: *const CtssgGraph,
    out: *mut usize,
) -> CtssgStatus {
    guarded(|| {
        let (Some(graph), false) = (graph.as_ref(), out.is_null()) else {
            return fail_null("graph or out");
        };
        *out = graph.inner.node_count();
        CtssgStatus::Ok
    })
}

/// # Safety
/// `graph` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ctssg_graph_edge_count(
    graph: *const CtssgGraph,
    out: *mut usize,
) -> CtssgStatus {
    guarded(|| {
        let (Some(graph), false) = (graph.as_ref(), out.is_null()) else {
            return fail_null("graph or out");
        };
        *out = graph.inner.edge_count();
        CtssgStatus::Ok
    })
}

/// Largest Laplacian eigenvalue, the spectral normalizer.
///
/// # Safety
/// `graph` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ctssg_graph_lambda_max(
    graph: *const CtssgGraph,
    out: *mut f64,
) -> CtssgStatus {
    guarded(|| {
        let (Some(graph), false) = (graph.as_ref(), out.is_null()) else {
            return fail_null("graph or out");
        };
        *out = graph.inner.lambda_max;
        CtssgStatus::Ok
    })
}

/// Serializes nodes, weighted edges, and the spectral normalizer to
/// JSON. Free the string with `ctssg_string_free`.
///
/// # Safety
/// `graph` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ctssg_graph_export_json(
    graph: *const CtssgGraph,
    out: *mut *mut c_char,
) -> CtssgStatus {
    guarded(|| {
        let (Some(graph), false) = (graph.as_ref(), out.is_null()) else {
            return fail_null("graph or out");
        };
        let json = graph.inner.export_json().to_string();
        match CString::new(json) {
            Ok(s) => {
                *out = s.into_raw();
                CtssgStatus::Ok
            }
            Err(_) => {
                set_error("export produced an interior nul byte");
                CtssgStatus::Internal
            }
        }
    })
}

/// Encoder with its graphs and parameters, ready for inference.
pub struct CtssgModel {
    cfg: ExperimentConfig,
    ctx: ModelContext<f64>,
    params: ModelParams<f64>,
}

impl CtssgModel {
    fn volume_len(&self) -> usize {
        self.cfg.encoder.slices * self.cfg.encoder.slice_height * self.cfg.encoder.slice_width
    }
}

unsafe fn model_out(
    model: CtssgModel,
    out: *mut *mut CtssgModel,
) -> CtssgStatus {
    *out = Box::into_raw(Box::new(model));
    CtssgStatus::Ok
}

/// Creates a model with freshly initialized parameters from an
/// experiment config JSON document (the same schema the CLI reads).
///
/// # Safety
/// `config_json` must be a valid nul-terminated string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctssg_model_new(
    config_json: *const c_char,
    out: *mut *mut CtssgModel,
) -> CtssgStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let text = match read_str(config_json, "config_json") {
            Ok(t) => t,
            Err(status) => return status,
        };
        let cfg: ExperimentConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => return fail(Error::from(e)),
        };
        let build = || -> ctssg::Result<CtssgModel> {
            cfg.validate()?;
            let (ctx, _, _) = make_context::<f64>(&cfg)?;
            let params = ModelParams::init(&cfg.encoder, cfg.train.seed)?;
            Ok(CtssgModel { cfg, ctx, params })
        };
        match build() {
            Ok(model) => model_out(model, out),
            Err(e) => fail(e),
        }
    })
}

/// Loads a trained model from a checkpoint directory written by the
/// trainer (`checkpoint_best` or `checkpoint_last`).
///
/// # Safety
/// `checkpoint_dir` must be a valid nul-terminated string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctssg_model_load(
    checkpoint_dir: *const c_char,
    out: *mut *mut CtssgModel,
) -> CtssgStatus {
    guarded(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let dir = match read_str(checkpoint_dir, "checkpoint_dir") {
            Ok(t) => t,
            Err(status) => return status,
        };
        let build = || -> ctssg::Result<CtssgModel> {
            let ckpt = load_checkpoint::<f64>(Path::new(dir))?;
            let (ctx, _, _) = make_context::<f64>(&ckpt.config)?;
            Ok(CtssgModel { cfg: ckpt.config, ctx, params: ckpt.params })
        };
        match build() {
            Ok(model) => model_out(model, out),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must be null or an unfreed handle from `ctssg_model_new`
/// or `ctssg_model_load`.
#[no_mangle]
pub unsafe extern "C" fn ctssg_model_free(model: *mut CtssgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ctssg_model_param_count(
    model: *const CtssgModel,
    out: *mut usize,
) -> CtssgStatus {
    guarded(|| {
        let (Some(model), false) = (model.as_ref(), out.is_null()) else {
            return fail_null("model or out");
        };
        *out = model.params.param_count();
        CtssgStatus::Ok
    })
}

/// Number of output labels; the length `ctssg_model_predict` fills.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ctssg_model_label_count(
    model: *const CtssgModel,
    out: *mut usize,
) -> CtssgStatus {
    guarded(|| {
        let (Some(model), false) = (model.as_ref(), out.is_null()) else {
            return fail_null("model or out");
        };
        *out = model.cfg.encoder.labels;
        CtssgStatus::Ok
    })
}

/// Voxel count one volume must supply: slices x height x width, slice
/// major.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ctssg_model_volume_len(
    model: *const CtssgModel,
    out: *mut usize,
) -> CtssgStatus {
    guarded(|| {
        let (Some(model), false) = (model.as_ref(), out.is_null()) else {
            return fail_null("model or out");
        };
        *out = model.volume_len();
        CtssgStatus::Ok
    })
}

/// Per-label probabilities for one volume. `voxels` holds
/// `ctssg_model_volume_len` values in slice-major order; `probs`
/// receives `ctssg_model_label_count` values.
///
/// # Safety
/// `model` must be a live handle; `voxels` and `probs` must point to
/// arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ctssg_model_predict(
    model: *const CtssgModel,
    voxels: *const f64,
    voxels_len: usize,
    probs: *mut f64,
    probs_len: usize,
) -> CtssgStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail_null("model");
        };
        if voxels.is_null() || probs.is_null() {
            return fail_null("voxels or probs");
        }
        if voxels_len != model.volume_len() {
            set_error(&format!(
                "volume holds {voxels_len} voxels, model expects {}",
                model.volume_len()
            ));
            return CtssgStatus::InvalidArgument;
        }
        if probs_len != model.cfg.encoder.labels {
            set_error(&format!(
                "probs buffer holds {probs_len} slots, model emits {}",
                model.cfg.encoder.labels
            ));
            return CtssgStatus::InvalidArgument;
        }
        let enc = &model.cfg.encoder;
        let data = std::slice::from_raw_parts(voxels, voxels_len).to_vec();
        let run = || -> ctssg::Result<Vec<f64>> {
            let volume =
                Tensor::new(vec![enc.slices, enc.slice_height, enc.slice_width], data)?;
            model.ctx.predict_probs(&volume, &model.params)
        };
        match run() {
            Ok(out_probs) => {
                std::slice::from_raw_parts_mut(probs, probs_len).copy_from_slice(&out_probs);
                CtssgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
