//! C ABI for the sdmix library.
//!
//! Every fallible function returns an [`SdmixStatus`]; on failure the
//! message is available from [`sdmix_last_error_message`] on the same
//! thread. Networks are opaque [`SdmixNet`] handles released with
//! [`sdmix_net_free`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sdmix::config::ExperimentConfig;
use sdmix::model::{ActivityNet, ArchSpec};
use sdmix::numerics::Tensor;
use sdmix::semantics::semantic_factor;
use sdmix::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdmixStatus {
    Ok = 0,
    Config = 1,
    Data = 2,
    Numeric = 3,
    InvalidArgument = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque network handle.
pub struct SdmixNet {
    net: ActivityNet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SdmixStatus {
    match e {
        Error::Io(_) => SdmixStatus::Io,
        Error::InvalidArgument(_) => SdmixStatus::InvalidArgument,
        _ => match e.exit_code() {
            1 => SdmixStatus::Config,
            2 => SdmixStatus::Data,
            _ => SdmixStatus::Numeric,
        },
    }
}

fn guard<F: FnOnce() -> Result<(), Error>>(f: F) -> SdmixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdmixStatus::Ok,
        Ok(Err(e)) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            SdmixStatus::Panic
        }
    }
}

fn invalid(msg: &str) -> Error {
    Error::InvalidArgument(msg.to_string())
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Error> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sdmix_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Initializes a network with default block widths.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sdmix_net_init(
    channels: usize,
    window_len: usize,
    kernel_width: usize,
    num_classes: usize,
    seed: u64,
    out: *mut *mut SdmixNet,
) -> SdmixStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let arch = ArchSpec::new(channels, window_len, kernel_width, num_classes);
        let net = ActivityNet::init(&arch, seed)?;
        *out = Box::into_raw(Box::new(SdmixNet { net }));
        Ok(())
    })
}

/// Loads a checkpoint written by the library or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdmix_net_load(path: *const c_char, out: *mut *mut SdmixNet) -> SdmixStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let net = ActivityNet::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SdmixNet { net }));
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sdmix_net_save(net: *const SdmixNet, path: *const c_char) -> SdmixStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| invalid("net is null"))?;
        net.net.save(&path_arg(path, "path")?)
    })
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdmix_net_num_classes(net: *const SdmixNet) -> usize {
    net.as_ref().map_or(0, |n| n.net.num_classes())
}

/// Values per window (`channels × window_len`), or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdmix_net_input_len(net: *const SdmixNet) -> usize {
    net.as_ref().map_or(0, |n| n.net.arch.channels * n.net.arch.window_len)
}

/// Inference-mode logits for `n_windows` windows laid out row-major as
/// `(n_windows, channels, window_len)`. Writes `n_windows × num_classes`
/// values to `out`.
///
/// # Safety
/// `x` must hold `n_windows × input_len` values and `out` must have room
/// for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn sdmix_net_logits(
    net: *const SdmixNet,
    x: *const f64,
    n_windows: usize,
    out: *mut f64,
    out_len: usize,
) -> SdmixStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| invalid("net is null"))?.net;
        if x.is_null() || out.is_null() {
            return Err(invalid("x and out must be non-null"));
        }
        let (ch, len, c) = (net.arch.channels, net.arch.window_len, net.num_classes());
        if n_windows == 0 || out_len < n_windows * c {
            return Err(invalid(&format!("out_len {out_len} < {n_windows} × {c}")));
        }
        let input = std::slice::from_raw_parts(x, n_windows * ch * len).to_vec();
        let h = net.logits(&Tensor::new(vec![n_windows, ch, 1, len], input)?)?;
        std::slice::from_raw_parts_mut(out, h.len()).copy_from_slice(h.data());
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdmix_net_free(net: *mut SdmixNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Range-weighted label weight for mixing weight `lambda`.
///
/// # Safety
/// `t_out` must be writable; `degenerate_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn sdmix_semantic_factor(
    lambda: f64,
    r1: f64,
    r2: f64,
    t_out: *mut f64,
    degenerate_out: *mut bool,
) -> SdmixStatus {
    guard(|| {
        if t_out.is_null() {
            return Err(invalid("t_out is null"));
        }
        if !(0.0..=1.0).contains(&lambda) || !(r1 >= 0.0) || !(r2 >= 0.0) {
            return Err(invalid("lambda must lie in [0, 1] and ranges be nonnegative"));
        }
        let w = semantic_factor(lambda, r1, r2);
        *t_out = w.t;
        if !degenerate_out.is_null() {
            *degenerate_out = w.degenerate;
        }
        Ok(())
    })
}

/// Runs every configured leave-one-domain-out experiment into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sdmix_run_experiment(config_path: *const c_char, out_dir: *const c_char) -> SdmixStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_path(&path_arg(config_path, "config_path")?)?;
        sdmix::experiment::run_experiment(&cfg, &path_arg(out_dir, "out_dir")?)?;
        Ok(())
    })
}
