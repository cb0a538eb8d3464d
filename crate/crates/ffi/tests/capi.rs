use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sdmix_ffi::*;

fn last_error() -> String {
    let p = sdmix_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn init_logits_save_load_free() {
    let mut net: *mut SdmixNet = ptr::null_mut();
    let st = unsafe { sdmix_net_init(3, 20, 5, 4, 7, &mut net) };
    assert_eq!(st, SdmixStatus::Ok);
    assert_eq!(unsafe { sdmix_net_num_classes(net) }, 4);
    assert_eq!(unsafe { sdmix_net_input_len(net) }, 60);

    let x: Vec<f64> = (0..120).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut h = vec![0.0; 8];
    assert_eq!(unsafe { sdmix_net_logits(net, x.as_ptr(), 2, h.as_mut_ptr(), h.len()) }, SdmixStatus::Ok);
    assert!(h.iter().all(|v| v.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("net.bin"));
    assert_eq!(unsafe { sdmix_net_save(net, path.as_ptr()) }, SdmixStatus::Ok);
    let mut loaded: *mut SdmixNet = ptr::null_mut();
    assert_eq!(unsafe { sdmix_net_load(path.as_ptr(), &mut loaded) }, SdmixStatus::Ok);
    let mut h2 = vec![0.0; 8];
    assert_eq!(unsafe { sdmix_net_logits(loaded, x.as_ptr(), 2, h2.as_mut_ptr(), h2.len()) }, SdmixStatus::Ok);
    assert_eq!(h, h2);

    unsafe {
        sdmix_net_free(net);
        sdmix_net_free(loaded);
        sdmix_net_free(ptr::null_mut());
    }
}

#[test]
fn invalid_arguments_are_reported() {
    let st = unsafe { sdmix_net_init(3, 20, 5, 4, 7, ptr::null_mut()) };
    assert_eq!(st, SdmixStatus::InvalidArgument);
    assert!(last_error().contains("out is null"));

    let mut net: *mut SdmixNet = ptr::null_mut();
    let st = unsafe { sdmix_net_init(3, 4, 6, 2, 0, &mut net) };
    assert_eq!(st, SdmixStatus::Config);
    assert!(last_error().contains("block1.conv"), "{}", last_error());
    assert!(net.is_null());

    let mut net: *mut SdmixNet = ptr::null_mut();
    unsafe { sdmix_net_init(1, 20, 5, 2, 0, &mut net) };
    let x = [0.0; 20];
    let mut h = vec![0.0; 1];
    let st = unsafe { sdmix_net_logits(net, x.as_ptr(), 1, h.as_mut_ptr(), h.len()) };
    assert_eq!(st, SdmixStatus::InvalidArgument);
    unsafe { sdmix_net_free(net) };

    let missing = CString::new("/nonexistent/net.bin").unwrap();
    let mut out: *mut SdmixNet = ptr::null_mut();
    assert_eq!(unsafe { sdmix_net_load(missing.as_ptr(), &mut out) }, SdmixStatus::Io);
    assert_eq!(unsafe { sdmix_net_num_classes(ptr::null()) }, 0);
}

#[test]
fn semantic_factor_through_the_abi() {
    let mut t = 0.0;
    let mut degenerate = true;
    assert_eq!(unsafe { sdmix_semantic_factor(0.3, 2.0, 2.0, &mut t, &mut degenerate) }, SdmixStatus::Ok);
    assert_eq!(t, 0.3);
    assert!(!degenerate);
    assert_eq!(unsafe { sdmix_semantic_factor(0.5, 3.0, 1.0, &mut t, ptr::null_mut()) }, SdmixStatus::Ok);
    assert!((t - 0.75).abs() < 1e-15);
    assert_eq!(unsafe { sdmix_semantic_factor(0.5, 0.0, 0.0, &mut t, &mut degenerate) }, SdmixStatus::Ok);
    assert_eq!(t, 0.5);
    assert!(degenerate);
    assert_eq!(
        unsafe { sdmix_semantic_factor(1.5, 1.0, 1.0, &mut t, ptr::null_mut()) },
        SdmixStatus::InvalidArgument
    );
}

#[test]
fn run_experiment_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.ini");
    std::fs::write(
        &cfg,
        "[synthetic]\nnum_domains = 2\nwindows_per_class = 10\n[train]\nmax_epochs = 1\nalgorithm = vanilla_mixup\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let st = unsafe { sdmix_run_experiment(cstr(&cfg).as_ptr(), cstr(&out).as_ptr()) };
    assert_eq!(st, SdmixStatus::Ok);
    assert!(out.join("summary.csv").exists());
    assert!(out.join("vanilla_mixup_seed0_target1").join("metrics.csv").exists());

    std::fs::write(&cfg, "[train]\nalpha = banana\n").unwrap();
    let st = unsafe { sdmix_run_experiment(cstr(&cfg).as_ptr(), cstr(&out).as_ptr()) };
    assert_eq!(st, SdmixStatus::Config);
    assert!(last_error().contains("alpha"));
    assert_eq!(
        unsafe { sdmix_run_experiment(ptr::null(), cstr(&out).as_ptr()) },
        SdmixStatus::InvalidArgument
    );
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sdmix.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["sdmix_net_init", "sdmix_net_logits", "sdmix_net_free", "sdmix_semantic_factor", "SDMIX_STATUS_PANIC"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.success());
}
