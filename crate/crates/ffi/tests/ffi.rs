use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use socket_store_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    ss_string_free(p);
    s
}

fn last_error() -> String {
    let p = ss_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/flash-delivery")
}

unsafe fn published() -> (*mut SsStore, String) {
    let mut store = ptr::null_mut();
    assert_eq!(ss_store_open(ptr::null(), true, 9, &mut store), SsStatus::Ok);
    for n in ["km-lab", "reviewer"] {
        assert_eq!(ss_store_register_specialist(store, c(n).as_ptr()), SsStatus::Ok);
    }
    let mut id = ptr::null_mut();
    let dir = c(fixture().to_str().unwrap());
    assert_eq!(ss_store_submit(store, dir.as_ptr(), &mut id), SsStatus::Ok);
    let id = take(id);
    assert_eq!(ss_store_start_review(store, c(&id).as_ptr()), SsStatus::Ok);
    assert_eq!(ss_store_review(store, c(&id).as_ptr(), true, c("reviewer").as_ptr()), SsStatus::Ok);
    (store, id)
}

#[test]
fn store_and_device_round_trip() {
    unsafe {
        let (store, id) = published();
        let mut token = ptr::null_mut();
        assert_eq!(ss_store_purchase(store, c("app").as_ptr(), c(&id).as_ptr(), &mut token), SsStatus::Ok);
        let token = take(token);

        let mut json = ptr::null_mut();
        assert_eq!(ss_store_search_json(store, c("flash").as_ptr(), &mut json), SsStatus::Ok);
        let hits: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(hits[0]["module_id"], "flash-delivery");

        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ss_dsa_new(store, c("app").as_ptr(), c("dev-b").as_ptr(), c("B").as_ptr(), 2, &mut b), SsStatus::Ok);
        assert_eq!(ss_dsa_bind(b, c("Device_B").as_ptr()), SsStatus::Ok);
        assert_eq!(ss_dsa_new(store, c("app").as_ptr(), c("dev-a").as_ptr(), c("A").as_ptr(), 2, &mut a), SsStatus::Ok);

        let mut conn = ptr::null_mut();
        let st =
            ss_dsa_connect(a, c("Device_B").as_ptr(), c(&id).as_ptr(), c(&token).as_ptr(), 2, 10.0, 5.0, &mut conn);
        assert_eq!(st, SsStatus::Ok);
        assert_eq!(ss_conn_mode(conn), SsMode::Module);
        assert_eq!(ss_conn_paths(conn), 2);
        assert!(ss_conn_failure_reason(conn).is_null());
        let inst = take(ss_conn_instance_id(conn));

        let mut copies = 0;
        assert_eq!(ss_dsa_send(a, conn, b"abc".as_ptr(), 3, &mut copies), SsStatus::Ok);
        assert_eq!(copies, 2);
        assert_eq!(ss_store_advance_ms(store, 1000.0), SsStatus::Ok);
        let mut got = 0;
        assert_eq!(ss_dsa_recv(a, conn, &mut got), SsStatus::Ok);
        assert_eq!(got, 1);
        assert_eq!(ss_dsa_close(a, conn), SsStatus::Ok);
        assert_eq!(ss_dsa_close(a, conn), SsStatus::Ok);
        assert_eq!(ss_dsa_send(a, conn, b"x".as_ptr(), 1, ptr::null_mut()), SsStatus::Rejected);
        assert_eq!(last_error(), "connection closed");

        let mut cost = ptr::null_mut();
        assert_eq!(ss_store_cost_json(store, c(&inst).as_ptr(), &mut cost), SsStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(cost)).unwrap();
        let expected = 2.0 * 10.0 * 1.0 * 0.001;
        assert!((report["raw_total"].as_f64().unwrap() - expected).abs() < 1e-9, "{report}");

        ss_conn_free(conn);
        ss_dsa_free(a);
        ss_dsa_free(b);
        ss_store_free(store);
    }
}

#[test]
fn fallback_and_errors() {
    unsafe {
        let (store, id) = published();
        let mut a = ptr::null_mut();
        assert_eq!(ss_dsa_new(store, c("app").as_ptr(), c("dev-a").as_ptr(), c("A").as_ptr(), 1, &mut a), SsStatus::Ok);
        assert_eq!(ss_dsa_set_fallback_host(a, c("Device_B").as_ptr(), c("B").as_ptr()), SsStatus::Ok);
        let mut conn = ptr::null_mut();
        let st =
            ss_dsa_connect(a, c("Device_B").as_ptr(), c(&id).as_ptr(), c("bogus").as_ptr(), 2, 10.0, 5.0, &mut conn);
        assert_eq!(st, SsStatus::Ok);
        assert_eq!(ss_conn_mode(conn), SsMode::Fallback);
        assert_eq!(ss_conn_paths(conn), 1);
        assert!(take(ss_conn_failure_reason(conn)).starts_with("authorization denied"));
        assert!(ss_conn_instance_id(conn).is_null());
        let mut copies = 0;
        assert_eq!(ss_dsa_send(a, conn, b"x".as_ptr(), 1, &mut copies), SsStatus::Ok);
        assert_eq!(copies, 1);

        let mut bad = ptr::null_mut();
        let st = ss_dsa_connect(a, c("Device_B").as_ptr(), c(&id).as_ptr(), c("t").as_ptr(), 0, 10.0, 5.0, &mut bad);
        assert_eq!(st, SsStatus::InvalidArgument);
        assert!(last_error().contains("K must be at least 1"));
        assert!(bad.is_null());

        assert_eq!(ss_store_register_specialist(store, ptr::null()), SsStatus::NullArgument);
        assert_eq!(ss_store_start_review(store, c("ghost").as_ptr()), SsStatus::NotFound);
        assert_eq!(ss_store_review(store, c(&id).as_ptr(), true, c("reviewer").as_ptr()), SsStatus::Rejected);
        assert!(last_error().contains("illegal transition"));
        let invalid = [0xffu8, 0];
        assert_eq!(ss_store_register_specialist(store, invalid.as_ptr().cast()), SsStatus::InvalidUtf8);
        assert_eq!(ss_store_advance_ms(store, -1.0), SsStatus::InvalidArgument);
        assert_eq!(ss_store_register_specialist(ptr::null_mut(), c("x").as_ptr()), SsStatus::NullArgument);

        ss_conn_free(conn);
        ss_dsa_free(a);
        ss_store_free(store);
        ss_store_free(ptr::null_mut());
        ss_string_free(ptr::null_mut());
    }
}

#[test]
fn experiment_through_c_api() {
    unsafe {
        let (mut csv, mut summary) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ss_run_experiment(ptr::null(), &mut csv, &mut summary), SsStatus::Ok);
        let csv = take(csv);
        assert_eq!(csv.lines().count(), 101);
        assert!(take(summary).contains("violations: 0"));
        let cfg = c("packet_count = 0");
        let (mut csv, mut summary) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ss_run_experiment(cfg.as_ptr(), &mut csv, &mut summary), SsStatus::InvalidArgument);
        assert!(last_error().contains("packet_count"));
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/socket_store.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct SsStore SsStore;"));
}

#[test]
fn c_program_links_against_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let target = exe.parent().and_then(Path::parent).unwrap();
    let lib = target.join("libsocket_store_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = std::env::temp_dir().join(format!("socket_store_smoke_{}", std::process::id()));
    let status = Command::new(cc)
        .arg(dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = Command::new(&out).arg(fixture()).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0.1.0 paths=2"));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
