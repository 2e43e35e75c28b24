//! C interface. Objects are opaque handles created by `ss_*_open`/`ss_*_new`
//! and released by the matching `ss_*_free`. Every fallible call returns an
//! [`SsStatus`]; on failure `ss_last_error` describes it. Strings handed out
//! by the library are freed with `ss_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::{Arc, Mutex};

use socket_store::dsa::{ConnectOptions, Connection, Dsa, DsaConfig, LocalTransport, Mode};
use socket_store::endpoint::Endpoint;
use socket_store::experiment::{self, ExperimentConfig};
use socket_store::moduledef::ModuleManifest;
use socket_store::store::server::{lock, SharedStore};
use socket_store::store::{Decision, Store, StoreConfig, StoreError};
use socket_store::time::SimTime;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Denied = 5,
    Rejected = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsMode {
    Module = 0,
    Fallback = 1,
}

/// A store instance shared by the device agents created from it.
pub struct SsStore {
    inner: SharedStore,
}

pub struct SsDsa {
    inner: Dsa,
}

pub struct SsConnection {
    inner: Connection,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(SsStatus, String);

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownModule(_)
            | StoreError::UnknownToken
            | StoreError::UnknownInstance(_)
            | StoreError::UnknownAlias(_)
            | StoreError::UnknownScenario(_) => SsStatus::NotFound,
            StoreError::Denied(_) | StoreError::SelfReview(_) | StoreError::AnonymousAuthor(_) => SsStatus::Denied,
            StoreError::Persist { .. } => SsStatus::Io,
            _ => SsStatus::Rejected,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SsStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SsStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the call.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(SsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is null or a valid handle created by this library.
unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(SsStatus::NullArgument, format!("{what} is null")))
}

/// # Safety
/// `out` is null or writable.
unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SsStatus::NullArgument, "output pointer is null".into()));
    }
    out.write(v);
    Ok(())
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` is null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- store ------------------------------------------------------------------

/// Opens a store. A null `data_dir` keeps state in memory. `seed` fixes
/// token generation when `has_seed` is true.
///
/// # Safety
/// `data_dir` is null or a valid string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_store_open(
    data_dir: *const c_char,
    has_seed: bool,
    seed: u64,
    out: *mut *mut SsStore,
) -> SsStatus {
    guard(|| {
        let dir = if data_dir.is_null() { None } else { Some(PathBuf::from(text(data_dir, "data_dir")?)) };
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Failure(SsStatus::Io, e.to_string()))?;
        }
        let cfg = StoreConfig { data_dir: dir, seed: has_seed.then_some(seed), ..StoreConfig::default() };
        let store = Store::open(cfg)?;
        put(out, Box::into_raw(Box::new(SsStore { inner: Arc::new(Mutex::new(store)) })))
    })
}

/// # Safety
/// `store` is null or a handle from `ss_store_open`, not yet freed. Device
/// agents created from it stay valid.
#[no_mangle]
pub unsafe extern "C" fn ss_store_free(store: *mut SsStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// Arguments are valid handles and strings.
#[no_mangle]
pub unsafe extern "C" fn ss_store_register_specialist(store: *mut SsStore, name: *const c_char) -> SsStatus {
    guard(|| {
        let s = handle(store, "store")?;
        lock(&s.inner).register_specialist(text(name, "name")?)?;
        Ok(())
    })
}

/// Submits the bundle in `dir` and writes the module id to `out_id`.
///
/// # Safety
/// Arguments are valid handles and strings; `out_id` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_store_submit(
    store: *mut SsStore,
    dir: *const c_char,
    out_id: *mut *mut c_char,
) -> SsStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let m = ModuleManifest::load_bundle(text(dir, "dir")?.as_ref()).map_err(|e| invalid(e.to_string()))?;
        let id = lock(&s.inner).submit(m)?;
        put(out_id, c_string(id))
    })
}

/// # Safety
/// Arguments are valid handles and strings.
#[no_mangle]
pub unsafe extern "C" fn ss_store_start_review(store: *mut SsStore, module_id: *const c_char) -> SsStatus {
    guard(|| {
        let s = handle(store, "store")?;
        lock(&s.inner).start_review(text(module_id, "module_id")?)?;
        Ok(())
    })
}

/// Accepts (`accept` true) or sends back for revision.
///
/// # Safety
/// Arguments are valid handles and strings.
#[no_mangle]
pub unsafe extern "C" fn ss_store_review(
    store: *mut SsStore,
    module_id: *const c_char,
    accept: bool,
    reviewer: *const c_char,
) -> SsStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let decision = if accept { Decision::Accept } else { Decision::Revise };
        lock(&s.inner).review(text(module_id, "module_id")?, decision, text(reviewer, "reviewer")?)?;
        Ok(())
    })
}

/// Buys a license and writes its token to `out_token`.
///
/// # Safety
/// Arguments are valid handles and strings; `out_token` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_store_purchase(
    store: *mut SsStore,
    app_id: *const c_char,
    module_id: *const c_char,
    out_token: *mut *mut c_char,
) -> SsStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let l = lock(&s.inner).purchase(text(app_id, "app_id")?, text(module_id, "module_id")?)?;
        put(out_token, c_string(l.token))
    })
}

/// Writes search hits as a JSON array to `out_json`.
///
/// # Safety
/// Arguments are valid handles and strings; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_store_search_json(
    store: *mut SsStore,
    query: *const c_char,
    out_json: *mut *mut c_char,
) -> SsStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let hits = lock(&s.inner).search(text(query, "query")?);
        let json = serde_json::to_string(&hits).map_err(|e| invalid(e.to_string()))?;
        put(out_json, c_string(json))
    })
}

/// Writes the cost report of an instance as JSON to `out_json`.
///
/// # Safety
/// Arguments are valid handles and strings; `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_store_cost_json(
    store: *mut SsStore,
    instance_id: *const c_char,
    out_json: *mut *mut c_char,
) -> SsStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let r = lock(&s.inner).cost(text(instance_id, "instance_id")?)?;
        let json = serde_json::to_string(&r).map_err(|e| invalid(e.to_string()))?;
        put(out_json, c_string(json))
    })
}

/// Advances simulated time by `ms` milliseconds.
///
/// # Safety
/// `store` is a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ss_store_advance_ms(store: *mut SsStore, ms: f64) -> SsStatus {
    guard(|| {
        let s = handle(store, "store")?;
        if !(ms.is_finite() && ms >= 0.0) {
            return Err(invalid("ms must be finite and non-negative"));
        }
        lock(&s.inner).advance_by(SimTime::from_ms_f64(ms));
        Ok(())
    })
}

// ---- device agent -----------------------------------------------------------

/// Creates a device agent on `host` with `nics` endpoints at port 5000.
///
/// # Safety
/// Arguments are valid handles and strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_dsa_new(
    store: *mut SsStore,
    app_id: *const c_char,
    device: *const c_char,
    host: *const c_char,
    nics: u8,
    out: *mut *mut SsDsa,
) -> SsStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let host = text(host, "host")?;
        let local = (0..nics.max(1))
            .map(|nic| Endpoint::new(host, 5000, nic))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid(e.to_string()))?;
        let cfg = DsaConfig::new(text(app_id, "app_id")?, text(device, "device")?, local);
        let net = lock(&s.inner).network().clone();
        let dsa =
            Dsa::new(cfg, Box::new(LocalTransport::new(s.inner.clone())), net).map_err(|e| invalid(e.to_string()))?;
        put(out, Box::into_raw(Box::new(SsDsa { inner: dsa })))
    })
}

/// # Safety
/// `dsa` is null or a handle from `ss_dsa_new`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_dsa_free(dsa: *mut SsDsa) {
    if !dsa.is_null() {
        drop(Box::from_raw(dsa));
    }
}

/// Adds a host to dial for `alias` when the store cannot resolve it.
///
/// # Safety
/// Arguments are valid handles and strings.
#[no_mangle]
pub unsafe extern "C" fn ss_dsa_set_fallback_host(
    dsa: *mut SsDsa,
    alias: *const c_char,
    host: *const c_char,
) -> SsStatus {
    guard(|| {
        let d = handle(dsa, "dsa")?;
        let (alias, host) = (text(alias, "alias")?, text(host, "host")?);
        d.inner.set_fallback_host(alias, host);
        Ok(())
    })
}

/// # Safety
/// Arguments are valid handles and strings.
#[no_mangle]
pub unsafe extern "C" fn ss_dsa_bind(dsa: *mut SsDsa, alias: *const c_char) -> SsStatus {
    guard(|| {
        let d = handle(dsa, "dsa")?;
        d.inner.bind(text(alias, "alias")?).map_err(|e| Failure(SsStatus::Rejected, e.to_string()))
    })
}

/// Connects to `alias` through `module_id`, falling back to a plain
/// connection on store or allocation failure.
///
/// # Safety
/// Arguments are valid handles and strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_dsa_connect(
    dsa: *mut SsDsa,
    alias: *const c_char,
    module_id: *const c_char,
    token: *const c_char,
    k: u32,
    rate_mbps: f64,
    max_latency_ms: f64,
    out: *mut *mut SsConnection,
) -> SsStatus {
    guard(|| {
        let d = handle(dsa, "dsa")?;
        let opts = ConnectOptions::new(k, rate_mbps, max_latency_ms);
        let conn = d
            .inner
            .connect(text(alias, "alias")?, text(module_id, "module_id")?, text(token, "token")?, &opts)
            .map_err(|e| invalid(e.to_string()))?;
        put(out, Box::into_raw(Box::new(SsConnection { inner: conn })))
    })
}

/// # Safety
/// `conn` is a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ss_conn_mode(conn: *const SsConnection) -> SsMode {
    match conn.as_ref().map(|c| c.inner.mode()) {
        Some(Mode::Module) => SsMode::Module,
        _ => SsMode::Fallback,
    }
}

/// Number of paths; 0 for a null handle.
///
/// # Safety
/// `conn` is null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ss_conn_paths(conn: *const SsConnection) -> u32 {
    conn.as_ref().map_or(0, |c| c.inner.paths() as u32)
}

/// Fallback reason as a new string, or null in module mode.
///
/// # Safety
/// `conn` is null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ss_conn_failure_reason(conn: *const SsConnection) -> *mut c_char {
    conn.as_ref().and_then(|c| c.inner.failure_reason()).map_or(ptr::null_mut(), |r| c_string(r.to_string()))
}

/// Instance id as a new string, or null in fallback mode.
///
/// # Safety
/// `conn` is null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ss_conn_instance_id(conn: *const SsConnection) -> *mut c_char {
    conn.as_ref().and_then(|c| c.inner.instance_id()).map_or(ptr::null_mut(), |r| c_string(r.to_string()))
}

/// Sends `len` bytes; writes the number of copies that will arrive.
///
/// # Safety
/// Handles are valid; `data` points to `len` readable bytes (or `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn ss_dsa_send(
    dsa: *mut SsDsa,
    conn: *mut SsConnection,
    data: *const u8,
    len: usize,
    out_delivered: *mut u32,
) -> SsStatus {
    guard(|| {
        let d = handle(dsa, "dsa")?;
        let c = handle(conn, "conn")?;
        let payload = match (data.is_null(), len) {
            (_, 0) => &[][..],
            (true, _) => return Err(Failure(SsStatus::NullArgument, "data is null".into())),
            (false, n) => std::slice::from_raw_parts(data, n),
        };
        let records = d.inner.send(&mut c.inner, payload).map_err(|e| Failure(SsStatus::Rejected, e.to_string()))?;
        let n = records.iter().filter(|r| r.delivered).count() as u32;
        if !out_delivered.is_null() {
            out_delivered.write(n);
        }
        Ok(())
    })
}

/// Drains arrived payloads; writes how many distinct sequences arrived.
///
/// # Safety
/// Handles are valid; `out_count` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_dsa_recv(dsa: *mut SsDsa, conn: *mut SsConnection, out_count: *mut u32) -> SsStatus {
    guard(|| {
        let d = handle(dsa, "dsa")?;
        let c = handle(conn, "conn")?;
        let got = d.inner.recv(&mut c.inner).map_err(|e| Failure(SsStatus::Rejected, e.to_string()))?;
        put(out_count, got.len() as u32)
    })
}

/// Closes the connection; safe to call twice.
///
/// # Safety
/// Handles are valid.
#[no_mangle]
pub unsafe extern "C" fn ss_dsa_close(dsa: *mut SsDsa, conn: *mut SsConnection) -> SsStatus {
    guard(|| {
        let d = handle(dsa, "dsa")?;
        let c = handle(conn, "conn")?;
        d.inner.close(&mut c.inner);
        Ok(())
    })
}

/// Frees a connection handle without closing it at the store.
///
/// # Safety
/// `conn` is null or a handle from `ss_dsa_connect`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_conn_free(conn: *mut SsConnection) {
    if !conn.is_null() {
        drop(Box::from_raw(conn));
    }
}

// ---- experiment -------------------------------------------------------------

/// Runs the deadline experiment. `config_toml` null means defaults. Writes
/// the CSV and the summary block as new strings.
///
/// # Safety
/// `config_toml` is null or a valid string; outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn ss_run_experiment(
    config_toml: *const c_char,
    out_csv: *mut *mut c_char,
    out_summary: *mut *mut c_char,
) -> SsStatus {
    guard(|| {
        let cfg = if config_toml.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_toml(text(config_toml, "config_toml")?).map_err(|e| invalid(e.to_string()))?
        };
        if out_csv.is_null() || out_summary.is_null() {
            return Err(Failure(SsStatus::NullArgument, "output pointer is null".into()));
        }
        let report = experiment::run(&cfg).map_err(|e| invalid(e.to_string()))?;
        put(out_csv, c_string(report.to_csv()))?;
        put(out_summary, c_string(report.summary_text()))
    })
}
