mod common;

use std::sync::{Arc, Mutex};

use common::{device, dsa_with, endpoints, pair, published_store, APP};
use socket_store::dsa::{ConnectError, ConnectOptions, DsaConfig, DsaError, Faults, LocalTransport, Mode};
use socket_store::endpoint::Endpoint;
use socket_store::store::server::SharedStore;
use socket_store::store::LogFilter;
use socket_store::time::SimTime;

fn k(k: u32) -> ConnectOptions {
    ConnectOptions::new(k, 10.0, 5.0)
}

fn advance(store: &SharedStore, ms: u64) {
    store.lock().unwrap().advance_by(SimTime::from_millis(ms));
}

fn live_instances(store: &SharedStore) -> usize {
    store.lock().unwrap().instances().filter(|r| r.is_live()).count()
}

fn log_len(store: &SharedStore) -> usize {
    store.lock().unwrap().read_log(&LogFilter::default()).len()
}

#[test]
fn bind_registers_both_nics() {
    let (store, _) = published_store();
    let (_a, _b) = pair(&store);
    let eps = store.lock().unwrap().resolve("Device_B").unwrap();
    assert_eq!(eps, endpoints("B"));
}

#[test]
fn bind_rules() {
    let (store, _) = published_store();
    let mut b = device(&store, "device-b", "B");
    assert_eq!(b.bind(""), Err(DsaError::EmptyAlias));
    b.bind("Device_B").unwrap();
    b.bind("Device_B").unwrap();
    assert!(b.is_bound("Device_B"));

    let mut other = device(&store, "device-c", "A");
    let err = other.bind("Device_B").unwrap_err();
    assert!(err.to_string().starts_with("alias conflict"), "{err}");

    // Without refreshes the first binding lapses after three intervals.
    advance(&store, 3_100);
    other.bind("Device_B").unwrap();
    assert_eq!(store.lock().unwrap().resolve("Device_B").unwrap(), endpoints("A"));
}

#[test]
fn bind_is_queued_while_store_is_down() {
    let (store, _) = published_store();
    let t = LocalTransport::new(store.clone()).with_faults(Faults { store_down: true, cut_after: None });
    let mut b = dsa_with(&store, DsaConfig::new(APP, "device-b", endpoints("B")), t);
    b.bind("Device_B").unwrap();
    assert_eq!(b.pending_binds(), ["Device_B"]);
    assert!(store.lock().unwrap().resolve("Device_B").is_err());
}

#[test]
fn queued_bind_is_sent_once_store_returns() {
    let (store, _) = published_store();
    let mut b = device(&store, "device-b", "B");
    b.bind("Device_B").unwrap();
    advance(&store, 2_500);
    b.refresh_if_due();
    advance(&store, 2_500);
    b.refresh_if_due();
    // Kept alive by refreshes well past the 3 s liveness window.
    assert!(store.lock().unwrap().resolve("Device_B").is_ok());
    assert!(b.unbind("Device_B"));
    advance(&store, 3_100);
    b.refresh_if_due();
    assert!(store.lock().unwrap().resolve("Device_B").is_err());
}

#[test]
fn connect_k2_uses_module() {
    let (store, token) = published_store();
    let (mut a, _b) = pair(&store);
    let conn = a.connect("Device_B", "flash-delivery", &token, &k(2)).unwrap();
    assert_eq!(conn.mode(), Mode::Module);
    assert_eq!(conn.paths(), 2);
    assert!(conn.instance_id().is_some());
    assert!(conn.failure_reason().is_none());
    assert_eq!(live_instances(&store), 1);
}

#[test]
fn connect_k3_falls_back() {
    let (store, token) = published_store();
    let (mut a, _b) = pair(&store);
    let conn = a.connect("Device_B", "flash-delivery", &token, &k(3)).unwrap();
    assert_eq!(conn.mode(), Mode::Fallback);
    assert_eq!(conn.paths(), 1);
    assert_eq!(conn.failure_reason(), Some("allocation failed: only 2 disjoint paths"));
    assert!(conn.instance_id().is_none());
    assert_eq!(live_instances(&store), 0);
}

#[test]
fn bad_token_falls_back() {
    let (store, _) = published_store();
    let (mut a, _b) = pair(&store);
    let conn = a.connect("Device_B", "flash-delivery", "not-a-token", &k(2)).unwrap();
    assert_eq!(conn.mode(), Mode::Fallback);
    assert!(conn.failure_reason().unwrap().starts_with("authorization denied"));
}

#[test]
fn negotiate_mode_reports_to_callback() {
    let (store, token) = published_store();
    let (mut a, _b) = pair(&store);
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    a.on_failure(move |ev| sink.lock().unwrap().push(ev.clone()));
    let err = a.connect("Device_B", "flash-delivery", &token, &k(3).negotiate()).unwrap_err();
    assert_eq!(
        err,
        ConnectError::Negotiation {
            reason: "allocation failed: only 2 disjoint paths".into(),
            max_feasible_k: Some(2)
        }
    );
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].requested_k, 3);
    assert_eq!(seen[0].max_feasible_k, Some(2));
    // The application may retry with what the store offered.
    drop(seen);
    let conn = a.connect("Device_B", "flash-delivery", &token, &k(2).negotiate()).unwrap();
    assert_eq!(conn.mode(), Mode::Module);
}

#[test]
fn invalid_options_are_programmer_errors() {
    let (store, token) = published_store();
    let (mut a, _b) = pair(&store);
    for opts in [k(0), ConnectOptions::new(2, 0.0, 5.0), ConnectOptions::new(2, 10.0, -1.0)] {
        assert!(matches!(a.connect("Device_B", "flash-delivery", &token, &opts), Err(ConnectError::InvalidOptions(_))));
    }
    assert!(matches!(a.connect("", "flash-delivery", &token, &k(2)), Err(ConnectError::InvalidOptions(_))));
}

#[test]
fn module_send_mirrors_and_recv_dedups() {
    let (store, token) = published_store();
    let (mut a, _b) = pair(&store);
    let mut conn = a.connect("Device_B", "flash-delivery", &token, &k(2)).unwrap();
    let records = a.send(&mut conn, b"hello").unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.delivered));
    advance(&store, 10);
    let got = a.recv(&mut conn).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].payload, b"hello");
    assert!(a.recv(&mut conn).unwrap().is_empty());
}

#[test]
fn fallback_send_is_single_copy() {
    let (store, _) = published_store();
    let (mut a, _b) = pair(&store);
    let mut conn = a.connect("Device_B", "flash-delivery", "bogus", &k(2)).unwrap();
    let records = a.send(&mut conn, b"x").unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].delivered);
    advance(&store, 10);
    assert_eq!(a.recv(&mut conn).unwrap().len(), 1);
}

#[test]
fn blackholed_path_loses_nothing() {
    let (store, token) = published_store();
    let (mut a, _b) = pair(&store);
    let mut conn = a.connect("Device_B", "flash-delivery", &token, &k(2)).unwrap();
    let dead = conn.deployed_paths()[0].links.clone();
    let net = store.lock().unwrap().network().clone();
    net.lock().unwrap().set_loss_filter(Some(Box::new(move |_, link| dead.contains(link))));
    let mut delivered = Vec::new();
    for i in 0..100u32 {
        let r = a.send(&mut conn, &i.to_be_bytes()).unwrap();
        assert_eq!(r.iter().filter(|r| r.delivered).count(), 1);
        advance(&store, 1);
        delivered.extend(a.recv(&mut conn).unwrap());
    }
    advance(&store, 20);
    delivered.extend(a.recv(&mut conn).unwrap());
    let seqs: Vec<u64> = delivered.iter().map(|d| d.seq).collect();
    assert_eq!(seqs, (0..100).collect::<Vec<_>>());
    assert!(delivered.iter().all(|d| d.path_index == 1));
}

#[test]
fn close_freezes_cost_and_is_idempotent() {
    let (store, token) = published_store();
    let (mut a, _b) = pair(&store);
    let mut conn = a.connect("Device_B", "flash-delivery", &token, &k(2)).unwrap();
    let id = conn.instance_id().unwrap().to_string();
    advance(&store, 500);
    assert!(a.close(&mut conn));
    let frozen = store.lock().unwrap().cost(&id).unwrap();
    advance(&store, 5_000);
    let later = store.lock().unwrap().cost(&id).unwrap();
    assert_eq!(frozen.raw_total, later.raw_total);
    assert!(frozen.raw_total > 0.0);
    assert!(!a.close(&mut conn));
    assert_eq!(a.send(&mut conn, b"x"), Err(DsaError::Closed));
    assert_eq!(live_instances(&store), 0);
    let net = store.lock().unwrap().network().clone();
    assert_eq!(net.lock().unwrap().rule_count(), 0);
}

#[test]
fn closing_fallback_does_not_touch_store() {
    let (store, _) = published_store();
    let (mut a, _b) = pair(&store);
    let mut conn = a.connect("Device_B", "flash-delivery", "bogus", &k(2)).unwrap();
    let before = log_len(&store);
    assert!(a.close(&mut conn));
    assert_eq!(log_len(&store), before);
}

#[test]
fn store_down_falls_back_to_usable_socket() {
    let (store, token) = published_store();
    let t = LocalTransport::new(store.clone()).with_faults(Faults { store_down: true, cut_after: None });
    let cfg = DsaConfig::new(APP, "device-a", endpoints("A")).with_fallback_host("Device_B", "B");
    let mut a = dsa_with(&store, cfg, t);
    let before = log_len(&store);
    let mut conn = a.connect("Device_B", "flash-delivery", &token, &k(2)).unwrap();
    assert_eq!(conn.mode(), Mode::Fallback);
    assert!(conn.failure_reason().unwrap().starts_with("store unreachable"));
    assert!(a.send(&mut conn, b"x").unwrap()[0].delivered);
    assert_eq!(log_len(&store), before);
}

#[test]
fn cut_during_handshake_leaves_nothing_behind() {
    for cut in 1..=4 {
        let (store, token) = published_store();
        let (_, _b) = pair(&store);
        let t = LocalTransport::new(store.clone()).with_faults(Faults { store_down: false, cut_after: Some(cut) });
        let cfg = DsaConfig::new(APP, "device-a", endpoints("A")).with_fallback_host("Device_B", "B");
        let mut a = dsa_with(&store, cfg, t);
        let mut conn = a.connect("Device_B", "flash-delivery", &token, &k(2)).unwrap();
        assert_eq!(conn.mode(), Mode::Fallback, "cut after {cut}");
        assert!(conn.failure_reason().unwrap().starts_with("connection cut"));
        assert_eq!(live_instances(&store), 0);
        assert!(a.send(&mut conn, b"x").unwrap()[0].delivered);
        let s = store.lock().unwrap();
        assert!(s.read_log(&LogFilter::default()).iter().any(|e| e.action.starts_with("session aborted")));
    }
}

#[test]
fn slow_store_times_out_within_budget() {
    for rtt in [60, 90, 250] {
        let (store, token) = published_store();
        let (_, _b) = pair(&store);
        let t = LocalTransport::new(store.clone()).with_rtt(SimTime::from_millis(rtt));
        let mut a = dsa_with(&store, DsaConfig::new(APP, "device-a", endpoints("A")), t);
        let conn = a.connect("Device_B", "flash-delivery", &token, &k(2)).unwrap();
        assert_eq!(conn.mode(), Mode::Fallback);
        assert!(conn.failure_reason().unwrap().contains("timed out"));
        assert!(conn.setup_elapsed() <= SimTime::from_millis(200));
        assert_eq!(live_instances(&store), 0, "rtt {rtt}");
    }
}

#[test]
fn payload_never_reaches_store() {
    let (store, token) = published_store();
    let (mut a, _b) = pair(&store);
    let mut conn = a.connect("Device_B", "flash-delivery", &token, &k(2)).unwrap();
    a.send(&mut conn, b"SECRET-PAYLOAD").unwrap();
    advance(&store, 10);
    a.recv(&mut conn).unwrap();
    a.close(&mut conn);
    let s = store.lock().unwrap();
    let log = s.read_log(&LogFilter::default());
    assert!(!log.is_empty());
    for e in log {
        assert!(!e.action.contains("SECRET"), "{e:?}");
        let kind = e.action.strip_prefix("recv ").unwrap_or("");
        assert!(!["SEND", "DATA", "PAYLOAD"].contains(&kind));
    }
}

#[test]
fn rebind_with_new_endpoints_is_resolved() {
    let (store, token) = published_store();
    let (mut a, mut b) = pair(&store);
    let first = a.connect("Device_B", "flash-delivery", &token, &k(1)).unwrap();
    b.unbind("Device_B");
    let moved = vec![Endpoint::new("B", 6000, 1).unwrap()];
    let mut b2 = dsa_with(&store, DsaConfig::new(APP, "device-b", moved.clone()), LocalTransport::new(store.clone()));
    b2.bind("Device_B").unwrap();
    let second = a.connect("Device_B", "flash-delivery", &token, &k(1)).unwrap();
    let s = store.lock().unwrap();
    let endpoint_b =
        |c: &socket_store::dsa::Connection| s.instance(c.instance_id().unwrap()).unwrap().inputs["endpointB"].clone();
    assert_eq!(endpoint_b(&first), "B:5000/0");
    assert_eq!(endpoint_b(&second), "B:6000/1");
}
