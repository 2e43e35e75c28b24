mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use common::{endpoints, published_store, APP};
use socket_store::dsa::{ConnectOptions, Dsa, DsaConfig, Mode, TcpTransport};
use socket_store::store::server::{lock, Server, SharedStore};

fn serve(store: &SharedStore) -> std::net::SocketAddr {
    let server = Server::bind("127.0.0.1:0", store.clone()).unwrap();
    let addr = server.local_addr().unwrap();
    server.spawn();
    addr
}

fn tcp_dsa(store: &SharedStore, addr: std::net::SocketAddr, device: &str, host: &str) -> Dsa {
    let net = lock(store).network().clone();
    let cfg = DsaConfig::new(APP, device, endpoints(host)).with_fallback_host("Device_B", "B");
    Dsa::new(cfg, Box::new(TcpTransport::new(addr, Duration::from_secs(2))), net).unwrap()
}

fn wait_until(mut cond: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < Duration::from_secs(5) {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    false
}

#[test]
fn dsa_over_tcp_module_and_disconnect() {
    let (store, token) = published_store();
    let addr = serve(&store);
    let mut b = tcp_dsa(&store, addr, "device-b", "B");
    b.bind("Device_B").unwrap();
    assert!(b.is_bound("Device_B"));
    let mut a = tcp_dsa(&store, addr, "device-a", "A");
    let mut conn = a.connect("Device_B", "flash-delivery", &token, &ConnectOptions::new(2, 10.0, 5.0)).unwrap();
    assert_eq!(conn.mode(), Mode::Module, "{:?}", conn.failure_reason());
    assert_eq!(conn.paths(), 2);
    assert_eq!(a.send(&mut conn, b"p").unwrap().len(), 2);
    let id = conn.instance_id().unwrap().to_string();
    assert!(lock(&store).instance(&id).unwrap().is_live());
    // Dropping the control connection ends the session and its instances.
    drop(a);
    assert!(wait_until(|| !lock(&store).instance(&id).unwrap().is_live()));
}

#[test]
fn tcp_close_tears_down() {
    let (store, token) = published_store();
    let addr = serve(&store);
    let mut b = tcp_dsa(&store, addr, "device-b", "B");
    b.bind("Device_B").unwrap();
    let mut a = tcp_dsa(&store, addr, "device-a", "A");
    let mut conn = a.connect("Device_B", "flash-delivery", &token, &ConnectOptions::new(2, 10.0, 5.0)).unwrap();
    let id = conn.instance_id().unwrap().to_string();
    assert!(a.close(&mut conn));
    assert!(!lock(&store).instance(&id).unwrap().is_live());
}

#[test]
fn unreachable_server_falls_back() {
    let (store, token) = published_store();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut a = tcp_dsa(&store, addr, "device-a", "A");
    let mut conn = a.connect("Device_B", "flash-delivery", &token, &ConnectOptions::new(2, 10.0, 5.0)).unwrap();
    assert_eq!(conn.mode(), Mode::Fallback);
    assert!(conn.failure_reason().unwrap().starts_with("store unreachable"));
    assert!(a.send(&mut conn, b"x").unwrap()[0].delivered);
}

#[test]
fn raw_protocol_lines() {
    let (store, _) = published_store();
    let addr = serve(&store);
    let s = TcpStream::connect(addr).unwrap();
    let mut w = s.try_clone().unwrap();
    let mut r = BufReader::new(s);
    let mut ask = |line: &str| {
        writeln!(w, "{line}").unwrap();
        let mut reply = String::new();
        r.read_line(&mut reply).unwrap();
        serde_json::from_str::<serde_json::Value>(&reply).unwrap()
    };
    assert_eq!(ask(r#"{"kind":"RESOLVE","alias":"x"}"#)["kind"], "PROTOCOL_ERROR");
    assert_eq!(ask(r#"{"kind":"HELLO","app_id":"demo-app"}"#)["kind"], "HELLO_OK");
    assert_eq!(ask(r#"{"kind":"SEND","payload":"abc"}"#)["kind"], "PROTOCOL_ERROR");
    assert_eq!(ask("not json")["kind"], "PROTOCOL_ERROR");
    assert_eq!(ask(r#"{"kind":"AUTH","token":"nope","module_id":"flash-delivery"}"#)["kind"], "AUTH_DENY");
    assert_eq!(ask(r#"{"kind":"RESOLVE","alias":"ghost"}"#)["kind"], "RESOLVE_FAIL");
    let resp = ask(r#"{"kind":"INSTANTIATE","module_id":"flash-delivery","inputs":{}}"#);
    assert_eq!(resp["kind"], "INSTANTIATE_FAIL");
}
