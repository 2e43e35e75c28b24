#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use socket_store::dsa::{Dsa, DsaConfig, LocalTransport};
use socket_store::endpoint::Endpoint;
use socket_store::kmflash::{flash_delivery_manifest, single_path_manifest};
use socket_store::store::server::SharedStore;
use socket_store::store::{Decision, Store, StoreConfig};

pub const APP: &str = "demo-app";

/// A store with flash-delivery and single-path published and a
/// flash-delivery license for [`APP`]. Returns the license token.
pub fn published_store() -> (SharedStore, String) {
    let mut s = Store::open(StoreConfig { seed: Some(7), ..StoreConfig::default() }).unwrap();
    s.register_specialist("km-lab").unwrap();
    s.register_specialist("reviewer").unwrap();
    for m in [flash_delivery_manifest(), single_path_manifest()] {
        let id = s.submit(m).unwrap();
        s.start_review(&id).unwrap();
        s.review(&id, Decision::Accept, "reviewer").unwrap();
    }
    let token = s.purchase(APP, "flash-delivery").unwrap().token;
    (Arc::new(Mutex::new(s)), token)
}

pub fn endpoints(host: &str) -> Vec<Endpoint> {
    (0..2).map(|nic| Endpoint::new(host, 5000, nic).unwrap()).collect()
}

pub fn dsa_with(store: &SharedStore, cfg: DsaConfig, transport: LocalTransport) -> Dsa {
    let net = store.lock().unwrap().network().clone();
    Dsa::new(cfg, Box::new(transport), net).unwrap()
}

pub fn device(store: &SharedStore, name: &str, host: &str) -> Dsa {
    let cfg = DsaConfig::new(APP, name, endpoints(host)).with_fallback_host("Device_B", "B");
    dsa_with(store, cfg, LocalTransport::new(store.clone()))
}

/// Device A and device B, with B bound as `Device_B`.
pub fn pair(store: &SharedStore) -> (Dsa, Dsa) {
    let a = device(store, "device-a", "A");
    let mut b = device(store, "device-b", "B");
    b.bind("Device_B").unwrap();
    (a, b)
}
