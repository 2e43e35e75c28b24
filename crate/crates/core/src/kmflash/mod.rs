//! K-paths Mirroring: disjoint path allocation, mirrored transmission and
//! deadline accounting, plus the flash-delivery module fixtures.

mod agent;
mod alloc;
mod deploy;
mod stats;

use crate::moduledef::ModuleManifest;
use crate::store::cost::{cost_report, CostReport, RateCard, Registration, WeightFn};
use crate::time::SimTime;

pub use self::agent::{kmirror_schema, register, Activation, ActivationOutcome, DeployedPath, KMIRROR};
pub use self::alloc::{
    allocate_disjoint_paths, AllocError, AllocRequest, AllocationFailure, MirrorPath, PathSet, DEFAULT_EPSILON_MS,
};
pub use self::deploy::{allocate_and_deploy, deploy_mirror_paths, Controller, Deployment};
pub use self::stats::{collect_stats, mirror_send, DeliveryStats};

pub const FLASH_DELIVERY_MANIFEST: &str = include_str!("../../fixtures/flash-delivery/manifest.toml");
pub const FLASH_DELIVERY_NSD: &str = include_str!("../../fixtures/flash-delivery/nsd.xml");
pub const SINGLE_PATH_MANIFEST: &str = include_str!("../../fixtures/single-path/manifest.toml");
pub const SINGLE_PATH_NSD: &str = include_str!("../../fixtures/single-path/nsd.xml");

fn bundled(manifest: &str, nsd: &str) -> ModuleManifest {
    let mut m = ModuleManifest::from_toml(manifest).expect("fixture manifest parses");
    m.nsd = nsd.to_string();
    m
}

pub fn flash_delivery_manifest() -> ModuleManifest {
    bundled(FLASH_DELIVERY_MANIFEST, FLASH_DELIVERY_NSD)
}

/// The single-path baseline pseudo-module: the same adapter with K fixed at 1.
pub fn single_path_manifest() -> ModuleManifest {
    bundled(SINGLE_PATH_MANIFEST, SINGLE_PATH_NSD)
}

/// The KM share of an instance's expenditure.
pub fn km_cost(instance_id: &str, registrations: &[Registration], now: SimTime, card: &RateCard) -> CostReport {
    cost_report(instance_id, registrations, now, card, &WeightFn::Identity)
}
