//! Store module model: manifests, NSD documents, metrics and the review
//! lifecycle.

mod metric;
mod nsd;
mod state;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentTypeLibrary;

pub use self::metric::{in_deadline_ratio, mean_latency_ms, Direction, MetricDef, IN_DEADLINE_RATIO, MEAN_LATENCY_MS};
pub use self::nsd::{parse_nsd, serialize_nsd, Directive, FormalInput, Nsd, NsdError, ParamBinding};
pub use self::state::{IllegalTransition, ModuleState};

fn submitted() -> ModuleState {
    ModuleState::Submitted
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleManifest {
    pub module_id: String,
    pub name: String,
    pub version: u32,
    pub author: String,
    pub metric_ids: Vec<String>,
    /// NSD document text. In an on-disk bundle this may instead name a file
    /// next to the manifest.
    pub nsd: String,
    pub dsa_ref: String,
    pub price: f64,
    #[serde(default = "submitted")]
    pub state: ModuleState,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest: {0}")]
    Format(String),
}

impl ModuleManifest {
    pub fn from_toml(text: &str) -> Result<Self, BundleError> {
        toml::from_str(text).map_err(|e| BundleError::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    /// Loads `manifest.toml` from a bundle directory, resolving an NSD file
    /// reference relative to it.
    pub fn load_bundle(dir: &Path) -> Result<Self, BundleError> {
        let path = dir.join("manifest.toml");
        let text = std::fs::read_to_string(&path)
            .map_err(|source| BundleError::Io { path: path.display().to_string(), source })?;
        let mut m = Self::from_toml(&text)?;
        if !m.nsd.trim_start().starts_with('<') {
            let nsd_path = dir.join(m.nsd.trim());
            m.nsd = std::fs::read_to_string(&nsd_path)
                .map_err(|source| BundleError::Io { path: nsd_path.display().to_string(), source })?;
        }
        Ok(m)
    }

    pub fn parsed_nsd(&self, library: &AgentTypeLibrary) -> Result<Nsd, NsdError> {
        parse_nsd(&self.nsd, library)
    }
}

/// Every problem with a manifest; empty means valid.
pub fn validate_manifest(m: &ModuleManifest, library: &AgentTypeLibrary) -> Vec<String> {
    let mut v = Vec::new();
    if m.module_id.trim().is_empty() {
        v.push("module_id must be non-empty".to_string());
    }
    if m.name.trim().is_empty() {
        v.push("name must be non-empty".to_string());
    }
    if m.version == 0 {
        v.push("version must be positive".to_string());
    }
    if m.metric_ids.is_empty() {
        v.push("module must declare a metric".to_string());
    }
    for id in &m.metric_ids {
        if library.metric(id).is_none() {
            v.push(format!("unknown metric {id}"));
        }
    }
    if let Err(e) = m.parsed_nsd(library) {
        v.push(format!("invalid NSD: {e}"));
    }
    if m.dsa_ref.trim().is_empty() {
        v.push("dsa_ref must name a device-side agent".to_string());
    }
    if !m.price.is_finite() || m.price < 0.0 {
        v.push("negative price".to_string());
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmflash::flash_delivery_manifest;
    use crate::store::standard_library;

    #[test]
    fn fixture_manifest_is_valid() {
        let m = flash_delivery_manifest();
        assert_eq!(m.metric_ids, vec![IN_DEADLINE_RATIO.to_string()]);
        assert!(validate_manifest(&m, &standard_library()).is_empty());
    }

    #[test]
    fn violations_are_collected() {
        let lib = standard_library();
        let mut m = flash_delivery_manifest();
        m.metric_ids.clear();
        m.price = -1.0;
        let v = validate_manifest(&m, &lib);
        assert!(v.contains(&"module must declare a metric".to_string()));
        assert!(v.contains(&"negative price".to_string()));
        let mut m = flash_delivery_manifest();
        m.metric_ids.push("nope".into());
        m.nsd = "<nsd><agent id=\"x\" type=\"CustomExfilAgent\"/></nsd>".into();
        let v = validate_manifest(&m, &lib);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn bundle_loads_external_nsd() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = flash_delivery_manifest();
        let nsd = std::mem::replace(&mut m.nsd, "nsd.xml".into());
        std::fs::write(dir.path().join("nsd.xml"), &nsd).unwrap();
        std::fs::write(dir.path().join("manifest.toml"), m.to_toml()).unwrap();
        let loaded = ModuleManifest::load_bundle(dir.path()).unwrap();
        assert_eq!(loaded.nsd, nsd);
        assert_eq!(loaded.module_id, "flash-delivery");
    }
}
