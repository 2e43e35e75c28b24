//! The Store service: agent type library, module repository and review
//! lifecycle, licenses and access control, NSD execution, metric samples,
//! search, cost accounting, alias registry and the action log.

pub mod cost;
mod instance;
pub mod server;
mod testbed;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, AgentError, AgentTypeLibrary, AgentView, EnvId, Runtime};
use crate::endpoint::Endpoint;
use crate::kmflash::{self, Activation, AllocationFailure};
use crate::moduledef::{
    in_deadline_ratio, mean_latency_ms, validate_manifest, IllegalTransition, ModuleManifest, ModuleState, NsdError,
};
use crate::netsim::{Network, SharedNetwork, Topology};
use crate::time::SimTime;

use self::cost::{cost_report, CostReport, RateCard, Registration, WeightFn};

pub use self::instance::SpawnedAgent;
pub use self::testbed::Scenario;

/// Every store operation, by the name the command line exposes it under.
pub const OPERATIONS: &[&str] = &[
    "register-specialist",
    "submit",
    "start-review",
    "review",
    "resubmit",
    "retire",
    "search",
    "purchase",
    "authorize",
    "revoke",
    "eval",
    "instantiate",
    "cost",
    "teardown",
    "log",
    "library",
    "bind",
    "resolve",
];

pub const STATE_FILE: &str = "state.json";

/// The closed set of agent types and metrics the store will instantiate.
pub fn standard_library() -> AgentTypeLibrary {
    let mut lib = AgentTypeLibrary::new();
    agents::resource::register(&mut lib).expect("built-in resource types register");
    kmflash::register(&mut lib).expect("KMirror registers");
    lib.register_metric(in_deadline_ratio());
    lib.register_metric(mean_latency_ms());
    lib
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("manifest rejected: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("anonymous author: {0:?} is not a registered specialist")]
    AnonymousAuthor(String),
    #[error("invalid specialist name {0:?}")]
    InvalidSpecialist(String),
    #[error("duplicate version: {name} v{version} already exists")]
    DuplicateVersion { name: String, version: u32 },
    #[error("version {new} of {module} must exceed current version {current}")]
    StaleVersion { module: String, current: u32, new: u32 },
    #[error("unknown module {0}")]
    UnknownModule(String),
    #[error(transparent)]
    Transition(#[from] IllegalTransition),
    #[error("self-review: {0} authored the module")]
    SelfReview(String),
    #[error("module {0} is not published")]
    NotPublished(String),
    #[error("module {module} cannot be evaluated while {state}")]
    NotEvaluable { module: String, state: ModuleState },
    #[error("unknown license token")]
    UnknownToken,
    #[error("authorization denied: {0}")]
    Denied(String),
    #[error("missing input {0}")]
    MissingInput(String),
    #[error("invalid input {name}: {reason}")]
    InvalidInput { name: String, reason: String },
    #[error("invalid NSD: {0}")]
    Nsd(#[from] NsdError),
    #[error("spawn of {directive} failed: {source}")]
    Spawn { directive: String, source: AgentError },
    #[error("activation failed: {0}")]
    Activation(AgentError),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("alias must be non-empty")]
    EmptyAlias,
    #[error("alias conflict: {alias} is bound by live device {device}")]
    AliasConflict { alias: String, device: String },
    #[error("unknown alias {0}")]
    UnknownAlias(String),
    #[error("unknown testbed scenario {0}")]
    UnknownScenario(String),
    #[error("state file {path}: {reason}")]
    Persist { path: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Error,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Ok => "ok",
            Outcome::Error => "error",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionLogEntry {
    pub seq: u64,
    pub ts: SimTime,
    pub actor: String,
    pub action: String,
    pub outcome: Outcome,
}

/// Selects log entries; `None` fields match everything. `until` is inclusive.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogFilter {
    pub actor: Option<String>,
    pub since: Option<SimTime>,
    pub until: Option<SimTime>,
}

impl LogFilter {
    pub fn matches(&self, e: &ActionLogEntry) -> bool {
        self.actor.as_ref().is_none_or(|a| &e.actor == a)
            && self.since.is_none_or(|t| e.ts >= t)
            && self.until.is_none_or(|t| e.ts <= t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Testbed,
    Production,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub module_id: String,
    pub metric_id: String,
    /// `None` records a failed evaluation.
    pub value: Option<f64>,
    pub ts: SimTime,
    pub source: SampleSource,
    pub scenario: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct License {
    pub app_id: String,
    pub module_id: String,
    pub issued_at: SimTime,
    pub token: String,
}

/// Proof that [`Store::authorize`] allowed `token` for `module_id`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Authorization {
    token: String,
    module_id: String,
    app_id: String,
    log_seq: u64,
}

impl Authorization {
    pub fn token(&self) -> &str {
        &self.token
    }
    pub fn module_id(&self) -> &str {
        &self.module_id
    }
    pub fn app_id(&self) -> &str {
        &self.app_id
    }
    /// Sequence number of the logged allow decision.
    pub fn log_seq(&self) -> u64 {
        self.log_seq
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Denied {
    pub reason: String,
}

impl fmt::Display for Denied {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "authorization denied: {}", self.reason)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Revise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleEntry {
    pub manifest: ModuleManifest,
    pub submitted_at: SimTime,
    /// Every version accepted into the repository, oldest first.
    pub versions: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub module_id: String,
    pub app_id: String,
    pub inputs: BTreeMap<String, String>,
    pub agents: Vec<SpawnedAgent>,
    pub started_at: SimTime,
    pub torn_down_at: Option<SimTime>,
    pub registrations: Vec<Registration>,
    pub activation: Option<Activation>,
    pub failure: Option<AllocationFailure>,
}

impl InstanceRecord {
    pub fn is_live(&self) -> bool {
        self.torn_down_at.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AliasBinding {
    pub alias: String,
    pub device: String,
    pub connectivity: Vec<Endpoint>,
    pub refreshed_at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub module_id: String,
    pub name: String,
    pub version: u32,
    pub author: String,
    pub description: String,
    pub price: f64,
    pub metric_id: Option<String>,
    pub aggregate: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct StoreState {
    clock: SimTime,
    specialists: BTreeSet<String>,
    modules: BTreeMap<String, ModuleEntry>,
    licenses: Vec<License>,
    revoked: BTreeSet<String>,
    log: Vec<ActionLogEntry>,
    samples: Vec<MetricSample>,
    instances: BTreeMap<String, InstanceRecord>,
    aliases: BTreeMap<String, AliasBinding>,
    rate_card: RateCard,
    weight: WeightFn,
    next_instance: u64,
}

pub struct StoreConfig {
    /// Where `state.json` lives; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub topology: Topology,
    /// Fixes license token generation; `None` draws from the OS.
    pub seed: Option<u64>,
    pub refresh_interval: SimTime,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            data_dir: None,
            topology: Topology::evaluation(),
            seed: None,
            refresh_interval: SimTime::from_millis(1000),
        }
    }
}

pub const RANKING_WINDOW: usize = 10;

pub struct Store {
    state: StoreState,
    library: Arc<AgentTypeLibrary>,
    network: SharedNetwork,
    runtime: Runtime,
    env: EnvId,
    rng: ChaCha20Rng,
    data_dir: Option<PathBuf>,
    refresh_interval: SimTime,
    scenarios: BTreeMap<String, Scenario>,
}

impl Store {
    pub fn open(cfg: StoreConfig) -> Result<Store, StoreError> {
        let mut state = match &cfg.data_dir {
            Some(dir) => load_state(dir)?,
            None => StoreState::default(),
        };
        let mut net = Network::new(cfg.topology);
        net.advance_to(state.clock);
        // Agents do not survive a restart; neither do their instances.
        for rec in state.instances.values_mut().filter(|r| r.is_live()) {
            rec.torn_down_at = Some(state.clock);
            for reg in &mut rec.registrations {
                reg.close(state.clock);
            }
        }
        let network = net.shared();
        let library = Arc::new(standard_library());
        let mut runtime = Runtime::new(network.clone(), library.clone());
        let env = runtime.create_environment("production", "store-managed network").expect("fresh runtime");
        let rng = match cfg.seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_os_rng(),
        };
        let mut scenarios = BTreeMap::new();
        let fig4 = Scenario::fig4();
        scenarios.insert(fig4.name.clone(), fig4);
        Ok(Store {
            state,
            library,
            network,
            runtime,
            env,
            rng,
            data_dir: cfg.data_dir,
            refresh_interval: cfg.refresh_interval,
            scenarios,
        })
    }

    pub fn in_memory() -> Store {
        Store::open(StoreConfig::default()).expect("in-memory store opens")
    }

    pub fn library(&self) -> &AgentTypeLibrary {
        &self.library
    }

    pub fn network(&self) -> &SharedNetwork {
        &self.network
    }

    pub fn runtime(&mut self) -> &mut Runtime {
        &mut self.runtime
    }

    pub fn environment(&self) -> &EnvId {
        &self.env
    }

    pub fn central_view(&self) -> Vec<AgentView> {
        self.runtime.central_view(&self.env).expect("production environment exists")
    }

    pub fn now(&self) -> SimTime {
        self.network.lock().unwrap_or_else(|p| p.into_inner()).now()
    }

    pub fn advance_to(&mut self, t: SimTime) {
        self.network.lock().unwrap_or_else(|p| p.into_inner()).advance_to(t);
    }

    pub fn advance_by(&mut self, dt: SimTime) {
        let t = self.now() + dt;
        self.advance_to(t);
    }

    pub fn refresh_interval(&self) -> SimTime {
        self.refresh_interval
    }

    pub fn rate_card(&self) -> &RateCard {
        &self.state.rate_card
    }

    pub fn set_rate_card(&mut self, card: RateCard) -> Result<(), StoreError> {
        self.state.rate_card = card;
        self.persist()
    }

    pub fn weight_fn(&self) -> &WeightFn {
        &self.state.weight
    }

    pub fn set_weight_fn(&mut self, weight: WeightFn) -> Result<(), StoreError> {
        self.state.weight = weight;
        self.persist()
    }

    // ---- action log ----------------------------------------------------

    fn sync_runtime_log(&mut self) {
        for e in self.runtime.drain_events() {
            let outcome = if e.ok { Outcome::Ok } else { Outcome::Error };
            self.append_log(e.ts, e.actor, e.action, outcome);
        }
    }

    fn append_log(&mut self, ts: SimTime, actor: String, action: String, outcome: Outcome) -> u64 {
        let floor = self.state.log.last().map_or(SimTime::ZERO, |e| e.ts);
        let seq = self.state.log.len() as u64;
        self.state.log.push(ActionLogEntry { seq, ts: ts.max(floor), actor, action, outcome });
        seq
    }

    /// Appends an entry stamped with the current simulated time.
    pub fn log_action(&mut self, actor: impl Into<String>, action: impl Into<String>, outcome: Outcome) -> u64 {
        self.sync_runtime_log();
        let now = self.now();
        self.append_log(now, actor.into(), action.into(), outcome)
    }

    pub fn read_log(&self, filter: &LogFilter) -> Vec<&ActionLogEntry> {
        self.state.log.iter().filter(|e| filter.matches(e)).collect()
    }

    fn record<T>(&mut self, actor: &str, action: String, r: Result<T, StoreError>) -> Result<T, StoreError> {
        match &r {
            Ok(_) => self.log_action(actor, action, Outcome::Ok),
            Err(e) => self.log_action(actor, format!("{action}: {e}"), Outcome::Error),
        };
        self.persist()?;
        r
    }

    // ---- repository ----------------------------------------------------

    pub fn register_specialist(&mut self, name: &str) -> Result<(), StoreError> {
        let r = if name.trim().is_empty() || name.trim().eq_ignore_ascii_case("anonymous") {
            Err(StoreError::InvalidSpecialist(name.into()))
        } else {
            self.state.specialists.insert(name.trim().to_string());
            Ok(())
        };
        self.record("store", format!("register specialist {name}"), r)
    }

    pub fn is_specialist(&self, name: &str) -> bool {
        self.state.specialists.contains(name)
    }

    pub fn module(&self, module_id: &str) -> Option<&ModuleManifest> {
        self.state.modules.get(module_id).map(|e| &e.manifest)
    }

    pub fn modules(&self) -> impl Iterator<Item = &ModuleEntry> {
        self.state.modules.values()
    }

    fn check_manifest(&self, m: &ModuleManifest) -> Result<(), StoreError> {
        let violations = validate_manifest(m, &self.library);
        if !violations.is_empty() {
            return Err(StoreError::Invalid(violations));
        }
        if !self.is_specialist(&m.author) {
            return Err(StoreError::AnonymousAuthor(m.author.clone()));
        }
        let clash = self.state.modules.values().any(|e| e.manifest.name == m.name && e.versions.contains(&m.version));
        if clash {
            return Err(StoreError::DuplicateVersion { name: m.name.clone(), version: m.version });
        }
        Ok(())
    }

    /// Adds a new module in state `submitted`. A manifest for an existing
    /// module id is treated as a revision.
    pub fn submit(&mut self, manifest: ModuleManifest) -> Result<String, StoreError> {
        if self.state.modules.contains_key(&manifest.module_id) {
            let id = manifest.module_id.clone();
            return self.resubmit(manifest).map(|_| id);
        }
        let actor = format!("specialist:{}", manifest.author);
        let action = format!("submit {} v{}", manifest.module_id, manifest.version);
        let r = self.check_manifest(&manifest).map(|()| {
            let now = self.now();
            let id = manifest.module_id.clone();
            let mut m = manifest;
            m.state = ModuleState::Submitted;
            let versions = vec![m.version];
            self.state.modules.insert(id.clone(), ModuleEntry { manifest: m, submitted_at: now, versions });
            id
        });
        self.record(&actor, action, r)
    }

    /// Replaces a module awaiting revision with a strictly newer version and
    /// returns it to review.
    pub fn resubmit(&mut self, manifest: ModuleManifest) -> Result<ModuleState, StoreError> {
        let actor = format!("specialist:{}", manifest.author);
        let action = format!("resubmit {} v{}", manifest.module_id, manifest.version);
        let r = self.try_resubmit(manifest);
        self.record(&actor, action, r)
    }

    fn try_resubmit(&mut self, manifest: ModuleManifest) -> Result<ModuleState, StoreError> {
        let entry = self
            .state
            .modules
            .get(&manifest.module_id)
            .ok_or_else(|| StoreError::UnknownModule(manifest.module_id.clone()))?;
        let current = entry.manifest.version;
        if entry.versions.contains(&manifest.version) {
            return Err(StoreError::DuplicateVersion { name: manifest.name.clone(), version: manifest.version });
        }
        if manifest.version <= current {
            return Err(StoreError::StaleVersion {
                module: manifest.module_id.clone(),
                current,
                new: manifest.version,
            });
        }
        let next = entry.manifest.state.transition(ModuleState::InReview)?;
        if entry.manifest.state != ModuleState::RevisionRequested {
            return Err(IllegalTransition { from: entry.manifest.state, to: ModuleState::InReview }.into());
        }
        self.check_manifest(&manifest)?;
        let entry = self.state.modules.get_mut(&manifest.module_id).expect("checked");
        let mut m = manifest;
        m.state = next;
        entry.versions.push(m.version);
        entry.manifest = m;
        Ok(next)
    }

    fn transition(&mut self, module_id: &str, to: ModuleState) -> Result<ModuleState, StoreError> {
        let entry = self.state.modules.get_mut(module_id).ok_or_else(|| StoreError::UnknownModule(module_id.into()))?;
        entry.manifest.state = entry.manifest.state.transition(to)?;
        Ok(entry.manifest.state)
    }

    pub fn start_review(&mut self, module_id: &str) -> Result<ModuleState, StoreError> {
        let r = self.transition(module_id, ModuleState::InReview);
        self.record("store", format!("start review {module_id}"), r)
    }

    pub fn review(&mut self, module_id: &str, decision: Decision, reviewer: &str) -> Result<ModuleState, StoreError> {
        let r = self.try_review(module_id, decision, reviewer);
        let verb = match decision {
            Decision::Accept => "accept",
            Decision::Revise => "revise",
        };
        self.record(&format!("specialist:{reviewer}"), format!("review {verb} {module_id}"), r)
    }

    fn try_review(&mut self, module_id: &str, decision: Decision, reviewer: &str) -> Result<ModuleState, StoreError> {
        let m = self.module(module_id).ok_or_else(|| StoreError::UnknownModule(module_id.into()))?;
        if m.author == reviewer {
            return Err(StoreError::SelfReview(reviewer.into()));
        }
        if !self.is_specialist(reviewer) {
            return Err(StoreError::AnonymousAuthor(reviewer.into()));
        }
        let to = match decision {
            Decision::Accept => ModuleState::Published,
            Decision::Revise => ModuleState::RevisionRequested,
        };
        self.transition(module_id, to)
    }

    pub fn retire(&mut self, module_id: &str) -> Result<ModuleState, StoreError> {
        let r = self.transition(module_id, ModuleState::Retired);
        self.record("store", format!("retire {module_id}"), r)
    }

    // ---- access control ------------------------------------------------

    pub fn licenses(&self) -> &[License] {
        &self.state.licenses
    }

    fn fresh_token(&mut self) -> String {
        loop {
            let token = format!("{:032x}", self.rng.random::<u128>());
            let used = self.state.revoked.contains(&token) || self.state.licenses.iter().any(|l| l.token == token);
            if !used {
                return token;
            }
        }
    }

    /// Issues (or returns the existing) license for `app_id` on a published module.
    pub fn purchase(&mut self, app_id: &str, module_id: &str) -> Result<License, StoreError> {
        let r = self.try_purchase(app_id, module_id);
        self.record(&format!("app:{app_id}"), format!("purchase {module_id}"), r)
    }

    fn try_purchase(&mut self, app_id: &str, module_id: &str) -> Result<License, StoreError> {
        let m = self.module(module_id).ok_or_else(|| StoreError::UnknownModule(module_id.into()))?;
        if m.state != ModuleState::Published {
            return Err(StoreError::NotPublished(module_id.into()));
        }
        if app_id.trim().is_empty() {
            return Err(StoreError::Denied("empty app id".into()));
        }
        if let Some(l) = self.state.licenses.iter().find(|l| l.app_id == app_id && l.module_id == module_id) {
            return Ok(l.clone());
        }
        let token = self.fresh_token();
        let l = License { app_id: app_id.into(), module_id: module_id.into(), issued_at: self.now(), token };
        self.state.licenses.push(l.clone());
        Ok(l)
    }

    pub fn revoke(&mut self, token: &str) -> Result<License, StoreError> {
        let r = match self.state.licenses.iter().position(|l| l.token == token) {
            Some(i) => {
                let l = self.state.licenses.remove(i);
                self.state.revoked.insert(l.token.clone());
                Ok(l)
            }
            None => Err(StoreError::UnknownToken),
        };
        self.record("store", format!("revoke token={}", fingerprint(token)), r)
    }

    fn license_for(&self, token: &str, module_id: &str) -> Result<&License, String> {
        if self.state.revoked.contains(token) {
            return Err("license revoked".into());
        }
        let l = self.state.licenses.iter().find(|l| l.token == token).ok_or("unknown token")?;
        if l.module_id != module_id {
            return Err(format!("token is not licensed for {module_id}"));
        }
        Ok(l)
    }

    /// Allows iff an unrevoked license binds `token` to `module_id`. Every
    /// decision is logged.
    pub fn authorize(&mut self, token: &str, module_id: &str) -> Result<Authorization, Denied> {
        let decision = self.license_for(token, module_id).map(|l| l.app_id.clone());
        let action = format!("authorize token={} module={module_id}", fingerprint(token));
        let r = match decision {
            Ok(app_id) => {
                let seq = self.log_action("access-control", format!("{action} allow"), Outcome::Ok);
                Ok(Authorization { token: token.into(), module_id: module_id.into(), app_id, log_seq: seq })
            }
            Err(reason) => {
                self.log_action("access-control", format!("{action} deny: {reason}"), Outcome::Error);
                Err(Denied { reason })
            }
        };
        let _ = self.persist();
        r
    }

    // ---- aliases -------------------------------------------------------

    fn alias_live(&self, b: &AliasBinding, now: SimTime) -> bool {
        now.saturating_sub(b.refreshed_at) <= SimTime::from_nanos(self.refresh_interval.as_nanos() * 3)
    }

    /// Records `device`'s current connectivity under `alias`. Re-binding from
    /// the same device refreshes it; another device may take the alias only
    /// once the holder has stopped refreshing.
    pub fn bind_alias(
        &mut self,
        alias: &str,
        device: &str,
        connectivity: Vec<Endpoint>,
    ) -> Result<AliasBinding, StoreError> {
        let now = self.now();
        let r = if alias.trim().is_empty() {
            Err(StoreError::EmptyAlias)
        } else {
            match self.state.aliases.get(alias) {
                Some(b) if b.device != device && self.alias_live(b, now) => {
                    Err(StoreError::AliasConflict { alias: alias.into(), device: b.device.clone() })
                }
                _ => {
                    let b =
                        AliasBinding { alias: alias.into(), device: device.into(), connectivity, refreshed_at: now };
                    self.state.aliases.insert(alias.into(), b.clone());
                    Ok(b)
                }
            }
        };
        self.record(&format!("device:{device}"), format!("bind {alias}"), r)
    }

    pub fn resolve(&mut self, alias: &str) -> Result<Vec<Endpoint>, StoreError> {
        let now = self.now();
        let r = match self.state.aliases.get(alias) {
            Some(b) if self.alias_live(b, now) => Ok(b.connectivity.clone()),
            _ => Err(StoreError::UnknownAlias(alias.into())),
        };
        let outcome = if r.is_ok() { Outcome::Ok } else { Outcome::Error };
        self.log_action("store", format!("resolve {alias}"), outcome);
        r
    }

    // ---- search --------------------------------------------------------

    /// Mean of the latest testbed samples of a module's first metric,
    /// oriented so that larger is better.
    pub fn aggregate(&self, module_id: &str) -> Option<f64> {
        let m = self.module(module_id)?;
        let metric = self.library.metric(m.metric_ids.first()?)?;
        let recent: Vec<f64> = self
            .state
            .samples
            .iter()
            .rev()
            .filter(|s| {
                s.module_id == module_id && s.metric_id == metric.metric_id && s.source == SampleSource::Testbed
            })
            .filter_map(|s| s.value)
            .take(RANKING_WINDOW)
            .collect();
        if recent.is_empty() {
            return None;
        }
        Some(metric.oriented(recent.iter().sum::<f64>() / recent.len() as f64))
    }

    /// Published modules whose name or description contains `query`
    /// (case-insensitive), best aggregate first, then by name.
    pub fn search(&self, query: &str) -> Vec<SearchHit> {
        let q = query.to_lowercase();
        let mut hits: Vec<(Option<f64>, SearchHit)> = self
            .state
            .modules
            .values()
            .map(|e| &e.manifest)
            .filter(|m| m.state == ModuleState::Published)
            .filter(|m| m.name.to_lowercase().contains(&q) || m.description.to_lowercase().contains(&q))
            .map(|m| {
                let oriented = self.aggregate(&m.module_id);
                let metric = m.metric_ids.first().and_then(|id| self.library.metric(id));
                let hit = SearchHit {
                    module_id: m.module_id.clone(),
                    name: m.name.clone(),
                    version: m.version,
                    author: m.author.clone(),
                    description: m.description.clone(),
                    price: m.price,
                    metric_id: metric.map(|x| x.metric_id.clone()),
                    aggregate: oriented.zip(metric).map(|(v, x)| x.oriented(v)),
                };
                (oriented, hit)
            })
            .collect();
        hits.sort_by(|(a, x), (b, y)| {
            let by_metric = match (a, b) {
                (Some(a), Some(b)) => b.total_cmp(a),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            };
            by_metric.then_with(|| x.name.cmp(&y.name)).then_with(|| x.module_id.cmp(&y.module_id))
        });
        hits.into_iter().map(|(_, h)| h).collect()
    }

    pub fn samples(&self) -> &[MetricSample] {
        &self.state.samples
    }

    /// Records a sample directly, for metrics gathered outside the testbed.
    pub fn record_sample(&mut self, sample: MetricSample) -> Result<(), StoreError> {
        let declared = self.module(&sample.module_id).map(|m| m.metric_ids.contains(&sample.metric_id));
        let r = match declared {
            None => Err(StoreError::UnknownModule(sample.module_id.clone())),
            Some(false) => Err(StoreError::Invalid(vec![format!("metric {} is not declared", sample.metric_id)])),
            Some(true) => {
                self.state.samples.push(sample.clone());
                Ok(())
            }
        };
        self.record("store", format!("sample {} {}", sample.module_id, sample.metric_id), r)
    }

    // ---- instances -----------------------------------------------------

    pub fn instance(&self, instance_id: &str) -> Option<&InstanceRecord> {
        self.state.instances.get(instance_id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &InstanceRecord> {
        self.state.instances.values()
    }

    pub fn cost(&mut self, instance_id: &str) -> Result<CostReport, StoreError> {
        let now = self.now();
        let rec = self.instance(instance_id).ok_or_else(|| StoreError::UnknownInstance(instance_id.into()))?;
        Ok(cost_report(instance_id, &rec.registrations, now, &self.state.rate_card, &self.state.weight))
    }

    // ---- persistence ---------------------------------------------------

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    /// Writes the state file; a no-op for in-memory stores.
    pub fn persist(&mut self) -> Result<(), StoreError> {
        self.sync_runtime_log();
        self.state.clock = self.now();
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let err = |path: &Path, e: &dyn fmt::Display| StoreError::Persist {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| err(dir, &e))?;
        let path = dir.join(STATE_FILE);
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        let text = serde_json::to_string_pretty(&self.state).map_err(|e| err(&path, &e))?;
        std::fs::write(&tmp, text).map_err(|e| err(&tmp, &e))?;
        std::fs::rename(&tmp, &path).map_err(|e| err(&path, &e))
    }
}

fn load_state(dir: &Path) -> Result<StoreState, StoreError> {
    let path = dir.join(STATE_FILE);
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| StoreError::Persist { path: path.display().to_string(), reason: e.to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(StoreState::default()),
        Err(e) => Err(StoreError::Persist { path: path.display().to_string(), reason: e.to_string() }),
    }
}

/// Short, log-safe form of a token.
pub fn fingerprint(token: &str) -> String {
    token.chars().take(8).collect()
}
