//! Device-side agent: the library an application links to reach the store.
//! It binds aliases, runs the authorization handshake, instantiates modules
//! and falls back to a plain single-path socket on any store or allocation
//! failure. Payloads only ever travel the simulated data plane.

mod dedup;
pub mod transport;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::endpoint::Endpoint;
use crate::kmflash::{mirror_send, DeployedPath};
use crate::netsim::{DeliveryRecord, FlowId, NodeId, SharedNetwork, SimError};
use crate::store::wire::{Request, Response};
use crate::time::SimTime;

pub use self::dedup::{DedupWindow, DEDUP_WINDOW};
pub use self::transport::{Faults, LocalTransport, StoreTransport, TcpTransport, TransportError};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum DsaError {
    #[error("connection closed")]
    Closed,
    #[error("alias must be non-empty")]
    EmptyAlias,
    #[error("{0}")]
    AliasConflict(String),
    #[error("device needs at least one local endpoint")]
    NoLocalEndpoint,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ConnectError {
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    /// Raised in negotiate mode after the callback has seen the failure.
    #[error("negotiation required: {reason}")]
    Negotiation { reason: String, max_feasible_k: Option<u32> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnFailure {
    #[default]
    Fallback,
    Negotiate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectOptions {
    pub k: u32,
    pub rate_mbps: f64,
    pub max_latency_ms: f64,
    #[serde(default)]
    pub on_failure: OnFailure,
}

impl ConnectOptions {
    pub fn new(k: u32, rate_mbps: f64, max_latency_ms: f64) -> Self {
        ConnectOptions { k, rate_mbps, max_latency_ms, on_failure: OnFailure::Fallback }
    }

    pub fn negotiate(mut self) -> Self {
        self.on_failure = OnFailure::Negotiate;
        self
    }

    pub fn validate(&self) -> Result<(), ConnectError> {
        if self.k == 0 {
            return Err(ConnectError::InvalidOptions("K must be at least 1".into()));
        }
        if !(self.rate_mbps.is_finite() && self.rate_mbps > 0.0) {
            return Err(ConnectError::InvalidOptions("rate must be positive".into()));
        }
        if !(self.max_latency_ms.is_finite() && self.max_latency_ms > 0.0) {
            return Err(ConnectError::InvalidOptions("max_latency must be positive".into()));
        }
        Ok(())
    }

    fn deadline(&self) -> SimTime {
        SimTime::from_ms_f64(self.max_latency_ms)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DsaConfig {
    pub app_id: String,
    pub device: String,
    /// This device's endpoints, one per NIC.
    pub local: Vec<Endpoint>,
    pub refresh_interval: SimTime,
    pub handshake_timeout: SimTime,
    /// Hosts to dial when the store cannot resolve an alias.
    pub fallback_hosts: BTreeMap<String, NodeId>,
    pub packet_size: u32,
}

impl DsaConfig {
    pub fn new(app_id: impl Into<String>, device: impl Into<String>, local: Vec<Endpoint>) -> Self {
        DsaConfig {
            app_id: app_id.into(),
            device: device.into(),
            local,
            refresh_interval: SimTime::from_millis(1000),
            handshake_timeout: SimTime::from_millis(200),
            fallback_hosts: BTreeMap::new(),
            packet_size: 1000,
        }
    }

    pub fn with_fallback_host(mut self, alias: impl Into<String>, host: impl Into<NodeId>) -> Self {
        self.fallback_hosts.insert(alias.into(), host.into());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Module,
    Fallback,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Module => "module",
            Mode::Fallback => "fallback",
        })
    }
}

/// Failure surfaced to the application in negotiate mode.
#[derive(Clone, Debug, PartialEq)]
pub struct NegotiationEvent {
    pub alias: String,
    pub module_id: String,
    pub requested_k: u32,
    pub reason: String,
    /// Largest K the store could have satisfied, when it said.
    pub max_feasible_k: Option<u32>,
}

pub type FailureCallback = Box<dyn FnMut(&NegotiationEvent) + Send>;

/// An open connection. Module mode carries one flow per mirrored path;
/// fallback mode a single default-route path.
#[derive(Debug)]
pub struct Connection {
    alias: String,
    mode: Mode,
    instance_id: Option<String>,
    failure_reason: Option<String>,
    flow: FlowId,
    path_indices: Vec<u32>,
    deployed: Vec<DeployedPath>,
    deadline: SimTime,
    size: u32,
    next_seq: u64,
    dedup: DedupWindow,
    in_flight: BTreeMap<u64, Vec<u8>>,
    closed: bool,
    setup_elapsed: SimTime,
}

impl Connection {
    pub fn alias(&self) -> &str {
        &self.alias
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn instance_id(&self) -> Option<&str> {
        self.instance_id.as_deref()
    }

    pub fn paths(&self) -> usize {
        self.path_indices.len()
    }

    pub fn failure_reason(&self) -> Option<&str> {
        self.failure_reason.as_deref()
    }

    pub fn flow(&self) -> &FlowId {
        &self.flow
    }

    /// Paths granted by the store; empty in fallback mode.
    pub fn deployed_paths(&self) -> &[DeployedPath] {
        &self.deployed
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Simulated time the handshake took.
    pub fn setup_elapsed(&self) -> SimTime {
        self.setup_elapsed
    }
}

/// One payload handed to the application by `recv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Received {
    pub seq: u64,
    pub path_index: u32,
    pub sent_at: SimTime,
    pub arrived_at: SimTime,
    pub payload: Vec<u8>,
}

impl Received {
    pub fn latency(&self) -> SimTime {
        self.arrived_at - self.sent_at
    }
}

#[derive(Clone, Debug, Default)]
struct Binding {
    last_refresh: Option<SimTime>,
}

struct Failure {
    reason: String,
    max_feasible_k: Option<u32>,
    /// The session may hold state the store should drop.
    reset: bool,
}

impl Failure {
    fn new(reason: impl Into<String>) -> Self {
        Failure { reason: reason.into(), max_feasible_k: None, reset: false }
    }
}

pub struct Dsa {
    cfg: DsaConfig,
    transport: Box<dyn StoreTransport>,
    network: SharedNetwork,
    greeted: bool,
    resolved: BTreeMap<String, Vec<Endpoint>>,
    bindings: BTreeMap<String, Binding>,
    callback: Option<FailureCallback>,
    next_conn: u64,
}

impl Dsa {
    pub fn new(cfg: DsaConfig, transport: Box<dyn StoreTransport>, network: SharedNetwork) -> Result<Dsa, DsaError> {
        if cfg.local.is_empty() {
            return Err(DsaError::NoLocalEndpoint);
        }
        Ok(Dsa {
            cfg,
            transport,
            network,
            greeted: false,
            resolved: BTreeMap::new(),
            bindings: BTreeMap::new(),
            callback: None,
            next_conn: 1,
        })
    }

    pub fn config(&self) -> &DsaConfig {
        &self.cfg
    }

    pub fn set_fallback_host(&mut self, alias: impl Into<String>, host: impl Into<NodeId>) {
        self.cfg.fallback_hosts.insert(alias.into(), host.into());
    }

    pub fn on_failure(&mut self, callback: impl FnMut(&NegotiationEvent) + Send + 'static) {
        self.callback = Some(Box::new(callback));
    }

    fn now(&self) -> SimTime {
        self.network.lock().unwrap_or_else(|p| p.into_inner()).now()
    }

    fn exchange(&mut self, req: &Request) -> Result<(Response, SimTime), TransportError> {
        let r = self.transport.request(req);
        if r.is_err() {
            self.greeted = false;
        }
        r
    }

    fn hello(&mut self) -> Result<SimTime, Failure> {
        if self.greeted {
            return Ok(SimTime::ZERO);
        }
        let req = Request::Hello { app_id: self.cfg.app_id.clone() };
        match self.exchange(&req) {
            Ok((Response::HelloOk { .. }, rtt)) => {
                self.greeted = true;
                Ok(rtt)
            }
            Ok((other, _)) => Err(Failure::new(format!("store rejected HELLO: {other:?}"))),
            Err(e) => Err(Failure::new(e.to_string())),
        }
    }

    // ---- bind ----------------------------------------------------------

    /// Registers this device's endpoints under `alias` and keeps them fresh.
    /// An unreachable store queues the registration for the next refresh.
    pub fn bind(&mut self, alias: &str) -> Result<(), DsaError> {
        if alias.trim().is_empty() {
            return Err(DsaError::EmptyAlias);
        }
        self.bindings.entry(alias.to_string()).or_default();
        match self.send_bind(alias) {
            Err(DsaError::AliasConflict(r)) => {
                self.bindings.remove(alias);
                Err(DsaError::AliasConflict(r))
            }
            _ => Ok(()),
        }
    }

    /// Stops refreshing `alias`; the store lets it expire.
    pub fn unbind(&mut self, alias: &str) -> bool {
        self.bindings.remove(alias).is_some()
    }

    /// Whether `alias` has been confirmed by the store at least once.
    pub fn is_bound(&self, alias: &str) -> bool {
        self.bindings.get(alias).is_some_and(|b| b.last_refresh.is_some())
    }

    /// Aliases registered with this handle whose registration is still
    /// waiting for the store.
    pub fn pending_binds(&self) -> Vec<&str> {
        self.bindings.iter().filter(|(_, b)| b.last_refresh.is_none()).map(|(a, _)| a.as_str()).collect()
    }

    fn send_bind(&mut self, alias: &str) -> Result<(), DsaError> {
        if self.hello().is_err() {
            return Ok(());
        }
        let req = Request::Bind {
            alias: alias.to_string(),
            device: self.cfg.device.clone(),
            connectivity: self.cfg.local.clone(),
        };
        let now = self.now();
        match self.exchange(&req) {
            Ok((Response::BindOk { .. }, _)) => {
                if let Some(b) = self.bindings.get_mut(alias) {
                    b.last_refresh = Some(now);
                }
                Ok(())
            }
            Ok((Response::BindFail { reason }, _)) if reason.starts_with("alias conflict") => {
                Err(DsaError::AliasConflict(reason))
            }
            _ => Ok(()),
        }
    }

    /// Re-sends every binding that is queued or older than the refresh
    /// interval. Called on each public operation.
    pub fn refresh_if_due(&mut self) {
        let now = self.now();
        let due: Vec<String> = self
            .bindings
            .iter()
            .filter(|(_, b)| b.last_refresh.is_none_or(|t| now >= t + self.cfg.refresh_interval))
            .map(|(a, _)| a.clone())
            .collect();
        for alias in due {
            let _ = self.send_bind(&alias);
        }
    }

    // ---- connect -------------------------------------------------------

    /// Opens a connection to `alias` through `module_id`. Store and
    /// allocation failures produce a fallback connection, or in negotiate
    /// mode are reported to the callback and returned as an error.
    pub fn connect(
        &mut self,
        alias: &str,
        module_id: &str,
        token: &str,
        opts: &ConnectOptions,
    ) -> Result<Connection, ConnectError> {
        opts.validate()?;
        if alias.trim().is_empty() {
            return Err(ConnectError::InvalidOptions("alias must be non-empty".into()));
        }
        self.refresh_if_due();
        let mut elapsed = SimTime::ZERO;
        let outcome = self.handshake(alias, module_id, token, opts, &mut elapsed);
        let conn_id = self.next_conn;
        self.next_conn += 1;
        match outcome {
            Ok((instance_id, summary)) => {
                let path_indices: Vec<u32> = summary.paths.iter().map(|p| p.index).collect();
                Ok(Connection {
                    alias: alias.into(),
                    mode: Mode::Module,
                    instance_id: Some(instance_id),
                    failure_reason: None,
                    flow: summary.flow,
                    path_indices,
                    deployed: summary.paths,
                    deadline: opts.deadline(),
                    size: self.cfg.packet_size,
                    next_seq: 0,
                    dedup: DedupWindow::default(),
                    in_flight: BTreeMap::new(),
                    closed: false,
                    setup_elapsed: elapsed,
                })
            }
            Err(f) => {
                if f.reset {
                    self.transport.reset();
                    self.greeted = false;
                }
                match opts.on_failure {
                    OnFailure::Negotiate => {
                        let ev = NegotiationEvent {
                            alias: alias.into(),
                            module_id: module_id.into(),
                            requested_k: opts.k,
                            reason: f.reason.clone(),
                            max_feasible_k: f.max_feasible_k,
                        };
                        if let Some(cb) = self.callback.as_mut() {
                            cb(&ev);
                        }
                        Err(ConnectError::Negotiation { reason: f.reason, max_feasible_k: f.max_feasible_k })
                    }
                    OnFailure::Fallback => Ok(self.fallback(alias, conn_id, f.reason, opts, elapsed)),
                }
            }
        }
    }

    fn handshake(
        &mut self,
        alias: &str,
        module_id: &str,
        token: &str,
        opts: &ConnectOptions,
        elapsed: &mut SimTime,
    ) -> Result<(String, crate::store::wire::AllocationSummary), Failure> {
        let timeout = self.cfg.handshake_timeout;
        let over = |elapsed: &mut SimTime, rtt: SimTime| -> Result<(), Failure> {
            if *elapsed + rtt > timeout {
                *elapsed = timeout;
                return Err(Failure {
                    reason: "store unreachable: handshake timed out".into(),
                    max_feasible_k: None,
                    reset: true,
                });
            }
            *elapsed += rtt;
            Ok(())
        };
        let rtt = self.hello()?;
        over(elapsed, rtt)?;

        let step = |dsa: &mut Dsa, elapsed: &mut SimTime, req: Request| -> Result<Response, Failure> {
            match dsa.exchange(&req) {
                Ok((resp, rtt)) => {
                    over(elapsed, rtt)?;
                    Ok(resp)
                }
                Err(e) => Err(Failure { reason: e.to_string(), max_feasible_k: None, reset: true }),
            }
        };

        match step(self, elapsed, Request::Auth { token: token.into(), module_id: module_id.into() })? {
            Response::AuthOk { .. } => {}
            Response::AuthDeny { reason } => return Err(Failure::new(format!("authorization denied: {reason}"))),
            other => return Err(Failure::new(format!("authorization denied: unexpected reply {other:?}"))),
        }
        let remote = match step(self, elapsed, Request::Resolve { alias: alias.into() })? {
            Response::ResolveOk { connectivity, .. } if !connectivity.is_empty() => {
                self.resolved.insert(alias.into(), connectivity.clone());
                connectivity
            }
            Response::ResolveOk { .. } => {
                return Err(Failure::new(format!("alias resolution failed: {alias} has no endpoints")))
            }
            Response::ResolveFail { reason } => return Err(Failure::new(format!("alias resolution failed: {reason}"))),
            other => return Err(Failure::new(format!("alias resolution failed: unexpected reply {other:?}"))),
        };
        let inputs: BTreeMap<String, String> = [
            ("endpointA", self.cfg.local[0].to_string()),
            ("endpointB", remote[0].to_string()),
            ("K", opts.k.to_string()),
            ("rate", opts.rate_mbps.to_string()),
            ("max_latency", opts.max_latency_ms.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        match step(self, elapsed, Request::Instantiate { module_id: module_id.into(), inputs })? {
            Response::InstantiateOk { instance_id, allocation: Some(summary) } if !summary.paths.is_empty() => {
                Ok((instance_id, summary))
            }
            Response::InstantiateOk { instance_id, .. } => {
                let _ = self.exchange(&Request::Teardown { instance_id });
                Err(Failure::new("instantiation produced no data path"))
            }
            Response::InstantiateFail { reason, max_feasible_k } => {
                Err(Failure { reason, max_feasible_k, reset: false })
            }
            other => Err(Failure::new(format!("instantiation failed: unexpected reply {other:?}"))),
        }
    }

    fn fallback(
        &mut self,
        alias: &str,
        id: u64,
        reason: String,
        opts: &ConnectOptions,
        elapsed: SimTime,
    ) -> Connection {
        let src = self.cfg.local[0].address.clone();
        let dst = self
            .resolved
            .get(alias)
            .and_then(|eps| eps.first())
            .map(|e| e.address.clone())
            .or_else(|| self.cfg.fallback_hosts.get(alias).cloned())
            .unwrap_or_else(|| NodeId::from(alias));
        let flow = FlowId::new(src, dst, format!("fallback-{}-{id}", self.cfg.device));
        // Without a route the socket stays open and every send reports a drop.
        let _ = self.network.lock().unwrap_or_else(|p| p.into_inner()).deploy_default_route(&flow);
        Connection {
            alias: alias.into(),
            mode: Mode::Fallback,
            instance_id: None,
            failure_reason: Some(reason),
            flow,
            path_indices: vec![0],
            deployed: Vec::new(),
            deadline: opts.deadline(),
            size: self.cfg.packet_size,
            next_seq: 0,
            dedup: DedupWindow::default(),
            in_flight: BTreeMap::new(),
            closed: false,
            setup_elapsed: elapsed,
        }
    }

    // ---- data plane ----------------------------------------------------

    /// Sends one payload, one copy per path, at the current simulated time.
    pub fn send(&mut self, conn: &mut Connection, payload: &[u8]) -> Result<Vec<DeliveryRecord>, DsaError> {
        if conn.closed {
            return Err(DsaError::Closed);
        }
        self.refresh_if_due();
        let seq = conn.next_seq;
        let records = {
            let mut net = self.network.lock().unwrap_or_else(|p| p.into_inner());
            mirror_send(&mut net, &conn.flow, &conn.path_indices, seq, conn.size, conn.deadline)?
        };
        conn.next_seq += 1;
        if records.iter().any(|r| r.delivered) {
            conn.in_flight.insert(seq, payload.to_vec());
        }
        Ok(records)
    }

    /// Returns payloads that have arrived by now, first copy of each seq
    /// only, in arrival order.
    pub fn recv(&mut self, conn: &mut Connection) -> Result<Vec<Received>, DsaError> {
        if conn.closed {
            return Err(DsaError::Closed);
        }
        self.refresh_if_due();
        let arrivals = self.network.lock().unwrap_or_else(|p| p.into_inner()).take_arrivals(&conn.flow);
        let mut out = Vec::new();
        for a in arrivals {
            if !conn.dedup.accept(a.seq) {
                continue;
            }
            out.push(Received {
                seq: a.seq,
                path_index: a.path_index,
                sent_at: a.sent_at,
                arrived_at: a.at,
                payload: conn.in_flight.remove(&a.seq).unwrap_or_default(),
            });
        }
        let floor = conn.dedup.floor();
        conn.in_flight = conn.in_flight.split_off(&floor);
        Ok(out)
    }

    /// Closes the connection. Module mode tears the instance down at the
    /// store; fallback mode only retracts the local route. Returns false if
    /// it was already closed.
    pub fn close(&mut self, conn: &mut Connection) -> bool {
        if conn.closed {
            return false;
        }
        conn.closed = true;
        match &conn.instance_id {
            Some(id) => {
                let req = Request::Teardown { instance_id: id.clone() };
                let ok = self.hello().is_ok() && matches!(self.exchange(&req), Ok((Response::TeardownOk { .. }, _)));
                if !ok {
                    // The store drops the session's instances when it goes away.
                    self.transport.reset();
                    self.greeted = false;
                }
            }
            None => {
                self.network.lock().unwrap_or_else(|p| p.into_inner()).retract_path(&conn.flow, 0);
            }
        }
        true
    }
}
