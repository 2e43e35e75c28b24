//! DSA↔Store control protocol: one JSON object per line, discriminated by
//! `kind`.
//!
//! | request | response |
//! |---|---|
//! | `HELLO{app_id}` | `HELLO_OK{session}` |
//! | `AUTH{token, module_id}` | `AUTH_OK{module_id}` / `AUTH_DENY{reason}` |
//! | `BIND{alias, device, connectivity}` | `BIND_OK{alias, refreshed_at}` / `BIND_FAIL{reason}` |
//! | `RESOLVE{alias}` | `RESOLVE_OK{alias, connectivity}` / `RESOLVE_FAIL{reason}` |
//! | `INSTANTIATE{module_id, inputs}` | `INSTANTIATE_OK{instance_id, allocation}` / `INSTANTIATE_FAIL{reason, max_feasible_k}` |
//! | `COST{instance_id}` | `COST_REPORT{report}` / `ERROR{reason}` |
//! | `TEARDOWN{instance_id}` | `TEARDOWN_OK{instance_id}` / `ERROR{reason}` |
//!
//! Anything else is answered with `PROTOCOL_ERROR{reason}`. Payload data
//! never crosses this channel.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::endpoint::Endpoint;
use crate::kmflash::DeployedPath;
use crate::netsim::FlowId;
use crate::time::SimTime;

use super::cost::CostReport;
use super::{Authorization, Outcome, Store};

pub const REQUEST_KINDS: &[&str] = &["HELLO", "AUTH", "BIND", "RESOLVE", "INSTANTIATE", "COST", "TEARDOWN"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Request {
    Hello { app_id: String },
    Auth { token: String, module_id: String },
    Bind { alias: String, device: String, connectivity: Vec<Endpoint> },
    Resolve { alias: String },
    Instantiate { module_id: String, inputs: BTreeMap<String, String> },
    Cost { instance_id: String },
    Teardown { instance_id: String },
}

impl Request {
    pub fn kind(&self) -> &'static str {
        match self {
            Request::Hello { .. } => "HELLO",
            Request::Auth { .. } => "AUTH",
            Request::Bind { .. } => "BIND",
            Request::Resolve { .. } => "RESOLVE",
            Request::Instantiate { .. } => "INSTANTIATE",
            Request::Cost { .. } => "COST",
            Request::Teardown { .. } => "TEARDOWN",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationSummary {
    pub flow: FlowId,
    pub paths: Vec<DeployedPath>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Response {
    HelloOk { session: String },
    AuthOk { module_id: String },
    AuthDeny { reason: String },
    BindOk { alias: String, refreshed_at: SimTime },
    BindFail { reason: String },
    ResolveOk { alias: String, connectivity: Vec<Endpoint> },
    ResolveFail { reason: String },
    InstantiateOk { instance_id: String, allocation: Option<AllocationSummary> },
    InstantiateFail { reason: String, max_feasible_k: Option<u32> },
    CostReport { report: CostReport },
    TeardownOk { instance_id: String },
    Error { reason: String },
    ProtocolError { reason: String },
}

impl Response {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("responses serialize")
    }
}

/// Parses one request line. Unknown kinds and malformed bodies come back as
/// the `PROTOCOL_ERROR` to send.
pub fn parse_request(line: &str) -> Result<Request, Response> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| Response::ProtocolError { reason: format!("malformed message: {e}") })?;
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| Response::ProtocolError { reason: "message has no kind".into() })?;
    if !REQUEST_KINDS.contains(&kind) {
        return Err(Response::ProtocolError { reason: format!("unknown message kind {kind}") });
    }
    let kind = kind.to_string();
    serde_json::from_value(value).map_err(|e| Response::ProtocolError { reason: format!("malformed {kind}: {e}") })
}

/// Per-connection protocol state.
pub struct Session {
    id: String,
    app_id: Option<String>,
    auths: BTreeMap<String, Authorization>,
    instances: BTreeSet<String>,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Session { id: id.into(), app_id: None, auths: BTreeMap::new(), instances: BTreeSet::new() }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn instances(&self) -> impl Iterator<Item = &String> {
        self.instances.iter()
    }

    fn actor(&self) -> String {
        format!("session:{}", self.id)
    }

    pub fn handle_line(&mut self, store: &mut Store, line: &str) -> String {
        match parse_request(line) {
            Ok(req) => self.handle(store, req),
            Err(resp) => {
                store.log_action(self.actor(), "protocol error", Outcome::Error);
                resp
            }
        }
        .to_line()
    }

    pub fn handle(&mut self, store: &mut Store, req: Request) -> Response {
        store.log_action(self.actor(), format!("recv {}", req.kind()), Outcome::Ok);
        let app_id = match (&req, &self.app_id) {
            (Request::Hello { app_id }, _) => {
                if app_id.trim().is_empty() {
                    return Response::ProtocolError { reason: "empty app_id".into() };
                }
                self.app_id = Some(app_id.clone());
                return Response::HelloOk { session: self.id.clone() };
            }
            (_, None) => return Response::ProtocolError { reason: "HELLO required first".into() },
            (_, Some(a)) => a.clone(),
        };
        match req {
            Request::Hello { .. } => unreachable!("handled above"),
            Request::Auth { token, module_id } => match store.authorize(&token, &module_id) {
                Ok(auth) if auth.app_id() == app_id => {
                    self.auths.insert(module_id.clone(), auth);
                    Response::AuthOk { module_id }
                }
                Ok(_) => Response::AuthDeny { reason: "license belongs to another application".into() },
                Err(d) => Response::AuthDeny { reason: d.reason },
            },
            Request::Bind { alias, device, connectivity } => match store.bind_alias(&alias, &device, connectivity) {
                Ok(b) => Response::BindOk { alias, refreshed_at: b.refreshed_at },
                Err(e) => Response::BindFail { reason: e.to_string() },
            },
            Request::Resolve { alias } => match store.resolve(&alias) {
                Ok(connectivity) => Response::ResolveOk { alias, connectivity },
                Err(e) => Response::ResolveFail { reason: e.to_string() },
            },
            Request::Instantiate { module_id, inputs } => {
                let Some(auth) = self.auths.get(&module_id).cloned() else {
                    return Response::InstantiateFail { reason: "not authorized".into(), max_feasible_k: None };
                };
                match store.instantiate(&auth, &inputs) {
                    Ok(rec) => match rec.failure {
                        Some(f) => {
                            let _ = store.teardown(&rec.instance_id);
                            Response::InstantiateFail { reason: f.to_string(), max_feasible_k: Some(f.max_feasible_k) }
                        }
                        None => {
                            self.instances.insert(rec.instance_id.clone());
                            Response::InstantiateOk {
                                instance_id: rec.instance_id,
                                allocation: rec.activation.map(|a| AllocationSummary { flow: a.flow, paths: a.paths }),
                            }
                        }
                    },
                    Err(e) => Response::InstantiateFail { reason: e.to_string(), max_feasible_k: None },
                }
            }
            Request::Cost { instance_id } => match self.owned(store, &app_id, &instance_id) {
                Err(r) => r,
                Ok(()) => match store.cost(&instance_id) {
                    Ok(report) => Response::CostReport { report },
                    Err(e) => Response::Error { reason: e.to_string() },
                },
            },
            Request::Teardown { instance_id } => match self.owned(store, &app_id, &instance_id) {
                Err(r) => r,
                Ok(()) => match store.teardown(&instance_id) {
                    Ok(_) => {
                        self.instances.remove(&instance_id);
                        Response::TeardownOk { instance_id }
                    }
                    Err(e) => Response::Error { reason: e.to_string() },
                },
            },
        }
    }

    fn owned(&self, store: &Store, app_id: &str, instance_id: &str) -> Result<(), Response> {
        match store.instance(instance_id) {
            Some(r) if r.app_id == app_id => Ok(()),
            _ => Err(Response::Error { reason: format!("unknown instance {instance_id}") }),
        }
    }

    /// Ends a session that was cut: its live instances are torn down.
    pub fn abort(&mut self, store: &mut Store, reason: &str) {
        store.log_action(self.actor(), format!("session aborted: {reason}"), Outcome::Error);
        for id in std::mem::take(&mut self.instances) {
            let _ = store.teardown(&id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmflash::flash_delivery_manifest;
    use crate::store::Decision;

    fn published_store() -> (Store, String) {
        let mut s = Store::in_memory();
        s.register_specialist("km-lab").unwrap();
        s.register_specialist("rev").unwrap();
        s.submit(flash_delivery_manifest()).unwrap();
        s.start_review("flash-delivery").unwrap();
        s.review("flash-delivery", Decision::Accept, "rev").unwrap();
        let token = s.purchase("demo", "flash-delivery").unwrap().token;
        (s, token)
    }

    fn inputs(k: u32) -> BTreeMap<String, String> {
        [
            ("endpointA", "A:5000".to_string()),
            ("endpointB", "B:5000".into()),
            ("K", k.to_string()),
            ("rate", "10".into()),
            ("max_latency", "5".into()),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b))
        .collect()
    }

    #[test]
    fn unknown_kind_and_malformed() {
        let (mut s, _) = published_store();
        let mut sess = Session::new("1");
        let r: Response = serde_json::from_str(&sess.handle_line(&mut s, r#"{"kind":"PAYLOAD","data":"x"}"#)).unwrap();
        assert!(matches!(r, Response::ProtocolError { .. }));
        let r: Response = serde_json::from_str(&sess.handle_line(&mut s, "not json")).unwrap();
        assert!(matches!(r, Response::ProtocolError { .. }));
        let r: Response =
            serde_json::from_str(&sess.handle_line(&mut s, r#"{"kind":"AUTH","token":"x","module_id":"y"}"#)).unwrap();
        assert_eq!(r, Response::ProtocolError { reason: "HELLO required first".into() });
    }

    #[test]
    fn full_handshake() {
        let (mut s, token) = published_store();
        let mut sess = Session::new("1");
        assert!(matches!(sess.handle(&mut s, Request::Hello { app_id: "demo".into() }), Response::HelloOk { .. }));
        let r = sess.handle(&mut s, Request::Instantiate { module_id: "flash-delivery".into(), inputs: inputs(2) });
        assert!(matches!(r, Response::InstantiateFail { .. }));
        let r = sess.handle(&mut s, Request::Auth { token, module_id: "flash-delivery".into() });
        assert_eq!(r, Response::AuthOk { module_id: "flash-delivery".into() });
        let Response::InstantiateOk { instance_id, allocation } =
            sess.handle(&mut s, Request::Instantiate { module_id: "flash-delivery".into(), inputs: inputs(2) })
        else {
            panic!()
        };
        assert_eq!(allocation.unwrap().paths.len(), 2);
        let r = sess.handle(&mut s, Request::Instantiate { module_id: "flash-delivery".into(), inputs: inputs(3) });
        assert_eq!(
            r,
            Response::InstantiateFail {
                reason: "allocation failed: only 2 disjoint paths".into(),
                max_feasible_k: Some(2)
            }
        );
        assert!(matches!(
            sess.handle(&mut s, Request::Cost { instance_id: instance_id.clone() }),
            Response::CostReport { .. }
        ));
        sess.abort(&mut s, "test");
        assert!(!s.instance(&instance_id).unwrap().is_live());
        assert!(s.central_view().is_empty());
    }

    #[test]
    fn deny_is_logged() {
        let (mut s, _) = published_store();
        let mut sess = Session::new("1");
        sess.handle(&mut s, Request::Hello { app_id: "demo".into() });
        let r = sess.handle(&mut s, Request::Auth { token: "bogus".into(), module_id: "flash-delivery".into() });
        assert!(matches!(r, Response::AuthDeny { .. }));
        let denies = s
            .read_log(&Default::default())
            .into_iter()
            .filter(|e| e.action.contains("token=bogus") && e.action.contains("deny"))
            .count();
        assert_eq!(denies, 1);
    }
}
