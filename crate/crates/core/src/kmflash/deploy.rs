use serde::{Deserialize, Serialize};

use crate::netsim::{FlowId, Network, SimError, TopologySnapshot};

use super::alloc::{allocate_disjoint_paths, AllocError, AllocRequest, AllocationFailure, PathSet};

/// Mirror paths installed for one flow: path `i` of `paths` is deployed at
/// path index `i`, each with its own bandwidth reservation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub flow: FlowId,
    pub paths: PathSet,
    pub reservations: Vec<u64>,
    pub rules: usize,
}

impl Deployment {
    pub fn path_indices(&self) -> Vec<u32> {
        (0..self.paths.len() as u32).collect()
    }

    /// Retracts every path and releases every reservation; idempotent.
    pub fn undo(&self, net: &mut Network) {
        for i in self.path_indices() {
            net.retract_path(&self.flow, i);
        }
        for r in &self.reservations {
            let _ = net.release(*r);
        }
    }
}

/// Installs one path per index and reserves `rate_mbps` along each. All or
/// nothing: a failure leaves the network as it was.
pub fn deploy_mirror_paths(
    net: &mut Network,
    flow: &FlowId,
    set: &PathSet,
    rate_mbps: f64,
) -> Result<Deployment, SimError> {
    if set.is_empty() {
        return Err(SimError::EmptyPath);
    }
    let mut d = Deployment { flow: flow.clone(), paths: set.clone(), reservations: Vec::new(), rules: 0 };
    for (i, p) in set.paths.iter().enumerate() {
        match net.deploy_path(flow, i as u32, &p.links) {
            Ok(n) => d.rules += n,
            Err(e) => {
                d.undo(net);
                return Err(e);
            }
        }
    }
    for p in &set.paths {
        match net.reserve(&p.links, rate_mbps) {
            Ok(r) => d.reservations.push(r),
            Err(e) => {
                d.undo(net);
                return Err(e);
            }
        }
    }
    Ok(d)
}

/// Where allocation reads state and where deployment lands.
pub trait Controller {
    fn snapshot(&mut self) -> TopologySnapshot;
    fn deploy(&mut self, flow: &FlowId, set: &PathSet, rate_mbps: f64) -> Result<Deployment, SimError>;
}

impl Controller for Network {
    fn snapshot(&mut self) -> TopologySnapshot {
        Network::snapshot(self)
    }

    fn deploy(&mut self, flow: &FlowId, set: &PathSet, rate_mbps: f64) -> Result<Deployment, SimError> {
        deploy_mirror_paths(self, flow, set, rate_mbps)
    }
}

/// Allocates on `snapshot` (or a fresh one) and deploys. A deployment
/// conflict, typically from a stale snapshot, is retried once with a fresh
/// snapshot before being reported as an allocation failure.
pub fn allocate_and_deploy(
    ctrl: &mut impl Controller,
    snapshot: Option<TopologySnapshot>,
    req: &AllocRequest,
    flow: &FlowId,
) -> Result<Deployment, AllocError> {
    let mut snap = snapshot.unwrap_or_else(|| ctrl.snapshot());
    let mut last = None;
    for _ in 0..2 {
        let set = allocate_disjoint_paths(&snap, req)?;
        match ctrl.deploy(flow, &set, req.rate_mbps) {
            Ok(d) => return Ok(d),
            Err(e) => last = Some(e),
        }
        snap = ctrl.snapshot();
    }
    let e = last.expect("two failed attempts");
    Err(AllocError::Infeasible(AllocationFailure { reason: format!("deployment conflict: {e}"), max_feasible_k: 0 }))
}
