//! NSD execution and instance teardown.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{Address, AgentId, AgentKind, AgentSpec, EnvId, Payload, Runtime};
use crate::kmflash::ActivationOutcome;
use crate::moduledef::{Nsd, ParamBinding};

use super::{Authorization, InstanceRecord, Outcome, Store, StoreError};

/// An agent created for one NSD directive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnedAgent {
    pub directive: String,
    pub agent: AgentId,
    pub type_name: String,
}

#[derive(Debug)]
pub(crate) struct Executed {
    pub agents: Vec<SpawnedAgent>,
    pub outcomes: Vec<ActivationOutcome>,
}

/// Checks that `inputs` cover the NSD's formal inputs with well-typed values.
pub(crate) fn check_inputs(nsd: &Nsd, inputs: &BTreeMap<String, String>) -> Result<(), StoreError> {
    for formal in &nsd.inputs {
        let raw = inputs.get(&formal.name).ok_or_else(|| StoreError::MissingInput(formal.name.clone()))?;
        formal
            .semantic_type
            .parse_value(raw)
            .map_err(|reason| StoreError::InvalidInput { name: formal.name.clone(), reason })?;
    }
    Ok(())
}

/// Spawns every directive in wiring order under `owner`, then activates the
/// agents that accept `activate`. Any failure destroys everything spawned.
pub(crate) fn execute_nsd(
    rt: &mut Runtime,
    env: &EnvId,
    nsd: &Nsd,
    inputs: &BTreeMap<String, String>,
    owner: &str,
) -> Result<Executed, StoreError> {
    check_inputs(nsd, inputs)?;
    let order = nsd.instantiation_order()?;
    let mut agents = Vec::new();
    for i in order {
        let d = &nsd.directives[i];
        let mut spec = AgentSpec::new(d.type_name.clone());
        spec.objective = format!("directive {}", d.id);
        for (name, binding) in &d.params {
            let value = match binding {
                ParamBinding::Literal(v) => v.clone(),
                ParamBinding::Input(n) => inputs[n].clone(),
            };
            spec.params.insert(name.clone(), value);
        }
        match rt.spawn_owned(env, &spec, Some(owner)) {
            Ok(id) => agents.push(SpawnedAgent { directive: d.id.clone(), agent: id, type_name: d.type_name.clone() }),
            Err(source) => {
                teardown_owned(rt, owner);
                return Err(StoreError::Spawn { directive: d.id.clone(), source });
            }
        }
    }
    let mut outcomes = Vec::new();
    for a in &agents {
        let accepts = rt.library().schema(&a.type_name).is_some_and(|s| s.accepts("activate"));
        if !accepts {
            continue;
        }
        let reply = rt
            .call(Address::Store, a.agent, Payload::empty("activate"))
            .and_then(|p| ActivationOutcome::from_payload(&p));
        match reply {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                teardown_owned(rt, owner);
                return Err(StoreError::Activation(e));
            }
        }
    }
    Ok(Executed { agents, outcomes })
}

/// Destroys every agent owned by `owner`: adapters first, then resource
/// agents in reverse creation order. Returns how many were destroyed.
pub(crate) fn teardown_owned(rt: &mut Runtime, owner: &str) -> usize {
    let ids = rt.owned_by(owner);
    let (adapters, resources): (Vec<AgentId>, Vec<AgentId>) =
        ids.into_iter().partition(|id| rt.kind(*id) == Some(AgentKind::Adapter));
    let mut n = 0;
    for id in adapters.into_iter().chain(resources.into_iter().rev()) {
        if matches!(rt.destroy_agent(id), Ok(k) if k > 0) {
            n += 1;
        }
    }
    n
}

impl Store {
    /// Executes a module's NSD for an authorized caller. Allocation failures
    /// reported by adapters do not fail the call; they are carried in the
    /// returned record.
    pub fn instantiate(
        &mut self,
        auth: &Authorization,
        inputs: &BTreeMap<String, String>,
    ) -> Result<InstanceRecord, StoreError> {
        let actor = format!("app:{}", auth.app_id());
        let module_id = auth.module_id().to_string();
        let r = self.try_instantiate(auth, inputs);
        let action = match &r {
            Ok(rec) => format!("instantiate {module_id} as {}", rec.instance_id),
            Err(_) => format!("instantiate {module_id}"),
        };
        let r = self.record(&actor, action, r);
        if let Ok(InstanceRecord { instance_id, failure: Some(f), .. }) = &r {
            self.log_action(&actor, format!("instantiate {module_id} as {instance_id}: {f}"), Outcome::Error);
        }
        r
    }

    fn try_instantiate(
        &mut self,
        auth: &Authorization,
        inputs: &BTreeMap<String, String>,
    ) -> Result<InstanceRecord, StoreError> {
        // The license may have been revoked since the proof was issued.
        self.license_for(auth.token(), auth.module_id()).map_err(StoreError::Denied)?;
        let manifest =
            self.module(auth.module_id()).ok_or_else(|| StoreError::UnknownModule(auth.module_id().into()))?.clone();
        let nsd = manifest.parsed_nsd(&self.library)?;
        let instance_id = format!("inst-{}", self.state.next_instance);
        self.state.next_instance += 1;
        let started_at = self.now();
        let env = self.env.clone();
        let executed = execute_nsd(&mut self.runtime, &env, &nsd, inputs, &instance_id)?;
        let mut rec = InstanceRecord {
            instance_id: instance_id.clone(),
            module_id: manifest.module_id.clone(),
            app_id: auth.app_id().into(),
            inputs: inputs.clone(),
            agents: executed.agents,
            started_at,
            torn_down_at: None,
            registrations: Vec::new(),
            activation: None,
            failure: None,
        };
        for o in executed.outcomes {
            match o {
                ActivationOutcome::Active(a) => {
                    rec.registrations.extend(a.registrations.iter().cloned());
                    rec.activation.get_or_insert(a);
                }
                ActivationOutcome::Failed(f) => {
                    rec.failure.get_or_insert(f);
                }
            }
        }
        self.state.instances.insert(instance_id, rec.clone());
        Ok(rec)
    }

    /// Destroys an instance's agents and closes its registrations.
    /// Idempotent: a second call destroys nothing.
    pub fn teardown(&mut self, instance_id: &str) -> Result<usize, StoreError> {
        if !self.state.instances.contains_key(instance_id) {
            return Err(StoreError::UnknownInstance(instance_id.into()));
        }
        let destroyed = teardown_owned(&mut self.runtime, instance_id);
        let now = self.now();
        let rec = self.state.instances.get_mut(instance_id).expect("checked");
        let first = rec.torn_down_at.is_none();
        if first {
            rec.torn_down_at = Some(now);
            for reg in &mut rec.registrations {
                reg.close(now);
            }
        }
        if first {
            self.log_action(instance_id, format!("teardown ({destroyed} agents)"), Outcome::Ok);
        }
        self.persist()?;
        Ok(destroyed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::LifecycleState;
    use crate::moduledef::parse_nsd;
    use crate::netsim::{Network, Topology};
    use crate::store::standard_library;
    use std::sync::Arc;

    fn rt() -> (Runtime, EnvId) {
        let mut rt = Runtime::new(Network::new(Topology::evaluation()).shared(), Arc::new(standard_library()));
        let env = rt.create_environment("t", "test").unwrap();
        (rt, env)
    }

    #[test]
    fn failed_spawn_rolls_back() {
        let (mut rt, env) = rt();
        let lib = standard_library();
        let nsd = parse_nsd(
            r#"<nsd>
                <agent id="ok" type="LinkAgent"><param name="link" value="R4-B"/></agent>
                <agent id="bad" type="SwitchAgent"><param name="switch" value="A"/></agent>
            </nsd>"#,
            &lib,
        )
        .unwrap();
        let err = execute_nsd(&mut rt, &env, &nsd, &BTreeMap::new(), "x").unwrap_err();
        assert!(matches!(err, StoreError::Spawn { ref directive, .. } if directive == "bad"));
        assert!(rt.central_view(&env).unwrap().is_empty());
        assert!(rt.owned_by("x").is_empty());
        assert_eq!(rt.state(AgentId(1)), Some(LifecycleState::Destroyed));
    }

    #[test]
    fn wiring_order_spawns_targets_first() {
        let (mut rt, env) = rt();
        let nsd = parse_nsd(
            r#"<nsd>
                <agent id="a" type="LinkAgent"><param name="link" value="R4-B"/></agent>
                <agent id="b" type="LinkAgent"><param name="link" value="R5-B"/></agent>
                <wire from="a" to="b"/>
            </nsd>"#,
            &standard_library(),
        )
        .unwrap();
        let ex = execute_nsd(&mut rt, &env, &nsd, &BTreeMap::new(), "x").unwrap();
        let order: Vec<&str> = ex.agents.iter().map(|a| a.directive.as_str()).collect();
        assert_eq!(order, ["b", "a"]);
        assert_eq!(teardown_owned(&mut rt, "x"), 2);
        assert_eq!(teardown_owned(&mut rt, "x"), 0);
    }

    #[test]
    fn missing_and_bad_inputs() {
        let nsd = parse_nsd(crate::kmflash::FLASH_DELIVERY_NSD, &standard_library()).unwrap();
        let mut inputs: BTreeMap<String, String> =
            [("endpointA", "A:5000"), ("endpointB", "B:5000"), ("rate", "10"), ("max_latency", "5")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
        assert_eq!(check_inputs(&nsd, &inputs).unwrap_err().to_string(), "missing input K");
        inputs.insert("K".into(), "two".into());
        assert!(matches!(check_inputs(&nsd, &inputs), Err(StoreError::InvalidInput { .. })));
    }
}
