use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, MutexGuard};

use crate::netsim::{Network, SharedNetwork};
use crate::time::SimTime;

use super::{
    Address, Agent, AgentError, AgentId, AgentKind, AgentSpec, AgentTypeLibrary, AgentView, EnvId, LifecycleState,
    Message, Payload, ResourceRef, RuntimeEvent,
};

struct Environment {
    concern: String,
    registry: BTreeSet<AgentId>,
}

struct Slot {
    env: EnvId,
    type_name: String,
    kind: AgentKind,
    state: LifecycleState,
    /// `None` while the agent is handling a message.
    agent: Option<Box<dyn Agent>>,
    resources: Vec<ResourceRef>,
    composed: Vec<AgentId>,
    owner: Option<String>,
    objective: String,
    actions: usize,
}

struct Envelope {
    id: u64,
    msg: Message,
    wants_reply: bool,
}

pub struct Runtime {
    network: SharedNetwork,
    library: Arc<AgentTypeLibrary>,
    envs: BTreeMap<EnvId, Environment>,
    agents: BTreeMap<AgentId, Slot>,
    destroyed: BTreeSet<AgentId>,
    queue: VecDeque<Envelope>,
    replies: BTreeMap<u64, Result<Payload, AgentError>>,
    store_inbox: Vec<Message>,
    bindings: BTreeMap<ResourceRef, BTreeSet<AgentId>>,
    events: Vec<RuntimeEvent>,
    next_agent: u64,
    next_msg: u64,
}

impl Runtime {
    pub fn new(network: SharedNetwork, library: Arc<AgentTypeLibrary>) -> Self {
        Runtime {
            network,
            library,
            envs: BTreeMap::new(),
            agents: BTreeMap::new(),
            destroyed: BTreeSet::new(),
            queue: VecDeque::new(),
            replies: BTreeMap::new(),
            store_inbox: Vec::new(),
            bindings: BTreeMap::new(),
            events: Vec::new(),
            next_agent: 1,
            next_msg: 1,
        }
    }

    pub fn library(&self) -> &AgentTypeLibrary {
        &self.library
    }

    pub fn network(&self) -> &SharedNetwork {
        &self.network
    }

    pub fn now(&self) -> SimTime {
        lock(&self.network).now()
    }

    pub fn create_environment(
        &mut self,
        id: impl Into<EnvId>,
        concern: impl Into<String>,
    ) -> Result<EnvId, AgentError> {
        let id = id.into();
        if self.envs.contains_key(&id) {
            return Err(AgentError::DuplicateEnvironment(id));
        }
        self.envs.insert(id.clone(), Environment { concern: concern.into(), registry: BTreeSet::new() });
        Ok(id)
    }

    pub fn environment_concern(&self, env: &EnvId) -> Option<&str> {
        self.envs.get(env).map(|e| e.concern.as_str())
    }

    pub fn spawn_agent(&mut self, env: &EnvId, spec: &AgentSpec) -> Result<AgentId, AgentError> {
        self.spawn_owned(env, spec, None)
    }

    /// Spawns an agent tagged with `owner` (for example a module instance id).
    pub fn spawn_owned(&mut self, env: &EnvId, spec: &AgentSpec, owner: Option<&str>) -> Result<AgentId, AgentError> {
        if !self.envs.contains_key(env) {
            return Err(AgentError::UnknownEnvironment(env.clone()));
        }
        let schema = self
            .library
            .schema(&spec.type_name)
            .ok_or_else(|| AgentError::UnknownType(spec.type_name.clone()))?
            .clone();
        let params = schema.validate(&spec.params)?;
        let factory = self.library.factory(&spec.type_name).expect("schema implies factory").clone();
        let mut agent = factory(&params)?;

        let id = AgentId(self.next_agent);
        self.next_agent += 1;
        self.agents.insert(
            id,
            Slot {
                env: env.clone(),
                type_name: spec.type_name.clone(),
                kind: schema.kind,
                state: LifecycleState::Created,
                agent: None,
                resources: Vec::new(),
                composed: Vec::new(),
                owner: owner.map(str::to_owned),
                objective: spec.objective.clone(),
                actions: 0,
            },
        );
        self.envs.get_mut(env).expect("checked").registry.insert(id);

        let started = {
            let mut ctx = AgentContext { rt: self, me: id };
            agent.on_start(&mut ctx)
        };
        let bound = match started {
            Ok(resources) => match (schema.kind, resources.is_empty()) {
                (AgentKind::Resource, true) => {
                    Err(AgentError::Binding(format!("{} bound no resources", spec.type_name)))
                }
                (AgentKind::Adapter, false) => {
                    Err(AgentError::Binding(format!("adapter {} may not bind resources", spec.type_name)))
                }
                _ => Ok(resources),
            },
            Err(e) => Err(e),
        };
        match bound {
            Ok(resources) => {
                for r in &resources {
                    self.bindings.entry(r.clone()).or_default().insert(id);
                }
                let slot = self.agents.get_mut(&id).expect("inserted");
                slot.resources = resources;
                slot.agent = Some(agent);
                slot.state = LifecycleState::Running;
                self.record(id, format!("spawn {}", spec.type_name), true);
                Ok(id)
            }
            Err(e) => {
                // Anything the agent composed during a failed start goes too.
                let composed = self.agents.get(&id).map(|s| s.composed.clone()).unwrap_or_default();
                for c in composed.into_iter().rev() {
                    let _ = self.destroy_agent(c);
                }
                self.agents.remove(&id);
                self.envs.get_mut(env).expect("checked").registry.remove(&id);
                self.destroyed.insert(id);
                self.push_event(id.to_string(), format!("spawn {} failed: {e}", spec.type_name), false);
                Err(e)
            }
        }
    }

    /// Destroys a live agent and returns the number of actions it logged
    /// (including this one). Unknown or already destroyed agents return 0.
    pub fn destroy_agent(&mut self, id: AgentId) -> Result<usize, AgentError> {
        let Some(slot) = self.agents.get_mut(&id) else {
            return Ok(0);
        };
        let Some(mut agent) = slot.agent.take() else {
            return Err(AgentError::Busy(id));
        };
        {
            let mut ctx = AgentContext { rt: self, me: id };
            agent.on_stop(&mut ctx);
        }
        let slot = self.agents.remove(&id).expect("present");
        if let Some(env) = self.envs.get_mut(&slot.env) {
            env.registry.remove(&id);
        }
        for r in &slot.resources {
            if let Some(holders) = self.bindings.get_mut(r) {
                holders.remove(&id);
                if holders.is_empty() {
                    self.bindings.remove(r);
                }
            }
        }
        let mut dropped = Vec::new();
        self.queue.retain(|e| {
            if e.msg.to == Address::Agent(id) {
                dropped.push((e.id, e.msg.from, e.msg.payload.kind.clone(), e.wants_reply));
                false
            } else {
                true
            }
        });
        for (mid, from, kind, wants_reply) in dropped {
            if wants_reply {
                self.replies.insert(mid, Err(AgentError::DestinationUnavailable(Address::Agent(id))));
            }
            self.push_event(id.to_string(), format!("dropped {kind} from {from}: destination destroyed"), false);
        }
        self.destroyed.insert(id);
        self.push_event(id.to_string(), format!("destroy {}", slot.type_name), true);
        Ok(slot.actions + 1)
    }

    /// Re-registers an agent in another environment, keeping its id.
    pub fn move_agent(&mut self, id: AgentId, to: &EnvId) -> Result<(), AgentError> {
        if !self.envs.contains_key(to) {
            return Err(AgentError::UnknownEnvironment(to.clone()));
        }
        let slot = self.agents.get_mut(&id).ok_or(AgentError::UnknownAgent(id))?;
        let from = std::mem::replace(&mut slot.env, to.clone());
        self.envs.get_mut(&from).expect("registered").registry.remove(&id);
        self.envs.get_mut(to).expect("checked").registry.insert(id);
        self.record(id, format!("move {from} -> {to}"), true);
        Ok(())
    }

    pub fn state(&self, id: AgentId) -> Option<LifecycleState> {
        if let Some(s) = self.agents.get(&id) {
            Some(s.state)
        } else if self.destroyed.contains(&id) {
            Some(LifecycleState::Destroyed)
        } else {
            None
        }
    }

    pub fn is_running(&self, id: AgentId) -> bool {
        self.state(id) == Some(LifecycleState::Running)
    }

    pub fn type_name(&self, id: AgentId) -> Option<&str> {
        self.agents.get(&id).map(|s| s.type_name.as_str())
    }

    pub fn kind(&self, id: AgentId) -> Option<AgentKind> {
        self.agents.get(&id).map(|s| s.kind)
    }

    pub fn composed(&self, id: AgentId) -> &[AgentId] {
        self.agents.get(&id).map(|s| s.composed.as_slice()).unwrap_or(&[])
    }

    pub fn owned_by(&self, owner: &str) -> Vec<AgentId> {
        self.agents.iter().filter(|(_, s)| s.owner.as_deref() == Some(owner)).map(|(id, _)| *id).collect()
    }

    pub fn holders(&self, resource: &ResourceRef) -> Vec<AgentId> {
        self.bindings.get(resource).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }

    pub fn central_view(&self, env: &EnvId) -> Result<Vec<AgentView>, AgentError> {
        let e = self.envs.get(env).ok_or_else(|| AgentError::UnknownEnvironment(env.clone()))?;
        Ok(e.registry
            .iter()
            .filter_map(|id| {
                let s = self.agents.get(id)?;
                (s.state == LifecycleState::Running).then(|| AgentView {
                    id: *id,
                    env: s.env.clone(),
                    kind: s.kind,
                    type_name: s.type_name.clone(),
                    state: s.state,
                    resources: s.resources.clone(),
                    composed: s.composed.clone(),
                    owner: s.owner.clone(),
                    objective: s.objective.clone(),
                })
            })
            .collect())
    }

    // ---- messaging -----------------------------------------------------

    /// Enqueues a message. Rejected when the destination is not running or
    /// does not accept the payload kind.
    pub fn send_message(&mut self, msg: Message) -> Result<u64, AgentError> {
        self.enqueue(msg, false)
    }

    fn enqueue(&mut self, mut msg: Message, wants_reply: bool) -> Result<u64, AgentError> {
        if let Address::Agent(from) = msg.from {
            if !self.is_running(from) {
                return Err(AgentError::UnknownAgent(from));
            }
        }
        msg.ts = self.now();
        let id = self.next_msg;
        self.next_msg += 1;
        match msg.to {
            Address::Store => {
                self.store_inbox.push(msg);
                Ok(id)
            }
            Address::Agent(to) => {
                let slot = self
                    .agents
                    .get(&to)
                    .filter(|s| s.state == LifecycleState::Running)
                    .ok_or(AgentError::DestinationUnavailable(msg.to))?;
                let schema = self.library.schema(&slot.type_name).expect("spawned from library");
                if !schema.accepts(&msg.payload.kind) {
                    return Err(AgentError::UnknownPayloadKind {
                        kind: msg.payload.kind.clone(),
                        type_name: slot.type_name.clone(),
                    });
                }
                self.queue.push_back(Envelope { id, msg, wants_reply });
                Ok(id)
            }
        }
    }

    /// Delivers queued messages until the queue is empty; returns the count.
    pub fn dispatch(&mut self) -> usize {
        let mut n = 0;
        while self.dispatch_one() {
            n += 1;
        }
        n
    }

    /// Delivers the oldest message whose destination is idle.
    fn dispatch_one(&mut self) -> bool {
        let Some(pos) = self.queue.iter().position(|e| match e.msg.to {
            Address::Agent(to) => self.agents.get(&to).is_some_and(|s| s.agent.is_some()),
            Address::Store => true,
        }) else {
            return false;
        };
        let env = self.queue.remove(pos).expect("position valid");
        let Address::Agent(to) = env.msg.to else { unreachable!("store messages bypass the queue") };
        let mut agent = self.agents.get_mut(&to).and_then(|s| s.agent.take()).expect("idle agent");
        let result = {
            let mut ctx = AgentContext { rt: self, me: to };
            agent.on_message(&env.msg, &mut ctx)
        };
        if let Some(slot) = self.agents.get_mut(&to) {
            slot.agent = Some(agent);
        }
        if let Err(e) = &result {
            self.push_event(to.to_string(), format!("handle {} failed: {e}", env.msg.payload.kind), false);
        }
        if env.wants_reply {
            self.replies.insert(env.id, result);
        }
        true
    }

    /// Sends a request and runs the bus until its reply is available.
    pub fn call(&mut self, from: Address, to: AgentId, payload: Payload) -> Result<Payload, AgentError> {
        let msg = Message { from, to: Address::Agent(to), payload, ts: SimTime::ZERO };
        let id = self.enqueue(msg, true)?;
        loop {
            if let Some(r) = self.replies.remove(&id) {
                return r;
            }
            if !self.dispatch_one() {
                self.queue.retain(|e| e.id != id);
                return Err(AgentError::Stalled);
            }
        }
    }

    pub fn take_store_inbox(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.store_inbox)
    }

    pub fn pending_messages(&self) -> usize {
        self.queue.len()
    }

    pub fn drain_events(&mut self) -> Vec<RuntimeEvent> {
        std::mem::take(&mut self.events)
    }

    fn record(&mut self, id: AgentId, action: String, ok: bool) {
        if let Some(s) = self.agents.get_mut(&id) {
            s.actions += 1;
        }
        self.push_event(id.to_string(), action, ok);
    }

    fn push_event(&mut self, actor: String, action: String, ok: bool) {
        let ts = self.now();
        self.events.push(RuntimeEvent { ts, actor, action, ok });
    }
}

fn lock(net: &SharedNetwork) -> MutexGuard<'_, Network> {
    net.lock().unwrap_or_else(|p| p.into_inner())
}

/// What an agent can do while handling a lifecycle hook or a message.
pub struct AgentContext<'a> {
    rt: &'a mut Runtime,
    me: AgentId,
}

impl AgentContext<'_> {
    pub fn id(&self) -> AgentId {
        self.me
    }

    pub fn env(&self) -> EnvId {
        self.rt.agents.get(&self.me).map(|s| s.env.clone()).expect("context agent is registered")
    }

    pub fn owner(&self) -> Option<String> {
        self.rt.agents.get(&self.me).and_then(|s| s.owner.clone())
    }

    pub fn now(&self) -> SimTime {
        self.rt.now()
    }

    /// Runs `f` with the simulator locked. Do not call other agents inside.
    pub fn with_network<R>(&self, f: impl FnOnce(&mut Network) -> R) -> R {
        f(&mut lock(&self.rt.network))
    }

    pub fn call(&mut self, to: AgentId, payload: Payload) -> Result<Payload, AgentError> {
        self.rt.call(Address::Agent(self.me), to, payload)
    }

    pub fn send(&mut self, to: Address, payload: Payload) -> Result<u64, AgentError> {
        let msg = Message { from: Address::Agent(self.me), to, payload, ts: SimTime::ZERO };
        self.rt.send_message(msg)
    }

    /// Spawns an agent composed by this one, in the same environment and
    /// owned by the same instance.
    pub fn spawn(&mut self, spec: &AgentSpec) -> Result<AgentId, AgentError> {
        let env = self.env();
        let owner = self.owner();
        let id = self.rt.spawn_owned(&env, spec, owner.as_deref())?;
        if let Some(s) = self.rt.agents.get_mut(&self.me) {
            s.composed.push(id);
        }
        Ok(id)
    }

    pub fn composed(&self) -> Vec<AgentId> {
        self.rt.composed(self.me).to_vec()
    }

    pub fn is_running(&self, id: AgentId) -> bool {
        self.rt.is_running(id)
    }

    pub fn log(&mut self, action: impl Into<String>, ok: bool) {
        self.rt.record(self.me, action.into(), ok);
    }
}
