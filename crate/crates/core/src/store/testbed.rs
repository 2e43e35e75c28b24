//! Testbed evaluation: a module's NSD runs in an isolated simulator against a
//! registered scenario and its declared metrics are sampled.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::Runtime;
use crate::kmflash::{collect_stats, mirror_send, ActivationOutcome, DeliveryStats};
use crate::moduledef::{ModuleState, IN_DEADLINE_RATIO, MEAN_LATENCY_MS};
use crate::netsim::{LatencyInjection, Network, Topology, TopologySpec};
use crate::time::SimTime;

use super::instance::{execute_nsd, teardown_owned};
use super::{MetricSample, Outcome, SampleSource, Store, StoreError};

/// A registered testbed setup: topology, module inputs, traffic and faults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub topology: TopologySpec,
    pub inputs: BTreeMap<String, String>,
    pub packet_count: u64,
    pub gap: SimTime,
    pub deadline: SimTime,
    pub packet_size: u32,
    pub injections: Vec<LatencyInjection>,
}

impl Scenario {
    /// The evaluation topology with 100 packets 1 ms apart, a 5 ms deadline
    /// and +10 ms on R4-B over [40, 60) ms.
    pub fn fig4() -> Scenario {
        let inputs =
            [("endpointA", "A:5000"), ("endpointB", "B:5000"), ("K", "2"), ("rate", "10"), ("max_latency", "5")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
        Scenario {
            name: "fig4".into(),
            topology: Topology::evaluation().to_spec(),
            inputs,
            packet_count: 100,
            gap: SimTime::from_millis(1),
            deadline: SimTime::from_millis(5),
            packet_size: 1000,
            injections: vec![LatencyInjection {
                link: "R4-B".into(),
                extra: SimTime::from_millis(10),
                start: SimTime::from_millis(40),
                end: SimTime::from_millis(60),
            }],
        }
    }
}

impl Store {
    pub fn scenarios(&self) -> impl Iterator<Item = &Scenario> {
        self.scenarios.values()
    }

    pub fn register_scenario(&mut self, scenario: Scenario) -> Result<(), StoreError> {
        Topology::build(&scenario.topology)
            .map_err(|e| StoreError::Invalid(vec![format!("scenario topology: {e}")]))?;
        self.scenarios.insert(scenario.name.clone(), scenario);
        Ok(())
    }

    /// Instantiates the module in a private simulator, drives the scenario's
    /// traffic, stores one testbed sample per declared metric and tears the
    /// instance down. An instantiation or allocation failure is recorded as
    /// samples without a value.
    pub fn run_testbed(&mut self, module_id: &str, scenario: &str) -> Result<Vec<MetricSample>, StoreError> {
        let r = self.try_testbed(module_id, scenario);
        self.record("testbed", format!("evaluate {module_id} on {scenario}"), r)
    }

    fn try_testbed(&mut self, module_id: &str, scenario: &str) -> Result<Vec<MetricSample>, StoreError> {
        let m = self.module(module_id).ok_or_else(|| StoreError::UnknownModule(module_id.into()))?.clone();
        if !matches!(m.state, ModuleState::InReview | ModuleState::Published) {
            return Err(StoreError::NotEvaluable { module: module_id.into(), state: m.state });
        }
        let sc = self.scenarios.get(scenario).ok_or_else(|| StoreError::UnknownScenario(scenario.into()))?.clone();
        let nsd = m.parsed_nsd(&self.library)?;
        let topology =
            Topology::build(&sc.topology).map_err(|e| StoreError::Invalid(vec![format!("scenario topology: {e}")]))?;
        let mut net = Network::new(topology);
        for inj in &sc.injections {
            net.inject_latency(inj.clone()).map_err(|e| StoreError::Invalid(vec![format!("scenario: {e}")]))?;
        }
        let net = net.shared();
        let mut rt = Runtime::new(net.clone(), self.library.clone());
        let env = rt.create_environment("testbed", format!("testbed {scenario}")).expect("fresh runtime");
        let owner = format!("testbed-{module_id}");
        let inputs: BTreeMap<String, String> =
            sc.inputs.iter().filter(|(k, _)| nsd.input(k).is_some()).map(|(k, v)| (k.clone(), v.clone())).collect();

        let stats = match execute_nsd(&mut rt, &env, &nsd, &inputs, &owner) {
            Ok(ex) => {
                let active = ex.outcomes.iter().find_map(|o| match o {
                    ActivationOutcome::Active(a) => Some(a.clone()),
                    ActivationOutcome::Failed(_) => None,
                });
                let failed = ex.outcomes.iter().any(|o| matches!(o, ActivationOutcome::Failed(_)));
                let stats = match active.filter(|_| !failed) {
                    Some(a) => {
                        let mut net = net.lock().unwrap_or_else(|p| p.into_inner());
                        drive(&mut net, &a.flow, &a.path_indices(), &sc)
                    }
                    None => None,
                };
                teardown_owned(&mut rt, &owner);
                stats
            }
            Err(e) => {
                self.log_action("testbed", format!("instantiate {module_id}: {e}"), Outcome::Error);
                None
            }
        };
        let now = self.now();
        let samples: Vec<MetricSample> = m
            .metric_ids
            .iter()
            .map(|metric_id| MetricSample {
                module_id: module_id.into(),
                metric_id: metric_id.clone(),
                value: stats.as_ref().and_then(|s| metric_value(metric_id, s)),
                ts: now,
                source: SampleSource::Testbed,
                scenario: scenario.into(),
            })
            .collect();
        self.state.samples.extend(samples.iter().cloned());
        Ok(samples)
    }
}

fn drive(net: &mut Network, flow: &crate::netsim::FlowId, paths: &[u32], sc: &Scenario) -> Option<DeliveryStats> {
    let start = net.now();
    let mut records = Vec::new();
    for seq in 0..sc.packet_count {
        net.advance_to(start + SimTime::from_nanos(sc.gap.as_nanos() * seq));
        records.extend(mirror_send(net, flow, paths, seq, sc.packet_size, sc.deadline).ok()?);
    }
    net.run_until_idle();
    Some(collect_stats(&records, sc.deadline))
}

fn metric_value(metric_id: &str, s: &DeliveryStats) -> Option<f64> {
    match metric_id {
        IN_DEADLINE_RATIO => Some(s.in_deadline_ratio),
        MEAN_LATENCY_MS => s.mean_latency_ms,
        _ => None,
    }
}
