//! Operational expenditure: resource registrations priced by a rate card and
//! summarised through a configurable weight function.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceClass {
    /// Reserved link bandwidth, billed per Mbps·s.
    LinkReservation,
    /// Switch flow-table entries, billed per rule·s.
    SwitchRule,
}

impl ResourceClass {
    pub fn unit(self) -> &'static str {
        match self {
            ResourceClass::LinkReservation => "Mbps*s",
            ResourceClass::SwitchRule => "rule*s",
        }
    }
}

impl fmt::Display for ResourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResourceClass::LinkReservation => "link_reservation",
            ResourceClass::SwitchRule => "switch_rule",
        })
    }
}

/// An instance registered as a user of one provider resource.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub resource: String,
    pub class: ResourceClass,
    /// Mbps for link reservations, rule count for switch rules.
    pub rate: f64,
    pub opened_at: SimTime,
    pub closed_at: Option<SimTime>,
}

impl Registration {
    pub fn active_duration(&self, now: SimTime) -> SimTime {
        self.closed_at.unwrap_or(now).min(now.max(self.opened_at)).saturating_sub(self.opened_at)
    }

    pub fn quantity(&self, now: SimTime) -> f64 {
        self.rate * self.active_duration(now).as_secs()
    }

    pub fn close(&mut self, at: SimTime) {
        if self.closed_at.is_none() {
            self.closed_at = Some(at.max(self.opened_at));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCard {
    pub link_mbps_s: f64,
    pub switch_rule_s: f64,
}

impl Default for RateCard {
    fn default() -> Self {
        RateCard { link_mbps_s: 0.001, switch_rule_s: 0.0001 }
    }
}

impl RateCard {
    pub fn unit_price(&self, class: ResourceClass) -> f64 {
        match class {
            ResourceClass::LinkReservation => self.link_mbps_s,
            ResourceClass::SwitchRule => self.switch_rule_s,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFn {
    #[default]
    Identity,
    Scale {
        factor: f64,
    },
    PerClass {
        weights: BTreeMap<ResourceClass, f64>,
    },
}

impl WeightFn {
    pub fn apply(&self, lines: &[UsageLine]) -> f64 {
        match self {
            WeightFn::Identity => lines.iter().map(UsageLine::amount).sum(),
            WeightFn::Scale { factor } => factor * lines.iter().map(UsageLine::amount).sum::<f64>(),
            WeightFn::PerClass { weights } => {
                lines.iter().map(|l| weights.get(&l.class).copied().unwrap_or(1.0) * l.amount()).sum()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageLine {
    pub resource: String,
    pub class: ResourceClass,
    pub quantity: f64,
    pub unit: String,
    pub unit_price: f64,
}

impl UsageLine {
    pub fn amount(&self) -> f64 {
        self.quantity * self.unit_price
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub instance_id: String,
    pub at: SimTime,
    pub usage: Vec<UsageLine>,
    pub raw_total: f64,
    pub weighted_total: f64,
}

pub fn cost_report(
    instance_id: &str,
    registrations: &[Registration],
    now: SimTime,
    card: &RateCard,
    weight: &WeightFn,
) -> CostReport {
    let usage: Vec<UsageLine> = registrations
        .iter()
        .map(|r| UsageLine {
            resource: r.resource.clone(),
            class: r.class,
            quantity: r.quantity(now),
            unit: r.class.unit().to_string(),
            unit_price: card.unit_price(r.class),
        })
        .collect();
    let raw_total = usage.iter().map(UsageLine::amount).sum();
    let weighted_total = weight.apply(&usage).max(0.0);
    CostReport { instance_id: instance_id.to_string(), at: now, usage, raw_total, weighted_total }
}
