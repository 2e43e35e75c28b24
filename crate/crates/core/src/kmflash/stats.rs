use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::netsim::{DeliveryRecord, FlowId, Network, Packet, SimError};
use crate::time::SimTime;

/// Sends one copy of `seq` on every path index, all stamped with the current
/// simulated time. There are no acknowledgements or retransmissions.
pub fn mirror_send(
    net: &mut Network,
    flow: &FlowId,
    paths: &[u32],
    seq: u64,
    size: u32,
    deadline: SimTime,
) -> Result<Vec<DeliveryRecord>, SimError> {
    if paths.is_empty() {
        return Err(SimError::EmptyPath);
    }
    let now = net.now();
    paths
        .iter()
        .map(|&path_index| {
            net.send_packet(Packet { flow: flow.clone(), seq, size, sent_at: now, deadline, path_index })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeliveryStats {
    pub sent: u64,
    pub delivered_unique: u64,
    pub deadline_violations: u64,
    pub losses: u64,
    pub in_deadline_ratio: f64,
    /// Mean earliest-copy latency over delivered sequences.
    pub mean_latency_ms: Option<f64>,
}

/// Per-sequence view of mirrored records: a sequence counts as sent once,
/// is delivered if any copy arrived, and meets the deadline iff its earliest
/// copy's latency is within `deadline`. Zero sends give a ratio of 1.0.
pub fn collect_stats(records: &[DeliveryRecord], deadline: SimTime) -> DeliveryStats {
    let mut earliest: BTreeMap<u64, Option<SimTime>> = BTreeMap::new();
    for r in records {
        let e = earliest.entry(r.seq).or_insert(None);
        if let Some(l) = r.latency.filter(|_| r.delivered) {
            *e = Some(e.map_or(l, |cur| cur.min(l)));
        }
    }
    let sent = earliest.len() as u64;
    let delivered: Vec<SimTime> = earliest.values().filter_map(|e| *e).collect();
    let delivered_unique = delivered.len() as u64;
    let in_deadline = delivered.iter().filter(|l| **l <= deadline).count() as u64;
    let mean_latency_ms =
        (!delivered.is_empty()).then(|| delivered.iter().map(|l| l.as_ms()).sum::<f64>() / delivered.len() as f64);
    DeliveryStats {
        sent,
        delivered_unique,
        deadline_violations: delivered_unique - in_deadline,
        losses: sent - delivered_unique,
        in_deadline_ratio: if sent == 0 { 1.0 } else { in_deadline as f64 / sent as f64 },
        mean_latency_ms,
    }
}
