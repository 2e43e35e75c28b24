//! Deadline experiment: 100 packets cross the evaluation network while one
//! link suffers a sharp latency spike. The baseline uses the default route;
//! the module run goes through a store and the device agent.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dsa::{ConnectOptions, Dsa, DsaConfig, LocalTransport, Mode};
use crate::endpoint::Endpoint;
use crate::kmflash::{collect_stats, flash_delivery_manifest, mirror_send, single_path_manifest, DeliveryStats};
use crate::netsim::{DeliveryRecord, FlowId, LatencyInjection, Network, NodeId, Topology};
use crate::store::cost::CostReport;
use crate::store::{Decision, Store, StoreConfig};
use crate::time::SimTime;

pub const BASELINE: &str = "baseline";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("experiment failed: {0}")]
    Run(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionConfig {
    pub link: String,
    pub extra_ms: f64,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Topology file; the evaluation topology when absent.
    pub topology: Option<PathBuf>,
    /// Module to run through the store, or `"baseline"`.
    pub module: String,
    pub src: String,
    pub dst: String,
    pub packet_count: u64,
    pub gap_ms: f64,
    pub deadline_ms: f64,
    pub packet_size: u32,
    pub k: u32,
    pub rate_mbps: f64,
    pub injection: Option<InjectionConfig>,
    pub seed: u64,
    /// Whether the application buys a license before connecting.
    pub purchase: bool,
    pub output: PathBuf,
    pub plot: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            topology: None,
            module: "flash-delivery".into(),
            src: "A".into(),
            dst: "B".into(),
            packet_count: 100,
            gap_ms: 1.0,
            deadline_ms: 5.0,
            packet_size: 1000,
            k: 2,
            rate_mbps: 10.0,
            injection: Some(InjectionConfig { link: "R4-B".into(), extra_ms: 10.0, start_ms: 40.0, end_ms: 60.0 }),
            seed: 42,
            purchase: true,
            output: PathBuf::from("experiment.csv"),
            plot: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Reads a config file. A relative topology path is taken from the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(t), Some(dir)) = (&cfg.topology, path.parent()) {
            if t.is_relative() {
                cfg.topology = Some(dir.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.packet_count < 1 {
            return bad("packet_count must be at least 1");
        }
        if !(self.deadline_ms.is_finite() && self.deadline_ms > 0.0) {
            return bad("deadline_ms must be positive");
        }
        if !(self.gap_ms.is_finite() && self.gap_ms >= 0.0) {
            return bad("gap_ms must be non-negative");
        }
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if !(self.rate_mbps.is_finite() && self.rate_mbps > 0.0) {
            return bad("rate_mbps must be positive");
        }
        if self.packet_size == 0 {
            return bad("packet_size must be positive");
        }
        if self.src == self.dst {
            return bad("src and dst must differ");
        }
        if let Some(inj) = &self.injection {
            if !(inj.extra_ms >= 0.0 && inj.start_ms >= 0.0 && inj.end_ms >= inj.start_ms) {
                return bad("injection needs extra_ms >= 0 and 0 <= start_ms <= end_ms");
            }
        }
        Ok(())
    }

    fn topology(&self) -> Result<Topology, ExperimentError> {
        match &self.topology {
            None => Ok(Topology::evaluation()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                Topology::parse(&text).map_err(|e| ExperimentError::Config(format!("topology: {e}")))
            }
        }
    }

    fn injection(&self, t0: SimTime) -> Option<LatencyInjection> {
        self.injection.as_ref().map(|i| LatencyInjection {
            link: i.link.as_str().into(),
            extra: SimTime::from_ms_f64(i.extra_ms),
            start: t0 + SimTime::from_ms_f64(i.start_ms),
            end: t0 + SimTime::from_ms_f64(i.end_ms),
        })
    }

    fn deadline(&self) -> SimTime {
        SimTime::from_ms_f64(self.deadline_ms)
    }

    fn send_time(&self, t0: SimTime, seq: u64) -> SimTime {
        t0 + SimTime::from_ms_f64(self.gap_ms * seq as f64)
    }
}

/// How the packets travelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Baseline,
    Module,
    Fallback,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunMode::Baseline => "baseline",
            RunMode::Module => "module",
            RunMode::Fallback => "fallback",
        })
    }
}

/// One CSV row: latency of the first two copies and the earliest of all.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub seq: u64,
    pub sent_at: SimTime,
    pub path0: Option<SimTime>,
    pub path1: Option<SimTime>,
    pub earliest: Option<SimTime>,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub label: String,
    pub mode: RunMode,
    pub failure_reason: Option<String>,
    pub deadline: SimTime,
    pub rows: Vec<Row>,
    pub summary: DeliveryStats,
    /// Payloads handed to the receiver after deduplication.
    pub received: u64,
    pub cost: Option<CostReport>,
}

pub const CSV_HEADER: [&str; 6] =
    ["seq", "sent_at_ms", "latency_path0_ms", "latency_path1_ms", "earliest_ms", "violated"];

/// Milliseconds with nanosecond resolution.
pub fn fmt_ms(t: SimTime) -> String {
    let ns = t.as_nanos();
    format!("{}.{:06}", ns / 1_000_000, ns % 1_000_000)
}

fn parse_ms(s: &str) -> Result<Option<SimTime>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    let (whole, frac) = s.split_once('.').unwrap_or((s, "0"));
    if frac.len() > 6 {
        return Err(format!("too many decimals in {s:?}"));
    }
    let whole: u64 = whole.parse().map_err(|_| format!("bad ms value {s:?}"))?;
    let frac: u64 = format!("{frac:0<6}").parse().map_err(|_| format!("bad ms value {s:?}"))?;
    Ok(Some(SimTime::from_nanos(whole * 1_000_000 + frac)))
}

fn rows_from_records(cfg: &ExperimentConfig, t0: SimTime, records: &[DeliveryRecord]) -> Vec<Row> {
    let deadline = cfg.deadline();
    (0..cfg.packet_count)
        .map(|seq| {
            let copies: Vec<&DeliveryRecord> = records.iter().filter(|r| r.seq == seq).collect();
            let lat = |i: u32| copies.iter().find(|r| r.path_index == i && r.delivered).and_then(|r| r.latency);
            let earliest = copies.iter().filter(|r| r.delivered).filter_map(|r| r.latency).min();
            Row {
                seq,
                sent_at: cfg.send_time(t0, seq) - t0,
                path0: lat(0),
                path1: lat(1),
                earliest,
                violated: earliest.is_some_and(|e| e > deadline),
            }
        })
        .collect()
}

/// Recomputes the summary from rows alone.
pub fn stats_from_rows(rows: &[Row], deadline: SimTime) -> DeliveryStats {
    let sent = rows.len() as u64;
    let delivered: Vec<SimTime> = rows.iter().filter_map(|r| r.earliest).collect();
    let delivered_unique = delivered.len() as u64;
    let in_deadline = delivered.iter().filter(|l| **l <= deadline).count() as u64;
    DeliveryStats {
        sent,
        delivered_unique,
        deadline_violations: delivered_unique - in_deadline,
        losses: sent - delivered_unique,
        in_deadline_ratio: if sent == 0 { 1.0 } else { in_deadline as f64 / sent as f64 },
        mean_latency_ms: (!delivered.is_empty())
            .then(|| delivered.iter().map(|l| l.as_ms()).sum::<f64>() / delivered.len() as f64),
    }
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        let opt = |t: Option<SimTime>| t.map(fmt_ms).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.seq.to_string(),
                fmt_ms(r.sent_at),
                opt(r.path0),
                opt(r.path1),
                opt(r.earliest),
                u8::from(r.violated).to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "run: {}", self.label);
        let _ = writeln!(out, "mode: {}", self.mode);
        if let Some(r) = &self.failure_reason {
            let _ = writeln!(out, "failure_reason: {r}");
        }
        let _ = writeln!(out, "packets: {}", s.sent);
        let _ = writeln!(out, "delivered: {}", s.delivered_unique);
        let _ = writeln!(out, "received: {}", self.received);
        let _ = writeln!(out, "losses: {}", s.losses);
        let _ = writeln!(out, "violations: {}", s.deadline_violations);
        let _ = writeln!(out, "in_deadline_ratio: {:.4}", s.in_deadline_ratio);
        match s.mean_latency_ms {
            Some(m) => {
                let _ = writeln!(out, "mean_latency_ms: {m:.6}");
            }
            None => {
                let _ = writeln!(out, "mean_latency_ms: -");
            }
        }
        if let Some(c) = &self.cost {
            let _ = writeln!(out, "cost: {:.6} (weighted {:.6})", c.raw_total, c.weighted_total);
        }
        out
    }

    /// Latency of each copy against send time, with the deadline marked.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (800.0, 400.0, 50.0);
        let t_max = self.rows.last().map_or(1.0, |r| r.sent_at.as_ms()).max(1.0);
        let l_max = self
            .rows
            .iter()
            .flat_map(|r| [r.path0, r.path1])
            .flatten()
            .map(|l| l.as_ms())
            .fold(self.deadline.as_ms(), f64::max)
            * 1.1;
        let x = |t: f64| pad + t / t_max * (w - 2.0 * pad);
        let y = |l: f64| h - pad - l / l_max * (h - 2.0 * pad);
        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<path d="M{pad} {pad} V{} H{}" stroke="black" fill="none"/>"#, h - pad, w - pad);
        let dy = y(self.deadline.as_ms());
        let _ = writeln!(
            svg,
            r#"<line x1="{pad}" y1="{dy:.2}" x2="{}" y2="{dy:.2}" stroke="red" stroke-dasharray="6 4"/>"#,
            w - pad
        );
        for (i, colour) in [(0, "steelblue"), (1, "darkorange")] {
            let pts: Vec<String> = self
                .rows
                .iter()
                .filter_map(|r| if i == 0 { r.path0 } else { r.path1 }.map(|l| (r.sent_at, l)))
                .map(|(t, l)| format!("{:.2},{:.2}", x(t.as_ms()), y(l.as_ms())))
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" stroke="{colour}" fill="none" stroke-width="1.5"/>"#,
                    pts.join(" ")
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{pad}" y="{}" font-size="14">{} ({}): latency (ms, max {:.1}) vs send time (ms, max {:.0})</text>"#,
            pad - 15.0,
            self.label,
            self.mode,
            l_max,
            t_max
        );
        svg.push_str("</svg>\n");
        svg
    }

    pub fn write_outputs(&self, csv_path: &Path, plot: Option<&Path>) -> Result<(), ExperimentError> {
        std::fs::write(csv_path, self.to_csv()).map_err(io_err(csv_path))?;
        if let Some(p) = plot {
            std::fs::write(p, self.to_svg()).map_err(io_err(p))?;
        }
        Ok(())
    }
}

/// Parses CSV produced by [`ExperimentReport::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<Row>, String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(CSV_HEADER) {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let field = |i: usize| rec.get(i).ok_or_else(|| format!("short row {rec:?}"));
        rows.push(Row {
            seq: field(0)?.parse().map_err(|_| format!("bad seq in {rec:?}"))?,
            sent_at: parse_ms(field(1)?)?.ok_or("missing sent_at")?,
            path0: parse_ms(field(2)?)?,
            path1: parse_ms(field(3)?)?,
            earliest: parse_ms(field(4)?)?,
            violated: match field(5)? {
                "0" => false,
                "1" => true,
                v => return Err(format!("bad violated flag {v:?}")),
            },
        });
    }
    Ok(rows)
}

/// Runs the configured experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let topology = cfg.topology()?;
    if cfg.module == BASELINE {
        run_baseline(cfg, topology)
    } else {
        run_module(cfg, topology)
    }
}

fn run_baseline(cfg: &ExperimentConfig, topology: Topology) -> Result<ExperimentReport, ExperimentError> {
    let mut net = Network::new(topology);
    let t0 = net.now();
    if let Some(inj) = cfg.injection(t0) {
        net.inject_latency(inj).map_err(|e| ExperimentError::Config(e.to_string()))?;
    }
    let flow = FlowId::new(cfg.src.as_str(), cfg.dst.as_str(), BASELINE);
    net.deploy_default_route(&flow).map_err(|e| ExperimentError::Run(e.to_string()))?;
    let mut records = Vec::new();
    for seq in 0..cfg.packet_count {
        net.advance_to(cfg.send_time(t0, seq));
        records.extend(
            mirror_send(&mut net, &flow, &[0], seq, cfg.packet_size, cfg.deadline())
                .map_err(|e| ExperimentError::Run(e.to_string()))?,
        );
    }
    net.run_until_idle();
    let received = net.take_arrivals(&flow).len() as u64;
    Ok(report(cfg, BASELINE.into(), RunMode::Baseline, None, t0, &records, received, None))
}

#[allow(clippy::too_many_arguments)]
fn report(
    cfg: &ExperimentConfig,
    label: String,
    mode: RunMode,
    failure_reason: Option<String>,
    t0: SimTime,
    records: &[DeliveryRecord],
    received: u64,
    cost: Option<CostReport>,
) -> ExperimentReport {
    ExperimentReport {
        label,
        mode,
        failure_reason,
        deadline: cfg.deadline(),
        rows: rows_from_records(cfg, t0, records),
        summary: collect_stats(records, cfg.deadline()),
        received,
        cost,
    }
}

const APP: &str = "experiment-app";
const REMOTE_ALIAS: &str = "Device_B";

/// A fresh in-memory store with the bundled modules published.
fn bootstrap_store(cfg: &ExperimentConfig, topology: Topology) -> Result<Store, ExperimentError> {
    let fail = |e: crate::store::StoreError| ExperimentError::Run(e.to_string());
    let mut store =
        Store::open(StoreConfig { topology, seed: Some(cfg.seed), ..StoreConfig::default() }).map_err(fail)?;
    store.register_specialist("experiment-reviewer").map_err(fail)?;
    for m in [flash_delivery_manifest(), single_path_manifest()] {
        if !store.is_specialist(&m.author) {
            store.register_specialist(&m.author).map_err(fail)?;
        }
        let id = store.submit(m).map_err(fail)?;
        store.start_review(&id).map_err(fail)?;
        store.review(&id, Decision::Accept, "experiment-reviewer").map_err(fail)?;
    }
    Ok(store)
}

fn run_module(cfg: &ExperimentConfig, topology: Topology) -> Result<ExperimentReport, ExperimentError> {
    let mut store = bootstrap_store(cfg, topology)?;
    if store.module(&cfg.module).is_none() {
        return Err(ExperimentError::Config(format!("unknown module {}", cfg.module)));
    }
    let token = if cfg.purchase {
        store.purchase(APP, &cfg.module).map_err(|e| ExperimentError::Run(e.to_string()))?.token
    } else {
        String::new()
    };
    let net = store.network().clone();
    let store = Arc::new(Mutex::new(store));
    let endpoints = |host: &str| -> Result<Vec<Endpoint>, ExperimentError> {
        Endpoint::new(NodeId::from(host), 5000, 0).map(|e| vec![e]).map_err(|e| ExperimentError::Config(e.to_string()))
    };
    let device = |name: &str, host: &str| -> Result<Dsa, ExperimentError> {
        let cfg = DsaConfig::new(APP, name, endpoints(host)?).with_fallback_host(REMOTE_ALIAS, cfg.dst.as_str());
        Dsa::new(cfg, Box::new(LocalTransport::new(store.clone())), net.clone())
            .map_err(|e| ExperimentError::Run(e.to_string()))
    };
    let mut receiver = device("device-b", &cfg.dst)?;
    receiver.bind(REMOTE_ALIAS).map_err(|e| ExperimentError::Run(e.to_string()))?;
    let mut sender = device("device-a", &cfg.src)?;
    let opts = ConnectOptions::new(cfg.k, cfg.rate_mbps, cfg.deadline_ms);
    let mut conn =
        sender.connect(REMOTE_ALIAS, &cfg.module, &token, &opts).map_err(|e| ExperimentError::Run(e.to_string()))?;

    let lock_net = || net.lock().unwrap_or_else(|p| p.into_inner());
    let t0 = lock_net().now();
    if let Some(inj) = cfg.injection(t0) {
        lock_net().inject_latency(inj).map_err(|e| ExperimentError::Config(e.to_string()))?;
    }
    let mut records = Vec::new();
    let mut received = 0u64;
    for seq in 0..cfg.packet_count {
        lock_net().advance_to(cfg.send_time(t0, seq));
        received += sender.recv(&mut conn).map_err(|e| ExperimentError::Run(e.to_string()))?.len() as u64;
        let payload = seq.to_be_bytes();
        records.extend(sender.send(&mut conn, &payload).map_err(|e| ExperimentError::Run(e.to_string()))?);
    }
    lock_net().run_until_idle();
    received += sender.recv(&mut conn).map_err(|e| ExperimentError::Run(e.to_string()))?.len() as u64;

    let cost = match conn.instance_id() {
        Some(id) => Some(crate::store::server::lock(&store).cost(id).map_err(|e| ExperimentError::Run(e.to_string()))?),
        None => None,
    };
    let (mode, reason) = match conn.mode() {
        Mode::Module => (RunMode::Module, None),
        Mode::Fallback => (RunMode::Fallback, conn.failure_reason().map(str::to_string)),
    };
    sender.close(&mut conn);
    Ok(report(cfg, cfg.module.clone(), mode, reason, t0, &records, received, cost))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_and_parse_ms_round_trip() {
        for ns in [0, 1, 999_999, 1_000_000, 12_000_001, 123_456_789_012] {
            let t = SimTime::from_nanos(ns);
            assert_eq!(parse_ms(&fmt_ms(t)).unwrap(), Some(t));
        }
        assert_eq!(fmt_ms(SimTime::from_millis(2)), "2.000000");
        assert_eq!(parse_ms("").unwrap(), None);
        assert!(parse_ms("1.0000001").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let zero = ExperimentConfig { packet_count: 0, ..ExperimentConfig::default() };
        assert!(matches!(zero.validate(), Err(ExperimentError::Config(_))));
        let dl = ExperimentConfig { deadline_ms: 0.0, ..ExperimentConfig::default() };
        assert!(dl.validate().is_err());
        assert!(ExperimentConfig::from_toml("packets = 3").is_err());
        let cfg = ExperimentConfig::from_toml("module = \"baseline\"\npacket_count = 3").unwrap();
        assert_eq!(cfg.packet_count, 3);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn baseline_sees_spike() {
        let r = run(&ExperimentConfig { module: BASELINE.into(), ..ExperimentConfig::default() }).unwrap();
        assert_eq!(r.summary.deadline_violations, 20);
        assert_eq!(r.summary.losses, 0);
        assert_eq!(r.rows[0].path0, Some(SimTime::from_millis(2)));
        assert_eq!(r.rows[39].path0, Some(SimTime::from_millis(12)));
        assert!(r.rows.iter().all(|row| row.path1.is_none()));
    }

    #[test]
    fn module_run_meets_deadline() {
        let r = run(&ExperimentConfig::default()).unwrap();
        assert_eq!(r.mode, RunMode::Module);
        assert_eq!(r.summary.losses, 0);
        assert_eq!(r.summary.deadline_violations, 0);
        assert_eq!(r.received, 100);
        assert!(r.cost.as_ref().unwrap().raw_total > 0.0);
    }

    #[test]
    fn unpurchased_module_falls_back() {
        let r = run(&ExperimentConfig { purchase: false, ..ExperimentConfig::default() }).unwrap();
        assert_eq!(r.mode, RunMode::Fallback);
        assert!(r.failure_reason.as_deref().unwrap().starts_with("authorization denied"));
        assert_eq!(r.summary.deadline_violations, 20);
        assert!(r.summary_text().contains("mode: fallback"));
    }

    #[test]
    fn csv_round_trips_and_svg_renders() {
        let r = run(&ExperimentConfig::default()).unwrap();
        let rows = parse_csv(&r.to_csv()).unwrap();
        assert_eq!(rows, r.rows);
        assert_eq!(stats_from_rows(&rows, r.deadline), r.summary);
        let svg = r.to_svg();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }
}
