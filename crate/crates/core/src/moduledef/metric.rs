use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// A Store performance metric a module promises to optimise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDef {
    pub metric_id: String,
    pub name: String,
    pub unit: String,
    pub direction: Direction,
}

impl MetricDef {
    pub fn new(metric_id: &str, name: &str, unit: &str, direction: Direction) -> Option<Self> {
        if metric_id.is_empty() || unit.trim().is_empty() {
            return None;
        }
        Some(MetricDef { metric_id: metric_id.into(), name: name.into(), unit: unit.into(), direction })
    }

    /// Maps a value so that larger is always better.
    pub fn oriented(&self, value: f64) -> f64 {
        match self.direction {
            Direction::HigherBetter => value,
            Direction::LowerBetter => -value,
        }
    }
}

pub const IN_DEADLINE_RATIO: &str = "in_deadline_ratio";
pub const MEAN_LATENCY_MS: &str = "mean_latency_ms";

pub fn in_deadline_ratio() -> MetricDef {
    MetricDef::new(IN_DEADLINE_RATIO, "In-deadline delivery ratio", "ratio", Direction::HigherBetter)
        .expect("valid metric")
}

pub fn mean_latency_ms() -> MetricDef {
    MetricDef::new(MEAN_LATENCY_MS, "Mean earliest-copy latency", "ms", Direction::LowerBetter).expect("valid metric")
}
