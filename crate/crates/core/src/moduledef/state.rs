use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleState {
    Submitted,
    InReview,
    RevisionRequested,
    Published,
    Retired,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("illegal transition {from} -> {to}")]
pub struct IllegalTransition {
    pub from: ModuleState,
    pub to: ModuleState,
}

impl ModuleState {
    pub const ALL: [ModuleState; 5] = [
        ModuleState::Submitted,
        ModuleState::InReview,
        ModuleState::RevisionRequested,
        ModuleState::Published,
        ModuleState::Retired,
    ];

    pub fn can_transition(self, to: ModuleState) -> bool {
        use ModuleState::*;
        matches!(
            (self, to),
            (Submitted, InReview)
                | (InReview, RevisionRequested)
                | (InReview, Published)
                | (RevisionRequested, InReview)
                | (Published, Retired)
        )
    }

    pub fn transition(self, to: ModuleState) -> Result<ModuleState, IllegalTransition> {
        if self.can_transition(to) {
            Ok(to)
        } else {
            Err(IllegalTransition { from: self, to })
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleState::Submitted => "submitted",
            ModuleState::InReview => "in_review",
            ModuleState::RevisionRequested => "revision_requested",
            ModuleState::Published => "published",
            ModuleState::Retired => "retired",
        }
    }
}

impl fmt::Display for ModuleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_five_legal_transitions() {
        let legal: Vec<_> = ModuleState::ALL
            .iter()
            .flat_map(|a| ModuleState::ALL.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a.can_transition(*b))
            .collect();
        assert_eq!(legal.len(), 5);
        assert!(ModuleState::Submitted.transition(ModuleState::Published).is_err());
        assert_eq!(
            ModuleState::Submitted.transition(ModuleState::Published).unwrap_err().to_string(),
            "illegal transition submitted -> published"
        );
    }
}
