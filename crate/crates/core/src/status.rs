use std::fmt;

use serde::{Deserialize, Serialize};

/// Outcome class of one closed-loop experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    /// Divergence guard fired; the run was interrupted and capped.
    Diverged,
    /// The candidate prediction model failed the stability screen.
    CappedUnstableModel,
    /// Completed, but at least one QP hit its iteration limit.
    SolverDegraded,
    /// The objective could not be evaluated at all (e.g. invalid model).
    Failed,
}

impl RunStatus {
    /// Whether the experiment ran to the end and its cost was measured.
    pub fn is_measured(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::SolverDegraded)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
            RunStatus::CappedUnstableModel => "capped-unstable-model",
            RunStatus::SolverDegraded => "solver-degraded",
            RunStatus::Failed => "failed",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
