//! Minimax engines over loop families: mountain-pass with shrink
//! confinement, sweepout minimax on embedded spheres, per-class
//! minimization, the energy scan, and the barrier estimate that bounds
//! minimax levels away from zero.

mod barrier;
mod classmin;
mod pass;
mod sweep;
mod witness;

pub use barrier::{barrier, BarrierEstimate};
pub use classmin::{class_minimize, ClassMinBudget, ClassMinOutcome, DriftReport};
pub use pass::{
    mountain_pass, pass_family, struwe_scan, MountainPassProblem, PassBudget, StruweRow,
    StruweScan,
};
pub use sweep::{latitude_sweep, sweepout_minimax, SweepBudget};
pub use witness::{find_negative_action_loop, WitnessBudget};

use crate::gradientflow::PSRecord;
use crate::loopspace::Loop;
use crate::verify::{Method, OrbitCertificate};
use serde::{Deserialize, Serialize};

/// Stopping tolerances shared by the minimax drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxTols {
    pub gradient_tol: f64,
    /// Two node actions within this of each other count as tied.
    pub level_tol: f64,
}

impl Default for MinimaxTols {
    fn default() -> Self {
        MinimaxTols {
            gradient_tol: 1e-6,
            level_tol: 1e-9,
        }
    }
}

/// Outcome of one minimax run. `family_kind` tags which of the three
/// values the level estimates: c(k) for mountain-pass path families,
/// d(k) for sweepouts, e(k) for class minimization. Any numerical
/// level is an upper bound on the true inf-sup (the infimum ranges
/// over all families, ours over one deformed family).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxResult {
    pub family_kind: Method,
    pub k: f64,
    pub level: f64,
    pub argmax: Loop,
    pub ps: PSRecord,
    pub certificate: Option<OrbitCertificate>,
}
