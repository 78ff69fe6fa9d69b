use serde::{Deserialize, Serialize};

/// Summary statistics of a mask applied during one solver iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-iteration diagnostic record appended by the solver.
///
/// `objective` is only present when the shrinkage step has a closed-form
/// penalty (the l1 and l2,1 prox modes); mask modes have no explicit
/// objective function. `wall_seconds` is informational and excluded from
/// determinism comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: Option<f64>,
    pub demix_norm: f64,
    pub mask: Option<MaskStats>,
    pub wall_seconds: f64,
}
