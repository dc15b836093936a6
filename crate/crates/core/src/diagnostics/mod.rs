//! Numerical checks of orthogonality, instrument relevance and convergence rates.

mod orthogonality;
mod rate;
mod relevance;

pub use orthogonality::{
    check_orthogonality, gateaux_derivative, probe_directions, score_at_truth, truth_nuisances, verdict, Derivative,
    DirectionKind, DirectionProbe, OrthogonalityConfig, OrthogonalityReport, ScoreKind, ScoreValidity, TruthNuisances,
    Verdict,
};
pub use rate::{fit_rate, fit_rate_with, RateFit, MIN_RUNS_PER_SIZE};
pub use relevance::{relevance_check, RelevanceReport};
