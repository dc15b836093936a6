//! Synthetic benchmarks with closed-form ground truth.
//!
//! Two generators are provided: the ticket-demand model (context `(t, s)`,
//! instrument fuel price `z`, action ticket price `p`, outcome sales `r`) and
//! a semi-synthetic model with uniform contexts and a discrete instrument.

mod demand;
mod io;
mod observation;
mod semisynth;

pub use demand::{generate_demand, psi_t, true_h0_demand, DemandConfig};
pub use io::{read_observations, write_observations, DatasetMetadata, METADATA_FORMAT};
pub use observation::{destandardize, Affine, Latent, ObservationSet, Scaling, TruthModel};
pub use semisynth::{generate_semisynth, semisynth_h0, SemiSynthConfig};
