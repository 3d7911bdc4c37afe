//! Counterfactual estimation for single-treated-unit panels: synthetic
//! control with nested V selection, permutation placebo inference, and a
//! generalized synthetic control estimator with interactive fixed effects.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dgp;
pub mod gsc;
pub mod magnitude;
pub mod panel;
pub mod placebo;
pub mod rng;
pub mod scm;
pub mod stats;
pub mod transform;

pub use dgp::{simulate_convex_panel, simulate_factor_panel, DgpMode, DgpSpec, SimulatedPanel};
pub use gsc::{gsc_fit, BootstrapConfig, FactorCount, GscFit};
pub use magnitude::{translate_magnitude, Magnitude, MagnitudeInput};
pub use panel::{build_panel, load_long_csv, BalancedPanel, PanelObservation, TreatmentAssignment};
pub use placebo::{classify_persistence, in_space, EffectSummary, PlaceboDistribution, Verdict};
pub use scm::{fit, FitOptions, ScmFit};
