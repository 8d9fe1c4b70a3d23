//! Barenblatt solutions of the Leibenson equation `∂ₜu = Δₚ(u^q)`, the
//! explicit coefficients of the associated McKean–Vlasov SDE, a
//! deterministic parallel particle engine, and numerical verification of the
//! identities connecting them.

pub mod error;
pub mod field;
pub mod io;
pub mod maximal;
pub mod params;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{LeibensonError, Result};
pub use field::{CoefficientFrame, FieldEvaluator, RadialLaw};
pub use params::{classify_regime, derive_constants, LeibensonParams, RegimeReport};
pub use quad::QuadratureResult;
pub use sde::{init_ensemble, simulate, simulate_coupled, step, CouplingDiagnostic, ParticleEnsemble, SDEConfig};
pub use stats::{ks_radial, moment2_rel_err, support_violation, Thresholds, VerificationReport};
