//! Robust, data-efficient CUSUM change detection.
//!
//! The crate detects a shift from a known pre-change law `f` to an unknown
//! post-change law that belongs to a family with a least favorable law (LFL)
//! `ḡ`. The central detector is the RDE-CUSUM statistic: a CUSUM on
//! `log ḡ(X)/f(X)` that is allowed to fall to `-h`, and that skips
//! observations while it climbs back to zero in steps of `μ`. Skipping saves
//! observation cost before the change while leaving false alarm control
//! untouched.
//!
//! Modules:
//!
//! - [`distributions`]: Gaussian (unit variance) and Poisson laws, closed-form
//!   log-likelihood ratios, KL divergences, LFL construction and an empirical
//!   stochastic-dominance check.
//! - [`detectors`]: the streaming RDE-CUSUM / robust CUSUM / fractional
//!   sampling state machines with a two-phase `next_action` / `update` API.
//! - [`design`]: maps a false alarm budget `α` and a duty-cycle budget `β`
//!   to `(A, μ)`.
//! - [`evaluation`]: seeded, parallel Monte-Carlo estimators of FAR, PDC and
//!   WADD plus threshold calibration and operating-characteristic sweeps.
//! - [`series`]: CSV ingestion and Poisson noise injection for count series.
//!
//! The math is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`). The Monte-Carlo harness runs in `f64`. Concrete aliases
//! for both precisions live at the crate root.

pub mod design;
pub mod detectors;
pub mod distributions;
mod error;
pub mod evaluation;
pub mod rng;
mod scalar;
pub mod series;
pub mod stats;

pub use design::{
    estimate_appendix_constants, estimate_ladder_walk, mu_asymptotic, mu_for_pdc,
    threshold_for_far, wadd_lower_bound, wadd_upper_bound_first_order, AppendixConstants,
    DesignConstraints, LadderWalkStats,
};
pub use detectors::{
    classical_cusum_path, run_detector, run_detector_with, Action, Detector, DetectorKind, DetectorState,
    PolicyParams, StepOutcome, Trajectory,
};
pub use distributions::{
    check_lfl_dominance, kl_divergence, lfl_of_family, log_likelihood_ratio, DistributionKind,
    DistributionSpec, DominanceReport, LlrSample, LlrSource, PostChangeFamily, Sampler,
};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision law.
pub type Law64 = DistributionSpec<f64>;
/// Single-precision law.
pub type Law32 = DistributionSpec<f32>;
pub type Family64 = PostChangeFamily<f64>;
pub type Family32 = PostChangeFamily<f32>;
pub type Params64 = PolicyParams<f64>;
pub type Params32 = PolicyParams<f32>;
pub type Detector64 = Detector<f64>;
pub type Detector32 = Detector<f32>;
pub type Trajectory64 = Trajectory<f64>;
