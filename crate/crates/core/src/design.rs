//! Turning a false alarm budget `α` and a duty-cycle budget `β` into a
//! threshold `A` and a skip drift `μ`.
//!
//! The threshold rule `A = |ln α|` holds for every `μ` and `h`. For `μ` there
//! are two rules: the large-`A`, large-`h` rule [`mu_asymptotic`], and the
//! finite-`h` rule [`mu_for_pdc`] whose constants `C₁ = E∞[λ∞]` and
//! `C₂(h) = E∞[|max(Z,-h)| | Z<0] · P∞(Z<0)²` are estimated by simulation in
//! [`estimate_appendix_constants`].

use rayon::prelude::*;

use crate::distributions::{kl_divergence, DistributionSpec, LogLikelihoodRatio};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng};
use crate::scalar::Scalar;
use crate::stats::{self, Moments};

/// Per-walk step cap when estimating `E∞[λ∞]`.
pub const LADDER_WALK_CAP: u64 = 1_000_000;

/// Largest tolerated fraction of capped walks.
pub const MAX_CAPPED_FRACTION: f64 = 0.001;

/// Smallest trial count accepted by [`estimate_appendix_constants`].
pub const MIN_CONSTANT_TRIALS: usize = 10_000;

/// Budgets on the false alarm rate and the pre-change duty cycle, plus the
/// truncation depth the design is made for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignConstraints<T> {
    pub alpha: T,
    pub beta: T,
    pub h: T,
}

impl<T: Scalar> DesignConstraints<T> {
    pub fn new(alpha: T, beta: T, h: T) -> Result<Self> {
        open_unit("alpha", alpha)?;
        open_unit("beta", beta)?;
        if !h.is_finite() || h < T::zero() {
            return Err(Error::invalid(format!("h must be finite and >= 0, got {h}")));
        }
        Ok(Self { alpha, beta, h })
    }
}

fn open_unit<T: Scalar>(name: &str, v: T) -> Result<()> {
    if !(v > T::zero() && v < T::one()) {
        return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn odds<T: Scalar>(beta: T) -> Result<T> {
    open_unit("beta", beta)?;
    Ok(beta / (T::one() - beta))
}

pub(crate) fn positive_kl<T: Scalar>(p: &DistributionSpec<T>, q: &DistributionSpec<T>) -> Result<T> {
    let kl = kl_divergence(p, q)?;
    if !(kl > T::zero() && kl.is_finite()) {
        return Err(Error::invalid(format!(
            "KL divergence between {p} and {q} must be positive and finite"
        )));
    }
    Ok(kl)
}

/// `A = -ln α`, natural logarithm.
pub fn threshold_for_far<T: Scalar>(alpha: T) -> Result<T> {
    open_unit("alpha", alpha)?;
    Ok(-alpha.ln())
}

/// Largest `μ` allowed by the large-threshold rule
/// `μ ≤ β/(1-β) · D_KL(f ‖ ḡ)`.
pub fn mu_asymptotic<T: Scalar>(
    beta: T,
    f: &DistributionSpec<T>,
    gbar: &DistributionSpec<T>,
) -> Result<T> {
    Ok(odds(beta)? * kl_divergence(f, gbar)?)
}

/// `μ ≤ β/(1-β) · C₂/C₁`.
pub fn mu_for_pdc(beta: f64, constants: &AppendixConstants) -> Result<f64> {
    if !(constants.c1 > 0.0 && constants.c1.is_finite()) {
        return Err(Error::invalid(format!(
            "C1 must be positive and finite, got {}",
            constants.c1
        )));
    }
    if !(constants.c2 >= 0.0 && constants.c2.is_finite()) {
        return Err(Error::invalid(format!(
            "C2 must be nonnegative and finite, got {}",
            constants.c2
        )));
    }
    Ok(odds(beta)? * constants.c2 / constants.c1)
}

/// First-order universal lower bound on the worst-case delay,
/// `|ln α| / D_KL(ḡ ‖ f)`. Independent of the duty-cycle budget.
pub fn wadd_lower_bound<T: Scalar>(
    alpha: T,
    gbar: &DistributionSpec<T>,
    f: &DistributionSpec<T>,
) -> Result<T> {
    open_unit("alpha", alpha)?;
    Ok(alpha.ln().abs() / positive_kl(gbar, f)?)
}

/// Leading term `A / D_KL(ḡ ‖ f)` of the RDE-CUSUM delay bound.
pub fn wadd_upper_bound_first_order<T: Scalar>(
    threshold: T,
    gbar: &DistributionSpec<T>,
    f: &DistributionSpec<T>,
) -> Result<T> {
    if !(threshold > T::zero() && threshold.is_finite()) {
        return Err(Error::invalid(format!(
            "threshold must be positive and finite, got {threshold}"
        )));
    }
    Ok(threshold / positive_kl(gbar, f)?)
}

/// Monte-Carlo estimates of `C₁` and `C₂(h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixConstants {
    /// `E∞[λ∞]`.
    pub c1: f64,
    /// `E∞[|max(Z,-h)| | Z<0] · P∞(Z<0)²`.
    pub c2: f64,
    pub c1_ci: f64,
    pub c2_ci: f64,
    /// `P∞(Z<0)`.
    pub p_negative: f64,
    /// `E∞[|max(Z,-h)| | Z<0]`.
    pub conditional_undershoot: f64,
    pub h: f64,
    pub n_trials: usize,
    /// Ladder walks that hit [`LADDER_WALK_CAP`].
    pub capped_walks: usize,
}

/// Statistics of the first passage below zero of `S_n = Σ log ḡ(Xᵢ)/f(Xᵢ)`,
/// `X ~ f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderWalkStats {
    pub n_walks: usize,
    /// Mean and 95% half-width of `λ∞`.
    pub mean_length: f64,
    pub mean_length_ci: f64,
    /// Mean and 95% half-width of `|S_{λ∞}|`.
    pub mean_abs_exit: f64,
    pub mean_abs_exit_ci: f64,
    /// Per-walk `|S_{λ∞}| - λ∞ · D_KL(f ‖ ḡ)`: mean and standard error. Zero
    /// in expectation by Wald's identity.
    pub wald_gap: f64,
    pub wald_gap_std_error: f64,
    pub capped_walks: usize,
}

#[derive(Debug, Clone, Copy)]
struct LadderWalk {
    length: u64,
    abs_exit: f64,
    capped: bool,
}

fn ladder_walk(llr: &LogLikelihoodRatio<f64>, seed: u64, index: u64) -> LadderWalk {
    let sampler = llr.pre_change().sampler();
    let mut rng = stream_rng(seed, purpose::LADDER, index);
    let mut s = 0.0;
    for n in 1..=LADDER_WALK_CAP {
        s += llr.eval(sampler.sample(&mut rng));
        if s < 0.0 {
            return LadderWalk {
                length: n,
                abs_exit: -s,
                capped: false,
            };
        }
    }
    LadderWalk {
        length: LADDER_WALK_CAP,
        abs_exit: 0.0,
        capped: true,
    }
}

fn ladder_walks(
    f: &DistributionSpec<f64>,
    gbar: &DistributionSpec<f64>,
    n_walks: usize,
    seed: u64,
) -> Result<(Vec<LadderWalk>, f64)> {
    let kl = positive_kl(f, gbar)?;
    let llr = LogLikelihoodRatio::new(*f, *gbar)?;
    let walks: Vec<LadderWalk> = (0..n_walks as u64)
        .into_par_iter()
        .map(|i| ladder_walk(&llr, seed, i))
        .collect();
    let capped = walks.iter().filter(|w| w.capped).count();
    if capped as f64 > MAX_CAPPED_FRACTION * n_walks as f64 {
        return Err(Error::EstimationUnstable(format!(
            "{capped} of {n_walks} ladder walks reached the {LADDER_WALK_CAP}-step cap; \
             the drift -D_KL(f||gbar) = {} is too small",
            -kl
        )));
    }
    Ok((walks, kl))
}

/// Simulates `n_walks` ladder walks under `f` and summarizes `λ∞` and the
/// exit undershoot `|S_{λ∞}|`.
pub fn estimate_ladder_walk(
    f: &DistributionSpec<f64>,
    gbar: &DistributionSpec<f64>,
    n_walks: usize,
    seed: u64,
) -> Result<LadderWalkStats> {
    if n_walks < 2 {
        return Err(Error::invalid("need at least two ladder walks"));
    }
    let (walks, kl) = ladder_walks(f, gbar, n_walks, seed)?;
    let done: Vec<&LadderWalk> = walks.iter().filter(|w| !w.capped).collect();
    let lengths: Vec<f64> = done.iter().map(|w| w.length as f64).collect();
    let exits: Vec<f64> = done.iter().map(|w| w.abs_exit).collect();
    let gaps: Vec<f64> = done.iter().map(|w| w.abs_exit - w.length as f64 * kl).collect();
    let (ml, me, mg) = (Moments::of(&lengths), Moments::of(&exits), Moments::of(&gaps));
    Ok(LadderWalkStats {
        n_walks,
        mean_length: ml.mean,
        mean_length_ci: ml.ci_halfwidth(),
        mean_abs_exit: me.mean,
        mean_abs_exit_ci: me.ci_halfwidth(),
        wald_gap: mg.mean,
        wald_gap_std_error: mg.std_error(),
        capped_walks: walks.len() - done.len(),
    })
}

/// Estimates `C₁` from `n_trials` ladder walks and `C₂(h)` from `n_trials`
/// single increments `Z = log ḡ(X)/f(X)`, `X ~ f`.
pub fn estimate_appendix_constants(
    f: &DistributionSpec<f64>,
    gbar: &DistributionSpec<f64>,
    h: f64,
    n_trials: usize,
    seed: u64,
) -> Result<AppendixConstants> {
    if n_trials < MIN_CONSTANT_TRIALS {
        return Err(Error::invalid(format!(
            "need at least {MIN_CONSTANT_TRIALS} trials, got {n_trials}"
        )));
    }
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::invalid(format!("h must be finite and >= 0, got {h}")));
    }
    let (walks, _) = ladder_walks(f, gbar, n_trials, seed)?;
    let lengths: Vec<f64> = walks.iter().map(|w| w.length as f64).collect();
    let c1m = Moments::of(&lengths);

    // Increments come in fixed blocks so the stream layout does not depend
    // on the thread count.
    const BLOCK: usize = 4096;
    let llr = LogLikelihoodRatio::new(*f, *gbar)?;
    let sampler = f.sampler();
    let blocks = n_trials.div_ceil(BLOCK);
    let pairs: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = stream_rng(seed, purpose::INCREMENTS, b as u64);
            let len = BLOCK.min(n_trials - b * BLOCK);
            let draws: Vec<(f64, f64)> = (0..len)
                .map(|_| {
                    let z = llr.eval(sampler.sample(&mut rng));
                    if z < 0.0 {
                        (z.max(-h).abs(), 1.0)
                    } else {
                        (0.0, 0.0)
                    }
                })
                .collect();
            draws
        })
        .collect();
    let (undershoot, negative): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();

    // C₂ = E[|max(Z,-h)| 1{Z<0}] · P(Z<0); the delta method on the product
    // of the two means gives its half-width.
    let (my, mi) = (stats::mean(&undershoot), stats::mean(&negative));
    let c2 = my * mi;
    let (vy, vi) = (
        Moments::of(&undershoot).variance,
        Moments::of(&negative).variance,
    );
    let cov = stats::covariance(&undershoot, &negative);
    let var_c2 = (mi * mi * vy + my * my * vi + 2.0 * mi * my * cov) / n_trials as f64;
    Ok(AppendixConstants {
        c1: c1m.mean,
        c2,
        c1_ci: c1m.ci_halfwidth(),
        c2_ci: stats::Z95 * var_c2.max(0.0).sqrt(),
        p_negative: mi,
        conditional_undershoot: if mi > 0.0 { my / mi } else { 0.0 },
        h,
        n_trials,
        capped_walks: walks.iter().filter(|w| w.capped).count(),
    })
}
