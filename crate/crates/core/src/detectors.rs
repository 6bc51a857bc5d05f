//! Streaming detectors with on-off observation control.
//!
//! Every step is two calls: [`Detector::next_action`] announces whether the
//! next observation will be used, computed from the current state only, and
//! [`Detector::update`] then consumes the log-likelihood ratio (or nothing on
//! a skip). The split keeps the sampling decision for step `n+1` a function of
//! the information available at step `n`.
//!
//! RDE-CUSUM, with threshold `A`, drift `μ` and truncation `h`:
//!
//! ```text
//! sample iff D ≥ 0
//! sampled:  D ← max(D + llr, -h)
//! skipped:  D ← min(D + μ, 0)
//! alarm     when a sampled step leaves D ≥ A
//! ```
//!
//! After a sampled step leaves the statistic at `-u < 0`, exactly `⌈u/μ⌉`
//! skips follow. The run length is computed once, when the undershoot
//! happens, so the count does not drift with repeated floating point
//! additions of `μ`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorKind<T> {
    /// Robust data-efficient CUSUM.
    RdeCusum,
    /// Robust CUSUM: RDE-CUSUM with `μ = h = 0`; never skips.
    RobustCusum,
    /// Robust CUSUM fed through a coin: after the first step each
    /// observation is used with probability `prob`, otherwise the statistic
    /// is left unchanged.
    FractionalSampling { prob: T },
}

impl<T: Scalar> DetectorKind<T> {
    pub fn label(&self) -> &'static str {
        match self {
            DetectorKind::RdeCusum => "rde",
            DetectorKind::RobustCusum => "robust-cusum",
            DetectorKind::FractionalSampling { .. } => "fractional",
        }
    }
}

/// Threshold `A`, skip drift `μ`, truncation depth `h` and the detector kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams<T> {
    threshold: T,
    mu: T,
    h: T,
    kind: DetectorKind<T>,
}

fn check_nonneg<T: Scalar>(name: &str, v: T) -> Result<()> {
    if !v.is_finite() || v < T::zero() {
        return Err(Error::invalid(format!(
            "{name} must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

impl<T: Scalar> PolicyParams<T> {
    pub fn rde_cusum(threshold: T, mu: T, h: T) -> Result<Self> {
        check_nonneg("threshold", threshold)?;
        check_nonneg("mu", mu)?;
        check_nonneg("h", h)?;
        if h > T::zero() && mu == T::zero() {
            return Err(Error::invalid(
                "h > 0 requires mu > 0, otherwise the statistic never returns to zero",
            ));
        }
        Ok(Self {
            threshold,
            mu,
            h,
            kind: DetectorKind::RdeCusum,
        })
    }

    pub fn robust_cusum(threshold: T) -> Result<Self> {
        check_nonneg("threshold", threshold)?;
        Ok(Self {
            threshold,
            mu: T::zero(),
            h: T::zero(),
            kind: DetectorKind::RobustCusum,
        })
    }

    pub fn fractional_sampling(threshold: T, prob: T) -> Result<Self> {
        check_nonneg("threshold", threshold)?;
        if !(prob >= T::zero() && prob <= T::one()) {
            return Err(Error::invalid(format!(
                "sampling probability must lie in [0, 1], got {prob}"
            )));
        }
        Ok(Self {
            threshold,
            mu: T::zero(),
            h: T::zero(),
            kind: DetectorKind::FractionalSampling { prob },
        })
    }

    /// Same policy with a different threshold.
    pub fn with_threshold(self, threshold: T) -> Result<Self> {
        check_nonneg("threshold", threshold)?;
        Ok(Self { threshold, ..self })
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn kind(&self) -> DetectorKind<T> {
        self.kind
    }

    /// `⌈h/μ⌉`, the longest possible skip run (0 when `h = 0`).
    pub fn max_skip_run(&self) -> u64 {
        skip_run_length(self.h, self.mu)
    }

    // `0 - h` rather than `-h`, so h = 0 gives +0.0 and the update is
    // bit-identical to the classical `max(w + z, 0)`.
    fn floor(&self) -> T {
        T::zero() - self.h
    }
}

/// `⌈u/μ⌉`: number of skips that follow an undershoot of `u`.
pub fn skip_run_length<T: Scalar>(undershoot: T, mu: T) -> u64 {
    if undershoot <= T::zero() {
        return 0;
    }
    (undershoot / mu).ceil().to_u64().unwrap_or(u64::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Sample,
    Skip,
}

/// Mutable part of a detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorState<T> {
    /// Current statistic `D̄ₙ`.
    pub statistic: T,
    /// Steps taken so far (`n`).
    pub step_index: u64,
    /// Observations used so far (`Σ Mᵢ`).
    pub samples_used: u64,
    pub alarmed: bool,
    /// Skips left in the current run below zero.
    pub skips_remaining: u64,
}

impl<T: Scalar> Default for DetectorState<T> {
    fn default() -> Self {
        Self {
            statistic: T::zero(),
            step_index: 0,
            samples_used: 0,
            alarmed: false,
            skips_remaining: 0,
        }
    }
}

/// Result of one [`Detector::update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<T> {
    pub sampled: bool,
    pub statistic_after: T,
    pub alarmed: bool,
}

#[derive(Debug, Clone)]
pub struct Detector<T> {
    params: PolicyParams<T>,
    state: DetectorState<T>,
    coin: Option<ChaCha8Rng>,
    pending: Option<Action>,
}

impl<T: Scalar> Detector<T> {
    /// Fresh detector at `D̄₀ = 0`. A fractional-sampling coin is seeded
    /// with 0; use [`Detector::with_coin_seed`] to pick another.
    pub fn new(params: PolicyParams<T>) -> Self {
        Self::with_coin_seed(params, 0)
    }

    pub fn with_coin_seed(params: PolicyParams<T>, seed: u64) -> Self {
        Self::with_coin_rng(params, stream_rng(seed, purpose::COIN, 0))
    }

    pub fn with_coin_rng(params: PolicyParams<T>, rng: ChaCha8Rng) -> Self {
        let coin = match params.kind {
            DetectorKind::FractionalSampling { .. } => Some(rng),
            _ => None,
        };
        Self {
            params,
            state: DetectorState::default(),
            coin,
            pending: None,
        }
    }

    /// Detector whose statistic starts at `statistic` instead of zero. A
    /// negative start schedules `⌈|statistic|/μ⌉` skips.
    pub fn starting_at(params: PolicyParams<T>, statistic: T) -> Result<Self> {
        Self::new(params).with_start(statistic)
    }

    /// Moves a fresh detector's statistic to `statistic`, keeping its coin.
    pub fn with_start(mut self, statistic: T) -> Result<Self> {
        let params = self.params;
        if self.state.step_index > 0 {
            return Err(Error::ContractViolation(
                "start can only be set before the first step".into(),
            ));
        }
        if !statistic.is_finite() || statistic < params.floor() {
            return Err(Error::invalid(format!(
                "starting statistic {statistic} is below -h = {}",
                params.floor()
            )));
        }
        if statistic < T::zero() && params.kind != DetectorKind::RdeCusum {
            return Err(Error::invalid(
                "only RDE-CUSUM statistics can start below zero",
            ));
        }
        self.state.statistic = statistic;
        self.state.skips_remaining = skip_run_length(-statistic, params.mu);
        Ok(self)
    }

    pub fn params(&self) -> &PolicyParams<T> {
        &self.params
    }

    pub fn state(&self) -> &DetectorState<T> {
        &self.state
    }

    pub fn statistic(&self) -> T {
        self.state.statistic
    }

    pub fn is_alarmed(&self) -> bool {
        self.state.alarmed
    }

    /// Announces whether the next observation is used. Repeated calls
    /// before [`Detector::update`] return the same action.
    pub fn next_action(&mut self) -> Result<Action> {
        if self.state.alarmed {
            return Err(Error::ContractViolation(
                "next_action called after the detector alarmed".into(),
            ));
        }
        if let Some(action) = self.pending {
            return Ok(action);
        }
        let action = match self.params.kind {
            DetectorKind::RdeCusum | DetectorKind::RobustCusum => {
                if self.state.statistic >= T::zero() {
                    Action::Sample
                } else {
                    Action::Skip
                }
            }
            DetectorKind::FractionalSampling { prob } => {
                // One flip per step, the first one included and ignored, so
                // the flip sequence does not depend on the data.
                let coin = self.coin.as_mut().expect("fractional detector owns a coin");
                let heads = coin.random_bool(prob.as_f64());
                if self.state.step_index == 0 || heads {
                    Action::Sample
                } else {
                    Action::Skip
                }
            }
        };
        self.pending = Some(action);
        Ok(action)
    }

    /// Applies the announced action. `llr` must be present exactly when the
    /// announced action was [`Action::Sample`].
    pub fn update(&mut self, llr: Option<T>) -> Result<StepOutcome<T>> {
        let action = self.pending.take().ok_or_else(|| {
            Error::ContractViolation("update called without a preceding next_action".into())
        })?;
        match (action, llr) {
            (Action::Sample, Some(z)) => {
                if !z.is_finite() {
                    self.pending = Some(action);
                    return Err(Error::invalid(format!(
                        "log-likelihood ratio must be finite, got {z}"
                    )));
                }
                let st = &mut self.state;
                st.statistic = (st.statistic + z).max(self.params.floor());
                if st.statistic < T::zero() {
                    st.skips_remaining = skip_run_length(-st.statistic, self.params.mu);
                }
                st.samples_used += 1;
            }
            (Action::Skip, None) => {
                if self.params.kind == DetectorKind::RdeCusum {
                    let st = &mut self.state;
                    st.skips_remaining = st.skips_remaining.saturating_sub(1);
                    st.statistic = if st.skips_remaining == 0 {
                        T::zero()
                    } else {
                        let next = (st.statistic + self.params.mu).min(T::zero());
                        // Rounding can reach 0 one skip early; the run length
                        // fixed at the undershoot wins.
                        if next < T::zero() {
                            next
                        } else {
                            -T::min_positive_value()
                        }
                    };
                }
            }
            (Action::Sample, None) => {
                self.pending = Some(action);
                return Err(Error::ContractViolation(
                    "announced Sample but no observation was supplied".into(),
                ));
            }
            (Action::Skip, Some(_)) => {
                self.pending = Some(action);
                return Err(Error::ContractViolation(
                    "announced Skip but an observation was supplied".into(),
                ));
            }
        }
        let st = &mut self.state;
        st.step_index += 1;
        // Skipped steps never alarm. They cannot reach A > 0 anyway; with
        // A = 0 this keeps the alarm on the first sampled nonnegative llr.
        st.alarmed = action == Action::Sample && st.statistic >= self.params.threshold;
        Ok(StepOutcome {
            sampled: action == Action::Sample,
            statistic_after: st.statistic,
            alarmed: st.alarmed,
        })
    }

    /// One full step; `llr` is evaluated only when the observation is used.
    pub fn step(&mut self, llr: impl FnOnce() -> T) -> Result<StepOutcome<T>> {
        match self.next_action()? {
            Action::Sample => self.update(Some(llr())),
            Action::Skip => self.update(None),
        }
    }
}

/// Record of one detector run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub outcomes: Vec<StepOutcome<T>>,
    /// First step with statistic ≥ A, counted from 1.
    pub stop_time: Option<u64>,
    pub samples_used: u64,
    /// The run ended without an alarm (step budget or stream exhausted).
    pub censored: bool,
}

impl<T: Scalar> Trajectory<T> {
    pub fn statistic_path(&self) -> Vec<T> {
        self.outcomes.iter().map(|o| o.statistic_after).collect()
    }
}

/// Runs a fresh detector over `(observation, llr)` pairs until it alarms,
/// `max_steps` is reached or the stream ends. A skipped step still consumes
/// its pair.
pub fn run_detector<T, I>(params: PolicyParams<T>, source: I, max_steps: u64) -> Result<Trajectory<T>>
where
    T: Scalar,
    I: IntoIterator<Item = (T, T)>,
{
    run_detector_with(Detector::new(params), source, max_steps)
}

pub fn run_detector_with<T, I>(
    mut detector: Detector<T>,
    source: I,
    max_steps: u64,
) -> Result<Trajectory<T>>
where
    T: Scalar,
    I: IntoIterator<Item = (T, T)>,
{
    let mut outcomes = Vec::new();
    let mut stop_time = None;
    let mut source = source.into_iter();
    for n in 1..=max_steps {
        let Some((_x, llr)) = source.next() else {
            break;
        };
        let out = detector.step(|| llr)?;
        outcomes.push(out);
        if out.alarmed {
            stop_time = Some(n);
            break;
        }
    }
    Ok(Trajectory {
        outcomes,
        stop_time,
        samples_used: detector.state.samples_used,
        censored: stop_time.is_none(),
    })
}

/// Reference CUSUM recursion `W ← max(W + llr, 0)` from `W₀ = 0`.
pub fn classical_cusum_path<T: Scalar>(llrs: &[T]) -> Vec<T> {
    let mut w = T::zero();
    llrs.iter()
        .map(|&z| {
            w = (w + z).max(T::zero());
            w
        })
        .collect()
}
