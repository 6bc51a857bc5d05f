//! Monte-Carlo operating characteristics.
//!
//! Trial `i` of an experiment draws its observations from generator stream
//! `(base_seed, OBSERVATIONS, i)` and its coin flips from
//! `(base_seed, COIN, i)`. One observation is drawn per step whether or not
//! the detector uses it, so every detector kind and every threshold sees the
//! same sample path for a given trial (common random numbers). Trials run in
//! parallel, come back in index order, and are reduced with pairwise
//! summation, so estimates are bit-identical across thread counts.

use rayon::prelude::*;

use crate::design::positive_kl;
use crate::detectors::{skip_run_length, Detector, DetectorKind, PolicyParams};
use crate::distributions::{DistributionSpec, LogLikelihoodRatio, PostChangeFamily};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng};
use crate::stats::{self, Moments};

/// Default step budget for false alarm runs.
pub const DEFAULT_FAR_MAX_STEPS: u64 = 10_000_000;
/// Default pre-change horizon `k` of the direct PDC estimator.
pub const DEFAULT_PDC_HORIZON: u64 = 100_000;
/// The threshold is raised while fewer than this fraction of PDC trials
/// survive to the horizon.
pub const MIN_PDC_SURVIVAL: f64 = 0.02;
/// Fewest surviving trials the direct PDC estimator accepts.
pub const MIN_PDC_SURVIVORS: usize = 100;
/// Largest censored fraction tolerated by the delay estimator.
pub const MAX_WADD_CENSORED: f64 = 0.01;

const MAX_THRESHOLD_RAISES: usize = 30;
const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangePoint {
    /// No change: every observation comes from `f`.
    Never,
    /// Observations `n ≥ ν` come from the post-change law (`At(1)`: all).
    At(u64),
}

/// One Monte-Carlo experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub f: DistributionSpec<f64>,
    pub family: PostChangeFamily<f64>,
    pub true_g: DistributionSpec<f64>,
    pub params: PolicyParams<f64>,
    pub change_point: ChangePoint,
    pub n_trials: usize,
    pub max_steps: u64,
    pub base_seed: u64,
}

impl ExperimentConfig {
    pub fn new(
        f: DistributionSpec<f64>,
        family: PostChangeFamily<f64>,
        true_g: DistributionSpec<f64>,
        params: PolicyParams<f64>,
        change_point: ChangePoint,
        n_trials: usize,
        max_steps: u64,
        base_seed: u64,
    ) -> Result<Self> {
        if family.kind() != f.kind() {
            return Err(Error::invalid(format!(
                "family {family} and pre-change law {f} are of different kinds"
            )));
        }
        if !family.contains(&true_g) {
            return Err(Error::invalid(format!(
                "post-change law {true_g} is not in family {family}"
            )));
        }
        if n_trials == 0 || max_steps == 0 {
            return Err(Error::invalid("n_trials and max_steps must be positive"));
        }
        if change_point == ChangePoint::At(0) {
            return Err(Error::invalid("change points are counted from 1"));
        }
        Ok(Self {
            f,
            family,
            true_g,
            params,
            change_point,
            n_trials,
            max_steps,
            base_seed,
        })
    }

    pub fn lfl(&self) -> DistributionSpec<f64> {
        self.family.lfl().expect("family validated at construction")
    }

    pub fn with_params(self, params: PolicyParams<f64>) -> Self {
        Self { params, ..self }
    }

    pub fn with_threshold(self, threshold: f64) -> Result<Self> {
        Ok(Self {
            params: self.params.with_threshold(threshold)?,
            ..self
        })
    }

    pub fn with_change_point(self, change_point: ChangePoint) -> Self {
        Self {
            change_point,
            ..self
        }
    }

    pub fn with_trials(self, n_trials: usize, max_steps: u64) -> Self {
        Self {
            n_trials,
            max_steps,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricName {
    /// `1 / E∞[τ]`.
    Far,
    /// `E∞[τ]`.
    EInfTau,
    PdcDirect,
    PdcRenewal,
    /// Worst-case delay: `⌈h/μ⌉ + E₁[τ]`.
    Wadd,
    /// Plain delay with the change at the first observation, `E₁[τ]`.
    ConditionalDelay,
}

impl MetricName {
    pub fn label(self) -> &'static str {
        match self {
            MetricName::Far => "FAR",
            MetricName::EInfTau => "E_inf_tau",
            MetricName::PdcDirect => "PDC_direct",
            MetricName::PdcRenewal => "PDC_renewal",
            MetricName::Wadd => "WADD",
            MetricName::ConditionalDelay => "CADD_1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricEstimate {
    pub name: MetricName,
    pub value: f64,
    /// 95% normal-approximation half-width.
    pub ci_halfwidth: f64,
    pub n_trials: usize,
    /// Trials that hit the step budget (FAR, delay) or were rejected by the
    /// `τ ≥ k` conditioning (direct PDC).
    pub censored_trials: usize,
}

impl MetricEstimate {
    fn from_moments(name: MetricName, m: &Moments, n_trials: usize, censored: usize) -> Self {
        Self {
            name,
            value: m.mean,
            ci_halfwidth: m.ci_halfwidth(),
            n_trials,
            censored_trials: censored,
        }
    }

    pub fn lower(&self) -> f64 {
        self.value - self.ci_halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.value + self.ci_halfwidth
    }
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// `None` when the trial hit the step budget.
    pub stop_time: Option<u64>,
    pub samples_used_prechange: u64,
    pub samples_used_total: u64,
    /// `|D|` right after the statistic first went below zero.
    pub undershoot_at_first_negative: Option<f64>,
    /// Samples used after each requested checkpoint step, or `None` if the
    /// trial stopped before it.
    pub samples_at_checkpoints: Vec<Option<u64>>,
}

struct TrialSetup {
    pre: crate::distributions::Sampler<f64>,
    post: crate::distributions::Sampler<f64>,
    llr: LogLikelihoodRatio<f64>,
    params: PolicyParams<f64>,
    change_at: u64,
    max_steps: u64,
    seed: u64,
    start: f64,
}

impl TrialSetup {
    fn new(cfg: &ExperimentConfig, start: f64) -> Result<Self> {
        let llr = LogLikelihoodRatio::new(cfg.f, cfg.lfl())?;
        let change_at = match cfg.change_point {
            ChangePoint::Never => u64::MAX,
            ChangePoint::At(k) => k,
        };
        // Validate the start once; per-trial construction can then unwrap.
        Detector::starting_at(cfg.params, start)?;
        Ok(Self {
            pre: cfg.f.sampler(),
            post: cfg.true_g.sampler(),
            llr,
            params: cfg.params,
            change_at,
            max_steps: cfg.max_steps,
            seed: cfg.base_seed,
            start,
        })
    }

    fn run(&self, index: u64, checkpoints: &[u64]) -> TrialRecord {
        let mut obs = stream_rng(self.seed, purpose::OBSERVATIONS, index);
        let mut det =
            Detector::with_coin_rng(self.params, stream_rng(self.seed, purpose::COIN, index))
                .with_start(self.start)
                .expect("start validated in TrialSetup::new");
        let mut rec = TrialRecord {
            stop_time: None,
            samples_used_prechange: 0,
            samples_used_total: 0,
            undershoot_at_first_negative: None,
            samples_at_checkpoints: vec![None; checkpoints.len()],
        };
        for n in 1..=self.max_steps {
            let pre_change = n < self.change_at;
            let x = if pre_change {
                self.pre.sample(&mut obs)
            } else {
                self.post.sample(&mut obs)
            };
            let out = det
                .step(|| self.llr.eval(x))
                .expect("detector protocol followed by the trial loop");
            if out.sampled && pre_change {
                rec.samples_used_prechange += 1;
            }
            if rec.undershoot_at_first_negative.is_none() && out.statistic_after < 0.0 {
                rec.undershoot_at_first_negative = Some(-out.statistic_after);
            }
            for (slot, &cp) in rec.samples_at_checkpoints.iter_mut().zip(checkpoints) {
                if cp == n {
                    *slot = Some(det.state().samples_used);
                }
            }
            if out.alarmed {
                rec.stop_time = Some(n);
                break;
            }
        }
        rec.samples_used_total = det.state().samples_used;
        rec
    }
}

/// Runs every trial of `cfg` from `D̄₀ = 0`.
pub fn run_trials(cfg: &ExperimentConfig, checkpoints: &[u64]) -> Result<Vec<TrialRecord>> {
    run_trials_from(cfg, 0.0, checkpoints)
}

/// Runs every trial with the statistic starting at `start`.
pub fn run_trials_from(
    cfg: &ExperimentConfig,
    start: f64,
    checkpoints: &[u64],
) -> Result<Vec<TrialRecord>> {
    let setup = TrialSetup::new(cfg, start)?;
    Ok((0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|i| setup.run(i, checkpoints))
        .collect())
}

/// Runs `op` on a dedicated pool of `workers` threads (0: one per core).
pub fn with_workers<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(op))
}

fn require_change(cfg: &ExperimentConfig, want: ChangePoint, what: &str) -> Result<()> {
    if cfg.change_point != want {
        return Err(Error::invalid(format!(
            "{what} needs change point {want:?}, got {:?}",
            cfg.change_point
        )));
    }
    Ok(())
}

/// False alarm rate and mean time to false alarm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarEstimate {
    pub far: MetricEstimate,
    pub mean_time: MetricEstimate,
}

/// `FAR = 1/E∞[τ]`. Censored trials count as `max_steps`, which biases the
/// FAR upward; the count is reported in `censored_trials`.
pub fn estimate_far(cfg: &ExperimentConfig) -> Result<FarEstimate> {
    require_change(cfg, ChangePoint::Never, "FAR estimation")?;
    let trials = run_trials(cfg, &[])?;
    far_from_trials(&trials, cfg.max_steps)
}

fn far_from_trials(trials: &[TrialRecord], max_steps: u64) -> Result<FarEstimate> {
    let censored = trials.iter().filter(|t| t.stop_time.is_none()).count();
    if censored == trials.len() {
        return Err(Error::EstimationFailed(format!(
            "all {censored} trials ran {max_steps} steps without a false alarm"
        )));
    }
    let times: Vec<f64> = trials
        .iter()
        .map(|t| t.stop_time.unwrap_or(max_steps) as f64)
        .collect();
    let m = Moments::of(&times);
    let mean_time = MetricEstimate::from_moments(MetricName::EInfTau, &m, trials.len(), censored);
    let far = MetricEstimate {
        name: MetricName::Far,
        value: 1.0 / m.mean,
        ci_halfwidth: m.ci_halfwidth() / (m.mean * m.mean),
        n_trials: trials.len(),
        censored_trials: censored,
    };
    Ok(FarEstimate { far, mean_time })
}

/// Direct duty-cycle estimate together with its short-horizon sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdcDirect {
    /// Mean over surviving trials of (samples in steps `1..k-1`)/(k-1).
    pub estimate: MetricEstimate,
    /// Same statistic at horizon `k/10`, over the same survivors.
    pub short_horizon: MetricEstimate,
    /// Threshold actually used after any automatic raises.
    pub threshold_used: f64,
    pub horizon: u64,
    pub survivors: usize,
}

/// Duty cycle over a pre-change horizon `k = cfg.max_steps`, conditioned on
/// no alarm before `k` by discarding alarmed trials. While fewer than 2% of
/// trials (or fewer than 100) survive, the threshold is raised and the batch
/// rerun.
pub fn estimate_pdc_direct(cfg: &ExperimentConfig) -> Result<PdcDirect> {
    require_change(cfg, ChangePoint::Never, "direct PDC estimation")?;
    let k = cfg.max_steps;
    if k < 20 {
        return Err(Error::invalid(format!("PDC horizon {k} is too short")));
    }
    let short = k / 10;
    if cfg.n_trials < MIN_PDC_SURVIVORS {
        return Err(Error::EstimationUnstable(format!(
            "{} trials cannot yield {MIN_PDC_SURVIVORS} survivors",
            cfg.n_trials
        )));
    }
    let needed = MIN_PDC_SURVIVAL.max(MIN_PDC_SURVIVORS as f64 / cfg.n_trials as f64);
    let mut cfg = cfg.with_trials(cfg.n_trials, k - 1);
    for _ in 0..MAX_THRESHOLD_RAISES {
        let trials = run_trials(&cfg, &[short - 1, k - 1])?;
        let survivors: Vec<&TrialRecord> =
            trials.iter().filter(|t| t.stop_time.is_none()).collect();
        let survival = survivors.len() as f64 / trials.len() as f64;
        if survival < needed {
            let a = cfg.params.threshold();
            cfg = cfg.with_threshold(a + threshold_raise(survival, (2.0 * needed).min(0.5)))?;
            continue;
        }
        let frac = |slot: usize, steps: u64| -> Vec<f64> {
            survivors
                .iter()
                .map(|t| t.samples_at_checkpoints[slot].expect("survivor reached checkpoint") as f64 / steps as f64)
                .collect()
        };
        let rejected = trials.len() - survivors.len();
        let long = Moments::of(&frac(1, k - 1));
        let brief = Moments::of(&frac(0, short - 1));
        return Ok(PdcDirect {
            estimate: MetricEstimate::from_moments(MetricName::PdcDirect, &long, trials.len(), rejected),
            short_horizon: MetricEstimate::from_moments(MetricName::PdcDirect, &brief, trials.len(), rejected),
            threshold_used: cfg.params.threshold(),
            horizon: k,
            survivors: survivors.len(),
        });
    }
    Err(Error::EstimationUnstable(format!(
        "survival to horizon {k} stayed below {MIN_PDC_SURVIVAL} after {MAX_THRESHOLD_RAISES} threshold raises"
    )))
}

// Survival to k is roughly exp(-k/ARL) and ARL grows like e^A.
fn threshold_raise(survival: f64, aim: f64) -> f64 {
    if survival <= 0.0 {
        return 2.0;
    }
    (survival.ln() / aim.ln()).ln().max(0.5)
}

/// Duty cycle from i.i.d. renewal cycles under `f`: each cycle runs the
/// statistic from 0 until it leaves `[0, A)`; among cycles leaving below
/// zero at `D`, `PDC = E[λ_A] / (E[λ_A] + E[⌈|max(D,-h)|/μ⌉])`.
pub fn estimate_pdc_renewal(
    f: &DistributionSpec<f64>,
    gbar: &DistributionSpec<f64>,
    params: &PolicyParams<f64>,
    n_cycles: usize,
    seed: u64,
) -> Result<MetricEstimate> {
    if !(params.mu() > 0.0) {
        return Err(Error::invalid("renewal PDC needs mu > 0"));
    }
    if n_cycles < 2 {
        return Err(Error::invalid("need at least two renewal cycles"));
    }
    let llr = LogLikelihoodRatio::new(*f, *gbar)?;
    let sampler = f.sampler();
    let (a, h, mu) = (params.threshold(), params.h(), params.mu());
    let cycles: Vec<Option<(f64, f64)>> = (0..n_cycles as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, purpose::RENEWAL, i);
            let mut d = 0.0;
            let mut len = 0u64;
            loop {
                len += 1;
                d += llr.eval(sampler.sample(&mut rng));
                if d < 0.0 {
                    let skips = skip_run_length(-(d.max(-h)), mu);
                    return Some((len as f64, skips as f64));
                }
                if d >= a {
                    return None;
                }
            }
        })
        .collect();
    let (lengths, skips): (Vec<f64>, Vec<f64>) = cycles.iter().flatten().copied().unzip();
    if lengths.is_empty() {
        return Err(Error::EstimationFailed(format!(
            "none of {n_cycles} renewal cycles exited below zero"
        )));
    }
    let (ml, ms) = (stats::mean(&lengths), stats::mean(&skips));
    let value = ml / (ml + ms);
    let ci = if lengths.len() > 1 {
        stats::Z95 * stats::ratio_share_std_error(&lengths, &skips)
    } else {
        f64::INFINITY
    };
    Ok(MetricEstimate {
        name: MetricName::PdcRenewal,
        value,
        ci_halfwidth: ci,
        n_trials: n_cycles,
        censored_trials: n_cycles - lengths.len(),
    })
}

/// Detection delay estimates for a change at the first observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaddEstimate {
    /// `⌈h/μ⌉ + E₁[τ]`: the worst pre-change history leaves the statistic at
    /// `-h`, which costs exactly `⌈h/μ⌉` skips before a fresh run from zero.
    pub worst_case: MetricEstimate,
    /// `E₁[τ]` from `D̄₀ = 0`.
    pub conditional: MetricEstimate,
    pub additive_term: u64,
}

pub fn estimate_wadd(cfg: &ExperimentConfig) -> Result<WaddEstimate> {
    require_change(cfg, ChangePoint::At(1), "delay estimation")?;
    let trials = run_trials(cfg, &[])?;
    let censored = trials.iter().filter(|t| t.stop_time.is_none()).count();
    if censored as f64 > MAX_WADD_CENSORED * trials.len() as f64 {
        return Err(Error::EstimationUnstable(format!(
            "{censored} of {} delay trials hit the {}-step budget",
            trials.len(),
            cfg.max_steps
        )));
    }
    let delays: Vec<f64> = trials
        .iter()
        .map(|t| t.stop_time.unwrap_or(cfg.max_steps) as f64)
        .collect();
    let m = Moments::of(&delays);
    let conditional =
        MetricEstimate::from_moments(MetricName::ConditionalDelay, &m, trials.len(), censored);
    let additive_term = match cfg.params.kind() {
        DetectorKind::RdeCusum => cfg.params.max_skip_run(),
        _ => 0,
    };
    Ok(WaddEstimate {
        worst_case: MetricEstimate {
            name: MetricName::Wadd,
            value: additive_term as f64 + m.mean,
            ..conditional
        },
        conditional,
        additive_term,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub far: FarEstimate,
    pub iterations: usize,
    /// `|FAR̂ - target|/target ≤ tol` was reached. When false, `threshold` is
    /// the probe closest to the target once the bracket collapsed.
    pub converged: bool,
}

/// Bisects the threshold of `cfg.params` until the estimated FAR is within
/// relative tolerance `tol` of `target_far`. Every probe reuses
/// `cfg.base_seed`, so the estimated FAR is monotone in the threshold.
pub fn calibrate_threshold(
    cfg: &ExperimentConfig,
    target_far: f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<Calibration> {
    require_change(cfg, ChangePoint::Never, "threshold calibration")?;
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    if !(target_far > 0.0 && target_far < 1.0) {
        return Err(Error::invalid(format!("target FAR must lie in (0, 1), got {target_far}")));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid(format!("bad bracket [{lo}, {hi}]")));
    }
    let probe = |a: f64| -> Result<FarEstimate> { estimate_far(&cfg.with_threshold(a)?) };
    let rel = |far: f64| (far - target_far).abs() / target_far;

    let far_lo = probe(lo)?;
    let far_hi = probe(hi)?;
    if !(far_lo.far.value >= target_far && far_hi.far.value <= target_far) {
        return Err(Error::invalid(format!(
            "bracket [{lo}, {hi}] gives FAR [{}, {}], which does not straddle {target_far}",
            far_hi.far.value, far_lo.far.value
        )));
    }
    let mut best = if rel(far_lo.far.value) <= rel(far_hi.far.value) {
        (lo, far_lo)
    } else {
        (hi, far_hi)
    };
    for iterations in 1..=MAX_BISECTION_STEPS {
        if rel(best.1.far.value) <= tol {
            return Ok(Calibration {
                threshold: best.0,
                far: best.1,
                iterations,
                converged: true,
            });
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let far = probe(mid)?;
        if rel(far.far.value) < rel(best.1.far.value) {
            best = (mid, far);
        }
        if far.far.value > target_far {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Calibration {
        threshold: best.0,
        far: best.1,
        iterations: MAX_BISECTION_STEPS,
        converged: rel(best.1.far.value) <= tol,
    })
}

/// Settings of the duty-cycle columns of an operating-characteristic table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdcOptions {
    /// Pre-change horizon `k` of the direct estimator.
    pub horizon: u64,
    pub trials: usize,
    /// Renewal cycles for RDE-CUSUM rows.
    pub renewal_cycles: usize,
}

impl Default for PdcOptions {
    fn default() -> Self {
        Self {
            horizon: 10_000,
            trials: 1000,
            renewal_cycles: 100_000,
        }
    }
}

/// Shared inputs of a sweep or matched-FAR evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub f: DistributionSpec<f64>,
    pub family: PostChangeFamily<f64>,
    pub true_g: DistributionSpec<f64>,
    /// Detectors to compare; their thresholds are overridden per row.
    pub detectors: Vec<PolicyParams<f64>>,
    pub n_trials: usize,
    /// Step budget of the FAR runs.
    pub far_max_steps: u64,
    /// Step budget of the delay runs.
    pub delay_max_steps: u64,
    pub base_seed: u64,
    pub pdc: PdcOptions,
}

/// One (detector, threshold) row of an operating-characteristic table.
#[derive(Debug, Clone, PartialEq)]
pub struct OcRow {
    pub params: PolicyParams<f64>,
    pub target_far: Option<f64>,
    pub far: FarEstimate,
    pub wadd: WaddEstimate,
    pub pdc_direct: PdcDirect,
    pub pdc_renewal: Option<MetricEstimate>,
}

impl SweepSpec {
    fn config(&self, params: PolicyParams<f64>, change: ChangePoint, steps: u64) -> Result<ExperimentConfig> {
        ExperimentConfig::new(
            self.f,
            self.family,
            self.true_g,
            params,
            change,
            self.n_trials,
            steps,
            self.base_seed,
        )
    }

    fn row(&self, params: PolicyParams<f64>, target_far: Option<f64>, far: Option<FarEstimate>) -> Result<OcRow> {
        let far = match far {
            Some(f) => f,
            None => estimate_far(&self.config(params, ChangePoint::Never, self.far_max_steps)?)?,
        };
        let wadd = estimate_wadd(&self.config(params, ChangePoint::At(1), self.delay_max_steps)?)?;
        let pdc_cfg = self
            .config(params, ChangePoint::Never, self.pdc.horizon)?
            .with_trials(self.pdc.trials, self.pdc.horizon);
        let pdc_direct = estimate_pdc_direct(&pdc_cfg)?;
        let pdc_renewal = if params.mu() > 0.0 {
            let lfl = self.family.lfl()?;
            let renewal_params = params.with_threshold(pdc_direct.threshold_used)?;
            Some(estimate_pdc_renewal(
                &self.f,
                &lfl,
                &renewal_params,
                self.pdc.renewal_cycles,
                self.base_seed,
            )?)
        } else {
            None
        };
        Ok(OcRow {
            params,
            target_far,
            far,
            wadd,
            pdc_direct,
            pdc_renewal,
        })
    }

    fn check(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::invalid("no detectors to evaluate"));
        }
        Ok(())
    }
}

/// FAR, delay and duty cycle for every detector at every threshold in
/// `thresholds`. All rows share `base_seed`.
pub fn operating_characteristic_sweep(spec: &SweepSpec, thresholds: &[f64]) -> Result<Vec<OcRow>> {
    spec.check()?;
    let mut rows = Vec::with_capacity(spec.detectors.len() * thresholds.len());
    for det in &spec.detectors {
        for &a in thresholds {
            rows.push(spec.row(det.with_threshold(a)?, None, None)?);
        }
    }
    Ok(rows)
}

/// For every detector and every target FAR: calibrate the threshold within
/// `bracket` to relative tolerance `tol`, then estimate the row there.
pub fn matched_far_evaluation(
    spec: &SweepSpec,
    targets: &[f64],
    bracket: (f64, f64),
    tol: f64,
) -> Result<Vec<OcRow>> {
    spec.check()?;
    let mut rows = Vec::with_capacity(spec.detectors.len() * targets.len());
    for det in &spec.detectors {
        let far_cfg = spec.config(*det, ChangePoint::Never, spec.far_max_steps)?;
        for &target in targets {
            let cal = calibrate_threshold(&far_cfg, target, bracket, tol)?;
            rows.push(spec.row(det.with_threshold(cal.threshold)?, Some(target), Some(cal.far))?);
        }
    }
    Ok(rows)
}

/// `|ln α̂| / D_KL(ḡ‖f)` for the attained FAR `α̂`.
pub fn attained_lower_bound(far: f64, gbar: &DistributionSpec<f64>, f: &DistributionSpec<f64>) -> Result<f64> {
    Ok(far.ln().abs() / positive_kl(gbar, f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::mu_asymptotic;

    fn n(m: f64) -> DistributionSpec<f64> {
        DistributionSpec::gaussian(m).unwrap()
    }

    fn p(r: f64) -> DistributionSpec<f64> {
        DistributionSpec::poisson(r).unwrap()
    }

    fn gauss_cfg(params: PolicyParams<f64>, change: ChangePoint, trials: usize, steps: u64) -> ExperimentConfig {
        ExperimentConfig::new(
            n(0.0),
            PostChangeFamily::GaussianMeanAtLeast(0.5),
            n(1.0),
            params,
            change,
            trials,
            steps,
            17,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let params = PolicyParams::robust_cusum(3.0).unwrap();
        let fam = PostChangeFamily::GaussianMeanAtLeast(0.5);
        assert!(ExperimentConfig::new(n(0.0), fam, n(0.2), params, ChangePoint::Never, 10, 10, 0).is_err());
        assert!(ExperimentConfig::new(p(1.0), fam, n(1.0), params, ChangePoint::Never, 10, 10, 0).is_err());
        assert!(ExperimentConfig::new(n(0.0), fam, n(1.0), params, ChangePoint::Never, 0, 10, 0).is_err());
        assert!(ExperimentConfig::new(n(0.0), fam, n(1.0), params, ChangePoint::At(0), 10, 10, 0).is_err());
    }

    #[test]
    fn far_estimates_are_deterministic_and_thread_independent() {
        let cfg = gauss_cfg(PolicyParams::rde_cusum(3.0, 0.125, 10.0).unwrap(), ChangePoint::Never, 500, 100_000);
        let a = estimate_far(&cfg).unwrap();
        let b = with_workers(1, || estimate_far(&cfg)).unwrap().unwrap();
        let c = with_workers(3, || estimate_far(&cfg)).unwrap().unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn far_is_monotone_in_threshold_on_shared_paths() {
        for params in [
            PolicyParams::robust_cusum(0.0).unwrap(),
            PolicyParams::rde_cusum(0.0, 0.125, 10.0).unwrap(),
            PolicyParams::fractional_sampling(0.0, 0.5).unwrap(),
        ] {
            let base = gauss_cfg(params, ChangePoint::Never, 300, 1_000_000);
            let mut prev: Option<Vec<TrialRecord>> = None;
            for a in [1.0, 2.0, 3.0, 4.0] {
                let trials = run_trials(&base.with_threshold(a).unwrap(), &[]).unwrap();
                if let Some(prev) = &prev {
                    for (x, y) in prev.iter().zip(&trials) {
                        assert!(x.stop_time.unwrap() <= y.stop_time.unwrap());
                    }
                }
                prev = Some(trials);
            }
        }
    }

    #[test]
    fn far_needs_no_change_and_an_alarm() {
        let cfg = gauss_cfg(PolicyParams::robust_cusum(3.0).unwrap(), ChangePoint::At(1), 10, 100);
        assert!(estimate_far(&cfg).is_err());
        let cfg = gauss_cfg(PolicyParams::robust_cusum(50.0).unwrap(), ChangePoint::Never, 10, 10);
        assert!(matches!(estimate_far(&cfg), Err(Error::EstimationFailed(_))));
    }

    #[test]
    fn robust_cusum_far_respects_log_alpha_rule() {
        // f = Pois(1), ḡ = Pois(2), A = 6.9: E∞[τ] ≥ 1000.
        let params = PolicyParams::robust_cusum(6.9).unwrap();
        let cfg = ExperimentConfig::new(
            p(1.0),
            PostChangeFamily::PoissonRateAtLeast(2.0),
            p(2.0),
            params,
            ChangePoint::Never,
            2000,
            10_000_000,
            5,
        )
        .unwrap();
        let est = estimate_far(&cfg).unwrap();
        assert!(est.mean_time.value >= 1000.0, "{}", est.mean_time.value);
        assert!(est.far.value <= 0.001);
    }

    #[test]
    fn pdc_direct_robust_is_exactly_one_and_fractional_tracks_coin() {
        let cfg = gauss_cfg(PolicyParams::robust_cusum(30.0).unwrap(), ChangePoint::Never, 200, 2000);
        let est = estimate_pdc_direct(&cfg).unwrap();
        assert_eq!(est.estimate.value, 1.0);
        assert_eq!(est.short_horizon.value, 1.0);

        let cfg = gauss_cfg(PolicyParams::fractional_sampling(30.0, 0.3).unwrap(), ChangePoint::Never, 200, 20_000);
        let est = estimate_pdc_direct(&cfg).unwrap();
        // LLN oracle: the coin sequence alone fixes the fraction, 0.3 ± 3σ.
        let sd = (0.3f64 * 0.7 / 20_000.0).sqrt();
        assert!((est.estimate.value - 0.3).abs() < 3.0 * sd + 1e-4, "{}", est.estimate.value);
    }

    #[test]
    fn pdc_direct_raises_threshold_when_everything_alarms() {
        let cfg = gauss_cfg(PolicyParams::rde_cusum(1.0, 0.125, 10.0).unwrap(), ChangePoint::Never, 300, 5000);
        let est = estimate_pdc_direct(&cfg).unwrap();
        assert!(est.threshold_used > 1.0);
        assert!(est.survivors as f64 >= MIN_PDC_SURVIVAL * 300.0);
        assert!(est.estimate.value > 0.0 && est.estimate.value <= 1.0);
    }

    #[test]
    fn pdc_direct_needs_enough_survivors() {
        let cfg = gauss_cfg(PolicyParams::robust_cusum(30.0).unwrap(), ChangePoint::Never, 50, 2000);
        assert!(matches!(estimate_pdc_direct(&cfg), Err(Error::EstimationUnstable(_))));
    }

    #[test]
    fn pdc_renewal_limits() {
        let (f, g) = (n(0.0), n(0.5));
        // μ → ∞: every skip run has length one.
        let params = PolicyParams::rde_cusum(5.0, 1e9, 10.0).unwrap();
        let est = estimate_pdc_renewal(&f, &g, &params, 20_000, 2).unwrap();
        let llr = LogLikelihoodRatio::new(f, g).unwrap();
        let mut lens = Vec::new();
        for i in 0..20_000u64 {
            let mut rng = stream_rng(2, purpose::RENEWAL, i);
            let s = f.sampler();
            let (mut d, mut len) = (0.0, 0.0);
            loop {
                len += 1.0;
                d += llr.eval(s.sample(&mut rng));
                if d < 0.0 {
                    lens.push(len);
                    break;
                }
                if d >= 5.0 {
                    break;
                }
            }
        }
        let ml = stats::mean(&lens);
        assert!((est.value - ml / (ml + 1.0)).abs() < 1e-12);

        // Large A and h: bounded by μ/(μ + KL(f‖ḡ)).
        let mu = 0.125;
        let params = PolicyParams::rde_cusum(50.0, mu, 1e6).unwrap();
        let est = estimate_pdc_renewal(&f, &g, &params, 50_000, 3).unwrap();
        assert!(est.value <= mu / (mu + 0.125) + est.ci_halfwidth, "{}", est.value);

        assert!(estimate_pdc_renewal(&f, &g, &PolicyParams::robust_cusum(5.0).unwrap(), 100, 1).is_err());
        // A = 0 under an llr that is positive with probability 0.99: both
        // cycles exit above on their first step.
        let params = PolicyParams::rde_cusum(0.0, 0.1, 1.0).unwrap();
        assert!(matches!(
            estimate_pdc_renewal(&p(0.01), &p(0.001), &params, 2, 1),
            Err(Error::EstimationFailed(_))
        ));
    }

    #[test]
    fn pdc_estimators_agree() {
        let mu = mu_asymptotic(0.5, &n(0.0), &n(0.5)).unwrap();
        let params = PolicyParams::rde_cusum(8.0, mu, 10.0).unwrap();
        let cfg = gauss_cfg(params, ChangePoint::Never, 400, 20_000);
        let direct = estimate_pdc_direct(&cfg).unwrap();
        let renewal = estimate_pdc_renewal(
            &n(0.0),
            &n(0.5),
            &params.with_threshold(direct.threshold_used).unwrap(),
            100_000,
            1,
        )
        .unwrap();
        let rel = (renewal.value - direct.estimate.value).abs() / direct.estimate.value;
        assert!(rel < 0.1, "{} vs {}", renewal.value, direct.estimate.value);
    }

    #[test]
    fn wadd_additive_term() {
        let cfg = gauss_cfg(PolicyParams::rde_cusum(4.0, 0.125, 10.0).unwrap(), ChangePoint::At(1), 500, 100_000);
        let w = estimate_wadd(&cfg).unwrap();
        assert_eq!(w.additive_term, 80);
        assert_eq!(w.worst_case.value, 80.0 + w.conditional.value);

        let cfg = gauss_cfg(PolicyParams::rde_cusum(4.0, 0.125, 0.0).unwrap(), ChangePoint::At(1), 500, 100_000);
        let w = estimate_wadd(&cfg).unwrap();
        assert_eq!(w.additive_term, 0);
        assert_eq!(w.worst_case.value, w.conditional.value);

        let cfg = gauss_cfg(PolicyParams::robust_cusum(40.0).unwrap(), ChangePoint::At(1), 100, 10);
        assert!(matches!(estimate_wadd(&cfg), Err(Error::EstimationUnstable(_))));
    }

    #[test]
    fn calibration_contract() {
        let cfg = gauss_cfg(PolicyParams::robust_cusum(1.0).unwrap(), ChangePoint::Never, 400, 1_000_000);
        assert!(calibrate_threshold(&cfg, 0.01, (0.5, 10.0), 0.0).is_err());
        assert!(calibrate_threshold(&cfg, 0.01, (6.0, 10.0), 0.05).is_err());
        let a = calibrate_threshold(&cfg, 0.01, (0.5, 10.0), 0.02).unwrap();
        let b = calibrate_threshold(&cfg, 0.01, (0.5, 10.0), 0.02).unwrap();
        assert_eq!(a, b);
        assert!(a.converged);
        assert!((a.far.far.value - 0.01).abs() <= 0.02 * 0.01);
        // |ln α| is conservative for the robust CUSUM.
        assert!(a.threshold <= 0.01f64.ln().abs());
    }

    #[test]
    fn single_point_sweep_matches_estimators() {
        let spec = SweepSpec {
            f: n(0.0),
            family: PostChangeFamily::GaussianMeanAtLeast(0.5),
            true_g: n(1.0),
            detectors: vec![PolicyParams::rde_cusum(0.0, 0.125, 10.0).unwrap()],
            n_trials: 200,
            far_max_steps: 1_000_000,
            delay_max_steps: 100_000,
            base_seed: 9,
            pdc: PdcOptions {
                horizon: 2000,
                trials: 200,
                renewal_cycles: 10_000,
            },
        };
        let rows = operating_characteristic_sweep(&spec, &[3.0]).unwrap();
        assert_eq!(rows.len(), 1);
        let params = spec.detectors[0].with_threshold(3.0).unwrap();
        let base = ExperimentConfig::new(spec.f, spec.family, spec.true_g, params, ChangePoint::Never, 200, 1_000_000, 9).unwrap();
        assert_eq!(rows[0].far, estimate_far(&base).unwrap());
        let delay = base.with_change_point(ChangePoint::At(1)).with_trials(200, 100_000);
        assert_eq!(rows[0].wadd, estimate_wadd(&delay).unwrap());
        let pdc = base.with_trials(200, 2000);
        assert_eq!(rows[0].pdc_direct, estimate_pdc_direct(&pdc).unwrap());

        let empty = SweepSpec { detectors: vec![], ..spec };
        assert!(operating_characteristic_sweep(&empty, &[3.0]).is_err());
    }
}
