//! Pre- and post-change laws and the log-likelihood ratio they induce.
//!
//! Two families are supported: unit-variance Gaussians indexed by their mean
//! and Poisson laws indexed by their rate. For both, `log ḡ(x)/f(x)` is an
//! affine function of `x`, which [`LogLikelihoodRatio`] evaluates directly
//! instead of dividing densities.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng};
use crate::scalar::Scalar;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Confidence parameter of the DKW band used by [`check_lfl_dominance`].
pub const DOMINANCE_DELTA: f64 = 0.01;

/// Smallest sample size accepted by [`check_lfl_dominance`].
pub const MIN_DOMINANCE_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistributionKind {
    /// `N(mean, 1)`.
    GaussianUnitVar,
    /// `Pois(rate)`, rate > 0.
    Poisson,
}

impl DistributionKind {
    pub fn tag(self) -> &'static str {
        match self {
            DistributionKind::GaussianUnitVar => "norm",
            DistributionKind::Poisson => "pois",
        }
    }
}

/// A univariate law: a kind plus its single parameter (mean or rate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionSpec<T> {
    kind: DistributionKind,
    param: T,
}

impl<T: Scalar> DistributionSpec<T> {
    pub fn new(kind: DistributionKind, param: T) -> Result<Self> {
        if !param.is_finite() {
            return Err(Error::invalid(format!(
                "{} parameter must be finite, got {param}",
                kind.tag()
            )));
        }
        if kind == DistributionKind::Poisson && param <= T::zero() {
            return Err(Error::invalid(format!(
                "Poisson rate must be strictly positive, got {param}"
            )));
        }
        Ok(Self { kind, param })
    }

    pub fn gaussian(mean: T) -> Result<Self> {
        Self::new(DistributionKind::GaussianUnitVar, mean)
    }

    pub fn poisson(rate: T) -> Result<Self> {
        Self::new(DistributionKind::Poisson, rate)
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn param(&self) -> T {
        self.param
    }

    pub fn mean(&self) -> T {
        self.param
    }

    pub fn variance(&self) -> T {
        match self.kind {
            DistributionKind::GaussianUnitVar => T::one(),
            DistributionKind::Poisson => self.param,
        }
    }

    /// Whether `x` lies in the support (every real for the Gaussian, the
    /// nonnegative integers for the Poisson).
    pub fn supports(&self, x: T) -> bool {
        match self.kind {
            DistributionKind::GaussianUnitVar => x.is_finite(),
            DistributionKind::Poisson => is_count(x),
        }
    }

    pub fn log_density(&self, x: T) -> T {
        let xf = x.as_f64();
        let p = self.param.as_f64();
        let v = match self.kind {
            DistributionKind::GaussianUnitVar => -0.5 * (xf - p) * (xf - p) - LN_SQRT_2PI,
            DistributionKind::Poisson => {
                if !is_count(x) {
                    f64::NEG_INFINITY
                } else {
                    xf * p.ln() - p - ln_factorial(xf)
                }
            }
        };
        T::of(v)
    }

    /// Density (Gaussian) or probability mass (Poisson).
    pub fn density(&self, x: T) -> T {
        self.log_density(x).exp()
    }

    /// Pre-built sampler; cheaper than [`DistributionSpec::sample`] in loops.
    pub fn sampler(&self) -> Sampler<T> {
        let inner = match self.kind {
            DistributionKind::GaussianUnitVar => SamplerInner::Gaussian {
                mean: self.param.as_f64(),
            },
            DistributionKind::Poisson => SamplerInner::Poisson(
                Poisson::new(self.param.as_f64()).expect("rate validated at construction"),
            ),
        };
        Sampler {
            inner,
            _scalar: std::marker::PhantomData,
        }
    }

    /// One draw. Deterministic given the generator state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        self.sampler().sample(rng)
    }
}

impl<T: Scalar> fmt::Display for DistributionSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.tag(), self.param)
    }
}

/// Parses the compact `kind:param` syntax, e.g. `norm:0.5` or `pois:2`.
impl<T: Scalar> FromStr for DistributionSpec<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = s.trim().split_once(':').ok_or_else(|| {
            Error::invalid(format!("expected `kind:param` (e.g. `pois:2`), got `{s}`"))
        })?;
        let kind = parse_kind(kind)?;
        let param: f64 = param
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad distribution parameter in `{s}`")))?;
        Self::new(kind, T::of(param))
    }
}

fn parse_kind(tag: &str) -> Result<DistributionKind> {
    match tag.trim().to_ascii_lowercase().as_str() {
        "norm" | "normal" | "gauss" | "gaussian" => Ok(DistributionKind::GaussianUnitVar),
        "pois" | "poisson" => Ok(DistributionKind::Poisson),
        other => Err(Error::invalid(format!(
            "unknown distribution kind `{other}` (expected `norm` or `pois`)"
        ))),
    }
}

fn is_count<T: Scalar>(x: T) -> bool {
    x.is_finite() && x >= T::zero() && x.fract() == T::zero()
}

fn ln_factorial(k: f64) -> f64 {
    if k < 1.0e15 {
        statrs::function::factorial::ln_factorial(k as u64)
    } else {
        statrs::function::gamma::ln_gamma(k + 1.0)
    }
}

#[derive(Debug, Clone)]
enum SamplerInner {
    Gaussian { mean: f64 },
    Poisson(Poisson<f64>),
}

/// Reusable sampler for one [`DistributionSpec`].
#[derive(Debug, Clone)]
pub struct Sampler<T> {
    inner: SamplerInner,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar> Sampler<T> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let v = match &self.inner {
            SamplerInner::Gaussian { mean } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + z
            }
            SamplerInner::Poisson(p) => p.sample(rng),
        };
        T::of(v)
    }
}

/// `x ↦ log ḡ(x)/f(x)` for a fixed pair of laws of the same kind, stored as
/// `slope * x + intercept`.
///
/// Gaussian `f = N(a,1)`, `ḡ = N(b,1)`: slope `b - a`, intercept `-(b² - a²)/2`.
/// Poisson `f = Pois(λ₀)`, `ḡ = Pois(λ̄)`: slope `ln(λ̄/λ₀)`, intercept `λ₀ - λ̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihoodRatio<T> {
    f: DistributionSpec<T>,
    gbar: DistributionSpec<T>,
    slope: T,
    intercept: T,
}

impl<T: Scalar> LogLikelihoodRatio<T> {
    pub fn new(f: DistributionSpec<T>, gbar: DistributionSpec<T>) -> Result<Self> {
        same_kind(&f, &gbar)?;
        let (a, b) = (f.param, gbar.param);
        let half = T::of(0.5);
        let (slope, intercept) = match f.kind {
            DistributionKind::GaussianUnitVar => (b - a, -(b * b - a * a) * half),
            DistributionKind::Poisson => ((b / a).ln(), a - b),
        };
        Ok(Self {
            f,
            gbar,
            slope,
            intercept,
        })
    }

    pub fn pre_change(&self) -> DistributionSpec<T> {
        self.f
    }

    pub fn lfl(&self) -> DistributionSpec<T> {
        self.gbar
    }

    pub fn slope(&self) -> T {
        self.slope
    }

    pub fn intercept(&self) -> T {
        self.intercept
    }

    /// Evaluates without checking the support.
    #[inline]
    pub fn eval(&self, x: T) -> T {
        self.slope * x + self.intercept
    }

    pub fn eval_checked(&self, x: T) -> Result<T> {
        if !self.f.supports(x) {
            return Err(Error::invalid(format!(
                "observation {x} is outside the support of {}",
                self.f
            )));
        }
        Ok(self.eval(x))
    }

    /// `E[log ḡ(X)/f(X)]` for `X ~ law`.
    pub fn mean_under(&self, law: &DistributionSpec<T>) -> T {
        self.slope * law.mean() + self.intercept
    }

    pub fn variance_under(&self, law: &DistributionSpec<T>) -> T {
        self.slope * self.slope * law.variance()
    }
}

fn same_kind<T: Scalar>(p: &DistributionSpec<T>, q: &DistributionSpec<T>) -> Result<()> {
    if p.kind != q.kind {
        return Err(Error::invalid(format!(
            "laws must be of the same kind, got {p} and {q}"
        )));
    }
    Ok(())
}

/// `log ḡ(x)/f(x)` in closed form.
pub fn log_likelihood_ratio<T: Scalar>(
    f: &DistributionSpec<T>,
    gbar: &DistributionSpec<T>,
    x: T,
) -> Result<T> {
    LogLikelihoodRatio::new(*f, *gbar)?.eval_checked(x)
}

/// `D_KL(p ‖ q)` in closed form.
pub fn kl_divergence<T: Scalar>(p: &DistributionSpec<T>, q: &DistributionSpec<T>) -> Result<T> {
    same_kind(p, q)?;
    let (a, b) = (p.param, q.param);
    let kl = match p.kind {
        DistributionKind::GaussianUnitVar => (a - b) * (a - b) * T::of(0.5),
        DistributionKind::Poisson => a * (a / b).ln() - a + b,
    };
    // The Poisson form can round a hair below zero for nearly equal rates.
    Ok(kl.max(T::zero()))
}

/// A post-change family with a stochastically smallest member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PostChangeFamily<T> {
    /// `{N(μ, 1) : μ ≥ bound}`.
    GaussianMeanAtLeast(T),
    /// `{Pois(λ) : λ ≥ bound}`.
    PoissonRateAtLeast(T),
    /// A family known only through its LFL, supplied by the caller.
    ExplicitLfl(DistributionSpec<T>),
}

impl<T: Scalar> PostChangeFamily<T> {
    pub fn kind(&self) -> DistributionKind {
        match self {
            PostChangeFamily::GaussianMeanAtLeast(_) => DistributionKind::GaussianUnitVar,
            PostChangeFamily::PoissonRateAtLeast(_) => DistributionKind::Poisson,
            PostChangeFamily::ExplicitLfl(s) => s.kind,
        }
    }

    pub fn bound(&self) -> T {
        match self {
            PostChangeFamily::GaussianMeanAtLeast(b) | PostChangeFamily::PoissonRateAtLeast(b) => {
                *b
            }
            PostChangeFamily::ExplicitLfl(s) => s.param,
        }
    }

    /// Membership. For an explicit LFL only the kind can be checked.
    pub fn contains(&self, g: &DistributionSpec<T>) -> bool {
        if g.kind != self.kind() {
            return false;
        }
        match self {
            PostChangeFamily::GaussianMeanAtLeast(b) | PostChangeFamily::PoissonRateAtLeast(b) => {
                g.param >= *b
            }
            PostChangeFamily::ExplicitLfl(_) => true,
        }
    }

    pub fn lfl(&self) -> Result<DistributionSpec<T>> {
        lfl_of_family(self)
    }
}

impl<T: Scalar> fmt::Display for PostChangeFamily<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PostChangeFamily::GaussianMeanAtLeast(b) => write!(f, "norm>={b}"),
            PostChangeFamily::PoissonRateAtLeast(b) => write!(f, "pois>={b}"),
            PostChangeFamily::ExplicitLfl(s) => write!(f, "{s}"),
        }
    }
}

/// Parses `norm>=0.5`, `pois>=1`, or a plain law (`pois:2`) taken as an
/// explicit LFL.
impl<T: Scalar> FromStr for PostChangeFamily<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some((kind, bound)) = s.split_once(">=") {
            let bound: f64 = bound
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad family bound in `{s}`")))?;
            let bound = T::of(bound);
            let family = match parse_kind(kind)? {
                DistributionKind::GaussianUnitVar => PostChangeFamily::GaussianMeanAtLeast(bound),
                DistributionKind::Poisson => PostChangeFamily::PoissonRateAtLeast(bound),
            };
            family.lfl()?;
            Ok(family)
        } else {
            Ok(PostChangeFamily::ExplicitLfl(s.parse()?))
        }
    }
}

/// The least favorable member of `family`.
pub fn lfl_of_family<T: Scalar>(family: &PostChangeFamily<T>) -> Result<DistributionSpec<T>> {
    match family {
        PostChangeFamily::GaussianMeanAtLeast(b) => DistributionSpec::gaussian(*b),
        PostChangeFamily::PoissonRateAtLeast(b) => DistributionSpec::poisson(*b),
        PostChangeFamily::ExplicitLfl(s) => Ok(*s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LlrSource<T> {
    /// `X ~ f`.
    PreChange,
    /// `X ~` the post-change law with the given parameter.
    PostChange(T),
}

/// One realization of `log ḡ(X)/f(X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrSample<T> {
    pub value: T,
    pub source: LlrSource<T>,
}

/// Draws `n` log-likelihood ratios with `X ~ law`.
pub fn draw_llr_samples<T: Scalar, R: Rng + ?Sized>(
    llr: &LogLikelihoodRatio<T>,
    law: &DistributionSpec<T>,
    n: usize,
    rng: &mut R,
) -> Vec<LlrSample<T>> {
    let source = if *law == llr.f {
        LlrSource::PreChange
    } else {
        LlrSource::PostChange(law.param)
    };
    let sampler = law.sampler();
    (0..n)
        .map(|_| LlrSample {
            value: llr.eval(sampler.sample(rng)),
            source,
        })
        .collect()
}

/// Outcome of an empirical stochastic-dominance check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceReport<T> {
    pub holds: bool,
    /// `sup_t [P̂(Z ≥ t | X~ḡ) - P̂(Z ≥ t | X~g)]`, floored at zero.
    pub max_cdf_violation: T,
    /// DKW slack a violation must exceed to count.
    pub slack: T,
    /// Closed-form `E[Z]` with `X ~ g`.
    pub mean_under_g: T,
    /// Closed-form `E[Z]` with `X ~ ḡ`.
    pub mean_under_lfl: T,
    pub mean_order_holds: bool,
}

/// Checks that `log ḡ(X)/f(X)` under `g` stochastically dominates the same
/// statistic under `ḡ`.
///
/// Both samples come from one generator stream, so `g = ḡ` yields identical
/// samples and a violation of exactly zero.
pub fn check_lfl_dominance<T: Scalar>(
    family: &PostChangeFamily<T>,
    f: &DistributionSpec<T>,
    g: &DistributionSpec<T>,
    n_samples: usize,
    seed: u64,
) -> Result<DominanceReport<T>> {
    if n_samples < MIN_DOMINANCE_SAMPLES {
        return Err(Error::invalid(format!(
            "dominance check needs at least {MIN_DOMINANCE_SAMPLES} samples, got {n_samples}"
        )));
    }
    if !family.contains(g) {
        return Err(Error::invalid(format!("{g} is not a member of family {family}")));
    }
    let gbar = lfl_of_family(family)?;
    let llr = LogLikelihoodRatio::new(*f, gbar)?;

    let draw = |law: &DistributionSpec<T>| -> Vec<f64> {
        let mut rng = stream_rng(seed, purpose::DOMINANCE, 0);
        let mut z: Vec<f64> = draw_llr_samples(&llr, law, n_samples, &mut rng)
            .into_iter()
            .map(|s| s.value.as_f64())
            .collect();
        z.sort_by(f64::total_cmp);
        z
    };
    let under_g = draw(g);
    let under_lfl = draw(&gbar);

    let n = n_samples as f64;
    let survival = |sorted: &[f64], t: f64| -> f64 {
        let below = sorted.partition_point(|&z| z < t);
        (sorted.len() - below) as f64 / n
    };
    let violation = under_g
        .iter()
        .chain(&under_lfl)
        .map(|&t| survival(&under_lfl, t) - survival(&under_g, t))
        .fold(0.0_f64, f64::max);
    let slack = 2.0 * ((2.0 / DOMINANCE_DELTA).ln() / (2.0 * n)).sqrt();

    let mean_under_g = llr.mean_under(g);
    let mean_under_lfl = llr.mean_under(&gbar);
    Ok(DominanceReport {
        holds: violation <= slack,
        max_cdf_violation: T::of(violation),
        slack: T::of(slack),
        mean_under_g,
        mean_under_lfl,
        mean_order_holds: mean_under_g >= mean_under_lfl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Moments;
    use proptest::prelude::*;

    fn n(m: f64) -> DistributionSpec<f64> {
        DistributionSpec::gaussian(m).unwrap()
    }

    fn p(r: f64) -> DistributionSpec<f64> {
        DistributionSpec::poisson(r).unwrap()
    }

    // Independent oracles: log-density differences, quadrature, and series.

    fn simpson(a: f64, b: f64, steps: usize, g: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / steps as f64;
        let mut s = g(a) + g(b);
        for i in 1..steps {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(x);
        }
        s * h / 3.0
    }

    fn gaussian_pdf(m: f64, x: f64) -> f64 {
        (-(x - m) * (x - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn kl_gaussian_quadrature(mp: f64, mq: f64) -> f64 {
        simpson(mp - 20.0, mp + 20.0, 20_000, |x| {
            let (px, qx) = (gaussian_pdf(mp, x), gaussian_pdf(mq, x));
            if px == 0.0 {
                0.0
            } else {
                px * (px / qx).ln()
            }
        })
    }

    fn poisson_pmf(r: f64, k: u64) -> f64 {
        let mut lf = 0.0;
        for j in 2..=k {
            lf += (j as f64).ln();
        }
        (k as f64 * r.ln() - r - lf).exp()
    }

    fn kl_poisson_series(rp: f64, rq: f64) -> f64 {
        let mut total = 0.0;
        let mut k = 0u64;
        loop {
            let (pk, qk) = (poisson_pmf(rp, k), poisson_pmf(rq, k));
            let term = if pk == 0.0 { 0.0 } else { pk * (pk / qk).ln() };
            total += term;
            if k as f64 > 2.0 * rp + 10.0 && (term.abs() * k as f64) < 1e-12 {
                break;
            }
            k += 1;
        }
        total
    }

    #[test]
    fn llr_gaussian_examples() {
        let (f, g) = (n(0.0), n(0.5));
        let v = log_likelihood_ratio(&f, &g, 0.5).unwrap();
        assert!((v - 0.125).abs() < 1e-15);
        let oracle = g.log_density(0.5) - f.log_density(0.5);
        assert!((v - oracle).abs() < 1e-12);
        assert_eq!(log_likelihood_ratio(&f, &g, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn llr_poisson_example() {
        let (f, g) = (p(0.5), p(1.0));
        let v = log_likelihood_ratio(&f, &g, 0.0).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
        let oracle = g.log_density(0.0) - f.log_density(0.0);
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn llr_rejects_bad_inputs() {
        assert!(matches!(
            log_likelihood_ratio(&n(0.0), &p(1.0), 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(log_likelihood_ratio(&p(1.0), &p(2.0), 1.5).is_err());
        assert!(log_likelihood_ratio(&p(1.0), &p(2.0), -1.0).is_err());
    }

    #[test]
    fn llr_stays_finite_at_extreme_observations() {
        let v = log_likelihood_ratio(&n(0.0), &n(0.5), 1e6).unwrap();
        assert!(v.is_finite());
        assert!((v - (0.5e6 - 0.125)).abs() < 1e-6);
        // density quotient would be 0/0 here
        assert_eq!(n(0.5).density(1e6), 0.0);
    }

    #[test]
    fn kl_examples_against_oracles() {
        let kl = kl_divergence(&n(0.5), &n(0.0)).unwrap();
        assert!((kl - 0.125).abs() < 1e-15);
        assert!((kl - kl_gaussian_quadrature(0.5, 0.0)).abs() < 1e-9);

        assert_eq!(kl_divergence(&p(2.0), &p(2.0)).unwrap(), 0.0);
        assert_eq!(kl_divergence(&n(1.0), &n(1.0)).unwrap(), 0.0);

        let kl = kl_divergence(&p(1.0), &p(0.5)).unwrap();
        assert!((kl - 0.193_147_180_559_945_3).abs() < 1e-12);
        assert!((kl - kl_poisson_series(1.0, 0.5)).abs() < 1e-12);

        assert!(kl_divergence(&p(1.0), &n(1.0)).is_err());
    }

    #[test]
    fn lfl_examples() {
        assert_eq!(
            lfl_of_family(&PostChangeFamily::GaussianMeanAtLeast(0.5)).unwrap(),
            n(0.5)
        );
        assert_eq!(
            lfl_of_family(&PostChangeFamily::PoissonRateAtLeast(1.0)).unwrap(),
            p(1.0)
        );
        assert_eq!(
            lfl_of_family(&PostChangeFamily::ExplicitLfl(p(2.0))).unwrap(),
            p(2.0)
        );
        assert!(lfl_of_family(&PostChangeFamily::PoissonRateAtLeast(0.0)).is_err());
    }

    #[test]
    fn lfl_is_member_of_family() {
        for fam in [
            PostChangeFamily::GaussianMeanAtLeast(-1.0),
            PostChangeFamily::GaussianMeanAtLeast(0.5),
            PostChangeFamily::PoissonRateAtLeast(1.0),
            PostChangeFamily::ExplicitLfl(p(3.0)),
        ] {
            let lfl = fam.lfl().unwrap();
            assert!(fam.contains(&lfl));
            assert_eq!(lfl.param(), fam.bound());
        }
    }

    #[test]
    fn construction_validity() {
        assert!(DistributionSpec::poisson(0.0).is_err());
        assert!(DistributionSpec::poisson(-1.0).is_err());
        assert!(DistributionSpec::gaussian(f64::NAN).is_err());
        assert!(DistributionSpec::<f64>::gaussian(-3.0).is_ok());
    }

    #[test]
    fn parse_and_display() {
        let d: DistributionSpec<f64> = "pois:2".parse().unwrap();
        assert_eq!(d, p(2.0));
        let d: DistributionSpec<f64> = "norm:0.5".parse().unwrap();
        assert_eq!(d.to_string(), "norm:0.5");
        assert!("pois:0".parse::<DistributionSpec<f64>>().is_err());
        assert!("beta:1".parse::<DistributionSpec<f64>>().is_err());
        assert!("pois".parse::<DistributionSpec<f64>>().is_err());
        let fam: PostChangeFamily<f64> = "norm>=0.5".parse().unwrap();
        assert_eq!(fam, PostChangeFamily::GaussianMeanAtLeast(0.5));
        let fam: PostChangeFamily<f64> = "pois:2".parse().unwrap();
        assert_eq!(fam, PostChangeFamily::ExplicitLfl(p(2.0)));
        assert!("pois>=0".parse::<PostChangeFamily<f64>>().is_err());
    }

    #[test]
    fn densities_normalize() {
        for m in [-2.0, 0.0, 0.5, 3.0] {
            let d = n(m);
            let total = simpson(m - 15.0, m + 15.0, 30_000, |x| d.density(x));
            assert!((total - 1.0).abs() < 1e-6, "N({m},1) integrates to {total}");
        }
        for r in [0.5, 1.0, 2.0, 30.0] {
            let d = p(r);
            let total: f64 = (0..400).map(|k| d.density(k as f64)).sum();
            assert!((total - 1.0).abs() < 1e-6, "Pois({r}) sums to {total}");
        }
    }

    #[test]
    fn poisson_draws_are_counts_and_reproducible() {
        let d = p(1.7);
        let mut rng = stream_rng(11, purpose::OBSERVATIONS, 0);
        for _ in 0..1000 {
            let x = d.sample(&mut rng);
            assert!(x >= 0.0 && x.fract() == 0.0);
        }
        let a = d.sample(&mut stream_rng(3, 1, 1));
        let b = d.sample(&mut stream_rng(3, 1, 1));
        assert_eq!(a, b);
        let a = n(0.5).sample(&mut stream_rng(3, 1, 1));
        let b = n(0.5).sample(&mut stream_rng(3, 1, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_sample_mean() {
        let s = n(0.5).sampler();
        let mut rng = stream_rng(5, purpose::OBSERVATIONS, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| s.sample(&mut rng)).collect();
        let m = Moments::of(&xs).mean;
        assert!((m - 0.5).abs() < 0.01, "{m}");
    }

    #[test]
    fn expected_llr_matches_kl_both_ways() {
        let cases = [(n(0.0), n(0.5)), (p(0.5), p(1.0)), (p(1.0), p(2.0))];
        for (i, (f, g)) in cases.iter().enumerate() {
            let llr = LogLikelihoodRatio::new(*f, *g).unwrap();
            let mut rng = stream_rng(100 + i as u64, purpose::OBSERVATIONS, 0);
            for (law, expected) in [
                (f, -kl_divergence(f, g).unwrap()),
                (g, kl_divergence(g, f).unwrap()),
            ] {
                let z: Vec<f64> = draw_llr_samples(&llr, law, 1_000_000, &mut rng)
                    .iter()
                    .map(|s| s.value)
                    .collect();
                let m = Moments::of(&z);
                assert!(
                    (m.mean - expected).abs() <= 3.0 * m.std_error(),
                    "{f} vs {g} under {law}: {} vs {expected}",
                    m.mean
                );
            }
        }
    }

    #[test]
    fn dominance_examples() {
        let fam = PostChangeFamily::GaussianMeanAtLeast(0.5);
        let r = check_lfl_dominance(&fam, &n(0.0), &n(1.0), 10_000, 1).unwrap();
        assert!(r.holds && r.mean_order_holds);
        assert!((r.mean_under_g - 0.375).abs() < 1e-15);
        assert!((r.mean_under_lfl - 0.125).abs() < 1e-15);

        let r = check_lfl_dominance(&fam, &n(0.0), &n(0.5), 10_000, 1).unwrap();
        assert!(r.holds);
        assert_eq!(r.max_cdf_violation, 0.0);

        let fam = PostChangeFamily::PoissonRateAtLeast(1.0);
        let r = check_lfl_dominance(&fam, &p(0.5), &p(1.5), 10_000, 1).unwrap();
        assert!(r.holds && r.mean_order_holds);
    }

    #[test]
    fn dominance_errors() {
        let fam = PostChangeFamily::GaussianMeanAtLeast(0.5);
        assert!(check_lfl_dominance(&fam, &n(0.0), &n(0.2), 10_000, 1).is_err());
        assert!(check_lfl_dominance(&fam, &n(0.0), &p(1.0), 10_000, 1).is_err());
        assert!(check_lfl_dominance(&fam, &n(0.0), &n(1.0), 999, 1).is_err());
    }

    #[test]
    fn dominance_flags_a_member_below_the_lfl() {
        // Pretend N(1,1) is least favorable and test N(0.2,1) against it.
        let fam = PostChangeFamily::ExplicitLfl(n(1.0));
        let r = check_lfl_dominance(&fam, &n(0.0), &n(0.2), 10_000, 2).unwrap();
        assert!(!r.holds);
        assert!(!r.mean_order_holds);
    }

    #[test]
    fn generic_over_f32() {
        let f = DistributionSpec::<f32>::gaussian(0.0).unwrap();
        let g = DistributionSpec::<f32>::gaussian(0.5).unwrap();
        let v = log_likelihood_ratio(&f, &g, 0.5f32).unwrap();
        assert!((v - 0.125).abs() < 1e-7);
        assert!((kl_divergence(&g, &f).unwrap() - 0.125).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_iff_equal(a in -3.0f64..3.0, b in -3.0f64..3.0,
                                              r in 0.05f64..20.0, s in 0.05f64..20.0) {
            let kg = kl_divergence(&n(a), &n(b)).unwrap();
            let kp = kl_divergence(&p(r), &p(s)).unwrap();
            prop_assert!(kg >= 0.0 && kp >= 0.0);
            prop_assert_eq!(kg == 0.0, a == b);
            if r != s { prop_assert!(kp > 0.0); }
            prop_assert_eq!(kl_divergence(&p(r), &p(r)).unwrap(), 0.0);
        }

        #[test]
        fn llr_matches_log_density_difference(a in -3.0f64..3.0, b in -3.0f64..3.0,
                                              x in -10.0f64..10.0,
                                              r in 0.05f64..20.0, s in 0.05f64..20.0,
                                              k in 0u32..200) {
            let v = log_likelihood_ratio(&n(a), &n(b), x).unwrap();
            let oracle = n(b).log_density(x) - n(a).log_density(x);
            prop_assert!((v - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
            let k = f64::from(k);
            let v = log_likelihood_ratio(&p(r), &p(s), k).unwrap();
            let oracle = p(s).log_density(k) - p(r).log_density(k);
            prop_assert!((v - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
        }
    }
}
