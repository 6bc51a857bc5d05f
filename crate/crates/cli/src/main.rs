//! `rdcusum`: streaming change detection on CSV series, threshold design and
//! Monte-Carlo evaluation.
//!
//! Exit codes: 0 success (for `detect`: an alarm was raised), 2 `detect`
//! finished without an alarm, 1 any error.

mod config;
mod manifest;
mod table;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rdcusum::evaluation::{matched_far_evaluation, operating_characteristic_sweep, with_workers};
use rdcusum::series::{
    add_poisson_noise, format_float, ingest_csv, read_trajectory, require_counts, trajectory_rows,
    verify_trajectory, write_trajectory, ColumnSpec,
};
use rdcusum::{
    estimate_appendix_constants, mu_asymptotic, mu_for_pdc, run_detector_with, threshold_for_far,
    Detector, DistributionKind, Law64, Params64,
};
use rdcusum::distributions::LogLikelihoodRatio;

use manifest::{hash_file, now_unix, with_explicit_seed, RunManifest};

const SEED_ENV: &str = "RDCUSUM_SEED";

#[derive(Parser, Debug)]
#[command(name = "rdcusum", version, about = "Robust, data-efficient CUSUM change detection")]
struct Cli {
    /// Worker threads for Monte-Carlo work (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stream a CSV series through a detector.
    Detect(DetectArgs),
    /// Threshold and observation-control design for FAR/PDC budgets.
    Design(DesignArgs),
    /// Operating characteristics at thresholds calibrated to target FARs.
    Evaluate(ExperimentArgs),
    /// Operating characteristics over a fixed threshold grid.
    Sweep(ExperimentArgs),
    /// Check a trajectory CSV against the detector invariants.
    Verify(VerifyArgs),
    /// Re-execute a run from its manifest and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Rde,
    RobustCusum,
    Fractional,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "rde")]
    kind: Kind,
    /// Alarm threshold A.
    #[arg(long)]
    threshold: f64,
    /// Climb rate below zero (rde).
    #[arg(long)]
    mu: Option<f64>,
    /// Set mu = beta/(1-beta) * KL(f || gbar) instead of giving --mu (rde).
    #[arg(long, conflicts_with = "mu")]
    beta: Option<f64>,
    /// Floor depth below zero (rde).
    #[arg(long)]
    h: Option<f64>,
    /// Sampling probability (fractional).
    #[arg(long, default_value_t = 0.5)]
    prob: f64,
}

impl PolicyArgs {
    fn params(&self, laws: Option<(&Law64, &Law64)>) -> Result<Params64> {
        Ok(match self.kind {
            Kind::RobustCusum => {
                if self.mu.is_some() || self.h.is_some() || self.beta.is_some() {
                    eprintln!("warning: --kind robust-cusum ignores --mu, --beta and --h");
                }
                Params64::robust_cusum(self.threshold)?
            }
            Kind::Fractional => Params64::fractional_sampling(self.threshold, self.prob)?,
            Kind::Rde => {
                let mu = match (self.mu, self.beta, laws) {
                    (Some(mu), _, _) => mu,
                    (None, Some(beta), Some((f, gbar))) => mu_asymptotic(beta, f, gbar)?,
                    (None, Some(_), None) => bail!("--beta needs --f and --gbar"),
                    (None, None, _) => bail!("--kind rde needs --mu or --beta"),
                };
                Params64::rde_cusum(self.threshold, mu, self.h.unwrap_or(10.0))?
            }
        })
    }
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Input series CSV (header row required).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "index")]
    index_col: String,
    #[arg(long, default_value = "value")]
    value_col: String,
    /// Pre-change law, `kind:param` (e.g. `pois:1`, `norm:0`).
    #[arg(long)]
    f: Law64,
    /// Least favorable post-change law.
    #[arg(long)]
    gbar: Law64,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Add Pois(rate) noise to every value before detection.
    #[arg(long)]
    noise: Option<f64>,
    /// Seed for the noise and the fractional-sampling coin.
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Trajectory CSV (index, sampled, statistic, alarmed).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DesignMode {
    Asymptotic,
    Montecarlo,
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// FAR budget.
    #[arg(long)]
    alpha: f64,
    /// PDC budget.
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    f: Law64,
    #[arg(long)]
    gbar: Law64,
    #[arg(long, default_value_t = 10.0)]
    h: f64,
    #[arg(long, value_enum, default_value = "asymptotic")]
    mode: DesignMode,
    /// Monte-Carlo trials for the constants (montecarlo mode).
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Also write the row to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    /// Operating-characteristic CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Trajectory CSV written by `detect`.
    #[arg(long)]
    trajectory: PathBuf,
    /// Pre-change law, needed only with `--beta`.
    #[arg(long, requires = "gbar")]
    f: Option<Law64>,
    #[arg(long, requires = "f")]
    gbar: Option<Law64>,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the re-created outputs.
    #[arg(long)]
    dir: PathBuf,
}

enum Outcome {
    Success,
    NoAlarm,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(cli, args) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NoAlarm) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<Outcome> {
    let workers = cli.workers;
    with_workers(workers, move || dispatch(cli.command, args))?
}

fn dispatch(command: Command, args: Vec<String>) -> Result<Outcome> {
    match command {
        Command::Detect(a) => detect(a, args),
        Command::Design(a) => design(a, args),
        Command::Evaluate(a) => experiment(a, args, config::Mode::Evaluate),
        Command::Sweep(a) => experiment(a, args, config::Mode::Sweep),
        Command::Verify(a) => verify(a),
        Command::Replay(a) => replay(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn detect(a: DetectArgs, args: Vec<String>) -> Result<Outcome> {
    let started = now_unix();
    let params = a.policy.params(Some((&a.f, &a.gbar)))?;
    let llr = LogLikelihoodRatio::new(a.f, a.gbar)?;
    let columns = ColumnSpec {
        index: a.index_col.clone(),
        value: a.value_col.clone(),
    };
    let mut series = ingest_csv(&a.input, &columns)?;
    if let Some(rate) = a.noise {
        series = add_poisson_noise(&series, rate, a.seed)?;
    }
    if a.f.kind() == DistributionKind::Poisson {
        require_counts(&series).context("Poisson laws need count data")?;
    }
    let detector = Detector::with_coin_seed(params, a.seed);
    let source = series.iter().map(|r| (r.value, llr.eval(r.value)));
    let traj = run_detector_with(detector, source, u64::MAX)?;
    let rows = trajectory_rows(&series, &traj);

    if let Some(out) = &a.out {
        let mut w = create(out)?;
        write_trajectory(&mut w, &rows)?;
        w.flush()?;
        drop(w);
        let m = RunManifest::new("detect", with_explicit_seed(&args, a.seed), a.seed, vec![hash_file(&a.input)?], started);
        m.finish(&[out])?;
    }

    let alarm = traj.stop_time.map(|n| rows[n as usize - 1].index);
    let mut stdout = io::stdout().lock();
    match alarm {
        Some(i) => writeln!(stdout, "detection: {i}")?,
        None => writeln!(stdout, "detection: none")?,
    }
    writeln!(stdout, "samples_used: {}", traj.samples_used)?;
    writeln!(stdout, "steps: {}", rows.len())?;
    Ok(if alarm.is_some() {
        Outcome::Success
    } else {
        Outcome::NoAlarm
    })
}

fn design(a: DesignArgs, args: Vec<String>) -> Result<Outcome> {
    let started = now_unix();
    let threshold = threshold_for_far(a.alpha)?;
    let header = "mode,alpha,beta,h,A,mu_bound,mu_bound_ci,c1,c1_ci,c2,c2_ci,p_negative,trials,seed";
    let row = match a.mode {
        DesignMode::Asymptotic => {
            let mu = mu_asymptotic(a.beta, &a.f, &a.gbar)?;
            format!(
                "asymptotic,{},{},{},{},{},,,,,,,,",
                format_float(a.alpha),
                format_float(a.beta),
                format_float(a.h),
                format_float(threshold),
                format_float(mu),
            )
        }
        DesignMode::Montecarlo => {
            let c = estimate_appendix_constants(&a.f, &a.gbar, a.h, a.trials, a.seed)?;
            let mu = mu_for_pdc(a.beta, &c)?;
            // Independent streams for C1 and C2: relative errors add in quadrature.
            let rel = ((c.c1_ci / c.c1).powi(2) + if c.c2 > 0.0 { (c.c2_ci / c.c2).powi(2) } else { 0.0 }).sqrt();
            format!(
                "montecarlo,{},{},{},{},{},{},{},{},{},{},{},{},{}",
                format_float(a.alpha),
                format_float(a.beta),
                format_float(a.h),
                format_float(threshold),
                format_float(mu),
                format_float(mu * rel),
                format_float(c.c1),
                format_float(c.c1_ci),
                format_float(c.c2),
                format_float(c.c2_ci),
                format_float(c.p_negative),
                a.trials,
                a.seed,
            )
        }
    };
    println!("{header}\n{row}");
    if let Some(out) = &a.out {
        let mut w = create(out)?;
        writeln!(w, "{header}\n{row}")?;
        w.flush()?;
        drop(w);
        RunManifest::new("design", with_explicit_seed(&args, a.seed), a.seed, vec![], started).finish(&[out])?;
    }
    Ok(Outcome::Success)
}

fn experiment(a: ExperimentArgs, args: Vec<String>, mode: config::Mode) -> Result<Outcome> {
    let started = now_unix();
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg = config::parse(&text, mode, a.seed)
        .map_err(|e| anyhow!("{}: {e}", a.config.display()))?;
    let rows = match mode {
        config::Mode::Sweep => operating_characteristic_sweep(&cfg.spec, &cfg.thresholds)?,
        config::Mode::Evaluate => matched_far_evaluation(&cfg.spec, &cfg.target_far, cfg.bracket, cfg.tol)?,
    };
    let mut w = create(&a.out)?;
    table::write_oc_table(&mut w, &cfg.spec, &rows)?;
    w.flush()?;
    drop(w);
    let seed = cfg.spec.base_seed;
    let name = match mode {
        config::Mode::Sweep => "sweep",
        config::Mode::Evaluate => "evaluate",
    };
    RunManifest::new(name, with_explicit_seed(&args, seed), seed, vec![hash_file(&a.config)?], started).finish(&[&a.out])?;
    println!("{} rows written to {}", rows.len(), a.out.display());
    Ok(Outcome::Success)
}

fn verify(a: VerifyArgs) -> Result<Outcome> {
    let params = a.policy.params(a.f.as_ref().zip(a.gbar.as_ref()))?;
    let file = File::open(&a.trajectory).with_context(|| format!("opening {}", a.trajectory.display()))?;
    let rows = read_trajectory(file, &a.trajectory.display().to_string())?;
    let problems = verify_trajectory(&rows, &params);
    if problems.is_empty() {
        println!("ok: {} rows satisfy the {} invariants", rows.len(), params.kind().label());
        Ok(Outcome::Success)
    } else {
        for p in &problems {
            eprintln!("{p}");
        }
        bail!("{} invariant violations in {}", problems.len(), a.trajectory.display())
    }
}

fn replay(a: ReplayArgs) -> Result<Outcome> {
    let m = RunManifest::load(&a.manifest)?;
    for input in &m.inputs {
        let now = hash_file(Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            bail!("input {} changed since the recorded run", input.path);
        }
    }
    let original = m
        .outputs
        .first()
        .ok_or_else(|| anyhow!("manifest lists no outputs"))?;
    let name = Path::new(&original.path)
        .file_name()
        .ok_or_else(|| anyhow!("bad output path {}", original.path))?;
    fs::create_dir_all(&a.dir)?;
    let out = a.dir.join(name);
    let args = manifest::redirect_output(&m.args, &out)?;
    let argv = std::iter::once("rdcusum".to_string()).chain(args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| anyhow!("recorded arguments no longer parse: {e}"))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("refusing to replay a replay");
    }
    // Outcome of the re-run (alarm or not) is irrelevant; only bytes count.
    let _ = dispatch(cli.command, args)?;
    let new = hash_file(&out)?;
    if new.sha256 != original.sha256 {
        bail!("{} differs from the recorded output ({} vs {})", out.display(), new.sha256, original.sha256);
    }
    println!("identical: {} ({})", out.display(), new.sha256);
    Ok(Outcome::Success)
}
