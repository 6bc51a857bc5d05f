//! Experiment config files for `evaluate` and `sweep`.
//!
//! ```toml
//! seed = 20240101
//! trials = 5000
//! far_max_steps = 10000000    # optional
//! delay_max_steps = 100000    # optional
//!
//! [model]
//! f = "norm:0"
//! family = "norm>=0.5"
//! g = "norm:1"                # true post-change law, must lie in the family
//!
//! [[detector]]
//! kind = "robust-cusum"
//!
//! [[detector]]
//! kind = "rde"
//! beta = 0.5                  # mu = beta/(1-beta) * KL(f || lfl); or give mu
//! h = 10
//!
//! [[detector]]
//! kind = "fractional"
//! prob = 0.5
//!
//! [grid]
//! thresholds = [2.0, 4.0, 6.0]   # sweep
//! target_far = [1e-2, 1e-3]      # evaluate
//! bracket = [0.5, 9.0]
//! tol = 0.02
//!
//! [pdc]                        # optional
//! horizon = 10000
//! trials = 1000
//! renewal_cycles = 100000
//! ```
//!
//! Errors name the offending key path, e.g. `detector[1].h`.

use std::fmt;

use rdcusum::evaluation::{PdcOptions, SweepSpec, DEFAULT_FAR_MAX_STEPS};
use rdcusum::{mu_asymptotic, Family64, Law64, Params64};
use toml::{Table, Value};

#[derive(Debug)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key `{}`: {}", self.path, self.message)
    }
}

impl std::error::Error for SchemaError {}

type Result<T> = std::result::Result<T, SchemaError>;

fn err<T>(path: &str, message: impl Into<String>) -> Result<T> {
    Err(SchemaError {
        path: path.to_string(),
        message: message.into(),
    })
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// A table together with its key path, for error messages.
struct Node<'a> {
    table: &'a Table,
    path: String,
}

impl<'a> Node<'a> {
    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.table.keys() {
            if !allowed.contains(&key.as_str()) {
                return err(&join(&self.path, key), format!("unknown key; expected one of {allowed:?}"));
            }
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.table.get(key)
    }

    fn table(&self, key: &str) -> Result<Option<Node<'a>>> {
        let path = join(&self.path, key);
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Node { table: t, path })),
            Some(_) => err(&path, "expected a table"),
        }
    }

    fn req_table(&self, key: &str) -> Result<Node<'a>> {
        self.table(key)?
            .map_or_else(|| err(&join(&self.path, key), "missing table"), Ok)
    }

    fn str(&self, key: &str) -> Result<Option<&'a str>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => err(&join(&self.path, key), "expected a string"),
        }
    }

    fn req_str(&self, key: &str) -> Result<&'a str> {
        self.str(key)?
            .map_or_else(|| err(&join(&self.path, key), "missing"), Ok)
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => as_float(v, &join(&self.path, key)).map(Some),
        }
    }

    fn count(&self, key: &str) -> Result<Option<u64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i > 0 => Ok(Some(*i as u64)),
            Some(_) => err(&join(&self.path, key), "expected a positive integer"),
        }
    }

    fn req_count(&self, key: &str) -> Result<u64> {
        self.count(key)?
            .map_or_else(|| err(&join(&self.path, key), "missing"), Ok)
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let path = join(&self.path, key);
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| as_float(v, &format!("{path}[{i}]")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => err(&path, "expected an array of numbers"),
        }
    }
}

fn as_float(v: &Value, path: &str) -> Result<f64> {
    match v {
        Value::Float(x) if x.is_finite() => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => err(path, "expected a finite number"),
    }
}

fn parse_with<T: std::str::FromStr>(node: &Node, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = node.req_str(key)?;
    raw.parse()
        .map_err(|e: T::Err| SchemaError {
            path: join(&node.path, key),
            message: e.to_string(),
        })
}

/// Which grid a config must carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Fixed threshold grid (`grid.thresholds`).
    Sweep,
    /// Thresholds calibrated to each `grid.target_far`.
    Evaluate,
}

#[derive(Debug, Clone)]
pub struct ExperimentFile {
    pub spec: SweepSpec,
    pub thresholds: Vec<f64>,
    pub target_far: Vec<f64>,
    pub bracket: (f64, f64),
    pub tol: f64,
}

pub fn parse(text: &str, mode: Mode, seed_override: Option<u64>) -> std::result::Result<ExperimentFile, Box<dyn std::error::Error + Send + Sync>> {
    let table: Table = text.parse()?;
    Ok(from_table(&table, mode, seed_override)?)
}

fn from_table(table: &Table, mode: Mode, seed_override: Option<u64>) -> Result<ExperimentFile> {
    let root = Node {
        table,
        path: String::new(),
    };
    root.check_keys(&["seed", "trials", "far_max_steps", "delay_max_steps", "model", "detector", "grid", "pdc"])?;

    let seed = match (seed_override, root.raw("seed")) {
        (Some(s), _) => s,
        (None, Some(Value::Integer(i))) if *i >= 0 => *i as u64,
        (None, Some(_)) => return err("seed", "expected a nonnegative integer"),
        (None, None) => return err("seed", "missing (or pass --seed)"),
    };
    let trials = root.req_count("trials")? as usize;
    let far_max_steps = root.count("far_max_steps")?.unwrap_or(DEFAULT_FAR_MAX_STEPS);
    let delay_max_steps = root.count("delay_max_steps")?.unwrap_or(100_000);

    let model = root.req_table("model")?;
    model.check_keys(&["f", "family", "g"])?;
    let f: Law64 = parse_with(&model, "f")?;
    let family: Family64 = parse_with(&model, "family")?;
    let true_g: Law64 = parse_with(&model, "g")?;
    if family.kind() != f.kind() {
        return err("model.family", format!("{family} does not match f = {f}"));
    }
    if !family.contains(&true_g) {
        return err("model.g", format!("{true_g} is not in {family}"));
    }
    let lfl = family.lfl().map_err(|e| SchemaError {
        path: "model.family".into(),
        message: e.to_string(),
    })?;

    let detectors = match root.raw("detector") {
        None => return err("detector", "missing; list at least one [[detector]]"),
        Some(Value::Array(items)) if items.is_empty() => {
            return err("detector", "empty detector list")
        }
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let path = format!("detector[{i}]");
                match v {
                    Value::Table(t) => detector(&Node { table: t, path }, &f, &lfl),
                    _ => err(&path, "expected a table"),
                }
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return err("detector", "expected an array of tables ([[detector]])"),
    };

    let grid = root.req_table("grid")?;
    grid.check_keys(&["thresholds", "target_far", "bracket", "tol"])?;
    let thresholds = grid.floats("thresholds")?.unwrap_or_default();
    let target_far = grid.floats("target_far")?.unwrap_or_default();
    for (i, a) in thresholds.iter().enumerate() {
        if *a < 0.0 {
            return err(&format!("grid.thresholds[{i}]"), "thresholds must be nonnegative");
        }
    }
    for (i, t) in target_far.iter().enumerate() {
        if !(*t > 0.0 && *t < 1.0) {
            return err(&format!("grid.target_far[{i}]"), "target FAR must lie in (0, 1)");
        }
    }
    let bracket = match grid.floats("bracket")? {
        None => (0.0, 12.0),
        Some(b) if b.len() == 2 && b[0] >= 0.0 && b[1] > b[0] => (b[0], b[1]),
        Some(_) => return err("grid.bracket", "expected [low, high] with 0 <= low < high"),
    };
    let tol = grid.float("tol")?.unwrap_or(0.02);
    if !(tol > 0.0) {
        return err("grid.tol", "tolerance must be positive");
    }
    match mode {
        Mode::Sweep if thresholds.is_empty() => {
            return err("grid.thresholds", "sweep needs a nonempty threshold grid")
        }
        Mode::Evaluate if target_far.is_empty() => {
            return err("grid.target_far", "evaluate needs a nonempty target FAR grid")
        }
        _ => {}
    }

    let mut pdc = PdcOptions::default();
    if let Some(node) = root.table("pdc")? {
        node.check_keys(&["horizon", "trials", "renewal_cycles"])?;
        pdc.horizon = node.count("horizon")?.unwrap_or(pdc.horizon);
        pdc.trials = node.count("trials")?.map_or(pdc.trials, |n| n as usize);
        pdc.renewal_cycles = node.count("renewal_cycles")?.map_or(pdc.renewal_cycles, |n| n as usize);
        if pdc.horizon < 20 {
            return err("pdc.horizon", "horizon must be at least 20");
        }
    }

    Ok(ExperimentFile {
        spec: SweepSpec {
            f,
            family,
            true_g,
            detectors,
            n_trials: trials,
            far_max_steps,
            delay_max_steps,
            base_seed: seed,
            pdc,
        },
        thresholds,
        target_far,
        bracket,
        tol,
    })
}

fn detector(node: &Node, f: &Law64, lfl: &Law64) -> Result<Params64> {
    let kind = node.req_str("kind")?;
    let bad = |key: &str, e: rdcusum::Error| SchemaError {
        path: join(&node.path, key),
        message: e.to_string(),
    };
    match kind {
        "robust-cusum" => {
            node.check_keys(&["kind"])?;
            Params64::robust_cusum(0.0).map_err(|e| bad("kind", e))
        }
        "fractional" => {
            node.check_keys(&["kind", "prob"])?;
            let prob = node.float("prob")?.unwrap_or(0.5);
            Params64::fractional_sampling(0.0, prob).map_err(|e| bad("prob", e))
        }
        "rde" => {
            node.check_keys(&["kind", "mu", "beta", "h"])?;
            let mu = match (node.float("mu")?, node.float("beta")?) {
                (Some(_), Some(_)) => return err(&node.path, "give either `mu` or `beta`, not both"),
                (Some(mu), None) => mu,
                (None, Some(beta)) => mu_asymptotic(beta, f, lfl).map_err(|e| bad("beta", e))?,
                (None, None) => return err(&node.path, "rde detector needs `mu` or `beta`"),
            };
            let h = node.float("h")?.unwrap_or(10.0);
            Params64::rde_cusum(0.0, mu, h).map_err(|e| bad("h", e))
        }
        other => err(
            &join(&node.path, "kind"),
            format!("unknown kind `{other}`; expected rde, robust-cusum or fractional"),
        ),
    }
}
