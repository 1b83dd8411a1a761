//! Experiment configuration: a flat `key=value` text format.
//!
//! Blank lines and lines starting with `#` are ignored; list values are
//! comma-separated. Example:
//!
//! ```text
//! sweep=noise_count
//! values=0,200,600,1000
//! m=1000
//! trials=30
//! methods=pmc,l1,lstd
//! mu_grid=3,10
//! q=auto
//! gamma=0.9
//! seed=12345
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

pub const DEFAULT_TRIALS: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NoiseCount,
    SampleCount,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::NoiseCount => "noise_count",
            SweepAxis::SampleCount => "sample_count",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Pmc,
    L1,
    Lstd,
    Ridge,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pmc, Method::L1, Method::Lstd, Method::Ridge];

    pub fn label(self) -> &'static str {
        match self {
            Method::Pmc => "pmc",
            Method::L1 => "l1",
            Method::Lstd => "lstd",
            Method::Ridge => "ridge",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected one of pmc, l1, lstd, ridge)"))
    }
}

/// `τ` grid entry: a fixed value or the smallest `τ` allowed by (C-1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSpec {
    Fixed(f64),
    Smallest,
}

impl fmt::Display for TauSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauSpec::Fixed(t) => write!(f, "{t}"),
            TauSpec::Smallest => f.write_str("smallest"),
        }
    }
}

impl FromStr for TauSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "smallest" => Ok(TauSpec::Smallest),
            t => t
                .parse()
                .map(TauSpec::Fixed)
                .map_err(|_| format!("`{t}` is neither a number nor `smallest`")),
        }
    }
}

/// `q` grid entry: the numerical rank of `ΦᵀΦ` or a fixed dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QSpec {
    Auto,
    Fixed(usize),
}

impl fmt::Display for QSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QSpec::Auto => f.write_str("auto"),
            QSpec::Fixed(q) => write!(f, "{q}"),
        }
    }
}

impl FromStr for QSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "auto" => Ok(QSpec::Auto),
            q => q
                .parse()
                .map(QSpec::Fixed)
                .map_err(|_| format!("`{q}` is neither a nonnegative integer nor `auto`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Approximate policy iteration for `iterations` steps; NMSE of the last estimate.
    Api,
    /// One sampled evaluation of the optimal policy.
    Evaluate,
}

/// Whether the grid point is chosen separately for every sweep value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tuning {
    PerValue,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sweep: SweepAxis,
    pub values: Vec<usize>,
    /// Samples per evaluation when sweeping the noise count.
    pub m: Option<usize>,
    /// Irrelevant features when sweeping the sample count.
    pub n_noise: Option<usize>,
    pub trials: usize,
    pub methods: Vec<Method>,
    /// Shared `μ` grid; `l1_mu_grid` / `pmc_mu_grid` override it per method.
    pub mu_grid: Vec<f64>,
    pub l1_mu_grid: Vec<f64>,
    pub pmc_mu_grid: Vec<f64>,
    pub tau_grid: Vec<TauSpec>,
    pub q_grid: Vec<QSpec>,
    pub ridge_grid: Vec<f64>,
    pub gamma: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Policy-iteration steps in [`Mode::Api`].
    pub iterations: usize,
    pub tol: f64,
    pub max_iters: usize,
    /// Schedule `ε`; `η = (1 − 2ε)/(2β)`. The solver default when absent.
    pub epsilon: Option<f64>,
    /// Start each iterative grid point from the previous one of the same method and trial.
    pub warm_start: bool,
    pub tuning: Tuning,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    /// Record wall-clock times; written as 0 when off.
    pub timing: bool,
    pub output: Option<String>,
    /// Optional file receiving the weights of every emitted row.
    pub weights_out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sweep: SweepAxis::NoiseCount,
            values: Vec::new(),
            m: None,
            n_noise: None,
            trials: DEFAULT_TRIALS,
            methods: Vec::new(),
            mu_grid: Vec::new(),
            l1_mu_grid: Vec::new(),
            pmc_mu_grid: Vec::new(),
            tau_grid: vec![TauSpec::Smallest],
            q_grid: vec![QSpec::Auto],
            ridge_grid: Vec::new(),
            gamma: 0.9,
            seed: 0,
            mode: Mode::Api,
            iterations: 10,
            tol: 1e-8,
            max_iters: 100_000,
            epsilon: None,
            warm_start: true,
            tuning: Tuning::PerValue,
            workers: 1,
            timing: false,
            output: None,
            weights_out: None,
        }
    }
}

fn field_err(line: usize, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_one<T: FromStr>(line: usize, field: &str, raw: &str) -> Result<T, ConfigError> {
    raw.parse()
        .map_err(|_| field_err(line, field, format!("cannot parse `{raw}`")))
}

fn parse_list<T: FromStr>(line: usize, field: &str, raw: &str) -> Result<Vec<T>, ConfigError> {
    let items: Vec<&str> = raw.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(field_err(line, field, "empty list entry"));
    }
    items.into_iter().map(|s| parse_one(line, field, s)).collect()
}

fn parse_bool(line: usize, field: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(field_err(line, field, format!("expected true or false, got `{raw}`"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected key=value, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(field_err(
                    line,
                    key,
                    format!("duplicate key (first set on line {first})"),
                ));
            }
            if value.is_empty() {
                return Err(field_err(line, key, "missing value"));
            }
            match key {
                "sweep" => {
                    cfg.sweep = match value {
                        "noise_count" => SweepAxis::NoiseCount,
                        "sample_count" => SweepAxis::SampleCount,
                        other => {
                            return Err(field_err(
                                line,
                                key,
                                format!("unknown axis `{other}` (expected noise_count or sample_count)"),
                            ))
                        }
                    }
                }
                "values" => cfg.values = parse_list(line, key, value)?,
                "m" => cfg.m = Some(parse_one(line, key, value)?),
                "n_noise" => cfg.n_noise = Some(parse_one(line, key, value)?),
                "trials" => cfg.trials = parse_one(line, key, value)?,
                "methods" => {
                    cfg.methods = value
                        .split(',')
                        .map(|s| s.trim().parse::<Method>().map_err(|e| field_err(line, key, e)))
                        .collect::<Result<_, _>>()?
                }
                "mu_grid" => cfg.mu_grid = parse_list(line, key, value)?,
                "l1_mu_grid" => cfg.l1_mu_grid = parse_list(line, key, value)?,
                "pmc_mu_grid" => cfg.pmc_mu_grid = parse_list(line, key, value)?,
                "tau_grid" => cfg.tau_grid = parse_list(line, key, value)?,
                "q" | "q_grid" => cfg.q_grid = parse_list(line, key, value)?,
                "ridge_grid" => cfg.ridge_grid = parse_list(line, key, value)?,
                "gamma" => cfg.gamma = parse_one(line, key, value)?,
                "seed" => cfg.seed = parse_one(line, key, value)?,
                "mode" => {
                    cfg.mode = match value {
                        "api" => Mode::Api,
                        "evaluate" => Mode::Evaluate,
                        other => {
                            return Err(field_err(
                                line,
                                key,
                                format!("unknown mode `{other}` (expected api or evaluate)"),
                            ))
                        }
                    }
                }
                "iterations" => cfg.iterations = parse_one(line, key, value)?,
                "tol" => cfg.tol = parse_one(line, key, value)?,
                "max_iters" => cfg.max_iters = parse_one(line, key, value)?,
                "epsilon" => cfg.epsilon = Some(parse_one(line, key, value)?),
                "warm_start" => cfg.warm_start = parse_bool(line, key, value)?,
                "tuning" => {
                    cfg.tuning = match value {
                        "per_value" => Tuning::PerValue,
                        "global" => Tuning::Global,
                        other => {
                            return Err(field_err(
                                line,
                                key,
                                format!("unknown tuning `{other}` (expected per_value or global)"),
                            ))
                        }
                    }
                }
                "workers" => cfg.workers = parse_one(line, key, value)?,
                "timing" => cfg.timing = parse_bool(line, key, value)?,
                "output" | "out" => cfg.output = Some(value.to_string()),
                "weights_out" => cfg.weights_out = Some(value.to_string()),
                other => return Err(field_err(line, other, "unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `μ` grid used by `method` (empty for closed-form methods).
    pub fn mu_grid_for(&self, method: Method) -> &[f64] {
        let specific = match method {
            Method::Pmc => &self.pmc_mu_grid,
            Method::L1 => &self.l1_mu_grid,
            Method::Lstd | Method::Ridge => return &[],
        };
        if specific.is_empty() {
            &self.mu_grid
        } else {
            specific
        }
    }

    /// `(m, n_noise)` for a sweep value.
    pub fn point(&self, value: usize) -> (usize, usize) {
        match self.sweep {
            SweepAxis::NoiseCount => (self.m.expect("validated"), value),
            SweepAxis::SampleCount => (value, self.n_noise.expect("validated")),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, message: &str| ConfigError::Invalid {
            field,
            message: message.to_string(),
        };
        if self.values.is_empty() {
            return Err(invalid("values", "at least one sweep value is required"));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("values", "sweep values must be strictly increasing"));
        }
        match self.sweep {
            SweepAxis::NoiseCount => match self.m {
                None => return Err(invalid("m", "required when sweep=noise_count")),
                Some(0) => return Err(invalid("m", "must be positive")),
                _ => {}
            },
            SweepAxis::SampleCount => {
                if self.n_noise.is_none() {
                    return Err(invalid("n_noise", "required when sweep=sample_count"));
                }
                if self.values[0] == 0 {
                    return Err(invalid("values", "sample counts must be positive"));
                }
            }
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return Err(invalid("methods", "methods must not repeat"));
        }
        for method in [Method::Pmc, Method::L1] {
            if !self.methods.contains(&method) {
                continue;
            }
            let grid = self.mu_grid_for(method);
            if grid.is_empty() {
                return Err(ConfigError::Invalid {
                    field: "mu_grid",
                    message: format!("method {method} needs a nonempty μ grid"),
                });
            }
            if grid.iter().any(|&mu| !(mu > 0.0 && mu.is_finite())) {
                return Err(invalid("mu_grid", "μ values must be positive and finite"));
            }
        }
        if self.methods.contains(&Method::Pmc) {
            if self.tau_grid.is_empty() {
                return Err(invalid("tau_grid", "must be nonempty for pmc"));
            }
            if self
                .tau_grid
                .iter()
                .any(|t| matches!(t, TauSpec::Fixed(v) if !(*v > 0.0)))
            {
                return Err(invalid("tau_grid", "τ values must be positive"));
            }
            if self.q_grid.is_empty() {
                return Err(invalid("q", "must be nonempty for pmc"));
            }
        }
        if self.methods.contains(&Method::Ridge) {
            if self.ridge_grid.is_empty() {
                return Err(invalid("ridge_grid", "must be nonempty for ridge"));
            }
            if self.ridge_grid.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
                return Err(invalid("ridge_grid", "ridge values must be positive and finite"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", "must lie in (0, 1)"));
        }
        if self.mode == Mode::Api && self.iterations == 0 {
            return Err(invalid("iterations", "must be at least 1 in api mode"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps <= 1.0 / 6.0) {
                return Err(invalid("epsilon", "must lie in (0, 1/6]"));
            }
        }
        Ok(())
    }
}
