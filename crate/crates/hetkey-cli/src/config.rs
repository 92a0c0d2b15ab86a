//! Sweep configuration: a flat `key = value` text format with dotted
//! section names, parsed line by line so every diagnostic carries a line
//! number.
//!
//! Lines are either blank, a `#` comment, or `key = value`. Values are
//! scalars or lists; list entries are separated by commas or whitespace.
//! All physical quantities use the conventions of the library: quadrature
//! units for amplitudes and ranges, dB for channel loss.
//!
//! ```text
//! constellation.amplitude = 0.5
//!
//! detector.range = 7.0
//! detector.bins  = 16
//!
//! channel.loss_db      = 0.0, 1.0, 2.0
//! channel.excess_noise = 0.001
//!
//! security.block_sizes    = 1e10, 1e11, 1e12
//! security.eps_smoothing  = 1e-10
//! security.eps_hashing    = 1e-10
//! security.eps_estimation = 1e-10
//! security.reconciliation = 0.97
//!
//! run.rate_mode  = finite
//! run.truncation = truncated
//! run.dims       = 110
//! ```

use hetkey::finite_size::RateMode;
use hetkey::sdp::TruncationMode;

/// Rejected configuration, with the offending line where one exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    /// A line is not blank, a comment, or `key = value`.
    Syntax { line: usize, message: String },
    /// A key outside the schema, most likely a typo.
    UnknownKey { line: usize, key: String },
    /// The same key assigned twice.
    DuplicateKey { line: usize, key: String },
    /// A value that fails to parse or lies outside its domain.
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    /// A required key that never appeared.
    MissingKey(&'static str),
    /// Keys that are individually fine but jointly unusable.
    Inconsistent(String),
}

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ConfigError::Syntax { line, message } => {
                write!(f, "line {line}: {message}")
            }
            ConfigError::UnknownKey { line, key } => {
                write!(f, "line {line}: unknown key `{key}`")
            }
            ConfigError::DuplicateKey { line, key } => {
                write!(f, "line {line}: duplicate key `{key}`")
            }
            ConfigError::BadValue { line, key, message } => {
                write!(f, "line {line}: key `{key}`: {message}")
            }
            ConfigError::MissingKey(key) => {
                write!(f, "missing required key `{key}`")
            }
            ConfigError::Inconsistent(message) => f.write_str(message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// One full sweep description.
///
/// `block_sizes` only drives finite-mode rows and may be omitted for
/// asymptotic sweeps; `dims` lists the operator dimensions for truncated
/// mode and is ignored by projected mode, which always works on the
/// cutoff block. `samples = 0` plugs analytic expected values in place
/// of empirical estimates; a positive value simulates that many rounds
/// per sweep point instead.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub amplitude: f64,
    pub range: f64,
    pub bins: usize,
    pub loss_db: Vec<f64>,
    pub excess_noise: f64,
    pub block_sizes: Vec<u64>,
    pub eps_smoothing: f64,
    pub eps_hashing: f64,
    pub eps_estimation: f64,
    pub reconciliation: f64,
    pub rate_mode: RateMode,
    pub truncation: TruncationMode,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub samples: u64,
    pub tolerance: f64,
    pub output: Option<String>,
}

/// One parsed assignment, kept with its line for later diagnostics.
struct Entry {
    line: usize,
    value: String,
    used: bool,
}

/// Splits the text into assignments, rejecting malformed lines and
/// duplicates.
fn scan(text: &str) -> Result<Vec<(String, Entry)>, ConfigError> {
    let mut entries: Vec<(String, Entry)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                message: "expected `key = value`".to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                message: "empty key before `=`".to_string(),
            });
        }
        if entries.iter().any(|(k, _)| k == key) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        entries.push((
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
                used: false,
            },
        ));
    }
    Ok(entries)
}

/// Accessor over the scanned assignments that marks keys as consumed so
/// leftovers can be reported as unknown.
struct Table {
    entries: Vec<(String, Entry)>,
}

impl Table {
    fn take(&mut self, key: &'static str) -> Option<(usize, String)> {
        for (k, entry) in &mut self.entries {
            if k == key {
                entry.used = true;
                return Some((entry.line, entry.value.clone()));
            }
        }
        None
    }

    fn require(&mut self, key: &'static str) -> Result<(usize, String), ConfigError> {
        self.take(key).ok_or(ConfigError::MissingKey(key))
    }

    fn reject_leftovers(&self) -> Result<(), ConfigError> {
        for (k, entry) in &self.entries {
            if !entry.used {
                return Err(ConfigError::UnknownKey {
                    line: entry.line,
                    key: k.clone(),
                });
            }
        }
        Ok(())
    }
}

fn bad(line: usize, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
    let x: f64 = value
        .parse()
        .map_err(|_| bad(line, key, format!("`{value}` is not a number")))?;
    if !x.is_finite() {
        return Err(bad(line, key, "value must be finite"));
    }
    Ok(x)
}

/// Counts like `1e10` are written as floats; they must still be exact
/// nonnegative integers.
fn parse_count(line: usize, key: &str, value: &str) -> Result<u64, ConfigError> {
    let x = parse_f64(line, key, value)?;
    if x < 0.0 || x.fract() != 0.0 || x > u64::MAX as f64 {
        return Err(bad(line, key, format!("`{value}` is not a whole count")));
    }
    Ok(x as u64)
}

fn parse_usize(line: usize, key: &str, value: &str) -> Result<usize, ConfigError> {
    let n = parse_count(line, key, value)?;
    usize::try_from(n).map_err(|_| bad(line, key, "value too large"))
}

fn split_list(value: &str) -> Vec<&str> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_f64_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    let items = split_list(value);
    if items.is_empty() {
        return Err(bad(line, key, "list must not be empty"));
    }
    items.iter().map(|s| parse_f64(line, key, s)).collect()
}

fn parse_count_list(line: usize, key: &str, value: &str) -> Result<Vec<u64>, ConfigError> {
    let items = split_list(value);
    if items.is_empty() {
        return Err(bad(line, key, "list must not be empty"));
    }
    items.iter().map(|s| parse_count(line, key, s)).collect()
}

fn parse_usize_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    let items = split_list(value);
    if items.is_empty() {
        return Err(bad(line, key, "list must not be empty"));
    }
    items.iter().map(|s| parse_usize(line, key, s)).collect()
}

/// Parses a rate-mode word; shared by the config file and the `--mode`
/// command-line override.
pub fn parse_rate_mode(value: &str) -> Option<RateMode> {
    match value {
        "asymptotic" => Some(RateMode::Asymptotic),
        "finite" => Some(RateMode::Finite),
        _ => None,
    }
}

fn parse_truncation(line: usize, key: &str, value: &str) -> Result<TruncationMode, ConfigError> {
    match value {
        "truncated" => Ok(TruncationMode::InfiniteTruncated),
        "projected" => Ok(TruncationMode::FiniteDim),
        _ => Err(bad(
            line,
            key,
            format!("`{value}` is neither `truncated` nor `projected`"),
        )),
    }
}

impl RunConfig {
    /// Parses and validates a configuration text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut t = Table {
            entries: scan(text)?,
        };

        let (l, v) = t.require("constellation.amplitude")?;
        let amplitude = parse_f64(l, "constellation.amplitude", &v)?;

        let (l, v) = t.require("detector.range")?;
        let range = parse_f64(l, "detector.range", &v)?;
        let (l, v) = t.require("detector.bins")?;
        let bins = parse_usize(l, "detector.bins", &v)?;

        let (l, v) = t.require("channel.loss_db")?;
        let loss_db = parse_f64_list(l, "channel.loss_db", &v)?;
        let loss_line = l;
        let (l, v) = t.require("channel.excess_noise")?;
        let excess_noise = parse_f64(l, "channel.excess_noise", &v)?;

        let block_sizes = match t.take("security.block_sizes") {
            Some((l, v)) => parse_count_list(l, "security.block_sizes", &v)?,
            None => Vec::new(),
        };
        let (l, v) = t.require("security.eps_smoothing")?;
        let eps_smoothing = parse_f64(l, "security.eps_smoothing", &v)?;
        let (l, v) = t.require("security.eps_hashing")?;
        let eps_hashing = parse_f64(l, "security.eps_hashing", &v)?;
        let (l, v) = t.require("security.eps_estimation")?;
        let eps_estimation = parse_f64(l, "security.eps_estimation", &v)?;
        let (l, v) = t.require("security.reconciliation")?;
        let reconciliation = parse_f64(l, "security.reconciliation", &v)?;

        let (l, v) = t.require("run.rate_mode")?;
        let rate_mode = parse_rate_mode(&v).ok_or_else(|| {
            bad(
                l,
                "run.rate_mode",
                format!("`{v}` is neither `asymptotic` nor `finite`"),
            )
        })?;
        let (l, v) = t.require("run.truncation")?;
        let truncation = parse_truncation(l, "run.truncation", &v)?;
        let dims = match t.take("run.dims") {
            Some((l, v)) => parse_usize_list(l, "run.dims", &v)?,
            None => Vec::new(),
        };
        let seed = match t.take("run.seed") {
            Some((l, v)) => parse_count(l, "run.seed", &v)?,
            None => 0,
        };
        let samples = match t.take("run.samples") {
            Some((l, v)) => parse_count(l, "run.samples", &v)?,
            None => 0,
        };
        let tolerance = match t.take("run.tolerance") {
            Some((l, v)) => parse_f64(l, "run.tolerance", &v)?,
            None => hetkey::tolerances::SOLVER_DEFAULT_TOL,
        };
        let output = t.take("run.output").map(|(_, v)| v);

        t.reject_leftovers()?;

        if loss_db.iter().any(|&x| x < 0.0) {
            return Err(bad(
                loss_line,
                "channel.loss_db",
                "loss must be nonnegative",
            ));
        }

        let cfg = Self {
            amplitude,
            range,
            bins,
            loss_db,
            excess_noise,
            block_sizes,
            eps_smoothing,
            eps_hashing,
            eps_estimation,
            reconciliation,
            rate_mode,
            truncation,
            dims,
            seed,
            samples,
            tolerance,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks that need more than one key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.amplitude > 0.0) {
            return Err(ConfigError::Inconsistent(
                "constellation.amplitude must be positive".to_string(),
            ));
        }
        if !(self.range > 0.0) {
            return Err(ConfigError::Inconsistent(
                "detector.range must be positive".to_string(),
            ));
        }
        if !(self.excess_noise >= 0.0) {
            return Err(ConfigError::Inconsistent(
                "channel.excess_noise must be nonnegative".to_string(),
            ));
        }
        for (name, eps) in [
            ("security.eps_smoothing", self.eps_smoothing),
            ("security.eps_hashing", self.eps_hashing),
            ("security.eps_estimation", self.eps_estimation),
        ] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(ConfigError::Inconsistent(format!(
                    "{name} must lie strictly between 0 and 1"
                )));
            }
        }
        if !(self.reconciliation > 0.0 && self.reconciliation <= 1.0) {
            return Err(ConfigError::Inconsistent(
                "security.reconciliation must lie in (0, 1]".to_string(),
            ));
        }
        if self.rate_mode == RateMode::Finite {
            if self.block_sizes.is_empty() {
                return Err(ConfigError::Inconsistent(
                    "finite mode needs a nonempty security.block_sizes list".to_string(),
                ));
            }
            if self.block_sizes.iter().any(|&n| n == 0) {
                return Err(ConfigError::Inconsistent(
                    "security.block_sizes entries must be positive".to_string(),
                ));
            }
        }
        let n_cut = (2.0 * self.range * self.range).floor() as usize;
        match self.truncation {
            TruncationMode::InfiniteTruncated => {
                if self.dims.is_empty() {
                    return Err(ConfigError::Inconsistent(
                        "truncated mode needs a nonempty run.dims list".to_string(),
                    ));
                }
                if let Some(&d) = self.dims.iter().find(|&&d| d < n_cut + 1) {
                    return Err(ConfigError::Inconsistent(format!(
                        "run.dims entry {d} is below the cutoff dimension {}",
                        n_cut + 1
                    )));
                }
            }
            TruncationMode::FiniteDim => {}
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(ConfigError::Inconsistent(
                "run.tolerance must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// Operator dimensions the sweep will actually use: the configured
    /// list in truncated mode, the single cutoff block in projected
    /// mode.
    pub fn working_dims(&self) -> Vec<usize> {
        match self.truncation {
            TruncationMode::InfiniteTruncated => self.dims.clone(),
            TruncationMode::FiniteDim => {
                let n_cut = (2.0 * self.range * self.range).floor() as usize;
                vec![n_cut + 1]
            }
        }
    }
}
