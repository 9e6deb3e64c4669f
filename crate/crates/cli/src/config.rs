//! Run configuration: a flat, sectioned `key = value` format.
//!
//! ```text
//! # full-line comments start with '#' or ';'
//! [model]
//! example = "radulescu"
//! param.alpha = 3
//!
//! [simulation]
//! seed = 42
//! ```
//!
//! Values are numbers, `true`/`false`, bare words or double-quoted strings;
//! expressions must be quoted. Lists are space- or comma-separated inside
//! one value. Keys may appear once per section; unknown sections and keys
//! are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: Option<usize>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

const SECTIONS: [&str; 4] = ["model", "simulation", "analysis", "output"];

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Example {
        name: String,
        params: BTreeMap<String, String>,
    },
    Inline {
        lower: Vec<f64>,
        upper: Vec<f64>,
        wrap: Vec<bool>,
        /// `fields[i][k]` is component `k + 1` of regime `i`.
        fields: Vec<Vec<String>>,
        rates: Vec<(usize, usize, String)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub source: ModelSource,
    /// Required for inline models; overrides the example default otherwise.
    pub lambda_bar: Option<f64>,
    pub clamp_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub seed: u64,
    pub horizon: f64,
    pub output_dt: f64,
    /// Embedded-chain steps instead of a continuous path.
    pub n_steps: Option<usize>,
    pub replicas: usize,
    /// Box center when absent.
    pub x0: Option<Vec<f64>>,
    pub regime0: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub h: f64,
    pub quadrature_order: usize,
    pub k_max: usize,
    pub rank_tol: f64,
    pub grid_points: usize,
    pub resolution: usize,
    pub tau: Option<f64>,
    pub max_iters: Option<usize>,
    pub dilation: usize,
    pub starts: usize,
    pub bins: Option<usize>,
    pub burn_in: Option<f64>,
    pub observable: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub simulation: SimulationConfig,
    pub analysis: AnalysisConfig,
    pub output_dir: PathBuf,
}

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, Entry)> {
        let keys: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        keys.into_iter()
            .map(|k| {
                let e = self.entries.remove(&k).expect("key listed");
                (k[prefix.len()..].to_string(), e)
            })
            .collect()
    }

    fn num(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.take(key).map(|e| parse_f64(&e, key)).transpose()
    }

    fn int(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.take(key)
            .map(|e| {
                e.value
                    .parse::<u64>()
                    .or_else(|_| err(Some(e.line), format!("{key} must be a non-negative integer, got {:?}", e.value)))
            })
            .transpose()
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.take(key).map(|e| e.value)
    }

    fn finish(self, name: &str) -> Result<(), ConfigError> {
        if let Some((k, e)) = self.entries.into_iter().next() {
            return err(Some(e.line), format!("unknown key {k:?} in [{name}]"));
        }
        Ok(())
    }
}

fn parse_f64(e: &Entry, key: &str) -> Result<f64, ConfigError> {
    match e.value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => err(Some(e.line), format!("{key} must be a finite number, got {:?}", e.value)),
    }
}

fn list(e: &Entry) -> Vec<&str> {
    e.value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .collect()
}

fn num_list(e: &Entry, key: &str) -> Result<Vec<f64>, ConfigError> {
    list(e)
        .into_iter()
        .map(|s| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => err(Some(e.line), format!("{key}: not a finite number: {s:?}")),
        })
        .collect()
}

fn check_range<T: PartialOrd + fmt::Display>(key: &str, v: T, lo: T, hi: T) -> Result<T, ConfigError> {
    if v < lo || v > hi {
        return err(None, format!("{key} = {v} outside [{lo}, {hi}]"));
    }
    Ok(v)
}

fn check_positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v <= 0.0 {
        return err(None, format!("{key} must be positive, got {v}"));
    }
    Ok(v)
}

fn is_key(k: &str) -> bool {
    !k.is_empty()
        && k.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_' || c == '.')
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return err(Some(line), "unterminated section header");
            };
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return err(Some(line), format!("unknown section [{name}]"));
            }
            if sections.contains_key(name) {
                return err(Some(line), format!("section [{name}] appears twice"));
            }
            sections.insert(
                name.to_string(),
                Section {
                    entries: BTreeMap::new(),
                },
            );
            current = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = s.split_once('=') else {
            return err(Some(line), "expected `key = value`");
        };
        let key = key.trim();
        if !is_key(key) {
            return err(Some(line), format!("invalid key {key:?}"));
        }
        let value = value.trim();
        let value = if let Some(inner) = value.strip_prefix('"') {
            match inner.strip_suffix('"') {
                Some(v) if !v.contains('"') => v.to_string(),
                _ => return err(Some(line), "unterminated or malformed quoted string"),
            }
        } else {
            if value.is_empty() {
                return err(Some(line), format!("empty value for {key}"));
            }
            if value.contains('"') {
                return err(Some(line), "quotes must enclose the whole value");
            }
            value.to_string()
        };
        let Some(sec) = current.as_ref() else {
            return err(Some(line), "key outside of a section");
        };
        let section = sections.get_mut(sec).expect("current section exists");
        if section.entries.contains_key(key) {
            return err(Some(line), format!("duplicate key {key:?} in [{sec}]"));
        }
        section.entries.insert(key.to_string(), Entry { value, line });
    }
    Ok(sections)
}

fn parse_model(sec: &mut Section) -> Result<ModelConfig, ConfigError> {
    let lambda_bar = sec.num("lambda_bar")?;
    let clamp_margin = sec.num("clamp_margin")?;
    let example = sec.string("example");
    let inline_keys = ["dim", "regimes", "lower", "upper", "wrap"];
    let has_inline = inline_keys.iter().any(|k| sec.entries.contains_key(*k))
        || sec.entries.keys().any(|k| k.starts_with("field.") || k.starts_with("rate."));
    let source = match example {
        Some(name) => {
            if has_inline {
                return err(None, "[model] mixes `example` with inline model keys");
            }
            let params = sec
                .take_prefixed("param.")
                .into_iter()
                .map(|(k, e)| (k, e.value))
                .collect();
            ModelSource::Example { name, params }
        }
        None => {
            let dim = sec
                .int("dim")?
                .ok_or_else(|| ConfigError {
                    line: None,
                    message: "[model] needs `example` or an inline `dim`".into(),
                })? as usize;
            check_range("dim", dim, 1, 64)?;
            let regimes = sec.int("regimes")?.ok_or_else(|| ConfigError {
                line: None,
                message: "[model] inline model needs `regimes`".into(),
            })? as usize;
            check_range("regimes", regimes, 1, 64)?;
            let bound = |sec: &mut Section, key: &str| -> Result<Vec<f64>, ConfigError> {
                let e = sec.take(key).ok_or_else(|| ConfigError {
                    line: None,
                    message: format!("[model] inline model needs `{key}`"),
                })?;
                let v = num_list(&e, key)?;
                if v.len() != dim {
                    return err(Some(e.line), format!("{key} needs {dim} numbers, got {}", v.len()));
                }
                Ok(v)
            };
            let lower = bound(sec, "lower")?;
            let upper = bound(sec, "upper")?;
            let wrap = match sec.take("wrap") {
                None => vec![false; dim],
                Some(e) => {
                    let w: Vec<bool> = list(&e)
                        .into_iter()
                        .map(|s| match s {
                            "true" => Ok(true),
                            "false" => Ok(false),
                            _ => err(Some(e.line), format!("wrap: expected true or false, got {s:?}")),
                        })
                        .collect::<Result<_, _>>()?;
                    if w.len() != dim {
                        return err(Some(e.line), format!("wrap needs {dim} flags, got {}", w.len()));
                    }
                    w
                }
            };
            let mut fields = vec![vec![String::new(); dim]; regimes];
            let mut seen = vec![vec![false; dim]; regimes];
            for (key, e) in sec.take_prefixed("field.") {
                let idx = key
                    .split_once('.')
                    .and_then(|(i, k)| Some((i.parse::<usize>().ok()?, k.parse::<usize>().ok()?)));
                match idx {
                    Some((i, k)) if i < regimes && (1..=dim).contains(&k) => {
                        fields[i][k - 1] = e.value;
                        seen[i][k - 1] = true;
                    }
                    _ => {
                        return err(
                            Some(e.line),
                            format!("field.{key}: expected field.<regime 0..{regimes}>.<component 1..={dim}>"),
                        )
                    }
                }
            }
            for (i, row) in seen.iter().enumerate() {
                if let Some(k) = row.iter().position(|s| !s) {
                    return err(None, format!("missing field.{i}.{}", k + 1));
                }
            }
            let mut rates = Vec::new();
            for (key, e) in sec.take_prefixed("rate.") {
                let idx = key
                    .split_once('.')
                    .and_then(|(i, j)| Some((i.parse::<usize>().ok()?, j.parse::<usize>().ok()?)));
                match idx {
                    Some((i, j)) if i < regimes && j < regimes && i != j => rates.push((i, j, e.value)),
                    _ => {
                        return err(
                            Some(e.line),
                            format!("rate.{key}: expected rate.<from>.<to> with distinct regimes below {regimes}"),
                        )
                    }
                }
            }
            if lambda_bar.is_none() {
                return err(None, "[model] inline model needs `lambda_bar`");
            }
            ModelSource::Inline {
                lower,
                upper,
                wrap,
                fields,
                rates,
            }
        }
    };
    if let Some(l) = lambda_bar {
        check_positive("lambda_bar", l)?;
    }
    if let Some(m) = clamp_margin {
        if matches!(source, ModelSource::Example { .. }) {
            return err(None, "clamp_margin applies to inline models only");
        }
        check_positive("clamp_margin", m)?;
    }
    Ok(ModelConfig {
        source,
        lambda_bar,
        clamp_margin,
    })
}

fn parse_simulation(sec: &mut Section) -> Result<SimulationConfig, ConfigError> {
    let seed = sec.int("seed")?.ok_or_else(|| ConfigError {
        line: None,
        message: "[simulation] seed is mandatory".into(),
    })?;
    let horizon = check_positive("horizon", sec.num("horizon")?.unwrap_or(100.0))?;
    let output_dt = check_positive("output_dt", sec.num("output_dt")?.unwrap_or(0.1))?;
    let n_steps = sec.int("n_steps")?.map(|n| n as usize);
    let replicas = check_range("replicas", sec.int("replicas")?.unwrap_or(1) as usize, 1, 1_000_000)?;
    let x0 = sec.take("x0").map(|e| num_list(&e, "x0")).transpose()?;
    let regime0 = sec.int("regime0")?.unwrap_or(0) as usize;
    Ok(SimulationConfig {
        seed,
        horizon,
        output_dt,
        n_steps,
        replicas,
        x0,
        regime0,
    })
}

fn parse_analysis(sec: &mut Section) -> Result<AnalysisConfig, ConfigError> {
    let h = check_range("h", sec.num("h")?.unwrap_or(1e-3), f64::MIN_POSITIVE, 1.0)?;
    let quadrature_order = check_range("quadrature_order", sec.int("quadrature_order")?.unwrap_or(32) as usize, 1, 180)?;
    let k_max = check_range("k_max", sec.int("k_max")?.unwrap_or(4) as usize, 0, 8)?;
    let rank_tol = check_range("rank_tol", sec.num("rank_tol")?.unwrap_or(1e-8), f64::MIN_POSITIVE, 0.5)?;
    let grid_points = check_range("grid_points", sec.int("grid_points")?.unwrap_or(5) as usize, 1, 1000)?;
    let resolution = check_range("resolution", sec.int("resolution")?.unwrap_or(128) as usize, 2, 4096)?;
    let tau = sec.num("tau")?.map(|t| check_positive("tau", t)).transpose()?;
    let max_iters = sec.int("max_iters")?.map(|n| n as usize);
    let dilation = check_range("dilation", sec.int("dilation")?.unwrap_or(1) as usize, 0, 16)?;
    let starts = check_range("starts", sec.int("starts")?.unwrap_or(32) as usize, 1, 1024)?;
    let bins = sec
        .int("bins")?
        .map(|b| check_range("bins", b as usize, 1, 4096))
        .transpose()?;
    let burn_in = sec.num("burn_in")?.map(|b| check_range("burn_in", b, 0.0, f64::MAX)).transpose()?;
    let observable = sec.string("observable").unwrap_or_else(|| "x1".into());
    Ok(AnalysisConfig {
        h,
        quadrature_order,
        k_max,
        rank_tol,
        grid_points,
        resolution,
        tau,
        max_iters,
        dilation,
        starts,
        bins,
        burn_in,
        observable,
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections = parse_sections(text)?;
        let mut model_sec = sections.remove("model").ok_or_else(|| ConfigError {
            line: None,
            message: "missing [model] section".into(),
        })?;
        let mut sim_sec = sections.remove("simulation").ok_or_else(|| ConfigError {
            line: None,
            message: "missing [simulation] section (the seed is mandatory)".into(),
        })?;
        let empty = || Section {
            entries: BTreeMap::new(),
        };
        let mut analysis_sec = sections.remove("analysis").unwrap_or_else(empty);
        let mut output_sec = sections.remove("output").unwrap_or_else(empty);
        let model = parse_model(&mut model_sec)?;
        model_sec.finish("model")?;
        let simulation = parse_simulation(&mut sim_sec)?;
        sim_sec.finish("simulation")?;
        let analysis = parse_analysis(&mut analysis_sec)?;
        analysis_sec.finish("analysis")?;
        let output_dir = PathBuf::from(output_sec.string("dir").unwrap_or_else(|| "out".into()));
        output_sec.finish("output")?;
        Ok(RunConfig {
            model,
            simulation,
            analysis,
            output_dir,
        })
    }
}
