//! Experiment descriptions: TOML parsing, preset defaults, command-line
//! overrides, and validation of every job before anything is launched.
//!
//! A config file has a handful of top-level keys plus `[params]`, `[run]`
//! and an optional `[sweep]` table:
//!
//! ```toml
//! preset = "custom"
//! engine = "comb"            # comb | dense_qsse | lindblad
//! modes = ["individual"]     # individual | global | markovian
//! realizations = 4
//! output = "out/scan"
//!
//! [params]
//! n_sites = 6
//! gamma_l = 1.0
//! gamma_r = 1.0
//!
//! [run]
//! periods = 100
//!
//! [sweep]
//! parameter = "phi_over_pi"
//! values = [1.0, 0.95]
//! reference = 1.0
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use dtc_core::dense::{dense_qsse_dimension, ReservoirMode, MAX_DENSE_DIM, MAX_LINDBLAD_SITES};
use dtc_core::engine::{DeadBinPolicy, RunConfig};
use dtc_core::model::ModelParams;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Large chain, feedback at several couplings.
    Fig1,
    /// Memoryless decay at several couplings.
    Fig3a,
    /// Feedback at several couplings, disorder averaged.
    Fig3b,
    /// Individual, global and memoryless reservoirs side by side.
    Fig4a,
    /// Deviation from the optimal feedback phase.
    Fig4b,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fig1,
        Preset::Fig3a,
        Preset::Fig3b,
        Preset::Fig4a,
        Preset::Fig4b,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig3a => "fig3a",
            Preset::Fig3b => "fig3b",
            Preset::Fig4a => "fig4a",
            Preset::Fig4b => "fig4b",
            Preset::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| HarnessError::config(format!("unknown preset `{s}` (expected fig1, fig3a, fig3b, fig4a, fig4b or custom)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Comb tensor network, any size.
    Comb,
    /// Dense density matrix over spins and live bins; small chains only.
    DenseQsse,
    /// Memoryless master equation; small chains only.
    Lindblad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One waveguide per spin.
    Individual,
    /// All spins share a waveguide (dense engine only).
    Global,
    /// Mirror removed: `gamma_r` forced to zero.
    Markovian,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Individual => "individual",
            Mode::Global => "global",
            Mode::Markovian => "markovian",
        }
    }

    pub fn reservoir(self) -> ReservoirMode {
        match self {
            Mode::Global => ReservoirMode::Global,
            _ => ReservoirMode::Individual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    /// A `ModelParams` field, or one of the aliases `gamma` (sets both
    /// couplings) and `phi_over_pi`.
    pub parameter: String,
    pub values: Vec<f64>,
    /// Sweep value the `delta_m` output is measured against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

macro_rules! param_overrides {
    ($($field:ident: $ty:ty),* $(,)?) => {
        /// Optional replacements for [`ModelParams`] fields.
        #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ParamOverrides {
            $(
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl ParamOverrides {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn apply(&self, p: &mut ModelParams) {
                $(
                    if let Some(v) = self.$field {
                        p.$field = v;
                    }
                )*
            }

            pub fn from_params(p: &ModelParams) -> Self {
                Self { $($field: Some(p.$field),)* }
            }
        }
    };
}

param_overrides! {
    n_sites: usize,
    period: f64,
    epsilon: f64,
    jz: f64,
    jx: f64,
    hx: f64,
    gamma_l: f64,
    gamma_r: f64,
    tau: f64,
    phi: f64,
    dt: f64,
    bins_per_delay: usize,
    bin_dim: usize,
    max_bond: usize,
    cutoff: f64,
    seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dead_bins: Option<DeadBinPolicy>,
}

const RUN_KEYS: &[&str] = &["periods", "measure_every", "dead_bins"];
const TOP_KEYS: &[&str] = &["preset", "engine", "modes", "realizations", "output", "record_sz"];

/// The file format: every key optional, filled in from the preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<Engine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<Mode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Add one `sz_i` column per site.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_sz: Option<bool>,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub run: RunOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

impl ExperimentFile {
    /// Starts from `preset`; the preset sweep is spelled out so single
    /// fields such as `sweep.values` can be overridden.
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset: Some(preset),
            sweep: ExperimentSpec::preset(preset).sweep,
            ..Self::default()
        }
    }

    /// Fully explicit description of `spec`; resolving it gives `spec` back.
    pub fn from_spec(spec: &ExperimentSpec) -> Self {
        Self {
            preset: Some(Preset::Custom),
            engine: Some(spec.engine),
            modes: Some(spec.modes.clone()),
            realizations: Some(spec.realizations),
            output: Some(spec.output.clone()),
            record_sz: Some(spec.record_sz),
            params: ParamOverrides::from_params(&spec.params),
            run: RunOverrides {
                periods: Some(spec.run.periods),
                measure_every: Some(spec.run.measure_every),
                dead_bins: Some(spec.run.dead_bins),
            },
            sweep: spec.sweep.clone(),
        }
    }

    /// Applies `key=value`. Bare keys are looked up among the top-level,
    /// `[run]` and `[params]` keys in that order; `table.key` is explicit.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let bad = |msg: String| HarnessError::config(format!("override `{assignment}`: {msg}"));
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| bad("expected key=value".into()))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let path: Vec<&str> = match key.split_once('.') {
            Some((table, field)) => vec![table, field],
            None if TOP_KEYS.contains(&key) => vec![key],
            None if RUN_KEYS.contains(&key) => vec!["run", key],
            None => vec!["params", key],
        };
        let mut doc = toml::Table::try_from(&*self).map_err(|e| bad(e.to_string()))?;
        let slot = match path.as_slice() {
            [_] => &mut doc,
            [table, _] => doc
                .entry(table.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| bad(format!("`{table}` is not a table")))?,
            _ => unreachable!(),
        };
        slot.insert(path[path.len() - 1].to_string(), value);
        *self = doc.try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        Ok(())
    }

    pub fn resolve(&self) -> Result<ExperimentSpec> {
        let preset = self.preset.unwrap_or(Preset::Custom);
        let mut spec = ExperimentSpec::preset(preset);
        if preset == Preset::Custom && self.params.n_sites.is_none() {
            return Err(HarnessError::config("missing key `params.n_sites` (required for custom experiments)"));
        }
        if let Some(e) = self.engine {
            spec.engine = e;
        }
        if let Some(m) = &self.modes {
            spec.modes = m.clone();
        }
        if let Some(r) = self.realizations {
            spec.realizations = r;
        }
        if let Some(o) = &self.output {
            spec.output = o.clone();
        }
        if let Some(s) = self.record_sz {
            spec.record_sz = s;
        }
        self.params.apply(&mut spec.params);
        if let Some(v) = self.run.periods {
            spec.run.periods = v;
        }
        if let Some(v) = self.run.measure_every {
            spec.run.measure_every = v;
        }
        if let Some(v) = self.run.dead_bins {
            spec.run.dead_bins = v;
        }
        if self.sweep.is_some() {
            spec.sweep = self.sweep.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// A resolved experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub engine: Engine,
    pub modes: Vec<Mode>,
    pub params: ModelParams,
    pub run: RunConfig,
    pub sweep: Option<Sweep>,
    pub realizations: usize,
    pub output: PathBuf,
    pub record_sz: bool,
}

/// One CSV worth of work: a sweep value under one reservoir mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub label: String,
    pub sweep_value: Option<f64>,
    pub mode: Mode,
    pub params: ModelParams,
}

impl ExperimentSpec {
    /// Defaults for `preset`. Couplings are in units of `J^z`.
    pub fn preset(preset: Preset) -> Self {
        let sweep = |parameter: &str, values: &[f64], reference: Option<f64>| {
            Some(Sweep {
                parameter: parameter.into(),
                values: values.to_vec(),
                reference,
            })
        };
        let mut spec = Self {
            preset,
            engine: Engine::Comb,
            modes: vec![Mode::Individual],
            params: ModelParams::new(1),
            run: RunConfig::periods(100),
            sweep: None,
            realizations: 1,
            output: PathBuf::from("out").join(preset.name()),
            record_sz: false,
        };
        match preset {
            Preset::Fig1 => {
                spec.params = ModelParams::new(40);
                spec.sweep = sweep("gamma", &[0.0, 0.3, 1.0], None);
            }
            Preset::Fig3a => {
                // memoryless runs are cheapest and exact in the dense register
                spec.params = ModelParams::new(4);
                spec.engine = Engine::DenseQsse;
                spec.modes = vec![Mode::Markovian];
                spec.sweep = sweep("gamma_l", &[0.0, 0.5, 1.0], None);
            }
            Preset::Fig3b => {
                spec.params = ModelParams::new(6);
                spec.realizations = 8;
                spec.sweep = sweep("gamma", &[0.0, 0.5, 1.0], None);
            }
            Preset::Fig4a => {
                spec.params = ModelParams::new(4).with_gamma(1.0);
                spec.engine = Engine::DenseQsse;
                spec.modes = vec![Mode::Individual, Mode::Global, Mode::Markovian];
            }
            Preset::Fig4b => {
                spec.params = ModelParams::new(5).with_gamma(1.0);
                spec.sweep = sweep("phi_over_pi", &[1.0, 0.95, 0.90], Some(1.0));
            }
            Preset::Custom => {}
        }
        spec
    }

    /// Every (sweep value, mode) combination with its parameters.
    pub fn points(&self) -> Result<Vec<Point>> {
        let values: Vec<Option<f64>> = match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for v in values {
            for &mode in &self.modes {
                let mut params = self.params.clone();
                let mut parts = Vec::new();
                if let (Some(v), Some(s)) = (v, &self.sweep) {
                    set_parameter(&mut params, &s.parameter, v)?;
                    parts.push(format!("{}_{v}", s.parameter));
                }
                if mode == Mode::Markovian {
                    params.gamma_r = 0.0;
                }
                parts.push(mode.name().to_string());
                out.push(Point {
                    label: parts.join("_"),
                    sweep_value: v,
                    mode,
                    params,
                });
            }
        }
        Ok(out)
    }

    /// Checks the whole job set, including size guards, without running it.
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if self.realizations == 0 {
            return Err(HarnessError::config("realizations must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(HarnessError::config("modes must not be empty"));
        }
        for (k, m) in self.modes.iter().enumerate() {
            if self.modes[..k].contains(m) {
                return Err(HarnessError::config(format!("mode `{}` listed twice", m.name())));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(HarnessError::config("sweep.values must not be empty"));
            }
            if let Some(r) = s.reference {
                if !s.values.contains(&r) {
                    return Err(HarnessError::config(format!(
                        "sweep.reference {r} is not one of the sweep values {:?}",
                        s.values
                    )));
                }
            }
        }
        for point in self.points()? {
            let p = &point.params;
            p.validate().map_err(|e| HarnessError::config(format!("{}: {}", point.label, strip(e))))?;
            match (self.engine, point.mode) {
                (Engine::Comb, Mode::Global) => {
                    return Err(HarnessError::config("the comb engine supports individual and markovian modes only"))
                }
                (Engine::Lindblad, _) if p.gamma_r != 0.0 => {
                    return Err(HarnessError::config(format!(
                        "{}: the lindblad engine is memoryless; use mode markovian or gamma_r = 0 (got {})",
                        point.label, p.gamma_r
                    )))
                }
                (Engine::Lindblad, _) if p.n_sites > MAX_LINDBLAD_SITES => {
                    return Err(HarnessError::Resource(format!(
                        "{}: lindblad engine limited to {MAX_LINDBLAD_SITES} sites, got {}",
                        point.label, p.n_sites
                    )))
                }
                (Engine::DenseQsse, mode) => {
                    let dim = dense_qsse_dimension(p, mode.reservoir());
                    if dim > MAX_DENSE_DIM {
                        return Err(HarnessError::Resource(format!(
                            "{}: dense register dimension {dim} exceeds {MAX_DENSE_DIM}",
                            point.label
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn strip(e: dtc_core::Error) -> String {
    match e {
        dtc_core::Error::InvalidParameter(m) => m,
        other => other.to_string(),
    }
}

/// Sets a named parameter. Besides the `ModelParams` fields this accepts
/// `gamma` (both couplings), `phi_over_pi`, and `bins_per_delay`, which
/// keeps `bins_per_delay * dt == tau` by adjusting `dt`.
pub fn set_parameter(p: &mut ModelParams, name: &str, value: f64) -> Result<()> {
    match name {
        "gamma" => {
            p.gamma_l = value;
            p.gamma_r = value;
            return Ok(());
        }
        "phi_over_pi" => {
            p.phi = value * PI;
            return Ok(());
        }
        _ => {}
    }
    if !ParamOverrides::KEYS.contains(&name) {
        return Err(HarnessError::config(format!(
            "unknown sweep parameter `{name}` (expected one of gamma, phi_over_pi, {})",
            ParamOverrides::KEYS.join(", ")
        )));
    }
    let integral = matches!(name, "n_sites" | "bins_per_delay" | "bin_dim" | "max_bond" | "seed");
    let mut o = ParamOverrides::default();
    if integral {
        if value.fract() != 0.0 || value < 0.0 {
            return Err(HarnessError::config(format!("`{name}` takes non-negative integers, got {value}")));
        }
        let v = value as usize;
        match name {
            "n_sites" => o.n_sites = Some(v),
            "bins_per_delay" => {
                *p = p.clone().with_bins_per_delay(v.max(1));
                o.bins_per_delay = Some(v);
            }
            "bin_dim" => o.bin_dim = Some(v),
            "max_bond" => o.max_bond = Some(v),
            _ => o.seed = Some(v as u64),
        }
    } else {
        let mut doc = toml::Table::new();
        doc.insert(name.into(), toml::Value::Float(value));
        o = doc.try_into().map_err(|e: toml::de::Error| HarnessError::config(e.message().to_string()))?;
    }
    o.apply(p);
    Ok(())
}

/// Parses and validates a config file. Errors carry the offending line
/// when it can be located.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let file: ExperimentFile = toml::from_str(text).map_err(|e| HarnessError::Config {
        line: e.span().map(|s| line_at(text, s.start)),
        msg: e.message().trim().to_string(),
    })?;
    file.resolve().map_err(|e| locate(e, text))
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Attaches the line of the first key named in the message.
fn locate(e: HarnessError, text: &str) -> HarnessError {
    let HarnessError::Config { line: None, msg } = e else {
        return e;
    };
    let keys = TOP_KEYS
        .iter()
        .chain(RUN_KEYS)
        .chain(ParamOverrides::KEYS)
        .chain(&["parameter", "values", "reference"]);
    let line = msg
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| keys.clone().any(|k| k == w))
        .find_map(|w| key_line(text, w));
    HarnessError::Config { line, msg }
}

fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}
