//! Experiment configuration: a TOML schema with strict key checking,
//! environment-variable overrides and per-verb validation.
//!
//! All physical quantities are in the rescaled units of the solver: the
//! background shear has unit coefficient while diffusion, chemotaxis and the
//! fluid coupling carry `1/a`, so `a` is simultaneously the flow amplitude
//! and the clock ratio. `a = 0` turns the background flow off entirely and
//! reverts to the unrescaled classical system.

use std::path::Path;

use serde::{Deserialize, Serialize};

use channelpks::diagnostics::AuditFault;
use channelpks::dynamics::{GaussianBump, InitialData, Scheme, SimParams, VorticityBump};
use channelpks::elliptic::DensityBc;
use channelpks::linanalysis::OperatorKind;

use crate::{Failure, Result};

/// Prefix for environment-variable overrides. `CHANNELPKS_PARAMS_A=200`
/// overrides `[params] a`, `CHANNELPKS_GRID_NX=64` overrides `[grid] nx`,
/// and so on: the variable name is the config path, upper-cased, with `.`
/// replaced by `_`. Only scalar keys can be overridden; list-valued keys
/// (sweep lists, bump tables) cannot.
pub const ENV_PREFIX: &str = "CHANNELPKS_";

/// What the CLI was asked to do. The `[experiment] mode` key is optional;
/// when present it must agree with the verb on the command line, which
/// guards against running a config intended for a different experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Sweep,
    Bisect,
    Resolvent,
    Decay,
    Timespace,
    Verify,
}

impl Mode {
    pub fn tag(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Sweep => "sweep",
            Mode::Bisect => "bisect",
            Mode::Resolvent => "resolvent",
            Mode::Decay => "decay",
            Mode::Timespace => "timespace",
            Mode::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub dealias: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            dealias: true,
        }
    }
}

fn default_bc() -> DensityBc {
    DensityBc::Neumann
}
fn default_dt() -> f64 {
    1e-2
}
fn default_t_end() -> f64 {
    1.0
}
fn default_cfl() -> f64 {
    0.8
}
fn default_blowup() -> f64 {
    1e2
}
fn default_scheme() -> Scheme {
    Scheme::Sbdf2
}

/// Physical and numerical parameters; only `a` is required.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    /// Flow amplitude: 0 (no background flow) or >= 1.
    pub a: f64,
    #[serde(default)]
    pub chi1: f64,
    #[serde(default)]
    pub chi2: f64,
    #[serde(default = "default_bc")]
    pub bc: DensityBc,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Weight rate for the space-time norms; solver default when absent.
    #[serde(default)]
    pub a_rate: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
    #[serde(default = "default_blowup")]
    pub blowup_factor: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

impl ParamsSection {
    /// Build solver parameters with `a` replaced by `raw_a` (sweeps and
    /// bisection probe many flow amplitudes under one config).
    pub fn to_sim_params(&self, raw_a: f64) -> Result<SimParams<f64>> {
        let mut p = SimParams::new(raw_a, self.chi1, self.chi2, self.bc)?;
        p.dt = self.dt;
        p.t_end = self.t_end;
        p.cfl_safety = self.cfl_safety;
        p.blowup_factor = self.blowup_factor;
        p.scheme = self.scheme;
        if let Some(r) = self.a_rate {
            p.a_rate = r;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSection {
    pub mass: f64,
    pub x0: f64,
    pub y0: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VortexSection {
    pub amplitude: f64,
    pub x0: f64,
    pub y0: f64,
    pub sigma: f64,
}

/// Initial data: density and vorticity bumps, a mean-flow deviation and
/// optional seeded vorticity noise. An empty section is the zero state.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub n1: Vec<BumpSection>,
    pub n2: Vec<BumpSection>,
    pub omega: Vec<VortexSection>,
    pub u01_amplitude: f64,
    pub noise_amplitude: f64,
    pub noise_seed: u64,
}

impl InitialSection {
    /// Convert to solver initial data. `mass_scale` multiplies every `n1`
    /// bump mass (mass sweeps); `seed` overrides the noise seed.
    pub fn to_initial_data(&self, mass_scale: f64, seed: Option<u64>) -> InitialData<f64> {
        InitialData {
            n1_bumps: self
                .n1
                .iter()
                .map(|b| GaussianBump {
                    mass: b.mass * mass_scale,
                    x0: b.x0,
                    y0: b.y0,
                    sigma: b.sigma,
                })
                .collect(),
            n2_bumps: self
                .n2
                .iter()
                .map(|b| GaussianBump {
                    mass: b.mass,
                    x0: b.x0,
                    y0: b.y0,
                    sigma: b.sigma,
                })
                .collect(),
            omega_bumps: self
                .omega
                .iter()
                .map(|b| VorticityBump {
                    amplitude: b.amplitude,
                    x0: b.x0,
                    y0: b.y0,
                    sigma: b.sigma,
                })
                .collect(),
            u01_amplitude: self.u01_amplitude,
            noise_amplitude: self.noise_amplitude,
            noise_seed: seed.unwrap_or(self.noise_seed),
        }
    }

    /// Sum of the configured first-species bump masses.
    pub fn n1_mass(&self) -> f64 {
        self.n1.iter().map(|b| b.mass).sum()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Flow amplitudes, one run per value.
    pub a_list: Vec<f64>,
    /// Alternative axis: total first-species mass, one run per value, with
    /// the flow amplitude held at `[params] a`.
    pub mass_list: Vec<f64>,
}

fn default_max_evals() -> usize {
    32
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BisectSection {
    pub a_lo: f64,
    pub a_hi: f64,
    /// Stop once the bracket width drops to this value.
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for BisectSection {
    fn default() -> Self {
        Self {
            a_lo: 0.0,
            a_hi: 0.0,
            tol: 0.0,
            max_evals: default_max_evals(),
        }
    }
}

fn default_k_list() -> Vec<i32> {
    vec![1]
}
fn default_scan_ny0() -> usize {
    128
}
fn default_scan_ny_cap() -> usize {
    512
}
fn default_scan_rel_tol() -> f64 {
    0.01
}
fn default_per_regime() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_psi_coarse() -> usize {
    41
}
fn default_psi_span() -> f64 {
    2.0
}
fn default_golden_iters() -> usize {
    40
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventSection {
    #[serde(default)]
    pub a_list: Vec<f64>,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<i32>,
    #[serde(default = "default_per_regime")]
    pub per_regime: usize,
    #[serde(default = "default_scan_ny0")]
    pub ny0: usize,
    #[serde(default = "default_scan_ny_cap")]
    pub ny_cap: usize,
    #[serde(default = "default_scan_rel_tol")]
    pub rel_tol: f64,
    /// Also locate the pseudospectral minimum for each cell.
    #[serde(default = "default_true")]
    pub psi: bool,
    #[serde(default = "default_scan_ny0")]
    pub psi_ny: usize,
    #[serde(default = "default_psi_coarse")]
    pub psi_coarse: usize,
    #[serde(default = "default_psi_span")]
    pub psi_span: f64,
    #[serde(default = "default_golden_iters")]
    pub psi_golden_iters: usize,
}

fn default_kind() -> OperatorKind {
    OperatorKind::Bare
}
fn default_decay_ny() -> usize {
    128
}
fn default_tau_max() -> f64 {
    8.0
}
fn default_decay_samples() -> usize {
    33
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub a_list: Vec<f64>,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<i32>,
    #[serde(default = "default_kind")]
    pub kind: OperatorKind,
    #[serde(default = "default_decay_ny")]
    pub ny: usize,
    /// Sampling horizon in units of `sqrt(a)`.
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "default_decay_samples")]
    pub samples: usize,
}

fn default_k_one() -> i32 {
    1
}
fn default_horizon_tau() -> f64 {
    8.0
}
fn default_ts_steps() -> usize {
    2048
}
fn default_f0_seed() -> u64 {
    1
}
fn default_f0_degree() -> usize {
    16
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    pub seed: u64,
    pub degree: usize,
    pub amplitude: f64,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            seed: default_f0_seed(),
            degree: default_f0_degree(),
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimespaceSection {
    pub a_list: Vec<f64>,
    #[serde(default = "default_k_one")]
    pub k: i32,
    #[serde(default = "default_kind")]
    pub kind: OperatorKind,
    #[serde(default = "default_decay_ny")]
    pub ny: usize,
    /// Horizon in units of `sqrt(a)`.
    #[serde(default = "default_horizon_tau")]
    pub horizon_tau: f64,
    #[serde(default = "default_ts_steps")]
    pub steps: usize,
    /// Weight rate; solver default when absent.
    #[serde(default)]
    pub a_rate: Option<f64>,
    #[serde(default)]
    pub f0: ProfileSection,
    /// Optional stationary forcing, given as the two components of a
    /// divergence-form vector field.
    #[serde(default)]
    pub f2: Option<(ProfileSection, ProfileSection)>,
}

fn default_states() -> usize {
    100
}
fn default_verify_n() -> usize {
    32
}

/// Which wall condition the verification sweep audits under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyBc {
    Neumann,
    Dirichlet,
    /// Alternate between the two families state by state.
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub states: usize,
    pub seed0: u64,
    pub nx: usize,
    pub ny: usize,
    pub bc: VerifyBc,
    /// Deliberate-defect switch for exercising the failure path; leave at
    /// "none" for real verification.
    pub fault: AuditFault,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            states: default_states(),
            seed0: 0,
            nx: default_verify_n(),
            ny: default_verify_n(),
            bc: VerifyBc::Both,
            fault: AuditFault::None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub mode: Option<Mode>,
    pub sweep: Option<SweepSection>,
    pub bisect: Option<BisectSection>,
    pub resolvent: Option<ResolventSection>,
    pub decay: Option<DecaySection>,
    pub timespace: Option<TimespaceSection>,
    pub verify: Option<VerifySection>,
}

fn default_sample_every() -> f64 {
    0.05
}

/// When trajectory snapshots are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotPolicy {
    #[default]
    None,
    /// Save a resumable checkpoint of the final state.
    Final,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Output directory; the `--out` flag takes precedence.
    pub directory: Option<String>,
    /// Diagnostic sampling interval in simulation time.
    pub sample_every: f64,
    pub snapshots: SnapshotPolicy,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: None,
            sample_every: default_sample_every(),
            snapshots: SnapshotPolicy::None,
        }
    }
}

/// The whole configuration file. Every section is optional in the schema;
/// each verb checks for the sections it needs and reports what is missing.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub params: Option<ParamsSection>,
    pub initial: InitialSection,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn params(&self) -> Result<&ParamsSection> {
        self.params.as_ref().ok_or_else(|| {
            Failure::Usage(
                "config needs a [params] section with the required key `a`".into(),
            )
        })
    }
}

/// The kind of scalar an override path accepts.
#[derive(Clone, Copy)]
enum Kind {
    Float,
    Int,
    Bool,
    Str,
}

/// Every environment-overridable config path. List-valued keys are
/// deliberately absent: an override is one scalar.
const OVERRIDE_PATHS: &[(&str, Kind)] = &[
    ("grid.nx", Kind::Int),
    ("grid.ny", Kind::Int),
    ("grid.dealias", Kind::Bool),
    ("params.a", Kind::Float),
    ("params.chi1", Kind::Float),
    ("params.chi2", Kind::Float),
    ("params.bc", Kind::Str),
    ("params.dt", Kind::Float),
    ("params.t_end", Kind::Float),
    ("params.a_rate", Kind::Float),
    ("params.cfl_safety", Kind::Float),
    ("params.blowup_factor", Kind::Float),
    ("params.scheme", Kind::Str),
    ("initial.u01_amplitude", Kind::Float),
    ("initial.noise_amplitude", Kind::Float),
    ("initial.noise_seed", Kind::Int),
    ("experiment.mode", Kind::Str),
    ("experiment.bisect.a_lo", Kind::Float),
    ("experiment.bisect.a_hi", Kind::Float),
    ("experiment.bisect.tol", Kind::Float),
    ("experiment.bisect.max_evals", Kind::Int),
    ("experiment.resolvent.per_regime", Kind::Int),
    ("experiment.resolvent.ny0", Kind::Int),
    ("experiment.resolvent.ny_cap", Kind::Int),
    ("experiment.resolvent.rel_tol", Kind::Float),
    ("experiment.resolvent.psi", Kind::Bool),
    ("experiment.resolvent.psi_ny", Kind::Int),
    ("experiment.resolvent.psi_coarse", Kind::Int),
    ("experiment.resolvent.psi_span", Kind::Float),
    ("experiment.resolvent.psi_golden_iters", Kind::Int),
    ("experiment.decay.kind", Kind::Str),
    ("experiment.decay.ny", Kind::Int),
    ("experiment.decay.tau_max", Kind::Float),
    ("experiment.decay.samples", Kind::Int),
    ("experiment.timespace.k", Kind::Int),
    ("experiment.timespace.kind", Kind::Str),
    ("experiment.timespace.ny", Kind::Int),
    ("experiment.timespace.horizon_tau", Kind::Float),
    ("experiment.timespace.steps", Kind::Int),
    ("experiment.timespace.a_rate", Kind::Float),
    ("experiment.timespace.f0.seed", Kind::Int),
    ("experiment.timespace.f0.degree", Kind::Int),
    ("experiment.timespace.f0.amplitude", Kind::Float),
    ("experiment.verify.states", Kind::Int),
    ("experiment.verify.seed0", Kind::Int),
    ("experiment.verify.nx", Kind::Int),
    ("experiment.verify.ny", Kind::Int),
    ("experiment.verify.bc", Kind::Str),
    ("experiment.verify.fault", Kind::Str),
    ("output.directory", Kind::Str),
    ("output.sample_every", Kind::Float),
    ("output.snapshots", Kind::Str),
];

fn env_name(path: &str) -> String {
    format!("{ENV_PREFIX}{}", path.replace('.', "_").to_uppercase())
}

fn parse_override(var: &str, raw: &str, kind: Kind) -> Result<toml::Value> {
    let bad = |what: &str| {
        Failure::Usage(format!("environment override {var}={raw:?} is not {what}"))
    };
    Ok(match kind {
        Kind::Float => {
            toml::Value::Float(raw.parse::<f64>().map_err(|_| bad("a number"))?)
        }
        Kind::Int => toml::Value::Integer(raw.parse::<i64>().map_err(|_| bad("an integer"))?),
        Kind::Bool => toml::Value::Boolean(raw.parse::<bool>().map_err(|_| bad("a boolean"))?),
        Kind::Str => toml::Value::String(raw.to_string()),
    })
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut cur = table;
    let segments: Vec<&str> = path.split('.').collect();
    for seg in &segments[..segments.len() - 1] {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Failure::Usage(format!(
                "cannot override `{path}`: `{seg}` is not a table in the config"
            ))
        })?;
    }
    cur.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

/// Collect `CHANNELPKS_*` overrides from the process environment. Unknown
/// variable names under the prefix are rejected so a typo cannot silently
/// do nothing.
fn env_overrides(
    vars: impl Iterator<Item = (String, String)>,
) -> Result<Vec<(&'static str, toml::Value)>> {
    let mut out = Vec::new();
    for (name, value) in vars {
        if !name.starts_with(ENV_PREFIX) {
            continue;
        }
        let hit = OVERRIDE_PATHS
            .iter()
            .find(|(path, _)| env_name(path) == name);
        match hit {
            Some((path, kind)) => out.push((*path, parse_override(&name, &value, *kind)?)),
            None => {
                return Err(Failure::Usage(format!(
                    "unrecognized override variable {name}; \
                     supported names mirror scalar config keys, e.g. {}",
                    env_name("params.a")
                )))
            }
        }
    }
    // Deterministic application order regardless of environment iteration.
    out.sort_by_key(|(path, _)| *path);
    Ok(out)
}

fn usage_from_toml(path: &Path, err: &toml::de::Error) -> Failure {
    Failure::Usage(format!("{}: {err}", path.display()))
}

/// Parse a config file and apply environment overrides.
///
/// Schema errors in the file itself (unknown keys, wrong types, missing
/// required keys) are reported with the line and column from the TOML
/// parser. When overrides are present, a file that is only complete after
/// applying them is still accepted; schema errors are then reported by key
/// path instead of by line.
pub fn load_config(
    path: &Path,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::Usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    let overrides = env_overrides(vars)?;

    let direct: std::result::Result<ExperimentConfig, toml::de::Error> =
        toml::from_str(&text);
    if overrides.is_empty() {
        return direct.map_err(|e| usage_from_toml(path, &e));
    }

    let mut table: toml::Table = toml::from_str(&text).map_err(|e| {
        // Syntax and table-shape errors carry spans even in override mode.
        usage_from_toml(path, &e)
    })?;
    for (key, value) in overrides {
        set_path(&mut table, key, value)?;
    }
    match table.try_into::<ExperimentConfig>() {
        Ok(cfg) => Ok(cfg),
        Err(e) => match direct {
            // The file alone was valid, so the defect came from an override.
            Ok(_) => Err(Failure::Usage(format!(
                "config {} is invalid after environment overrides: {e}",
                path.display()
            ))),
            // The file alone was already invalid: prefer its spanned error
            // unless the overrides were meant to fill the gap.
            Err(file_err) => Err(Failure::Usage(format!(
                "{}: {file_err}\n(after environment overrides: {e})",
                path.display()
            ))),
        },
    }
}
