//! Run configuration: a single JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use mdrate_core::fredholm::{RateOptions, SolveOptions, SolvePolicy};
use mdrate_core::oracle::BatteryCase;
use mdrate_core::renewal::RenewalOptions;
use mdrate_core::sim::{BRule, Interarrival, TailEvent};
use mdrate_core::ServiceDist;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Rate,
    Controls,
    OracleCheck,
    Simulate,
    IdentityCheck,
    KieferCheck,
    DistInfo,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rate => "rate",
            Command::Controls => "controls",
            Command::OracleCheck => "oracle-check",
            Command::Simulate => "simulate",
            Command::IdentityCheck => "identity-check",
            Command::KieferCheck => "kiefer-check",
            Command::DistInfo => "dist-info",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub service: ServiceConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub path: PathConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub kiefer: KieferConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Must equal the mean service rate when given.
    pub mu: Option<f64>,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub q0: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { mu: None, sigma: 1.0, beta: 0.0, q0: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ServiceConfig {
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    Hyperexponential { weights: Vec<f64>, rates: Vec<f64> },
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig::Exponential { rate: 1.0 }
    }
}

impl ServiceConfig {
    pub fn build(&self) -> Result<ServiceDist, CliError> {
        let d = match self {
            ServiceConfig::Exponential { rate } => ServiceDist::exponential(*rate),
            ServiceConfig::Erlang { shape, rate } => ServiceDist::erlang(*shape, *rate),
            ServiceConfig::Hyperexponential { weights, rates } => ServiceDist::hyperexponential(weights.clone(), rates.clone()),
        };
        d.map_err(|e| CliError::Config(format!("service: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "two")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Cells on `[0,1]` for the oracle and the Kiefer field.
    #[serde(default = "default_x_steps")]
    pub x_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { horizon: 2.0, steps: 200, x_steps: 32 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PathConfig {
    /// `q ≡ 0`.
    #[default]
    Zero,
    /// The zero-control solution of the path equation.
    Lln,
    /// `q(t) = Σ cₖ tᵏ`.
    Polynomial { coefficients: Vec<f64> },
    /// One case of the standard battery; sets `beta`, `q0` and the horizon.
    Battery { case: String },
    /// A `t,value` CSV on a uniform grid; the grid block is ignored.
    Csv { file: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub renewal_tolerance: f64,
    pub renewal_max_iterations: usize,
    pub renewal_window_mass: f64,
    pub solver_tolerance: f64,
    pub max_picard_iterations: usize,
    pub solver: SolverChoice,
    pub rate_clamp: f64,
    pub tail_mass: f64,
    /// Cells on `[0,1]` for recovered controls; the time steps when absent.
    pub recovered_x_steps: Option<usize>,
    pub oracle_relative_gap: f64,
    pub kiefer_energy: f64,
    pub kiefer_spot: f64,
    /// Relative sup error allowed when pushing recovered controls forward.
    pub round_trip: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let r = RenewalOptions::default();
        let s = SolveOptions::default();
        let o = RateOptions::default();
        Self {
            renewal_tolerance: r.tolerance,
            renewal_max_iterations: r.max_iterations,
            renewal_window_mass: r.window_mass,
            solver_tolerance: s.tolerance,
            max_picard_iterations: s.max_picard_iterations,
            solver: SolverChoice::Auto,
            rate_clamp: o.clamp,
            tail_mass: o.tail_tolerance,
            recovered_x_steps: None,
            oracle_relative_gap: 0.02,
            kiefer_energy: 1e-3,
            kiefer_spot: 1e-4,
            round_trip: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    #[default]
    Auto,
    Picard,
    Direct,
}

impl Tolerances {
    pub fn renewal(&self) -> RenewalOptions {
        RenewalOptions {
            tolerance: self.renewal_tolerance,
            max_iterations: self.renewal_max_iterations,
            window_mass: self.renewal_window_mass,
        }
    }

    pub fn rate(&self) -> RateOptions {
        RateOptions {
            renewal: self.renewal(),
            solve: SolveOptions {
                tolerance: self.solver_tolerance,
                max_picard_iterations: self.max_picard_iterations,
                policy: match self.solver {
                    SolverChoice::Auto => SolvePolicy::Auto,
                    SolverChoice::Picard => SolvePolicy::PicardOnly,
                    SolverChoice::Direct => SolvePolicy::DirectOnly,
                },
            },
            x_steps: self.recovered_x_steps,
            clamp: self.rate_clamp,
            tail_tolerance: self.tail_mass,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Run the five standard cases instead of the configured path.
    pub battery: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub ladder: Vec<u64>,
    pub b_rule: BRuleConfig,
    pub replications: u64,
    pub horizon: f64,
    pub interarrival: InterarrivalConfig,
    pub event: Option<EventConfig>,
    /// Steps of the decomposition grid (identity-check).
    pub decomposition_steps: usize,
    /// Export the event trace of the first replication for each `n`.
    pub export_traces: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            ladder: vec![100, 1000],
            b_rule: BRuleConfig::Power { gamma: 0.1 },
            replications: 200,
            horizon: 1.0,
            interarrival: InterarrivalConfig::Exponential,
            event: None,
            decomposition_steps: 100,
            export_traces: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BRuleConfig {
    Power { gamma: f64 },
    Log { c: f64 },
}

impl BRuleConfig {
    pub fn build(&self) -> BRule {
        match *self {
            BRuleConfig::Power { gamma } => BRule::Power { gamma },
            BRuleConfig::Log { c } => BRule::Log { c },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InterarrivalConfig {
    #[default]
    Exponential,
    Erlang {
        shape: u32,
    },
}

impl InterarrivalConfig {
    pub fn build(&self) -> Interarrival {
        match *self {
            InterarrivalConfig::Exponential => Interarrival::Exponential,
            InterarrivalConfig::Erlang { shape } => Interarrival::Erlang(shape),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventConfig {
    /// `sup_{s≤t} X_n(s) ≥ a`; `a = null` means `−∞`.
    Sup { t: f64, a: Option<f64> },
    /// `X_n(t) ≥ a`.
    Terminal { t: f64, a: Option<f64> },
}

impl EventConfig {
    pub fn build(&self) -> TailEvent {
        match *self {
            EventConfig::Sup { t, a } => TailEvent::SupAbove { t, a: a.unwrap_or(f64::NEG_INFINITY) },
            EventConfig::Terminal { t, a } => TailEvent::TerminalAbove { t, a: a.unwrap_or(f64::NEG_INFINITY) },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KieferConfig {
    pub x_steps: usize,
    pub t_steps: usize,
    /// Constant value of the sheet density.
    pub level: f64,
}

impl Default for KieferConfig {
    fn default() -> Self {
        Self { x_steps: 512, t_steps: 512, level: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn default_steps() -> usize {
    200
}

fn default_x_steps() -> usize {
    32
}

fn finite_positive(v: f64, what: &str) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Semantic checks that do not need any computation. Relative file paths
    /// resolve against `base`.
    pub fn validate(&self, base: &Path) -> Result<(), CliError> {
        self.service.build()?;
        finite_positive(self.model.sigma, "model.sigma")?;
        if !self.model.beta.is_finite() || !self.model.q0.is_finite() {
            return Err(CliError::Config("model.beta and model.q0 must be finite".into()));
        }
        if let Some(mu) = self.model.mu {
            let d = self.service.build()?;
            if (mu - d.mean_rate()).abs() > 1e-12 * mu.abs().max(1.0) {
                return Err(CliError::Config(format!("model.mu = {mu} differs from the mean service rate {}", d.mean_rate())));
            }
        }
        finite_positive(self.grid.horizon, "grid.horizon")?;
        if self.grid.steps < 2 || self.grid.x_steps < 2 {
            return Err(CliError::Config("grid.steps and grid.x_steps must be at least 2".into()));
        }
        let t = &self.tolerances;
        for (v, name) in [
            (t.renewal_tolerance, "tolerances.renewal_tolerance"),
            (t.solver_tolerance, "tolerances.solver_tolerance"),
            (t.oracle_relative_gap, "tolerances.oracle_relative_gap"),
            (t.kiefer_energy, "tolerances.kiefer_energy"),
            (t.kiefer_spot, "tolerances.kiefer_spot"),
            (t.tail_mass, "tolerances.tail_mass"),
            (t.round_trip, "tolerances.round_trip"),
        ] {
            finite_positive(v, name)?;
        }
        if t.rate_clamp.is_nan() || t.rate_clamp < 0.0 {
            return Err(CliError::Config("tolerances.rate_clamp must be nonnegative".into()));
        }
        if !(t.renewal_window_mass > 0.0 && t.renewal_window_mass < 1.0) {
            return Err(CliError::Config("tolerances.renewal_window_mass must lie in (0, 1)".into()));
        }
        if t.recovered_x_steps.is_some_and(|m| m < 2) {
            return Err(CliError::Config("tolerances.recovered_x_steps must be at least 2".into()));
        }
        match &self.path {
            PathConfig::Csv { file } => {
                let p = base.join(file);
                if !p.is_file() {
                    return Err(CliError::Config(format!("path file {} does not exist", p.display())));
                }
            }
            PathConfig::Battery { case } => {
                battery_case(case)?;
            }
            PathConfig::Polynomial { coefficients } if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) => {
                return Err(CliError::Config("path.coefficients must be a nonempty list of finite numbers".into()));
            }
            _ => {}
        }
        let s = &self.simulation;
        if matches!(self.command, Command::Simulate | Command::IdentityCheck) {
            if s.ladder.is_empty() || s.ladder.contains(&0) {
                return Err(CliError::Config("simulation.ladder must list positive server counts".into()));
            }
            if s.replications == 0 {
                return Err(CliError::Config("simulation.replications must be positive".into()));
            }
            finite_positive(s.horizon, "simulation.horizon")?;
            if s.decomposition_steps < 2 {
                return Err(CliError::Config("simulation.decomposition_steps must be at least 2".into()));
            }
            if let InterarrivalConfig::Erlang { shape: 0 } = s.interarrival {
                return Err(CliError::Config("simulation.interarrival.shape must be positive".into()));
            }
            s.b_rule.build().validate().map_err(|e| CliError::Config(format!("simulation.b_rule: {e}")))?;
            if let Some(ev) = s.event {
                let ev = ev.build();
                finite_positive(ev.time(), "simulation.event.t")?;
                if ev.level().is_nan() || ev.level() == f64::INFINITY {
                    return Err(CliError::Config("simulation.event.a must be finite or null".into()));
                }
            }
        }
        if self.command == Command::KieferCheck {
            let k = &self.kiefer;
            if k.x_steps < 2 || k.t_steps < 2 || !k.level.is_finite() || k.level == 0.0 {
                return Err(CliError::Config("kiefer block needs x_steps, t_steps >= 2 and a nonzero finite level".into()));
            }
        }
        Ok(())
    }
}

pub fn battery_case(name: &str) -> Result<BatteryCase, CliError> {
    mdrate_core::oracle::standard_battery()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| CliError::Config(format!("unknown battery case {name:?}")))
}
