//! JSON experiment configuration: one schema shared by every subcommand.
//!
//! [`ExperimentConfig`] is the raw document; [`ExperimentConfig::realize`]
//! maps it onto core objects and enforces the cross-field invariants (triple
//! and drift agree on α, noise shapes match the grid, dt·K < 1, one budget
//! per noise level) before anything runs. Every rejection names the violated
//! invariant.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use mldp_core::action::{ConstraintSpec, OptimizerSettings};
use mldp_core::evolution::{solve_skeleton, ControlPath, SolverConfig};
use mldp_core::gelfand::{DiscreteTriple, StateVector};
use mldp_core::operators::{Coefficient, DriftSpec, NoiseMode, NoiseSpec, StateFunctional};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripleConfig {
    /// Interval endpoints `[a, b]`.
    pub domain: [f64; 2],
    pub n_cells: usize,
    /// Interpolation exponent of the V-norm; must equal the drift's α.
    pub alpha: f64,
}

/// Time-dependent scalar coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientConfig {
    Constant(f64),
    PiecewiseLinear { t_end: f64, samples: Vec<f64> },
}

impl CoefficientConfig {
    fn build(&self) -> Coefficient {
        match self {
            CoefficientConfig::Constant(c) => Coefficient::Constant(*c),
            CoefficientConfig::PiecewiseLinear { t_end, samples } => {
                Coefficient::PiecewiseLinear {
                    t_end: *t_end,
                    samples: samples.clone(),
                }
            }
        }
    }
}

/// Flat drift description; which parameters apply depends on `family`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    /// One of `reaction_diffusion`, `porous_media`, `fast_diffusion`,
    /// `p_laplace`, `high_order`.
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<CoefficientConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl DriftConfig {
    fn build(&self) -> Result<DriftSpec> {
        let need = |o: Option<f64>, name: &str| {
            o.ok_or_else(|| anyhow!("drift family {} requires parameter {name}", self.family))
        };
        let forbid = |absent: bool, name: &str| {
            if absent {
                Ok(())
            } else {
                Err(anyhow!("parameter {name} does not apply to drift family {}", self.family))
            }
        };
        let mut drift = match self.family.as_str() {
            "reaction_diffusion" => {
                forbid(self.p.is_none(), "p")?;
                forbid(self.r.is_none(), "r")?;
                forbid(self.kappa.is_none(), "kappa")?;
                DriftSpec::reaction_diffusion(need(self.p_tilde, "p_tilde")?)?
            }
            "porous_media" => {
                forbid(self.p.is_none(), "p")?;
                forbid(self.p_tilde.is_none(), "p_tilde")?;
                forbid(self.kappa.is_none(), "kappa")?;
                DriftSpec::porous_media(need(self.r, "r")?)?
            }
            "fast_diffusion" => {
                forbid(self.p.is_none(), "p")?;
                forbid(self.p_tilde.is_none(), "p_tilde")?;
                let mut d = DriftSpec::fast_diffusion(need(self.r, "r")?)?;
                if let Some(kappa) = self.kappa {
                    d = d.with_kappa(kappa)?;
                }
                d
            }
            "p_laplace" => {
                forbid(self.r.is_none(), "r")?;
                forbid(self.kappa.is_none(), "kappa")?;
                DriftSpec::p_laplace(need(self.p, "p")?, need(self.p_tilde, "p_tilde")?)?
            }
            "high_order" => {
                forbid(self.r.is_none(), "r")?;
                forbid(self.kappa.is_none(), "kappa")?;
                DriftSpec::high_order(need(self.p, "p")?, need(self.p_tilde, "p_tilde")?)?
            }
            other => bail!("unknown drift family '{other}'"),
        };
        if let Some(eta) = &self.eta {
            drift = drift.with_eta(eta.build())?;
        }
        Ok(drift)
    }
}

/// One finite-rank noise mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub functional: FunctionalConfig,
    pub amplitude: CoefficientConfig,
    /// Nodal values on the interior grid.
    pub shape: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalConfig {
    Constant(f64),
    HInner(Vec<f64>),
}

/// Flat noise description; which parameters apply depends on `form`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// One of `none`, `finite_rank`, `diagonal_decay`.
    pub form: String,
    /// Explicit modes (finite_rank only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<ModeConfig>>,
    /// Mode count (diagonal_decay only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_rate: Option<f64>,
}

impl NoiseConfig {
    fn build(&self, dim: usize) -> Result<NoiseSpec> {
        match self.form.as_str() {
            "none" => {
                if self.modes.is_some() || self.n_modes.is_some() || self.decay_rate.is_some() {
                    bail!("noise form none takes no parameters");
                }
                Ok(NoiseSpec::none())
            }
            "finite_rank" => {
                if self.n_modes.is_some() || self.decay_rate.is_some() {
                    bail!("finite_rank noise takes explicit modes, not n_modes/decay_rate");
                }
                let modes = self
                    .modes
                    .as_ref()
                    .ok_or_else(|| anyhow!("finite_rank noise requires modes"))?;
                let mut built = Vec::with_capacity(modes.len());
                for (i, m) in modes.iter().enumerate() {
                    if m.shape.len() != dim {
                        bail!(
                            "noise mode {i} shape has {} entries, expected the interior dimension {dim}",
                            m.shape.len()
                        );
                    }
                    let functional = match &m.functional {
                        FunctionalConfig::Constant(c) => StateFunctional::Constant(*c),
                        FunctionalConfig::HInner(profile) => {
                            if profile.len() != dim {
                                bail!(
                                    "noise mode {i} h_inner profile has {} entries, expected the interior dimension {dim}",
                                    profile.len()
                                );
                            }
                            StateFunctional::HInner(profile.clone())
                        }
                    };
                    built.push(NoiseMode {
                        functional,
                        amplitude: m.amplitude.build(),
                        shape: m.shape.clone(),
                    });
                }
                Ok(NoiseSpec::finite_rank(built)?)
            }
            "diagonal_decay" => {
                if self.modes.is_some() {
                    bail!("diagonal_decay noise takes n_modes, not explicit modes");
                }
                let n = self
                    .n_modes
                    .ok_or_else(|| anyhow!("diagonal_decay noise requires n_modes"))?;
                let rate = self
                    .decay_rate
                    .ok_or_else(|| anyhow!("diagonal_decay noise requires decay_rate"))?;
                Ok(NoiseSpec::diagonal_decay(n, rate)?)
            }
            other => bail!("unknown noise form '{other}'"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub t_end: f64,
    pub n_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard_max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_fallback: Option<bool>,
}

impl SolverSettings {
    fn build(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::new(self.t_end, self.n_steps)?;
        if let Some(tol) = self.picard_tol {
            cfg.picard_tol = tol;
        }
        if let Some(iters) = self.picard_max_iters {
            cfg.picard_max_iters = iters;
        }
        if let Some(d) = self.damping {
            cfg.damping = d;
        }
        if let Some(nf) = self.newton_fallback {
            cfg.newton_fallback = nf;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Zero,
    /// Explicit interior nodal values.
    Values(Vec<f64>),
    /// `amplitude · sin(mode·π·(x−a)/(b−a))` sampled at the interior nodes.
    SineMode { mode: usize, amplitude: f64 },
}

impl InitialState {
    fn build(&self, triple: &Arc<DiscreteTriple>) -> Result<StateVector> {
        match self {
            InitialState::Zero => Ok(StateVector::zero(triple)),
            InitialState::Values(v) => {
                if v.len() != triple.interior_dim() {
                    bail!(
                        "initial_state has {} values, expected the interior dimension {}",
                        v.len(),
                        triple.interior_dim()
                    );
                }
                Ok(StateVector::from_values(triple, v.clone())?)
            }
            InitialState::SineMode { mode, amplitude } => {
                if *mode == 0 {
                    bail!("initial_state sine_mode index must be at least 1");
                }
                if !amplitude.is_finite() {
                    bail!("initial_state amplitude must be finite");
                }
                let (a, b) = triple.domain();
                let k = *mode as f64;
                let amp = *amplitude;
                Ok(StateVector::from_fn(triple, |x| {
                    amp * (k * std::f64::consts::PI * (x - a) / (b - a)).sin()
                }))
            }
        }
    }
}

/// The event whose probability (and minimal action) the run concerns.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventConfig {
    /// `⟨weights, z_T⟩_H ≥ threshold`.
    TerminalFunctional { weights: Vec<f64>, threshold: f64 },
    /// `‖z_T − target‖_H ≤ tolerance`.
    TerminalState { target: Vec<f64>, tolerance: f64 },
    /// Path-metric tube of radius `tolerance` around the zero-control
    /// skeleton started from the configured initial state.
    SkeletonTube { tolerance: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lbfgs_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_schedule: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_starts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_tol: Option<f64>,
    /// Defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_escalation_cap: Option<f64>,
}

impl OptimizerConfig {
    fn build(&self, master_seed: u64) -> Result<OptimizerSettings> {
        let d = OptimizerSettings::default();
        let settings = OptimizerSettings {
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            lbfgs_window: self.lbfgs_window.unwrap_or(d.lbfgs_window),
            beta_schedule: self.beta_schedule.clone().unwrap_or(d.beta_schedule),
            feasibility_tol: self.feasibility_tol.unwrap_or(d.feasibility_tol),
            multi_starts: self.multi_starts.unwrap_or(d.multi_starts),
            start_amplitude: self.start_amplitude.unwrap_or(d.start_amplitude),
            gradient_tol: self.gradient_tol.unwrap_or(d.gradient_tol),
            seed: self.seed.unwrap_or(master_seed),
            beta_escalation_cap: self.beta_escalation_cap.unwrap_or(d.beta_escalation_cap),
        };
        if settings.beta_schedule.is_empty()
            || settings
                .beta_schedule
                .iter()
                .any(|b| !b.is_finite() || *b <= 0.0)
            || settings.beta_schedule.windows(2).any(|w| w[1] <= w[0])
        {
            bail!("optimizer beta_schedule must be positive and strictly increasing");
        }
        if settings.max_iters == 0 || settings.lbfgs_window == 0 || settings.multi_starts == 0 {
            bail!("optimizer iteration, window, and start counts must be positive");
        }
        if !(settings.feasibility_tol > 0.0) || !(settings.gradient_tol > 0.0) {
            bail!("optimizer tolerances must be positive");
        }
        if !settings.start_amplitude.is_finite() || settings.start_amplitude < 0.0 {
            bail!("optimizer start_amplitude must be nonnegative");
        }
        Ok(settings)
    }
}

fn default_condition_samples() -> usize {
    64
}

/// The raw configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub triple: TripleConfig,
    pub drift: DriftConfig,
    pub noise: NoiseConfig,
    pub solver: SolverSettings,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<EventConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    /// Strictly decreasing noise levels for `sweep` (first one is the
    /// `simulate` default).
    #[serde(default)]
    pub eps_list: Vec<f64>,
    /// One sample budget per noise level.
    #[serde(default)]
    pub budgets: Vec<usize>,
    /// Master seed; every sample stream is derived from it.
    pub seed: u64,
    /// Sampled states for `verify-conditions`.
    #[serde(default = "default_condition_samples")]
    pub condition_samples: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Builds the core objects and checks every cross-field invariant.
    pub fn realize(&self) -> Result<Experiment> {
        let [a, b] = self.triple.domain;
        let triple = DiscreteTriple::build(a, b, self.triple.n_cells, self.triple.alpha)
            .context("triple")?;
        let drift = self.drift.build().context("drift")?;
        if (triple.alpha() - drift.declared_alpha()).abs() > 1e-12 {
            bail!(
                "triple alpha {} must equal the drift's declared alpha {}",
                triple.alpha(),
                drift.declared_alpha()
            );
        }
        let noise = self.noise.build(triple.interior_dim()).context("noise")?;
        let solver = self.solver.build().context("solver")?;
        let dtk = solver.dt() * drift.declared_k();
        if dtk >= 1.0 {
            bail!(
                "dt * K = {dtk:.6} must stay below 1; raise n_steps or shorten t_end"
            );
        }
        let x0 = self.initial_state.build(&triple).context("initial_state")?;
        let optimizer = self
            .optimizer
            .clone()
            .unwrap_or(OptimizerConfig {
                max_iters: None,
                lbfgs_window: None,
                beta_schedule: None,
                feasibility_tol: None,
                multi_starts: None,
                start_amplitude: None,
                gradient_tol: None,
                seed: None,
                beta_escalation_cap: None,
            })
            .build(self.seed)
            .context("optimizer")?;
        if let Some(event) = &self.event {
            validate_event_shape(event, triple.interior_dim()).context("event")?;
        }
        if !self.eps_list.is_empty() || !self.budgets.is_empty() {
            if self.budgets.len() != self.eps_list.len() {
                bail!(
                    "one sample budget per noise level: {} eps values, {} budgets",
                    self.eps_list.len(),
                    self.budgets.len()
                );
            }
            if self.eps_list.iter().any(|e| !e.is_finite() || *e <= 0.0) {
                bail!("eps_list entries must be positive");
            }
            if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
                bail!("eps_list must be strictly decreasing");
            }
            if self.budgets.iter().any(|n| *n == 0) {
                bail!("sample budgets must be positive");
            }
        }
        if self.condition_samples == 0 {
            bail!("condition_samples must be positive");
        }
        Ok(Experiment {
            config: self.clone(),
            triple,
            drift,
            noise,
            solver,
            x0,
            optimizer,
        })
    }
}

fn validate_event_shape(event: &EventConfig, dim: usize) -> Result<()> {
    match event {
        EventConfig::TerminalFunctional { weights, threshold } => {
            if weights.len() != dim {
                bail!(
                    "terminal_functional weights have {} entries, expected the interior dimension {dim}",
                    weights.len()
                );
            }
            if weights.iter().any(|w| !w.is_finite()) || !threshold.is_finite() {
                bail!("terminal_functional weights and threshold must be finite");
            }
        }
        EventConfig::TerminalState { target, tolerance } => {
            if target.len() != dim {
                bail!(
                    "terminal_state target has {} entries, expected the interior dimension {dim}",
                    target.len()
                );
            }
            if target.iter().any(|t| !t.is_finite()) {
                bail!("terminal_state target must be finite");
            }
            if !tolerance.is_finite() || *tolerance < 0.0 {
                bail!("terminal_state tolerance must be nonnegative");
            }
        }
        EventConfig::SkeletonTube { tolerance } => {
            if !tolerance.is_finite() || *tolerance < 0.0 {
                bail!("skeleton_tube tolerance must be nonnegative");
            }
        }
    }
    Ok(())
}

/// A validated configuration with its core objects built.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub triple: Arc<DiscreteTriple>,
    pub drift: DriftSpec,
    pub noise: NoiseSpec,
    pub solver: SolverConfig,
    pub x0: StateVector,
    pub optimizer: OptimizerSettings,
}

impl Experiment {
    /// Builds the configured event. A skeleton tube solves the zero-control
    /// dynamics here, so the call can fail like any solve.
    pub fn build_event(&self) -> Result<Option<ConstraintSpec>> {
        let Some(event) = &self.config.event else {
            return Ok(None);
        };
        let spec = match event {
            EventConfig::TerminalFunctional { weights, threshold } => {
                ConstraintSpec::TerminalFunctional {
                    weights: weights.clone(),
                    threshold: *threshold,
                }
            }
            EventConfig::TerminalState { target, tolerance } => ConstraintSpec::TerminalState {
                target: target.clone(),
                tolerance: *tolerance,
            },
            EventConfig::SkeletonTube { tolerance } => {
                let zero = ControlPath::zeros(
                    self.solver.t_end,
                    self.solver.n_steps,
                    self.noise.modes(),
                )?;
                let target =
                    solve_skeleton(&self.x0, &zero, &self.drift, &self.noise, &self.solver)?;
                ConstraintSpec::PathTarget {
                    target,
                    tolerance: *tolerance,
                }
            }
        };
        spec.validate(&self.triple, &self.solver)?;
        Ok(Some(spec))
    }

    /// Canonical JSON of everything that affects results: parsed values with
    /// all defaults resolved, keys sorted, output directory excluded. Two
    /// documents get the same canonical form exactly when they configure the
    /// same run.
    pub fn canonical_value(&self) -> Value {
        fn coeff(c: &Coefficient) -> Value {
            match c {
                Coefficient::Constant(x) => json!({ "constant": x }),
                Coefficient::PiecewiseLinear { t_end, samples } => {
                    json!({ "piecewise_linear": { "t_end": t_end, "samples": samples } })
                }
            }
        }
        let cfg = &self.config;
        json!({
            "triple": {
                "domain": cfg.triple.domain,
                "n_cells": cfg.triple.n_cells,
                "alpha": cfg.triple.alpha,
            },
            "drift": {
                "family": self.drift.family().as_str(),
                "p": self.drift.p(),
                "p_tilde": self.drift.p_tilde(),
                "r": self.drift.r(),
                "kappa": self.drift.kappa(),
                "eta": coeff(self.drift.eta()),
                "declared": [
                    self.drift.declared_alpha(),
                    self.drift.declared_delta(),
                    self.drift.declared_k(),
                ],
            },
            "noise": serde_json::to_value(&cfg.noise).expect("noise config serializes"),
            "solver": {
                "t_end": self.solver.t_end,
                "n_steps": self.solver.n_steps,
                "picard_tol": self.solver.picard_tol,
                "picard_max_iters": self.solver.picard_max_iters,
                "damping": self.solver.damping,
                "newton_fallback": self.solver.newton_fallback,
            },
            "initial_state": serde_json::to_value(&cfg.initial_state)
                .expect("initial state serializes"),
            "event": serde_json::to_value(&cfg.event).expect("event config serializes"),
            "optimizer": {
                "max_iters": self.optimizer.max_iters,
                "lbfgs_window": self.optimizer.lbfgs_window,
                "beta_schedule": self.optimizer.beta_schedule,
                "feasibility_tol": self.optimizer.feasibility_tol,
                "multi_starts": self.optimizer.multi_starts,
                "start_amplitude": self.optimizer.start_amplitude,
                "gradient_tol": self.optimizer.gradient_tol,
                "seed": self.optimizer.seed,
                "beta_escalation_cap": self.optimizer.beta_escalation_cap,
            },
            "eps_list": cfg.eps_list,
            "budgets": cfg.budgets,
            "seed": cfg.seed,
            "condition_samples": cfg.condition_samples,
        })
    }
}
