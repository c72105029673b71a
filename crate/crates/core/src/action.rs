//! The rate function: control energy, constrained minimization
//! `I* = inf{½∫‖φ‖²_U : z^φ meets the constraint}`, and adjoint gradients
//! of the penalized discrete optimal-control problem.
//!
//! The infimum over controls is discretized as piecewise-constant controls
//! on the solver grid and solved as a sequence of penalized problems
//! `J_β(φ) = ½Σ_k dt‖φ_k‖² + β·violation(z^φ)²` over an increasing β
//! schedule, by limited-memory quasi-Newton descent with multi-starts.
//! Gradients come from the discrete adjoint of the implicit Euler recursion;
//! for drifts whose derivative only exists almost everywhere, a
//! finite-difference probe at each stage start detects disagreement and
//! switches that stage to full finite-difference gradients.
//!
//! Infeasibility (no control meets the constraint at the largest penalty) is
//! reported in the result, never thrown.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

// Resolves float math in no_std builds; shadowed by inherent methods under std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::evolution::{integrate_raw, ControlPath, IntegratorScratch, SolverConfig};
use crate::gelfand::{DiscreteTriple, PathRecord, StateVector};
use crate::operators::{odd_power, DriftSpec, NoiseSpec};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// The event/target set: which paths count as "in".
///
/// Raw membership (`violation == 0`) is what the rare-event estimators
/// count; the optimizer declares feasibility at `violation ≤ tol` with the
/// optimizer's own tolerance.
#[derive(Debug, Clone)]
pub enum ConstraintSpec {
    /// `⟨weights, z_T⟩_H ≥ threshold`.
    TerminalFunctional { weights: Vec<f64>, threshold: f64 },
    /// `‖z_T − target‖_H ≤ tolerance` (the terminal slice of the path
    /// metric).
    TerminalState { target: Vec<f64>, tolerance: f64 },
    /// `ρ(z, target) ≤ tolerance` in the path metric.
    PathTarget {
        target: PathRecord,
        tolerance: f64,
    },
}

impl ConstraintSpec {
    pub fn validate(&self, triple: &DiscreteTriple, cfg: &SolverConfig) -> Result<()> {
        let dim = triple.interior_dim();
        match self {
            ConstraintSpec::TerminalFunctional { weights, threshold } => {
                if weights.len() != dim {
                    return Err(Error::ShapeMismatch(
                        "functional weights must have interior length",
                    ));
                }
                if weights.iter().any(|w| !w.is_finite()) || !threshold.is_finite() {
                    return Err(Error::NonFinite("terminal functional"));
                }
            }
            ConstraintSpec::TerminalState { target, tolerance } => {
                if target.len() != dim {
                    return Err(Error::ShapeMismatch(
                        "target state must have interior length",
                    ));
                }
                if target.iter().any(|w| !w.is_finite()) || !tolerance.is_finite() {
                    return Err(Error::NonFinite("terminal target"));
                }
                if *tolerance < 0.0 {
                    return Err(Error::InvalidConfig("tolerance must be nonnegative"));
                }
            }
            ConstraintSpec::PathTarget { target, tolerance } => {
                if !target.triple().compatible(triple) {
                    return Err(Error::ShapeMismatch("target path on a different triple"));
                }
                if target.n_times() != cfg.n_steps + 1
                    || (target.dt() - cfg.dt()).abs() > 1e-12 * cfg.dt()
                {
                    return Err(Error::ShapeMismatch(
                        "target path must live on the solver grid",
                    ));
                }
                if !tolerance.is_finite() || *tolerance < 0.0 {
                    return Err(Error::InvalidConfig("tolerance must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    /// Constraint violation of a path: zero exactly when the path is in the
    /// set, and continuous in the path otherwise.
    pub fn violation(&self, path: &PathRecord) -> Result<f64> {
        self.validate(
            path.triple(),
            // Only grid compatibility matters here; synthesize the shape.
            &SolverConfig::new(
                path.time_grid()[path.n_times() - 1].max(f64::MIN_POSITIVE),
                path.n_times() - 1,
            )?,
        )?;
        Ok(self.violation_flat(path.triple(), path.n_times(), path.states_flat()))
    }

    /// Whether the path is in the set (raw membership, no slack).
    pub fn is_satisfied(&self, path: &PathRecord) -> Result<bool> {
        Ok(self.violation(path)? == 0.0)
    }

    /// Hot-path violation on flat state storage (`n_times × dim`).
    pub(crate) fn violation_flat(
        &self,
        triple: &DiscreteTriple,
        n_times: usize,
        states: &[f64],
    ) -> f64 {
        let dim = triple.interior_dim();
        match self {
            ConstraintSpec::TerminalFunctional { .. } | ConstraintSpec::TerminalState { .. } => {
                self.terminal_violation(triple, &states[(n_times - 1) * dim..])
            }
            ConstraintSpec::PathTarget { target, .. } => {
                let mut sup_h = 0.0f64;
                let mut int_v = 0.0;
                let mut diff = vec![0.0; dim];
                for k in 0..n_times {
                    accumulate_path_row(
                        triple,
                        target,
                        k,
                        n_times,
                        &states[k * dim..(k + 1) * dim],
                        &mut diff,
                        &mut sup_h,
                        &mut int_v,
                    );
                }
                self.path_violation(triple, sup_h, int_v)
            }
        }
    }

    /// Violation of a terminal-kind constraint from the final slice alone.
    pub(crate) fn terminal_violation(&self, triple: &DiscreteTriple, term: &[f64]) -> f64 {
        match self {
            ConstraintSpec::TerminalFunctional { weights, threshold } => {
                (threshold - triple.h_inner_slice(weights, term)).max(0.0)
            }
            ConstraintSpec::TerminalState { target, tolerance } => {
                let mut acc = 0.0;
                for (a, b) in term.iter().zip(target) {
                    let d = a - b;
                    acc += d * d;
                }
                ((acc * triple.cell_width()).sqrt() - tolerance).max(0.0)
            }
            ConstraintSpec::PathTarget { .. } => {
                unreachable!("terminal_violation on a path constraint")
            }
        }
    }

    /// Violation of a path-tube constraint from the ρ-metric accumulators.
    pub(crate) fn path_violation(&self, triple: &DiscreteTriple, sup_h: f64, int_v: f64) -> f64 {
        let ConstraintSpec::PathTarget { tolerance, .. } = self else {
            unreachable!("path_violation on a terminal constraint")
        };
        (sup_h + int_v.powf(1.0 / triple.alpha()) - tolerance).max(0.0)
    }

    /// Fills `∂(violation²)/∂z_k` for every grid point into `grad`
    /// (flat `n_times × dim`, zeroed first) and returns the violation.
    /// Almost-everywhere derivative: hinge kinks and the sup-attaining time
    /// use the one-sided selection.
    fn penalty_state_gradients(
        &self,
        triple: &DiscreteTriple,
        n_times: usize,
        states: &[f64],
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let dim = triple.interior_dim();
        let h = triple.cell_width();
        let v = self.violation_flat(triple, n_times, states);
        if v == 0.0 {
            return 0.0;
        }
        let term_at = (n_times - 1) * dim;
        let term = &states[term_at..];
        match self {
            ConstraintSpec::TerminalFunctional { weights, .. } => {
                // v = c − ⟨g, z_T⟩_H on the active branch.
                for (j, w) in weights.iter().enumerate() {
                    grad[term_at + j] = 2.0 * v * (-h * w);
                }
            }
            ConstraintSpec::TerminalState { target, .. } => {
                let mut norm = 0.0;
                for (a, b) in term.iter().zip(target) {
                    let d = a - b;
                    norm += d * d;
                }
                let norm = (norm * h).sqrt();
                if norm > 0.0 {
                    for j in 0..dim {
                        grad[term_at + j] = 2.0 * v * h * (term[j] - target[j]) / norm;
                    }
                }
            }
            ConstraintSpec::PathTarget { target, .. } => {
                let alpha = triple.alpha();
                let dt = target.dt();
                let mut sup_h = 0.0f64;
                let mut k_star = 0usize;
                let mut int_v = 0.0;
                let mut diff = vec![0.0; dim];
                for k in 0..n_times {
                    let a = &states[k * dim..(k + 1) * dim];
                    for ((d, x), y) in diff.iter_mut().zip(a).zip(target.state_row(k)) {
                        *d = x - y;
                    }
                    let hn = triple.h_norm_slice(&diff);
                    if hn > sup_h {
                        sup_h = hn;
                        k_star = k;
                    }
                    let w = if k == 0 || k == n_times - 1 { 0.5 * dt } else { dt };
                    int_v += w * triple.v_norm_pow_slice(&diff);
                }
                // sup term: flows through the attaining slice only.
                if sup_h > 0.0 {
                    let a = &states[k_star * dim..(k_star + 1) * dim];
                    let b = target.state_row(k_star);
                    for j in 0..dim {
                        grad[k_star * dim + j] += 2.0 * v * h * (a[j] - b[j]) / sup_h;
                    }
                }
                // integral term: (Q)^{1/α} with Q = Σ w_k ‖Δ_k‖_V^α.
                if int_v > 0.0 {
                    let q_factor = (1.0 / alpha) * int_v.powf(1.0 / alpha - 1.0);
                    let inv_h = 1.0 / h;
                    for k in 0..n_times {
                        let a = &states[k * dim..(k + 1) * dim];
                        for ((d, x), y) in diff.iter_mut().zip(a).zip(target.state_row(k)) {
                            *d = x - y;
                        }
                        let w = if k == 0 || k == n_times - 1 { 0.5 * dt } else { dt };
                        // ∂‖u‖_V^α/∂u_j = α(|g_j|^{α−1}sgn − |g_{j+1}|^{α−1}sgn)
                        for j in 0..dim {
                            let g_left = if j == 0 {
                                diff[0] * inv_h
                            } else {
                                (diff[j] - diff[j - 1]) * inv_h
                            };
                            let g_right = if j + 1 == dim {
                                -diff[j] * inv_h
                            } else {
                                (diff[j + 1] - diff[j]) * inv_h
                            };
                            let dv = alpha
                                * (odd_power(g_left, alpha - 1.0)
                                    - odd_power(g_right, alpha - 1.0));
                            grad[k * dim + j] += 2.0 * v * q_factor * w * dv;
                        }
                    }
                }
            }
        }
        v
    }
}

/// `½ Σ_k dt ‖φ_k‖²_U`, the rate-function integrand.
pub fn control_energy(control: &ControlPath) -> f64 {
    control.energy()
}

/// One time-slice of the ρ-metric accumulators: the running sup of H-norm
/// distances and the trapezoid integral of V-norm powers. Shared between
/// full-path evaluation and the online per-sample tracker so both see
/// identical arithmetic (membership verdicts must not depend on whether the
/// path was stored).
pub(crate) fn accumulate_path_row(
    triple: &DiscreteTriple,
    target: &PathRecord,
    k: usize,
    n_times: usize,
    row: &[f64],
    diff: &mut [f64],
    sup_h: &mut f64,
    int_v: &mut f64,
) {
    let dt = target.dt();
    for ((d, x), y) in diff.iter_mut().zip(row).zip(target.state_row(k)) {
        *d = x - y;
    }
    *sup_h = (*sup_h).max(triple.h_norm_slice(diff));
    let w = if k == 0 || k == n_times - 1 { 0.5 * dt } else { dt };
    *int_v += w * triple.v_norm_pow_slice(diff);
}

/// Shared forward/adjoint workspace, reused across optimizer iterations.
struct AdjointWorkspace {
    scratch: IntegratorScratch,
    /// Forward states, flat `(n_steps+1) × dim`.
    states: Vec<f64>,
    /// β·∂(violation²)/∂z, same layout.
    pgrad: Vec<f64>,
    mu: Vec<f64>,
    rhs: Vec<f64>,
    work: Vec<f64>,
    dterm: Vec<f64>,
    bt: Vec<f64>,
}

impl AdjointWorkspace {
    fn new(dim: usize, n_steps: usize, modes: usize) -> Self {
        Self {
            scratch: IntegratorScratch::new(dim),
            states: vec![0.0; (n_steps + 1) * dim],
            pgrad: vec![0.0; (n_steps + 1) * dim],
            mu: vec![0.0; dim],
            rhs: vec![0.0; dim],
            work: vec![0.0; dim],
            dterm: vec![0.0; dim],
            bt: vec![0.0; modes],
        }
    }
}

struct Problem<'a> {
    triple: &'a Arc<DiscreteTriple>,
    constraint: &'a ConstraintSpec,
    x0: &'a [f64],
    drift: &'a DriftSpec,
    noise: &'a NoiseSpec,
    cfg: &'a SolverConfig,
}

impl Problem<'_> {
    /// Forward solve into `ws.states`; returns the constraint violation.
    fn forward(&self, control: &ControlPath, ws: &mut AdjointWorkspace) -> Result<f64> {
        let dim = self.triple.interior_dim();
        let states = &mut ws.states;
        integrate_raw(
            self.triple,
            self.drift,
            self.noise,
            self.cfg,
            self.x0,
            0.0,
            Some(control),
            None,
            None,
            &mut ws.scratch,
            |k, _, s| states[k * dim..(k + 1) * dim].copy_from_slice(s),
        )?;
        Ok(self
            .constraint
            .violation_flat(self.triple, self.cfg.n_steps + 1, &ws.states))
    }

    /// Penalized objective `J_β(φ)`.
    fn objective(&self, control: &ControlPath, beta: f64, ws: &mut AdjointWorkspace) -> Result<f64> {
        let v = self.forward(control, ws)?;
        Ok(control.energy() + beta * v * v)
    }

    /// Objective and adjoint gradient; `grad` is flat `n_steps × modes`.
    fn objective_and_gradient(
        &self,
        control: &ControlPath,
        beta: f64,
        ws: &mut AdjointWorkspace,
        grad: &mut [f64],
    ) -> Result<f64> {
        let dim = self.triple.interior_dim();
        let n = self.cfg.n_steps;
        let m = self.noise.modes();
        let dt = self.cfg.dt();
        let v = self.forward(control, ws)?;
        let j_val = control.energy() + beta * v * v;

        self.constraint
            .penalty_state_gradients(self.triple, n + 1, &ws.states, &mut ws.pgrad);
        if beta != 1.0 {
            ws.pgrad.iter_mut().for_each(|g| *g *= beta);
        }

        // Terminal multiplier: (I − dt A'(t_N, z_N))ᵀ μ_N = −∂P/∂z_N.
        let z_n = &ws.states[n * dim..(n + 1) * dim];
        for j in 0..dim {
            ws.mu[j] = -ws.pgrad[n * dim + j];
        }
        let jac = self.drift.jacobian(self.triple, self.cfg.t_end, z_n);
        jac.solve_shifted_transposed(dt, &mut ws.mu, &mut ws.work);

        // Backward sweep: at step k the control gradient needs μ_{k+1}.
        for k in (0..n).rev() {
            let t_k = k as f64 * dt;
            let z_k = &ws.states[k * dim..(k + 1) * dim];
            // ∇_{φ_k} J = dt(φ_k − B(t_k, z_k)ᵀ μ_{k+1}).
            self.noise
                .transpose_dot(self.triple, t_k, z_k, &ws.mu, &mut ws.bt, &mut ws.work);
            let phi = control.step_slice(k);
            for j in 0..m {
                grad[k * m + j] = dt * (phi[j] - ws.bt[j]);
            }
            if k == 0 {
                break; // z_0 is fixed; no earlier multiplier needed
            }
            // (I − dt A'(t_k, z_k))ᵀ μ_k = (I + dt D_k)ᵀ μ_{k+1} − ∂P/∂z_k.
            ws.rhs.copy_from_slice(&ws.mu);
            ws.dterm.iter_mut().for_each(|x| *x = 0.0);
            self.noise
                .state_jacobian_transpose_add(self.triple, t_k, phi, &ws.mu, &mut ws.dterm);
            for j in 0..dim {
                ws.rhs[j] += dt * ws.dterm[j] - ws.pgrad[k * dim + j];
            }
            let jac = self.drift.jacobian(self.triple, t_k, z_k);
            ws.mu.copy_from_slice(&ws.rhs);
            jac.solve_shifted_transposed(dt, &mut ws.mu, &mut ws.work);
        }
        Ok(j_val)
    }

    /// Central finite-difference gradient of `J_β` (fallback path).
    fn fd_gradient(
        &self,
        control: &ControlPath,
        beta: f64,
        ws: &mut AdjointWorkspace,
        grad: &mut [f64],
    ) -> Result<f64> {
        let base = self.objective(control, beta, ws)?;
        let mut probe = control.clone();
        for i in 0..grad.len() {
            let x = control.values()[i];
            let step = 1e-4 * x.abs().max(1.0);
            probe.values_mut()[i] = x + step;
            let up = self.objective(&probe, beta, ws)?;
            probe.values_mut()[i] = x - step;
            let down = self.objective(&probe, beta, ws)?;
            probe.values_mut()[i] = x;
            grad[i] = (up - down) / (2.0 * step);
        }
        Ok(base)
    }
}

/// Objective value and adjoint gradient of the penalized problem
/// `J_β(φ) = ½Σ dt‖φ_k‖² + β·violation(z^φ)²`, gradient in control shape.
pub fn action_gradient(
    control: &ControlPath,
    constraint: &ConstraintSpec,
    beta: f64,
    x0: &StateVector,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
) -> Result<(f64, ControlPath)> {
    let triple = x0.triple();
    constraint.validate(triple, cfg)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidConfig("penalty weight must be nonnegative"));
    }
    let problem = Problem {
        triple,
        constraint,
        x0: x0.values(),
        drift,
        noise,
        cfg,
    };
    let mut ws = AdjointWorkspace::new(triple.interior_dim(), cfg.n_steps, noise.modes());
    let mut grad = vec![0.0; cfg.n_steps * noise.modes()];
    let j = problem.objective_and_gradient(control, beta, &mut ws, &mut grad)?;
    let g = ControlPath::from_values(cfg.t_end, cfg.n_steps, noise.modes(), grad)?;
    Ok((j, g))
}

/// Optimizer knobs; the defaults implement the documented behavior.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    /// Iteration cap per penalty stage.
    pub max_iters: usize,
    /// Curvature-pair window of the limited-memory quasi-Newton update.
    pub lbfgs_window: usize,
    /// Increasing penalty weights.
    pub beta_schedule: Vec<f64>,
    /// Feasibility is declared at violation ≤ this.
    pub feasibility_tol: f64,
    /// Number of starts: the zero control plus seeded Gaussian controls.
    pub multi_starts: usize,
    /// Standard deviation of the Gaussian start controls.
    pub start_amplitude: f64,
    /// Descent stops within a stage at this gradient norm.
    pub gradient_tol: f64,
    pub seed: u64,
    /// Largest β the infeasibility escalation may reach.
    pub beta_escalation_cap: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iters: 400,
            lbfgs_window: 10,
            beta_schedule: vec![10.0, 1e2, 1e3, 1e4],
            feasibility_tol: 1e-6,
            multi_starts: 4,
            start_amplitude: 0.5,
            gradient_tol: 1e-8,
            seed: 0,
            beta_escalation_cap: 1e10,
        }
    }
}

impl OptimizerSettings {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.lbfgs_window == 0 {
            return Err(Error::InvalidConfig("optimizer iteration limits must be positive"));
        }
        if self.beta_schedule.is_empty()
            || self
                .beta_schedule
                .iter()
                .any(|b| !b.is_finite() || *b <= 0.0)
            || self.beta_schedule.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidConfig(
                "penalty schedule must be positive and increasing",
            ));
        }
        if !(self.feasibility_tol > 0.0) || !(self.gradient_tol > 0.0) {
            return Err(Error::InvalidConfig("optimizer tolerances must be positive"));
        }
        if self.multi_starts == 0 {
            return Err(Error::InvalidConfig("need at least one start"));
        }
        if !self.start_amplitude.is_finite() || self.start_amplitude < 0.0 {
            return Err(Error::InvalidConfig("start amplitude must be nonnegative"));
        }
        Ok(())
    }
}

/// Outcome of the rate-function minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionResult {
    pub minimizer: ControlPath,
    /// `I* = ½∫‖φ*‖²` of the returned minimizer (pure energy, no penalty).
    pub value: f64,
    pub iterations: usize,
    pub gradient_norm_final: f64,
    /// Best feasible energy per start (infinite where a start found none).
    pub multi_start_values: Vec<f64>,
    pub converged: bool,
    pub feasible: bool,
    /// Constraint violation of the returned minimizer.
    pub violation: f64,
    /// Violation at the end of each penalty stage of the winning start
    /// (non-increasing along the schedule).
    pub stage_violations: Vec<f64>,
}

struct StartOutcome {
    minimizer: ControlPath,
    energy: f64,
    violation: f64,
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
    start_energy: f64,
    stage_violations: Vec<f64>,
}

/// Minimizes the action over controls on the solver grid. The reported
/// violation is the constraint violation of the returned minimizer; when no
/// feasible control is found even after penalty escalation, `feasible` is
/// false and `value` is the energy of the least-violating candidate.
pub fn minimize_action(
    constraint: &ConstraintSpec,
    x0: &StateVector,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    opt: &OptimizerSettings,
) -> Result<ActionResult> {
    minimize_action_with_starts(constraint, x0, drift, noise, cfg, opt, &[])
}

/// [`minimize_action`] with extra caller-supplied starting controls appended
/// to the default zero + Gaussian starts.
pub fn minimize_action_with_starts(
    constraint: &ConstraintSpec,
    x0: &StateVector,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    opt: &OptimizerSettings,
    extra_starts: &[ControlPath],
) -> Result<ActionResult> {
    let triple = x0.triple();
    cfg.validate()?;
    constraint.validate(triple, cfg)?;
    opt.validate()?;
    let m = noise.modes();
    if m == 0 {
        return Err(Error::InvalidConfig(
            "action minimization needs at least one noise mode",
        ));
    }
    let problem = Problem {
        triple,
        constraint,
        x0: x0.values(),
        drift,
        noise,
        cfg,
    };
    let mut ws = AdjointWorkspace::new(triple.interior_dim(), cfg.n_steps, m);

    // Shortcut: the noise-free path already satisfies the constraint.
    let zero = ControlPath::zeros(cfg.t_end, cfg.n_steps, m)?;
    let v0 = problem.forward(&zero, &mut ws)?;
    if v0 <= opt.feasibility_tol {
        return Ok(ActionResult {
            minimizer: zero,
            value: 0.0,
            iterations: 0,
            gradient_norm_final: 0.0,
            multi_start_values: vec![0.0],
            converged: true,
            feasible: true,
            violation: v0,
            stage_violations: vec![v0],
        });
    }

    // Assemble starts: zero, seeded Gaussians, then caller extras.
    let mut starts = vec![zero];
    for s in 1..opt.multi_starts {
        let mut rng = stream_rng(opt.seed, s as u64);
        starts.push(ControlPath::gaussian(
            cfg.t_end,
            cfg.n_steps,
            m,
            opt.start_amplitude,
            &mut rng,
        )?);
    }
    starts.extend_from_slice(extra_starts);

    let mut outcomes: Vec<StartOutcome> = Vec::with_capacity(starts.len());
    for start in &starts {
        outcomes.push(run_start(&problem, start, opt, &mut ws)?);
    }

    // Selection: feasible candidates by (energy, start energy) with a tie
    // window; otherwise the least-violating candidate.
    let multi_start_values: Vec<f64> = outcomes
        .iter()
        .map(|o| {
            if o.violation <= opt.feasibility_tol {
                o.energy
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let any_feasible = multi_start_values.iter().any(|v| v.is_finite());
    let best = if any_feasible {
        let mut best = 0usize;
        for i in 1..outcomes.len() {
            if multi_start_values[i] < multi_start_values[best] - 1e-10 {
                best = i;
            } else if (multi_start_values[i] - multi_start_values[best]).abs() <= 1e-10
                && outcomes[i].start_energy < outcomes[best].start_energy
            {
                best = i;
            }
        }
        best
    } else {
        let mut best = 0usize;
        for i in 1..outcomes.len() {
            if outcomes[i].violation < outcomes[best].violation {
                best = i;
            }
        }
        best
    };
    let chosen = &outcomes[best];
    Ok(ActionResult {
        minimizer: chosen.minimizer.clone(),
        value: chosen.energy,
        iterations: chosen.iterations,
        gradient_norm_final: chosen.gradient_norm,
        multi_start_values,
        converged: chosen.converged && any_feasible,
        feasible: any_feasible,
        violation: chosen.violation,
        stage_violations: chosen.stage_violations.clone(),
    })
}

/// Full optimization of one start: β schedule, then feasibility repair.
fn run_start(
    problem: &Problem<'_>,
    start: &ControlPath,
    opt: &OptimizerSettings,
    ws: &mut AdjointWorkspace,
) -> Result<StartOutcome> {
    let start_energy = start.energy();
    let mut control = start.clone();
    let mut iterations = 0usize;
    let mut gradient_norm = f64::INFINITY;
    let mut converged = false;
    let mut stage_violations = Vec::with_capacity(opt.beta_schedule.len());

    // Best feasible iterate seen anywhere (guards the upper-bound property:
    // starting feasible can never end worse than the start).
    let mut best_feasible: Option<(ControlPath, f64)> = None;
    let note_feasible = |c: &ControlPath, v: f64, best: &mut Option<(ControlPath, f64)>| {
        if v <= opt.feasibility_tol {
            let e = c.energy();
            if best.as_ref().map_or(true, |(_, be)| e < *be) {
                *best = Some((c.clone(), e));
            }
        }
    };
    let v_start = problem.forward(&control, ws)?;
    note_feasible(&control, v_start, &mut best_feasible);

    for &beta in &opt.beta_schedule {
        let stage = descend_stage(problem, &mut control, beta, opt, ws)?;
        iterations += stage.iterations;
        gradient_norm = stage.gradient_norm;
        converged = stage.converged;
        let v = problem.forward(&control, ws)?;
        stage_violations.push(v);
        note_feasible(&control, v, &mut best_feasible);
    }

    let mut violation = *stage_violations.last().expect("schedule non-empty");

    // Feasibility repair. A penalty minimizer sits slightly on the
    // infeasible side (violation ≈ value/(β·scale)); close the residual gap.
    if violation > opt.feasibility_tol {
        if matches!(problem.constraint, ConstraintSpec::TerminalFunctional { .. }) {
            // Scale search: for terminal functionals, growing the control
            // monotonically pushes the functional through the threshold in
            // the linear regime around the minimizer.
            if let Some((repaired, v)) = rescale_to_feasible(problem, &control, opt, ws)? {
                control = repaired;
                violation = v;
                note_feasible(&control, v, &mut best_feasible);
            }
        }
        if violation > opt.feasibility_tol {
            // Escalate the penalty beyond the schedule.
            let mut beta = *opt.beta_schedule.last().expect("non-empty") * 10.0;
            while violation > opt.feasibility_tol && beta <= opt.beta_escalation_cap {
                let stage = descend_stage(problem, &mut control, beta, opt, ws)?;
                iterations += stage.iterations;
                gradient_norm = stage.gradient_norm;
                converged = stage.converged;
                violation = problem.forward(&control, ws)?;
                note_feasible(&control, violation, &mut best_feasible);
                beta *= 10.0;
            }
        }
    }

    // Prefer the best feasible iterate over the final one.
    if let Some((best_c, _)) = &best_feasible {
        let bv = problem.forward(best_c, ws)?;
        if violation > opt.feasibility_tol || best_c.energy() <= control.energy() {
            control = best_c.clone();
            violation = bv;
        }
    }
    Ok(StartOutcome {
        energy: control.energy(),
        minimizer: control,
        violation,
        iterations,
        gradient_norm,
        converged,
        start_energy,
        stage_violations,
    })
}

/// Doubling + bisection on `s ≥ 1` for the smallest scale with
/// `violation(s·φ) ≤ tol/2`; one forward solve per probe.
fn rescale_to_feasible(
    problem: &Problem<'_>,
    control: &ControlPath,
    opt: &OptimizerSettings,
    ws: &mut AdjointWorkspace,
) -> Result<Option<(ControlPath, f64)>> {
    let target = 0.5 * opt.feasibility_tol;
    let violation_at = |s: f64, ws: &mut AdjointWorkspace| -> Result<f64> {
        let mut scaled = control.clone();
        scaled.values_mut().iter_mut().for_each(|x| *x *= s);
        problem.forward(&scaled, ws)
    };
    let mut hi = 1.0;
    let mut v_hi = violation_at(hi, ws)?;
    let mut lo = 1.0;
    let mut grew = false;
    while v_hi > target && hi < 64.0 {
        lo = hi;
        hi *= 2.0;
        v_hi = violation_at(hi, ws)?;
        grew = true;
    }
    if v_hi > target {
        return Ok(None);
    }
    if grew {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if violation_at(mid, ws)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let mut scaled = control.clone();
    scaled.values_mut().iter_mut().for_each(|x| *x *= hi);
    let v = problem.forward(&scaled, ws)?;
    Ok(Some((scaled, v)))
}

struct StageOutcome {
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
}

/// One penalty stage: limited-memory quasi-Newton with Armijo backtracking.
/// A finite-difference probe at the stage start switches the whole stage to
/// finite-difference gradients when the a.e. adjoint disagrees.
fn descend_stage(
    problem: &Problem<'_>,
    control: &mut ControlPath,
    beta: f64,
    opt: &OptimizerSettings,
    ws: &mut AdjointWorkspace,
) -> Result<StageOutcome> {
    let dofs = control.values().len();
    let mut grad = vec![0.0; dofs];
    let mut f = problem.objective_and_gradient(control, beta, ws, &mut grad)?;
    let use_fd = adjoint_disagrees_with_fd(problem, control, beta, &grad, ws)?;
    if use_fd {
        f = problem.fd_gradient(control, beta, ws, &mut grad)?;
    }

    let window = opt.lbfgs_window;
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(window);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(window);
    let mut rho: Vec<f64> = Vec::with_capacity(window);
    let mut direction = vec![0.0; dofs];
    let mut trial = control.clone();
    let mut new_grad = vec![0.0; dofs];
    let mut gnorm = norm2(&grad);
    let mut converged = gnorm <= opt.gradient_tol;
    let mut iterations = 0usize;

    for _ in 0..opt.max_iters {
        if converged {
            break;
        }
        iterations += 1;
        two_loop(&grad, &s_hist, &y_hist, &rho, &mut direction);
        let mut slope: f64 = direction.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            // Reset curvature memory and fall back to steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            for (d, g) in direction.iter_mut().zip(&grad) {
                *d = -g;
            }
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
        }
        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..40 {
            for i in 0..dofs {
                trial.values_mut()[i] = control.values()[i] + step * direction[i];
            }
            f_new = problem.objective(&trial, beta, ws)?;
            if f_new.is_finite() && f_new <= f + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // line search exhausted: local flatness at this β
        }
        f = if use_fd {
            problem.fd_gradient(&trial, beta, ws, &mut new_grad)?
        } else {
            problem.objective_and_gradient(&trial, beta, ws, &mut new_grad)?
        };
        debug_assert!((f - f_new).abs() <= 1e-9 * f.abs().max(1.0));
        // Curvature pair.
        let mut s_vec = vec![0.0; dofs];
        let mut y_vec = vec![0.0; dofs];
        let mut sy = 0.0;
        for i in 0..dofs {
            s_vec[i] = step * direction[i];
            y_vec[i] = new_grad[i] - grad[i];
            sy += s_vec[i] * y_vec[i];
        }
        if sy > 1e-12 {
            if s_hist.len() == window {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            s_hist.push(s_vec);
            y_hist.push(y_vec);
            rho.push(1.0 / sy);
        }
        control
            .values_mut()
            .copy_from_slice(trial.values());
        grad.copy_from_slice(&new_grad);
        gnorm = norm2(&grad);
        converged = gnorm <= opt.gradient_tol;
    }
    Ok(StageOutcome {
        iterations,
        gradient_norm: gnorm,
        converged,
    })
}

/// Probes a few coordinates of the adjoint gradient against central
/// differences; disagreement beyond 1e−2 relative switches the stage to
/// finite differences (the a.e. derivative selection was wrong somewhere).
fn adjoint_disagrees_with_fd(
    problem: &Problem<'_>,
    control: &ControlPath,
    beta: f64,
    grad: &[f64],
    ws: &mut AdjointWorkspace,
) -> Result<bool> {
    let dofs = grad.len();
    let n_probe = dofs.min(3);
    let gscale = norm2(grad).max(1e-8);
    let mut probe = control.clone();
    for p in 0..n_probe {
        // Spread probes across the control; deterministic.
        let i = p * dofs / n_probe;
        let x = control.values()[i];
        let step = 1e-4 * x.abs().max(1.0);
        probe.values_mut()[i] = x + step;
        let up = problem.objective(&probe, beta, ws)?;
        probe.values_mut()[i] = x - step;
        let down = problem.objective(&probe, beta, ws)?;
        probe.values_mut()[i] = x;
        let fd = (up - down) / (2.0 * step);
        // FD truncation noise floor: |f|·1e-16/step plus curvature terms.
        let floor = 1e-6 * gscale + 1e-9;
        if (fd - grad[i]).abs() > 1e-2 * grad[i].abs().max(fd.abs()).max(floor) {
            return Ok(true);
        }
    }
    Ok(false)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Two-loop recursion for the limited-memory inverse-Hessian product;
/// writes `−H·grad` into `direction`.
fn two_loop(
    grad: &[f64],
    s_hist: &[Vec<f64>],
    y_hist: &[Vec<f64>],
    rho: &[f64],
    direction: &mut [f64],
) {
    direction.copy_from_slice(grad);
    let k = s_hist.len();
    let mut alpha = vec![0.0; k];
    for i in (0..k).rev() {
        let a = rho[i]
            * s_hist[i]
                .iter()
                .zip(direction.iter())
                .map(|(s, q)| s * q)
                .sum::<f64>();
        alpha[i] = a;
        for (q, y) in direction.iter_mut().zip(&y_hist[i]) {
            *q -= a * y;
        }
    }
    if k > 0 {
        let yy: f64 = y_hist[k - 1].iter().map(|y| y * y).sum();
        let sy: f64 = s_hist[k - 1]
            .iter()
            .zip(&y_hist[k - 1])
            .map(|(s, y)| s * y)
            .sum();
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            direction.iter_mut().for_each(|q| *q *= gamma);
        }
    }
    for i in 0..k {
        let b = rho[i]
            * y_hist[i]
                .iter()
                .zip(direction.iter())
                .map(|(y, q)| y * q)
                .sum::<f64>();
        for (q, s) in direction.iter_mut().zip(&s_hist[i]) {
            *q += (alpha[i] - b) * s;
        }
    }
    direction.iter_mut().for_each(|q| *q = -*q);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::scalar_surrogate;
    use crate::gelfand::DiscreteTriple;
    use crate::operators::{Coefficient, NoiseMode, NoiseSpec, StateFunctional};

    /// Scalar surrogate constraint `z_T ≥ c` as a terminal functional
    /// (weight 1/h makes the H-pairing pick out the nodal value).
    fn surrogate_threshold(triple: &DiscreteTriple, c: f64) -> ConstraintSpec {
        ConstraintSpec::TerminalFunctional {
            weights: vec![1.0 / triple.cell_width()],
            threshold: c,
        }
    }

    #[test]
    fn energy_is_quadratic_and_matches_the_constant_case() {
        let c = ControlPath::constant(2.0, 50, &[3.0]).unwrap();
        assert!((control_energy(&c) - 0.5 * 9.0 * 2.0).abs() <= 1e-12);
        let mut rng = stream_rng(7, 0);
        let c = ControlPath::gaussian(1.0, 16, 2, 1.0, &mut rng).unwrap();
        let doubled = ControlPath::from_values(
            1.0,
            16,
            2,
            c.values().iter().map(|x| 2.0 * x).collect(),
        )
        .unwrap();
        let ratio = control_energy(&doubled) / control_energy(&c);
        assert!((ratio - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn adjoint_gradient_matches_the_analytic_lq_gradient() {
        // Scalar OU: z_T is affine in φ with ∂z_T/∂φ_k = dt σ (1+dtλ)^{-(N-k)}.
        // The oracle solves the implicit step exactly, so drive the fixed
        // point to machine precision.
        let (t, drift, noise) = scalar_surrogate(1.0, 1.0).unwrap();
        let n = 40;
        let cfg = SolverConfig::new(1.0, n)
            .unwrap()
            .with_tolerance(1e-14, 500)
            .unwrap();
        let constraint = surrogate_threshold(&t, 1.0);
        let x0 = StateVector::zero(&t);
        let control = ControlPath::from_fn(1.0, n, 1, |k, _| 0.3 + 0.01 * k as f64).unwrap();
        let beta = 100.0;
        let (_, grad) = action_gradient(&control, &constraint, beta, &x0, &drift, &noise, &cfg).unwrap();

        let dt = cfg.dt();
        let lam = 1.0;
        // Forward recursion for z_T and the hinge.
        let mut z = 0.0;
        for k in 0..n {
            z = (z + dt * control.values()[k]) / (1.0 + dt * lam);
        }
        let hinge = (1.0 - z).max(0.0);
        assert!(hinge > 0.0, "test needs the penalty active");
        for k in 0..n {
            let sens = dt * (1.0 + dt * lam).powi(-((n - k) as i32));
            let expect = dt * control.values()[k] - 2.0 * beta * hinge * sens;
            let got = grad.values()[k];
            assert!(
                (got - expect).abs() <= 1e-10 * expect.abs().max(1.0),
                "k={k}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn adjoint_gradient_matches_central_differences() {
        // Smooth p = 2 configurations with state-dependent noise and all
        // three constraint kinds.
        let t = DiscreteTriple::build(0.0, 1.0, 8, 2.0).unwrap();
        let drift = DriftSpec::reaction_diffusion(2.0).unwrap();
        let profile = StateVector::sine_mode(&t, 1).unwrap().values().to_vec();
        let noise = NoiseSpec::finite_rank(vec![
            NoiseMode {
                functional: StateFunctional::Constant(1.0),
                amplitude: Coefficient::Constant(1.0),
                shape: StateVector::sine_mode(&t, 1).unwrap().values().to_vec(),
            },
            NoiseMode {
                functional: StateFunctional::HInner(profile),
                amplitude: Coefficient::Constant(0.8),
                shape: StateVector::sine_mode(&t, 2).unwrap().values().to_vec(),
            },
        ])
        .unwrap();
        let n = 12;
        let cfg = SolverConfig::new(0.5, n).unwrap();
        let x0 = StateVector::from_fn(&t, |x| 0.4 * (core::f64::consts::PI * x).sin());

        // Uncontrolled path as the target: any nonzero control then sits a
        // positive distance away, keeping the hinge active.
        let target_path = {
            let control = ControlPath::zeros(0.5, n, 2).unwrap();
            crate::evolution::solve_skeleton(&x0, &control, &drift, &noise, &cfg).unwrap()
        };
        let constraints = [
            ConstraintSpec::TerminalFunctional {
                weights: vec![1.0; t.interior_dim()],
                threshold: 2.0,
            },
            ConstraintSpec::TerminalState {
                target: vec![0.8; t.interior_dim()],
                tolerance: 0.05,
            },
            ConstraintSpec::PathTarget {
                target: target_path,
                tolerance: 1e-3,
            },
        ];

        let mut checked = 0usize;
        for (ci, constraint) in constraints.iter().enumerate() {
            for rep in 0..7 {
                let mut rng = stream_rng(55, (ci * 10 + rep) as u64);
                let control = ControlPath::gaussian(0.5, n, 2, 0.4, &mut rng).unwrap();
                let beta = 50.0;
                let (j, grad) =
                    action_gradient(&control, constraint, beta, &x0, &drift, &noise, &cfg).unwrap();
                assert!(j.is_finite());
                let problem = Problem {
                    triple: &t,
                    constraint,
                    x0: x0.values(),
                    drift: &drift,
                    noise: &noise,
                    cfg: &cfg,
                };
                let mut ws = AdjointWorkspace::new(t.interior_dim(), n, 2);
                let mut fd = vec![0.0; n * 2];
                problem.fd_gradient(&control, beta, &mut ws, &mut fd).unwrap();
                let scale = norm2(&fd).max(1e-8);
                for i in 0..fd.len() {
                    let err = (grad.values()[i] - fd[i]).abs();
                    assert!(
                        err <= 1e-5 * fd[i].abs().max(scale),
                        "constraint {ci} rep {rep} dof {i}: adjoint {} vs fd {}",
                        grad.values()[i],
                        fd[i]
                    );
                }
                checked += 1;
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn stationary_when_the_constraint_is_inactive() {
        let (t, drift, noise) = scalar_surrogate(1.0, 1.0).unwrap();
        let cfg = SolverConfig::new(1.0, 20).unwrap();
        // Threshold below the rest state: z ≡ 0 satisfies it.
        let constraint = surrogate_threshold(&t, -1.0);
        let x0 = StateVector::zero(&t);
        let control = ControlPath::zeros(1.0, 20, 1).unwrap();
        let (j, grad) =
            action_gradient(&control, &constraint, 1e4, &x0, &drift, &noise, &cfg).unwrap();
        assert_eq!(j, 0.0);
        assert!(grad.values().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn scalar_ou_action_matches_the_linear_quadratic_oracle() {
        let (t, drift, noise) = scalar_surrogate(1.0, 1.0).unwrap();
        let cfg = SolverConfig::new(1.0, 200).unwrap();
        let constraint = surrogate_threshold(&t, 1.0);
        let x0 = StateVector::zero(&t);
        let opt = OptimizerSettings::default();
        let res = minimize_action(&constraint, &x0, &drift, &noise, &cfg, &opt).unwrap();
        let exact = 1.0 / (1.0 - (-2.0f64).exp());
        assert!(res.feasible, "violation {}", res.violation);
        assert!(res.violation <= opt.feasibility_tol);
        assert!(
            (res.value - exact).abs() <= 0.01 * exact,
            "I* = {} vs {exact}",
            res.value
        );
        // Penalty-schedule monotonicity of the reported violations.
        for w in res.stage_violations.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{:?}", res.stage_violations);
        }
    }

    #[test]
    fn doubling_the_threshold_quadruples_the_action() {
        let (t, drift, noise) = scalar_surrogate(1.0, 1.0).unwrap();
        let cfg = SolverConfig::new(1.0, 100).unwrap();
        let x0 = StateVector::zero(&t);
        let opt = OptimizerSettings::default();
        let r1 = minimize_action(&surrogate_threshold(&t, 1.0), &x0, &drift, &noise, &cfg, &opt)
            .unwrap();
        let r2 = minimize_action(&surrogate_threshold(&t, 2.0), &x0, &drift, &noise, &cfg, &opt)
            .unwrap();
        let ratio = r2.value / r1.value;
        assert!((ratio - 4.0).abs() <= 0.02 * 4.0, "ratio {ratio}");
    }

    #[test]
    fn zero_action_when_the_rest_state_is_already_in() {
        let (t, drift, noise) = scalar_surrogate(1.0, 1.0).unwrap();
        let cfg = SolverConfig::new(1.0, 50).unwrap();
        let constraint = surrogate_threshold(&t, -0.5);
        let x0 = StateVector::zero(&t);
        let res = minimize_action(
            &constraint,
            &x0,
            &drift,
            &noise,
            &cfg,
            &OptimizerSettings::default(),
        )
        .unwrap();
        assert_eq!(res.value, 0.0);
        assert!(res.feasible && res.converged);
        assert!(res.minimizer.is_zero());
    }

    #[test]
    fn feasible_starts_never_get_worse() {
        let (t, drift, noise) = scalar_surrogate(1.0, 1.0).unwrap();
        let n = 50;
        let cfg = SolverConfig::new(1.0, n).unwrap();
        let constraint = surrogate_threshold(&t, 1.0);
        let x0 = StateVector::zero(&t);
        let opt = OptimizerSettings::default();
        for rep in 0..10 {
            // A generously scaled constant control is feasible: it drives
            // z_T well past the threshold.
            let mut rng = stream_rng(404, rep);
            let base = ControlPath::gaussian(1.0, n, 1, 0.3, &mut rng).unwrap();
            let feasible_start = ControlPath::from_values(
                1.0,
                n,
                1,
                base.values().iter().map(|x| x + 3.0).collect(),
            )
            .unwrap();
            let v = {
                let problem = Problem {
                    triple: &t,
                    constraint: &constraint,
                    x0: x0.values(),
                    drift: &drift,
                    noise: &noise,
                    cfg: &cfg,
                };
                let mut ws = AdjointWorkspace::new(1, n, 1);
                problem.forward(&feasible_start, &mut ws).unwrap()
            };
            assert_eq!(v, 0.0, "start must be feasible for this test");
            let res = minimize_action_with_starts(
                &constraint,
                &x0,
                &drift,
                &noise,
                &cfg,
                &opt,
                core::slice::from_ref(&feasible_start),
            )
            .unwrap();
            assert!(
                res.value <= feasible_start.energy() + 1e-8,
                "rep {rep}: {} vs start {}",
                res.value,
                feasible_start.energy()
            );
        }
    }

    #[test]
    fn infeasible_problems_are_reported_not_thrown() {
        // σ = 0: no control authority at all, threshold unreachable.
        let (t, drift, noise) = scalar_surrogate(1.0, 0.0).unwrap();
        let cfg = SolverConfig::new(1.0, 20).unwrap();
        let constraint = surrogate_threshold(&t, 1.0);
        let x0 = StateVector::zero(&t);
        let opt = OptimizerSettings {
            beta_escalation_cap: 1e6, // keep the escalation brief
            ..OptimizerSettings::default()
        };
        let res = minimize_action(&constraint, &x0, &drift, &noise, &cfg, &opt).unwrap();
        assert!(!res.feasible);
        assert!(res.violation > opt.feasibility_tol);
    }
}
