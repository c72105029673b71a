//! Time integration of the small-noise dynamics, the controlled dynamics,
//! the deterministic skeleton, and the noise-projected variant, all by one
//! drift-implicit / noise-and-control-explicit Euler scheme:
//!
//! ```text
//! z_{k+1} − dt·A(t_{k+1}, z_{k+1}) = z_k + dt·B(t_k, z_k) φ_k + ε·B(t_k, z_k) ΔW_k
//! ```
//!
//! Implicitness keeps the stiff monotone drifts stable at usable `dt`;
//! keeping noise and control explicit makes the per-step change of measure
//! (likelihood ratios over `ΔW_k`) exact. The implicit equation is solved by
//! damped Picard iteration with an optional dense finite-difference Newton
//! fallback on small grids.
//!
//! Consistency contracts, relied on by the rare-event estimators:
//! * `ε = 0` skips the noise term entirely, so [`simulate`] with `ε = 0`
//!   equals [`solve_skeleton`] bitwise on the same grid;
//! * a control step whose values are all exactly zero is skipped, so a
//!   zero [`ControlPath`] is bitwise equivalent to no control;
//! * the projected variant consumes its [`NoiseDraw`] identically to
//!   [`simulate`] and with all modes retained takes the very same
//!   accumulation path, hence is bitwise identical there.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

// Resolves float math in no_std builds; shadowed by inherent methods under std.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::gelfand::{DiscreteTriple, PathKind, PathRecord, StateVector};
use crate::operators::{Coefficient, DriftSpec, NoiseSpec, StateFunctional};
use crate::{Error, Result};

/// Knobs of the implicit time stepper.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Horizon `T > 0`; the grid is uniform with `dt = T / n_steps`.
    pub t_end: f64,
    pub n_steps: usize,
    /// Residual tolerance of the implicit step, measured in the H-norm.
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Fixed-point damping `θ ∈ (0, 1]`: `x ← (1−θ)x + θ(rhs + dt·A(x))`.
    pub damping: f64,
    /// Rescue non-contractive steps by dense finite-difference Newton
    /// (grids up to 256 interior nodes).
    pub newton_fallback: bool,
}

impl SolverConfig {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        let cfg = Self {
            t_end,
            n_steps,
            picard_tol: 1e-10,
            picard_max_iters: 200,
            damping: 0.5,
            newton_fallback: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_damping(mut self, damping: f64) -> Result<Self> {
        self.damping = damping;
        self.validate()?;
        Ok(self)
    }

    pub fn with_tolerance(mut self, tol: f64, max_iters: usize) -> Result<Self> {
        self.picard_tol = tol;
        self.picard_max_iters = max_iters;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t_end.is_finite() || self.t_end <= 0.0 {
            return Err(Error::InvalidConfig("horizon must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("need at least one time step"));
        }
        if !(self.picard_tol > 0.0) {
            return Err(Error::InvalidConfig("picard_tol must be positive"));
        }
        if self.picard_max_iters == 0 {
            return Err(Error::InvalidConfig("picard_max_iters must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig("damping must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// The contractivity margin every integrator entry point enforces.
    pub(crate) fn check_contractive(&self, drift: &DriftSpec) -> Result<()> {
        let dtk = self.dt() * drift.declared_k();
        if dtk >= 1.0 {
            return Err(Error::NonContractive { dt_times_k: dtk });
        }
        Ok(())
    }
}

/// Piecewise-constant `U = R^m`-valued control on the solver grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    t_end: f64,
    n_steps: usize,
    modes: usize,
    /// Row-major `n_steps × modes`.
    values: Vec<f64>,
}

impl ControlPath {
    pub fn zeros(t_end: f64, n_steps: usize, modes: usize) -> Result<Self> {
        Self::from_values(t_end, n_steps, modes, vec![0.0; n_steps * modes])
    }

    /// The same `U`-vector on every interval.
    pub fn constant(t_end: f64, n_steps: usize, step: &[f64]) -> Result<Self> {
        let mut values = Vec::with_capacity(n_steps * step.len());
        for _ in 0..n_steps {
            values.extend_from_slice(step);
        }
        Self::from_values(t_end, n_steps, step.len(), values)
    }

    pub fn from_fn(
        t_end: f64,
        n_steps: usize,
        modes: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(n_steps * modes);
        for k in 0..n_steps {
            for j in 0..modes {
                values.push(f(k, j));
            }
        }
        Self::from_values(t_end, n_steps, modes, values)
    }

    /// Mean-zero Gaussian steps of standard deviation `amplitude`.
    pub fn gaussian(
        t_end: f64,
        n_steps: usize,
        modes: usize,
        amplitude: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let values = (0..n_steps * modes)
            .map(|_| amplitude * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        Self::from_values(t_end, n_steps, modes, values)
    }

    pub fn from_values(t_end: f64, n_steps: usize, modes: usize, values: Vec<f64>) -> Result<Self> {
        if !t_end.is_finite() || t_end <= 0.0 {
            return Err(Error::InvalidConfig("control horizon must be positive"));
        }
        if n_steps == 0 {
            return Err(Error::InvalidConfig("control needs at least one step"));
        }
        if values.len() != n_steps * modes {
            return Err(Error::ShapeMismatch("control values must be n_steps × modes"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control value"));
        }
        Ok(Self {
            t_end,
            n_steps,
            modes,
            values,
        })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn step_slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.modes..(k + 1) * self.modes]
    }

    /// `½ Σ_k dt ‖φ_k‖²_U`.
    pub fn energy(&self) -> f64 {
        0.5 * self.dt() * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    /// All entries exactly zero (then the control term is skipped bitwise).
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub(crate) fn matches(&self, cfg: &SolverConfig, noise_modes: usize) -> Result<()> {
        if self.n_steps != cfg.n_steps
            || (self.t_end - cfg.t_end).abs() > 1e-12 * cfg.t_end.abs().max(1.0)
        {
            return Err(Error::ShapeMismatch("control grid must match the solver grid"));
        }
        if self.modes != noise_modes {
            return Err(Error::ShapeMismatch(
                "control modes must equal the noise modes",
            ));
        }
        Ok(())
    }
}

/// Brownian increments `ΔW_k ~ N(0, dt)` on the solver grid, reproducible
/// from the seed and the dimensions alone.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    seed: u64,
    n_steps: usize,
    modes: usize,
    dt: f64,
    /// Row-major `n_steps × modes`.
    increments: Vec<f64>,
}

impl NoiseDraw {
    pub fn generate(seed: u64, n_steps: usize, modes: usize, dt: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidConfig("noise draw needs at least one step"));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidConfig("noise draw needs dt > 0"));
        }
        let mut draw = Self {
            seed,
            n_steps,
            modes,
            dt,
            increments: vec![0.0; n_steps * modes],
        };
        draw.fill(seed);
        Ok(draw)
    }

    /// Refills in place for a new seed, reusing the allocation. The shape is
    /// kept; use [`Self::generate`] for a different grid.
    pub fn refill(&mut self, seed: u64) {
        self.fill(seed);
    }

    fn fill(&mut self, seed: u64) {
        self.seed = seed;
        let sqrt_dt = self.dt.sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for x in &mut self.increments {
            *x = sqrt_dt * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_slice(&self, k: usize) -> &[f64] {
        &self.increments[k * self.modes..(k + 1) * self.modes]
    }

    fn matches(&self, cfg: &SolverConfig, noise_modes: usize) -> Result<()> {
        if self.n_steps != cfg.n_steps
            || (self.dt - cfg.dt()).abs() > 1e-12 * cfg.dt().max(1.0)
        {
            return Err(Error::ShapeMismatch("noise draw grid must match the solver grid"));
        }
        if self.modes != noise_modes {
            return Err(Error::ShapeMismatch("noise draw modes must equal the noise modes"));
        }
        Ok(())
    }
}

/// Reusable buffers of the integrator; construct once per worker and feed to
/// the crate-internal raw loop to keep the per-sample cost allocation-free.
pub(crate) struct IntegratorScratch {
    cur: Vec<f64>,
    rhs: Vec<f64>,
    iter: Vec<f64>,
    eval: Vec<f64>,
    col: Vec<f64>,
    drift_scratch: Vec<f64>,
    noise_acc: Vec<f64>,
    project: Vec<f64>,
    /// Dense Newton workspace, allocated on first fallback only.
    newton: Option<NewtonScratch>,
}

struct NewtonScratch {
    jac: Vec<f64>,
    pivots: Vec<usize>,
    f0: Vec<f64>,
    probe: Vec<f64>,
    step: Vec<f64>,
    trial: Vec<f64>,
}

impl IntegratorScratch {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            cur: vec![0.0; dim],
            rhs: vec![0.0; dim],
            iter: vec![0.0; dim],
            eval: vec![0.0; dim],
            col: vec![0.0; dim],
            drift_scratch: vec![0.0; dim],
            noise_acc: vec![0.0; dim],
            project: vec![0.0; dim],
            newton: None,
        }
    }
}

/// Maximum interior dimension for the dense Newton fallback.
const NEWTON_DIM_CAP: usize = 256;

/// Solves `x − dt·A(t_slv, x) = scratch.rhs`, starting from the iterate
/// already placed in `scratch.iter`; on success `scratch.iter` holds the
/// solution with implicit residual (H-norm) at most `picard_tol`.
fn solve_implicit(
    triple: &DiscreteTriple,
    drift: &DriftSpec,
    cfg: &SolverConfig,
    t_slv: f64,
    step: usize,
    scratch: &mut IntegratorScratch,
) -> Result<()> {
    let dim = triple.interior_dim();
    let dt = cfg.dt();
    let theta = cfg.damping;
    let mut residual = f64::INFINITY;
    let mut initial_residual = f64::INFINITY;
    for it in 0..cfg.picard_max_iters {
        drift.apply_into(triple, t_slv, &scratch.iter, &mut scratch.eval, &mut scratch.drift_scratch);
        // eval ← rhs + dt·A(iter); the gap to iter is the residual at iter.
        let mut res_sq = 0.0;
        for j in 0..dim {
            scratch.eval[j] = scratch.rhs[j] + dt * scratch.eval[j];
            let d = scratch.iter[j] - scratch.eval[j];
            res_sq += d * d;
        }
        residual = (res_sq * triple.cell_width()).sqrt().min(f64::INFINITY);
        // Interior quadrature weights are all h, so this is the H-norm.
        if it == 0 {
            initial_residual = residual;
        }
        if residual <= cfg.picard_tol {
            return Ok(());
        }
        if !residual.is_finite() || residual > 1e12 * initial_residual.max(1.0) {
            break; // diverging; hand over to Newton
        }
        for j in 0..dim {
            scratch.iter[j] = (1.0 - theta) * scratch.iter[j] + theta * scratch.eval[j];
        }
    }
    if cfg.newton_fallback && dim <= NEWTON_DIM_CAP {
        if !scratch.iter.iter().all(|x| x.is_finite()) {
            scratch.iter.copy_from_slice(&scratch.rhs);
        }
        if newton_rescue(triple, drift, cfg, t_slv, scratch)? {
            return Ok(());
        }
        drift.apply_into(triple, t_slv, &scratch.iter, &mut scratch.eval, &mut scratch.drift_scratch);
        let mut res_sq = 0.0;
        for j in 0..dim {
            let d = scratch.iter[j] - scratch.rhs[j] - dt * scratch.eval[j];
            res_sq += d * d;
        }
        residual = (res_sq * triple.cell_width()).sqrt();
    }
    Err(Error::SolverFailure {
        step,
        time: t_slv,
        residual,
    })
}

/// Dense finite-difference Newton on `F(x) = x − rhs − dt·A(t, x)`.
/// Returns `Ok(true)` when the residual tolerance was reached.
fn newton_rescue(
    triple: &DiscreteTriple,
    drift: &DriftSpec,
    cfg: &SolverConfig,
    t_slv: f64,
    scratch: &mut IntegratorScratch,
) -> Result<bool> {
    let dim = triple.interior_dim();
    let dt = cfg.dt();
    let h_w = triple.cell_width();
    if scratch.newton.is_none() {
        scratch.newton = Some(NewtonScratch {
            jac: vec![0.0; dim * dim],
            pivots: vec![0; dim],
            f0: vec![0.0; dim],
            probe: vec![0.0; dim],
            step: vec![0.0; dim],
            trial: vec![0.0; dim],
        });
    }
    let IntegratorScratch {
        rhs,
        iter,
        eval,
        drift_scratch,
        newton,
        ..
    } = scratch;
    let nw = newton.as_mut().expect("allocated above");

    let residual_at = |x: &[f64],
                       eval: &mut Vec<f64>,
                       drift_scratch: &mut Vec<f64>,
                       out: &mut [f64]|
     -> f64 {
        drift.apply_into(triple, t_slv, x, eval, drift_scratch);
        let mut res_sq = 0.0;
        for j in 0..dim {
            out[j] = x[j] - rhs[j] - dt * eval[j];
            res_sq += out[j] * out[j];
        }
        (res_sq * h_w).sqrt()
    };

    let mut res = residual_at(iter, eval, drift_scratch, &mut nw.f0);
    for _ in 0..60 {
        if res <= cfg.picard_tol {
            return Ok(true);
        }
        if !res.is_finite() {
            return Ok(false);
        }
        // FD Jacobian of F, column by column.
        let scale = iter.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let fd_h = 1e-7 * scale;
        for k in 0..dim {
            nw.probe.copy_from_slice(iter);
            nw.probe[k] += fd_h;
            drift.apply_into(triple, t_slv, &nw.probe, eval, drift_scratch);
            for j in 0..dim {
                let fj = nw.probe[j] - rhs[j] - dt * eval[j];
                nw.jac[j * dim + k] = (fj - nw.f0[j]) / fd_h;
            }
        }
        if !lu_factor(&mut nw.jac, &mut nw.pivots, dim) {
            return Ok(false);
        }
        nw.step.copy_from_slice(&nw.f0);
        lu_solve(&nw.jac, &nw.pivots, dim, &mut nw.step);
        // Damped update: halve until the residual does not grow.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            for j in 0..dim {
                nw.trial[j] = iter[j] - lambda * nw.step[j];
            }
            let res_trial = residual_at(&nw.trial, eval, drift_scratch, &mut nw.probe);
            if res_trial.is_finite() && res_trial < res {
                iter.copy_from_slice(&nw.trial);
                nw.f0.copy_from_slice(&nw.probe);
                res = res_trial;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Ok(false);
        }
    }
    Ok(res <= cfg.picard_tol)
}

/// In-place dense LU with partial pivoting; returns false on singularity.
fn lu_factor(a: &mut [f64], pivots: &mut [usize], n: usize) -> bool {
    for col in 0..n {
        let mut p = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                p = row;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return false;
        }
        pivots[col] = p;
        if p != col {
            for k in 0..n {
                a.swap(col * n + k, p * n + k);
            }
        }
        let inv = 1.0 / a[col * n + col];
        for row in col + 1..n {
            let m = a[row * n + col] * inv;
            a[row * n + col] = m;
            for k in col + 1..n {
                a[row * n + k] -= m * a[col * n + k];
            }
        }
    }
    true
}

fn lu_solve(a: &[f64], pivots: &[usize], n: usize, b: &mut [f64]) {
    for col in 0..n {
        b.swap(col, pivots[col]);
        for row in col + 1..n {
            b[row] -= a[row * n + col] * b[col];
        }
    }
    for row in (0..n).rev() {
        for k in row + 1..n {
            b[row] -= a[row * n + k] * b[k];
        }
        b[row] /= a[row * n + row];
    }
}

/// The shared integrator loop. `observe` sees every grid point including the
/// initial one: `(k, t_k, state_k)` for `k = 0..=n_steps`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_raw(
    triple: &DiscreteTriple,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    x0: &[f64],
    eps: f64,
    control: Option<&ControlPath>,
    draw: Option<&NoiseDraw>,
    retained_noise_modes: Option<usize>,
    scratch: &mut IntegratorScratch,
    mut observe: impl FnMut(usize, f64, &[f64]),
) -> Result<()> {
    cfg.validate()?;
    cfg.check_contractive(drift)?;
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidConfig("noise intensity must be finite and >= 0"));
    }
    let dim = triple.interior_dim();
    let m = noise.modes();
    if let Some(c) = control {
        c.matches(cfg, m)?;
    }
    if let Some(d) = draw {
        d.matches(cfg, m)?;
    }
    if eps > 0.0 && m > 0 && draw.is_none() {
        return Err(Error::InvalidConfig("positive noise intensity needs a draw"));
    }
    if let Some(n) = retained_noise_modes {
        if n == 0 || n > dim {
            return Err(Error::InvalidConfig(
                "retained noise modes must lie in 1..=interior dimension",
            ));
        }
    }
    let dt = cfg.dt();
    scratch.cur.copy_from_slice(x0);
    observe(0, 0.0, &scratch.cur);
    for k in 0..cfg.n_steps {
        let t_k = k as f64 * dt;
        scratch.rhs.copy_from_slice(&scratch.cur);
        if let Some(c) = control {
            let phi = c.step_slice(k);
            if phi.iter().any(|v| *v != 0.0) {
                noise.apply_scaled_into(
                    triple,
                    t_k,
                    &scratch.cur,
                    phi,
                    dt,
                    &mut scratch.rhs,
                    &mut scratch.col,
                );
            }
        }
        if eps > 0.0 && m > 0 {
            let dw = draw.expect("checked above").step_slice(k);
            match retained_noise_modes {
                // Full retention takes the same accumulation path as no
                // projection at all, keeping the two bitwise identical.
                None => noise.apply_scaled_into(
                    triple,
                    t_k,
                    &scratch.cur,
                    dw,
                    eps,
                    &mut scratch.rhs,
                    &mut scratch.col,
                ),
                Some(n) if n == dim => noise.apply_scaled_into(
                    triple,
                    t_k,
                    &scratch.cur,
                    dw,
                    eps,
                    &mut scratch.rhs,
                    &mut scratch.col,
                ),
                Some(n) => {
                    scratch.noise_acc.iter_mut().for_each(|x| *x = 0.0);
                    noise.apply_scaled_into(
                        triple,
                        t_k,
                        &scratch.cur,
                        dw,
                        eps,
                        &mut scratch.noise_acc,
                        &mut scratch.col,
                    );
                    triple.project_slice(&scratch.noise_acc, n, &mut scratch.project);
                    for j in 0..dim {
                        scratch.rhs[j] += scratch.project[j];
                    }
                }
            }
        }
        let t_slv = (k + 1) as f64 * dt;
        // Picard starts from the explicit predictor.
        scratch.iter.copy_from_slice(&scratch.rhs);
        solve_implicit(triple, drift, cfg, t_slv, k, scratch)?;
        scratch.cur.copy_from_slice(&scratch.iter);
        observe(k + 1, t_slv, &scratch.cur);
    }
    Ok(())
}

/// Solves `x − dt·A(t + dt, x) = state` for one implicit step.
pub fn implicit_step(
    state: &StateVector,
    t: f64,
    dt: f64,
    drift: &DriftSpec,
    cfg: &SolverConfig,
) -> Result<StateVector> {
    implicit_step_from_guess(state, state, t, dt, drift, cfg)
}

/// Same as [`implicit_step`] with an explicit initial iterate; by uniqueness
/// of the monotone implicit equation, the result is guess-independent up to
/// twice the residual tolerance.
pub fn implicit_step_from_guess(
    state: &StateVector,
    guess: &StateVector,
    t: f64,
    dt: f64,
    drift: &DriftSpec,
    cfg: &SolverConfig,
) -> Result<StateVector> {
    let triple = state.triple();
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidConfig("implicit step needs dt > 0"));
    }
    let mut local = cfg.clone();
    local.t_end = dt;
    local.n_steps = 1;
    local.validate()?;
    local.check_contractive(drift)?;
    let mut scratch = IntegratorScratch::new(triple.interior_dim());
    scratch.rhs.copy_from_slice(state.values());
    scratch.iter.copy_from_slice(guess.values());
    solve_implicit(triple, drift, &local, t + dt, 0, &mut scratch)?;
    StateVector::from_values(triple, scratch.iter)
}

fn record_path(
    triple: &Arc<DiscreteTriple>,
    kind: PathKind,
    cfg: &SolverConfig,
    run: impl FnOnce(&mut dyn FnMut(usize, f64, &[f64])) -> Result<()>,
) -> Result<PathRecord> {
    let dim = triple.interior_dim();
    let mut times = Vec::with_capacity(cfg.n_steps + 1);
    let mut states = Vec::with_capacity((cfg.n_steps + 1) * dim);
    run(&mut |_, t, s: &[f64]| {
        times.push(t);
        states.extend_from_slice(s);
    })?;
    PathRecord::from_flat(triple, times, states, kind)
}

/// Integrates the deterministic skeleton `dz = A(t, z)dt + B(t, z)φ_t dt`.
pub fn solve_skeleton(
    x0: &StateVector,
    control: &ControlPath,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
) -> Result<PathRecord> {
    let triple = x0.triple();
    let mut scratch = IntegratorScratch::new(triple.interior_dim());
    record_path(triple, PathKind::Skeleton, cfg, |obs| {
        integrate_raw(
            triple,
            drift,
            noise,
            cfg,
            x0.values(),
            0.0,
            Some(control),
            None,
            None,
            &mut scratch,
            obs,
        )
    })
}

/// Integrates the (optionally controlled) small-noise dynamics
/// `dX = A dt + B v dt + ε B dW`.
pub fn simulate(
    x0: &StateVector,
    eps: f64,
    control: Option<&ControlPath>,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    draw: &NoiseDraw,
) -> Result<PathRecord> {
    let triple = x0.triple();
    let mut scratch = IntegratorScratch::new(triple.interior_dim());
    record_path(triple, PathKind::SdeSample, cfg, |obs| {
        integrate_raw(
            triple,
            drift,
            noise,
            cfg,
            x0.values(),
            eps,
            control,
            Some(draw),
            None,
            &mut scratch,
            obs,
        )
    })
}

/// [`simulate`] with the noise term projected onto the first `n` sine modes;
/// the draw is consumed identically, so the two paths are coupled pathwise.
pub fn galerkin_simulate(
    n: usize,
    x0: &StateVector,
    eps: f64,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    draw: &NoiseDraw,
) -> Result<PathRecord> {
    let triple = x0.triple();
    let mut scratch = IntegratorScratch::new(triple.interior_dim());
    record_path(triple, PathKind::Galerkin, cfg, |obs| {
        integrate_raw(
            triple,
            drift,
            noise,
            cfg,
            x0.values(),
            eps,
            None,
            Some(draw),
            Some(n),
            &mut scratch,
            obs,
        )
    })
}

/// The one-node quantitative surrogate: on its grid the discrete Laplacian
/// acts as `−λ·id` exactly (cell width `√(2/λ)`), and a single constant
/// noise mode of nodal value `σ` makes the dynamics the scalar
/// Ornstein–Uhlenbeck equation `dX = −λX dt + ε σ dW`, whose action and
/// hitting probabilities have closed forms.
pub fn scalar_surrogate(
    lambda: f64,
    sigma: f64,
) -> Result<(Arc<DiscreteTriple>, DriftSpec, NoiseSpec)> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidConfig("surrogate rate must be positive"));
    }
    if !sigma.is_finite() {
        return Err(Error::NonFinite("surrogate noise level"));
    }
    let h = (2.0 / lambda).sqrt();
    let triple = DiscreteTriple::build(0.0, 2.0 * h, 2, 2.0)?;
    let drift = DriftSpec::reaction_diffusion(2.0)?
        .with_eta(Coefficient::Constant(0.0))?;
    let noise = NoiseSpec::finite_rank(vec![crate::operators::NoiseMode {
        functional: StateFunctional::Constant(1.0),
        amplitude: Coefficient::Constant(1.0),
        shape: vec![sigma],
    }])?;
    Ok((triple, drift, noise))
}
