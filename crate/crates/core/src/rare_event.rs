//! Monte Carlo and importance-sampled estimation of event probabilities
//! under small noise, and ε-sweeps comparing the empirical statistic
//! `ε² log P(X^ε ∈ A)` against the rate-function prediction `−I*`.
//!
//! Determinism contract: sample `i` is driven by the stream derived from
//! `(master seed, i)` alone, and all reductions over samples run in fixed
//! index order (pairwise summation), so estimates are invariant to how a
//! worker pool partitions the index range.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

// Resolves float math in no_std builds; shadowed by inherent methods under std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::action::{accumulate_path_row, ActionResult, ConstraintSpec};
use crate::evolution::{integrate_raw, ControlPath, IntegratorScratch, NoiseDraw, SolverConfig};
use crate::gelfand::{DiscreteTriple, StateVector};
use crate::operators::{DriftSpec, NoiseSpec};
use crate::rng::derive_stream_seed;
use crate::{Error, Result};

/// Two-sided 97.5% standard-normal quantile used by every 95% interval.
const Z_95: f64 = 1.959963984540054;

/// Result of one simulated sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleOutcome {
    /// The path landed in the event set.
    pub hit: bool,
    /// Girsanov log-weight of the sample (0 for plain Monte Carlo).
    pub log_weight: f64,
    /// The implicit solver failed on this sample; counted as a miss.
    pub failed: bool,
}

/// Worker factory: called once per worker, the returned closure maps a
/// sample index to its outcome. Outcomes depend only on the index, never on
/// which worker ran it.
pub type SampleFactory<'a> =
    dyn Fn() -> Box<dyn FnMut(usize) -> SampleOutcome + Send + 'a> + Sync + 'a;

/// Worker-pool abstraction over embarrassingly parallel sample loops.
///
/// Contract: the returned vector has length `n_samples` and position `i`
/// holds the outcome of sample `i`, regardless of how indices were
/// partitioned across workers.
pub trait SampleRunner {
    fn run<'a>(&self, n_samples: usize, factory: &SampleFactory<'a>) -> Vec<SampleOutcome>;
}

/// Single-threaded reference runner.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialRunner;

impl SampleRunner for SerialRunner {
    fn run<'a>(&self, n_samples: usize, factory: &SampleFactory<'a>) -> Vec<SampleOutcome> {
        let mut worker = factory();
        (0..n_samples).map(|i| worker(i)).collect()
    }
}

/// Fixed-order pairwise reduction; the summation tree depends only on the
/// slice length, making sums reproducible and accurate for large `n`.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// 95% Wilson score interval for a binomial proportion.
pub(crate) fn wilson_ci(hits: usize, n_samples: usize) -> (f64, f64) {
    let n = n_samples as f64;
    let p = hits as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The algebra gives exactly 0/1 at the boundary counts; snap there so
    // rounding dust never pushes a degenerate p̂ outside its own interval.
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == n_samples {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

/// Which estimator produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Plain,
    Importance,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Plain => "plain",
            Estimator::Importance => "importance",
        }
    }
}

/// One probability estimate at a fixed noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub eps: f64,
    pub n_samples: usize,
    pub hits: usize,
    pub p_hat: f64,
    /// 95% interval: Wilson score for plain Monte Carlo, normal
    /// approximation on the weighted mean for importance sampling.
    pub ci_low: f64,
    pub ci_high: f64,
    /// The LDP statistic `ε² log p̂`. Plain rows always use the
    /// continuity-corrected `p̂ = (hits + ½)/(n + 1)` so the statistic is
    /// defined even at zero hits; importance rows use the weighted
    /// estimator and fall back to the corrected form when no path hit.
    pub log_stat: f64,
    pub estimator: Estimator,
    /// Effective sample size `(Σw)²/Σw²`; equals `n_samples` for plain
    /// Monte Carlo (all weights one).
    pub ess: f64,
}

/// Sweep of estimates across decreasing ε against the rate prediction.
#[derive(Debug, Clone)]
pub struct LdpTable {
    /// Rows in input order: decreasing ε.
    pub rows: Vec<EstimateRecord>,
    /// Rate-function minimum the statistic is compared against.
    pub i_star: f64,
    /// Per-row `|−log_stat − i_star|`; empty when `flagged`.
    pub gaps: Vec<f64>,
    /// The action problem was infeasible: no tilt available, no gaps.
    pub flagged: bool,
}

/// Online event-membership evaluation: consumes states slice by slice so no
/// sample ever stores its full path. Arithmetic is shared with
/// [`ConstraintSpec::violation_flat`], so verdicts agree bitwise with
/// evaluating a stored path.
struct EventTracker<'a> {
    constraint: &'a ConstraintSpec,
    triple: &'a DiscreteTriple,
    n_times: usize,
    sup_h: f64,
    int_v: f64,
    diff: Vec<f64>,
    terminal: Vec<f64>,
}

impl<'a> EventTracker<'a> {
    fn new(constraint: &'a ConstraintSpec, triple: &'a DiscreteTriple, n_steps: usize) -> Self {
        let dim = triple.interior_dim();
        Self {
            constraint,
            triple,
            n_times: n_steps + 1,
            sup_h: 0.0,
            int_v: 0.0,
            diff: vec![0.0; dim],
            terminal: vec![0.0; dim],
        }
    }

    fn reset(&mut self) {
        self.sup_h = 0.0;
        self.int_v = 0.0;
    }

    fn observe(&mut self, k: usize, state: &[f64]) {
        match self.constraint {
            ConstraintSpec::TerminalFunctional { .. } | ConstraintSpec::TerminalState { .. } => {
                if k == self.n_times - 1 {
                    self.terminal.copy_from_slice(state);
                }
            }
            ConstraintSpec::PathTarget { target, .. } => accumulate_path_row(
                self.triple,
                target,
                k,
                self.n_times,
                state,
                &mut self.diff,
                &mut self.sup_h,
                &mut self.int_v,
            ),
        }
    }

    fn violation(&self) -> f64 {
        match self.constraint {
            ConstraintSpec::TerminalFunctional { .. } | ConstraintSpec::TerminalState { .. } => {
                self.constraint.terminal_violation(self.triple, &self.terminal)
            }
            ConstraintSpec::PathTarget { .. } => {
                self.constraint
                    .path_violation(self.triple, self.sup_h, self.int_v)
            }
        }
    }
}

/// Runs `n_samples` independent simulations of the ε-noise dynamics (tilted
/// by `tilt` when given) and returns per-sample outcomes in index order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_outcomes(
    event: &ConstraintSpec,
    eps: f64,
    n_samples: usize,
    tilt: Option<&ControlPath>,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    x0: &StateVector,
    seed: u64,
    runner: &dyn SampleRunner,
) -> Result<Vec<SampleOutcome>> {
    let triple = x0.triple();
    cfg.validate()?;
    event.validate(triple, cfg)?;
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidConfig("noise level must be positive"));
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("need at least one sample"));
    }
    if let Some(t) = tilt {
        t.matches(cfg, noise.modes())?;
    }
    let template = NoiseDraw::generate(seed, cfg.n_steps, noise.modes(), cfg.dt())?;
    // Girsanov log-weight, dt-quadratic part: control-only, one value for
    // every sample.
    let quad_term = tilt.map_or(0.0, |t| {
        -0.5 / (eps * eps) * t.dt() * t.values().iter().map(|v| v * v).sum::<f64>()
    });
    let x0v = x0.values();
    let n_steps = cfg.n_steps;

    run_samples(runner, n_samples, move || {
        let mut scratch = IntegratorScratch::new(triple.interior_dim());
        let mut draw = template.clone();
        let mut tracker = EventTracker::new(event, triple, n_steps);
        Box::new(move |i: usize| {
            draw.refill(derive_stream_seed(seed, i as u64));
            tracker.reset();
            let solved = integrate_raw(
                triple,
                drift,
                noise,
                cfg,
                x0v,
                eps,
                tilt,
                Some(&draw),
                None,
                &mut scratch,
                |k, _, s| tracker.observe(k, s),
            );
            if solved.is_err() {
                return SampleOutcome {
                    hit: false,
                    log_weight: 0.0,
                    failed: true,
                };
            }
            let hit = tracker.violation() == 0.0;
            let log_weight = match tilt {
                None => 0.0,
                Some(t) => {
                    // −(1/ε) Σ_k ⟨tilt_k, ΔW_k⟩ plus the quadratic part.
                    let mut s = 0.0;
                    for k in 0..n_steps {
                        let tk = t.step_slice(k);
                        let wk = draw.step_slice(k);
                        for j in 0..tk.len() {
                            s += tk[j] * wk[j];
                        }
                    }
                    quad_term - s / eps
                }
            };
            SampleOutcome {
                hit,
                log_weight,
                failed: false,
            }
        })
    })
}

/// Coerces a concrete factory closure to the trait-object shape the runner
/// expects.
fn run_samples<'a, F>(runner: &dyn SampleRunner, n_samples: usize, factory: F) -> Result<Vec<SampleOutcome>>
where
    F: Fn() -> Box<dyn FnMut(usize) -> SampleOutcome + Send + 'a> + Sync + 'a,
{
    let outcomes = runner.run(n_samples, &factory);
    if outcomes.len() != n_samples {
        return Err(Error::ShapeMismatch(
            "runner must return one outcome per sample",
        ));
    }
    Ok(outcomes)
}

/// The continuity-corrected LDP statistic `ε² log((hits+½)/(n+1))`, defined
/// for every hit count including zero.
fn corrected_log_stat(eps: f64, hits: usize, n_samples: usize) -> f64 {
    eps * eps * ((hits as f64 + 0.5) / (n_samples as f64 + 1.0)).ln()
}

fn assemble_plain(eps: f64, n_samples: usize, outcomes: &[SampleOutcome]) -> EstimateRecord {
    let hits = outcomes.iter().filter(|o| o.hit && !o.failed).count();
    let (ci_low, ci_high) = wilson_ci(hits, n_samples);
    EstimateRecord {
        eps,
        n_samples,
        hits,
        p_hat: hits as f64 / n_samples as f64,
        ci_low,
        ci_high,
        log_stat: corrected_log_stat(eps, hits, n_samples),
        estimator: Estimator::Plain,
        ess: n_samples as f64,
    }
}

fn assemble_importance(eps: f64, n_samples: usize, outcomes: &[SampleOutcome]) -> EstimateRecord {
    let n = n_samples as f64;
    // Hit weights in index order (log-space throughout: weights like
    // exp(−I*/ε²) underflow long before their ratios do).
    let hit_logs: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.hit && !o.failed)
        .map(|o| o.log_weight)
        .collect();
    let hits = hit_logs.len();

    // ESS over all weighted samples, hits or not: (Σw)²/Σw² is invariant
    // under the common exp(max) shift.
    let all_logs: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.failed)
        .map(|o| o.log_weight)
        .collect();
    let ess = if all_logs.is_empty() {
        0.0
    } else {
        let m = all_logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = all_logs.iter().map(|l| (l - m).exp()).collect();
        let s1 = pairwise_sum(&shifted);
        let squares: Vec<f64> = shifted.iter().map(|w| w * w).collect();
        let s2 = pairwise_sum(&squares);
        (s1 * s1 / s2).min(n)
    };

    if hits == 0 {
        // No weight information: degrade to the corrected plain statistic
        // so the row stays defined.
        let (ci_low, ci_high) = wilson_ci(0, n_samples);
        return EstimateRecord {
            eps,
            n_samples,
            hits: 0,
            p_hat: 0.0,
            ci_low,
            ci_high,
            log_stat: corrected_log_stat(eps, 0, n_samples),
            estimator: Estimator::Importance,
            ess,
        };
    }

    let l_max = hit_logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = hit_logs.iter().map(|l| (l - l_max).exp()).collect();
    let s1 = pairwise_sum(&shifted);
    let squares: Vec<f64> = shifted.iter().map(|w| w * w).collect();
    let s2 = pairwise_sum(&squares);
    // p̂ = e^{l_max}·(Σ exp(l−l_max))/n; with zero tilt l_max = 0 and the
    // shifted sum is exactly the hit count, reproducing plain MC bitwise.
    let p_hat = l_max.exp() * (s1 / n);
    let log_p = l_max + s1.ln() - n.ln();
    // Normal-approximation interval on the weighted mean of w·1{hit}:
    // sample variance in the shifted domain, scaled back by e^{l_max}.
    let half = if n_samples > 1 {
        let var_shifted = ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0);
        Z_95 * l_max.exp() * (var_shifted / n).sqrt()
    } else {
        f64::INFINITY
    };
    EstimateRecord {
        eps,
        n_samples,
        hits,
        p_hat,
        ci_low: (p_hat - half).max(0.0),
        ci_high: (p_hat + half).min(1.0),
        log_stat: eps * eps * log_p,
        estimator: Estimator::Importance,
        ess,
    }
}

/// Plain Monte Carlo estimate of `P(X^ε ∈ A)` from `n_samples` independent
/// paths. Deterministic given the seed, regardless of worker count.
#[allow(clippy::too_many_arguments)]
pub fn estimate_probability(
    event: &ConstraintSpec,
    eps: f64,
    n_samples: usize,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    x0: &StateVector,
    seed: u64,
    runner: &dyn SampleRunner,
) -> Result<EstimateRecord> {
    let outcomes = sample_outcomes(
        event, eps, n_samples, None, drift, noise, cfg, x0, seed, runner,
    )?;
    Ok(assemble_plain(eps, n_samples, &outcomes))
}

/// Importance-sampled estimate: simulates the tilted dynamics
/// `dz = A dt + B·tilt dt + εB dW` on the same per-sample streams and
/// reweights by the Girsanov density, unbiased for `P(X^ε ∈ A)`.
#[allow(clippy::too_many_arguments)]
pub fn importance_estimate(
    event: &ConstraintSpec,
    eps: f64,
    n_samples: usize,
    tilt: &ControlPath,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    x0: &StateVector,
    seed: u64,
    runner: &dyn SampleRunner,
) -> Result<EstimateRecord> {
    // An all-zero tilt is plain Monte Carlo; route through the identical
    // code path (control skipped, unit weights) so results match bitwise.
    let tilt_opt = if tilt.is_zero() {
        tilt.matches(cfg, noise.modes())?;
        None
    } else {
        Some(tilt)
    };
    let outcomes = sample_outcomes(
        event, eps, n_samples, tilt_opt, drift, noise, cfg, x0, seed, runner,
    )?;
    Ok(assemble_importance(eps, n_samples, &outcomes))
}

/// Sweeps decreasing noise levels, choosing plain Monte Carlo while the
/// rate-function prediction `exp(−I*/ε²)` exceeds `100/N` and switching to
/// importance sampling tilted by the action minimizer below that, then
/// reports per-row gaps `|−log_stat − I*|`. An infeasible action problem
/// yields a plain-only table with no gaps, flagged.
#[allow(clippy::too_many_arguments)]
pub fn ldp_sweep(
    event: &ConstraintSpec,
    eps_list: &[f64],
    budgets: &[usize],
    action: &ActionResult,
    drift: &DriftSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    x0: &StateVector,
    seed: u64,
    runner: &dyn SampleRunner,
) -> Result<LdpTable> {
    if eps_list.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one noise level"));
    }
    if eps_list.iter().any(|e| !e.is_finite() || *e <= 0.0) {
        return Err(Error::InvalidConfig("noise levels must be positive"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig("noise levels must be strictly decreasing"));
    }
    if budgets.len() != eps_list.len() {
        return Err(Error::ShapeMismatch("one sample budget per noise level"));
    }
    let flagged = !action.feasible;
    let i_star = action.value;
    let mut rows = Vec::with_capacity(eps_list.len());
    for (idx, (&eps, &n)) in eps_list.iter().zip(budgets).enumerate() {
        let row_seed = derive_stream_seed(seed, idx as u64);
        let predicted = (-i_star / (eps * eps)).exp();
        let rec = if flagged || predicted > 100.0 / n as f64 {
            estimate_probability(event, eps, n, drift, noise, cfg, x0, row_seed, runner)?
        } else {
            importance_estimate(
                event,
                eps,
                n,
                &action.minimizer,
                drift,
                noise,
                cfg,
                x0,
                row_seed,
                runner,
            )?
        };
        rows.push(rec);
    }
    let gaps = if flagged {
        Vec::new()
    } else {
        rows.iter().map(|r| (-r.log_stat - i_star).abs()).collect()
    };
    Ok(LdpTable {
        rows,
        i_star,
        gaps,
        flagged,
    })
}
