//! Acceptance gate: one test per shipped quantitative claim.
//!
//! Each test ends with a single `PASS <id>` line carrying the measured
//! figure, so a `--nocapture` run doubles as a report. Oracles are computed
//! in-line from closed forms or finite differences and never reuse the code
//! path they certify.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mldp_core::action::{
    action_gradient, control_energy, minimize_action, ConstraintSpec, OptimizerSettings,
};
use mldp_core::evolution::{
    galerkin_simulate, scalar_surrogate, simulate, solve_skeleton, ControlPath, NoiseDraw,
    SolverConfig,
};
use mldp_core::gelfand::{DiscreteTriple, StateVector};
use mldp_core::operators::{
    power_difference_upper_bound, power_gap_lower_bound, scalar_power_difference_bound,
    verify_conditions, Coefficient, ConditionName, DriftSpec, NoiseMode, NoiseSpec,
    StateFunctional,
};
use mldp_core::rng::stream_rng;
use rand::Rng;

/// Scalar OU hitting problem used throughout: rate 1, noise 1, threshold 1,
/// horizon 1. Minimal energy to reach the threshold at time 1.
const I_STAR: f64 = 1.0 / (1.0 - 1.0 / (core::f64::consts::E * core::f64::consts::E));

fn heat_drift() -> DriftSpec {
    DriftSpec::reaction_diffusion(2.0)
        .unwrap()
        .with_eta(Coefficient::Constant(0.0))
        .unwrap()
}

#[test]
fn c1_power_inequalities_hold_on_random_vectors() {
    let start = Instant::now();
    let mut rng = stream_rng(2026, 1);
    for i in 0..10_000usize {
        let dim = 1 + i % 16;
        let a: Vec<f64> = (0..dim).map(|_| 6.0 * rng.gen::<f64>() - 3.0).collect();
        let b: Vec<f64> = (0..dim).map(|_| 6.0 * rng.gen::<f64>() - 3.0).collect();
        let r = 4.0 * rng.gen::<f64>();
        let gap = power_gap_lower_bound(&a, &b, r);
        assert!(
            gap.holds_geq(1e-12),
            "gap inequality failed: dim={dim} r={r} lhs={} rhs={}",
            gap.lhs,
            gap.rhs
        );
        // r > 0 for the difference bound; keep it off the excluded endpoint.
        let r_diff = 1e-3 + 4.0 * rng.gen::<f64>();
        let diff = power_difference_upper_bound(&a, &b, r_diff);
        assert!(
            diff.holds_leq(1e-12),
            "difference bound failed: dim={dim} r={r_diff} lhs={} rhs={}",
            diff.lhs,
            diff.rhs
        );
    }
    for _ in 0..10_000usize {
        let a = 6.0 * rng.gen::<f64>() - 3.0;
        let b = 6.0 * rng.gen::<f64>() - 3.0;
        let r = 1e-3 + 0.998 * rng.gen::<f64>();
        let w = scalar_power_difference_bound(a, b, r);
        assert!(
            w.holds_leq(1e-12),
            "scalar bound failed: a={a} b={b} r={r} lhs={} rhs={}",
            w.lhs,
            w.rhs
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!("PASS c1 — 3x10^4 inequality samples, slack 1e-12, {elapsed:?}");
}

#[test]
fn c2_condition_certificates_match_the_declared_claims() {
    let start = Instant::now();
    // Discrete p-Laplace on a 64-node grid: the strong pairwise inequality
    // must hold with margin at least the declared 2^{-(p-2)}.
    for p in [2.0f64, 3.0, 4.0] {
        let triple = DiscreteTriple::build(0.0, 1.0, 64, p).unwrap();
        let drift = DriftSpec::p_laplace(p, 2.0_f64.min(p)).unwrap();
        let report =
            verify_conditions(&drift, &NoiseSpec::none(), &triple, 1000, 4242).unwrap();
        assert!(report.all_claimed_pass(), "p={p}: a claimed condition failed");
        let strong = report
            .entries
            .iter()
            .find(|e| e.condition == ConditionName::StrongMonotonicity)
            .unwrap();
        assert!(strong.claimed && strong.pass, "p={p}: strong claim missing");
        let delta_hat = strong
            .measured
            .iter()
            .find(|(k, _)| *k == "delta_hat")
            .unwrap()
            .1;
        let declared = 2.0_f64.powf(-(p - 2.0));
        assert!(
            delta_hat >= declared,
            "p={p}: measured delta {delta_hat} below declared {declared}"
        );
    }
    // Fast diffusion never claims the strong inequality but must still pass
    // the classical monotone/coercive/growth checks.
    let triple = DiscreteTriple::build(0.0, 1.0, 64, 1.5).unwrap();
    let drift = DriftSpec::fast_diffusion(0.5).unwrap();
    let report = verify_conditions(&drift, &NoiseSpec::none(), &triple, 1000, 4242).unwrap();
    assert!(report.all_claimed_pass(), "fast diffusion claimed checks failed");
    let strong = report
        .entries
        .iter()
        .find(|e| e.condition == ConditionName::StrongMonotonicity)
        .unwrap();
    assert!(!strong.claimed, "fast diffusion must not claim the strong form");
    let classical = report
        .entries
        .iter()
        .find(|e| e.condition == ConditionName::ClassicalMonotonicity)
        .unwrap();
    assert!(classical.claimed && classical.pass);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 60 s");
    println!("PASS c2 — p-Laplace strong margins and fast-diffusion classical-only, {elapsed:?}");
}

#[test]
fn c3_zero_eps_simulation_is_the_skeleton_and_converges_first_order() {
    // Bitwise: with eps = 0 the sampler must reproduce the skeleton solver
    // exactly, nonzero control included.
    let triple = DiscreteTriple::build(0.0, 1.0, 16, 2.0).unwrap();
    let drift = heat_drift();
    let noise = NoiseSpec::diagonal_decay(3, 1.0).unwrap();
    let cfg = SolverConfig::new(0.5, 48).unwrap();
    let x0 = StateVector::from_fn(&triple, |x| 0.7 * (core::f64::consts::PI * x).sin());
    let mut rng = stream_rng(7, 0);
    let ctrl = ControlPath::gaussian(0.5, 48, 3, 0.7, &mut rng).unwrap();
    let draw = NoiseDraw::generate(99, 48, 3, cfg.dt()).unwrap();
    let skel = solve_skeleton(&x0, &ctrl, &drift, &noise, &cfg).unwrap();
    let sde = simulate(&x0, 0.0, Some(&ctrl), &drift, &noise, &cfg, &draw).unwrap();
    assert_eq!(skel.states_flat().len(), sde.states_flat().len());
    for (a, b) in skel.states_flat().iter().zip(sde.states_flat()) {
        assert_eq!(a.to_bits(), b.to_bits(), "eps = 0 path deviates from skeleton");
    }

    // Scalar linear skeleton z' = -z + 1, z(0) = 0: terminal value 1 - 1/e,
    // implicit Euler error is first order, so halving dt halves the error.
    let (t, drift, noise) = scalar_surrogate(1.0, 1.0).unwrap();
    let x0 = StateVector::zero(&t);
    let target = 1.0 - (-1.0f64).exp();
    let mut errs = Vec::new();
    for n in [32usize, 64, 128, 256] {
        let cfg = SolverConfig::new(1.0, n).unwrap();
        let ctrl = ControlPath::constant(1.0, n, &[1.0]).unwrap();
        let path = solve_skeleton(&x0, &ctrl, &drift, &noise, &cfg).unwrap();
        errs.push((path.terminal_state().values()[0] - target).abs());
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!(
            (1.7..=2.3).contains(&ratio),
            "refinement ratio {ratio} outside [1.7, 2.3]; errors {errs:?}"
        );
    }
    println!(
        "PASS c3 — bitwise skeleton match; refinement ratios {:?}",
        errs.windows(2).map(|w| w[0] / w[1]).collect::<Vec<_>>()
    );
}

#[test]
fn c4_two_control_stability_bound_holds_with_discrete_slack() {
    let start = Instant::now();
    let triple = DiscreteTriple::build(0.0, 1.0, 32, 2.0).unwrap();
    let dim = triple.interior_dim();
    let drift = heat_drift();
    let (k_decl, delta_decl, alpha) = (
        drift.declared_k(),
        drift.declared_delta(),
        drift.declared_alpha(),
    );
    // State-dependent two-mode noise so the Hilbert-Schmidt term in the
    // exponent actually varies along the comparison path.
    let profile: Vec<f64> = (0..dim)
        .map(|j| {
            let x = triple.interior_position(j);
            0.5 * (2.0 * core::f64::consts::PI * x).sin()
        })
        .collect();
    let shape1: Vec<f64> = (0..dim)
        .map(|j| 0.6 * (core::f64::consts::PI * triple.interior_position(j)).sin())
        .collect();
    let shape2: Vec<f64> = (0..dim)
        .map(|j| 0.4 * (3.0 * core::f64::consts::PI * triple.interior_position(j)).sin())
        .collect();
    let noise = NoiseSpec::finite_rank(vec![
        NoiseMode {
            functional: StateFunctional::HInner(profile),
            amplitude: Coefficient::Constant(1.0),
            shape: shape1,
        },
        NoiseMode {
            functional: StateFunctional::Constant(0.5),
            amplitude: Coefficient::Constant(1.0),
            shape: shape2,
        },
    ])
    .unwrap();
    let cfg = SolverConfig::new(0.5, 64).unwrap();
    let dt = cfg.dt();
    let x0 = StateVector::from_fn(&triple, |x| 0.6 * (core::f64::consts::PI * x).sin());

    let mut worst = 0.0f64;
    for pair in 0..100u64 {
        let mut rng = stream_rng(41, pair);
        let phi = ControlPath::gaussian(0.5, 64, 2, 0.6, &mut rng).unwrap();
        let psi = ControlPath::gaussian(0.5, 64, 2, 0.6, &mut rng).unwrap();
        let z_phi = solve_skeleton(&x0, &phi, &drift, &noise, &cfg).unwrap();
        let z_psi = solve_skeleton(&x0, &psi, &drift, &noise, &cfg).unwrap();

        // Measured side: sup_k of the squared H-distance plus the
        // V-power dissipation integral over the step endpoints.
        let mut sup_h2 = 0.0f64;
        let mut v_int = 0.0f64;
        for k in 0..z_phi.n_times() {
            let d = z_phi.state_at(k).sub(&z_psi.state_at(k)).unwrap();
            let h = d.h_norm();
            sup_h2 = sup_h2.max(h * h);
            if k > 0 {
                v_int += dt * d.v_norm().powf(alpha);
            }
        }
        let measured = sup_h2 + delta_decl * v_int;

        // Comparison side: the exponential energy estimate, integrals taken
        // over the step left endpoints where the controls live.
        let mut exponent = 0.0f64;
        let mut drive = 0.0f64;
        for k in 0..64usize {
            let t = k as f64 * dt;
            let phi_k = phi.step_slice(k);
            let psi_k = psi.step_slice(k);
            let phi_sq: f64 = phi_k.iter().map(|v| v * v).sum();
            let diff_sq: f64 = phi_k
                .iter()
                .zip(psi_k)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let hs = noise.hs_norm(t, &z_psi.state_at(k)).unwrap();
            exponent += dt * (k_decl + phi_sq + hs * hs);
            drive += dt * diff_sq;
        }
        let bound = exponent.exp() * drive * (1.0 + 10.0 * dt);
        assert!(
            measured <= bound,
            "pair {pair}: measured {measured} exceeds bound {bound}"
        );
        if bound > 0.0 {
            worst = worst.max(measured / bound);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}, budget 2 min");
    println!("PASS c4 — 100 control pairs, worst measured/bound = {worst:.3e}, {elapsed:?}");
}

#[test]
fn c5_action_minimizer_matches_the_lq_oracle_and_adjoint_matches_fd() {
    let start = Instant::now();
    // Linear-quadratic oracle: steering the scalar OU across the threshold
    // costs 1/(1 - e^{-2}) in the continuum limit.
    let (triple, drift, noise) = scalar_surrogate(1.0, 1.0).unwrap();
    let x0 = StateVector::zero(&triple);
    let cfg = SolverConfig::new(1.0, 200).unwrap();
    let constraint = ConstraintSpec::TerminalFunctional {
        weights: vec![1.0 / triple.cell_width()],
        threshold: 1.0,
    };
    let opt = OptimizerSettings {
        multi_starts: 2,
        seed: 11,
        ..OptimizerSettings::default()
    };
    let result = minimize_action(&constraint, &x0, &drift, &noise, &cfg, &opt).unwrap();
    assert!(result.feasible && result.converged);
    let rel = (result.value - I_STAR).abs() / I_STAR;
    assert!(
        rel < 0.01,
        "action {} vs oracle {I_STAR}: relative error {rel}",
        result.value
    );

    // Adjoint gradient against central differences on 20 varied problems.
    let mut worst_fd = 0.0f64;
    for i in 0..20u64 {
        let mut rng = stream_rng(1100 + i, 3);
        let (drift, alpha) = match i % 4 {
            0 => (heat_drift(), 2.0),
            1 => (
                DriftSpec::reaction_diffusion(1.5)
                    .unwrap()
                    .with_eta(Coefficient::Constant(0.8))
                    .unwrap(),
                2.0,
            ),
            2 => (DriftSpec::p_laplace(3.0, 2.0).unwrap(), 3.0),
            _ => (DriftSpec::p_laplace(2.5, 1.5).unwrap(), 2.5),
        };
        let triple = DiscreteTriple::build(0.0, 1.0, 8, alpha).unwrap();
        let dim = triple.interior_dim();
        let noise = NoiseSpec::diagonal_decay(2, 1.0).unwrap();
        // Central differences divide out the step, so the implicit solves
        // must be converged well past the default residual tolerance.
        let mut cfg = SolverConfig::new(0.3, 12).unwrap();
        cfg.picard_tol = 1e-14;
        let x0 = StateVector::from_fn(&triple, |x| 0.5 * (core::f64::consts::PI * x).sin());
        let constraint = if i % 2 == 0 {
            ConstraintSpec::TerminalFunctional {
                weights: vec![1.0; dim],
                threshold: 0.2,
            }
        } else {
            ConstraintSpec::TerminalState {
                target: vec![0.1; dim],
                tolerance: 0.05,
            }
        };
        let beta = [0.5, 2.0, 10.0][(i % 3) as usize];
        let phi = ControlPath::gaussian(0.3, 12, 2, 0.5, &mut rng).unwrap();
        let (_, grad) =
            action_gradient(&phi, &constraint, beta, &x0, &drift, &noise, &cfg).unwrap();

        let objective = |ctrl: &ControlPath| -> f64 {
            let path = solve_skeleton(&x0, ctrl, &drift, &noise, &cfg).unwrap();
            let v = constraint.violation(&path).unwrap();
            control_energy(ctrl) + beta * v * v
        };
        let base = phi.values().to_vec();
        let mut fd = vec![0.0f64; base.len()];
        for j in 0..base.len() {
            let step = 1e-6 * base[j].abs().max(1.0);
            let mut up = base.clone();
            up[j] += step;
            let mut down = base.clone();
            down[j] -= step;
            let ju = objective(&ControlPath::from_values(0.3, 12, 2, up).unwrap());
            let jd = objective(&ControlPath::from_values(0.3, 12, 2, down).unwrap());
            fd[j] = (ju - jd) / (2.0 * step);
        }
        let num: f64 = grad
            .values()
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den: f64 = fd.iter().map(|v| v * v).sum();
        let rel = (num / den.max(1e-300)).sqrt();
        assert!(rel <= 1e-5, "config {i}: adjoint/FD relative error {rel}");
        worst_fd = worst_fd.max(rel);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}, budget 2 min");
    println!(
        "PASS c5 — action rel err {rel:.2e}, worst adjoint/FD rel err {worst_fd:.2e}, {elapsed:?}",
        rel = rel
    );
}

/// One parsed row of the sweep table.
struct SweepRow {
    eps: f64,
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
    log_stat: f64,
    gap: Option<f64>,
    estimator: String,
}

fn parse_sweep_csv(text: &str) -> Vec<SweepRow> {
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "eps,n,hits,p_hat,ci_low,ci_high,log_stat,gap,estimator,ess",
        "sweep.csv header drifted from the documented contract"
    );
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), 10, "bad row: {line}");
            SweepRow {
                eps: f[0].parse().unwrap(),
                p_hat: f[3].parse().unwrap(),
                ci_low: f[4].parse().unwrap(),
                ci_high: f[5].parse().unwrap(),
                log_stat: f[6].parse().unwrap(),
                gap: if f[7].is_empty() {
                    None
                } else {
                    Some(f[7].parse().unwrap())
                },
                estimator: f[8].to_string(),
            }
        })
        .collect()
}

/// Upper tail of the scalar OU under the implicit scheme: the sampled chain
/// is Gaussian with variance eps^2 dt r^2 (1 - r^{2N}) / (1 - r^2),
/// r = 1/(1 + dt), so the hit probability has a closed form. This is the law
/// of the estimand itself; the continuum value uses (1 - e^{-2})/2 instead.
fn discrete_tail(eps: f64, n_steps: usize) -> f64 {
    let dt = 1.0 / n_steps as f64;
    let r = 1.0 / (1.0 + dt);
    let var = eps * eps * dt * r * r * (1.0 - r.powi(2 * n_steps as i32)) / (1.0 - r * r);
    0.5 * libm::erfc(1.0 / (var.sqrt() * core::f64::consts::SQRT_2))
}

fn continuum_tail(eps: f64) -> f64 {
    let sigma = eps * ((1.0 - (-2.0f64).exp()) / 2.0).sqrt();
    0.5 * libm::erfc(1.0 / (sigma * core::f64::consts::SQRT_2))
}

#[test]
fn c6_ldp_sweep_brackets_the_gaussian_oracle_and_closes_the_gap() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mldp"))
        .args(["sweep", "configs/scalar_ou.json", "--output-dir"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success(), "sweep exited with {status}");

    let action: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("action.json")).unwrap())
            .unwrap();
    let value = action["value"].as_f64().unwrap();
    assert!(
        (value - I_STAR).abs() / I_STAR < 0.01,
        "minimized action {value} vs oracle {I_STAR}"
    );

    let rows = parse_sweep_csv(&std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap());
    assert_eq!(rows.len(), 3);
    let kinds: Vec<&str> = rows.iter().map(|r| r.estimator.as_str()).collect();
    assert_eq!(kinds, ["plain", "importance", "importance"]);
    for row in &rows {
        // The estimator samples the discrete chain, so its CI must bracket
        // the discrete law's tail; the continuum tail differs by O(dt) in
        // the log and is held to a looser band.
        let oracle = discrete_tail(row.eps, 512);
        assert!(
            row.ci_low <= oracle && oracle <= row.ci_high,
            "eps {}: CI [{}, {}] misses discrete oracle {oracle}",
            row.eps,
            row.ci_low,
            row.ci_high
        );
        let drift_log = (row.p_hat / continuum_tail(row.eps)).ln().abs();
        assert!(
            drift_log <= 0.08,
            "eps {}: |log(p_hat/continuum)| = {drift_log}",
            row.eps
        );
    }
    // The column stores the signed eps^2 log p_hat; the LDP statistic is its
    // negation and must fall monotonically toward the action value.
    for w in rows.windows(2) {
        assert!(
            -w[1].log_stat < -w[0].log_stat,
            "-eps^2 log p_hat must decrease toward the action value: {} then {}",
            -w[0].log_stat,
            -w[1].log_stat
        );
    }
    let last = rows.last().unwrap();
    let table_gap = last.gap.expect("converged sweep must report gaps");
    assert!(table_gap <= 0.20, "table gap {table_gap} above 0.20");
    let oracle_gap = -last.log_stat - I_STAR;
    assert!(
        oracle_gap.abs() <= 0.20,
        "gap to the analytic action {oracle_gap} above 0.20"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}, budget 10 min");
    println!(
        "PASS c6 — CIs bracket the discrete oracle, final gap {table_gap:.3} (analytic {oracle_gap:.3}), {elapsed:?}"
    );
}

#[test]
fn c7_galerkin_coupling_error_is_monotone_and_collapses_at_full_rank() {
    let triple = DiscreteTriple::build(0.0, 1.0, 32, 2.0).unwrap();
    let dim = triple.interior_dim();
    let drift = heat_drift();
    let noise = NoiseSpec::diagonal_decay(4, 1.0).unwrap();
    let cfg = SolverConfig::new(0.5, 64).unwrap();
    let x0 = StateVector::zero(&triple);
    let draw = NoiseDraw::generate(1234, 64, 4, cfg.dt()).unwrap();
    let full = simulate(&x0, 0.5, None, &drift, &noise, &cfg, &draw).unwrap();
    let mut prev = f64::INFINITY;
    let mut errs = Vec::new();
    for n in [1usize, 2, 3, 4, 8, 16, dim] {
        let g = galerkin_simulate(n, &x0, 0.5, &drift, &noise, &cfg, &draw).unwrap();
        let err = g.metric(&full).unwrap();
        assert!(err <= prev + 1e-12, "coupling error rose at n={n}: {err} > {prev}");
        prev = err;
        errs.push(err);
    }
    assert!(
        *errs.last().unwrap() < 1e-8,
        "full-rank projection should collapse the error: {errs:?}"
    );
    println!("PASS c7 — coupling errors {errs:?}");
}

fn run_sweep_with_threads(config: &str, threads: &str, dir: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_mldp"))
        .args(["sweep", config, "--threads", threads, "--output-dir"])
        .arg(dir)
        .status()
        .unwrap();
    assert!(status.success(), "sweep --threads {threads} exited with {status}");
}

#[test]
fn c8_sweep_artifacts_are_byte_identical_across_thread_counts() {
    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    run_sweep_with_threads("configs/scalar_ou_smoke.json", "1", one.path());
    run_sweep_with_threads("configs/scalar_ou_smoke.json", "8", eight.path());
    for name in ["sweep.csv", "minimizer.csv", "action.json"] {
        let a = std::fs::read(one.path().join(name)).unwrap();
        let b = std::fs::read(eight.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between --threads 1 and --threads 8");
    }
    println!("PASS c8 — sweep.csv, minimizer.csv, action.json byte-identical at 1 and 8 threads");
}
