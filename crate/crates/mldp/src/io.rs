//! Artifact readers and writers. All CSV numbers use fixed 17-significant-
//! digit scientific notation, so equal bit patterns always produce equal
//! bytes and every value round-trips exactly; JSON goes through serde_json,
//! whose float output is likewise value-determined.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use mldp_core::action::ActionResult;
use mldp_core::evolution::ControlPath;
use mldp_core::gelfand::{DiscreteTriple, PathKind, PathRecord};
use mldp_core::operators::ConditionReport;
use mldp_core::rare_event::LdpTable;
use std::sync::Arc;

/// Fixed-width float formatting: 17 significant digits, enough to
/// reconstruct the exact bit pattern.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

const MAGIC: &[u8; 5] = b"MLDP1";

/// CSV of a trajectory: one row per time, columns `t,u1,...,u<dim>`.
pub fn path_csv(path: &PathRecord) -> String {
    let dim = path.triple().interior_dim();
    let mut out = String::from("t");
    for j in 1..=dim {
        out.push_str(&format!(",u{j}"));
    }
    out.push('\n');
    for (k, &t) in path.time_grid().iter().enumerate() {
        out.push_str(&fmt17(t));
        for v in path.state_row(k) {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }
    out
}

/// Compact binary trajectory: magic `MLDP1`, then `n_times` and `dim` as
/// little-endian u64, then row-major little-endian doubles, each row
/// `[t, u1, ..., u_dim]`.
pub fn path_bytes(path: &PathRecord) -> Vec<u8> {
    let dim = path.triple().interior_dim();
    let n = path.n_times();
    let mut out = Vec::with_capacity(MAGIC.len() + 16 + n * (dim + 1) * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for (k, &t) in path.time_grid().iter().enumerate() {
        out.extend_from_slice(&t.to_le_bytes());
        for v in path.state_row(k) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a binary trajectory back over a known triple.
pub fn path_from_bytes(
    triple: &Arc<DiscreteTriple>,
    kind: PathKind,
    bytes: &[u8],
) -> Result<PathRecord> {
    if bytes.len() < MAGIC.len() + 16 || &bytes[..MAGIC.len()] != MAGIC {
        bail!("not an MLDP1 path dump");
    }
    let u64_at = |off: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[off..off + 8]);
        u64::from_le_bytes(b) as usize
    };
    let n = u64_at(MAGIC.len());
    let dim = u64_at(MAGIC.len() + 8);
    if dim != triple.interior_dim() {
        bail!(
            "path dump has dimension {dim}, expected the interior dimension {}",
            triple.interior_dim()
        );
    }
    let data = &bytes[MAGIC.len() + 16..];
    if data.len() != n * (dim + 1) * 8 {
        bail!("path dump is truncated");
    }
    let mut times = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n * dim);
    for row in data.chunks_exact((dim + 1) * 8) {
        let mut vals = row.chunks_exact(8).map(|c| {
            let mut b = [0u8; 8];
            b.copy_from_slice(c);
            f64::from_le_bytes(b)
        });
        times.push(vals.next().expect("row has a time"));
        states.extend(vals);
    }
    Ok(PathRecord::from_flat(triple, times, states, kind)?)
}

/// CSV of a control: one row per step, columns `t,phi1,...,phi<m>`, `t` the
/// step's left endpoint.
pub fn control_csv(control: &ControlPath) -> String {
    let mut out = String::from("t");
    for j in 1..=control.modes() {
        out.push_str(&format!(",phi{j}"));
    }
    out.push('\n');
    let dt = control.dt();
    for k in 0..control.n_steps() {
        out.push_str(&fmt17(k as f64 * dt));
        for v in control.step_slice(k) {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a control CSV against the solver grid it must live on.
pub fn parse_control_csv(
    text: &str,
    t_end: f64,
    n_steps: usize,
    modes: usize,
) -> Result<ControlPath> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().context("control CSV is empty")?;
    if !header.trim_start().starts_with('t') {
        bail!("control CSV must start with a 't,phi1,...' header");
    }
    let dt = t_end / n_steps as f64;
    let tol = 1e-9 * t_end.max(1.0);
    let mut values = Vec::with_capacity(n_steps * modes);
    let mut rows = 0usize;
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let t: f64 = fields
            .next()
            .context("control CSV row is empty")?
            .trim()
            .parse()
            .with_context(|| format!("control CSV row {i}: bad time field"))?;
        if (t - i as f64 * dt).abs() > tol {
            bail!(
                "control CSV row {i} time {t} does not lie on the solver grid (dt = {dt})"
            );
        }
        let mut got = 0usize;
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .with_context(|| format!("control CSV row {i}: bad value"))?;
            values.push(v);
            got += 1;
        }
        if got != modes {
            bail!("control CSV row {i} has {got} modes, the noise has {modes}");
        }
        rows += 1;
    }
    if rows != n_steps {
        bail!("control CSV has {rows} rows, the solver grid has {n_steps} steps");
    }
    Ok(ControlPath::from_values(t_end, n_steps, modes, values)?)
}

/// CSV of a noise-level sweep. The `gap` column is empty when the action
/// problem was infeasible (no rate minimum to compare against).
pub fn table_csv(table: &LdpTable) -> String {
    let mut out = String::from("eps,n,hits,p_hat,ci_low,ci_high,log_stat,gap,estimator,ess\n");
    for (i, row) in table.rows.iter().enumerate() {
        let gap = table.gaps.get(i).map(|g| fmt17(*g)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{gap},{},{}\n",
            fmt17(row.eps),
            row.n_samples,
            row.hits,
            fmt17(row.p_hat),
            fmt17(row.ci_low),
            fmt17(row.ci_high),
            fmt17(row.log_stat),
            row.estimator.as_str(),
            fmt17(row.ess),
        ));
    }
    out
}

pub fn condition_report_json(report: &ConditionReport) -> Value {
    let entries: Vec<Value> = report
        .entries
        .iter()
        .map(|e| {
            let measured: serde_json::Map<String, Value> = e
                .measured
                .iter()
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect();
            json!({
                "condition": e.condition.as_str(),
                "claimed": e.claimed,
                "pass": e.pass,
                "measured": measured,
                "witness": e.witness.as_ref().map(|w| json!({
                    "sample_index": w.sample_index,
                    "time": w.time,
                    "value": w.value,
                })),
                "decay_table": e.decay_table,
                "note": e.note,
            })
        })
        .collect();
    json!({
        "family": report.family.as_str(),
        "n_samples": report.n_samples,
        "seed": report.seed,
        "all_claimed_pass": report.all_claimed_pass(),
        "entries": entries,
    })
}

/// Action-minimization outcome without the minimizer itself (that goes to a
/// control CSV). Starts that never found a feasible control carry `null`.
pub fn action_json(result: &ActionResult) -> Value {
    let starts: Vec<Value> = result
        .multi_start_values
        .iter()
        .map(|v| if v.is_finite() { json!(v) } else { Value::Null })
        .collect();
    json!({
        "value": result.value,
        "iterations": result.iterations,
        "gradient_norm_final": result.gradient_norm_final,
        "multi_start_values": starts,
        "converged": result.converged,
        "feasible": result.feasible,
        "violation": result.violation,
        "stage_violations": result.stage_violations,
    })
}

/// Writes one artifact under `dir`, creating the directory as needed, and
/// returns the full path.
pub fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn json_text(value: &Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("JSON serializes");
    text.push('\n');
    text
}
