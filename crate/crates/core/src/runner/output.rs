//! CSV and text artifacts. Floats are written with 17 significant digits
//! (`{:.16e}`) so that files round-trip bit-exactly; wall-clock times go to a
//! separate file so the metrics stay byte-stable between runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adaptation::SimTrace;
use crate::scenarios::Scenario;

use super::{io_error, EmitFlags, MetricsRow, RunnerError, TrialResult};

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

fn axis_columns(base: &str, axes: usize, dims: usize) -> Vec<String> {
    match (axes, dims) {
        (_, 1) if axes == 1 => vec![base.to_string()],
        (2, 2) => vec![format!("{base}_x"), format!("{base}_y")],
        _ => (0..dims).map(|i| format!("{base}_{i}")).collect(),
    }
}

/// Columns: `k, t, x_a…, x_m…, u, du, u_a, y_a, y_m, e`, then any
/// scenario-specific columns.
pub fn trace_csv(trace: &SimTrace) -> String {
    let mut out = String::new();
    let Some(first) = trace.rows.first() else {
        return out;
    };
    let mut header = vec!["k".to_string(), "t".to_string()];
    let xa: Vec<String> = (0..first.x_a.len()).map(|i| format!("x_a{i}")).collect();
    let xm: Vec<String> = (0..first.x_m.len()).map(|i| format!("x_m{i}")).collect();
    header.extend(xa);
    header.extend(xm);
    for name in ["u", "du", "u_a", "y_a", "y_m", "e"] {
        header.extend(axis_columns(name, trace.axes, first.u.len()));
    }
    header.extend(trace.aux_names.iter().cloned());
    out.push_str(&header.join(","));
    out.push('\n');
    for row in &trace.rows {
        write!(out, "{},{}", row.k, num(row.t)).expect("write to string");
        for v in row
            .x_a
            .iter()
            .chain(&row.x_m)
            .chain(&row.u)
            .chain(&row.du)
            .chain(&row.u_a)
            .chain(&row.y_a)
            .chain(&row.y_m)
            .chain(&row.e)
            .chain(&row.aux)
        {
            out.push(',');
            out.push_str(&num(*v));
        }
        out.push('\n');
    }
    out
}

pub const METRICS_HEADER: &str = "scenario,seed_index,seed,network,learning_rate,lipschitz,gamma,rms_error,\
unadapted_rms,rms_position,rms_pendulum,terminal_pendulum,diverged,certified,slack,state_bound";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.scenario.clone(),
            r.seed_index.to_string(),
            r.seed.to_string(),
            r.network.label().to_string(),
            num(r.learning_rate),
            num(r.lipschitz),
            num(r.gamma),
            num(r.rms_error),
            num(r.unadapted_rms),
            opt_num(r.rms_position),
            opt_num(r.rms_pendulum),
            opt_num(r.terminal_pendulum),
            r.diverged.to_string(),
            opt_bool(r.certified),
            opt_num(r.slack),
            opt_bool(r.state_bound),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn timing_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("scenario,seed_index,wall_clock_s\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.scenario, r.seed_index, num(r.wall_clock)).expect("write to string");
    }
    out
}

/// Mean and sample standard deviation (zero below two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One line per configuration with the RMS mean ± standard deviation over
/// completed trials, followed by the certificate table.
pub fn summarize(rows: &[MetricsRow]) -> String {
    let mut groups: Vec<(&str, Vec<&MetricsRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(name, _)| *name == r.scenario) {
            Some((_, g)) => g.push(r),
            None => groups.push((&r.scenario, vec![r])),
        }
    }
    let mut out = String::new();
    writeln!(out, "{:<36} {:>6} {:>24} {:>12} {:>9} {:>11}", "configuration", "trials", "rms(y_a - y_m)", "unadapted", "diverged", "bound fail")
        .expect("write to string");
    for (name, g) in &groups {
        let done: Vec<f64> = g.iter().filter(|r| !r.diverged).map(|r| r.rms_error).collect();
        let (m, s) = mean_std(&done);
        let (um, _) = mean_std(&g.iter().map(|r| r.unadapted_rms).collect::<Vec<_>>());
        let diverged = g.iter().filter(|r| r.diverged).count();
        let fails = g.iter().filter(|r| r.state_bound == Some(false)).count();
        writeln!(out, "{:<36} {:>6} {:>24} {:>12.6} {:>9} {:>11}", name, g.len(), format!("{m:.6} ± {s:.6}"), um, diverged, fails)
            .expect("write to string");
        if g.iter().any(|r| r.rms_position.is_some()) {
            let pos: Vec<f64> = g.iter().filter_map(|r| r.rms_position).collect();
            let pend: Vec<f64> = g.iter().filter_map(|r| r.rms_pendulum).collect();
            let term = g.iter().filter_map(|r| r.terminal_pendulum).fold(0.0, f64::max);
            let (pm, ps) = mean_std(&pos);
            let (qm, qs) = mean_std(&pend);
            writeln!(
                out,
                "    position rms {pm:.4} ± {ps:.4} m, pendulum rms {qm:.4} ± {qs:.4} m, worst terminal pendulum {term:.4} m"
            )
            .expect("write to string");
        }
    }
    out.push('\n');
    writeln!(out, "{:<36} {:>8} {:>8} {:>10} {:>11} {:>12}", "certificate", "L", "gamma", "L*gamma", "slack", "status")
        .expect("write to string");
    for (name, g) in &groups {
        let r = g[0];
        let status = match r.certified {
            Some(true) => "certified",
            Some(false) => "violated",
            None => "n/a",
        };
        let (l, slack) = match r.certified {
            Some(_) => (format!("{:.4}", r.lipschitz), format!("{:.6}", r.slack.unwrap_or(f64::NAN))),
            None => ("-".into(), "-".into()),
        };
        writeln!(out, "{:<36} {:>8} {:>8.4} {:>10} {:>11} {:>12}", name, l, r.gamma,
            if r.certified.is_some() { format!("{:.6}", r.lipschitz * r.gamma) } else { "-".into() }, slack, status)
            .expect("write to string");
    }
    let violations = rows.iter().filter(|r| r.violates_certificate()).count();
    writeln!(out, "\ncertified-run violations: {violations}").expect("write to string");
    out
}

/// Small-gain report for each variant, without simulating.
pub fn certificate_report(variants: &[Scenario]) -> String {
    let mut out = String::new();
    for v in variants {
        match v.certificate() {
            Some(c) => writeln!(
                out,
                "{}: L = {} gamma = {} ({:?}) L*gamma = {:.6} slack 1/gamma - L = {:.6} -> {}",
                v.name,
                c.lipschitz,
                c.gamma,
                v.gain.provenance,
                c.lipschitz * c.gamma,
                c.slack,
                if c.certified() { "CERTIFIED" } else { "VIOLATED" }
            ),
            None => writeln!(out, "{}: {} network carries no Lipschitz certificate", v.name, v.adaptation.network.label()),
        }
        .expect("write to string");
    }
    out
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<(), RunnerError> {
    fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    written.push(path);
    Ok(())
}

pub(crate) fn write_artifacts(
    dir: &Path,
    results: &[TrialResult],
    rows: &[MetricsRow],
    emit: EmitFlags,
) -> Result<Vec<PathBuf>, RunnerError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut written = Vec::new();
    if emit.trace {
        for r in results {
            let path = dir.join(format!("trace_{}_seed{}.csv", file_stem(&r.scenario), r.seed_index));
            write(path, &trace_csv(&r.outcome.trace), &mut written)?;
        }
    }
    if emit.params {
        for r in results {
            for (axis, net) in r.outcome.trace.networks.iter().enumerate() {
                let suffix = match r.outcome.trace.networks.len() {
                    1 => String::new(),
                    _ => format!("_axis{axis}"),
                };
                let path = dir.join(format!("params_{}_seed{}{suffix}.csv", file_stem(&r.scenario), r.seed_index));
                write(path, &net.to_csv(), &mut written)?;
            }
        }
    }
    if emit.metrics {
        write(dir.join("metrics.csv"), &metrics_csv(rows), &mut written)?;
        write(dir.join("timing.csv"), &timing_csv(rows), &mut written)?;
    }
    if emit.summary {
        write(dir.join("summary.txt"), &summarize(rows), &mut written)?;
    }
    Ok(written)
}
