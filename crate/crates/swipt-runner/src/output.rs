//! On-disk artifacts. Every CSV names its units in the header.

use crate::run::{verdict_name, FeasibleRun, SolveRun};
use crate::sweep::SweepRun;
use crate::validate::ValidateRun;
use crate::RunError;
use serde::Serialize;
use std::path::Path;
use swipt_core::ee_solver::SolveTrace;
use swipt_core::feasibility::Verdict;
use swipt_core::{PerfReport, PowerAllocation};

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| RunError::io("csv buffer", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Header-only CSV for an empty table.
fn header(cols: &[&str]) -> String {
    format!("{}\n", cols.join(","))
}

#[derive(Serialize)]
struct AllocRow<'a> {
    kind: &'a str,
    index: usize,
    ap: usize,
    #[serde(rename = "amplitude [sqrt(W)]")]
    amplitude: f64,
    #[serde(rename = "power [W]")]
    power: f64,
}

pub fn allocation_csv(a: &PowerAllocation) -> Result<String, RunError> {
    let mut rows = Vec::new();
    for (kind, streams) in [("multicast", &a.q_bar), ("unicast", &a.p_bar)] {
        for (index, v) in streams.iter().enumerate() {
            for (ap, &x) in v.iter().enumerate() {
                rows.push(AllocRow { kind, index, ap, amplitude: x, power: x * x });
            }
        }
    }
    to_csv(rows)
}

#[derive(Serialize)]
struct UeRow {
    ue: usize,
    group: usize,
    #[serde(rename = "rho [1]")]
    rho: f64,
    #[serde(rename = "rate_multicast [nats/s/Hz]")]
    rate_mc: Option<f64>,
    #[serde(rename = "rate_unicast [nats/s/Hz]")]
    rate_uc: Option<f64>,
    #[serde(rename = "rf_power [W]")]
    rf: Option<f64>,
    #[serde(rename = "harvested [W]")]
    harvested: Option<f64>,
}

/// Splitting factors, with the per-UE report columns when available.
pub fn ue_csv(a: &PowerAllocation, group_of: &[usize], rep: Option<&PerfReport>) -> Result<String, RunError> {
    to_csv(a.rho.iter().enumerate().map(|(k, &rho)| UeRow {
        ue: k,
        group: group_of[k],
        rho,
        rate_mc: rep.map(|r| r.r_multicast_per_ue[k]),
        rate_uc: rep.map(|r| r.r_unicast[k]),
        rf: rep.map(|r| r.p_in[k]),
        harvested: rep.map(|r| r.harvested[k]),
    }))
}

#[derive(Serialize)]
struct ApRow {
    ap: usize,
    #[serde(rename = "transmit_power [W]")]
    p_tr: f64,
    #[serde(rename = "backhaul_load [nats/s/Hz]")]
    c_bh: f64,
}

pub fn ap_csv(rep: &PerfReport) -> Result<String, RunError> {
    to_csv(rep.p_tr.iter().zip(&rep.c_bh).enumerate().map(|(ap, (&p_tr, &c_bh))| ApRow { ap, p_tr, c_bh }))
}

/// Column order of the one-row report summary.
pub const SUMMARY_COLUMNS: [&str; 5] =
    ["ee [bits/J]", "ee_smooth [bits/J]", "total_power [W]", "total_power_smooth [W]", "sum_rate [nats/s/Hz]"];

#[derive(Serialize)]
struct SummaryRow {
    #[serde(rename = "ee [bits/J]")]
    ee: f64,
    #[serde(rename = "ee_smooth [bits/J]")]
    ee_smooth: f64,
    #[serde(rename = "total_power [W]")]
    p_total: f64,
    #[serde(rename = "total_power_smooth [W]")]
    p_total_smooth: f64,
    #[serde(rename = "sum_rate [nats/s/Hz]")]
    rate: f64,
}

pub fn summary_csv(rep: &PerfReport) -> Result<String, RunError> {
    to_csv([SummaryRow {
        ee: rep.ee,
        ee_smooth: rep.ee_smooth,
        p_total: rep.p_total,
        p_total_smooth: rep.p_total_smooth,
        rate: rep.rate_sum(),
    }])
}

#[derive(Serialize)]
struct TraceRow {
    t: usize,
    c: usize,
    s: usize,
    #[serde(rename = "dual_value [W]")]
    dual_value: f64,
    #[serde(rename = "ee_nats [nats/J]")]
    ee_nats: f64,
    #[serde(rename = "ee_bits_per_joule [bits/J]")]
    ee_bits: f64,
    #[serde(rename = "max_violation [1]")]
    max_violation: f64,
}

pub fn trace_csv(tr: &SolveTrace) -> Result<String, RunError> {
    to_csv(tr.records.iter().map(|r| TraceRow {
        t: r.t,
        c: r.c,
        s: r.s,
        dual_value: r.dual_value,
        ee_nats: r.ee_nats,
        ee_bits: r.ee_bits_per_joule,
        max_violation: r.max_violation,
    }))
}

#[derive(Serialize)]
struct ScaRow {
    t: usize,
    #[serde(rename = "ee_smooth [bits/J]")]
    ee_smooth: f64,
    #[serde(rename = "ee_exact [bits/J]")]
    ee_exact: f64,
    dinkelbach_iters: usize,
    inner_iters: usize,
    #[serde(rename = "accepted_fraction [1]")]
    frac: f64,
}

pub fn sca_csv(tr: &SolveTrace) -> Result<String, RunError> {
    to_csv(tr.sca.iter().map(|r| ScaRow {
        t: r.t,
        ee_smooth: r.ee_smooth,
        ee_exact: r.ee_exact,
        dinkelbach_iters: r.dinkelbach_iters,
        inner_iters: r.inner_iters,
        frac: r.accepted_fraction,
    }))
}

#[derive(Serialize)]
struct PenaltyRow {
    round: usize,
    /// Rate deficits in nats/s/Hz plus RF deficits in W, as the penalty sums them.
    #[serde(rename = "exact_penalty [nats/s/Hz + W]")]
    h: f64,
}

fn penalty_csv(history: &[f64]) -> Result<String, RunError> {
    if history.is_empty() {
        return Ok(header(&["round", "exact_penalty [nats/s/Hz + W]"]));
    }
    to_csv(history.iter().enumerate().map(|(i, &h)| PenaltyRow { round: i + 1, h }))
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    value: f64,
    seed: u64,
    verdict: &'a str,
    start: &'a str,
    #[serde(rename = "ee [bits/J]")]
    ee: Option<f64>,
    #[serde(rename = "ee_smooth [bits/J]")]
    ee_smooth: Option<f64>,
    #[serde(rename = "total_power [W]")]
    p_total: Option<f64>,
    #[serde(rename = "sum_rate [nats/s/Hz]")]
    rate: Option<f64>,
    sca_rounds: Option<usize>,
    inner_iters: Option<usize>,
    converged: Option<bool>,
}

/// Renames the `value` column to carry the axis key and unit.
fn with_axis(csv: String, run: &SweepRun) -> String {
    let label = format!("{} [{}]", run.axis.key, run.axis.unit);
    match csv.split_once(',') {
        Some(("value", rest)) => format!("{label},{rest}"),
        _ => csv,
    }
}

pub fn sweep_csv(run: &SweepRun) -> Result<String, RunError> {
    let rows = run.rows.iter().map(|r| SweepCsvRow {
        value: r.value,
        seed: r.seed,
        verdict: &r.verdict,
        start: match r.start {
            crate::sweep::Start::Own => "own",
            crate::sweep::Start::Warm => "warm",
            crate::sweep::Start::None => "none",
        },
        ee: r.ee_bits_per_joule,
        ee_smooth: r.ee_smooth_bits_per_joule,
        p_total: r.p_total_w,
        rate: r.sum_rate_nats,
        sca_rounds: r.sca_rounds,
        inner_iters: r.inner_iters,
        converged: r.converged,
    });
    Ok(with_axis(to_csv(rows)?, run))
}

#[derive(Serialize)]
struct PointRow {
    value: f64,
    solved: usize,
    #[serde(rename = "ee_mean [bits/J]")]
    ee_mean: Option<f64>,
    #[serde(rename = "ee_std [bits/J]")]
    ee_std: Option<f64>,
    common: usize,
    #[serde(rename = "ee_mean_common [bits/J]")]
    ee_mean_common: Option<f64>,
    #[serde(rename = "ee_std_common [bits/J]")]
    ee_std_common: Option<f64>,
}

pub fn sweep_summary_csv(run: &SweepRun) -> Result<String, RunError> {
    let rows = run.points.iter().map(|p| PointRow {
        value: p.value,
        solved: p.solved,
        ee_mean: p.ee_mean,
        ee_std: p.ee_std,
        common: p.common,
        ee_mean_common: p.ee_mean_common,
        ee_std_common: p.ee_std_common,
    });
    Ok(with_axis(to_csv(rows)?, run))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), RunError> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| RunError::io(path.display().to_string(), e))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn ensure(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir.display().to_string(), e))
}

#[derive(Serialize)]
struct VerdictFile<'a> {
    seed: u64,
    verdict: &'a str,
    sca_iters: Option<usize>,
    restarts: Option<usize>,
    penalty: Option<f64>,
    ue: Option<usize>,
    reason: Option<&'a str>,
}

fn verdict_file(seed: u64, v: &Verdict) -> String {
    let mut f = VerdictFile {
        seed,
        verdict: verdict_name(v),
        sca_iters: None,
        restarts: None,
        penalty: None,
        ue: None,
        reason: None,
    };
    match v {
        Verdict::Feasible(o) => {
            f.sca_iters = Some(o.sca_iters);
            f.restarts = Some(o.restarts);
            f.penalty = Some(0.0);
        }
        Verdict::Stationary(r) => {
            f.sca_iters = Some(r.sca_iters);
            f.restarts = Some(r.restarts);
            f.penalty = Some(r.best.total);
        }
        Verdict::Infeasible { ue, reason } => {
            f.ue = Some(*ue);
            f.reason = Some(reason);
        }
    }
    json(&f)
}

/// verdict.json, allocation.csv, ue.csv, penalty.csv.
pub fn write_feasible(dir: &Path, run: &FeasibleRun) -> Result<(), RunError> {
    ensure(dir)?;
    write(dir, "verdict.json", &verdict_file(run.seed, &run.verdict))?;
    if let Some(a) = run.allocation() {
        write(dir, "allocation.csv", &allocation_csv(a)?)?;
        write(dir, "ue.csv", &ue_csv(a, &run.group_of, None)?)?;
    }
    let history = match &run.verdict {
        Verdict::Feasible(o) => o.history.clone(),
        _ => Vec::new(),
    };
    write(dir, "penalty.csv", &penalty_csv(&history)?)
}

/// verdict.json plus, when solved, allocation.csv, ue.csv, ap.csv,
/// summary.csv, trace.csv, sca.csv and report.json.
pub fn write_solve(dir: &Path, run: &SolveRun) -> Result<(), RunError> {
    ensure(dir)?;
    write(dir, "verdict.json", &verdict_file(run.seed, &run.feasibility))?;
    let Some(out) = &run.output else { return Ok(()) };
    write(dir, "allocation.csv", &allocation_csv(&out.alloc)?)?;
    write(dir, "ue.csv", &ue_csv(&out.alloc, &run.group_of, Some(&out.report))?)?;
    write(dir, "ap.csv", &ap_csv(&out.report)?)?;
    write(dir, "summary.csv", &summary_csv(&out.report)?)?;
    write(dir, "trace.csv", &trace_csv(&out.trace)?)?;
    write(dir, "sca.csv", &sca_csv(&out.trace)?)?;
    #[derive(Serialize)]
    struct Report<'a> {
        report: &'a PerfReport,
        slacks: &'a Option<swipt_core::performance::Slacks>,
        converged: bool,
        warnings: &'a [String],
        inner_iters_total: usize,
        max_dinkelbach_iters: usize,
        dinkelbach_monotone: bool,
        min_duality_gap: f64,
    }
    let rep = Report {
        report: &out.report,
        slacks: &run.slacks,
        converged: out.trace.converged,
        warnings: &out.trace.warnings,
        inner_iters_total: out.trace.inner_iters_total,
        max_dinkelbach_iters: out.trace.max_dinkelbach_iters,
        dinkelbach_monotone: out.trace.dinkelbach_monotone,
        min_duality_gap: out.trace.min_duality_gap,
    };
    write(dir, "report.json", &json(&rep))
}

/// validate.json.
pub fn write_validate(dir: &Path, run: &ValidateRun) -> Result<(), RunError> {
    ensure(dir)?;
    write(dir, "validate.json", &json(run))
}

/// sweep.csv and sweep_summary.csv.
pub fn write_sweep(dir: &Path, run: &SweepRun) -> Result<(), RunError> {
    ensure(dir)?;
    write(dir, "sweep.csv", &sweep_csv(run)?)?;
    write(dir, "sweep_summary.csv", &sweep_summary_csv(run)?)
}
