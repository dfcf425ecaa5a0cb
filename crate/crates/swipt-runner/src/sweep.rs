//! Parameter sweeps: one solve per (axis value, seed).

use crate::run::{feasibility_options, solve_from, verdict_name};
use crate::{Job, Prepared, RunError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use swipt_core::ee_solver::SolveOutput;
use swipt_core::feasibility::{find_feasible, Verdict};
use swipt_core::{load_scenario, ConfigError, PowerAllocation};

const INTEGER_KEYS: [&str; 8] =
    ["seed", "num_aps", "antennas_per_ap", "num_ues", "num_groups", "coherence_len", "pilot_len", "max_iter_inner"];

/// Which way along the axis the feasible set only grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Growth {
    Ascending,
    Descending,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    /// Scenario key being swept.
    pub key: String,
    pub unit: String,
    pub growth: Growth,
}

impl Axis {
    /// Accepts a scenario key or one of the short names r_m, r_u, p_max,
    /// e_min, c_max, N.
    pub fn resolve(name: &str) -> Result<Axis, RunError> {
        let key = match name {
            "r_m" => "rate_floor_mc_bps",
            "r_u" => "rate_floor_uc_bps",
            "p_max" => "power_cap_dbm",
            "e_min" => "energy_floor_mw",
            "c_max" => "backhaul_cap_bps",
            "N" | "n" => "num_aps",
            other => other,
        };
        let growth = match key {
            "power_cap_dbm" | "backhaul_cap_bps" => Growth::Ascending,
            "rate_floor_mc_bps" | "rate_floor_uc_bps" | "energy_floor_mw" => Growth::Descending,
            _ => Growth::Unknown,
        };
        let unit = unit_of(key).to_string();
        Ok(Axis { key: key.to_string(), unit, growth })
    }

    /// The scenario text with this axis set to `value`.
    pub fn apply(&self, config: &str, value: f64) -> Result<String, RunError> {
        let mut table: toml::Table = toml::from_str(config).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let v = if INTEGER_KEYS.contains(&self.key.as_str()) {
            if value.fract() != 0.0 || value < 0.0 {
                return Err(
                    ConfigError::Parse(format!("`{}` takes a nonnegative integer, got {value}", self.key)).into()
                );
            }
            toml::Value::Integer(value as i64)
        } else {
            toml::Value::Float(value)
        };
        table.insert(self.key.clone(), v);
        let text = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        match load_scenario(&text) {
            Err(ConfigError::Parse(msg)) if msg.contains("unknown field") => {
                Err(RunError::UnknownAxis(self.key.clone()))
            }
            Err(e) => Err(e.into()),
            Ok(_) => Ok(text),
        }
    }
}

fn unit_of(key: &str) -> &'static str {
    if key.ends_with("_dbm") {
        "dBm"
    } else if key.ends_with("_bps") {
        "bps/Hz"
    } else if key.ends_with("_mw") {
        "mW"
    } else if key.ends_with("_w") {
        "W"
    } else if key.ends_with("_hz") {
        "Hz"
    } else if key.ends_with("_m") {
        "m"
    } else if key.ends_with("_db") {
        "dB"
    } else {
        "1"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    pub job: Job,
    pub axis: String,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// How a sweep point got its starting allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    /// The feasibility search at this point.
    Own,
    /// The solution of a neighbouring point that is feasible here.
    Warm,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub verdict: String,
    pub start: Start,
    pub ee_bits_per_joule: Option<f64>,
    pub ee_smooth_bits_per_joule: Option<f64>,
    pub p_total_w: Option<f64>,
    pub sum_rate_nats: Option<f64>,
    pub sca_rounds: Option<usize>,
    pub inner_iters: Option<usize>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// Seeds with a solution at this value.
    pub solved: usize,
    pub ee_mean: Option<f64>,
    pub ee_std: Option<f64>,
    /// Seeds solved at every value of the sweep.
    pub common: usize,
    pub ee_mean_common: Option<f64>,
    pub ee_std_common: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Ordered by value, then seed, as given in the request.
    pub rows: Vec<SweepRow>,
    pub points: Vec<SweepPoint>,
}

impl SweepRun {
    /// Seed-averaged EE over the seeds solved everywhere.
    pub fn common_curve(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.ee_mean_common).collect()
    }
}

pub fn run_sweep(req: &SweepRequest) -> Result<SweepRun, RunError> {
    if req.values.is_empty() || req.seeds.is_empty() {
        return Err(RunError::EmptySweep);
    }
    let axis = Axis::resolve(&req.axis)?;
    let prepared: Vec<Prepared> = req
        .values
        .iter()
        .map(|&v| {
            let text = axis.apply(&req.job.config, v)?;
            Job { config: text, ..req.job.clone() }.prepare()
        })
        .collect::<Result<_, _>>()?;
    // visit values so that each one only enlarges the feasible set
    let mut order: Vec<usize> = (0..req.values.len()).collect();
    match axis.growth {
        Growth::Ascending => order.sort_by(|&a, &b| req.values[a].total_cmp(&req.values[b])),
        Growth::Descending => order.sort_by(|&a, &b| req.values[b].total_cmp(&req.values[a])),
        Growth::Unknown => {}
    }
    let per_seed: Vec<Vec<SweepRow>> =
        req.seeds.par_iter().map(|&seed| sweep_seed(&prepared, &req.values, &order, seed, axis.growth)).collect();
    let mut rows = Vec::with_capacity(req.values.len() * req.seeds.len());
    for i in 0..req.values.len() {
        for seed_rows in &per_seed {
            rows.push(seed_rows[i].clone());
        }
    }
    let points = aggregate(&req.values, &req.seeds, &rows);
    Ok(SweepRun { axis, values: req.values.clone(), seeds: req.seeds.clone(), rows, points })
}

/// One seed along the whole axis. A forward pass in growth order warm
/// starts each point from the previous one; a backward pass then offers each
/// point its neighbour's solution, which is kept when it is feasible there
/// and better.
fn sweep_seed(prepared: &[Prepared], values: &[f64], order: &[usize], seed: u64, growth: Growth) -> Vec<SweepRow> {
    let n = values.len();
    let mut best: Vec<Option<(SolveOutput, Start)>> = vec![None; n];
    let mut verdicts = vec![""; n];
    let warm_ok = growth != Growth::Unknown;
    let mut prev: Option<PowerAllocation> = None;
    for &i in order {
        let p = &prepared[i];
        let stats = p.stats_for(seed);
        let verdict = find_feasible(&stats, &p.params, &feasibility_options(seed));
        verdicts[i] = verdict_name(&verdict);
        let own = match &verdict {
            Verdict::Feasible(o) => solve_from(&stats, &p.params, &p.options, &o.alloc).map(|o| (o, Start::Own)),
            _ => None,
        };
        let warm = prev.as_ref().filter(|_| warm_ok).and_then(|w| solve_from(&stats, &p.params, &p.options, w));
        best[i] = better(own, warm.map(|o| (o, Start::Warm)));
        if let Some((o, _)) = &best[i] {
            prev = Some(o.alloc.clone());
        }
    }
    if warm_ok {
        let mut prev: Option<PowerAllocation> = None;
        for &i in order.iter().rev() {
            let here = best[i].as_ref().map(|(o, _)| &o.alloc);
            if let Some(w) = prev.as_ref().filter(|w| Some(*w) != here) {
                let p = &prepared[i];
                let stats = p.stats_for(seed);
                let warm = solve_from(&stats, &p.params, &p.options, w).map(|o| (o, Start::Warm));
                best[i] = better(best[i].take(), warm);
            }
            if let Some((o, _)) = &best[i] {
                prev = Some(o.alloc.clone());
            }
        }
    }
    best.into_iter().zip(verdicts).zip(values).map(|((b, verdict), &value)| row(value, seed, verdict, b)).collect()
}

/// The candidate with the higher smoothed EE; ties keep `a`.
fn better(a: Option<(SolveOutput, Start)>, b: Option<(SolveOutput, Start)>) -> Option<(SolveOutput, Start)> {
    match (a, b) {
        (Some(a), Some(b)) if b.0.report.ee_smooth > a.0.report.ee_smooth => Some(b),
        (Some(a), _) => Some(a),
        (None, b) => b,
    }
}

fn row(value: f64, seed: u64, verdict: &str, best: Option<(SolveOutput, Start)>) -> SweepRow {
    let start = best.as_ref().map_or(Start::None, |b| b.1);
    let best = best.map(|b| b.0);
    let verdict = if best.is_some() { "feasible" } else { verdict };
    SweepRow {
        value,
        seed,
        verdict: verdict.to_string(),
        start,
        ee_bits_per_joule: best.as_ref().map(|o| o.report.ee),
        ee_smooth_bits_per_joule: best.as_ref().map(|o| o.report.ee_smooth),
        p_total_w: best.as_ref().map(|o| o.report.p_total),
        sum_rate_nats: best.as_ref().map(|o| o.report.rate_sum()),
        sca_rounds: best.as_ref().map(|o| o.trace.sca.len()),
        inner_iters: best.as_ref().map(|o| o.trace.inner_iters_total),
        converged: best.as_ref().map(|o| o.trace.converged),
    }
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (Some(m), Some(sd))
}

fn aggregate(values: &[f64], seeds: &[u64], rows: &[SweepRow]) -> Vec<SweepPoint> {
    let ns = seeds.len();
    let common: Vec<bool> =
        (0..ns).map(|j| (0..values.len()).all(|i| rows[i * ns + j].ee_bits_per_joule.is_some())).collect();
    values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let at = &rows[i * ns..(i + 1) * ns];
            let all: Vec<f64> = at.iter().filter_map(|r| r.ee_bits_per_joule).collect();
            let com: Vec<f64> =
                at.iter().zip(&common).filter(|(_, &c)| c).filter_map(|(r, _)| r.ee_bits_per_joule).collect();
            let (ee_mean, ee_std) = mean_std(&all);
            let (ee_mean_common, ee_std_common) = mean_std(&com);
            SweepPoint { value, solved: all.len(), ee_mean, ee_std, common: com.len(), ee_mean_common, ee_std_common }
        })
        .collect()
}
