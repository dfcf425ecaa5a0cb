use crate::{Job, Prepared, RunError};
use serde::{Deserialize, Serialize};
use swipt_core::ee_solver::{solve, SolveOutput, SolverOptions};
use swipt_core::feasibility::{find_feasible, FeasibilityOptions, Verdict};
use swipt_core::performance::{check_constraints, Slacks};
use swipt_core::{evaluate, ChannelStats, PowerAllocation, SystemParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_STATIONARY: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

pub fn verdict_code(v: &Verdict) -> i32 {
    match v {
        Verdict::Feasible(_) => EXIT_OK,
        Verdict::Stationary(_) => EXIT_STATIONARY,
        Verdict::Infeasible { .. } => EXIT_INFEASIBLE,
    }
}

pub fn verdict_name(v: &Verdict) -> &'static str {
    match v {
        Verdict::Feasible(_) => "feasible",
        Verdict::Stationary(_) => "stationary",
        Verdict::Infeasible { .. } => "infeasible",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRun {
    pub seed: u64,
    pub group_of: Vec<usize>,
    pub verdict: Verdict,
}

impl FeasibleRun {
    pub fn exit_code(&self) -> i32 {
        verdict_code(&self.verdict)
    }

    /// The certified allocation, or the best stationary one.
    pub fn allocation(&self) -> Option<&PowerAllocation> {
        match &self.verdict {
            Verdict::Feasible(o) => Some(&o.alloc),
            Verdict::Stationary(r) => Some(&r.alloc),
            Verdict::Infeasible { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRun {
    pub seed: u64,
    pub group_of: Vec<usize>,
    pub feasibility: Verdict,
    pub output: Option<SolveOutput>,
    /// Exact-indicator slacks of the final allocation.
    pub slacks: Option<Slacks>,
}

impl SolveRun {
    pub fn exit_code(&self) -> i32 {
        match &self.output {
            None => verdict_code(&self.feasibility),
            Some(o) if !o.trace.converged => EXIT_NOT_CONVERGED,
            Some(_) => EXIT_OK,
        }
    }
}

pub fn feasibility_options(seed: u64) -> FeasibilityOptions {
    FeasibilityOptions { seed, ..Default::default() }
}

pub fn run_feasible(job: &Job) -> Result<FeasibleRun, RunError> {
    let p = job.prepare()?;
    let stats = p.stats();
    let verdict = find_feasible(&stats, &p.params, &feasibility_options(p.seed));
    Ok(FeasibleRun { seed: p.seed, group_of: stats.group_of.clone(), verdict })
}

pub fn run_solve(job: &Job) -> Result<SolveRun, RunError> {
    let p = job.prepare()?;
    solve_prepared(&p, p.seed)
}

pub(crate) fn solve_prepared(p: &Prepared, seed: u64) -> Result<SolveRun, RunError> {
    let stats = p.stats_for(seed);
    let verdict = find_feasible(&stats, &p.params, &feasibility_options(seed));
    let output = match &verdict {
        Verdict::Feasible(o) => Some(solve(&stats, &p.params, &o.alloc, &p.options)?),
        _ => None,
    };
    let slacks = output.as_ref().map(|o| exact_slacks(&stats, &p.params, &o.alloc)).transpose()?;
    Ok(SolveRun { seed, group_of: stats.group_of.clone(), feasibility: verdict, output, slacks })
}

pub(crate) fn exact_slacks(
    stats: &ChannelStats,
    params: &SystemParams,
    a: &PowerAllocation,
) -> Result<Slacks, RunError> {
    let rep = evaluate(stats, a, params)?;
    Ok(check_constraints(&rep, params, &stats.group_of))
}

/// Solves from `start` when it meets every constraint, else `None`.
pub(crate) fn solve_from(
    stats: &ChannelStats,
    params: &SystemParams,
    opts: &SolverOptions,
    start: &PowerAllocation,
) -> Option<SolveOutput> {
    start.check_shape(params).ok()?;
    solve(stats, params, start, opts).ok()
}
