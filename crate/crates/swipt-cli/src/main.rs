use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use swipt_client::Client;
use swipt_core::system_model::{InterferenceModel, SolverKnobs};
use swipt_runner::run::{EXIT_CONFIG, EXIT_OK};
use swipt_runner::{
    output, FeasibleRun, Job, SolveRun, SweepRequest, SweepRun, ValidateOptions, ValidateRequest, ValidateRun,
};

#[derive(Parser)]
#[command(name = "swipt", version, about = "Energy-efficiency power control for cell-free multicast/unicast SWIPT")]
struct Cli {
    /// Run on a swipt-service instance instead of in-process.
    #[arg(long, global = true, value_name = "URL")]
    remote: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Search for an allocation meeting every constraint.
    Feasible(Common),
    /// Feasibility search followed by energy-efficiency maximization.
    Solve(Common),
    /// Check closed forms, dual gradients and projections against oracles.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Topologies to check, seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        instances: usize,
        /// Channel draws per topology.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        /// Interference model to validate instead of the scenario's.
        #[arg(long, value_enum)]
        model: Option<Model>,
    },
    /// Solve over a grid of one scenario parameter and several seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Scenario key or short name (r_m, r_u, p_max, e_min, c_max, N).
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, in the key's own unit.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Number of seeds, starting at --seed (default 0).
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; the desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    momentum: Option<OnOff>,
    #[arg(long)]
    tol_inner: Option<f64>,
    #[arg(long)]
    tol_dink: Option<f64>,
    #[arg(long)]
    tol_sca: Option<f64>,
    #[arg(long)]
    max_iter_inner: Option<usize>,
    #[arg(long)]
    max_iter_dink: Option<usize>,
    #[arg(long)]
    max_iter_sca: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Incoherent,
    Coherent,
}

impl Common {
    fn job(&self) -> Result<Job, String> {
        let config = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
            None => String::new(),
        };
        let solver = SolverKnobs {
            tol_inner: self.tol_inner,
            tol_dink: self.tol_dink,
            tol_sca: self.tol_sca,
            max_iter_inner: self.max_iter_inner,
            max_iter_dink: self.max_iter_dink,
            max_iter_sca: self.max_iter_sca,
            momentum: self.momentum.map(|m| matches!(m, OnOff::On)),
            backtracking: None,
        };
        Ok(Job { config, seed: self.seed, solver })
    }
}

/// Where a request runs.
enum Backend {
    Local,
    Remote(Client),
}

impl Backend {
    fn feasible(&self, job: &Job) -> Result<FeasibleRun, (String, i32)> {
        match self {
            Backend::Local => swipt_runner::run_feasible(job).map_err(|e| (e.to_string(), e.exit_code())),
            Backend::Remote(c) => c.feasible(job).map_err(|e| (e.to_string(), e.exit_code())),
        }
    }

    fn solve(&self, job: &Job) -> Result<SolveRun, (String, i32)> {
        match self {
            Backend::Local => swipt_runner::run_solve(job).map_err(|e| (e.to_string(), e.exit_code())),
            Backend::Remote(c) => c.solve(job).map_err(|e| (e.to_string(), e.exit_code())),
        }
    }

    fn validate(&self, req: &ValidateRequest) -> Result<ValidateRun, (String, i32)> {
        match self {
            Backend::Local => swipt_runner::run_validate(req).map_err(|e| (e.to_string(), e.exit_code())),
            Backend::Remote(c) => c.validate(req).map_err(|e| (e.to_string(), e.exit_code())),
        }
    }

    fn sweep(&self, req: &SweepRequest) -> Result<SweepRun, (String, i32)> {
        match self {
            Backend::Local => swipt_runner::run_sweep(req).map_err(|e| (e.to_string(), e.exit_code())),
            Backend::Remote(c) => c.sweep(req).map_err(|e| (e.to_string(), e.exit_code())),
        }
    }
}

fn written(out: &Path, r: Result<(), swipt_runner::RunError>) -> Result<(), (String, i32)> {
    r.map_err(|e| (e.to_string(), e.exit_code()))?;
    eprintln!("artifacts in {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<i32, (String, i32)> {
    let backend = match &cli.remote {
        Some(url) => Backend::Remote(Client::new(url).map_err(|e| (e.to_string(), e.exit_code()))?),
        None => Backend::Local,
    };
    let config_err = |e: String| (e, EXIT_CONFIG);
    match cli.cmd {
        Cmd::Feasible(c) => {
            let run = backend.feasible(&c.job().map_err(config_err)?)?;
            println!("seed {}: {}", run.seed, describe_verdict(&run.verdict));
            written(&c.out, output::write_feasible(&c.out, &run))?;
            Ok(run.exit_code())
        }
        Cmd::Solve(c) => {
            let run = backend.solve(&c.job().map_err(config_err)?)?;
            match &run.output {
                Some(o) => {
                    println!(
                        "seed {}: EE {:.6e} bits/J (smoothed {:.6e}), {:.3} W total, {} SCA rounds, {} inner iterations",
                        run.seed,
                        o.report.ee,
                        o.report.ee_smooth,
                        o.report.p_total,
                        o.trace.sca.len(),
                        o.trace.inner_iters_total
                    );
                    for w in &o.trace.warnings {
                        eprintln!("warning: {w}");
                    }
                }
                None => println!("seed {}: {}", run.seed, describe_verdict(&run.feasibility)),
            }
            written(&c.out, output::write_solve(&c.out, &run))?;
            Ok(run.exit_code())
        }
        Cmd::Validate { common, instances, draws, model } => {
            let options = ValidateOptions {
                instances,
                draws,
                model: model.map(|m| match m {
                    Model::Incoherent => InterferenceModel::Incoherent,
                    Model::Coherent => InterferenceModel::Coherent,
                }),
                ..Default::default()
            };
            let req = ValidateRequest { job: common.job().map_err(config_err)?, options };
            let run = backend.validate(&req)?;
            println!(
                "{:?} model: {} terms, max |z| {:.2} (limit {:.2}), {} outside 3 SE; dual gradient rel err {:.2e}; projection err {:.2e}/{:.2e}; {}",
                run.model,
                run.terms.len(),
                run.max_abs_z,
                run.z_limit,
                run.outside_3se,
                run.dual_gradient.max_rel_err,
                run.projections.group_max_err,
                run.projections.power_max_err,
                if run.pass { "pass" } else { "FAIL" }
            );
            written(&common.out, output::write_validate(&common.out, &run))?;
            Ok(EXIT_OK)
        }
        Cmd::Sweep { common, axis, values, seeds } => {
            let base = common.seed.unwrap_or(0);
            let mut job = common.job().map_err(config_err)?;
            job.seed = None;
            let req = SweepRequest { job, axis, values, seeds: (base..base + seeds).collect() };
            let run = backend.sweep(&req)?;
            for p in &run.points {
                let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6e}"));
                println!(
                    "{} = {} {}: solved {}/{}, mean EE {} bits/J, common-seed mean {} ({} seeds)",
                    run.axis.key,
                    p.value,
                    run.axis.unit,
                    p.solved,
                    run.seeds.len(),
                    fmt(p.ee_mean),
                    fmt(p.ee_mean_common),
                    p.common
                );
            }
            written(&common.out, output::write_sweep(&common.out, &run))?;
            Ok(EXIT_OK)
        }
    }
}

fn describe_verdict(v: &swipt_core::feasibility::Verdict) -> String {
    use swipt_core::feasibility::Verdict;
    match v {
        Verdict::Feasible(o) => format!("feasible after {} SCA rounds, {} restarts", o.sca_iters, o.restarts),
        Verdict::Stationary(r) => {
            format!("stationary with penalty {:.3e} after {} restarts", r.best.total, r.restarts)
        }
        Verdict::Infeasible { reason, .. } => format!("infeasible: {reason}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
