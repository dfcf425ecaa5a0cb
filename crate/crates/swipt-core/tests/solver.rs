use swipt_core::ee_solver::{smooth_feasible, solve, SolverOptions};
use swipt_core::error::SolveError;
use swipt_core::feasibility::{find_feasible, FeasibilityOptions, Verdict};
use swipt_core::performance::{check_constraints, PowerAllocation};
use swipt_core::{derive_stats, evaluate, generate_topology, load_params};

fn start(seed: u64) -> (swipt_core::SystemParams, swipt_core::ChannelStats, PowerAllocation) {
    let params = load_params("").unwrap();
    let stats = derive_stats(&params, &generate_topology(&params, seed));
    match find_feasible(&stats, &params, &FeasibilityOptions::default()) {
        Verdict::Feasible(f) => (params, stats, f.alloc),
        v => panic!("seed {seed}: {v:?}"),
    }
}

#[test]
fn solution_improves_on_start_and_stays_feasible() {
    for seed in [1, 2, 3] {
        let (params, stats, v0) = start(seed);
        let ee0 = evaluate(&stats, &v0, &params).unwrap().ee_smooth;
        let out = solve(&stats, &params, &v0, &SolverOptions::default()).unwrap();
        assert!(out.report.ee_smooth >= ee0, "seed {seed}");
        assert!(out.trace.dinkelbach_monotone);
        assert!(out.trace.min_duality_gap >= -1e-6);
        assert!(smooth_feasible(&stats, &params, &out.alloc, 1e-6), "seed {seed}");
        // only the backhaul counts streams differently under the exact indicator
        let sl = check_constraints(&out.report, &params, &stats.group_of);
        let others = sl.multicast.iter().chain(&sl.unicast).chain(&sl.energy).chain(&sl.power);
        assert!(others.fold(f64::INFINITY, |m, &x| m.min(x)) >= -1e-6, "seed {seed}");
        for w in out.trace.sca.windows(2) {
            assert!(w[1].ee_smooth >= w[0].ee_smooth * (1.0 - 1e-9));
        }
    }
}

#[test]
fn solve_is_deterministic() {
    let (params, stats, v0) = start(5);
    let a = solve(&stats, &params, &v0, &SolverOptions::default()).unwrap();
    let b = solve(&stats, &params, &v0, &SolverOptions::default()).unwrap();
    assert_eq!(a.alloc, b.alloc);
}

#[test]
fn infeasible_start_is_rejected() {
    let params = load_params("rate_floor_uc_bps = 5.0\n").unwrap();
    let stats = derive_stats(&params, &generate_topology(&params, 1));
    let v0 = PowerAllocation::zeros(params.num_aps, params.num_ues, params.num_groups);
    assert!(matches!(solve(&stats, &params, &v0, &SolverOptions::default()), Err(SolveError::InfeasibleStart(_))));
}

#[test]
fn wrong_shape_is_rejected() {
    let params = load_params("").unwrap();
    let stats = derive_stats(&params, &generate_topology(&params, 1));
    let v0 = PowerAllocation::zeros(params.num_aps + 1, params.num_ues, params.num_groups);
    assert!(solve(&stats, &params, &v0, &SolverOptions::default()).is_err());
}
