use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swipt_core::feasibility::{find_feasible, penalty_subgradient, penalty_surrogate, FeasibilityOptions, Verdict};
use swipt_core::oracle::{fd_gradient, mc_channel_moments, sample_allocation};
use swipt_core::performance::PowerAllocation;
use swipt_core::surrogate::build;
use swipt_core::{derive_stats, evaluate, generate_topology, load_params, ChannelStats, SystemParams};

fn setup(config: &str, seed: u64) -> (SystemParams, ChannelStats) {
    let params = load_params(config).unwrap();
    let stats = derive_stats(&params, &generate_topology(&params, seed));
    (params, stats)
}

// Regression values for the default scenario at seed 1, equal power split
// and ρ = 0.5. Recompute only on an intended model change.
#[test]
fn equal_split_report_is_frozen() {
    let (params, stats) = setup("", 1);
    let r = evaluate(&stats, &PowerAllocation::equal_split(&params, 0.5), &params).unwrap();
    assert_relative_eq!(r.ee, 427173.795962958, max_relative = 1e-9);
    assert_relative_eq!(r.ee_smooth, 427175.4501232104, max_relative = 1e-9);
    assert_relative_eq!(r.p_total, 310.1760156429533, max_relative = 1e-9);
    assert_relative_eq!(r.r_unicast[0], 0.3735324085698153, max_relative = 1e-9);
    assert_relative_eq!(r.r_multicast[0], 0.33526641090213133, max_relative = 1e-9);
    assert_relative_eq!(r.phi_e[0], 0.018081639163484937, max_relative = 1e-9);
}

#[test]
fn estimate_moments_match_mmse_formulas() {
    let (_, stats) = setup("", 1);
    let draws = 100_000;
    let m = mc_channel_moments(&stats, draws, 3);
    for n in 0..stats.num_aps {
        for k in 0..stats.num_ues {
            let bh = stats.beta_hat[(n, k)];
            assert_relative_eq!(m.g_hat_power[(n, k)], bh, max_relative = 0.015);
            // Re(gᴴv) spreads with the full gain β, so weak links are judged
            // in standard errors rather than relatively
            let mean = (stats.m() * bh).sqrt();
            let se = ((stats.beta[(n, k)] + stats.m() * bh) / (2.0 * draws as f64)).sqrt();
            assert!((m.g_v[(n, k)] - mean).abs() <= 5.0 * se, "AP {n} UE {k}");
            assert_relative_eq!(m.v_norm[(n, k)], 1.0, max_relative = 0.015);
        }
        for g in 0..stats.num_groups {
            assert_relative_eq!(m.w_norm[(n, g)], 1.0, max_relative = 0.015);
        }
    }
}

#[test]
fn tiny_power_cap_with_high_energy_floor_is_infeasible() {
    let (params, stats) = setup("power_cap_dbm = -10.0\nenergy_floor_mw = 30.0\n", 1);
    let v = find_feasible(&stats, &params, &FeasibilityOptions::default());
    assert!(matches!(v, Verdict::Infeasible { .. }), "{v:?}");
}

#[test]
fn unreachable_rate_floor_stops_at_a_stationary_point() {
    let (params, stats) = setup("rate_floor_uc_bps = 40.0\n", 1);
    let opts = FeasibilityOptions { max_sca: 5, restarts: 1, ..Default::default() };
    match find_feasible(&stats, &params, &opts) {
        Verdict::Stationary(s) => assert!(s.best.total > 0.0),
        v => panic!("expected a stationary verdict, got {v:?}"),
    }
}

#[test]
fn default_scenario_is_feasible() {
    let (params, stats) = setup("", 1);
    assert!(matches!(find_feasible(&stats, &params, &FeasibilityOptions::default()), Verdict::Feasible(_)));
}

#[test]
fn penalty_subgradient_matches_finite_differences() {
    let (params, stats) = setup("num_aps = 6\nnum_ues = 4\nnum_groups = 2\nrate_floor_uc_bps = 2.0\n", 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let at = sample_allocation(&params, &mut rng);
    let x = sample_allocation(&params, &mut rng);
    let c = build(&stats, &params, &at);
    let sub = penalty_subgradient(&c, &stats, &params, &x);
    let fd = fd_gradient(|f| penalty_surrogate(&c, &stats, &params, &x.from_flat(f)).total, &x.to_flat());
    let scale = fd.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    assert!(scale > 0.0);
    for (i, (s, f)) in sub.iter().zip(&fd.grad).enumerate() {
        if !fd.kinks.contains(&i) {
            assert!((s - f).abs() <= 1e-4 * scale, "coordinate {i}: {s} vs {f}");
        }
    }
}
