use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swipt_core::channel::ChannelStats;
use swipt_core::ee_solver::{dual_value, lagrangian, project_dual, DualState, Recovery};
use swipt_core::feasibility::{penalty, project_power};
use swipt_core::oracle::{brute_project_power, sample_allocation};
use swipt_core::performance::{check_constraints, harvest, harvest_inverse, rates, smooth_indicator};
use swipt_core::surrogate::{
    build, frozen_backhaul, frozen_total_power, surrogate_backhaul, surrogate_total_power, surrogate_unicast_rate,
};
use swipt_core::units::{BpsHz, Dbm, NatsHz, Watts};
use swipt_core::{derive_stats, evaluate, generate_topology, load_params, SystemParams};

const SMALL: &str = "num_aps = 6\nnum_ues = 4\nnum_groups = 2\n";

fn instance(seed: u64) -> (SystemParams, ChannelStats) {
    let params = load_params(SMALL).unwrap();
    let topo = generate_topology(&params, seed);
    let stats = derive_stats(&params, &topo);
    (params, stats)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dbm_round_trip(d in -120.0f64..60.0) {
        let back = Dbm::from(Watts::from(Dbm(d))).0;
        prop_assert!((back - d).abs() < 1e-9);
    }

    #[test]
    fn spectral_efficiency_round_trip(b in 0.0f64..40.0) {
        let back = BpsHz::from(NatsHz::from(BpsHz(b))).0;
        prop_assert!((back - b).abs() < 1e-12);
    }

    #[test]
    fn topology_is_a_function_of_seed(seed in 0u64..1000) {
        let params = load_params(SMALL).unwrap();
        let a = generate_topology(&params, seed);
        let b = generate_topology(&params, seed);
        prop_assert_eq!(&a, &b);
        let c = generate_topology(&params, seed + 1);
        prop_assert_ne!(a.ue_pos, c.ue_pos);
    }

    #[test]
    fn harvest_is_monotone(a in 0.0f64..1e-2, b in 0.0f64..1e-2) {
        let params = SystemParams::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(harvest(lo, &params) <= harvest(hi, &params));
        prop_assert!(harvest(hi, &params) <= params.harvester.max_out);
    }

    #[test]
    fn harvest_inverse_round_trip(frac in 0.01f64..0.99) {
        let params = SystemParams::default();
        let x = frac * params.harvester.max_out;
        let p = harvest_inverse(x, &params);
        prop_assert!(close(harvest(p, &params), x, 1e-8));
    }

    #[test]
    fn smooth_indicator_is_increasing_below_one(x in 0.0f64..1.0, dx in 1e-9f64..1.0, theta in 1e-8f64..1e-2) {
        let (a, b) = (smooth_indicator(x, theta), smooth_indicator(x + dx, theta));
        prop_assert!((0.0..1.0).contains(&a));
        prop_assert!(a < b && b < 1.0);
    }

    #[test]
    fn scaling_up_a_unicast_stream_raises_its_rate(seed in 0u64..200, k in 0usize..4, s in 1.01f64..4.0) {
        let (params, stats) = instance(seed);
        let a = sample_allocation(&params, &mut rng(seed));
        let mut b = a.clone();
        b.p_bar[k].iter_mut().for_each(|x| *x *= s);
        prop_assert!(rates(&stats, &params, &b).uc[k] >= rates(&stats, &params, &a).uc[k]);
    }

    #[test]
    fn surrogates_bound_the_true_functions(seed in 0u64..200) {
        let (params, stats) = instance(seed);
        let mut r = rng(seed);
        let at = sample_allocation(&params, &mut r);
        let x = sample_allocation(&params, &mut r);
        let c = build(&stats, &params, &at);
        let uc = rates(&stats, &params, &x).uc;
        for (k, rate) in uc.iter().enumerate() {
            prop_assert!(surrogate_unicast_rate(&c, &stats, &params, &x, k) <= rate + 1e-9 * rate.abs().max(1.0));
        }
        for n in 0..params.num_aps {
            let f = frozen_backhaul(&c, &params, &x, n);
            prop_assert!(surrogate_backhaul(&c, &x, n) >= f * (1.0 - 1e-9));
        }
        prop_assert!(surrogate_total_power(&c, &params, &x) >= frozen_total_power(&c, &params, &x) * (1.0 - 1e-12));
    }

    #[test]
    fn power_projection_matches_brute_force(seed in 0u64..500, scale in 0.1f64..5.0) {
        let (params, _) = instance(seed);
        let mut a = sample_allocation(&params, &mut rng(seed));
        for v in a.q_bar.iter_mut().chain(a.p_bar.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= scale);
        }
        let p = project_power(&a.q_bar, &a.p_bar, &a.rho, &params);
        let (qm, qu) = brute_project_power(&a.q_bar, &a.p_bar, &params);
        for (x, y) in p.q_bar.iter().flatten().zip(qm.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in p.p_bar.iter().flatten().zip(qu.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for n in 0..params.num_aps {
            prop_assert!(p.ap_power(n) <= params.power_cap[n] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dual_projection_is_idempotent(seed in 0u64..500, eta in 0.0f64..1e-4) {
        let (params, stats) = instance(seed);
        let len = DualState::initial(&stats, &params, eta).len();
        let mut r = rng(seed);
        let raw: Vec<f64> = (0..len).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
        let d = project_dual(&raw, eta, &stats, &params);
        prop_assert!(d.is_nonnegative());
        prop_assert!(d.domain_residual(&stats, &params) < 1e-9);
        let again = project_dual(&d.to_flat(), eta, &stats, &params);
        for (x, y) in d.to_flat().iter().zip(again.to_flat()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn dual_value_is_below_the_lagrangian(seed in 0u64..200) {
        let (params, stats) = instance(seed);
        let mut r = rng(seed);
        let at = sample_allocation(&params, &mut r);
        let c = build(&stats, &params, &at);
        let eta = 1e-6;
        let len = DualState::initial(&stats, &params, eta).len();
        let raw: Vec<f64> = (0..len).map(|_| rand::Rng::random_range(&mut r, 0.0..1e-5)).collect();
        let d = project_dual(&raw, eta, &stats, &params);
        let (q, _) = dual_value(&c, &d, &stats, &params, Recovery::Qp);
        for _ in 0..5 {
            let x = sample_allocation(&params, &mut r);
            let l = lagrangian(&c, &d, &x, &stats, &params);
            prop_assert!(q <= l + 1e-9 * l.abs().max(1.0), "dual {q} above lagrangian {l}");
        }
    }

    #[test]
    fn penalty_agrees_with_slacks(seed in 0u64..200) {
        let (params, stats) = instance(seed);
        let a = sample_allocation(&params, &mut rng(seed));
        let rep = evaluate(&stats, &a, &params).unwrap();
        let s = check_constraints(&rep, &params, &stats.group_of);
        let h = penalty(&stats, &params, &a);
        let pairs = [(&h.multicast, &s.multicast), (&h.unicast, &s.unicast), (&h.energy, &s.energy), (&h.backhaul, &s.backhaul)];
        for (pen, slack) in pairs {
            for (p, sl) in pen.iter().zip(slack) {
                prop_assert!((p - (-sl).max(0.0)).abs() <= 1e-9 * p.abs().max(1.0));
            }
        }
        prop_assert_eq!(h.total == 0.0, s.max_violation() == 0.0);
    }
}
