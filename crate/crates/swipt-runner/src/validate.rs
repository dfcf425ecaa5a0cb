//! Oracle reports: closed forms against Monte Carlo, dual gradients against
//! finite differences, projections against brute force.

use crate::{Job, RunError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use swipt_core::ee_solver::{dual_gradient, dual_value, project_dual, project_group, DualState, Recovery};
use swipt_core::feasibility::project_power;
use swipt_core::oracle::{
    brute_project_group, brute_project_power, closed_form_terms, compare_terms, fd_gradient, mc_rate_terms,
    sample_allocation,
};
use swipt_core::surrogate::build;
use swipt_core::system_model::InterferenceModel;
use swipt_core::{ChannelStats, SystemParams};

/// Each antithetic pair counts as two channel draws.
pub const DRAWS_PER_PAIR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidateOptions {
    /// Topologies, seeds `seed..seed+instances`.
    pub instances: usize,
    /// Channel draws per instance.
    pub draws: usize,
    pub fd_directions: usize,
    pub projection_cases: usize,
    /// Override of the scenario's interference model.
    pub model: Option<InterferenceModel>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions { instances: 1, draws: 100_000, fd_directions: 20, projection_cases: 100, model: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub job: Job,
    #[serde(default)]
    pub options: ValidateOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub seed: u64,
    pub term: String,
    pub ue: usize,
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub directions: usize,
    /// max |fd − analytic| / max(|analytic|, |fd|) over directions.
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub cases: usize,
    pub group_max_err: f64,
    pub power_max_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRun {
    pub model: InterferenceModel,
    pub seeds: Vec<u64>,
    pub draws: usize,
    pub terms: Vec<TermReport>,
    pub max_abs_z: f64,
    /// Terms with |z| ≥ 3.
    pub outside_3se: usize,
    /// Bound on max |z| over all terms with the false-alarm rate of a single
    /// 3-SE test.
    pub z_limit: f64,
    pub dual_gradient: GradientReport,
    pub projections: ProjectionReport,
    pub pass: bool,
}

pub const Z_LIMIT: f64 = 3.0;

/// Per-family |z| bound: the two-sided tail mass beyond `Z_LIMIT` split
/// evenly over `terms` tests (Bonferroni). Equals `Z_LIMIT` for one term.
pub fn family_z_limit(terms: usize) -> f64 {
    let n = Normal::standard();
    let alpha = 2.0 * n.cdf(-Z_LIMIT) / terms.max(1) as f64;
    -n.inverse_cdf(alpha / 2.0)
}
pub const FD_REL_TOL: f64 = 1e-5;
pub const PROJECTION_TOL: f64 = 1e-8;

pub fn run_validate(req: &ValidateRequest) -> Result<ValidateRun, RunError> {
    let p = req.job.prepare()?;
    let o = req.options;
    let mut params = p.params.clone();
    if let Some(m) = o.model {
        params.interference = m;
    }
    let seeds: Vec<u64> = (0..o.instances.max(1) as u64).map(|i| p.seed + i).collect();
    let pairs = (o.draws / DRAWS_PER_PAIR).max(2);
    let mut terms = Vec::new();
    let mut grad_err: f64 = 0.0;
    for &seed in &seeds {
        let stats = swipt_core::derive_stats(&params, &swipt_core::generate_topology(&params, seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let alloc = sample_allocation(&params, &mut rng);
        let cf = closed_form_terms(&stats, &params, &alloc);
        let mc = mc_rate_terms(&stats, &params, &alloc, pairs, seed.wrapping_add(0x9e37));
        terms.extend(compare_terms(&cf, &mc).into_iter().map(|c| TermReport {
            seed,
            term: c.term,
            ue: c.ue,
            closed_form: c.closed_form,
            mc_mean: c.mc_mean,
            mc_se: c.mc_se,
            z_score: c.z_score,
        }));
        grad_err = grad_err.max(dual_gradient_error(&stats, &params, o.fd_directions, &mut rng));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x9f0);
    let projections = projection_errors(&params, o.projection_cases, &mut rng);
    let max_abs_z = terms.iter().map(|t| t.z_score.abs()).fold(0.0, f64::max);
    let outside_3se = terms.iter().filter(|t| t.z_score.abs() >= Z_LIMIT).count();
    let z_limit = family_z_limit(terms.len());
    let pass = max_abs_z <= z_limit
        && grad_err <= FD_REL_TOL
        && projections.group_max_err <= PROJECTION_TOL
        && projections.power_max_err <= PROJECTION_TOL;
    Ok(ValidateRun {
        model: params.interference,
        seeds,
        draws: pairs * DRAWS_PER_PAIR,
        terms,
        max_abs_z,
        outside_3se,
        z_limit,
        dual_gradient: GradientReport { directions: o.fd_directions * o.instances.max(1), max_rel_err: grad_err },
        projections,
        pass,
    })
}

/// Random dual point in the interior of the domain, expansion point drawn
/// from the power box.
pub fn random_dual<R: Rng + ?Sized>(stats: &ChannelStats, params: &SystemParams, rng: &mut R) -> DualState {
    let eta = rng.random_range(10.0..100.0);
    let base = DualState::initial(stats, params, eta);
    let raw: Vec<f64> = base.to_flat().iter().map(|x| x + rng.random_range(0.1..5.0)).collect();
    let mut d = project_dual(&raw, eta, stats, params);
    // keep every multiplier off zero so the finite differences stay inside
    for x in d.lam_u.iter_mut().chain(d.lam_e.iter_mut()).chain(d.lam_c.iter_mut()).chain(d.lam_p.iter_mut()) {
        *x = x.max(0.1);
    }
    d
}

/// Worst relative mismatch between the analytic directional derivative of
/// the dual function and a central difference along random directions.
pub fn dual_gradient_error<R: Rng + ?Sized>(
    stats: &ChannelStats,
    params: &SystemParams,
    directions: usize,
    rng: &mut R,
) -> f64 {
    let at = sample_allocation(params, rng);
    let coeffs = build(stats, params, &at);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let dual = random_dual(stats, params, rng);
        let flat = dual.to_flat();
        let dir: Vec<f64> = flat.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, v) = dual_value(&coeffs, &dual, stats, params, Recovery::Qp);
        let g = dual_gradient(&coeffs, &v, stats, params);
        let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let along = |t: &[f64]| {
            let pt: Vec<f64> = flat.iter().zip(&dir).map(|(x, d)| x + t[0] * d).collect();
            dual_value(&coeffs, &dual.with_flat(&pt), stats, params, Recovery::Qp).0
        };
        let fd = fd_gradient(along, &[0.0]).grad[0];
        let scale = analytic.abs().max(fd.abs()).max(1e-12);
        worst = worst.max((fd - analytic).abs() / scale);
    }
    worst
}

pub fn projection_errors<R: Rng + ?Sized>(params: &SystemParams, cases: usize, rng: &mut R) -> ProjectionReport {
    let mut group_err: f64 = 0.0;
    let mut power_err: f64 = 0.0;
    let nb = params.num_groups + params.num_ues;
    for _ in 0..cases {
        let size = rng.random_range(1..=4);
        let mu_m = rng.random_range(-2.0..2.0);
        let mu_bar: Vec<f64> = (0..size).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target = rng.random_range(0.0..3.0);
        let (a, b) = project_group(mu_m, &mu_bar, target);
        let (c, d) = brute_project_group(mu_m, &mu_bar, target);
        group_err = group_err.max((a - c).abs());
        for (x, y) in b.iter().zip(&d) {
            group_err = group_err.max((x - y).abs());
        }

        let z: Vec<Vec<f64>> = (0..nb)
            .map(|_| params.power_cap.iter().map(|c| rng.random_range(-0.5..1.5) * c.sqrt()).collect())
            .collect();
        let (z_m, z_u) = z.split_at(params.num_groups);
        let rho = vec![0.5; params.num_ues];
        let fast = project_power(z_m, z_u, &rho, params);
        let (bm, bu) = brute_project_power(z_m, z_u, params);
        for (x, y) in fast.q_bar.iter().chain(&fast.p_bar).zip(bm.iter().chain(&bu)) {
            for (a, b) in x.iter().zip(y) {
                power_err = power_err.max((a - b).abs());
            }
        }
    }
    ProjectionReport { cases, group_max_err: group_err, power_max_err: power_err }
}
