//! Three-level EE maximization: SCA rounds, Dinkelbach ratio updates, and a
//! projected dual ascent (optionally with momentum) whose primal step is an
//! exact per-stream convex QP.

use crate::channel::ChannelStats;
use crate::error::SolveError;
use crate::feasibility::project_power;
use crate::performance::{check_constraints, evaluate, PerfReport, PowerAllocation, Slacks, UeTerms};
use crate::surrogate::{
    add_rate_bound_grad, build, surrogate_backhaul, surrogate_energy_gap, surrogate_energy_phi, surrogate_total_power,
    SurrogateCoeffs, RHO_EDGE,
};
use crate::system_model::{SolverKnobs, SystemParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// How the per-stream primal minimizer is obtained from the dual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Recovery {
    /// Solve the stationarity system and clip negative amplitudes to zero.
    Clamp,
    /// Minimize the nonnegativity-constrained quadratic exactly.
    Qp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_inner: f64,
    pub tol_dink: f64,
    pub tol_sca: f64,
    pub max_iter_inner: usize,
    pub max_iter_dink: usize,
    pub max_iter_sca: usize,
    pub momentum: bool,
    pub backtracking: bool,
    pub step: f64,
    pub recovery: Recovery,
    /// Scale energy-multiplier steps by an inverse curvature estimate.
    pub precondition: bool,
    /// Also require the normalized surrogate violation to fall below this
    /// before the inner loop may stop.
    pub inner_feas_tol: Option<f64>,
    /// Keep one trace record per inner iteration (otherwise one per
    /// Dinkelbach step).
    pub trace_inner: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_inner: 1e-4,
            tol_dink: 1e-4,
            tol_sca: 1e-4,
            max_iter_inner: 500,
            max_iter_dink: 20,
            max_iter_sca: 50,
            momentum: true,
            backtracking: true,
            step: 1.0,
            recovery: Recovery::Qp,
            precondition: true,
            inner_feas_tol: Some(1e-3),
            trace_inner: false,
        }
    }
}

impl SolverOptions {
    pub fn apply(&mut self, k: &SolverKnobs) {
        if let Some(v) = k.tol_inner {
            self.tol_inner = v;
        }
        if let Some(v) = k.tol_dink {
            self.tol_dink = v;
        }
        if let Some(v) = k.tol_sca {
            self.tol_sca = v;
        }
        if let Some(v) = k.max_iter_inner {
            self.max_iter_inner = v;
        }
        if let Some(v) = k.max_iter_dink {
            self.max_iter_dink = v;
        }
        if let Some(v) = k.max_iter_sca {
            self.max_iter_sca = v;
        }
        if let Some(v) = k.momentum {
            self.momentum = v;
        }
        if let Some(v) = k.backtracking {
            self.backtracking = v;
        }
    }
}

/// Multipliers of the convexified Dinkelbach subproblem plus the ratio η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lam_m: Vec<f64>,
    pub lam_bar: Vec<f64>,
    pub lam_u: Vec<f64>,
    pub lam_e: Vec<f64>,
    pub lam_c: Vec<f64>,
    pub lam_p: Vec<f64>,
    pub eta: f64,
}

impl DualState {
    /// λ̄_k = η(1−τ_p/τ_c)/|K_{g_k}|, everything else zero.
    pub fn initial(stats: &ChannelStats, params: &SystemParams, eta: f64) -> Self {
        let k = stats.num_ues;
        let n = stats.num_aps;
        let target = eta * params.prelog();
        DualState {
            lam_m: vec![0.0; stats.num_groups],
            lam_bar: (0..k).map(|j| target / stats.members[stats.group_of[j]].len() as f64).collect(),
            lam_u: vec![0.0; k],
            lam_e: vec![0.0; k],
            lam_c: vec![0.0; n],
            lam_p: vec![0.0; n],
            eta,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for part in [&self.lam_m, &self.lam_bar, &self.lam_u, &self.lam_e, &self.lam_c, &self.lam_p] {
            v.extend_from_slice(part);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.lam_m.len() + 3 * self.lam_bar.len() + 2 * self.lam_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for part in [&mut out.lam_m, &mut out.lam_bar, &mut out.lam_u, &mut out.lam_e, &mut out.lam_c, &mut out.lam_p] {
            for x in part.iter_mut() {
                *x = it.next().expect("flat dual too short");
            }
        }
        out
    }

    /// Largest |Σ_{k∈K_g} λ̄_k − η(1−τ_p/τ_c) − λ_m,g| over groups.
    pub fn domain_residual(&self, stats: &ChannelStats, params: &SystemParams) -> f64 {
        let target = self.eta * params.prelog();
        stats
            .members
            .iter()
            .enumerate()
            .map(|(g, m)| (m.iter().map(|&k| self.lam_bar[k]).sum::<f64>() - target - self.lam_m[g]).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.to_flat().iter().all(|&x| x >= 0.0)
    }
}

/// The V-dependent pieces of the Lagrangian at one dual point.
struct Weights {
    /// ηc_τ + λ_u,k.
    a: Vec<f64>,
    /// λ̄_k.
    b: Vec<f64>,
    /// a_k c_u,k and b_k c_m,k.
    wu: Vec<f64>,
    wm: Vec<f64>,
}

fn weights(coeffs: &SurrogateCoeffs, dual: &DualState, params: &SystemParams) -> Weights {
    let ct = params.prelog();
    let a: Vec<f64> = dual.lam_u.iter().map(|l| dual.eta * ct + l).collect();
    let b = dual.lam_bar.clone();
    let wu = a.iter().zip(&coeffs.uc).map(|(a, u)| a * u.c).collect();
    let wm = b.iter().zip(&coeffs.mc).map(|(b, m)| b * m.c).collect();
    Weights { a, b, wu, wm }
}

/// Hessian and linear term of the Lagrangian restricted to stream `blk`:
/// 𝓜 = ½xᵀHx − cᵀx + const.
fn block_system(
    coeffs: &SurrogateCoeffs,
    dual: &DualState,
    w: &Weights,
    stats: &ChannelStats,
    params: &SystemParams,
    blk: usize,
) -> (DMatrix<f64>, Vec<f64>) {
    let n_n = stats.num_aps;
    let g_n = stats.num_groups;
    let m = stats.m();
    let dp = params.delta_p();
    let bh = params.bh_coeff();
    let r_t = coeffs.stream_rate(blk);
    let mut h = DMatrix::zeros(n_n, n_n);
    for n in 0..n_n {
        h[(n, n)] = 2.0
            * (1.0 / params.pa_efficiency[n]
                + dp * coeffs.ap_tan[n].slope
                + (bh + dual.lam_c[n]) * r_t * coeffs.stream_tan[blk][n].slope
                + dual.lam_p[n]);
    }
    for k in 0..stats.num_ues {
        stats.add_inc_hess(k, w.wu[k] + w.wm[k], &mut h);
    }
    let mut c = vec![0.0; n_n];
    if blk < g_n {
        for &k in &stats.members[blk] {
            stats.add_sig_hess(k, m * w.wm[k], &mut h);
            for (ci, p) in c.iter_mut().zip(&coeffs.mc[k].psi) {
                *ci += 2.0 * w.b[k] * p;
            }
        }
    } else {
        let j = blk - g_n;
        for &k in &stats.members[stats.group_of[j]] {
            let wk = if k == j { w.wm[k] } else { w.wm[k] + w.wu[k] };
            stats.add_coh_hess(k, m * wk, &mut h);
        }
        stats.add_sig_hess(j, m * w.wu[j], &mut h);
        for (ci, p) in c.iter_mut().zip(&coeffs.uc[j].psi) {
            *ci += 2.0 * w.a[j] * p;
        }
    }
    for k in 0..stats.num_ues {
        let le = dual.lam_e[k];
        if le != 0.0 {
            for (ci, gr) in c.iter_mut().zip(&coeffs.energy_grad[k][blk]) {
                *ci += le * gr;
            }
        }
    }
    (h, c)
}

/// argmin ½xᵀHx − cᵀx over x ≥ 0 by a primal active-set method.
pub fn nnqp(h: &DMatrix<f64>, c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let solve_free = |free: &[usize]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        if free.is_empty() {
            return out;
        }
        let hf = DMatrix::from_fn(free.len(), free.len(), |r, s| h[(free[r], free[s])]);
        let cf = DVector::from_iterator(free.len(), free.iter().map(|&i| c[i]));
        let sol = match hf.clone().cholesky() {
            Some(ch) => ch.solve(&cf),
            None => hf.lu().solve(&cf).expect("block Hessian is positive definite"),
        };
        for (r, &i) in free.iter().enumerate() {
            out[i] = sol[r];
        }
        out
    };
    let all: Vec<usize> = (0..n).collect();
    let unc = solve_free(&all);
    if unc.iter().all(|&v| v >= 0.0) {
        return unc;
    }
    let mut x = vec![0.0; n];
    let mut fixed: Vec<bool> = unc.iter().map(|&v| v <= 0.0).collect();
    for _ in 0..(10 * n + 10) {
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        let xt = solve_free(&free);
        if free.iter().all(|&i| xt[i] >= 0.0) {
            x = xt;
            // gradient Hx − c on the fixed set gives the bound multipliers
            let mut worst = None;
            let mut worst_v = -1e-12;
            for i in (0..n).filter(|&i| fixed[i]) {
                let gi: f64 = (0..n).map(|j| h[(i, j)] * x[j]).sum::<f64>() - c[i];
                let scale = c[i].abs().max(1e-300);
                if gi < worst_v * scale {
                    worst_v = gi / scale;
                    worst = Some(i);
                }
            }
            match worst {
                Some(i) => fixed[i] = false,
                None => return x,
            }
        } else {
            let mut alpha = 1.0;
            let mut block = None;
            for &i in &free {
                if xt[i] < 0.0 {
                    let a = x[i] / (x[i] - xt[i]);
                    if a < alpha {
                        alpha = a;
                        block = Some(i);
                    }
                }
            }
            for i in 0..n {
                x[i] += alpha * (xt[i] - x[i]);
            }
            if let Some(i) = block {
                x[i] = 0.0;
                fixed[i] = true;
            }
            for &i in &free {
                if x[i] <= 0.0 {
                    x[i] = 0.0;
                    fixed[i] = true;
                }
            }
        }
    }
    x.iter().map(|v| v.max(0.0)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct RecoveryInfo {
    /// Amplitude entries that came out negative before clipping (`Clamp` only).
    pub clamped: usize,
}

/// Minimizer of the Lagrangian over 𝒱 for a fixed dual point.
pub fn recover_primal(
    coeffs: &SurrogateCoeffs,
    dual: &DualState,
    stats: &ChannelStats,
    params: &SystemParams,
    recovery: Recovery,
) -> (PowerAllocation, RecoveryInfo) {
    let w = weights(coeffs, dual, params);
    let mut out = coeffs.at.clone();
    let mut info = RecoveryInfo::default();
    for blk in 0..out.num_streams() {
        let (h, c) = block_system(coeffs, dual, &w, stats, params, blk);
        let x = match recovery {
            Recovery::Qp => nnqp(&h, &c),
            Recovery::Clamp => {
                let sol = h
                    .cholesky()
                    .expect("block Hessian has a positive diagonal from the amplifier term")
                    .solve(&DVector::from_column_slice(&c));
                sol.iter()
                    .map(|&v| {
                        if v < 0.0 {
                            info.clamped += 1;
                        }
                        v.max(0.0)
                    })
                    .collect()
            }
        };
        *out.stream_mut(blk) = x;
    }
    for k in 0..stats.num_ues {
        let chi = w.wu[k] + w.wm[k];
        let a = (chi * params.splitter_noise[k]).sqrt();
        let b = (dual.lam_e[k] * coeffs.rf_need[k]).sqrt();
        let rho = if a + b > 0.0 { a / (a + b) } else { 1.0 };
        out.rho[k] = rho.clamp(RHO_EDGE, 1.0 - RHO_EDGE);
    }
    (out, info)
}

/// Per-constraint values g_i(𝒱) (≤ 0 when satisfied), flat in dual order.
/// These are the partial derivatives of the dual function.
pub fn dual_gradient(
    coeffs: &SurrogateCoeffs,
    v: &PowerAllocation,
    stats: &ChannelStats,
    params: &SystemParams,
) -> Vec<f64> {
    let k_n = stats.num_ues;
    let mut g = Vec::with_capacity(stats.num_groups + 3 * k_n + 2 * stats.num_aps);
    g.extend_from_slice(&params.rate_floor_mc);
    let terms: Vec<UeTerms> = (0..k_n).map(|k| UeTerms::compute(stats, params, v, k)).collect();
    for (k, t) in terms.iter().enumerate() {
        g.push(-coeffs.mc[k].eval(&v.q_bar[stats.group_of[k]], t.phi_mc(v.rho[k]), t.s_mc));
    }
    for (k, t) in terms.iter().enumerate() {
        g.push(params.rate_floor_uc[k] - coeffs.uc[k].eval(&v.p_bar[k], t.phi_uc(v.rho[k]), t.s_uc));
    }
    for k in 0..k_n {
        g.push(surrogate_energy_gap(coeffs, v, k));
    }
    for n in 0..stats.num_aps {
        g.push(surrogate_backhaul(coeffs, v, n) - params.backhaul_cap[n]);
    }
    for n in 0..stats.num_aps {
        g.push(v.ap_power(n) - params.power_cap[n]);
    }
    g
}

/// 𝓜(𝒱, 𝓛) with the 𝓡 terms dropped (they cancel on the dual domain).
pub fn lagrangian(
    coeffs: &SurrogateCoeffs,
    dual: &DualState,
    v: &PowerAllocation,
    stats: &ChannelStats,
    params: &SystemParams,
) -> f64 {
    let g = dual_gradient(coeffs, v, stats, params);
    let k_n = stats.num_ues;
    let g_n = stats.num_groups;
    let ct = params.prelog();
    // R̄_u,k = r̄_u,k − g_u,k
    let sum_ru: f64 = (0..k_n).map(|k| params.rate_floor_uc[k] - g[g_n + k_n + k]).sum();
    let lin: f64 = dual.to_flat().iter().zip(&g).map(|(l, gi)| l * gi).sum();
    surrogate_total_power(coeffs, params, v) - dual.eta * ct * sum_ru + lin
}

/// Dual function value and its minimizer.
pub fn dual_value(
    coeffs: &SurrogateCoeffs,
    dual: &DualState,
    stats: &ChannelStats,
    params: &SystemParams,
    recovery: Recovery,
) -> (f64, PowerAllocation) {
    let (v, _) = recover_primal(coeffs, dual, stats, params, recovery);
    (lagrangian(coeffs, dual, &v, stats, params), v)
}

/// Euclidean projection onto the dual domain: independent families clipped
/// at zero, each group's (λ_m,g, λ̄) solved through the scalar ϖ_g by
/// bisection.
pub fn project_dual(raw: &[f64], eta: f64, stats: &ChannelStats, params: &SystemParams) -> DualState {
    let tmpl = DualState {
        lam_m: vec![0.0; stats.num_groups],
        lam_bar: vec![0.0; stats.num_ues],
        lam_u: vec![0.0; stats.num_ues],
        lam_e: vec![0.0; stats.num_ues],
        lam_c: vec![0.0; stats.num_aps],
        lam_p: vec![0.0; stats.num_aps],
        eta,
    };
    let mut d = tmpl.with_flat(raw);
    for x in d.lam_u.iter_mut().chain(d.lam_e.iter_mut()).chain(d.lam_c.iter_mut()).chain(d.lam_p.iter_mut()) {
        *x = x.max(0.0);
    }
    let target = eta * params.prelog();
    for (g, members) in stats.members.iter().enumerate() {
        let mu_bar: Vec<f64> = members.iter().map(|&k| d.lam_bar[k]).collect();
        let (lm, lb) = project_group(d.lam_m[g], &mu_bar, target);
        d.lam_m[g] = lm;
        for (&k, v) in members.iter().zip(lb) {
            d.lam_bar[k] = v;
        }
    }
    d
}

/// Nearest (λ_m ≥ 0, λ̄ ≥ 0) to (μ_m, μ̄) with Σλ̄ − λ_m = target.
pub fn project_group(mu_m: f64, mu_bar: &[f64], target: f64) -> (f64, Vec<f64>) {
    let resid = |w: f64| -> f64 {
        mu_bar.iter().map(|&m| (m - w / 2.0).max(0.0)).sum::<f64>() - (mu_m + w / 2.0).max(0.0) - target
    };
    let big = target.abs() + mu_m.abs() + mu_bar.iter().map(|m| m.abs()).sum::<f64>() + 1.0;
    let (mut lo, mut hi) = (-2.0 * big, 2.0 * big);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let r = resid(mid);
        if r.abs() < 1e-13 * big || hi - lo < 1e-15 * big {
            lo = mid;
            hi = mid;
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    let mut lb: Vec<f64> = mu_bar.iter().map(|&m| (m - w / 2.0).max(0.0)).collect();
    let lm = (mu_m + w / 2.0).max(0.0);
    // Put the last rounding residue on the largest positive λ̄ so the
    // equality holds to machine precision.
    let r = lb.iter().sum::<f64>() - lm - target;
    if let Some((i, _)) = lb.iter().enumerate().filter(|(_, v)| **v > 0.0).max_by(|a, b| a.1.total_cmp(b.1)) {
        lb[i] = (lb[i] - r).max(0.0);
    }
    (lm, lb)
}

/// Sets λ_e,k to the value that makes the ρ_k-subproblem land exactly on
/// the energy boundary for the primal `v`, whenever `v` leaves room for it.
///
/// The part of 𝒟 coming from ρ_k is (√(χσ²) + √(λ_e F⁻¹))², whose curvature in
/// λ_e blows up near zero while the relevant multipliers are of order
/// χσ²F⁻¹/φ̄². A gradient step cannot resolve that scale, so these
/// coordinates are fitted in closed form instead.
fn fit_energy_multipliers(coeffs: &SurrogateCoeffs, dual: &mut DualState, v: &PowerAllocation, params: &SystemParams) {
    let w = weights(coeffs, dual, params);
    for k in 0..dual.lam_e.len() {
        let need = coeffs.rf_need[k];
        if need == 0.0 {
            dual.lam_e[k] = 0.0;
            continue;
        }
        let phi = surrogate_energy_phi(coeffs, v, k);
        if phi <= need {
            continue;
        }
        let r = need / phi;
        let a = ((w.wu[k] + w.wm[k]) * params.splitter_noise[k]).sqrt();
        dual.lam_e[k] = (a * r / (1.0 - r)).powi(2) / need;
    }
}

/// FISTA weight bookkeeping over the unprojected gradient points μ̃.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    pub pi: f64,
    pub prev_tilde: Option<Vec<f64>>,
}

impl Default for Momentum {
    fn default() -> Self {
        Momentum { pi: 1.0, prev_tilde: None }
    }
}

impl Momentum {
    pub fn next_pi(pi: f64) -> f64 {
        0.5 * (1.0 + (1.0 + 4.0 * pi * pi).sqrt())
    }

    pub fn reset(&mut self) {
        *self = Momentum::default();
    }
}

/// One (optionally accelerated) projected dual step. `scale` multiplies the
/// step per coordinate; `None` in `mom` gives the plain step.
pub fn momentum_step(
    prev: &DualState,
    grad: &[f64],
    step: f64,
    scale: &[f64],
    mom: Option<&mut Momentum>,
    stats: &ChannelStats,
    params: &SystemParams,
) -> DualState {
    let mut tilde = prev.to_flat();
    for ((x, g), s) in tilde.iter_mut().zip(grad).zip(scale) {
        *x += step * s * g;
    }
    let point = match mom {
        None => tilde,
        Some(m) => {
            let pi_next = Momentum::next_pi(m.pi);
            let weight = (m.pi - 1.0) / pi_next;
            let extrap = match &m.prev_tilde {
                Some(p) if weight != 0.0 => tilde.iter().zip(p).map(|(t, p)| t + weight * (t - p)).collect(),
                _ => tilde.clone(),
            };
            m.prev_tilde = Some(tilde);
            m.pi = pi_next;
            extrap
        }
    };
    project_dual(&point, prev.eta, stats, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub c: usize,
    pub s: usize,
    /// Dual function value, watts.
    pub dual_value: f64,
    /// Smoothed EE of the recovered primal, nats per joule.
    pub ee_nats: f64,
    pub ee_bits_per_joule: f64,
    /// Worst surrogate constraint violation, normalized per family.
    pub max_violation: f64,
    pub eta: f64,
    pub step: f64,
    /// Primal objective at the expansion point minus the dual value.
    pub duality_gap: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaRecord {
    pub t: usize,
    pub ee_smooth: f64,
    pub ee_exact: f64,
    pub dinkelbach_iters: usize,
    pub inner_iters: usize,
    /// Dinkelbach ratios visited in this round.
    pub etas: Vec<f64>,
    /// Fraction of the step towards the subproblem solution that was kept.
    pub accepted_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub sca: Vec<ScaRecord>,
    pub warnings: Vec<String>,
    pub inner_iters_total: usize,
    /// Smallest duality gap seen at any logged iterate (weak duality holds
    /// when this is ≥ −tolerance).
    pub min_duality_gap: f64,
    pub max_dinkelbach_iters: usize,
    pub dinkelbach_monotone: bool,
    pub converged: bool,
}

/// Complementary-slackness residual max_i |λ_i g_i|. The coupled multicast
/// pair refers to the epigraph constraints r_m ≤ t_g and t_g ≤ R̄_k, with t_g
/// taken as the group minimum of R̄_k at the primal.
pub fn cs_residual(dual: &DualState, grad: &[f64], stats: &ChannelStats) -> f64 {
    let (g_n, k_n) = (stats.num_groups, stats.num_ues);
    let mut worst: f64 = 0.0;
    for (g, members) in stats.members.iter().enumerate() {
        let t = members.iter().map(|&k| -grad[g_n + k]).fold(f64::INFINITY, f64::min);
        worst = worst.max((dual.lam_m[g] * (grad[g] - t)).abs());
        for &k in members {
            worst = worst.max((dual.lam_bar[k] * (t + grad[g_n + k])).abs());
        }
    }
    let flat = dual.to_flat();
    for i in g_n + k_n..flat.len() {
        worst = worst.max((flat[i] * grad[i]).abs());
    }
    worst
}

/// Normalized worst violation of the surrogate constraints. Rates stay in
/// nats, energy is relative to F⁻¹(ē), caps relative to the cap.
pub fn scaled_violation(grad: &[f64], coeffs: &SurrogateCoeffs, stats: &ChannelStats, params: &SystemParams) -> f64 {
    let (g_n, k_n, n_n) = (stats.num_groups, stats.num_ues, stats.num_aps);
    let mut worst: f64 = 0.0;
    for k in 0..k_n {
        // multicast: λ̄ gradient is −R̄_k, floor is that of the group
        let mc = params.rate_floor_mc[stats.group_of[k]] + grad[g_n + k];
        worst = worst.max(mc);
        worst = worst.max(grad[g_n + k_n + k]);
        let s = if coeffs.rf_need[k] > 0.0 { coeffs.rf_need[k] } else { 1.0 };
        worst = worst.max(grad[g_n + 2 * k_n + k] / s);
    }
    for n in 0..n_n {
        worst = worst.max(grad[g_n + 3 * k_n + n] / params.backhaul_cap[n]);
        worst = worst.max(grad[g_n + 3 * k_n + n_n + n] / params.power_cap[n]);
    }
    worst.max(0.0)
}

/// Per-coordinate step scale: the inverse of a diagonal estimate of the dual
/// curvature, Σ_b Σ_n (∂g_i/∂x_{n,b})² / H_b[n,n], taken at the expansion
/// point. Multipliers tied by the group coupling share the smallest scale of
/// their group so the Euclidean projection stays exact.
fn step_scale(
    coeffs: &SurrogateCoeffs,
    dual: &DualState,
    stats: &ChannelStats,
    params: &SystemParams,
    on: bool,
) -> Vec<f64> {
    let mut s = vec![1.0; dual.len()];
    if !on {
        return s;
    }
    let (g_n, k_n, n_n) = (stats.num_groups, stats.num_ues, stats.num_aps);
    let nb = g_n + k_n;
    let w = weights(coeffs, dual, params);
    let diags: Vec<f64> = (0..nb)
        .flat_map(|b| {
            let (h, _) = block_system(coeffs, dual, &w, stats, params, b);
            (0..n_n).map(move |n| h[(n, n)])
        })
        .collect();
    let curv = |grad: &[f64]| -> f64 { grad.iter().zip(&diags).map(|(g, h)| g * g / h).sum() };
    let inv = |c: f64| if c > 0.0 && c.is_finite() { 1.0 / c } else { 1.0 };
    let at = &coeffs.at;
    let flat_len = nb * n_n + k_n;
    for k in 0..k_n {
        for (off, unicast) in [(g_n, false), (g_n + k_n, true)] {
            let mut gr = vec![0.0; flat_len];
            add_rate_bound_grad(coeffs, stats, params, at, k, unicast, 1.0, &mut gr);
            s[off + k] = inv(curv(&gr[..nb * n_n]));
        }
        let ge: Vec<f64> = coeffs.energy_grad[k].iter().flatten().copied().collect();
        s[g_n + 2 * k_n + k] = inv(curv(&ge));
    }
    for n in 0..n_n {
        let mut gc = vec![0.0; nb * n_n];
        let mut gp = vec![0.0; nb * n_n];
        for b in 0..nb {
            let x = at.stream(b)[n];
            gc[b * n_n + n] = 2.0 * coeffs.stream_rate(b) * coeffs.stream_tan[b][n].slope * x;
            gp[b * n_n + n] = 2.0 * x;
        }
        s[g_n + 3 * k_n + n] = inv(curv(&gc));
        s[g_n + 3 * k_n + n_n + n] = inv(curv(&gp));
    }
    for (g, members) in stats.members.iter().enumerate() {
        let m = members.iter().map(|&k| s[g_n + k]).fold(f64::INFINITY, f64::min);
        s[g] = m;
        for &k in members {
            s[g_n + k] = m;
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub alloc: PowerAllocation,
    pub dual: DualState,
    pub value: f64,
    pub iters: usize,
    pub converged: bool,
    /// max_i |λ_i g_i(𝒱°)| at the returned point, watts.
    pub cs_residual: f64,
    pub max_violation: f64,
    pub min_duality_gap: f64,
    pub records: Vec<TraceRecord>,
}

/// Dual ascent for a fixed η. `primal_ref` is the subproblem objective at a
/// feasible point, used to log the duality gap.
#[allow(clippy::too_many_arguments)]
pub fn inner_solve(
    coeffs: &SurrogateCoeffs,
    eta: f64,
    stats: &ChannelStats,
    params: &SystemParams,
    opts: &SolverOptions,
    primal_ref: f64,
    warm: Option<&DualState>,
    tc: (usize, usize),
) -> InnerResult {
    let start = Instant::now();
    let mut dual = match warm {
        Some(w) => {
            let mut flat = w.to_flat();
            flat.iter_mut().for_each(|x| *x = x.max(0.0));
            project_dual(&flat, eta, stats, params)
        }
        None => DualState::initial(stats, params, eta),
    };
    let (_, v0) = dual_value(coeffs, &dual, stats, params, opts.recovery);
    fit_energy_multipliers(coeffs, &mut dual, &v0, params);
    let scale = step_scale(coeffs, &dual, stats, params, opts.precondition);
    let (mut value, mut v) = dual_value(coeffs, &dual, stats, params, opts.recovery);
    let mut grad = dual_gradient(coeffs, &v, stats, params);
    let mut step = opts.step;
    let mut mom = Momentum::default();
    let mut records = Vec::new();
    let mut min_gap = primal_ref - value;
    let mut converged = false;
    let mut iters = 0;
    let record =
        |s: usize, value: f64, v: &PowerAllocation, grad: &[f64], step: f64, records: &mut Vec<TraceRecord>| {
            let (ee_nats, ee_bits) = smoothed_ee(stats, params, v);
            records.push(TraceRecord {
                t: tc.0,
                c: tc.1,
                s,
                dual_value: value,
                ee_nats,
                ee_bits_per_joule: ee_bits,
                max_violation: scaled_violation(grad, coeffs, stats, params),
                eta,
                step,
                duality_gap: primal_ref - value,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        };
    for s in 1..=opts.max_iter_inner {
        iters = s;
        let mut halvings = 0;
        let (nd, nv, nvalue) = loop {
            let m = if opts.momentum { Some(&mut mom) } else { None };
            let mut nd = momentum_step(&dual, &grad, step, &scale, m, stats, params);
            fit_energy_multipliers(coeffs, &mut nd, &v, params);
            let (nvalue, nv) = dual_value(coeffs, &nd, stats, params, opts.recovery);
            let drop = nvalue < value - 1e-12 * value.abs().max(1.0);
            if !opts.backtracking || !drop || halvings >= 20 {
                break (nd, nv, nvalue);
            }
            if opts.momentum && mom.prev_tilde.is_some() && mom.pi > 1.0 + 1e-12 && halvings == 0 && s > 1 {
                // the overshoot came from the extrapolation: restart it
                mom.reset();
            } else {
                step *= 0.5;
                mom.reset();
            }
            halvings += 1;
        };
        let change = (nvalue - value).abs();
        dual = nd;
        v = nv;
        value = nvalue;
        grad = dual_gradient(coeffs, &v, stats, params);
        min_gap = min_gap.min(primal_ref - value);
        if opts.trace_inner {
            record(s, value, &v, &grad, step, &mut records);
        }
        let rel_ok = change <= opts.tol_inner * value.abs().max(1e-12);
        let feas_ok = opts.inner_feas_tol.is_none_or(|tol| scaled_violation(&grad, coeffs, stats, params) <= tol);
        if rel_ok && feas_ok {
            converged = true;
            break;
        }
    }
    if !opts.trace_inner {
        record(iters, value, &v, &grad, step, &mut records);
    }
    let cs_residual = cs_residual(&dual, &grad, stats);
    let max_violation = scaled_violation(&grad, coeffs, stats, params);
    InnerResult {
        alloc: v,
        dual,
        value,
        iters,
        converged,
        cs_residual,
        max_violation,
        min_duality_gap: min_gap,
        records,
    }
}

/// Smoothed-objective EE of an allocation: (nats/J, bits/J).
pub fn smoothed_ee(stats: &ChannelStats, params: &SystemParams, v: &PowerAllocation) -> (f64, f64) {
    let r = crate::performance::rates(stats, params, v);
    let p = crate::performance::total_power(
        params,
        v,
        &r.mc,
        &r.uc,
        crate::performance::Indicator::Smooth(params.smooth_theta),
    );
    let bits = params.ee_bits_per_joule(r.sum(), p);
    (bits * std::f64::consts::LN_2, bits)
}

/// Surrogate ratio P̄_tot / (c_τ (Σ_g min_k R̄_k + Σ_k R̄_u,k)) at `v`.
fn surrogate_ratio(coeffs: &SurrogateCoeffs, stats: &ChannelStats, params: &SystemParams, v: &PowerAllocation) -> f64 {
    let g = dual_gradient(coeffs, v, stats, params);
    let (g_n, k_n) = (stats.num_groups, stats.num_ues);
    let rk: Vec<f64> = (0..k_n).map(|k| -g[g_n + k]).collect();
    let rm: f64 = crate::performance::group_min(&stats.members, &rk).iter().sum();
    let ru: f64 = (0..k_n).map(|k| params.rate_floor_uc[k] - g[g_n + k_n + k]).sum();
    surrogate_total_power(coeffs, params, v) / (params.prelog() * (rm + ru))
}

#[derive(Debug, Clone)]
pub struct DinkelbachResult {
    pub alloc: PowerAllocation,
    pub eta: f64,
    pub etas: Vec<f64>,
    pub iters: usize,
    pub inner_iters: usize,
    pub monotone: bool,
    pub records: Vec<TraceRecord>,
    pub min_duality_gap: f64,
    pub last_inner: Option<InnerResult>,
}

/// Ratio iterations on one set of surrogates, starting from the ratio at
/// `v_init` and, when given, from the multipliers `warm`. A step that would raise η is rejected and ends the loop, as does
/// an inner solve that hits its iteration cap.
pub fn dinkelbach_solve(
    coeffs: &SurrogateCoeffs,
    stats: &ChannelStats,
    params: &SystemParams,
    v_init: &PowerAllocation,
    opts: &SolverOptions,
    t: usize,
    warm: Option<&DualState>,
) -> DinkelbachResult {
    let mut eta = surrogate_ratio(coeffs, stats, params, v_init);
    let mut etas = vec![eta];
    let mut best = v_init.clone();
    let mut inner_iters = 0;
    let mut records = Vec::new();
    let mut min_gap = f64::INFINITY;
    let mut warm: Option<DualState> = warm.cloned();
    let mut iters = 0;
    let mut last_inner = None;
    // Subproblem value at the expansion point, feasible by tightness.
    let feasible_rate_sum = coeffs.rate_mc_t.iter().sum::<f64>() + coeffs.rate_uc_t.iter().sum::<f64>();
    let p_ref = surrogate_total_power(coeffs, params, &coeffs.at);
    for c in 0..opts.max_iter_dink {
        iters = c + 1;
        let primal_ref = p_ref - eta * params.prelog() * feasible_rate_sum;
        let inner = inner_solve(coeffs, eta, stats, params, opts, primal_ref, warm.as_ref(), (t, c));
        inner_iters += inner.iters;
        min_gap = min_gap.min(inner.min_duality_gap);
        records.extend(inner.records.iter().cloned());
        let eta_new = surrogate_ratio(coeffs, stats, params, &inner.alloc);
        let done = !(eta_new.is_finite() && eta_new > 0.0) || eta_new >= eta;
        if done {
            last_inner = Some(inner);
            break;
        }
        let rel = (eta - eta_new) / eta;
        eta = eta_new;
        etas.push(eta);
        best = inner.alloc.clone();
        warm = Some(inner.dual.clone());
        // ratio updates past an unconverged inner solve only chase its error
        let exact = inner.converged;
        last_inner = Some(inner);
        if rel < opts.tol_dink || !exact {
            break;
        }
    }
    DinkelbachResult {
        alloc: best,
        eta,
        monotone: etas.windows(2).all(|w| w[1] <= w[0]),
        etas,
        iters,
        inner_iters,
        records,
        min_duality_gap: min_gap,
        last_inner,
    }
}

/// Slacks used between SCA rounds: true rates, smoothed backhaul.
fn smooth_slacks(stats: &ChannelStats, params: &SystemParams, v: &PowerAllocation) -> Option<Slacks> {
    let rep = evaluate(stats, v, params).ok()?;
    let mut sl = check_constraints(&rep, params, &stats.group_of);
    for n in 0..params.num_aps {
        sl.backhaul[n] = params.backhaul_cap[n]
            - crate::performance::backhaul_load(
                v,
                &rep.r_multicast,
                &rep.r_unicast,
                n,
                crate::performance::Indicator::Smooth(params.smooth_theta),
            );
    }
    Some(sl)
}

pub fn smooth_feasible(stats: &ChannelStats, params: &SystemParams, v: &PowerAllocation, tol: f64) -> bool {
    smooth_slacks(stats, params, v).is_some_and(|sl| sl.min_slack() >= -tol)
}

/// All amplitudes times `s`, with each ρ_k lowered where needed so the
/// harvested power still meets the floor.
fn scaled(stats: &ChannelStats, params: &SystemParams, a: &PowerAllocation, s: f64) -> PowerAllocation {
    let mut out = a.clone();
    for x in out.q_bar.iter_mut().chain(out.p_bar.iter_mut()).flatten() {
        *x *= s;
    }
    for k in 0..params.num_ues {
        let need = params.harvester.harvest_inverse(params.energy_floor[k]);
        if need > 0.0 {
            let phi = UeTerms::compute(stats, params, &out, k).phi_e();
            let cap = 1.0 - need * (1.0 + 1e-9) / phi;
            out.rho[k] = out.rho[k].min(cap).max(RHO_EDGE);
        }
    }
    out
}

/// A candidate that breaks only backhaul caps is pulled back along the
/// common amplitude scale, which lowers every rate, to the largest feasible
/// scale.
fn fit_backhaul(stats: &ChannelStats, params: &SystemParams, a: &PowerAllocation, tol: f64) -> Option<PowerAllocation> {
    let sl = smooth_slacks(stats, params, a)?;
    let others_ok = [&sl.multicast, &sl.unicast, &sl.energy, &sl.power].iter().all(|f| f.iter().all(|&x| x >= -tol));
    if !others_ok {
        return None;
    }
    let bh_ok = |s: f64| {
        smooth_slacks(stats, params, &scaled(stats, params, a, s))
            .is_some_and(|sl| sl.backhaul.iter().all(|&x| x >= -tol))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if bh_ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let out = scaled(stats, params, a, lo);
    smooth_feasible(stats, params, &out, tol).then_some(out)
}

/// Common amplitude scale in (0, 1] maximizing the smoothed EE of `v`. The
/// links are mostly interference limited, so backing every amplitude off
/// costs little rate while the power falls with the square of the scale.
fn backoff(
    stats: &ChannelStats,
    params: &SystemParams,
    v: &PowerAllocation,
    tol: f64,
) -> Option<(PowerAllocation, f64)> {
    let ok = |s: f64| smooth_feasible(stats, params, &scaled(stats, params, v, s), tol);
    if !ok(1.0) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let ee = |s: f64| smoothed_ee(stats, params, &scaled(stats, params, v, s)).1;
    let (mut a, mut b) = (hi, 1.0);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - r * (b - a), a + r * (b - a));
    let (mut f1, mut f2) = (ee(x1), ee(x2));
    for _ in 0..30 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = ee(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = ee(x2);
        }
    }
    [hi, x1, x2, 1.0]
        .into_iter()
        .map(|s| scaled(stats, params, v, s))
        .filter(|c| smooth_feasible(stats, params, c, tol))
        .map(|c| {
            let e = smoothed_ee(stats, params, &c).1;
            (c, e)
        })
        .max_by(|x, y| x.1.total_cmp(&y.1))
}

/// Best smoothed-EE feasible point among the halvings of the step from `v`
/// towards `cand` and their backhaul-fitted versions; the winner, or `v`
/// itself when none qualifies, is then backed off along the common amplitude
/// scale. Needs EE ≥ `ee`.
fn line_search(
    stats: &ChannelStats,
    params: &SystemParams,
    v: &PowerAllocation,
    cand: &PowerAllocation,
    ee: f64,
) -> Option<(PowerAllocation, f64, f64)> {
    let mut best: Option<(PowerAllocation, f64, f64)> = None;
    let mut frac = 1.0;
    for _ in 0..12 {
        // inexact subproblem solutions can overshoot a power cap slightly
        let c = blend(v, cand, frac);
        let c = project_power(&c.q_bar, &c.p_bar, &c.rho, params);
        let pick =
            if smooth_feasible(stats, params, &c, 1e-10) { Some(c) } else { fit_backhaul(stats, params, &c, 1e-10) };
        if let Some(p) = pick {
            let e = smoothed_ee(stats, params, &p).1;
            if e >= ee && best.as_ref().is_none_or(|b| e > b.1) {
                best = Some((p, e, frac));
            }
        }
        frac *= 0.5;
    }
    let base = best.as_ref().map_or(v, |b| &b.0);
    if let Some((p, e)) = backoff(stats, params, base, 1e-10) {
        if e >= ee && best.as_ref().is_none_or(|b| e > b.1) {
            let frac = best.as_ref().map_or(0.0, |b| b.2);
            best = Some((p, e, frac));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub alloc: PowerAllocation,
    pub report: PerfReport,
    pub trace: SolveTrace,
}

/// Tolerance on smoothed constraint slack when accepting a starting point.
pub const START_TOL: f64 = 1e-8;

pub fn solve(
    stats: &ChannelStats,
    params: &SystemParams,
    v0: &PowerAllocation,
    opts: &SolverOptions,
) -> Result<SolveOutput, SolveError> {
    v0.check_shape(params)?;
    evaluate(stats, v0, params)?;
    // the smoothed backhaul load never exceeds the exact one, so any exactly
    // feasible start passes, and so does any earlier solution
    let sl = smooth_slacks(stats, params, v0).ok_or_else(|| SolveError::InfeasibleStart("rates undefined".into()))?;
    if let Some(why) = sl.first_violation(START_TOL) {
        return Err(SolveError::InfeasibleStart(why));
    }
    let mut v = v0.clone();
    for r in v.rho.iter_mut() {
        *r = r.clamp(RHO_EDGE, 1.0 - RHO_EDGE);
    }
    let mut trace = SolveTrace { min_duality_gap: f64::INFINITY, dinkelbach_monotone: true, ..Default::default() };
    let mut ee = smoothed_ee(stats, params, &v).1;
    let mut dual: Option<DualState> = None;
    for t in 0..opts.max_iter_sca {
        let coeffs = build(stats, params, &v);
        let dk = dinkelbach_solve(&coeffs, stats, params, &v, opts, t, dual.as_ref());
        dual = dk.last_inner.as_ref().map(|i| i.dual.clone());
        trace.inner_iters_total += dk.inner_iters;
        trace.max_dinkelbach_iters = trace.max_dinkelbach_iters.max(dk.iters);
        trace.dinkelbach_monotone &= dk.monotone;
        trace.min_duality_gap = trace.min_duality_gap.min(dk.min_duality_gap);
        trace.records.extend(dk.records);
        if let Some(inner) = &dk.last_inner {
            if !inner.converged {
                trace.warnings.push(format!("t={t}: inner loop hit {} iterations", inner.iters));
            }
        }
        let accepted = line_search(stats, params, &v, &dk.alloc, ee);
        let ee_before = ee;
        let ee_exact = |a: &PowerAllocation| evaluate(stats, a, params).map(|r| r.ee).unwrap_or(0.0);
        match accepted {
            Some((cand, ee_c, frac)) => {
                v = cand;
                ee = ee_c;
                trace.sca.push(ScaRecord {
                    t,
                    ee_smooth: ee,
                    ee_exact: ee_exact(&v),
                    dinkelbach_iters: dk.iters,
                    inner_iters: dk.inner_iters,
                    etas: dk.etas,
                    accepted_fraction: frac,
                });
            }
            None => {
                trace.sca.push(ScaRecord {
                    t,
                    ee_smooth: ee,
                    ee_exact: ee_exact(&v),
                    dinkelbach_iters: dk.iters,
                    inner_iters: dk.inner_iters,
                    etas: dk.etas,
                    accepted_fraction: 0.0,
                });
                trace.converged = true;
                break;
            }
        }
        if (ee - ee_before).abs() <= opts.tol_sca * ee_before.abs() {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        trace.warnings.push(format!("SCA stopped at the {}-round cap", opts.max_iter_sca));
    }
    let report = evaluate(stats, &v, params)?;
    Ok(SolveOutput { alloc: v, report, trace })
}

fn blend(a: &PowerAllocation, b: &PowerAllocation, f: f64) -> PowerAllocation {
    let fa = a.to_flat();
    let fb = b.to_flat();
    let mix: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x + f * (y - x)).collect();
    a.from_flat(&mix)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pi_recursion() {
        let p1 = Momentum::next_pi(1.0);
        assert!((p1 - 1.618033988749895).abs() < 1e-15);
        assert!((Momentum::next_pi(p1) - 2.193527085331054).abs() < 1e-14);
    }

    #[test]
    fn group_projection_single_member() {
        // μ̄ = 0, μ_m = 0, target 1 ⇒ λ̄ = 1, λ_m = 0 (ϖ = −2)
        let (lm, lb) = project_group(0.0, &[0.0], 1.0);
        assert!(lm.abs() < 1e-12);
        assert!((lb[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nnqp_unconstrained_interior() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = nnqp(&h, &[1.0, 1.0]);
        let expect = h.clone().cholesky().unwrap().solve(&DVector::from_vec(vec![1.0, 1.0]));
        assert!((x[0] - expect[0]).abs() < 1e-14 && (x[1] - expect[1]).abs() < 1e-14);
    }

    #[test]
    fn nnqp_bound_active() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let x = nnqp(&h, &[1.0, -1.0]);
        assert_eq!(x, vec![1.0, 0.0]);
    }
}
