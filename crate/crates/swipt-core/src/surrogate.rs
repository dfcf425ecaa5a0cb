//! Convex surrogates built around an expansion point 𝒱^(t).
//!
//! Rates get the concave minorant ζ + 2ψᵀx − c(φ(𝒱) + M|ξ̂ᵀx|²). The smooth
//! indicator f_θ is majorized by its tangent in the power variable, which is
//! convex quadratic in the amplitudes and a global upper bound for every
//! expansion point, including zero.

use crate::channel::ChannelStats;
use crate::performance::{group_min, rates, smooth_indicator, total_power, Indicator, PowerAllocation, UeTerms};
use crate::system_model::SystemParams;
use serde::{Deserialize, Serialize};

pub const RHO_EDGE: f64 = 1e-6;

/// Minorant of ln(1 + a/φ) in the form ζ + 2ψᵀx − c(φ(𝒱) + s(x)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub zeta: f64,
    /// φ at the expansion point.
    pub phi: f64,
    /// a/(Φ(Φ+a)).
    pub c: f64,
    pub psi: Vec<f64>,
}

impl RateBound {
    fn new(rate: f64, s: f64, phi: f64, proj: f64, xi_hat: &[f64], m: f64) -> Self {
        RateBound {
            zeta: rate - s / phi,
            phi,
            c: s / (phi * (phi + s)),
            psi: xi_hat.iter().map(|a| m * proj * a / phi).collect(),
        }
    }

    pub fn eval(&self, x: &[f64], phi_v: f64, s_v: f64) -> f64 {
        let lin: f64 = self.psi.iter().zip(x).map(|(p, v)| p * v).sum();
        self.zeta + 2.0 * lin - self.c * (phi_v + s_v)
    }
}

/// Tangent of f_θ in the power variable: f̄(x) = icpt + slope·x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangent {
    pub slope: f64,
    pub icpt: f64,
}

impl Tangent {
    pub fn at(x: f64, theta: f64) -> Self {
        let slope = theta / (x + theta).powi(2);
        Tangent { slope, icpt: smooth_indicator(x, theta) - slope * x }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.icpt + self.slope * x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateCoeffs {
    /// Expansion point, with ρ nudged into the open interval.
    pub at: PowerAllocation,
    pub mc: Vec<RateBound>,
    pub uc: Vec<RateBound>,
    /// `energy_grad[k][b]`: gradient of the quadratic part of φ_e,k with
    /// respect to stream `b` (groups first), at the expansion point.
    pub energy_grad: Vec<Vec<Vec<f64>>>,
    /// δ² − Q_e,k(𝒱^(t)); φ̄_e,k = const + Σ_b grad_bᵀ x_b.
    pub energy_const: Vec<f64>,
    /// F⁻¹(ē_k).
    pub rf_need: Vec<f64>,
    /// `stream_tan[b][n]`, per stream and AP.
    pub stream_tan: Vec<Vec<Tangent>>,
    pub ap_tan: Vec<Tangent>,
    pub rate_mc_t: Vec<f64>,
    pub rate_mc_ue_t: Vec<f64>,
    pub rate_uc_t: Vec<f64>,
}

impl SurrogateCoeffs {
    /// Frozen rate of stream `b`.
    pub fn stream_rate(&self, b: usize) -> f64 {
        let g = self.rate_mc_t.len();
        if b < g {
            self.rate_mc_t[b]
        } else {
            self.rate_uc_t[b - g]
        }
    }
}

pub fn build(stats: &ChannelStats, params: &SystemParams, v_t: &PowerAllocation) -> SurrogateCoeffs {
    let mut at = v_t.clone();
    for r in at.rho.iter_mut() {
        *r = r.clamp(RHO_EDGE, 1.0 - RHO_EDGE);
    }
    let k_n = stats.num_ues;
    let g_n = stats.num_groups;
    let n_n = stats.num_aps;
    let m = stats.m();
    let theta = params.smooth_theta;
    let r = rates(stats, params, &at);
    let mut mc = Vec::with_capacity(k_n);
    let mut uc = Vec::with_capacity(k_n);
    let mut energy_grad = Vec::with_capacity(k_n);
    let mut energy_const = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let t = UeTerms::compute(stats, params, &at, k);
        let g = stats.group_of[k];
        let xh = crate::channel::col(&stats.xi_hat, k);
        let pm = t.phi_mc(at.rho[k]);
        let pu = t.phi_uc(at.rho[k]);
        mc.push(RateBound::new(r.mc_ue[k], t.s_mc, pm, stats.proj(k, &at.q_bar[g]), xh, m));
        uc.push(RateBound::new(r.uc[k], t.s_uc, pu, stats.proj(k, &at.p_bar[k]), xh, m));

        let mut grads = vec![vec![0.0; n_n]; g_n + k_n];
        for (b, gr) in grads.iter_mut().enumerate() {
            let x = at.stream(b);
            stats.add_inc_grad(k, x, 1.0, gr);
            if b == g || (b >= g_n && stats.group_of[b - g_n] == g) {
                stats.add_coh_grad(k, x, m, gr);
            }
        }
        // Q_e is a homogeneous quadratic, so the tangent intercept is −Q_e(𝒱^(t)).
        energy_const.push(t.antenna_noise - (t.phi_e() - t.antenna_noise));
        energy_grad.push(grads);
    }
    let stream_tan = (0..g_n + k_n).map(|b| at.stream(b).iter().map(|a| Tangent::at(a * a, theta)).collect()).collect();
    let ap_tan = (0..n_n).map(|n| Tangent::at(at.ap_power(n), theta)).collect();
    let rf_need = params.energy_floor.iter().map(|&e| params.harvester.harvest_inverse(e)).collect();
    SurrogateCoeffs {
        at,
        mc,
        uc,
        energy_grad,
        energy_const,
        rf_need,
        stream_tan,
        ap_tan,
        rate_mc_t: group_min(&stats.members, &r.mc_ue),
        rate_mc_ue_t: r.mc_ue,
        rate_uc_t: r.uc,
    }
}

pub fn surrogate_multicast_rate_ue(
    coeffs: &SurrogateCoeffs,
    stats: &ChannelStats,
    params: &SystemParams,
    alloc: &PowerAllocation,
    k: usize,
) -> f64 {
    let t = UeTerms::compute(stats, params, alloc, k);
    let g = stats.group_of[k];
    coeffs.mc[k].eval(&alloc.q_bar[g], t.phi_mc(alloc.rho[k]), t.s_mc)
}

pub fn surrogate_unicast_rate(
    coeffs: &SurrogateCoeffs,
    stats: &ChannelStats,
    params: &SystemParams,
    alloc: &PowerAllocation,
    k: usize,
) -> f64 {
    let t = UeTerms::compute(stats, params, alloc, k);
    coeffs.uc[k].eval(&alloc.p_bar[k], t.phi_uc(alloc.rho[k]), t.s_uc)
}

/// φ̄_e,k: tangent lower bound of E|y_k|².
pub fn surrogate_energy_phi(coeffs: &SurrogateCoeffs, alloc: &PowerAllocation, k: usize) -> f64 {
    let lin: f64 = coeffs.energy_grad[k]
        .iter()
        .enumerate()
        .map(|(b, gr)| gr.iter().zip(alloc.stream(b)).map(|(a, x)| a * x).sum::<f64>())
        .sum();
    coeffs.energy_const[k] + lin
}

/// F⁻¹(ē_k)/(1−ρ_k) − φ̄_e,k; the convexified energy constraint is `≤ 0`.
pub fn surrogate_energy_gap(coeffs: &SurrogateCoeffs, alloc: &PowerAllocation, k: usize) -> f64 {
    let need = coeffs.rf_need[k];
    let req = if need == 0.0 { 0.0 } else { need / (1.0 - alloc.rho[k]) };
    req - surrogate_energy_phi(coeffs, alloc, k)
}

/// C̄_bh,n with rates frozen at the expansion point.
pub fn surrogate_backhaul(coeffs: &SurrogateCoeffs, alloc: &PowerAllocation, n: usize) -> f64 {
    (0..alloc.num_streams())
        .map(|b| {
            let a = alloc.stream(b)[n];
            coeffs.stream_rate(b) * coeffs.stream_tan[b][n].eval(a * a)
        })
        .sum()
}

pub fn surrogate_total_power(coeffs: &SurrogateCoeffs, params: &SystemParams, alloc: &PowerAllocation) -> f64 {
    let dp = params.delta_p();
    let bh = params.bh_coeff();
    (0..params.num_aps)
        .map(|n| {
            let ptr = alloc.ap_power(n);
            params.ap_sleep
                + ptr / params.pa_efficiency[n]
                + dp * coeffs.ap_tan[n].eval(ptr)
                + bh * surrogate_backhaul(coeffs, alloc, n)
                + params.bh_fixed
        })
        .sum()
}

/// Smoothed backhaul load with rates frozen at the expansion point: the
/// quantity C̄_bh majorizes.
pub fn frozen_backhaul(coeffs: &SurrogateCoeffs, params: &SystemParams, alloc: &PowerAllocation, n: usize) -> f64 {
    crate::performance::backhaul_load(
        alloc,
        &coeffs.rate_mc_t,
        &coeffs.rate_uc_t,
        n,
        Indicator::Smooth(params.smooth_theta),
    )
}

/// Smoothed total power with frozen rates: the quantity P̄_tot majorizes.
pub fn frozen_total_power(coeffs: &SurrogateCoeffs, params: &SystemParams, alloc: &PowerAllocation) -> f64 {
    total_power(params, alloc, &coeffs.rate_mc_t, &coeffs.rate_uc_t, Indicator::Smooth(params.smooth_theta))
}

/// Gradient of a rate minorant with respect to every variable, scaled by
/// `w`, accumulated into a flat (q, p, ρ) vector.
#[allow(clippy::too_many_arguments)]
pub fn add_rate_bound_grad(
    coeffs: &SurrogateCoeffs,
    stats: &ChannelStats,
    params: &SystemParams,
    alloc: &PowerAllocation,
    j: usize,
    unicast: bool,
    w: f64,
    out: &mut [f64],
) {
    let (n_n, g_n, k_n) = (stats.num_aps, stats.num_groups, stats.num_ues);
    let m = stats.m();
    let g = stats.group_of[j];
    let bound = if unicast { &coeffs.uc[j] } else { &coeffs.mc[j] };
    let own = if unicast { g_n + j } else { g };
    let mut tmp = vec![0.0; n_n];
    for b in 0..g_n + k_n {
        tmp.iter_mut().for_each(|x| *x = 0.0);
        let x = alloc.stream(b);
        // −c ∇φ
        stats.add_inc_grad(j, x, -bound.c, &mut tmp);
        if b >= g_n && stats.group_of[b - g_n] == g && !(unicast && b - g_n == j) {
            stats.add_coh_grad(j, x, -bound.c * m, &mut tmp);
        }
        if b == own {
            stats.add_sig_grad(j, x, -bound.c * m, &mut tmp);
            for (t, p) in tmp.iter_mut().zip(&bound.psi) {
                *t += 2.0 * p;
            }
        }
        for (o, t) in out[b * n_n..(b + 1) * n_n].iter_mut().zip(&tmp) {
            *o += w * t;
        }
    }
    let rho = alloc.rho[j];
    out[(g_n + k_n) * n_n + j] += w * bound.c * params.splitter_noise[j] / (rho * rho);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::derive_stats;
    use crate::system_model::generate_topology;

    #[test]
    fn tight_at_expansion_point() {
        let p = SystemParams::default();
        let t = generate_topology(&p, 4);
        let s = derive_stats(&p, &t);
        let v = PowerAllocation::equal_split(&p, 0.6);
        let c = build(&s, &p, &v);
        for k in 0..p.num_ues {
            let r = surrogate_multicast_rate_ue(&c, &s, &p, &v, k);
            assert!((r - c.rate_mc_ue_t[k]).abs() <= 1e-9 * c.rate_mc_ue_t[k].max(1e-12));
            let r = surrogate_unicast_rate(&c, &s, &p, &v, k);
            assert!((r - c.rate_uc_t[k]).abs() <= 1e-9 * c.rate_uc_t[k].max(1e-12));
            let phi = UeTerms::compute(&s, &p, &v, k).phi_e();
            assert!((surrogate_energy_phi(&c, &v, k) - phi).abs() <= 1e-9 * phi);
        }
        let exact = frozen_total_power(&c, &p, &v);
        assert!((surrogate_total_power(&c, &p, &v) - exact).abs() <= 1e-9 * exact);
    }

    #[test]
    fn zero_point_tangent_dominates() {
        let t = Tangent::at(0.0, 1e-5);
        for x in [0.0, 1e-7, 1e-5, 1e-3, 1.0] {
            assert!(t.eval(x) >= smooth_indicator(x, 1e-5));
        }
    }
}
