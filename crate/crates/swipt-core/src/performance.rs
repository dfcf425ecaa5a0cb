//! Closed-form rates, received RF power, harvesting and power consumption.

use crate::channel::ChannelStats;
use crate::error::SolveError;
use crate::system_model::{Harvester, SystemParams};
use serde::{Deserialize, Serialize};

/// Activity threshold for the exact indicator, in watts.
pub const ACTIVE_EPS: f64 = 1e-12;

/// Decision variables in the amplitude domain: `q_bar[g][n]`, `p_bar[k][n]`
/// and one splitting factor per UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub q_bar: Vec<Vec<f64>>,
    pub p_bar: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
}

impl PowerAllocation {
    pub fn zeros(n: usize, k: usize, g: usize) -> Self {
        PowerAllocation { q_bar: vec![vec![0.0; n]; g], p_bar: vec![vec![0.0; n]; k], rho: vec![0.5; k] }
    }

    /// Every AP splits its cap equally over all G+K streams.
    pub fn equal_split(params: &SystemParams, rho: f64) -> Self {
        let streams = (params.num_groups + params.num_ues) as f64;
        let amp: Vec<f64> = params.power_cap.iter().map(|p| (p / streams).sqrt()).collect();
        PowerAllocation {
            q_bar: vec![amp.clone(); params.num_groups],
            p_bar: vec![amp; params.num_ues],
            rho: vec![rho; params.num_ues],
        }
    }

    pub fn num_aps(&self) -> usize {
        self.q_bar.first().or(self.p_bar.first()).map_or(0, Vec::len)
    }

    /// Stream `b` with multicast groups first, then unicast UEs.
    pub fn stream(&self, b: usize) -> &[f64] {
        let g = self.q_bar.len();
        if b < g {
            &self.q_bar[b]
        } else {
            &self.p_bar[b - g]
        }
    }

    pub fn stream_mut(&mut self, b: usize) -> &mut Vec<f64> {
        let g = self.q_bar.len();
        if b < g {
            &mut self.q_bar[b]
        } else {
            &mut self.p_bar[b - g]
        }
    }

    pub fn num_streams(&self) -> usize {
        self.q_bar.len() + self.p_bar.len()
    }

    /// Σ_g q_{n,g} + Σ_k p_{n,k}.
    pub fn ap_power(&self, n: usize) -> f64 {
        self.q_bar.iter().chain(&self.p_bar).map(|x| x[n] * x[n]).sum()
    }

    /// Flattened as q (G×N), then p (K×N), then ρ (K).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.q_bar.iter().chain(&self.p_bar).flatten().copied().collect();
        v.extend_from_slice(&self.rho);
        v
    }

    pub fn from_flat(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for x in out.q_bar.iter_mut().chain(out.p_bar.iter_mut()).flat_map(|v| v.iter_mut()) {
            *x = it.next().expect("flat vector too short");
        }
        for r in out.rho.iter_mut() {
            *r = it.next().expect("flat vector too short");
        }
        out
    }

    pub fn check_shape(&self, params: &SystemParams) -> Result<(), SolveError> {
        let n = params.num_aps;
        if self.q_bar.len() != params.num_groups
            || self.p_bar.len() != params.num_ues
            || self.rho.len() != params.num_ues
            || self.q_bar.iter().chain(&self.p_bar).any(|v| v.len() != n)
        {
            return Err(SolveError::Shape(format!(
                "expected {} multicast and {} unicast vectors of length {n}",
                params.num_groups, params.num_ues
            )));
        }
        Ok(())
    }

    pub fn check_domain(&self) -> Result<(), SolveError> {
        for (ue, &rho) in self.rho.iter().enumerate() {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(SolveError::Domain { ue, rho });
            }
        }
        Ok(())
    }
}

impl Harvester {
    fn eth1(&self) -> f64 {
        (-self.iota1 * self.sensitivity + self.iota2).exp()
    }

    /// Harvested DC power for RF input `p_in`.
    pub fn harvest(&self, p_in: f64) -> f64 {
        let e1 = self.eth1();
        let v = self.max_out / e1 * ((1.0 + e1) / (1.0 + (-self.iota1 * p_in + self.iota2).exp()) - 1.0);
        v.max(0.0)
    }

    /// RF input needed to harvest `x`; `+∞` when `x` is at or above saturation.
    pub fn harvest_inverse(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.max_out {
            return f64::INFINITY;
        }
        let e1 = self.eth1();
        let e2 = e1 / self.max_out;
        self.iota2 / self.iota1 - ((1.0 + e1) / (1.0 + e2 * x) - 1.0).ln() / self.iota1
    }
}

pub fn harvest(p_in: f64, params: &SystemParams) -> f64 {
    params.harvester.harvest(p_in)
}

pub fn harvest_inverse(x: f64, params: &SystemParams) -> f64 {
    params.harvester.harvest_inverse(x)
}

/// f_θ(x) = x/(x+θ).
pub fn smooth_indicator(x: f64, theta: f64) -> f64 {
    x / (x + theta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Indicator {
    Exact,
    Smooth(f64),
}

impl Indicator {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Indicator::Exact => {
                if x > ACTIVE_EPS {
                    1.0
                } else {
                    0.0
                }
            }
            Indicator::Smooth(theta) => smooth_indicator(x, theta),
        }
    }
}

/// Per-UE pieces shared by the three closed forms.
#[derive(Debug, Clone, Copy)]
pub struct UeTerms {
    /// Σ over all streams of ‖Ξ_k x‖².
    pub base: f64,
    /// M Σ_{j∈K_{g_k}} coh_k(p̄_j).
    pub group_coh: f64,
    /// M coh_k(p̄_k).
    pub own_coh: f64,
    /// M coh_k(q̄_{g_k}).
    pub mc_coh: f64,
    /// M |ξ̂_kᵀ q̄_{g_k}|².
    pub s_mc: f64,
    /// M |ξ̂_kᵀ p̄_k|².
    pub s_uc: f64,
    pub antenna_noise: f64,
    pub splitter_noise: f64,
}

impl UeTerms {
    pub fn compute(stats: &ChannelStats, params: &SystemParams, a: &PowerAllocation, k: usize) -> Self {
        let m = stats.m();
        let g = stats.group_of[k];
        let base: f64 = a.q_bar.iter().chain(&a.p_bar).map(|x| stats.inc(k, x)).sum();
        let group_coh: f64 = stats.members[g].iter().map(|&j| m * stats.coh(k, &a.p_bar[j])).sum();
        UeTerms {
            base,
            group_coh,
            own_coh: m * stats.coh(k, &a.p_bar[k]),
            mc_coh: m * stats.coh(k, &a.q_bar[g]),
            s_mc: m * stats.sig(k, &a.q_bar[g]),
            s_uc: m * stats.sig(k, &a.p_bar[k]),
            antenna_noise: params.antenna_noise[k],
            splitter_noise: params.splitter_noise[k],
        }
    }

    fn split(&self, rho: f64) -> f64 {
        self.splitter_noise / rho
    }

    /// Unicast decoding denominator, with ρ explicit.
    pub fn phi_uc(&self, rho: f64) -> f64 {
        self.base + self.group_coh - self.own_coh + self.antenna_noise + self.split(rho)
    }

    pub fn phi_mc(&self, rho: f64) -> f64 {
        self.base + self.group_coh + self.antenna_noise + self.split(rho)
    }

    /// E|y_k|², before the splitter.
    pub fn phi_e(&self) -> f64 {
        self.base + self.mc_coh + self.group_coh + self.antenna_noise
    }

    pub fn rate_uc(&self, rho: f64) -> f64 {
        (self.s_uc / self.phi_uc(rho)).ln_1p()
    }

    pub fn rate_mc(&self, rho: f64) -> f64 {
        (self.s_mc / self.phi_mc(rho)).ln_1p()
    }
}

pub fn unicast_rate(
    stats: &ChannelStats,
    params: &SystemParams,
    alloc: &PowerAllocation,
    k: usize,
) -> Result<f64, SolveError> {
    domain(alloc, k)?;
    Ok(UeTerms::compute(stats, params, alloc, k).rate_uc(alloc.rho[k]))
}

/// Group rate (min over members, lowest index on ties) and per-member rates.
pub fn multicast_rate(
    stats: &ChannelStats,
    params: &SystemParams,
    alloc: &PowerAllocation,
    g: usize,
) -> Result<(f64, Vec<f64>), SolveError> {
    let mut per = Vec::with_capacity(stats.members[g].len());
    for &k in &stats.members[g] {
        domain(alloc, k)?;
        per.push(UeTerms::compute(stats, params, alloc, k).rate_mc(alloc.rho[k]));
    }
    let min = per.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((min, per))
}

pub fn received_rf_power(stats: &ChannelStats, params: &SystemParams, alloc: &PowerAllocation, k: usize) -> f64 {
    (1.0 - alloc.rho[k]) * UeTerms::compute(stats, params, alloc, k).phi_e()
}

fn domain(alloc: &PowerAllocation, k: usize) -> Result<(), SolveError> {
    let rho = alloc.rho[k];
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(SolveError::Domain { ue: k, rho })
    }
}

/// All rates of an allocation, in nats/s/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub uc: Vec<f64>,
    pub mc_ue: Vec<f64>,
    pub mc: Vec<f64>,
}

impl Rates {
    pub fn sum(&self) -> f64 {
        self.mc.iter().sum::<f64>() + self.uc.iter().sum::<f64>()
    }
}

pub fn rates(stats: &ChannelStats, params: &SystemParams, alloc: &PowerAllocation) -> Rates {
    let k = stats.num_ues;
    let mut uc = Vec::with_capacity(k);
    let mut mc_ue = Vec::with_capacity(k);
    for j in 0..k {
        let t = UeTerms::compute(stats, params, alloc, j);
        uc.push(t.rate_uc(alloc.rho[j]));
        mc_ue.push(t.rate_mc(alloc.rho[j]));
    }
    let mc = group_min(&stats.members, &mc_ue);
    Rates { uc, mc_ue, mc }
}

pub(crate) fn group_min(members: &[Vec<usize>], per_ue: &[f64]) -> Vec<f64> {
    members.iter().map(|m| m.iter().map(|&k| per_ue[k]).fold(f64::INFINITY, f64::min)).collect()
}

/// Load on AP `n`'s backhaul in nats/s/Hz for the given stream rates.
pub fn backhaul_load(alloc: &PowerAllocation, mc: &[f64], uc: &[f64], n: usize, ind: Indicator) -> f64 {
    let a: f64 = alloc.q_bar.iter().zip(mc).map(|(q, r)| ind.eval(q[n] * q[n]) * r).sum();
    let b: f64 = alloc.p_bar.iter().zip(uc).map(|(p, r)| ind.eval(p[n] * p[n]) * r).sum();
    a + b
}

/// Network power in watts for the given stream rates.
pub fn total_power(params: &SystemParams, alloc: &PowerAllocation, mc: &[f64], uc: &[f64], ind: Indicator) -> f64 {
    let dp = params.delta_p();
    let bh = params.bh_coeff();
    (0..params.num_aps)
        .map(|n| {
            let ptr = alloc.ap_power(n);
            params.ap_sleep
                + ptr / params.pa_efficiency[n]
                + ind.eval(ptr) * dp
                + bh * backhaul_load(alloc, mc, uc, n, ind)
                + params.bh_fixed
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub r_unicast: Vec<f64>,
    pub r_multicast_per_ue: Vec<f64>,
    pub r_multicast: Vec<f64>,
    pub rho: Vec<f64>,
    /// E|y_k|² before splitting, watts.
    pub phi_e: Vec<f64>,
    pub p_in: Vec<f64>,
    pub harvested: Vec<f64>,
    pub c_bh: Vec<f64>,
    pub p_tr: Vec<f64>,
    pub p_total: f64,
    /// Bits per joule with the exact activity indicator.
    pub ee: f64,
    /// Same objective with f_θ in place of the indicator.
    pub p_total_smooth: f64,
    pub ee_smooth: f64,
}

impl PerfReport {
    pub fn rate_sum(&self) -> f64 {
        self.r_multicast.iter().sum::<f64>() + self.r_unicast.iter().sum::<f64>()
    }
}

pub fn evaluate(
    stats: &ChannelStats,
    alloc: &PowerAllocation,
    params: &SystemParams,
) -> Result<PerfReport, SolveError> {
    alloc.check_shape(params)?;
    alloc.check_domain()?;
    let r = rates(stats, params, alloc);
    let phi_e: Vec<f64> = (0..params.num_ues).map(|k| UeTerms::compute(stats, params, alloc, k).phi_e()).collect();
    let p_in: Vec<f64> = phi_e.iter().zip(&alloc.rho).map(|(p, rho)| (1.0 - rho) * p).collect();
    let harvested = p_in.iter().map(|&p| params.harvester.harvest(p)).collect();
    let c_bh = (0..params.num_aps).map(|n| backhaul_load(alloc, &r.mc, &r.uc, n, Indicator::Exact)).collect();
    let p_tr = (0..params.num_aps).map(|n| alloc.ap_power(n)).collect();
    let p_total = total_power(params, alloc, &r.mc, &r.uc, Indicator::Exact);
    let p_total_smooth = total_power(params, alloc, &r.mc, &r.uc, Indicator::Smooth(params.smooth_theta));
    let sum = r.sum();
    Ok(PerfReport {
        ee: params.ee_bits_per_joule(sum, p_total),
        ee_smooth: params.ee_bits_per_joule(sum, p_total_smooth),
        r_unicast: r.uc,
        r_multicast_per_ue: r.mc_ue,
        r_multicast: r.mc,
        rho: alloc.rho.clone(),
        phi_e,
        p_in,
        harvested,
        c_bh,
        p_tr,
        p_total,
        p_total_smooth,
    })
}

/// F⁻¹(ē)/(1−ρ) with 0/0 read as 0.
pub fn required_rf(params: &SystemParams, k: usize, rho: f64) -> f64 {
    let need = params.harvester.harvest_inverse(params.energy_floor[k]);
    if need == 0.0 {
        0.0
    } else {
        need / (1.0 - rho)
    }
}

/// Signed slacks, nonnegative when satisfied. Multicast is per UE against
/// its group floor; energy is the RF margin φ_e − F⁻¹(ē)/(1−ρ) in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    pub multicast: Vec<f64>,
    pub unicast: Vec<f64>,
    pub energy: Vec<f64>,
    pub backhaul: Vec<f64>,
    pub power: Vec<f64>,
}

impl Slacks {
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.multicast.iter().chain(&self.unicast).chain(&self.energy).chain(&self.backhaul).chain(&self.power).copied()
    }

    pub fn max_violation(&self) -> f64 {
        self.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max)
    }

    pub fn min_slack(&self) -> f64 {
        self.iter().fold(f64::INFINITY, f64::min)
    }

    pub fn first_violation(&self, tol: f64) -> Option<String> {
        let fams: [(&str, &Vec<f64>); 5] = [
            ("multicast rate of UE", &self.multicast),
            ("unicast rate of UE", &self.unicast),
            ("energy of UE", &self.energy),
            ("backhaul of AP", &self.backhaul),
            ("power cap of AP", &self.power),
        ];
        for (name, v) in fams {
            if let Some((i, s)) = v.iter().enumerate().find(|(_, &s)| s < -tol) {
                return Some(format!("{name} {i} short by {:.3e}", -s));
            }
        }
        None
    }
}

pub fn check_constraints(report: &PerfReport, params: &SystemParams, group_of: &[usize]) -> Slacks {
    let k = params.num_ues;
    Slacks {
        multicast: (0..k).map(|j| report.r_multicast_per_ue[j] - params.rate_floor_mc[group_of[j]]).collect(),
        unicast: (0..k).map(|j| report.r_unicast[j] - params.rate_floor_uc[j]).collect(),
        energy: (0..k).map(|j| report.phi_e[j] - required_rf(params, j, report.rho[j])).collect(),
        backhaul: report.c_bh.iter().zip(&params.backhaul_cap).map(|(c, cap)| cap - c).collect(),
        power: report.p_tr.iter().zip(&params.power_cap).map(|(p, cap)| cap - p).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn harvest_zero_at_sensitivity() {
        let p = table();
        assert!(p.harvester.harvest(p.harvester.sensitivity).abs() < 1e-15);
        assert_eq!(p.harvester.harvest(0.0), 0.0);
    }

    #[test]
    fn harvest_saturates() {
        let p = table();
        assert!((p.harvester.harvest(10.0) - p.harvester.max_out).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trip_half_saturation() {
        let p = table();
        let x = p.harvester.max_out / 2.0;
        let back = p.harvester.harvest(p.harvester.harvest_inverse(x));
        assert!((back - x).abs() <= 1e-10 * x);
    }

    #[test]
    fn inverse_cases() {
        let p = table();
        assert_eq!(p.harvester.harvest_inverse(0.0), 0.0);
        assert_eq!(p.harvester.harvest_inverse(-1.0), 0.0);
        assert!(p.harvester.harvest_inverse(p.harvester.max_out).is_infinite());
    }

    #[test]
    fn smooth_indicator_values() {
        assert_eq!(smooth_indicator(0.0, 1e-5), 0.0);
        assert_eq!(smooth_indicator(1e-5, 1e-5), 0.5);
        assert!((smooth_indicator(1.0, 1e-5) - 0.99999).abs() < 1e-9);
    }

    #[test]
    fn sleep_floor() {
        let p = table();
        let a = PowerAllocation::zeros(p.num_aps, p.num_ues, p.num_groups);
        let r = vec![0.0; p.num_ues];
        let tot = total_power(&p, &a, &r[..p.num_groups], &r, Indicator::Exact);
        let expect = p.num_aps as f64 * (p.ap_sleep + p.bh_fixed);
        assert!((tot - expect).abs() < 1e-12);
    }

    #[test]
    fn one_active_ap_adds_amplifier_power() {
        let p = table();
        let mut a = PowerAllocation::zeros(p.num_aps, p.num_ues, p.num_groups);
        a.p_bar[0][3] = 1.0;
        let zeros = vec![0.0; p.num_ues];
        let base = p.num_aps as f64 * (p.ap_sleep + p.bh_fixed);
        let tot = total_power(&p, &a, &zeros[..p.num_groups], &zeros, Indicator::Exact);
        assert!((tot - base - 4.0 - p.delta_p()).abs() < 1e-12);
        let smooth = total_power(&p, &a, &zeros[..p.num_groups], &zeros, Indicator::Smooth(1e-5));
        assert!((tot - smooth).abs() < 1e-4 * p.delta_p());
    }
}
