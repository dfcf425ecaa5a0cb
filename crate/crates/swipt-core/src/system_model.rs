//! Scenario configuration, topology generation and unit handling.

use crate::error::ConfigError;
use crate::units::{db_to_linear, dbm_to_watts};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

/// How in-group interference and own-group RF power are modelled.
///
/// `Incoherent` keeps the per-AP incoherent sum `M Σ_n x_n² β̂_{n,k}` for the
/// pilot-contaminated terms. `Coherent` uses `M (Σ_n x_n β̂_{n,k}^{1/2})²`,
/// which is what the channel model actually produces once several APs
/// project onto the same contaminated estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InterferenceModel {
    #[default]
    Incoherent,
    Coherent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    #[default]
    Uniform,
    Grid,
}

/// Nonlinear logistic harvester constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harvester {
    pub sensitivity: f64,
    pub max_out: f64,
    pub iota1: f64,
    pub iota2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_ues: usize,
    pub num_groups: usize,
    pub area_side: f64,
    pub ref_distance: f64,
    pub pathloss_exp: f64,
    pub shadow_std_db: f64,
    pub bandwidth: f64,
    pub coherence_len: usize,
    pub pilot_len: usize,
    pub pilot_power: f64,
    /// Receiver noise power the pilot SNR is measured against.
    pub pilot_noise: f64,
    pub antenna_noise: Vec<f64>,
    pub splitter_noise: Vec<f64>,
    pub harvester: Harvester,
    pub pa_efficiency: Vec<f64>,
    pub ap_active: f64,
    pub ap_sleep: f64,
    /// Watts per bit/s of backhaul traffic.
    pub bh_traffic: f64,
    pub bh_fixed: f64,
    pub rate_floor_mc: Vec<f64>,
    pub rate_floor_uc: Vec<f64>,
    pub energy_floor: Vec<f64>,
    pub power_cap: Vec<f64>,
    pub backhaul_cap: Vec<f64>,
    pub smooth_theta: f64,
    pub placement: Placement,
    pub groups: Option<Vec<usize>>,
    pub interference: InterferenceModel,
}

impl SystemParams {
    /// 1 − τ_p/τ_c.
    pub fn prelog(&self) -> f64 {
        1.0 - self.pilot_len as f64 / self.coherence_len as f64
    }

    /// τ_p ρ_p measured against the pilot noise floor.
    pub fn pilot_snr(&self) -> f64 {
        self.pilot_len as f64 * self.pilot_power / self.pilot_noise
    }

    /// Backhaul power per unit of load, with load in nats/s/Hz.
    pub fn bh_coeff(&self) -> f64 {
        self.bh_traffic * self.bandwidth / LN_2
    }

    /// p_ac − p_sl.
    pub fn delta_p(&self) -> f64 {
        self.ap_active - self.ap_sleep
    }

    /// Converts a rate sum in nats/s/Hz and a power in watts to bits/J.
    pub fn ee_bits_per_joule(&self, rate_sum: f64, p_total: f64) -> f64 {
        self.bandwidth * self.prelog() * rate_sum / (LN_2 * p_total)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, format!("must be positive and finite, got {v}")))
            }
        };
        let nonneg = |field: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, format!("must be nonnegative and finite, got {v}")))
            }
        };
        for (field, n) in [
            ("num_aps", self.num_aps),
            ("antennas_per_ap", self.antennas_per_ap),
            ("num_ues", self.num_ues),
            ("num_groups", self.num_groups),
        ] {
            if n == 0 {
                return Err(ConfigError::invalid(field, "must be at least 1"));
            }
        }
        if self.num_groups > self.num_ues {
            return Err(ConfigError::invalid("num_groups", "more groups than UEs leaves a group empty"));
        }
        if self.pilot_len < self.num_groups {
            return Err(ConfigError::invalid("pilot_len", "needs at least one pilot per group"));
        }
        if self.pilot_len >= self.coherence_len {
            return Err(ConfigError::invalid("pilot_len", "must be shorter than the coherence interval"));
        }
        pos("area_side_m", self.area_side)?;
        pos("ref_distance_m", self.ref_distance)?;
        pos("pathloss_exp", self.pathloss_exp)?;
        nonneg("shadow_std_db", self.shadow_std_db)?;
        pos("bandwidth_hz", self.bandwidth)?;
        pos("pilot_power_mw", self.pilot_power)?;
        pos("pilot_noise_dbm", self.pilot_noise)?;
        let h = &self.harvester;
        pos("eh_sensitivity_mw", h.sensitivity)?;
        pos("eh_max_mw", h.max_out)?;
        pos("eh_iota1_per_w", h.iota1)?;
        if !h.iota2.is_finite() {
            return Err(ConfigError::invalid("eh_iota2", "must be finite"));
        }
        if h.sensitivity >= h.max_out {
            return Err(ConfigError::invalid("eh_sensitivity_mw", "must be below eh_max_mw"));
        }
        pos("ap_active_w", self.ap_active)?;
        pos("ap_sleep_w", self.ap_sleep)?;
        if self.ap_sleep > self.ap_active {
            return Err(ConfigError::invalid("ap_sleep_w", "sleep power exceeds active power"));
        }
        pos("bh_traffic_w_per_gbps", self.bh_traffic)?;
        pos("bh_fixed_w", self.bh_fixed)?;
        pos("smooth_theta_w", self.smooth_theta)?;

        let per = |field: &'static str, v: &[f64], len: usize| {
            if v.len() != len {
                return Err(ConfigError::invalid(field, format!("expected {len} entries, got {}", v.len())));
            }
            Ok(())
        };
        per("antenna_noise_dbm", &self.antenna_noise, self.num_ues)?;
        per("splitter_noise_dbm", &self.splitter_noise, self.num_ues)?;
        per("pa_efficiency", &self.pa_efficiency, self.num_aps)?;
        per("rate_floor_mc_bps", &self.rate_floor_mc, self.num_groups)?;
        per("rate_floor_uc_bps", &self.rate_floor_uc, self.num_ues)?;
        per("energy_floor_mw", &self.energy_floor, self.num_ues)?;
        per("power_cap_dbm", &self.power_cap, self.num_aps)?;
        per("backhaul_cap_bps", &self.backhaul_cap, self.num_aps)?;
        for &v in &self.antenna_noise {
            pos("antenna_noise_dbm", v)?;
        }
        for &v in &self.splitter_noise {
            pos("splitter_noise_dbm", v)?;
        }
        for &v in &self.pa_efficiency {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConfigError::invalid("pa_efficiency", format!("must lie in (0, 1], got {v}")));
            }
        }
        for &v in &self.rate_floor_mc {
            nonneg("rate_floor_mc_bps", v)?;
        }
        for &v in &self.rate_floor_uc {
            nonneg("rate_floor_uc_bps", v)?;
        }
        for &v in &self.energy_floor {
            nonneg("energy_floor_mw", v)?;
            if v >= h.max_out {
                return Err(ConfigError::invalid("energy_floor_mw", "energy floor exceeds harvester saturation"));
            }
        }
        for &v in &self.power_cap {
            pos("power_cap_dbm", v)?;
        }
        for &v in &self.backhaul_cap {
            pos("backhaul_cap_bps", v)?;
        }
        if let Some(groups) = &self.groups {
            if groups.len() != self.num_ues {
                return Err(ConfigError::invalid("groups", "needs one group index per UE"));
            }
            let mut seen = vec![false; self.num_groups];
            for &g in groups {
                if g >= self.num_groups {
                    return Err(ConfigError::invalid("groups", format!("group index {g} out of range")));
                }
                seen[g] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(ConfigError::invalid("groups", "every group needs at least one member"));
            }
        }
        Ok(())
    }
}

/// Optional solver knobs that may ride along in a scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverKnobs {
    pub tol_inner: Option<f64>,
    pub tol_dink: Option<f64>,
    pub tol_sca: Option<f64>,
    pub max_iter_inner: Option<usize>,
    pub max_iter_dink: Option<usize>,
    pub max_iter_sca: Option<usize>,
    pub momentum: Option<bool>,
    pub backtracking: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: SystemParams,
    pub seed: u64,
    pub solver: SolverKnobs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn expand(&self, len: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![f(*v); len],
            OneOrMany::Many(v) => v.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// On-disk layout. Every key carries its unit in the name.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    seed: u64,
    num_aps: usize,
    antennas_per_ap: usize,
    num_ues: usize,
    num_groups: usize,
    area_side_m: f64,
    ref_distance_m: f64,
    pathloss_exp: f64,
    shadow_std_db: f64,
    bandwidth_hz: f64,
    coherence_len: usize,
    pilot_len: usize,
    pilot_power_mw: f64,
    pilot_noise_dbm: f64,
    antenna_noise_dbm: OneOrMany,
    splitter_noise_dbm: OneOrMany,
    eh_sensitivity_mw: f64,
    eh_max_mw: f64,
    eh_iota1_per_w: f64,
    eh_iota2: f64,
    pa_efficiency: OneOrMany,
    ap_active_w: f64,
    ap_sleep_w: f64,
    bh_traffic_w_per_gbps: f64,
    bh_fixed_w: f64,
    rate_floor_mc_bps: OneOrMany,
    rate_floor_uc_bps: OneOrMany,
    energy_floor_mw: OneOrMany,
    power_cap_dbm: OneOrMany,
    backhaul_cap_bps: OneOrMany,
    smooth_theta_w: f64,
    ap_placement: Placement,
    groups: Option<Vec<usize>>,
    interference_model: InterferenceModel,
    tol_inner: Option<f64>,
    tol_dink: Option<f64>,
    tol_sca: Option<f64>,
    max_iter_inner: Option<usize>,
    max_iter_dink: Option<usize>,
    max_iter_sca: Option<usize>,
    momentum: Option<bool>,
    backtracking: Option<bool>,
}

/// Desk-scale energy floor in mW. The 30 mW of the large-network setting is
/// out of reach for 20 APs.
pub const DESK_ENERGY_FLOOR_MW: f64 = 0.03;
pub const DESK_RATE_FLOOR_BPS: f64 = 0.5;
/// Side of the square area at desk scale, chosen so that 20 APs keep roughly
/// the AP density of 100 APs on 300 m.
pub const DESK_AREA_SIDE_M: f64 = 150.0;

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            seed: 1,
            num_aps: 20,
            antennas_per_ap: 2,
            num_ues: 8,
            num_groups: 4,
            area_side_m: DESK_AREA_SIDE_M,
            ref_distance_m: 5.0,
            pathloss_exp: 3.76,
            shadow_std_db: 8.0,
            bandwidth_hz: 20e6,
            coherence_len: 200,
            pilot_len: 4,
            pilot_power_mw: 100.0,
            pilot_noise_dbm: -104.0,
            antenna_noise_dbm: OneOrMany::One(-70.0),
            splitter_noise_dbm: OneOrMany::One(-104.0),
            eh_sensitivity_mw: 0.08,
            eh_max_mw: 37.5,
            eh_iota1_per_w: 116.0,
            eh_iota2: 2.3,
            pa_efficiency: OneOrMany::One(0.25),
            ap_active_w: 10.65,
            ap_sleep_w: 5.05,
            bh_traffic_w_per_gbps: 0.25,
            bh_fixed_w: 0.825,
            rate_floor_mc_bps: OneOrMany::One(DESK_RATE_FLOOR_BPS),
            rate_floor_uc_bps: OneOrMany::One(DESK_RATE_FLOOR_BPS),
            energy_floor_mw: OneOrMany::One(DESK_ENERGY_FLOOR_MW),
            power_cap_dbm: OneOrMany::One(30.0),
            backhaul_cap_bps: OneOrMany::One(10.0),
            smooth_theta_w: 1e-5,
            ap_placement: Placement::Uniform,
            groups: None,
            interference_model: InterferenceModel::Incoherent,
            tol_inner: None,
            tol_dink: None,
            tol_sca: None,
            max_iter_inner: None,
            max_iter_dink: None,
            max_iter_sca: None,
            momentum: None,
            backtracking: None,
        }
    }
}

impl RawConfig {
    fn into_scenario(self) -> Result<Scenario, ConfigError> {
        let n = self.num_aps;
        let k = self.num_ues;
        let g = self.num_groups;
        let mw = |x: f64| x * 1e-3;
        let params = SystemParams {
            num_aps: n,
            antennas_per_ap: self.antennas_per_ap,
            num_ues: k,
            num_groups: g,
            area_side: self.area_side_m,
            ref_distance: self.ref_distance_m,
            pathloss_exp: self.pathloss_exp,
            shadow_std_db: self.shadow_std_db,
            bandwidth: self.bandwidth_hz,
            coherence_len: self.coherence_len,
            pilot_len: self.pilot_len,
            pilot_power: mw(self.pilot_power_mw),
            pilot_noise: dbm_to_watts(self.pilot_noise_dbm),
            antenna_noise: self.antenna_noise_dbm.expand(k, dbm_to_watts),
            splitter_noise: self.splitter_noise_dbm.expand(k, dbm_to_watts),
            harvester: Harvester {
                sensitivity: mw(self.eh_sensitivity_mw),
                max_out: mw(self.eh_max_mw),
                iota1: self.eh_iota1_per_w,
                iota2: self.eh_iota2,
            },
            pa_efficiency: self.pa_efficiency.expand(n, |x| x),
            ap_active: self.ap_active_w,
            ap_sleep: self.ap_sleep_w,
            bh_traffic: self.bh_traffic_w_per_gbps * 1e-9,
            bh_fixed: self.bh_fixed_w,
            rate_floor_mc: self.rate_floor_mc_bps.expand(g, |x| x * LN_2),
            rate_floor_uc: self.rate_floor_uc_bps.expand(k, |x| x * LN_2),
            energy_floor: self.energy_floor_mw.expand(k, mw),
            power_cap: self.power_cap_dbm.expand(n, dbm_to_watts),
            backhaul_cap: self.backhaul_cap_bps.expand(n, |x| x * LN_2),
            smooth_theta: self.smooth_theta_w,
            placement: self.ap_placement,
            groups: self.groups,
            interference: self.interference_model,
        };
        params.validate()?;
        Ok(Scenario {
            params,
            seed: self.seed,
            solver: SolverKnobs {
                tol_inner: self.tol_inner,
                tol_dink: self.tol_dink,
                tol_sca: self.tol_sca,
                max_iter_inner: self.max_iter_inner,
                max_iter_dink: self.max_iter_dink,
                max_iter_sca: self.max_iter_sca,
                momentum: self.momentum,
                backtracking: self.backtracking,
            },
        })
    }
}

/// Parses a TOML scenario. Missing keys take the desk defaults.
pub fn load_scenario(config_text: &str) -> Result<Scenario, ConfigError> {
    let raw: RawConfig = toml::from_str(config_text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    raw.into_scenario()
}

pub fn load_params(config_text: &str) -> Result<SystemParams, ConfigError> {
    load_scenario(config_text).map(|s| s.params)
}

impl Default for SystemParams {
    fn default() -> Self {
        RawConfig::default().into_scenario().expect("built-in defaults are valid").params
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub ap_pos: Vec<[f64; 2]>,
    pub ue_pos: Vec<[f64; 2]>,
    pub group_of: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    /// Shadowing draw in dB, N×K.
    pub shadow_db: DMatrix<f64>,
    /// Large-scale gain β_{n,k}, N×K.
    pub beta: DMatrix<f64>,
}

pub fn large_scale_gain(params: &SystemParams, dist: f64, shadow_db: f64) -> f64 {
    let d = dist.max(params.ref_distance);
    (params.ref_distance / d).powf(params.pathloss_exp) * db_to_linear(shadow_db)
}

pub fn members_of(group_of: &[usize], num_groups: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); num_groups];
    for (k, &g) in group_of.iter().enumerate() {
        members[g].push(k);
    }
    members
}

fn grid_positions(n: usize, side: f64) -> Vec<[f64; 2]> {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            [side * (c as f64 + 0.5) / cols as f64, side * (r as f64 + 0.5) / rows as f64]
        })
        .collect()
}

/// Drops APs and UEs in the square area and draws log-normal shadowing.
/// No wrap-around: UEs near the edge see fewer nearby APs.
pub fn generate_topology(params: &SystemParams, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = params.area_side;
    let uniform = |rng: &mut ChaCha8Rng| [rng.random::<f64>() * side, rng.random::<f64>() * side];
    let ap_pos: Vec<[f64; 2]> = match params.placement {
        Placement::Uniform => (0..params.num_aps).map(|_| uniform(&mut rng)).collect(),
        Placement::Grid => grid_positions(params.num_aps, side),
    };
    let ue_pos: Vec<[f64; 2]> = (0..params.num_ues).map(|_| uniform(&mut rng)).collect();
    let shadow = Normal::new(0.0, params.shadow_std_db).expect("validated std");
    let shadow_db = DMatrix::from_fn(params.num_aps, params.num_ues, |_, _| shadow.sample(&mut rng));
    let beta = DMatrix::from_fn(params.num_aps, params.num_ues, |n, k| {
        let (a, u) = (ap_pos[n], ue_pos[k]);
        let d = ((a[0] - u[0]).powi(2) + (a[1] - u[1]).powi(2)).sqrt();
        large_scale_gain(params, d, shadow_db[(n, k)])
    });
    let group_of: Vec<usize> = match &params.groups {
        Some(g) => g.clone(),
        None => (0..params.num_ues).map(|k| k % params.num_groups).collect(),
    };
    let members = members_of(&group_of, params.num_groups);
    Topology { ap_pos, ue_pos, group_of, members, shadow_db, beta }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_table() {
        let p = load_params("").unwrap();
        assert_eq!(p.coherence_len, 200);
        assert_eq!(p.pilot_len, 4);
        assert!((p.harvester.max_out - 0.0375).abs() < 1e-15);
        assert_eq!(p.harvester.iota1, 116.0);
        assert_eq!(p.harvester.iota2, 2.3);
        assert!(p.pa_efficiency.iter().all(|&x| x == 0.25));
        assert!((p.antenna_noise[0] - 1e-10).abs() < 1e-22);
        assert!((p.power_cap[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_floor_above_saturation_rejected() {
        let err = load_params("energy_floor_mw = 40.0").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("energy_floor_mw"), "{msg}");
        assert!(msg.contains("energy floor exceeds harvester saturation"), "{msg}");
    }

    #[test]
    fn too_few_pilots_rejected() {
        let err = load_params("pilot_len = 3").unwrap_err();
        assert!(err.to_string().contains("pilot_len"));
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(load_params("nmu_aps = 3"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn per_entity_arrays() {
        let p = load_params("num_aps = 2\npa_efficiency = [0.3, 0.5]\npower_cap_dbm = [20.0, 30.0]").unwrap();
        assert_eq!(p.pa_efficiency, vec![0.3, 0.5]);
        assert!((p.power_cap[0] - 0.1).abs() < 1e-12);
        let err = load_params("num_aps = 2\npa_efficiency = [0.3]").unwrap_err();
        assert!(err.to_string().contains("pa_efficiency"));
    }

    #[test]
    fn group_override() {
        let p = load_params("num_ues = 3\nnum_groups = 2\npilot_len = 2\ngroups = [1, 1, 0]").unwrap();
        let t = generate_topology(&p, 3);
        assert_eq!(t.members, vec![vec![2], vec![0, 1]]);
        assert!(load_params("num_ues = 3\nnum_groups = 2\npilot_len = 2\ngroups = [1, 1, 1]").is_err());
    }

    #[test]
    fn reference_distance_gain_is_one() {
        let p = SystemParams::default();
        assert_eq!(large_scale_gain(&p, p.ref_distance, 0.0), 1.0);
        assert_eq!(large_scale_gain(&p, 0.1, 0.0), 1.0);
    }

    #[test]
    fn grid_placement_inside_area() {
        let p = load_params("ap_placement = \"grid\"\nnum_aps = 7").unwrap();
        let t = generate_topology(&p, 0);
        assert_eq!(t.ap_pos.len(), 7);
        for a in &t.ap_pos {
            assert!(a[0] > 0.0 && a[0] < p.area_side && a[1] > 0.0 && a[1] < p.area_side);
        }
    }
}
