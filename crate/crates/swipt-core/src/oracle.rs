//! Independent checks: Monte-Carlo estimates of the closed-form moments,
//! finite differences, and brute-force projections.

use crate::channel::{ChannelRealization, ChannelStats, RawDraw};
use crate::performance::PowerAllocation;
use crate::system_model::SystemParams;
use nalgebra::{DMatrix, SMatrix, SVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// (closed − mean)/se; zero when both coincide exactly.
    pub fn z_score(&self, closed: f64) -> f64 {
        let d = closed - self.mean;
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }
}

/// Per-UE moments checked against the closed forms, in this order.
pub const TERM_NAMES: [&str; 9] = ["D_m", "V_m", "I_m", "l1", "l2", "D_u", "V_u", "I_u", "E_y2"];

const NF: usize = 11;
type Feat = SVector<f64, NF>;

/// Closed-form values of [`TERM_NAMES`] for every UE, under the
/// interference model carried by `stats`.
pub fn closed_form_terms(stats: &ChannelStats, params: &SystemParams, a: &PowerAllocation) -> Vec<[f64; 9]> {
    let m = stats.m();
    (0..stats.num_ues)
        .map(|k| {
            let g = stats.group_of[k];
            let in_g = |j: usize| stats.group_of[j] == g;
            let inc = |x: &[f64]| stats.inc(k, x);
            let coh = |x: &[f64]| m * stats.coh(k, x);
            let i_m: f64 = (0..stats.num_groups).filter(|&h| h != g).map(|h| inc(&a.q_bar[h])).sum();
            let l1: f64 = (0..stats.num_ues).filter(|&j| in_g(j)).map(|j| inc(&a.p_bar[j]) + coh(&a.p_bar[j])).sum();
            let l2: f64 = (0..stats.num_ues).filter(|&j| !in_g(j)).map(|j| inc(&a.p_bar[j])).sum();
            let i_u: f64 = (0..stats.num_ues)
                .filter(|&j| j != k)
                .map(|j| inc(&a.p_bar[j]) + if in_g(j) { coh(&a.p_bar[j]) } else { 0.0 })
                .sum();
            let ey: f64 = a.q_bar.iter().chain(&a.p_bar).map(|x| inc(x)).sum::<f64>()
                + coh(&a.q_bar[g])
                + (0..stats.num_ues).filter(|&j| in_g(j)).map(|j| coh(&a.p_bar[j])).sum::<f64>()
                + params.antenna_noise[k];
            [
                m * stats.sig(k, &a.q_bar[g]),
                inc(&a.q_bar[g]),
                i_m,
                l1,
                l2,
                m * stats.sig(k, &a.p_bar[k]),
                inc(&a.p_bar[k]),
                i_u,
                ey,
            ]
        })
        .collect()
}

/// Effective scalar channels X_{k,b} = Σ_n √x_{n,b} g_{n,k}ᴴ u_{n,b}.
fn effective(stats: &ChannelStats, real: &ChannelRealization, a: &PowerAllocation, out: &mut [Complex64]) {
    let (g_n, k_n, n_n) = (stats.num_groups, stats.num_ues, stats.num_aps);
    let nb = g_n + k_n;
    for k in 0..k_n {
        for b in 0..nb {
            let amp = a.stream(b);
            let mut acc = Complex64::default();
            for (n, &an) in amp.iter().enumerate().take(n_n) {
                if an == 0.0 {
                    continue;
                }
                let u = if b < g_n { real.w_at(n, b) } else { real.v_at(n, b - g_n) };
                let dot: Complex64 = real.g_at(n, k).iter().zip(u).map(|(g, u)| g.conj() * u).sum();
                acc += dot * an;
            }
            out[k * nb + b] = acc;
        }
    }
}

fn features(stats: &ChannelStats, x: &[Complex64], k: usize) -> Feat {
    let (g_n, k_n) = (stats.num_groups, stats.num_ues);
    let nb = g_n + k_n;
    let row = &x[k * nb..(k + 1) * nb];
    let g = stats.group_of[k];
    let mut f = Feat::zeros();
    let ym = row[g];
    let yu = row[g_n + k];
    f[0] = ym.re;
    f[1] = ym.im;
    f[2] = ym.norm_sqr();
    f[3] = yu.re;
    f[4] = yu.im;
    f[5] = yu.norm_sqr();
    f[6] = (0..g_n).filter(|&h| h != g).map(|h| row[h].norm_sqr()).sum();
    for j in 0..k_n {
        let p = row[g_n + j].norm_sqr();
        if stats.group_of[j] == g {
            f[7] += p;
        } else {
            f[8] += p;
        }
        if j != k {
            f[9] += p;
        }
    }
    f[10] = row.iter().map(|z| z.norm_sqr()).sum();
    f
}

/// Monte-Carlo estimates of [`TERM_NAMES`] per UE from `pairs` antithetic
/// pairs (fading flipped, pilot noise shared).
pub fn mc_rate_terms(
    stats: &ChannelStats,
    params: &SystemParams,
    a: &PowerAllocation,
    pairs: usize,
    seed: u64,
) -> Vec<[McEstimate; 9]> {
    let k_n = stats.num_ues;
    let nb = stats.num_groups + k_n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = RawDraw::sample(stats, &mut rng);
    let mut real = ChannelRealization::zeros(stats);
    let mut xp = vec![Complex64::default(); k_n * nb];
    let mut xm = xp.clone();
    let mut s1 = vec![Feat::zeros(); k_n];
    let mut s2 = vec![SMatrix::<f64, NF, NF>::zeros(); k_n];
    for p in 0..pairs {
        if p > 0 {
            raw.resample(&mut rng);
        }
        real.fill(stats, &raw, 1.0);
        effective(stats, &real, a, &mut xp);
        real.fill(stats, &raw, -1.0);
        effective(stats, &real, a, &mut xm);
        for k in 0..k_n {
            let f = (features(stats, &xp, k) + features(stats, &xm, k)) * 0.5;
            s1[k] += f;
            s2[k] += f * f.transpose();
        }
    }
    let n = pairs as f64;
    (0..k_n)
        .map(|k| {
            let mu = s1[k] / n;
            let cov = (s2[k] / n - mu * mu.transpose()) * (n / (n - 1.0));
            let est = |grad: Feat, val: f64| McEstimate {
                mean: val,
                std_error: ((grad.transpose() * cov * grad)[(0, 0)].max(0.0) / n).sqrt(),
            };
            let unit = |i: usize| {
                let mut g = Feat::zeros();
                g[i] = 1.0;
                est(g, mu[i])
            };
            let sq = |re: usize, im: usize| {
                let mut g = Feat::zeros();
                g[re] = 2.0 * mu[re];
                g[im] = 2.0 * mu[im];
                est(g, mu[re] * mu[re] + mu[im] * mu[im])
            };
            let var = |re: usize, im: usize, z: usize| {
                let mut g = Feat::zeros();
                g[re] = -2.0 * mu[re];
                g[im] = -2.0 * mu[im];
                g[z] = 1.0;
                est(g, mu[z] - mu[re] * mu[re] - mu[im] * mu[im])
            };
            let mut y = unit(10);
            y.mean += params.antenna_noise[k];
            [sq(0, 1), var(0, 1, 2), unit(6), unit(7), unit(8), sq(3, 4), var(3, 4, 5), unit(9), y]
        })
        .collect()
}

/// One closed-form versus Monte-Carlo comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: String,
    pub ue: usize,
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub z_score: f64,
}

pub fn compare_terms(closed: &[[f64; 9]], mc: &[[McEstimate; 9]]) -> Vec<TermCheck> {
    let mut out = Vec::new();
    for (ue, (c, e)) in closed.iter().zip(mc).enumerate() {
        for i in 0..9 {
            out.push(TermCheck {
                term: TERM_NAMES[i].to_string(),
                ue,
                closed_form: c[i],
                mc_mean: e[i].mean,
                mc_se: e[i].std_error,
                z_score: e[i].z_score(c[i]),
            });
        }
    }
    out
}

/// Sample moments of the estimates and beamformers, per (AP, UE).
#[derive(Debug, Clone)]
pub struct ChannelMoments {
    /// E|ĝ_{n,k,m}|², averaged over antennas.
    pub g_hat_power: DMatrix<f64>,
    /// E[g_{n,k}ᴴ v_{n,k}] (real part; the imaginary part has zero mean).
    pub g_v: DMatrix<f64>,
    /// E‖v_{n,k}‖².
    pub v_norm: DMatrix<f64>,
    /// E‖w_{n,g}‖², per (AP, group).
    pub w_norm: DMatrix<f64>,
    pub draws: usize,
}

pub fn mc_channel_moments(stats: &ChannelStats, draws: usize, seed: u64) -> ChannelMoments {
    let (n_n, k_n, g_n) = (stats.num_aps, stats.num_ues, stats.num_groups);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = RawDraw::sample(stats, &mut rng);
    let mut real = ChannelRealization::zeros(stats);
    let mut gh = DMatrix::zeros(n_n, k_n);
    let mut gv = DMatrix::zeros(n_n, k_n);
    let mut vn = DMatrix::zeros(n_n, k_n);
    let mut wn = DMatrix::zeros(n_n, g_n);
    for d in 0..draws {
        if d > 0 {
            raw.resample(&mut rng);
        }
        real.fill(stats, &raw, 1.0);
        for n in 0..n_n {
            for k in 0..k_n {
                gh[(n, k)] += real.g_hat_at(n, k).iter().map(|z| z.norm_sqr()).sum::<f64>() / stats.m();
                let dot: Complex64 = real.g_at(n, k).iter().zip(real.v_at(n, k)).map(|(g, v)| g.conj() * v).sum();
                gv[(n, k)] += dot.re;
                vn[(n, k)] += real.v_at(n, k).iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
            for g in 0..g_n {
                wn[(n, g)] += real.w_at(n, g).iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
    }
    let s = 1.0 / draws as f64;
    ChannelMoments { g_hat_power: gh * s, g_v: gv * s, v_norm: vn * s, w_norm: wn * s, draws }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdGradient {
    pub grad: Vec<f64>,
    /// Coordinates where the one-sided slopes disagree by more than 10 %.
    pub kinks: Vec<usize>,
}

/// Central differences with step 1e-6·(1 + |x_i|).
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> FdGradient {
    let f0 = f(x);
    let mut y = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    let mut kinks = Vec::new();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        let (r, l) = ((fp - f0) / h, (f0 - fm) / h);
        if (r - l).abs() > 0.1 * r.abs().max(l.abs()) && (r - l).abs() > 1e-9 {
            kinks.push(i);
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    FdGradient { grad, kinks }
}

/// Group projection by enumerating which bounds are active.
pub fn brute_project_group(mu_m: f64, mu_bar: &[f64], target: f64) -> (f64, Vec<f64>) {
    let n = mu_bar.len() + 1;
    assert!(n <= 20, "enumeration is exponential in the group size");
    // Variable 0 is λ_m with sign −1 in the equality; the rest carry +1.
    let mu: Vec<f64> = std::iter::once(mu_m).chain(mu_bar.iter().copied()).collect();
    let sgn = |i: usize| if i == 0 { -1.0 } else { 1.0 };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut x = vec![0.0; n];
        if free.is_empty() {
            if target != 0.0 {
                continue;
            }
        } else {
            let s: f64 = free.iter().map(|&i| sgn(i) * mu[i]).sum();
            let nu = (target - s) / free.len() as f64;
            for &i in &free {
                x[i] = mu[i] + sgn(i) * nu;
            }
            if free.iter().any(|&i| x[i] < 0.0) {
                continue;
            }
        }
        let d: f64 = x.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    let x = best.expect("a feasible active set exists").1;
    (x[0], x[1..].to_vec())
}

/// Per-AP projection by a one-dimensional search over the scaling of the
/// clipped amplitudes, restricted to scalings that respect the cap (found by
/// bisection on the cap).
pub fn brute_project_power(
    z_m: &[Vec<f64>],
    z_u: &[Vec<f64>],
    params: &SystemParams,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut qm: Vec<Vec<f64>> = z_m.to_vec();
    let mut qu: Vec<Vec<f64>> = z_u.to_vec();
    for n in 0..params.num_aps {
        let col: Vec<f64> = z_m.iter().chain(z_u).map(|v| v[n]).collect();
        let cap = params.power_cap[n];
        let power = |t: f64| col.iter().map(|&z| (t * z.max(0.0)).powi(2)).sum::<f64>();
        let (mut lo, mut hi) = (0.0, 1.0);
        if power(1.0) <= cap {
            lo = 1.0;
        } else {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if power(mid) <= cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        // Bisect on the sign of the slope of the distance; the distance is
        // flat near its minimum so comparing values loses half the digits.
        let slope = |t: f64| col.iter().map(|&z| z.max(0.0) * (t * z.max(0.0) - z)).sum::<f64>();
        let t = if slope(lo) <= 0.0 {
            lo
        } else {
            let (mut a, mut b) = (0.0, lo);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if slope(mid) <= 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        };
        for v in qm.iter_mut().chain(qu.iter_mut()) {
            v[n] = t * v[n].max(0.0);
        }
    }
    (qm, qu)
}

/// Random allocation inside the per-AP power box with ρ ∈ [0.05, 0.95].
pub fn sample_allocation<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> PowerAllocation {
    let (n_n, g_n, k_n) = (params.num_aps, params.num_groups, params.num_ues);
    let mut a = PowerAllocation::zeros(n_n, k_n, g_n);
    for n in 0..n_n {
        let bound = (params.power_cap[n] / (g_n + k_n) as f64).sqrt();
        for v in a.q_bar.iter_mut().chain(a.p_bar.iter_mut()) {
            v[n] = rng.random_range(0.0..bound);
        }
    }
    for r in a.rho.iter_mut() {
        *r = rng.random_range(0.05..0.95);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_group_matches_bisection() {
        let cases: [(f64, &[f64], f64); 4] = [
            (0.3, &[0.1, -0.2, 0.5], 0.7),
            (-1.0, &[2.0, 0.0], 0.1),
            (2.0, &[0.1], 0.05),
            (0.0, &[0.0, 0.0, 0.0], 0.0),
        ];
        for (mm, mb, t) in cases {
            let (a, b) = brute_project_group(mm, mb, t);
            let (c, d) = crate::ee_solver::project_group(mm, mb, t);
            assert!((a - c).abs() < 1e-10, "{a} vs {c}");
            for (x, y) in b.iter().zip(&d) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fd_flags_abs_kink() {
        let r = fd_gradient(|x| x[0].abs() + x[1] * x[1], &[0.0, 1.5]);
        assert_eq!(r.kinks, vec![0]);
        assert!((r.grad[1] - 3.0).abs() < 1e-6);
    }
}
