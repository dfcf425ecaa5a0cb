//! MMSE estimation statistics and per-draw channel realizations.

use crate::system_model::{InterferenceModel, SystemParams, Topology};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct ChannelStats {
    pub num_aps: usize,
    pub num_ues: usize,
    pub num_groups: usize,
    pub antennas: usize,
    /// τ_p ρ_p over the pilot noise floor.
    pub pilot_snr: f64,
    pub model: InterferenceModel,
    pub group_of: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    /// N×K.
    pub beta: DMatrix<f64>,
    pub beta_hat: DMatrix<f64>,
    pub bar_beta: DMatrix<f64>,
    /// Entries β^{1/2}; the diagonal of Ξ_k is column k.
    pub xi: DMatrix<f64>,
    /// Entries β̂^{1/2}; column k is ξ̂_k and the diagonal of Ξ̂_k.
    pub xi_hat: DMatrix<f64>,
    /// N×G.
    pub varrho: DMatrix<f64>,
    pub alpha_hat: DMatrix<f64>,
    pub bar_alpha: DMatrix<f64>,
}

#[inline]
pub(crate) fn col(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let r = m.nrows();
    &m.as_slice()[j * r..(j + 1) * r]
}

pub fn derive_stats(params: &SystemParams, topo: &Topology) -> ChannelStats {
    let n = params.num_aps;
    let k = params.num_ues;
    let g = params.num_groups;
    let c = params.pilot_snr();
    let beta = &topo.beta;
    let varrho = DMatrix::from_fn(n, g, |i, gi| topo.members[gi].iter().map(|&j| beta[(i, j)]).sum::<f64>());
    let bar_beta = DMatrix::from_fn(n, k, |i, j| c.sqrt() * beta[(i, j)] / (1.0 + c * varrho[(i, topo.group_of[j])]));
    let beta_hat = DMatrix::from_fn(n, k, |i, j| c * beta[(i, j)].powi(2) / (1.0 + c * varrho[(i, topo.group_of[j])]));
    let bar_alpha = DMatrix::from_fn(n, g, |i, gi| c.sqrt() * varrho[(i, gi)] / (1.0 + c * varrho[(i, gi)]));
    let alpha_hat = DMatrix::from_fn(n, g, |i, gi| c * varrho[(i, gi)].powi(2) / (1.0 + c * varrho[(i, gi)]));
    ChannelStats {
        num_aps: n,
        num_ues: k,
        num_groups: g,
        antennas: params.antennas_per_ap,
        pilot_snr: c,
        model: params.interference,
        group_of: topo.group_of.clone(),
        members: topo.members.clone(),
        xi: beta.map(f64::sqrt),
        xi_hat: beta_hat.map(f64::sqrt),
        beta: beta.clone(),
        beta_hat,
        bar_beta,
        varrho,
        alpha_hat,
        bar_alpha,
    }
}

impl ChannelStats {
    pub fn m(&self) -> f64 {
        self.antennas as f64
    }

    /// ‖Ξ_k x‖² = Σ_n β_{n,k} x_n².
    pub fn inc(&self, k: usize, x: &[f64]) -> f64 {
        col(&self.beta, k).iter().zip(x).map(|(b, v)| b * v * v).sum()
    }

    /// ξ̂_kᵀ x.
    pub fn proj(&self, k: usize, x: &[f64]) -> f64 {
        col(&self.xi_hat, k).iter().zip(x).map(|(b, v)| b * v).sum()
    }

    /// |ξ̂_kᵀ x|², the coherent-gain part of a desired signal.
    pub fn sig(&self, k: usize, x: &[f64]) -> f64 {
        self.proj(k, x).powi(2)
    }

    /// Pilot-contaminated cross term, per [`InterferenceModel`].
    pub fn coh(&self, k: usize, x: &[f64]) -> f64 {
        match self.model {
            InterferenceModel::Incoherent => col(&self.beta_hat, k).iter().zip(x).map(|(b, v)| b * v * v).sum(),
            InterferenceModel::Coherent => self.sig(k, x),
        }
    }

    /// out += w · ∇inc_k(x).
    pub fn add_inc_grad(&self, k: usize, x: &[f64], w: f64, out: &mut [f64]) {
        for ((o, b), v) in out.iter_mut().zip(col(&self.beta, k)).zip(x) {
            *o += w * 2.0 * b * v;
        }
    }

    pub fn add_sig_grad(&self, k: usize, x: &[f64], w: f64, out: &mut [f64]) {
        let s = 2.0 * w * self.proj(k, x);
        for (o, a) in out.iter_mut().zip(col(&self.xi_hat, k)) {
            *o += s * a;
        }
    }

    pub fn add_coh_grad(&self, k: usize, x: &[f64], w: f64, out: &mut [f64]) {
        match self.model {
            InterferenceModel::Incoherent => {
                for ((o, b), v) in out.iter_mut().zip(col(&self.beta_hat, k)).zip(x) {
                    *o += w * 2.0 * b * v;
                }
            }
            InterferenceModel::Coherent => self.add_sig_grad(k, x, w, out),
        }
    }

    /// h += w · ∇²inc_k (diagonal).
    pub fn add_inc_hess(&self, k: usize, w: f64, h: &mut DMatrix<f64>) {
        for (i, b) in col(&self.beta, k).iter().enumerate() {
            h[(i, i)] += 2.0 * w * b;
        }
    }

    pub fn add_sig_hess(&self, k: usize, w: f64, h: &mut DMatrix<f64>) {
        let a = col(&self.xi_hat, k);
        let n = a.len();
        for c in 0..n {
            let s = 2.0 * w * a[c];
            for r in 0..n {
                h[(r, c)] += s * a[r];
            }
        }
    }

    pub fn add_coh_hess(&self, k: usize, w: f64, h: &mut DMatrix<f64>) {
        match self.model {
            InterferenceModel::Incoherent => {
                for (i, b) in col(&self.beta_hat, k).iter().enumerate() {
                    h[(i, i)] += 2.0 * w * b;
                }
            }
            InterferenceModel::Coherent => self.add_sig_hess(k, w, h),
        }
    }
}

/// Independent Gaussian inputs of one channel draw: small-scale fading `h`
/// (N×K×M) and pilot noise (N×G×M).
#[derive(Debug, Clone)]
pub struct RawDraw {
    pub h: Vec<Complex64>,
    pub noise: Vec<Complex64>,
}

impl RawDraw {
    pub fn sample<R: Rng + ?Sized>(stats: &ChannelStats, rng: &mut R) -> Self {
        let mut d = RawDraw {
            h: vec![Complex64::default(); stats.num_aps * stats.num_ues * stats.antennas],
            noise: vec![Complex64::default(); stats.num_aps * stats.num_groups * stats.antennas],
        };
        d.resample(rng);
        d
    }

    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for z in self.h.iter_mut().chain(self.noise.iter_mut()) {
            *z = cn01(rng);
        }
    }
}

/// CN(0, 1) via N(0, 1/2) real and imaginary parts.
#[inline]
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One realization of true channels, estimates and beamformers. Vectors are
/// stored flat with the antenna index fastest: entry `(n, k)` starts at
/// `(k·N + n)·M`.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub num_aps: usize,
    pub antennas: usize,
    pub g: Vec<Complex64>,
    pub g_hat: Vec<Complex64>,
    pub f_hat: Vec<Complex64>,
    pub w: Vec<Complex64>,
    pub v: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn zeros(stats: &ChannelStats) -> Self {
        let (n, k, g, m) = (stats.num_aps, stats.num_ues, stats.num_groups, stats.antennas);
        let z = Complex64::default();
        ChannelRealization {
            num_aps: n,
            antennas: m,
            g: vec![z; n * k * m],
            g_hat: vec![z; n * k * m],
            f_hat: vec![z; n * g * m],
            w: vec![z; n * g * m],
            v: vec![z; n * k * m],
        }
    }

    #[inline]
    fn at(&self, n: usize, j: usize) -> std::ops::Range<usize> {
        let s = (j * self.num_aps + n) * self.antennas;
        s..s + self.antennas
    }

    pub fn g_at(&self, n: usize, k: usize) -> &[Complex64] {
        &self.g[self.at(n, k)]
    }
    pub fn g_hat_at(&self, n: usize, k: usize) -> &[Complex64] {
        &self.g_hat[self.at(n, k)]
    }
    pub fn f_hat_at(&self, n: usize, g: usize) -> &[Complex64] {
        &self.f_hat[self.at(n, g)]
    }
    pub fn w_at(&self, n: usize, g: usize) -> &[Complex64] {
        &self.w[self.at(n, g)]
    }
    pub fn v_at(&self, n: usize, k: usize) -> &[Complex64] {
        &self.v[self.at(n, k)]
    }

    /// Builds the realization from raw Gaussians. `sign = -1` flips the fading
    /// while keeping the pilot noise, giving the antithetic partner.
    pub fn fill(&mut self, stats: &ChannelStats, raw: &RawDraw, sign: f64) {
        let (nn, m) = (stats.num_aps, stats.antennas);
        let sc = stats.pilot_snr.sqrt();
        for k in 0..stats.num_ues {
            for n in 0..nn {
                let amp = sign * stats.xi[(n, k)];
                let r = self.at(n, k);
                for (dst, src) in self.g[r.clone()].iter_mut().zip(&raw.h[r]) {
                    *dst = src * amp;
                }
            }
        }
        let mut z = vec![Complex64::default(); m];
        for (gi, members) in stats.members.iter().enumerate() {
            for n in 0..nn {
                let r = self.at(n, gi);
                z.copy_from_slice(&raw.noise[r.clone()]);
                for &j in members {
                    for (zi, gj) in z.iter_mut().zip(&self.g[self.at(n, j)]) {
                        *zi += gj * sc;
                    }
                }
                let fa = stats.bar_alpha[(n, gi)];
                let wn = 1.0 / (stats.m() * stats.alpha_hat[(n, gi)]).sqrt();
                for (i, zi) in z.iter().enumerate() {
                    self.f_hat[r.start + i] = zi * fa;
                    self.w[r.start + i] = zi * fa * wn;
                }
                for &j in members {
                    let rj = self.at(n, j);
                    let gb = stats.bar_beta[(n, j)];
                    let vn = 1.0 / (stats.m() * stats.beta_hat[(n, j)]).sqrt();
                    for (i, zi) in z.iter().enumerate() {
                        self.g_hat[rj.start + i] = zi * gb;
                        self.v[rj.start + i] = zi * gb * vn;
                    }
                }
            }
        }
    }
}

/// Convenience wrapper drawing a fresh realization.
pub fn draw_realization<R: Rng + ?Sized>(stats: &ChannelStats, rng: &mut R) -> ChannelRealization {
    let raw = RawDraw::sample(stats, rng);
    let mut r = ChannelRealization::zeros(stats);
    r.fill(stats, &raw, 1.0);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system_model::{generate_topology, load_params};
    use rand::SeedableRng;

    #[test]
    fn estimates_never_exceed_gain() {
        let p = SystemParams::default();
        let t = generate_topology(&p, 7);
        let s = derive_stats(&p, &t);
        for (bh, b) in s.beta_hat.iter().zip(s.beta.iter()) {
            assert!(*bh > 0.0 && bh <= b);
        }
        for k in 0..p.num_ues {
            let g = s.group_of[k];
            for n in 0..p.num_aps {
                assert!(s.alpha_hat[(n, g)] >= s.beta_hat[(n, k)]);
            }
        }
    }

    #[test]
    fn singleton_group_alpha_equals_beta_hat() {
        let p = load_params("num_ues = 4\nnum_groups = 4").unwrap();
        let t = generate_topology(&p, 11);
        let s = derive_stats(&p, &t);
        for k in 0..4 {
            for n in 0..p.num_aps {
                let (a, b) = (s.alpha_hat[(n, k)], s.beta_hat[(n, k)]);
                assert!((a - b).abs() <= 1e-14 * a.max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn singleton_group_estimates_coincide() {
        let p = load_params("num_ues = 4\nnum_groups = 4").unwrap();
        let t = generate_topology(&p, 2);
        let s = derive_stats(&p, &t);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let r = draw_realization(&s, &mut rng);
        for n in 0..p.num_aps {
            for k in 0..4 {
                for (a, b) in r.f_hat_at(n, k).iter().zip(r.g_hat_at(n, k)) {
                    assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-300));
                }
            }
        }
    }
}
