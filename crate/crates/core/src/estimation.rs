//! MMSE channel estimation from orthogonal uplink pilots, and correlated
//! Rayleigh channel sampling for the Monte-Carlo oracle.
//!
//! Pilots are reused across cells, so array `n` of cell `l` despreads
//! pilot `i` into
//!
//! ```text
//! y = Σ_{l'} h_{l'i}^{ln} + n / √ρ_tr,    n ~ CN(0, I)
//! ```
//!
//! and estimates `ĥ_{li}^{ln} = W·y` with `W = R_{li}^{ln} Q⁻¹`,
//! `Q = E[y yᴴ] = Σ_{l'} R_{l'i}^{ln} + I/ρ_tr`.

use num_complex::Complex64;

use crate::covariance::{CovarianceSet, PSD_REL_TOL};
use crate::error::{invalid, Error, Result};
use crate::linalg::{psd_factor, real_trace, CMatrix, CVector, HpdSolver};
use crate::rng::{complex_normal, rng_from_seed, SimRng};

/// `Q = Σ R + I/ρ_tr`.
pub fn compute_q(covariances: &[&CMatrix], rho_tr: f64) -> Result<CMatrix> {
    let first = covariances
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no covariances to sum".into()))?;
    let m = first.nrows();
    if !(rho_tr > 0.0) {
        return Err(invalid("system.rho_tr", "must be positive"));
    }
    let mut q = CMatrix::from_diagonal_element(m, m, Complex64::new(1.0 / rho_tr, 0.0));
    for r in covariances {
        if r.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {:?}, expected ({m}, {m})",
                r.shape()
            )));
        }
        q += *r;
    }
    Ok(q)
}

/// `W = R·Q⁻¹`, via a Cholesky solve of `Q·X = R` and `W = Xᴴ`.
pub fn compute_w(r_desired: &CMatrix, q: &CMatrix) -> Result<CMatrix> {
    if r_desired.shape() != q.shape() || !q.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "R is {:?} but Q is {:?}",
            r_desired.shape(),
            q.shape()
        )));
    }
    let solver = HpdSolver::new(q)?;
    Ok(solver.solve(r_desired).adjoint())
}

/// `Q`, `W` and the estimate covariance `W·Q·Wᴴ` for every user at every
/// array of its own cell.
#[derive(Clone, Debug)]
pub struct EstimationSet {
    cells: usize,
    users: usize,
    arrays: usize,
    antennas: usize,
    rho_tr: f64,
    q: Vec<CMatrix>,
    w: Vec<CMatrix>,
    estimate_cov: Vec<CMatrix>,
    estimate_power: Vec<f64>,
}

impl EstimationSet {
    pub fn build(covariances: &CovarianceSet, rho_tr: f64) -> Result<Self> {
        let (cells, users, arrays) = (covariances.cells(), covariances.users(), covariances.arrays());
        let total = cells * users * arrays;
        let mut out = Self {
            cells,
            users,
            arrays,
            antennas: covariances.antennas(),
            rho_tr,
            q: Vec::with_capacity(total),
            w: Vec::with_capacity(total),
            estimate_cov: Vec::with_capacity(total),
            estimate_power: Vec::with_capacity(total),
        };
        for l in 0..cells {
            for i in 0..users {
                for n in 0..arrays {
                    let same_pilot: Vec<&CMatrix> =
                        (0..cells).map(|lp| &covariances.get(l, n, lp, i).entries).collect();
                    let q = compute_q(&same_pilot, rho_tr)?;
                    let w = compute_w(&covariances.get(l, n, l, i).entries, &q)?;
                    let raw = &w * &q * w.adjoint();
                    let b = (&raw + raw.adjoint()) * Complex64::new(0.5, 0.0);
                    out.estimate_power.push(real_trace(&b));
                    out.estimate_cov.push(b);
                    out.q.push(q);
                    out.w.push(w);
                }
            }
        }
        Ok(out)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn arrays(&self) -> usize {
        self.arrays
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// The pilot power the filters were designed for.
    pub fn rho_tr(&self) -> f64 {
        self.rho_tr
    }

    pub(crate) fn index(&self, cell: usize, user: usize, array: usize) -> usize {
        debug_assert!(cell < self.cells && user < self.users && array < self.arrays);
        (cell * self.users + user) * self.arrays + array
    }

    /// `Q_{li}^{ln}`.
    pub fn q(&self, cell: usize, user: usize, array: usize) -> &CMatrix {
        &self.q[self.index(cell, user, array)]
    }

    /// `W_{li}^{n}`.
    pub fn w(&self, cell: usize, user: usize, array: usize) -> &CMatrix {
        &self.w[self.index(cell, user, array)]
    }

    /// `W·Q·Wᴴ`, the covariance of `ĥ_{li}^{ln}`.
    pub fn estimate_cov(&self, cell: usize, user: usize, array: usize) -> &CMatrix {
        &self.estimate_cov[self.index(cell, user, array)]
    }

    /// `tr(W·Q·Wᴴ) = E‖ĥ‖²`, the MRT transmit power per unit `ν²`.
    pub fn estimate_power(&self, cell: usize, user: usize, array: usize) -> f64 {
        self.estimate_power[self.index(cell, user, array)]
    }
}

/// One draw of every channel `h_{li}^{jn}`, stored in covariance-set order.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub(crate) cells: usize,
    pub(crate) users: usize,
    pub(crate) arrays: usize,
    pub(crate) h: Vec<CVector>,
    pub seed: u64,
}

impl ChannelRealization {
    /// `h_{user_cell,user}^{cell,array}`.
    pub fn get(&self, cell: usize, array: usize, user_cell: usize, user: usize) -> &CVector {
        &self.h[((cell * self.arrays + array) * self.cells + user_cell) * self.users + user]
    }
}

/// Precomputed factors `F` with `F·Fᴴ = R` for repeated sampling.
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    cells: usize,
    users: usize,
    arrays: usize,
    antennas: usize,
    factors: Vec<CMatrix>,
}

impl ChannelSampler {
    pub fn new(covariances: &CovarianceSet) -> Result<Self> {
        let factors = covariances
            .iter()
            .map(|r| psd_factor(&r.entries, PSD_REL_TOL))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cells: covariances.cells(),
            users: covariances.users(),
            arrays: covariances.arrays(),
            antennas: covariances.antennas(),
            factors,
        })
    }

    pub(crate) fn empty_realization(&self) -> ChannelRealization {
        ChannelRealization {
            cells: self.cells,
            users: self.users,
            arrays: self.arrays,
            h: vec![CVector::zeros(self.antennas); self.factors.len()],
            seed: 0,
        }
    }

    /// Overwrites `out` with a fresh draw `h = F·z`, `z ~ CN(0, I)`.
    pub(crate) fn sample_into(&self, rng: &mut SimRng, z: &mut CVector, out: &mut ChannelRealization) {
        for (f, h) in self.factors.iter().zip(out.h.iter_mut()) {
            for v in z.iter_mut() {
                *v = complex_normal(rng);
            }
            f.mul_to(z, h);
        }
    }

    pub fn sample(&self, seed: u64) -> ChannelRealization {
        let mut rng = rng_from_seed(seed);
        let mut z = CVector::zeros(self.antennas);
        let mut out = self.empty_realization();
        out.seed = seed;
        self.sample_into(&mut rng, &mut z, &mut out);
        out
    }
}

pub fn sample_channels(covariances: &CovarianceSet, seed: u64) -> Result<ChannelRealization> {
    Ok(ChannelSampler::new(covariances)?.sample(seed))
}

/// Estimates `ĥ_{li}^{ln}` for every user at its own cell's arrays,
/// indexed like [`EstimationSet`].
#[derive(Clone, Debug)]
pub struct ChannelEstimates {
    users: usize,
    arrays: usize,
    pub(crate) h_hat: Vec<CVector>,
}

impl ChannelEstimates {
    pub(crate) fn zeros(est: &EstimationSet) -> Self {
        Self {
            users: est.users,
            arrays: est.arrays,
            h_hat: vec![CVector::zeros(est.antennas); est.cells * est.users * est.arrays],
        }
    }

    pub fn get(&self, cell: usize, user: usize, array: usize) -> &CVector {
        &self.h_hat[(cell * self.users + user) * self.arrays + array]
    }
}

/// Forms the despread pilot observation and applies the MMSE filter, using
/// `rng` for the pilot noise. `y` is scratch space of length M.
pub(crate) fn estimate_into(
    channels: &ChannelRealization,
    est: &EstimationSet,
    rho_tr: f64,
    rng: &mut SimRng,
    y: &mut CVector,
    out: &mut ChannelEstimates,
) {
    let noise_scale = 1.0 / rho_tr.sqrt();
    for l in 0..est.cells {
        for i in 0..est.users {
            for n in 0..est.arrays {
                for v in y.iter_mut() {
                    *v = complex_normal(rng) * noise_scale;
                }
                for lp in 0..est.cells {
                    *y += channels.get(l, n, lp, i);
                }
                let idx = est.index(l, i, n);
                est.w[idx].mul_to(y, &mut out.h_hat[idx]);
            }
        }
    }
}

pub fn simulate_pilot_and_estimate(
    channels: &ChannelRealization,
    est: &EstimationSet,
    rho_tr: f64,
    noise_seed: u64,
) -> Result<ChannelEstimates> {
    if channels.cells != est.cells || channels.users != est.users || channels.arrays != est.arrays {
        return Err(Error::DimensionMismatch("channel realization does not match estimation set".into()));
    }
    let mut rng = rng_from_seed(noise_seed);
    let mut y = CVector::zeros(est.antennas);
    let mut out = ChannelEstimates::zeros(est);
    estimate_into(channels, est, rho_tr, &mut rng, &mut y, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn scaled_identity(m: usize, beta: f64) -> CMatrix {
        CMatrix::from_diagonal_element(m, m, c(beta))
    }

    #[test]
    fn q_is_sum_plus_noise() {
        let r = scaled_identity(3, 0.7);
        let q = compute_q(&[&r], 4.0).unwrap();
        assert!((q - scaled_identity(3, 0.7 + 0.25)).norm() < 1e-15);
        let q2 = compute_q(&[&r, &r], 4.0).unwrap();
        assert!((q2 - scaled_identity(3, 1.4 + 0.25)).norm() < 1e-15);
    }

    #[test]
    fn q_rejects_mismatched_dimensions() {
        let a = scaled_identity(3, 1.0);
        let b = scaled_identity(2, 1.0);
        assert!(matches!(compute_q(&[&a, &b], 1.0), Err(Error::DimensionMismatch(_))));
        assert!(compute_q(&[], 1.0).is_err());
    }

    #[test]
    fn w_diagonal_case() {
        let (beta, rho) = (0.6, 5.0);
        let r = scaled_identity(4, beta);
        let q = compute_q(&[&r], rho).unwrap();
        let w = compute_w(&r, &q).unwrap();
        let expected = beta / (beta + 1.0 / rho);
        assert!((w - scaled_identity(4, expected)).norm() < 1e-14);
    }

    #[test]
    fn w_noiseless_limit_is_identity() {
        let r = scaled_identity(4, 1.3);
        let q = compute_q(&[&r], 1e12).unwrap();
        let w = compute_w(&r, &q).unwrap();
        assert!((w - scaled_identity(4, 1.0)).norm() <= 1e-6);
    }

    #[test]
    fn w_rejects_singular_q() {
        let r = scaled_identity(2, 1.0);
        let q = CMatrix::zeros(2, 2);
        assert!(matches!(compute_w(&r, &q), Err(Error::Singular { .. })));
    }

    #[test]
    fn zero_covariance_gives_zero_channel() {
        let set = CovarianceSet::from_fn(1, 1, 1, 3, |_, _, _, _| CMatrix::zeros(3, 3)).unwrap();
        let h = sample_channels(&set, 5).unwrap();
        assert_eq!(h.get(0, 0, 0, 0).norm(), 0.0);
    }

    #[test]
    fn rank_one_draws_are_multiples_of_steering_vector() {
        let a = CVector::from_vec(vec![c(1.0), Complex64::new(0.0, 1.0), c(-1.0), Complex64::new(0.0, -1.0)]);
        let r = &a * a.adjoint();
        let set = CovarianceSet::from_fn(1, 1, 1, 4, |_, _, _, _| r.clone()).unwrap();
        let sampler = ChannelSampler::new(&set).unwrap();
        for seed in 0..20 {
            let h = sampler.sample(seed);
            let h = h.get(0, 0, 0, 0);
            let coeff = a.dotc(h) / a.norm_squared();
            assert!((h - &a * coeff).norm() < 1e-10 * (1.0 + h.norm()));
        }
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let r = scaled_identity(3, 2.0);
        let set = CovarianceSet::from_fn(2, 1, 1, 3, |_, _, _, _| r.clone()).unwrap();
        let a = sample_channels(&set, 11).unwrap();
        let b = sample_channels(&set, 11).unwrap();
        assert_eq!(a.h, b.h);
        assert_ne!(a.h, sample_channels(&set, 12).unwrap().h);
    }

    #[test]
    fn zero_channel_and_zero_noise_give_zero_estimate() {
        let set = CovarianceSet::from_fn(1, 1, 1, 2, |_, _, _, _| scaled_identity(2, 1.0)).unwrap();
        let est = EstimationSet::build(&set, 1.0).unwrap();
        let mut channels = ChannelSampler::new(&set).unwrap().empty_realization();
        for h in &mut channels.h {
            h.fill(c(0.0));
        }
        // ρ → ∞ removes the noise term
        let h_hat = simulate_pilot_and_estimate(&channels, &est, f64::INFINITY, 3).unwrap();
        assert_eq!(h_hat.get(0, 0, 0).norm(), 0.0);
    }

    #[test]
    fn noiseless_single_cell_estimate_matches_channel() {
        let rho = 1e12;
        let set = CovarianceSet::from_fn(1, 1, 1, 4, |_, _, _, _| scaled_identity(4, 0.8)).unwrap();
        let est = EstimationSet::build(&set, rho).unwrap();
        let sampler = ChannelSampler::new(&set).unwrap();
        let mut worst = 0.0_f64;
        for draw in 0..1000 {
            let h = sampler.sample(draw);
            let h_hat = simulate_pilot_and_estimate(&h, &est, rho, 10_000 + draw).unwrap();
            let truth = h.get(0, 0, 0, 0);
            worst = worst.max((h_hat.get(0, 0, 0) - truth).norm() / truth.norm());
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn w_times_q_reproduces_r() {
        let set = CovarianceSet::from_fn(2, 2, 2, 3, |j, n, l, i| {
            let v = CVector::from_fn(3, |m, _| Complex64::from_polar(1.0, 0.3 * (m * (1 + j + n + l + i)) as f64));
            &v * v.adjoint() + scaled_identity(3, 0.1 * (1 + l + i) as f64)
        })
        .unwrap();
        let est = EstimationSet::build(&set, 2.0).unwrap();
        for l in 0..2 {
            for i in 0..2 {
                for n in 0..2 {
                    let r = &set.get(l, n, l, i).entries;
                    let wq = est.w(l, i, n) * est.q(l, i, n);
                    assert!((wq - r).norm() <= 1e-10 * r.norm());
                }
            }
        }
    }
}
