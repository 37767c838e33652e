//! Sample-average estimate of the effective SINR, independent of the
//! closed form: channels and pilot noise are drawn, MRT precoders are the
//! MMSE estimates, and every expectation is replaced by a sample mean.
//!
//! Data symbols are unit-variance and independent, so they are integrated
//! out analytically. For user `(j, k)` each draw yields
//! `g = Σ_n ν_jk^n (h_jk^{jn})ᴴ ĥ_jk^{jn}` and
//! `P = Σ_{l,i} |Σ_n ν_li^n (h_jk^{ln})ᴴ ĥ_li^{ln}|²`, and
//! `γ̂ = |ḡ|² / (P̄ − |ḡ|² + σ²)`. Standard errors come from the delta
//! method on the sample covariance of `(Re g, Im g, P)`.
//!
//! Draws are processed in chunks of [`MONTE_CARLO_CHUNK`]; chunk `c` uses
//! `derive_seed(seed, c)` and partial sums are combined in chunk order, so
//! output is bit-identical for a given seed on any number of threads.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PowerAllocation, SinrReport};
use crate::covariance::CovarianceSet;
use crate::error::{invalid, Error, Result};
use crate::estimation::{estimate_into, ChannelEstimates, ChannelSampler, EstimationSet};
use crate::linalg::CVector;
use crate::rng::{derive_seed, rng_from_seed};

pub const MONTE_CARLO_CHUNK: usize = 1024;
const MIN_DRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub report: SinrReport,
    pub draws: usize,
    pub gamma_stderr: Vec<f64>,
    pub numerator_stderr: Vec<f64>,
    pub denominator_stderr: Vec<f64>,
}

impl MonteCarloReport {
    pub const CSV_COLUMNS: [&'static str; 7] =
        ["cell", "user", "gamma", "se", "gamma_stderr", "numerator_stderr", "denominator_stderr"];

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let r = &self.report;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_COLUMNS)?;
        for j in 0..r.cells {
            for k in 0..r.users {
                let idx = j * r.users + k;
                w.write_record([
                    j.to_string(),
                    k.to_string(),
                    r.gamma[idx].to_string(),
                    r.se[idx].to_string(),
                    self.gamma_stderr[idx].to_string(),
                    self.numerator_stderr[idx].to_string(),
                    self.denominator_stderr[idx].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Running first and second moments of `(Re g, Im g, P)` per user.
#[derive(Clone, Debug)]
struct Moments {
    // per user: [a, b, p, aa, bb, pp, ab, ap, bp]
    sums: Vec<[f64; 9]>,
}

impl Moments {
    fn new(users: usize) -> Self {
        Self { sums: vec![[0.0; 9]; users] }
    }

    fn push(&mut self, user: usize, g: Complex64, p: f64) {
        let (a, b) = (g.re, g.im);
        let s = &mut self.sums[user];
        for (acc, v) in s.iter_mut().zip([a, b, p, a * a, b * b, p * p, a * b, a * p, b * p]) {
            *acc += v;
        }
    }

    fn merge(&mut self, other: &Moments) {
        for (mine, theirs) in self.sums.iter_mut().zip(&other.sums) {
            for (x, y) in mine.iter_mut().zip(theirs) {
                *x += y;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    sampler: &ChannelSampler,
    est: &EstimationSet,
    alloc: &PowerAllocation,
    draws: usize,
    seed: u64,
) -> Moments {
    let (cells, users, arrays) = (est.cells(), est.users(), est.arrays());
    let mut rng = rng_from_seed(seed);
    let mut channels = sampler.empty_realization();
    let mut estimates = ChannelEstimates::zeros(est);
    let mut z = CVector::zeros(est.antennas());
    let mut y = CVector::zeros(est.antennas());
    let mut moments = Moments::new(cells * users);
    for _ in 0..draws {
        sampler.sample_into(&mut rng, &mut z, &mut channels);
        estimate_into(&channels, est, est.rho_tr(), &mut rng, &mut y, &mut estimates);
        for j in 0..cells {
            for k in 0..users {
                let mut g = Complex64::new(0.0, 0.0);
                let mut p = 0.0;
                for l in 0..cells {
                    for i in 0..users {
                        let mut zli = Complex64::new(0.0, 0.0);
                        for n in 0..arrays {
                            let nu = alloc.get(l, i, n);
                            if nu != 0.0 {
                                zli += channels.get(l, n, j, k).dotc(estimates.get(l, i, n)) * nu;
                            }
                        }
                        p += zli.norm_sqr();
                        if l == j && i == k {
                            g = zli;
                        }
                    }
                }
                moments.push(j * users + k, g, p);
            }
        }
    }
    moments
}

/// Monte-Carlo estimate of every user's SINR with per-user standard errors.
pub fn monte_carlo_sinr(
    covariances: &CovarianceSet,
    est: &EstimationSet,
    alloc: &PowerAllocation,
    sigma2: f64,
    coherence_samples: usize,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if draws < MIN_DRAWS {
        return Err(invalid("monte_carlo.draws", format!("need at least {MIN_DRAWS}")));
    }
    if alloc.cells() != est.cells() || alloc.users() != est.users() || alloc.arrays() != est.arrays() {
        return Err(Error::DimensionMismatch("allocation does not match estimation set".into()));
    }
    let sampler = ChannelSampler::new(covariances)?;
    let chunks = draws.div_ceil(MONTE_CARLO_CHUNK);
    let partials: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = MONTE_CARLO_CHUNK.min(draws - c * MONTE_CARLO_CHUNK);
            run_chunk(&sampler, est, alloc, n, derive_seed(seed, c as u64))
        })
        .collect();
    let users_total = est.cells() * est.users();
    let mut total = Moments::new(users_total);
    for part in &partials {
        total.merge(part);
    }

    let nd = draws as f64;
    let mut gamma = Vec::with_capacity(users_total);
    let mut gamma_stderr = Vec::with_capacity(users_total);
    let mut numerator_stderr = Vec::with_capacity(users_total);
    let mut denominator_stderr = Vec::with_capacity(users_total);
    for s in &total.sums {
        let (a, b, p) = (s[0] / nd, s[1] / nd, s[2] / nd);
        // unbiased sample covariance of (Re g, Im g, P)
        let cov = |sxy: f64, mx: f64, my: f64| (sxy - nd * mx * my) / (nd - 1.0);
        let c = [
            [cov(s[3], a, a), cov(s[6], a, b), cov(s[7], a, p)],
            [cov(s[6], a, b), cov(s[4], b, b), cov(s[8], b, p)],
            [cov(s[7], a, p), cov(s[8], b, p), cov(s[5], p, p)],
        ];
        let quad = |g: [f64; 3]| -> f64 {
            let mut acc = 0.0;
            for r in 0..3 {
                for q in 0..3 {
                    acc += g[r] * c[r][q] * g[q];
                }
            }
            (acc.max(0.0) / nd).sqrt()
        };
        let num = a * a + b * b;
        let den = p - num + sigma2;
        gamma.push(num / den);
        let dg = [
            2.0 * a * (den + num) / (den * den),
            2.0 * b * (den + num) / (den * den),
            -num / (den * den),
        ];
        gamma_stderr.push(quad(dg));
        numerator_stderr.push(quad([2.0 * a, 2.0 * b, 0.0]));
        denominator_stderr.push(quad([-2.0 * a, -2.0 * b, 1.0]));
    }
    let report = SinrReport::from_gamma(gamma, est.cells(), est.users(), coherence_samples)?;
    Ok(MonteCarloReport { report, draws, gamma_stderr, numerator_stderr, denominator_stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMatrix;
    use crate::sinr::{closed_form_gamma, compute_coefficients};

    fn identity_set(m: usize, beta: f64) -> CovarianceSet {
        CovarianceSet::from_fn(1, 1, 1, m, |_, _, _, _| CMatrix::from_diagonal_element(m, m, Complex64::new(beta, 0.0)))
            .unwrap()
    }

    #[test]
    fn zero_allocation_is_exactly_zero() {
        let set = identity_set(3, 1.0);
        let est = EstimationSet::build(&set, 1.0).unwrap();
        let r = monte_carlo_sinr(&set, &est, &PowerAllocation::zeros(1, 1, 1), 1.0, 200, 2000, 1).unwrap();
        assert_eq!(r.report.gamma, vec![0.0]);
    }

    #[test]
    fn too_few_draws_rejected() {
        let set = identity_set(2, 1.0);
        let est = EstimationSet::build(&set, 1.0).unwrap();
        assert!(monte_carlo_sinr(&set, &est, &PowerAllocation::zeros(1, 1, 1), 1.0, 200, 10, 1).is_err());
    }

    #[test]
    fn perfect_csi_limit_matches_hand_algebra() {
        let (m, beta, nu, sigma2) = (8usize, 0.5, 0.3, 0.2);
        let set = identity_set(m, beta);
        let est = EstimationSet::build(&set, 1e12).unwrap();
        let alloc = PowerAllocation::uniform(1, 1, 1, nu);
        let r = monte_carlo_sinr(&set, &est, &alloc, sigma2, 200, 100_000, 99).unwrap();
        let mf = m as f64;
        let expected = nu * nu * (mf * beta).powi(2) / (nu * nu * mf * beta * beta + sigma2);
        let diff = (r.report.gamma[0] - expected).abs();
        assert!(diff <= 3.0 * r.gamma_stderr[0], "{} vs {expected} (se {})", r.report.gamma[0], r.gamma_stderr[0]);

        let coeffs = compute_coefficients(&set, &est).unwrap();
        let closed = closed_form_gamma(&coeffs, &alloc, sigma2)[0];
        assert!((closed - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let set = identity_set(2, 1.0);
        let est = EstimationSet::build(&set, 1.0).unwrap();
        let alloc = PowerAllocation::uniform(1, 1, 1, 0.5);
        let a = monte_carlo_sinr(&set, &est, &alloc, 1.0, 200, 5000, 4).unwrap();
        let b = monte_carlo_sinr(&set, &est, &alloc, 1.0, 200, 5000, 4).unwrap();
        assert_eq!(a, b);
    }
}
