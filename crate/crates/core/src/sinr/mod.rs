//! Closed-form downlink SINR and spectral efficiency under MRT precoding.
//!
//! With `a_{li}^n = ĥ_{li}^{ln}` the effective SINR of user `(j, k)` is
//!
//! ```text
//!            |Σ_n ν_jk^n χ_jk^n|²
//! γ_jk = ──────────────────────────────────────────────────────────────
//!        Σ_{l,i,n} (ν_li^n)² ζ_jk^{lin} + Σ_{l≠j} |Σ_n ν_lk^n ξ_jk^{ln}|² + σ²
//! ```
//!
//! with `χ_jk^n = tr(W_jk^n R_jk^{jn})`, `ζ_jk^{lin} = tr(W_li^n Q_li^n W_li^nᴴ R_jk^{ln})`
//! and `ξ_jk^{ln} = tr(W_lk^n R_jk^{ln})`. The second denominator sum is the
//! coherent interference from users sharing pilot `k` in other cells.

mod monte_carlo;

pub use monte_carlo::{monte_carlo_sinr, MonteCarloReport, MONTE_CARLO_CHUNK};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSet;
use crate::error::{invalid, Error, Result};
use crate::estimation::EstimationSet;
use crate::linalg::{trace_product, CMatrix};

/// Largest tolerated `|Im tr(AB)| / (‖A‖_F ‖B‖_F)`.
pub const IMAG_REL_TOL: f64 = 1e-10;

/// Downlink power-control coefficients `ν_{li}^n ≥ 0`, indexed
/// (cell, user, array).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    cells: usize,
    users: usize,
    arrays: usize,
    nu: Vec<f64>,
}

impl PowerAllocation {
    pub fn zeros(cells: usize, users: usize, arrays: usize) -> Self {
        Self::uniform(cells, users, arrays, 0.0)
    }

    pub fn uniform(cells: usize, users: usize, arrays: usize, value: f64) -> Self {
        Self { cells, users, arrays, nu: vec![value; cells * users * arrays] }
    }

    pub fn from_vec(cells: usize, users: usize, arrays: usize, nu: Vec<f64>) -> Result<Self> {
        if nu.len() != cells * users * arrays {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {cells}x{users}x{arrays}",
                nu.len()
            )));
        }
        if let Some(bad) = nu.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid("nu", format!("coefficients must be finite and nonnegative, got {bad}")));
        }
        Ok(Self { cells, users, arrays, nu })
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

    /// Flat index of `ν_{cell,user}^{array}`; also the variable index used
    /// by the feasibility programs.
    pub fn index(&self, cell: usize, user: usize, array: usize) -> usize {
        (cell * self.users + user) * self.arrays + array
    }

    pub fn get(&self, cell: usize, user: usize, array: usize) -> f64 {
        self.nu[self.index(cell, user, array)]
    }

    pub fn set(&mut self, cell: usize, user: usize, array: usize, value: f64) {
        let idx = self.index(cell, user, array);
        self.nu[idx] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.nu
    }

    /// Multiplies every coefficient by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { nu: self.nu.iter().map(|v| v * c).collect(), ..self.clone() }
    }
}

/// The traces χ, ζ, ξ that reduce the SINR to a function of ν alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrCoefficients {
    cells: usize,
    users: usize,
    arrays: usize,
    chi: Vec<f64>,
    zeta: Vec<f64>,
    xi: Vec<f64>,
    estimate_power: Vec<f64>,
}

fn real_trace_checked(a: &CMatrix, b: &CMatrix, name: &'static str) -> Result<f64> {
    let t = trace_product(a, b);
    let bound = a.norm() * b.norm();
    if bound > 0.0 {
        let residual = t.im.abs() / bound;
        if residual > IMAG_REL_TOL {
            return Err(Error::ImaginaryResidual { name, residual });
        }
    }
    Ok(t.re)
}

impl SinrCoefficients {
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn arrays(&self) -> usize {
        self.arrays
    }

    pub fn chi(&self, j: usize, k: usize, n: usize) -> f64 {
        self.chi[(j * self.users + k) * self.arrays + n]
    }

    pub fn zeta(&self, j: usize, k: usize, l: usize, i: usize, n: usize) -> f64 {
        self.zeta[(((j * self.users + k) * self.cells + l) * self.users + i) * self.arrays + n]
    }

    /// Stored for every `l`; only `l ≠ j` enters the SINR.
    pub fn xi(&self, j: usize, k: usize, l: usize, n: usize) -> f64 {
        self.xi[((j * self.users + k) * self.cells + l) * self.arrays + n]
    }

    /// `tr(W_li^n Q_li^n W_li^nᴴ)`, carried along for the power constraints.
    pub fn estimate_power(&self, l: usize, i: usize, n: usize) -> f64 {
        self.estimate_power[(l * self.users + i) * self.arrays + n]
    }

    /// Builds coefficients directly from values; used for scalar models
    /// and tests. Closures are called with the same index order as the
    /// accessors.
    pub fn from_fns(
        cells: usize,
        users: usize,
        arrays: usize,
        chi: impl Fn(usize, usize, usize) -> f64,
        zeta: impl Fn(usize, usize, usize, usize, usize) -> f64,
        xi: impl Fn(usize, usize, usize, usize) -> f64,
        estimate_power: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut out = Self {
            cells,
            users,
            arrays,
            chi: Vec::new(),
            zeta: Vec::new(),
            xi: Vec::new(),
            estimate_power: Vec::new(),
        };
        for j in 0..cells {
            for k in 0..users {
                for n in 0..arrays {
                    out.chi.push(chi(j, k, n));
                    out.estimate_power.push(estimate_power(j, k, n));
                }
                for l in 0..cells {
                    for i in 0..users {
                        for n in 0..arrays {
                            out.zeta.push(zeta(j, k, l, i, n));
                        }
                    }
                }
                for l in 0..cells {
                    for n in 0..arrays {
                        out.xi.push(xi(j, k, l, n));
                    }
                }
            }
        }
        out
    }
}

/// Evaluates every χ, ζ and ξ. Fails if any trace has a non-negligible
/// imaginary part.
pub fn compute_coefficients(covariances: &CovarianceSet, est: &EstimationSet) -> Result<SinrCoefficients> {
    let (cells, users, arrays) = (covariances.cells(), covariances.users(), covariances.arrays());
    if est.cells() != cells || est.users() != users || est.arrays() != arrays || est.antennas() != covariances.antennas() {
        return Err(Error::DimensionMismatch("estimation set does not match covariance set".into()));
    }
    // per user (j, k): chi[n], zeta[l][i][n], xi[l][n]
    let per_user = (0..cells * users)
        .into_par_iter()
        .map(|jk| {
            let (j, k) = (jk / users, jk % users);
            let chi = (0..arrays)
                .map(|n| real_trace_checked(est.w(j, k, n), &covariances.get(j, n, j, k).entries, "chi"))
                .collect::<Result<Vec<_>>>()?;
            let mut zeta = Vec::with_capacity(cells * users * arrays);
            for l in 0..cells {
                for i in 0..users {
                    for n in 0..arrays {
                        zeta.push(real_trace_checked(
                            est.estimate_cov(l, i, n),
                            &covariances.get(l, n, j, k).entries,
                            "zeta",
                        )?);
                    }
                }
            }
            let mut xi = Vec::with_capacity(cells * arrays);
            for l in 0..cells {
                for n in 0..arrays {
                    xi.push(real_trace_checked(est.w(l, k, n), &covariances.get(l, n, j, k).entries, "xi")?);
                }
            }
            Ok((chi, zeta, xi))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = SinrCoefficients {
        cells,
        users,
        arrays,
        chi: Vec::with_capacity(cells * users * arrays),
        zeta: Vec::with_capacity(cells * users * cells * users * arrays),
        xi: Vec::with_capacity(cells * users * cells * arrays),
        estimate_power: Vec::with_capacity(cells * users * arrays),
    };
    for (chi, zeta, xi) in per_user {
        out.chi.extend(chi);
        out.zeta.extend(zeta);
        out.xi.extend(xi);
    }
    for l in 0..cells {
        for i in 0..users {
            for n in 0..arrays {
                out.estimate_power.push(est.estimate_power(l, i, n));
            }
        }
    }
    Ok(out)
}

/// Numerator `|Σ_n ν χ|²` and the three denominator parts of one user's
/// SINR: own-beam ζ term, everything else, in that order (σ² included in
/// the last part).
pub(crate) fn sinr_parts(
    coeffs: &SinrCoefficients,
    alloc: &PowerAllocation,
    sigma2: f64,
    j: usize,
    k: usize,
) -> (f64, f64, f64) {
    let (cells, users, arrays) = (coeffs.cells, coeffs.users, coeffs.arrays);
    let signal: f64 = (0..arrays).map(|n| alloc.get(j, k, n) * coeffs.chi(j, k, n)).sum();
    let mut own = 0.0;
    let mut other = sigma2;
    for l in 0..cells {
        for i in 0..users {
            let term: f64 = (0..arrays)
                .map(|n| {
                    let nu = alloc.get(l, i, n);
                    nu * nu * coeffs.zeta(j, k, l, i, n)
                })
                .sum();
            if l == j && i == k {
                own += term;
            } else {
                other += term;
            }
        }
        if l != j {
            let coherent: f64 = (0..arrays).map(|n| alloc.get(l, k, n) * coeffs.xi(j, k, l, n)).sum();
            other += coherent * coherent;
        }
    }
    (signal * signal, own, other)
}

/// Per-user SINR, flat in (cell, user) order.
pub fn closed_form_gamma(coeffs: &SinrCoefficients, alloc: &PowerAllocation, sigma2: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(coeffs.cells * coeffs.users);
    for j in 0..coeffs.cells {
        for k in 0..coeffs.users {
            let (num, own, other) = sinr_parts(coeffs, alloc, sigma2, j, k);
            out.push(num / (own + other));
        }
    }
    out
}

/// `(1 − K/τ_c)·log₂(1 + γ)` in b/s/Hz.
pub fn spectral_efficiency(gamma: f64, users_per_cell: usize, coherence_samples: usize) -> Result<f64> {
    if coherence_samples <= users_per_cell {
        return Err(invalid("system.coherence_samples", "must exceed the pilot length"));
    }
    if !(gamma >= 0.0) {
        return Err(invalid("gamma", format!("must be nonnegative, got {gamma}")));
    }
    Ok((1.0 - users_per_cell as f64 / coherence_samples as f64) * gamma.log2_1p())
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrReport {
    pub cells: usize,
    pub users: usize,
    /// Flat in (cell, user) order.
    pub gamma: Vec<f64>,
    pub se: Vec<f64>,
    pub sum_se: f64,
}

impl SinrReport {
    pub fn from_gamma(gamma: Vec<f64>, cells: usize, users: usize, coherence_samples: usize) -> Result<Self> {
        let se = gamma
            .iter()
            .map(|&g| spectral_efficiency(g, users, coherence_samples))
            .collect::<Result<Vec<_>>>()?;
        let sum_se = se.iter().sum();
        Ok(Self { cells, users, gamma, se, sum_se })
    }

    pub fn gamma_of(&self, cell: usize, user: usize) -> f64 {
        self.gamma[cell * self.users + user]
    }

    pub fn min_gamma(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_se(&self) -> f64 {
        self.se.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub const CSV_COLUMNS: [&'static str; 4] = ["cell", "user", "gamma", "se"];

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_COLUMNS)?;
        for j in 0..self.cells {
            for k in 0..self.users {
                let idx = j * self.users + k;
                w.write_record([j.to_string(), k.to_string(), self.gamma[idx].to_string(), self.se[idx].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates the closed-form SINR and SE for every user.
pub fn closed_form_sinr(
    coeffs: &SinrCoefficients,
    alloc: &PowerAllocation,
    sigma2: f64,
    coherence_samples: usize,
) -> Result<SinrReport> {
    if alloc.cells != coeffs.cells || alloc.users != coeffs.users || alloc.arrays != coeffs.arrays {
        return Err(Error::DimensionMismatch("allocation does not match coefficients".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid("system.sigma2", "must be positive"));
    }
    let gamma = closed_form_gamma(coeffs, alloc, sigma2);
    SinrReport::from_gamma(gamma, coeffs.cells, coeffs.users, coherence_samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn identity_set(cells: usize, users: usize, arrays: usize, m: usize, beta: f64) -> CovarianceSet {
        CovarianceSet::from_fn(cells, users, arrays, m, |_, _, _, _| {
            CMatrix::from_diagonal_element(m, m, Complex64::new(beta, 0.0))
        })
        .unwrap()
    }

    #[test]
    fn diagonal_algebra() {
        let (m, beta, rho) = (5, 0.7, 3.0);
        let set = identity_set(1, 1, 1, m, beta);
        let est = EstimationSet::build(&set, rho).unwrap();
        let c = compute_coefficients(&set, &est).unwrap();
        let d = beta + 1.0 / rho;
        let mf = m as f64;
        assert!((c.chi(0, 0, 0) - mf * beta * beta / d).abs() < 1e-13);
        assert!((c.zeta(0, 0, 0, 0, 0) - mf * beta.powi(3) / d).abs() < 1e-13);
        assert!((c.estimate_power(0, 0, 0) - mf * beta * beta / d).abs() < 1e-13);
    }

    #[test]
    fn zero_allocation_gives_zero_rates() {
        let set = identity_set(2, 2, 2, 3, 1.0);
        let est = EstimationSet::build(&set, 1.0).unwrap();
        let c = compute_coefficients(&set, &est).unwrap();
        let r = closed_form_sinr(&c, &PowerAllocation::zeros(2, 2, 2), 1.0, 200).unwrap();
        assert!(r.gamma.iter().all(|&g| g == 0.0));
        assert!(r.se.iter().all(|&s| s == 0.0));
        assert_eq!(r.sum_se, 0.0);
    }

    #[test]
    fn single_term_reduction() {
        let set = identity_set(1, 1, 1, 4, 0.9);
        let est = EstimationSet::build(&set, 2.0).unwrap();
        let c = compute_coefficients(&set, &est).unwrap();
        let (nu, sigma2) = (0.37, 0.4);
        let g = closed_form_gamma(&c, &PowerAllocation::uniform(1, 1, 1, nu), sigma2)[0];
        let (chi, zeta) = (c.chi(0, 0, 0), c.zeta(0, 0, 0, 0, 0));
        let expected = nu * nu * chi * chi / (nu * nu * zeta + sigma2);
        assert!((g - expected).abs() < 1e-14 * expected);
    }

    #[test]
    fn spectral_efficiency_values() {
        assert!((spectral_efficiency(1.0, 10, 200).unwrap() - 0.95).abs() < 1e-15);
        assert_eq!(spectral_efficiency(0.0, 10, 200).unwrap(), 0.0);
        assert!((spectral_efficiency(3.0, 10, 200).unwrap() - 1.9).abs() < 1e-15);
        assert!(spectral_efficiency(1.0, 10, 10).is_err());
    }

    #[test]
    fn non_centro_hermitian_covariances_flag_complex_xi() {
        // tr(R_a Q⁻¹ R_b) is real when Q = R_a + R_b + cI, so three cells are
        // needed before generic Hermitian matrices give a complex trace
        let mk = |seed: f64| {
            let v = crate::linalg::CVector::from_fn(3, |r, _| Complex64::new((seed * (r + 1) as f64).sin(), (seed + r as f64).cos()));
            let u = crate::linalg::CVector::from_fn(3, |r, _| Complex64::new((seed * 3.1 + r as f64).cos(), (seed * (r as f64 - 1.0)).sin()));
            &v * v.adjoint() + &u * u.adjoint() * Complex64::new(0.5, 0.0)
        };
        let set = CovarianceSet::from_fn(3, 1, 1, 3, |j, _, l, _| mk(1.0 + (3 * j + l) as f64)).unwrap();
        let est = EstimationSet::build(&set, 1.0).unwrap();
        let r = compute_coefficients(&set, &est);
        assert!(matches!(r, Err(Error::ImaginaryResidual { name: "xi", .. })), "{r:?}");
    }

    #[test]
    fn report_csv_has_documented_columns() {
        let r = SinrReport::from_gamma(vec![1.0, 3.0], 1, 2, 200).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "cell,user,gamma,se");
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split(',').count() == SinrReport::CSV_COLUMNS.len()));
    }

    #[test]
    fn allocation_rejects_negative_coefficients() {
        assert!(PowerAllocation::from_vec(1, 1, 2, vec![0.1, -0.2]).is_err());
        assert!(PowerAllocation::from_vec(1, 1, 2, vec![0.1]).is_err());
    }
}
