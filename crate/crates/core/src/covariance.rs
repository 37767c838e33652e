//! Channel covariance matrices from the one-ring scattering model.
//!
//! For a uniform linear array with spacing `D` wavelengths and scatterers
//! spread uniformly over `[θ − Δ, θ + Δ]` around the user azimuth `θ`,
//!
//! ```text
//! R[m, p] = β / (2Δ) ∫_{θ−Δ}^{θ+Δ} exp(−i·2π·D·(m − p)·sin α) dα
//! ```
//!
//! `R` is Hermitian Toeplitz, so only the `M − 1` off-diagonal lags are
//! integrated. The diagonal is `β` exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_defect, hermitian_eigenvalues, real_trace, CMatrix};
use crate::quadrature;
use crate::scenario::NetworkScenario;

/// Relative PSD tolerance: eigenvalues may dip to `-PSD_REL_TOL · trace`.
pub const PSD_REL_TOL: f64 = 1e-10;

const QUAD_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneRingParams {
    /// Δ, half-width of the angular spread in radians.
    pub angular_spread: f64,
    /// D, antenna spacing in carrier wavelengths.
    pub antenna_spacing: f64,
    pub pathloss_exponent: f64,
    /// Gain at the 1 m reference distance, dB.
    pub pathloss_ref_db: f64,
}

impl Default for OneRingParams {
    /// Δ = 10°, D = λ/2, exponent 3.76, and a reference gain that puts
    /// the 700 m cell-edge SNR at 0 dB for σ² = 1.
    fn default() -> Self {
        Self::with_edge_snr(0.0, 700.0, 1.0, 10f64.to_radians(), 0.5, 3.76)
    }
}

impl OneRingParams {
    /// Chooses `pathloss_ref_db` so that `β(edge_distance) / σ²` equals
    /// `edge_snr_db`.
    pub fn with_edge_snr(
        edge_snr_db: f64,
        edge_distance: f64,
        sigma2: f64,
        angular_spread: f64,
        antenna_spacing: f64,
        pathloss_exponent: f64,
    ) -> Self {
        let pathloss_ref_db =
            edge_snr_db + 10.0 * sigma2.log10() + 10.0 * pathloss_exponent * edge_distance.log10();
        Self {
            angular_spread,
            antenna_spacing,
            pathloss_exponent,
            pathloss_ref_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.angular_spread > 0.0 && self.angular_spread <= std::f64::consts::FRAC_PI_2) {
            return Err(invalid("propagation.angular_spread_deg", "must lie in (0°, 90°]"));
        }
        if !(self.antenna_spacing > 0.0 && self.antenna_spacing.is_finite()) {
            return Err(invalid("propagation.antenna_spacing", "must be positive"));
        }
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent > 0.0) {
            return Err(invalid("propagation.pathloss_exponent", "must be positive"));
        }
        if !self.pathloss_ref_db.is_finite() {
            return Err(invalid("propagation.pathloss_ref_db", "must be finite"));
        }
        Ok(())
    }
}

/// Large-scale gain `β = 10^(ref_db/10) · d^(−exponent)`.
pub fn path_loss(distance: f64, params: &OneRingParams) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(invalid("distance", format!("must be positive, got {distance}")));
    }
    Ok(10f64.powf(params.pathloss_ref_db / 10.0) * distance.powf(-params.pathloss_exponent))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    pub entries: CMatrix,
    pub beta: f64,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Checks Hermitian symmetry and `λ_min ≥ −PSD_REL_TOL · trace`.
    pub fn check_psd(&self) -> Result<()> {
        let trace = real_trace(&self.entries);
        let scale = trace.abs().max(f64::MIN_POSITIVE);
        let defect = hermitian_defect(&self.entries);
        if defect > 1e-12 * scale {
            return Err(Error::NotPsd { min_eigenvalue: f64::NAN, threshold: defect });
        }
        let threshold = -PSD_REL_TOL * trace.max(0.0);
        let min = hermitian_eigenvalues(&self.entries).first().copied().unwrap_or(0.0);
        if min < threshold {
            return Err(Error::NotPsd { min_eigenvalue: min, threshold });
        }
        Ok(())
    }
}

/// Normalized correlation `(1/2Δ) ∫ exp(−i2πDδ sin α) dα` at integer lag `δ`.
fn ring_correlation(lag: f64, azimuth: f64, params: &OneRingParams) -> Result<Complex64> {
    let spread = params.angular_spread;
    let k = -2.0 * std::f64::consts::PI * params.antenna_spacing * lag;
    let integral = quadrature::integrate(
        |alpha| Complex64::from_polar(1.0, k * alpha.sin()),
        azimuth - spread,
        azimuth + spread,
        QUAD_TOL * 2.0 * spread,
    )?;
    Ok(integral / (2.0 * spread))
}

pub fn one_ring_covariance(
    azimuth: f64,
    beta: f64,
    params: &OneRingParams,
    antennas: usize,
) -> Result<CovarianceMatrix> {
    if antennas == 0 {
        return Err(invalid("antennas", "must be at least 1"));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    params.validate()?;
    let lags = (1..antennas)
        .map(|lag| ring_correlation(lag as f64, azimuth, params))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = CMatrix::zeros(antennas, antennas);
    for m in 0..antennas {
        entries[(m, m)] = Complex64::new(beta, 0.0);
        for p in m + 1..antennas {
            let v = lags[p - m - 1] * beta;
            // entry (m, p) has lag m − p < 0, the conjugate of lag p − m
            entries[(m, p)] = v.conj();
            entries[(p, m)] = v;
        }
    }
    Ok(CovarianceMatrix { entries, beta })
}

/// Every `R_{li}^{jn}`: the covariance of the channel from user `i` of cell
/// `l` to array `n` of cell `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSet {
    cells: usize,
    users: usize,
    arrays: usize,
    antennas: usize,
    matrices: Vec<CovarianceMatrix>,
}

impl CovarianceSet {
    /// Builds a set from arbitrary matrices, validating shape, Hermitian
    /// symmetry and positive semi-definiteness. `β` is taken as `trace/M`.
    pub fn from_fn<F>(cells: usize, users: usize, arrays: usize, antennas: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize, usize) -> CMatrix,
    {
        if cells == 0 || users == 0 || arrays == 0 || antennas == 0 {
            return Err(invalid("dimensions", "all counts must be at least 1"));
        }
        let mut matrices = Vec::with_capacity(cells * cells * users * arrays);
        for j in 0..cells {
            for n in 0..arrays {
                for l in 0..cells {
                    for i in 0..users {
                        let entries = f(j, n, l, i);
                        if entries.nrows() != antennas || entries.ncols() != antennas {
                            return Err(Error::DimensionMismatch(format!(
                                "R[{j},{n},{l},{i}] is {}x{}, expected {antennas}x{antennas}",
                                entries.nrows(),
                                entries.ncols()
                            )));
                        }
                        let beta = real_trace(&entries) / antennas as f64;
                        let matrix = CovarianceMatrix { entries, beta };
                        matrix.check_psd()?;
                        matrices.push(matrix);
                    }
                }
            }
        }
        Ok(Self { cells, users, arrays, antennas, matrices })
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

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    fn index(&self, cell: usize, array: usize, user_cell: usize, user: usize) -> usize {
        debug_assert!(cell < self.cells && array < self.arrays);
        debug_assert!(user_cell < self.cells && user < self.users);
        ((cell * self.arrays + array) * self.cells + user_cell) * self.users + user
    }

    /// `R_{user_cell,user}^{cell,array}`.
    pub fn get(&self, cell: usize, array: usize, user_cell: usize, user: usize) -> &CovarianceMatrix {
        &self.matrices[self.index(cell, array, user_cell, user)]
    }

    /// Matrices in storage order `(j, n, l, i)`, innermost last.
    pub fn iter(&self) -> impl Iterator<Item = &CovarianceMatrix> {
        self.matrices.iter()
    }

    /// Writes the set in the text container format:
    ///
    /// ```text
    /// dmimo-covariance 1
    /// <L> <K> <N> <M>
    /// <j> <n> <l> <i> <beta>        # one header per matrix, order (j, n, l, i)
    /// <re> <im> <re> <im> ...       # M rows, row-major, M complex pairs each
    /// ```
    ///
    /// Floats use the shortest round-trip representation, so a dump followed
    /// by [`CovarianceSet::read_text`] is bit-exact.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dmimo-covariance 1")?;
        writeln!(out, "{} {} {} {}", self.cells, self.users, self.arrays, self.antennas)?;
        let mut line = String::new();
        for j in 0..self.cells {
            for n in 0..self.arrays {
                for l in 0..self.cells {
                    for i in 0..self.users {
                        let r = self.get(j, n, l, i);
                        writeln!(out, "{j} {n} {l} {i} {}", r.beta)?;
                        for row in 0..self.antennas {
                            line.clear();
                            for col in 0..self.antennas {
                                let z = r.entries[(row, col)];
                                if col > 0 {
                                    line.push(' ');
                                }
                                let _ = write!(line, "{} {}", z.re, z.im);
                            }
                            writeln!(out, "{line}")?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let bad = |reason: String| Error::Parse { what: "covariance dump", reason };
        let mut lines = input.lines();
        let mut next = move || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse { what: "covariance dump", reason: "unexpected end of input".into() })?
                .map_err(Error::from)
        };
        let magic = next()?;
        if magic.trim() != "dmimo-covariance 1" {
            return Err(bad(format!("unknown header `{magic}`")));
        }
        let dims = parse_numbers::<usize>(&next()?).map_err(bad)?;
        let [cells, users, arrays, antennas] = dims[..] else {
            return Err(bad("dimension line must hold L K N M".into()));
        };
        if cells == 0 || users == 0 || arrays == 0 || antennas == 0 {
            return Err(bad("dimensions must be positive".into()));
        }
        let mut matrices = Vec::with_capacity(cells * cells * users * arrays);
        for j in 0..cells {
            for n in 0..arrays {
                for l in 0..cells {
                    for i in 0..users {
                        let header = next()?;
                        let fields: Vec<&str> = header.split_whitespace().collect();
                        let expected = [j, n, l, i].map(|v| v.to_string());
                        if fields.len() != 5 || fields[..4] != expected {
                            return Err(bad(format!("expected header for ({j},{n},{l},{i}), got `{header}`")));
                        }
                        let beta: f64 = fields[4].parse().map_err(|e| bad(format!("beta: {e}")))?;
                        let mut entries = CMatrix::zeros(antennas, antennas);
                        for row in 0..antennas {
                            let vals = parse_numbers::<f64>(&next()?).map_err(bad)?;
                            if vals.len() != 2 * antennas {
                                return Err(bad(format!("row {row} of ({j},{n},{l},{i}) has {} values", vals.len())));
                            }
                            for col in 0..antennas {
                                entries[(row, col)] = Complex64::new(vals[2 * col], vals[2 * col + 1]);
                            }
                        }
                        matrices.push(CovarianceMatrix { entries, beta });
                    }
                }
            }
        }
        Ok(Self { cells, users, arrays, antennas, matrices })
    }
}

fn parse_numbers<T: std::str::FromStr>(line: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    line.split_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|e| format!("`{tok}`: {e}")))
        .collect()
}

/// One-ring covariance for every (array, user) pair of the scenario.
pub fn build_covariance_set(scenario: &NetworkScenario, params: &OneRingParams) -> Result<CovarianceSet> {
    params.validate()?;
    let cells = scenario.cells();
    let users = scenario.users_per_cell();
    let arrays = scenario.arrays_per_cell();
    let antennas = scenario.antennas();
    let total = cells * cells * users * arrays;
    let matrices = (0..total)
        .into_par_iter()
        .map(|flat| {
            let i = flat % users;
            let l = (flat / users) % cells;
            let n = (flat / (users * cells)) % arrays;
            let j = flat / (users * cells * arrays);
            let (distance, azimuth) = scenario.geometry_of(j, n, l, i)?;
            let beta = path_loss(distance, params)?;
            one_ring_covariance(azimuth, beta, params, antennas)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CovarianceSet { cells, users, arrays, antennas, matrices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_reference_network, Dimensions, GeometryParams, LinkScalars};

    fn params() -> OneRingParams {
        OneRingParams::default()
    }

    #[test]
    fn path_loss_reference_and_inverse_square() {
        let p = OneRingParams { pathloss_ref_db: 0.0, pathloss_exponent: 3.76, ..params() };
        assert!((path_loss(1.0, &p).unwrap() - 1.0).abs() < 1e-15);
        let p = OneRingParams { pathloss_ref_db: 0.0, pathloss_exponent: 2.0, ..params() };
        assert!((path_loss(2.0, &p).unwrap() - 0.25).abs() < 1e-15);
        assert!(path_loss(0.0, &p).is_err());
        assert!(path_loss(-3.0, &p).is_err());
    }

    #[test]
    fn path_loss_ratio_matches_log_domain() {
        let p = params();
        let ratio = path_loss(300.0, &p).unwrap() / path_loss(700.0, &p).unwrap();
        let log_ratio = 3.76 * (700f64 / 300.0).ln();
        assert!((ratio.ln() - log_ratio).abs() < 1e-12);
        assert!(((700f64 / 300.0).powf(3.76) - ratio).abs() / ratio < 1e-12);
    }

    #[test]
    fn default_edge_snr_is_zero_db() {
        assert!((path_loss(700.0, &params()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_channel() {
        let r = one_ring_covariance(0.3, 2.5, &params(), 1).unwrap();
        assert_eq!(r.entries.shape(), (1, 1));
        assert_eq!(r.entries[(0, 0)], Complex64::new(2.5, 0.0));
    }

    #[test]
    fn vanishing_spread_is_rank_one_all_ones() {
        let p = OneRingParams { angular_spread: 1e-8, ..params() };
        let r = one_ring_covariance(0.0, 1.7, &p, 6).unwrap();
        for z in r.entries.iter() {
            assert!((z - Complex64::new(1.7, 0.0)).norm() < 1e-12);
        }
        let ev = hermitian_eigenvalues(&r.entries);
        assert!((ev[5] - 6.0 * 1.7).abs() < 1e-9);
        assert!(ev[..5].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn hermitian_psd_with_exact_trace() {
        for &az in &[-1.2, -0.3, 0.0, 0.7, 2.9] {
            let r = one_ring_covariance(az, 0.8, &params(), 12).unwrap();
            assert_eq!(hermitian_defect(&r.entries), 0.0);
            r.check_psd().unwrap();
            assert!((real_trace(&r.entries) - 12.0 * 0.8).abs() <= 1e-12 * 12.0 * 0.8);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(one_ring_covariance(0.0, 1.0, &params(), 0).is_err());
        assert!(one_ring_covariance(0.0, 0.0, &params(), 2).is_err());
        let p = OneRingParams { angular_spread: 2.0, ..params() };
        assert!(one_ring_covariance(0.0, 1.0, &p, 2).is_err());
    }

    fn small_set() -> CovarianceSet {
        let s = build_reference_network(
            &GeometryParams::default(),
            Dimensions { cells: 3, users_per_cell: 2, arrays_per_cell: 2, antennas_per_array: 3 },
            LinkScalars { coherence_samples: 200, rho_tr: 10.0, sigma2: 1.0 },
        )
        .unwrap();
        build_covariance_set(&s, &params()).unwrap()
    }

    #[test]
    fn text_dump_round_trips_bit_exactly() {
        let set = small_set();
        let mut buf = Vec::new();
        set.write_text(&mut buf).unwrap();
        let back = CovarianceSet::read_text(buf.as_slice()).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let set = small_set();
        let mut buf = Vec::new();
        set.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(CovarianceSet::read_text(cut.as_bytes()), Err(Error::Parse { .. })));
        assert!(CovarianceSet::read_text("nope\n".as_bytes()).is_err());
    }

    #[test]
    fn from_fn_rejects_indefinite_matrix() {
        let err = CovarianceSet::from_fn(1, 1, 1, 2, |_, _, _, _| {
            CMatrix::from_row_slice(2, 2, &[
                Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0),
                Complex64::new(2.0, 0.0), Complex64::new(1.0, 0.0),
            ])
        })
        .unwrap_err();
        assert!(matches!(err, Error::NotPsd { .. }));
    }
}
