//! Equal-power and max-min power allocation.
//!
//! Max-min fairness is solved in epigraph form: maximize `γ` such that every
//! user's SINR is at least `γ`. For fixed `γ` the constraint set is a
//! second-order-cone program, so the optimum is found by bisection over `γ`
//! with [`solve_feasibility`] as the oracle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conic::{solve_feasibility, FeasibilityStatus, LinearConstraint, SocConstraint, SocProgram, SolverSettings, SparseRow};
use crate::error::{invalid, Error, Result};
use crate::estimation::EstimationSet;
use crate::sinr::{closed_form_gamma, sinr_parts, PowerAllocation, SinrCoefficients};

/// Per-cell power tolerance used by [`verify_power_constraint`].
pub const POWER_TOL: f64 = 1e-9;

/// Anything that knows `tr(W_li^n Q_li^n W_li^nᴴ)`.
pub trait EstimatePowers {
    fn dims(&self) -> (usize, usize, usize);
    fn estimate_power(&self, cell: usize, user: usize, array: usize) -> f64;
}

impl EstimatePowers for EstimationSet {
    fn dims(&self) -> (usize, usize, usize) {
        (self.cells(), self.users(), self.arrays())
    }

    fn estimate_power(&self, cell: usize, user: usize, array: usize) -> f64 {
        EstimationSet::estimate_power(self, cell, user, array)
    }
}

impl EstimatePowers for SinrCoefficients {
    fn dims(&self) -> (usize, usize, usize) {
        (self.cells(), self.users(), self.arrays())
    }

    fn estimate_power(&self, cell: usize, user: usize, array: usize) -> f64 {
        SinrCoefficients::estimate_power(self, cell, user, array)
    }
}

/// One scalar `ν = sqrt(L / Σ tr(W Q Wᴴ))` for every coefficient.
///
/// This fixes the network-wide power to `L`; an individual cell can exceed
/// its unit budget when the layout is not symmetric.
pub fn equal_power(est: &impl EstimatePowers) -> Result<PowerAllocation> {
    let (cells, users, arrays) = est.dims();
    let mut total = 0.0;
    for l in 0..cells {
        for i in 0..users {
            for n in 0..arrays {
                total += est.estimate_power(l, i, n);
            }
        }
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroDenominator("equal-power coefficient"));
    }
    Ok(PowerAllocation::uniform(cells, users, arrays, (cells as f64 / total).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerCheck {
    pub per_cell: Vec<f64>,
    pub total: f64,
    pub pass: bool,
}

/// `Σ_{i,n} ν² tr(W Q Wᴴ)` for every cell; passes iff all are at most
/// `1 + POWER_TOL`.
pub fn verify_power_constraint(alloc: &PowerAllocation, est: &impl EstimatePowers) -> Result<PowerCheck> {
    let (cells, users, arrays) = est.dims();
    if (alloc.cells(), alloc.users(), alloc.arrays()) != (cells, users, arrays) {
        return Err(Error::DimensionMismatch("allocation does not match estimation data".into()));
    }
    let per_cell: Vec<f64> = (0..cells)
        .map(|l| {
            let mut p = 0.0;
            for i in 0..users {
                for n in 0..arrays {
                    let nu = alloc.get(l, i, n);
                    p += nu * nu * est.estimate_power(l, i, n);
                }
            }
            p
        })
        .collect();
    let total = per_cell.iter().sum();
    let pass = per_cell.iter().all(|&p| p <= 1.0 + POWER_TOL);
    Ok(PowerCheck { per_cell, total, pass })
}

/// How the coherent pilot-contamination term enters the SINR cone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlackMode {
    /// `Σ_n ν_lk^n ξ_jk^{ln}` appears directly as a cone row. Exact for any
    /// sign of ξ.
    #[default]
    Eliminated,
    /// Slack variables `ϱ_jk^{ln} ≥ max(0, ν_lk^n ξ_jk^{ln})` and the row
    /// `Σ_n ϱ_jk^{ln}`. Exact only when every ξ is nonnegative.
    Explicit,
}

/// Data of the SINR and power cones for one target `γ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityProblemSpec {
    pub gamma: f64,
    pub sigma2: f64,
    pub mode: SlackMode,
    pub cells: usize,
    pub users: usize,
    pub arrays: usize,
    /// Per user (j, k) in flat order.
    pub users_data: Vec<UserCone>,
    /// Per cell: `(ν index, sqrt(tr(W Q Wᴴ)))`.
    pub power: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserCone {
    /// `(ν index, χ/√γ)`: the cone's right-hand side.
    pub signal: Vec<(usize, f64)>,
    /// `x̃`: `(ν index, √ζ)` for every (l, i, n).
    pub tilde: Vec<(usize, f64)>,
    /// `x̄`: for every `l ≠ j`, `(l, [(ν index, ξ)])` over n.
    pub bar: Vec<(usize, Vec<(usize, f64)>)>,
}

impl FeasibilityProblemSpec {
    pub fn num_nu(&self) -> usize {
        self.cells * self.users * self.arrays
    }

    pub fn num_slacks(&self) -> usize {
        match self.mode {
            SlackMode::Eliminated => 0,
            SlackMode::Explicit => self.cells * self.users * self.cells.saturating_sub(1) * self.arrays,
        }
    }

    /// Length of the stacked vector `x_jk = [x̃, x̄, σ]`.
    pub fn x_dim(&self) -> usize {
        self.num_nu() + self.cells.saturating_sub(1) + 1
    }

    fn nu_name(&self, idx: usize) -> String {
        let n = idx % self.arrays;
        let i = (idx / self.arrays) % self.users;
        let l = idx / (self.arrays * self.users);
        format!("nu[{l}][{i}][{n}]")
    }

    pub fn to_program(&self) -> SocProgram {
        let mut program = SocProgram::with_vars((0..self.num_nu()).map(|i| self.nu_name(i)));
        let sigma = self.sigma2.sqrt();
        for (jk, user) in self.users_data.iter().enumerate() {
            let (j, k) = (jk / self.users, jk % self.users);
            let mut rows: Vec<SparseRow> = user.tilde.iter().map(|&e| SparseRow::new(vec![e])).collect();
            for (l, terms) in &user.bar {
                let row = match self.mode {
                    SlackMode::Eliminated => terms.clone(),
                    SlackMode::Explicit => {
                        let mut row = Vec::with_capacity(terms.len());
                        for (n, &(nu, xi)) in terms.iter().enumerate() {
                            let rho = program.add_var(format!("rho[{j}][{k}][{l}][{n}]"));
                            program.linear.push(LinearConstraint {
                                label: format!("slack[{j}][{k}][{l}][{n}]"),
                                row: SparseRow::new(vec![(rho, 1.0), (nu, -xi)]),
                                offset: 0.0,
                            });
                            program.linear.push(LinearConstraint::nonnegative(format!("rho_sign[{j}][{k}][{l}][{n}]"), rho));
                            row.push((rho, 1.0));
                        }
                        row
                    }
                };
                rows.push(SparseRow::new(row));
            }
            rows.push(SparseRow::default());
            let mut offsets = vec![0.0; rows.len()];
            *offsets.last_mut().expect("sigma row") = sigma;
            program.cones.push(SocConstraint {
                label: format!("sinr[{j}][{k}]"),
                rows,
                offsets,
                rhs: SparseRow::new(user.signal.clone()),
                rhs_offset: 0.0,
            });
        }
        for (l, entries) in self.power.iter().enumerate() {
            program.cones.push(SocConstraint {
                label: format!("power[{l}]"),
                rows: entries.iter().map(|&e| SparseRow::new(vec![e])).collect(),
                offsets: vec![0.0; entries.len()],
                rhs: SparseRow::default(),
                rhs_offset: 1.0,
            });
        }
        for idx in 0..self.num_nu() {
            program.linear.push(LinearConstraint::nonnegative(format!("nu_sign[{idx}]"), idx));
        }
        program
    }
}

/// Assembles the cone data for target `gamma`.
pub fn build_feasibility_problem(
    coeffs: &SinrCoefficients,
    gamma: f64,
    sigma2: f64,
    mode: SlackMode,
) -> Result<FeasibilityProblemSpec> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid("gamma", format!("must be positive and finite, got {gamma}")));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid("system.sigma2", "must be positive"));
    }
    let (cells, users, arrays) = (coeffs.cells(), coeffs.users(), coeffs.arrays());
    let idx = |l: usize, i: usize, n: usize| (l * users + i) * arrays + n;
    let inv_sqrt_gamma = gamma.sqrt().recip();
    let mut users_data = Vec::with_capacity(cells * users);
    for j in 0..cells {
        for k in 0..users {
            let signal = (0..arrays).map(|n| (idx(j, k, n), coeffs.chi(j, k, n) * inv_sqrt_gamma)).collect();
            let mut tilde = Vec::with_capacity(cells * users * arrays);
            for l in 0..cells {
                for i in 0..users {
                    for n in 0..arrays {
                        tilde.push((idx(l, i, n), coeffs.zeta(j, k, l, i, n).max(0.0).sqrt()));
                    }
                }
            }
            let bar = (0..cells)
                .filter(|&l| l != j)
                .map(|l| (l, (0..arrays).map(|n| (idx(l, k, n), coeffs.xi(j, k, l, n))).collect()))
                .collect();
            users_data.push(UserCone { signal, tilde, bar });
        }
    }
    let power = (0..cells)
        .map(|l| {
            let mut row = Vec::with_capacity(users * arrays);
            for i in 0..users {
                for n in 0..arrays {
                    row.push((idx(l, i, n), coeffs.estimate_power(l, i, n).max(0.0).sqrt()));
                }
            }
            row
        })
        .collect();
    Ok(FeasibilityProblemSpec { gamma, sigma2, mode, cells, users, arrays, users_data, power })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectionParams {
    pub gamma_min: f64,
    /// `None` picks the bound from [`gamma_upper_bound`].
    pub gamma_max: Option<f64>,
    pub epsilon: f64,
    pub max_iters: usize,
    pub solver: SolverSettings,
    pub mode: SlackMode,
    /// Scale down users whose SINR exceeds the optimum so that every user
    /// ends at the common max-min value.
    pub equalize: bool,
}

impl Default for BisectionParams {
    fn default() -> Self {
        Self {
            gamma_min: 0.0,
            gamma_max: None,
            epsilon: 1e-3,
            max_iters: 200,
            solver: SolverSettings::default(),
            mode: SlackMode::Eliminated,
            equalize: true,
        }
    }
}

impl BisectionParams {
    /// Number of halvings needed to shrink `[lo, hi]` below ε.
    pub fn required_iterations(&self, gamma_max: f64) -> usize {
        let ratio = (gamma_max - self.gamma_min) / self.epsilon;
        if ratio <= 1.0 {
            0
        } else {
            ratio.log2().ceil() as usize
        }
    }

    fn validate(&self, gamma_max: f64) -> Result<()> {
        if !(self.gamma_min >= 0.0) {
            return Err(invalid("bisection.gamma_min", "must be nonnegative"));
        }
        if !(gamma_max > self.gamma_min) || !gamma_max.is_finite() {
            return Err(invalid("bisection.gamma_max", format!("must be finite and exceed gamma_min, got {gamma_max}")));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("bisection.epsilon", "must be positive"));
        }
        if self.max_iters < self.required_iterations(gamma_max) {
            return Err(invalid(
                "bisection.max_iters",
                format!("{} is below the {} halvings the bracket needs", self.max_iters, self.required_iterations(gamma_max)),
            ));
        }
        Ok(())
    }
}

/// Upper bound on the max-min SINR.
///
/// Cauchy–Schwarz with the unit cell budget gives
/// `(Σ_n ν χ)² ≤ Σ_n χ²/tr(W Q Wᴴ)`, and the denominator is at least σ².
/// The smallest per-user bound caps the common target.
pub fn gamma_upper_bound(coeffs: &SinrCoefficients, sigma2: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for j in 0..coeffs.cells() {
        for k in 0..coeffs.users() {
            let mut sum = 0.0;
            for n in 0..coeffs.arrays() {
                let p = coeffs.estimate_power(j, k, n);
                if p > 0.0 {
                    sum += coeffs.chi(j, k, n).powi(2) / p;
                }
            }
            best = best.min(sum / sigma2);
        }
    }
    if !(best > 0.0) || !best.is_finite() {
        return Err(Error::ZeroDenominator("max-min SINR upper bound"));
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub iteration: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_probe: f64,
    pub status: FeasibilityStatus,
    pub solver_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxMinResult {
    pub allocation: PowerAllocation,
    /// Largest target proven feasible.
    pub gamma_star: f64,
    /// Initial bracket top.
    pub gamma_max: f64,
    pub trace: Vec<BisectionStep>,
}

impl MaxMinResult {
    pub const TRACE_COLUMNS: [&'static str; 6] =
        ["iteration", "gamma_min", "gamma_max", "gamma_probe", "verdict", "solver_iterations"];

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::TRACE_COLUMNS)?;
        for s in &self.trace {
            w.write_record([
                s.iteration.to_string(),
                s.gamma_min.to_string(),
                s.gamma_max.to_string(),
                s.gamma_probe.to_string(),
                status_name(s.status).to_string(),
                s.solver_iterations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn status_name(status: FeasibilityStatus) -> &'static str {
    match status {
        FeasibilityStatus::Feasible => "feasible",
        FeasibilityStatus::Infeasible => "infeasible",
        FeasibilityStatus::NumericalFailure => "numerical-failure",
    }
}

/// Uniform coefficients using half of the tightest cell budget.
fn interior_start(coeffs: &SinrCoefficients) -> PowerAllocation {
    let (cells, users, arrays) = (coeffs.cells(), coeffs.users(), coeffs.arrays());
    let mut worst = 0.0_f64;
    for l in 0..cells {
        let mut p = 0.0;
        for i in 0..users {
            for n in 0..arrays {
                p += coeffs.estimate_power(l, i, n);
            }
        }
        worst = worst.max(p);
    }
    let value = if worst > 0.0 { (0.5 / worst).sqrt() } else { 0.0 };
    PowerAllocation::uniform(cells, users, arrays, value)
}

fn rescale_cells(alloc: &mut PowerAllocation, coeffs: &SinrCoefficients) -> Result<()> {
    let check = verify_power_constraint(alloc, coeffs)?;
    let (users, arrays) = (alloc.users(), alloc.arrays());
    for (l, &p) in check.per_cell.iter().enumerate() {
        if p > 1.0 {
            let c = p.sqrt().recip() * (1.0 - f64::EPSILON);
            for i in 0..users {
                for n in 0..arrays {
                    let v = alloc.get(l, i, n) * c;
                    alloc.set(l, i, n, v);
                }
            }
        }
    }
    Ok(())
}

const EQUALIZE_REL_TOL: f64 = 1e-10;
const EQUALIZE_MAX_ROUNDS: usize = 100_000;

/// Lowers every user above the current minimum SINR down to it.
///
/// Scaling user (j, k)'s coefficients by `c` maps its SINR to
/// `c²S / (c²a + b)`, so `c² = γ b / (S − γ a)` hits target `γ` while the
/// others see only less interference. Repeating the simultaneous update
/// converges to a common SINR.
fn equalize(alloc: &mut PowerAllocation, coeffs: &SinrCoefficients, sigma2: f64) {
    let (cells, users, arrays) = (coeffs.cells(), coeffs.users(), coeffs.arrays());
    for _ in 0..EQUALIZE_MAX_ROUNDS {
        let gamma = closed_form_gamma(coeffs, alloc, sigma2);
        let target = gamma.iter().copied().fold(f64::INFINITY, f64::min);
        let top = gamma.iter().copied().fold(0.0, f64::max);
        if !(target > 0.0) || top - target <= EQUALIZE_REL_TOL * target {
            return;
        }
        let mut scale = vec![1.0; cells * users];
        for j in 0..cells {
            for k in 0..users {
                let g = gamma[j * users + k];
                if g - target <= EQUALIZE_REL_TOL * target {
                    continue;
                }
                let (s, a, b) = sinr_parts(coeffs, alloc, sigma2, j, k);
                let denom = s - target * a;
                if denom > 0.0 {
                    scale[j * users + k] = (target * b / denom).sqrt().min(1.0);
                }
            }
        }
        for j in 0..cells {
            for k in 0..users {
                let c = scale[j * users + k];
                for n in 0..arrays {
                    let v = alloc.get(j, k, n) * c;
                    alloc.set(j, k, n, v);
                }
            }
        }
    }
    log::warn!("SINR equalization stopped after {EQUALIZE_MAX_ROUNDS} rounds");
}

/// Max-min SINR allocation by bisection over `γ`.
///
/// The returned allocation meets every cell budget exactly (`≤ 1`), and its
/// smallest closed-form SINR is at least `gamma_star` up to solver
/// tolerance.
pub fn maxmin_power(coeffs: &SinrCoefficients, sigma2: f64, params: &BisectionParams) -> Result<MaxMinResult> {
    if !(sigma2 > 0.0) {
        return Err(invalid("system.sigma2", "must be positive"));
    }
    let gamma_max0 = match params.gamma_max {
        Some(g) => g,
        None => gamma_upper_bound(coeffs, sigma2)?,
    };
    params.validate(gamma_max0)?;

    let start = interior_start(coeffs);
    let (mut lo, mut hi) = (params.gamma_min, gamma_max0);
    let mut witness = start.clone();
    let mut trace = Vec::new();

    let probe = |gamma: f64, iteration: usize, lo: f64, hi: f64| -> Result<(FeasibilityStatus, Option<Vec<f64>>, usize)> {
        let spec = build_feasibility_problem(coeffs, gamma, sigma2, params.mode)?;
        let mut program = spec.to_program();
        let mut x0 = start.as_slice().to_vec();
        x0.resize(program.num_vars(), 0.0);
        program.start = Some(x0);
        let verdict = solve_feasibility(&program, &params.solver)?;
        if verdict.status == FeasibilityStatus::NumericalFailure {
            return Err(Error::Bisection {
                gamma_min: lo,
                gamma_max: hi,
                iteration,
                source: Box::new(Error::SolverFailure { iterations: verdict.iterations, gap: verdict.gap }),
            });
        }
        Ok((verdict.status, verdict.point, verdict.iterations))
    };

    if lo > 0.0 {
        let (status, point, its) = probe(lo, 0, lo, hi)?;
        trace.push(BisectionStep { iteration: 0, gamma_min: lo, gamma_max: hi, gamma_probe: lo, status, solver_iterations: its });
        match point {
            Some(p) => witness = nu_part(&p, coeffs)?,
            None => return Err(invalid("bisection.gamma_min", format!("target {lo} is infeasible"))),
        }
    }

    let mut iteration = 0;
    while hi - lo >= params.epsilon {
        iteration += 1;
        if iteration > params.max_iters {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (status, point, its) = probe(mid, iteration, lo, hi)?;
        trace.push(BisectionStep { iteration, gamma_min: lo, gamma_max: hi, gamma_probe: mid, status, solver_iterations: its });
        log::debug!("bisection {iteration}: [{lo:.6}, {hi:.6}] probe {mid:.6} -> {}", status_name(status));
        match point {
            Some(p) => {
                witness = nu_part(&p, coeffs)?;
                lo = mid;
            }
            None => hi = mid,
        }
    }

    rescale_cells(&mut witness, coeffs)?;
    if params.equalize && lo > 0.0 {
        equalize(&mut witness, coeffs, sigma2);
    }
    Ok(MaxMinResult { allocation: witness, gamma_star: lo, gamma_max: gamma_max0, trace })
}

/// Clamps the ν block of a solver point to a valid allocation.
fn nu_part(point: &[f64], coeffs: &SinrCoefficients) -> Result<PowerAllocation> {
    let (cells, users, arrays) = (coeffs.cells(), coeffs.users(), coeffs.arrays());
    let nu = point[..cells * users * arrays].iter().map(|v| v.max(0.0)).collect();
    PowerAllocation::from_vec(cells, users, arrays, nu)
}
