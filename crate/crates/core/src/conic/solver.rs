//! Phase-I barrier method.
//!
//! With `z = (v, s)` the solver minimizes `s` subject to
//! `‖A v + b‖ ≤ cᵀv + d + s` for every cone and `rᵀv + o + s ≥ 0` for every
//! linear row, following the central path of
//! `τ·s − Σ log((t − ‖u‖)(t + ‖u‖)) − Σ log g`. The barrier parameter is
//! `θ = 2·#cones + #linear`, so a centred point at `τ` has `s − s* ≤ θ/τ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::program::{SocProgram, SparseRow};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_feas: f64,
    /// Total Newton steps across all centring phases.
    pub max_iters: usize,
    /// Factor by which `τ` grows between centring phases.
    pub mu: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol_feas: 1e-7, max_iters: 200, mu: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityVerdict {
    pub status: FeasibilityStatus,
    /// Witness, present when feasible.
    pub point: Option<Vec<f64>>,
    /// Final slack on the normalized program.
    pub slack: f64,
    /// Largest violation of the slack-free constraints at the final
    /// iterate, each constraint scaled to unit largest coefficient.
    pub max_violation: f64,
    /// Bound on `s − s*` at exit.
    pub gap: f64,
    pub iterations: usize,
}

impl FeasibilityVerdict {
    pub fn is_feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }
}

struct Cone {
    support: Vec<usize>,
    rows: Vec<Vec<(usize, f64)>>,
    offsets: Vec<f64>,
    rhs: Vec<(usize, f64)>,
    rhs_offset: f64,
}

struct Linear {
    row: Vec<(usize, f64)>,
    offset: f64,
}

struct Barrier {
    dim: usize,
    cones: Vec<Cone>,
    linear: Vec<Linear>,
}

fn with_slack(row: &SparseRow, slack: usize) -> Vec<(usize, f64)> {
    let mut out = row.entries.clone();
    out.push((slack, 1.0));
    out
}

fn dot(row: &[(usize, f64)], z: &[f64]) -> f64 {
    row.iter().map(|&(i, c)| c * z[i]).sum()
}

impl Barrier {
    fn new(program: &SocProgram) -> Self {
        let slack = program.num_vars();
        let cones = program
            .cones
            .iter()
            .map(|c| {
                let mut support: Vec<usize> =
                    c.rows.iter().chain(std::iter::once(&c.rhs)).flat_map(|r| r.entries.iter().map(|&(i, _)| i)).collect();
                support.push(slack);
                support.sort_unstable();
                support.dedup();
                let local = |row: &[(usize, f64)]| -> Vec<(usize, f64)> {
                    row.iter().map(|&(i, v)| (support.binary_search(&i).expect("index in support"), v)).collect()
                };
                Cone {
                    rows: c.rows.iter().map(|r| local(&r.entries)).collect(),
                    offsets: c.offsets.clone(),
                    rhs: local(&with_slack(&c.rhs, slack)),
                    rhs_offset: c.rhs_offset,
                    support,
                }
            })
            .collect();
        let linear = program.linear.iter().map(|l| Linear { row: with_slack(&l.row, slack), offset: l.offset }).collect();
        Self { dim: slack + 1, cones, linear }
    }

    fn theta(&self) -> f64 {
        (2 * self.cones.len() + self.linear.len()) as f64
    }

    /// Gathers the cone's variables, then returns `(t, u)`.
    fn cone_terms(cone: &Cone, z: &[f64], local: &mut Vec<f64>, u: &mut Vec<f64>) -> f64 {
        local.clear();
        local.extend(cone.support.iter().map(|&i| z[i]));
        u.clear();
        u.extend(cone.rows.iter().zip(&cone.offsets).map(|(r, b)| dot(r, local) + b));
        dot(&cone.rhs, local) + cone.rhs_offset
    }

    /// Barrier value, or `None` outside the domain.
    fn value(&self, z: &[f64]) -> Option<f64> {
        let mut local = Vec::new();
        let mut u = Vec::new();
        let mut total = 0.0;
        for cone in &self.cones {
            let t = Self::cone_terms(cone, z, &mut local, &mut u);
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let f = (t - norm) * (t + norm);
            if !(t > norm && f > 0.0) {
                return None;
            }
            total -= f.ln();
        }
        for lin in &self.linear {
            let g = dot(&lin.row, z) + lin.offset;
            if !(g > 0.0) {
                return None;
            }
            total -= g.ln();
        }
        Some(total)
    }

    /// Adds barrier gradient and Hessian at an interior `z`.
    fn derivatives(&self, z: &[f64], grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        let mut local = Vec::new();
        let mut u = Vec::new();
        let mut w = Vec::new();
        for cone in &self.cones {
            let t = Self::cone_terms(cone, z, &mut local, &mut u);
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let f = (t - norm) * (t + norm);
            // w = ∇f = 2tĉ − 2Âᵀu
            w.clear();
            w.resize(cone.support.len(), 0.0);
            for &(i, c) in &cone.rhs {
                w[i] += 2.0 * t * c;
            }
            for (row, &ur) in cone.rows.iter().zip(&u) {
                for &(i, c) in row {
                    w[i] -= 2.0 * ur * c;
                }
            }
            let inv_f = 1.0 / f;
            let two_over_f = 2.0 * inv_f;
            for (a, &ga) in cone.support.iter().zip(&w) {
                grad[*a] -= ga * inv_f;
            }
            for (p, &gp) in cone.support.iter().zip(&w) {
                let scaled = gp * inv_f * inv_f;
                for (q, &gq) in cone.support.iter().zip(&w) {
                    hess[(*p, *q)] += scaled * gq;
                }
            }
            for row in &cone.rows {
                for &(p, cp) in row {
                    for &(q, cq) in row {
                        hess[(cone.support[p], cone.support[q])] += two_over_f * cp * cq;
                    }
                }
            }
            for &(p, cp) in &cone.rhs {
                for &(q, cq) in &cone.rhs {
                    hess[(cone.support[p], cone.support[q])] -= two_over_f * cp * cq;
                }
            }
        }
        for lin in &self.linear {
            let g = dot(&lin.row, z) + lin.offset;
            let inv = 1.0 / g;
            for &(p, cp) in &lin.row {
                grad[p] -= cp * inv;
                for &(q, cq) in &lin.row {
                    hess[(p, q)] += cp * cq * inv * inv;
                }
            }
        }
    }
}

/// Solves `hess·x = rhs`, adding diagonal regularization when the
/// factorization fails.
fn newton_direction(hess: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs())).max(1e-300);
    let mut delta = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        if delta > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += delta;
            }
        }
        if let Some(chol) = h.cholesky() {
            let x = chol.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        delta = if delta == 0.0 { scale * 1e-14 } else { delta * 100.0 };
    }
    None
}

const CENTERING_TOL: f64 = 1e-7;
const MAX_CENTERING_STEPS: usize = 50;
const ARMIJO: f64 = 0.01;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-16;

/// Decides whether `program` has a point violating no constraint by more
/// than `settings.tol_feas`.
///
/// Returns an error only for malformed programs; solver trouble is
/// reported through [`FeasibilityStatus::NumericalFailure`].
pub fn solve_feasibility(program: &SocProgram, settings: &SolverSettings) -> Result<FeasibilityVerdict> {
    program.validate()?;
    let normalized = program.normalized();
    let n = program.num_vars();
    let v0 = program.start.clone().unwrap_or_else(|| vec![0.0; n]);
    let finish = |status, v: Vec<f64>, slack, gap, iterations| {
        let max_violation = if program.cones.is_empty() && program.linear.is_empty() {
            0.0
        } else {
            normalized.max_violation(&v)
        };
        let point = (status == FeasibilityStatus::Feasible).then_some(v);
        FeasibilityVerdict { status, point, slack, max_violation, gap, iterations }
    };

    let initial = normalized.max_violation(&v0);
    if !(initial >= 0.0) {
        // strictly feasible start, or nothing to satisfy
        return Ok(finish(FeasibilityStatus::Feasible, v0, initial.min(0.0), 0.0, 0));
    }

    let barrier = Barrier::new(&normalized);
    let theta = barrier.theta();
    let dim = barrier.dim;
    let mut z: Vec<f64> = v0;
    z.push(initial + 1.0);
    let mut tau = theta / z[n].max(1.0);
    let mut iterations = 0;
    let tol = settings.tol_feas;

    let objective = |z: &[f64], tau: f64| barrier.value(z).map(|b| tau * z[n] + b);

    loop {
        // centring
        for _ in 0..MAX_CENTERING_STEPS {
            if iterations >= settings.max_iters {
                let gap = theta / tau;
                return Ok(finish(FeasibilityStatus::NumericalFailure, z[..n].to_vec(), z[n], gap, iterations));
            }
            let mut grad = DVector::zeros(dim);
            let mut hess = DMatrix::zeros(dim, dim);
            grad[n] = tau;
            barrier.derivatives(&z, &mut grad, &mut hess);
            let Some(step) = newton_direction(hess, &(-&grad)) else {
                let gap = theta / tau;
                log::debug!("newton system unsolvable at tau={tau:.3e}");
                return Ok(finish(FeasibilityStatus::NumericalFailure, z[..n].to_vec(), z[n], gap, iterations));
            };
            iterations += 1;
            let slope = grad.dot(&step);
            let decrement = -slope;
            if decrement / 2.0 <= CENTERING_TOL {
                break;
            }
            let current = objective(&z, tau).expect("iterate stays interior");
            let mut alpha = 1.0;
            let mut trial = z.clone();
            let accepted = loop {
                for (t, (zi, di)) in trial.iter_mut().zip(z.iter().zip(step.iter())) {
                    *t = zi + alpha * di;
                }
                if let Some(value) = objective(&trial, tau) {
                    if value <= current + ARMIJO * alpha * slope {
                        break true;
                    }
                }
                alpha *= BACKTRACK;
                if alpha < MIN_STEP {
                    break false;
                }
            };
            let size = step.iter().fold(0.0_f64, |m, d| m.max(d.abs())) * alpha;
            let scale = z.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            if !accepted || size <= 1e-15 * scale {
                break;
            }
            std::mem::swap(&mut z, &mut trial);
            if z[n] < 0.0 {
                return Ok(finish(FeasibilityStatus::Feasible, z[..n].to_vec(), z[n], theta / tau, iterations));
            }
        }
        let gap = theta / tau;
        if z[n] - gap > tol {
            return Ok(finish(FeasibilityStatus::Infeasible, z[..n].to_vec(), z[n], gap, iterations));
        }
        if gap <= tol / 10.0 {
            let status = if z[n] <= tol { FeasibilityStatus::Feasible } else { FeasibilityStatus::Infeasible };
            return Ok(finish(status, z[..n].to_vec(), z[n], gap, iterations));
        }
        tau *= settings.mu;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{LinearConstraint, SocConstraint};
    use proptest::prelude::*;

    fn norm_le(label: &str, index: usize, bound: f64) -> SocConstraint {
        SocConstraint {
            label: label.into(),
            rows: vec![SparseRow::new(vec![(index, 1.0)])],
            offsets: vec![0.0],
            rhs: SparseRow::default(),
            rhs_offset: bound,
        }
    }

    fn at_least(label: &str, index: usize, bound: f64) -> LinearConstraint {
        LinearConstraint { label: label.into(), row: SparseRow::new(vec![(index, 1.0)]), offset: -bound }
    }

    #[test]
    fn one_dimensional_feasible() {
        let mut p = SocProgram::with_vars(["v".to_string()]);
        p.cones.push(norm_le("norm", 0, 1.0));
        p.linear.push(at_least("lower", 0, 0.5));
        let verdict = solve_feasibility(&p, &SolverSettings::default()).unwrap();
        assert!(verdict.is_feasible());
        let v = verdict.point.unwrap()[0];
        assert!((0.5 - 1e-7..=1.0 + 1e-7).contains(&v), "v = {v}");
        assert!(verdict.max_violation <= 1e-7);
    }

    #[test]
    fn one_dimensional_infeasible() {
        let mut p = SocProgram::with_vars(["v".to_string()]);
        p.cones.push(norm_le("norm", 0, 0.4));
        p.linear.push(at_least("lower", 0, 0.5));
        let verdict = solve_feasibility(&p, &SolverSettings::default()).unwrap();
        assert_eq!(verdict.status, FeasibilityStatus::Infeasible);
        assert!(verdict.point.is_none());
        // the shared slack splits the 0.1 gap between the two constraints
        assert!(verdict.slack - verdict.gap <= 0.05 + 1e-9 && verdict.slack >= 0.05 - 1e-9, "{verdict:?}");
    }

    #[test]
    fn boundary_feasible_point_is_found() {
        // ‖v‖ ≤ 0.5 and v ≥ 0.5: the feasible set is a single point
        let mut p = SocProgram::with_vars(["v".to_string()]);
        p.cones.push(norm_le("norm", 0, 0.5));
        p.linear.push(at_least("lower", 0, 0.5));
        let verdict = solve_feasibility(&p, &SolverSettings::default()).unwrap();
        assert!(verdict.is_feasible(), "{verdict:?}");
        assert!((verdict.point.unwrap()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn strictly_feasible_start_returns_immediately() {
        let mut p = SocProgram::with_vars(["v".to_string()]);
        p.cones.push(norm_le("norm", 0, 1.0));
        p.start = Some(vec![0.2]);
        let verdict = solve_feasibility(&p, &SolverSettings::default()).unwrap();
        assert!(verdict.is_feasible());
        assert_eq!(verdict.iterations, 0);
        assert_eq!(verdict.point.unwrap(), vec![0.2]);
    }

    #[test]
    fn empty_program_is_feasible() {
        let p = SocProgram::with_vars(["a".to_string(), "b".to_string()]);
        assert!(solve_feasibility(&p, &SolverSettings::default()).unwrap().is_feasible());
    }

    #[test]
    fn iteration_cap_reports_failure() {
        let mut p = SocProgram::with_vars(["v".to_string()]);
        p.cones.push(norm_le("norm", 0, 0.5));
        p.linear.push(at_least("lower", 0, 0.5));
        let settings = SolverSettings { max_iters: 2, ..Default::default() };
        let verdict = solve_feasibility(&p, &settings).unwrap();
        assert_eq!(verdict.status, FeasibilityStatus::NumericalFailure);
        assert!(verdict.gap > 0.0);
    }

    #[test]
    fn malformed_program_is_an_error() {
        let mut p = SocProgram::with_vars(["v".to_string()]);
        p.linear.push(at_least("bad", 3, 0.0));
        assert!(solve_feasibility(&p, &SolverSettings::default()).is_err());
    }

    #[test]
    fn two_dimensional_disc_and_halfplanes() {
        // ‖(x − 1, y − 1)‖ ≤ r, x + y ≥ 3: feasible iff r ≥ 1/√2
        for (r, expect) in [(0.8, true), (0.6, false)] {
            let mut p = SocProgram::with_vars(["x".to_string(), "y".to_string()]);
            p.cones.push(SocConstraint {
                label: "disc".into(),
                rows: vec![SparseRow::new(vec![(0, 1.0)]), SparseRow::new(vec![(1, 1.0)])],
                offsets: vec![-1.0, -1.0],
                rhs: SparseRow::default(),
                rhs_offset: r,
            });
            p.linear.push(LinearConstraint {
                label: "half".into(),
                row: SparseRow::new(vec![(0, 1.0), (1, 1.0)]),
                offset: -3.0,
            });
            let verdict = solve_feasibility(&p, &SolverSettings::default()).unwrap();
            assert_eq!(verdict.is_feasible(), expect, "r = {r}: {verdict:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // A cone built around a known point with positive margin is always
        // declared feasible, and the witness satisfies the original data.
        #[test]
        fn planted_feasible_point(
            center in prop::collection::vec(-1.0..1.0f64, 3),
            rows in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 1..4),
            margin in 0.01..1.0f64,
            scale in prop::sample::select(vec![1e-3, 1.0, 1e3]),
        ) {
            let mut p = SocProgram::with_vars((0..3).map(|i| format!("v{i}")));
            let a: Vec<SparseRow> = rows.iter().map(|r| SparseRow::new(r.iter().enumerate().map(|(i, c)| (i, c * scale)).collect())).collect();
            let norm = a.iter().map(|r| r.dot(&center).powi(2)).sum::<f64>().sqrt();
            p.cones.push(SocConstraint {
                label: "planted".into(),
                offsets: vec![0.0; a.len()],
                rows: a,
                rhs: SparseRow::default(),
                rhs_offset: norm + margin * scale,
            });
            for i in 0..3 {
                p.linear.push(LinearConstraint { label: format!("lo{i}"), row: SparseRow::new(vec![(i, 1.0)]), offset: 1.0 });
                p.linear.push(LinearConstraint { label: format!("hi{i}"), row: SparseRow::new(vec![(i, -1.0)]), offset: 1.0 });
            }
            let verdict = solve_feasibility(&p, &SolverSettings::default()).unwrap();
            prop_assert!(verdict.is_feasible());
            let point = verdict.point.unwrap();
            prop_assert!(p.normalized().max_violation(&point) <= 1e-7);
        }
    }
}
