//! Implicit H¹ gradient flow with Newton sub-iterations.
//!
//! Each outer step minimizes `L^i[y] = ‖y − yⁱ‖²/(2τ) + E[y]` by Newton's
//! method on its Euler–Lagrange system
//! `(M/τ + ∇²E(y)) δ = −(M(y − yⁱ)/τ + ∇E(y))`, stopping once the decrement
//! `|δL(δ)|^{1/2}` is at most `tol1`. The flow stops once
//! `|E^N − E^{N−1}|/τ ≤ tol2`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DivergenceReason, Error, Result};
use crate::fem::{Deformation, EnergyBreakdown, FemProblem};
use crate::sparse::{CholeskySolver, SymPattern, SymSparse};

pub use crate::sparse::solve_sym_system;

/// Header of the iteration log.
pub const LOG_HEADER: [&str; 5] = ["iteration", "stretch", "regularization", "total", "newton_count"];

/// Number of consecutive decrement increases treated as divergence.
const GROWTH_LIMIT: usize = 3;

/// An energy that can drive the flow: value, gradient and Hessian on a fixed
/// sparsity pattern, together with the flow metric on that pattern.
pub trait FlowEnergy {
    fn pattern(&self) -> &Arc<SymPattern>;

    /// Gram matrix of the flow metric.
    fn metric(&self) -> SymSparse;

    fn energy(&self, y: &[f64]) -> Result<EnergyBreakdown>;

    fn linearize(&self, y: &[f64]) -> Result<(EnergyBreakdown, Vec<f64>, SymSparse)>;

    /// Diagnostic reported at the end of a run.
    fn metric_deviation(&self, _y: &[f64]) -> Option<f64> {
        None
    }
}

impl FlowEnergy for FemProblem {
    fn pattern(&self) -> &Arc<SymPattern> {
        FemProblem::pattern(self)
    }

    fn metric(&self) -> SymSparse {
        self.h1_matrix()
    }

    fn energy(&self, y: &[f64]) -> Result<EnergyBreakdown> {
        FemProblem::energy(self, &Deformation::from_dofs(y.to_vec(), self.mesh())?)
    }

    fn linearize(&self, y: &[f64]) -> Result<(EnergyBreakdown, Vec<f64>, SymSparse)> {
        let (e, g, h) = FemProblem::linearize(self, &Deformation::from_dofs(y.to_vec(), self.mesh())?, true)?;
        Ok((e, g, h.expect("hessian requested")))
    }

    fn metric_deviation(&self, y: &[f64]) -> Option<f64> {
        let y = Deformation::from_dofs(y.to_vec(), self.mesh()).ok()?;
        FemProblem::metric_deviation(self, &y).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub tau: f64,
    pub tol1: f64,
    pub tol2: f64,
    pub max_newton: usize,
    pub max_flow: usize,
    pub crease_aware: bool,
    /// Admissible energy increase per outer step before the step is rejected.
    pub energy_slack: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            tau: 1.0,
            tol1: 1e-10,
            tol2: 1e-9,
            max_newton: 30,
            max_flow: 20_000,
            crease_aware: false,
            energy_slack: 1e-12,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} must be positive")))
            }
        };
        positive(self.tau, "tau")?;
        positive(self.tol1, "tol1")?;
        positive(self.tol2, "tol2")?;
        if self.max_newton == 0 || self.max_flow == 0 {
            return Err(Error::InvalidArgument("iteration caps must be at least 1".into()));
        }
        if !(self.energy_slack >= 0.0) {
            return Err(Error::InvalidArgument("energy slack must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Converged,
    Diverged,
    CapReached,
}

/// Where and why a run diverged.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// Outer step being computed (1-based).
    pub step: usize,
    /// Newton iteration within that step (0-based).
    pub iteration: usize,
    pub reason: DivergenceReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowReport {
    /// `energies[i]` is the energy of `yⁱ`; index 0 is the initial state.
    pub energies: Vec<EnergyBreakdown>,
    /// Newton increments applied in each outer step.
    pub newton_counts: Vec<usize>,
    /// `‖y^{i+1} − yⁱ‖²` in the flow metric.
    pub step_norms_sq: Vec<f64>,
    pub status: FlowStatus,
    pub tau: f64,
    pub final_e_h: Option<f64>,
    pub divergence: Option<Divergence>,
}

impl FlowReport {
    /// Number of accepted outer steps `N`.
    pub fn iterations(&self) -> usize {
        self.newton_counts.len()
    }

    pub fn final_energy(&self) -> EnergyBreakdown {
        *self.energies.last().expect("initial energy is always recorded")
    }

    /// `E^N + Σ‖Δ‖²/(2τ) − E^0`; nonpositive up to round-off for exact steps.
    pub fn stability_defect(&self) -> f64 {
        let dissipation: f64 = self.step_norms_sq.iter().sum::<f64>() / (2.0 * self.tau);
        self.final_energy().total + dissipation - self.energies[0].total
    }

    /// Largest increase `E^{i+1} − E^i` over accepted steps (≤ 0 when monotone).
    pub fn max_energy_increase(&self) -> f64 {
        self.energies
            .windows(2)
            .map(|w| w[1].total - w[0].total)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes the iteration log as CSV; row 0 is the initial state.
    pub fn write_log<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LOG_HEADER)?;
        for (i, e) in self.energies.iter().enumerate() {
            let count = if i == 0 { 0 } else { self.newton_counts[i - 1] };
            w.serialize((i, e.stretch, e.regularization, e.total, count))?;
        }
        w.flush().map_err(|e| Error::io("<flow log>", e))?;
        Ok(())
    }
}

/// Result of one outer step.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub y: Vec<f64>,
    /// Number of applied increments `M`.
    pub iterations: usize,
    pub energy: EnergyBreakdown,
}

/// Reusable state for Newton sub-iterations: the flow metric and the
/// symbolic factorization of the system pattern.
pub struct NewtonSolver<'a, E: FlowEnergy + ?Sized> {
    energy: &'a E,
    metric: SymSparse,
    solver: CholeskySolver,
}

impl<'a, E: FlowEnergy + ?Sized> NewtonSolver<'a, E> {
    pub fn new(energy: &'a E) -> Result<Self> {
        let metric = energy.metric();
        let solver = CholeskySolver::new(energy.pattern().clone())?;
        Ok(NewtonSolver { energy, metric, solver })
    }

    pub fn metric(&self) -> &SymSparse {
        &self.metric
    }

    /// Computes `y^{i+1}` from `yⁱ`.
    pub fn substep(&self, y_i: &[f64], config: &FlowConfig) -> Result<NewtonOutcome> {
        let diverged = |iteration: usize, reason: DivergenceReason| Error::DivergedNewton { iteration, reason };
        let inv_tau = 1.0 / config.tau;
        let mut y = y_i.to_vec();
        let mut previous = f64::INFINITY;
        let mut growth = 0;
        for n in 0..config.max_newton {
            let (energy, grad_e, hess) = self.energy.linearize(&y).map_err(|e| match e {
                Error::DegenerateElement { element, j } => diverged(
                    n,
                    DivergenceReason::Degenerate {
                        element: element.unwrap_or(usize::MAX),
                        j,
                    },
                ),
                other => other,
            })?;
            if !energy.total.is_finite() {
                return Err(diverged(n, DivergenceReason::NonFinite));
            }
            let diff: Vec<f64> = y.iter().zip(y_i).map(|(a, b)| a - b).collect();
            let m_diff = self.metric.matvec(&diff);
            let grad: Vec<f64> = m_diff.iter().zip(&grad_e).map(|(m, g)| inv_tau * m + g).collect();

            let mut system = hess;
            system.axpby(1.0, inv_tau, &self.metric);
            let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
            let delta = self.solver.solve(&system, &rhs).map_err(|e| match e {
                Error::NotSpd { pivot } => diverged(n, DivergenceReason::Factorization(format!("non-positive pivot {pivot}"))),
                Error::Singular => diverged(n, DivergenceReason::Factorization("singular system".into())),
                other => other,
            })?;

            let decrement = grad.iter().zip(&delta).map(|(g, d)| g * d).sum::<f64>().abs().sqrt();
            if !decrement.is_finite() {
                return Err(diverged(n, DivergenceReason::NonFinite));
            }
            if decrement <= config.tol1 {
                return Ok(NewtonOutcome { y, iterations: n, energy });
            }
            if decrement > previous {
                growth += 1;
                if growth >= GROWTH_LIMIT {
                    return Err(diverged(n, DivergenceReason::GrowingResidual));
                }
            } else {
                growth = 0;
            }
            previous = decrement;
            for (yk, dk) in y.iter_mut().zip(&delta) {
                *yk += dk;
            }
        }
        Err(diverged(config.max_newton, DivergenceReason::IterationCap))
    }
}

/// One outer step of the flow from `y_i`.
pub fn newton_substep<E: FlowEnergy + ?Sized>(energy: &E, y_i: &[f64], config: &FlowConfig) -> Result<NewtonOutcome> {
    config.validate()?;
    NewtonSolver::new(energy)?.substep(y_i, config)
}

/// Final state and report of a flow run.
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub report: FlowReport,
    pub y: Vec<f64>,
}

/// Runs the flow from `y0` until the energy-slope test passes, Newton
/// diverges or `max_flow` steps were taken.
pub fn run_flow<E: FlowEnergy + ?Sized>(energy: &E, y0: Vec<f64>, config: &FlowConfig) -> Result<FlowRun> {
    config.validate()?;
    let newton = NewtonSolver::new(energy)?;
    let initial = energy.energy(&y0)?;
    if !initial.total.is_finite() {
        return Err(Error::InvalidArgument("initial energy is not finite".into()));
    }
    let mut report = FlowReport {
        energies: vec![initial],
        newton_counts: Vec::new(),
        step_norms_sq: Vec::new(),
        status: FlowStatus::CapReached,
        tau: config.tau,
        final_e_h: None,
        divergence: None,
    };
    let mut y = y0;
    for step in 1..=config.max_flow {
        let previous = report.final_energy();
        let outcome = match newton.substep(&y, config) {
            Ok(o) => o,
            Err(Error::DivergedNewton { iteration, reason }) => {
                report.status = FlowStatus::Diverged;
                report.divergence = Some(Divergence { step, iteration, reason });
                break;
            }
            Err(other) => return Err(other),
        };
        if outcome.energy.total > previous.total + config.energy_slack {
            report.status = FlowStatus::Diverged;
            report.divergence = Some(Divergence {
                step,
                iteration: outcome.iterations,
                reason: DivergenceReason::EnergyIncrease {
                    before: previous.total,
                    after: outcome.energy.total,
                },
            });
            break;
        }
        let diff: Vec<f64> = outcome.y.iter().zip(&y).map(|(a, b)| a - b).collect();
        report.step_norms_sq.push(newton.metric().quadratic_form(&diff));
        report.newton_counts.push(outcome.iterations);
        report.energies.push(outcome.energy);
        y = outcome.y;
        if (outcome.energy.total - previous.total).abs() / config.tau <= config.tol2 {
            report.status = FlowStatus::Converged;
            break;
        }
    }
    report.final_e_h = energy.metric_deviation(&y);
    Ok(FlowRun { report, y })
}

/// Bracket-and-bisect search for the largest admissible time step.
///
/// `admissible(τ)` reports whether a run at `τ` converges. Starting from
/// `start`, τ is doubled until a run fails (giving up above `cap`), then the
/// bracket is bisected until its width is at most `tol`. Returns the lower end.
pub fn find_tau_max(mut admissible: impl FnMut(f64) -> Result<bool>, start: f64, tol: f64, cap: f64) -> Result<f64> {
    if !(start > 0.0 && tol > 0.0 && cap >= start) {
        return Err(Error::InvalidArgument(format!(
            "invalid search parameters start={start}, tol={tol}, cap={cap}"
        )));
    }
    let mut lo = None;
    let mut tau = start;
    for _ in 0..30 {
        if admissible(tau)? {
            lo = Some(tau);
            break;
        }
        tau *= 0.5;
    }
    let mut lo = lo.ok_or_else(|| Error::InvalidArgument(format!("no admissible time step below {start}")))?;
    let mut hi = 2.0 * lo;
    if lo == start {
        loop {
            if hi > cap {
                return Err(Error::NoDivergingTau { cap });
            }
            if !admissible(hi)? {
                break;
            }
            lo = hi;
            hi = 2.0 * lo;
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if admissible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
