//! Time loop coupling pressure, Darcy reconstruction and concentration.

use alloc::format;
use alloc::vec::Vec;

use crate::concentration::{
    crank_nicolson_extrapolate, energy_check, solve_concentration, DispersionModel, EnergyCheck, Sources, TimeTerms,
};
use crate::darcy::{conservation_residual, reconstruct, ConservationReport};
use crate::hho::{interpolate, HybridField, Tables};
use crate::mesh::Mesh;
use crate::pressure::{solve_pressure, KappaField, ViscosityModel};
use crate::{math, Error, Point2, Result, Tensor2};

/// Relative tolerance of the per-step invariant checks.
pub const INVARIANT_TOLERANCE: f64 = 1e-9;

/// Growth over the stability bound at which a run is declared unstable.
pub const INSTABILITY_FACTOR: f64 = 10.0;

/// Largest supported concentration degree.
pub const MAX_DEGREE: usize = 3;

/// Quadrature exactness shared by the pressure and concentration operators
/// of a degree-`k` simulation.
pub fn simulation_quadrature_degree(k: usize) -> usize {
    (6 * k).max(4 * k + 2)
}

/// Tables for a degree-`k` simulation (pressure degree `2k`).
pub fn simulation_tables(mesh: &Mesh, k: usize) -> Result<Tables> {
    if k > MAX_DEGREE {
        return Err(Error::UnsupportedDegree(k));
    }
    Tables::new(mesh, simulation_quadrature_degree(k), 2 * k + 1, 2 * k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stepper {
    CrankNicolson,
    /// Backward differentiation of order 2 to 4.
    Bdf(usize),
}

impl Stepper {
    fn order(self) -> usize {
        match self {
            Stepper::CrankNicolson => 1,
            Stepper::Bdf(q) => q,
        }
    }
}

/// `α_0 .. α_q` of the BDF formula `Σ α_j c^{n+1-j} / Δt`.
pub fn bdf_coefficients(order: usize) -> Result<&'static [f64]> {
    Ok(match order {
        1 => &[1.0, -1.0],
        2 => &[1.5, -2.0, 0.5],
        3 => &[11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0],
        4 => &[25.0 / 12.0, -4.0, 3.0, -4.0 / 3.0, 0.25],
        _ => return Err(Error::InvalidArgument(format!("no BDF formula of order {order}"))),
    })
}

/// Weights on `c^n, c^{n-1}, ..` extrapolating to `t^{n+1}` at order `q`.
pub fn bdf_extrapolation(order: usize) -> Result<&'static [f64]> {
    Ok(match order {
        1 => &[1.0],
        2 => &[2.0, -1.0],
        3 => &[3.0, -3.0, 1.0],
        4 => &[4.0, -6.0, 4.0, -1.0],
        _ => return Err(Error::InvalidArgument(format!("no extrapolation of order {order}"))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellKind {
    Injection,
    Production,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Well {
    pub location: Point2<f64>,
    /// Rate in ft²/day, positive.
    pub rate: f64,
    pub kind: WellKind,
}

/// Piecewise-constant source of the wells of one kind: `rate / |T|` on the
/// cell containing each well.
pub fn well_source(mesh: &Mesh, wells: &[Well], kind: WellKind) -> Result<Vec<f64>> {
    let mut q = alloc::vec![0.0; mesh.n_cells()];
    for w in wells.iter().filter(|w| w.kind == kind) {
        if !(w.rate > 0.0 && w.rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("well rate must be > 0, got {}", w.rate)));
        }
        let c = mesh.locate_cell(w.location)?;
        q[c] += w.rate / mesh.cell(c).measure;
    }
    Ok(q)
}

/// Everything a run needs beyond the mesh and the initial concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Concentration degree; the pressure uses `2k`.
    pub k: usize,
    pub dt: f64,
    pub t_final: f64,
    pub stepper: Stepper,
    pub wells: Vec<Well>,
    pub viscosity: ViscosityModel,
    pub d_m: f64,
    pub d_l: f64,
    pub d_t: f64,
    pub porosity: Vec<f64>,
    pub permeability: Vec<Tensor2>,
    /// Injected concentration `ĉ`.
    pub injected: f64,
    /// Times at which the concentration is stored in the report; each is
    /// served by the first step time at or after it.
    pub snapshot_times: Vec<f64>,
    /// Fail on conservation, energy or stability-bound violations.
    pub check_invariants: bool,
}

impl SimulationConfig {
    /// Number of steps, requiring `Δt` to divide `t_f`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt and t_final must be positive, got {} and {}",
                self.dt, self.t_final
            )));
        }
        let n = libm::round(self.t_final / self.dt);
        if n < 1.0 || math::abs(n * self.dt - self.t_final) > 1e-9 * self.t_final {
            return Err(Error::InvalidArgument(format!(
                "dt = {} does not divide t_final = {}",
                self.dt, self.t_final
            )));
        }
        Ok(n as usize)
    }
}

/// Diagnostics of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// Index `n + 1` of the computed time level.
    pub step: usize,
    pub time: f64,
    pub pressure_residual: f64,
    pub concentration_residual: f64,
    pub conservation: ConservationReport,
    pub energy: EnergyCheck,
    /// `‖c^{n+1}‖²` of the cell polynomials.
    pub norm_sq: f64,
    /// Filled in by callers that own a clock.
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub steps: Vec<StepDiagnostics>,
    /// `(t, recovery fraction)` from `t = 0`.
    pub recovery: Vec<(f64, f64)>,
    pub snapshots: Vec<(f64, HybridField)>,
    pub stability_bound: f64,
    pub final_field: HybridField,
}

/// Squared L² norm of the cell polynomials.
pub fn l2_norm_sq(tables: &Tables, c: &HybridField) -> f64 {
    tables
        .cells
        .iter()
        .map(|t| {
            (0..t.n_points())
                .map(|q| t.weights[q] * math::powi(t.eval_cell(c.cell(t.cell), q), 2))
                .sum::<f64>()
        })
        .sum()
}

/// `∫ Φ c / ∫ Φ` over the cell polynomials.
pub fn oil_recovery(tables: &Tables, c: &HybridField, porosity: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for t in &tables.cells {
        let phi = porosity[t.cell];
        for q in 0..t.n_points() {
            num += t.weights[q] * phi * t.eval_cell(c.cell(t.cell), q);
            den += t.weights[q] * phi;
        }
    }
    num / den
}

/// `(e² / Φ_*²) (‖c0‖² + 2 t_f² ‖q⁺‖²)` for time-constant sources.
pub fn stability_bound(c0_norm_sq: f64, q_plus: &[f64], mesh: &Mesh, porosity_bound: f64, t_final: f64) -> f64 {
    let q_sq: f64 = q_plus
        .iter()
        .enumerate()
        .map(|(c, q)| q * q * mesh.cell(c).measure)
        .sum();
    let e = core::f64::consts::E;
    e * e / (porosity_bound * porosity_bound) * (c0_norm_sq + 2.0 * t_final * t_final * q_sq)
}

/// A run in progress. Each call to [`Simulation::step`] advances one time
/// level.
#[derive(Debug)]
pub struct Simulation<'m> {
    mesh: &'m Mesh,
    tables: Tables,
    config: SimulationConfig,
    model: DispersionModel,
    q_plus: Vec<f64>,
    q_minus: Vec<f64>,
    n_steps: usize,
    /// `c^n, c^{n-1}, ..`, most recent first.
    history: Vec<HybridField>,
    report: RunReport,
}

impl<'m> Simulation<'m> {
    /// Validates the configuration and sets `c^{-1} = c^0 = π c0`.
    pub fn new(mesh: &'m Mesh, config: SimulationConfig, initial: impl Fn(Point2<f64>) -> f64) -> Result<Self> {
        let n_steps = config.n_steps()?;
        let n = mesh.n_cells();
        if config.porosity.len() != n || config.permeability.len() != n {
            return Err(Error::LayoutMismatch(format!(
                "{} porosities and {} permeabilities for {n} cells",
                config.porosity.len(),
                config.permeability.len()
            )));
        }
        if let Stepper::Bdf(q) = config.stepper {
            if !(2..=4).contains(&q) {
                return Err(Error::InvalidArgument(format!("BDF order must be 2, 3 or 4, got {q}")));
            }
        }
        if !(0.0..=1.0).contains(&config.injected) {
            return Err(Error::InvalidArgument(format!(
                "injected concentration must lie in [0, 1], got {}",
                config.injected
            )));
        }
        let tables = simulation_tables(mesh, config.k)?;
        let model = DispersionModel::new(config.d_m, config.d_l, config.d_t, config.porosity.clone())?;
        let q_plus = well_source(mesh, &config.wells, WellKind::Injection)?;
        let q_minus = well_source(mesh, &config.wells, WellKind::Production)?;
        crate::pressure::check_source_compatibility(mesh, &q_plus, &q_minus)?;

        let c0 = interpolate(mesh, &tables, config.k, initial)?;
        let bound = stability_bound(
            l2_norm_sq(&tables, &c0),
            &q_plus,
            mesh,
            model.porosity_bound(),
            config.t_final,
        );
        let mut snapshots = Vec::new();
        if config.snapshot_times.iter().any(|t| snapshot_hit(*t, 0.0, &config)) {
            snapshots.push((0.0, c0.clone()));
        }
        let report = RunReport {
            steps: Vec::with_capacity(n_steps),
            recovery: alloc::vec![(0.0, oil_recovery(&tables, &c0, &config.porosity))],
            snapshots,
            stability_bound: bound,
            final_field: c0.clone(),
        };
        Ok(Simulation {
            mesh,
            tables,
            config,
            model,
            q_plus,
            q_minus,
            n_steps,
            history: alloc::vec![c0.clone(), c0],
            report,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn steps_done(&self) -> usize {
        self.report.steps.len()
    }

    pub fn is_finished(&self) -> bool {
        self.steps_done() == self.n_steps
    }

    pub fn time(&self) -> f64 {
        self.steps_done() as f64 * self.config.dt
    }

    pub fn current(&self) -> &HybridField {
        &self.history[0]
    }

    pub fn tables(&self) -> &Tables {
        &self.tables
    }

    pub fn q_plus(&self) -> &[f64] {
        &self.q_plus
    }

    pub fn q_minus(&self) -> &[f64] {
        &self.q_minus
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    /// Records the wall-clock duration of the last step.
    pub fn set_last_wall_seconds(&mut self, seconds: f64) {
        if let Some(s) = self.report.steps.last_mut() {
            s.wall_seconds = Some(seconds);
        }
    }

    /// Advances one time level and returns its diagnostics.
    pub fn step(&mut self) -> Result<&StepDiagnostics> {
        if self.is_finished() {
            return Err(Error::InvalidArgument(format!("all {} steps are done", self.n_steps)));
        }
        let n = self.steps_done();
        let index = n + 1;
        let with_step = |e: Error| match e {
            Error::Invariant { what, .. } => Error::Invariant { step: index, what },
            other => other,
        };
        let k = self.config.k;
        let dt = self.config.dt;
        let order = self.config.stepper.order();
        let use_bdf = order > 1 && n + 1 >= order;

        // Pressure from the extrapolated concentration.
        let c_tilde = if use_bdf {
            let w = bdf_extrapolation(order)?;
            let terms: Vec<(f64, &HybridField)> = w.iter().copied().zip(&self.history).collect();
            HybridField::linear_combination(&terms)?
        } else {
            crate::pressure::extrapolate_concentration(&self.history[0], &self.history[1])?
        };
        let kappa = KappaField {
            permeability: &self.config.permeability,
            viscosity: self.config.viscosity,
            concentration: &c_tilde,
        };
        let pressure =
            solve_pressure(self.mesh, &self.tables, k, &kappa, &self.q_plus, &self.q_minus).map_err(with_step)?;
        let darcy = reconstruct(self.mesh, &self.tables, &pressure)?;
        let conservation =
            conservation_residual(self.mesh, &self.tables, &darcy, &pressure, &self.q_plus, &self.q_minus);

        // Concentration: one CN half step, or one BDF step.
        let (rate, history) = if use_bdf {
            let alpha = bdf_coefficients(order)?;
            let terms: Vec<(f64, &HybridField)> = alpha[1..].iter().map(|a| -a / dt).zip(&self.history).collect();
            (alpha[0] / dt, HybridField::linear_combination(&terms)?)
        } else {
            (2.0 / dt, self.history[0].combine(2.0 / dt, &self.history[0], 0.0)?)
        };
        let time = TimeTerms {
            rate,
            history: &history,
        };
        let sources = Sources {
            q_plus: &self.q_plus,
            q_minus: &self.q_minus,
            injected: self.config.injected,
        };
        let solved = solve_concentration(self.mesh, &self.tables, k, &darcy, &self.model, &time, &sources)?;
        let energy = energy_check(&self.tables, &self.model, &time, &sources, &solved.field);
        let next = if use_bdf {
            solved.field
        } else {
            crank_nicolson_extrapolate(&solved.field, &self.history[0])?
        };
        let norm_sq = l2_norm_sq(&self.tables, &next);
        let bound = self.report.stability_bound;

        if !norm_sq.is_finite() || norm_sq > INSTABILITY_FACTOR * bound {
            return Err(Error::Unstable {
                step: index,
                norm_sq,
                limit: INSTABILITY_FACTOR * bound,
            });
        }
        if self.config.check_invariants {
            if conservation.max() > INVARIANT_TOLERANCE {
                return Err(Error::Invariant {
                    step: index,
                    what: format!("conservation residuals {conservation:?}"),
                });
            }
            if !energy.holds(INVARIANT_TOLERANCE) {
                return Err(Error::Invariant {
                    step: index,
                    what: format!("energy inequality slack {:e}", energy.slack()),
                });
            }
            if self.config.stepper == Stepper::CrankNicolson && norm_sq > bound {
                return Err(Error::Invariant {
                    step: index,
                    what: format!("|c|^2 = {norm_sq:e} exceeds the stability bound {bound:e}"),
                });
            }
        }

        let t = index as f64 * dt;
        self.report
            .recovery
            .push((t, oil_recovery(&self.tables, &next, &self.config.porosity)));
        if self
            .config
            .snapshot_times
            .iter()
            .any(|s| snapshot_hit(*s, t, &self.config))
        {
            self.report.snapshots.push((t, next.clone()));
        }
        self.report.final_field = next.clone();
        self.history.insert(0, next);
        self.history.truncate(order.max(2));
        self.report.steps.push(StepDiagnostics {
            step: index,
            time: t,
            pressure_residual: pressure.residual,
            concentration_residual: solved.residual,
            conservation,
            energy,
            norm_sq,
            wall_seconds: None,
        });
        Ok(self.report.steps.last().expect("just pushed"))
    }

    /// Runs the remaining steps.
    pub fn run(mut self) -> Result<RunReport> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.report)
    }

    pub fn into_report(self) -> RunReport {
        self.report
    }
}

/// A requested time is served by the first step time at or after it.
fn snapshot_hit(s: f64, t: f64, config: &SimulationConfig) -> bool {
    let tol = 1e-9 * config.t_final.max(config.dt);
    if t == 0.0 {
        return math::abs(s) <= tol;
    }
    s > t - config.dt + tol && s <= t + tol
}
