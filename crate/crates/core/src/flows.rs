//! Right-hand sides and explicit time stepping for the heat flow, the
//! Laplacian flow and its DeTurck modification, the Laplacian coflow and its
//! modification, and gradient flows of the weighted torsion energy.

use rayon::prelude::*;
use thiserror::Error as ThisError;

use crate::diagnostics::{deturck_vector, dirichlet_dnu};
use crate::exterior::Metric;
use crate::g2::{phi_rate_from_psi_rate, FlowDecomposition};
use crate::lattice::{
    codiff, constant_metric_laplacian, d, exponential_filter, highest_frequency_fraction, par_map_sites, Grid,
    LatticeField, MetricField,
};
use crate::structure::{contract_field, torsion_field, FrameField};
use crate::{Error, Result};

/// Largest number of lattice coefficients the numerical energy gradient accepts.
pub const MAX_GRADIENT_DOF: usize = 5000;

/// Largest stable `|λ dt|` on the negative real axis.
const RK4_STABILITY: f64 = 2.78;
const EULER_STABILITY: f64 = 2.0;

/// Ratio of current to initial step limit below which a run stops.
const CFL_COLLAPSE_RATIO: f64 = 1e-3;

/// Highest-frequency energy fraction above which a run counts as diverged.
const DIVERGENCE_FRACTION: f64 = 0.5;

/// Mean-free energy, relative to its initial value, below which the
/// high-frequency monitor is not consulted (the spectrum is rounding noise).
const MONITOR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowKind {
    Heat,
    HeatModified { lambda1: f64 },
    Laplacian,
    LaplacianDeturck,
    Coflow,
    ModifiedCoflow { c: f64 },
    DirichletGradient { nu: [f64; 4] },
}

impl FlowKind {
    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::Heat => "heat",
            FlowKind::HeatModified { .. } => "heat_modified",
            FlowKind::Laplacian => "laplacian",
            FlowKind::LaplacianDeturck => "laplacian_deturck",
            FlowKind::Coflow => "coflow",
            FlowKind::ModifiedCoflow { .. } => "modified_coflow",
            FlowKind::DirichletGradient { .. } => "dirichlet_gradient",
        }
    }

    /// The modified heat flow with `λ1` taken from the grid's spectrum.
    pub fn heat_modified_for(grid: &Grid) -> Result<Self> {
        grid.first_eigenvalue()
            .map(|lambda1| FlowKind::HeatModified { lambda1 })
            .ok_or_else(|| Error::InvalidGrid("grid has no active axis".into()))
    }

    /// Whether the flowed field is a G2 structure.
    pub fn is_structure_flow(&self) -> bool {
        !matches!(self, FlowKind::Heat | FlowKind::HeatModified { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stepper {
    Rk4,
    Euler,
}

impl Stepper {
    pub fn name(self) -> &'static str {
        match self {
            Stepper::Rk4 => "rk4",
            Stepper::Euler => "euler",
        }
    }

    fn stability(self) -> f64 {
        match self {
            Stepper::Rk4 => RK4_STABILITY,
            Stepper::Euler => EULER_STABILITY,
        }
    }
}

/// Exponential filter applied to the field after every step, see
/// [`exponential_filter`].
///
/// Pseudo-spectral products alias into the highest modes. The Laplacian
/// flow and the coflows do not damp their diffeomorphism directions, so on
/// spectral grids that aliasing grows until it swamps the solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralFilter {
    /// Even exponent of the filter profile.
    pub order: u32,
    /// Damping of the highest resolved mode, `exp(−strength)`.
    pub strength: f64,
}

impl Default for SpectralFilter {
    fn default() -> Self {
        Self {
            order: 36,
            strength: 36.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSpec {
    pub kind: FlowKind,
    pub stepper: Stepper,
    /// Requested step; the step actually taken is capped by the stability limit.
    pub dt: f64,
    /// Fraction of the stability limit used, in `(0, 1]`.
    pub safety: f64,
    pub filter: Option<SpectralFilter>,
}

impl FlowSpec {
    pub fn new(kind: FlowKind, stepper: Stepper, dt: f64, safety: f64) -> Result<Self> {
        let spec = Self {
            kind,
            stepper,
            dt,
            safety,
            filter: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_filter(self, filter: SpectralFilter) -> Result<Self> {
        let spec = Self {
            filter: Some(filter),
            ..self
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "safety factor must lie in (0, 1], got {}",
                self.safety
            )));
        }
        if let Some(f) = self.filter {
            if f.order < 2 || f.order % 2 != 0 || !(f.strength > 0.0 && f.strength.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "filter needs an even order ≥ 2 and a positive strength, got {} and {}",
                    f.order, f.strength
                )));
            }
        }
        match self.kind {
            FlowKind::HeatModified { lambda1 } if !(lambda1 > 0.0 && lambda1.is_finite()) => {
                Err(Error::InvalidInput(format!("λ1 must be positive, got {lambda1}")))
            }
            FlowKind::ModifiedCoflow { c } if !c.is_finite() => {
                Err(Error::InvalidInput("modified coflow constant must be finite".into()))
            }
            FlowKind::DirichletGradient { nu } if nu.iter().any(|v| !(v.is_finite() && *v >= 0.0)) => Err(
                Error::InvalidInput(format!("torsion weights must be nonnegative, got {nu:?}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    ReachedT,
    PositivityLost,
    CflCollapse,
    Diverged,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::ReachedT => "reached_T",
            Termination::PositivityLost => "positivity_lost",
            Termination::CflCollapse => "cfl_collapse",
            Termination::Diverged => "diverged",
        }
    }
}

#[derive(Clone, Debug, ThisError, PartialEq)]
pub enum FlowError {
    #[error("positivity lost: {0}")]
    PositivityLost(String),
    #[error("step limit collapsed to {limit:.3e} (initial {initial:.3e})")]
    CflCollapse { limit: f64, initial: f64 },
    #[error("diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Invalid(#[from] Error),
}

impl FlowError {
    pub fn termination(&self) -> Option<Termination> {
        match self {
            FlowError::PositivityLost(_) => Some(Termination::PositivityLost),
            FlowError::CflCollapse { .. } => Some(Termination::CflCollapse),
            FlowError::Diverged(_) => Some(Termination::Diverged),
            FlowError::Invalid(_) => None,
        }
    }
}

fn positivity(e: Error) -> FlowError {
    match e {
        Error::NotPositive(m) => FlowError::PositivityLost(m),
        Error::IllConditioned(c) => FlowError::PositivityLost(format!("metric condition number {c:.3e}")),
        other => FlowError::Invalid(other),
    }
}

/// `−Δα` for the flat metric.
pub fn rhs_heat(field: &LatticeField, mf: &MetricField) -> Result<LatticeField> {
    if field.grid() != mf.grid() {
        return Err(Error::GridMismatch);
    }
    let m = mf
        .uniform_value()
        .filter(|_| mf.is_identity())
        .ok_or_else(|| Error::InvalidInput("heat flow runs on the flat metric".into()))?;
    Ok(constant_metric_laplacian(field, &m).scaled(-1.0))
}

/// Mean-zero tolerance for the modified heat flow.
fn mean_tolerance(field: &LatticeField) -> f64 {
    1e-10 * field.max_abs().max(1.0)
}

/// `−Δf + λ1 f` for a mean-free function under the flat metric.
pub fn rhs_heat_modified(field: &LatticeField, lambda1: f64) -> Result<LatticeField> {
    if field.degree() != 0 {
        return Err(Error::DegreeMismatch {
            left: field.degree(),
            right: 0,
        });
    }
    let mean = field.component_means()[0];
    if mean.abs() > mean_tolerance(field) {
        return Err(Error::InvalidInput(format!(
            "modified heat flow needs a mean-free function, mean is {mean:.3e}"
        )));
    }
    let mut rate = rhs_heat(field, &MetricField::flat(field.grid()))?;
    rate.axpy(lambda1, field)?;
    Ok(rate)
}

/// `Δ_φ φ` with the metric induced by `φ`, evaluated as `dδφ`.
///
/// The two agree on closed forms. Dropping `δdφ` keeps the rate exact: on
/// non-closed directions that term is a backward heat operator, and it
/// amplifies roundoff in `dφ` at the rate of the largest resolved
/// wavenumber squared.
pub fn rhs_laplacian(phi: &LatticeField, frames: &FrameField) -> Result<LatticeField> {
    exact_laplacian(phi, frames.metric_field())
}

/// `dδα`, the Hodge Laplacian of a closed form.
fn exact_laplacian(field: &LatticeField, mf: &MetricField) -> Result<LatticeField> {
    d(&codiff(field, mf)?)
}

/// `Δ_φ φ + d(X⌟φ)` with the DeTurck field of the induced metric against
/// `background`.
pub fn rhs_laplacian_deturck(
    phi: &LatticeField,
    frames: &FrameField,
    background: &MetricField,
) -> Result<LatticeField> {
    let mf = frames.metric_field();
    let mut rate = exact_laplacian(phi, mf)?;
    let x = deturck_vector(mf, background)?;
    rate.axpy(1.0, &d(&contract_field(&x, phi))?)?;
    Ok(rate)
}

/// Converts a 4-form rate into the 3-form rate inducing it, site by site.
pub fn phi_rate_field(frames: &FrameField, psi_rate: &LatticeField) -> LatticeField {
    par_map_sites(frames.grid(), 3, |s| {
        phi_rate_from_psi_rate(frames.at(s), &psi_rate.at(s)).reassemble(frames.at(s))
    })
}

/// Per-site decompositions of a 4-form rate.
pub fn psi_rate_decompositions(frames: &FrameField, psi_rate: &LatticeField) -> Vec<FlowDecomposition> {
    (0..frames.grid().sites())
        .into_par_iter()
        .map(|s| phi_rate_from_psi_rate(frames.at(s), &psi_rate.at(s)))
        .collect()
}

/// `Δ_ψ ψ` for `ψ = *φ`, evaluated as `dδψ` (see [`rhs_laplacian`]).
pub fn coflow_psi_rate(frames: &FrameField) -> Result<LatticeField> {
    exact_laplacian(&frames.psi_field(), frames.metric_field())
}

/// `Δ_ψ ψ + d((c − 7τ0/2) φ)`.
pub fn modified_coflow_psi_rate(phi: &LatticeField, frames: &FrameField, c: f64) -> Result<LatticeField> {
    let mut rate = coflow_psi_rate(frames)?;
    let fits = torsion_field(phi, frames)?;
    let weighted = par_map_sites(phi.grid(), 3, |s| phi.at(s) * (c - 3.5 * fits[s].forms.tau0));
    rate.axpy(1.0, &d(&weighted)?)?;
    Ok(rate)
}

/// The 3-form rate of the Laplacian coflow `∂ψ = Δ_ψ ψ`.
pub fn rhs_coflow(frames: &FrameField) -> Result<LatticeField> {
    Ok(phi_rate_field(frames, &coflow_psi_rate(frames)?))
}

/// The 3-form rate of the modified coflow.
pub fn rhs_modified_coflow(phi: &LatticeField, frames: &FrameField, c: f64) -> Result<LatticeField> {
    Ok(phi_rate_field(frames, &modified_coflow_psi_rate(phi, frames, c)?))
}

/// Central-difference gradient of `D_ν` with respect to every lattice
/// coefficient of `φ`, in site-major order of [`LatticeField::to_site_major`].
pub fn dirichlet_gradient(phi: &LatticeField, nu: &[f64; 4]) -> Result<Vec<f64>> {
    let dof = phi.raw().len();
    if dof > MAX_GRADIENT_DOF {
        return Err(Error::InvalidInput(format!(
            "numerical energy gradient over {dof} coefficients exceeds the budget of {MAX_GRADIENT_DOF}; \
             use fewer sites or fewer active axes"
        )));
    }
    let step = 1e-6 * phi.max_abs();
    let base = phi.to_site_major();
    let grid = phi.grid();
    let eval = |i: usize, delta: f64| -> Result<f64> {
        let mut v = base.clone();
        v[i] += delta;
        dirichlet_dnu(&LatticeField::from_site_major(grid, 3, &v)?, nu)
    };
    (0..dof)
        .into_par_iter()
        .map(|i| Ok((eval(i, step)? - eval(i, -step)?) / (2.0 * step)))
        .collect()
}

/// `−grad D_ν / cell volume`, the lattice analogue of the `L²` gradient flow.
pub fn rhs_dirichlet_gradient(phi: &LatticeField, nu: &[f64; 4]) -> Result<LatticeField> {
    let g = dirichlet_gradient(phi, nu)?;
    let scale = -1.0 / phi.grid().cell_volume();
    let v: Vec<f64> = g.into_iter().map(|x| x * scale).collect();
    LatticeField::from_site_major(phi.grid(), 3, &v)
}

/// State of a run between steps.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub step: u64,
    field: LatticeField,
    frames: Option<FrameField>,
    /// Background metric of the DeTurck flow.
    background: Option<MetricField>,
    /// Stability limit of the initial state.
    initial_limit: f64,
    /// Mean-free energy of the initial state.
    initial_energy: f64,
}

/// Quantities that a resumed run needs in addition to the field.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReference {
    pub initial_limit: f64,
    pub initial_energy: f64,
    pub background: Option<LatticeField>,
}

fn mean_free_energy(field: &LatticeField) -> f64 {
    let means = field.component_means();
    let mut dev = Vec::with_capacity(field.raw().len());
    for (c, m) in means.iter().enumerate() {
        dev.extend(field.plane(c).iter().map(|v| (v - m).powi(2)));
    }
    crate::lattice::pairwise_sum(&dev)
}

impl FlowState {
    /// Initial state at `t = 0`. The DeTurck background defaults to the
    /// metric of `field`.
    pub fn new(field: LatticeField, spec: &FlowSpec) -> std::result::Result<Self, FlowError> {
        Self::with_background(field, spec, None)
    }

    /// Initial state with an explicit DeTurck background structure.
    pub fn with_background(
        field: LatticeField,
        spec: &FlowSpec,
        background: Option<&LatticeField>,
    ) -> std::result::Result<Self, FlowError> {
        spec.validate()?;
        let mut state = Self {
            t: 0.0,
            step: 0,
            frames: None,
            background: None,
            initial_limit: 0.0,
            initial_energy: mean_free_energy(&field),
            field,
        };
        state.check_field(spec)?;
        if spec.kind == FlowKind::LaplacianDeturck {
            let bg = match background {
                Some(b) => FrameField::new(b).map_err(positivity)?.metric_field().clone(),
                None => state.frames.as_ref().expect("structure frames").metric_field().clone(),
            };
            state.background = Some(bg);
        }
        state.initial_limit = state.stability_limit(spec);
        Ok(state)
    }

    /// Rebuilds a state from a checkpointed field and its run reference.
    pub fn resume(
        field: LatticeField,
        t: f64,
        step: u64,
        reference: &RunReference,
        spec: &FlowSpec,
    ) -> std::result::Result<Self, FlowError> {
        spec.validate()?;
        let mut state = Self {
            t,
            step,
            frames: None,
            background: None,
            initial_limit: reference.initial_limit,
            initial_energy: reference.initial_energy,
            field,
        };
        state.check_field(spec)?;
        if spec.kind == FlowKind::LaplacianDeturck {
            let bg = reference
                .background
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("DeTurck run reference lacks a background".into()))?;
            state.background = Some(FrameField::new(bg).map_err(positivity)?.metric_field().clone());
        }
        Ok(state)
    }

    /// The reference quantities to store alongside a checkpoint.
    pub fn reference(&self, background_phi: Option<&LatticeField>) -> RunReference {
        RunReference {
            initial_limit: self.initial_limit,
            initial_energy: self.initial_energy,
            background: background_phi.cloned(),
        }
    }

    pub fn field(&self) -> &LatticeField {
        &self.field
    }

    pub fn frames(&self) -> Option<&FrameField> {
        self.frames.as_ref()
    }

    pub fn background(&self) -> Option<&MetricField> {
        self.background.as_ref()
    }

    fn check_field(&mut self, spec: &FlowSpec) -> std::result::Result<(), FlowError> {
        if !self.field.is_finite() {
            return Err(FlowError::Diverged("non-finite coefficients".into()));
        }
        if spec.kind.is_structure_flow() {
            if self.field.degree() != 3 {
                return Err(Error::DegreeMismatch {
                    left: self.field.degree(),
                    right: 3,
                }
                .into());
            }
            self.frames = Some(FrameField::new(&self.field).map_err(positivity)?);
        } else if let FlowKind::HeatModified { .. } = spec.kind {
            if self.field.degree() != 0 {
                return Err(Error::DegreeMismatch {
                    left: self.field.degree(),
                    right: 0,
                }
                .into());
            }
        }
        Ok(())
    }

    /// Estimate of the largest decay rate of the linearized right-hand side.
    fn max_rate(&self, spec: &FlowSpec) -> f64 {
        let grid = self.field.grid();
        let k2: f64 = grid.active_axes().map(|a| grid.max_wavenumber(a).powi(2)).sum();
        let inv_eig = match &self.frames {
            Some(f) => f
                .frames()
                .iter()
                .map(|fr| fr.metric().g_inv().symmetric_eigenvalues().max())
                .fold(0.0, f64::max),
            None => 1.0,
        };
        let factor = match spec.kind {
            FlowKind::DirichletGradient { nu } => nu.iter().cloned().fold(1.0, f64::max),
            _ => 1.0,
        };
        k2 * inv_eig * factor
    }

    /// Largest stable step for the current state.
    pub fn stability_limit(&self, spec: &FlowSpec) -> f64 {
        let lam = self.max_rate(spec);
        if lam > 0.0 {
            spec.safety * spec.stepper.stability() / lam
        } else {
            f64::INFINITY
        }
    }

    /// The right-hand side at the current state.
    pub fn rate(&self, spec: &FlowSpec) -> Result<LatticeField> {
        rate_of(&self.field, self.frames.as_ref(), self.background.as_ref(), spec)
    }
}

fn rate_of(
    field: &LatticeField,
    frames: Option<&FrameField>,
    background: Option<&MetricField>,
    spec: &FlowSpec,
) -> Result<LatticeField> {
    let frames = || frames.ok_or_else(|| Error::InvalidInput("structure flow without frames".into()));
    match spec.kind {
        FlowKind::Heat => Ok(constant_metric_laplacian(field, &Metric::identity()).scaled(-1.0)),
        FlowKind::HeatModified { lambda1 } => rhs_heat_modified(field, lambda1),
        FlowKind::Laplacian => rhs_laplacian(field, frames()?),
        FlowKind::LaplacianDeturck => rhs_laplacian_deturck(
            field,
            frames()?,
            background.ok_or_else(|| Error::InvalidInput("DeTurck flow without background".into()))?,
        ),
        FlowKind::Coflow => rhs_coflow(frames()?),
        FlowKind::ModifiedCoflow { c } => rhs_modified_coflow(field, frames()?, c),
        FlowKind::DirichletGradient { nu } => rhs_dirichlet_gradient(field, &nu),
    }
}

/// Rate at an intermediate stage, rebuilding frames for structure flows.
fn stage_rate(
    field: &LatticeField,
    background: Option<&MetricField>,
    spec: &FlowSpec,
) -> std::result::Result<LatticeField, FlowError> {
    if !field.is_finite() {
        return Err(FlowError::Diverged("non-finite coefficients".into()));
    }
    let frames = if spec.kind.is_structure_flow() {
        Some(FrameField::new(field).map_err(positivity)?)
    } else {
        None
    };
    Ok(rate_of(field, frames.as_ref(), background, spec)?)
}

/// Advances one step of at most `max_dt`; returns the step taken.
pub fn step(state: &mut FlowState, spec: &FlowSpec, max_dt: f64) -> std::result::Result<f64, FlowError> {
    let limit = state.stability_limit(spec);
    if limit < CFL_COLLAPSE_RATIO * state.initial_limit {
        return Err(FlowError::CflCollapse {
            limit,
            initial: state.initial_limit,
        });
    }
    let dt = spec.dt.min(limit).min(max_dt);
    let bg = state.background.clone();
    let k1 = state.rate(spec)?;
    let next = match spec.stepper {
        Stepper::Euler => state.field.plus(dt, &k1)?,
        Stepper::Rk4 => {
            let k2 = stage_rate(&state.field.plus(0.5 * dt, &k1)?, bg.as_ref(), spec)?;
            let k3 = stage_rate(&state.field.plus(0.5 * dt, &k2)?, bg.as_ref(), spec)?;
            let k4 = stage_rate(&state.field.plus(dt, &k3)?, bg.as_ref(), spec)?;
            let mut next = state.field.clone();
            next.axpy(dt / 6.0, &k1)?;
            next.axpy(dt / 3.0, &k2)?;
            next.axpy(dt / 3.0, &k3)?;
            next.axpy(dt / 6.0, &k4)?;
            next
        }
    };
    let next = match spec.filter {
        Some(f) => exponential_filter(&next, f.order, f.strength)?,
        None => next,
    };
    let mut candidate = FlowState {
        field: next,
        frames: None,
        ..state.clone()
    };
    candidate.check_field(spec)?;
    let energy = mean_free_energy(&candidate.field);
    if energy > MONITOR_FLOOR * state.initial_energy {
        let frac = highest_frequency_fraction(&candidate.field);
        if frac > DIVERGENCE_FRACTION {
            return Err(FlowError::Diverged(format!(
                "highest-frequency energy fraction {frac:.3} exceeds {DIVERGENCE_FRACTION}"
            )));
        }
    }
    candidate.t = state.t + dt;
    candidate.step = state.step + 1;
    *state = candidate;
    Ok(dt)
}

/// Outcome of [`run`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub sample_every: u64,
    /// `(step, t)` of every observed state, strictly increasing in `t`.
    pub samples: Vec<(u64, f64)>,
    pub termination: Termination,
    pub message: Option<String>,
    pub final_state: FlowState,
}

/// Steps until `t_end`, calling `observe` on the starting state and every
/// `sample_every` steps (and on the final state). The last step is shortened
/// to land on `t_end`.
pub fn run<F>(
    mut state: FlowState,
    spec: &FlowSpec,
    t_end: f64,
    sample_every: u64,
    mut observe: F,
) -> Result<Trajectory>
where
    F: FnMut(&FlowState) -> Result<()>,
{
    if sample_every == 0 {
        return Err(Error::InvalidInput("sample interval must be at least one step".into()));
    }
    let mut samples = Vec::new();
    let mut record = |s: &FlowState, samples: &mut Vec<(u64, f64)>| -> Result<()> {
        if samples.last().map_or(true, |&(_, t)| s.t > t) {
            observe(s)?;
            samples.push((s.step, s.t));
        }
        Ok(())
    };
    if state.step % sample_every == 0 {
        record(&state, &mut samples)?;
    }
    let mut termination = Termination::ReachedT;
    let mut message = None;
    while state.t < t_end {
        let remaining = t_end - state.t;
        match step(&mut state, spec, remaining) {
            Ok(_) => {
                if t_end - state.t <= 1e-14 * t_end.abs().max(1.0) {
                    state.t = t_end;
                }
                if state.step % sample_every == 0 {
                    record(&state, &mut samples)?;
                }
            }
            Err(e) => match e.termination() {
                Some(t) => {
                    termination = t;
                    message = Some(e.to_string());
                    break;
                }
                None => {
                    return Err(match e {
                        FlowError::Invalid(err) => err,
                        _ => unreachable!(),
                    })
                }
            },
        }
    }
    record(&state, &mut samples)?;
    Ok(Trajectory {
        sample_every,
        samples,
        termination,
        message,
        final_state: state,
    })
}
