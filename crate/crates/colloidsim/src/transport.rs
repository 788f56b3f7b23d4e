//! 1D macroscale column model: advection-dispersion of N colloid size
//! classes with deposition onto the grain surface, dynamic blocking,
//! Smoluchowski aggregation between classes, a switch-pulse inlet and
//! breakthrough extraction at the outlet.
//!
//! Per species i the model is
//!
//! ```text
//!   dt u_i = -v_i dx u_i + D_i dxx u_i - (f / (pi a_i^2)) dt theta_i + R_i(u)
//!   dt theta_i = pi a_i^2 k_i u_i B(theta_total)
//! ```
//!
//! discretized with first-order upwinding for advection, central differences
//! for dispersion and implicit Euler in time. Every step solves the full
//! coupled nonlinear system (all species, mobile and deposited, all nodes)
//! by Newton iteration with an analytic block-tridiagonal Jacobian.

use crate::kinetics::{reaction_jacobian, reaction_rates, AggregationKernel, Concentrations};
use crate::linalg::BlockTridiag;
use crate::SpeciesLadder;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("parameter error: {0}")]
    InvalidParameter(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("Newton failed at t = {time:.6e} s after {iterations} iterations (scaled residual {residual:.3e})")]
    NonConvergence {
        time: f64,
        iterations: usize,
        residual: f64,
    },
    #[error("linear solve failed at t = {time:.6e} s")]
    LinearSolveFailed { time: f64 },
    #[error(transparent)]
    Kinetics(#[from] crate::kinetics::KineticsError),
}

/// Column and flow parameters, following the Johnson-Sun-Elimelech setup.
#[derive(Debug, Clone)]
pub struct ColumnParams {
    /// Column length L [m].
    pub length: f64,
    /// Darcy velocity U [m/s].
    pub darcy_velocity: f64,
    /// Porosity of the packed column [-].
    pub porosity: f64,
    /// Collector grain radius a_c [m].
    pub collector_radius: f64,
    /// Particle (monomer) radius a_p [m].
    pub particle_radius: f64,
    /// Dispersivity alpha_L [m].
    pub dispersivity: f64,
    /// Bulk molecular diffusivity D_inf [m²/s].
    pub bulk_diffusivity: f64,
    /// Medium tortuosity factor dividing D_inf [-].
    pub medium_tortuosity: f64,
    /// Deposition kinetic rate constant k [m/s].
    pub kinetic_rate: f64,
    /// Inlet concentration n0 [1/m³].
    pub inlet_conc: f64,
    /// Pulse duration t0 [s].
    pub pulse_duration: f64,
    /// Exponent of the size-monotone deposition affinity k_i = k (r_i/r_1)^e.
    pub affinity_exponent: f64,
}

/// The four closed-form hydrodynamic quantities derived from the column
/// parameters.
#[derive(Debug, Clone, Copy)]
pub struct DerivedHydro {
    /// Pore radius r_0 [m].
    pub pore_radius: f64,
    /// Interstitial particle velocity v_p [m/s].
    pub interstitial_velocity: f64,
    /// Hydrodynamic dispersion coefficient D_h [m²/s].
    pub dispersion: f64,
    /// Specific surface area f [1/m].
    pub specific_surface: f64,
}

impl ColumnParams {
    /// Table parameters of the reference column experiment. The bulk
    /// diffusivity defaults to the monomer Einstein-Stokes value; its
    /// contribution (~1.6e-12 m²/s) is negligible against the mechanical
    /// dispersion alpha_L v_p (~1.8e-7 m²/s).
    pub fn johnson_reference() -> Self {
        Self {
            length: 0.101,
            darcy_velocity: 1.02e-4,
            porosity: 0.392,
            collector_radius: 0.16e-3,
            particle_radius: 0.15e-6,
            dispersivity: 0.692e-3,
            bulk_diffusivity: 1.6358e-12,
            medium_tortuosity: 1.0,
            kinetic_rate: 5e-7,
            inlet_conc: 5.58e14,
            pulse_duration: 5445.0,
            affinity_exponent: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        let positives = [
            ("length", self.length),
            ("darcy_velocity", self.darcy_velocity),
            ("collector_radius", self.collector_radius),
            ("particle_radius", self.particle_radius),
            ("pulse_duration", self.pulse_duration),
            ("medium_tortuosity", self.medium_tortuosity),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TransportError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.porosity > 0.0 && self.porosity < 1.0) {
            return Err(TransportError::InvalidParameter(format!(
                "porosity must lie in (0,1), got {}",
                self.porosity
            )));
        }
        for (name, v) in [
            ("dispersivity", self.dispersivity),
            ("bulk_diffusivity", self.bulk_diffusivity),
            ("kinetic_rate", self.kinetic_rate),
            ("inlet_conc", self.inlet_conc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TransportError::InvalidParameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        derived_hydro(self).map(|_| ())
    }
}

/// Evaluate the closed formulas for pore radius, interstitial velocity,
/// hydrodynamic dispersion and specific surface area.
pub fn derived_hydro(params: &ColumnParams) -> Result<DerivedHydro, TransportError> {
    derived_hydro_for_radius(params, params.particle_radius)
}

/// Same formulas with the particle radius replaced by an aggregate radius.
pub fn derived_hydro_for_radius(
    params: &ColumnParams,
    radius: f64,
) -> Result<DerivedHydro, TransportError> {
    let phi = params.porosity;
    let pore_radius = (1.1969 * phi - 0.1557) * params.collector_radius;
    if pore_radius <= radius {
        return Err(TransportError::Geometry(format!(
            "colloid larger than pore: r = {radius:.3e} m, r_0 = {pore_radius:.3e} m"
        )));
    }
    let ratio = 1.0 - radius / pore_radius;
    let interstitial_velocity = params.darcy_velocity / phi * (2.0 - ratio * ratio);
    let dispersion = params.bulk_diffusivity / params.medium_tortuosity
        + params.dispersivity * interstitial_velocity;
    let specific_surface = 3.0 * (1.0 - phi) / (phi * params.collector_radius);
    Ok(DerivedHydro {
        pore_radius,
        interstitial_velocity,
        dispersion,
        specific_surface,
    })
}

/// Dynamic blocking function reducing the deposition rate with coverage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockingFunction {
    None,
    /// Langmuir: B = 1 - beta theta.
    Langmuir { beta: f64 },
    /// RSA third-order excluded-area expansion in x = beta theta:
    /// B = 1 - 4x + 3.308 x² + 1.4069 x³.
    Rsa { beta: f64, theta_inf: f64 },
}

impl BlockingFunction {
    pub fn value(&self, theta: f64) -> f64 {
        match *self {
            BlockingFunction::None => 1.0,
            BlockingFunction::Langmuir { beta } => 1.0 - beta * theta,
            BlockingFunction::Rsa { beta, .. } => {
                let x = beta * theta;
                1.0 - 4.0 * x + 3.308 * x * x + 1.4069 * x * x * x
            }
        }
    }

    pub fn derivative(&self, theta: f64) -> f64 {
        match *self {
            BlockingFunction::None => 0.0,
            BlockingFunction::Langmuir { beta } => -beta,
            BlockingFunction::Rsa { beta, .. } => {
                let x = beta * theta;
                beta * (-4.0 + 2.0 * 3.308 * x + 3.0 * 1.4069 * x * x)
            }
        }
    }

    /// Coverage at which B first reaches zero (deposition cap), if any.
    /// For RSA the root is located numerically by bisection.
    pub fn coverage_cap(&self) -> Option<f64> {
        match *self {
            BlockingFunction::None => None,
            BlockingFunction::Langmuir { beta } => Some(1.0 / beta),
            BlockingFunction::Rsa { beta, .. } => {
                let f = |x: f64| 1.0 - 4.0 * x + 3.308 * x * x + 1.4069 * x * x * x;
                // scan for the first sign change (the cubic turns positive
                // again at larger x), then bisect
                let (mut lo, mut hi) = (0.0, 0.0);
                let mut found = false;
                for k in 1..=100 {
                    let x = 0.01 * k as f64;
                    if f(x) <= 0.0 {
                        lo = x - 0.01;
                        hi = x;
                        found = true;
                        break;
                    }
                }
                if !found {
                    return None;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(0.5 * (lo + hi) / beta)
            }
        }
    }
}

/// Public wrapper mirroring the per-operation surface.
pub fn blocking_value(b: &BlockingFunction, theta: f64) -> f64 {
    b.value(theta)
}

/// Inlet boundary treatment.
#[derive(Clone)]
pub enum InletSpec {
    /// Dirichlet switch pulse: species 1 held at n0 for t <= t0, 0 after;
    /// all other species held at 0.
    SwitchPulse { n0: f64, t0: f64 },
    /// No flux through x = 0 (closed box; intended for v = 0 test setups).
    Closed,
    /// Time- and species-dependent Dirichlet values.
    Dirichlet(Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for InletSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InletSpec::SwitchPulse { n0, t0 } => {
                write!(f, "SwitchPulse {{ n0: {n0}, t0: {t0} }}")
            }
            InletSpec::Closed => write!(f, "Closed"),
            InletSpec::Dirichlet(_) => write!(f, "Dirichlet(<fn>)"),
        }
    }
}

/// How mobile mass converts to immobile mass.
#[derive(Clone, Debug)]
pub enum DepositionMode {
    /// Surface-coverage kinetics with a blocking function; `coverage` stores
    /// the fractional coverage theta_i.
    Blocking,
    /// Upscaled linear exchange dt v_i = a_i u_i - b_i v_i; `coverage`
    /// stores the volumetric deposited concentration v_i. This is the
    /// blocking-free limit B = 1 of the surface kinetics.
    LinearExchange { a: Vec<f64>, b: Vec<f64> },
}

pub type SourceFn = Arc<dyn Fn(usize, f64, f64) -> f64 + Send + Sync>;

/// Fully resolved coefficients and closures for a column run.
#[derive(Clone)]
pub struct ColumnModel {
    pub n_species: usize,
    /// Number of grid nodes, M + 1.
    pub n_nodes: usize,
    pub length: f64,
    /// Per-species interstitial velocity [m/s].
    pub velocity: Vec<f64>,
    /// Per-species hydrodynamic dispersion [m²/s].
    pub dispersion: Vec<f64>,
    /// Per-species deposition rate constant k_i [m/s].
    pub deposition_rate: Vec<f64>,
    /// Per-species cross section pi a_i² [m²].
    pub cross_section: Vec<f64>,
    /// Specific surface area f [1/m].
    pub specific_surface: f64,
    pub blocking: BlockingFunction,
    pub kernel: Option<AggregationKernel>,
    pub deposition: DepositionMode,
    pub inlet: InletSpec,
    /// Optional appended source term S_i(x, t) for manufactured solutions.
    pub source: Option<SourceFn>,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl std::fmt::Debug for ColumnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ColumnModel")
            .field("n_species", &self.n_species)
            .field("n_nodes", &self.n_nodes)
            .field("length", &self.length)
            .field("velocity", &self.velocity)
            .field("dispersion", &self.dispersion)
            .field("deposition_rate", &self.deposition_rate)
            .field("blocking", &self.blocking)
            .field("deposition", &self.deposition)
            .field("inlet", &self.inlet)
            .field("has_source", &self.source.is_some())
            .finish_non_exhaustive()
    }
}

impl ColumnModel {
    /// Single-species column from the physical parameters.
    pub fn single_species(
        params: &ColumnParams,
        blocking: BlockingFunction,
        nodes: usize,
    ) -> Result<Self, TransportError> {
        params.validate()?;
        let h = derived_hydro(params)?;
        Ok(Self {
            n_species: 1,
            n_nodes: nodes,
            length: params.length,
            velocity: vec![h.interstitial_velocity],
            dispersion: vec![h.dispersion],
            deposition_rate: vec![params.kinetic_rate],
            cross_section: vec![std::f64::consts::PI * params.particle_radius * params.particle_radius],
            specific_surface: h.specific_surface,
            blocking,
            kernel: None,
            deposition: DepositionMode::Blocking,
            inlet: InletSpec::SwitchPulse {
                n0: params.inlet_conc,
                t0: params.pulse_duration,
            },
            source: None,
            newton_tol: 1e-10,
            max_newton: 25,
        })
    }

    /// Aggregating column: per-species velocity and dispersion from the
    /// aggregate radii, deposition affinity monotone in size.
    pub fn multi_species(
        params: &ColumnParams,
        ladder: &SpeciesLadder,
        kernel: AggregationKernel,
        blocking: BlockingFunction,
        nodes: usize,
    ) -> Result<Self, TransportError> {
        params.validate()?;
        let n = ladder.n_classes;
        if kernel.n != n {
            return Err(TransportError::InvalidParameter(format!(
                "kernel dimension {} does not match ladder {n}",
                kernel.n
            )));
        }
        let mut velocity = Vec::with_capacity(n);
        let mut dispersion = Vec::with_capacity(n);
        let mut deposition_rate = Vec::with_capacity(n);
        let mut cross_section = Vec::with_capacity(n);
        for i in 0..n {
            let r = ladder.radii[i];
            let h = derived_hydro_for_radius(params, r)?;
            velocity.push(h.interstitial_velocity);
            // species diffusivity from the ladder, mechanical dispersion
            // from the species velocity
            dispersion.push(
                ladder.diffusivities[i] / params.medium_tortuosity
                    + params.dispersivity * h.interstitial_velocity,
            );
            deposition_rate
                .push(params.kinetic_rate * (r / ladder.radii[0]).powf(params.affinity_exponent));
            cross_section.push(std::f64::consts::PI * r * r);
        }
        let h = derived_hydro(params)?;
        Ok(Self {
            n_species: n,
            n_nodes: nodes,
            length: params.length,
            velocity,
            dispersion,
            deposition_rate,
            cross_section,
            specific_surface: h.specific_surface,
            blocking,
            kernel: Some(kernel),
            deposition: DepositionMode::Blocking,
            inlet: InletSpec::SwitchPulse {
                n0: params.inlet_conc,
                t0: params.pulse_duration,
            },
            source: None,
            newton_tol: 1e-10,
            max_newton: 25,
        })
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.n_nodes - 1) as f64
    }

    /// Conversion from stored coverage units to mobile-concentration units,
    /// per species. The Newton iteration works in mobile units throughout so
    /// the Jacobian blocks stay well balanced (coverages are O(1) while
    /// concentrations are O(1e14); mixing them costs ~16 digits of
    /// conditioning).
    fn coverage_to_mobile(&self) -> Vec<f64> {
        match &self.deposition {
            DepositionMode::Blocking => self
                .cross_section
                .iter()
                .map(|&cs| {
                    if self.specific_surface > 0.0 {
                        self.specific_surface / cs
                    } else {
                        1.0
                    }
                })
                .collect(),
            DepositionMode::LinearExchange { .. } => vec![1.0; self.n_species],
        }
    }

    fn inlet_values(&self, t: f64) -> Option<Vec<f64>> {
        match &self.inlet {
            InletSpec::SwitchPulse { n0, t0 } => {
                let mut v = vec![0.0; self.n_species];
                v[0] = if t <= *t0 { *n0 } else { 0.0 };
                Some(v)
            }
            InletSpec::Closed => None,
            InletSpec::Dirichlet(f) => {
                Some((0..self.n_species).map(|i| f(t, i)).collect())
            }
        }
    }
}

/// Discretized column state.
#[derive(Debug, Clone)]
pub struct ColumnState {
    /// Node coordinates on [0, L].
    pub grid: Vec<f64>,
    /// mobile[i][m]: concentration of species i at node m [1/m³].
    pub mobile: Vec<Vec<f64>>,
    /// coverage[i][m]: fractional surface coverage theta_i (blocking mode)
    /// or deposited concentration v_i (linear-exchange mode).
    pub coverage: Vec<Vec<f64>>,
    pub time: f64,
}

impl ColumnState {
    /// Zero initial condition on a uniform grid.
    pub fn zeros(model: &ColumnModel) -> Self {
        let m = model.n_nodes;
        let dx = model.dx();
        Self {
            grid: (0..m).map(|i| i as f64 * dx).collect(),
            mobile: vec![vec![0.0; m]; model.n_species],
            coverage: vec![vec![0.0; m]; model.n_species],
            time: 0.0,
        }
    }

    /// Trapezoid-consistent mobile mass of one species: half cells at both
    /// ends, the inlet node excluded from the balance volume.
    pub fn mobile_mass(&self, model: &ColumnModel, species: usize) -> f64 {
        let dx = model.dx();
        let m = model.n_nodes - 1;
        let u = &self.mobile[species];
        let mut mass = 0.0;
        for (node, &val) in u.iter().enumerate().take(m).skip(1) {
            let _ = node;
            mass += val * dx;
        }
        mass + u[m] * 0.5 * dx
    }

    /// Deposited mass of one species expressed in mobile-concentration
    /// units, over the balance volume.
    pub fn deposited_mass(&self, model: &ColumnModel, species: usize) -> f64 {
        let dx = model.dx();
        let m = model.n_nodes - 1;
        let factor = match &model.deposition {
            DepositionMode::Blocking => model.specific_surface / model.cross_section[species],
            DepositionMode::LinearExchange { .. } => 1.0,
        };
        let th = &self.coverage[species];
        let mut mass = 0.0;
        for &val in th.iter().take(m).skip(1) {
            mass += val * dx;
        }
        (mass + th[m] * 0.5 * dx) * factor
    }

    /// Largest total coverage over the grid.
    pub fn max_total_coverage(&self) -> f64 {
        let nodes = self.coverage[0].len();
        (0..nodes)
            .map(|m| self.coverage.iter().map(|c| c[m]).sum::<f64>())
            .fold(0.0_f64, f64::max)
    }
}

/// Per-species boundary fluxes at the new time level [1/(m² s)].
#[derive(Debug, Clone)]
pub struct StepFluxes {
    pub inlet: Vec<f64>,
    pub outlet: Vec<f64>,
    /// Number of negative concentrations clamped to zero this step.
    pub clamped: usize,
    /// True if the blocking function went negative anywhere.
    pub negative_blocking: bool,
}

/// Advance the coupled column system one implicit Euler step.
pub fn step_column(
    state: &mut ColumnState,
    model: &ColumnModel,
    dt: f64,
) -> Result<StepFluxes, TransportError> {
    if !(dt > 0.0) {
        return Err(TransportError::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let n = model.n_species;
    let nodes = model.n_nodes;
    let dx = model.dx();
    let block = 2 * n;
    let t_new = state.time + dt;
    let inlet = model.inlet_values(t_new);

    // flattened new iterate: per node [u_1..u_N, s_1..s_N], where s_i is the
    // deposited amount expressed in mobile-concentration units
    let conv = model.coverage_to_mobile();
    let mut x = vec![0.0; nodes * block];
    for m in 0..nodes {
        for i in 0..n {
            x[m * block + i] = state.mobile[i][m];
            x[m * block + n + i] = state.coverage[i][m] * conv[i];
        }
    }
    let old = x.clone();

    let scale = {
        let mut s = x.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
        if let Some(vals) = &inlet {
            s = s.max(vals.iter().cloned().fold(0.0, f64::max));
        }
        if let InletSpec::SwitchPulse { n0, .. } = model.inlet {
            s = s.max(n0);
        }
        s.max(1e-300)
    };

    let mut residual = vec![0.0; nodes * block];
    let mut scaled_res = f64::INFINITY;
    let mut converged = false;
    for _newton in 0..model.max_newton {
        let mut jac = BlockTridiag::new(nodes, block);
        assemble(
            model, &conv, &x, &old, dt, dx, t_new, inlet.as_deref(), &mut residual, &mut jac,
        )?;

        // every row carries mobile units now; check in units of scale/dt
        scaled_res = 0.0;
        for r in &residual {
            scaled_res = scaled_res.max(r.abs() * dt / scale);
        }
        if scaled_res <= model.newton_tol {
            converged = true;
            break;
        }

        let delta = jac
            .solve(&residual)
            .ok_or(TransportError::LinearSolveFailed { time: t_new })?;
        for (xi, di) in x.iter_mut().zip(&delta) {
            *xi -= di;
        }
    }
    if !converged {
        return Err(TransportError::NonConvergence {
            time: t_new,
            iterations: model.max_newton,
            residual: scaled_res,
        });
    }

    // write back, clamping tolerated undershoots
    let mut clamped = 0usize;
    for m in 0..nodes {
        for i in 0..n {
            let mut u = x[m * block + i];
            if u < 0.0 && u > -1e-9 * scale {
                u = 0.0;
                clamped += 1;
            }
            state.mobile[i][m] = u;
            let mut s = x[m * block + n + i];
            if s < 0.0 && s > -1e-9 * scale {
                s = 0.0;
                clamped += 1;
            }
            state.coverage[i][m] = s / conv[i];
        }
    }
    if clamped > 0 {
        log::debug!("clamped {clamped} negative values at t = {t_new:.4e} s");
    }
    state.time = t_new;

    let negative_blocking = (0..nodes).any(|m| {
        let theta_tot: f64 = (0..n).map(|i| state.coverage[i][m]).sum();
        model.blocking.value(theta_tot) < 0.0
    });

    // boundary fluxes at the new time level, per species
    let mut inlet_flux = vec![0.0; n];
    let mut outlet_flux = vec![0.0; n];
    for i in 0..n {
        let u = &state.mobile[i];
        if inlet.is_some() {
            inlet_flux[i] =
                model.velocity[i] * u[0] - model.dispersion[i] * (u[1] - u[0]) / dx;
        }
        outlet_flux[i] = model.velocity[i] * u[nodes - 1];
    }
    Ok(StepFluxes {
        inlet: inlet_flux,
        outlet: outlet_flux,
        clamped,
        negative_blocking,
    })
}

/// Residual and Jacobian assembly for one Newton iteration. The deposited
/// unknowns arrive converted to mobile units (s_i = conv_i * theta_i).
#[allow(clippy::too_many_arguments)]
fn assemble(
    model: &ColumnModel,
    conv: &[f64],
    x: &[f64],
    old: &[f64],
    dt: f64,
    dx: f64,
    t_new: f64,
    inlet: Option<&[f64]>,
    residual: &mut [f64],
    jac: &mut BlockTridiag,
) -> Result<(), TransportError> {
    let n = model.n_species;
    let nodes = model.n_nodes;
    let block = 2 * n;
    let inv_dt = 1.0 / dt;

    for m in 0..nodes {
        let base = m * block;
        let u_node = Concentrations {
            values: (0..n).map(|i| x[base + i]).collect(),
        };
        let theta_tot: f64 = (0..n).map(|i| x[base + n + i] / conv[i]).sum();

        let (rates, r_jac) = match &model.kernel {
            Some(k) => (
                reaction_rates(&u_node, k)?,
                Some(reaction_jacobian(&u_node, k)),
            ),
            None => (vec![0.0; n], None),
        };

        for i in 0..n {
            let u = x[base + i];
            let u_old = old[base + i];
            let s = x[base + n + i];
            let s_old = old[base + n + i];
            let v = model.velocity[i];
            let dcoef = model.dispersion[i];
            let row_u = base + i;
            let row_t = base + n + i;

            // ---- immobile equation, in mobile units ----
            match &model.deposition {
                DepositionMode::Blocking => {
                    let cs = model.cross_section[i];
                    let k_i = model.deposition_rate[i];
                    let b_val = model.blocking.value(theta_tot);
                    let b_der = model.blocking.derivative(theta_tot);
                    let uptake = conv[i] * cs * k_i; // = f k_i when f > 0
                    residual[row_t] = (s - s_old) * inv_dt - uptake * u * b_val;
                    jac.diag[m].add(n + i, i, -uptake * b_val);
                    for j in 0..n {
                        let mut val = -uptake * u * b_der / conv[j];
                        if j == i {
                            val += inv_dt;
                        }
                        jac.diag[m].add(n + i, n + j, val);
                    }
                }
                DepositionMode::LinearExchange { a, b } => {
                    residual[row_t] = (s - s_old) * inv_dt - a[i] * u + b[i] * s;
                    jac.diag[m].add(n + i, i, -a[i]);
                    jac.diag[m].add(n + i, n + i, inv_dt + b[i]);
                }
            }

            // ---- mobile equation ----
            if m == 0 {
                if let Some(vals) = inlet {
                    residual[row_u] = u - vals[i];
                    jac.diag[m].add(i, i, 1.0);
                    continue;
                }
            }

            // deposition sink, already in mobile units
            let sink = (s - s_old) * inv_dt;

            let mut res = (u - u_old) * inv_dt + sink - rates[i];
            jac.diag[m].add(i, i, inv_dt);
            jac.diag[m].add(i, n + i, inv_dt);
            if let Some(rj) = &r_jac {
                for j in 0..n {
                    jac.diag[m].add(i, j, -rj.get(i, j));
                }
            }
            if let Some(src) = &model.source {
                res -= src(i, m as f64 * dx, t_new);
            }

            if m == 0 {
                // closed inlet: half cell, flux only through the right face
                let u_e = x[block + i];
                res += 2.0 / dx * (v * u - dcoef * (u_e - u) / dx);
                jac.diag[m].add(i, i, 2.0 / dx * (v + dcoef / dx));
                jac.upper[m].add(i, i, -2.0 * dcoef / (dx * dx));
            } else if m < nodes - 1 {
                let u_w = x[(m - 1) * block + i];
                let u_e = x[(m + 1) * block + i];
                res += v * (u - u_w) / dx - dcoef * (u_e - 2.0 * u + u_w) / (dx * dx);
                jac.diag[m].add(i, i, v / dx + 2.0 * dcoef / (dx * dx));
                jac.lower[m - 1].add(i, i, -v / dx - dcoef / (dx * dx));
                jac.upper[m].add(i, i, -dcoef / (dx * dx));
            } else {
                // outlet: half cell, upwind outflow, zero-gradient kills the
                // dispersive boundary flux
                let u_w = x[(m - 1) * block + i];
                let coef = 2.0 / dx * (v + dcoef / dx);
                res += coef * (u - u_w);
                jac.diag[m].add(i, i, coef);
                jac.lower[m - 1].add(i, i, -coef);
            }
            residual[row_u] = res;
        }
    }
    Ok(())
}

/// Outlet time series per species plus the mass-weighted total.
#[derive(Debug, Clone)]
pub struct BreakthroughCurve {
    pub times: Vec<f64>,
    /// outlet[i][step]: species i concentration at x = L.
    pub outlet: Vec<Vec<f64>>,
    /// coverage_outlet[i][step]: coverage at the outlet node.
    pub coverage_outlet: Vec<Vec<f64>>,
    /// Mass-weighted total Σ i·u_i at x = L.
    pub total_mass_weighted: Vec<f64>,
}

impl BreakthroughCurve {
    fn with_species(n: usize) -> Self {
        Self {
            times: Vec::new(),
            outlet: vec![Vec::new(); n],
            coverage_outlet: vec![Vec::new(); n],
            total_mass_weighted: Vec::new(),
        }
    }

    /// Time at which the mass-weighted total first reaches `fraction` of its
    /// final plateau (last recorded value), linearly interpolated.
    pub fn time_to_fraction_of_plateau(&self, fraction: f64) -> Option<f64> {
        let plateau = *self.total_mass_weighted.last()?;
        if plateau <= 0.0 {
            return None;
        }
        let target = fraction * plateau;
        for (s, &v) in self.total_mass_weighted.iter().enumerate() {
            if v >= target {
                if s == 0 {
                    return Some(self.times[0]);
                }
                let (t0, t1) = (self.times[s - 1], self.times[s]);
                let (v0, v1) = (self.total_mass_weighted[s - 1], v);
                return Some(t0 + (target - v0) / (v1 - v0) * (t1 - t0));
            }
        }
        None
    }

    /// First time the mass-weighted total reaches an absolute level,
    /// linearly interpolated; `None` if it never does.
    pub fn time_to_level(&self, level: f64) -> Option<f64> {
        for (s, &v) in self.total_mass_weighted.iter().enumerate() {
            if v >= level {
                if s == 0 {
                    return Some(self.times[0]);
                }
                let (t0, t1) = (self.times[s - 1], self.times[s]);
                let (v0, v1) = (self.total_mass_weighted[s - 1], v);
                return Some(t0 + (level - v0) / (v1 - v0) * (t1 - t0));
            }
        }
        None
    }

    /// Trapezoid integral of the mass-weighted outlet concentration.
    pub fn cumulative_outlet_mass(&self) -> f64 {
        let mut acc = 0.0;
        for s in 1..self.times.len() {
            let dt = self.times[s] - self.times[s - 1];
            acc += 0.5 * (self.total_mass_weighted[s] + self.total_mass_weighted[s - 1]) * dt;
        }
        acc
    }
}

/// Running mass accounting of a column simulation, per species, in mobile
/// concentration units times length.
#[derive(Debug, Clone)]
pub struct MassBalance {
    pub injected: Vec<f64>,
    pub outflowed: Vec<f64>,
}

impl MassBalance {
    /// Mass-weighted relative closure error of
    /// injected = mobile + deposited + outflowed.
    pub fn closure_error(&self, state: &ColumnState, model: &ColumnModel) -> f64 {
        let n = model.n_species;
        let weight = |i: usize| (i + 1) as f64;
        let injected: f64 = (0..n).map(|i| weight(i) * self.injected[i]).sum();
        let held: f64 = (0..n)
            .map(|i| {
                weight(i) * (state.mobile_mass(model, i) + state.deposited_mass(model, i))
            })
            .sum();
        let out: f64 = (0..n).map(|i| weight(i) * self.outflowed[i]).sum();
        let scale = injected.abs().max(held.abs()).max(1e-300);
        (injected - held - out).abs() / scale
    }
}

/// Result of a full column run.
#[derive(Debug, Clone)]
pub struct ColumnRun {
    pub state: ColumnState,
    pub curve: BreakthroughCurve,
    pub balance: MassBalance,
    /// Per-species maximum coverage over space and time.
    pub max_coverage: Vec<f64>,
    /// Maximum total coverage over space and time.
    pub max_total_coverage: f64,
    pub clamp_events: usize,
    pub negative_blocking_flagged: bool,
    pub newton_steps: usize,
}

/// Time-march from the zero initial condition, recording outlet values each
/// step.
pub fn run_column(model: &ColumnModel, t_end: f64, dt: f64) -> Result<ColumnRun, TransportError> {
    let mut state = ColumnState::zeros(model);
    run_column_from(model, state.clone(), t_end, dt).map(|mut run| {
        std::mem::swap(&mut run.state, &mut state);
        std::mem::swap(&mut run.state, &mut state);
        run
    })
}

/// Time-march from a given initial state.
pub fn run_column_from(
    model: &ColumnModel,
    mut state: ColumnState,
    t_end: f64,
    dt: f64,
) -> Result<ColumnRun, TransportError> {
    let n = model.n_species;
    let nodes = model.n_nodes;
    let mut curve = BreakthroughCurve::with_species(n);
    let mut balance = MassBalance {
        injected: vec![0.0; n],
        outflowed: vec![0.0; n],
    };
    let mut max_coverage = vec![0.0_f64; n];
    let mut max_total = 0.0_f64;
    let mut clamp_events = 0usize;
    let mut negative_blocking = false;
    let mut steps = 0usize;

    while state.time < t_end - 1e-9 * dt {
        let step_dt = dt.min(t_end - state.time);
        let fluxes = step_column(&mut state, model, step_dt)?;
        steps += 1;
        clamp_events += fluxes.clamped;
        negative_blocking |= fluxes.negative_blocking;
        for i in 0..n {
            balance.injected[i] += step_dt * fluxes.inlet[i];
            balance.outflowed[i] += step_dt * fluxes.outlet[i];
            let cmax = state.coverage[i].iter().cloned().fold(0.0, f64::max);
            max_coverage[i] = max_coverage[i].max(cmax);
        }
        max_total = max_total.max(state.max_total_coverage());

        curve.times.push(state.time);
        let mut total = 0.0;
        for i in 0..n {
            let u_out = state.mobile[i][nodes - 1];
            curve.outlet[i].push(u_out);
            curve.coverage_outlet[i].push(state.coverage[i][nodes - 1]);
            total += (i + 1) as f64 * u_out;
        }
        curve.total_mass_weighted.push(total);
    }

    Ok(ColumnRun {
        state,
        curve,
        balance,
        max_coverage,
        max_total_coverage: max_total,
        clamp_events,
        negative_blocking_flagged: negative_blocking,
        newton_steps: steps,
    })
}

/// Column coefficients obtained from the upscaled (homogenized) system.
#[derive(Debug, Clone)]
pub struct UpscaledCoefficients {
    pub velocity: Vec<f64>,
    /// D_h,i = d_i T*_11 + alpha_L v_p,i: the tortuosity tensor replaces the
    /// scalar medium tortuosity.
    pub dispersion: Vec<f64>,
    pub deposition_a: Vec<f64>,
    pub deposition_b: Vec<f64>,
}

/// Map upscaled tensors and effective exchange constants onto the 1D column
/// model. The exchange enters as the linear mode dt v = A u - B v, which is
/// the blocking-free limit of the surface kinetics.
pub fn effective_upscaled_system(
    tensors: &crate::homogenize::EffectiveTensors,
    a_eff: &[f64],
    b_eff: &[f64],
    params: &ColumnParams,
    ladder: &SpeciesLadder,
) -> Result<UpscaledCoefficients, TransportError> {
    let n = ladder.n_classes;
    if a_eff.len() != n || b_eff.len() != n {
        return Err(TransportError::InvalidParameter(format!(
            "exchange constants must have {n} entries"
        )));
    }
    let t11 = tensors.tortuosity[0][0];
    let mut velocity = Vec::with_capacity(n);
    let mut dispersion = Vec::with_capacity(n);
    for i in 0..n {
        let h = derived_hydro_for_radius(params, ladder.radii[i])?;
        velocity.push(h.interstitial_velocity);
        dispersion.push(ladder.diffusivities[i] * t11 + params.dispersivity * h.interstitial_velocity);
    }
    Ok(UpscaledCoefficients {
        velocity,
        dispersion,
        deposition_a: a_eff.to_vec(),
        deposition_b: b_eff.to_vec(),
    })
}

impl UpscaledCoefficients {
    /// Column model running the upscaled linear-exchange system.
    pub fn into_model(
        self,
        params: &ColumnParams,
        ladder: &SpeciesLadder,
        kernel: Option<AggregationKernel>,
        nodes: usize,
    ) -> ColumnModel {
        let n = ladder.n_classes;
        ColumnModel {
            n_species: n,
            n_nodes: nodes,
            length: params.length,
            velocity: self.velocity,
            dispersion: self.dispersion,
            deposition_rate: vec![0.0; n],
            cross_section: ladder
                .radii
                .iter()
                .map(|r| std::f64::consts::PI * r * r)
                .collect(),
            specific_surface: 3.0 * (1.0 - params.porosity)
                / (params.porosity * params.collector_radius),
            blocking: BlockingFunction::None,
            kernel,
            deposition: DepositionMode::LinearExchange {
                a: self.deposition_a,
                b: self.deposition_b,
            },
            inlet: InletSpec::SwitchPulse {
                n0: params.inlet_conc,
                t0: params.pulse_duration,
            },
            source: None,
            newton_tol: 1e-10,
            max_newton: 25,
        }
    }
}
