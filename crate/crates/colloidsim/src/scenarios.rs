//! Scenario orchestration: configuration ingestion, the six canned
//! pipelines, CSV persistence and run reports.
//!
//! Configuration files are flat, sectioned, typed key-value plain text:
//!
//! ```text
//! # comment
//! [scenario]
//! kind = column_single
//! output_dir = out/run1
//!
//! [column]
//! length = 0.101
//! ...
//! ```
//!
//! Parsing is strict: unknown sections or keys are fatal, so a typo cannot
//! silently fall back to a default. Every default the code resolves is
//! echoed into the run report, making a run reproducible from its report
//! alone.

use crate::homogenize::{
    effective_deposition, effective_diffusion, make_geometry, solve_cell_problems, GeometryKind,
};
use crate::kinetics::{
    brownian_kernel, build_ladder, einstein_stokes_diffusivity, step_batch, AggregationKernel,
    Closure, Concentrations, FluidProperties,
};
use crate::nondim::{dimensionless_groups, ReferenceQuantities};
use crate::transport::{
    derived_hydro, run_column, BlockingFunction, ColumnModel, ColumnParams, ColumnRun,
};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kinetics(#[from] crate::kinetics::KineticsError),
    #[error(transparent)]
    Homogenize(#[from] crate::homogenize::HomogenizeError),
    #[error(transparent)]
    Transport(#[from] crate::transport::TransportError),
    #[error(transparent)]
    Nondim(#[from] crate::nondim::NondimError),
}

/// True when the error came from a numerical solver rather than from the
/// configuration; the CLI maps this distinction onto exit codes.
pub fn is_solver_error(err: &ScenarioError) -> bool {
    use crate::homogenize::HomogenizeError as H;
    use crate::kinetics::KineticsError as K;
    use crate::transport::TransportError as T;
    match err {
        ScenarioError::Kinetics(K::NonConvergence { .. }) => true,
        ScenarioError::Homogenize(H::NonConvergence { .. }) => true,
        ScenarioError::Transport(T::NonConvergence { .. } | T::LinearSolveFailed { .. }) => true,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// raw key-value layer
// ---------------------------------------------------------------------------

struct RawConfig {
    /// (section, key) -> (value, line number, consumed)
    entries: BTreeMap<(String, String), (String, usize, bool)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    ScenarioError::Config(format!("line {lineno}: unterminated section header"))
                })?;
                section = Some(name.trim().to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ScenarioError::Config(format!("line {lineno}: expected `key = value`"))
            })?;
            let sec = section.clone().ok_or_else(|| {
                ScenarioError::Config(format!(
                    "line {lineno}: key before any [section] header"
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if entries
                .insert((sec.clone(), key.clone()), (value, lineno, false))
                .is_some()
            {
                return Err(ScenarioError::Config(format!(
                    "line {lineno}: duplicate key `{sec}.{key}`"
                )));
            }
        }
        if entries.is_empty() {
            return Err(ScenarioError::Config(
                "config is empty; required keys: [scenario] kind (one of cell_tensors, \
                 batch_aggregation, column_single, column_aggregating, blocking_compare, \
                 rate_sweep) plus the sections that scenario needs"
                    .into(),
            ));
        }
        Ok(Self { entries })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.entries
            .get_mut(&(section.to_string(), key.to_string()))
            .map(|(v, _, used)| {
                *used = true;
                v.clone()
            })
    }

    fn get_f64(&mut self, section: &str, key: &str) -> Result<Option<f64>, ScenarioError> {
        match self.take(section, key) {
            None => Ok(None),
            Some(v) => {
                let line = self.line_of(section, key);
                v.parse::<f64>().map(Some).map_err(|_| {
                    ScenarioError::Config(format!(
                        "line {line}: `{section}.{key}` is not a number: `{v}`"
                    ))
                })
            }
        }
    }

    fn get_usize(&mut self, section: &str, key: &str) -> Result<Option<usize>, ScenarioError> {
        match self.take(section, key) {
            None => Ok(None),
            Some(v) => {
                let line = self.line_of(section, key);
                v.parse::<usize>().map(Some).map_err(|_| {
                    ScenarioError::Config(format!(
                        "line {line}: `{section}.{key}` is not a nonnegative integer: `{v}`"
                    ))
                })
            }
        }
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|&(_, l, _)| l)
            .unwrap_or(0)
    }

    /// Strict-keys check: every provided key must have been consumed.
    fn finish(self) -> Result<(), ScenarioError> {
        for ((sec, key), (_, line, used)) in self.entries {
            if !used {
                return Err(ScenarioError::Config(format!(
                    "line {line}: unknown key `{sec}.{key}` (strict configuration; \
                     check spelling and whether the section applies to this scenario)"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// typed configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    CellTensors,
    BatchAggregation,
    ColumnSingle,
    ColumnAggregating,
    BlockingCompare,
    RateSweep,
}

impl ScenarioKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "cell_tensors" => Self::CellTensors,
            "batch_aggregation" => Self::BatchAggregation,
            "column_single" => Self::ColumnSingle,
            "column_aggregating" => Self::ColumnAggregating,
            "blocking_compare" => Self::BlockingCompare,
            "rate_sweep" => Self::RateSweep,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::CellTensors => "cell_tensors",
            Self::BatchAggregation => "batch_aggregation",
            Self::ColumnSingle => "column_single",
            Self::ColumnAggregating => "column_aggregating",
            Self::BlockingCompare => "blocking_compare",
            Self::RateSweep => "rate_sweep",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeometryConfig {
    pub kind: GeometryKind,
    pub resolution: usize,
    pub porosity: f64,
    pub diffusivity: f64,
    pub solver_tol: f64,
    /// Optional surface exchange: all three present or none.
    pub surface_exchange: Option<(f64, f64, f64)>, // (rate_a, rate_b, biot)
}

#[derive(Debug, Clone)]
pub struct LadderConfig {
    pub n_classes: usize,
    pub monomer_radius: f64,
    pub fractal_dimension: f64,
    pub temperature: f64,
    pub viscosity: f64,
}

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub kind: String, // "constant" | "brownian"
    pub beta0: f64,
    pub closure: Closure,
}

#[derive(Debug, Clone)]
pub struct BlockingConfig {
    pub kind: String, // "none" | "langmuir" | "rsa"
    pub beta: f64,
    pub theta_inf: f64,
}

impl BlockingConfig {
    pub fn to_function(&self) -> BlockingFunction {
        match self.kind.as_str() {
            "none" => BlockingFunction::None,
            "langmuir" => BlockingFunction::Langmuir { beta: self.beta },
            _ => BlockingFunction::Rsa {
                beta: self.beta,
                theta_inf: self.theta_inf,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct NumericsConfig {
    pub nodes: usize,
    pub dt: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub initial_conc: f64,
    pub dt: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub factors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub geometry: Option<GeometryConfig>,
    pub ladder: Option<LadderConfig>,
    pub kernel: Option<KernelConfig>,
    pub column: Option<ColumnParams>,
    pub blocking: Option<BlockingConfig>,
    pub numerics: Option<NumericsConfig>,
    pub batch: Option<BatchConfig>,
    pub sweep: Option<SweepConfig>,
}

fn require<T>(v: Option<T>, what: &str) -> Result<T, ScenarioError> {
    v.ok_or_else(|| ScenarioError::Config(format!("missing required key `{what}`")))
}

/// Parse and validate a configuration file; all defaults are resolved here.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ScenarioError::Config(format!("cannot read {}: {e}", path.display()))
    })?;
    load_config_str(&text)
}

/// Parse a configuration document from memory.
pub fn load_config_str(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let mut raw = RawConfig::parse(text)?;

    let kind_str = require(raw.take("scenario", "kind"), "scenario.kind")?;
    let kind = ScenarioKind::parse(&kind_str).ok_or_else(|| {
        ScenarioError::Config(format!(
            "scenario.kind `{kind_str}` is not one of cell_tensors, batch_aggregation, \
             column_single, column_aggregating, blocking_compare, rate_sweep"
        ))
    })?;
    let output_dir = PathBuf::from(
        raw.take("scenario", "output_dir")
            .unwrap_or_else(|| "out".to_string()),
    );
    let seed = match raw.take("scenario", "seed") {
        None => 0,
        Some(v) => v.parse::<u64>().map_err(|_| {
            ScenarioError::Config(format!("scenario.seed is not an integer: `{v}`"))
        })?,
    };

    use ScenarioKind::*;
    let needs_column = matches!(
        kind,
        ColumnSingle | ColumnAggregating | BlockingCompare | RateSweep
    );
    let needs_ladder = matches!(kind, ColumnAggregating | BatchAggregation | RateSweep);
    let needs_kernel = matches!(kind, ColumnAggregating | BatchAggregation | RateSweep);

    let ladder = parse_ladder(&mut raw, needs_ladder || kind == CellTensors)?;
    let fluid = match &ladder {
        Some(l) => FluidProperties::new(l.temperature, l.viscosity)?,
        None => FluidProperties::water_room_temperature(),
    };

    let geometry = if kind == CellTensors {
        Some(parse_geometry(&mut raw)?)
    } else {
        None
    };
    let column = if needs_column {
        Some(parse_column(&mut raw, &fluid)?)
    } else {
        None
    };
    let kernel = if needs_kernel {
        Some(parse_kernel(&mut raw)?)
    } else {
        None
    };
    let blocking = if needs_column {
        Some(parse_blocking(&mut raw)?)
    } else {
        None
    };
    let numerics = if needs_column {
        Some(parse_numerics(&mut raw, column.as_ref().unwrap())?)
    } else {
        None
    };
    let batch = if kind == BatchAggregation {
        Some(parse_batch(&mut raw)?)
    } else {
        None
    };
    let sweep = if kind == RateSweep {
        Some(parse_sweep(&mut raw)?)
    } else {
        None
    };

    raw.finish()?;

    Ok(ScenarioConfig {
        kind,
        output_dir,
        seed,
        geometry,
        ladder,
        kernel,
        column,
        blocking,
        numerics,
        batch,
        sweep,
    })
}

fn parse_ladder(
    raw: &mut RawConfig,
    required: bool,
) -> Result<Option<LadderConfig>, ScenarioError> {
    let n = raw.get_usize("ladder", "n_classes")?;
    if n.is_none() && !required {
        // consume nothing else; strictness catches stray keys
        return Ok(None);
    }
    let n_classes = match n {
        Some(v) => v,
        None if required => 1,
        None => unreachable!(),
    };
    Ok(Some(LadderConfig {
        n_classes,
        monomer_radius: raw.get_f64("ladder", "monomer_radius")?.unwrap_or(0.15e-6),
        fractal_dimension: raw
            .get_f64("ladder", "fractal_dimension")?
            .unwrap_or(2.5),
        temperature: raw.get_f64("ladder", "temperature")?.unwrap_or(298.15),
        viscosity: raw.get_f64("ladder", "viscosity")?.unwrap_or(8.9e-4),
    }))
}

fn parse_geometry(raw: &mut RawConfig) -> Result<GeometryConfig, ScenarioError> {
    let kind_str = raw
        .take("geometry", "kind")
        .unwrap_or_else(|| "disc".to_string());
    let kind = match kind_str.as_str() {
        "disc" => GeometryKind::IsotropicDisc,
        "ellipse" => GeometryKind::AnisotropicEllipse,
        other => {
            return Err(ScenarioError::Config(format!(
                "geometry.kind `{other}` is not one of disc, ellipse"
            )))
        }
    };
    let rate_a = raw.get_f64("geometry", "surface_rate_a")?;
    let rate_b = raw.get_f64("geometry", "surface_rate_b")?;
    let biot = raw.get_f64("geometry", "biot")?;
    let surface_exchange = match (rate_a, rate_b, biot) {
        (Some(a), Some(b), Some(bi)) => Some((a, b, bi)),
        (None, None, None) => None,
        _ => {
            return Err(ScenarioError::Config(
                "geometry surface exchange needs all of surface_rate_a, surface_rate_b, biot"
                    .into(),
            ))
        }
    };
    Ok(GeometryConfig {
        kind,
        resolution: raw.get_usize("geometry", "resolution")?.unwrap_or(128),
        porosity: require(raw.get_f64("geometry", "porosity")?, "geometry.porosity")?,
        diffusivity: raw.get_f64("geometry", "diffusivity")?.unwrap_or(1.0),
        solver_tol: raw.get_f64("geometry", "solver_tol")?.unwrap_or(1e-9),
        surface_exchange,
    })
}

fn parse_column(
    raw: &mut RawConfig,
    fluid: &FluidProperties,
) -> Result<ColumnParams, ScenarioError> {
    let particle_radius = require(
        raw.get_f64("column", "particle_radius")?,
        "column.particle_radius",
    )?;
    let default_d = einstein_stokes_diffusivity(fluid, particle_radius)?;
    let params = ColumnParams {
        length: require(raw.get_f64("column", "length")?, "column.length")?,
        darcy_velocity: require(
            raw.get_f64("column", "darcy_velocity")?,
            "column.darcy_velocity",
        )?,
        porosity: require(raw.get_f64("column", "porosity")?, "column.porosity")?,
        collector_radius: require(
            raw.get_f64("column", "collector_radius")?,
            "column.collector_radius",
        )?,
        particle_radius,
        dispersivity: require(raw.get_f64("column", "dispersivity")?, "column.dispersivity")?,
        bulk_diffusivity: raw
            .get_f64("column", "bulk_diffusivity")?
            .unwrap_or(default_d),
        medium_tortuosity: raw.get_f64("column", "medium_tortuosity")?.unwrap_or(1.0),
        kinetic_rate: require(raw.get_f64("column", "kinetic_rate")?, "column.kinetic_rate")?,
        inlet_conc: require(raw.get_f64("column", "inlet_conc")?, "column.inlet_conc")?,
        pulse_duration: require(
            raw.get_f64("column", "pulse_duration")?,
            "column.pulse_duration",
        )?,
        affinity_exponent: raw.get_f64("column", "affinity_exponent")?.unwrap_or(1.0),
    };
    params.validate()?;
    Ok(params)
}

fn parse_kernel(raw: &mut RawConfig) -> Result<KernelConfig, ScenarioError> {
    let kind = raw
        .take("kernel", "kind")
        .unwrap_or_else(|| "constant".to_string());
    if kind != "constant" && kind != "brownian" {
        return Err(ScenarioError::Config(format!(
            "kernel.kind `{kind}` is not one of constant, brownian"
        )));
    }
    let closure = match raw
        .take("kernel", "closure")
        .unwrap_or_else(|| "conservative".to_string())
        .as_str()
    {
        "conservative" => Closure::Conservative,
        "lossy" => Closure::Lossy,
        other => {
            return Err(ScenarioError::Config(format!(
                "kernel.closure `{other}` is not one of conservative, lossy"
            )))
        }
    };
    Ok(KernelConfig {
        kind,
        beta0: raw.get_f64("kernel", "beta0")?.unwrap_or(1.2e-17),
        closure,
    })
}

fn parse_blocking(raw: &mut RawConfig) -> Result<BlockingConfig, ScenarioError> {
    let kind = raw
        .take("blocking", "kind")
        .unwrap_or_else(|| "none".to_string());
    if !matches!(kind.as_str(), "none" | "langmuir" | "rsa") {
        return Err(ScenarioError::Config(format!(
            "blocking.kind `{kind}` is not one of none, langmuir, rsa"
        )));
    }
    Ok(BlockingConfig {
        kind,
        beta: raw.get_f64("blocking", "beta")?.unwrap_or(2.9),
        theta_inf: raw.get_f64("blocking", "theta_inf")?.unwrap_or(0.345),
    })
}

fn parse_numerics(
    raw: &mut RawConfig,
    column: &ColumnParams,
) -> Result<NumericsConfig, ScenarioError> {
    let hydro = derived_hydro(column)?;
    let default_t_end =
        column.pulse_duration + 2.0 * column.length / hydro.interstitial_velocity;
    Ok(NumericsConfig {
        nodes: raw.get_usize("numerics", "nodes")?.unwrap_or(201),
        dt: raw
            .get_f64("numerics", "dt")?
            .unwrap_or(column.pulse_duration / 500.0),
        t_end: raw.get_f64("numerics", "t_end")?.unwrap_or(default_t_end),
        newton_tol: raw.get_f64("numerics", "newton_tol")?.unwrap_or(1e-10),
        max_newton: raw.get_usize("numerics", "max_newton")?.unwrap_or(25),
    })
}

fn parse_batch(raw: &mut RawConfig) -> Result<BatchConfig, ScenarioError> {
    Ok(BatchConfig {
        initial_conc: raw.get_f64("batch", "initial_conc")?.unwrap_or(5.58e14),
        dt: raw.get_f64("batch", "dt")?.unwrap_or(1.0),
        steps: raw.get_usize("batch", "steps")?.unwrap_or(1000),
    })
}

fn parse_sweep(raw: &mut RawConfig) -> Result<SweepConfig, ScenarioError> {
    let factors = match raw.take("sweep", "factors") {
        None => vec![1.0, 2.0],
        Some(list) => {
            let mut out = Vec::new();
            for part in list.split(',') {
                let part = part.trim();
                let v: f64 = part.parse().map_err(|_| {
                    ScenarioError::Config(format!("sweep.factors entry is not a number: `{part}`"))
                })?;
                if !(v > 0.0) {
                    return Err(ScenarioError::Config(format!(
                        "sweep.factors entries must be positive, got {v}"
                    )));
                }
                out.push(v);
            }
            if out.len() < 2 {
                return Err(ScenarioError::Config(
                    "sweep.factors needs at least two entries".into(),
                ));
            }
            out
        }
    };
    Ok(SweepConfig { factors })
}

// ---------------------------------------------------------------------------
// formatting and persistence helpers
// ---------------------------------------------------------------------------

/// Full-precision float formatting (17 significant digits) so regression
/// diffs on CSV output are meaningful.
pub fn fmt_full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Run outcome: report lines, produced files and the overall verdict.
#[derive(Debug)]
pub struct RunReport {
    pub scenario: ScenarioKind,
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
    pub invariant_failures: usize,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.invariant_failures == 0
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        self.lines.push(format!("invariant {name}: {verdict} ({detail})"));
        if !ok {
            self.invariant_failures += 1;
        }
    }

    fn note(&mut self, line: String) {
        self.lines.push(line);
    }
}

struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    fn create(dir: &Path) -> Result<Self, ScenarioError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<PathBuf, ScenarioError> {
        let path = self.dir.join(name);
        std::fs::write(&path, content)?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Remove everything written so far (failure path).
    fn rollback(&mut self) {
        for p in self.written.drain(..) {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn echo_config(cfg: &ScenarioConfig, out: &mut Vec<String>) {
    out.push(format!("scenario.kind = {}", cfg.kind.name()));
    out.push(format!("scenario.output_dir = {}", cfg.output_dir.display()));
    out.push(format!("scenario.seed = {}", cfg.seed));
    if let Some(g) = &cfg.geometry {
        let kind = match g.kind {
            GeometryKind::IsotropicDisc => "disc",
            GeometryKind::AnisotropicEllipse => "ellipse",
            GeometryKind::Custom => "custom",
        };
        out.push(format!("geometry.kind = {kind}"));
        out.push(format!("geometry.resolution = {}", g.resolution));
        out.push(format!("geometry.porosity = {}", fmt_full(g.porosity)));
        out.push(format!("geometry.diffusivity = {}", fmt_full(g.diffusivity)));
        out.push(format!("geometry.solver_tol = {}", fmt_full(g.solver_tol)));
        if let Some((a, b, bi)) = g.surface_exchange {
            out.push(format!("geometry.surface_rate_a = {}", fmt_full(a)));
            out.push(format!("geometry.surface_rate_b = {}", fmt_full(b)));
            out.push(format!("geometry.biot = {}", fmt_full(bi)));
        }
    }
    if let Some(l) = &cfg.ladder {
        out.push(format!("ladder.n_classes = {}", l.n_classes));
        out.push(format!("ladder.monomer_radius = {}", fmt_full(l.monomer_radius)));
        out.push(format!(
            "ladder.fractal_dimension = {}",
            fmt_full(l.fractal_dimension)
        ));
        out.push(format!("ladder.temperature = {}", fmt_full(l.temperature)));
        out.push(format!("ladder.viscosity = {}", fmt_full(l.viscosity)));
    }
    if let Some(k) = &cfg.kernel {
        out.push(format!("kernel.kind = {}", k.kind));
        out.push(format!("kernel.beta0 = {}", fmt_full(k.beta0)));
        out.push(format!(
            "kernel.closure = {}",
            match k.closure {
                Closure::Conservative => "conservative",
                Closure::Lossy => "lossy",
            }
        ));
    }
    if let Some(c) = &cfg.column {
        out.push(format!("column.length = {}", fmt_full(c.length)));
        out.push(format!("column.darcy_velocity = {}", fmt_full(c.darcy_velocity)));
        out.push(format!("column.porosity = {}", fmt_full(c.porosity)));
        out.push(format!(
            "column.collector_radius = {}",
            fmt_full(c.collector_radius)
        ));
        out.push(format!(
            "column.particle_radius = {}",
            fmt_full(c.particle_radius)
        ));
        out.push(format!("column.dispersivity = {}", fmt_full(c.dispersivity)));
        out.push(format!(
            "column.bulk_diffusivity = {}",
            fmt_full(c.bulk_diffusivity)
        ));
        out.push(format!(
            "column.medium_tortuosity = {}",
            fmt_full(c.medium_tortuosity)
        ));
        out.push(format!("column.kinetic_rate = {}", fmt_full(c.kinetic_rate)));
        out.push(format!("column.inlet_conc = {}", fmt_full(c.inlet_conc)));
        out.push(format!("column.pulse_duration = {}", fmt_full(c.pulse_duration)));
        out.push(format!(
            "column.affinity_exponent = {}",
            fmt_full(c.affinity_exponent)
        ));
    }
    if let Some(b) = &cfg.blocking {
        out.push(format!("blocking.kind = {}", b.kind));
        out.push(format!("blocking.beta = {}", fmt_full(b.beta)));
        out.push(format!("blocking.theta_inf = {}", fmt_full(b.theta_inf)));
    }
    if let Some(n) = &cfg.numerics {
        out.push(format!("numerics.nodes = {}", n.nodes));
        out.push(format!("numerics.dt = {}", fmt_full(n.dt)));
        out.push(format!("numerics.t_end = {}", fmt_full(n.t_end)));
        out.push(format!("numerics.newton_tol = {}", fmt_full(n.newton_tol)));
        out.push(format!("numerics.max_newton = {}", n.max_newton));
    }
    if let Some(b) = &cfg.batch {
        out.push(format!("batch.initial_conc = {}", fmt_full(b.initial_conc)));
        out.push(format!("batch.dt = {}", fmt_full(b.dt)));
        out.push(format!("batch.steps = {}", b.steps));
    }
    if let Some(s) = &cfg.sweep {
        let list: Vec<String> = s.factors.iter().map(|f| fmt_full(*f)).collect();
        out.push(format!("sweep.factors = {}", list.join(", ")));
    }
}

/// Reference scales and dimensionless groups for a column setup, echoed in
/// reports and CSV headers. Scale conventions: a0 = kinetic rate, L = column
/// length, d = species-1 dispersion, u0 = inlet concentration, v0 = u0 L.
fn column_groups(c: &ColumnParams) -> Result<Vec<String>, ScenarioError> {
    let hydro = derived_hydro(c)?;
    let a0 = if c.kinetic_rate > 0.0 {
        c.kinetic_rate
    } else {
        // tracer runs: fall back to a unit-free placeholder rate so the
        // echo stays well defined
        1e-30
    };
    let refq = ReferenceQuantities::diffusive(
        c.length,
        hydro.dispersion,
        c.inlet_conc,
        c.inlet_conc * c.length,
        a0,
    )?;
    let groups = dimensionless_groups(&refq);
    let regime = groups.regime();
    let mut out = Vec::new();
    out.push(format!("derived.pore_radius = {}", fmt_full(hydro.pore_radius)));
    out.push(format!(
        "derived.interstitial_velocity = {}",
        fmt_full(hydro.interstitial_velocity)
    ));
    out.push(format!("derived.dispersion = {}", fmt_full(hydro.dispersion)));
    out.push(format!(
        "derived.specific_surface = {}",
        fmt_full(hydro.specific_surface)
    ));
    out.push(format!("group.epsilon = {}", fmt_full(groups.epsilon)));
    out.push(format!("group.thiele = {}", fmt_full(groups.thiele)));
    out.push(format!("group.biot = {}", fmt_full(groups.biot)));
    out.push(format!("regime.fast_reaction = {}", regime.fast_reaction));
    out.push(format!("regime.slow_deposition = {}", regime.slow_deposition));
    Ok(out)
}

fn breakthrough_csv(header_lines: &[String], run: &ColumnRun, n: usize) -> String {
    let mut s = String::new();
    for line in header_lines {
        let _ = writeln!(s, "# {line}");
    }
    let mut cols = vec!["time_s".to_string()];
    for i in 1..=n {
        cols.push(format!("u_{i}"));
    }
    for i in 1..=n {
        cols.push(format!("theta_{i}"));
    }
    cols.push("total_mass_weighted".to_string());
    let _ = writeln!(s, "{}", cols.join(","));
    for (step, &t) in run.curve.times.iter().enumerate() {
        let mut row = vec![fmt_full(t)];
        for i in 0..n {
            row.push(fmt_full(run.curve.outlet[i][step]));
        }
        for i in 0..n {
            row.push(fmt_full(run.curve.coverage_outlet[i][step]));
        }
        row.push(fmt_full(run.curve.total_mass_weighted[step]));
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

fn build_kernel(
    kcfg: &KernelConfig,
    ladder: &crate::SpeciesLadder,
    fluid: &FluidProperties,
) -> Result<AggregationKernel, ScenarioError> {
    let kernel = if kcfg.kind == "brownian" {
        brownian_kernel(ladder, fluid)
    } else {
        AggregationKernel::constant(ladder.n_classes, kcfg.beta0)?
    };
    Ok(kernel.with_closure(kcfg.closure))
}

fn ladder_from_config(l: &LadderConfig) -> Result<(crate::SpeciesLadder, FluidProperties), ScenarioError> {
    let fluid = FluidProperties::new(l.temperature, l.viscosity)?;
    let d1 = einstein_stokes_diffusivity(&fluid, l.monomer_radius)?;
    let ladder = build_ladder(l.n_classes, l.monomer_radius, d1, l.fractal_dimension)?;
    Ok((ladder, fluid))
}

// ---------------------------------------------------------------------------
// scenario pipelines
// ---------------------------------------------------------------------------

/// Execute the configured scenario: run the pipeline, write its CSV outputs
/// and a run report. Partial outputs are removed if the pipeline errors out;
/// invariant failures keep their outputs and are flagged in the returned
/// report.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    let start = std::time::Instant::now();
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let mut report = RunReport {
        scenario: cfg.kind,
        lines: Vec::new(),
        files: Vec::new(),
        invariant_failures: 0,
        wall_seconds: 0.0,
    };
    echo_config(cfg, &mut report.lines);

    let result = match cfg.kind {
        ScenarioKind::CellTensors => run_cell_tensors(cfg, &mut out, &mut report),
        ScenarioKind::BatchAggregation => run_batch_aggregation(cfg, &mut out, &mut report),
        ScenarioKind::ColumnSingle => run_column_single(cfg, &mut out, &mut report),
        ScenarioKind::ColumnAggregating => run_column_aggregating(cfg, &mut out, &mut report),
        ScenarioKind::BlockingCompare => run_blocking_compare(cfg, &mut out, &mut report),
        ScenarioKind::RateSweep => run_rate_sweep(cfg, &mut out, &mut report),
    };
    if let Err(e) = result {
        out.rollback();
        return Err(e);
    }

    report.wall_seconds = start.elapsed().as_secs_f64();
    report
        .lines
        .push(format!("wall_seconds = {:.3}", report.wall_seconds));
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    report.lines.push(format!("overall: {verdict}"));

    let mut text = String::new();
    for line in &report.lines {
        let _ = writeln!(text, "{line}");
    }
    let path = out.write("report.txt", &text)?;
    report.files = out.written.clone();
    let _ = path;
    Ok(report)
}

fn run_cell_tensors(
    cfg: &ScenarioConfig,
    out: &mut OutputDir,
    report: &mut RunReport,
) -> Result<(), ScenarioError> {
    let g = cfg.geometry.as_ref().unwrap();
    let geom = make_geometry(g.kind, g.resolution, g.porosity)?;
    report.note(format!(
        "geometry.actual_porosity = {}",
        fmt_full(geom.porosity)
    ));
    report.note(format!(
        "geometry.grain_perimeter = {}",
        fmt_full(geom.grain_perimeter())
    ));
    let sol = solve_cell_problems(&geom, g.diffusivity, g.solver_tol)?;

    // species diffusivities: ladder if configured, else the bare fluid value
    let species_d: Vec<f64> = match &cfg.ladder {
        Some(l) => ladder_from_config(l)?.0.diffusivities,
        None => vec![g.diffusivity],
    };

    let mut csv = String::new();
    let _ = writeln!(csv, "# scenario = cell_tensors");
    let _ = writeln!(csv, "# resolution = {}", g.resolution);
    let _ = writeln!(csv, "# porosity = {}", fmt_full(geom.porosity));
    let _ = writeln!(
        csv,
        "species,D11,D12,D21,D22,T11,T12,T21,T22,porosity"
    );
    let mut all_ok = true;
    let mut detail = String::new();
    for (idx, &d) in species_d.iter().enumerate() {
        let t = effective_diffusion(&geom, &sol, d);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            idx + 1,
            fmt_full(t.diffusion[0][0]),
            fmt_full(t.diffusion[0][1]),
            fmt_full(t.diffusion[1][0]),
            fmt_full(t.diffusion[1][1]),
            fmt_full(t.tortuosity[0][0]),
            fmt_full(t.tortuosity[0][1]),
            fmt_full(t.tortuosity[1][0]),
            fmt_full(t.tortuosity[1][1]),
            fmt_full(t.porosity),
        );
        // bound checks: upper Wiener bound d*phi for the largest eigenvalue,
        // lower bound from the unblocked straight-line fraction
        let (lo, hi) = t.diffusion_eigenvalues();
        let phi = geom.porosity;
        let upper_ok = hi <= d * phi * 1.01;
        let unblocked = geom
            .unblocked_line_fraction(0)
            .min(geom.unblocked_line_fraction(1));
        let lower_ok = lo >= d * phi * unblocked * 0.99;
        let sym_ok = (t.diffusion[0][1] - t.diffusion[1][0]).abs() <= 1e-12 * t.diffusion[0][0];
        let tort_ok = t.tortuosity[0][0] > 0.0
            && t.tortuosity[0][0] <= 1.0 + 1e-12
            && t.tortuosity[1][1] > 0.0
            && t.tortuosity[1][1] <= 1.0 + 1e-12;
        all_ok &= upper_ok && lower_ok && sym_ok && tort_ok;
        let _ = write!(
            detail,
            "species {}: eig [{:.6e}, {:.6e}], phi*d = {:.6e}; ",
            idx + 1,
            lo,
            hi,
            d * phi
        );
    }
    out.write("tensors.csv", &csv)?;
    report.check("bounds", all_ok, detail.trim_end().to_string());

    if let Some((a, b, bi)) = g.surface_exchange {
        let (a_eff, b_eff) = effective_deposition(&geom, a, b, bi)?;
        report.note(format!("derived.a_eff = {}", fmt_full(a_eff)));
        report.note(format!("derived.b_eff = {}", fmt_full(b_eff)));
    }
    Ok(())
}

fn run_batch_aggregation(
    cfg: &ScenarioConfig,
    out: &mut OutputDir,
    report: &mut RunReport,
) -> Result<(), ScenarioError> {
    let lcfg = cfg.ladder.as_ref().unwrap();
    let bcfg = cfg.batch.as_ref().unwrap();
    let (ladder, fluid) = ladder_from_config(lcfg)?;
    let kernel = build_kernel(cfg.kernel.as_ref().unwrap(), &ladder, &fluid)?;
    let n = ladder.n_classes;

    let mut u = Concentrations::zeros(n);
    u.values[0] = bcfg.initial_conc;
    let m0 = u.mass_moment();

    let mut csv = String::new();
    let _ = writeln!(csv, "# scenario = batch_aggregation");
    let mut cols = vec!["time_s".to_string()];
    for i in 1..=n {
        cols.push(format!("u_{i}"));
    }
    cols.push("mass_moment".to_string());
    let _ = writeln!(csv, "{}", cols.join(","));
    let write_row = |csv: &mut String, t: f64, u: &Concentrations| {
        let mut row = vec![fmt_full(t)];
        for v in &u.values {
            row.push(fmt_full(*v));
        }
        row.push(fmt_full(u.mass_moment()));
        let _ = writeln!(csv, "{}", row.join(","));
    };
    write_row(&mut csv, 0.0, &u);
    for step in 1..=bcfg.steps {
        u = step_batch(&u, &kernel, bcfg.dt, 1e-12, 50)?;
        write_row(&mut csv, step as f64 * bcfg.dt, &u);
    }
    out.write("batch.csv", &csv)?;

    let drift = (u.mass_moment() - m0).abs() / m0;
    report.check(
        "mass_conservation",
        drift <= 1e-10 || kernel.closure == Closure::Lossy,
        format!("relative drift {drift:.3e} after {} steps", bcfg.steps),
    );
    if kernel.closure == Closure::Lossy {
        report.note(format!(
            "note: lossy closure leaks mass out of the resolved range by design \
             (drift {drift:.3e})"
        ));
    }
    Ok(())
}

fn column_invariants(
    report: &mut RunReport,
    model: &ColumnModel,
    run: &ColumnRun,
    params: &ColumnParams,
    label: &str,
) {
    let closure = run.balance.closure_error(&run.state, model);
    report.check(
        &format!("mass_balance{label}"),
        closure <= 1e-6,
        format!("relative closure error {closure:.3e}"),
    );
    if let Some(cap) = model.blocking.coverage_cap() {
        report.check(
            &format!("blocking_cap{label}"),
            run.max_total_coverage <= cap + 1e-6,
            format!(
                "max coverage {:.6e}, cap {:.6e}",
                run.max_total_coverage, cap
            ),
        );
    }
    // monotone breakthrough of species 1 during the pulse window; after the
    // pulse the trailing edge reaches the outlet (early, under coarse-grid
    // numerical dispersion) and the curve legitimately falls
    if model.n_species == 1 {
        {
            let horizon = params.pulse_duration;
            let mut monotone = true;
            let mut last = -1.0;
            for (s, &t) in run.curve.times.iter().enumerate() {
                if t > horizon {
                    break;
                }
                let v = run.curve.outlet[0][s];
                if v < last - 1e-9 * params.inlet_conc {
                    monotone = false;
                    break;
                }
                last = v;
            }
            report.check(
                &format!("monotone_breakthrough{label}"),
                monotone,
                "outlet nondecreasing during the pulse window".to_string(),
            );
        }
    }
    report.note(format!(
        "run{label}.newton_steps = {}, clamped = {}",
        run.newton_steps, run.clamp_events
    ));
}

fn run_column_single(
    cfg: &ScenarioConfig,
    out: &mut OutputDir,
    report: &mut RunReport,
) -> Result<(), ScenarioError> {
    let params = cfg.column.as_ref().unwrap();
    let bcfg = cfg.blocking.as_ref().unwrap();
    let num = cfg.numerics.as_ref().unwrap();
    let mut model = ColumnModel::single_species(params, bcfg.to_function(), num.nodes)?;
    model.newton_tol = num.newton_tol;
    model.max_newton = num.max_newton;
    if bcfg.kind == "rsa" {
        report.note(
            "note: RSA blocking evaluated in x = beta*theta; the cubic's first \
             positive root sets the coverage cap"
                .to_string(),
        );
    }
    let groups = column_groups(params)?;
    for line in &groups {
        report.note(line.clone());
    }
    let run = run_column(&model, num.t_end, num.dt)?;
    let mut header: Vec<String> = report.lines.clone();
    header.retain(|l| !l.starts_with("invariant"));
    let csv = breakthrough_csv(&header, &run, 1);
    out.write("breakthrough.csv", &csv)?;
    column_invariants(report, &model, &run, params, "");
    Ok(())
}

fn run_column_aggregating(
    cfg: &ScenarioConfig,
    out: &mut OutputDir,
    report: &mut RunReport,
) -> Result<(), ScenarioError> {
    let params = cfg.column.as_ref().unwrap();
    let bcfg = cfg.blocking.as_ref().unwrap();
    let num = cfg.numerics.as_ref().unwrap();
    let mut lcfg = cfg.ladder.clone().unwrap();
    // the ladder's monomer is the column's particle
    lcfg.monomer_radius = params.particle_radius;
    let (ladder, fluid) = ladder_from_config(&lcfg)?;
    let kernel = build_kernel(cfg.kernel.as_ref().unwrap(), &ladder, &fluid)?;
    let n = ladder.n_classes;

    let mut model =
        ColumnModel::multi_species(params, &ladder, kernel, bcfg.to_function(), num.nodes)?;
    model.newton_tol = num.newton_tol;
    model.max_newton = num.max_newton;
    let groups = column_groups(params)?;
    for line in &groups {
        report.note(line.clone());
    }
    let run = run_column(&model, num.t_end, num.dt)?;
    let mut header: Vec<String> = report.lines.clone();
    header.retain(|l| !l.starts_with("invariant"));
    let csv = breakthrough_csv(&header, &run, n);
    out.write("breakthrough.csv", &csv)?;
    column_invariants(report, &model, &run, params, "");
    Ok(())
}

fn run_blocking_compare(
    cfg: &ScenarioConfig,
    out: &mut OutputDir,
    report: &mut RunReport,
) -> Result<(), ScenarioError> {
    let params = cfg.column.as_ref().unwrap();
    let bcfg = cfg.blocking.as_ref().unwrap();
    let num = cfg.numerics.as_ref().unwrap();
    let variants: Vec<(&str, BlockingFunction)> = vec![
        ("none", BlockingFunction::None),
        ("langmuir", BlockingFunction::Langmuir { beta: bcfg.beta }),
        (
            "rsa",
            BlockingFunction::Rsa {
                beta: bcfg.beta,
                theta_inf: bcfg.theta_inf,
            },
        ),
    ];
    let groups = column_groups(params)?;
    for line in &groups {
        report.note(line.clone());
    }

    // fan the three independent runs out across threads
    let mut results: Vec<Option<Result<(ColumnModel, ColumnRun), ScenarioError>>> =
        (0..variants.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (_, blocking) in &variants {
            let blocking = *blocking;
            handles.push(scope.spawn(move || -> Result<(ColumnModel, ColumnRun), ScenarioError> {
                let mut model = ColumnModel::single_species(params, blocking, num.nodes)?;
                model.newton_tol = num.newton_tol;
                model.max_newton = num.max_newton;
                let run = run_column(&model, num.t_end, num.dt)?;
                Ok((model, run))
            }));
        }
        for (slot, handle) in handles.into_iter().enumerate() {
            results[slot] = Some(handle.join().expect("worker panicked"));
        }
    });

    let mut header: Vec<String> = report.lines.clone();
    header.retain(|l| !l.starts_with("invariant"));
    for ((name, _), result) in variants.iter().zip(results) {
        let (model, run) = result.unwrap()?;
        let mut h = header.clone();
        h.push(format!("blocking.variant = {name}"));
        let csv = breakthrough_csv(&h, &run, 1);
        out.write(&format!("breakthrough_{name}.csv"), &csv)?;
        let deposited = run.state.deposited_mass(&model, 0);
        report.note(format!(
            "deposited_total.{name} = {} (per unit cross-section)",
            fmt_full(deposited)
        ));
        column_invariants(report, &model, &run, params, &format!(".{name}"));
    }
    Ok(())
}

fn run_rate_sweep(
    cfg: &ScenarioConfig,
    out: &mut OutputDir,
    report: &mut RunReport,
) -> Result<(), ScenarioError> {
    let params = cfg.column.as_ref().unwrap();
    let bcfg = cfg.blocking.as_ref().unwrap();
    let num = cfg.numerics.as_ref().unwrap();
    let scfg = cfg.sweep.as_ref().unwrap();
    let mut lcfg = cfg.ladder.clone().unwrap();
    lcfg.monomer_radius = params.particle_radius;
    let (ladder, fluid) = ladder_from_config(&lcfg)?;
    let base_kernel = build_kernel(cfg.kernel.as_ref().unwrap(), &ladder, &fluid)?;
    let n = ladder.n_classes;

    let groups = column_groups(params)?;
    for line in &groups {
        report.note(line.clone());
    }

    let mut results: Vec<Option<Result<(ColumnModel, ColumnRun), ScenarioError>>> =
        (0..scfg.factors.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for &factor in &scfg.factors {
            let kernel = base_kernel.scaled(factor);
            let ladder = &ladder;
            handles.push(scope.spawn(move || -> Result<(ColumnModel, ColumnRun), ScenarioError> {
                let mut model = ColumnModel::multi_species(
                    params,
                    ladder,
                    kernel,
                    bcfg.to_function(),
                    num.nodes,
                )?;
                model.newton_tol = num.newton_tol;
                model.max_newton = num.max_newton;
                let run = run_column(&model, num.t_end, num.dt)?;
                Ok((model, run))
            }));
        }
        for (slot, handle) in handles.into_iter().enumerate() {
            results[slot] = Some(handle.join().expect("worker panicked"));
        }
    });

    let mut header: Vec<String> = report.lines.clone();
    header.retain(|l| !l.starts_with("invariant"));
    let mut cumulative = Vec::new();
    for (&factor, result) in scfg.factors.iter().zip(results) {
        let (model, run) = result.unwrap()?;
        let mut h = header.clone();
        h.push(format!("sweep.factor = {}", fmt_full(factor)));
        let csv = breakthrough_csv(&h, &run, n);
        // deterministic, filesystem-safe file label
        let label = fmt_full(factor).replace(['.', '+', '-'], "_");
        out.write(&format!("breakthrough_gamma_{label}.csv"), &csv)?;
        let mass = run.curve.cumulative_outlet_mass();
        report.note(format!(
            "cumulative_outlet_mass.factor_{} = {}",
            fmt_full(factor),
            fmt_full(mass)
        ));
        column_invariants(report, &model, &run, params, &format!(".x{factor}"));
        cumulative.push((factor, mass));
    }

    // faster aggregation must push more mass into larger, stickier classes
    // and therefore let less mass out of the column
    let mut sorted = cumulative.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let ordered = sorted.windows(2).all(|w| w[1].1 < w[0].1);
    let detail: Vec<String> = sorted
        .iter()
        .map(|(f, m)| format!("x{f}: {m:.6e}"))
        .collect();
    report.check(
        "sweep_ordering",
        ordered,
        format!("cumulative outlet mass by factor: {}", detail.join(", ")),
    );
    Ok(())
}
