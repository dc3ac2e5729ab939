//! Experiment descriptions, presets and drivers.
//!
//! An [`ExperimentSpec`] is a JSON document naming the domain, mesh,
//! director field, order parameters, regularization weights, creases,
//! time step, tolerances and initial deformation. [`Experiment::build`]
//! resolves it into a mesh, a material field and an initial state.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{interpolate, Deformation, EnergyBreakdown, FemProblem};
use crate::flow::{find_tau_max, run_flow, FlowConfig, FlowRun, FlowStatus};
use crate::material::MaterialField;
use crate::mesh::{
    crease_fitted_square, crease_strip_mask, perturbed_crease_fitted_square, perturbed_square, structured_square_with, CreaseSpec, Pattern, Point2, Rect,
    Segment, TriMesh,
};
use crate::vtk::export_surface;

/// Header of the convergence table.
pub const CONVERGENCE_HEADER: [&str; 6] = ["h", "e_h", "E_h", "N", "tau", "status"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshKind {
    /// Uniform grid in the given pattern.
    Structured,
    /// Criss-cross grid fitted to the crease set.
    CreaseFitted,
    /// Perturbed grid not fitted to the creases; pair with a strip regularization.
    StripMask,
}

/// Vertex jitter of the unfitted strip-mask meshes, in cell widths.
const STRIP_MASK_PERTURBATION: f64 = 0.2;
/// Vertex jitter of the fitted origami meshes, in cell widths.
const FITTED_PERTURBATION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub kind: MeshKind,
    pub n: usize,
    #[serde(default)]
    pub pattern: Pattern,
    /// Vertex displacement in cell widths. On crease-fitted meshes, vertices
    /// on the creases and the boundary stay fixed. Ignored by `structured`.
    #[serde(default)]
    pub perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectorPreset {
    /// Piecewise constant field on the four diagonal triangles of the domain,
    /// parallel to the outer edge of each: bottom `(1,0)`, right `(0,1)`,
    /// top `(−1,0)`, left `(0,−1)`.
    Pyramid,
    /// Piecewise constant field on the four diagonal triangles, normal to the
    /// outer edge of each: bottom `(0,−1)`, right `(1,0)`, top `(0,1)`, left `(−1,0)`.
    Saddle,
    /// `(cos 1.5θ, sin 1.5θ)` about the domain center.
    Defect,
    /// `(x₁+1, x₂+1)/|(x₁+1, x₂+1)|`.
    Smooth,
    Uniform { angle: f64 },
}

/// Which of the four diagonal triangles of `domain` contains `p`:
/// 0 bottom, 1 right, 2 top, 3 left.
fn diagonal_quadrant(domain: &Rect, p: Point2) -> usize {
    let [cx, cy] = domain.center();
    let u = (p[0] - cx) / domain.width();
    let v = (p[1] - cy) / domain.height();
    if v.abs() >= u.abs() {
        if v < 0.0 {
            0
        } else {
            2
        }
    } else if u > 0.0 {
        1
    } else {
        3
    }
}

impl DirectorPreset {
    pub fn evaluate(&self, domain: &Rect, p: Point2) -> Result<Vector2<f64>> {
        Ok(match self {
            DirectorPreset::Pyramid => {
                [Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0), Vector2::new(-1.0, 0.0), Vector2::new(0.0, -1.0)]
                    [diagonal_quadrant(domain, p)]
            }
            DirectorPreset::Saddle => {
                [Vector2::new(0.0, -1.0), Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0), Vector2::new(-1.0, 0.0)]
                    [diagonal_quadrant(domain, p)]
            }
            DirectorPreset::Defect => {
                let [cx, cy] = domain.center();
                let (dx, dy) = (p[0] - cx, p[1] - cy);
                if dx == 0.0 && dy == 0.0 {
                    return Err(Error::SingularDirector { x: p[0], y: p[1] });
                }
                let theta = dy.atan2(dx);
                Vector2::new((1.5 * theta).cos(), (1.5 * theta).sin())
            }
            DirectorPreset::Smooth => Vector2::new(p[0] + 1.0, p[1] + 1.0).normalize(),
            DirectorPreset::Uniform { angle } => Vector2::new(angle.cos(), angle.sin()),
        })
    }
}

/// Evaluates a director preset at a point of the domain.
pub fn director_preset(preset: &DirectorPreset, domain: &Rect, p: Point2) -> Result<Vector2<f64>> {
    preset.evaluate(domain, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationSpec {
    Constant { value: f64 },
    /// `inside` on elements whose barycenter is within `width` of the creases.
    Strip { width: f64, inside: f64, outside: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreasePreset {
    #[default]
    None,
    /// Both diagonals of the domain.
    Diagonals,
    Segments(Vec<Segment>),
}

impl CreasePreset {
    pub fn segments(&self, domain: &Rect) -> Vec<Segment> {
        match self {
            CreasePreset::None => Vec::new(),
            CreasePreset::Diagonals => domain.diagonals(),
            CreasePreset::Segments(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTau {
    Auto,
}

/// Fixed time step, or `"auto"` for the largest admissible one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauPolicy {
    Fixed(f64),
    Auto(AutoTau),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitializerPreset {
    /// `(x₁, x₂, 0)`.
    Identity,
    /// `(x₁, x₂, a (x₁−a₁)(b₁−x₁)(x₂−a₂)(b₂−x₂))` on `[a₁,b₁]×[a₂,b₂]`.
    Bubble { amplitude: f64 },
    /// `(x₁, x₂, a cos(kπ(u−½)) v(v−1))` in domain-relative coordinates `u, v ∈ [0,1]`.
    Cosine { amplitude: f64, frequency: f64 },
}

impl InitializerPreset {
    pub fn name(&self) -> String {
        match self {
            InitializerPreset::Identity => "identity".into(),
            InitializerPreset::Bubble { amplitude } => format!("bubble(amplitude={amplitude})"),
            InitializerPreset::Cosine { amplitude, frequency } => {
                format!("cosine(amplitude={amplitude}, frequency={frequency})")
            }
        }
    }

    pub fn evaluate(&self, domain: &Rect, p: Point2) -> [f64; 3] {
        let [x, y] = p;
        let z = match *self {
            InitializerPreset::Identity => 0.0,
            InitializerPreset::Bubble { amplitude } => {
                amplitude * (x - domain.x0) * (domain.x1 - x) * (y - domain.y0) * (domain.y1 - y)
            }
            InitializerPreset::Cosine { amplitude, frequency } => {
                let u = (x - domain.x0) / domain.width();
                let v = (y - domain.y0) / domain.height();
                amplitude * (frequency * PI * (u - 0.5)).cos() * v * (v - 1.0)
            }
        };
        [x, y, z]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub vtk: bool,
    pub log: bool,
    pub summary: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            vtk: true,
            log: true,
            summary: true,
        }
    }
}

fn default_max_newton() -> usize {
    FlowConfig::default().max_newton
}

fn default_max_flow() -> usize {
    FlowConfig::default().max_flow
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub domain: Rect,
    pub mesh: MeshSpec,
    pub director: DirectorPreset,
    pub s: f64,
    pub s0: f64,
    pub regularization: RegularizationSpec,
    #[serde(default)]
    pub creases: CreasePreset,
    pub tau: TauPolicy,
    pub tol1: f64,
    pub tol2: f64,
    pub initializer: InitializerPreset,
    #[serde(default)]
    pub crease_aware: bool,
    #[serde(default = "default_max_newton")]
    pub max_newton: usize,
    #[serde(default = "default_max_flow")]
    pub max_flow: usize,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentSpec::from_json(&text)
    }

    /// Flow configuration at time step `tau`.
    pub fn flow_config(&self, tau: f64) -> FlowConfig {
        FlowConfig {
            tau,
            tol1: self.tol1,
            tol2: self.tol2,
            max_newton: self.max_newton,
            max_flow: self.max_flow,
            crease_aware: self.crease_aware,
            ..FlowConfig::default()
        }
    }

    /// Copy with `n` subdivisions and a name suffixed by `_n{n}`.
    pub fn with_resolution(&self, n: usize) -> Self {
        let mut spec = self.clone();
        spec.mesh.n = n;
        spec.name = format!("{}_n{n}", self.name);
        spec
    }
}

/// Built-in experiment names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 8] = [
    "experiment1",
    "experiment2",
    "experiment3",
    "pyramid_case1",
    "pyramid_case2",
    "pyramid_case3",
    "pyramid_case4",
    "defect",
];

fn lcn_base(name: &str, domain: Rect, mesh: MeshSpec, director: DirectorPreset) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        domain,
        mesh,
        director,
        s: 0.1,
        s0: 1.0,
        regularization: RegularizationSpec::Constant { value: 0.0 },
        creases: CreasePreset::None,
        tau: TauPolicy::Fixed(1.0),
        tol1: 1e-10,
        tol2: 1e-9,
        initializer: InitializerPreset::Bubble { amplitude: 0.8 },
        crease_aware: false,
        max_newton: default_max_newton(),
        max_flow: default_max_flow(),
        outputs: OutputSpec::default(),
    }
}

fn structured(n: usize) -> MeshSpec {
    MeshSpec {
        kind: MeshKind::Structured,
        n,
        pattern: Pattern::Diagonal,
        perturbation: 0.0,
    }
}

fn pyramid_base(name: &str, director: DirectorPreset) -> ExperimentSpec {
    let mesh = MeshSpec {
        kind: MeshKind::CreaseFitted,
        n: 32,
        pattern: Pattern::CrissCross,
        perturbation: FITTED_PERTURBATION,
    };
    let mut spec = lcn_base(name, Rect::unit(), mesh, director);
    spec.regularization = RegularizationSpec::Constant { value: 100.0 };
    spec.creases = CreasePreset::Diagonals;
    spec.crease_aware = true;
    spec.tol2 = 1e-6;
    spec
}

/// Built-in experiment specifications.
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let spec = match name {
        "experiment1" => {
            let mut s = lcn_base(name, Rect::centered_unit(), structured(16), DirectorPreset::Smooth);
            s.tau = TauPolicy::Fixed(0.8);
            s
        }
        "experiment2" => {
            let mut s = preset("experiment1")?;
            s.name = name.into();
            s.regularization = RegularizationSpec::Constant { value: 1.0 };
            s
        }
        "defect" => {
            let mut s = lcn_base(name, Rect::centered_unit(), structured(64), DirectorPreset::Defect);
            s.regularization = RegularizationSpec::Constant { value: 1.0 };
            s.tau = TauPolicy::Auto(AutoTau::Auto);
            s
        }
        "experiment3" => {
            let mut s = preset("defect")?;
            s.name = name.into();
            s.mesh.n = 16;
            s.regularization = RegularizationSpec::Constant { value: 0.0 };
            s
        }
        "pyramid_case1" => pyramid_base(name, DirectorPreset::Pyramid),
        "pyramid_case2" => {
            let mut s = pyramid_base(name, DirectorPreset::Saddle);
            s.tau = TauPolicy::Fixed(0.4);
            s
        }
        "pyramid_case3" => {
            let mut s = pyramid_base(name, DirectorPreset::Saddle);
            s.tau = TauPolicy::Fixed(0.5);
            s.initializer = InitializerPreset::Cosine {
                amplitude: 0.2,
                frequency: 7.0,
            };
            s
        }
        "pyramid_case4" => {
            let mut s = pyramid_base(name, DirectorPreset::Pyramid);
            s.mesh = MeshSpec {
                kind: MeshKind::StripMask,
                n: 32,
                pattern: Pattern::Diagonal,
                perturbation: STRIP_MASK_PERTURBATION,
            };
            s.regularization = RegularizationSpec::Strip {
                width: 0.02,
                inside: 0.0,
                outside: 100.0,
            };
            s.crease_aware = false;
            // The unregularized strip makes the first Newton system indefinite at τ = 1.
            s.tau = TauPolicy::Auto(AutoTau::Auto);
            s
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(spec)
}

/// A resolved experiment: mesh, material and initial state.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub mesh: Arc<TriMesh>,
    pub material: MaterialField,
    pub problem: FemProblem,
    pub initial: Deformation,
}

impl Experiment {
    pub fn build(spec: &ExperimentSpec, parallel: bool) -> Result<Self> {
        let domain = spec.domain;
        let segments = spec.creases.segments(&domain);
        let mesh = match spec.mesh.kind {
            MeshKind::Structured => structured_square_with(spec.mesh.n, domain, spec.mesh.pattern)?,
            MeshKind::CreaseFitted => {
                let creases = CreaseSpec::new(segments.clone());
                if spec.mesh.perturbation == 0.0 {
                    crease_fitted_square(spec.mesh.n, domain, &creases)?
                } else {
                    perturbed_crease_fitted_square(spec.mesh.n, domain, &creases, spec.mesh.perturbation)?
                }
            }
            MeshKind::StripMask => perturbed_square(spec.mesh.n, domain, spec.mesh.perturbation)?,
        };
        let mesh = Arc::new(mesh);

        let nt = mesh.num_triangles();
        let c_r = match spec.regularization {
            RegularizationSpec::Constant { value } => vec![value; nt],
            RegularizationSpec::Strip { width, inside, outside } => {
                if segments.is_empty() {
                    return Err(Error::InvalidArgument("strip regularization needs creases".into()));
                }
                crease_strip_mask(&mesh, &CreaseSpec::new(segments), width)
                    .into_iter()
                    .map(|in_strip| if in_strip { inside } else { outside })
                    .collect()
            }
        };
        let directors = (0..nt)
            .map(|t| spec.director.evaluate(&domain, mesh.barycenter(t)))
            .collect::<Result<Vec<_>>>()?;
        let material = MaterialField::new(directors, vec![spec.s; nt], vec![spec.s0; nt], c_r)?;
        let problem = FemProblem::new(mesh.clone(), &material, spec.crease_aware)?.with_parallel(parallel);
        let initial = interpolate(&mesh, |p| spec.initializer.evaluate(&domain, p))?;
        Ok(Experiment {
            spec: spec.clone(),
            mesh,
            material,
            problem,
            initial,
        })
    }

    /// Runs the flow at time step `tau`.
    pub fn run(&self, tau: f64) -> Result<FlowRun> {
        run_flow(&self.problem, self.initial.dofs().to_vec(), &self.spec.flow_config(tau))
    }

    /// Largest time step (to `tol`) for which the flow converges.
    pub fn tau_max(&self, start: f64, tol: f64) -> Result<f64> {
        Ok(self.tau_max_run(start, tol)?.0)
    }

    /// [`Experiment::tau_max`] together with the converged run at that step,
    /// which the search has already computed.
    pub fn tau_max_run(&self, start: f64, tol: f64) -> Result<(f64, FlowRun)> {
        let mut best: Option<FlowRun> = None;
        let tau = find_tau_max(
            |tau| {
                let run = self.run(tau)?;
                let converged = run.report.status == FlowStatus::Converged;
                if converged && best.as_ref().map_or(true, |b| tau > b.report.tau) {
                    best = Some(run);
                }
                Ok(converged)
            },
            start,
            tol,
            TAU_CAP,
        )?;
        match best {
            Some(run) if run.report.tau == tau => Ok((tau, run)),
            _ => Err(Error::InvalidArgument(format!("search returned τ = {tau} without a converged run"))),
        }
    }

    /// The time step prescribed by the spec, searching when it is `"auto"`.
    pub fn resolve_tau(&self) -> Result<f64> {
        match self.spec.tau {
            TauPolicy::Fixed(tau) => Ok(tau),
            TauPolicy::Auto(_) => self.tau_max(TAU_SEARCH_START, TAU_SEARCH_TOL),
        }
    }

    /// Runs the flow at the spec's time step, reusing the search run when it is `"auto"`.
    pub fn run_resolved(&self) -> Result<FlowRun> {
        match self.spec.tau {
            TauPolicy::Fixed(tau) => self.run(tau),
            TauPolicy::Auto(_) => Ok(self.tau_max_run(TAU_SEARCH_START, TAU_SEARCH_TOL)?.1),
        }
    }
}

/// Upper limit of the doubling phase of the τ search.
pub const TAU_CAP: f64 = 1024.0;
pub const TAU_SEARCH_START: f64 = 1.0;
pub const TAU_SEARCH_TOL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub stretch: f64,
    pub regularization: f64,
    pub total: f64,
}

impl From<EnergyBreakdown> for EnergySummary {
    fn from(e: EnergyBreakdown) -> Self {
        EnergySummary {
            stretch: e.stretch,
            regularization: e.regularization,
            total: e.total,
        }
    }
}

/// Contents of `<name>_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub status: FlowStatus,
    pub tau: f64,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub initial_energy: EnergySummary,
    pub final_energy: EnergySummary,
    pub e_h: Option<f64>,
    pub h_max: f64,
    pub vertices: usize,
    pub triangles: usize,
    pub initializer: String,
    pub divergence: Option<String>,
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub run: FlowRun,
    pub summary: RunSummary,
    pub files: Vec<PathBuf>,
}

impl ExperimentResult {
    pub fn deformation(&self) -> Deformation {
        Deformation::from_dofs(self.run.y.clone(), &self.experiment.mesh).expect("flow preserves size")
    }
}

fn summarize(experiment: &Experiment, run: &FlowRun) -> RunSummary {
    let r = &run.report;
    RunSummary {
        name: experiment.spec.name.clone(),
        status: r.status,
        tau: r.tau,
        iterations: r.iterations(),
        newton_iterations: r.newton_counts.iter().sum(),
        initial_energy: r.energies[0].into(),
        final_energy: r.final_energy().into(),
        e_h: r.final_e_h,
        h_max: experiment.mesh.h_max(),
        vertices: experiment.mesh.num_vertices(),
        triangles: experiment.mesh.num_triangles(),
        initializer: experiment.spec.initializer.name(),
        divergence: r
            .divergence
            .as_ref()
            .map(|d| format!("step {} iteration {}: {}", d.step, d.iteration, d.reason)),
    }
}

/// Builds and runs an experiment, writing the requested outputs into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: Option<&Path>, parallel: bool) -> Result<ExperimentResult> {
    let experiment = Experiment::build(spec, parallel)?;
    let run = experiment.run_resolved()?;
    let summary = summarize(&experiment, &run);
    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let outputs = &spec.outputs;
        if outputs.vtk {
            let path = dir.join(format!("{}.vtk", spec.name));
            let y = Deformation::from_dofs(run.y.clone(), &experiment.mesh)?;
            export_surface(&y, &experiment.mesh, &path)?;
            files.push(path);
        }
        if outputs.log {
            let path = dir.join(format!("{}_log.csv", spec.name));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            run.report.write_log(std::io::BufWriter::new(file))?;
            files.push(path);
        }
        if outputs.summary {
            let path = dir.join(format!("{}_summary.json", spec.name));
            let text = serde_json::to_string_pretty(&summary)?;
            std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
            files.push(path);
        }
    }
    Ok(ExperimentResult {
        experiment,
        run,
        summary,
        files,
    })
}

/// Height of the deformed surface: `max z − min z` over all nodes.
pub fn vertical_extent(y: &Deformation) -> f64 {
    let (lo, hi) = (0..y.num_vertices()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let z = y.point(v)[2];
        (lo.min(z), hi.max(z))
    });
    hi - lo
}

/// Mesh-size label `h = 1/(2n)` of an `n`-subdivision grid. Convergence
/// tables and `sweep --h` are expressed in this label.
pub fn nominal_h(n: usize) -> f64 {
    0.5 / n as f64
}

/// Subdivision count whose [`nominal_h`] is `1/inv_h`.
pub fn subdivisions_for(inv_h: usize) -> Result<usize> {
    if inv_h < 2 || inv_h % 2 != 0 {
        return Err(Error::InvalidArgument(format!("1/h = {inv_h} must be an even integer ≥ 2")));
    }
    Ok(inv_h / 2)
}

/// Time step used by each row of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSelection {
    /// Use the spec's policy.
    FromSpec,
    Fixed(f64),
    /// Search for the largest admissible step on every mesh.
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// [`nominal_h`] of the grid.
    pub h: f64,
    pub e_h: f64,
    /// `|E_h|` of the final state.
    pub energy: f64,
    pub iterations: usize,
    pub tau: f64,
    pub status: FlowStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log e_h` against `log h` over converged rows.
    pub e_h_slope: Option<f64>,
    pub energy_slope: Option<f64>,
}

/// Slope of the least-squares line through `(log x, log y)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

impl ConvergenceTable {
    pub fn from_rows(rows: Vec<ConvergenceRow>) -> Self {
        let ok: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.status == FlowStatus::Converged).collect();
        let e_h_slope = loglog_slope(&ok.iter().map(|r| (r.h, r.e_h)).collect::<Vec<_>>());
        let energy_slope = loglog_slope(&ok.iter().map(|r| (r.h, r.energy)).collect::<Vec<_>>());
        ConvergenceTable {
            rows,
            e_h_slope,
            energy_slope,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CONVERGENCE_HEADER)?;
        for r in &self.rows {
            let status = match r.status {
                FlowStatus::Converged => "converged",
                FlowStatus::Diverged => "diverged",
                FlowStatus::CapReached => "cap_reached",
            };
            w.serialize((r.h, r.e_h, r.energy, r.iterations, r.tau, status))?;
        }
        w.flush().map_err(|e| Error::io("<convergence table>", e))?;
        Ok(())
    }
}

/// Runs `base` on each subdivision count and fits convergence rates.
pub fn convergence_study(base: &ExperimentSpec, ns: &[usize], tau: TauSelection, parallel: bool) -> Result<ConvergenceTable> {
    if ns.len() < 3 {
        return Err(Error::InsufficientPoints(ns.len()));
    }
    let row = |&n: &usize| -> Result<ConvergenceRow> {
        let spec = base.with_resolution(n);
        let experiment = Experiment::build(&spec, parallel)?;
        let run = match tau {
            TauSelection::FromSpec => experiment.run_resolved()?,
            TauSelection::Fixed(t) => experiment.run(t)?,
            TauSelection::Max => experiment.tau_max_run(TAU_SEARCH_START, TAU_SEARCH_TOL)?.1,
        };
        let r = &run.report;
        Ok(ConvergenceRow {
            h: nominal_h(n),
            e_h: r.final_e_h.unwrap_or(f64::NAN),
            energy: r.final_energy().total.abs(),
            iterations: r.iterations(),
            tau: r.tau,
            status: r.status,
        })
    };
    let rows = if parallel {
        ns.par_iter().map(row).collect::<Result<Vec<_>>>()?
    } else {
        ns.iter().map(row).collect::<Result<Vec<_>>>()?
    };
    Ok(ConvergenceTable::from_rows(rows))
}
