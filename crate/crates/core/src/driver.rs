//! Benchmark definitions, configuration, sweeps and report output.
//!
//! Configuration files are TOML. A file names its benchmark and overrides any
//! subset of that benchmark's preset; keys left out keep their preset values.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::assembly::{DirichletBc, Loads, Problem, Ramp, StageState, TangentCoefficients};
use crate::error::{Error, Result};
use crate::krylov::BlockSystem;
use crate::materials::{Material, KPA, MPA};
use crate::mesh::{generate_cube_mesh, generate_slab_mesh, BoundaryTag, Mesh};
use crate::precond::{solve_block_system, BlockSolverConfig, LinearSolverKind};
use crate::tensor::{self, Mat3};
use crate::timeint::{block_system, gen_alpha_params, intermediate, predict, Integrator, NonlinearConfig, State, StepStats};
use crate::vtk::{write_vtk, PointField};

/// Edge of the compression block (cm).
pub const CUBE_EDGE: f64 = 0.1;
/// One-eighth tensile specimen (cm).
pub const SLAB_SIZE: [f64; 3] = [0.5, 0.15, 0.025];
/// One newton in dyn.
pub const NEWTON: f64 = 1.0e5;
/// Symmetry copies of the one-eighth model sharing the end load.
const LOAD_SHARE: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkId {
    BlockCompression,
    TensileTest,
}

impl BenchmarkId {
    pub fn name(self) -> &'static str {
        match self {
            BenchmarkId::BlockCompression => "block-compression",
            BenchmarkId::TensileTest => "tensile-test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Divisions per cube edge.
    pub divisions: usize,
    /// Slab divisions along x, y, z.
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub steps: usize,
    pub rho_inf: f64,
    /// Time at which the load reaches full magnitude; defaults to `dt · steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_time: Option<f64>,
    /// Halvings allowed when a step fails to converge.
    #[serde(default)]
    pub max_cutbacks: usize,
}

impl TimeConfig {
    pub fn ramp_end(&self) -> f64 {
        self.ramp_time.unwrap_or(self.dt * self.steps as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub rho0: f64,
    /// Neo-Hookean shear modulus before `eta` scaling.
    pub mu_mpa: f64,
    pub kappa_mpa: f64,
    /// When set, `κ` follows from `μ` and `ν` instead of `kappa_mpa`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Stiffness and load scaling factor of the compression block.
    pub eta: f64,
    pub load_mpa: f64,
    pub mu_kpa: f64,
    pub k1_kpa: f64,
    pub k2: f64,
    pub kd: f64,
    pub phi_deg: f64,
    /// Total end force on the full specimen.
    pub load_newton: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Write a VTK snapshot every this many steps; 0 writes none.
    #[serde(default)]
    pub vtk_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub benchmark: BenchmarkId,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    pub material: MaterialConfig,
    /// Stabilisation constant `c_m`.
    pub c_m: f64,
    pub solver: LinearSolverKind,
    pub linear: BlockSolverConfig,
    pub nonlinear: NonlinearConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn base_material() -> MaterialConfig {
    MaterialConfig {
        rho0: 1.0,
        mu_mpa: 80.194,
        kappa_mpa: 400_889.806,
        nu: None,
        eta: 1.0,
        load_mpa: 320.0,
        mu_kpa: 7.64,
        k1_kpa: 996.6,
        k2: 524.6,
        kd: 0.226,
        phi_deg: 40.02,
        load_newton: 2.0,
    }
}

impl BenchmarkConfig {
    /// Unit-block compression: 6 divisions, ten steps of 0.1 s with the load
    /// ramped over the whole run.
    pub fn block_compression() -> Self {
        BenchmarkConfig {
            benchmark: BenchmarkId::BlockCompression,
            mesh: MeshConfig { divisions: 6, nx: 20, ny: 6, nz: 2 },
            time: TimeConfig { dt: 0.1, steps: 10, rho_inf: 0.5, ramp_time: None, max_cutbacks: 0 },
            material: base_material(),
            c_m: 1e-3,
            solver: LinearSolverKind::Nested,
            linear: BlockSolverConfig::default(),
            nonlinear: NonlinearConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// One-eighth tensile specimen, 2 N reached after 100 s in 100 steps.
    /// The response is soft until the fibres align, so failed steps are
    /// retried with smaller increments.
    pub fn tensile_test() -> Self {
        BenchmarkConfig {
            benchmark: BenchmarkId::TensileTest,
            mesh: MeshConfig { divisions: 6, nx: 20, ny: 6, nz: 2 },
            time: TimeConfig { dt: 1.0, steps: 100, rho_inf: 0.5, ramp_time: None, max_cutbacks: 6 },
            ..Self::block_compression()
        }
    }

    pub fn preset(id: BenchmarkId) -> Self {
        match id {
            BenchmarkId::BlockCompression => Self::block_compression(),
            BenchmarkId::TensileTest => Self::tensile_test(),
        }
    }

    /// Parses a configuration, filling unspecified keys from the preset of
    /// the named benchmark.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(user)
    }

    pub fn from_table(user: toml::Table) -> Result<Self> {
        let id = match user.get("benchmark") {
            Some(v) => BenchmarkId::deserialize(v.clone()).map_err(|e| Error::Config(format!("benchmark: {e}")))?,
            None => return Err(Error::Config("missing `benchmark` key".into())),
        };
        let mut merged = Self::preset(id).to_table()?;
        merge_tables(&mut merged, user);
        let cfg: BenchmarkConfig =
            toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `section.key = value` overrides; values are parsed as TOML
    /// literals and fall back to strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table = self.to_table()?;
        for o in overrides {
            set_dotted(&mut table, o)?;
        }
        let cfg: BenchmarkConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.time;
        if !(t.dt > 0.0) || t.steps == 0 {
            return Err(Error::Config("time.dt must be positive and time.steps at least 1".into()));
        }
        if t.ramp_end() <= 0.0 {
            return Err(Error::Config("time.ramp_time must be positive".into()));
        }
        if let Some(nu) = self.material.nu {
            if !(0.0..=0.5).contains(&nu) {
                return Err(Error::Config(format!("material.nu = {nu} outside [0, 0.5]")));
            }
        }
        if !(self.material.eta > 0.0) {
            return Err(Error::Config("material.eta must be positive".into()));
        }
        let m = &self.mesh;
        match self.benchmark {
            BenchmarkId::BlockCompression if m.divisions < 2 => {
                Err(Error::Config("block compression needs mesh.divisions >= 2".into()))
            }
            BenchmarkId::TensileTest if m.nx == 0 || m.ny == 0 || m.nz == 0 => {
                Err(Error::Config("slab divisions must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// The material of this benchmark in CGS units.
    pub fn build_material(&self) -> Result<Material> {
        let m = &self.material;
        match self.benchmark {
            BenchmarkId::BlockCompression => {
                let mu = m.mu_mpa * m.eta * MPA;
                match m.nu {
                    Some(nu) => Material::neo_hookean_from_poisson(m.rho0, mu, nu),
                    None => Material::neo_hookean(m.rho0, mu, m.kappa_mpa * m.eta * MPA),
                }
            }
            BenchmarkId::TensileTest => {
                Material::goh(m.rho0, m.mu_kpa * KPA, m.k1_kpa * KPA, m.k2, m.kd, m.phi_deg)
            }
        }
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        match self.benchmark {
            BenchmarkId::BlockCompression => generate_cube_mesh(self.mesh.divisions, CUBE_EDGE),
            BenchmarkId::TensileTest => {
                let [lx, ly, lz] = SLAB_SIZE;
                generate_slab_mesh(self.mesh.nx, self.mesh.ny, self.mesh.nz, lx, ly, lz)
            }
        }
    }

    /// Full-magnitude traction on the loaded face (dyn/cm²).
    pub fn traction(&self) -> [f64; 3] {
        let m = &self.material;
        match self.benchmark {
            BenchmarkId::BlockCompression => [0.0, 0.0, -m.load_mpa * m.eta * MPA],
            BenchmarkId::TensileTest => {
                let area = SLAB_SIZE[1] * SLAB_SIZE[2];
                [m.load_newton * NEWTON / LOAD_SHARE / area, 0.0, 0.0]
            }
        }
    }

    pub fn boundary_conditions(&self) -> Vec<DirichletBc> {
        match self.benchmark {
            BenchmarkId::BlockCompression => vec![
                DirichletBc::new(BoundaryTag::SymmetryX, [true, false, false]),
                DirichletBc::new(BoundaryTag::SymmetryY, [false, true, false]),
                DirichletBc::new(BoundaryTag::Bottom, [false, false, true]),
                DirichletBc::new(BoundaryTag::Top, [true, true, false]),
                DirichletBc::new(BoundaryTag::TopLoadedQuarter, [true, true, false]),
            ],
            BenchmarkId::TensileTest => vec![
                DirichletBc::new(BoundaryTag::SymmetryX, [true, false, false]),
                DirichletBc::new(BoundaryTag::SymmetryY, [false, true, false]),
                DirichletBc::new(BoundaryTag::SymmetryZ, [false, false, true]),
                DirichletBc::new(BoundaryTag::LoadedEnd, [false, true, true]),
            ],
        }
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let tag = match self.benchmark {
            BenchmarkId::BlockCompression => BoundaryTag::TopLoadedQuarter,
            BenchmarkId::TensileTest => BoundaryTag::LoadedEnd,
        };
        let loads = Loads {
            body: [0.0; 3],
            tractions: vec![(tag, self.traction())],
            ramp: Ramp::Linear { t_full: self.time.ramp_end() },
        };
        Problem::new(self.build_mesh()?, self.build_material()?, loads, &self.boundary_conditions(), self.c_m)
    }

    pub fn integrator<'p>(&self, problem: &'p Problem) -> Result<Integrator<'p>> {
        let mut it = Integrator::new(problem, self.time.rho_inf, self.time.dt)?;
        it.nonlinear = self.nonlinear;
        it.solver = self.solver;
        it.solver_cfg = self.linear;
        Ok(it)
    }
}

fn merge_tables(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge_tables(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_dotted(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = parse_literal(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{k}` in `{path}` is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("x = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("x").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Load level and monitored displacement at the end of a step.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub time: f64,
    /// MPa on the loaded quarter for the block, total force in N for the
    /// tensile specimen.
    pub load: f64,
    /// Downward displacement of the loaded corner for the block, mean `u_x`
    /// of the loaded end for the tensile specimen (cm).
    pub displacement: f64,
    /// Volume-averaged fibre alignment `a₁·C a₂ / (|F a₁| |F a₂|)`; zero for
    /// the isotropic block.
    pub fiber_alignment: f64,
    pub newton_iterations: usize,
}

/// Averages over every Newton iteration of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveSummary {
    pub steps: usize,
    /// Total Newton iterations `l̂`.
    pub newton_iterations: usize,
    pub mean_outer: f64,
    pub mean_a: f64,
    pub mean_s: f64,
    pub mean_inner: f64,
    pub mean_assembly_seconds: f64,
    pub mean_linear_seconds: f64,
    pub all_linear_converged: bool,
}

impl SolveSummary {
    pub fn from_steps(steps: &[StepStats]) -> Self {
        let its: Vec<_> = steps.iter().flat_map(|s| &s.iterations).collect();
        let n = its.len().max(1) as f64;
        let sum = |f: &dyn Fn(&crate::timeint::NewtonIterationStats) -> (usize, usize)| {
            let (t, c) = its.iter().fold((0, 0), |acc, it| {
                let (t, c) = f(it);
                (acc.0 + t, acc.1 + c)
            });
            if c == 0 {
                0.0
            } else {
                t as f64 / c as f64
            }
        };
        SolveSummary {
            steps: steps.len(),
            newton_iterations: its.len(),
            mean_outer: its.iter().map(|i| i.linear.outer_iterations as f64).sum::<f64>() / n,
            mean_a: sum(&|i| (i.linear.sub.a_iters, i.linear.sub.a_solves)),
            mean_s: sum(&|i| (i.linear.sub.s_iters, i.linear.sub.s_solves)),
            mean_inner: sum(&|i| (i.linear.sub.inner_iters, i.linear.sub.inner_solves)),
            mean_assembly_seconds: its.iter().map(|i| i.assembly_seconds).sum::<f64>() / n,
            mean_linear_seconds: its.iter().map(|i| i.linear_seconds).sum::<f64>() / n,
            all_linear_converged: its.iter().all(|i| i.linear.converged),
        }
    }
}

pub struct RunReport {
    pub config: BenchmarkConfig,
    pub problem: Problem,
    pub steps: Vec<StepStats>,
    pub history: Vec<HistoryRow>,
    pub final_state: State,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary::from_steps(&self.steps)
    }

    /// `(load, displacement)` pairs including the unloaded start.
    pub fn load_displacement(&self) -> Vec<(f64, f64)> {
        std::iter::once((0.0, 0.0)).chain(self.history.iter().map(|h| (h.load, h.displacement))).collect()
    }
}

/// Deformation gradient of element `e` for nodal displacements `u`.
pub fn element_deformation_gradient(mesh: &Mesh, e: usize, u: &[f64]) -> Mat3<f64> {
    let g = mesh.geometry(e);
    let mut f: Mat3<f64> = tensor::identity();
    for (a, &n) in mesh.tets[e].iter().enumerate() {
        for i in 0..3 {
            for k in 0..3 {
                f[i][k] += u[3 * n + i] * g.grads[a][k];
            }
        }
    }
    f
}

/// `a₁·C a₂ / (|F a₁| |F a₂|)`: cosine of the angle between the two deformed
/// fibre directions.
pub fn fiber_alignment(f: &Mat3<f64>, a1: &[f64; 3], a2: &[f64; 3]) -> f64 {
    let fa1 = tensor::mat_vec(f, a1);
    let fa2 = tensor::mat_vec(f, a2);
    tensor::dot3(&fa1, &fa2) / (tensor::dot3(&fa1, &fa1).sqrt() * tensor::dot3(&fa2, &fa2).sqrt())
}

/// Per-element fibre alignment averaged to the nodes.
pub fn nodal_fiber_alignment(problem: &Problem, u: &[f64]) -> Vec<f64> {
    let mesh = &problem.mesh;
    let p = &problem.material.params;
    let mut acc = vec![0.0; mesh.num_nodes()];
    let mut w = vec![0.0; mesh.num_nodes()];
    for e in 0..mesh.num_elements() {
        let v = mesh.tet_volume(e);
        let c = fiber_alignment(&element_deformation_gradient(mesh, e, u), &p.a1, &p.a2);
        for &n in &mesh.tets[e] {
            acc[n] += c * v;
            w[n] += v;
        }
    }
    acc.iter().zip(&w).map(|(a, b)| a / b).collect()
}

fn mean_fiber_alignment(problem: &Problem, u: &[f64]) -> f64 {
    let mesh = &problem.mesh;
    let p = &problem.material.params;
    let mut s = 0.0;
    for e in 0..mesh.num_elements() {
        s += mesh.tet_volume(e) * fiber_alignment(&element_deformation_gradient(mesh, e, u), &p.a1, &p.a2);
    }
    s / mesh.total_volume()
}

/// Monitored displacement: see [`HistoryRow::displacement`].
pub fn monitored_displacement(cfg: &BenchmarkConfig, problem: &Problem, u: &[f64]) -> f64 {
    let mesh = &problem.mesh;
    match cfg.benchmark {
        BenchmarkId::BlockCompression => {
            let corner = mesh
                .nodes
                .iter()
                .position(|x| x[0].abs() < 1e-12 && x[1].abs() < 1e-12 && (x[2] - CUBE_EDGE).abs() < 1e-12)
                .expect("cube mesh has a top corner on the symmetry axis");
            -u[3 * corner + 2]
        }
        BenchmarkId::TensileTest => {
            let nodes = mesh.nodes_with_tag(BoundaryTag::LoadedEnd);
            nodes.iter().map(|&n| u[3 * n]).sum::<f64>() / nodes.len() as f64
        }
    }
}

fn load_level(cfg: &BenchmarkConfig, t: f64) -> f64 {
    let s = Ramp::Linear { t_full: cfg.time.ramp_end() }.factor(t);
    match cfg.benchmark {
        BenchmarkId::BlockCompression => s * cfg.material.load_mpa * cfg.material.eta,
        BenchmarkId::TensileTest => s * cfg.material.load_newton,
    }
}

/// Time-steps a benchmark. Output files are written when `output.dir` is set.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<RunReport> {
    let t0 = Instant::now();
    let problem = cfg.build_problem()?;
    info!(
        "{}: {} nodes, {} elements, {} free velocity unknowns",
        cfg.benchmark.name(),
        problem.n_nodes(),
        problem.mesh.num_elements(),
        problem.dofs.n_free()
    );
    let integ = cfg.integrator(&problem)?;
    let mut history = Vec::new();
    let mut snapshots = Vec::new();
    let y0 = State::zeros(problem.n_nodes());
    let result = integ.advance_with_cutback(y0, 0.0, cfg.time.steps, cfg.time.max_cutbacks, |s, t, y, sub| {
        history.push(HistoryRow {
            step: s,
            time: t,
            load: load_level(cfg, t),
            displacement: monitored_displacement(cfg, &problem, &y.u),
            fiber_alignment: match cfg.benchmark {
                BenchmarkId::TensileTest => mean_fiber_alignment(&problem, &y.u),
                BenchmarkId::BlockCompression => 0.0,
            },
            newton_iterations: sub.iter().map(|st| st.newton_iterations).sum(),
        });
        if cfg.output.vtk_every > 0 && (s % cfg.output.vtk_every == 0 || s == cfg.time.steps) {
            snapshots.push((s, y.clone()));
        }
    });
    let (final_state, steps) = result?;
    let drop_problem = problem;
    let report = RunReport {
        config: cfg.clone(),
        problem: drop_problem,
        steps,
        history,
        final_state,
        wall_seconds: t0.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &cfg.output.dir {
        fs::create_dir_all(dir)?;
        write_iteration_csv(fs::File::create(dir.join("iterations.csv"))?, &report.steps)?;
        write_history_csv(fs::File::create(dir.join("history.csv"))?, &report.history)?;
        for (s, y) in &snapshots {
            let path = dir.join(format!("{}_{s:04}.vtk", cfg.benchmark.name()));
            write_state_vtk(fs::File::create(path)?, &report.problem, y, &format!("{} step {s}", cfg.benchmark.name()))?;
        }
    }
    Ok(report)
}

pub fn run_block_compression(cfg: &BenchmarkConfig) -> Result<RunReport> {
    if cfg.benchmark != BenchmarkId::BlockCompression {
        return Err(Error::Config("configuration is not a block-compression benchmark".into()));
    }
    run_benchmark(cfg)
}

pub fn run_tensile_test(cfg: &BenchmarkConfig) -> Result<RunReport> {
    if cfg.benchmark != BenchmarkId::TensileTest {
        return Err(Error::Config("configuration is not a tensile-test benchmark".into()));
    }
    run_benchmark(cfg)
}

pub fn write_state_vtk<W: Write>(w: W, problem: &Problem, y: &State, title: &str) -> Result<()> {
    let mut fields = vec![
        PointField::Vector("displacement", &y.u),
        PointField::Vector("velocity", &y.v),
        PointField::Scalar("pressure", &y.p),
    ];
    let align;
    if problem.material.is_incompressible() {
        align = nodal_fiber_alignment(problem, &y.u);
        fields.push(PointField::Scalar("fiber_alignment", &align));
    }
    write_vtk(w, &problem.mesh, title, &fields)
}

pub const ITERATION_CSV_HEADER: &str =
    "step,time,iteration,residual,outer_n,mean_a,mean_s,mean_inner,a_solves,s_solves,inner_solves,linear_converged,assembly_s,linear_s";

/// One row per Newton iteration.
pub fn write_iteration_csv<W: Write>(mut w: W, steps: &[StepStats]) -> Result<()> {
    writeln!(w, "{ITERATION_CSV_HEADER}")?;
    for s in steps {
        for (l, it) in s.iterations.iter().enumerate() {
            let sub = &it.linear.sub;
            writeln!(
                w,
                "{},{:.6e},{},{:.6e},{},{:.3},{:.3},{:.3},{},{},{},{},{:.6e},{:.6e}",
                s.step,
                s.time,
                l + 1,
                it.residual_norm,
                it.linear.outer_iterations,
                sub.mean_a(),
                sub.mean_s(),
                sub.mean_inner(),
                sub.a_solves,
                sub.s_solves,
                sub.inner_solves,
                it.linear.converged,
                it.assembly_seconds,
                it.linear_seconds
            )?;
        }
    }
    Ok(())
}

pub const HISTORY_CSV_HEADER: &str = "step,time,load,displacement,fiber_alignment,newton_iterations";

pub fn write_history_csv<W: Write>(mut w: W, rows: &[HistoryRow]) -> Result<()> {
    writeln!(w, "{HISTORY_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{}",
            r.step, r.time, r.load, r.displacement, r.fiber_alignment, r.newton_iterations
        )?;
    }
    Ok(())
}

/// Parameter lists of a sweep. Each non-empty list is one axis of the
/// cartesian product; with every list empty the sweep has no cells.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub nu: Vec<f64>,
    pub eta: Vec<f64>,
    /// Inner relative tolerance `δ_I`.
    pub inner_tol: Vec<f64>,
    /// Common intermediate tolerance `δ_A = δ_S`.
    pub sub_tol: Vec<f64>,
    /// Sets `δ_A = δ_S = δ_I` together.
    pub uniform_tol: Vec<f64>,
    pub solver: Vec<LinearSolverKind>,
    pub dt: Vec<f64>,
    pub kd: Vec<f64>,
    pub phi_deg: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepCell {
    pub nu: Option<f64>,
    pub eta: Option<f64>,
    pub inner_tol: Option<f64>,
    pub sub_tol: Option<f64>,
    pub uniform_tol: Option<f64>,
    pub solver: Option<LinearSolverKind>,
    pub dt: Option<f64>,
    pub kd: Option<f64>,
    pub phi_deg: Option<f64>,
}

impl SweepAxes {
    pub fn cells(&self) -> Vec<SweepCell> {
        let axes: [(usize, &dyn Fn(&mut SweepCell, usize)); 9] = [
            (self.nu.len(), &|c, i| c.nu = Some(self.nu[i])),
            (self.eta.len(), &|c, i| c.eta = Some(self.eta[i])),
            (self.inner_tol.len(), &|c, i| c.inner_tol = Some(self.inner_tol[i])),
            (self.sub_tol.len(), &|c, i| c.sub_tol = Some(self.sub_tol[i])),
            (self.uniform_tol.len(), &|c, i| c.uniform_tol = Some(self.uniform_tol[i])),
            (self.solver.len(), &|c, i| c.solver = Some(self.solver[i])),
            (self.dt.len(), &|c, i| c.dt = Some(self.dt[i])),
            (self.kd.len(), &|c, i| c.kd = Some(self.kd[i])),
            (self.phi_deg.len(), &|c, i| c.phi_deg = Some(self.phi_deg[i])),
        ];
        if axes.iter().all(|a| a.0 == 0) {
            return Vec::new();
        }
        let mut cells = vec![SweepCell::default()];
        for (len, set) in axes {
            if len == 0 {
                continue;
            }
            let mut next = Vec::with_capacity(cells.len() * len);
            for c in &cells {
                for i in 0..len {
                    let mut c2 = *c;
                    set(&mut c2, i);
                    next.push(c2);
                }
            }
            cells = next;
        }
        cells
    }
}

impl SweepCell {
    pub fn apply(&self, base: &BenchmarkConfig) -> BenchmarkConfig {
        let mut cfg = base.clone();
        if let Some(nu) = self.nu {
            cfg.material.nu = Some(nu);
        }
        if let Some(eta) = self.eta {
            cfg.material.eta = eta;
        }
        if let Some(t) = self.uniform_tol {
            cfg.linear = cfg.linear.with_sub_tolerances(t, t, t);
        }
        if let Some(t) = self.sub_tol {
            cfg.linear.a.rel_tol = t;
            cfg.linear.s.rel_tol = t;
        }
        if let Some(t) = self.inner_tol {
            cfg.linear.inner.rel_tol = t;
        }
        if let Some(s) = self.solver {
            cfg.solver = s;
        }
        if let Some(dt) = self.dt {
            // Keep the physical load history when the step changes.
            let end = cfg.time.ramp_end();
            cfg.time.ramp_time = Some(end);
            cfg.time.dt = dt;
        }
        if let Some(kd) = self.kd {
            cfg.material.kd = kd;
        }
        if let Some(phi) = self.phi_deg {
            cfg.material.phi_deg = phi;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: toml::Table,
    #[serde(default)]
    pub sweep: SweepAxes,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<(BenchmarkConfig, SweepAxes)> {
        let sc: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok((BenchmarkConfig::from_table(sc.base)?, sc.sweep))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    /// `None` marks a cell that did not converge.
    pub summary: Option<SolveSummary>,
    pub error: Option<String>,
    pub wall_seconds: f64,
}

impl SweepRow {
    pub fn is_nc(&self) -> bool {
        self.summary.is_none_or(|s| !s.all_linear_converged)
    }
}

/// Runs every cell; failures are recorded and the sweep continues.
pub fn run_sweep(base: &BenchmarkConfig, axes: &SweepAxes) -> Vec<SweepRow> {
    axes.cells()
        .into_iter()
        .map(|cell| {
            let cfg = cell.apply(base);
            let t0 = Instant::now();
            let outcome = cfg.validate().and_then(|_| {
                let mut quiet = cfg.clone();
                quiet.output = OutputConfig::default();
                run_benchmark(&quiet)
            });
            let wall_seconds = t0.elapsed().as_secs_f64();
            match outcome {
                Ok(rep) => SweepRow { cell, summary: Some(rep.summary()), error: None, wall_seconds },
                Err(e) => {
                    warn!("sweep cell {cell:?} failed: {e}");
                    SweepRow { cell, summary: None, error: Some(e.to_string()), wall_seconds }
                }
            }
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str =
    "nu,eta,inner_tol,sub_tol,uniform_tol,solver,dt,kd,phi_deg,status,newton_iterations,mean_outer,mean_a,mean_s,mean_inner,mean_linear_s,wall_s";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        let c = &r.cell;
        let mut line = format!(
            "{},{},{},{},{},{},{},{},{},",
            opt(c.nu),
            opt(c.eta),
            opt(c.inner_tol),
            opt(c.sub_tol),
            opt(c.uniform_tol),
            c.solver.map_or("", |s| s.name()),
            opt(c.dt),
            opt(c.kd),
            opt(c.phi_deg)
        );
        match &r.summary {
            Some(s) if !r.is_nc() => {
                let _ = write!(
                    line,
                    "ok,{},{:.3},{:.3},{:.3},{:.3},{:.6e},{:.3}",
                    s.newton_iterations, s.mean_outer, s.mean_a, s.mean_s, s.mean_inner, s.mean_linear_seconds, r.wall_seconds
                );
            }
            _ => {
                let _ = write!(line, "NC,,,,,,,{:.3}", r.wall_seconds);
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// The linear system of the first Newton correction of the first step.
pub fn first_newton_system(cfg: &BenchmarkConfig) -> Result<(Problem, BlockSystem)> {
    let problem = cfg.build_problem()?;
    let ga = gen_alpha_params(cfg.time.rho_inf)?;
    let k: TangentCoefficients = ga.coefficients(cfg.time.dt);
    let y0 = State::zeros(problem.n_nodes());
    let y = predict(&y0, ga.gamma);
    let (stage, _udot): (StageState, Vec<f64>) = intermediate(&y0, &y, &ga);
    let t_stage = ga.alpha_f * cfg.time.dt;
    let tangent = problem.tangent(&stage, t_stage, &k, None)?;
    let sys = block_system(&problem, &tangent, &k);
    Ok((problem, sys))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearBenchRow {
    pub solver: LinearSolverKind,
    pub converged: bool,
    pub outer_iterations: usize,
    pub mean_a: f64,
    pub mean_s: f64,
    pub mean_inner: f64,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    /// `|b - K x| / |b|` of the returned solution, unscaled system.
    pub relative_residual: f64,
    pub error: Option<String>,
}

/// Solves one assembled system with each requested solver.
pub fn linear_bench(sys: &BlockSystem, solvers: &[LinearSolverKind], cfg: &BlockSolverConfig) -> Vec<LinearBenchRow> {
    let rhs = sys.rhs();
    let bnorm = crate::krylov::norm2(&rhs);
    solvers
        .iter()
        .map(|&kind| match solve_block_system(sys, kind, cfg) {
            Ok((x, st)) => {
                let r = crate::krylov::residual(sys, &rhs, &x);
                LinearBenchRow {
                    solver: kind,
                    converged: st.converged,
                    outer_iterations: st.outer_iterations,
                    mean_a: st.sub.mean_a(),
                    mean_s: st.sub.mean_s(),
                    mean_inner: st.sub.mean_inner(),
                    setup_seconds: st.setup_seconds,
                    solve_seconds: st.solve_seconds,
                    relative_residual: crate::krylov::norm2(&r) / bnorm.max(f64::MIN_POSITIVE),
                    error: None,
                }
            }
            Err(e) => LinearBenchRow {
                solver: kind,
                converged: false,
                outer_iterations: 0,
                mean_a: 0.0,
                mean_s: 0.0,
                mean_inner: 0.0,
                setup_seconds: 0.0,
                solve_seconds: 0.0,
                relative_residual: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

pub const LINEAR_BENCH_CSV_HEADER: &str =
    "solver,status,outer_n,mean_a,mean_s,mean_inner,setup_s,solve_s,relative_residual,error";

pub fn write_linear_bench_csv<W: Write>(mut w: W, rows: &[LinearBenchRow]) -> Result<()> {
    writeln!(w, "{LINEAR_BENCH_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.3},{:.3},{:.3},{:.6e},{:.6e},{:.3e},{}",
            r.solver.name(),
            if r.converged { "ok" } else { "NC" },
            r.outer_iterations,
            r.mean_a,
            r.mean_s,
            r.mean_inner,
            r.setup_seconds,
            r.solve_seconds,
            r.relative_residual,
            r.error.as_deref().unwrap_or("").replace(',', ";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [BenchmarkConfig::block_compression(), BenchmarkConfig::tensile_test()] {
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(BenchmarkConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_files_fill_from_preset() {
        let cfg = BenchmarkConfig::from_toml_str(
            "benchmark = \"tensile-test\"\n[material]\nkd = 0.0\n[linear.inner]\nrel_tol = 1e-4\n",
        )
        .unwrap();
        assert_eq!(cfg.material.kd, 0.0);
        assert_eq!(cfg.material.phi_deg, 40.02);
        assert_eq!(cfg.linear.inner.rel_tol, 1e-4);
        assert_eq!(cfg.linear.a.rel_tol, BlockSolverConfig::default().a.rel_tol);
        assert!(BenchmarkConfig::from_toml_str("[mesh]\ndivisions = 3\n").is_err());
        assert!(BenchmarkConfig::from_toml_str("benchmark = \"block-compression\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let cfg = BenchmarkConfig::block_compression()
            .with_overrides(&["mesh.divisions=4".into(), "solver=simple".into(), "material.nu=0.3".into()])
            .unwrap();
        assert_eq!(cfg.mesh.divisions, 4);
        assert_eq!(cfg.solver, LinearSolverKind::Simple);
        assert_eq!(cfg.material.nu, Some(0.3));
        assert!(BenchmarkConfig::block_compression().with_overrides(&["material.nu=0.7".into()]).is_err());
    }

    #[test]
    fn default_material_parameters() {
        let cfg = BenchmarkConfig::block_compression();
        let m = cfg.build_material().unwrap();
        assert_eq!(m.params.mu, 80.194 * MPA);
        assert_eq!(m.params.kappa, 400_889.806 * MPA);
        let nu = 0.4999;
        let k = BenchmarkConfig { material: MaterialConfig { nu: Some(nu), ..cfg.material.clone() }, ..cfg }
            .build_material()
            .unwrap()
            .params
            .kappa;
        assert!((k / (400_889.806 * MPA) - 1.0).abs() < 2e-4);
    }

    #[test]
    fn tensile_traction_matches_force() {
        let cfg = BenchmarkConfig::tensile_test();
        let t = cfg.traction()[0];
        let quarter_force = t * SLAB_SIZE[1] * SLAB_SIZE[2];
        assert!((quarter_force * LOAD_SHARE - 2.0 * NEWTON).abs() < 1e-6);
    }

    #[test]
    fn empty_sweep_has_no_cells_and_header_only() {
        let axes = SweepAxes::default();
        assert!(axes.cells().is_empty());
        let rows = run_sweep(&BenchmarkConfig::block_compression(), &axes);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{SWEEP_CSV_HEADER}\n"));
    }

    #[test]
    fn sweep_cells_form_cartesian_product() {
        let axes = SweepAxes { nu: vec![0.0, 0.3, 0.4999], eta: vec![1e-2, 1.0], ..Default::default() };
        let cells = axes.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1].nu, Some(0.0));
        assert_eq!(cells[1].eta, Some(1.0));
    }

    #[test]
    fn fiber_alignment_of_identity_and_stretch() {
        let a1 = [0.6, 0.8, 0.0];
        let a2 = [0.6, -0.8, 0.0];
        let id = tensor::identity();
        assert!((fiber_alignment(&id, &a1, &a2) - (0.36 - 0.64)).abs() < 1e-15);
        let f = [[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(fiber_alignment(&f, &a1, &a2) > fiber_alignment(&id, &a1, &a2));
    }
}
