//! Residual and tangent assembly of the stabilised mixed formulation on
//! linear tetrahedra.
//!
//! Integrals are taken over the reference configuration with the 4-point
//! degree-2 rule. Inside a linear element `F` and `J` are constant and all
//! second derivatives of the shape functions vanish, so the divergence of the
//! isochoric stress drops out of the strong momentum residual.
//!
//! The tangent is obtained by forward-mode differentiation of the element
//! residual. Every velocity column is seeded simultaneously in `v̇`, `v` and
//! `u` with the weights `α_m`, `α_f γ Δt` and `(α_f γ Δt)² / α_m`, and every
//! pressure column in `ṗ` and `p` with `α_m` and `α_f γ Δt`, so one dual
//! evaluation yields the reduced blocks `A`, `B`, `C`, `D` directly.

use rayon::prelude::*;

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::krylov::CsrMatrix;
use crate::materials::Material;
use crate::mesh::{BoundaryTag, Mesh, TetGeometry};
use crate::tensor::{self, Mat3};

/// Quadrature point weights in barycentric coordinates: the point `q` has
/// weight `QA` on vertex `q` and `QB` on the others.
const QA: f64 = 0.585_410_196_624_968_5;
const QB: f64 = 0.138_196_601_125_010_5;

/// Elements per parallel work unit; contributions are scattered in element
/// order after each chunk.
const CHUNK: usize = 2048;

/// Directions carried by the tangent dual numbers: 12 velocity columns,
/// 4 pressure columns and one extra displacement direction.
const NDIR: usize = 17;

fn shape_at(q: usize) -> [f64; 4] {
    let mut n = [QB; 4];
    n[q] = QA;
    n
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizationParams {
    pub c_m: f64,
    /// `τ_M` of every element.
    pub tau: Vec<f64>,
}

/// `τ_M^e = c_m h^e / (c ρ0)` with `c` the maximum wave speed.
pub fn compute_tau(mesh: &Mesh, material: &Material, c_m: f64) -> StabilizationParams {
    let c = material.wave_speed();
    let rho0 = material.params.rho0;
    let tau = mesh.element_diameters.iter().map(|h| c_m * h / (c * rho0)).collect();
    StabilizationParams { c_m, tau }
}

/// How prescribed tractions evolve in time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ramp {
    Constant,
    /// Grows linearly from zero and reaches full magnitude at `t_full`.
    Linear { t_full: f64 },
}

impl Ramp {
    pub fn factor(&self, t: f64) -> f64 {
        match *self {
            Ramp::Constant => 1.0,
            Ramp::Linear { t_full } => (t / t_full).clamp(0.0, 1.0),
        }
    }
}

/// Body force and dead-load tractions on the reference boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Loads {
    /// Body force per unit mass (cm/s²).
    pub body: [f64; 3],
    /// Full-magnitude traction per tag (dyn/cm²).
    pub tractions: Vec<(BoundaryTag, [f64; 3])>,
    pub ramp: Ramp,
}

impl Default for Loads {
    fn default() -> Self {
        Loads { body: [0.0; 3], tractions: Vec::new(), ramp: Ramp::Constant }
    }
}

/// Components of displacement and velocity held at zero on a tagged face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirichletBc {
    pub tag: BoundaryTag,
    pub components: [bool; 3],
}

impl DirichletBc {
    pub fn new(tag: BoundaryTag, components: [bool; 3]) -> Self {
        DirichletBc { tag, components }
    }
}

/// Numbering of the unconstrained velocity unknowns. Pressure unknowns are
/// never constrained.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    n_nodes: usize,
    /// Free index of each of the `3 n_nodes` vector unknowns, `usize::MAX`
    /// when constrained.
    free_of: Vec<usize>,
    free: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, bcs: &[DirichletBc]) -> Self {
        let nn = mesh.num_nodes();
        let mut fixed = vec![false; 3 * nn];
        for bc in bcs {
            for node in mesh.nodes_with_tag(bc.tag) {
                for c in 0..3 {
                    if bc.components[c] {
                        fixed[3 * node + c] = true;
                    }
                }
            }
        }
        let mut free_of = vec![usize::MAX; 3 * nn];
        let mut free = Vec::new();
        for (g, &f) in fixed.iter().enumerate() {
            if !f {
                free_of[g] = free.len();
                free.push(g);
            }
        }
        DofMap { n_nodes: nn, free_of, free }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn is_fixed(&self, g: usize) -> bool {
        self.free_of[g] == usize::MAX
    }

    pub fn free_index(&self, g: usize) -> Option<usize> {
        let f = self.free_of[g];
        (f != usize::MAX).then_some(f)
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    /// Entries of a full vector at the free unknowns.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&g| full[g]).collect()
    }

    /// Full vector with zeros at the constrained unknowns.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; 3 * self.n_nodes];
        for (&g, &v) in self.free.iter().zip(reduced) {
            full[g] = v;
        }
        full
    }
}

/// Nodal fields at the intermediate stage: values at `n+α_f`, rates at
/// `n+α_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub pdot: Vec<f64>,
    pub vdot: Vec<f64>,
}

impl StageState {
    pub fn zeros(n_nodes: usize) -> Self {
        StageState {
            u: vec![0.0; 3 * n_nodes],
            p: vec![0.0; n_nodes],
            v: vec![0.0; 3 * n_nodes],
            pdot: vec![0.0; n_nodes],
            vdot: vec![0.0; 3 * n_nodes],
        }
    }
}

/// Residuals over all unknowns, constrained ones included.
#[derive(Clone, Debug, PartialEq)]
pub struct Residuals {
    pub r_m: Vec<f64>,
    pub r_p: Vec<f64>,
}

/// Time-integration weights entering the tangent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentCoefficients {
    pub alpha_m: f64,
    pub alpha_f: f64,
    pub gamma: f64,
    pub dt: f64,
}

impl TangentCoefficients {
    /// `α_f γ Δt`
    pub fn value_weight(&self) -> f64 {
        self.alpha_f * self.gamma * self.dt
    }

    /// `(α_f γ Δt)² / α_m`
    pub fn displacement_weight(&self) -> f64 {
        self.value_weight().powi(2) / self.alpha_m
    }
}

/// Reduced tangent blocks together with the residuals they were assembled
/// with.
#[derive(Clone, Debug)]
pub struct Tangent {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub c: CsrMatrix,
    pub d: CsrMatrix,
    pub residuals: Residuals,
    /// `∂R_m/∂u · w` and `∂R_p/∂u · w` for the optional direction `w`, full
    /// length.
    pub du_m: Vec<f64>,
    pub du_p: Vec<f64>,
}

/// Unweighted partial derivatives of the residuals with respect to every
/// field, over all unknowns (no constraint elimination).
#[derive(Clone, Debug)]
pub struct Partials {
    pub m_u: CsrMatrix,
    pub m_p: CsrMatrix,
    pub m_v: CsrMatrix,
    pub m_pdot: CsrMatrix,
    pub m_vdot: CsrMatrix,
    pub p_u: CsrMatrix,
    pub p_p: CsrMatrix,
    pub p_v: CsrMatrix,
    pub p_pdot: CsrMatrix,
    pub p_vdot: CsrMatrix,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AssemblyMode {
    #[default]
    Parallel,
    Serial,
}

#[derive(Clone, Debug)]
struct Patterns {
    a: CsrMatrix,
    b: CsrMatrix,
    c: CsrMatrix,
    d: CsrMatrix,
}

/// A discretised boundary-value problem: mesh, material, loads and
/// constraints.
#[derive(Clone, Debug)]
pub struct Problem {
    pub mesh: Mesh,
    pub material: Material,
    pub stab: StabilizationParams,
    pub loads: Loads,
    pub dofs: DofMap,
    pub mode: AssemblyMode,
    geometry: Vec<TetGeometry>,
    patterns: Patterns,
}

/// Element unknowns laid out node by node.
#[derive(Clone, Copy, Debug)]
struct ElementVars<T> {
    u: [T; 12],
    p: [T; 4],
    v: [T; 12],
    pdot: [T; 4],
    vdot: [T; 12],
}

fn gather3(global: &[f64], tet: &[usize; 4]) -> [f64; 12] {
    let mut out = [0.0; 12];
    for (a, &n) in tet.iter().enumerate() {
        out[3 * a..3 * a + 3].copy_from_slice(&global[3 * n..3 * n + 3]);
    }
    out
}

fn gather1(global: &[f64], tet: &[usize; 4]) -> [f64; 4] {
    tet.map(|n| global[n])
}

impl ElementVars<f64> {
    fn gather(st: &StageState, tet: &[usize; 4]) -> Self {
        ElementVars {
            u: gather3(&st.u, tet),
            p: gather1(&st.p, tet),
            v: gather3(&st.v, tet),
            pdot: gather1(&st.pdot, tet),
            vdot: gather3(&st.vdot, tet),
        }
    }

    fn lift<T: Scalar>(&self) -> ElementVars<T> {
        ElementVars {
            u: self.u.map(T::cst),
            p: self.p.map(T::cst),
            v: self.v.map(T::cst),
            pdot: self.pdot.map(T::cst),
            vdot: self.vdot.map(T::cst),
        }
    }
}

/// Element residuals `(R_m, R_p)` without boundary tractions.
fn element_residual<T: Scalar>(
    geo: &TetGeometry,
    tau: f64,
    material: &Material,
    body: &[f64; 3],
    ev: &ElementVars<T>,
) -> Result<([T; 12], [T; 4])> {
    let g = &geo.grads;
    let mut f: Mat3<T> = tensor::identity();
    for a in 0..4 {
        for i in 0..3 {
            let ua = ev.u[3 * a + i];
            for k in 0..3 {
                f[i][k] += ua * g[a][k];
            }
        }
    }
    let j = tensor::det(&f);
    if !(j.re() > 0.0) {
        return Err(Error::ElementInversion { element: usize::MAX, jacobian: j.re() });
    }
    let finv = tensor::inverse_with_det(&f, j);
    let pt = material.isochoric_pk1(&f)?;

    // Spatial shape-function gradients N_{A,i} = N_{A,I} F⁻¹_{Ii}.
    let mut dn = [[T::zero(); 3]; 4];
    for a in 0..4 {
        for i in 0..3 {
            let mut s = finv[0][i] * g[a][0];
            s += finv[1][i] * g[a][1];
            s += finv[2][i] * g[a][2];
            dn[a][i] = s;
        }
    }
    let mut div_v = T::zero();
    let mut grad_p = [T::zero(); 3];
    for a in 0..4 {
        for i in 0..3 {
            div_v += ev.v[3 * a + i] * dn[a][i];
            grad_p[i] += ev.p[a] * dn[a][i];
        }
    }
    // Constant part of the momentum residual: N_{A,I} P̃_{iI}.
    let mut stress = [T::zero(); 12];
    for a in 0..4 {
        for i in 0..3 {
            let mut s = pt[i][0] * g[a][0];
            s += pt[i][1] * g[a][1];
            s += pt[i][2] * g[a][2];
            stress[3 * a + i] = s;
        }
    }

    let w = geo.volume / 4.0;
    let mut rm = [T::zero(); 12];
    let mut rp = [T::zero(); 4];
    for q in 0..4 {
        let n = shape_at(q);
        let mut p_q = T::zero();
        let mut pd_q = T::zero();
        let mut acc = [T::zero(); 3];
        for a in 0..4 {
            p_q += ev.p[a] * n[a];
            pd_q += ev.pdot[a] * n[a];
            for i in 0..3 {
                acc[i] += ev.vdot[3 * a + i] * n[a];
            }
        }
        let (rho, beta) = material.density_compressibility(p_q);
        let rho_j = rho * j;
        let mut inertia = [T::zero(); 3];
        let mut strong = [T::zero(); 3];
        for i in 0..3 {
            inertia[i] = rho_j * (acc[i] - body[i]);
            strong[i] = inertia[i] + j * grad_p[i];
        }
        let cont = j * (beta * pd_q + div_v);
        let jp = j * p_q;
        for a in 0..4 {
            let mut stab = dn[a][0] * strong[0];
            stab += dn[a][1] * strong[1];
            stab += dn[a][2] * strong[2];
            rp[a] += (cont * n[a] + stab * tau) * w;
            for i in 0..3 {
                rm[3 * a + i] += (inertia[i] * n[a] + stress[3 * a + i] - dn[a][i] * jp) * w;
            }
        }
    }
    Ok((rm, rp))
}

struct ElementTangent {
    a: [[f64; 12]; 12],
    b: [[f64; 4]; 12],
    c: [[f64; 12]; 4],
    d: [[f64; 4]; 4],
    rm: [f64; 12],
    rp: [f64; 4],
    du_m: [f64; 12],
    du_p: [f64; 4],
}

fn with_element(e: usize, r: Result<([f64; 12], [f64; 4])>) -> Result<([f64; 12], [f64; 4])> {
    r.map_err(|err| match err {
        Error::ElementInversion { jacobian, .. } => Error::ElementInversion { element: e, jacobian },
        other => other,
    })
}

impl Problem {
    pub fn new(mesh: Mesh, material: Material, loads: Loads, bcs: &[DirichletBc], c_m: f64) -> Result<Self> {
        material.validate()?;
        for (tag, _) in &loads.tractions {
            if !mesh.boundary_facets.iter().any(|f| f.tag == *tag) {
                return Err(Error::InvalidInput(format!("traction on tag `{}` which has no facets", tag.name())));
            }
        }
        let stab = compute_tau(&mesh, &material, c_m);
        let dofs = DofMap::new(&mesh, bcs);
        let geometry = (0..mesh.num_elements()).map(|e| mesh.geometry(e)).collect();
        let patterns = build_patterns(&mesh, &dofs);
        Ok(Problem { mesh, material, stab, loads, dofs, mode: AssemblyMode::Parallel, geometry, patterns })
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    /// Consistent nodal forces of the prescribed tractions at time `t`.
    pub fn traction_vector(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.n_nodes()];
        let s = self.loads.ramp.factor(t);
        if s == 0.0 {
            return out;
        }
        for (tag, h) in &self.loads.tractions {
            for facet in self.mesh.boundary_facets.iter().filter(|f| f.tag == *tag) {
                let share = self.mesh.facet_area(facet) / 3.0 * s;
                for &n in &facet.nodes {
                    for i in 0..3 {
                        out[3 * n + i] += h[i] * share;
                    }
                }
            }
        }
        out
    }

    fn for_chunks<R: Send>(&self, f: impl Fn(usize) -> Result<R> + Sync + Send, mut sink: impl FnMut(usize, R)) -> Result<()> {
        let ne = self.mesh.num_elements();
        let mut start = 0;
        while start < ne {
            let end = (start + CHUNK).min(ne);
            let batch: Vec<Result<R>> = match self.mode {
                AssemblyMode::Parallel => (start..end).into_par_iter().map(&f).collect(),
                AssemblyMode::Serial => (start..end).map(&f).collect(),
            };
            for (k, r) in batch.into_iter().enumerate() {
                sink(start + k, r?);
            }
            start = end;
        }
        Ok(())
    }

    /// `R_m` and `R_p` at the stage state, tractions evaluated at `t`.
    pub fn residuals(&self, st: &StageState, t: f64) -> Result<Residuals> {
        let nn = self.n_nodes();
        let mut r_m = vec![0.0; 3 * nn];
        let mut r_p = vec![0.0; nn];
        self.for_chunks(
            |e| {
                let ev = ElementVars::gather(st, &self.mesh.tets[e]);
                with_element(e, element_residual(&self.geometry[e], self.stab.tau[e], &self.material, &self.loads.body, &ev))
            },
            |e, (rm, rp)| {
                for (a, &n) in self.mesh.tets[e].iter().enumerate() {
                    for i in 0..3 {
                        r_m[3 * n + i] += rm[3 * a + i];
                    }
                    r_p[n] += rp[a];
                }
            },
        )?;
        for (r, h) in r_m.iter_mut().zip(self.traction_vector(t)) {
            *r -= h;
        }
        Ok(Residuals { r_m, r_p })
    }

    fn element_tangent(
        &self,
        e: usize,
        st: &StageState,
        k: &TangentCoefficients,
        direction: Option<&[f64]>,
    ) -> Result<ElementTangent> {
        let tet = &self.mesh.tets[e];
        let base = ElementVars::gather(st, tet);
        let mut ev: ElementVars<Dual<NDIR>> = base.lift();
        let (wa, wv, wu) = (k.alpha_m, k.value_weight(), k.displacement_weight());
        for m in 0..12 {
            ev.vdot[m].eps[m] = wa;
            ev.v[m].eps[m] = wv;
            ev.u[m].eps[m] = wu;
        }
        for a in 0..4 {
            ev.pdot[a].eps[12 + a] = wa;
            ev.p[a].eps[12 + a] = wv;
        }
        if let Some(dir) = direction {
            let d = gather3(dir, tet);
            for m in 0..12 {
                ev.u[m].eps[16] = d[m];
            }
        }
        let (rm, rp) = element_residual(&self.geometry[e], self.stab.tau[e], &self.material, &self.loads.body, &ev)
            .map_err(|err| match err {
                Error::ElementInversion { jacobian, .. } => Error::ElementInversion { element: e, jacobian },
                other => other,
            })?;
        let mut out = ElementTangent {
            a: [[0.0; 12]; 12],
            b: [[0.0; 4]; 12],
            c: [[0.0; 12]; 4],
            d: [[0.0; 4]; 4],
            rm: rm.map(|x| x.re),
            rp: rp.map(|x| x.re),
            du_m: rm.map(|x| x.eps[16]),
            du_p: rp.map(|x| x.eps[16]),
        };
        for r in 0..12 {
            out.a[r].copy_from_slice(&rm[r].eps[..12]);
            out.b[r].copy_from_slice(&rm[r].eps[12..16]);
        }
        for r in 0..4 {
            out.c[r].copy_from_slice(&rp[r].eps[..12]);
            out.d[r].copy_from_slice(&rp[r].eps[12..16]);
        }
        Ok(out)
    }

    /// Reduced blocks `A`, `B`, `C`, `D` at the stage state. With
    /// `direction = Some(w)` the products `∂R/∂u · w` are returned as well.
    pub fn tangent(
        &self,
        st: &StageState,
        t: f64,
        k: &TangentCoefficients,
        direction: Option<&[f64]>,
    ) -> Result<Tangent> {
        let nn = self.n_nodes();
        let mut a = self.patterns.a.clone();
        let mut b = self.patterns.b.clone();
        let mut c = self.patterns.c.clone();
        let mut d = self.patterns.d.clone();
        let mut r_m = vec![0.0; 3 * nn];
        let mut r_p = vec![0.0; nn];
        let mut du_m = vec![0.0; 3 * nn];
        let mut du_p = vec![0.0; nn];
        let dofs = &self.dofs;
        self.for_chunks(
            |e| self.element_tangent(e, st, k, direction),
            |e, et| {
                let tet = &self.mesh.tets[e];
                let vfree: [usize; 12] = std::array::from_fn(|m| {
                    dofs.free_index(3 * tet[m / 3] + m % 3).unwrap_or(usize::MAX)
                });
                for (la, &n) in tet.iter().enumerate() {
                    for i in 0..3 {
                        r_m[3 * n + i] += et.rm[3 * la + i];
                        du_m[3 * n + i] += et.du_m[3 * la + i];
                    }
                    r_p[n] += et.rp[la];
                    du_p[n] += et.du_p[la];
                }
                for r in 0..12 {
                    let fr = vfree[r];
                    if fr == usize::MAX {
                        continue;
                    }
                    for col in 0..12 {
                        let fc = vfree[col];
                        if fc != usize::MAX {
                            let pos = a.position(fr, fc).expect("velocity pattern");
                            a.values_mut()[pos] += et.a[r][col];
                        }
                    }
                    for (lb, &n) in tet.iter().enumerate() {
                        let pos = b.position(fr, n).expect("gradient pattern");
                        b.values_mut()[pos] += et.b[r][lb];
                    }
                }
                for (la, &n) in tet.iter().enumerate() {
                    for col in 0..12 {
                        let fc = vfree[col];
                        if fc != usize::MAX {
                            let pos = c.position(n, fc).expect("divergence pattern");
                            c.values_mut()[pos] += et.c[la][col];
                        }
                    }
                    for (lb, &m) in tet.iter().enumerate() {
                        let pos = d.position(n, m).expect("pressure pattern");
                        d.values_mut()[pos] += et.d[la][lb];
                    }
                }
            },
        )?;
        for (r, h) in r_m.iter_mut().zip(self.traction_vector(t)) {
            *r -= h;
        }
        Ok(Tangent { a, b, c, d, residuals: Residuals { r_m, r_p }, du_m, du_p })
    }

    /// All unweighted partial derivatives over unconstrained numbering.
    /// Intended for verification on small meshes.
    pub fn partials(&self, st: &StageState) -> Result<Partials> {
        let nn = self.n_nodes();
        let (n3, n1) = (3 * nn, nn);
        // Seeds: u 0..12, p 12..16, v 16..28, pdot 28..32, vdot 32..44.
        let mut trip: [Vec<(usize, usize, f64)>; 10] = Default::default();
        for e in 0..self.mesh.num_elements() {
            let tet = &self.mesh.tets[e];
            let mut ev: ElementVars<Dual<44>> = ElementVars::gather(st, tet).lift();
            for m in 0..12 {
                ev.u[m].eps[m] = 1.0;
                ev.v[m].eps[16 + m] = 1.0;
                ev.vdot[m].eps[32 + m] = 1.0;
            }
            for a in 0..4 {
                ev.p[a].eps[12 + a] = 1.0;
                ev.pdot[a].eps[28 + a] = 1.0;
            }
            let (rm, rp) = element_residual(&self.geometry[e], self.stab.tau[e], &self.material, &self.loads.body, &ev)
                .map_err(|err| match err {
                    Error::ElementInversion { jacobian, .. } => Error::ElementInversion { element: e, jacobian },
                    other => other,
                })?;
            let vec_col = |m: usize| 3 * tet[m / 3] + m % 3;
            for (rows, row_of, base) in [(&rm[..], 0usize, 0usize), (&rp[..], 1, 5)] {
                for (r, val) in rows.iter().enumerate() {
                    let gr = if row_of == 0 { vec_col(r) } else { tet[r] };
                    for m in 0..12 {
                        trip[base].push((gr, vec_col(m), val.eps[m]));
                        trip[base + 2].push((gr, vec_col(m), val.eps[16 + m]));
                        trip[base + 4].push((gr, vec_col(m), val.eps[32 + m]));
                    }
                    for a in 0..4 {
                        trip[base + 1].push((gr, tet[a], val.eps[12 + a]));
                        trip[base + 3].push((gr, tet[a], val.eps[28 + a]));
                    }
                }
            }
        }
        let mk = |t: &Vec<(usize, usize, f64)>, r: usize, c: usize| CsrMatrix::from_triplets(r, c, t);
        Ok(Partials {
            m_u: mk(&trip[0], n3, n3),
            m_p: mk(&trip[1], n3, n1),
            m_v: mk(&trip[2], n3, n3),
            m_pdot: mk(&trip[3], n3, n1),
            m_vdot: mk(&trip[4], n3, n3),
            p_u: mk(&trip[5], n1, n3),
            p_p: mk(&trip[6], n1, n1),
            p_v: mk(&trip[7], n1, n3),
            p_pdot: mk(&trip[8], n1, n1),
            p_vdot: mk(&trip[9], n1, n3),
        })
    }

    /// `∫ J ρ N_A N_B δ_ij` over the free velocity unknowns.
    pub fn mass_matrix(&self, st: &StageState) -> Result<CsrMatrix> {
        let mut m = self.patterns.a.clone();
        for (e, tet) in self.mesh.tets.iter().enumerate() {
            let geo = &self.geometry[e];
            let u = gather3(&st.u, tet);
            let p = gather1(&st.p, tet);
            let mut f: Mat3<f64> = tensor::identity();
            for a in 0..4 {
                for i in 0..3 {
                    for k in 0..3 {
                        f[i][k] += u[3 * a + i] * geo.grads[a][k];
                    }
                }
            }
            let j = tensor::det(&f);
            if !(j > 0.0) {
                return Err(Error::ElementInversion { element: e, jacobian: j });
            }
            let mut local = [[0.0; 4]; 4];
            for q in 0..4 {
                let n = shape_at(q);
                let pq: f64 = (0..4).map(|a| n[a] * p[a]).sum();
                let rho = self.material.volumetric(pq).rho;
                for a in 0..4 {
                    for b in 0..4 {
                        local[a][b] += j * rho * n[a] * n[b] * geo.volume / 4.0;
                    }
                }
            }
            for a in 0..4 {
                for b in 0..4 {
                    for i in 0..3 {
                        let (Some(r), Some(c)) =
                            (self.dofs.free_index(3 * tet[a] + i), self.dofs.free_index(3 * tet[b] + i))
                        else {
                            continue;
                        };
                        let pos = m.position(r, c).expect("velocity pattern");
                        m.values_mut()[pos] += local[a][b];
                    }
                }
            }
        }
        Ok(m)
    }
}

fn build_patterns(mesh: &Mesh, dofs: &DofMap) -> Patterns {
    let nn = mesh.num_nodes();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nn];
    for tet in &mesh.tets {
        for &a in tet {
            adj[a].extend_from_slice(tet);
        }
    }
    for row in adj.iter_mut() {
        row.sort_unstable();
        row.dedup();
    }
    let nf = dofs.n_free();
    let (mut a_ptr, mut a_col) = (vec![0], Vec::new());
    let (mut b_ptr, mut b_col) = (vec![0], Vec::new());
    for &g in dofs.free_dofs() {
        let node = g / 3;
        for &m in &adj[node] {
            for j in 0..3 {
                if let Some(f) = dofs.free_index(3 * m + j) {
                    a_col.push(f);
                }
            }
            b_col.push(m);
        }
        a_ptr.push(a_col.len());
        b_ptr.push(b_col.len());
    }
    let (mut c_ptr, mut c_col) = (vec![0], Vec::new());
    let (mut d_ptr, mut d_col) = (vec![0], Vec::new());
    for row in &adj {
        for &m in row {
            for j in 0..3 {
                if let Some(f) = dofs.free_index(3 * m + j) {
                    c_col.push(f);
                }
            }
            d_col.push(m);
        }
        c_ptr.push(c_col.len());
        d_ptr.push(d_col.len());
    }
    let mk = |r, c, ptr: Vec<usize>, col: Vec<usize>| {
        let nz = col.len();
        CsrMatrix::new(r, c, ptr, col, vec![0.0; nz]).expect("sorted FE pattern")
    };
    Patterns {
        a: mk(nf, nf, a_ptr, a_col),
        b: mk(nf, nn, b_ptr, b_col),
        c: mk(nn, nf, c_ptr, c_col),
        d: mk(nn, nn, d_ptr, d_col),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::MPA;
    use crate::mesh::generate_cube_mesh;

    fn nh() -> Material {
        Material::neo_hookean(1.0, 80.194 * MPA, 400889.806 * MPA).unwrap()
    }

    #[test]
    fn tau_formula_and_scaling() {
        let mut mesh = generate_cube_mesh(1, 0.1).unwrap();
        mesh.element_diameters.iter_mut().for_each(|h| *h = 0.1);
        let mut m = Material::goh(1.0, 4.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let st = compute_tau(&mesh, &m, 1e-3);
        assert!(st.tau.iter().all(|&t| (t - 5e-5).abs() < 1e-18));
        mesh.element_diameters.iter_mut().for_each(|h| *h = 0.05);
        assert!(compute_tau(&mesh, &m, 1e-3).tau.iter().all(|&t| (t - 2.5e-5).abs() < 1e-18));
        m.params.rho0 = 4.0;
        let c = m.wave_speed();
        assert!((c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_state_and_rigid_translation_have_zero_residual() {
        let mesh = generate_cube_mesh(2, 0.1).unwrap();
        let prob = Problem::new(mesh, nh(), Loads::default(), &[], 1e-3).unwrap();
        let mut st = StageState::zeros(prob.n_nodes());
        let r = prob.residuals(&st, 0.0).unwrap();
        assert!(r.r_m.iter().chain(&r.r_p).all(|&x| x == 0.0));
        for n in 0..prob.n_nodes() {
            st.u[3 * n] = 0.01;
            st.u[3 * n + 1] = -0.02;
            st.u[3 * n + 2] = 0.005;
        }
        let r = prob.residuals(&st, 0.0).unwrap();
        let scale = 80.194 * MPA * 1e-2;
        assert!(r.r_m.iter().chain(&r.r_p).all(|&x| x.abs() < 1e-12 * scale));
    }

    #[test]
    fn serial_and_parallel_assembly_agree_bitwise() {
        let mesh = generate_cube_mesh(3, 0.1).unwrap();
        let mut prob = Problem::new(mesh, nh(), Loads::default(), &[], 1e-3).unwrap();
        let mut st = StageState::zeros(prob.n_nodes());
        for (i, u) in st.u.iter_mut().enumerate() {
            *u = 1e-4 * ((i as f64) * 0.7).sin();
        }
        for (i, p) in st.p.iter_mut().enumerate() {
            *p = 1e6 * ((i as f64) * 1.3).cos();
        }
        let k = TangentCoefficients { alpha_m: 5.0 / 6.0, alpha_f: 2.0 / 3.0, gamma: 2.0 / 3.0, dt: 1e-3 };
        let t1 = prob.tangent(&st, 0.0, &k, None).unwrap();
        prob.mode = AssemblyMode::Serial;
        let t2 = prob.tangent(&st, 0.0, &k, None).unwrap();
        assert_eq!(t1.a, t2.a);
        assert_eq!(t1.b, t2.b);
        assert_eq!(t1.c, t2.c);
        assert_eq!(t1.d, t2.d);
        assert_eq!(t1.residuals, t2.residuals);
    }

    #[test]
    fn inverted_element_is_reported() {
        let mesh = generate_cube_mesh(1, 0.1).unwrap();
        let prob = Problem::new(mesh, nh(), Loads::default(), &[], 1e-3).unwrap();
        let mut st = StageState::zeros(prob.n_nodes());
        for n in 0..prob.n_nodes() {
            st.u[3 * n + 2] = -2.0 * prob.mesh.nodes[n][2];
        }
        assert!(matches!(prob.residuals(&st, 0.0), Err(Error::ElementInversion { .. })));
    }

    #[test]
    fn incompressible_pressure_block_is_pure_stabilisation() {
        let mesh = generate_cube_mesh(1, 0.1).unwrap();
        let m = Material::goh(1.0, 7.64e4, 9.966e6, 524.6, 0.1, 40.0).unwrap();
        let prob = Problem::new(mesh, m, Loads::default(), &[], 1e-3).unwrap();
        let st = StageState::zeros(prob.n_nodes());
        let k = TangentCoefficients { alpha_m: 5.0 / 6.0, alpha_f: 2.0 / 3.0, gamma: 2.0 / 3.0, dt: 1e-2 };
        let t = prob.tangent(&st, 0.0, &k, None).unwrap();
        // Expected D = α_f γ Δt Σ_e τ_e V_e ∇N_A·∇N_B at the undeformed state.
        let mut expect = vec![vec![0.0; prob.n_nodes()]; prob.n_nodes()];
        for (e, tet) in prob.mesh.tets.iter().enumerate() {
            let g = prob.mesh.geometry(e);
            for a in 0..4 {
                for b in 0..4 {
                    expect[tet[a]][tet[b]] +=
                        k.value_weight() * prob.stab.tau[e] * g.volume * tensor::dot3(&g.grads[a], &g.grads[b]);
                }
            }
        }
        let d = t.d.to_dense();
        for i in 0..prob.n_nodes() {
            for j in 0..prob.n_nodes() {
                assert!((d[i][j] - expect[i][j]).abs() <= 1e-12 * expect[i][i].abs());
            }
        }
    }
}
