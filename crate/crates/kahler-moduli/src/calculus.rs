//! Discrete Dolbeault calculus on the quotient surface.
//!
//! Sections of `K^j ⊗ V` are continuous piecewise-linear on the fundamental
//! domain; boundary vertices in one pairing orbit share a degree of freedom
//! and are related by the automorphy factor `γ'(z)^j` and the holonomy.
//! One-forms are piecewise constant per triangle. The hyperbolic metric
//! enters only through the diagonal mass weights.

use crate::bundle::{CMat, Fiber, HolonomyAction, UnitaryRep};
use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky, SpMat, Triplets, ZERO};
use crate::surface::{FuchsianGroup, SurfaceMesh};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Form degree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Degree {
    Function,
    /// `a dz`
    Form10,
    /// `a dz̄`
    Form01,
    /// `a dz̄ ⊗ dz̄`, the type of `tr(ν⊗ν)`
    Form02,
}

/// Coefficient bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coeff {
    Trivial,
    Fundamental,
    EndE,
    AdE,
    /// Tangent bundle; (0,1)-forms of this kind are Beltrami differentials.
    TX,
    /// Quadratic differentials.
    K2,
}

impl Coeff {
    /// Power of the canonical bundle.
    pub fn weight(self) -> i32 {
        match self {
            Coeff::TX => -1,
            Coeff::K2 => 2,
            _ => 0,
        }
    }

    pub fn fiber(self) -> Fiber {
        match self {
            Coeff::Fundamental => Fiber::Fundamental,
            Coeff::EndE => Fiber::EndE,
            Coeff::AdE => Fiber::AdE,
            _ => Fiber::Trivial,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FormKind {
    pub degree: Degree,
    pub coeff: Coeff,
}

impl FormKind {
    pub const fn new(degree: Degree, coeff: Coeff) -> Self {
        Self { degree, coeff }
    }
    pub const fn function(coeff: Coeff) -> Self {
        Self::new(Degree::Function, coeff)
    }
    pub const fn form01(coeff: Coeff) -> Self {
        Self::new(Degree::Form01, coeff)
    }
    pub const fn form10(coeff: Coeff) -> Self {
        Self::new(Degree::Form10, coeff)
    }
    pub fn is_section(&self) -> bool {
        self.degree == Degree::Function
    }
    /// Beltrami differentials.
    pub const BELTRAMI: FormKind = FormKind::new(Degree::Form01, Coeff::TX);
}

/// Reduced-coordinate field with its kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub kind: FormKind,
    pub values: Vec<C64>,
}

impl Field {
    pub fn zeros(kind: FormKind, len: usize) -> Self {
        Self { kind, values: vec![ZERO; len] }
    }

    pub fn scale(&self, s: C64) -> Field {
        Field { kind: self.kind, values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn axpy(&self, s: C64, other: &Field) -> Result<Field> {
        same_kind(self.kind, other.kind)?;
        Ok(Field { kind: self.kind, values: self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect() })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

pub fn same_kind(a: FormKind, b: FormKind) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::kind_mismatch(a, b))
    }
}

/// Operator on reduced coordinates between two kinds.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub name: String,
    pub matrix: SpMat,
    pub domain: FormKind,
    pub codomain: FormKind,
    pub is_adjoint: bool,
    /// Hermitian stiffness `K` with `matrix = M⁻¹K`, for Laplacians.
    pub stiffness: Option<SpMat>,
    original: Option<Arc<DiscreteOperator>>,
}

impl DiscreteOperator {
    pub fn new(name: impl Into<String>, matrix: SpMat, domain: FormKind, codomain: FormKind) -> Self {
        Self { name: name.into(), matrix, domain, codomain, is_adjoint: false, stiffness: None, original: None }
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        same_kind(self.domain, f.kind)?;
        Ok(Field { kind: self.codomain, values: self.matrix.mul_vec(&f.values) })
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &DiscreteOperator) -> Result<DiscreteOperator> {
        same_kind(self.domain, other.codomain)?;
        Ok(DiscreteOperator::new(
            format!("{}∘{}", self.name, other.name),
            self.matrix.matmul(&other.matrix),
            other.domain,
            self.codomain,
        ))
    }

    pub fn add(&self, other: &DiscreteOperator, s: C64) -> Result<DiscreteOperator> {
        same_kind(self.domain, other.domain)?;
        same_kind(self.codomain, other.codomain)?;
        Ok(DiscreteOperator::new(format!("{}+{}", self.name, other.name), self.matrix.add(&other.matrix, s), self.domain, self.codomain))
    }

    pub fn scale(&self, s: C64) -> DiscreteOperator {
        DiscreteOperator::new(format!("{s}·{}", self.name), self.matrix.scale(s), self.domain, self.codomain)
    }
}

/// Operators available through [`Discretization::assemble`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OperatorName {
    Dbar,
    Partial,
    Star,
    Mass,
    Laplacian,
    ShiftedLaplacian(f64),
}

/// Solver settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SolverConfig {
    /// Above this many unknowns the iterative solver is used.
    pub direct_threshold: usize,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { direct_threshold: 20_000, rel_tol: 1e-9, max_iter: 20_000 }
    }
}

enum Solver {
    Direct(Cholesky),
    Iterative(SpMat),
}

/// Mesh, group and representation with cached operators.
pub struct Discretization {
    pub group: FuchsianGroup,
    pub mesh: SurfaceMesh,
    pub rep: UnitaryRep,
    pub solver: SolverConfig,
    /// Orbit representatives in ascending order.
    pub reps: Vec<usize>,
    /// Reduced index of every vertex's representative.
    pub red_index: Vec<usize>,
    /// Holonomy image of each vertex's `to_rep` element.
    vertex_rho: Vec<CMat>,
    /// Derivative of each vertex's `to_rep` element at the vertex.
    vertex_dgamma: Vec<C64>,
    actions: HashMap<Fiber, HolonomyAction>,
    cache: Mutex<HashMap<String, Arc<SpMat>>>,
    solvers: Mutex<HashMap<String, Arc<(Solver, Vec<Vec<C64>>)>>>,
}

impl Discretization {
    pub fn new(group: FuchsianGroup, mesh: SurfaceMesh, rep: UnitaryRep) -> Self {
        let reps = mesh.rep_vertices();
        let mut pos = vec![usize::MAX; mesh.num_vertices()];
        for (i, &r) in reps.iter().enumerate() {
            pos[r] = i;
        }
        let red_index = mesh.orbits.iter().map(|o| pos[o.rep]).collect();
        let vertex_rho = mesh.orbits.iter().map(|o| rep.word(&o.word)).collect();
        let vertex_dgamma = mesh.orbits.iter().zip(&mesh.vertices).map(|(o, &z)| o.to_rep.derivative(z)).collect();
        let actions = [Fiber::Trivial, Fiber::Fundamental, Fiber::EndE, Fiber::AdE]
            .into_iter()
            .map(|f| (f, HolonomyAction::new(f, rep.n)))
            .collect();
        Self {
            group,
            mesh,
            rep,
            solver: SolverConfig::default(),
            reps,
            red_index,
            vertex_rho,
            vertex_dgamma,
            actions,
            cache: Mutex::new(HashMap::new()),
            solvers: Mutex::new(HashMap::new()),
        }
    }

    /// Octagon surface at `level` with a random rank-`n` representation.
    pub fn bolza(level: usize, n: usize, seed: u64) -> Result<Self> {
        let group = crate::surface::bolza_group();
        let mesh = crate::surface::mesh_fundamental_domain(&group, level)?;
        let rep = crate::bundle::random_unitary_rep(&group, n, 0, seed)?;
        Ok(Self::new(group, mesh, rep))
    }

    pub fn action(&self, coeff: Coeff) -> &HolonomyAction {
        &self.actions[&coeff.fiber()]
    }

    pub fn fiber_dim(&self, coeff: Coeff) -> usize {
        self.action(coeff).dim()
    }

    pub fn num_reduced_vertices(&self) -> usize {
        self.reps.len()
    }

    /// Number of reduced unknowns of a kind.
    pub fn dof(&self, kind: FormKind) -> usize {
        let d = self.fiber_dim(kind.coeff);
        match kind.degree {
            Degree::Function => self.reps.len() * d,
            _ => self.mesh.num_triangles() * d,
        }
    }

    pub fn zeros(&self, kind: FormKind) -> Field {
        Field::zeros(kind, self.dof(kind))
    }

    /// Standard complex Gaussian field.
    pub fn random_field<R: Rng>(&self, kind: FormKind, rng: &mut R) -> Field {
        let values = (0..self.dof(kind))
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re, im)
            })
            .collect();
        Field { kind, values }
    }

    /// Value map from the representative of `v` to `v`:
    /// `γ'(v)^j ρ(γ)⁻¹` with `γ` mapping `v` onto its representative.
    pub fn transport(&self, v: usize, coeff: Coeff) -> CMat {
        let act = self.action(coeff);
        let rho = act.matrix(&self.vertex_rho[v]).adjoint();
        rho * self.vertex_dgamma[v].powi(coeff.weight())
    }

    fn cached(&self, key: String, build: impl FnOnce() -> SpMat) -> Arc<SpMat> {
        if let Some(m) = self.cache.lock().unwrap().get(&key) {
            return m.clone();
        }
        let m = Arc::new(build());
        self.cache.lock().unwrap().insert(key, m.clone());
        m
    }

    /// Expansion from reduced section coordinates to all mesh vertices.
    pub fn expansion(&self, coeff: Coeff) -> Arc<SpMat> {
        self.cached(format!("Q{coeff:?}"), || {
            let d = self.fiber_dim(coeff);
            let nv = self.mesh.num_vertices();
            let mut t = Triplets::new(nv * d, self.reps.len() * d);
            for v in 0..nv {
                t.push_block(v * d, self.red_index[v] * d, &self.transport(v, coeff));
            }
            t.build()
        })
    }

    /// Diagonal mass weights of a kind.
    pub fn mass(&self, kind: FormKind) -> Arc<Vec<f64>> {
        let key = format!("M{kind:?}");
        if let Some(m) = self.cache.lock().unwrap().get(&key) {
            return Arc::new(m.data.iter().map(|v| v.re).collect());
        }
        let d = self.fiber_dim(kind.coeff);
        let j = kind.coeff.weight() as f64;
        let mesh = &self.mesh;
        let w: Vec<f64> = match kind.degree {
            Degree::Function => {
                let mut full = vec![0.0; mesh.num_vertices()];
                for (t, tri) in mesh.triangles.iter().enumerate() {
                    let m = mesh.tri_density[t].powf(1.0 - j) * mesh.tri_area[t] / 3.0;
                    for &v in tri {
                        full[v] += m;
                    }
                }
                // Qᴴ diag(full) Q is diagonal: |γ'|^{2j} times a unitary fiber map
                let mut red = vec![0.0; self.reps.len()];
                for v in 0..mesh.num_vertices() {
                    red[self.red_index[v]] += full[v] * self.vertex_dgamma[v].norm().powf(2.0 * j);
                }
                red.iter().flat_map(|&m| std::iter::repeat(m).take(d)).collect()
            }
            Degree::Form10 | Degree::Form01 => (0..mesh.num_triangles())
                .flat_map(|t| std::iter::repeat(2.0 * mesh.tri_area[t] * mesh.tri_density[t].powf(-j)).take(d))
                .collect(),
            Degree::Form02 => (0..mesh.num_triangles())
                .flat_map(|t| std::iter::repeat(2.0 * mesh.tri_area[t] * mesh.tri_density[t].powf(-1.0 - j)).take(d))
                .collect(),
        };
        let diag = SpMat::diag(&w.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>());
        self.cache.lock().unwrap().insert(key, Arc::new(diag));
        Arc::new(w)
    }

    /// `⟨f, g⟩` in the mass-weighted pairing.
    pub fn inner(&self, f: &Field, g: &Field) -> Result<C64> {
        same_kind(f.kind, g.kind)?;
        Ok(linalg::wdot(&f.values, &g.values, &self.mass(f.kind)))
    }

    pub fn norm(&self, f: &Field) -> f64 {
        self.inner(f, f).map(|v| v.re.max(0.0).sqrt()).unwrap_or(f64::NAN)
    }

    /// Full-mesh ∂̄ (or ∂ when `holomorphic` is false) of P1 vertex values.
    fn full_derivative(&self, coeff: Coeff, antiholomorphic: bool) -> SpMat {
        let d = self.fiber_dim(coeff);
        let mesh = &self.mesh;
        let j = coeff.weight();
        let mut t = Triplets::new(mesh.num_triangles() * d, mesh.num_vertices() * d);
        for (ti, &[a, b, c]) in mesh.triangles.iter().enumerate() {
            let area = mesh.tri_area[ti];
            for (p, q, r) in [(a, b, c), (b, c, a), (c, a, b)] {
                // ∂_z̄ φ_p = i(z_r − z_q)/(4A); ∂_z φ_p is its conjugate
                let dz = C64::i() * (mesh.vertices[r] - mesh.vertices[q]) / (4.0 * area);
                let mut w = if antiholomorphic { dz } else { dz.conj() };
                if !antiholomorphic && j != 0 {
                    // Chern connection λ^j ∂(λ^{−j} s)
                    w *= (mesh.tri_density[ti] / mesh.density[p]).powi(j);
                }
                for f in 0..d {
                    t.push(ti * d + f, p * d + f, w);
                }
            }
        }
        t.build()
    }

    fn derivative_op(&self, section: FormKind, antiholomorphic: bool) -> Result<DiscreteOperator> {
        if !section.is_section() {
            return Err(Error::kind_mismatch(FormKind::function(section.coeff), section));
        }
        let tag = if antiholomorphic { "dbar" } else { "partial" };
        let m = self.cached(format!("{tag}{:?}", section.coeff), || {
            self.full_derivative(section.coeff, antiholomorphic).matmul(&self.expansion(section.coeff))
        });
        let cod = if antiholomorphic { FormKind::form01(section.coeff) } else { FormKind::form10(section.coeff) };
        Ok(DiscreteOperator::new(tag, (*m).clone(), section, cod))
    }

    /// ∂̄ on sections.
    pub fn dbar(&self, section: FormKind) -> Result<DiscreteOperator> {
        self.derivative_op(section, true)
    }

    /// ∂ on sections (Chern connection of the hyperbolic metric for j ≠ 0).
    pub fn partial(&self, section: FormKind) -> Result<DiscreteOperator> {
        self.derivative_op(section, false)
    }

    /// Hodge star on one-forms: `+i` on (0,1), `−i` on (1,0).
    pub fn star(&self, form: FormKind) -> Result<DiscreteOperator> {
        let s = match form.degree {
            Degree::Form01 => C64::i(),
            Degree::Form10 => -C64::i(),
            _ => return Err(Error::kind_mismatch(FormKind::form01(form.coeff), form)),
        };
        let n = self.dof(form);
        Ok(DiscreteOperator::new("star", SpMat::identity(n).scale(s), form, form))
    }

    /// Mass-weighted adjoint `M_dom⁻¹ Aᴴ M_cod`; the adjoint of an adjoint is
    /// the stored original.
    pub fn adjoint(&self, op: &DiscreteOperator) -> DiscreteOperator {
        if let Some(orig) = &op.original {
            return (**orig).clone();
        }
        let md = self.mass(op.domain);
        let mc = self.mass(op.codomain);
        let inv: Vec<f64> = md.iter().map(|m| 1.0 / m).collect();
        let matrix = op.matrix.adjoint().scale_rows_cols(Some(&inv), Some(&mc));
        DiscreteOperator {
            name: format!("{}*", op.name),
            matrix,
            domain: op.codomain,
            codomain: op.domain,
            is_adjoint: !op.is_adjoint,
            stiffness: op.stiffness.clone(),
            original: Some(Arc::new(op.clone())),
        }
    }

    /// Hermitian stiffness `Dᴴ M₁ D` of ∂̄*∂̄ on sections.
    pub fn stiffness(&self, section: FormKind) -> Result<Arc<SpMat>> {
        let d = self.dbar(section)?;
        let m1 = self.mass(d.codomain);
        Ok(self.cached(format!("K{:?}", section.coeff), || d.matrix.adjoint().matmul(&d.matrix.scale_rows_cols(Some(&m1), None))))
    }

    /// `∂̄*∂̄` on sections; on one-forms the Hodge Laplacian `∂̄∂̄*` (resp. `∂∂*`).
    pub fn laplacian(&self, kind: FormKind) -> Result<DiscreteOperator> {
        match kind.degree {
            Degree::Function => {
                let k = self.stiffness(kind)?;
                let m0 = self.mass(kind);
                let inv: Vec<f64> = m0.iter().map(|m| 1.0 / m).collect();
                let mut op = DiscreteOperator::new("laplacian", k.scale_rows_cols(Some(&inv), None), kind, kind);
                op.stiffness = Some((*k).clone());
                Ok(op)
            }
            Degree::Form01 | Degree::Form10 => {
                let sec = FormKind::function(kind.coeff);
                let d = if kind.degree == Degree::Form01 { self.dbar(sec)? } else { self.partial(sec)? };
                let mut op = d.compose(&self.adjoint(&d))?;
                op.name = "hodge_laplacian".into();
                Ok(op)
            }
            Degree::Form02 => Err(Error::kind_mismatch(FormKind::form01(kind.coeff), kind)),
        }
    }

    pub fn assemble(&self, which: OperatorName, kind: FormKind) -> Result<DiscreteOperator> {
        match which {
            OperatorName::Dbar => self.dbar(kind),
            OperatorName::Partial => self.partial(kind),
            OperatorName::Star => self.star(kind),
            OperatorName::Mass => {
                let m = self.mass(kind);
                Ok(DiscreteOperator::new("mass", SpMat::diag(&m.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>()), kind, kind))
            }
            OperatorName::Laplacian => self.laplacian(kind),
            OperatorName::ShiftedLaplacian(c) => {
                let mut l = self.laplacian(kind)?;
                l.matrix = l.matrix.add(&SpMat::identity(l.matrix.nrows), C64::new(c, 0.0));
                if let Some(k) = &l.stiffness {
                    let m = self.mass(kind);
                    l.stiffness = Some(k.add(&SpMat::diag(&m.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>()), C64::new(c, 0.0)));
                }
                l.name = format!("laplacian+{c}");
                Ok(l)
            }
        }
    }

    /// Mass-orthonormal basis of flat sections (the kernel of ∂̄ on sections
    /// of weight 0): constant sections with holonomy-invariant values.
    pub fn flat_sections(&self, coeff: Coeff) -> Vec<Field> {
        let kind = FormKind::function(coeff);
        if coeff.weight() != 0 {
            return Vec::new();
        }
        let act = self.action(coeff);
        let d = act.dim();
        let mut acc = CMat::zeros(d, d);
        for u in &self.rep.images {
            let r = CMat::identity(d, d) - act.matrix(u);
            acc += r.adjoint() * r;
        }
        let (vals, vecs) = linalg::hermitian_eigh(&acc);
        let mut out = Vec::new();
        for (k, &l) in vals.iter().enumerate() {
            if l.abs() > 1e-10 {
                continue;
            }
            let c: Vec<C64> = vecs.column(k).iter().copied().collect();
            let values: Vec<C64> = (0..self.reps.len()).flat_map(|_| c.iter().copied()).collect();
            let f = Field { kind, values };
            let nrm = self.norm(&f);
            out.push(f.scale(C64::new(1.0 / nrm, 0.0)));
        }
        out
    }

    /// Removes the mass-orthogonal projection onto `basis`.
    pub fn project_out(&self, f: &Field, basis: &[Field]) -> Result<Field> {
        let mut out = f.clone();
        for b in basis {
            let c = self.inner(&out, b)?;
            out = out.axpy(-c, b)?;
        }
        Ok(out)
    }

    /// Solves `(L + shift) u = f` for `L = ∂̄*∂̄` on sections of the kind of
    /// `lap`. With zero shift the kernel (flat sections) is projected off the
    /// right-hand side and the solution is returned orthogonal to it.
    pub fn green_apply(&self, lap: &DiscreteOperator, f: &Field, shift: f64) -> Result<Field> {
        let kind = lap.domain;
        same_kind(kind, f.kind)?;
        if !kind.is_section() || shift < 0.0 {
            return Err(Error::kind_mismatch(FormKind::function(kind.coeff), kind));
        }
        let key = format!("G{:?}{shift:e}", kind.coeff);
        let entry = {
            let cached = self.solvers.lock().unwrap().get(&key).cloned();
            match cached {
                Some(e) => e,
                None => {
                    let e = Arc::new(self.build_solver(kind, shift)?);
                    self.solvers.lock().unwrap().insert(key, e.clone());
                    e
                }
            }
        };
        let (solver, kernel) = &*entry;
        let kernel: Vec<Field> = kernel.iter().map(|v| Field { kind, values: v.clone() }).collect();
        let fp = self.project_out(f, &kernel)?;
        let m = self.mass(kind);
        let k = self.stiffness(kind)?;
        let apply_a = |u: &[C64]| -> Vec<C64> {
            let mut y = k.mul_vec(u);
            if shift > 0.0 {
                y.iter_mut().zip(u).zip(m.iter()).for_each(|((yi, ui), mi)| *yi += ui * (shift * mi));
            }
            y
        };
        let b: Vec<C64> = fp.values.iter().zip(m.iter()).map(|(v, mi)| v * mi).collect();
        let bn = linalg::norm(&b);
        let full: f64 = f.values.iter().zip(m.iter()).map(|(v, mi)| (v * mi).norm_sqr()).sum::<f64>().sqrt();
        // right-hand sides inside the kernel leave only round-off
        if bn <= 1e-13 * full || bn == 0.0 {
            return Ok(self.zeros(kind));
        }
        let mut u = match solver {
            Solver::Direct(ch) => ch.solve(&b),
            Solver::Iterative(a) => {
                let (x, it, rel) = linalg::pcg(a, &b, self.solver.rel_tol * 1e-2, self.solver.max_iter);
                if rel > self.solver.rel_tol {
                    return Err(Error::SolverBreakdown { iterations: it, residual: rel });
                }
                x
            }
        };
        // iterative refinement against the unregularized operator
        let mut rel = f64::INFINITY;
        for it in 0..60 {
            let mut uf = Field { kind, values: u };
            uf = self.project_out(&uf, &kernel)?;
            u = uf.values;
            let r = linalg::sub(&b, &apply_a(&u));
            rel = linalg::norm(&r) / bn;
            if rel <= 1e-13 {
                break;
            }
            let du = match solver {
                Solver::Direct(ch) => ch.solve(&r),
                Solver::Iterative(a) => linalg::pcg(a, &r, 1e-12, self.solver.max_iter).0,
            };
            linalg::axpy(&mut u, C64::new(1.0, 0.0), &du);
            if it == 59 {
                break;
            }
        }
        if rel > self.solver.rel_tol {
            return Err(Error::SolverBreakdown { iterations: 60, residual: rel });
        }
        Ok(Field { kind, values: u })
    }

    fn build_solver(&self, kind: FormKind, shift: f64) -> Result<(Solver, Vec<Vec<C64>>)> {
        let k = self.stiffness(kind)?;
        let m = self.mass(kind);
        let kernel: Vec<Vec<C64>> = if shift == 0.0 { self.flat_sections(kind.coeff).into_iter().map(|f| f.values).collect() } else { Vec::new() };
        // regularize only when a kernel must be bypassed
        let reg = if kernel.is_empty() { shift } else { shift + 1e-3 };
        let a = if reg > 0.0 { k.add(&SpMat::diag(&m.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>()), C64::new(reg, 0.0)) } else { (*k).clone() };
        let solver = if a.nrows <= self.solver.direct_threshold {
            match Cholesky::factor(&a) {
                Ok(c) => Solver::Direct(c),
                Err(e) => return Err(Error::SingularAssembly(e.to_string())),
            }
        } else {
            Solver::Iterative(a)
        };
        Ok((solver, kernel))
    }

    /// Per-vertex values of a section on the whole fundamental domain.
    pub fn expand(&self, f: &Field) -> Result<Vec<C64>> {
        if !f.kind.is_section() {
            return Err(Error::kind_mismatch(FormKind::function(f.kind.coeff), f.kind));
        }
        Ok(self.expansion(f.kind.coeff).mul_vec(&f.values))
    }

    /// Largest violation of `s(γz) γ'(z)^j = ρ(γ) s(z)` over all pairings,
    /// evaluated on the expanded vertex values.
    pub fn equivariance_residual(&self, f: &Field) -> Result<f64> {
        let full = self.expand(f)?;
        let act = self.action(f.kind.coeff);
        let d = act.dim();
        let j = f.kind.coeff.weight();
        let mut worst: f64 = 0.0;
        for p in &self.mesh.pairings {
            let r = act.matrix(&self.rep.word(&p.word));
            for i in 0..2 {
                let (u, w) = (p.edge[i], p.partner[i]);
                let su = nalgebra::DVector::from_column_slice(&full[u * d..(u + 1) * d]);
                let sw = nalgebra::DVector::from_column_slice(&full[w * d..(w + 1) * d]);
                let lhs = sw * p.map.derivative(self.mesh.vertices[u]).powi(j);
                let rhs = &r * su;
                worst = worst.max((lhs - rhs).norm());
            }
        }
        Ok(worst)
    }

    /// Centroid averaging from reduced section coordinates to per-triangle
    /// values.
    pub fn centroid_matrix(&self, coeff: Coeff) -> Arc<SpMat> {
        self.cached(format!("C{coeff:?}"), || {
            let d = self.fiber_dim(coeff);
            let mut t = Triplets::new(self.mesh.num_triangles() * d, self.mesh.num_vertices() * d);
            for (ti, tri) in self.mesh.triangles.iter().enumerate() {
                for &v in tri {
                    for f in 0..d {
                        t.push(ti * d + f, v * d + f, C64::new(1.0 / 3.0, 0.0));
                    }
                }
            }
            t.build().matmul(&self.expansion(coeff))
        })
    }

    /// Per-triangle values of a section (centroid averages).
    pub fn section_on_triangles(&self, f: &Field) -> Result<Vec<C64>> {
        if !f.kind.is_section() {
            return Err(Error::kind_mismatch(FormKind::function(f.kind.coeff), f.kind));
        }
        Ok(self.centroid_matrix(f.kind.coeff).mul_vec(&f.values))
    }

    /// L²-projection of per-triangle values (weight `λ^{1−j}A`) back to a
    /// section: the mass-adjoint of centroid averaging.
    pub fn section_from_triangles(&self, coeff: Coeff, vals: &[C64]) -> Field {
        let kind = FormKind::function(coeff);
        let d = self.fiber_dim(coeff);
        let j = coeff.weight() as f64;
        let w: Vec<f64> = (0..self.mesh.num_triangles())
            .flat_map(|t| std::iter::repeat(self.mesh.tri_density[t].powf(1.0 - j) * self.mesh.tri_area[t]).take(d))
            .collect();
        let weighted: Vec<C64> = vals.iter().zip(&w).map(|(v, m)| v * m).collect();
        let m0 = self.mass(kind);
        let values = self.centroid_matrix(coeff).adjoint().mul_vec(&weighted).iter().zip(m0.iter()).map(|(v, m)| v / m).collect();
        Field { kind, values }
    }

    /// Exports an operator in Matrix Market format.
    pub fn export_matrix_market<W: std::io::Write>(&self, op: &DiscreteOperator, w: W) -> Result<()> {
        op.matrix.write_matrix_market(w)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// pointwise primitives

/// Pointwise building blocks of the tensor formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Primitive {
    /// `μ · α`: Beltrami differential times a (1,0)-form gives a (0,1)-form.
    MulBeltrami,
    /// `[ν, s]` for a bundle-valued (0,1)-form and an End E section.
    Ad,
    /// `⋆(ν*)`: conjugate transpose followed by the star.
    StarConj,
    /// `tr(α ⊗ β)` of two (0,1)-forms, a scalar `dz̄⊗dz̄` object.
    Trace,
    /// `i∫tr(α ∧ β̄ᵀ)` of two (0,1)-forms.
    WedgeIntegrate,
    /// Division by the density: `dz̄⊗dz̄` objects become Beltrami differentials.
    DensityInverseScale,
    /// Pointwise conjugate transpose, swapping (0,1) and (1,0).
    ConjTranspose,
}

/// Result of [`apply_primitive`].
#[derive(Clone, Debug, PartialEq)]
pub enum PrimitiveOutput {
    Field(Field),
    Scalar(C64),
}

impl PrimitiveOutput {
    pub fn field(self) -> Option<Field> {
        match self {
            PrimitiveOutput::Field(f) => Some(f),
            _ => None,
        }
    }
    pub fn scalar(self) -> Option<C64> {
        match self {
            PrimitiveOutput::Scalar(s) => Some(s),
            _ => None,
        }
    }
}

fn is_form(k: FormKind) -> bool {
    matches!(k.degree, Degree::Form01 | Degree::Form10)
}

fn is_matrix_coeff(c: Coeff) -> bool {
    matches!(c, Coeff::EndE | Coeff::AdE)
}

impl Discretization {
    /// Per-triangle matrices of an End E / Ad E form.
    pub fn form_matrices(&self, f: &Field) -> Vec<CMat> {
        let act = self.action(f.kind.coeff);
        let d = act.dim();
        f.values.chunks(d).map(|c| act.to_matrix(c)).collect()
    }

    fn form_from_matrices(&self, kind: FormKind, ms: &[CMat]) -> Field {
        let act = self.action(kind.coeff);
        Field { kind, values: ms.iter().flat_map(|m| act.from_matrix(m)).collect() }
    }

    fn triangle_scalars(&self, f: &Field) -> Vec<C64> {
        f.values.clone()
    }
}

/// Evaluates one primitive on its inputs.
pub fn apply_primitive(disc: &Discretization, token: Primitive, inputs: &[&Field]) -> Result<PrimitiveOutput> {
    let need = |k: usize| -> Result<()> {
        if inputs.len() == k {
            Ok(())
        } else {
            Err(Error::KindMismatch { expected: format!("{k} inputs"), found: format!("{} inputs", inputs.len()) })
        }
    };
    match token {
        Primitive::MulBeltrami => {
            need(2)?;
            let (mu, a) = (inputs[0], inputs[1]);
            same_kind(FormKind::BELTRAMI, mu.kind)?;
            if a.kind.degree != Degree::Form10 {
                return Err(Error::kind_mismatch(FormKind::form10(a.kind.coeff), a.kind));
            }
            let d = disc.fiber_dim(a.kind.coeff);
            let values = a.values.iter().enumerate().map(|(i, v)| v * mu.values[i / d]).collect();
            Ok(PrimitiveOutput::Field(Field { kind: FormKind::form01(a.kind.coeff), values }))
        }
        Primitive::Ad => {
            need(2)?;
            let (nu, s) = (inputs[0], inputs[1]);
            if !is_form(nu.kind) || !is_matrix_coeff(nu.kind.coeff) {
                return Err(Error::kind_mismatch(FormKind::form01(Coeff::EndE), nu.kind));
            }
            if !s.kind.is_section() || !is_matrix_coeff(s.kind.coeff) {
                return Err(Error::kind_mismatch(FormKind::function(Coeff::EndE), s.kind));
            }
            let nm = disc.form_matrices(nu);
            let st = disc.section_on_triangles(s)?;
            let act = disc.action(s.kind.coeff);
            let d = act.dim();
            let out: Vec<CMat> = nm
                .iter()
                .zip(st.chunks(d))
                .map(|(n, c)| {
                    let m = act.to_matrix(c);
                    n * &m - &m * n
                })
                .collect();
            Ok(PrimitiveOutput::Field(disc.form_from_matrices(FormKind::new(nu.kind.degree, s.kind.coeff), &out)))
        }
        Primitive::StarConj => {
            need(1)?;
            let c = conj_transpose(disc, inputs[0])?;
            let s = disc.star(c.kind)?;
            Ok(PrimitiveOutput::Field(s.apply(&c)?))
        }
        Primitive::ConjTranspose => {
            need(1)?;
            Ok(PrimitiveOutput::Field(conj_transpose(disc, inputs[0])?))
        }
        Primitive::Trace => {
            need(2)?;
            let (a, b) = (inputs[0], inputs[1]);
            for f in [a, b] {
                if f.kind.degree != Degree::Form01 {
                    return Err(Error::kind_mismatch(FormKind::form01(f.kind.coeff), f.kind));
                }
            }
            let values: Vec<C64> = if is_matrix_coeff(a.kind.coeff) {
                same_kind(a.kind, b.kind)?;
                disc.form_matrices(a).iter().zip(disc.form_matrices(b)).map(|(x, y)| (x * y).trace()).collect()
            } else {
                same_kind(a.kind, b.kind)?;
                let d = disc.fiber_dim(a.kind.coeff);
                a.values.chunks(d).zip(b.values.chunks(d)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum()).collect()
            };
            Ok(PrimitiveOutput::Field(Field { kind: FormKind::new(Degree::Form02, Coeff::Trivial), values }))
        }
        Primitive::DensityInverseScale => {
            need(1)?;
            let f = inputs[0];
            same_kind(FormKind::new(Degree::Form02, Coeff::Trivial), f.kind)?;
            let values = disc.triangle_scalars(f).iter().zip(&disc.mesh.tri_density).map(|(v, l)| v / l).collect();
            Ok(PrimitiveOutput::Field(Field { kind: FormKind::BELTRAMI, values }))
        }
        Primitive::WedgeIntegrate => {
            need(2)?;
            let (a, b) = (inputs[0], inputs[1]);
            same_kind(a.kind, b.kind)?;
            if a.kind.degree != Degree::Form01 || a.kind.coeff.weight() != 0 {
                return Err(Error::kind_mismatch(FormKind::form01(Coeff::EndE), a.kind));
            }
            // i dz̄∧dz = 2 dA, density-free
            let d = disc.fiber_dim(a.kind.coeff);
            let mut s = ZERO;
            for (t, (x, y)) in a.values.chunks(d).zip(b.values.chunks(d)).enumerate() {
                let tr: C64 = x.iter().zip(y).map(|(p, q)| p * q.conj()).sum();
                s += tr * (2.0 * disc.mesh.tri_area[t]);
            }
            Ok(PrimitiveOutput::Scalar(s))
        }
    }
}

/// Pointwise conjugate transpose of a one-form, swapping its type. In the
/// Hermitian fiber basis this conjugates the coordinates.
pub fn conj_transpose(disc: &Discretization, f: &Field) -> Result<Field> {
    let degree = match f.kind.degree {
        Degree::Form01 => Degree::Form10,
        Degree::Form10 => Degree::Form01,
        _ => return Err(Error::kind_mismatch(FormKind::form01(f.kind.coeff), f.kind)),
    };
    if f.kind.coeff == Coeff::Fundamental {
        return Err(Error::kind_mismatch(FormKind::form01(Coeff::EndE), f.kind));
    }
    let _ = disc.fiber_dim(f.kind.coeff);
    Ok(Field { kind: FormKind::new(degree, f.kind.coeff), values: f.values.iter().map(|v| v.conj()).collect() })
}
