//! Harmonic bases of H¹(X, TX), H¹(X, End E), H¹(X, Ad E).
//!
//! Bundle-valued harmonic (0,1)-forms come from twisted cohomology of the
//! quotient triangulation: random edge cochains are projected onto the
//! cochains that are closed and co-closed for the cotangent Hodge star, the
//! rank is read off a spectral gap, and the (0,1) half is selected by the
//! eigenvalue `+i` of the star. Harmonic Beltrami differentials are
//! `λ⁻¹ q̄` for the quadratic differentials `q = w_k w_l` built from
//! holomorphic one-forms, which span H⁰(K²) in genus 2.

use crate::bundle::CMat;
use crate::calculus::{Coeff, Discretization, Field, FormKind};
use crate::error::{Error, Result};
use crate::linalg::{self, hermitian_eigh, hermitian_eigh_general, Cholesky, SpMat, Triplets, ZERO};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Which harmonic space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HarmonicKind {
    TX,
    EndE,
    AdE,
    /// Scalar (0,1)-forms, H^{0,1}(X).
    Trivial,
}

impl HarmonicKind {
    pub fn form_kind(self) -> FormKind {
        match self {
            HarmonicKind::TX => FormKind::BELTRAMI,
            HarmonicKind::EndE => FormKind::form01(Coeff::EndE),
            HarmonicKind::AdE => FormKind::form01(Coeff::AdE),
            HarmonicKind::Trivial => FormKind::form01(Coeff::Trivial),
        }
    }
}

/// Minimum ratio between the smallest kept and the largest discarded Gram
/// eigenvalue.
pub const GAP_RATIO: f64 = 100.0;

/// Mass-orthonormal harmonic basis.
#[derive(Clone, Debug)]
pub struct HarmonicBasis {
    pub kind: HarmonicKind,
    pub elements: Vec<Field>,
    /// Gram matrix of the elements after orthonormalization.
    pub gram: CMat,
    /// Gap ratio of the rank decision.
    pub gap_ratio: f64,
    /// Largest relative Hodge-Laplacian residual among the elements.
    pub laplacian_residual: f64,
}

impl HarmonicBasis {
    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn field_kind(&self) -> FormKind {
        self.kind.form_kind()
    }

    /// Coefficients `⟨f, eᵢ⟩`.
    pub fn coefficients(&self, disc: &Discretization, f: &Field) -> Result<Vec<C64>> {
        self.elements.iter().map(|e| disc.inner(f, e)).collect()
    }

    /// Orthogonal projection `Σ ⟨f, eᵢ⟩ eᵢ`.
    pub fn project(&self, disc: &Discretization, f: &Field) -> Result<Field> {
        let mut out = disc.zeros(self.field_kind());
        for (c, e) in self.coefficients(disc, f)?.into_iter().zip(&self.elements) {
            out = out.axpy(c, e)?;
        }
        Ok(out)
    }

    /// Linear combination `Σ cᵢ eᵢ`.
    pub fn combine(&self, disc: &Discretization, coeffs: &[C64]) -> Field {
        let mut out = disc.zeros(self.field_kind());
        for (c, e) in coeffs.iter().zip(&self.elements) {
            out = out.axpy(*c, e).expect("same kind");
        }
        out
    }

    /// Exports the basis and its Gram matrix as JSON.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            kind: HarmonicKind,
            gap_ratio: f64,
            laplacian_residual: f64,
            gram: Vec<Vec<[f64; 2]>>,
            elements: &'a [Field],
        }
        let gram = (0..self.gram.nrows()).map(|i| (0..self.gram.ncols()).map(|j| [self.gram[(i, j)].re, self.gram[(i, j)].im]).collect()).collect();
        serde_json::to_string(&Doc { kind: self.kind, gap_ratio: self.gap_ratio, laplacian_residual: self.laplacian_residual, gram, elements: &self.elements })
            .expect("basis serializes")
    }
}

// ---------------------------------------------------------------------------
// twisted cochain complex

/// Twisted simplicial cochains on the quotient triangulation.
pub struct TwistedComplex {
    pub coeff: Coeff,
    pub d: usize,
    /// Number of quotient edges.
    pub num_edges: usize,
    /// Coboundary on vertex cochains (quotient vertices).
    pub d0: SpMat,
    /// Coboundary on edge cochains (triangles).
    pub d1: SpMat,
    /// Cotangent star weight per quotient edge.
    pub star1: Vec<f64>,
    /// For each triangle and local edge (a→b, b→c, c→a): quotient edge,
    /// orientation sign and lift transport.
    tri_edges: Vec<[(usize, f64, usize); 3]>,
    transports: Vec<CMat>,
}

impl TwistedComplex {
    pub fn new(disc: &Discretization, coeff: Coeff) -> Result<Self> {
        let mesh = &disc.mesh;
        let act = disc.action(coeff);
        let d = act.dim();
        let key = |a: usize, b: usize| (a.min(b), a.max(b));
        // lift data of non-representative boundary edges: (partner key, sign, transport)
        let mut transports: Vec<CMat> = vec![CMat::identity(d, d)];
        let mut lifted: HashMap<(usize, usize), ((usize, usize), f64, usize)> = HashMap::new();
        for p in &mesh.pairings {
            if p.side < 4 {
                continue;
            }
            let sign = if (p.edge[0] < p.edge[1]) == (p.partner[0] < p.partner[1]) { 1.0 } else { -1.0 };
            let r = act.matrix(&disc.rep.word(&p.word)).adjoint();
            transports.push(r);
            lifted.insert(key(p.edge[0], p.edge[1]), (key(p.partner[0], p.partner[1]), sign, transports.len() - 1));
        }
        let mut edge_id: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut tri_edges = Vec::with_capacity(mesh.num_triangles());
        let mut star1: Vec<f64> = Vec::new();
        let mut id_of = |k: (usize, usize), edges: &mut Vec<(usize, usize)>, star1: &mut Vec<f64>| -> usize {
            *edge_id.entry(k).or_insert_with(|| {
                edges.push(k);
                star1.push(0.0);
                edges.len() - 1
            })
        };
        for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
            let z = [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]];
            let mut local = [(0usize, 0.0f64, 0usize); 3];
            for (e, (p, q)) in [(a, b), (b, c), (c, a)].into_iter().enumerate() {
                let orient = if p < q { 1.0 } else { -1.0 };
                let (rk, sign, tr) = match lifted.get(&key(p, q)) {
                    Some(&(pk, s, tr)) => (pk, s, tr),
                    None => (key(p, q), 1.0, 0),
                };
                let id = id_of(rk, &mut edges, &mut star1);
                local[e] = (id, orient * sign, tr);
                // half cotangent of the angle opposite edge e
                let (o, u, v) = (z[(e + 2) % 3], z[e], z[(e + 1) % 3]);
                let (x, y) = (u - o, v - o);
                let cross = (x.conj() * y).im;
                let dotp = (x.conj() * y).re;
                star1[id] += 0.5 * dotp / cross;
                let _ = t;
            }
            tri_edges.push(local);
        }
        let ne = edges.len();
        let nv = disc.num_reduced_vertices();
        let mut t0 = Triplets::new(ne * d, nv * d);
        for (id, &(p, q)) in edges.iter().enumerate() {
            let (tp, tq) = (disc.transport(p, coeff), disc.transport(q, coeff));
            let (rp, rq) = (disc.red_index[p], disc.red_index[q]);
            t0.push_block(id * d, rq * d, &tq);
            t0.push_block(id * d, rp * d, &(-tp));
        }
        let mut t1 = Triplets::new(mesh.num_triangles() * d, ne * d);
        for (t, local) in tri_edges.iter().enumerate() {
            for &(id, s, tr) in local {
                t1.push_block(t * d, id * d, &(&transports[tr] * C64::new(s, 0.0)));
            }
        }
        Ok(Self { coeff, d, num_edges: ne, d0: t0.build(), d1: t1.build(), star1, tri_edges, transports })
    }

    fn weights(&self) -> Vec<f64> {
        self.star1.iter().flat_map(|&w| std::iter::repeat(w).take(self.d)).collect()
    }

    /// Projects cochains onto the closed ones that are co-closed for the
    /// cotangent weights. Closedness uses the Euclidean projection, so only
    /// the vertex Laplacian (the P1 stiffness, positive semidefinite even
    /// with obtuse triangles) sees the cotangent weights.
    pub fn harmonic_projection(&self, samples: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
        let w = self.weights();
        let d1h = self.d1.adjoint();
        let l2 = self.d1.matmul(&d1h);
        let l0 = self.d0.adjoint().matmul(&self.d0.scale_rows_cols(Some(&w), None));
        let s0 = RegularizedSolver::new(&l0)?;
        let s2 = RegularizedSolver::new(&l2)?;
        samples
            .iter()
            .map(|a| {
                let mut a = a.clone();
                let y = s2.solve(&l2, &self.d1.mul_vec(&a))?;
                linalg::axpy(&mut a, C64::new(-1.0, 0.0), &d1h.mul_vec(&y));
                let rhs: Vec<C64> = self.d0.adjoint().mul_vec(&a.iter().zip(&w).map(|(v, x)| v * x).collect::<Vec<_>>());
                let x = s0.solve(&l0, &rhs)?;
                linalg::axpy(&mut a, C64::new(-1.0, 0.0), &self.d0.mul_vec(&x));
                Ok(a)
            })
            .collect()
    }

    /// Euclidean cochain inner product.
    pub fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        linalg::dot(a, b)
    }

    /// Constant one-form `a dx + b dy` per triangle reproducing the edge
    /// integrals of a closed cochain. Returns per-triangle `(a, b)` fiber
    /// vectors, `2d` values per triangle.
    pub fn whitney(&self, disc: &Discretization, alpha: &[C64]) -> Vec<C64> {
        let d = self.d;
        let mesh = &disc.mesh;
        let mut out = Vec::with_capacity(mesh.num_triangles() * 2 * d);
        for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
            let lift = |e: usize| -> Vec<C64> {
                let (id, s, tr) = self.tri_edges[t][e];
                let v = &alpha[id * d..(id + 1) * d];
                let m = &self.transports[tr];
                (0..d).map(|i| (0..d).map(|k| m[(i, k)] * v[k]).sum::<C64>() * s).collect()
            };
            let (e_ab, e_ca) = (lift(0), lift(2));
            let d1 = mesh.vertices[b] - mesh.vertices[a];
            let d2 = mesh.vertices[c] - mesh.vertices[a];
            let det = d1.re * d2.im - d1.im * d2.re;
            // [d1.re d1.im; d2.re d2.im] (a, b)ᵀ = (α_ab, −α_ca)ᵀ
            let mut fa = vec![ZERO; d];
            let mut fb = vec![ZERO; d];
            for i in 0..d {
                let (r1, r2) = (e_ab[i], -e_ca[i]);
                fa[i] = (r1 * d2.im - r2 * d1.im) / det;
                fb[i] = (d1.re * r2 - d2.re * r1) / det;
            }
            out.extend(fa);
            out.extend(fb);
        }
        out
    }
}

/// Solver for a Hermitian positive semidefinite matrix on right-hand sides
/// orthogonal to its kernel: regularized factorization plus refinement.
struct RegularizedSolver {
    chol: Cholesky,
}

impl RegularizedSolver {
    fn new(a: &SpMat) -> Result<Self> {
        let scale = (0..a.nrows).map(|i| a.get(i, i).re).fold(0.0, f64::max);
        let reg = a.add(&SpMat::identity(a.nrows), C64::new(1e-9 * scale, 0.0));
        let chol = Cholesky::factor(&reg).map_err(|e| Error::SingularAssembly(e.to_string()))?;
        Ok(Self { chol })
    }

    fn solve(&self, a: &SpMat, b: &[C64]) -> Result<Vec<C64>> {
        let bn = linalg::norm(b);
        if bn == 0.0 {
            return Ok(vec![ZERO; b.len()]);
        }
        let mut x = self.chol.solve(b);
        for it in 0..100 {
            let r = linalg::sub(b, &a.mul_vec(&x));
            let rel = linalg::norm(&r) / bn;
            if rel < 1e-13 {
                return Ok(x);
            }
            if it == 99 {
                return Err(Error::SolverBreakdown { iterations: it, residual: rel });
            }
            linalg::axpy(&mut x, C64::new(1.0, 0.0), &self.chol.solve(&r));
        }
        Ok(x)
    }
}

/// Rank decision: the number of Gram eigenvalues above the first gap of
/// ratio at least [`GAP_RATIO`], scanning from the top.
pub fn gap_rank(eigs_desc: &[f64], kind: &str) -> Result<(usize, f64)> {
    let top = eigs_desc.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::GapUndecidable { kind: kind.into(), ratio: 0.0 });
    }
    // round-off floor, so that noise eigenvalues compare as equal
    let floor = top * f64::EPSILON * eigs_desc.len() as f64;
    let mut best = (0usize, 0.0f64);
    for k in 0..eigs_desc.len() - 1 {
        let ratio = eigs_desc[k].max(floor) / eigs_desc[k + 1].max(floor);
        if ratio > best.1 {
            best = (k + 1, ratio);
        }
    }
    if best.1 < GAP_RATIO {
        return Err(Error::GapUndecidable { kind: kind.into(), ratio: best.1 });
    }
    Ok(best)
}

fn orthonormalize(disc: &Discretization, fields: Vec<Field>) -> Vec<Field> {
    let mut out: Vec<Field> = Vec::new();
    for mut f in fields {
        for _ in 0..2 {
            for e in &out {
                let c = disc.inner(&f, e).expect("same kind");
                f = f.axpy(-c, e).expect("same kind");
            }
        }
        let n = disc.norm(&f);
        out.push(f.scale(C64::new(1.0 / n, 0.0)));
    }
    out
}

fn gram(disc: &Discretization, fields: &[Field]) -> CMat {
    CMat::from_fn(fields.len(), fields.len(), |i, j| disc.inner(&fields[j], &fields[i]).expect("same kind"))
}

/// Removes the ∂̄-exact part: `ν − ∂̄ Δ⁻¹ ∂̄* ν`.
pub fn remove_exact(disc: &Discretization, nu: &Field) -> Result<Field> {
    let sec = FormKind::function(nu.kind.coeff);
    let dbar = disc.dbar(sec)?;
    let lap = disc.laplacian(sec)?;
    let rhs = disc.adjoint(&dbar).apply(nu)?;
    let a = disc.green_apply(&lap, &rhs, 0.0)?;
    nu.sub(&dbar.apply(&a)?)
}

/// Relative size of `∂̄*` on a form compared with a random form.
fn laplacian_residual(disc: &Discretization, f: &Field) -> Result<f64> {
    let sec = FormKind::function(f.kind.coeff);
    let dstar = disc.adjoint(&disc.dbar(sec)?);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let r = disc.random_field(f.kind, &mut rng);
    let typical = disc.norm(&dstar.apply(&r)?) / disc.norm(&r);
    Ok(disc.norm(&dstar.apply(f)?) / disc.norm(f) / typical)
}

/// Harmonic (0,1)-forms with values in a flat bundle of weight 0.
fn bundle_harmonic(disc: &Discretization, coeff: Coeff, seed: u64) -> Result<(Vec<Field>, f64)> {
    let cx = TwistedComplex::new(disc, coeff)?;
    let d = cx.d;
    let g = disc.mesh.genus;
    let nsamples = 2 * g * d + 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<C64>> = (0..nsamples)
        .map(|_| {
            use rand::Rng;
            use rand_distr::StandardNormal;
            (0..cx.num_edges * d)
                .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect()
        })
        .collect();
    let proj = cx.harmonic_projection(&samples)?;
    let gm = CMat::from_fn(nsamples, nsamples, |i, j| cx.inner(&proj[j], &proj[i]));
    let (vals, vecs) = hermitian_eigh(&gm);
    let desc: Vec<f64> = vals.iter().rev().copied().collect();
    let (rank, ratio) = gap_rank(&desc, &format!("{coeff:?}"))?;
    if rank % 2 != 0 {
        return Err(Error::GapUndecidable { kind: format!("{coeff:?} odd rank {rank}"), ratio });
    }
    // harmonic cochain basis from the leading Gram eigenvectors
    let cochains: Vec<Vec<C64>> = (0..rank)
        .map(|k| {
            let col = nsamples - 1 - k;
            let mut h = vec![ZERO; cx.num_edges * d];
            for (i, p) in proj.iter().enumerate() {
                linalg::axpy(&mut h, vecs[(i, col)], p);
            }
            h
        })
        .collect();
    let forms: Vec<Vec<C64>> = cochains.iter().map(|h| cx.whitney(disc, h)).collect();
    // flat L² pairing of a dx + b dy forms and the star (a, b) ↦ (−b, a)
    let area = &disc.mesh.tri_area;
    let pair = |x: &[C64], y: &[C64], star: bool| -> C64 {
        let mut s = ZERO;
        for (t, a) in area.iter().enumerate() {
            let o = t * 2 * d;
            for i in 0..d {
                let (xa, xb) = (x[o + i], x[o + d + i]);
                let (sa, sb) = if star { (-xb, xa) } else { (xa, xb) };
                s += (sa * y[o + i].conj() + sb * y[o + d + i].conj()) * *a;
            }
        }
        s
    };
    let gmat = CMat::from_fn(rank, rank, |k, l| pair(&forms[l], &forms[k], false));
    let smat = CMat::from_fn(rank, rank, |k, l| pair(&forms[l], &forms[k], true));
    let herm = smat * C64::new(0.0, -1.0);
    let (theta, x) = hermitian_eigh_general(&herm, &gmat).ok_or_else(|| Error::SingularAssembly("harmonic Gram matrix".into()))?;
    let half = rank / 2;
    if !(theta[half] > 0.5 && theta[half - 1] < -0.5) {
        return Err(Error::GapUndecidable { kind: format!("{coeff:?} star split"), ratio: theta[half] });
    }
    let kind = FormKind::form01(coeff);
    let mut fields = Vec::with_capacity(half);
    for col in (half..rank).rev() {
        let mut values = vec![ZERO; disc.mesh.num_triangles() * d];
        for (l, f) in forms.iter().enumerate() {
            let c = x[(l, col)];
            for t in 0..disc.mesh.num_triangles() {
                for i in 0..d {
                    // (0,1) part of a dx + b dy is (a + ib)/2
                    let o = t * 2 * d;
                    values[t * d + i] += c * (f[o + i] + C64::i() * f[o + d + i]) * 0.5;
                }
            }
        }
        fields.push(remove_exact(disc, &Field { kind, values })?);
    }
    Ok((orthonormalize(disc, fields), ratio))
}

/// Harmonic Beltrami differentials `λ⁻¹ ν_k ν_l` from the scalar basis.
fn beltrami_harmonic(disc: &Discretization, seed: u64) -> Result<(Vec<Field>, f64)> {
    let (scalar, _) = bundle_harmonic(disc, Coeff::Trivial, seed)?;
    let g = scalar.len();
    let mut products = Vec::new();
    for k in 0..g {
        for l in k..g {
            let values = (0..disc.mesh.num_triangles())
                .map(|t| scalar[k].values[t] * scalar[l].values[t] / disc.mesh.tri_density[t])
                .collect();
            products.push(remove_exact(disc, &Field { kind: FormKind::BELTRAMI, values })?);
        }
    }
    let gm = gram(disc, &products);
    let (vals, _) = hermitian_eigh(&gm);
    let mut desc: Vec<f64> = vals.iter().rev().copied().collect();
    // the products are independent; the gap is measured against round-off
    desc.push(f64::EPSILON * desc[0]);
    let (rank, ratio) = gap_rank(&desc, "TX")?;
    if rank != products.len() {
        return Err(Error::GapUndecidable { kind: "TX products".into(), ratio });
    }
    Ok((orthonormalize(disc, products), ratio))
}

/// Harmonic basis with the default sampling seed.
pub fn harmonic_basis(disc: &Discretization, kind: HarmonicKind) -> Result<HarmonicBasis> {
    harmonic_basis_seeded(disc, kind, 0x4a11)
}

pub fn harmonic_basis_seeded(disc: &Discretization, kind: HarmonicKind, seed: u64) -> Result<HarmonicBasis> {
    let (elements, gap_ratio) = match kind {
        HarmonicKind::TX => beltrami_harmonic(disc, seed)?,
        HarmonicKind::EndE => bundle_harmonic(disc, Coeff::EndE, seed)?,
        HarmonicKind::AdE => bundle_harmonic(disc, Coeff::AdE, seed)?,
        HarmonicKind::Trivial => bundle_harmonic(disc, Coeff::Trivial, seed)?,
    };
    let mut laplacian_residual: f64 = 0.0;
    for e in &elements {
        laplacian_residual = laplacian_residual.max(laplacian_residual_of(disc, e)?);
    }
    let gram = gram(disc, &elements);
    Ok(HarmonicBasis { kind, elements, gram, gap_ratio, laplacian_residual })
}

fn laplacian_residual_of(disc: &Discretization, f: &Field) -> Result<f64> {
    laplacian_residual(disc, f)
}

/// Element of H¹(X,TX) ⊕ H¹(X,End E).
#[derive(Clone, Debug)]
pub struct TangentVector {
    pub mu: Field,
    pub nu: Field,
}

impl TangentVector {
    pub fn new(mu: Field, nu: Field) -> Self {
        Self { mu, nu }
    }

    pub fn zero(disc: &Discretization, nu_coeff: Coeff) -> Self {
        Self { mu: disc.zeros(FormKind::BELTRAMI), nu: disc.zeros(FormKind::form01(nu_coeff)) }
    }

    pub fn is_zero(&self) -> bool {
        self.mu.values.iter().chain(&self.nu.values).all(|v| *v == ZERO)
    }

    /// Largest distance of either component from the span of its basis.
    pub fn span_residual(&self, disc: &Discretization, tx: &HarmonicBasis, e: &HarmonicBasis) -> Result<f64> {
        let rm = self.mu.sub(&tx.project(disc, &self.mu)?)?;
        let rn = self.nu.sub(&e.project(disc, &self.nu)?)?;
        Ok(disc.norm(&rm).max(disc.norm(&rn)))
    }
}

/// Dense matrix of the projection `P` on a kind, in reduced coordinates.
pub fn projection_matrix(disc: &Discretization, basis: &HarmonicBasis) -> DMatrix<C64> {
    let n = disc.dof(basis.field_kind());
    let m = disc.mass(basis.field_kind());
    let mut p = DMatrix::zeros(n, n);
    for e in &basis.elements {
        for i in 0..n {
            for j in 0..n {
                p[(i, j)] += e.values[i] * e.values[j].conj() * m[j];
            }
        }
    }
    p
}

/// Kodaira–Spencer map at the base point `at`.
///
/// At the origin it is the pair of harmonic projections. Elsewhere the chart
/// data supply `χ₁` and the first-order `χ₂`: the Beltrami part is
/// `(μ₁ − tr(ν₁ν)/λ)/(1 − |μ|²)` carried by `χ₁`, the bundle part is
/// `Ad χ₂(ν₁ + (μ₁ − tr(ν₁ν)/λ)·χ₂⁻¹∂χ₂)` carried by `χ₁`, both projected
/// on the harmonic bases of the fixed surface.
pub fn kodaira_spencer(
    disc: &Discretization,
    tx: &HarmonicBasis,
    end: &HarmonicBasis,
    tv: &TangentVector,
    chart: Option<&crate::deform::ChartData>,
    at: &TangentVector,
) -> Result<TangentVector> {
    use crate::calculus::{apply_primitive, Primitive};
    if at.is_zero() {
        return Ok(TangentVector::new(tx.project(disc, &tv.mu)?, end.project(disc, &tv.nu)?));
    }
    let chart = chart.ok_or(Error::MissingChiData)?;
    if chart.at.mu != at.mu || chart.at.nu != at.nu {
        return Err(Error::InvalidInput("chart data belong to a different base point".into()));
    }
    if tv.nu.kind != at.nu.kind {
        return Err(Error::kind_mismatch(at.nu.kind, tv.nu.kind));
    }
    let tr = apply_primitive(disc, Primitive::Trace, &[&tv.nu, &at.nu])?.field().expect("trace is a field");
    let corr = apply_primitive(disc, Primitive::DensityInverseScale, &[&tr])?.field().expect("scaled trace is a field");
    let raw = tv.mu.sub(&corr)?;
    let eta = Field {
        kind: FormKind::BELTRAMI,
        values: raw.values.iter().zip(&at.mu.values).map(|(r, m)| r / (1.0 - m.norm_sqr())).collect(),
    };
    let mesh = &disc.mesh;
    let sampler = crate::deform::BeltramiSampler::new(disc, &eta);
    let locator = crate::surface::Locator::new(mesh);
    let map = &chart.chi1;
    let act = disc.action(tv.nu.kind.coeff);
    let nu1 = disc.form_matrices(&tv.nu);
    let mut mu_out = Vec::with_capacity(mesh.num_triangles());
    let mut nu_out = Vec::with_capacity(mesh.num_triangles() * act.dim());
    for tri in &mesh.triangles {
        let c = tri.iter().map(|&v| mesh.vertices[v]).sum::<C64>() / 3.0;
        let z = map.inverse(c);
        let d = map.derivative(z);
        mu_out.push(sampler.value(z) * d / d.conj());
        let (s, _) = locator.locate(mesh, z);
        let x = &chart.chi2[s];
        let inner = &nu1[s] + &chart.chi2_log[s] * raw.values[s];
        let xinv = x.clone().try_inverse().ok_or_else(|| Error::SingularAssembly("χ₂ not invertible".into()))?;
        let carried: CMat = x * inner * xinv / d.conj();
        nu_out.extend(act.from_matrix(&carried));
    }
    let mu = tx.project(disc, &Field { kind: FormKind::BELTRAMI, values: mu_out })?;
    let nu = end.project(disc, &Field { kind: tv.nu.kind, values: nu_out })?;
    Ok(TangentVector::new(mu, nu))
}
