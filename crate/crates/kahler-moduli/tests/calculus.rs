use kahler_moduli::bundle::commutant_spectrum;
use kahler_moduli::calculus::*;
use kahler_moduli::harmonic::{harmonic_basis, HarmonicKind};
use kahler_moduli::linalg::{hermitian_eigh_general, smallest_eigenpairs};
use kahler_moduli::{Error, C64};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn disc3() -> &'static Discretization {
    static D: OnceLock<Discretization> = OnceLock::new();
    D.get_or_init(|| Discretization::bolza(3, 2, 11).unwrap())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const COEFFS: [Coeff; 6] = [Coeff::Trivial, Coeff::Fundamental, Coeff::EndE, Coeff::AdE, Coeff::TX, Coeff::K2];

#[test]
fn star_acts_by_plus_i_and_minus_i() {
    let d = disc3();
    let mut r = rng(1);
    for c in COEFFS {
        let f = d.random_field(FormKind::form01(c), &mut r);
        let s = d.star(f.kind).unwrap().apply(&f).unwrap();
        assert!(s.sub(&f.scale(C64::i())).unwrap().max_abs() == 0.0);
        let g = d.random_field(FormKind::form10(c), &mut r);
        let s = d.star(g.kind).unwrap().apply(&g).unwrap();
        assert!(s.sub(&g.scale(-C64::i())).unwrap().max_abs() == 0.0);
        // isometry, and ⋆⋆ = −1
        assert!((d.norm(&s) - d.norm(&g)).abs() <= 1e-12 * d.norm(&g));
        let ss = d.star(g.kind).unwrap().apply(&s).unwrap();
        assert!(ss.axpy(C64::new(1.0, 0.0), &g).unwrap().max_abs() < 1e-14);
    }
}

#[test]
fn star_rejects_sections() {
    let d = disc3();
    assert!(matches!(d.star(FormKind::function(Coeff::Trivial)), Err(Error::KindMismatch { .. })));
    let f = d.zeros(FormKind::form01(Coeff::Trivial));
    let op = d.dbar(FormKind::function(Coeff::Trivial)).unwrap();
    assert!(matches!(op.apply(&f), Err(Error::KindMismatch { .. })));
}

fn kernel_dim(d: &Discretization, c: Coeff) -> (usize, f64) {
    let kind = FormKind::function(c);
    let k = d.stiffness(kind).unwrap();
    let m = d.mass(kind);
    let e = smallest_eigenpairs(&k, &m, 4, 1e-10);
    let zero = e.values.iter().filter(|&&l| l.abs() < 1e-8).count();
    (zero, e.values[zero])
}

#[test]
fn kernel_dimensions_stable_across_levels() {
    for level in 2..=4 {
        let d = Discretization::bolza(level, 2, 11).unwrap();
        let (kt, gap_t) = kernel_dim(&d, Coeff::Trivial);
        assert_eq!(kt, 1, "trivial level {level}");
        assert!(gap_t > 1.0, "first nonzero eigenvalue {gap_t}");
        // oracle: irreducibility leaves no invariant trace-free matrix
        let (ka, low) = kernel_dim(&d, Coeff::AdE);
        assert_eq!(ka, 0, "AdE level {level}");
        assert!(low > 1e-4, "smallest AdE eigenvalue {low}");
        let comm = commutant_spectrum(&d.rep.images);
        assert!(comm[0] < 1e-12 && comm[1] > 1e-3);
        assert_eq!(d.flat_sections(Coeff::AdE).len(), 0);
        assert_eq!(d.flat_sections(Coeff::EndE).len(), 1);
    }
}

#[test]
fn dbar_adjoint_for_random_fields() {
    let d = disc3();
    let mut r = rng(2);
    for c in COEFFS {
        let kind = FormKind::function(c);
        let op = d.dbar(kind).unwrap();
        let adj = d.adjoint(&op);
        for _ in 0..100 / COEFFS.len() + 1 {
            let f = d.random_field(kind, &mut r);
            let g = d.random_field(op.codomain, &mut r);
            let lhs = d.inner(&op.apply(&f).unwrap(), &g).unwrap();
            let rhs = d.inner(&f, &adj.apply(&g).unwrap()).unwrap();
            assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0), "{c:?}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn star_and_mass_adjoints() {
    let d = disc3();
    for c in [Coeff::Trivial, Coeff::EndE, Coeff::TX] {
        let kind = FormKind::form01(c);
        let s = d.star(kind).unwrap();
        let sa = d.adjoint(&s);
        let diff = sa.matrix.add(&s.matrix, C64::new(1.0, 0.0)).to_dense().iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(diff <= 1e-10);
        let m = d.assemble(OperatorName::Mass, kind).unwrap();
        let ma = d.adjoint(&m);
        assert!(ma.matrix.add(&m.matrix, C64::new(-1.0, 0.0)).to_dense().iter().all(|v| v.norm() <= 1e-12 * 1.0f64.max(v.norm())));
    }
}

#[test]
fn adjoint_of_adjoint_is_original() {
    let d = disc3();
    let op = d.dbar(FormKind::function(Coeff::AdE)).unwrap();
    let back = d.adjoint(&d.adjoint(&op));
    assert_eq!(back.matrix, op.matrix);
    assert_eq!((back.domain, back.codomain, back.is_adjoint), (op.domain, op.codomain, op.is_adjoint));
}

#[test]
fn laplacian_is_dbar_star_dbar() {
    let d = disc3();
    let kind = FormKind::function(Coeff::EndE);
    let f = d.random_field(kind, &mut rng(3));
    let op = d.dbar(kind).unwrap();
    let viaadj = d.adjoint(&op).apply(&op.apply(&f).unwrap()).unwrap();
    let lap = d.laplacian(kind).unwrap().apply(&f).unwrap();
    assert!(viaadj.sub(&lap).unwrap().max_abs() <= 1e-10 * lap.max_abs());
}

#[test]
fn green_kills_constants() {
    let d = disc3();
    let kind = FormKind::function(Coeff::Trivial);
    let lap = d.laplacian(kind).unwrap();
    let one = Field { kind, values: vec![C64::new(1.0, 0.0); d.dof(kind)] };
    let u = d.green_apply(&lap, &one, 0.0).unwrap();
    assert!(u.max_abs() < 1e-8, "{}", u.max_abs());
}

#[test]
fn shifted_green_scales_eigenfields() {
    // oracle: dense generalized eigensolve of (K, M) independent of the solver
    let d = Discretization::bolza(2, 2, 11).unwrap();
    for c in [Coeff::Trivial, Coeff::AdE] {
        let kind = FormKind::function(c);
        let k = d.stiffness(kind).unwrap().to_dense();
        let m = d.mass(kind);
        let mm = DMatrix::from_fn(m.len(), m.len(), |i, j| if i == j { C64::new(m[i], 0.0) } else { C64::new(0.0, 0.0) });
        let (vals, vecs) = hermitian_eigh_general(&k, &mm).unwrap();
        let lap = d.laplacian(kind).unwrap();
        for idx in [1usize, 5] {
            let f = Field { kind, values: vecs.column(idx).iter().copied().collect() };
            let u = d.green_apply(&lap, &f, 0.5).unwrap();
            let expect = f.scale(C64::new(1.0 / (vals[idx] + 0.5), 0.0));
            assert!(u.sub(&expect).unwrap().max_abs() <= 1e-8 * expect.max_abs(), "{c:?} eigen {idx}");
        }
    }
}

#[test]
fn green_inverts_laplacian_off_kernel() {
    let d = disc3();
    for c in [Coeff::Trivial, Coeff::EndE, Coeff::AdE, Coeff::TX] {
        let kind = FormKind::function(c);
        let lap = d.laplacian(kind).unwrap();
        let f = d.random_field(kind, &mut rng(4));
        let u = d.green_apply(&lap, &f, 0.0).unwrap();
        let back = lap.apply(&u).unwrap();
        let expect = d.project_out(&f, &d.flat_sections(c)).unwrap();
        assert!(back.sub(&expect).unwrap().max_abs() <= 1e-8 * f.max_abs(), "{c:?}");
    }
}

#[test]
fn resolvent_identity() {
    let d = disc3();
    let kind = FormKind::function(Coeff::AdE);
    let lap = d.laplacian(kind).unwrap();
    let f = d.random_field(kind, &mut rng(5));
    let (a, b) = (0.5, 2.0);
    let ga = d.green_apply(&lap, &f, a).unwrap();
    let gb = d.green_apply(&lap, &f, b).unwrap();
    let gab = d.green_apply(&lap, &gb, a).unwrap();
    let lhs = ga.sub(&gb).unwrap();
    let rhs = gab.scale(C64::new(b - a, 0.0));
    assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-9 * lhs.max_abs());
}

#[test]
fn expanded_fields_are_equivariant() {
    let d = disc3();
    let mut r = rng(6);
    for c in COEFFS {
        let f = d.random_field(FormKind::function(c), &mut r);
        assert!(d.equivariance_residual(&f).unwrap() <= 1e-8, "{c:?}");
    }
}

#[test]
fn ad_of_identity_vanishes() {
    let d = disc3();
    let nu = d.random_field(FormKind::form01(Coeff::EndE), &mut rng(7));
    let id = &d.flat_sections(Coeff::EndE)[0];
    let out = apply_primitive(d, Primitive::Ad, &[&nu, id]).unwrap().field().unwrap();
    assert!(out.max_abs() < 1e-12);
}

#[test]
fn ad_matches_matrix_commutator() {
    let d = disc3();
    let mut r = rng(8);
    let nu = d.random_field(FormKind::form01(Coeff::EndE), &mut r);
    let s = d.random_field(FormKind::function(Coeff::EndE), &mut r);
    let out = apply_primitive(d, Primitive::Ad, &[&nu, &s]).unwrap().field().unwrap();
    let st = d.section_on_triangles(&s).unwrap();
    let act = d.action(Coeff::EndE);
    for (t, (n, o)) in d.form_matrices(&nu).iter().zip(d.form_matrices(&out)).enumerate().take(20) {
        let m = act.to_matrix(&st[t * 4..t * 4 + 4]);
        assert!((n * &m - &m * n - o).norm() < 1e-12);
    }
}

#[test]
fn density_inverse_scale_of_zero_trace() {
    let d = disc3();
    let z = d.zeros(FormKind::form01(Coeff::EndE));
    let tr = apply_primitive(d, Primitive::Trace, &[&z, &z]).unwrap().field().unwrap();
    let mu = apply_primitive(d, Primitive::DensityInverseScale, &[&tr]).unwrap().field().unwrap();
    assert_eq!(mu.kind, FormKind::BELTRAMI);
    assert_eq!(mu.max_abs(), 0.0);
}

#[test]
fn wedge_of_unit_harmonic_is_one() {
    let d = disc3();
    let b = harmonic_basis(d, HarmonicKind::EndE).unwrap();
    for e in &b.elements {
        let w = apply_primitive(d, Primitive::WedgeIntegrate, &[e, e]).unwrap().scalar().unwrap();
        assert!((w - 1.0).norm() < 1e-6, "{w}");
    }
    // and in general it is the mass-matrix pairing
    let mut r = rng(9);
    let a = d.random_field(FormKind::form01(Coeff::AdE), &mut r);
    let c = d.random_field(FormKind::form01(Coeff::AdE), &mut r);
    let w = apply_primitive(d, Primitive::WedgeIntegrate, &[&a, &c]).unwrap().scalar().unwrap();
    assert!((w - d.inner(&a, &c).unwrap()).norm() < 1e-10 * w.norm());
}

#[test]
fn primitives_reject_wrong_kinds() {
    let d = disc3();
    let s = d.zeros(FormKind::function(Coeff::EndE));
    let mu = d.zeros(FormKind::BELTRAMI);
    assert!(matches!(apply_primitive(d, Primitive::MulBeltrami, &[&mu, &s]), Err(Error::KindMismatch { .. })));
    assert!(matches!(apply_primitive(d, Primitive::Trace, &[&s, &s]), Err(Error::KindMismatch { .. })));
    assert!(matches!(apply_primitive(d, Primitive::Ad, &[&mu]), Err(Error::KindMismatch { .. })));
}

#[test]
fn hodge_decomposition_is_orthogonal_and_idempotent() {
    let d = disc3();
    let b = harmonic_basis(d, HarmonicKind::EndE).unwrap();
    let kind = FormKind::form01(Coeff::EndE);
    let sec = FormKind::function(Coeff::EndE);
    let dbar = d.dbar(sec).unwrap();
    let lap = d.laplacian(sec).unwrap();
    let split = |w: &Field| {
        let a = d.green_apply(&lap, &d.adjoint(&dbar).apply(w).unwrap(), 0.0).unwrap();
        let exact = dbar.apply(&a).unwrap();
        let harm = b.project(d, w).unwrap();
        let rest = w.sub(&exact).unwrap().sub(&harm).unwrap();
        (exact, harm, rest)
    };
    let w = d.random_field(kind, &mut rng(10));
    let (e, h, c) = split(&w);
    let scale = d.norm(&w).powi(2);
    for (x, y) in [(&e, &h), (&e, &c), (&h, &c)] {
        assert!(d.inner(x, y).unwrap().norm() <= 1e-8 * scale);
    }
    let (e2, h2, c2) = split(&e);
    assert!(e2.sub(&e).unwrap().max_abs() <= 1e-8 * e.max_abs());
    assert!(h2.max_abs() <= 1e-8 * e.max_abs() && c2.max_abs() <= 1e-8 * e.max_abs());
}

/// Smooth bump supported in |z| < r, so it is a function on the surface.
fn bump(z: C64, r: f64) -> (C64, C64) {
    let s = z.norm_sqr() / (r * r);
    if s >= 1.0 {
        return (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    }
    let f = (-1.0 / (1.0 - s)).exp() * (1.0 + C64::new(0.0, 2.0) * z.re);
    // ∂/∂z̄ of exp(−1/(1−s)) is −exp(·)/(1−s)² · z/r²; of (1 + 2i x) it is i
    let e = (-1.0 / (1.0 - s)).exp();
    let de = -e / (1.0 - s).powi(2) * z / (r * r);
    (f, de * (1.0 + C64::new(0.0, 2.0) * z.re) + e * C64::i())
}

#[test]
fn dbar_converges_on_smooth_fields() {
    let mut errs = Vec::new();
    for level in 3..=5 {
        let d = Discretization::bolza(level, 1, 11).unwrap();
        let kind = FormKind::function(Coeff::Trivial);
        let values = d.reps.iter().map(|&v| bump(d.mesh.vertices[v], 0.5).0).collect();
        let out = d.dbar(kind).unwrap().apply(&Field { kind, values }).unwrap();
        let mut err = 0.0;
        for (t, tri) in d.mesh.triangles.iter().enumerate() {
            let c = tri.iter().map(|&v| d.mesh.vertices[v]).sum::<C64>() / 3.0;
            err += d.mesh.tri_area[t] * (out.values[t] - bump(c, 0.5).1).norm_sqr();
        }
        errs.push(err.sqrt());
    }
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 1.8, "errors {errs:?}");
    }
}

#[test]
fn matrix_market_export() {
    let d = Discretization::bolza(1, 2, 11).unwrap();
    let op = d.dbar(FormKind::function(Coeff::Trivial)).unwrap();
    let mut buf = Vec::new();
    d.export_matrix_market(&op, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('%'));
    let header: Vec<usize> = lines.next().unwrap().split_whitespace().map(|x| x.parse().unwrap()).collect();
    assert_eq!(header, vec![op.matrix.nrows, op.matrix.ncols, op.matrix.nnz()]);
    for l in lines {
        let p: Vec<&str> = l.split_whitespace().collect();
        let (i, j): (usize, usize) = (p[0].parse().unwrap(), p[1].parse().unwrap());
        let v = C64::new(p[2].parse().unwrap(), p[3].parse().unwrap());
        assert_eq!(op.matrix.get(i - 1, j - 1), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn laplacian_is_positive_semidefinite(seed in 0u64..1000, ci in 0usize..6) {
        let d = disc3();
        let kind = FormKind::function(COEFFS[ci]);
        let f = d.random_field(kind, &mut rng(seed));
        let q = d.inner(&d.laplacian(kind).unwrap().apply(&f).unwrap(), &f).unwrap();
        prop_assert!(q.re >= -1e-12 * d.norm(&f).powi(2));
        prop_assert!(q.im.abs() <= 1e-10 * q.re.abs().max(1.0));
    }

    #[test]
    fn conj_transpose_is_an_involution(seed in 0u64..1000) {
        let d = disc3();
        let f = d.random_field(FormKind::form01(Coeff::EndE), &mut rng(seed));
        let g = conj_transpose(d, &conj_transpose(d, &f).unwrap()).unwrap();
        prop_assert_eq!(g, f);
    }
}
