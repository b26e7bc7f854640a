use kahler_moduli::calculus::*;
use kahler_moduli::harmonic::*;
use kahler_moduli::{Error, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

const GENUS: usize = 2;

struct Setup {
    disc: Discretization,
    tx: HarmonicBasis,
    end: HarmonicBasis,
    ad: HarmonicBasis,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let disc = Discretization::bolza(3, 2, 11).unwrap();
        let tx = harmonic_basis(&disc, HarmonicKind::TX).unwrap();
        let end = harmonic_basis(&disc, HarmonicKind::EndE).unwrap();
        let ad = harmonic_basis(&disc, HarmonicKind::AdE).unwrap();
        Setup { disc, tx, end, ad }
    })
}

#[test]
fn dimensions_match_riemann_roch() {
    let s = setup();
    let n = s.disc.rep.n;
    assert_eq!(s.tx.dim(), 3 * GENUS - 3);
    assert_eq!(s.end.dim(), n * n * (GENUS - 1) + 1);
    assert_eq!(s.ad.dim(), (n * n - 1) * (GENUS - 1));
    for b in [&s.tx, &s.end, &s.ad] {
        assert!(b.gap_ratio >= GAP_RATIO, "{:?} gap {}", b.kind, b.gap_ratio);
    }
}

#[test]
fn dimensions_stable_across_levels() {
    for level in [2usize, 4] {
        let d = Discretization::bolza(level, 2, 11).unwrap();
        assert_eq!(harmonic_basis(&d, HarmonicKind::AdE).unwrap().dim(), 3, "level {level}");
        assert_eq!(harmonic_basis(&d, HarmonicKind::Trivial).unwrap().dim(), GENUS, "level {level}");
    }
}

#[test]
fn rank_three_bundle_counts() {
    let d = Discretization::bolza(2, 3, 5).unwrap();
    assert_eq!(harmonic_basis(&d, HarmonicKind::EndE).unwrap().dim(), 10);
    assert_eq!(harmonic_basis(&d, HarmonicKind::AdE).unwrap().dim(), 8);
}

#[test]
fn bases_are_orthonormal_and_harmonic() {
    let s = setup();
    for b in [&s.tx, &s.end, &s.ad] {
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((b.gram[(i, j)] - e).norm() <= 1e-8);
            }
        }
        assert!(b.laplacian_residual <= 1e-7, "{:?} {}", b.kind, b.laplacian_residual);
    }
}

#[test]
fn elements_have_the_right_type() {
    // the star fixes (0,1)-forms up to +i; a (1,0) component would show up
    // as a component orthogonal to the span after conjugation
    let s = setup();
    for e in &s.end.elements {
        let c = conj_transpose(&s.disc, e).unwrap();
        assert_eq!(c.kind.degree, Degree::Form10);
        let back = conj_transpose(&s.disc, &c).unwrap();
        assert_eq!(&back, e);
    }
}

#[test]
fn trace_part_of_end_is_scalar_harmonic() {
    // End E = Ad E ⊕ C: the identity components span the two scalar forms
    let s = setup();
    let scalar = harmonic_basis(&s.disc, HarmonicKind::Trivial).unwrap();
    let d = s.disc.fiber_dim(Coeff::EndE);
    let traces: Vec<Field> = s
        .end
        .elements
        .iter()
        .map(|e| Field { kind: FormKind::form01(Coeff::Trivial), values: e.values.chunks(d).map(|c| c[0]).collect() })
        .collect();
    let mut rank_parts = 0;
    for t in &traces {
        let n = s.disc.norm(t);
        if n > 1e-6 {
            rank_parts += 1;
            let r = t.sub(&scalar.project(&s.disc, t).unwrap()).unwrap();
            assert!(s.disc.norm(&r) <= 1e-6 * n);
        }
    }
    assert!(rank_parts >= 2);
    let g = nalgebra::DMatrix::from_fn(traces.len(), traces.len(), |i, j| s.disc.inner(&traces[j], &traces[i]).unwrap());
    let (vals, _) = kahler_moduli::linalg::hermitian_eigh(&g);
    assert_eq!(vals.iter().filter(|&&v| v > 1e-8).count(), 2);
}

#[test]
fn projection_fixes_basis_elements() {
    let s = setup();
    for b in [&s.tx, &s.end, &s.ad] {
        for e in &b.elements {
            assert!(b.project(&s.disc, e).unwrap().sub(e).unwrap().max_abs() <= 1e-10 * e.max_abs());
        }
    }
}

#[test]
fn exact_forms_project_to_zero() {
    let s = setup();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for (b, c) in [(&s.tx, Coeff::TX), (&s.end, Coeff::EndE), (&s.ad, Coeff::AdE)] {
        let a = s.disc.random_field(FormKind::function(c), &mut r);
        let da = s.disc.dbar(a.kind).unwrap().apply(&a).unwrap();
        let p = b.project(&s.disc, &da).unwrap();
        assert!(s.disc.norm(&p) <= 1e-7 * s.disc.norm(&da), "{c:?}");
    }
}

#[test]
fn projection_rejects_wrong_kind() {
    let s = setup();
    let f = s.disc.zeros(FormKind::form01(Coeff::AdE));
    assert!(matches!(s.end.project(&s.disc, &f), Err(Error::KindMismatch { .. })));
}

#[test]
fn flat_spectrum_is_undecidable() {
    let eigs: Vec<f64> = (0..8).map(|k| 1.0 / (1.0 + k as f64)).collect();
    assert!(matches!(gap_rank(&eigs, "test"), Err(Error::GapUndecidable { .. })));
    let (rank, ratio) = gap_rank(&[3.0, 2.0, 1.0, 1e-14, 1e-15], "test").unwrap();
    assert_eq!(rank, 3);
    assert!(ratio >= 1e13);
}

#[test]
fn tangent_vectors_lie_in_span() {
    let s = setup();
    let tv = TangentVector::new(s.tx.combine(&s.disc, &[C64::new(0.3, 0.1), C64::new(-0.2, 0.0), C64::new(0.0, 1.0)]), s.end.elements[2].clone());
    assert!(tv.span_residual(&s.disc, &s.tx, &s.end).unwrap() <= 1e-7);
    let mut bad = tv.clone();
    bad.mu.values[0] += C64::new(1.0, 0.0);
    assert!(bad.span_residual(&s.disc, &s.tx, &s.end).unwrap() > 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn projection_is_idempotent_and_self_adjoint(seed in 0u64..10_000) {
        let s = setup();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for b in [&s.tx, &s.end] {
            let f = s.disc.random_field(b.field_kind(), &mut r);
            let g = s.disc.random_field(b.field_kind(), &mut r);
            let pf = b.project(&s.disc, &f).unwrap();
            let ppf = b.project(&s.disc, &pf).unwrap();
            prop_assert!(ppf.sub(&pf).unwrap().max_abs() <= 1e-12 * pf.max_abs().max(1e-300) * 10.0);
            let l = s.disc.inner(&pf, &g).unwrap();
            let rr = s.disc.inner(&f, &b.project(&s.disc, &g).unwrap()).unwrap();
            prop_assert!((l - rr).norm() <= 1e-10 * l.norm().max(1.0));
        }
    }
}
