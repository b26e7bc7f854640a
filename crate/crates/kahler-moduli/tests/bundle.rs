use kahler_moduli::bundle::*;
use kahler_moduli::surface::bolza_group;
use kahler_moduli::{Error, C64};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;

fn relator_by_hand(u: &[DMatrix<C64>]) -> DMatrix<C64> {
    let c = |a: &DMatrix<C64>, b: &DMatrix<C64>| {
        a * b * a.clone().try_inverse().unwrap() * b.clone().try_inverse().unwrap()
    };
    c(&u[0], &u[1]) * c(&u[2], &u[3])
}

#[test]
fn seed_seven_rank_two_satisfies_relator() {
    let rep = random_unitary_rep(&bolza_group(), 2, 0, 7).unwrap();
    let r = relator_by_hand(&rep.images);
    assert!((r - DMatrix::identity(2, 2)).norm() <= 1e-10);
    assert!(rep.unitarity_defect() <= 1e-12);
    let (res, margin) = rep_residuals(&rep);
    assert!(res <= 1e-10);
    assert!(margin >= 1e-3);
}

#[test]
fn margin_matches_independent_commutant_eigensolve() {
    let rep = random_unitary_rep(&bolza_group(), 2, 0, 7).unwrap();
    // oracle: real 32×32 symmetric embedding of the 16×16 Hermitian operator
    let mut h = DMatrix::<C64>::zeros(4, 4);
    for u in &rep.images {
        let mut k = DMatrix::<C64>::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    for q in 0..2 {
                        k[(2 * i + p, 2 * j + q)] = u[(i, j)].conj() * u[(p, q)];
                    }
                }
            }
        }
        let d = DMatrix::<C64>::identity(4, 4) - k;
        h += d.adjoint() * d;
    }
    let mut r = DMatrix::<f64>::zeros(8, 8);
    for i in 0..4 {
        for j in 0..4 {
            r[(i, j)] = h[(i, j)].re;
            r[(i + 4, j + 4)] = h[(i, j)].re;
            r[(i, j + 4)] = -h[(i, j)].im;
            r[(i + 4, j)] = h[(i, j)].im;
        }
    }
    let mut ev: Vec<f64> = r.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // each eigenvalue appears twice in the real embedding
    assert!(ev[0].abs() < 1e-10 && ev[1].abs() < 1e-10);
    assert!((ev[2] - rep.irreducibility_margin()).abs() < 1e-9);
    assert!(ev[2] > 1e-3, "commutant nullspace is exactly the scalars");
}

#[test]
fn identity_images_have_zero_margin() {
    let id = DMatrix::<C64>::identity(2, 2);
    let rep = UnitaryRep { n: 2, k: 0, images: vec![id.clone(); 4], seed: 0 };
    assert!(rep.irreducibility_margin().abs() < 1e-14);
}

#[test]
fn rank_one_is_a_character() {
    let rep = random_unitary_rep(&bolza_group(), 1, 0, 3).unwrap();
    assert_eq!(rep.irreducibility_margin(), f64::INFINITY);
    assert!(rep.relator_residual() < 1e-14);
    // h⁰(End E) = 1: the commutant operator of a character vanishes identically
    let spec = commutant_spectrum(&rep.images);
    assert_eq!(spec.len(), 1);
    assert!(spec[0].abs() < 1e-14);
}

#[test]
fn nonzero_degree_rejected() {
    assert_eq!(random_unitary_rep(&bolza_group(), 2, 1, 0).unwrap_err(), Error::UnsupportedDegree(1));
}

#[test]
fn rank_three_solves() {
    let rep = random_unitary_rep(&bolza_group(), 3, 0, 11).unwrap();
    assert!(rep.relator_residual() <= 1e-10);
    assert!(rep.irreducibility_margin() > 1e-3);
}

#[test]
fn json_round_trip() {
    let rep = random_unitary_rep(&bolza_group(), 2, 0, 7).unwrap();
    let s = rep.to_json();
    let back = UnitaryRep::from_json(&s).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn end_action_matches_kronecker_oracle() {
    let rep = random_unitary_rep(&bolza_group(), 2, 0, 7).unwrap();
    let act = HolonomyAction::new(Fiber::EndE, 2);
    let u = &rep.images[1];
    let m = DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 2.0), C64::new(-0.5, 0.0), C64::new(0.3, -1.0), C64::new(0.0, 0.7)]);
    let coords = act.from_matrix(&m);
    let moved = act.to_matrix(&(act.matrix(u) * nalgebra::DVector::from_vec(coords)).as_slice().to_vec());
    // vec(U M U*) = (Ū ⊗ U) vec(M), column-major
    let vm = DMatrix::from_column_slice(4, 1, m.as_slice());
    let kr = u.conjugate().kronecker(u) * vm;
    let expect = DMatrix::from_column_slice(2, 2, kr.as_slice());
    assert!((moved - expect).norm() < 1e-12);
}

#[test]
fn adjoint_actions_are_unitary_and_real() {
    let rep = random_unitary_rep(&bolza_group(), 3, 0, 5).unwrap();
    for fiber in [Fiber::EndE, Fiber::AdE, Fiber::Fundamental] {
        let act = HolonomyAction::new(fiber, 3);
        for u in &rep.images {
            let a = act.matrix(u);
            let d = a.nrows();
            assert!((a.adjoint() * &a - DMatrix::identity(d, d)).norm() < 1e-12);
            if fiber != Fiber::Fundamental {
                assert!(a.iter().all(|v| v.im.abs() < 1e-14));
            }
        }
    }
    assert_eq!(HolonomyAction::new(Fiber::AdE, 3).dim(), 8);
}

#[test]
fn trace_free_basis_is_orthonormal() {
    let b = hermitian_basis(3);
    for i in 0..9 {
        for j in 0..9 {
            let v = frobenius(&b[i], &b[j]);
            assert!((v - if i == j { 1.0 } else { 0.0 }).norm() < 1e-14);
        }
        if i > 0 {
            assert!(b[i].trace().norm() < 1e-14);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn conjugation_invariance(seed in 0u64..1000) {
        let rep = random_unitary_rep(&bolza_group(), 2, 0, 7).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = haar_unitary(2, &mut rng);
        let c = rep.conjugate(&w);
        let (r0, m0) = rep_residuals(&rep);
        let (r1, m1) = rep_residuals(&c);
        prop_assert!((r0 - r1).abs() <= 1e-10);
        prop_assert!((m0 - m1).abs() <= 1e-10);
    }
}
