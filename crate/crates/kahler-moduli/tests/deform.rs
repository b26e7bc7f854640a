use kahler_moduli::calculus::*;
use kahler_moduli::deform::*;
use kahler_moduli::harmonic::*;
use kahler_moduli::surface::Moebius;
use kahler_moduli::{Error, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

struct Setup {
    disc: Discretization,
    tx: HarmonicBasis,
    end: HarmonicBasis,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let disc = Discretization::bolza(3, 2, 7).unwrap();
        let tx = harmonic_basis(&disc, HarmonicKind::TX).unwrap();
        let end = harmonic_basis(&disc, HarmonicKind::EndE).unwrap();
        Setup { disc, tx, end }
    })
}

fn mu_only(s: &Setup, k: usize) -> TangentVector {
    TangentVector::new(s.tx.elements[k].clone(), s.disc.zeros(FormKind::form01(Coeff::EndE)))
}

fn nu_only(s: &Setup, k: usize) -> TangentVector {
    TangentVector::new(s.disc.zeros(FormKind::BELTRAMI), s.end.elements[k].clone())
}

fn deformed(s: &Setup, tv: &TangentVector, eps: f64, params: &GridParams) -> DeformedGroup {
    let c = modified_coefficient(&s.disc, tv, eps, params).unwrap();
    let m = solve_beltrami(&c, params).unwrap();
    deformed_generators(&m, &s.disc.group, FIT_TOL).unwrap()
}

/// Entry differences of the side pairings with the sign fixed by the base.
fn entry_shift(g: &Moebius, base: &Moebius) -> [C64; 4] {
    let (p, q) = (g.entries(), base.entries());
    let s = if p.iter().zip(&q).map(|(x, y)| (x - y).norm()).sum::<f64>() <= p.iter().zip(&q).map(|(x, y)| (x + y).norm()).sum::<f64>() { 1.0 } else { -1.0 };
    [0, 1, 2, 3].map(|i| p[i] * s - q[i])
}

#[test]
fn zero_coefficient_gives_identity() {
    let p = GridParams::default();
    let c = BeltramiCoefficient::from_fn(&p, |_| C64::new(0.0, 0.0)).unwrap();
    let m = solve_beltrami(&c, &p).unwrap();
    let err = m.grid.points().zip(&m.chi).map(|(z, x)| (z - x).norm()).fold(0.0, f64::max);
    assert!(err <= 1e-12, "{err}");
    assert_eq!(m.iterations, 0);
    let g = deformed_generators(&m, &setup().disc.group, FIT_TOL).unwrap();
    assert!(generator_perturbation(&g.group, &setup().disc.group) <= 1e-8);
    assert!(g.relator_residual <= 1e-10);
}

#[test]
fn constant_coefficient_on_a_ball_is_affine_inside() {
    // μ = c on |z| < r₀ has principal solution z + c z̄ inside and
    // z + c r₀²/z outside, so the pinned map is (z + c z̄)/(1 + c r₀²)
    let (c, r0) = (C64::new(0.06, 0.08), 0.5);
    let p = GridParams { trunc_radius: r0, ..GridParams::default() };
    let coeff = BeltramiCoefficient::from_fn(&p, |_| c).unwrap();
    let m = solve_beltrami(&coeff, &p).unwrap();
    assert!(m.residual_estimate <= 1e-10, "{}", m.residual_estimate);
    let fd = m.fd_residual(&coeff, |z| z.norm() < 0.25);
    assert!(fd <= 1e-6, "{fd}");
    assert!(m.normalization.pin_residual <= PIN_TOL);
    let scale = 1.0 + c * r0 * r0;
    for (z, x) in m.grid.points().zip(&m.chi).filter(|(z, _)| z.norm() < 0.25) {
        assert!((x - (z + c * z.conj()) / scale).norm() <= 1e-4, "{z}");
    }
}

#[test]
fn near_unit_coefficient_diverges() {
    let p = GridParams { trunc_radius: 0.9, max_iter: 200, ..GridParams::default() };
    let coeff = BeltramiCoefficient::from_fn(&p, |z| C64::from_polar(0.99, 3.0 * z.arg())).unwrap();
    match solve_beltrami(&coeff, &p) {
        Err(Error::SeriesDiverged { iterations, trace, .. }) => {
            assert_eq!(iterations, 200);
            assert_eq!(trace.len(), 200);
        }
        other => panic!("{other:?}"),
    }
    let bad = BeltramiCoefficient::from_fn(&p, |_| C64::new(1.0, 0.0)).unwrap();
    assert!(matches!(solve_beltrami(&bad, &p), Err(Error::EllipticityViolated(_))));
}

#[test]
fn coarse_grid_is_rejected() {
    let p = GridParams { cells_per_unit: 4, ..GridParams::default() };
    assert!(matches!(BeltramiCoefficient::from_fn(&p, |_| C64::new(0.0, 0.0)), Err(Error::GridTooCoarse(_))));
}

#[test]
fn modified_coefficient_sectors() {
    let s = setup();
    let tv = mu_only(s, 0);
    let f = modified_field(&s.disc, &tv, 0.1).unwrap();
    assert_eq!(f, s.tx.elements[0].scale(C64::new(0.1, 0.0)));
    let tv = nu_only(s, 1);
    let a = modified_field(&s.disc, &tv, 0.1).unwrap();
    let b = modified_field(&s.disc, &tv, 0.2).unwrap();
    assert!((b.max_abs() / a.max_abs() - 4.0).abs() <= 1e-10);
    // the oracle: −½s²·tr(ν²)/λ per triangle
    let mats = s.disc.form_matrices(&tv.nu);
    for (t, m) in mats.iter().enumerate() {
        let want = -0.5 * 0.01 * (m * m).trace() / s.disc.mesh.tri_density[t];
        assert!((a.values[t] - want).norm() <= 1e-15 * want.norm().max(1.0));
    }
    assert!(matches!(modified_field(&s.disc, &mu_only(s, 0), 100.0), Err(Error::EllipticityViolated(_))));
}

#[test]
fn sampled_coefficient_is_equivariant() {
    let s = setup();
    let c = modified_coefficient(&s.disc, &mu_only(s, 1), 0.01, &GridParams::default()).unwrap();
    assert!(c.equivariance_residual <= 1e-7, "{}", c.equivariance_residual);
    assert!(c.sup_norm < 0.01);
}

#[test]
fn relator_residual_is_first_order() {
    let s = setup();
    let p = GridParams::default();
    let tv = mu_only(s, 0);
    let a = deformed(s, &tv, 1e-2, &p);
    let b = deformed(s, &tv, 5e-3, &p);
    assert!(a.relator_residual <= 1e-4, "{}", a.relator_residual);
    let ratio = a.relator_residual / b.relator_residual;
    assert!((ratio / 2.0 - 1.0).abs() <= 0.2, "{ratio}");
    let pa = generator_perturbation(&a.group, &s.disc.group);
    let pb = generator_perturbation(&b.group, &s.disc.group);
    assert!((pa / pb / 2.0 - 1.0).abs() <= 0.2, "{pa} {pb}");
    assert!(a.fit_residual <= 1e-5 && a.condition.is_finite());
}

#[test]
fn opposite_deformations_cancel_to_second_order() {
    let s = setup();
    let p = GridParams::default();
    let tv = mu_only(s, 2);
    let eps = 1e-2;
    let plus = deformed(s, &tv, eps, &p);
    let minus = deformed(s, &tv, -eps, &p);
    for k in 0..4 {
        let base = s.disc.group.side_pairings[k];
        let (a, b) = (entry_shift(&plus.group.side_pairings[k], &base), entry_shift(&minus.group.side_pairings[k], &base));
        let first = a.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let second = a.iter().zip(&b).map(|(x, y)| (x + y).norm()).fold(0.0, f64::max);
        assert!(second <= 0.05 * first, "side {k}: {second} vs {first}");
    }
}

#[test]
fn fit_residual_decays_with_truncation_radius() {
    // above ~0.9 the grid resolution, not truncation, dominates the residual
    let s = setup();
    let tv = mu_only(s, 0);
    let res: Vec<f64> = [0.7, 0.8, 0.9]
        .iter()
        .map(|&r| {
            let p = GridParams { trunc_radius: r, ..GridParams::default() };
            let c = modified_coefficient(&s.disc, &tv, 1e-2, &p).unwrap();
            deformed_generators(&solve_beltrami(&c, &p).unwrap(), &s.disc.group, 1.0).unwrap().fit_residual
        })
        .collect();
    assert!(res[0] > res[1] && res[1] > res[2], "{res:?}");
}

#[test]
fn corrupted_coefficient_is_not_moebius() {
    let s = setup();
    let p = GridParams::default();
    // an off-centre blob ignores the group action
    let coeff = BeltramiCoefficient::from_fn(&p, |z| if (z - C64::new(0.3, 0.1)).norm() < 0.25 { C64::new(0.3, 0.0) } else { C64::new(0.0, 0.0) }).unwrap();
    let m = solve_beltrami(&coeff, &p).unwrap();
    assert!(matches!(deformed_generators(&m, &s.disc.group, FIT_TOL), Err(Error::FitResidualTooLarge { .. })));
}

#[test]
fn mapping_grid_round_trips() {
    let s = setup();
    let p = GridParams { cells_per_unit: 40, ..GridParams::default() };
    let c = modified_coefficient(&s.disc, &mu_only(s, 0), 0.02, &p).unwrap();
    let m = solve_beltrami(&c, &p).unwrap();
    let dir = std::env::temp_dir().join(format!("km-grid-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let base = dir.join("chi");
    m.write(&base).unwrap();
    let back = MappingGrid::read(&base).unwrap();
    assert_eq!(back, m);
    let header: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(base.with_extension("json")).unwrap()).unwrap();
    assert_eq!(header["nx"], m.grid.n());
    assert_eq!(header["spacing"], m.grid.spacing);
    assert!(header["bounds"].as_array().unwrap().len() == 4 && header["residual_estimate"].is_number());
    std::fs::write(base.with_extension("bin"), [0u8; 16]).unwrap();
    assert!(matches!(MappingGrid::read(&base), Err(Error::Format(_))));
    std::fs::remove_dir_all(&dir).unwrap();
}

fn rel_diff(disc: &Discretization, a: &DiscreteOperator, b: &DiscreteOperator, seed: u64) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..4 {
        let f = disc.random_field(a.domain, &mut r);
        let (x, y) = (a.apply(&f).unwrap(), b.apply(&f).unwrap());
        worst = worst.max(x.sub(&y).unwrap().max_abs() / x.max_abs().max(y.max_abs()).max(1e-300));
    }
    worst
}

fn centred_difference(disc: &Discretization, tv: &TangentVector, which: DerivativeTarget, eps: f64) -> DiscreteOperator {
    let p = operator_family(disc, tv, which, eps).unwrap();
    let m = operator_family(disc, tv, which, -eps).unwrap();
    DiscreteOperator::new("fd", p.matrix.add(&m.matrix, C64::new(-1.0, 0.0)).scale(C64::new(0.5 / eps, 0.0)), p.domain, p.codomain)
}

#[test]
fn operator_derivatives_match_finite_differences() {
    let s = setup();
    let mixed = TangentVector::new(s.tx.elements[1].clone(), s.end.elements[3].clone());
    for tv in [mu_only(s, 0), nu_only(s, 2), mixed] {
        for which in [DerivativeTarget::DbarSections, DerivativeTarget::DbarstarForms] {
            let l = operator_derivative(&s.disc, &tv, which).unwrap().operator;
            let fd = centred_difference(&s.disc, &tv, which, 1e-4);
            let d = rel_diff(&s.disc, &l, &fd, 5);
            assert!(d <= 1e-6, "{which:?}: {d}");
        }
    }
}

#[test]
fn mu_direction_is_minus_mu_partial() {
    let s = setup();
    let tv = mu_only(s, 0);
    let l = operator_derivative(&s.disc, &tv, DerivativeTarget::DbarSections).unwrap().operator;
    let sec = FormKind::function(Coeff::EndE);
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let f = s.disc.random_field(sec, &mut r);
    let df = s.disc.partial(sec).unwrap().apply(&f).unwrap();
    let want = apply_primitive(&s.disc, Primitive::MulBeltrami, &[&tv.mu, &df]).unwrap().field().unwrap().scale(C64::new(-1.0, 0.0));
    assert!(l.apply(&f).unwrap().sub(&want).unwrap().max_abs() <= 1e-12 * want.max_abs());
}

#[test]
fn nu_direction_kills_the_identity_section() {
    let s = setup();
    let l = operator_derivative(&s.disc, &nu_only(s, 0), DerivativeTarget::DbarSections).unwrap().operator;
    let act = s.disc.action(Coeff::EndE);
    let id = act.from_matrix(&kahler_moduli::bundle::CMat::identity(2, 2));
    let sec = FormKind::function(Coeff::EndE);
    let f = Field { kind: sec, values: (0..s.disc.dof(sec) / id.len()).flat_map(|_| id.clone()).collect() };
    let out = l.apply(&f).unwrap();
    assert!(out.max_abs() <= 1e-13, "{}", out.max_abs());
}

#[test]
fn vanishing_variations_and_adjoint_structure() {
    let s = setup();
    let tv = TangentVector::new(s.tx.elements[0].clone(), s.end.elements[1].clone());
    for which in [DerivativeTarget::DbarForms, DerivativeTarget::DbarstarSections] {
        assert_eq!(operator_derivative(&s.disc, &tv, which).unwrap().operator.matrix.nnz(), 0);
    }
    let a = operator_derivative(&s.disc, &tv, DerivativeTarget::DbarSections).unwrap().operator;
    let b = operator_derivative(&s.disc, &tv, DerivativeTarget::DbarstarForms).unwrap().operator;
    assert!(rel_diff(&s.disc, &s.disc.adjoint(&a), &b, 9) <= 1e-12);
    let bad = TangentVector::new(s.end.elements[0].clone(), s.end.elements[1].clone());
    assert!(matches!(operator_derivative(&s.disc, &bad, DerivativeTarget::DbarSections), Err(Error::KindMismatch { .. })));
}

#[test]
fn kodaira_spencer_at_the_origin_is_projection() {
    let s = setup();
    let tv = TangentVector::new(s.tx.elements[0].clone(), s.end.elements[2].clone());
    let zero = TangentVector::zero(&s.disc, Coeff::EndE);
    let ks = kodaira_spencer(&s.disc, &s.tx, &s.end, &tv, None, &zero).unwrap();
    assert!(ks.mu.sub(&tv.mu).unwrap().max_abs() <= 1e-8 && ks.nu.sub(&tv.nu).unwrap().max_abs() <= 1e-8);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let a = s.disc.random_field(FormKind::function(Coeff::EndE), &mut r);
    let da = s.disc.dbar(a.kind).unwrap().apply(&a).unwrap();
    let noisy = TangentVector::new(tv.mu.clone(), tv.nu.axpy(C64::new(1.0, 0.0), &da).unwrap());
    let ks = kodaira_spencer(&s.disc, &s.tx, &s.end, &noisy, None, &zero).unwrap();
    assert!(s.disc.norm(&ks.nu.sub(&tv.nu).unwrap()) <= 1e-7 * s.disc.norm(&da));
    let at = nu_only(s, 0);
    assert!(matches!(kodaira_spencer(&s.disc, &s.tx, &s.end, &tv, None, &at), Err(Error::MissingChiData)));
}

#[test]
fn kodaira_spencer_near_the_origin() {
    // at (0, εν) the chart map moves by O(ε²), so the Beltrami component of
    // KS(μ₁ ⊕ 0) moves by O(ε²)
    let s = setup();
    let p = GridParams { cells_per_unit: 60, ..GridParams::default() };
    let tv = mu_only(s, 1);
    let shift = |eps: f64| {
        let at = TangentVector::new(s.disc.zeros(FormKind::BELTRAMI), s.end.elements[0].scale(C64::new(eps, 0.0)));
        let chart = ChartData::first_order(&s.disc, &at, &p).unwrap();
        let ks = kodaira_spencer(&s.disc, &s.tx, &s.end, &tv, Some(&chart), &at).unwrap();
        s.disc.norm(&ks.mu.sub(&tv.mu).unwrap())
    };
    let (a, b) = (shift(1e-2), shift(5e-3));
    assert!(a <= 1e-3, "{a}");
    assert!((a / b / 4.0 - 1.0).abs() <= 0.25, "{a} {b}");
}
