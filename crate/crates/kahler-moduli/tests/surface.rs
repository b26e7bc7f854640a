use kahler_moduli::surface::*;
use kahler_moduli::{Error, C64};
use proptest::prelude::*;
use std::f64::consts::PI;

type M2 = [[C64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn inv(a: &M2) -> M2 {
    [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]]
}

/// Textbook octagon side pairings, built without the library.
fn textbook_pairing(k: usize) -> M2 {
    let ch = 1.0 + 2f64.sqrt();
    let sh = (2.0 + 2.0 * 2f64.sqrt()).sqrt();
    let e = C64::from_polar(1.0, k as f64 * PI / 4.0);
    [[C64::new(ch, 0.0), e * sh], [e.conj() * sh, C64::new(ch, 0.0)]]
}

#[test]
fn bolza_relator_against_textbook_matrices() {
    let g: Vec<M2> = (0..4).map(textbook_pairing).collect();
    // g0 g1⁻¹ g2 g3⁻¹ g0⁻¹ g1 g2⁻¹ g3
    let seq = [g[0], inv(&g[1]), g[2], inv(&g[3]), inv(&g[0]), g[1], inv(&g[2]), g[3]];
    let prod = seq.iter().fold([[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]], |acc, m| mul(&acc, m));
    let dev = (prod[0][0] - 1.0).norm().max(prod[0][1].norm()).max(prod[1][0].norm()).max((prod[1][1] - 1.0).norm());
    assert!(dev < 1e-10, "textbook relator {dev}");
    let grp = bolza_group();
    for k in 0..4 {
        let m = grp.side_pairings[k];
        let t = textbook_pairing(k);
        let d = (m.a - t[0][0]).norm().max((m.b - t[0][1]).norm()).max((m.c - t[1][0]).norm()).max((m.d - t[1][1]).norm());
        assert!(d < 1e-12, "side pairing {k} differs by {d}");
    }
    assert_eq!(grp.generators.len(), 4);
    assert!(grp.relator_residual() <= 1e-10);
}

#[test]
fn generators_are_hyperbolic() {
    let grp = bolza_group();
    for g in &grp.generators {
        let tr = g.a + g.d;
        assert!(tr.norm() > 2.0, "trace {tr}");
        assert!((g.det() - 1.0).norm() < 1e-12);
    }
}

#[test]
fn side_words_reproduce_side_pairings() {
    let grp = bolza_group();
    for k in 0..4 {
        assert!(grp.word(&grp.side_words[k]).distance(&grp.side_pairings[k]) < 1e-12);
    }
}

#[test]
fn other_genus_is_unsupported() {
    assert_eq!(fuchsian_group(3).unwrap_err(), Error::UnsupportedGenus(3));
    assert!(fuchsian_group(2).is_ok());
}

#[test]
fn coarse_mesh_has_eight_pairings_and_rough_area() {
    let grp = bolza_group();
    let m = mesh_fundamental_domain(&grp, 0).unwrap();
    assert_eq!(m.pairings.len(), 8);
    assert_eq!(m.num_triangles(), 8);
    // oracle: Gauss–Bonnet on each geodesic triangle, angles from the
    // hyperbolic law of cosines applied to distances
    let dist = |p: C64, q: C64| 2.0 * ((p - q).norm() / (1.0 - p.conj() * q).norm()).atanh();
    let mut area = 0.0;
    for t in &m.triangles {
        let z: Vec<C64> = t.iter().map(|&v| m.vertices[v]).collect();
        let side = |i: usize| dist(z[(i + 1) % 3], z[(i + 2) % 3]);
        let (a, b, c) = (side(0), side(1), side(2));
        let ang = |a: f64, b: f64, c: f64| ((b.cosh() * c.cosh() - a.cosh()) / (b.sinh() * c.sinh())).acos();
        area += PI - ang(a, b, c) - ang(b, c, a) - ang(c, a, b);
    }
    assert!((area - 4.0 * PI).abs() / (4.0 * PI) < 0.05, "oracle area {area}");
    let rep = validate_mesh(&m);
    assert!(rep.passed, "{:?}", rep.failures);
    assert!(rep.area_error <= 0.05);
}

#[test]
fn level_three_gauss_bonnet() {
    let m = mesh_fundamental_domain(&bolza_group(), 3).unwrap();
    assert!((m.hyperbolic_area() - 4.0 * PI).abs() / (4.0 * PI) < 1e-3);
    let rep = validate_mesh(&m);
    assert!(rep.passed, "{:?}", rep.failures);
    assert!(rep.max_pairing_residual <= 1e-9);
}

#[test]
fn level_nine_rejected() {
    assert_eq!(mesh_fundamental_domain(&bolza_group(), 9).unwrap_err(), Error::LevelOutOfRange(9));
}

#[test]
fn corrupted_pairing_is_named() {
    let mut m = mesh_fundamental_domain(&bolza_group(), 2).unwrap();
    let p = &mut m.pairings[3];
    p.partner.swap(0, 1);
    let name = format!("pairing edge ({}, {})", p.edge[0], p.edge[1]);
    let rep = validate_mesh(&m);
    assert!(!rep.passed);
    assert!(rep.failures.iter().any(|f| f.contains(&name)), "{:?}", rep.failures);
}

#[test]
fn quadrature_area_converges_geometrically() {
    let grp = bolza_group();
    let errs: Vec<f64> = (1..=4)
        .map(|l| (mesh_fundamental_domain(&grp, l).unwrap().quadrature_area() - 4.0 * PI).abs())
        .collect();
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 3.0, "ratio {}", w[0] / w[1]);
    }
}

#[test]
fn vertex_counts_match_euler_characteristic() {
    let grp = bolza_group();
    for l in 0..=3 {
        let m = mesh_fundamental_domain(&grp, l).unwrap();
        let f = m.num_triangles() as i64;
        let v = m.rep_vertices().len() as i64;
        // each quotient edge is shared by two triangles: E = 3F/2, V − E + F = −2
        assert_eq!(v - 3 * f / 2 + f, -2, "level {l}");
    }
}

#[test]
fn pairing_closure_on_orbits() {
    let m = mesh_fundamental_domain(&bolza_group(), 3).unwrap();
    for (v, o) in m.orbits.iter().enumerate() {
        let back = o.to_rep.apply(m.vertices[v]);
        assert!((back - m.vertices[o.rep]).norm() < 1e-8, "vertex {v}");
    }
    // the eight corners form one orbit
    let r = m.orbits[1].rep;
    assert!((1..=8).all(|c| m.orbits[c].rep == r));
}

#[test]
fn orbit_words_evaluate_to_stored_maps() {
    let grp = bolza_group();
    let m = mesh_fundamental_domain(&grp, 2).unwrap();
    for o in &m.orbits {
        assert!(grp.word(&o.word).distance(&o.to_rep) < 1e-9);
    }
}

#[test]
fn json_round_trip() {
    let grp = bolza_group();
    let m = mesh_fundamental_domain(&grp, 2).unwrap();
    let s = m.to_json();
    let back = SurfaceMesh::from_json(&s, &grp).unwrap();
    assert_eq!(back.triangles, m.triangles);
    for (p, q) in back.pairings.iter().zip(&m.pairings) {
        assert_eq!((p.edge, p.partner, &p.word, p.side), (q.edge, q.partner, &q.word, q.side));
        assert!(p.map.distance(&q.map) < 1e-12);
    }
    assert_eq!(back.to_json(), s);
    assert!(validate_mesh(&back).passed);
}

#[test]
fn fold_lands_in_octagon() {
    let grp = bolza_group();
    let z = grp.word(&[1, 3, -2]).apply(C64::new(0.1, 0.2));
    let (w, g) = fold_to_domain(&grp, z);
    assert!((g.apply(z) - w).norm() < 1e-10);
    assert!((w - C64::new(0.1, 0.2)).norm() < 1e-9);
}

proptest! {
    #[test]
    fn cayley_conversion_is_an_involution(k in 0usize..4, w in proptest::collection::vec(-4i32..=4, 0..5)) {
        let grp = bolza_group();
        let word: Vec<i32> = w.into_iter().filter(|&x| x != 0).collect();
        let g = grp.word(&word).compose(&grp.side_pairings[k]);
        let h = g.to_half_plane();
        for e in h.entries() {
            prop_assert!(e.im.abs() < 1e-9 * (1.0 + e.norm()));
        }
        prop_assert!(h.to_disk().distance(&g) <= 1e-12 * (1.0 + g.a.norm()).powi(2));
    }

    #[test]
    fn composition_is_associative(i in 0usize..4, j in 0usize..4, k in 0usize..4) {
        let grp = bolza_group();
        let (a, b, c) = (grp.generators[i], grp.generators[j], grp.generators[k].inverse());
        let l = a.compose(&b).compose(&c);
        let r = a.compose(&b.compose(&c));
        prop_assert!(l.distance(&r) < 1e-9);
        prop_assert!((l.det() - 1.0).norm() < 1e-9);
    }
}
