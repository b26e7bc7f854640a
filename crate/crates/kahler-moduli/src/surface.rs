//! Hyperbolic surface model: Möbius transforms, the genus-2 octagon group,
//! and a triangulated fundamental domain with side pairings.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Which model of the hyperbolic plane a transform acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    HalfPlane,
    Disk,
}

/// `z ↦ (az + b)/(cz + d)` with unit determinant.
///
/// Disk-model entries are complex (SU(1,1)); half-plane entries are real up
/// to round-off.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moebius {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
    pub model: Model,
}

impl Default for Moebius {
    fn default() -> Self {
        Self::identity(Model::Disk)
    }
}

/// Cayley map from the disk to the upper half-plane.
pub fn cayley(z: C64) -> C64 {
    C64::i() * (1.0 + z) / (1.0 - z)
}

/// Inverse Cayley map.
pub fn cayley_inv(w: C64) -> C64 {
    (w - C64::i()) / (w + C64::i())
}

impl Moebius {
    pub fn new(a: C64, b: C64, c: C64, d: C64, model: Model) -> Self {
        Self { a, b, c, d, model }
    }

    pub fn identity(model: Model) -> Self {
        let (o, z) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        Self::new(o, z, z, o, model)
    }

    pub fn apply(&self, z: C64) -> C64 {
        (self.a * z + self.b) / (self.c * z + self.d)
    }

    /// Complex derivative at `z`.
    pub fn derivative(&self, z: C64) -> C64 {
        let den = self.c * z + self.d;
        self.det() / (den * den)
    }

    pub fn det(&self) -> C64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> C64 {
        self.a + self.d
    }

    pub fn is_hyperbolic(&self) -> bool {
        self.trace().norm() > 2.0
    }

    /// Matrix product `self · other`, i.e. the composition `self ∘ other`.
    pub fn compose(&self, o: &Moebius) -> Moebius {
        Moebius::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
            self.model,
        )
    }

    pub fn inverse(&self) -> Moebius {
        let det = self.det();
        Moebius::new(self.d / det, -self.b / det, -self.c / det, self.a / det, self.model)
    }

    pub fn entries(&self) -> [C64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Max entry difference, taking the sign ambiguity of PSL(2) into account.
    pub fn distance(&self, o: &Moebius) -> f64 {
        let (p, q) = (self.entries(), o.entries());
        let plus = p.iter().zip(&q).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let minus = p.iter().zip(&q).map(|(x, y)| (x + y).norm()).fold(0.0, f64::max);
        plus.min(minus)
    }

    pub fn to_half_plane(&self) -> Moebius {
        match self.model {
            Model::HalfPlane => *self,
            Model::Disk => {
                // C = [[i, i], [-1, 1]] with C⁻¹ = [[1, -i], [1, i]] / (2i)
                let i = C64::i();
                let cm = Moebius::new(i, i, C64::new(-1.0, 0.0), C64::new(1.0, 0.0), Model::HalfPlane);
                let s = 1.0 / (2.0 * i);
                let ci = Moebius::new(s, -i * s, s, i * s, Model::HalfPlane);
                let mut m = *self;
                m.model = Model::HalfPlane;
                cm.compose(&m).compose(&ci)
            }
        }
    }

    pub fn to_disk(&self) -> Moebius {
        match self.model {
            Model::Disk => *self,
            Model::HalfPlane => {
                let i = C64::i();
                let s = 1.0 / (2.0 * i);
                let ci = Moebius::new(s, -i * s, s, i * s, Model::Disk);
                let cm = Moebius::new(i, i, C64::new(-1.0, 0.0), C64::new(1.0, 0.0), Model::Disk);
                let mut m = *self;
                m.model = Model::Disk;
                ci.compose(&m).compose(&cm)
            }
        }
    }
}

/// Inverse of a word in the generators (letters are ±(index+1)).
pub fn invert_word(w: &[i32]) -> Vec<i32> {
    w.iter().rev().map(|x| -x).collect()
}

/// Free reduction of a word.
pub fn reduce_word(w: &[i32]) -> Vec<i32> {
    let mut out: Vec<i32> = Vec::with_capacity(w.len());
    for &x in w {
        if out.last() == Some(&-x) {
            out.pop();
        } else {
            out.push(x);
        }
    }
    out
}

/// Surface group in PSL(2) with a symplectic generating set.
#[derive(Clone, Debug)]
pub struct FuchsianGroup {
    pub genus: usize,
    /// `a₁, b₁, …, a_g, b_g`.
    pub generators: Vec<Moebius>,
    /// Relator word; letters are ±(generator index + 1).
    pub relator: Vec<i32>,
    /// Octagon side pairings `g_k`, mapping side `k+4` onto side `k`.
    pub side_pairings: Vec<Moebius>,
    /// Words for `g_k` in the symplectic generators.
    pub side_words: Vec<Vec<i32>>,
}

impl FuchsianGroup {
    /// Evaluates a word in the symplectic generators.
    pub fn word(&self, w: &[i32]) -> Moebius {
        let model = self.generators[0].model;
        w.iter().fold(Moebius::identity(model), |acc, &x| {
            let g = self.generators[x.unsigned_abs() as usize - 1];
            acc.compose(&if x > 0 { g } else { g.inverse() })
        })
    }

    /// Distance of the relator image from ±I.
    pub fn relator_residual(&self) -> f64 {
        let r = self.word(&self.relator);
        r.distance(&Moebius::identity(r.model))
    }

    pub fn to_half_plane(&self) -> FuchsianGroup {
        let mut g = self.clone();
        g.generators = g.generators.iter().map(|m| m.to_half_plane()).collect();
        g.side_pairings = g.side_pairings.iter().map(|m| m.to_half_plane()).collect();
        g
    }
}

/// Corner radius of the regular octagon with interior angles π/4.
pub fn octagon_corner_radius() -> f64 {
    2f64.powf(-0.25)
}

/// Corner `j` of the octagon (angle π/8 + jπ/4).
pub fn octagon_corner(j: usize) -> C64 {
    C64::from_polar(octagon_corner_radius(), PI / 8.0 + j as f64 * PI / 4.0)
}

/// Genus-2 regular-octagon group in the disk model.
pub fn bolza_group() -> FuchsianGroup {
    let ch = 1.0 + 2f64.sqrt();
    let sh = (ch * ch - 1.0).sqrt();
    let t = Moebius::new(C64::new(ch, 0.0), C64::new(sh, 0.0), C64::new(sh, 0.0), C64::new(ch, 0.0), Model::Disk);
    let rot = |th: f64| {
        let e = C64::from_polar(1.0, th / 2.0);
        Moebius::new(e, C64::new(0.0, 0.0), C64::new(0.0, 0.0), e.conj(), Model::Disk)
    };
    let g: Vec<Moebius> = (0..4)
        .map(|k| {
            let th = k as f64 * PI / 4.0;
            rot(th).compose(&t).compose(&rot(-th))
        })
        .collect();
    // symplectic generators expressed through the side pairings
    let a1 = g[0];
    let a2 = g[1].inverse().compose(&g[2]);
    let b1 = a2.compose(&g[3].inverse());
    let b2 = g[3].inverse().compose(&g[1]);
    FuchsianGroup {
        genus: 2,
        generators: vec![a1, b1, a2, b2],
        relator: vec![1, 2, -1, -2, 3, 4, -3, -4],
        side_pairings: g,
        side_words: vec![vec![1], vec![-2, 3, 4], vec![-2, 3, 4, 3], vec![-2, 3]],
    }
}

/// Generic constructor; only genus 2 is provided.
pub fn fuchsian_group(genus: usize) -> Result<FuchsianGroup> {
    if genus == 2 {
        Ok(bolza_group())
    } else {
        Err(Error::UnsupportedGenus(genus))
    }
}

/// Hyperbolic geodesic midpoint of two disk points.
pub fn geodesic_midpoint(a: C64, b: C64) -> C64 {
    let bp = (b - a) / (1.0 - a.conj() * b);
    let r = bp.norm();
    let m = if r == 0.0 { C64::new(0.0, 0.0) } else { bp / r * (r.atanh() / 2.0).tanh() };
    (m + a) / (1.0 + a.conj() * m)
}

/// Hyperbolic interior angle at `a` of the geodesic triangle `(a, b, c)`.
pub fn hyperbolic_angle(a: C64, b: C64, c: C64) -> f64 {
    // the map z ↦ (z−a)/(1−āz) has a positive real derivative at a
    let t1 = (b - a) / (1.0 - a.conj() * b);
    let t2 = (c - a) / (1.0 - a.conj() * c);
    (t2 / t1).arg().abs()
}

/// Disk-model conformal density 4/(1−|z|²)².
pub fn disk_density(z: C64) -> f64 {
    4.0 / (1.0 - z.norm_sqr()).powi(2)
}

/// One identified boundary edge.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Pairing {
    pub edge: [usize; 2],
    pub partner: [usize; 2],
    pub word: Vec<i32>,
    /// Octagon side the edge lies on.
    pub side: usize,
    #[serde(skip)]
    pub map: Moebius,
}

/// Orbit data of a vertex under the side identifications.
#[derive(Clone, Debug)]
pub struct VertexOrbit {
    /// Lowest vertex index in the orbit.
    pub rep: usize,
    /// Group element mapping this vertex onto `rep`.
    pub to_rep: Moebius,
    /// Its word in the symplectic generators.
    pub word: Vec<i32>,
}

#[derive(Clone, Debug)]
pub struct SurfaceMesh {
    pub vertices: Vec<C64>,
    /// Counter-clockwise index triples.
    pub triangles: Vec<[usize; 3]>,
    pub pairings: Vec<Pairing>,
    /// Per-vertex disk density.
    pub density: Vec<f64>,
    pub level: usize,
    /// Per-triangle density: geodesic-triangle area over flat area.
    pub tri_density: Vec<f64>,
    /// Flat (chart) area of each triangle.
    pub tri_area: Vec<f64>,
    pub orbits: Vec<VertexOrbit>,
    /// Bitmask of octagon sides each vertex lies on.
    pub vertex_sides: Vec<u8>,
    pub genus: usize,
}

/// Partner side of octagon side `s`.
pub fn partner_side(s: usize) -> usize {
    (s + 4) % 8
}

/// Element mapping side `s` onto its partner, with its word.
pub fn side_map(group: &FuchsianGroup, s: usize) -> (Moebius, Vec<i32>) {
    if s >= 4 {
        (group.side_pairings[s - 4], group.side_words[s - 4].clone())
    } else {
        (group.side_pairings[s].inverse(), invert_word(&group.side_words[s]))
    }
}

pub fn mesh_fundamental_domain(group: &FuchsianGroup, level: usize) -> Result<SurfaceMesh> {
    if level > 8 {
        return Err(Error::LevelOutOfRange(level));
    }
    if group.genus != 2 {
        return Err(Error::UnsupportedGenus(group.genus));
    }
    let mut verts: Vec<C64> = vec![C64::new(0.0, 0.0)];
    verts.extend((0..8).map(octagon_corner));
    let mut vsides: Vec<u8> = vec![0];
    // corner j lies on sides j and j+1
    vsides.extend((0..8).map(|j| (1u8 << j) | (1u8 << ((j + 1) % 8))));
    let corner = |j: usize| 1 + j % 8;
    let mut tris: Vec<[usize; 3]> = (0..8).map(|k| [0, corner(k + 7), corner(k)]).collect();
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut side: HashMap<(usize, usize), usize> = (0..8).map(|k| (key(corner(k + 7), corner(k)), k)).collect();
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut nside = HashMap::new();
        let mut nt = Vec::with_capacity(4 * tris.len());
        let mut getm = |a: usize, b: usize, verts: &mut Vec<C64>, vsides: &mut Vec<u8>| -> usize {
            let k = key(a, b);
            if let Some(&m) = mid.get(&k) {
                return m;
            }
            verts.push(geodesic_midpoint(verts[a], verts[b]));
            let m = verts.len() - 1;
            mid.insert(k, m);
            if let Some(&s) = side.get(&k) {
                vsides.push(1 << s);
                nside.insert(key(a, m), s);
                nside.insert(key(b, m), s);
            } else {
                vsides.push(0);
            }
            m
        };
        for &[a, b, c] in &tris {
            let ab = getm(a, b, &mut verts, &mut vsides);
            let bc = getm(b, c, &mut verts, &mut vsides);
            let ca = getm(c, a, &mut verts, &mut vsides);
            nt.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        tris = nt;
        side = nside;
    }
    // boundary vertices per side, for partner lookup
    let mut on_side: Vec<Vec<usize>> = vec![Vec::new(); 8];
    for (v, &m) in vsides.iter().enumerate() {
        for (s, list) in on_side.iter_mut().enumerate() {
            if m & (1 << s) != 0 {
                list.push(v);
            }
        }
    }
    let find = |z: C64, s: usize| -> usize {
        on_side[s]
            .iter()
            .copied()
            .min_by(|&i, &j| (verts[i] - z).norm().partial_cmp(&(verts[j] - z).norm()).unwrap())
            .expect("side has vertices")
    };
    let mut pairings = Vec::new();
    for t in &tris {
        for e in 0..3 {
            let (p, q) = (t[e], t[(e + 1) % 3]);
            if let Some(&s) = side.get(&key(p, q)) {
                let (map, word) = side_map(group, s);
                let ps = partner_side(s);
                let partner = [find(map.apply(verts[p]), ps), find(map.apply(verts[q]), ps)];
                pairings.push(Pairing { edge: [p, q], partner, word, side: s, map });
            }
        }
    }
    pairings.sort_by_key(|p| (p.side, p.edge));
    finish_mesh(verts, tris, pairings, vsides, level, group.genus)
}

fn finish_mesh(
    vertices: Vec<C64>,
    triangles: Vec<[usize; 3]>,
    pairings: Vec<Pairing>,
    vertex_sides: Vec<u8>,
    level: usize,
    genus: usize,
) -> Result<SurfaceMesh> {
    let density = vertices.iter().map(|&z| disk_density(z)).collect();
    let mut tri_area = Vec::with_capacity(triangles.len());
    let mut tri_density = Vec::with_capacity(triangles.len());
    for (ti, &[a, b, c]) in triangles.iter().enumerate() {
        let (za, zb, zc) = (vertices[a], vertices[b], vertices[c]);
        let area = 0.5 * ((zb - za).conj() * (zc - za)).im;
        if area.is_nan() || area < 1e-14 {
            return Err(Error::NonEmbeddedMesh { triangle: ti, area });
        }
        let hyp = PI - hyperbolic_angle(za, zb, zc) - hyperbolic_angle(zb, zc, za) - hyperbolic_angle(zc, za, zb);
        tri_area.push(area);
        tri_density.push(hyp / area);
    }
    let orbits = compute_orbits(vertices.len(), &pairings);
    Ok(SurfaceMesh { vertices, triangles, pairings, density, level, tri_density, tri_area, orbits, vertex_sides, genus })
}

/// Breadth-first search over the pairing graph; each orbit is represented by
/// its lowest vertex index.
fn compute_orbits(nv: usize, pairings: &[Pairing]) -> Vec<VertexOrbit> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nv];
    for (pi, p) in pairings.iter().enumerate() {
        for i in 0..2 {
            let (u, w) = (p.edge[i], p.partner[i]);
            if !adj[u].iter().any(|&(x, _)| x == w) {
                adj[u].push((w, pi));
            }
        }
    }
    let id = Moebius::identity(Model::Disk);
    let mut orbits: Vec<Option<VertexOrbit>> = vec![None; nv];
    for v in 0..nv {
        if orbits[v].is_some() {
            continue;
        }
        // from_rep[u] maps v onto u
        let mut from_rep: Vec<(usize, Moebius, Vec<i32>)> = vec![(v, id, Vec::new())];
        let mut seen = std::collections::HashSet::from([v]);
        let mut head = 0;
        while head < from_rep.len() {
            let (u, pu, wu) = from_rep[head].clone();
            head += 1;
            for &(w, pi) in &adj[u] {
                if seen.insert(w) {
                    let p = &pairings[pi];
                    let mut word = p.word.clone();
                    word.extend_from_slice(&wu);
                    from_rep.push((w, p.map.compose(&pu), reduce_word(&word)));
                }
            }
        }
        for (u, pu, wu) in from_rep {
            orbits[u] = Some(VertexOrbit { rep: v, to_rep: pu.inverse(), word: invert_word(&wu) });
        }
    }
    orbits.into_iter().map(|o| o.unwrap()).collect()
}

impl SurfaceMesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Vertices representing quotient vertices, ascending.
    pub fn rep_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&v| self.orbits[v].rep == v).collect()
    }

    /// Sum of geodesic-triangle areas (exact up to round-off).
    pub fn hyperbolic_area(&self) -> f64 {
        self.tri_area.iter().zip(&self.tri_density).map(|(a, l)| a * l).sum()
    }

    /// Area by per-triangle linear interpolation of the vertex density.
    pub fn quadrature_area(&self) -> f64 {
        self.triangles
            .iter()
            .zip(&self.tri_area)
            .map(|(t, a)| a * (self.density[t[0]] + self.density[t[1]] + self.density[t[2]]) / 3.0)
            .sum()
    }

    pub fn expected_area(&self) -> f64 {
        4.0 * PI * (self.genus as f64 - 1.0)
    }

    pub fn triangle_quality(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (za, zb, zc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let s = (zb - za).norm_sqr() + (zc - zb).norm_sqr() + (za - zc).norm_sqr();
        4.0 * 3f64.sqrt() * self.tri_area[t] / s
    }

    /// Largest vertex-position error of the stored pairing isometries.
    pub fn pairing_residual(&self, p: &Pairing) -> f64 {
        (0..2)
            .map(|i| (p.map.apply(self.vertices[p.edge[i]]) - self.vertices[p.partner[i]]).norm())
            .fold(0.0, f64::max)
    }

    /// Export as the JSON mesh document.
    pub fn to_json(&self) -> String {
        let doc = MeshDoc {
            vertices: self.vertices.iter().map(|z| [z.re, z.im]).collect(),
            triangles: self.triangles.clone(),
            pairings: self.pairings.clone(),
            level: self.level,
        };
        serde_json::to_string(&doc).expect("mesh serializes")
    }

    /// Import a JSON mesh document; pairing maps are re-evaluated from words.
    pub fn from_json(s: &str, group: &FuchsianGroup) -> Result<SurfaceMesh> {
        let doc: MeshDoc = serde_json::from_str(s)?;
        let vertices: Vec<C64> = doc.vertices.iter().map(|v| C64::new(v[0], v[1])).collect();
        let mut pairings = doc.pairings;
        let mut vsides = vec![0u8; vertices.len()];
        for p in &mut pairings {
            p.map = group.word(&p.word);
            if p.side >= 8 {
                return Err(Error::Format(format!("pairing side {} out of range", p.side)));
            }
            for &v in &p.edge {
                *vsides.get_mut(v).ok_or_else(|| Error::Format(format!("vertex {v} out of range")))? |= 1 << p.side;
            }
        }
        finish_mesh(vertices, doc.triangles, pairings, vsides, doc.level, group.genus)
    }

    /// Maps a disk point into the closed octagon. Returns the image and the
    /// group element realizing it.
    pub fn fold_to_domain(group: &FuchsianGroup, z: C64) -> (C64, Moebius) {
        fold_to_domain(group, z)
    }
}

#[derive(Serialize, Deserialize)]
struct MeshDoc {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    pairings: Vec<Pairing>,
    level: usize,
}

/// Center and radius of the geodesic circle carrying octagon side `k`.
pub fn side_circle(k: usize) -> (C64, f64) {
    let rho = octagon_corner_radius();
    let c = (rho * rho + 1.0) / (2.0 * rho * (PI / 8.0).cos());
    (C64::from_polar(c, k as f64 * PI / 4.0), (c * c - 1.0).sqrt())
}

/// Reduces a disk point into the octagon by repeatedly crossing violated sides.
pub fn fold_to_domain(group: &FuchsianGroup, z: C64) -> (C64, Moebius) {
    let circles: Vec<(C64, f64)> = (0..8).map(side_circle).collect();
    let mut w = z;
    let mut acc = Moebius::identity(Model::Disk);
    for _ in 0..10_000 {
        let worst = (0..8)
            .map(|s| (s, circles[s].1 - (w - circles[s].0).norm()))
            .filter(|&(_, depth)| depth > 1e-13)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        match worst {
            None => break,
            Some((s, _)) => {
                let (m, _) = side_map(group, s);
                w = m.apply(w);
                acc = m.compose(&acc);
            }
        }
    }
    (w, acc)
}

/// Pass/fail report of [`validate_mesh`].
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub level: usize,
    pub area: f64,
    pub quadrature_area: f64,
    pub area_error: f64,
    pub max_pairing_residual: f64,
    pub min_quality: f64,
    pub failures: Vec<String>,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct MeshTolerances {
    pub area_rel: f64,
    pub pairing: f64,
    pub min_quality: f64,
}

impl MeshTolerances {
    /// 5% area tolerance on the coarse fan, 0.1% once refined.
    pub fn for_level(level: usize) -> Self {
        Self { area_rel: if level == 0 { 0.05 } else { 1e-3 }, pairing: 1e-9, min_quality: 0.05 }
    }
}

pub fn validate_mesh(mesh: &SurfaceMesh) -> ValidationReport {
    validate_mesh_with(mesh, MeshTolerances::for_level(mesh.level))
}

pub fn validate_mesh_with(mesh: &SurfaceMesh, tol: MeshTolerances) -> ValidationReport {
    let mut failures = Vec::new();
    let area = mesh.hyperbolic_area();
    let area_error = (area - mesh.expected_area()).abs() / mesh.expected_area();
    if area_error > tol.area_rel {
        failures.push(format!("area error {area_error:.3e} exceeds {:.1e}", tol.area_rel));
    }
    let mut max_res: f64 = 0.0;
    for p in &mesh.pairings {
        let r = mesh.pairing_residual(p);
        max_res = max_res.max(r);
        if !(r <= tol.pairing) {
            failures.push(format!(
                "pairing edge ({}, {}) -> ({}, {}) residual {r:.3e}",
                p.edge[0], p.edge[1], p.partner[0], p.partner[1]
            ));
        }
    }
    let min_quality = (0..mesh.num_triangles()).map(|t| mesh.triangle_quality(t)).fold(f64::INFINITY, f64::min);
    if min_quality < tol.min_quality {
        failures.push(format!("minimum triangle quality {min_quality:.3e}"));
    }
    ValidationReport {
        level: mesh.level,
        area,
        quadrature_area: mesh.quadrature_area(),
        area_error,
        max_pairing_residual: max_res,
        min_quality,
        passed: failures.is_empty(),
        failures,
    }
}

/// Bucket grid for locating chart points in mesh triangles.
pub struct Locator {
    n: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    pub fn new(mesh: &SurfaceMesh) -> Self {
        let n = ((mesh.num_triangles() as f64).sqrt().ceil() as usize).max(4);
        let mut buckets = vec![Vec::new(); n * n];
        let cell = |x: f64| (((x + 1.0) / 2.0 * n as f64).floor().max(0.0) as usize).min(n - 1);
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let zs = tri.map(|v| mesh.vertices[v]);
            let (x0, x1) = (zs.iter().map(|z| z.re).fold(f64::INFINITY, f64::min), zs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max));
            let (y0, y1) = (zs.iter().map(|z| z.im).fold(f64::INFINITY, f64::min), zs.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max));
            for i in cell(x0)..=cell(x1) {
                for j in cell(y0)..=cell(y1) {
                    buckets[i * n + j].push(t);
                }
            }
        }
        Self { n, buckets }
    }

    /// Triangle containing `z` and barycentric coordinates; falls back to the
    /// nearest triangle (clamped coordinates) for points just outside.
    pub fn locate(&self, mesh: &SurfaceMesh, z: C64) -> (usize, [f64; 3]) {
        let n = self.n;
        let cell = |x: f64| (((x + 1.0) / 2.0 * n as f64).floor().max(0.0) as usize).min(n - 1);
        let (ci, cj) = (cell(z.re), cell(z.im));
        let mut best = (usize::MAX, [0.0; 3], f64::INFINITY);
        for r in 0..n {
            let (i0, i1) = (ci.saturating_sub(r), (ci + r).min(n - 1));
            let (j0, j1) = (cj.saturating_sub(r), (cj + r).min(n - 1));
            for i in i0..=i1 {
                for j in j0..=j1 {
                    if r > 0 && i != i0 && i != i1 && j != j0 && j != j1 {
                        continue;
                    }
                    for &t in &self.buckets[i * n + j] {
                        let b = barycentric(mesh, t, z);
                        let viol = b.iter().map(|&x| (-x).max(0.0)).sum::<f64>();
                        if viol < best.2 {
                            best = (t, b, viol);
                        }
                    }
                }
            }
            if best.2 <= 1e-12 || (best.0 != usize::MAX && r >= 1) {
                break;
            }
        }
        let (t, mut b, viol) = best;
        if viol > 0.0 {
            b.iter_mut().for_each(|x| *x = x.max(0.0));
            let s: f64 = b.iter().sum();
            b.iter_mut().for_each(|x| *x /= s);
        }
        (t, b)
    }
}

pub fn barycentric(mesh: &SurfaceMesh, t: usize, z: C64) -> [f64; 3] {
    let [a, b, c] = mesh.triangles[t];
    let (za, zb, zc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    let cross = |p: C64, q: C64| (p.conj() * q).im;
    let area2 = cross(zb - za, zc - za);
    let la = cross(zb - z, zc - z) / area2;
    let lb = cross(zc - z, za - z) / area2;
    [la, lb, 1.0 - la - lb]
}
