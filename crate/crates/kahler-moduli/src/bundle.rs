//! Flat unitary bundles: random irreducible surface-group representations,
//! relator and irreducibility diagnostics, and End E / Ad E fiber actions.

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigh;
use crate::surface::FuchsianGroup;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type CMat = DMatrix<C64>;

/// Unitary images of `a₁, b₁, a₂, b₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryRep {
    pub n: usize,
    pub k: i64,
    pub images: Vec<CMat>,
    pub seed: u64,
}

/// Irreducibility threshold on the commutant spectral gap.
pub const IRREDUCIBILITY_THRESHOLD: f64 = 1e-3;
const MAX_DRAWS: usize = 64;

/// Haar-distributed unitary matrix (QR of a complex Ginibre matrix with the
/// phases of R's diagonal removed).
pub fn haar_unitary<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let z = CMat::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) / 2f64.sqrt()
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    q
}

/// `exp(iH)` for Hermitian `H`.
pub fn expm_i_hermitian(h: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigh(h);
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(vals.len(), vals.iter().map(|&l| C64::from_polar(1.0, l))));
    &vecs * d * vecs.adjoint()
}

fn hermitian_from_params(n: usize, x: &[f64]) -> CMat {
    let mut h = CMat::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        h[(i, i)] = C64::new(x[k], 0.0);
        k += 1;
    }
    for i in 0..n {
        for j in i + 1..n {
            h[(i, j)] = C64::new(x[k], x[k + 1]);
            h[(j, i)] = h[(i, j)].conj();
            k += 2;
        }
    }
    h
}

fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b * a.adjoint() * b.adjoint()
}

/// Central holonomy e^{2πik/n}.
fn central(n: usize, k: i64) -> C64 {
    C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64)
}

impl UnitaryRep {
    /// Image of a word in the symplectic generators.
    pub fn word(&self, w: &[i32]) -> CMat {
        w.iter().fold(CMat::identity(self.n, self.n), |acc, &x| {
            let u = &self.images[x.unsigned_abs() as usize - 1];
            if x > 0 {
                acc * u
            } else {
                acc * u.adjoint()
            }
        })
    }

    /// Images of the octagon side pairings.
    pub fn side_images(&self, group: &FuchsianGroup) -> Vec<CMat> {
        group.side_words.iter().map(|w| self.word(w)).collect()
    }

    pub fn relator_residual(&self) -> f64 {
        let r = commutator(&self.images[0], &self.images[1]) * commutator(&self.images[2], &self.images[3]);
        (r - CMat::identity(self.n, self.n) * central(self.n, self.k)).norm()
    }

    pub fn unitarity_defect(&self) -> f64 {
        self.images
            .iter()
            .map(|u| (u.adjoint() * u - CMat::identity(self.n, self.n)).norm())
            .fold(0.0, f64::max)
    }

    /// Second-smallest eigenvalue of Σ (I − Ū⊗U)ᴴ(I − Ū⊗U); `+∞` for rank 1.
    pub fn irreducibility_margin(&self) -> f64 {
        if self.n == 1 {
            return f64::INFINITY;
        }
        let vals = commutant_spectrum(&self.images);
        vals[1]
    }

    /// Conjugate every image by a fixed unitary `w`: `U ↦ w U w*`.
    pub fn conjugate(&self, w: &CMat) -> UnitaryRep {
        let mut r = self.clone();
        r.images = self.images.iter().map(|u| w * u * w.adjoint()).collect();
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RepDoc::from(self)).expect("rep serializes")
    }

    pub fn from_json(s: &str) -> Result<UnitaryRep> {
        let doc: RepDoc = serde_json::from_str(s)?;
        let n = doc.n;
        let images = doc
            .images
            .iter()
            .map(|m| {
                if m.len() != n * n {
                    return Err(Error::Format(format!("image has {} entries, expected {}", m.len(), n * n)));
                }
                Ok(CMat::from_row_iterator(n, n, m.iter().map(|e| C64::new(e[0], e[1]))))
            })
            .collect::<Result<Vec<_>>>()?;
        if images.len() != 4 {
            return Err(Error::Format(format!("expected 4 images, found {}", images.len())));
        }
        Ok(UnitaryRep { n, k: doc.k, images, seed: doc.seed })
    }
}

/// Ascending spectrum of the commutant operator.
pub fn commutant_spectrum(images: &[CMat]) -> Vec<f64> {
    let n = images[0].nrows();
    let id = CMat::identity(n * n, n * n);
    let mut acc = CMat::zeros(n * n, n * n);
    for u in images {
        let d = &id - u.conjugate().kronecker(u);
        acc += d.adjoint() * d;
    }
    hermitian_eigh(&acc).0
}

#[derive(Serialize, Deserialize)]
struct RepDoc {
    n: usize,
    k: i64,
    seed: u64,
    images: Vec<Vec<[f64; 2]>>,
}

impl From<&UnitaryRep> for RepDoc {
    fn from(r: &UnitaryRep) -> Self {
        let images = r
            .images
            .iter()
            .map(|m| {
                let mut v = Vec::with_capacity(r.n * r.n);
                for i in 0..r.n {
                    for j in 0..r.n {
                        v.push([m[(i, j)].re, m[(i, j)].im]);
                    }
                }
                v
            })
            .collect();
        RepDoc { n: r.n, k: r.k, seed: r.seed, images }
    }
}

/// Draws Haar images, then repairs the relator by Levenberg–Marquardt on the
/// second handle; retries until the irreducibility margin exceeds 1e−3.
pub fn random_unitary_rep(group: &FuchsianGroup, n: usize, k: i64, seed: u64) -> Result<UnitaryRep> {
    if k != 0 {
        return Err(Error::UnsupportedDegree(k));
    }
    if !(1..=3).contains(&n) {
        return Err(Error::UnsupportedRank(n));
    }
    if group.genus != 2 {
        return Err(Error::UnsupportedGenus(group.genus));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        let draws: Vec<CMat> = (0..4).map(|_| haar_unitary(n, &mut rng)).collect();
        let Some(images) = repair_relator(&draws) else { continue };
        let rep = UnitaryRep { n, k, images, seed };
        if rep.relator_residual() <= 1e-10 && rep.irreducibility_margin() > IRREDUCIBILITY_THRESHOLD {
            return Ok(rep);
        }
    }
    Err(Error::MaxRetriesExceeded { seed, retries: MAX_DRAWS })
}

/// Solves `[A₁,B₁][A₂e^{iH₁}, B₂e^{iH₂}] = I` for Hermitian `H₁, H₂`.
fn repair_relator(d: &[CMat]) -> Option<Vec<CMat>> {
    let n = d[0].nrows();
    let np = 2 * n * n;
    let c1 = commutator(&d[0], &d[1]);
    let id = CMat::identity(n, n);
    let images = |x: &[f64]| -> (CMat, CMat) {
        (&d[2] * expm_i_hermitian(&hermitian_from_params(n, &x[..n * n])), &d[3] * expm_i_hermitian(&hermitian_from_params(n, &x[n * n..])))
    };
    let resid = |x: &[f64]| -> Vec<f64> {
        let (a, b) = images(x);
        let e = &c1 * commutator(&a, &b) - &id;
        e.iter().map(|v| v.re).chain(e.iter().map(|v| v.im)).collect()
    };
    let nrm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; np];
    let mut r = resid(&x);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        if r.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        let h = 1e-6;
        let mut jac = DMatrix::<f64>::zeros(r.len(), np);
        for kk in 0..np {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[kk] += h;
            xm[kk] -= h;
            let (rp, rm) = (resid(&xp), resid(&xm));
            for i in 0..r.len() {
                jac[(i, kk)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rv = nalgebra::DVector::from_column_slice(&r);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * rv;
        let mut improved = false;
        while lambda < 1e10 {
            let sys = &jtj + DMatrix::<f64>::identity(np, np) * lambda;
            if let Some(step) = sys.lu().solve(&(-&g)) {
                let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let rn = resid(&xn);
                if nrm(&rn) < nrm(&r) {
                    x = xn;
                    r = rn;
                    lambda = (lambda / 3.0).max(1e-15);
                    improved = true;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    let (a, b) = images(&x);
    Some(vec![d[0].clone(), d[1].clone(), a, b])
}

/// `(relator residual, irreducibility margin)`.
pub fn rep_residuals(rep: &UnitaryRep) -> (f64, f64) {
    (rep.relator_residual(), rep.irreducibility_margin())
}

/// Fiber the holonomy acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fiber {
    Trivial,
    Fundamental,
    EndE,
    AdE,
}

/// Orthonormal Hermitian basis of n×n matrices for the Frobenius pairing:
/// `I/√n` first, then off-diagonal pairs, then the traceless diagonals. The
/// trailing `n² − 1` elements span the trace-free part.
pub fn hermitian_basis(n: usize) -> Vec<CMat> {
    let mut out = Vec::with_capacity(n * n);
    out.push(CMat::identity(n, n) / C64::new((n as f64).sqrt(), 0.0));
    let s = 1.0 / 2f64.sqrt();
    for i in 0..n {
        for j in i + 1..n {
            let mut m = CMat::zeros(n, n);
            m[(i, j)] = C64::new(s, 0.0);
            m[(j, i)] = C64::new(s, 0.0);
            out.push(m);
            let mut m = CMat::zeros(n, n);
            m[(i, j)] = C64::new(0.0, s);
            m[(j, i)] = C64::new(0.0, -s);
            out.push(m);
        }
    }
    for k in 1..n {
        let mut m = CMat::zeros(n, n);
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            m[(i, i)] = C64::new(1.0 / norm, 0.0);
        }
        m[(k, k)] = C64::new(-(k as f64) / norm, 0.0);
        out.push(m);
    }
    out
}

/// Holonomy action on one fiber kind.
#[derive(Clone, Debug)]
pub struct HolonomyAction {
    pub fiber: Fiber,
    pub n: usize,
    basis: Vec<CMat>,
}

impl HolonomyAction {
    pub fn new(fiber: Fiber, n: usize) -> Self {
        let basis = match fiber {
            Fiber::EndE => hermitian_basis(n),
            Fiber::AdE => hermitian_basis(n)[1..].to_vec(),
            _ => Vec::new(),
        };
        Self { fiber, n, basis }
    }

    pub fn dim(&self) -> usize {
        match self.fiber {
            Fiber::Trivial => 1,
            Fiber::Fundamental => self.n,
            Fiber::EndE | Fiber::AdE => self.basis.len(),
        }
    }

    /// Matrix basis of the fiber coordinates (End E and Ad E only).
    pub fn basis(&self) -> &[CMat] {
        &self.basis
    }

    /// Action of a unitary `u` on fiber coordinates. For End E and Ad E this
    /// is `M ↦ u M u*` in the Hermitian basis, a real orthogonal matrix.
    pub fn matrix(&self, u: &CMat) -> CMat {
        match self.fiber {
            Fiber::Trivial => CMat::identity(1, 1),
            Fiber::Fundamental => u.clone(),
            Fiber::EndE | Fiber::AdE => {
                let d = self.basis.len();
                let images: Vec<CMat> = self.basis.iter().map(|b| u * b * u.adjoint()).collect();
                CMat::from_fn(d, d, |a, b| frobenius(&images[b], &self.basis[a]))
            }
        }
    }

    /// Fiber coordinates to an n×n matrix.
    pub fn to_matrix(&self, coords: &[C64]) -> CMat {
        let mut m = CMat::zeros(self.n, self.n);
        for (c, b) in coords.iter().zip(&self.basis) {
            m += b * *c;
        }
        m
    }

    /// n×n matrix to fiber coordinates (orthogonal projection).
    pub fn from_matrix(&self, m: &CMat) -> Vec<C64> {
        self.basis.iter().map(|b| frobenius(m, b)).collect()
    }
}

/// Frobenius pairing tr(a b*).
pub fn frobenius(a: &CMat, b: &CMat) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}
