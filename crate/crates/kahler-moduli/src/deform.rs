//! Deformations of the pair: the modified Beltrami coefficient, a grid
//! solver for the Beltrami equation, the conjugated group, and first-order
//! operator derivatives on the fixed discrete surface.
//!
//! The solver works in the disk chart. The coefficient is sampled on a square
//! grid of cell centres, transported equivariantly to group translates inside
//! the truncation radius and extended by zero outside. The principal solution
//! `f = z + C[h]` with `h = μ(1 + B[h])` comes from a Neumann series where the
//! Cauchy transform `C` and the Beurling transform `B` are discrete free-space
//! convolutions evaluated by FFT. An affine post-composition pins `0` and `1`;
//! `∞` is fixed by the principal normalization.

use crate::bundle::CMat;
use crate::calculus::{apply_primitive, Coeff, Degree, DiscreteOperator, Discretization, Field, FormKind, Primitive};
use crate::error::{Error, Result};
use crate::harmonic::TangentVector;
use crate::linalg::{SpMat, Triplets, ZERO};
use crate::surface::{fold_to_domain, side_circle, FuchsianGroup, Locator, Model, Moebius};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

/// Pinned points must be reproduced to this accuracy.
pub const PIN_TOL: f64 = 1e-8;
/// Default threshold on the Möbius fit residual.
pub const FIT_TOL: f64 = 1e-4;
/// Samples per generator in the Möbius fit.
pub const FIT_SAMPLES: usize = 24;

/// Grid and series settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    /// Grid cells per unit length; `1` is a cell centre.
    pub cells_per_unit: usize,
    /// Half-width of the square grid; at least `1`.
    pub extent: f64,
    /// The coefficient vanishes outside this disk radius.
    pub trunc_radius: f64,
    pub max_iter: usize,
    /// Stop once the sup-norm of the series increment falls below this.
    pub tol: f64,
    /// The coefficient is averaged over `supersample²` points per cell.
    pub supersample: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { cells_per_unit: 100, extent: 1.05, trunc_radius: 0.95, max_iter: 400, tol: 1e-13, supersample: 3 }
    }
}

/// Square grid of cell centres `(i − k)h`, `i ∈ 0..2k+1`, in both axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub half: usize,
    pub spacing: f64,
}

impl Grid {
    pub fn from_params(p: &GridParams) -> Result<Self> {
        if p.cells_per_unit < 8 {
            return Err(Error::GridTooCoarse(format!("{} cells per unit, need at least 8", p.cells_per_unit)));
        }
        if p.extent < 1.0 || !(0.0..1.0).contains(&p.trunc_radius) {
            return Err(Error::InvalidInput(format!("extent {} must be ≥ 1 and truncation radius {} in [0, 1)", p.extent, p.trunc_radius)));
        }
        let h = 1.0 / p.cells_per_unit as f64;
        Ok(Self { half: (p.extent * p.cells_per_unit as f64).ceil() as usize, spacing: h })
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        2 * self.half + 1
    }

    pub fn len(&self) -> usize {
        self.n() * self.n()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major index, `x` major.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n() + j
    }

    pub fn point(&self, i: usize, j: usize) -> C64 {
        let k = self.half as f64;
        C64::new((i as f64 - k) * self.spacing, (j as f64 - k) * self.spacing)
    }

    pub fn points(&self) -> impl Iterator<Item = C64> + '_ {
        (0..self.n()).flat_map(move |i| (0..self.n()).map(move |j| self.point(i, j)))
    }

    /// Largest coordinate on the grid.
    pub fn bound(&self) -> f64 {
        self.half as f64 * self.spacing
    }

    /// Bilinear interpolation; `None` outside the grid.
    pub fn interpolate(&self, v: &[C64], z: C64) -> Option<C64> {
        let k = self.half as f64;
        let (x, y) = (z.re / self.spacing + k, z.im / self.spacing + k);
        let top = (self.n() - 1) as f64;
        if !(0.0..=top).contains(&x) || !(0.0..=top).contains(&y) {
            return None;
        }
        let (i, j) = ((x.floor() as usize).min(self.n() - 2), (y.floor() as usize).min(self.n() - 2));
        let (s, t) = (x - i as f64, y - j as f64);
        let at = |a: usize, b: usize| v[self.index(a, b)];
        Some(at(i, j) * ((1.0 - s) * (1.0 - t)) + at(i + 1, j) * (s * (1.0 - t)) + at(i, j + 1) * ((1.0 - s) * t) + at(i + 1, j + 1) * (s * t))
    }
}

/// Sampled Beltrami coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeltramiCoefficient {
    pub grid: Grid,
    pub trunc_radius: f64,
    pub values: Vec<C64>,
    pub sup_norm: f64,
    /// Largest defect of `μ(γz) conj(γ'(z))/γ'(z) = μ(z)` over sampled points
    /// and side pairings with both points inside the truncation radius.
    pub equivariance_residual: f64,
}

impl BeltramiCoefficient {
    /// Samples a closed-form coefficient inside the truncation radius.
    pub fn from_fn(params: &GridParams, f: impl Fn(C64) -> C64) -> Result<Self> {
        let grid = Grid::from_params(params)?;
        let q = params.supersample.max(1);
        // cell averages over a q×q lattice of sub-points
        let offsets: Vec<C64> = (0..q * q)
            .map(|k| C64::new(((k / q) as f64 + 0.5) / q as f64 - 0.5, ((k % q) as f64 + 0.5) / q as f64 - 0.5) * grid.spacing)
            .collect();
        let values: Vec<C64> = grid
            .points()
            .map(|z| {
                let inside: Vec<C64> = offsets.iter().map(|o| z + o).filter(|w| w.norm() < params.trunc_radius).collect();
                inside.iter().map(|w| f(*w)).sum::<C64>() / (q * q) as f64
            })
            .collect();
        let sup_norm = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        Ok(Self { grid, trunc_radius: params.trunc_radius, values, sup_norm, equivariance_residual: f64::NAN })
    }

    /// Samples a Beltrami field of the surface on every group translate
    /// inside the truncation radius.
    pub fn from_field(disc: &Discretization, field: &Field, params: &GridParams) -> Result<Self> {
        if field.kind != FormKind::BELTRAMI {
            return Err(Error::kind_mismatch(FormKind::BELTRAMI, field.kind));
        }
        let sampler = BeltramiSampler::new(disc, field);
        let mut c = Self::from_fn(params, |z| sampler.value(z))?;
        c.equivariance_residual = sampler.equivariance_residual(&disc.group, params.trunc_radius);
        Ok(c)
    }
}

/// Point evaluation of a per-triangle Beltrami field on the disk.
pub struct BeltramiSampler<'a> {
    disc: &'a Discretization,
    values: &'a [C64],
    locator: Locator,
}

impl<'a> BeltramiSampler<'a> {
    pub fn new(disc: &'a Discretization, field: &'a Field) -> Self {
        Self { disc, values: &field.values, locator: Locator::new(&disc.mesh) }
    }

    /// `μ(z) = μ(γz) conj(γ'(z))/γ'(z)` with `γz` in the octagon.
    pub fn value(&self, z: C64) -> C64 {
        let (w, g) = fold_to_domain(&self.disc.group, z);
        let (t, _) = self.locator.locate(&self.disc.mesh, w);
        let d = g.derivative(z);
        self.values[t] * d.conj() / d
    }

    fn equivariance_residual(&self, group: &FuchsianGroup, radius: f64) -> f64 {
        // quasi-random points of the octagon interior
        let mut worst: f64 = 0.0;
        for k in 1..=200 {
            let r = 0.6 * ((k as f64 * 0.618_033_988_75) % 1.0).sqrt();
            let z = C64::from_polar(r, 2.0 * PI * ((k as f64 * 0.754_877_666_2) % 1.0));
            for g in &group.side_pairings {
                for m in [*g, g.inverse()] {
                    let w = m.apply(z);
                    if w.norm() >= radius {
                        continue;
                    }
                    let d = m.derivative(z);
                    worst = worst.max((self.value(w) * d.conj() / d - self.value(z)).norm());
                }
            }
        }
        worst
    }
}

/// Per-triangle coefficient `s·μ − ½s²·tr(ν⊗ν)/λ`.
pub fn modified_field(disc: &Discretization, tv: &TangentVector, scale: f64) -> Result<Field> {
    if tv.mu.kind != FormKind::BELTRAMI {
        return Err(Error::kind_mismatch(FormKind::BELTRAMI, tv.mu.kind));
    }
    let sup = tv.mu.values.iter().map(|v| v.norm()).fold(0.0, f64::max) * scale.abs();
    if sup >= 0.5 {
        return Err(Error::EllipticityViolated(sup));
    }
    let tr = apply_primitive(disc, Primitive::Trace, &[&tv.nu, &tv.nu])?.field().expect("trace is a field");
    let corr = apply_primitive(disc, Primitive::DensityInverseScale, &[&tr])?.field().expect("scaled trace is a field");
    let out = tv.mu.scale(C64::new(scale, 0.0)).axpy(C64::new(-0.5 * scale * scale, 0.0), &corr)?;
    let s = out.max_abs();
    if s >= 1.0 {
        return Err(Error::EllipticityViolated(s));
    }
    Ok(out)
}

/// Modified coefficient sampled on the truncation grid.
pub fn modified_coefficient(disc: &Discretization, tv: &TangentVector, scale: f64, params: &GridParams) -> Result<BeltramiCoefficient> {
    BeltramiCoefficient::from_field(disc, &modified_field(disc, tv, scale)?, params)
}

/// Free-space convolutions with the Cauchy and Beurling kernels.
struct Transforms {
    n: usize,
    p: usize,
    cauchy: Vec<C64>,
    beurling: Vec<C64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Transforms {
    fn new(grid: &Grid) -> Self {
        let n = grid.n();
        let p = 2 * n;
        let mut planner = FftPlanner::new();
        let (fwd, inv) = (planner.plan_fft_forward(p), planner.plan_fft_inverse(p));
        let h2 = grid.spacing * grid.spacing;
        let mut kc = vec![ZERO; p * p];
        let mut kb = vec![ZERO; p * p];
        for a in 0..2 * n - 1 {
            for b in 0..2 * n - 1 {
                let z = C64::new((a as f64 - (n - 1) as f64) * grid.spacing, (b as f64 - (n - 1) as f64) * grid.spacing);
                if a == n - 1 && b == n - 1 {
                    // the centred cell integrates both kernels to zero
                    continue;
                }
                kc[a * p + b] = h2 / (PI * z);
                kb[a * p + b] = -h2 / (PI * z * z);
            }
        }
        let mut t = Self { n, p, cauchy: kc, beurling: kb, fwd, inv };
        let (mut c, mut b) = (std::mem::take(&mut t.cauchy), std::mem::take(&mut t.beurling));
        t.fft2(&mut c, false);
        t.fft2(&mut b, false);
        t.cauchy = c;
        t.beurling = b;
        t
    }

    fn fft2(&self, data: &mut [C64], inverse: bool) {
        let p = self.p;
        let plan = if inverse { &self.inv } else { &self.fwd };
        plan.process(data);
        let mut col = vec![ZERO; p];
        for j in 0..p {
            for i in 0..p {
                col[i] = data[i * p + j];
            }
            plan.process(&mut col);
            for i in 0..p {
                data[i * p + j] = col[i];
            }
        }
    }

    fn apply(&self, kernel: &[C64], f: &[C64]) -> Vec<C64> {
        let (n, p) = (self.n, self.p);
        let mut buf = vec![ZERO; p * p];
        for i in 0..n {
            buf[i * p..i * p + n].copy_from_slice(&f[i * n..(i + 1) * n]);
        }
        self.fft2(&mut buf, false);
        buf.iter_mut().zip(kernel).for_each(|(x, k)| *x *= k);
        self.fft2(&mut buf, true);
        let s = 1.0 / (p * p) as f64;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = buf[(i + n - 1) * p + j + n - 1] * s;
            }
        }
        out
    }
}

/// Affine post-composition pinning `0` and `1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Principal solution at `0` and `1`.
    pub principal_at_0: C64,
    pub principal_at_1: C64,
    /// `|χ(0)|` and `|χ(1) − 1|` after normalization.
    pub pin_residual: f64,
}

impl Normalization {
    fn apply(&self, f: C64) -> C64 {
        (f - self.principal_at_0) / (self.principal_at_1 - self.principal_at_0)
    }

    fn scale(&self) -> C64 {
        1.0 / (self.principal_at_1 - self.principal_at_0)
    }
}

/// Sampled normalized solution of the Beltrami equation.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingGrid {
    pub grid: Grid,
    pub trunc_radius: f64,
    pub iterations: usize,
    /// Sup-norm of `h − μ(1 + B[h])`, which equals `∂̄χ − μ∂χ` up to the
    /// normalization scale since `∂̄C = 1` and `∂C = B`.
    pub residual_estimate: f64,
    /// Sup-norms of the series increments.
    pub increments: Vec<f64>,
    pub normalization: Normalization,
    /// Normalized map.
    pub chi: Vec<C64>,
    /// Normalized `∂χ`.
    pub dchi: Vec<C64>,
    /// Density `h = ∂̄f` of the principal solution.
    pub density: Vec<C64>,
}

/// Solves `∂̄χ = μ∂χ` with `χ` fixing `0, 1, ∞`.
pub fn solve_beltrami(coeff: &BeltramiCoefficient, params: &GridParams) -> Result<MappingGrid> {
    if coeff.sup_norm >= 1.0 {
        return Err(Error::EllipticityViolated(coeff.sup_norm));
    }
    let grid = coeff.grid;
    if grid.bound() < 1.0 + grid.spacing {
        return Err(Error::GridTooCoarse(format!("grid bound {} does not contain the pinned point 1", grid.bound())));
    }
    let tr = Transforms::new(&grid);
    let mu = &coeff.values;
    let step = |h: &[C64]| -> Vec<C64> {
        let bh = tr.apply(&tr.beurling, h);
        mu.iter().zip(&bh).map(|(m, b)| m * (1.0 + b)).collect()
    };
    let mut h = mu.clone();
    let mut increments = Vec::new();
    let mut converged = mu.iter().all(|m| *m == ZERO);
    while !converged {
        let next = step(&h);
        let inc = next.iter().zip(&h).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        h = next;
        increments.push(inc);
        if inc <= params.tol {
            converged = true;
        } else if increments.len() >= params.max_iter || !inc.is_finite() || inc > 1e6 {
            return Err(Error::SeriesDiverged { iterations: increments.len(), last_increment: inc, trace: increments });
        }
    }
    let bh = tr.apply(&tr.beurling, &h);
    let residual_estimate = h.iter().zip(&bh).zip(mu).map(|((x, b), m)| (x - m * (1.0 + b)).norm()).fold(0.0, f64::max);
    let ch = tr.apply(&tr.cauchy, &h);
    let principal: Vec<C64> = grid.points().zip(&ch).map(|(z, c)| z + c).collect();
    let k = grid.half;
    let one = (1.0 / grid.spacing).round() as usize;
    let mut norm = Normalization { principal_at_0: principal[grid.index(k, k)], principal_at_1: principal[grid.index(k + one, k)], pin_residual: 0.0 };
    let chi: Vec<C64> = principal.iter().map(|f| norm.apply(*f)).collect();
    norm.pin_residual = chi[grid.index(k, k)].norm().max((chi[grid.index(k + one, k)] - 1.0).norm());
    if norm.pin_residual > PIN_TOL {
        return Err(Error::GridTooCoarse(format!("pinned points off by {:e}", norm.pin_residual)));
    }
    let s = norm.scale();
    let dchi = bh.iter().map(|b| (1.0 + b) * s).collect();
    Ok(MappingGrid {
        grid,
        trunc_radius: coeff.trunc_radius,
        iterations: increments.len(),
        residual_estimate: residual_estimate * s.norm(),
        increments,
        normalization: norm,
        chi,
        dchi,
        density: h,
    })
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    format: String,
    version: u32,
    nx: usize,
    ny: usize,
    spacing: f64,
    /// `[x_min, x_max, y_min, y_max]` of the cell centres.
    bounds: [f64; 4],
    trunc_radius: f64,
    iterations: usize,
    residual_estimate: f64,
    increments: Vec<f64>,
    normalization: Normalization,
    layout: String,
    blocks: Vec<String>,
}

const GRID_FORMAT: &str = "kahler-moduli/mapping-grid";
const GRID_LAYOUT: &str = "x-major rows, complex128 little-endian (re, im) pairs, blocks in listed order";

impl MappingGrid {
    /// Normalized map at any point: bilinear inside the grid, the Cauchy sum
    /// outside.
    pub fn eval(&self, z: C64) -> C64 {
        self.grid.interpolate(&self.chi, z).unwrap_or_else(|| self.normalization.apply(z + self.far_sum(z, 1)))
    }

    /// Normalized `∂χ` at any point.
    pub fn derivative(&self, z: C64) -> C64 {
        self.grid.interpolate(&self.dchi, z).unwrap_or_else(|| (1.0 - self.far_sum(z, 2)) * self.normalization.scale())
    }

    fn far_sum(&self, z: C64, power: i32) -> C64 {
        let h2 = self.grid.spacing * self.grid.spacing;
        self.grid.points().zip(&self.density).filter(|(_, d)| **d != ZERO).map(|(w, d)| d * h2 / (PI * (z - w).powi(power))).sum()
    }

    /// Inverse map by fixed-point iteration, valid for maps close to the
    /// identity.
    pub fn inverse(&self, w: C64) -> C64 {
        let mut z = w;
        for _ in 0..50 {
            let r = self.eval(z) - w;
            z -= r;
            if r.norm() < 1e-15 {
                break;
            }
        }
        z
    }

    /// Largest `|∂̄χ − μ∂χ| / |∂χ|` by centred differences over grid points
    /// accepted by `mask`.
    pub fn fd_residual(&self, coeff: &BeltramiCoefficient, mask: impl Fn(C64) -> bool) -> f64 {
        let g = self.grid;
        let n = g.n();
        let mut worst: f64 = 0.0;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let z = g.point(i, j);
                if !mask(z) {
                    continue;
                }
                let dx = (self.chi[g.index(i + 1, j)] - self.chi[g.index(i - 1, j)]) / (2.0 * g.spacing);
                let dy = (self.chi[g.index(i, j + 1)] - self.chi[g.index(i, j - 1)]) / (2.0 * g.spacing);
                let dz = (dx - C64::i() * dy) * 0.5;
                let dzb = (dx + C64::i() * dy) * 0.5;
                worst = worst.max((dzb - coeff.values[g.index(i, j)] * dz).norm() / dz.norm());
            }
        }
        worst
    }

    /// Writes `<base>.json` (header) and `<base>.bin` (χ, ∂χ and density).
    pub fn write(&self, base: &Path) -> Result<()> {
        let n = self.grid.n();
        let b = self.grid.bound();
        let header = GridHeader {
            format: GRID_FORMAT.into(),
            version: 1,
            nx: n,
            ny: n,
            spacing: self.grid.spacing,
            bounds: [-b, b, -b, b],
            trunc_radius: self.trunc_radius,
            iterations: self.iterations,
            residual_estimate: self.residual_estimate,
            increments: self.increments.clone(),
            normalization: self.normalization,
            layout: GRID_LAYOUT.into(),
            blocks: vec!["chi".into(), "dchi".into(), "density".into()],
        };
        std::fs::write(base.with_extension("json"), serde_json::to_string_pretty(&header)? + "\n")?;
        let mut bytes = Vec::with_capacity(48 * self.chi.len());
        for v in self.chi.iter().chain(&self.dchi).chain(&self.density) {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        std::fs::write(base.with_extension("bin"), bytes)?;
        Ok(())
    }

    pub fn read(base: &Path) -> Result<Self> {
        let header: GridHeader = serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
        if header.format != GRID_FORMAT || header.version != 1 || header.nx != header.ny || header.nx % 2 == 0 {
            return Err(Error::Format(format!("unsupported mapping grid header {} v{}", header.format, header.version)));
        }
        let bytes = std::fs::read(base.with_extension("bin"))?;
        let len = header.nx * header.ny;
        if bytes.len() != 48 * len {
            return Err(Error::Format(format!("grid payload has {} bytes, expected {}", bytes.len(), 48 * len)));
        }
        let f = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8-byte chunk"));
        let block = |b: usize| (0..len).map(|i| C64::new(f(2 * (b * len + i)), f(2 * (b * len + i) + 1))).collect::<Vec<_>>();
        Ok(Self {
            grid: Grid { half: header.nx / 2, spacing: header.spacing },
            trunc_radius: header.trunc_radius,
            iterations: header.iterations,
            residual_estimate: header.residual_estimate,
            increments: header.increments,
            normalization: header.normalization,
            chi: block(0),
            dchi: block(1),
            density: block(2),
        })
    }
}

/// Conjugated group `χ∘γ∘χ⁻¹` and fit diagnostics.
#[derive(Clone, Debug)]
pub struct DeformedGroup {
    pub group: FuchsianGroup,
    /// Largest pointwise Möbius fit residual over all side pairings.
    pub fit_residual: f64,
    pub relator_residual: f64,
    /// Largest ratio of extreme nonzero singular values in the fits.
    pub condition: f64,
}

/// Least-squares Möbius transform with `M(w_k) ≈ t_k`, from the null vector
/// of the rows `[w, 1, −wt, −t]`.
pub fn fit_moebius(w: &[C64], t: &[C64]) -> (Moebius, f64, f64) {
    let a = DMatrix::from_fn(w.len(), 4, |r, c| match c {
        0 => w[r],
        1 => C64::new(1.0, 0.0),
        2 => -w[r] * t[r],
        _ => -t[r],
    });
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let s = &svd.singular_values;
    let order = {
        let mut o: Vec<usize> = (0..s.len()).collect();
        o.sort_by(|&x, &y| s[y].partial_cmp(&s[x]).unwrap());
        o
    };
    let k = order[3];
    let v: Vec<C64> = (0..4).map(|c| vt[(k, c)].conj()).collect();
    let mut m = Moebius::new(v[0], v[1], v[2], v[3], Model::Disk);
    let r = m.det().sqrt();
    m = Moebius::new(m.a / r, m.b / r, m.c / r, m.d / r, Model::Disk);
    let residual = w.iter().zip(t).map(|(x, y)| (m.apply(*x) - y).norm()).fold(0.0, f64::max);
    (m, residual, s[order[0]] / s[order[2]])
}

/// Sample points near side `s` of the octagon, inside the octagon.
fn side_samples(s: usize) -> Vec<C64> {
    let (c, r) = side_circle(s);
    let mid = c / c.norm() * (c.norm() - r);
    (0..FIT_SAMPLES).map(|j| mid * 0.75 + C64::from_polar(0.12, 2.0 * PI * j as f64 / FIT_SAMPLES as f64)).collect()
}

/// Fits `χ∘g_k∘χ⁻¹` for every side pairing and rebuilds the symplectic
/// generators from them.
pub fn deformed_generators(map: &MappingGrid, group: &FuchsianGroup, fit_tol: f64) -> Result<DeformedGroup> {
    let mut pairings = Vec::with_capacity(group.side_pairings.len());
    let (mut fit_residual, mut condition): (f64, f64) = (0.0, 0.0);
    for (k, g) in group.side_pairings.iter().enumerate() {
        let zs = side_samples(k + group.side_pairings.len());
        let w: Vec<C64> = zs.iter().map(|z| map.eval(*z)).collect();
        let t: Vec<C64> = zs.iter().map(|z| map.eval(g.apply(*z))).collect();
        let (m, res, cond) = fit_moebius(&w, &t);
        fit_residual = fit_residual.max(res);
        condition = condition.max(cond);
        pairings.push(m);
    }
    if fit_residual > fit_tol {
        return Err(Error::FitResidualTooLarge { residual: fit_residual, threshold: fit_tol });
    }
    // a₁ = g₀, a₂ = g₁⁻¹g₂, b₁ = a₂g₃⁻¹, b₂ = g₃⁻¹g₁
    let p = &pairings;
    let a1 = p[0];
    let a2 = p[1].inverse().compose(&p[2]);
    let b1 = a2.compose(&p[3].inverse());
    let b2 = p[3].inverse().compose(&p[1]);
    let mut out = group.clone();
    out.generators = vec![a1, b1, a2, b2];
    out.side_pairings = pairings;
    let relator_residual = out.relator_residual();
    Ok(DeformedGroup { group: out, fit_residual, relator_residual, condition })
}

/// Largest entry change of the side pairings between two groups.
pub fn generator_perturbation(a: &FuchsianGroup, b: &FuchsianGroup) -> f64 {
    a.side_pairings.iter().zip(&b.side_pairings).map(|(x, y)| x.distance(y)).fold(0.0, f64::max)
}

/// Operator whose first-order variation is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeTarget {
    DbarSections,
    DbarForms,
    DbarstarSections,
    DbarstarForms,
}

/// First-order variation of a Dolbeault operator along a tangent direction.
#[derive(Clone, Debug)]
pub struct OperatorDerivative {
    pub direction: TangentVector,
    pub which: DerivativeTarget,
    pub operator: DiscreteOperator,
}

/// Blocks `[ν_t, ·]` per triangle on fiber coordinates, or their adjoints.
fn ad_blocks(disc: &Discretization, nu: &Field, coeff: Coeff, adjoint: bool) -> SpMat {
    let act = disc.action(coeff);
    let d = act.dim();
    let nt = disc.mesh.num_triangles();
    let nm = disc.form_matrices(nu);
    let mut t = Triplets::new(nt * d, nt * d);
    for (ti, n) in nm.iter().enumerate() {
        let mut block = CMat::zeros(d, d);
        for (k, b) in act.basis().iter().enumerate() {
            let c = act.from_matrix(&(n * b - b * n));
            for (r, v) in c.iter().enumerate() {
                block[(r, k)] = *v;
            }
        }
        if adjoint {
            block = block.adjoint();
        }
        t.push_block(ti * d, ti * d, &block);
    }
    t.build()
}

fn beltrami_blocks(disc: &Discretization, mu: &Field, d: usize, conjugate: bool) -> SpMat {
    let vals: Vec<C64> = mu.values.iter().flat_map(|m| std::iter::repeat(if conjugate { m.conj() } else { *m }).take(d)).collect();
    let _ = disc;
    SpMat::diag(&vals)
}

fn check_direction(tv: &TangentVector) -> Result<Coeff> {
    if tv.mu.kind != FormKind::BELTRAMI {
        return Err(Error::kind_mismatch(FormKind::BELTRAMI, tv.mu.kind));
    }
    match tv.nu.kind {
        FormKind { degree: Degree::Form01, coeff: c @ (Coeff::EndE | Coeff::AdE) } => Ok(c),
        k => Err(Error::kind_mismatch(FormKind::form01(Coeff::EndE), k)),
    }
}

/// `ad ν₁ − μ₁∂` on sections of the direction's bundle.
fn dbar_section_derivative(disc: &Discretization, tv: &TangentVector, coeff: Coeff) -> Result<DiscreteOperator> {
    let sec = FormKind::function(coeff);
    let d = disc.fiber_dim(coeff);
    let ad = ad_blocks(disc, &tv.nu, coeff, false).matmul(&disc.centroid_matrix(coeff));
    let mp = beltrami_blocks(disc, &tv.mu, d, false).matmul(&disc.partial(sec)?.matrix);
    Ok(DiscreteOperator::new("ad(nu)-mu*partial", ad.add(&mp, C64::new(-1.0, 0.0)), sec, FormKind::form01(coeff)))
}

/// Assembles the first-order variation of `∂̄` or `∂̄*`:
/// sections `ad ν₁ − μ₁∂`, forms `0`; adjoint on sections `0`, adjoint on
/// forms `−⋆ ad ν₁ ⋆ − ∂*μ̄₁`. The last one is assembled term by term from
/// the adjoint fiber blocks and the adjoint of `∂`.
pub fn operator_derivative(disc: &Discretization, direction: &TangentVector, which: DerivativeTarget) -> Result<OperatorDerivative> {
    let coeff = check_direction(direction)?;
    let d = disc.fiber_dim(coeff);
    let sec = FormKind::function(coeff);
    let form = FormKind::form01(coeff);
    let zero = |dom: FormKind, cod: FormKind| DiscreteOperator::new("zero", SpMat::zeros(disc.dof(cod), disc.dof(dom)), dom, cod);
    let operator = match which {
        DerivativeTarget::DbarSections => dbar_section_derivative(disc, direction, coeff)?,
        DerivativeTarget::DbarForms => zero(form, FormKind::new(Degree::Form02, coeff)),
        DerivativeTarget::DbarstarSections => zero(sec, sec),
        DerivativeTarget::DbarstarForms => {
            let m0 = disc.mass(sec);
            let m1 = disc.mass(form);
            let inv: Vec<f64> = m0.iter().map(|m| 1.0 / m).collect();
            // −⋆ad ν₁⋆: contraction against ν₁ returned to sections
            let star_ad = disc.centroid_matrix(coeff).adjoint().matmul(&ad_blocks(disc, &direction.nu, coeff, true)).scale_rows_cols(Some(&inv), Some(&m1));
            let partial_star = disc.adjoint(&disc.partial(sec)?);
            let mubar = beltrami_blocks(disc, &direction.mu, d, true);
            let dmu = partial_star.matrix.matmul(&mubar);
            DiscreteOperator::new("-star(ad nu)star-partial*(mubar)", star_ad.add(&dmu, C64::new(-1.0, 0.0)), form, sec)
        }
    };
    Ok(OperatorDerivative { direction: direction.clone(), which, operator })
}

/// The one-parameter family whose derivative at `0` is [`operator_derivative`]:
/// `∂̄_ε = (∂̄ − εμ₁∂)/(1 − ε²|μ₁|²) + ε ad ν₁` on sections, with `∂̄*_ε` its
/// mass-weighted adjoint.
pub fn operator_family(disc: &Discretization, direction: &TangentVector, which: DerivativeTarget, eps: f64) -> Result<DiscreteOperator> {
    let coeff = check_direction(direction)?;
    let d = disc.fiber_dim(coeff);
    let sec = FormKind::function(coeff);
    let dbar = disc.dbar(sec)?;
    match which {
        DerivativeTarget::DbarForms | DerivativeTarget::DbarstarSections => {
            // ∂̄ on one-forms and ∂̄* on sections vanish for every ε
            Ok(operator_derivative(disc, direction, which)?.operator)
        }
        DerivativeTarget::DbarSections | DerivativeTarget::DbarstarForms => {
            let factor: Vec<C64> = direction.mu.values.iter().flat_map(|m| std::iter::repeat(C64::new(1.0 / (1.0 - eps * eps * m.norm_sqr()), 0.0)).take(d)).collect();
            let mp = beltrami_blocks(disc, &direction.mu, d, false).matmul(&disc.partial(sec)?.matrix);
            let base = dbar.matrix.add(&mp, C64::new(-eps, 0.0));
            let ad = ad_blocks(disc, &direction.nu, coeff, false).matmul(&disc.centroid_matrix(coeff));
            let m = SpMat::diag(&factor).matmul(&base).add(&ad, C64::new(eps, 0.0));
            let op = DiscreteOperator::new(format!("dbar[{eps}]"), m, sec, FormKind::form01(coeff));
            Ok(if which == DerivativeTarget::DbarSections { op } else { disc.adjoint(&op) })
        }
    }
}

/// Chart data of a base point `μ⊕ν` for the Kodaira–Spencer map away from
/// the origin: the solved map `χ₁` and, to first order, `χ₂ = 1 + ξ` with
/// `∂̄ξ = ν` on the octagon.
#[derive(Clone, Debug)]
pub struct ChartData {
    pub at: TangentVector,
    pub chi1: MappingGrid,
    /// `χ₂` per triangle.
    pub chi2: Vec<CMat>,
    /// `χ₂⁻¹∂χ₂` per triangle.
    pub chi2_log: Vec<CMat>,
}

impl ChartData {
    pub fn first_order(disc: &Discretization, at: &TangentVector, params: &GridParams) -> Result<Self> {
        check_direction(at)?;
        let coeff = modified_coefficient(disc, at, 1.0, params)?;
        let chi1 = solve_beltrami(&coeff, params)?;
        let n = disc.rep.n;
        let nm = disc.form_matrices(&at.nu);
        let mesh = &disc.mesh;
        let centroids: Vec<C64> = mesh.triangles.iter().map(|t| t.iter().map(|&v| mesh.vertices[v]).sum::<C64>() / 3.0).collect();
        let mut chi2 = Vec::with_capacity(centroids.len());
        let mut chi2_log = Vec::with_capacity(centroids.len());
        for (t, z) in centroids.iter().enumerate() {
            // ξ = (1/π)∫ν/(z−ζ), ∂ξ = −(1/π)∫ν/(z−ζ)², self cell omitted
            let mut xi = CMat::zeros(n, n);
            let mut dxi = CMat::zeros(n, n);
            for (s, w) in centroids.iter().enumerate() {
                if s == t {
                    continue;
                }
                let a = mesh.tri_area[s] / PI;
                xi += &nm[s] * (a / (z - w));
                dxi -= &nm[s] * (a / ((z - w) * (z - w)));
            }
            let c2 = CMat::identity(n, n) + xi;
            let inv = c2.clone().try_inverse().ok_or_else(|| Error::SingularAssembly("χ₂ not invertible".into()))?;
            chi2_log.push(inv * dxi);
            chi2.push(c2);
        }
        Ok(Self { at: at.clone(), chi1, chi2, chi2_log })
    }
}
