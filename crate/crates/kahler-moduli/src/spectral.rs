//! Low spectra of the twisted Laplacians, heat traces, zeta-regularized
//! log-determinants and the Ricci potential `½ log det′Δ_AdE det′Δ₀`.
//!
//! Eigenvalues are reported in Laplace–Beltrami normalization, twice the
//! eigenvalues of the assembled `∂̄*∂̄`, so Weyl's law reads
//! `N(λ) ≈ dim · Area · λ / 4π`.
//!
//! The zeta function is the computed partial sum plus a tail with Weyl slope
//! `a = dim·Area/4π` and fixed constant term `ζ(0) = dim·χ/6 − dim ker`:
//! `ζ(s) = Σ_{λ≤Λ} λ^{−s} + a Λ^{1−s}/(s−1) + b Λ^{−s}` with
//! `b = ζ(0) − N(Λ) + aΛ`. The resulting `−ζ′(0)` estimate `G(Λ)` oscillates
//! with the lattice-point error of `N`, so it is averaged over cutoffs with a
//! Hann window across the top three quarters of the computed spectrum.

use crate::calculus::{Coeff, DiscreteOperator, Discretization, FormKind};
use crate::error::{Error, Result};
use crate::linalg::{smallest_eigenpairs, SpMat};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

/// Eigenvalues below this count as zero modes.
pub const ZERO_MODE_TOL: f64 = 1e-8;
/// Largest admissible eigenvalue count as a fraction of the unknowns.
pub const MAX_FRACTION: f64 = 0.2;
/// Default eigenvalue count as a fraction of the unknowns; beyond it the
/// first-order eigenvalue error is no longer linear in `λ`.
pub const DEFAULT_FRACTION: f64 = 0.1;
/// Minimum number of eigenvalues beyond the kernel for the tail model.
pub const MIN_NONZERO: usize = 50;
/// Required relative eigen-residual.
pub const EIGEN_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub label: String,
    pub level: usize,
    pub fiber_dim: usize,
    pub area: f64,
    pub euler_characteristic: i64,
    pub kernel_dim: usize,
    /// Ascending, with multiplicity.
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub requested: usize,
    /// Length of the converged prefix; the summary is complete when this
    /// equals `requested`.
    pub converged: usize,
    /// `(t, Σ e^{−λt})` samples.
    pub heat_trace: Vec<(f64, f64)>,
    pub logdet: Option<f64>,
    pub err: Option<f64>,
}

impl SpectralSummary {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_complete(&self) -> bool {
        self.converged >= self.requested
    }

    /// `index,eigenvalue,residual` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue,residual\n");
        for (i, (l, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            writeln!(s, "{i},{l:.17e},{r:.6e}").expect("string write");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }

    /// Builds a summary from known eigenvalues (used by the torus oracle).
    pub fn from_eigenvalues(label: &str, fiber_dim: usize, area: f64, chi: i64, mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(f64::total_cmp);
        let kernel_dim = eigenvalues.iter().take_while(|l| l.abs() < ZERO_MODE_TOL).count();
        let n = eigenvalues.len();
        let mut s = SpectralSummary {
            label: label.into(),
            level: 0,
            fiber_dim,
            area,
            euler_characteristic: chi,
            kernel_dim,
            residuals: vec![0.0; n],
            eigenvalues,
            requested: n,
            converged: n,
            heat_trace: Vec::new(),
            logdet: None,
            err: None,
        };
        s.heat_trace = heat_trace(&s.eigenvalues, 24);
        s
    }
}

/// Heat trace at log-spaced times between `1/λ_max` and `10/λ_1`.
pub fn heat_trace(eigs: &[f64], samples: usize) -> Vec<(f64, f64)> {
    let Some(&top) = eigs.last() else { return Vec::new() };
    let low = eigs.iter().copied().find(|l| *l > ZERO_MODE_TOL).unwrap_or(top);
    if top <= 0.0 {
        return Vec::new();
    }
    let (t0, t1) = (1.0 / top, (10.0 / low).max(2.0 / top));
    (0..samples)
        .map(|k| {
            let t = t0 * (t1 / t0).powf(k as f64 / (samples - 1) as f64);
            (t, eigs.iter().map(|l| (-l * t).exp()).sum())
        })
        .collect()
}

/// Smallest `m` eigenvalues of a section Laplacian against its mass matrix.
pub fn eigen_spectrum(disc: &Discretization, lap: &DiscreteOperator, m: usize) -> Result<SpectralSummary> {
    let kind = lap.domain;
    let Some(k) = &lap.stiffness else {
        return Err(Error::kind_mismatch(FormKind::function(kind.coeff), kind));
    };
    let n = k.nrows;
    if m == 0 || m as f64 > MAX_FRACTION * n as f64 {
        return Err(Error::InvalidInput(format!("eigenvalue count {m} exceeds {MAX_FRACTION} of {n} unknowns")));
    }
    let mass = disc.mass(kind);
    let e = smallest_eigenpairs(k, &mass, m, 1e-13);
    let (eigenvalues, residuals) = scaled_pairs(k, &mass, &e.values, &e.vectors);
    let converged = residuals.iter().take_while(|&&r| r <= EIGEN_TOL).count();
    let kernel_dim = eigenvalues.iter().take_while(|l| l.abs() < ZERO_MODE_TOL).count();
    let heat = heat_trace(&eigenvalues, 24);
    Ok(SpectralSummary {
        label: label_for(kind.coeff),
        level: disc.mesh.level,
        fiber_dim: disc.fiber_dim(kind.coeff),
        area: disc.mesh.hyperbolic_area(),
        euler_characteristic: 2 - 2 * disc.mesh.genus as i64,
        kernel_dim,
        eigenvalues,
        residuals,
        requested: m,
        converged,
        heat_trace: heat,
        logdet: None,
        err: None,
    })
}

fn label_for(c: Coeff) -> String {
    match c {
        Coeff::Trivial => "lap0".into(),
        Coeff::AdE => "lapAdE".into(),
        other => format!("lap{other:?}"),
    }
}

/// Laplace–Beltrami eigenvalues `2λ` and residuals
/// `‖(K − λM)x‖_{M⁻¹} / (max(λ, 1) ‖x‖_M)`.
fn scaled_pairs(k: &SpMat, m: &[f64], vals: &[f64], vecs: &[Vec<crate::C64>]) -> (Vec<f64>, Vec<f64>) {
    let mut out = Vec::with_capacity(vals.len());
    let mut res = Vec::with_capacity(vals.len());
    for (l, x) in vals.iter().zip(vecs) {
        let kx = k.mul_vec(x);
        let num: f64 = kx.iter().zip(x).zip(m).map(|((a, b), w)| (a - b * (*l * w)).norm_sqr() / w).sum::<f64>().sqrt();
        let den: f64 = x.iter().zip(m).map(|(b, w)| b.norm_sqr() * w).sum::<f64>().sqrt();
        out.push(2.0 * l.max(0.0));
        res.push(num / (den * l.abs().max(1.0)));
    }
    (out, res)
}

/// Tail-model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaParams {
    /// Weyl slope `a`.
    pub weyl: f64,
    /// `ζ(0)` including the removed zero modes.
    pub zeta0: f64,
    /// Start of the averaging window as a fraction of the nonzero count.
    pub window_start: f64,
    /// Calibrate the discretization correction of the eigenvalues; off for
    /// exact spectra.
    pub correct_eigenvalues: bool,
}

impl ZetaParams {
    /// Heat-invariant values for a flat bundle on a closed surface.
    pub fn for_summary(s: &SpectralSummary) -> Self {
        let d = s.fiber_dim as f64;
        ZetaParams { weyl: d * s.area / (4.0 * PI), zeta0: d * s.euler_characteristic as f64 / 6.0 - s.kernel_dim as f64, window_start: 0.25, correct_eigenvalues: true }
    }
}

/// Result of [`zeta_logdet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaResult {
    pub logdet: f64,
    pub err: f64,
    /// Least-squares counting slope over the window divided by `a`.
    pub weyl_fit_ratio: f64,
    /// Condition number of the counting-function fit.
    pub fit_condition: f64,
    /// Calibrated correction `κ λ_max`.
    pub correction: f64,
    pub window: (f64, f64),
}

struct Partial {
    eigs: Vec<f64>,
    logsum: Vec<f64>,
}

impl Partial {
    fn new(eigs: &[f64]) -> Self {
        let mut logsum = Vec::with_capacity(eigs.len() + 1);
        logsum.push(0.0);
        for l in eigs {
            logsum.push(logsum.last().unwrap() + l.ln());
        }
        Self { eigs: eigs.to_vec(), logsum }
    }

    fn count(&self, x: f64) -> usize {
        self.eigs.partition_point(|l| *l <= x)
    }

    /// `−ζ′(0)` with the tail attached at `Λ`.
    fn g(&self, lam: f64, p: &ZetaParams, nz: f64) -> f64 {
        let n = self.count(lam);
        let ll = lam.ln();
        self.logsum[n] - p.weyl * lam * (ll - 1.0) - (n as f64 - p.weyl * lam - nz) * ll
    }

    /// Hann-weighted average of `G` over `[lo, hi]`.
    fn averaged(&self, lo: f64, hi: f64, p: &ZetaParams, nz: f64) -> f64 {
        const SAMPLES: usize = 2000;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..SAMPLES {
            let u = (k as f64 + 0.5) / SAMPLES as f64;
            let w = (PI * u).sin().powi(2);
            num += w * self.g(lo + (hi - lo) * u, p, nz);
            den += w;
        }
        num / den
    }
}

/// Least-squares slope of the counting function on `[lo, hi]` and the
/// condition number of the fit.
fn counting_slope(eigs: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    const SAMPLES: usize = 200;
    let xs: Vec<f64> = (0..SAMPLES).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / SAMPLES as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| eigs.partition_point(|l| *l <= x) as f64).collect();
    let nn = SAMPLES as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let sv = nalgebra::Matrix2::new(sxx, sx, sx, nn).singular_values();
    ((nn * sxy - sx * sy) / (nn * sxx - sx * sx), sv[0] / sv[1])
}

/// Corrected eigenvalues `λ / (1 − κλ)`.
fn corrected(eigs: &[f64], kappa: f64) -> Vec<f64> {
    eigs.iter().map(|l| l / (1.0 - kappa * l)).collect()
}

/// Mean of `N(x) − a x − c` over the window, in corrected units.
fn counting_offset(eigs: &[f64], weyl: f64, zeta0: f64, lo: f64, hi: f64) -> f64 {
    const SAMPLES: usize = 400;
    (0..SAMPLES)
        .map(|i| {
            let x = lo + (hi - lo) * (i as f64 + 0.5) / SAMPLES as f64;
            eigs.partition_point(|l| *l <= x) as f64 - weyl * x - zeta0
        })
        .sum::<f64>()
        / SAMPLES as f64
}

/// Calibrates `κ` so that the corrected counting function on the index
/// window `[f0, f1]` has zero mean offset from `a λ + ζ(0)`. `None` when no
/// root is bracketed.
fn calibrate(eigs: &[f64], p: &ZetaParams, f0: f64, f1: f64) -> Option<f64> {
    let k = eigs.len();
    let idx = |f: f64| ((k as f64 * f) as usize).min(k - 1);
    let top = eigs[k - 1];
    let offset = |kap: f64| {
        let c = corrected(eigs, kap);
        counting_offset(&c, p.weyl, p.zeta0, c[idx(f0)], c[idx(f1)])
    };
    let (mut lo, mut hi) = (-0.5 / top, 0.5 / top);
    let flo = offset(lo);
    if flo.signum() == offset(hi).signum() {
        return None;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if offset(mid).signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// `log det′` and its error estimate.
///
/// First-order elements shift eigenvalues by a relative amount that grows
/// linearly in `λ`. Before the zeta sum the computed eigenvalues are mapped
/// to `λ / (1 − κλ)` with `κ` calibrated against the exact Weyl law; the
/// spread of `κ` fitted on the two halves of the window enters the error.
pub fn zeta_logdet(s: &SpectralSummary, p: &ZetaParams) -> Result<ZetaResult> {
    if !s.is_complete() {
        return Err(Error::EigenNotConverged { converged: s.converged, requested: s.requested });
    }
    let raw: Vec<f64> = s.eigenvalues[s.kernel_dim..].to_vec();
    let k = raw.len();
    if k < MIN_NONZERO {
        return Err(Error::TailFitUnstable(format!("{k} eigenvalues beyond the kernel, need {MIN_NONZERO} (condition number infinite)")));
    }
    let idx = |f: f64| ((k as f64 * f) as usize).min(k - 1);
    let w0 = p.window_start;
    let (raw_slope, fit_condition) = counting_slope(&raw, raw[idx(w0)], raw[k - 1]);
    let weyl_fit_ratio = raw_slope / p.weyl;
    if !fit_condition.is_finite() || !(0.5..=2.0).contains(&weyl_fit_ratio) {
        return Err(Error::TailFitUnstable(format!("counting slope ratio {weyl_fit_ratio:.3}, condition number {fit_condition:.3e}")));
    }
    let unstable = || Error::TailFitUnstable(format!("no eigenvalue correction matches the Weyl slope (raw ratio {weyl_fit_ratio:.3}, condition number {fit_condition:.3e})"));
    let (kappa, kappa_lo, kappa_hi) = if p.correct_eigenvalues {
        let kappa = calibrate(&raw, p, w0, 1.0).ok_or_else(unstable)?;
        (kappa, calibrate(&raw, p, w0, 0.5 + w0 / 2.0).unwrap_or(kappa), calibrate(&raw, p, 0.5, 1.0).unwrap_or(kappa))
    } else {
        (0.0, 0.0, 0.0)
    };
    let estimate = |kap: f64, f0: f64, f1: f64| -> f64 {
        let c = corrected(&raw, kap);
        Partial::new(&c).averaged(c[idx(f0)], c[((k as f64 * f1) as usize).clamp(1, k) - 1], p, p.zeta0)
    };
    let logdet = estimate(kappa, w0, 1.0);
    // window sensitivity, the estimate from the lower half of the spectrum,
    // and the spread of the calibration
    let upper = estimate(kappa, 0.5, 1.0);
    let lower = estimate(kappa, w0 / 2.0, 0.5);
    let spread = (estimate(kappa_lo, w0, 1.0) - estimate(kappa_hi, w0, 1.0)).abs();
    let residual: f64 = s.residuals[s.kernel_dim..].iter().sum();
    let err = (logdet - upper).abs() + (logdet - lower).abs() + spread + residual;
    let c = corrected(&raw, kappa);
    Ok(ZetaResult { logdet, err, weyl_fit_ratio, fit_condition, correction: kappa * raw[k - 1], window: (c[idx(w0)], c[k - 1]) })
}

/// Computes the log-determinant and stores it in the summary.
pub fn attach_logdet(s: &mut SpectralSummary) -> Result<ZetaResult> {
    let r = zeta_logdet(s, &ZetaParams::for_summary(s))?;
    s.logdet = Some(r.logdet);
    s.err = Some(r.err);
    Ok(r)
}

/// Outcome of an oracle comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub abs_error: f64,
    pub tolerance: f64,
    /// Error estimated by the pipeline itself.
    pub estimated_err: f64,
    pub passed: bool,
}

/// `det′Δ` of the flat unit-square torus, `|η(i)|⁴ = Γ(1/4)⁴ / (16π³)`.
pub fn torus_reference_logdet() -> f64 {
    const GAMMA_QUARTER: f64 = 3.625_609_908_221_908_4;
    (GAMMA_QUARTER.powi(4) / (16.0 * PI.powi(3))).ln()
}

/// Spectrum of the Fourier Laplacian on an `N × N` grid of the unit torus:
/// `4π²(m² + n²)` for wave numbers in `[−N/2, N/2)`.
pub fn torus_spectrum(grid: usize) -> Vec<f64> {
    let half = grid as i64 / 2;
    let mut out = Vec::with_capacity(grid * grid);
    for m in -half..grid as i64 - half {
        for n in -half..grid as i64 - half {
            out.push(4.0 * PI * PI * (m * m + n * n) as f64);
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Torus oracle at grid `2^level`, using the lowest fifth of the spectrum.
pub fn torus_selftest_level(level: u32) -> Result<ComparisonReport> {
    let grid = 1usize << level;
    let mut eigs = torus_spectrum(grid);
    eigs.truncate(((grid * grid) as f64 * MAX_FRACTION) as usize);
    let s = SpectralSummary::from_eigenvalues("torus", 1, 1.0, 0, eigs);
    let params = ZetaParams { correct_eigenvalues: false, ..ZetaParams::for_summary(&s) };
    let r = zeta_logdet(&s, &params)?;
    let reference = torus_reference_logdet();
    let abs_error = (r.logdet - reference).abs();
    let tolerance = 0.01;
    Ok(ComparisonReport { name: format!("torus grid {grid}"), value: r.logdet, reference, abs_error, tolerance, estimated_err: r.err, passed: abs_error <= tolerance })
}

/// Torus oracle at the default grid `2^6`.
pub fn torus_selftest() -> Result<ComparisonReport> {
    torus_selftest_level(6)
}

/// Which Laplacian the `Δ₀` factor of the Ricci potential denotes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delta0Reading {
    Functions,
    /// `∂̄∂̄*` on (0,1)-forms; its nonzero spectrum is that of `∂̄*∂̄`.
    OneForms,
}

/// Ricci potential with its ingredients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RicciPotential {
    pub value: f64,
    pub err: f64,
    pub logdet_ade: f64,
    pub logdet_0: f64,
    pub err_ade: f64,
    pub err_0: f64,
    pub count_ade: usize,
    pub count_0: usize,
    pub delta0: Delta0Reading,
}

/// Largest admissible eigenvalue count for a section kind.
pub fn max_count(disc: &Discretization, coeff: Coeff) -> usize {
    (disc.dof(FormKind::function(coeff)) as f64 * MAX_FRACTION) as usize
}

/// Default eigenvalue count for a section kind.
pub fn default_count(disc: &Discretization, coeff: Coeff) -> usize {
    (disc.dof(FormKind::function(coeff)) as f64 * DEFAULT_FRACTION) as usize
}

/// Spectrum with log-determinant attached.
pub fn spectrum_with_logdet(disc: &Discretization, coeff: Coeff, count: usize) -> Result<SpectralSummary> {
    let lap = disc.laplacian(FormKind::function(coeff))?;
    let mut s = eigen_spectrum(disc, &lap, count.min(max_count(disc, coeff)))?;
    attach_logdet(&mut s)?;
    Ok(s)
}

/// `F = ½(log det′Δ_AdE + log det′Δ₀)`. Without an explicit count each
/// operator uses a tenth of its unknowns; counts are capped at a fifth.
pub fn ricci_potential_value(disc: &Discretization, count: Option<usize>, delta0: Delta0Reading) -> Result<RicciPotential> {
    let pick = |c: Coeff| count.unwrap_or_else(|| default_count(disc, c));
    let a = spectrum_with_logdet(disc, Coeff::AdE, pick(Coeff::AdE))?;
    let z = spectrum_with_logdet(disc, Coeff::Trivial, pick(Coeff::Trivial))?;
    let (la, ea) = (a.logdet.unwrap_or(f64::NAN), a.err.unwrap_or(f64::NAN));
    let (l0, e0) = (z.logdet.unwrap_or(f64::NAN), z.err.unwrap_or(f64::NAN));
    Ok(RicciPotential {
        value: 0.5 * (la + l0),
        err: 0.5 * (ea + e0),
        logdet_ade: la,
        logdet_0: l0,
        err_ade: ea,
        err_0: e0,
        count_ade: a.count(),
        count_0: z.count(),
        delta0,
    })
}
