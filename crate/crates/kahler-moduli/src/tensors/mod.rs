//! Closed tensor formulas on the moduli of pairs: base metric and Kähler
//! forms, the metric Hessian, the Ricci form, the log-det variations, the
//! first-variation cancellation and the Ricci-potential identity.
//!
//! Formulas are data ([`FormulaIR`]) evaluated by [`TermEvaluator`]. Tangent
//! vectors run over the combined orthonormal basis of harmonic Beltrami
//! differentials followed by bundle-valued harmonic (0,1)-forms.

pub mod eval;
pub mod formulas;
pub mod ir;
pub mod results;

pub use eval::{evaluate_formula, FormulaValue, TensorContext, TensorOptions, TermEvaluator};
pub use ir::{FormulaIR, Slot, Term, Token, TraceSector, Variant};
pub use results::{sign_audit, variant_audit, AuditReport, AuditRow, TensorResult, TermTensor, VariantRow};

use crate::calculus::FormKind;
use crate::error::{Error, Result};
use crate::harmonic::{HarmonicKind, TangentVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Base metric and its two Kähler forms, `ω(u,v) = Re g(iu, v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseMetric {
    pub g: C64,
    pub omega_t: C64,
    pub omega_m: C64,
}

fn check_tangent(ctx: &TensorContext, tv: &TangentVector) -> Result<()> {
    if tv.mu.kind != FormKind::BELTRAMI {
        return Err(Error::kind_mismatch(FormKind::BELTRAMI, tv.mu.kind));
    }
    if tv.nu.kind != ctx.e.field_kind() {
        return Err(Error::kind_mismatch(ctx.e.field_kind(), tv.nu.kind));
    }
    Ok(())
}

fn combined_names(ctx: &TensorContext) -> Vec<String> {
    let e = if ctx.e.kind == HarmonicKind::AdE { "ade" } else { "ende" };
    (0..ctx.tx.dim()).map(|i| format!("tx{i}")).chain((0..ctx.e.dim()).map(|i| format!("{e}{i}"))).collect()
}

pub fn base_metric(ctx: &TensorContext, tv1: &TangentVector, tv2: &TangentVector) -> Result<BaseMetric> {
    check_tangent(ctx, tv1)?;
    check_tangent(ctx, tv2)?;
    let v = evaluate_formula(ctx, &formulas::base_metric(), &[tv1, tv2])?;
    let (gt, gm) = (v.terms[0].1, v.terms[1].1);
    let kahler = |g: C64| C64::new((C64::i() * g).re, 0.0);
    Ok(BaseMetric { g: v.total, omega_t: kahler(gt), omega_m: kahler(gm) })
}

/// Evaluates one term over every combined-basis tuple of `rank` indices.
pub fn term_tensor(ctx: &TensorContext, term: &Term, rank: usize) -> Result<TermTensor> {
    let basis = ctx.combined_basis();
    let d = basis.len();
    let mut ev = TermEvaluator::new(ctx, term, &basis)?;
    let total = d.pow(rank as u32);
    let mut entries = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = [0usize; 4];
        let mut r = flat;
        for k in (0..rank).rev() {
            idx[k] = r % d;
            r /= d;
        }
        entries.push(ev.eval(idx)?);
    }
    Ok(TermTensor { label: term.label.clone(), entries })
}

/// Evaluates a two-slot formula over the combined basis, one matrix per term.
fn matrix_terms(ctx: &TensorContext, f: &FormulaIR) -> Result<Vec<TermTensor>> {
    f.terms.iter().map(|t| term_tensor(ctx, t, 2)).collect()
}

/// The metric formula with the context's options applied.
pub fn metric_formula(ctx: &TensorContext) -> FormulaIR {
    formulas::metric(ctx.options.shift, ctx.options.delta0).with_variants(&ctx.options.variants)
}

/// The Ricci formula with the context's variants applied.
pub fn ricci_formula(ctx: &TensorContext) -> FormulaIR {
    formulas::ricci().with_variants(&ctx.options.variants)
}

/// The metric Hessian `H(1,2;3,4)` over all combined-basis index tuples.
pub fn metric_hessian(ctx: &TensorContext) -> Result<TensorResult> {
    metric_hessian_with(ctx, &metric_formula(ctx))
}

/// The metric Hessian of an arbitrary (e.g. edited) metric formula.
pub fn metric_hessian_with(ctx: &TensorContext, f: &FormulaIR) -> Result<TensorResult> {
    let terms = f.terms.iter().map(|t| term_tensor(ctx, t, 4)).collect::<Result<Vec<_>>>()?;
    let d = ctx.combined_dim();
    let mut r = TensorResult::new("metric_hessian", vec![d; 4], combined_names(ctx), terms);
    r.residuals.insert("hermitian_defect".into(), r.hermitian_defect());
    Ok(r)
}

/// The Ricci form `Ric(j, k̄)` over the combined basis. Its entries are `−i`
/// times a Hermitian matrix; the recorded defect is that of `i·Ric`.
pub fn ricci_form(ctx: &TensorContext) -> Result<TensorResult> {
    ricci_form_with(ctx, &ricci_formula(ctx))
}

pub fn ricci_form_with(ctx: &TensorContext, f: &FormulaIR) -> Result<TensorResult> {
    let terms = matrix_terms(ctx, f)?;
    let d = ctx.combined_dim();
    let mut r = TensorResult::new("ricci_form", vec![d, d], combined_names(ctx), terms);
    r.residuals.insert("hermitian_defect".into(), r.hermitian_defect_of(C64::i()));
    Ok(r)
}

/// Sign and variant audit of the metric Hessian or the Ricci form, run on
/// the transcription with every declared variant as a candidate.
pub fn audit(ctx: &TensorContext, name: &str) -> Result<AuditReport> {
    let (f, rank, phase) = match name {
        "metric" => (formulas::metric(ctx.options.shift, ctx.options.delta0), 4, C64::new(1.0, 0.0)),
        "ricci" => (formulas::ricci(), 2, C64::i()),
        other => return Err(Error::InvalidInput(format!("no symmetry audit for formula {other}; use metric or ricci"))),
    };
    let terms = f.terms.iter().map(|t| term_tensor(ctx, t, rank)).collect::<Result<Vec<_>>>()?;
    let variants = f
        .terms
        .iter()
        .map(|t| (0..t.variants.len()).map(|k| term_tensor(ctx, &t.with_variant(k), rank)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let d = ctx.combined_dim();
    let t = TensorResult::new(name, vec![d; rank], combined_names(ctx), terms);
    Ok(variant_audit(&t, &variants, phase))
}

/// Second variations of `log det Δ_AdE` and of `log det Δ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogdetVariations {
    pub ade: TensorResult,
    pub delta0: TensorResult,
}

pub fn logdet_variations(ctx: &TensorContext) -> Result<LogdetVariations> {
    let n = ctx.disc.rep.n;
    let d = ctx.combined_dim();
    let mut terms = matrix_terms(ctx, &formulas::logdet(n))?;
    // the ∂̄_μ₂∂_ν₁ block is the conjugate transpose of the ∂̄_ν₂∂_μ₁ block
    let mn = terms.iter().find(|t| t.label == "logdet.mn.trace").expect("mixed block").entries.clone();
    let nm = (0..d * d).map(|f| mn[(f % d) * d + f / d].conj()).collect();
    terms.push(TermTensor { label: "logdet.nm.conjugate".into(), entries: nm });
    let mut ade = TensorResult::new("logdet_ade", vec![d, d], combined_names(ctx), terms);
    ade.residuals.insert("hermitian_defect".into(), ade.hermitian_defect());
    let mut delta0 = TensorResult::new("logdet_delta0", vec![d, d], combined_names(ctx), matrix_terms(ctx, &formulas::logdet_delta0())?);
    delta0.residuals.insert("hermitian_defect".into(), delta0.hermitian_defect());
    Ok(LogdetVariations { ade, delta0 })
}

/// `|A + B|` for the two surviving first-variation integrals, with `ν₁`
/// from `tv1`, `ν` from `dir` and `μ₂` from `tv2`.
pub fn kahler_first_derivative_residual(ctx: &TensorContext, dir: &TangentVector, tv1: &TangentVector, tv2: &TangentVector) -> Result<f64> {
    for t in [dir, tv1, tv2] {
        check_tangent(ctx, t)?;
    }
    Ok(evaluate_formula(ctx, &formulas::kahler(), &[tv1, tv2, dir])?.total.norm())
}

/// The cancellation over orthonormal bases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KahlerResidual {
    /// Frobenius norm of `A + B` over all basis triples; equals the norm of
    /// the trilinear form, independent of the orthonormal bases.
    pub residual: f64,
    /// Frobenius norm of `A` alone.
    pub scale: f64,
}

pub fn kahler_residual(ctx: &TensorContext) -> Result<KahlerResidual> {
    let f = formulas::kahler();
    let basis = ctx.combined_basis();
    let mut evs: Vec<TermEvaluator> = f.terms.iter().map(|t| TermEvaluator::new(ctx, t, &basis)).collect::<Result<_>>()?;
    let d = basis.len();
    let (mut res, mut scale) = (0.0, 0.0);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let x = evs[0].eval([a, b, c, 0])?;
                let y = evs[1].eval([a, b, c, 0])?;
                res += (x + y).norm_sqr();
                scale += x.norm_sqr();
            }
        }
    }
    Ok(KahlerResidual { residual: res.sqrt(), scale: scale.sqrt() })
}

/// One exact-constant check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCheck {
    pub label: String,
    pub found: C64,
    pub expected: C64,
    pub exact: bool,
}

/// Reads the symplectic constants from the formula documents.
pub fn coefficient_audit(n: usize, identity: &FormulaIR, logdet: &FormulaIR, logdet0: &FormulaIR) -> Vec<CoefficientCheck> {
    let nf = n as f64;
    let expected = [
        (identity, "identity.omega_m", C64::new(-nf / (2.0 * PI), 0.0)),
        (identity, "identity.omega_t", C64::new(-nf * nf / (12.0 * PI), 0.0)),
        (logdet, "logdet.nn.omega_m", C64::new(0.0, -2.0 * nf / (2.0 * PI))),
        (logdet, "logdet.mm.omega_t", C64::new(0.0, -(nf * nf - 1.0) / (6.0 * PI))),
        (logdet0, "logdet0.omega_t", C64::new(0.0, 1.0 / (6.0 * PI))),
    ];
    expected
        .iter()
        .map(|(f, label, want)| {
            let found = f.term(label).map(|t| t.coefficient()).unwrap_or(C64::new(f64::NAN, f64::NAN));
            CoefficientCheck { label: label.to_string(), found, expected: *want, exact: found == *want }
        })
        .collect()
}

/// Per-term share of the identity residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub label: String,
    pub side: String,
    pub norm: f64,
    /// Real part of `⟨term, residual⟩ / ‖residual‖`, signed by side.
    pub along_residual: f64,
}

/// Residual report of `2i∂∂̄F = Ric − (n/2π)Ω_M − (n²/12π)Ω_T` with
/// `F = ½(log det Δ_AdE + log det Δ₀)`. The variations `V = ∂̄_v∂_u log det`
/// are Hermitian matrices and `∂∂̄ = −∂̄∂`, so the left side is `−i(V_AdE + V_0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub lhs: TensorResult,
    pub rhs: TensorResult,
    pub residual: Vec<C64>,
    pub relative_residual: f64,
    pub attribution: Vec<Attribution>,
    /// Least-squares multipliers of the two symplectic terms that best
    /// reconcile the sides; 1 means the stated normalization.
    pub implied_omega_m_factor: f64,
    pub implied_omega_t_factor: f64,
    pub coefficients: Vec<CoefficientCheck>,
    /// Hermitian defects of `i·LHS` and `i·RHS`.
    pub lhs_defect: f64,
    pub rhs_defect: f64,
}

impl IdentityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Assembles both sides of the Ricci-potential identity over the TX ⊕ Ad E
/// basis; `ctx.e` must be the Ad E basis.
pub fn ricci_potential_identity(ctx: &TensorContext) -> Result<IdentityReport> {
    if ctx.e.kind != HarmonicKind::AdE {
        return Err(Error::kind_mismatch(FormKind::form01(crate::calculus::Coeff::AdE), ctx.e.field_kind()));
    }
    let n = ctx.disc.rep.n;
    let d = ctx.combined_dim();
    let names = combined_names(ctx);
    let var = logdet_variations(ctx)?;
    let i = -C64::i();
    let lhs_terms: Vec<TermTensor> = var
        .ade
        .terms
        .iter()
        .chain(&var.delta0.terms)
        .map(|t| TermTensor { label: t.label.clone(), entries: t.entries.iter().map(|v| v * i).collect() })
        .collect();
    let lhs = TensorResult::new("identity_lhs", vec![d, d], names.clone(), lhs_terms);
    let ric = ricci_form(ctx)?;
    let id_formula = formulas::identity(n);
    let sym = matrix_terms(ctx, &id_formula)?;
    let mut rhs_terms = ric.terms.clone();
    rhs_terms.extend(sym.iter().cloned());
    let rhs = TensorResult::new("identity_rhs", vec![d, d], names, rhs_terms);
    let residual: Vec<C64> = lhs.entries.iter().zip(&rhs.entries).map(|(a, b)| a - b).collect();
    let rn = results::norm(&residual);
    let relative_residual = rn / lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
    let mut attribution = Vec::new();
    for (side, t, sign) in lhs.terms.iter().map(|t| ("lhs", t, 1.0)).chain(rhs.terms.iter().map(|t| ("rhs", t, -1.0))) {
        let dot: C64 = t.entries.iter().zip(&residual).map(|(a, r)| a * r.conj()).sum();
        attribution.push(Attribution {
            label: t.label.clone(),
            side: side.into(),
            norm: results::norm(&t.entries),
            along_residual: if rn > 0.0 { sign * dot.re / rn } else { 0.0 },
        });
    }
    // LHS − (Ric + a·S_M + b·S_T) minimal over real a, b
    let (sm, st) = (&sym[0].entries, &sym[1].entries);
    let target: Vec<C64> = lhs.entries.iter().zip(&ric.entries).map(|(l, r)| l - r).collect();
    let dotr = |x: &[C64], y: &[C64]| -> f64 { x.iter().zip(y).map(|(a, b)| (a * b.conj()).re).sum() };
    let (a11, a12, a22) = (dotr(sm, sm), dotr(sm, st), dotr(st, st));
    let (b1, b2) = (dotr(sm, &target), dotr(st, &target));
    let det = a11 * a22 - a12 * a12;
    let (fa, fb) = if det.abs() > 1e-300 { ((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det) } else { (f64::NAN, f64::NAN) };
    let coefficients = coefficient_audit(n, &id_formula, &formulas::logdet(n), &formulas::logdet_delta0());
    let (lhs_defect, rhs_defect) = (lhs.hermitian_defect_of(C64::i()), rhs.hermitian_defect_of(C64::i()));
    Ok(IdentityReport {
        lhs,
        rhs,
        residual,
        relative_residual,
        attribution,
        implied_omega_m_factor: fa,
        implied_omega_t_factor: fb,
        coefficients,
        lhs_defect,
        rhs_defect,
    })
}
