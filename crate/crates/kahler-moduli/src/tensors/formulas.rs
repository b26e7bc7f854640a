//! The shipped formulas, built as expression trees.
//!
//! Each builder reproduces one document under `formulas/`; a test checks
//! that the shipped JSON equals the builder output for the default options.

use super::ir::*;
use crate::spectral::Delta0Reading;
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

const MINUS_I: C64 = C64::new(0.0, -1.0);
const ONE: C64 = C64::new(1.0, 0.0);

fn mu(k: usize) -> Ex {
    Ex::slot(Slot::MUS[k - 1])
}
fn nu(k: usize) -> Ex {
    Ex::slot(Slot::NUS[k - 1])
}
fn arg() -> Ex {
    Ex::slot(Slot::Arg)
}

/// `i∫tr(x ∧ ȳᵀ)` for (0,1)-forms.
fn inner_e(x: Ex, y: Ex) -> Ex {
    wedge(x, y.conj()).scale(C64::new(0.0, 1.0))
}

/// `i∫x ȳ g̃` for Beltrami differentials.
fn inner_tx(x: Ex, y: Ex) -> Ex {
    mul(x, y.conj()).metric().integrate().scale(C64::new(0.0, 1.0))
}

/// Kähler-form matrix `(i/2) g` of the bundle summand.
fn omega_m() -> Ex {
    inner_e(nu(1), nu(2)).scale(C64::new(0.0, 0.5))
}

/// Kähler-form matrix `(i/2) g` of the Teichmüller summand.
fn omega_t() -> Ex {
    inner_tx(mu(1), mu(2)).scale(C64::new(0.0, 0.5))
}

/// `⋆∂(μ_a ν̄_bᵀ) + ⋆∂̄(μ̄_b ν_a)`, a section.
fn mixed_derivative(a: usize, b: usize) -> Ex {
    add(mul(mu(a), nu(b).conj()).partial().star(), mul(mu(b).conj(), nu(a)).dbar().star())
}

/// `⋆[⋆ν_a, ν̄_bᵀ]`, a section.
fn star_bracket(a: usize, b: usize) -> Ex {
    bracket(nu(a).star(), nu(b).conj()).star()
}

/// Metric Hessian: the eleven displayed integrals.
pub fn metric(shift: f64, delta0: Delta0Reading) -> FormulaIR {
    let c = MINUS_I;
    // Δ⁻¹(−∂*(μ̄₂ν₃) − ⋆ad ν₂⋆ν₃)
    let s1 = add(mul(mu(2).conj(), nu(3)).partial_adj().neg(), star_ad_star(nu(2), nu(3)).neg()).green();
    let t1 = wedge(add(mul(mu(1), s1.clone().partial()).neg(), bracket(nu(1), s1)), nu(4).conj());
    let s2 = add(star_ad_star(nu(2), nu(1)).neg(), mixed_derivative(1, 2).neg()).green();
    let t2 = wedge(bracket(s2, nu(3)), nu(4).conj());
    let t3 = wedge(mul(mul(mu(1), mu(2).conj()), nu(3)), nu(4).conj());
    let s4 = mul(mu(3), nu(2).conj()).dbar_adj().green();
    let t4 = wedge(add(bracket(nu(1), s4.clone()), mul(mu(1), s4.clone().partial())), nu(4).conj());
    // (ad ν₁ − μ₁∂), the operator derivative of the first integral
    let t4_minus = wedge(add(bracket(nu(1), s4.clone()), mul(mu(1), s4.partial()).neg()), nu(4).conj());
    let s5 = add(star_bracket(1, 2), mixed_derivative(1, 2).neg()).green();
    let t5 = wedge(mul(mu(3), s5.partial()), nu(4).conj());
    let t6 = wedge(mul(mul(mu(2).conj(), mu(3)), nu(1)), nu(4).conj());
    let s7 = add(star_ad_star(nu(2), nu(3)).neg(), mul(mu(2).conj(), nu(3)).partial_adj().neg()).green();
    let t7 = wedge(s7.dbar(), mul(mu(4).conj(), nu(1)));
    let s8 = add(star_bracket(2, 1), mixed_derivative(2, 1).neg()).green();
    let t8 = wedge(nu(3), mul(mu(4), s8.partial()).conj());
    let t9 = add(
        wedge(nu(3), mul(mul(mu(1).conj(), mu(4)), nu(2)).conj()),
        // μ₃ν₁ ∧ conj(μ₄ν₂) with the scalar factors collected
        wedge(mul(mul(mu(3), mu(4).conj()), nu(1)), nu(2).conj()),
    );
    let p = mul(mu(1), mu(2).conj());
    let t10 = add(p.clone(), p.inv_density().green_shifted(shift)).metric().integrate();
    let q = mul(mu(2).conj(), mu(3));
    let k = match delta0 {
        Delta0Reading::Functions => q.green(),
        Delta0Reading::OneForms => q.green_shifted(shift),
    };
    let t11 = mul(mul(mu(1), k.dbar().dbar_adj()), mu(4).conj()).metric().integrate();
    let mut terms: Vec<Term> = [t1, t2, t3, t4, t5, t6, t7, t8, t9, t10, t11]
        .into_iter()
        .enumerate()
        .map(|(i, body)| term(&format!("metric.{}", i + 1), c, body, None))
        .collect();
    terms[3] = terms[3].clone().variant("minus_mu_derivative", t4_minus);
    FormulaIR::new("metric", "the second order derivatives of the metric", terms)
}

/// `F(α)` of the second Ricci trace group.
fn ricci_f2() -> Ex {
    add(bracket(star_bracket(1, 2).green(), arg()), bracket(nu(1), star_ad_star(nu(2), arg()).green()).neg())
}

/// `F(α)` of the third Ricci trace group.
fn ricci_f3() -> Ex {
    add(bracket(mul(mu(1), nu(2).conj()).dbar_adj().green(), arg()), mul(mu(1), star_ad_star(nu(2), arg()).green().partial()))
}

/// `F(α)` of the fifth Ricci trace group.
fn ricci_f5() -> Ex {
    mul(mu(1), mul(mu(2).conj(), arg()).proj_end_bar())
}

/// `(μ₁μ̄₂ + s·μ₁∂Δ₀⁻¹∂*μ̄₂)β` on Beltrami differentials.
fn tx_operator(sign: f64) -> Ex {
    let a = mul(mul(mu(1), mu(2).conj()), arg());
    let b = mul(mu(1), mul(mu(2).conj(), arg()).partial_adj().green().partial());
    add(a, b.scale(C64::new(sign, 0.0)))
}

/// Ricci form: the five trace groups.
pub fn ricci() -> FormulaIR {
    let c = MINUS_I;
    let r1 = inner_tx(tx_operator(1.0).neg(), arg());
    let r2 = inner_e(ricci_f2(), arg());
    let r3 = inner_e(ricci_f3(), arg());
    let f4a = bracket(mul(mu(2).conj(), nu(1)).partial_adj().green(), arg());
    let f4b = bracket(nu(1), mul(mu(2).conj(), arg()).partial_adj().green());
    let r4 = inner_e(add(f4a.clone(), f4b.clone()), arg());
    let r4_minus = inner_e(add(f4a, f4b.neg()), arg());
    let r5 = inner_e(ricci_f5(), arg());
    let terms = vec![
        term("ricci.1", c, r1, Some(TraceSector::Tx)),
        term("ricci.2", c, r2, Some(TraceSector::End)),
        term("ricci.3", c, r3, Some(TraceSector::End)),
        term("ricci.4", c, r4, Some(TraceSector::End)).variant("minus_ad_nu", r4_minus),
        term("ricci.5", c, r5, Some(TraceSector::End)),
    ];
    FormulaIR::new("ricci", "the Ricci form is given by", terms)
}

/// Second variations of `log det Δ_AdE` for rank `n`. Labels name the block:
/// `nn` for `∂̄_ν₂∂_ν₁`, `mn` for `∂̄_ν₂∂_μ₁`, `mm` for `∂̄_μ₂∂_μ₁`.
pub fn logdet(n: usize) -> FormulaIR {
    let n = n as f64;
    let terms = vec![
        term("logdet.nn.trace", ONE, inner_e(ricci_f2(), arg()), Some(TraceSector::End)),
        term("logdet.nn.omega_m", C64::new(0.0, -2.0 * n / (2.0 * PI)), omega_m(), None),
        term("logdet.mn.trace", ONE, inner_e(ricci_f3(), arg()), Some(TraceSector::End)),
        term("logdet.mm.trace", -ONE, inner_e(ricci_f5(), arg()), Some(TraceSector::End)),
        term("logdet.mm.omega_t", C64::new(0.0, -(n * n - 1.0) / (6.0 * PI)), omega_t(), None),
    ];
    FormulaIR::new("logdet", "Second order variation of log det Δ_AdE are", terms)
}

/// Second variation of `log det Δ₀`.
pub fn logdet_delta0() -> FormulaIR {
    let terms = vec![
        term("logdet0.omega_t", C64::new(0.0, 1.0 / (6.0 * PI)), omega_t(), None),
        term("logdet0.trace", -ONE, inner_tx(tx_operator(-1.0), arg()), Some(TraceSector::Tx)),
    ];
    FormulaIR::new("logdet_delta0", "can be given in our coordinates as follows", terms)
}

/// Symplectic terms of the right-hand side of the Ricci-potential identity.
pub fn identity(n: usize) -> FormulaIR {
    let n = n as f64;
    let terms = vec![
        term("identity.omega_m", C64::new(-n / (2.0 * PI), 0.0), omega_m(), None),
        term("identity.omega_t", C64::new(-n * n / (12.0 * PI), 0.0), omega_t(), None),
    ];
    FormulaIR::new("identity", "Ric^{1,1} − (n/2π)ω_{M'} − (n²/12π)ω_𝒯", terms)
}

/// The two surviving integrals of the first variation: slot `ν₁` from the
/// first vector, `ν₃` the direction, `μ₂` from the second vector.
pub fn kahler() -> FormulaIR {
    let i = C64::new(0.0, 1.0);
    let a = mul(mul(nu(1), nu(3)).inv_metric().neg(), mu(2).conj()).metric().integrate();
    let b = wedge(nu(1), mul(mu(2), nu(3).conj()).conj());
    FormulaIR::new(
        "kahler",
        "The first derivatives of the metric in the local coordinates vanishes",
        vec![term("kahler.metric", i, a, None), term("kahler.bundle", i, b, None)],
    )
}

/// Base metric `g = i∫μ₁μ̄₂g̃ + i∫tr(ν₁∧ν̄₂ᵀ)`.
pub fn base_metric() -> FormulaIR {
    FormulaIR::new(
        "base_metric",
        "The metric is given by the following expression",
        vec![term("base.tx", ONE, inner_tx(mu(1), mu(2)), None), term("base.e", ONE, inner_e(nu(1), nu(2)), None)],
    )
}

/// Names of the shipped documents.
pub const NAMES: [&str; 7] = ["metric", "ricci", "logdet", "logdet_delta0", "identity", "kahler", "base_metric"];

/// Shipped JSON of a formula.
pub fn shipped_json(name: &str) -> Option<&'static str> {
    Some(match name {
        "metric" => include_str!("../../formulas/metric.json"),
        "ricci" => include_str!("../../formulas/ricci.json"),
        "logdet" => include_str!("../../formulas/logdet.json"),
        "logdet_delta0" => include_str!("../../formulas/logdet_delta0.json"),
        "identity" => include_str!("../../formulas/identity.json"),
        "kahler" => include_str!("../../formulas/kahler.json"),
        "base_metric" => include_str!("../../formulas/base_metric.json"),
        _ => return None,
    })
}

/// Builder output for the default options and rank 2.
pub fn built(name: &str) -> Option<FormulaIR> {
    Some(match name {
        "metric" => metric(0.5, Delta0Reading::Functions),
        "ricci" => ricci(),
        "logdet" => logdet(2),
        "logdet_delta0" => logdet_delta0(),
        "identity" => identity(2),
        "kahler" => kahler(),
        "base_metric" => base_metric(),
        _ => return None,
    })
}

/// Parsed shipped formula.
pub fn shipped(name: &str) -> crate::Result<FormulaIR> {
    let s = shipped_json(name).ok_or_else(|| crate::Error::InvalidInput(format!("unknown formula {name}")))?;
    FormulaIR::from_json(s)
}
