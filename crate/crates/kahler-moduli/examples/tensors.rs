//! Metric Hessian, Ricci form, first-variation cancellation and the
//! Ricci-potential identity on the octagon surface with a rank-2 bundle.
//! Usage: `tensors [level]` (default 2).

use kahler_moduli::calculus::Discretization;
use kahler_moduli::harmonic::{harmonic_basis, HarmonicKind};
use kahler_moduli::tensors::*;
use std::time::Instant;

fn main() -> kahler_moduli::Result<()> {
    let level = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let disc = Discretization::bolza(level, 2, 7)?;
    let tx = harmonic_basis(&disc, HarmonicKind::TX)?;
    let end = harmonic_basis(&disc, HarmonicKind::EndE)?;
    let ade = harmonic_basis(&disc, HarmonicKind::AdE)?;
    let ctx = TensorContext::new(&disc, &tx, &end, TensorOptions::default())?;

    let t = Instant::now();
    let k = kahler_residual(&ctx)?;
    println!("first-variation residual {:.3e} (integral scale {:.3e}) [{:.1?}]", k.residual, k.scale, t.elapsed());

    let t = Instant::now();
    let h = metric_hessian(&ctx)?;
    println!("metric Hessian: hermitian defect {:.3e} [{:.1?}]", h.hermitian_defect(), t.elapsed());
    print!("{}", audit(&ctx, "metric")?.table());

    let r = ricci_form(&ctx)?;
    println!("Ricci form: hermitian defect {:.3e}", r.residuals["hermitian_defect"]);
    print!("{}", audit(&ctx, "ricci")?.table());

    let actx = TensorContext::new(&disc, &tx, &ade, TensorOptions::default())?;
    let id = ricci_potential_identity(&actx)?;
    println!(
        "identity: relative residual {:.4e}, implied factors ω_M {:.4} ω_T {:.4}",
        id.relative_residual, id.implied_omega_m_factor, id.implied_omega_t_factor
    );
    println!("  defects lhs {:.3e} rhs {:.3e}", id.lhs_defect, id.rhs_defect);
    for a in &id.attribution {
        println!("  {:<22} {:>4} norm {:.3e} along residual {:+.3e}", a.label, a.side, a.norm, a.along_residual);
    }
    let all = formulas::metric(0.5, kahler_moduli::spectral::Delta0Reading::Functions).variant_labels().into_iter().chain(formulas::ricci().variant_labels()).collect();
    let vctx = TensorContext::new(&disc, &tx, &ade, TensorOptions { variants: all, ..Default::default() })?;
    let vid = ricci_potential_identity(&vctx)?;
    println!(
        "identity with variants {:?}: relative residual {:.4e}, implied factors ω_M {:.4} ω_T {:.4}",
        vctx.options.variants, vid.relative_residual, vid.implied_omega_m_factor, vid.implied_omega_t_factor
    );
    for c in &id.coefficients {
        println!("  coefficient {:<20} exact {}", c.label, c.exact);
    }
    Ok(())
}
