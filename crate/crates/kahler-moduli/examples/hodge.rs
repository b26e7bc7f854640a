//! Assembles ∂̄ with its adjoint on the Bolza surface, checks adjointness,
//! computes harmonic bases and splits a random form into its exact,
//! harmonic and coexact parts.

use kahler_moduli::calculus::{Coeff, Discretization, FormKind};
use kahler_moduli::harmonic::{harmonic_basis, HarmonicKind};
use rand::SeedableRng;

fn main() -> kahler_moduli::Result<()> {
    let d = Discretization::bolza(3, 2, 7)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for (name, kind) in [("TX", HarmonicKind::TX), ("End E", HarmonicKind::EndE), ("Ad E", HarmonicKind::AdE)] {
        let b = harmonic_basis(&d, kind)?;
        println!("dim H¹({name}) = {} (spectral gap ratio {:.2e})", b.dim(), b.gap_ratio);
    }
    let sec = FormKind::function(Coeff::EndE);
    let dbar = d.dbar(sec)?;
    let star = d.adjoint(&dbar);
    let f = d.random_field(sec, &mut rng);
    let w = d.random_field(dbar.codomain, &mut rng);
    let (lhs, rhs) = (d.inner(&dbar.apply(&f)?, &w)?, d.inner(&f, &star.apply(&w)?)?);
    println!("⟨∂̄f, w⟩ − ⟨f, ∂̄*w⟩ = {:.2e}", (lhs - rhs).norm());
    let end = harmonic_basis(&d, HarmonicKind::EndE)?;
    let lap = d.laplacian(sec)?;
    let exact = dbar.apply(&d.green_apply(&lap, &star.apply(&w)?, 0.0)?)?;
    let harm = end.project(&d, &w)?;
    let rest = w.sub(&exact)?.sub(&harm)?;
    println!(
        "|w|² = {:.6}, parts {:.6} + {:.6} + {:.6}",
        d.norm(&w).powi(2),
        d.norm(&exact).powi(2),
        d.norm(&harm).powi(2),
        d.norm(&rest).powi(2)
    );
    Ok(())
}
