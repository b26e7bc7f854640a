//! Solves the Beltrami equation for a small multiple of a harmonic Beltrami
//! differential and reads off the deformed Fuchsian group; the relator
//! residual halves with the deformation size.

use kahler_moduli::deform::{deformed_generators, modified_coefficient, solve_beltrami, GridParams, FIT_TOL};
use kahler_moduli::calculus::{Coeff, Discretization, FormKind};
use kahler_moduli::harmonic::{harmonic_basis, HarmonicKind, TangentVector};

fn main() -> kahler_moduli::Result<()> {
    let d = Discretization::bolza(2, 2, 7)?;
    let tx = harmonic_basis(&d, HarmonicKind::TX)?;
    let tv = TangentVector::new(tx.elements[0].clone(), d.zeros(FormKind::form01(Coeff::EndE)));
    let p = GridParams::default();
    for eps in [2e-2, 1e-2, 5e-3] {
        let coeff = modified_coefficient(&d, &tv, eps, &p)?;
        let map = solve_beltrami(&coeff, &p)?;
        let g = deformed_generators(&map, &d.group, FIT_TOL)?;
        println!(
            "ε = {eps:.0e}: {} iterations, fit residual {:.1e}, relator residual {:.3e}",
            map.iterations, g.fit_residual, g.relator_residual
        );
    }
    Ok(())
}
