//! Spectrum of the Laplacian on Ad E sections with its zeta-regularized
//! determinant, plus the flat-torus check against the closed form.

use kahler_moduli::calculus::{Coeff, Discretization};
use kahler_moduli::spectral::{default_count, spectrum_with_logdet, torus_selftest};

fn main() -> kahler_moduli::Result<()> {
    let t = torus_selftest()?;
    println!("torus: log det′ {:.6}, closed form {:.6}, passed {}", t.value, t.reference, t.passed);
    let d = Discretization::bolza(3, 2, 7)?;
    let s = spectrum_with_logdet(&d, Coeff::AdE, default_count(&d, Coeff::AdE))?;
    println!("Δ_AdE: {} eigenvalues, lowest {:.6}, kernel {}", s.count(), s.eigenvalues[0], s.kernel_dim);
    println!("log det′ Δ_AdE = {:.6} ± {:.1e}", s.logdet.unwrap_or(f64::NAN), s.err.unwrap_or(f64::NAN));
    Ok(())
}
