//! Draws an irreducible flat unitary representation, checks the surface
//! relation and unitarity, and shows that conjugating by a constant unitary
//! gives an equivalent representation.

use kahler_moduli::bundle::{haar_unitary, random_unitary_rep};
use kahler_moduli::surface::bolza_group;
use rand::SeedableRng;

fn main() -> kahler_moduli::Result<()> {
    let group = bolza_group();
    for n in 1..=3 {
        let rep = random_unitary_rep(&group, n, 0, 7)?;
        println!(
            "rank {n}: relator residual {:.1e}, unitarity defect {:.1e}, irreducibility margin {:.3e}",
            rep.relator_residual(),
            rep.unitarity_defect(),
            rep.irreducibility_margin()
        );
    }
    let rep = random_unitary_rep(&group, 2, 0, 7)?;
    let w = haar_unitary(2, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
    let conj = rep.conjugate(&w);
    println!("conjugated: relator residual {:.1e}", conj.relator_residual());
    match random_unitary_rep(&group, 2, 1, 7) {
        Err(e) => println!("degree 1: {e}"),
        Ok(_) => println!("degree 1 unexpectedly accepted"),
    }
    Ok(())
}
