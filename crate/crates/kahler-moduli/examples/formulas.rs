//! Writes every formula document, type-checked, to a directory
//! (default `formulas/`).

use kahler_moduli::tensors::formulas::{built, NAMES};
use kahler_moduli::tensors::ir::FiberTy;

fn main() -> kahler_moduli::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "formulas".into());
    std::fs::create_dir_all(&dir)?;
    for name in NAMES {
        let f = built(name).expect("known formula");
        f.type_check(FiberTy::End)?;
        f.type_check(FiberTy::Ad)?;
        std::fs::write(format!("{dir}/{name}.json"), f.to_json() + "\n")?;
        println!("{name}: {} terms", f.terms.len());
    }
    Ok(())
}
