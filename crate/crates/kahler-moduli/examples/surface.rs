//! Builds the Bolza surface mesh at several levels and checks its area
//! against Gauss–Bonnet and its side pairings against the group.

use kahler_moduli::surface::{bolza_group, mesh_fundamental_domain, validate_mesh};

fn main() -> kahler_moduli::Result<()> {
    let group = bolza_group();
    println!("relator residual of the octagon group: {:.2e}", group.relator_residual());
    for level in 0..=4 {
        let mesh = mesh_fundamental_domain(&group, level)?;
        let v = validate_mesh(&mesh);
        println!(
            "level {level}: {:>5} triangles, area {:.12} (4π = {:.12}), pairing residual {:.1e}, min quality {:.3}",
            mesh.num_triangles(),
            v.area,
            mesh.expected_area(),
            v.max_pairing_residual,
            v.min_quality
        );
    }
    Ok(())
}
