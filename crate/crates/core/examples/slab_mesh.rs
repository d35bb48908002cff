//! Build the slab mesh, extract its bottom surface and assemble the basic
//! finite-element matrices.

use robin_bae::fem::{assemble_mass, assemble_stiffness, NodalField};
use robin_bae::mesh::{BoundaryTag, SlabMesh};

fn main() -> robin_bae::Result<()> {
    let mesh = SlabMesh::build(30, 30, 2, 1.0, 0.01, 3)?;
    let bottom = mesh.extract_bottom()?;
    println!(
        "volume: {} nodes, {} tetrahedra; bottom: {} nodes, {} triangles",
        mesh.n_nodes(),
        mesh.n_cells(),
        bottom.n_nodes(),
        bottom.n_cells()
    );
    for tag in [BoundaryTag::Bottom, BoundaryTag::Top, BoundaryTag::Side] {
        println!("{:>6} facets: {}", tag.as_str(), mesh.facets_tagged(tag).count());
    }

    let m = assemble_mass(&mesh);
    // Mass entries sum to the slab volume; stiffness annihilates constants.
    println!("sum of mass entries = {:.6e}", m.total());
    let k = assemble_stiffness(&mesh, &NodalField::constant(&mesh, 0.0))?;
    let k1 = k.matvec(&vec![1.0; mesh.n_nodes()]);
    println!("max |K 1| = {:.2e}", k1.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    Ok(())
}
