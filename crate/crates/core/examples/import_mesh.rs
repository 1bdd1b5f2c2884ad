//! Reads a `tetmesh 1` file, checks it and samples a linear field along
//! the vertical centerline.
//!
//! ```text
//! cargo run --example import_mesh -- configs/stack.mesh
//! ```

use std::path::PathBuf;

use tedsim::mesh::{compute_edge_geometry, extract_line_cut, import_mesh, Axis};
use tedsim::profile::Quantity;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/stack.mesh")));
    let mesh = import_mesh(&path)?;
    let geo = compute_edge_geometry(&mesh)?;
    println!(
        "{}: {} vertices, {} tetrahedra, {} edges, {} with negative weight",
        path.display(),
        mesh.num_vertices(),
        mesh.num_tets(),
        mesh.edges().len(),
        geo.negative_edges
    );

    let (lo, hi) = mesh.bounding_box();
    let field: Vec<f64> = mesh
        .vertices()
        .iter()
        .map(|p| (p[2] - lo[2]) / (hi[2] - lo[2]))
        .collect();
    let anchor = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let cut = extract_line_cut(&mesh, &field, Axis::Z, anchor, 11, Quantity::Potential)?;
    for &(z, v) in cut.points() {
        println!("  z {:>6.2} nm  {v:.4}", z * 1e9);
    }
    Ok(())
}
