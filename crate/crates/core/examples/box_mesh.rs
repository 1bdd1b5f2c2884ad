//! Builds a layered box mesh (metal / active / metal), prints its summary
//! and optionally writes it in the `tetmesh 1` text format.
//!
//! ```text
//! cargo run --example box_mesh -- [out.mesh]
//! ```

use std::path::PathBuf;

use tedsim::mesh::{build_box_mesh, SurfaceLabel};
use tedsim::output::mesh_report;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // 20 nm column: 4 nm contacts around a 12 nm active layer.
    let mesh = build_box_mesh([1e-8, 1e-8, 2e-8], [2, 2, 10], &[4e-9, 1.6e-8])?;
    print!("{}", mesh_report(&mesh)?);

    for label in [
        SurfaceLabel::SigmaB,
        SurfaceLabel::GammaB,
        SurfaceLabel::GammaT,
        SurfaceLabel::SigmaT,
    ] {
        let faces = mesh.face_set(label);
        let area: f64 = faces.iter().map(|&f| mesh.face_area(f)).sum();
        println!("{:<12} {:>4} faces  area {:.3e} m^2", label.as_str(), faces.len(), area);
    }

    if let Some(out) = std::env::args().nth(1).map(PathBuf::from) {
        mesh.write_ascii(&out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
