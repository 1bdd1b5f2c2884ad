//! The edge-averaged Scharfetter-Gummel element matrix on one tetrahedron,
//! from pure diffusion to strong drift.

use tedsim::fem::{bernoulli, local_diffusion, local_sg_advection_diffusion, SparseSystem, SparsityPattern};
use tedsim::mesh::{barycentric_gradients, tet_signed_volume};

use std::sync::Arc;

fn main() {
    let p = [[0.0, 0.0, 0.0], [1e-9, 0.0, 0.0], [0.0, 1e-9, 0.0], [0.0, 0.0, 1e-9]];
    let g = barycentric_gradients(&p).expect("non-degenerate");
    let vol = tet_signed_volume(&p).abs();
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let weights = pairs.map(|(a, b)| -vol * (0..3).map(|k| g[a][k] * g[b][k]).sum::<f64>());
    let shown: Vec<String> = weights.iter().map(|w| format!("{:.3e}", w + 0.0)).collect();
    println!("edge weights [{}]", shown.join(", "));

    for x in [-30.0, -1.0, 1e-12, 1.0, 30.0] {
        println!("B({x:>6}) = {:.6e}", bernoulli(x));
    }

    let galerkin = local_diffusion(&p, 1.0).unwrap();
    for drift in [0.0, 1.0, 10.0, 50.0] {
        // Drift along +x: Peclet is the x-projection of each edge in units of 1 nm.
        let pe = pairs.map(|(a, b)| drift * (p[b][0] - p[a][0]) / 1e-9);
        let m = local_sg_advection_diffusion(&weights, &pe, &[1.0; 6]);
        let col: Vec<f64> = (0..4).map(|j| (0..4).map(|i| m[i][j]).sum()).collect();
        let dist = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| (m[i][j] - galerkin[i][j]).abs())
            .fold(0.0, f64::max);

        let pattern = Arc::new(SparsityPattern::from_elements(4, [[0usize, 1, 2, 3]]));
        let mut sys = SparseSystem::new(pattern);
        sys.add_local([0, 1, 2, 3], &m);
        sys.add_diagonal([0, 1, 2, 3], &[vol; 4]);
        let report = sys.is_m_matrix();
        println!(
            "Pe {drift:>4}: max column sum {:.1e}  |SG - Galerkin| {dist:.2e}  M-matrix {}",
            col.iter().fold(0.0f64, |a, c| a.max(c.abs())),
            report.all()
        );
    }
}
