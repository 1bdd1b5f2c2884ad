//! Single-species relaxation under an imposed field and temperature
//! gradient, compared with the 1D steady state. Takes a few seconds in
//! release mode.

use tedsim::validation::{species_case, species_time_grid, SpeciesProblem, MASS_GATE, SPECIES_DIVISIONS, SPECIES_GATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = species_time_grid();
    println!("{} time steps up to {:.1e} s", grid.steps().len(), grid.final_time());
    for z in [-1, 1, 2] {
        let p = SpeciesProblem::reference(z);
        let (r, drift) = species_case(&p, SPECIES_DIVISIONS, &grid)?;
        let (lo, hi) = r
            .numeric
            .points()
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &(_, v)| (a.min(v), b.max(v)));
        println!(
            "z {z:+}: L2 {:.2e} (gate {SPECIES_GATE})  mass drift {drift:.1e} (gate {MASS_GATE})  n in [{lo:.2e}, {hi:.2e}]  max gummel {}",
            r.error.l2,
            r.gummel_iterations.iter().max().unwrap_or(&0)
        );
    }
    Ok(())
}
