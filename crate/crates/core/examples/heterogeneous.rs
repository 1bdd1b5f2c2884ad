//! Steady electron distribution in the three-zone cube for each material
//! stack: where the density peaks and how the temperature settles.

use tedsim::gummel::GummelSettings;
use tedsim::validation::{hetero_case, hetero_schedule, HeteroCase, HETERO_DIVISIONS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let names = ["bottom", "center", "top"];
    for case in HeteroCase::ALL {
        let r = hetero_case(case, HETERO_DIVISIONS, &hetero_schedule(), &GummelSettings::default())?;
        let t = &r.final_state.temperature;
        let (tmin, tmax) = t.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        println!(
            "{}: peak at {:.2} nm ({} third), T in [{tmin:.1}, {tmax:.1}] K, gummel {:?}",
            case.name(),
            r.argmax * 1e9,
            names[r.third],
            r.gummel_iterations
        );
        for &(z, n) in r.cut.points().iter().step_by(3) {
            println!("    {:>5.2} nm  {n:.3e}", z * 1e9);
        }
    }
    Ok(())
}
