//! Convective heat transport against its closed form for the three
//! conductivities of the validation set.

use tedsim::validation::{heat_1d_analytic, heat_case, HeatProblem, HEAT_DIVISIONS, HEAT_GATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for kappa in [0.01, 0.05, 0.1] {
        let p = HeatProblem::reference(kappa);
        let exact = heat_1d_analytic(&p)?;
        let r = heat_case(&p, HEAT_DIVISIONS)?;
        let v: Vec<f64> = r.numeric.values().collect();
        let monotone = v.windows(2).all(|w| w[1] >= w[0]) || v.windows(2).all(|w| w[1] <= w[0]);
        println!(
            "kappa {kappa:<5} Pe(h) {:>7.3}  C1 {:>9.3} C2 {:>9.3}  Linf {:.2e} (gate {HEAT_GATE})  monotone {monotone}",
            p.peclet(1e-8 / HEAT_DIVISIONS[2] as f64)?,
            exact.c1(),
            exact.c2(),
            r.error.linf,
        );
        for &(z, t) in r.numeric.points().iter().step_by(5) {
            println!("    z {:>5.2} nm  T {:>8.3}  exact {:>8.3}", z * 1e9, t, exact.eval(z));
        }
    }
    Ok(())
}
