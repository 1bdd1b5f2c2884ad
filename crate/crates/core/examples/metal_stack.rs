//! Transient run of the metal/active/metal stack from its shipped config,
//! printing a line per time level from the observer.

use std::path::PathBuf;

use tedsim::config::parse_config;
use tedsim::gummel::run_transient;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/metal_stack.toml")));
    let cfg = parse_config(&path)?;
    let dev = cfg.build_device()?;
    let settings = cfg.gummel_settings(&dev);
    let active = dev.active_nodes().to_vec();

    let hist = run_transient(
        &dev,
        cfg.initial_state(&dev),
        &cfg.schedule()?,
        &settings,
        &mut |step, s, trace| {
            let n_max = active.iter().map(|&v| s.n[v]).fold(0.0, f64::max);
            let t_max = s.temperature.iter().copied().fold(0.0, f64::max);
            let m = trace.map(|t| t.iterations.to_string()).unwrap_or_else(|| "-".into());
            println!(
                "step {step:>3}  t {:>9.3e} s  m* {m:>2}  max n {n_max:.4e}  max T {t_max:.6}",
                s.time
            );
        },
    )
    .map_err(|f| f.error)?;
    println!("{} states", hist.states.len());
    Ok(())
}
