use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tedsim::config::{parse_config, ConfigError};
use tedsim::mesh::import_mesh;
use tedsim::output::{mesh_report, run_to_directory, write_comparison_csv};
use tedsim::validation::{run_named_case, ValidationError, CASE_NAMES};

#[derive(Parser)]
#[command(name = "tedsim", about = "Thermo-electrochemical device simulator")]
struct Cli {
    /// Root directory for run output.
    #[arg(long, global = true, env = "TEDSIM_OUTPUT_DIR", default_value = "tedsim_output")]
    output_dir: PathBuf,
    /// Gummel convergence threshold (overrides the config).
    #[arg(long, global = true)]
    toll: Option<f64>,
    /// Gummel iteration limit per step (overrides the config).
    #[arg(long, global = true)]
    max_gummel: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem described by a config file.
    Run { config: PathBuf },
    /// Compare a built-in case against its reference solution ("all" runs every case).
    Validate { case: String },
    /// Report mesh size, labels and edge weights for a mesh file or config.
    MeshInfo { mesh: PathBuf },
    /// Print the version.
    Version,
}

fn run(cli: &Cli, config: &Path) -> Result<(), u8> {
    let cfg = parse_config(config).map_err(|e| {
        eprintln!("error: {e}");
        1
    })?;
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let dir = cli.output_dir.join(stem);
    let (toll, max) = (cli.toll, cli.max_gummel);
    let result = run_to_directory(
        &cfg,
        |s| {
            if let Some(t) = toll {
                s.toll = t;
            }
            if let Some(m) = max {
                s.max_iterations = m;
            }
        },
        &dir,
    );
    match result {
        Ok((hist, art)) => {
            let its: Vec<usize> = hist.traces.iter().map(|t| t.iterations).collect();
            println!("completed {} step(s), gummel iterations {:?}", its.len(), its);
            println!("output in {}", art.directory.display());
            Ok(())
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(e.exit_code() as u8)
        }
    }
}

fn validate(cli: &Cli, case: &str) -> Result<(), u8> {
    let outcomes = run_named_case(case).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            ValidationError::UnknownCase(_) => {
                eprintln!("known cases: all {}", CASE_NAMES.join(" "));
                1
            }
            _ => 2,
        }
    })?;
    let dir = cli.output_dir.join("validation");
    let mut all = true;
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.summary);
        all &= o.passed;
        if let Some((num, reference)) = &o.comparison {
            let written = std::fs::create_dir_all(&dir).map_err(|e| e.to_string()).and_then(|_| {
                write_comparison_csv(num, reference, &dir.join(format!("{}.csv", o.name))).map_err(|e| e.to_string())
            });
            if let Err(e) = written {
                eprintln!("error: {e}");
                return Err(1);
            }
        }
    }
    if all {
        Ok(())
    } else {
        Err(2)
    }
}

fn mesh_info(path: &Path) -> Result<(), u8> {
    let mesh = if path.extension().is_some_and(|e| e == "toml") {
        parse_config(path)
            .map_err(|e: ConfigError| e.to_string())
            .and_then(|c| c.build_mesh().map_err(|e| e.to_string()))
    } else {
        import_mesh(path).map_err(|e| e.to_string())
    };
    let report = mesh.and_then(|m| mesh_report(&m).map_err(|e| e.to_string()));
    match report {
        Ok(r) => {
            print!("{r}");
            Ok(())
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::Validate { case } => validate(&cli, case),
        Command::MeshInfo { mesh } => mesh_info(mesh),
        Command::Version => {
            println!("tedsim {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
