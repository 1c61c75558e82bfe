use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ggr_cli::commands::{run, CliError, Command};
use ggr_cli::config::RawConfig;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Scattering,
    Polyhedron,
    Diagrams,
    Expand,
    Energy,
    Verify,
}

/// Cluster-expansion toolkit for spin-1/2 Jastrow–Slater trial states on a torus.
#[derive(Debug, Parser)]
#[command(name = "ggr", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// worker threads (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// output directory
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "cap-vertices")]
    cap_vertices: Option<usize>,
    #[arg(long = "order-K")]
    order_k: Option<usize>,
    #[arg(long = "grid-M")]
    grid_m: Option<usize>,
    /// extra `KEY=VALUE` overrides, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn load(args: &Args) -> Result<ggr_cli::config::RunConfig, CliError> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut raw = RawConfig::parse(&text)?;
    let mut env: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with("GGR_")).collect();
    env.sort();
    raw.apply_env(env)?;
    let flags = [
        ("threads", "--threads", args.threads.map(|v| v.to_string())),
        ("out", "--out", args.out.clone()),
        ("vertex_cap", "--cap-vertices", args.cap_vertices.map(|v| v.to_string())),
        ("K", "--order-K", args.order_k.map(|v| v.to_string())),
        ("grid_M", "--grid-M", args.grid_m.map(|v| v.to_string())),
    ];
    for (key, flag, value) in flags {
        if let Some(v) = value {
            raw.set(key, &v, flag)?;
        }
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ggr_cli::config::ConfigError::Invalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        raw.set(k.trim(), v.trim(), "--set")?;
    }
    Ok(raw.build()?)
}

fn main_inner(args: &Args) -> Result<i32, CliError> {
    let cfg = load(args)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    }
    let cmd = match args.command {
        Sub::Scattering => Command::Scattering,
        Sub::Polyhedron => Command::Polyhedron,
        Sub::Diagrams => Command::Diagrams,
        Sub::Expand => Command::Expand,
        Sub::Energy => Command::Energy,
        Sub::Verify => Command::Verify,
    };
    let outcome = run(cmd, &cfg)?;
    let dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    for (name, text) in &outcome.files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    print!("{}", outcome.stdout);
    Ok(outcome.exit)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match main_inner(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
