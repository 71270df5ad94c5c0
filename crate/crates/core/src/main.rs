use clap::{Args, Parser, Subcommand};
use mixkinetics::harness::{execute, exit_code, output_root, Command, ExperimentConfig};
use mixkinetics::Error;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "mixkinetics", version, about = "Kinetic mixture experiments near the Maxwell-Stefan regime")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Space-homogeneous relaxation from a counter-streaming state: H, D and distance to equilibrium.
    Relax(Common),
    /// Spectrum of the discrete linearized operator plus conservation and projection probes.
    Spectrum(Common),
    /// Tabulated Carleman kernel against direct evaluation of the gain part.
    KernelOracle(Common),
    /// Maxwell-Stefan run: norm decay and invariant residuals.
    MsDecay(Common),
    /// Perturbation stability over the ε list and norm-equivalence ratios.
    EpsSweep(Common),
    /// ε-scaling of the fluid and orthogonal parts of the source term.
    SourceScaling(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root (overrides MIXKINETICS_OUT and output.root).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Print the resolved config and the run directory, then exit.
    #[arg(long)]
    dry_run: bool,
}

fn run(cmd: Command, args: &Common) -> Result<(), Error> {
    let config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.validate(cmd)?;
    let root = output_root(args.out.as_deref(), &config);
    if args.dry_run {
        let text = serde_json::to_string_pretty(&config).map_err(|e| Error::Config(e.to_string()))?;
        println!("{text}");
        println!("{}", root.join(format!("{}-{}", cmd.name(), config.content_hash())).display());
        return Ok(());
    }
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    let start = Instant::now();
    let outcome = execute(cmd, &config, &root)?;
    eprintln!("{} finished in {:.1} s", cmd.name(), start.elapsed().as_secs_f64());
    println!("{}", outcome.dir.display());
    println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match &cli.command {
        Sub::Relax(a) => (Command::Relax, a),
        Sub::Spectrum(a) => (Command::Spectrum, a),
        Sub::KernelOracle(a) => (Command::KernelOracle, a),
        Sub::MsDecay(a) => (Command::MsDecay, a),
        Sub::EpsSweep(a) => (Command::EpsSweep, a),
        Sub::SourceScaling(a) => (Command::SourceScaling, a),
    };
    match run(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
