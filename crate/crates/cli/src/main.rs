use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xlris_core::analysis::{GridSpec, Preset};
use xlris_core::config::{load_config, SystemConfig};
use xlris_core::experiment::{parse_schemes, run_heatmap, run_sweep, SweepSpec};
use xlris_core::Error;

#[derive(Parser)]
#[command(name = "xlris", version, about = "Covert beamforming experiments with a near-field reflecting surface")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo sweep over one scenario parameter.
    Run {
        /// JSON config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// PARAM=v1,v2,... (kappa, xi, n, n_y, p_max_dbm, willie_range, ...)
        #[arg(long)]
        sweep: String,
        #[arg(long, default_value = "proposed,zf,rp,ff,fd")]
        schemes: String,
        #[arg(long)]
        out: PathBuf,
        /// 30x8 surface and 10 realizations.
        #[arg(long)]
        desk_scale: bool,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Normalized power map of a preset design.
    Heatmap {
        /// steering, focusing or diffraction
        #[arg(long)]
        preset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        #[arg(long)]
        desk_scale: bool,
    },
}

fn config_from(path: &Option<PathBuf>, desk: bool) -> Result<SystemConfig, Error> {
    let cfg = match path {
        Some(p) => load_config(p)?,
        None => SystemConfig::default(),
    };
    Ok(if desk { cfg.desk_scale() } else { cfg })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, sweep, schemes, out, desk_scale, jobs } => {
            let cfg = config_from(&config, desk_scale)?;
            let spec = SweepSpec::parse(&sweep, parse_schemes(&schemes)?)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
                .map_err(|e| Error::Config { field: "jobs".into(), reason: e.to_string() })?;
            let result = pool.install(|| run_sweep(&cfg, &spec))?;
            result.write_csv(&out)?;
            std::fs::write(out.join("config.json"), cfg.to_json_string())?;
            let failures = result.rows.iter().filter(|r| !r.ok).count();
            eprintln!("{} rows written to {} ({failures} failed)", result.rows.len(), out.display());
        }
        Command::Heatmap { preset, config, out, resolution, desk_scale } => {
            let cfg = config_from(&config, desk_scale)?;
            let preset: Preset = preset.parse()?;
            let spec = GridSpec { nx: resolution, ny: resolution, ..GridSpec::default() };
            let grid = run_heatmap(&cfg, preset, spec)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            grid.write_csv(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
            if grid.zero_field {
                eprintln!("warning: transmitted field is zero; grid left unnormalized");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
