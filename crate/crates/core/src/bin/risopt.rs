use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use risopt::bench::{run_campaign, summary_path, Campaign, Scale};
use risopt::model::draw_channels;
use risopt::optimizer::{solve, AlternatingConfig, Objective};
use risopt::{selftest, Error, SystemConfig};

#[derive(Parser)]
#[command(name = "risopt", version, about = "Dual-RIS beamforming and phase optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// Master seed; falls back to RISOPT_SEED, then the config file.
    #[arg(long, env = "RISOPT_SEED")]
    seed: Option<u64>,
    /// `key = value` file overriding the scale's system parameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one figure campaign and write CSV plus a summary.
    Run {
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=6))]
        figure: u8,
        #[command(flatten)]
        common: Common,
        /// Output CSV; defaults to `fig<N>.csv` in RISOPT_OUT_DIR or the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "RISOPT_OUT_DIR")]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        draws: Option<usize>,
        /// Add a wall-clock column (makes the file run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Optimize one channel draw and print the iteration trace.
    Single {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ee")]
        objective: Objective,
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Check internal invariants.
    Selftest,
}

fn system_config(common: &Common) -> Result<(SystemConfig, u64), Error> {
    let mut cfg = common.scale.base_config();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        cfg.apply_kv(&text)?;
    }
    cfg.validate()?;
    let seed = common.seed.unwrap_or(cfg.rng_seed);
    Ok((cfg, seed))
}

/// `Ok(false)` when the self test ran but found a broken invariant.
fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run {
            figure,
            common,
            out,
            out_dir,
            draws,
            timing,
        } => {
            let (cfg, seed) = system_config(&common)?;
            let mut campaign = Campaign::preset(figure, common.scale, seed)?;
            campaign.base = cfg;
            if let Some(d) = draws {
                campaign.draws = d;
            }
            let out = out.unwrap_or_else(|| {
                out_dir
                    .unwrap_or_else(|| PathBuf::from("."))
                    .join(format!("fig{figure}.csv"))
            });
            let summary = run_campaign(&campaign, &out, timing)?;
            for s in &summary {
                println!(
                    "{:<12} {}={:<10} rate {:.4} ± {:.4}  ee {:.4e}",
                    s.scheme,
                    campaign.sweep.name(),
                    s.value,
                    s.mean_sum_rate,
                    s.stderr_sum_rate,
                    s.mean_ee
                );
            }
            eprintln!("wrote {} and {}", out.display(), summary_path(&out).display());
        }
        Command::Single {
            common,
            objective,
            n_max,
        } => {
            let (mut cfg, seed) = system_config(&common)?;
            cfg.rng_seed = seed;
            let alt = AlternatingConfig {
                objective,
                n_max: n_max.unwrap_or(AlternatingConfig::default().n_max),
                ..Default::default()
            };
            let ch = draw_channels(&cfg, 0);
            let out = solve(&ch, &cfg, &alt)?;
            println!("iter,sum_rate,ee,power,min_rate,best_objective");
            for (i, r) in out.trace.records.iter().enumerate() {
                println!(
                    "{},{:.10},{:.10e},{:.6e},{:.10},{:.10e}",
                    i + 1,
                    r.sum_rate,
                    r.ee,
                    r.power,
                    r.min_rate,
                    r.best_objective
                );
            }
            println!("final sum_rate {:.16e}", out.evaluation.report.sum_rate);
            println!("final ee {:.16e}", out.evaluation.ee);
        }
        Command::Selftest => {
            let checks = selftest::run()?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("risopt: {e}");
            match e {
                Error::Config(_) | Error::Infeasible(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
