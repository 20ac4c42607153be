//! Command-line front end: load or define systems, run pullback and
//! verification campaigns over seed sets, and emit report files.

mod config;
mod runner;

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rds_core::integrators::{self, IntegratorKind};
use rds_core::noise::TwoSidedWienerPath;
use rds_core::systems::{preset, SystemSpec, PRESETS};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "rds",
    version,
    about = "Pullback simulation and empirical stability certification for SDE-driven \
             random dynamical systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign described by a TOML config over a seed set.
    Run {
        /// Campaign config file.
        #[arg(long)]
        config: PathBuf,
        /// Override single config keys: --set path.step=0.005
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (default: config `output_dir`, else ./rds-out).
        #[arg(long, env = "RDS_OUT_DIR")]
        out: Option<PathBuf>,
        /// Worker threads (default: config `workers`, else all cores).
        #[arg(long, env = "RDS_WORKERS")]
        workers: Option<usize>,
    },
    /// Print a preset system with its constants and predicted rate.
    Describe {
        /// Preset name; see `rds presets`.
        name: String,
    },
    /// List the built-in system presets.
    Presets,
    /// Generate a driving path and dump it, or inspect a dumped file.
    DumpPath {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Horizon into the past (time units).
        #[arg(long, default_value_t = 10.0)]
        past: f64,
        /// Horizon into the future (time units).
        #[arg(long, default_value_t = 0.0)]
        future: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Write the sampled path here (binary format).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Load and describe an existing dump instead of sampling.
        #[arg(long)]
        load: Option<PathBuf>,
    },
    /// Strong self-convergence study for one preset and integrator.
    Selfconv {
        #[arg(long)]
        preset: String,
        /// euler-maruyama | heun | random-ode-rk4 (default: by class).
        #[arg(long)]
        integrator: Option<String>,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        /// Sibling realizations averaged per level.
        #[arg(long, default_value_t = 32)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.02)]
        step: f64,
        /// Endpoint time of the integration window [0, t1].
        #[arg(long, default_value_t = 1.0)]
        t1: f64,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            out,
            workers,
        } => {
            let mut cfg = RunConfig::load(&config, &overrides)?;
            if let Some(w) = workers {
                cfg.workers = Some(w);
            }
            let outcome = runner::run_campaign(&cfg, out.as_deref())?;
            print!("{}", outcome.summary_table);
            println!("reports written to {}", outcome.output_dir.display());
            Ok(if outcome.all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Describe { name } => {
            describe(&name)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets => {
            for (name, summary) in PRESETS {
                println!("{name:18} {summary}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpPath {
            seed,
            step,
            past,
            future,
            dim,
            out,
            load,
        } => {
            if let Some(file) = load {
                let mut reader =
                    File::open(&file).with_context(|| format!("opening {}", file.display()))?;
                let path = TwoSidedWienerPath::load(&mut reader)?;
                println!(
                    "seed {}  dim {}  step {}  level {}  horizon [-{}, {}]  points {}",
                    path.seed(),
                    path.dim(),
                    path.step(),
                    path.level(),
                    path.past_horizon(),
                    path.future_horizon(),
                    path.len()
                );
                return Ok(ExitCode::SUCCESS);
            }
            let Some(out) = out else {
                bail!("dump-path needs --out FILE (or --load FILE to inspect)");
            };
            let path = TwoSidedWienerPath::sample(seed, past, future, step, dim)?;
            let mut writer =
                File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            path.dump(&mut writer)?;
            println!("wrote {} points to {}", path.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Selfconv {
            preset: name,
            integrator,
            levels,
            samples,
            seed,
            step,
            t1,
        } => {
            let spec = preset(&name)?;
            let is_strat = matches!(spec, SystemSpec::StratonovichDissipative { .. });
            let kind = match integrator.as_deref() {
                None => {
                    if is_strat {
                        IntegratorKind::Heun
                    } else {
                        IntegratorKind::EulerMaruyama
                    }
                }
                Some("euler-maruyama") => IntegratorKind::EulerMaruyama,
                Some("heun") => IntegratorKind::Heun,
                Some("random-ode-rk4") => IntegratorKind::RandomOdeRk4,
                Some(other) => bail!(
                    "unknown integrator {other:?}; use euler-maruyama, heun or random-ode-rk4"
                ),
            };
            // random-ODE runs need burn-in history for the stationary bundle
            let past = if kind == IntegratorKind::RandomOdeRk4 {
                20.0
            } else {
                0.0
            };
            let path = TwoSidedWienerPath::sample(seed, past, t1, step, spec.noise_dim())?;
            let x0 = vec![1.0; spec.state_dim()];
            let study =
                integrators::self_convergence(kind, &spec, &path, 0.0, t1, &x0, levels, samples)?;
            println!("step,error");
            for p in &study.points {
                println!("{:.6e},{:.6e}", p.step, p.error);
            }
            let multiplicative = matches!(spec, SystemSpec::MultiplicativeLipschitz { .. });
            let (lo, hi) = integrators::expected_order_band(kind, multiplicative);
            println!(
                "fitted order {:.3} (expected band [{lo}, {hi}])",
                study.fitted_order
            );
            let ok = study.fitted_order >= lo && study.fitted_order <= hi;
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn describe(name: &str) -> Result<()> {
    let spec = preset(name)?;
    let summary = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .unwrap_or("(no summary)");
    println!("{name}: {summary}");
    println!("class: {}", spec.class_name());
    println!(
        "state dim: {}, noise dim: {}",
        spec.state_dim(),
        spec.noise_dim()
    );
    let rate = spec.predicted_rate(&rds_core::systems::Margins::default());
    match &spec {
        SystemSpec::AdditiveLipschitz {
            lambda,
            c,
            lipschitz,
            ..
        } => {
            println!("constants: lambda = {lambda}, c = {c}, L = {lipschitz}");
            println!(
                "contraction: pullback separations decay like c*exp(-(lambda - L*c) t); \
                 predicted rate {:.6}",
                rate.rate
            );
        }
        SystemSpec::AdditiveDissipative {
            dissipativity,
            growth_a,
            growth_b,
            growth_p,
            ..
        } => {
            println!(
                "constants: L = {dissipativity}, growth |g(x)| <= {growth_a}|x|^{growth_p} + {growth_b}"
            );
            println!(
                "contraction: one-sided dissipativity gives exp(-L t) decay; predicted rate {:.6}",
                rate.rate
            );
        }
        SystemSpec::MultiplicativeLipschitz {
            lambda,
            rbar_l1,
            lipschitz,
            ..
        } => {
            println!("constants: lambda = {lambda}, ||Rbar||_L1 = {rbar_l1}, L = {lipschitz}");
            println!(
                "contraction: linear-cocycle decay with margin eps0 < (lambda - L*||Rbar||_L1)/2; \
                 predicted rate {:.6} (eps0 = {:.6})",
                rate.rate,
                rate.eps0.unwrap_or(f64::NAN)
            );
        }
        SystemSpec::StratonovichDissipative {
            c_k, dissipativity, ..
        } => {
            println!("constants: L = {dissipativity}, conformal noise weights c_k = {c_k:?}");
            println!(
                "contraction: comparison argument gives exp(-(L - eps2) t) decay; \
                 predicted rate {:.6} (eps2 = {:.6})",
                rate.rate,
                rate.eps2.unwrap_or(f64::NAN)
            );
        }
    }
    if name == "remark5" {
        println!(
            "closed form: ||exp(A t)||_F = exp(-t/2) * sqrt(2 + (8/23) sin^2(sqrt(23) t / 2))"
        );
        println!("note: no L > 0 satisfies <x, Ax> <= -L|x|^2 (witness x = (1, 1))");
    }
    Ok(())
}
