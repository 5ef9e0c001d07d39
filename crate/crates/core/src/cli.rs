//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::clbf::Checkpoint;
use crate::config::RunConfig;
use crate::diffusion::{trajectory_rows, write_trajectory_csv, Guidance, QuadraticCost};
use crate::dynamics::SystemSpec;
use crate::error::{check_dim, Error, Result};
use crate::eval::{contour_slice, evaluate_policy, violation_rate_estimate, write_contour_csv, MetricsReport, PLOT_SCRIPT};
use crate::rng::StreamKey;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Stream indices below the master seed; training uses epochs `1..=K`.
const EVAL_STREAM: u64 = 0xE7A1;
const VIOLATION_STREAM: u64 = 0x71_0A7E;

#[derive(Debug, Parser)]
#[command(name = "s2diff", version, about = "Certificate-guided diffusion planning and CLBF training")]
pub struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root (overrides S2DIFF_OUT and the config file).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Sample without certificate guidance.
    #[arg(long, global = true)]
    pub no_clbf_guidance: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a certificate; writes a run directory.
    Train { config: PathBuf },
    /// Closed-loop evaluation of a checkpoint.
    Eval { checkpoint: PathBuf, config: PathBuf },
    /// Estimate the violation rate of a checkpoint over the state domain.
    Violation {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Uniform states to audit (default: eval.violation_states).
        #[arg(long)]
        states: Option<usize>,
    },
    /// Export a 2-D slice of the certificate.
    Contour {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Two state indices, e.g. `0,1`.
        #[arg(long, default_value = "0,1")]
        axes: String,
        /// Grid points per axis.
        #[arg(long, default_value_t = 41)]
        resolution: usize,
    },
    /// Print the fully resolved default config of a system.
    Defaults {
        #[arg(long)]
        system: String,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return EXIT_CONFIG;
        }
        // Fails only if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_configuration() { EXIT_CONFIG } else { EXIT_RUNTIME }
        }
    }
}

/// Output root: config file, then `S2DIFF_OUT`, then `--out`; default `runs/<system>`.
pub fn resolve_out(config: Option<&Path>, env: Option<&str>, flag: Option<&Path>, system: &str) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("runs").join(system))
}

fn load_config(cli: &Cli, path: &Path) -> Result<(RunConfig, SystemSpec, PathBuf)> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.no_clbf_guidance {
        cfg.guidance.use_clbf_guidance = false;
    }
    let sys = cfg.validate()?;
    let env = std::env::var("S2DIFF_OUT").ok();
    let out = resolve_out(cfg.out.as_deref(), env.as_deref(), cli.out.as_deref(), &cfg.system);
    Ok((cfg, sys, out))
}

fn load_checkpoint(path: &Path, sys: &SystemSpec) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::config("checkpoint", format!("cannot read {}: {io}", path.display())),
        other => other,
    })?;
    check_dim("checkpoint input (system state dimension)", sys.n(), ck.cert.layer_sizes()[0])?;
    Ok(ck)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::config("out", format!("cannot create {}: {e}", dir.display())))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { config } => cmd_train(cli, config),
        Command::Eval { checkpoint, config } => cmd_eval(cli, checkpoint, config),
        Command::Violation {
            checkpoint,
            config,
            states,
        } => cmd_violation(cli, checkpoint, config, *states),
        Command::Contour {
            checkpoint,
            config,
            axes,
            resolution,
        } => cmd_contour(cli, checkpoint, config, axes, *resolution),
        Command::Defaults { system } => {
            let cfg = RunConfig::defaults(system);
            cfg.validate()?;
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn print_report(title: &str, r: &MetricsReport) {
    println!("{title}");
    println!("  safety_rate            {:.4}", r.safety_rate);
    println!("  terminal_error         {:.4} ± {:.4}", r.terminal_error_mean, r.terminal_error_std);
    println!("  violation_rate         {:.4} ± {:.4}", r.violation_rate, r.violation_half_width);
    println!("  monotonicity_fraction  {:.4}", r.monotonicity_fraction);
    println!("  stability_hinge_mean   {:.4}", r.stability_hinge_mean);
    println!("  eval_time_ms           {:.1} ± {:.1}", r.eval_time_ms_mean, r.eval_time_ms_std);
}

fn cmd_train(cli: &Cli, config: &Path) -> Result<()> {
    let (cfg, sys, out) = load_config(cli, config)?;
    create_dir(&out)?;
    fs::write(out.join("config.snapshot"), cfg.to_toml())?;
    let setup = cfg.setup(&sys);
    let (_, history) = crate::training::run(&setup, Some(&out))?;
    for (k, rec) in history.iter().enumerate() {
        let m = &rec.metrics;
        println!(
            "epoch {:>3}  loss {:.4} -> {:.4}  safety {:.2}  terminal {:.4}  violation {:.4}  monotonicity {:.3}",
            k + 1,
            rec.loss_trace.first().copied().unwrap_or(f64::NAN),
            rec.loss_trace.last().copied().unwrap_or(f64::NAN),
            m.safety_rate,
            m.terminal_error_mean,
            m.violation_rate,
            m.monotonicity_fraction
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, checkpoint: &Path, config: &Path) -> Result<()> {
    let (cfg, sys, out) = load_config(cli, config)?;
    let ck = load_checkpoint(checkpoint, &sys)?;
    let dir = out.join("eval");
    create_dir(&dir)?;
    let cost = QuadraticCost::for_system(&sys, cfg.guidance.control_weight);
    let guidance = Guidance {
        sys: &sys,
        cert: &ck.cert,
        ccfg: &ck.config,
        gcfg: &cfg.guidance,
        integ: &cfg.integrator,
        cost: &cost,
    };
    let key = StreamKey::new(cfg.seed).child(EVAL_STREAM);
    let (report, episodes) = evaluate_policy(&guidance, &cfg.sampler, &cfg.eval, key)?;
    for (r, ep) in episodes.iter().enumerate() {
        let rows = trajectory_rows(&sys, &ck.cert, &ck.config, &ep.trajectory);
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(format!("rollout_{r}.csv")))?);
        write_trajectory_csv(&mut w, sys.n(), sys.m(), &rows)?;
    }
    fs::write(dir.join("metrics.json"), report.to_json())?;
    print_report(&format!("{} ({} rollouts)", sys.name, episodes.len()), &report);
    Ok(())
}

fn cmd_violation(cli: &Cli, checkpoint: &Path, config: &Path, states: Option<usize>) -> Result<()> {
    let (cfg, sys, out) = load_config(cli, config)?;
    let ck = load_checkpoint(checkpoint, &sys)?;
    let num_states = states.unwrap_or(cfg.eval.violation_states);
    if num_states == 0 {
        return Err(Error::config("states", "must be >= 1"));
    }
    let key = StreamKey::new(cfg.seed).child(VIOLATION_STREAM);
    let v = violation_rate_estimate(&sys, &ck.cert, &ck.config, num_states, cfg.eval.violation_controls, key)?;
    create_dir(&out)?;
    let json = serde_json::json!({
        "violation_rate": v.rate,
        "half_width": v.half_width,
        "num_states": v.num_states,
        "num_controls": cfg.eval.violation_controls,
    });
    fs::write(out.join("violation.json"), serde_json::to_string_pretty(&json).expect("json") + "\n")?;
    println!("violation rate {:.4} ± {:.4} ({} states)", v.rate, v.half_width, v.num_states);
    Ok(())
}

fn parse_axes(text: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::config("axes", format!("expected two comma-separated indices, got `{text}`"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let a = parts[0].parse().map_err(|_| bad())?;
    let b = parts[1].parse().map_err(|_| bad())?;
    Ok((a, b))
}

fn cmd_contour(cli: &Cli, checkpoint: &Path, config: &Path, axes: &str, resolution: usize) -> Result<()> {
    let (_, sys, out) = load_config(cli, config)?;
    let ck = load_checkpoint(checkpoint, &sys)?;
    let (a, b) = parse_axes(axes)?;
    if a >= sys.n() || b >= sys.n() {
        return Err(Error::config("axes", format!("state indices must be below {}", sys.n())));
    }
    let bounds = [(sys.domain_lo[a], sys.domain_hi[a]), (sys.domain_lo[b], sys.domain_hi[b])];
    let slice = contour_slice(&ck.cert, &sys, (a, b), bounds, (resolution, resolution), &sys.goal)?;
    create_dir(&out)?;
    let mut w = std::io::BufWriter::new(fs::File::create(out.join("contour.csv"))?);
    write_contour_csv(&mut w, &slice)?;
    fs::write(out.join("plot_contour.py"), PLOT_SCRIPT)?;
    let (x, y, v) = slice.argmin();
    println!("grid minimum V = {v:.6} at ({x:.4}, {y:.4}); wrote {}", out.join("contour.csv").display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_precedence() {
        let cfg = Path::new("from_config");
        let flag = Path::new("from_flag");
        assert_eq!(resolve_out(Some(cfg), None, None, "p"), PathBuf::from("from_config"));
        assert_eq!(resolve_out(Some(cfg), Some("from_env"), None, "p"), PathBuf::from("from_env"));
        assert_eq!(resolve_out(Some(cfg), Some("from_env"), Some(flag), "p"), PathBuf::from("from_flag"));
        assert_eq!(resolve_out(None, None, None, "p"), PathBuf::from("runs/p"));
    }

    #[test]
    fn axes_parsing() {
        assert_eq!(parse_axes("0, 3").unwrap(), (0, 3));
        assert!(parse_axes("0").is_err());
        assert!(parse_axes("a,b").is_err());
    }

    #[test]
    fn usage_errors_exit_with_config_code() {
        assert_eq!(main_with(["s2diff", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(main_with(["s2diff", "defaults", "--system", "nope"]), EXIT_CONFIG);
        assert_eq!(main_with(["s2diff", "defaults", "--system", "pendulum"]), EXIT_OK);
    }
}
