use std::path::PathBuf;

#[cfg(feature = "parallel")]
use anyhow::Context;
use anyhow::{bail, Result};
use bandit_trials::gittins::DpConfig;
use bandit_trials::{PolicyKind, PolicySpec};
use bandit_trials_cli::commands::{
    cmd_calibrate, cmd_samplesize, cmd_simulate, cmd_sweep, cmd_table, sweep_csv, write_calibration,
    write_simulation, write_text,
};
use bandit_trials_cli::tables::{table_file_name, TableCache};
use bandit_trials_cli::RunConfig;
use clap::{Args, Parser, Subcommand};

/// Simulate adaptive multi-arm trials with normal endpoints.
#[derive(Parser)]
#[command(name = "bandit-trials", version)]
struct Cli {
    /// Master seed; overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// JSON run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled configuration: two_arm, four_arm or rare.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a Gittins index table and write it as CSV.
    Table(TableArgs),
    /// Calibrate critical values under the global null.
    Calibrate(RunArgs),
    /// Simulate policies under every hypothesis and write the results table.
    Simulate(SimulateArgs),
    /// Empirical critical value of one policy across trial sizes.
    Sweep(SweepArgs),
    /// Trial size for fixed equal randomization with FWER control.
    Samplesize(SampleSizeArgs),
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, default_value_t = 0.995)]
    discount: f64,
    #[arg(long)]
    n_max: usize,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    state_bound: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Output file (defaults to `<out-dir>/gittins_d<d>_n<n>.csv`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Restrict to these policies (comma separated).
    #[arg(long, value_delimiter = ',')]
    policy: Vec<PolicyKind>,
    /// Replicate count; overrides the configuration.
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Also write per-arm bias trajectories.
    #[arg(long)]
    bias: bool,
    /// Also write histograms of the test statistics.
    #[arg(long)]
    histograms: bool,
    /// Dump this many replicate traces per policy and hypothesis.
    #[arg(long)]
    traces: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    policy: PolicyKind,
    /// Number of experimental arms.
    #[arg(long)]
    arms: usize,
    /// Trial sizes (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    replicates: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = bandit_trials::policy::DEFAULT_DISCOUNT)]
    discount: f64,
}

#[derive(Args)]
struct SampleSizeArgs {
    /// Number of experimental arms.
    #[arg(long)]
    arms: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.545)]
    delta: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.10)]
    beta: f64,
}

fn run_config(cli: &Cli, args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => bail!("--config <file> or --preset <name> is required"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(m) = args.replicates {
        cfg.replicates = m;
    }
    cfg.select_policies(&args.policy)?;
    cfg.validate()?;
    Ok(cfg)
}

fn set_workers(workers: Option<usize>) -> Result<()> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        bail!("--workers must be at least 1");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker pool")?;
    Ok(())
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    set_workers(cli.workers)?;
    let cache = TableCache::from_env();
    match &cli.command {
        Command::Table(a) => {
            let defaults = DpConfig::default();
            let dp = DpConfig {
                grid_step: a.grid_step.unwrap_or(defaults.grid_step),
                state_bound: a.state_bound.unwrap_or(defaults.state_bound),
                horizon: a.horizon.or(defaults.horizon),
                bisection_tol: a.tol.unwrap_or(defaults.bisection_tol),
                ..defaults
            };
            let table = cmd_table(a.discount, a.n_max, &dp)?;
            let path = a.output.clone().unwrap_or_else(|| cli.out_dir.join(table_file_name(a.discount, a.n_max)));
            write_text(&path, &table.to_csv_string())?;
            report(&[path]);
        }
        Command::Calibrate(a) => {
            let cfg = run_config(&cli, a)?;
            let mut written = Vec::new();
            for cal in cmd_calibrate(&cfg, &cache)? {
                println!("{} K={} T={} M={}: C = {:.4}", cal.policy, cal.k, cal.trial_size, cal.replicates, cal.critical.value);
                written.extend(write_calibration(&cli.out_dir, &cal)?);
            }
            report(&written);
        }
        Command::Simulate(a) => {
            let mut cfg = run_config(&cli, &a.run)?;
            cfg.bias |= a.bias;
            cfg.histograms |= a.histograms;
            if let Some(n) = a.traces {
                cfg.traces = n;
            }
            let results = cmd_simulate(&cfg, &cache)?;
            for p in &results {
                for h in &p.hypotheses {
                    let oc = &h.characteristics;
                    println!(
                        "{:<4} {:<3} C={:.3} reject={:.4} E p*={:.4} ({:.2}) EO={:.4} ({:.2})",
                        oc.policy, oc.hypothesis, oc.critical_value, oc.rejection_rate, oc.e_pstar, oc.sd_pstar,
                        oc.e_outcome, oc.sd_outcome
                    );
                }
            }
            report(&write_simulation(&cli.out_dir, &cfg.name, &results)?);
        }
        Command::Sweep(a) => {
            let spec = PolicySpec::new(a.policy).with_discount(a.discount);
            let seed = cli.seed.unwrap_or(0);
            let rows = cmd_sweep(&spec, a.arms + 1, a.sigma, &a.sizes, a.replicates, seed, a.alpha, &cache)?;
            for (t, c) in &rows {
                println!("T={t}: C = {c:.4}");
            }
            let path = cli.out_dir.join(format!("sweep_{}_K{}.csv", a.policy, a.arms));
            write_text(&path, &sweep_csv(&rows))?;
            report(&[path]);
        }
        Command::Samplesize(a) => {
            let r = cmd_samplesize(a.arms, a.sigma, a.delta, a.alpha, a.beta)?;
            println!("{}", r.trial_size);
            println!("{}", r.explanation);
        }
    }
    Ok(())
}
