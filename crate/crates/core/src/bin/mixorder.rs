use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mixorder::error::ErrorKind;
use mixorder::harness::{emit_results, read_grid, run_scenario};
use mixorder::order_test::{format_p, random_split, TestConfig, Variant};
use mixorder::seed;
use mixorder::simgen::GenSpec;
use mixorder::stp::{information_criteria, run_stp_on_plan, AlphaSchedule, IcTable, StpOutcome};
use mixorder::{fit_mle, sample, Dataset, FitConfig, MixError, Result};

#[derive(Parser)]
#[command(name = "mixorder", version, about = "Order selection with confidence for Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the number of components of a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Run a grid of simulation scenarios.
    Simulate(SimulateArgs),
    /// Generate a mixture with controlled overlap and sample from it.
    Datagen(DatagenArgs),
    /// Fit a mixture with a fixed number of components.
    Fit(FitArgs),
}

#[derive(Args, Clone, Copy)]
struct FitFlags {
    /// EM restarts per fit.
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Covariance ridge, relative to the average data variance.
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    /// Maximum EM iterations per restart.
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
}

impl FitFlags {
    fn config(&self, seed: u64) -> Result<FitConfig> {
        let cfg = FitConfig {
            restarts: self.restarts,
            cov_ridge: self.ridge,
            max_iters: self.max_iters,
            seed,
            ..FitConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV, one observation per row; a header row is optional.
    #[arg(long)]
    input: PathBuf,
    /// Write the full result as JSON here.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Test statistic: split1, split2 or swapped.
    #[arg(long, default_value = "swapped")]
    variant: Variant,
    /// The alternative has g + l components.
    #[arg(long, default_value_t = 2)]
    l: usize,
    /// Fixed significance level.
    #[arg(long, conflicts_with = "kappa")]
    alpha: Option<f64>,
    /// Use alpha = n1^(-kappa) instead of a fixed level.
    #[arg(long)]
    kappa: Option<f64>,
    /// Stop testing after this many components.
    #[arg(long, default_value_t = 20)]
    g_max: usize,
    /// Largest number of components in the AIC/BIC table.
    #[arg(long, default_value_t = 6)]
    ic_g_max: usize,
    /// Seeds the split and every EM restart.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of rows in the first half of the split.
    #[arg(long, default_value_t = 0.5)]
    n1_fraction: f64,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON array of scenarios.
    #[arg(long)]
    input: PathBuf,
    /// Results CSV; a JSON file with per-replicate detail is written next to it.
    #[arg(long)]
    output: PathBuf,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DatagenArgs {
    /// Generator specification as JSON.
    #[arg(long)]
    input: PathBuf,
    /// Number of rows to sample.
    #[arg(long)]
    n: usize,
    /// Dataset CSV.
    #[arg(long)]
    output: PathBuf,
    /// Generating parameters as JSON, including the achieved overlap.
    #[arg(long)]
    params_output: PathBuf,
    /// Overrides the seed in the specification.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV, one observation per row.
    #[arg(long)]
    input: PathBuf,
    /// Number of components.
    #[arg(long)]
    g: usize,
    /// Write the fit as JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seeds the EM restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Serialize)]
struct Analysis {
    n: usize,
    d: usize,
    stp: StpOutcome,
    ic: IcTable,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Parse => 2,
        ErrorKind::Data => 3,
        ErrorKind::Fit => 4,
        ErrorKind::Overlap => 5,
        ErrorKind::Io => 6,
        ErrorKind::Internal => 1,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| MixError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| MixError::io(path, e))
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let schedule = match (args.alpha, args.kappa) {
        (_, Some(kappa)) => AlphaSchedule::Power { kappa },
        (alpha, None) => AlphaSchedule::Fixed {
            alpha: alpha.unwrap_or(0.05),
        },
    };
    schedule.validate()?;
    if !(args.n1_fraction > 0.0 && args.n1_fraction < 1.0) {
        return Err(MixError::Config("--n1-fraction must lie in (0, 1)".into()));
    }
    let fit = args.fit.config(seed::derive(args.seed, seed::FIT, 0))?;
    let test_cfg = TestConfig {
        l: args.l,
        variant: args.variant,
        fit,
    };
    test_cfg.validate()?;

    let data = Dataset::from_csv_path(&args.input)?;
    let n1 = (data.n() as f64 * args.n1_fraction).floor() as usize;
    let plan = random_split(data.n(), n1, &mut seed::derive_rng(args.seed, seed::SPLIT, 0))?;
    let stp = run_stp_on_plan(&data, &plan, &test_cfg, &schedule, args.g_max)?;
    let ic = information_criteria(&data, args.ic_g_max.min(data.n()), &fit)?;

    println!(
        "n = {}, d = {}, split {} / {}, {} with l = {}, alpha = {}",
        data.n(),
        data.d(),
        stp.split.n1,
        stp.split.n2,
        args.variant,
        args.l,
        stp.alpha_used
    );
    println!("{:>4}  {:<8}  {:>14}  {:>10}  decision", "g", "variant", "log p", "p");
    for t in &stp.trail {
        let decision = if t.rejects(stp.alpha_used) { "reject" } else { "accept" };
        println!(
            "{:>4}  {:<8}  {:>14.4}  {:>10}  {decision}",
            t.g,
            t.variant.to_string(),
            t.log_p,
            format_p(t.p, t.log_p)
        );
    }
    let cap = if stp.hit_cap { " (cap reached)" } else { "" };
    println!(
        "g_hat = {}{cap}; Pr(g0 >= {}) >= {}",
        stp.g_hat,
        stp.g_hat,
        1.0 - stp.alpha_used
    );
    println!();
    println!("{:>4}  {:>5}  {:>14}  {:>10}  {:>10}", "g", "dim", "loglik", "AIC", "BIC");
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    for r in &ic.rows {
        println!(
            "{:>4}  {:>5}  {:>14}  {:>10}  {:>10}",
            r.g,
            r.dim,
            opt(r.loglik, 4),
            opt(r.aic, 4),
            opt(r.bic, 4)
        );
    }
    let arg = |g: Option<usize>| g.map_or("-".to_string(), |g| g.to_string());
    println!("argmin AIC = {}, argmin BIC = {}", arg(ic.g_aic), arg(ic.g_bic));

    if let Some(path) = &args.output {
        write_json(
            path,
            &Analysis {
                n: data.n(),
                d: data.d(),
                stp,
                ic,
            },
        )?;
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let grid = read_grid(&args.input)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| MixError::Config(format!("cannot start thread pool: {e}")))?;
    let mut rows = Vec::with_capacity(grid.len());
    for (i, s) in grid.iter().enumerate() {
        let start = std::time::Instant::now();
        let row = pool.install(|| run_scenario(s))?;
        eprintln!(
            "[{}/{}] {}: cov {:.3} mean {:.3} corr {:.3} ({} failed, {:.1}s)",
            i + 1,
            grid.len(),
            s.label(),
            row.cov_prop,
            row.mean_comp,
            row.corr_prop,
            row.failures.len(),
            start.elapsed().as_secs_f64()
        );
        rows.push(row);
    }
    emit_results(&rows, &args.output)?;
    Ok(())
}

fn datagen(args: &DatagenArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| MixError::io(&args.input, e))?;
    let mut spec: GenSpec = serde_json::from_str(&text)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if args.n == 0 {
        return Err(MixError::Config("--n must be positive".into()));
    }
    let gen = spec.generate()?;
    let data = sample(
        &gen.params,
        args.n,
        &mut seed::derive_rng(spec.seed, seed::SAMPLE, 0),
    )?;
    data.write_csv(create(&args.output)?)?;
    write_json(&args.params_output, &gen)?;
    eprintln!(
        "achieved omega_bar = {} (target {})",
        gen.achieved_omega_bar, gen.target
    );
    Ok(())
}

fn fit(args: &FitArgs) -> Result<()> {
    let data = Dataset::from_csv_path(&args.input)?;
    let result = fit_mle(&data, args.g, &args.fit.config(args.seed)?)?;
    match &args.output {
        Some(path) => write_json(path, &result),
        None => {
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Datagen(a) => datagen(a),
        Command::Fit(a) => fit(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
