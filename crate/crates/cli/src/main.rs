use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use agcnet::bench::{bench_pair, BenchConfig};
use agcnet::data::{class_frequencies, generate, write_split};
use agcnet::trainer::{lambda_trajectories, run_experiment};
use agcnet::{gradcheck, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "agcnet",
    version,
    about = "Per-sample gain control vs batch normalization on a toy segmentation task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/val splits
    GenData(ConfigArgs),
    /// Train a network; writes metrics.csv, config.txt and final.ckpt
    Train(ConfigArgs),
    /// Run the finite-difference gradient suites
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::DEFAULT_FIXTURES)]
        fixtures: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time and measure AGC against BN on the same data
    Bench(BenchArgs),
    /// Print per-layer λ trajectories from a metrics CSV
    LambdaReport {
        metrics: PathBuf,
        /// Also write the trajectories in long form to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value config file; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["agc", "bn", "none"])]
    norm: Option<String>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long, value_parser = ["on", "off"])]
    lr_scale: Option<String>,
    #[arg(long, value_parser = ["on", "off"])]
    gems: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 8)]
    minibatch: usize,
    #[arg(long, default_value_t = agcnet::bench::MIN_TIMED_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-step transient byte budget; a mode exceeding it is reported as out of memory
    #[arg(long)]
    memory_limit: Option<i64>,
    /// Image side length
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Append the CSV row (with header if new) to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::parse(&text)
                    .with_context(|| format!("parsing {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        let overrides = [
            ("norm", self.norm.clone()),
            ("minibatch", self.minibatch.map(|v| v.to_string())),
            ("base_lr", self.base_lr.map(|v| v.to_string())),
            ("lr_scale", self.lr_scale.clone()),
            ("gems", self.gems.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)
                    .with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn gen_data(args: &ConfigArgs) -> Result<()> {
    let cfg = args.load()?;
    let (train, val) = generate(&cfg.data)?;
    std::fs::create_dir_all(&args.out)?;
    write_split(&args.out.join("train.bin"), &train)?;
    write_split(&args.out.join("val.bin"), &val)?;
    let freqs: Vec<String> = class_frequencies(&train)?
        .iter()
        .map(|f| format!("{f:.4}"))
        .collect();
    println!(
        "train={} val={} size={}x{} classes={}",
        train.len(),
        val.len(),
        train.height,
        train.width,
        train.classes
    );
    println!("class_frequencies={}", freqs.join(","));
    Ok(())
}

fn train(args: &ConfigArgs) -> Result<()> {
    let cfg = args.load()?;
    log::info!(
        "norm={} minibatch={} effective_lr={} epochs={} seed={}",
        cfg.train.norm_mode,
        cfg.train.minibatch_size,
        cfg.train.effective_lr(),
        cfg.train.epochs,
        cfg.train.seed
    );
    let out = run_experiment(&cfg, Some(&args.out))?;
    let last = out.records.last().expect("epoch-0 record always exists");
    println!(
        "epochs={} final_val_pixel_error={:.6} final_val_loss={:.6}",
        last.epoch, last.val_pixel_error, last.val_loss
    );
    println!("metrics={}", args.out.join("metrics.csv").display());
    println!("checkpoint={}", args.out.join("final.ckpt").display());
    Ok(())
}

fn run_gradcheck(fixtures: usize, seed: u64) -> Result<bool> {
    let reports = gradcheck::run_all(seed, fixtures)?;
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<14} fixtures={:<3} entries={:<6} max_rel_error={:.3e} max_abs_diff={:.3e} tolerance={:.0e} {}",
            r.name,
            r.fixtures,
            r.entries,
            r.max_rel_error,
            r.max_abs_diff,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
        ok &= r.passed();
    }
    Ok(ok)
}

fn bench(args: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        minibatch: args.minibatch,
        steps: args.steps,
        warmup: args.warmup,
        seed: args.seed,
        height: args.size,
        width: args.size,
        memory_limit: args.memory_limit,
        ..BenchConfig::default()
    };
    let report = bench_pair(&cfg)?;
    print!("{}", report.to_key_value());
    if let Some(path) = &args.out {
        let mut text = if path.exists() {
            std::fs::read_to_string(path)?
        } else {
            String::new()
        };
        if text.is_empty() {
            text.push_str(agcnet::bench::CSV_HEADER);
            text.push('\n');
        }
        text.push_str(&report.csv_row());
        text.push('\n');
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn lambda_report(metrics: &Path, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(metrics)
        .with_context(|| format!("reading {}", metrics.display()))?;
    let trajectories = lambda_trajectories(&text)?;
    let mut long = String::from("layer,epoch,min,mean,max\n");
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    println!(
        "{:<14} {:>6} {:>10} {:>10} {:>10}",
        "layer", "epoch", "min", "mean", "max"
    );
    for t in &trajectories {
        for &(epoch, min, mean, max) in &t.points {
            long.push_str(&format!("{},{epoch},{min},{mean},{max}\n", t.layer));
            lo = lo.min(min);
            hi = hi.max(max);
        }
        if let Some(&(epoch, min, mean, max)) = t.points.last() {
            println!(
                "{:<14} {epoch:>6} {min:>10.4} {mean:>10.4} {max:>10.4}",
                t.layer
            );
        }
    }
    let finite = trajectories
        .iter()
        .all(|t| t.points.iter().all(|p| p.1.is_finite() && p.3.is_finite()));
    println!(
        "layers={} observed_range=[{lo:.4}, {hi:.4}] reference_range=[0, 2] finite={finite}",
        trajectories.len()
    );
    if let Some(path) = out {
        std::fs::write(path, long)?;
    }
    if !finite {
        bail!("non-finite λ values in {}", metrics.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Gradcheck { fixtures, seed } => match run_gradcheck(*fixtures, *seed) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: some gradient suites exceeded their tolerance");
                return ExitCode::FAILURE;
            }
            Err(e) => Err(e),
        },
        Command::Bench(a) => bench(a),
        Command::LambdaReport { metrics, out } => lambda_report(metrics, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
