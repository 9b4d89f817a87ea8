mod config;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikebudget::continual::{run_config, write_run, AccuracyMatrix, ConfigId, Dataset, Preset, RunResult};
use spikebudget::encoding::{load_mnist_split, poisson_encode, write_event_file, EventRecord};
use spikebudget::network::gradcheck::{run_gradcheck, GradcheckSize};

use crate::config::{CliOverrides, DatasetName, ExperimentConfig};

/// Continual learning with spiking networks under a spike budget.
#[derive(Parser)]
#[command(name = "spikebudget", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured C0-C4 runs and write JSON/CSV results.
    Run(RunArgs),
    /// Recompute ACC, F and BWT from an accuracy-matrix CSV.
    Metrics { csv: PathBuf },
    /// Compare BPTT gradients against finite differences on random nets.
    Gradcheck(GradcheckArgs),
    /// Poisson-encode MNIST images into EVT1 event files.
    Encode(EncodeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Seed; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Comma-separated configuration ids, e.g. C0,C1,C4.
    #[arg(long, value_delimiter = ',', value_parser = parse_config_id)]
    configs: Vec<ConfigId>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset root; defaults to $SPIKEBUDGET_DATA, then data/mnist-subset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Task schedule such as 5x2 or 0,1|2,3.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// One worker thread per seed.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    problems: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    max_input: usize,
    #[arg(long, default_value_t = 12)]
    max_hidden: usize,
    #[arg(long, default_value_t = 4)]
    max_output: usize,
    #[arg(long, default_value_t = 5)]
    max_timesteps: usize,
    #[arg(long, default_value_t = 3)]
    max_batch: usize,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "t10k")]
    split: String,
    #[arg(long, default_value_t = 100)]
    limit: usize,
    #[arg(long, default_value_t = 25)]
    timesteps: usize,
    /// Microseconds per timestep in the emitted streams.
    #[arg(long, default_value_t = 1000)]
    step_us: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: spikebudget::Error| e.to_string())
}

fn parse_config_id(s: &str) -> Result<ConfigId, String> {
    s.parse().map_err(|e: spikebudget::Error| e.to_string())
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

fn fmt_metrics(acc: f64, f: Option<f64>, bwt: Option<f64>) -> String {
    format!("ACC {:.2}%  F {}  BWT {}", 100.0 * acc, fmt_opt(f), fmt_opt(bwt))
}

fn load_dataset(exp: &ExperimentConfig) -> Result<Dataset, spikebudget::Error> {
    let full = match exp.dataset {
        DatasetName::Mnist => Dataset::load_mnist(&exp.data_dir)?,
    };
    match exp.subset {
        Some((train, test)) => full.per_class_subset(train, test),
        None => Ok(full),
    }
}

fn run_seed(exp: &ExperimentConfig, data: &Dataset, seed: u64) -> Vec<Result<RunResult, spikebudget::Error>> {
    exp.configs.iter().map(|&id| run_config(&exp.run_config(id, seed), &exp.schedule, data)).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Desk-scale ablation thresholds, checked when C0, C1 and C4 all ran.
fn ablation_checks(results: &[RunResult], seeds: &[u64]) -> Option<bool> {
    let pick = |id: ConfigId, seed: u64| results.iter().find(|r| r.config_id == id && r.seed == seed);
    let per = |id: ConfigId| seeds.iter().map(|&s| pick(id, s)).collect::<Option<Vec<_>>>();
    let (c0, c1, c4) = (per(ConfigId::C0)?, per(ConfigId::C1)?, per(ConfigId::C4)?);
    let avg = |rs: &[&RunResult], f: fn(&RunResult) -> f64| mean(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());

    let c0_acc = avg(&c0, |r| r.acc);
    let c0_f = avg(&c0, |r| r.forgetting.unwrap_or(f64::NAN));
    let c1_acc = avg(&c1, |r| r.acc);
    let c4_acc = avg(&c4, |r| r.acc);
    let (c1_rate, c4_rate) = (avg(&c1, |r| r.mean_spike_rate), avg(&c4, |r| r.mean_spike_rate));
    let c2 = per(ConfigId::C2);
    let ordered = (0..seeds.len()).all(|i| {
        let best = c2.as_ref().map_or(c4[i].acc, |c2| c2[i].acc.max(c4[i].acc));
        c1[i].acc - c0[i].acc >= 0.25 && c1[i].acc <= best
    });
    let checks = [
        ("C0 ACC <= 30% and F >= 90%", c0_acc <= 0.30 && c0_f >= 0.90),
        ("C1 ACC >= 80%", c1_acc >= 0.80),
        ("C4 spike rate <= 0.75 x C1", c4_rate <= 0.75 * c1_rate),
        ("C4 ACC >= C1 ACC - 1 pt", c4_acc >= c1_acc - 0.01),
        ("C0 << C1 <= max(C2, C4) per seed", ordered),
    ];
    for (name, ok) in checks {
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
    }
    Some(checks.iter().all(|(_, ok)| *ok))
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let file = args.config.as_deref().map(config::parse_file).transpose()?;
    let cli = CliOverrides {
        preset: args.preset,
        seeds: args.seeds,
        configs: args.configs,
        out: args.out,
        data_dir: args.data,
        schedule: args.schedule,
        epochs_per_task: args.epochs,
    };
    let exp = config::resolve(file, cli)?;
    let data = load_dataset(&exp).map_err(|e| format!("loading {}: {e}", exp.data_dir.display()))?;

    let started = Instant::now();
    let per_seed: Vec<Vec<_>> = if args.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = exp
                .seeds
                .iter()
                .map(|&seed| {
                    let (exp, data) = (&exp, &data);
                    scope.spawn(move || run_seed(exp, data, seed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    } else {
        exp.seeds.iter().map(|&seed| run_seed(&exp, &data, seed)).collect()
    };

    let mut results = Vec::new();
    let mut failed = false;
    for (seed, runs) in exp.seeds.iter().zip(per_seed) {
        for (id, res) in exp.configs.iter().zip(runs) {
            match res {
                Ok(r) => {
                    write_run(&exp.out, &r)?;
                    println!(
                        "{id} seed {seed}: {}  spikes {:.2}%  ({:.1} s)",
                        fmt_metrics(r.acc, r.forgetting, r.bwt),
                        100.0 * r.mean_spike_rate,
                        r.wall_time_s
                    );
                    results.push(r);
                }
                Err(e) => {
                    eprintln!("{id} seed {seed}: {e}");
                    failed = true;
                }
            }
        }
    }
    println!("{} runs in {:.1} s, results in {}", results.len(), started.elapsed().as_secs_f64(), exp.out.display());

    if exp.preset == Some(Preset::MnistDesk) && ablation_checks(&results, &exp.seeds) == Some(false) {
        failed = true;
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn cmd_metrics(path: &Path) -> CmdResult {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let m = AccuracyMatrix::read_csv(BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("{}", fmt_metrics(m.acc()?, m.forgetting(), m.bwt()));
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    let size = GradcheckSize {
        max_input: args.max_input,
        max_hidden: args.max_hidden,
        max_output: args.max_output,
        max_timesteps: args.max_timesteps,
        max_batch: args.max_batch,
    };
    let report = run_gradcheck(size, args.problems, args.seed)?;
    for (name, err) in report.groups() {
        println!("{name:>9}  max rel err {err:.3e}");
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: {} problems, max rel err {:.3e} (tolerance {:.0e})",
        report.problems, report.max_rel_err, report.tolerance
    );
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_encode(args: EncodeArgs) -> CmdResult {
    let root = args
        .data
        .or_else(|| std::env::var_os(config::DATA_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(config::DEFAULT_DATA));
    let images = load_mnist_split(&root, &args.split, 10)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    std::fs::create_dir_all(&args.out)?;
    let mut labels = csv::Writer::from_path(args.out.join("labels.csv"))?;
    labels.write_record(["file", "label"])?;
    let n = args.limit.min(images.len());
    for (i, img) in images.iter().take(n).enumerate() {
        let spikes = poisson_encode(img, args.timesteps, &mut rng)?;
        let width = img.width();
        let mut events = Vec::new();
        for t in 0..args.timesteps {
            let t_us =
                u32::try_from(t).ok().and_then(|t| t.checked_mul(args.step_us)).ok_or("timestamps overflow u32")?;
            for (p, &s) in spikes.row(t, 0).iter().enumerate() {
                if s == 1 {
                    events.push(EventRecord { t: t_us, x: (p % width) as u16, y: (p / width) as u16, polarity: 1 });
                }
            }
        }
        let name = format!("{i:05}.evt");
        std::fs::write(args.out.join(&name), write_event_file(width as u16, img.height() as u16, &events)?)?;
        labels.write_record([name, img.label().to_string()])?;
    }
    labels.flush()?;
    println!("wrote {n} streams to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Metrics { csv } => cmd_metrics(&csv),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Encode(a) => cmd_encode(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
