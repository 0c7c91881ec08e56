use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sfparse::bench::{bench, rows_to_csv, scaling_report, transfer_throughput, BenchConfig};
use sfparse::config::RunConfig;
use sfparse::dataset::parse_manifest;
use sfparse::eval::{evaluate, EvalReport};
use sfparse::image::load_labelmap;
use sfparse::oracle::fidelity_suite;
use sfparse::pipeline::{resolve_palette, run};
use sfparse::synth::{make_synthetic, SynthSpec};

#[derive(Parser)]
#[command(name = "sfparse", version, about = "Scene parsing by sampling and lattice filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label every query image and evaluate against ground truth when present.
    Parse(RunArgs),
    /// Score predicted label maps written by `parse`.
    Eval(EvalArgs),
    /// Time splat, blur and slice over a grid of sizes.
    Bench(BenchArgs),
    /// Compare the lattice filter against the exact sum.
    Verify(VerifyArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Print the effective configuration.
    DumpConfig(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    palette: Option<PathBuf>,
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    sigma_d_sample: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cell: Option<usize>,
    #[arg(long)]
    no_crf: bool,
    #[arg(long)]
    ideal_ranking: bool,
    /// Any configuration key, e.g. `--set crf.w_app=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> sfparse::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for pair in &self.overrides {
            cfg.set_pair(pair)?;
        }
        if self.train.is_some() {
            cfg.train = self.train.clone();
        }
        if self.query.is_some() {
            cfg.query = self.query.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if self.palette.is_some() {
            cfg.palette = self.palette.clone();
        }
        if let Some(v) = self.cap {
            cfg.cap = v;
        }
        if let Some(v) = self.sigma_d_sample {
            cfg.sigma_d_sample = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.cell {
            cfg.cell = v;
        }
        cfg.no_crf |= self.no_crf;
        cfg.ideal_ranking |= self.ideal_ranking;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Query manifest with ground-truth label maps.
    #[arg(long)]
    query: PathBuf,
    /// Directory holding `<name>_labels.pgm` predictions.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    palette: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    num_classes: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [10_000, 100_000, 1_000_000])]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1000])]
    queries: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    values: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also time one two-kernel transfer with 367,080 samples, 200 queries, 16 classes.
    #[arg(long)]
    throughput: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 20)]
    instances: u64,
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    values: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    train: usize,
    #[arg(long, default_value_t = 10)]
    query: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long)]
    rare_class: Option<u8>,
    #[arg(long, default_value_t = 0)]
    distractors: usize,
}

const CONFIG_ERROR: u8 = 2;

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(CONFIG_ERROR)
}

fn cmd_parse(args: &RunArgs) -> ExitCode {
    let cfg = match args.resolve() {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let summary = match run(&cfg) {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    let names = resolve_palette(&cfg).map(|(p, l)| class_names(&p, l)).unwrap_or_default();
    let text = summary.report.to_text(&names);
    print!("{text}");
    let report = cfg.out.join("report.txt");
    if let Err(e) = fs::write(&report, &text) {
        eprintln!("error: {}: {e}", report.display());
        return ExitCode::from(1);
    }
    if summary.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        for (name, msg) in &summary.failures {
            eprintln!("failed: {name}: {msg}");
        }
        ExitCode::from(1)
    }
}

fn class_names(palette: &sfparse::palette::Palette, l: usize) -> Vec<String> {
    (0..l).map(|i| palette.get(i as u8).map_or(String::new(), |e| e.name.clone())).collect()
}

fn cmd_eval(args: &EvalArgs) -> ExitCode {
    let cfg = RunConfig {
        palette: args.palette.clone(),
        num_classes: args.num_classes,
        train: Some(args.query.clone()),
        ..RunConfig::default()
    };
    let (palette, l) = match resolve_palette(&cfg) {
        Ok(v) => v,
        Err(e) => return config_error(e),
    };
    let rows = match parse_manifest(&args.query) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    let mut report = EvalReport::new(l);
    let mut failed = false;
    for row in rows {
        let name = row.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(gt_path) = &row.labels else {
            log::warn!("{name}: no ground truth, skipped");
            continue;
        };
        let scored = load_labelmap(gt_path, l).and_then(|gt| {
            let pred = load_labelmap(args.pred.join(format!("{name}_labels.pgm")), l)?;
            evaluate(&name, &pred, &gt)
        });
        match scored {
            Ok(r) => report.merge(&r),
            Err(e) => {
                eprintln!("failed: {name}: {e}");
                failed = true;
            }
        }
    }
    print!("{}", report.to_text(&class_names(&palette, l)));
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_bench(args: &BenchArgs) -> ExitCode {
    let cfg = BenchConfig {
        sizes: args.sizes.clone(),
        queries: args.queries.clone(),
        dim: args.dim,
        value_width: args.values,
        seed: args.seed,
        slice_repeats: args.repeats,
    };
    let rows = match bench(&cfg) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    let csv = rows_to_csv(&rows);
    match &args.csv {
        Some(p) => {
            if let Err(e) = fs::write(p, &csv) {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::from(1);
            }
        }
        None => print!("{csv}"),
    }
    eprint!("{}", scaling_report(&rows).to_text());
    if args.throughput {
        match transfer_throughput(367_080, 200, 16, args.seed) {
            Ok(ms) => eprintln!("transfer N_s=367080 N_q=200 L=16: {ms:.0} ms"),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::SUCCESS
}

fn cmd_verify(args: &VerifyArgs) -> ExitCode {
    let seeds = args.seed..args.seed + args.instances;
    let (per_run, pooled) = match fidelity_suite(seeds.clone(), args.train, args.queries, args.dim, args.values) {
        Ok(v) => v,
        Err(e) => return config_error(e),
    };
    println!("seed\tmedian\tp95\tmax\targmax_agreement");
    for (seed, s) in seeds.zip(&per_run) {
        println!("{seed}\t{:.4}\t{:.4}\t{:.4}\t{:.4}", s.median, s.p95, s.max, s.argmax_agreement);
    }
    println!(
        "pooled\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
        pooled.median, pooled.p95, pooled.max, pooled.argmax_agreement
    );
    ExitCode::SUCCESS
}

fn cmd_synth(args: &SynthArgs) -> ExitCode {
    let spec = SynthSpec {
        seed: args.seed,
        train: args.train,
        query: args.query,
        width: args.size,
        height: args.size,
        num_classes: args.classes,
        rare_class: args.rare_class,
        distractors: args.distractors,
    };
    match make_synthetic(&spec, &args.out) {
        Ok(paths) => {
            println!("train\t{}", paths.train_manifest.display());
            println!("query\t{}", paths.query_manifest.display());
            println!("palette\t{}", paths.palette.display());
            ExitCode::SUCCESS
        }
        Err(e) => config_error(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Parse(a) => cmd_parse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Synth(a) => cmd_synth(a),
        Command::DumpConfig(a) => match a.resolve() {
            Ok(cfg) => {
                print!("{}", cfg.dump());
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
    }
}
