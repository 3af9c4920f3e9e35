use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use paramixer::datagen::DatasetSpec;
use paramixer::harness::{self, AnalyzeOptions, RunConfig, Split, MAX_DUMP_N};
use paramixer::protocol::ProtocolSpec;
use paramixer::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "paramixer", version, about = "Train and analyze sparse-factor sequence mixers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a synthetic task; writes metrics.jsonl and checkpoints to --out.
    Train(RunArgs),
    /// Score a checkpoint and print JSON metrics.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train or test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Report structural properties of a protocol as JSON.
    Analyze(RunArgs),
    /// Export a generated dataset.
    Gendata {
        #[command(flatten)]
        run: RunArgs,
        /// Samples to write; defaults to train_count + test_count.
        #[arg(long)]
        count: Option<usize>,
        /// Output file; defaults to <out>/data.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Shared flags. Every config-file key is also a long flag.
#[derive(Args, Debug, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seq_len: Option<String>,
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    n_links: Option<String>,
    #[arg(long)]
    factors: Option<String>,
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    pos_embed: Option<String>,
    #[arg(long)]
    factor_source: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    eval_interval: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    train_count: Option<String>,
    #[arg(long)]
    test_count: Option<String>,
    #[arg(long)]
    train_eval_count: Option<String>,
    #[arg(long)]
    early_stop: Option<String>,
    #[arg(long)]
    stop_accuracy: Option<String>,
    #[arg(long)]
    record_time: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let pairs: [(&'static str, &Option<String>); 23] = [
            ("task", &self.task),
            ("seq_len", &self.seq_len),
            ("blocks", &self.blocks),
            ("embed_dim", &self.embed_dim),
            ("hidden", &self.hidden),
            ("protocol", &self.protocol),
            ("n_links", &self.n_links),
            ("factors", &self.factors),
            ("pooling", &self.pooling),
            ("pos_embed", &self.pos_embed),
            ("factor_source", &self.factor_source),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("eval_interval", &self.eval_interval),
            ("seed", &self.seed),
            ("out", &self.out),
            ("train_count", &self.train_count),
            ("test_count", &self.test_count),
            ("train_eval_count", &self.train_eval_count),
            ("early_stop", &self.early_stop),
            ("stop_accuracy", &self.stop_accuracy),
            ("record_time", &self.record_time),
        ];
        debug_assert_eq!(pairs.len(), harness::KEYS.len());
        pairs.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }

    fn resolve(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(path) => Some(
                fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?,
            ),
            None => None,
        };
        RunConfig::resolve(text.as_deref(), self.overrides())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let report = harness::train(&cfg)?;
            let summary = serde_json::json!({
                "steps": report.steps,
                "epochs": report.epochs_run,
                "final_test": report.final_test,
                "best_test": report.best_test,
                "out": cfg.out,
            });
            println!("{summary}");
        }
        Command::Eval { run, checkpoint, split } => {
            let cfg = run.resolve()?;
            let split = match split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(Error::Config(format!("unknown split {other:?}"))),
            };
            let result = harness::eval_checkpoint(&checkpoint, &cfg, split)?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::Analyze(args) => {
            let cfg = args.resolve()?;
            let spec = ProtocolSpec::new(cfg.protocol, cfg.seq_len, cfg.n_links, cfg.factors)?;
            let mut opts = AnalyzeOptions {
                blocks: cfg.blocks,
                d: cfg.embed_dim,
                hidden: cfg.hidden,
                seed: cfg.seed,
                ..AnalyzeOptions::default()
            };
            let dump_dir = args.out.as_ref().map(|_| cfg.out.clone());
            if let Some(dir) = &dump_dir {
                fs::create_dir_all(dir)?;
                if spec.n <= MAX_DUMP_N {
                    opts.layout_out = Some(dir.join("layout.txt"));
                    opts.dense_csv = Some(dir.join("dense.csv"));
                } else {
                    log::warn!("N = {} exceeds {MAX_DUMP_N}; skipping layout and dense dumps", spec.n);
                }
            }
            let report = harness::analyze(&spec, &opts)?;
            let text = serde_json::to_string(&report)?;
            if let Some(dir) = &dump_dir {
                fs::write(dir.join("report.json"), format!("{text}\n"))?;
            }
            println!("{text}");
        }
        Command::Gendata { run, count, output } => {
            let cfg = run.resolve()?;
            let spec = DatasetSpec { count: count.unwrap_or(cfg.train_count + cfg.test_count), ..cfg.dataset_spec() };
            let path = match output {
                Some(p) => p,
                None => {
                    fs::create_dir_all(&cfg.out)?;
                    cfg.out.join("data.csv")
                }
            };
            harness::gendata(&spec, &path)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
