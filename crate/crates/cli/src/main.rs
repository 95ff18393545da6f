use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maxvqa::commands::{self, analyze, evaluate, extract, predict, prompts, train};
use maxvqa::config::RunConfig;
use maxvqa::error::{CliResult, Failure};
use maxvqa_core::prompts::AbstractForm;

#[derive(Parser)]
#[command(name = "maxvqa", version, about = "Multi-axis, language-prompted video quality assessment")]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(flatten)]
    paths: PathFlags,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PathFlags {
    #[arg(long, global = true)]
    videos: Option<PathBuf>,
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    targets: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Plain,
    Named,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every video and cache its features.
    ExtractFeatures {
        /// Worker threads.
        #[arg(short, long, default_value_t = 4)]
        jobs: usize,
    },
    /// Train the fusion MLP and prompt context on cached features.
    Train {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated axis codes the loss covers.
        #[arg(long, value_delimiter = ',')]
        axes: Option<Vec<String>>,
    },
    /// Score videos (paths or cached ids) with a trained checkpoint.
    Predict {
        inputs: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write local quality maps.
        #[arg(long)]
        maps: bool,
    },
    /// Local quality maps and an overlay figure for one video.
    QualityMap {
        input: String,
        #[arg(long, value_delimiter = ',', default_value = "O,A-1,T-1")]
        axes: Vec<String>,
        /// Sampled frame for the overlay; defaults to the middle one.
        #[arg(long)]
        frame: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use the untrained zero-shot setup instead of a checkpoint.
        #[arg(long)]
        zero_shot: bool,
    },
    /// Test-split SRCC/PLCC of trained checkpoints.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Scores from local features and untrained prompts.
    ZeroShot {
        inputs: Vec<String>,
        #[arg(long)]
        maps: bool,
    },
    /// MOS, tendency, AMR/ARR and correlation figures from raw opinions.
    AnalyzeOpinions {
        /// Prediction table for a cross-dimension matrix.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write the prompt table (or the dimension registry) as CSV.
    ExportPrompts {
        #[arg(long, value_enum, default_value = "plain")]
        form: Form,
        #[arg(long)]
        registry: bool,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn absolute(p: &PathBuf) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.clone()).display().to_string()
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Flags become overrides; flag paths are taken relative to the working directory.
fn overrides(cli: &Cli) -> Vec<String> {
    let mut out = cli.overrides.clone();
    let p = &cli.paths;
    for (key, value) in [
        ("paths.videos", &p.videos),
        ("paths.cache", &p.cache),
        ("paths.output", &p.output),
        ("paths.annotations", &p.annotations),
        ("paths.targets", &p.targets),
    ] {
        if let Some(v) = value {
            out.push(format!("{key}={}", quoted(&absolute(v))));
        }
    }
    let checkpoint = match &cli.command {
        Command::Train { checkpoint, .. }
        | Command::Predict { checkpoint, .. }
        | Command::QualityMap { checkpoint, .. }
        | Command::Evaluate { checkpoint } => checkpoint.as_ref(),
        _ => None,
    };
    if let Some(c) = checkpoint {
        out.push(format!("paths.checkpoint={}", quoted(&absolute(c))));
    }
    if let Command::Train {
        epochs,
        lr,
        batch_size,
        seed,
        axes,
        ..
    } = &cli.command
    {
        if let Some(v) = epochs {
            out.push(format!("train.epochs={v}"));
        }
        if let Some(v) = lr {
            out.push(format!("train.learning_rate={v:?}"));
        }
        if let Some(v) = batch_size {
            out.push(format!("train.batch_size={v}"));
        }
        if let Some(v) = seed {
            out.push(format!("train.seed={v}"));
        }
        if let Some(v) = axes {
            let list: Vec<String> = v.iter().map(|c| quoted(c.trim())).collect();
            out.push(format!("train.axis_subset=[{}]", list.join(",")));
        }
    }
    out
}

fn run(cli: &Cli) -> CliResult<()> {
    let config = RunConfig::load(cli.config.as_deref(), &overrides(cli))?;
    let out = &config.paths.output;
    match &cli.command {
        Command::ExtractFeatures { jobs } => {
            if *jobs == 0 {
                return Err(Failure::usage("--jobs must be >= 1"));
            }
            let report = extract::extract_features(&config, *jobs)?;
            commands::ensure_dir(out)?;
            report.write_csv(&out.join("extract_report.csv"))?;
            let count = |f: fn(&extract::Status) -> bool| report.count(f);
            println!(
                "extracted {}, skipped {}, failed {}",
                count(|s| *s == extract::Status::Ok),
                count(|s| *s == extract::Status::Skip),
                count(|s| matches!(s, extract::Status::Error(_)))
            );
            if report.all_failed() {
                return Err(Failure::data(format!("all {} videos failed to extract", report.rows.len())));
            }
        }
        Command::Train { .. } => {
            for s in train::run(&config)? {
                println!(
                    "{}: {} train / {} test, {} steps, final loss {:.6}",
                    s.checkpoint.display(),
                    s.train_size,
                    s.test_size,
                    s.steps,
                    s.final_loss
                );
            }
        }
        Command::Predict { inputs, maps, .. } => {
            let opts = predict::PredictOptions {
                inputs,
                checkpoint: Some(&config.paths.checkpoint),
                maps: *maps,
            };
            let table = predict::run(&config, &opts)?;
            println!("scored {} videos into {}", table.ids.len(), out.join("predictions.csv").display());
        }
        Command::QualityMap {
            input,
            axes,
            frame,
            zero_shot,
            ..
        } => {
            let opts = predict::MapOptions {
                input,
                codes: axes,
                frame: *frame,
                checkpoint: (!zero_shot).then_some(config.paths.checkpoint.as_path()),
            };
            println!("{}", predict::quality_map(&config, &opts)?.display());
        }
        Command::Evaluate { .. } => {
            let rows = evaluate::run(&config)?;
            let mut text = Vec::new();
            maxvqa_core::analytics::write_benchmark_text(&rows, &mut text)?;
            io::stdout().write_all(&text)?;
        }
        Command::ZeroShot { inputs, maps } => {
            if let Some(table) = predict::zero_shot(&config, inputs, *maps)? {
                print!("{table}");
            }
            println!("scores in {}", out.join("zero_shot_predictions.csv").display());
        }
        Command::AnalyzeOpinions { predictions } => {
            for p in analyze::run(&config, predictions.as_deref())? {
                println!("{p}");
            }
        }
        Command::ExportPrompts { form, registry, out } => {
            let form = match form {
                Form::Plain => AbstractForm::Plain,
                Form::Named => AbstractForm::Named,
            };
            match out {
                Some(path) => {
                    let file = std::fs::File::create(path)?;
                    prompts::run(form, *registry, io::BufWriter::new(file))?;
                }
                None => prompts::run(form, *registry, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
