use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use hoi_head::classifier::{ClassifierWeights, DEFAULT_GAMMA};
use hoi_head::harness::experiments::{ablate, sweep_gamma};
use hoi_head::harness::synth::{generate, SynthSpec};
use hoi_head::harness::{
    evaluate, train, Init, TrainConfig, DEFAULT_BASE_LR, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS,
    DEFAULT_RESTART_PERIOD,
};
use hoi_head::labelspace::{ClassList, GerundTable};
use hoi_head::losses::{gradcheck, LossKind};
use hoi_head::metrics::{structure_drift, DEFAULT_DRIFT_K};
use hoi_head::sampler::{DEFAULT_MIN_PER_CLASS, DEFAULT_VAL_FRACTION};
use hoi_head::{Error, Result};

#[derive(Parser)]
#[command(name = "hoi-head", version, about = "Train and evaluate a cosine classifier head on precomputed features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print one prompt sentence per class.
    Prompt {
        #[arg(long)]
        classes: PathBuf,
        /// Extra `verb gerund` exceptions, replacing the built-in table.
        #[arg(long)]
        exceptions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a classifier; prints the run record as JSON.
    Train(TrainArgs),
    /// Score features with saved weights; prints an AP report as JSON.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
    },
    /// Compare analytic loss gradients against central differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = LossArg::All)]
        loss: LossArg,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 16)]
        c_max: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exit with status 2 if any loss exceeds this relative error.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Structure drift between two weight files.
    Analyze {
        #[arg(long)]
        initial: PathBuf,
        #[arg(long = "final")]
        final_: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DRIFT_K)]
        k: usize,
    },
    /// Train once per gamma and tabulate validation mAP.
    SweepGamma {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "50,100,150,300,500")]
        gammas: Vec<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Run the {random, embeddings} × {bce, lse-sign} grid.
    Ablate {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic benchmark (class list, features, labels, embeddings).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Benchmark)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        test_images: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    LseSign,
    Bce,
    Wbce,
    Focal,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Embeddings,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Benchmark,
    Separable,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    init: InitArg,
    /// Embedding file for `--init embeddings` (and for `ablate`).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Seed for random init; defaults to `--seed`.
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long, default_value = "lse-sign")]
    loss: LossKind,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = DEFAULT_BASE_LR)]
    base_lr: f64,
    #[arg(long, default_value_t = 0.0)]
    min_lr: f64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_PER_CLASS)]
    min_per_class: usize,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    val_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_RESTART_PERIOD)]
    restart_period: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    test_features: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let init = match self.init {
            InitArg::Random => Init::Random {
                seed: self.init_seed.unwrap_or(self.seed),
            },
            InitArg::Embeddings => Init::Embeddings {
                path: self.embeddings.clone().ok_or_else(|| {
                    Error::Config("--init embeddings requires --embeddings".into())
                })?,
            },
        };
        let config = TrainConfig {
            loss: self.loss,
            gamma: self.gamma,
            base_lr: self.base_lr,
            min_lr: self.min_lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            min_per_class: self.min_per_class,
            val_fraction: self.val_fraction,
            restart_period: self.restart_period,
            seed: self.seed,
            test_features_path: self.test_features.clone(),
            test_labels_path: self.test_labels.clone(),
            out_dir: self.out_dir.clone(),
            ..TrainConfig::new(&self.features, &self.labels, &self.classes, init)
        };
        config.validate()?;
        Ok(config)
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| if text.ends_with('\n') { Ok(()) } else { out.write_all(b"\n") })
        .map_err(|e| Error::io("<stdout>", e))
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Prompt {
            classes,
            exceptions,
            out,
        } => {
            let list = ClassList::read(&classes)?;
            let table = match exceptions {
                Some(p) => GerundTable::parse(&std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))?)?,
                None => GerundTable::builtin().clone(),
            };
            let text: String = list.prompts(&table).iter().map(|p| format!("{}\n", p.text)).collect();
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(p, e))?,
                None => emit(&text)?,
            }
        }
        Command::Train(args) => {
            let output = train(&args.config()?)?;
            emit(&to_json(&output.record))?;
        }
        Command::Eval {
            weights,
            features,
            labels,
            gamma,
        } => {
            let eval = evaluate(&weights, &features, &labels, gamma)?;
            emit(&eval.report.to_json())?;
        }
        Command::Gradcheck {
            loss,
            trials,
            c_max,
            epsilon,
            seed,
            tolerance,
        } => {
            let kinds = match loss {
                LossArg::All => LossKind::ALL.to_vec(),
                LossArg::LseSign => vec![LossKind::LseSign],
                LossArg::Bce => vec![LossKind::Bce],
                LossArg::Wbce => vec![LossKind::Wbce],
                LossArg::Focal => vec![LossKind::Focal],
            };
            let mut failed = false;
            for kind in kinds {
                let report = gradcheck(kind, trials, c_max, epsilon, seed)?;
                failed |= tolerance.is_some_and(|t| !(report.max_rel_err < t));
                emit(&report.to_string())?;
            }
            if failed {
                error!("gradient check exceeded tolerance");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Analyze { initial, final_, k } => {
            let (a, _) = ClassifierWeights::load(&initial, DEFAULT_GAMMA)?;
            let (b, _) = ClassifierWeights::load(&final_, DEFAULT_GAMMA)?;
            emit(&to_json(&structure_drift(a.weights(), b.weights(), k)?))?;
        }
        Command::SweepGamma { train, gammas, json } => {
            let table = sweep_gamma(&train.config()?, &gammas)?;
            emit(&if json { to_json(&table) } else { table.to_string() })?;
        }
        Command::Ablate { train, json } => {
            let embeddings = train.embeddings.clone();
            let mut config = TrainArgs {
                init: InitArg::Random,
                ..train
            }
            .config()?;
            if let Some(path) = embeddings.clone() {
                config.init = Init::Embeddings { path };
            }
            let grid = ablate(&config, embeddings)?;
            emit(&if json { to_json(&grid) } else { grid.to_string() })?;
        }
        Command::Synth {
            out,
            preset,
            seed,
            images,
            test_images,
        } => {
            let mut spec = match preset {
                Preset::Benchmark => SynthSpec::benchmark(seed),
                Preset::Separable => SynthSpec::separable(seed),
            };
            if let Some(n) = images {
                spec.images = n;
            }
            if let Some(n) = test_images {
                spec.test_images = n;
            }
            let data = generate(&spec)?;
            data.write(&out)?;
            emit(&to_json(&spec))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
