mod report;

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blockmix::io::{open_lines, AtomicFile};
use blockmix::model::EFFECTIVE_WEIGHT;
use blockmix::pipeline::{filter_corpus, read_scores, FilterOptions};
use blockmix::{
    BlockModel, BlockTable, Error, ErrorKind, FitConfig, Init, PriorConfig, Reduction, ScoreOptions, ThresholdSpec,
    Utf8Policy,
};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "blockmix", version, about = "Score and filter corpora by Unicode block distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a clean corpus.
    Train(TrainArgs),
    /// Write one score per input line.
    Score(ScoreArgs),
    /// Filter a monolingual or line-aligned parallel corpus.
    Filter(FilterArgs),
    /// Describe a model.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct Common {
    /// UCD Blocks.txt to use instead of the bundled Unicode 12.0 table.
    #[arg(long, value_name = "FILE")]
    blocks: Option<PathBuf>,
    /// Fail on invalid UTF-8 instead of replacing it with U+FFFD.
    #[arg(long)]
    strict_utf8: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    max_components: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    reg_covar: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Kmeans)]
    init: InitArg,
    /// Score for empty sentences and sentences with unseen blocks (e.g. -inf).
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    unseen_score: f64,
    /// Dirichlet-process concentration (default 1/max-components).
    #[arg(long)]
    alpha: Option<f64>,
    /// Precision scale of the prior on component means (default 1).
    #[arg(long)]
    mean_precision: Option<f64>,
    /// Wishart degrees of freedom (default: number of retained blocks).
    #[arg(long)]
    wishart_dof: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FilterArgs {
    /// One file per side, line-aligned.
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    /// One model per side, or a single model for a monolingual corpus.
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    model: Vec<PathBuf>,
    /// Use the single --model for every side.
    #[arg(long)]
    shared_model: bool,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, allow_hyphen_values = true, required_if_eq("mode", "abs"))]
    threshold: Option<f64>,
    #[arg(long, value_parser = parse_percent, required_if_eq("mode", "rel"))]
    percent: Option<f64>,
    #[arg(long, value_enum, default_value_t = ReductionArg::Min)]
    reduction: ReductionArg,
    #[arg(long, default_value = ".filtered")]
    output_suffix: String,
    /// Also write <input>.scores for every side.
    #[arg(long)]
    scores_out: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// A .scores file to summarize as CSV (lower,upper,count).
    #[arg(long, value_name = "FILE")]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Kmeans,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Abs,
    Rel,
    TrainMin,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Min,
    Max,
    Avg,
}

fn parse_percent(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=100.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 100]"))
    }
}

impl Common {
    fn table(&self) -> blockmix::Result<BlockTable> {
        match &self.blocks {
            Some(path) => BlockTable::parse(&std::fs::read_to_string(path)?),
            None => Ok(BlockTable::builtin().clone()),
        }
    }

    fn utf8(&self) -> Utf8Policy {
        if self.strict_utf8 {
            Utf8Policy::Strict
        } else {
            Utf8Policy::Replace
        }
    }
}

fn warn_replaced(n: usize, path: &Path) {
    if n > 0 {
        eprintln!("warning: {n} lines of {} contained invalid UTF-8 and were repaired", path.display());
    }
}

fn train(args: TrainArgs) -> blockmix::Result<()> {
    let table = args.common.table()?;
    let mut reader = open_lines(&args.input, args.common.utf8())?;
    let lines = reader.by_ref().collect::<blockmix::Result<Vec<String>>>()?;
    warn_replaced(reader.replaced(), &args.input);
    let cfg = FitConfig {
        max_components: args.max_components,
        tol: args.tol,
        max_iter: args.max_iter,
        seed: args.seed,
        reg_covar: args.reg_covar,
        init: match args.init {
            InitArg::Kmeans => Init::Kmeans,
            InitArg::Random => Init::Random,
        },
    };
    let priors = PriorConfig {
        alpha: args.alpha,
        mean_precision: args.mean_precision,
        wishart_dof: args.wishart_dof,
    };
    let (model, report) = BlockModel::train(&lines, &table, &priors, &cfg)?;
    let model = model.with_unseen_score(args.unseen_score);
    model.save(&args.model)?;

    let mix = model.mixture();
    let mut out = io::stdout().lock();
    writeln!(out, "model: {}", args.model.display())?;
    writeln!(out, "sentences: {} (skipped {} empty)", report.sentences, report.skipped_empty)?;
    writeln!(
        out,
        "retained blocks ({}): {}",
        model.projection().dim(),
        model.projection().names().join(", ")
    )?;
    writeln!(
        out,
        "effective components: {} of {}",
        mix.effective_components(EFFECTIVE_WEIGHT),
        mix.n_components()
    )?;
    writeln!(out, "min_train_score: {}", model.min_train_score())?;
    writeln!(out, "iterations: {}", mix.summary().n_iter)?;
    writeln!(out, "converged: {}", mix.summary().converged)?;
    Ok(())
}

fn score(args: ScoreArgs) -> blockmix::Result<()> {
    let table = args.common.table()?;
    let model = BlockModel::load(&args.model, &table)?;
    let mut reader = open_lines(&args.input, args.common.utf8())?;
    let opts = ScoreOptions {
        threads: args.threads.max(1),
        ..Default::default()
    };
    match &args.output {
        Some(path) => {
            let mut out = AtomicFile::create(path)?;
            model.score_to_writer(&mut reader, &table, &opts, &mut out)?;
            out.commit()?;
        }
        None => {
            let mut out = BufWriter::new(io::stdout().lock());
            model.score_to_writer(&mut reader, &table, &opts, &mut out)?;
            out.flush()?;
        }
    }
    warn_replaced(reader.replaced(), &args.input);
    Ok(())
}

fn filter(args: FilterArgs) -> blockmix::Result<()> {
    let table = args.common.table()?;
    let sides = args.input.len();
    let model_paths: Vec<&PathBuf> = if args.model.len() == sides {
        args.model.iter().collect()
    } else if args.model.len() == 1 && (sides == 1 || args.shared_model) {
        vec![&args.model[0]; sides]
    } else {
        return Err(Error::InvalidConfig(format!(
            "{sides} inputs need {sides} models (or one model with --shared-model), got {}",
            args.model.len()
        )));
    };
    let mut loaded: Vec<(PathBuf, BlockModel)> = Vec::new();
    for p in &model_paths {
        if !loaded.iter().any(|(q, _)| q == *p) {
            loaded.push(((*p).clone(), BlockModel::load(p, &table)?));
        }
    }
    let models: Vec<&BlockModel> = model_paths
        .iter()
        .map(|p| &loaded.iter().find(|(q, _)| q == *p).expect("loaded above").1)
        .collect();

    let spec = match args.mode {
        ModeArg::Abs => ThresholdSpec::Absolute(args.threshold.expect("required by clap")),
        ModeArg::Rel => ThresholdSpec::Relative(args.percent.expect("required by clap")),
        ModeArg::TrainMin => ThresholdSpec::TrainMin,
    };
    let opts = FilterOptions {
        spec,
        reduction: match args.reduction {
            ReductionArg::Min => Reduction::Min,
            ReductionArg::Max => Reduction::Max,
            ReductionArg::Avg => Reduction::Avg,
        },
        output_suffix: args.output_suffix.clone(),
        write_scores: args.scores_out,
        utf8: args.common.utf8(),
        score: ScoreOptions {
            threads: args.threads.max(1),
            ..Default::default()
        },
    };
    let summary = filter_corpus(&args.input, &models, &table, &opts)?;
    if summary.replaced_utf8 > 0 {
        eprintln!("warning: {} input lines contained invalid UTF-8 and were repaired", summary.replaced_utf8);
    }
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "removed {}/{} ({:.2}%) mode={}",
        summary.removed,
        summary.total,
        summary.removed_percent(),
        spec.name()
    )?;
    for p in &summary.outputs {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> blockmix::Result<()> {
    let table = args.common.table()?;
    let model = BlockModel::load(&args.model, &table)?;
    let mut out = io::stdout().lock();
    match &args.histogram {
        Some(path) => out.write_all(report::histogram_csv(&read_scores(path)?, args.bins).as_bytes())?,
        None => out.write_all(report::describe(&model).as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Filter(a) => filter(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            })
        }
    }
}
