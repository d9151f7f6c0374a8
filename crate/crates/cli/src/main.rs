use std::error::Error;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};

use mrtag::bench::{run_bench, BenchConfig, BENCH_CSV_HEADER};
use mrtag::corpus::{parse_annotated, parse_plain, AnnotatedCorpus, CorpusConfig};
use mrtag::evaluate::{evaluate, EVAL_CSV_HEADER};
use mrtag::maxent::{train_with, Search, TrainConfig, TrainOptions};
use mrtag::model_file::{load_model, save_model};
use mrtag::mr::{JobConfig, REPORT_CSV_HEADER};
use mrtag::synth::default_language;
use mrtag::tagger::{tag_document_job, write_tagged};
use mrtag::Model;

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser, Debug)]
#[command(
    name = "mrtag",
    version,
    about = "Maximum-entropy POS tagger on a local MapReduce engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from an annotated corpus
    Train(TrainArgs),
    /// Tag a plain-text file, one sentence per line
    Tag(TagArgs),
    /// Compare tagged output against a gold corpus
    Eval(EvalArgs),
    /// Time the training and tagging jobs over a grid of sizes and workers
    Bench(BenchArgs),
    /// Write a seeded synthetic corpus
    Gen(GenArgs),
}

#[derive(Args, Debug, Clone, Copy)]
struct Workers {
    /// Number of map tasks
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    maps: u32,
    /// Number of reduce tasks
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    reduces: u32,
}

impl Workers {
    fn job_config(self) -> JobConfig {
        JobConfig::new(self.maps as usize, self.reduces as usize).expect("clap enforces >= 1")
    }
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let path = PathBuf::from(s);
    if path.is_file() {
        Ok(path)
    } else {
        Err(format!("no such file: {s}"))
    }
}

fn single_char(s: &str) -> Result<char, String> {
    CorpusConfig::from_str_separator(s)
        .map(|c| c.tag_separator())
        .map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Annotated training corpus (word/TAG tokens, one sentence per line)
    #[arg(long, value_parser = existing_file)]
    corpus: PathBuf,
    /// Where to write the model file
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "/", value_parser = single_char)]
    tag_separator: char,
    /// gis or iis
    #[arg(long, default_value = "iis")]
    search: Search,
    #[arg(long, default_value_t = 500)]
    iterations: u32,
    /// Tags seen with fewer distinct words than this are closed-class
    #[arg(long, default_value_t = 10)]
    closed_class_tags_threshold: usize,
    /// Minimum dictionary count for current-word features to fire
    #[arg(long, default_value_t = 2)]
    cur_word_min_feature_thresh: u64,
    /// Exclude closed-class tags from unknown-word candidates
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    learn_closed_class_tags: bool,
    /// Gaussian prior variance (no prior when absent)
    #[arg(long)]
    sigma_squared: Option<f64>,
    /// Stop once no weight moves by more than this in an iteration
    #[arg(long)]
    early_stop: Option<f64>,
    /// Default beam width stored in the model
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Reserved; training is deterministic
    #[arg(long)]
    seed: Option<u64>,
    /// Feature extraction architecture
    #[arg(long, default_value = "generic", value_parser = ["generic"])]
    arch: String,
    /// Write every job's output to disk and read it back before the next stage
    #[arg(long)]
    persist_intermediate: bool,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args, Debug)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Beam width (the model's stored width when absent)
    #[arg(long)]
    beam: Option<usize>,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("prediction").required(true).args(["predicted", "input"]))]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Gold annotated corpus
    #[arg(long)]
    gold: PathBuf,
    /// Already tagged corpus to score
    #[arg(long)]
    predicted: Option<PathBuf>,
    /// Plain text to tag with the model, then score
    #[arg(long)]
    input: Option<PathBuf>,
    /// Append a result row to this CSV file
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["corpus", "synthetic"]))]
struct BenchArgs {
    /// Annotated corpus to truncate to each size
    #[arg(long, value_parser = existing_file)]
    corpus: Option<PathBuf>,
    /// Use a synthetic corpus of this many words instead
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "/", value_parser = single_char)]
    tag_separator: char,
    /// Training sizes in words
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    maps_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    reduces_list: Vec<usize>,
    /// Document sizes in words to tag (the training size when absent)
    #[arg(long, value_delimiter = ',')]
    doc_sizes: Vec<usize>,
    #[arg(long, default_value = "iis")]
    search: Search,
    #[arg(long, default_value_t = 10)]
    iterations: u32,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Also time training with intermediate results written and read back
    #[arg(long)]
    persist_intermediate: bool,
    /// CSV output (stdout when absent)
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    words: usize,
    /// Seed of the synthetic language
    #[arg(long, default_value_t = 1)]
    language_seed: u64,
    /// Seed of the sampled text
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Omit the tags
    #[arg(long)]
    plain: bool,
    #[arg(long)]
    output: PathBuf,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn read_annotated(path: &Path, separator: char) -> CliResult<AnnotatedCorpus> {
    let config = CorpusConfig::new(separator)?;
    parse_annotated(&read(path)?, &config).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn load(path: &Path) -> CliResult<Model> {
    Ok(load_model(path)?)
}

fn train(args: TrainArgs) -> CliResult<()> {
    let config = TrainConfig {
        search: args.search,
        iterations: args.iterations,
        min_word_count: args.cur_word_min_feature_thresh,
        closed_class_threshold: args.closed_class_tags_threshold,
        learn_closed_class: args.learn_closed_class_tags,
        sigma_squared: args.sigma_squared,
        early_stop: args.early_stop,
        tag_separator: args.tag_separator,
        beam_width: args.beam,
    };
    config.validate()?;
    let corpus = read_annotated(&args.corpus, args.tag_separator)?;
    let persist_dir = if args.persist_intermediate {
        Some(tempfile::tempdir()?)
    } else {
        None
    };
    let options = TrainOptions {
        persist_dir: persist_dir.as_ref().map(|d| d.path().to_path_buf()),
        track_likelihood: false,
    };
    let outcome = train_with(&corpus, &config, &args.workers.job_config(), &options)?;
    save_model(&outcome.model, &args.model)?;

    let mut out = io::stdout().lock();
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    for r in outcome
        .job_reports
        .iter()
        .chain([&outcome.expectation_summary()])
    {
        writeln!(out, "{}", r.csv_row())?;
    }
    writeln!(
        out,
        "trained {} features over {} tags in {} iterations ({:.3} s)",
        outcome.model.features().len(),
        outcome.model.tagset().len(),
        outcome.iterations_run,
        outcome.elapsed.as_secs_f64()
    )?;
    Ok(())
}

fn tag(args: TagArgs) -> CliResult<()> {
    let model = load(&args.model)?;
    let document = parse_plain(&read(&args.input)?);
    let beam = args.beam.unwrap_or(model.config().beam_width);
    let (tagged, report) = tag_document_job(&model, &document, beam, &args.workers.job_config())?;
    fs::write(
        &args.output,
        write_tagged(&tagged, model.config().tag_separator),
    )
    .map_err(|e| format!("{}: {e}", args.output.display()))?;
    println!("{REPORT_CSV_HEADER}\n{}", report.csv_row());
    Ok(())
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let model = load(&args.model)?;
    let separator = model.config().tag_separator;
    let gold = read_annotated(&args.gold, separator)?;
    let predicted = match (&args.predicted, &args.input) {
        (Some(path), _) => read_annotated(path, separator)?,
        (None, Some(path)) => {
            let document = parse_plain(&read(path)?);
            let beam = args.beam.unwrap_or(model.config().beam_width);
            let (tagged, _) =
                tag_document_job(&model, &document, beam, &args.workers.job_config())?;
            let config = CorpusConfig::new(separator)?;
            parse_annotated(&write_tagged(&tagged, separator), &config)?
        }
        (None, None) => unreachable!("clap requires one of --predicted/--input"),
    };
    let report = evaluate(&predicted, &gold, model.dictionary())?;
    print!("{report}");
    if let Some(path) = &args.csv {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        if fresh {
            writeln!(file, "{EVAL_CSV_HEADER}")?;
        }
        writeln!(file, "{}", report.csv_row())?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let corpus = match (&args.corpus, args.synthetic) {
        (Some(path), _) => read_annotated(path, args.tag_separator)?,
        (None, Some(words)) => default_language(args.seed).corpus(words, args.seed),
        (None, None) => unreachable!("clap requires one of --corpus/--synthetic"),
    };
    let config = BenchConfig {
        sizes: args.sizes,
        maps: args.maps_list,
        reduces: args.reduces_list,
        doc_sizes: args.doc_sizes,
        train: TrainConfig {
            search: args.search,
            iterations: args.iterations,
            tag_separator: args.tag_separator,
            beam_width: args.beam,
            ..TrainConfig::default()
        },
        persist_intermediate: args.persist_intermediate,
    };
    let mut out: Box<dyn Write> = match &args.csv {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| format!("{}: {e}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(out, "{BENCH_CSV_HEADER}")?;
    out.flush()?;
    run_bench(&corpus, &config, |row| {
        writeln!(out, "{}", row.csv_row())?;
        out.flush()
    })?;
    Ok(())
}

fn generate(args: GenArgs) -> CliResult<()> {
    let language = default_language(args.language_seed);
    let corpus = language.corpus(args.words, args.seed);
    let text = if args.plain {
        corpus
            .plain_lines()
            .into_iter()
            .map(|(_, l)| l + "\n")
            .collect()
    } else {
        mrtag::corpus::write_annotated(&corpus, &CorpusConfig::default())
    };
    fs::write(&args.output, text).map_err(|e| format!("{}: {e}", args.output.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = !matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::MissingRequiredArgument
            );
            let _ = e.print();
            if usage && e.use_stderr() {
                let mut command = Cli::command();
                command.build();
                let sub = std::env::args().nth(1).unwrap_or_default();
                let usage = match command.find_subcommand_mut(&sub) {
                    Some(sub) => sub.render_usage(),
                    None => command.render_usage(),
                };
                eprintln!("\n{usage}");
            }
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Tag(a) => tag(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Gen(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
