//! `sentcnn` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 corrupt artifact,
//! 4 query error.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sentcnn::checkpoint::{CheckpointError, Classifier};
use sentcnn::corpus::{self, CorpusStats, LabeledTokens};
use sentcnn::embed::EmbedError;
use sentcnn::eval::{self, EvalError, NeighborReport};
use sentcnn::optim;
use sentcnn::pipeline::{self, Prepared};
use sentcnn::{Error, TrainConfig, Variant};

#[derive(Parser)]
#[command(name = "sentcnn", version, about = "Convolutional sentence classifier over word vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, or report k-fold cross-validation accuracy with --cv.
    Train(TrainArgs),
    /// Classify sentences with a saved model.
    Predict(PredictArgs),
    /// Nearest neighbors of a word in every embedding channel.
    Neighbors(NeighborArgs),
    /// Corpus statistics: classes, mean length, size, vocabulary, coverage.
    InspectData(InspectArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Training (or full CV) data, one `label<TAB>sentence` per line.
    #[arg(long)]
    data: PathBuf,
    /// Optional dev split in the same format.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Optional test split in the same format.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Pre-trained word2vec vectors (binary, or text for .txt/.vec).
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Overrides the config variant: rand, static, non-static, multichannel.
    #[arg(long)]
    variant: Option<Variant>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run k-fold cross-validation and print the CSV report.
    #[arg(long)]
    cv: bool,
    /// Checkpoint path; history goes to `<out>.history.csv`. In CV mode the
    /// report is also written here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sentence to classify; stdin is read line by line when absent.
    #[arg(long)]
    text: Option<String>,
}

#[derive(Args)]
struct NeighborArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    word: String,
    #[arg(long, default_value_t = 4)]
    count: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    data: DataArgs,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Checkpoint(CheckpointError::Io(_)) => 2,
        Error::Checkpoint(_) => 3,
        Error::Embed(EmbedError::BadHeader | EmbedError::TruncatedRecord) => 3,
        Error::Eval(EvalError::UnknownWord(_)) => 4,
        _ => 2,
    }
}

fn read_rows(path: &Path) -> Result<Vec<LabeledTokens>, Error> {
    let file = File::open(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    corpus::read_labeled(BufReader::new(file))
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig, Error> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    TrainConfig::parse(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn load_vectors(path: Option<&Path>, prepared: &Prepared, dim: usize) -> Result<Option<sentcnn::embed::Pretrained>, Error> {
    path.map(|p| {
        if !p.exists() {
            return Err(Error::Validation(format!("vectors file {} not found", p.display())));
        }
        pipeline::load_vectors(p, &prepared.vocab, dim)
    })
    .transpose()
}

struct Loaded {
    prepared: Prepared,
    rows: Vec<LabeledTokens>,
    has_dev: bool,
    has_test: bool,
}

fn load_data(args: &DataArgs, max_width: usize) -> Result<Loaded, Error> {
    let train = read_rows(&args.data)?;
    let dev = args.dev.as_deref().map(read_rows).transpose()?;
    let test = args.test.as_deref().map(read_rows).transpose()?;
    let prepared = Prepared::new(&train, dev.as_deref(), test.as_deref(), max_width)?;
    let (has_dev, has_test) = (dev.is_some(), test.is_some());
    let rows = [Some(train), dev, test].into_iter().flatten().flatten().collect();
    Ok(Loaded { prepared, rows, has_dev, has_test })
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let mut cfg = read_config(args.data.config.as_deref())?;
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(Error::Validation)?;
    if cfg.variant.needs_pretrained() && args.data.vectors.is_none() {
        return Err(Error::Validation(format!("{} variant requires --vectors", cfg.variant)));
    }
    if args.cv && (args.data.dev.is_some() || args.data.test.is_some()) {
        return Err(Error::Validation("--cv cannot be combined with --dev or --test".into()));
    }
    let out = match (&args.out, args.cv) {
        (None, false) => return Err(Error::Validation("train requires --out unless --cv is given".into())),
        (out, _) => out.clone(),
    };

    let loaded = load_data(&args.data, cfg.max_width())?;
    let prepared = &loaded.prepared;
    let pretrained = load_vectors(args.data.vectors.as_deref(), prepared, cfg.dim)?;
    let num_classes = prepared.dataset.num_classes;
    let model = pipeline::init_model(&prepared.vocab, num_classes, &cfg, pretrained)?;
    log::info!("variant {} seed {} on {} examples", cfg.variant, cfg.seed, prepared.dataset.len());

    let mut stdout = io::stdout().lock();
    if args.cv {
        let report = eval::run_cross_validation(&prepared.dataset, &model, &cfg)?;
        let csv = report.to_csv();
        stdout.write_all(csv.as_bytes())?;
        if let Some(out) = out {
            fs::write(out, csv)?;
        }
        return Ok(());
    }

    let all: Vec<usize> = (0..prepared.dataset.len()).collect();
    let split = prepared.dataset.split.clone().unwrap_or_else(|| corpus::Split { train: all, dev: vec![], test: vec![] });
    let (train_idx, dev_idx) = if loaded.has_dev {
        (split.train.clone(), split.dev.clone())
    } else {
        corpus::select_dev_split(&split.train, cfg.dev_fraction, cfg.seed)?
    };
    let train_set = prepared.dataset.subset(&train_idx);
    let dev_set = prepared.dataset.subset(&dev_idx);
    let fit = optim::fit(model, &train_set, &dev_set, &cfg)?;
    writeln!(stdout, "seed\t{}", cfg.seed)?;
    writeln!(stdout, "best_epoch\t{}", fit.best_epoch)?;
    writeln!(stdout, "dev_accuracy\t{:.6}", fit.best_dev_accuracy)?;
    if loaded.has_test {
        let acc = eval::accuracy(&fit.params, &prepared.dataset.subset(&split.test))?;
        writeln!(stdout, "test_accuracy\t{acc:.6}")?;
    }

    let out = out.expect("checked above");
    let clf = Classifier { config: cfg, vocab: prepared.vocab.clone(), params: fit.params, history: fit.history };
    clf.save(&out)?;
    let mut history_path = out.into_os_string();
    history_path.push(".history.csv");
    fs::write(history_path, clf.history.to_csv())?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Classifier, Error> {
    if !path.exists() {
        return Err(Error::Validation(format!("checkpoint {} not found", path.display())));
    }
    Ok(Classifier::load(path)?)
}

fn predict(args: PredictArgs) -> Result<(), Error> {
    let clf = load_checkpoint(&args.checkpoint)?;
    let mut stdout = io::stdout().lock();
    let mut emit = |line: &str| -> Result<(), Error> {
        let (class, probs) = clf.predict_text(line)?;
        let probs: Vec<String> = probs.iter().map(f64::to_string).collect();
        writeln!(stdout, "{class}\t{}", probs.join("\t"))?;
        Ok(())
    };
    match &args.text {
        Some(text) => emit(text),
        None => io::stdin().lock().lines().try_for_each(|line| emit(&line?)),
    }
}

fn neighbors(args: NeighborArgs) -> Result<(), Error> {
    let clf = load_checkpoint(&args.checkpoint)?;
    let report = NeighborReport::for_model(&clf.params, &clf.vocab, &args.word, args.count)?;
    io::stdout().lock().write_all(report.to_tsv().as_bytes())?;
    Ok(())
}

fn inspect_data(args: InspectArgs) -> Result<(), Error> {
    let cfg = read_config(args.data.config.as_deref())?;
    let loaded = load_data(&args.data, cfg.max_width())?;
    let prepared = &loaded.prepared;
    let test_size = prepared.dataset.split.as_ref().filter(|_| loaded.has_test).map(|s| s.test.len());
    let mut stats = CorpusStats::compute(&loaded.rows, &prepared.vocab, test_size);
    if let Some(pre) = load_vectors(args.data.vectors.as_deref(), prepared, cfg.dim)? {
        stats.pretrained_matches = Some(pre.matched_count());
    }
    io::stdout().lock().write_all(stats.to_tsv().as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Neighbors(a) => neighbors(a),
        Command::InspectData(a) => inspect_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
