//! Batch command line for the identification pipeline: corpus generation,
//! grid training, per-model prediction, decision fusion, evaluation and the
//! end-to-end run. Every stage reads and writes plain files, so each one can
//! be re-run in isolation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pidfuse::eval::mean_average_precision;
use pidfuse::io::{
    build_report, read_corpus, read_grid_manifest, read_predictions, read_retrieval, read_truth,
    write_corpus, write_predictions, write_report, write_retrieval, write_truth, EmbeddingEncoding,
    FileConfig, MetricsReport,
};
use pidfuse::model::PREDICTION_LIST_CAP;
use pidfuse::rankfusion::{fuse_all, ModelPredictions};
use pidfuse::router::{
    predict_modalities, run_pipeline_detailed, train_part_a, train_part_b,
};
use pidfuse::synthdata::generate;

#[derive(Parser)]
#[command(name = "pidfuse", version, about = "Multi-modal person identification pipeline")]
struct Cli {
    /// Flat TOML file with training, routing and corpus settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed from the config; drives every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Ranking prefix kept in retrieval files and scored by eval.
    #[arg(long, global = true, default_value_t = 100)]
    cut: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Text,
    Base64,
}

impl From<EncodingArg> for EmbeddingEncoding {
    fn from(value: EncodingArg) -> Self {
        match value {
            EncodingArg::Text => EmbeddingEncoding::Text,
            EncodingArg::Base64 => EmbeddingEncoding::Base64,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Corpus file to write (a `<name>.manifest.json` sidecar appears too).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth file to write alongside the corpus.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// How embeddings are stored in the corpus file.
    #[arg(long, value_enum, default_value = "text")]
    encoding: EncodingArg,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus file with labeled clips.
    #[arg(long)]
    corpus: PathBuf,
    /// Directory receiving the trained model grids.
    #[arg(long)]
    models: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Corpus file with the gallery to score.
    #[arg(long)]
    corpus: PathBuf,
    /// Directory with trained model grids.
    #[arg(long)]
    models: PathBuf,
    /// Prediction-list file to write, one line per (model, label).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Prediction-list files to combine; repeat for several.
    #[arg(long, required = true, num_args = 1..)]
    predictions: Vec<PathBuf>,
    /// Retrieval file to write.
    #[arg(long)]
    out: PathBuf,
    /// Label count; inferred from the prediction files when omitted.
    #[arg(long)]
    labels: Option<u32>,
}

#[derive(Args)]
struct EvalArgs {
    /// Retrieval file to score.
    #[arg(long)]
    retrieval: PathBuf,
    /// Ground-truth file.
    #[arg(long)]
    truth: PathBuf,
    /// Metrics report to write (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Directory receiving every artifact of the run.
    #[arg(long)]
    out_dir: PathBuf,
    /// Score an existing corpus instead of generating one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Truth file matching `--corpus`; required when `--corpus` is given.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// How embeddings are stored in the generated corpus file.
    #[arg(long, value_enum, default_value = "text")]
    encoding: EncodingArg,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its ground truth.
    Gen(GenArgs),
    /// Train the frame-quality-band and clip-modality model grids.
    Train(TrainArgs),
    /// Score a gallery with every modality model.
    Predict(PredictArgs),
    /// Combine prediction lists into one retrieval per label.
    Fuse(FuseArgs),
    /// Score a retrieval file against ground truth.
    Eval(EvalArgs),
    /// Run generation, training, prediction, fusion and evaluation end to end.
    Pipeline(PipelineArgs),
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<FileConfig> {
    let mut config = match path {
        Some(path) => FileConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => FileConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run_gen(args: &GenArgs, config: &FileConfig) -> Result<()> {
    let (clips, truth) = generate(&config.synth_config())?;
    write_corpus(&clips, &args.out, args.encoding.into())
        .with_context(|| format!("writing corpus {}", args.out.display()))?;
    println!("wrote {} clips to {}", clips.len(), args.out.display());
    if let Some(truth_path) = &args.truth {
        write_truth(&truth, truth_path)
            .with_context(|| format!("writing truth {}", truth_path.display()))?;
        println!(
            "wrote truth for {} labels to {}",
            truth.positives.len(),
            truth_path.display()
        );
    }
    Ok(())
}

fn run_train(args: &TrainArgs, config: &FileConfig) -> Result<()> {
    let (clips, _) = read_corpus(&args.corpus)
        .with_context(|| format!("reading corpus {}", args.corpus.display()))?;
    let routing = config.routing_config();
    let training = config.train_config();
    let part_a = train_part_a(&clips, &routing, &training)?;
    let part_b = train_part_b(&clips, &routing, &training)?;
    pidfuse::io::save_grids(&args.models, &part_a, &part_b)
        .with_context(|| format!("writing models to {}", args.models.display()))?;
    println!(
        "trained {} band models and {} modality models into {}",
        part_a.models.len(),
        part_b.models.len(),
        args.models.display()
    );
    Ok(())
}

fn run_predict(args: &PredictArgs, _config: &FileConfig) -> Result<()> {
    let (clips, _) = read_corpus(&args.corpus)
        .with_context(|| format!("reading corpus {}", args.corpus.display()))?;
    let (_, part_b) = pidfuse::io::load_grids(&args.models)
        .with_context(|| format!("reading models from {}", args.models.display()))?;
    let predictions = predict_modalities(&clips, &part_b)?;
    write_predictions(&predictions, &args.out)
        .with_context(|| format!("writing predictions {}", args.out.display()))?;
    println!(
        "wrote lists for {} models to {}",
        predictions.len(),
        args.out.display()
    );
    Ok(())
}

fn run_fuse(args: &FuseArgs, cut: usize) -> Result<()> {
    let mut predictions = ModelPredictions::new();
    for path in &args.predictions {
        let part = read_predictions(path)
            .with_context(|| format!("reading predictions {}", path.display()))?;
        for (model, lists) in part {
            let slot = predictions.entry(model.clone()).or_default();
            for (label, list) in lists {
                if slot.insert(label, list).is_some() {
                    bail!("model {model:?} lists label {label} in more than one input file");
                }
            }
        }
    }
    let n_labels = args.labels.unwrap_or_else(|| {
        predictions
            .values()
            .flat_map(|lists| lists.keys())
            .map(|label| label + 1)
            .max()
            .unwrap_or(0)
    });
    let mut result = fuse_all(&predictions, n_labels, PREDICTION_LIST_CAP)?;
    for list in result.lists.values_mut() {
        list.truncate(cut);
    }
    write_retrieval(&result, &args.out)
        .with_context(|| format!("writing retrieval {}", args.out.display()))?;
    println!(
        "fused {} models over {} labels into {}",
        predictions.len(),
        result.lists.len(),
        args.out.display()
    );
    Ok(())
}

fn run_eval(args: &EvalArgs, cut: usize) -> Result<()> {
    let result = read_retrieval(&args.retrieval)
        .with_context(|| format!("reading retrieval {}", args.retrieval.display()))?;
    let truth = read_truth(&args.truth)
        .with_context(|| format!("reading truth {}", args.truth.display()))?;
    let map = mean_average_precision(&result, &truth, cut)?;

    let mut per_label_ap = BTreeMap::new();
    for (label, positives) in &truth.positives {
        let ids: Vec<&str> = result.lists[label].iter().map(|s| s.clip_id.as_str()).collect();
        per_label_ap.insert(
            *label,
            pidfuse::eval::average_precision(&ids, positives, positives.len(), cut)?,
        );
    }
    let report = MetricsReport {
        map,
        cut,
        part_a_map: None,
        part_b_map: None,
        per_modality_map: BTreeMap::new(),
        per_label_ap,
    };
    if let Some(path) = &args.report {
        write_report(&report, path)
            .with_context(|| format!("writing report {}", path.display()))?;
    }
    println!("map {map:.6}");
    Ok(())
}

fn run_pipeline_cmd(args: &PipelineArgs, config: &FileConfig, cut: usize) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let corpus_path = args.out_dir.join("corpus.jsonl");
    let truth_path = args.out_dir.join("truth.jsonl");

    let (clips, truth) = match (&args.corpus, &args.truth) {
        (Some(corpus), Some(truth_file)) => {
            let (clips, _) = read_corpus(corpus)
                .with_context(|| format!("reading corpus {}", corpus.display()))?;
            let truth = read_truth(truth_file)
                .with_context(|| format!("reading truth {}", truth_file.display()))?;
            (clips, truth)
        }
        (Some(_), None) | (None, Some(_)) => {
            bail!("--corpus and --truth must be given together")
        }
        (None, None) => {
            let (clips, truth) = generate(&config.synth_config())?;
            write_corpus(&clips, &corpus_path, args.encoding.into())?;
            write_truth(&truth, &truth_path)?;
            (clips, truth)
        }
    };

    let routing = config.routing_config();
    let training = config.train_config();
    let part_a = train_part_a(&clips, &routing, &training)?;
    let part_b = train_part_b(&clips, &routing, &training)?;
    let models_dir = args.out_dir.join("models");
    pidfuse::io::save_grids(&models_dir, &part_a, &part_b)?;

    let predictions = predict_modalities(&clips, &part_b)?;
    write_predictions(&predictions, &args.out_dir.join("predictions.jsonl"))?;

    let output = run_pipeline_detailed(&clips, &part_a, &part_b, &routing, cut)?;
    write_retrieval(&output.fused, &args.out_dir.join("retrieval.txt"))?;
    write_retrieval(&output.part_a, &args.out_dir.join("retrieval_part_a.txt"))?;
    write_retrieval(&output.part_b, &args.out_dir.join("retrieval_part_b.txt"))?;
    for (modality, result) in &output.per_modality {
        write_retrieval(
            result,
            &args.out_dir.join(format!("retrieval_{modality}.txt")),
        )?;
    }

    let report = build_report(&output, &truth, cut)?;
    write_report(&report, &args.out_dir.join("report.json"))?;
    let manifest = read_grid_manifest(&models_dir)?;
    println!(
        "map {:.6} ({} band models, {} modality models, cut {})",
        report.map,
        manifest.part_a.len(),
        manifest.part_b.len(),
        cut
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    let config = load_config(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::Gen(args) => run_gen(args, &config),
        Command::Train(args) => run_train(args, &config),
        Command::Predict(args) => run_predict(args, &config),
        Command::Fuse(args) => run_fuse(args, cli.cut),
        Command::Eval(args) => run_eval(args, cli.cut),
        Command::Pipeline(args) => run_pipeline_cmd(args, &config, cli.cut),
    }
}
