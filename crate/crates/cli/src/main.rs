//! `cxr`: label, cluster and score chest X-ray reports; train and probe the
//! cluster-conditioned contrastive encoder.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use cxr_core::ccve::eval::{embedding_silhouette, retrieval_accuracy, RETRIEVAL_BATCH};
use cxr_core::ccve::gradcheck::grad_check;
use cxr_core::ccve::{embed_all, impression_tokens, train, Vocabulary};
use cxr_core::cluster::ClusterId;
use cxr_core::corpus::effective_text;
use cxr_core::labeler::LabelerConfig;
use cxr_core::synth::{planted_dataset, random_batch, PlantedConfig};
use cxr_core::{
    clinical_eval, evaluate_nlg, load_corpus, tokenize, CcveConfig, CcveModel, ClusterRecord,
    Clusterer, Corpus, EvalPair, ImageRecord, Labeler, Lexicons, SectionMode, TrainConfig,
    TrainSample, NUM_CATEGORIES,
};

#[derive(Parser)]
#[command(
    name = "cxr",
    about = "Chest X-ray report labeling, metrics and contrastive encoder toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Label every report with the 14 observation states and fine labels.
    Label(LabelArgs),
    /// Build the fine-grained label vocabulary.
    Vocab(VocabArgs),
    /// Assign every report's impression to one of 13 clusters.
    Cluster(ClusterArgs),
    /// Score candidate reports against references.
    Eval(EvalArgs),
    /// Generate the planted-pattern image/impression set.
    CcveSynth(SynthArgs),
    /// Train the cluster-conditioned encoder.
    CcveTrain(TrainArgs),
    /// Embed images through every filter of a trained model.
    CcveEmbed(EmbedArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args, Serialize)]
struct LabelArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = SectionMode::Findings)]
    section: SectionMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct VocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Minimum number of reports a fine label must occur in.
    #[arg(long, default_value_t = 100)]
    threshold: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct ClusterArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Break ties between positive clusters by fixed index order instead of
    /// corpus rarity.
    #[arg(long)]
    canonical_priority: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SectionMode::Findings)]
    section: SectionMode,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Include per-class F1.
    #[arg(long)]
    per_class: bool,
}

#[derive(clap::Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 13)]
    clusters: usize,
    #[arg(long, default_value_t = 50)]
    per_cluster: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long)]
    seed: u64,
    /// Receives corpus.jsonl, clusters.jsonl and images.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct ModelArgs {
    /// Number of filters (K).
    #[arg(long, default_value_t = 13)]
    k: usize,
    /// Side of each cluster filter (c).
    #[arg(long, default_value_t = 3)]
    filter_size: usize,
    /// Shared conv channels (m).
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    kernel_size: usize,
    /// Embedding dimension (d).
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long, default_value_t = 16)]
    text_dim: usize,
    /// Baseline: a single frozen identity filter.
    #[arg(long)]
    cve: bool,
}

impl ModelArgs {
    fn config(&self) -> CcveConfig {
        let config = CcveConfig {
            clusters: self.k,
            filter_size: self.filter_size,
            channels: self.channels,
            kernel_size: self.kernel_size,
            embed_dim: self.embed_dim,
            text_dim: self.text_dim,
            frozen_filters: false,
        };
        if self.cve {
            config.cve_baseline()
        } else {
            config
        }
    }
}

#[derive(clap::Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long)]
    seed: u64,
    /// Also write the per-step loss, one value per line.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
}

#[derive(clap::Args, Serialize)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    /// Image JSONL: {"id","height","width","pixels"} per line.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct GradcheckArgs {
    /// Model to check; a fresh default model is initialised from the seed
    /// when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 8)]
    image_size: usize,
    /// Fail when the worst relative error reaches this.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let version = match Lexicons::from_env() {
        Ok(lex) => format!("{} (lexicon {})", env!("CARGO_PKG_VERSION"), lex.version()),
        Err(e) => format!("{} (lexicon unavailable: {e})", env!("CARGO_PKG_VERSION")),
    };
    // clap wants a 'static version string; this runs once per process.
    let version: &'static str = Box::leak(version.into_boxed_str());
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match serde_json::to_string(&cli.command) {
        Ok(config) => eprintln!("run-config {config}"),
        Err(e) => eprintln!("run-config unavailable: {e}"),
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Label(args) => label(args),
        Command::Vocab(args) => vocab(args),
        Command::Cluster(args) => cluster(args),
        Command::Eval(args) => eval(args),
        Command::CcveSynth(args) => ccve_synth(args),
        Command::CcveTrain(args) => ccve_train(args),
        Command::CcveEmbed(args) => ccve_embed(args),
        Command::Gradcheck(args) => gradcheck(args),
    }
}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

fn check_output(path: &Path) -> Result<()> {
    let parent = parent_dir(path);
    if !parent.is_dir() {
        bail!("output directory {} does not exist", parent.display());
    }
    if path.is_dir() {
        bail!("output path {} is a directory", path.display());
    }
    Ok(())
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes through a temp file in the target directory, renamed into place
/// only once `body` succeeds.
fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path))
        .with_context(|| format!("creating temp file next to {}", path.display()))?;
    {
        let mut out = BufWriter::new(tmp.as_file_mut());
        body(&mut out)?;
        out.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("moving output into {}", path.display()))?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |out| {
        for row in rows {
            serde_json::to_writer(&mut *out, row)?;
            writeln!(out)?;
        }
        Ok(())
    })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))?,
        );
    }
    Ok(rows)
}

fn load(path: &Path) -> Result<Corpus> {
    let corpus = load_corpus(path)?;
    for skip in &corpus.skipped {
        eprintln!(
            "warning: {}:{}: skipped ({})",
            path.display(),
            skip.line,
            skip.reason
        );
    }
    Ok(corpus)
}

fn labeler() -> Result<Labeler> {
    Ok(Labeler::new(
        Lexicons::from_env()?,
        LabelerConfig::default(),
    ))
}

#[derive(Serialize)]
struct LabelRecord<'a> {
    id: &'a str,
    states: Vec<&'static str>,
    fine: Vec<String>,
}

fn label(args: LabelArgs) -> Result<()> {
    check_input(&args.corpus)?;
    check_output(&args.out)?;
    let corpus = load(&args.corpus)?;
    let labeler = labeler()?;
    let mut rows = Vec::with_capacity(corpus.len());
    for report in corpus.iter() {
        match labeler.label_and_extract(report, args.section) {
            Ok((labels, fine)) => rows.push(LabelRecord {
                id: &report.id,
                states: labels.states.iter().map(|s| s.as_str()).collect(),
                fine: fine.into_iter().map(|f| f.surface).collect(),
            }),
            Err(e) => eprintln!("warning: skipped: {e}"),
        }
    }
    write_jsonl(&args.out, &rows)?;
    eprintln!("labeled {} of {} reports", rows.len(), corpus.len());
    Ok(())
}

fn vocab(args: VocabArgs) -> Result<()> {
    check_input(&args.corpus)?;
    check_output(&args.out)?;
    let corpus = load(&args.corpus)?;
    let labeler = labeler()?;
    let vocab = labeler.build_vocab(&corpus, args.threshold)?;
    write_atomic(&args.out, |out| {
        Ok(vocab.write_tsv(labeler.categories(), out)?)
    })?;
    eprintln!(
        "{} fine labels at threshold {}",
        vocab.len(),
        args.threshold
    );
    Ok(())
}

fn cluster(args: ClusterArgs) -> Result<()> {
    check_input(&args.corpus)?;
    check_output(&args.out)?;
    let corpus = load(&args.corpus)?;
    let clusterer = Clusterer::new(labeler()?)?;
    let priority = if args.canonical_priority {
        cxr_core::ClusterPriority::canonical()
    } else {
        clusterer.cluster_priority(&corpus)?
    };
    let assigned = clusterer.assign_corpus(&corpus, &priority)?;
    let rows: Vec<ClusterRecord> = corpus
        .iter()
        .zip(&assigned)
        .map(|(r, &c)| ClusterRecord {
            id: r.id.clone(),
            cluster: c,
            cluster_name: clusterer.map().name(c).to_string(),
        })
        .collect();
    write_jsonl(&args.out, &rows)?;

    let mut counts = vec![0usize; clusterer.map().names().len()];
    for c in &assigned {
        counts[c.0] += 1;
    }
    println!("{:>3}  {:<36} {:>7}", "id", "cluster", "reports");
    for (k, name) in clusterer.map().names().iter().enumerate() {
        println!("{k:>3}  {name:<36} {:>7}", counts[k]);
    }
    println!("{:>3}  {:<36} {:>7}", "", "total", assigned.len());
    Ok(())
}

/// Scores keyed by the short column names of the results table.
fn eval_scores(args: &EvalArgs, labeler: &Labeler) -> Result<BTreeMap<String, Value>> {
    let cands = load(&args.candidates)?;
    let refs = load(&args.references)?;
    let by_id: BTreeMap<&str, _> = cands.iter().map(|r| (r.id.as_str(), r)).collect();
    let ref_ids: BTreeSet<&str> = refs.iter().map(|r| r.id.as_str()).collect();
    if let Some(missing) = ref_ids.iter().find(|id| !by_id.contains_key(*id)) {
        bail!("reference {missing} has no candidate");
    }
    if let Some(extra) = by_id.keys().find(|id| !ref_ids.contains(*id)) {
        bail!("candidate {extra} has no reference");
    }

    let mut pairs = Vec::with_capacity(refs.len());
    let mut cand_labels = Vec::with_capacity(refs.len());
    let mut ref_labels = Vec::with_capacity(refs.len());
    for reference in refs.iter() {
        let candidate = by_id[reference.id.as_str()];
        let cand_text = effective_text(candidate, args.section).context("candidate")?;
        let ref_text = effective_text(reference, args.section).context("reference")?;
        pairs.push(EvalPair::new(
            &reference.id,
            tokenize(&cand_text),
            tokenize(&ref_text),
        ));
        cand_labels.push(labeler.label_text(&candidate.id, &cand_text));
        ref_labels.push(labeler.label_text(&reference.id, &ref_text));
    }
    let nlg = evaluate_nlg(&pairs)?;
    let clinical = clinical_eval(&cand_labels, &ref_labels)?;

    let mut scores = BTreeMap::new();
    for (n, b) in nlg.bleu.iter().enumerate() {
        scores.insert(format!("B{}", n + 1), json!(b));
    }
    scores.insert("RG".into(), json!(nlg.rouge_l));
    scores.insert("MTR".into(), json!(nlg.meteor));
    scores.insert("CDR".into(), json!(nlg.cider));
    scores.insert("P".into(), json!(clinical.precision));
    scores.insert("R".into(), json!(clinical.recall));
    scores.insert("F1".into(), json!(clinical.macro_f1));
    scores.insert("n".into(), json!(pairs.len()));
    if args.per_class {
        for c in 0..NUM_CATEGORIES {
            scores.insert(
                format!("F1:{}", labeler.categories().name(c)),
                json!(clinical.per_class[c]),
            );
        }
    }
    Ok(scores)
}

const COLUMN_ORDER: [&str; 11] = [
    "B1", "B2", "B3", "B4", "RG", "MTR", "CDR", "P", "R", "F1", "n",
];

fn eval(args: EvalArgs) -> Result<()> {
    check_input(&args.candidates)?;
    check_input(&args.references)?;
    check_output(&args.out)?;
    let labeler = labeler()?;
    let scores = eval_scores(&args, &labeler)?;
    let mut columns: Vec<String> = COLUMN_ORDER.iter().map(|c| c.to_string()).collect();
    if args.per_class {
        columns.extend(
            labeler
                .categories()
                .names()
                .iter()
                .map(|n| format!("F1:{n}")),
        );
    }

    write_atomic(&args.out, |out| {
        match args.format {
            Format::Json => {
                // Written by hand to keep the table's column order.
                writeln!(out, "{{")?;
                for (i, c) in columns.iter().enumerate() {
                    let sep = if i + 1 < columns.len() { "," } else { "" };
                    writeln!(out, "  {}: {}{sep}", serde_json::to_string(c)?, scores[c])?;
                }
                writeln!(out, "}}")?;
            }
            Format::Csv => {
                writeln!(out, "{}", columns.join(","))?;
                let cells: Vec<String> = columns
                    .iter()
                    .map(|c| match &scores[c] {
                        Value::Null => String::new(),
                        v => v.to_string(),
                    })
                    .collect();
                writeln!(out, "{}", cells.join(","))?;
            }
        }
        Ok(())
    })?;
    for c in COLUMN_ORDER {
        eprint!("{c}={} ", scores[c]);
    }
    eprintln!();
    Ok(())
}

fn ccve_synth(args: SynthArgs) -> Result<()> {
    if !args.out_dir.is_dir() {
        std::fs::create_dir_all(&args.out_dir)
            .with_context(|| format!("creating {}", args.out_dir.display()))?;
    }
    let samples = planted_dataset(&PlantedConfig {
        clusters: args.clusters,
        per_cluster: args.per_cluster,
        size: args.size,
        seed: args.seed,
    })?;
    let clusterer = Clusterer::new(labeler()?)?;
    let corpus = Corpus::new(samples.iter().map(|s| s.report.clone()).collect());
    write_atomic(&args.out_dir.join("corpus.jsonl"), |out| {
        Ok(corpus.write_jsonl(out)?)
    })?;
    let clusters: Vec<ClusterRecord> = samples
        .iter()
        .map(|s| ClusterRecord {
            id: s.report.id.clone(),
            cluster: ClusterId(s.cluster),
            cluster_name: clusterer.map().name(ClusterId(s.cluster)).to_string(),
        })
        .collect();
    write_jsonl(&args.out_dir.join("clusters.jsonl"), &clusters)?;
    let images: Vec<ImageRecord> = samples
        .iter()
        .map(|s| ImageRecord {
            id: s.report.id.clone(),
            image: s.image.clone(),
        })
        .collect();
    write_jsonl(&args.out_dir.join("images.jsonl"), &images)?;
    eprintln!(
        "wrote {} samples to {}",
        samples.len(),
        args.out_dir.display()
    );
    Ok(())
}

/// Joins reports, cluster assignments and images on id, in corpus order.
fn training_set(
    corpus: &Corpus,
    clusters: Vec<ClusterRecord>,
    images: Vec<ImageRecord>,
) -> Result<Vec<TrainSample>> {
    let mut cluster_of = BTreeMap::new();
    for rec in clusters {
        if cluster_of.insert(rec.id.clone(), rec.cluster).is_some() {
            bail!("cluster file lists {} twice", rec.id);
        }
    }
    let mut image_of = BTreeMap::new();
    for rec in images {
        if image_of.contains_key(&rec.id) {
            bail!("image file lists {} twice", rec.id);
        }
        image_of.insert(rec.id, rec.image);
    }
    corpus
        .iter()
        .map(|report| {
            let cluster = cluster_of
                .remove(&report.id)
                .ok_or_else(|| anyhow!("report {} has no cluster", report.id))?;
            let image = image_of
                .remove(&report.id)
                .ok_or_else(|| anyhow!("report {} has no image", report.id))?;
            let tokens = impression_tokens(report)?;
            Ok(TrainSample {
                image,
                tokens,
                cluster: cluster.0,
            })
        })
        .collect()
}

fn ccve_train(args: TrainArgs) -> Result<()> {
    check_input(&args.corpus)?;
    check_input(&args.clusters)?;
    check_input(&args.images)?;
    check_output(&args.out)?;
    if let Some(h) = &args.history {
        check_output(h)?;
    }
    let corpus = load(&args.corpus)?;
    let samples = training_set(
        &corpus,
        read_jsonl(&args.clusters)?,
        read_jsonl(&args.images)?,
    )?;
    let vocab = Vocabulary::new(samples.iter().flat_map(|s| s.tokens.iter().cloned()));
    let config = args.model.config();
    let model = CcveModel::init(config, vocab, args.seed)?;
    let train_config = TrainConfig {
        steps: args.steps,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
    };
    let outcome = train(model, &samples, &train_config)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    write_atomic(&args.out, |out| Ok(outcome.model.write_json(out)?))?;
    if let Some(path) = &args.history {
        write_atomic(path, |out| {
            for loss in &outcome.loss_history {
                writeln!(out, "{loss}")?;
            }
            Ok(())
        })?;
    }

    let accuracy = retrieval_accuracy(&outcome.model, &samples, RETRIEVAL_BATCH, args.seed)?;
    let silhouette = embedding_silhouette(&outcome.model, &samples)?;
    let summary = json!({
        "samples": samples.len(),
        "steps": outcome.loss_history.len(),
        "first_loss": outcome.loss_history.first(),
        "last_loss": outcome.loss_history.last(),
        "retrieval_accuracy": accuracy,
        "silhouette": silhouette,
    });
    println!("{summary}");
    Ok(())
}

fn read_model(path: &Path) -> Result<CcveModel> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    CcveModel::read_json(BufReader::new(file))
        .with_context(|| format!("loading {}", path.display()))
}

fn ccve_embed(args: EmbedArgs) -> Result<()> {
    check_input(&args.model)?;
    check_input(&args.image)?;
    check_output(&args.out)?;
    let model = read_model(&args.model)?;
    let images: Vec<ImageRecord> = read_jsonl(&args.image)?;
    if images.is_empty() {
        bail!("{} holds no images", args.image.display());
    }
    let mut rows = Vec::with_capacity(images.len());
    for rec in &images {
        let embeddings =
            embed_all(&model, &rec.image).with_context(|| format!("image {}", rec.id))?;
        rows.push(json!({
            "id": rec.id,
            "k": model.config.clusters,
            "d": model.config.embed_dim,
            "embeddings": embeddings,
        }));
    }
    write_jsonl(&args.out, &rows)
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    if !(1e-7..=1e-3).contains(&args.epsilon) {
        bail!("epsilon must lie in [1e-7, 1e-3], got {}", args.epsilon);
    }
    let model = match &args.model {
        Some(path) => {
            check_input(path)?;
            read_model(path)?
        }
        None => {
            let vocab = Vocabulary::new([
                "no", "acute", "effusion", "edema", "mild", "small", "left", "right",
            ]);
            CcveModel::init(CcveConfig::default(), vocab, args.seed)?
        }
    };
    let batch = random_batch(&model, args.batch_size, args.image_size, args.seed);
    let report = grad_check(&model, &batch, args.epsilon)?;
    println!("{}", serde_json::to_string(&report)?);
    if report.max_relative_error >= args.tolerance {
        bail!(
            "max relative error {:e} at {:?} reaches tolerance {:e}",
            report.max_relative_error,
            report.worst,
            args.tolerance
        );
    }
    Ok(())
}
