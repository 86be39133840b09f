//! `condemb`: staged pipeline for condition-specific word embeddings.
//!
//! Each subcommand reads the previous stage's files and writes its own, so
//! co-occurrence counts can be reused across training runs.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use condemb::cooc::{scale_counts_labeled, DEFAULT_WINDOW};
use condemb::eval::{evaluate, format_table, EvalOptions, EvalSet, OovPolicy, DEFAULT_KS};
use condemb::model::{read_text_embeddings, write_text_export, Representation};
use condemb::query::{NeighborOptions, QueryIndex};
use condemb::synth::{generate, DriftSpec};
use condemb::trainer::{train_with_progress, DeviationRegularization, TrainConfigFile};
use condemb::{
    build_vocabulary, count_cooccurrences, read_condition_corpus, ConditionManifest, CoocTensor,
    Error, SavedModel, Topology, Vocabulary,
};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "condemb", version, about = "Condition-specific word embeddings", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count tokens per condition and write the thresholded vocabulary TSV.
    Vocab(VocabArgs),
    /// Count windowed co-occurrences into per-condition binary shards.
    Cooc(CoocArgs),
    /// Train embeddings from co-occurrence shards.
    Train(TrainArgs),
    /// Neighbor, stability and trajectory queries on a trained model.
    Query(QueryArgs),
    /// Score a model or an external embedding file on an equivalence set.
    Eval(EvalArgs),
    /// Write centered embeddings in the text interop format.
    Export(ExportArgs),
    /// Generate a synthetic corpus with a planted drifting word.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus root holding `<condition>.txt` or `<condition>/*.txt`.
    #[arg(long)]
    corpus: PathBuf,
    /// Condition manifest [default: <corpus>/manifest.json].
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self) -> Result<(ConditionManifest, Vec<Vec<String>>)> {
        let path = self
            .manifest
            .clone()
            .unwrap_or_else(|| self.corpus.join("manifest.json"));
        let manifest = ConditionManifest::load(&path)?;
        let streams = read_condition_corpus(&self.corpus, &manifest)?;
        Ok((manifest, streams))
    }
}

#[derive(Args)]
struct VocabArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Minimum total count for a word to be kept.
    #[arg(long)]
    min_count: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CoocArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    vocab: PathBuf,
    /// Context radius on each side.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Output directory for shards plus copies of the vocabulary and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Also write the raw counts as `i<TAB>j<TAB>c<TAB>x`.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DevReg {
    Full,
    PerTouch,
}

#[derive(Args)]
struct TrainArgs {
    /// Shard directory (or a single shard file) from `cooc`.
    #[arg(long)]
    cooc: PathBuf,
    /// [default: <cooc>/vocab.tsv]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// [default: <cooc>/manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// JSON training config; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "lr")]
    initial_lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// 1 = deterministic; more = lock-free parallel, non-reproducible.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = parse_topology)]
    topology: Option<Topology>,
    #[arg(long, value_enum)]
    deviation_reg: Option<DevReg>,
    #[arg(long)]
    out: PathBuf,
    /// Also append `epoch<TAB>loss<TAB>seconds` lines to this file.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn parse_topology(s: &str) -> std::result::Result<Topology, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    /// Query with word-side plus context-side vectors.
    #[arg(long)]
    with_context: bool,
}

impl ModelArgs {
    fn representation(&self) -> Representation {
        if self.with_context {
            Representation::WordPlusContext
        } else {
            Representation::WordSide
        }
    }

    fn index(&self) -> Result<QueryIndex<f64>> {
        let model = SavedModel::<f64>::load(&self.model)?;
        QueryIndex::from_model(&model, self.representation())
    }
}

#[derive(Args)]
struct QueryArgs {
    #[command(subcommand)]
    query: Query,
}

#[derive(Subcommand)]
enum Query {
    /// Nearest neighbors of a word's embedding in another condition.
    Nn {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        word: String,
        #[arg(long)]
        src: String,
        #[arg(long)]
        tgt: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Drop the query word from the candidates.
        #[arg(long)]
        exclude_self: bool,
    },
    /// Words ranked by mean cross-condition cosine.
    Stable {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 50)]
        top: usize,
    },
    /// Per-condition vectors of a word and its neighbors, for plotting.
    Traj {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        word: String,
        #[arg(long, default_value_t = 8)]
        neighbors: usize,
        /// Comma-separated condition ids [default: all].
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<String>>,
        /// JSON output; TSV on stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(
        long,
        conflicts_with = "embeddings",
        required_unless_present = "embeddings"
    )]
    model: Option<PathBuf>,
    /// Text embeddings `word<TAB>condition<TAB>x1 ... xm`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Mean-center external embeddings per condition before scoring.
    #[arg(long, requires = "embeddings")]
    center: bool,
    #[arg(long)]
    with_context: bool,
    #[arg(long)]
    set: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    ks: Vec<usize>,
    #[arg(long, default_value = "skip", value_parser = parse_oov)]
    oov: OovPolicy,
    #[arg(long)]
    exclude_self: bool,
    /// Row label for the report [default: eval set file stem].
    #[arg(long)]
    name: Option<String>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_oov(s: &str) -> std::result::Result<OovPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn run_vocab(args: VocabArgs) -> Result<()> {
    let (_, streams) = args.corpus.load()?;
    let vocab = build_vocabulary(&streams, args.min_count)?;
    log::info!(
        "kept {} words with count >= {}",
        vocab.len(),
        args.min_count
    );
    let mut w = create(&args.out)?;
    vocab.write_tsv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run_cooc(args: CoocArgs) -> Result<()> {
    let (manifest, streams) = args.corpus.load()?;
    let vocab = Vocabulary::load(&args.vocab)?;
    if vocab.n_conditions() != manifest.len() {
        return Err(Error::Format(format!(
            "vocabulary has {} condition columns, manifest has {} conditions",
            vocab.n_conditions(),
            manifest.len()
        )));
    }
    let raw = count_cooccurrences(&streams, &vocab, args.window)?;
    log::info!("{} nonzero co-occurrence cells", raw.nnz());
    raw.save_shards(&args.out)?;
    vocab.save(&args.out.join("vocab.tsv"))?;
    manifest.save(&args.out.join("manifest.json"))?;
    if let Some(tsv) = &args.tsv {
        let mut w = create(tsv)?;
        raw.write_tsv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let shard_dir = if args.cooc.is_dir() {
        args.cooc.clone()
    } else {
        args.cooc
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    };
    let vocab = Vocabulary::load(
        &args
            .vocab
            .clone()
            .unwrap_or_else(|| shard_dir.join("vocab.tsv")),
    )?;
    let manifest = ConditionManifest::load(
        &args
            .manifest
            .clone()
            .unwrap_or_else(|| shard_dir.join("manifest.json")),
    )?;

    let mut file = match &args.config {
        Some(p) => TrainConfigFile::load(p)?,
        None => TrainConfigFile::default(),
    };
    macro_rules! overlay {
        ($($field:ident),*) => { $( if args.$field.is_some() { file.$field = args.$field; } )* };
    }
    overlay!(dim, alpha, beta, epochs, initial_lr, seed, workers);
    if args.topology.is_some() {
        file.topology_override = args.topology;
    }
    if let Some(d) = args.deviation_reg {
        file.deviation_reg = Some(match d {
            DevReg::Full => DeviationRegularization::Full,
            DevReg::PerTouch => DeviationRegularization::PerTouch,
        });
    }
    let (topology, config) = file.resolve(manifest.topology)?;

    let raw = CoocTensor::load(&args.cooc)?;
    if raw.n_words() != vocab.len() || raw.n_conditions() != manifest.len() {
        return Err(Error::Format(format!(
            "shards (|W|={}, C={}) do not match vocabulary ({}) and manifest ({})",
            raw.n_words(),
            raw.n_conditions(),
            vocab.len(),
            manifest.len()
        )));
    }
    let tensor = scale_counts_labeled(&raw, &manifest.conditions)?;
    log::info!(
        "training |W|={} C={} m={} nnz={} alpha={} beta={} epochs={} topology={:?}",
        vocab.len(),
        manifest.len(),
        config.dim,
        tensor.nnz(),
        config.alpha,
        config.beta,
        config.epochs,
        topology
    );

    let mut log_file = args.log.as_deref().map(create).transpose()?;
    let mut log_err = None;
    let outcome = train_with_progress::<f64>(&tensor, topology, &config, |s| {
        let line = format!("{}\t{}\t{:.3}", s.epoch, s.loss, s.seconds);
        eprintln!("{line}");
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let manifest = ConditionManifest {
        topology,
        ..manifest
    };
    SavedModel::new(outcome.params, vocab, manifest)?.save(&args.out)
}

fn run_query(args: QueryArgs) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match args.query {
        Query::Nn {
            model,
            word,
            src,
            tgt,
            k,
            exclude_self,
        } => {
            let index = model.index()?;
            let opts = NeighborOptions {
                include_self: !exclude_self,
            };
            let r = index.nearest_neighbors(&word, &src, &tgt, k, opts)?;
            for (rank, n) in r.neighbors.iter().enumerate() {
                writeln!(out, "{}\t{}\t{:.6}", rank + 1, n.word, n.score)?;
            }
        }
        Query::Stable { model, top } => {
            let ranking = model.index()?.stability_ranking(top)?;
            for (rank, (word, score)) in ranking.entries.iter().enumerate() {
                writeln!(out, "{}\t{word}\t{score:.6}", rank + 1)?;
            }
            if !ranking.skipped.is_empty() {
                log::warn!(
                    "skipped {} zero-norm words: {}",
                    ranking.skipped.len(),
                    ranking.skipped.join(" ")
                );
            }
        }
        Query::Traj {
            model,
            word,
            neighbors,
            conditions,
            out: path,
        } => {
            let t = model
                .index()?
                .trajectory(&word, conditions.as_deref(), neighbors)?;
            match path {
                Some(p) => {
                    let mut w = create(&p)?;
                    serde_json::to_writer_pretty(&mut w, &t)?;
                    w.write_all(b"\n")?;
                    w.flush()?;
                }
                None => {
                    let fmt = |v: &[f64]| {
                        v.iter()
                            .map(|x| x.to_string())
                            .collect::<Vec<_>>()
                            .join(" ")
                    };
                    for s in &t.steps {
                        writeln!(out, "{}\t{}\t1\t{}", s.condition, t.word, fmt(&s.vector))?;
                        for n in &s.neighbors {
                            writeln!(
                                out,
                                "{}\t{}\t{:.6}\t{}",
                                s.condition,
                                n.word,
                                n.score,
                                fmt(&n.vector)
                            )?;
                        }
                    }
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let repr = if args.with_context {
        Representation::WordPlusContext
    } else {
        Representation::WordSide
    };
    let index = match (&args.model, &args.embeddings) {
        (Some(m), _) => QueryIndex::from_model(&SavedModel::<f64>::load(m)?, repr)?,
        (None, Some(e)) => QueryIndex::from_text(read_text_embeddings(e)?, args.center)?,
        (None, None) => unreachable!("clap requires one of --model/--embeddings"),
    };
    let set = EvalSet::load(&args.set)?;
    let opts = EvalOptions {
        neighbors: NeighborOptions {
            include_self: !args.exclude_self,
        },
        oov: args.oov,
    };
    let mut report = evaluate(&index, &set, &args.ks, opts)?;
    if let Some(name) = args.name {
        report.name = name;
    }
    if report.n_skipped > 0 {
        log::warn!("skipped {} out-of-vocabulary records", report.n_skipped);
    }
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(p) = &args.out {
        let mut w = create(p)?;
        w.write_all(json.as_bytes())?;
        w.flush()?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match args.format {
        ReportFormat::Json => out.write_all(json.as_bytes())?,
        ReportFormat::Table => out.write_all(format_table(&[report]).as_bytes())?,
    }
    out.flush()?;
    Ok(())
}

fn run_export(args: ExportArgs) -> Result<()> {
    let model = SavedModel::<f64>::load(&args.model.model)?;
    let mut w = create(&args.out)?;
    write_text_export(&model, args.model.representation(), &mut w)?;
    w.flush()?;
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let spec: DriftSpec = serde_json::from_str(&fs::read_to_string(&args.spec)?)?;
    generate(&spec)?.write(&args.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONDEMB_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Vocab(a) => run_vocab(a),
        Command::Cooc(a) => run_cooc(a),
        Command::Train(a) => run_train(a),
        Command::Query(a) => run_query(a),
        Command::Eval(a) => run_eval(a),
        Command::Export(a) => run_export(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("error\t{}\t{msg}", e.kind());
            ExitCode::from(1)
        }
    }
}
