//! `medfuse`: the retrieval pipeline as one command per stage.
//!
//! Every stage reads and writes files, and each output gets a
//! `<output>.manifest.json` sidecar naming its inputs and parameters.
//! Exit codes: 0 success, 1 data or domain error, 2 usage error.

mod manifest;
mod sweep;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use medfuse_core::alignment::{
    align_corpus, auto_align, clamped_fraction, compute_alpha, medium_average, AlignmentParams, Alphas,
    DEFAULT_RECALL_LEVEL,
};
use medfuse_core::clustering::{
    parse_model_file, train, write_model_file, MembershipScope, DEFAULT_ETA_FALLBACK, DEFAULT_THETA,
};
use medfuse_core::corpusgen::{generate, GenSpec};
use medfuse_core::evaluation::{default_levels, evaluate};
use medfuse_core::fusion::{fuse_corpus, single_medium_corpus, FusionOperator};
use medfuse_core::ingest::{
    parse_case_file, parse_fused_file, parse_qrels, parse_run, write_atomic, write_case_file, write_fused_file,
    write_qrels_file, write_run_file, RunFile,
};
use medfuse_core::retrieval::{ClusteredIndex, SearchIndex, SearchParams, SimilarityKind};
use medfuse_core::{Error, Medium};

use manifest::RunManifest;

/// Share of clamped weights above which `fuse` warns.
const CLAMP_WARNING: f64 = 0.01;

#[derive(Parser)]
#[command(name = "medfuse", version, about = "Concept-based fusion and retrieval of medical cases")]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, queries and relevance judgments.
    Gen(GenArgs),
    /// Align the two media and fuse each case into one dictionary.
    Fuse(FuseArgs),
    /// Train hyper-boxes over a fused corpus.
    Cluster(ClusterArgs),
    /// Rank fused cases for each fused query and write a TREC run.
    Query(QueryArgs),
    /// Score a run against relevance judgments.
    Eval(EvalArgs),
    /// Run the pipeline over a grid of one parameter.
    Sweep(sweep::SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    cases: usize,
    #[arg(long, default_value_t = 2000)]
    vocab: usize,
    #[arg(long, default_value_t = 20)]
    text_concepts: usize,
    #[arg(long, default_value_t = 8)]
    image_concepts: usize,
    /// Fraction of image concepts also present in the text.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long, default_value_t = 20)]
    n_queries: usize,
    #[arg(long, default_value_t = 10)]
    relevant: usize,
    /// Probability that a relevant case loses a query concept.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long)]
    out_corpus: PathBuf,
    #[arg(long)]
    out_queries: PathBuf,
    #[arg(long)]
    out_qrels: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MediumArg {
    Text,
    Image,
}

impl From<MediumArg> for Medium {
    fn from(m: MediumArg) -> Self {
        match m {
            MediumArg::Text => Medium::Text,
            MediumArg::Image => Medium::Image,
        }
    }
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// max, bounded-sum, min, lukasiewicz, mean or sym-sum.
    #[arg(long, default_value = "bounded-sum")]
    operator: FusionOperator,
    /// Derive the precision ratio from single-medium runs (needs --qrels).
    #[arg(long, requires = "qrels", conflicts_with_all = ["rp_txt", "medium"])]
    auto_align: bool,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long, requires = "rp_img", value_parser = unit_interval, conflicts_with = "medium")]
    rp_txt: Option<f64>,
    #[arg(long, requires = "rp_txt", value_parser = unit_interval)]
    rp_img: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RECALL_LEVEL, value_parser = unit_interval)]
    recall_level: f64,
    /// Similarity of the auto-align feedback runs.
    #[arg(long, default_value = "fsf")]
    similarity: SimilarityKind,
    /// Depth of the auto-align feedback runs.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Export one medium unchanged instead of fusing.
    #[arg(long, value_enum)]
    medium: Option<MediumArg>,
    #[arg(long)]
    out_corpus: PathBuf,
    #[arg(long)]
    out_queries: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    fused: PathBuf,
    /// Expansion budget, in (0, 1].
    #[arg(long, default_value_t = DEFAULT_THETA, value_parser = theta_value)]
    theta: f64,
    /// Sensitivity of boxes too small to derive one.
    #[arg(long, default_value_t = DEFAULT_ETA_FALLBACK, value_parser = positive)]
    eta_fallback: f64,
    #[arg(long)]
    out_model: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    /// Fused corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Fused queries.
    #[arg(long)]
    queries: PathBuf,
    /// cosine, dice, jaccard, vsm or fsf.
    #[arg(long, default_value = "fsf")]
    similarity: SimilarityKind,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Box model; when given only cases in boxes relevant to the query are scored.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dimensions the pruning membership averages over: query or vocabulary.
    #[arg(long, default_value = "query")]
    scope: MembershipScope,
    /// Run tag, the last column of the run file.
    #[arg(long, default_value = "medfuse")]
    tag: String,
    #[arg(long)]
    out_run: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    /// `metric query value` lines, as trec_eval prints them.
    Lines,
    /// Aligned table with a percent column.
    Table,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated recall levels, ascending.
    #[arg(long, value_parser = level_list)]
    levels: Option<Levels>,
    #[arg(long, value_enum, default_value = "lines")]
    format: ReportFormat,
    /// Report file; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Levels(Vec<f64>);

fn unit_interval(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} is outside [0, 1]"))
    }
}

fn theta_value(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if x > 0.0 && x <= 1.0 {
        Ok(x)
    } else {
        Err(format!("theta must lie in (0, 1], got {x}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{x} is not a positive number"))
    }
}

fn level_list(s: &str) -> Result<Levels, String> {
    let levels = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| unit_interval(t.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if levels.is_empty() {
        return Err("no recall levels given".into());
    }
    if levels.windows(2).any(|w| w[0] > w[1]) {
        return Err("recall levels must be ascending".into());
    }
    Ok(Levels(levels))
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: 1, message: e.to_string() }
    }
}

/// Prefixes core errors with the file they came from.
pub trait AtPath<T> {
    fn at(self, path: &Path) -> Result<T, Failure>;
}

impl<T> AtPath<T> for medfuse_core::Result<T> {
    fn at(self, path: &Path) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()) })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => sweep::cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let spec = GenSpec {
        seed: a.seed,
        n_cases: a.cases,
        vocab_size: a.vocab,
        concepts_per_text: a.text_concepts,
        concepts_per_image: a.image_concepts,
        overlap_fraction: a.overlap,
        n_queries: a.n_queries,
        relevant_per_query: a.relevant,
        noise: a.noise,
    };
    let g = generate(&spec)?;
    write_case_file(&a.out_corpus, &g.corpus).at(&a.out_corpus)?;
    write_case_file(&a.out_queries, &g.queries).at(&a.out_queries)?;
    write_qrels_file(&a.out_qrels, &g.qrels).at(&a.out_qrels)?;
    let mut m = RunManifest::new("gen");
    m.seed = Some(spec.seed);
    m.generator = Some(spec);
    let digest = m.write_for(&a.out_corpus)?;
    m.write_for(&a.out_queries)?;
    m.write_for(&a.out_qrels)?;
    println!("cases {} queries {} judgments {}", g.corpus.len(), g.queries.len(), g.qrels.len());
    println!("manifest {digest}");
    Ok(())
}

/// Alignment weights chosen by the fuse flags, with their parameters.
fn choose_alphas(
    a: &FuseArgs,
    corpus: &medfuse_core::ingest::Corpus,
    queries: &medfuse_core::ingest::Corpus,
    m: &mut RunManifest,
) -> Result<(Alphas, Option<AlignmentParams>), Failure> {
    if a.auto_align {
        let path = a.qrels.as_deref().expect("clap requires --qrels");
        let qrels = parse_qrels(path).at(path)?;
        m.add_input("qrels", path).at(path)?;
        let (p, alphas) = auto_align(corpus, queries, &qrels, a.recall_level, a.similarity, a.k as usize)?;
        info!("feedback precision: text {:.6}, image {:.6}", p.rp_txt, p.rp_img);
        return Ok((alphas, Some(p)));
    }
    if let (Some(rp_txt), Some(rp_img)) = (a.rp_txt, a.rp_img) {
        let p = AlignmentParams {
            avg_txt: medium_average(corpus, Medium::Text)?,
            avg_img: medium_average(corpus, Medium::Image)?,
            rp_txt,
            rp_img,
            recall_level: a.recall_level,
        };
        return Ok((compute_alpha(&p)?, Some(p)));
    }
    Ok((Alphas::IDENTITY, None))
}

fn cmd_fuse(a: FuseArgs) -> Result<(), Failure> {
    let corpus = parse_case_file(&a.corpus).at(&a.corpus)?;
    let queries = parse_case_file(&a.queries).at(&a.queries)?;
    let mut m = RunManifest::new("fuse");
    m.add_input("corpus", &a.corpus).at(&a.corpus)?;
    m.add_input("queries", &a.queries).at(&a.queries)?;
    let (fused_corpus, fused_queries) = if let Some(medium) = a.medium {
        let medium = Medium::from(medium);
        m.medium = Some(medium);
        (single_medium_corpus(&corpus, medium)?, single_medium_corpus(&queries, medium)?)
    } else {
        let (alphas, params) = choose_alphas(&a, &corpus, &queries, &mut m)?;
        let clamped = clamped_fraction(&corpus, alphas);
        if clamped > CLAMP_WARNING {
            warn!("alignment clamps {:.2}% of the weights to 1", 100.0 * clamped);
        }
        println!("alpha_txt {:.6} alpha_img {:.6}", alphas.alpha_txt, alphas.alpha_img);
        let op = a.operator;
        m.operator = Some(op.formula().to_owned());
        m.operator_name = Some(op.name().to_owned());
        m.alphas = Some(alphas);
        if let Some(p) = params {
            m.recall_level = Some(p.recall_level);
            m.alignment = Some(p);
        }
        if a.auto_align {
            m.similarity = Some(a.similarity.name().to_owned());
            m.k = Some(a.k as usize);
        }
        (fuse_corpus(&align_corpus(&corpus, alphas)?, op)?, fuse_corpus(&align_corpus(&queries, alphas)?, op)?)
    };
    write_fused_file(&a.out_corpus, &fused_corpus).at(&a.out_corpus)?;
    write_fused_file(&a.out_queries, &fused_queries).at(&a.out_queries)?;
    let digest = m.write_for(&a.out_corpus)?;
    m.write_for(&a.out_queries)?;
    println!("manifest {digest}");
    Ok(())
}

fn cmd_cluster(a: ClusterArgs) -> Result<(), Failure> {
    let fused = parse_fused_file(&a.fused).at(&a.fused)?;
    let mut m = RunManifest::new("cluster");
    m.add_input("fused", &a.fused).at(&a.fused)?;
    m.theta = Some(a.theta);
    m.eta_fallback = Some(a.eta_fallback);
    let mut model = train(&fused, a.theta, a.eta_fallback).at(&a.fused)?;
    let digest = m.digest();
    model.manifest = Some(digest.clone());
    write_model_file(&a.out_model, &model).at(&a.out_model)?;
    m.write_for(&a.out_model)?;
    println!("boxes {}", model.boxes.len());
    println!("manifest {digest}");
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Result<(), Failure> {
    let corpus = parse_fused_file(&a.corpus).at(&a.corpus)?;
    let queries = parse_fused_file(&a.queries).at(&a.queries)?;
    let mut m = RunManifest::new("query");
    m.similarity = Some(a.similarity.name().to_owned());
    m.k = Some(a.k as usize);
    m.tag = Some(a.tag.clone());
    m.add_input("corpus", &a.corpus).at(&a.corpus)?;
    m.add_input("queries", &a.queries).at(&a.queries)?;
    let index = SearchIndex::new(&corpus);
    let params = SearchParams::new(a.k as usize, a.similarity);
    let lists = match &a.model {
        Some(path) => {
            let model = parse_model_file(path).at(path)?;
            m.add_input("model", path).at(path)?;
            m.theta = Some(model.theta);
            m.scope = Some(a.scope);
            let clustered = ClusteredIndex::new(&model, &index, a.scope).at(path)?;
            let results: Vec<_> = queries.iter().map(|q| clustered.search(q, params)).collect();
            let scored: usize = results.iter().map(|r| r.candidates).sum();
            info!("scored {:.1} of {} cases per query", scored as f64 / results.len().max(1) as f64, index.len());
            results.into_iter().map(|r| r.ranked).collect::<Vec<_>>()
        }
        None => queries.iter().map(|q| index.search(q, params)).collect(),
    };
    let run = RunFile::from_ranked(&lists, &a.tag);
    write_run_file(&a.out_run, &run).at(&a.out_run)?;
    let digest = m.write_for(&a.out_run)?;
    println!("queries {} rows {}", lists.len(), run.rows.len());
    println!("manifest {digest}");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let run = parse_run(&a.run).at(&a.run)?;
    let qrels = parse_qrels(&a.qrels).at(&a.qrels)?;
    let levels = a.levels.map_or_else(default_levels, |l| l.0);
    let mut m = RunManifest::new("eval");
    m.add_input("run", &a.run).at(&a.run)?;
    m.add_input("qrels", &a.qrels).at(&a.qrels)?;
    m.levels = Some(levels.clone());
    let report = evaluate(&run.to_ranked(), &qrels, &levels)?;
    let digest = m.digest();
    let text = match a.format {
        ReportFormat::Lines => report.to_lines(Some(&digest)),
        ReportFormat::Table => report.to_table(Some(&digest)),
    };
    match &a.out {
        Some(out) => {
            write_atomic(out, |buf| {
                buf.extend_from_slice(text.as_bytes());
                Ok(())
            })
            .at(out)?;
            m.write_for(out)?;
            println!("map {:.6}", report.map);
        }
        None => print!("{text}"),
    }
    Ok(())
}
