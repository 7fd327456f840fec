//! One function per subcommand. Every command writes a reproducibility
//! manifest next to (or inside) its output.

use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use causatext_core::corpus::{self, DataFormat, Document};
use causatext_core::explain::{
    ig_explain, lime_explain, top_keywords, AttributionTarget, ExplainMethod, IgBaseline,
    IgConfig, LimeConfig,
};
use causatext_core::model::{load_model, save_model, ArchKind, Architecture, Model, TrainConfig};
use causatext_core::report::{
    class_table, consistency_analysis, oriented_sims, read_scores_csv, render_report,
    write_scores_csv, ClassReport, ConsistencyResult, RunManifest, ScoreRecord,
};
use causatext_core::rng::derive_seed;
use causatext_core::similarity::{explanation_similarity, Measure, ScoreFlags, SimilarityConfig};
use causatext_core::{EmbeddingTable, Error, MetricsReport, Result, NUM_CLASSES};

use crate::records::ExplanationRecord;

/// `metrics.json` shape: the classifier label plus the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub classifier: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

fn read_jsonl_docs(path: &Path) -> Result<Vec<Document>> {
    corpus::load_dataset(path, DataFormat::Jsonl)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json.as_bytes()).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PrepareArgs {
    /// Labeled dataset (CSV or JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Input format: csv or jsonl.
    #[arg(long, default_value = "csv")]
    pub format: String,
    /// Training-set size.
    #[arg(long)]
    pub train: usize,
    /// Validation-set size.
    #[arg(long)]
    pub val: usize,
    /// Test-set size.
    #[arg(long)]
    pub test: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output directory for train/validation/test JSONL files.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let format: DataFormat = args.format.parse()?;
    let docs = corpus::load_dataset(&args.data, format)?;
    let split = corpus::split(&docs, (args.train, args.val, args.test), args.seed)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let paths = [
        (args.out.join("train.jsonl"), &split.train),
        (args.out.join("validation.jsonl"), &split.validation),
        (args.out.join("test.jsonl"), &split.test),
    ];
    for (path, docs) in &paths {
        corpus::save_jsonl(docs, path)?;
    }

    let mut manifest = RunManifest::new("prepare", args.seed);
    manifest.set_output_base(&args.out);
    manifest
        .arg("data", args.data.display())
        .arg("format", &args.format)
        .arg("train", args.train)
        .arg("val", args.val)
        .arg("test", args.test)
        .arg("out", args.out.display());
    manifest.input(&args.data)?;
    for (path, _) in &paths {
        manifest.output(path)?;
    }
    manifest.write(&args.out.join("manifest.json"))?;
    println!(
        "prepared {} train / {} validation / {} test documents -> {}",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Architecture: mean_mlp, cnn, lstm, bilstm, cnn_lstm.
    #[arg(long)]
    pub arch: String,
    /// Prepared data directory (from `prepare`).
    #[arg(long)]
    pub data: PathBuf,
    /// Pretrained word-vector text file.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Embedding dimension.
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long = "batch-size", default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long = "max-len", default_value_t = 265)]
    pub max_len: usize,
    /// Learning rate; defaults to 5e-4 for cnn_lstm, 1.46e-3 otherwise.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    /// Unfreeze the embedding layer.
    #[arg(long = "trainable-embeddings", default_value_t = false)]
    pub trainable_embeddings: bool,
    #[arg(long)]
    pub seed: u64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let kind: ArchKind = args.arch.parse()?;
    let table: EmbeddingTable = EmbeddingTable::load(&args.embeddings, args.dim)?;
    for w in table.warnings() {
        eprintln!("warning: {w}");
    }

    let mut arch = Architecture::new(kind);
    arch.dropout = args.dropout;
    arch.trainable_embeddings = args.trainable_embeddings;
    let mut model = Model::new(arch, &table, args.max_len, args.seed)?;

    let train_docs = read_jsonl_docs(&args.data.join("train.jsonl"))?;
    let val_path = args.data.join("validation.jsonl");
    let val_docs = if val_path.exists() {
        read_jsonl_docs(&val_path)?
    } else {
        Vec::new()
    };

    let mut cfg = TrainConfig::for_arch(kind, derive_seed(args.seed, "train"));
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch_size;
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    let history = model.train(&train_docs, &val_docs, &cfg)?;
    for e in &history {
        match e.val_accuracy {
            Some(acc) => println!(
                "epoch {:>3}: train loss {:.6}, val accuracy {:.4}",
                e.epoch, e.train_loss, acc
            ),
            None => println!("epoch {:>3}: train loss {:.6}", e.epoch, e.train_loss),
        }
    }

    save_model(&model, &args.out)?;
    let history_path = history_path_for(&args.out);
    write_json(&history, &history_path)?;

    let mut manifest = RunManifest::new("train", args.seed);
    if let Some(parent) = args.out.parent() {
        manifest.set_output_base(parent);
    }
    manifest
        .arg("arch", &args.arch)
        .arg("data", args.data.display())
        .arg("embeddings", args.embeddings.display())
        .arg("dim", args.dim)
        .arg("epochs", args.epochs)
        .arg("batch_size", args.batch_size)
        .arg("max_len", args.max_len)
        .arg("lr", cfg.learning_rate)
        .arg("dropout", args.dropout)
        .arg("trainable_embeddings", args.trainable_embeddings)
        .arg("out", args.out.display());
    manifest.derived_seed("train", cfg.seed);
    manifest.input(&args.embeddings)?;
    manifest.input(&args.data.join("train.jsonl"))?;
    if val_path.exists() {
        manifest.input(&val_path)?;
    }
    manifest.output(&args.out)?;
    manifest.output(&history_path)?;
    manifest.write(&manifest_path_for(&args.out))?;
    println!("model written to {}", args.out.display());
    Ok(())
}

fn history_path_for(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_owned();
    s.push(".history.json");
    PathBuf::from(s)
}

fn manifest_path_for(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Prepared data directory; evaluation runs on test.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let model: Model = load_model(&args.model)?;
    let test_docs = read_jsonl_docs(&args.data.join("test.jsonl"))?;
    let metrics = model.evaluate(&test_docs)?;
    let record = MetricsRecord {
        classifier: model.arch().kind.label().to_owned(),
        metrics,
    };
    write_json(&record, &args.out)?;

    println!("classifier: {}", record.classifier);
    println!("accuracy:   {:.4}", record.metrics.accuracy);
    for c in 0..NUM_CLASSES {
        println!(
            "f1 class {c}: {:.4} (support {})",
            record.metrics.per_class_f1[c], record.metrics.support[c]
        );
    }

    let mut manifest = RunManifest::new("evaluate", model.seed());
    if let Some(parent) = args.out.parent() {
        manifest.set_output_base(parent);
    }
    manifest
        .arg("model", args.model.display())
        .arg("data", args.data.display())
        .arg("out", args.out.display());
    manifest.input(&args.model)?;
    manifest.input(&args.data.join("test.jsonl"))?;
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Prepared data directory; explanations run on test.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// lime or ig.
    #[arg(long)]
    pub method: String,
    /// LIME perturbation samples.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Integrated-gradient path steps.
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Keywords to project per document.
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    /// LIME kernel width over mask cosine distance.
    #[arg(long = "kernel-width", default_value_t = 25.0)]
    pub kernel_width: f64,
    /// LIME ridge penalty.
    #[arg(long = "ridge-lambda", default_value_t = 1.0)]
    pub ridge_lambda: f64,
    /// Attribution target: predicted or gold.
    #[arg(long, default_value = "predicted")]
    pub target: String,
    /// IG baseline: zero_embedding or pad_token.
    #[arg(long, default_value = "zero_embedding")]
    pub baseline: String,
    #[arg(long)]
    pub seed: u64,
    /// Explanations JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_target(s: &str) -> Result<AttributionTarget> {
    match s {
        "predicted" => Ok(AttributionTarget::Predicted),
        "gold" => Ok(AttributionTarget::Gold),
        other => Err(Error::schema(format!("unknown attribution target {other:?}"))),
    }
}

fn parse_baseline(s: &str) -> Result<IgBaseline> {
    match s {
        "zero_embedding" => Ok(IgBaseline::ZeroEmbedding),
        "pad_token" => Ok(IgBaseline::PadToken),
        other => Err(Error::schema(format!("unknown ig baseline {other:?}"))),
    }
}

/// Explain every non-empty test document with one method. Documents run in
/// parallel; output keeps input order.
pub fn explain_docs(
    model: &Model,
    docs: &[Document],
    method: ExplainMethod,
    args: &ExplainArgs,
) -> Result<Vec<ExplanationRecord>> {
    let target = parse_target(&args.target)?;
    let arch_label = model.arch().kind.label().to_owned();
    let lime_cfg = LimeConfig {
        n_samples: args.samples,
        kernel_width: args.kernel_width,
        ridge_lambda: args.ridge_lambda,
        seed: args.seed,
        target,
    };
    let ig_cfg = IgConfig {
        steps: args.steps,
        baseline: parse_baseline(&args.baseline)?,
        target,
    };

    let results: Vec<Result<Option<ExplanationRecord>>> = docs
        .par_iter()
        .map(|doc| {
            if doc.tokens.is_empty() {
                return Ok(None);
            }
            let explanation = match method {
                ExplainMethod::Lime => {
                    lime_explain(|tokens| Ok(model.predict_tokens(tokens)), doc, &lime_cfg)?
                }
                ExplainMethod::Ig => ig_explain(model, doc, &ig_cfg, None)?,
            };
            let keywords = top_keywords(&explanation, args.topk);
            Ok(Some(ExplanationRecord {
                arch: arch_label.clone(),
                keywords,
                explanation,
            }))
        })
        .collect();

    let mut records = Vec::with_capacity(docs.len());
    let mut skipped = 0usize;
    for r in results {
        match r? {
            Some(rec) => records.push(rec),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} empty documents");
    }
    Ok(records)
}

pub fn write_explanations(records: &[ExplanationRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_explanations(path: &Path) -> Result<Vec<ExplanationRecord>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExplanationRecord = serde_json::from_str(line)
            .map_err(|e| Error::schema_at(i + 1, format!("bad explanation line: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn explain(args: &ExplainArgs) -> Result<()> {
    let method: ExplainMethod = args.method.parse()?;
    let model: Model = load_model(&args.model)?;
    let docs = read_jsonl_docs(&args.data.join("test.jsonl"))?;
    let records = explain_docs(&model, &docs, method, args)?;
    write_explanations(&records, &args.out)?;

    let mut manifest = RunManifest::new("explain", args.seed);
    if let Some(parent) = args.out.parent() {
        manifest.set_output_base(parent);
    }
    manifest
        .arg("model", args.model.display())
        .arg("data", args.data.display())
        .arg("method", &args.method)
        .arg("samples", args.samples)
        .arg("steps", args.steps)
        .arg("topk", args.topk)
        .arg("kernel_width", args.kernel_width)
        .arg("ridge_lambda", args.ridge_lambda)
        .arg("target", &args.target)
        .arg("baseline", &args.baseline)
        .arg("out", args.out.display());
    manifest.input(&args.model)?;
    manifest.input(&args.data.join("test.jsonl"))?;
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    println!(
        "wrote {} explanations to {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// similarity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimilarityArgs {
    /// Explanations JSONL from `explain`.
    #[arg(long)]
    pub explanations: PathBuf,
    /// Prepared data directory holding test.jsonl with the rationales.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// cosine or wmd.
    #[arg(long)]
    pub measure: String,
    /// exact or sinkhorn (wmd only).
    #[arg(long, default_value = "exact")]
    pub solver: String,
    /// Ground cost: sq-euclidean (default) or euclidean.
    #[arg(long, default_value = "sq-euclidean")]
    pub cost: String,
    /// Keep stop words instead of removing them.
    #[arg(long = "keep-stopwords", default_value_t = false)]
    pub keep_stopwords: bool,
    /// Sinkhorn regularization as a fraction of the mean ground cost.
    #[arg(long = "epsilon-ratio", default_value_t = 0.01)]
    pub epsilon_ratio: f64,
    #[arg(long = "max-iter", default_value_t = 100_000)]
    pub max_iter: usize,
    /// Scores CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn score_explanations(
    records: &[ExplanationRecord],
    docs: &[Document],
    table: &EmbeddingTable,
    cfg: &SimilarityConfig,
) -> Result<Vec<ScoreRecord>> {
    let by_id: std::collections::HashMap<&str, &Document> =
        docs.iter().map(|d| (d.id.as_str(), d)).collect();

    let scored: Vec<Result<ScoreRecord>> = records
        .par_iter()
        .map(|rec| {
            let doc = by_id.get(rec.explanation.doc_id.as_str()).ok_or_else(|| {
                Error::schema(format!(
                    "explanation for unknown document {:?}",
                    rec.explanation.doc_id
                ))
            })?;
            let method = format!("{}+{}", rec.arch, rec.explanation.method.label());
            let (score, flags) = match &doc.inference {
                None => (
                    0.0,
                    ScoreFlags {
                        no_inference: true,
                        ..Default::default()
                    },
                ),
                Some(inference) => {
                    let outcome =
                        explanation_similarity(&rec.keywords, inference, table, cfg)?;
                    (outcome.value, outcome.flags)
                }
            };
            Ok(ScoreRecord {
                doc_id: doc.id.clone(),
                class: doc.label.value(),
                method,
                measure: cfg.measure,
                score,
                flags,
            })
        })
        .collect();
    scored.into_iter().collect()
}

pub fn similarity(args: &SimilarityArgs) -> Result<()> {
    let measure: Measure = args.measure.parse()?;
    let mut cfg = SimilarityConfig::new(measure);
    cfg.solver = args.solver.parse()?;
    cfg.ground_cost = args.cost.parse()?;
    cfg.remove_stopwords = !args.keep_stopwords;
    cfg.sinkhorn_epsilon_ratio = args.epsilon_ratio;
    cfg.sinkhorn_max_iter = args.max_iter;

    let records = read_explanations(&args.explanations)?;
    let docs = read_jsonl_docs(&args.data.join("test.jsonl"))?;
    let table: EmbeddingTable = EmbeddingTable::load(&args.embeddings, args.dim)?;
    let scored = score_explanations(&records, &docs, &table, &cfg)?;
    write_scores_csv(&scored, &args.out)?;

    let mut manifest = RunManifest::new("similarity", 0);
    if let Some(parent) = args.out.parent() {
        manifest.set_output_base(parent);
    }
    manifest
        .arg("explanations", args.explanations.display())
        .arg("data", args.data.display())
        .arg("embeddings", args.embeddings.display())
        .arg("dim", args.dim)
        .arg("measure", &args.measure)
        .arg("solver", &args.solver)
        .arg("cost", &args.cost)
        .arg("keep_stopwords", args.keep_stopwords)
        .arg("out", args.out.display());
    manifest.input(&args.explanations)?;
    manifest.input(&args.data.join("test.jsonl"))?;
    manifest.input(&args.embeddings)?;
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    println!("wrote {} scores to {}", scored.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Score CSV files (repeatable).
    #[arg(long = "scores", required = true)]
    pub scores: Vec<PathBuf>,
    /// Metrics JSON files from `evaluate` (repeatable).
    #[arg(long = "metrics")]
    pub metrics: Vec<PathBuf>,
    /// Report output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Group score records into class tables (one per method+measure pair, in
/// first-appearance order) and correlate each against its classifier's F1.
pub fn build_tables(
    records: &[ScoreRecord],
    metrics: &[MetricsRecord],
) -> Result<(Vec<ClassReport>, Vec<ConsistencyResult>)> {
    let mut pairs: Vec<(String, Measure)> = Vec::new();
    for r in records {
        let key = (r.method.clone(), r.measure);
        if !pairs.contains(&key) {
            pairs.push(key);
        }
    }
    let mut reports = Vec::new();
    let mut consistency = Vec::new();
    for (method, measure) in pairs {
        let table = class_table(records, &method, measure)?;
        // "CNN+LIME" -> classifier "CNN".
        let classifier = method.split('+').next().unwrap_or(&method);
        if let Some(m) = metrics.iter().find(|m| m.classifier == classifier) {
            if let Some(means) = all_present(&table.per_class_means) {
                match consistency_analysis(
                    &method,
                    measure,
                    m.metrics.per_class_f1,
                    oriented_sims(measure, means),
                ) {
                    Ok(c) => consistency.push(c),
                    Err(e) => eprintln!("note: skipping consistency for {method}: {e}"),
                }
            }
        }
        reports.push(table);
    }
    Ok((reports, consistency))
}

fn all_present(means: &[Option<f64>; NUM_CLASSES]) -> Option<[f64; NUM_CLASSES]> {
    let mut out = [0.0; NUM_CLASSES];
    for (i, m) in means.iter().enumerate() {
        out[i] = (*m)?;
    }
    Some(out)
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.scores {
        records.extend(read_scores_csv(path)?);
    }
    let mut metrics = Vec::new();
    for path in &args.metrics {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        metrics.push(serde_json::from_str::<MetricsRecord>(&raw)?);
    }

    let (reports, consistency) = build_tables(&records, &metrics)?;
    let labeled: Vec<(String, MetricsReport)> = metrics
        .iter()
        .map(|m| (m.classifier.clone(), m.metrics.clone()))
        .collect();
    let rendered = render_report(&reports, &consistency, &labeled, &args.out)?;

    let consistency_path = args.out.join("consistency.json");
    write_json(&consistency, &consistency_path)?;

    let mut manifest = RunManifest::new("report", 0);
    manifest.set_output_base(&args.out);
    for p in &args.scores {
        manifest.input(p)?;
    }
    for p in &args.metrics {
        manifest.input(p)?;
    }
    manifest.arg("out", args.out.display());
    for p in rendered
        .table_paths
        .iter()
        .chain(rendered.f1_path.iter())
        .chain([&rendered.summary_path, &consistency_path])
    {
        manifest.output(p)?;
    }
    manifest.write(&args.out.join("manifest.json"))?;
    println!("report written to {}", args.out.display());
    Ok(())
}
