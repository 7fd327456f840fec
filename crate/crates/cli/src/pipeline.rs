//! End-to-end run: prepare, train every requested architecture, evaluate,
//! explain with every requested method, score against the rationales with
//! every requested measure, and render the report tables — all from one
//! global seed that fans out to per-stage derived seeds.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use causatext_core::corpus::{self, DataFormat};
use causatext_core::explain::ExplainMethod;
use causatext_core::model::{save_model, ArchKind, Architecture, Model, TrainConfig};
use causatext_core::report::{render_report, write_scores_csv, RunManifest, ScoreRecord};
use causatext_core::rng::derive_seed;
use causatext_core::similarity::{Measure, SimilarityConfig};
use causatext_core::{EmbeddingTable, Error, Result};

use crate::commands::{
    build_tables, explain_docs, score_explanations, write_explanations, ExplainArgs,
    MetricsRecord,
};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PipelineArgs {
    /// Labeled dataset (CSV or JSONL).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Comma-separated architectures, or "all" for the four report rows
    /// (lstm, bilstm, cnn, cnn_lstm).
    #[arg(long, default_value = "all")]
    pub arch: String,
    /// lime, ig, or "all".
    #[arg(long, default_value = "all")]
    pub method: String,
    /// cosine, wmd, or "both".
    #[arg(long, default_value = "both")]
    pub measure: String,
    /// Split sizes; give all three or none (none = 80/5/15 of the corpus).
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long = "batch-size", default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long = "max-len", default_value_t = 265)]
    pub max_len: usize,
    /// Learning rate override (per-architecture defaults otherwise).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long = "kernel-width", default_value_t = 25.0)]
    pub kernel_width: f64,
    #[arg(long = "ridge-lambda", default_value_t = 1.0)]
    pub ridge_lambda: f64,
    #[arg(long, default_value = "exact")]
    pub solver: String,
    #[arg(long, default_value = "sq-euclidean")]
    pub cost: String,
    #[arg(long = "keep-stopwords", default_value_t = false)]
    pub keep_stopwords: bool,
    #[arg(long)]
    pub seed: u64,
    /// Output directory for every artifact of the run.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_archs(raw: &str) -> Result<Vec<ArchKind>> {
    if raw == "all" {
        return Ok(vec![
            ArchKind::Lstm,
            ArchKind::BiLstm,
            ArchKind::Cnn,
            ArchKind::CnnLstm,
        ]);
    }
    raw.split(',').map(|s| s.trim().parse()).collect()
}

fn parse_methods(raw: &str) -> Result<Vec<ExplainMethod>> {
    if raw == "all" {
        return Ok(vec![ExplainMethod::Lime, ExplainMethod::Ig]);
    }
    raw.split(',').map(|s| s.trim().parse()).collect()
}

fn parse_measures(raw: &str) -> Result<Vec<Measure>> {
    if raw == "both" {
        return Ok(vec![Measure::Wmd, Measure::Cosine]);
    }
    raw.split(',').map(|s| s.trim().parse()).collect()
}

pub fn pipeline(args: &PipelineArgs) -> Result<()> {
    let archs = parse_archs(&args.arch)?;
    let methods = parse_methods(&args.method)?;
    let measures = parse_measures(&args.measure)?;

    let out = &args.out;
    for sub in ["prepared", "models", "metrics", "explanations", "scores", "report"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut manifest = RunManifest::new("pipeline", args.seed);
    manifest.set_output_base(out);
    manifest
        .arg("data", args.data.display())
        .arg("format", &args.format)
        .arg("embeddings", args.embeddings.display())
        .arg("dim", args.dim)
        .arg("arch", &args.arch)
        .arg("method", &args.method)
        .arg("measure", &args.measure)
        .arg("epochs", args.epochs)
        .arg("batch_size", args.batch_size)
        .arg("max_len", args.max_len)
        .arg("dropout", args.dropout)
        .arg("samples", args.samples)
        .arg("steps", args.steps)
        .arg("topk", args.topk)
        .arg("solver", &args.solver)
        .arg("cost", &args.cost)
        .arg("keep_stopwords", args.keep_stopwords)
        .arg("out", out.display());
    if let Some(lr) = args.lr {
        manifest.arg("lr", lr);
    }
    manifest.input(&args.data)?;
    manifest.input(&args.embeddings)?;

    // Phase 0: split and persist.
    let format: DataFormat = args.format.parse()?;
    let docs = corpus::load_dataset(&args.data, format)?;
    let counts = match (args.train, args.val, args.test) {
        (Some(tr), Some(va), Some(te)) => (tr, va, te),
        (None, None, None) => {
            let n = docs.len();
            let te = n * 15 / 100;
            let va = n * 5 / 100;
            (n - va - te, va, te)
        }
        _ => {
            return Err(Error::schema(
                "give all of --train/--val/--test or none",
            ))
        }
    };
    let split_seed = derive_seed(args.seed, "split");
    manifest.derived_seed("split", split_seed);
    let split = corpus::split(&docs, counts, split_seed)?;
    println!(
        "phase 1: {} train / {} validation / {} test",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    for (name, subset) in [
        ("train.jsonl", &split.train),
        ("validation.jsonl", &split.validation),
        ("test.jsonl", &split.test),
    ] {
        let path = out.join("prepared").join(name);
        corpus::save_jsonl(subset, &path)?;
        manifest.output(&path)?;
    }

    let table: EmbeddingTable = EmbeddingTable::load(&args.embeddings, args.dim)?;
    for w in table.warnings() {
        eprintln!("warning: {w}");
    }

    // Phases 1-3 per architecture.
    let mut metrics_records: Vec<MetricsRecord> = Vec::new();
    let mut all_scores: Vec<ScoreRecord> = Vec::new();
    for kind in &archs {
        let flag = kind.flag_name();
        let init_seed = derive_seed(args.seed, &format!("init:{flag}"));
        let train_seed = derive_seed(args.seed, &format!("train:{flag}"));
        manifest.derived_seed(&format!("init:{flag}"), init_seed);
        manifest.derived_seed(&format!("train:{flag}"), train_seed);

        let mut arch = Architecture::new(*kind);
        arch.dropout = args.dropout;
        let mut model = Model::new(arch, &table, args.max_len, init_seed)?;
        let mut cfg = TrainConfig::for_arch(*kind, train_seed);
        cfg.epochs = args.epochs;
        cfg.batch_size = args.batch_size;
        if let Some(lr) = args.lr {
            cfg.learning_rate = lr;
        }
        let history = model.train(&split.train, &split.validation, &cfg)?;
        if let Some(last) = history.last() {
            match last.val_accuracy {
                Some(acc) => println!(
                    "phase 1 [{}]: final train loss {:.4}, val accuracy {:.4}",
                    kind.label(),
                    last.train_loss,
                    acc
                ),
                None => println!(
                    "phase 1 [{}]: final train loss {:.4}",
                    kind.label(),
                    last.train_loss
                ),
            }
        }
        let model_path = out.join("models").join(format!("{flag}.bin"));
        save_model(&model, &model_path)?;
        manifest.output(&model_path)?;

        let metrics = model.evaluate(&split.test)?;
        let record = MetricsRecord {
            classifier: kind.label().to_owned(),
            metrics,
        };
        let metrics_path = out.join("metrics").join(format!("{flag}.json"));
        let json = serde_json::to_string_pretty(&record)?;
        std::fs::write(&metrics_path, json).map_err(|e| Error::io(&metrics_path, e))?;
        manifest.output(&metrics_path)?;
        println!(
            "phase 1 [{}]: test accuracy {:.4}",
            kind.label(),
            record.metrics.accuracy
        );
        metrics_records.push(record);

        for method in &methods {
            let explain_seed = derive_seed(args.seed, &format!("explain:{flag}:{method:?}"));
            manifest.derived_seed(&format!("explain:{flag}:{method:?}"), explain_seed);
            let explain_args = ExplainArgs {
                model: model_path.clone(),
                data: out.join("prepared"),
                method: format!("{method:?}").to_lowercase(),
                samples: args.samples,
                steps: args.steps,
                topk: args.topk,
                kernel_width: args.kernel_width,
                ridge_lambda: args.ridge_lambda,
                target: "predicted".into(),
                baseline: "zero_embedding".into(),
                seed: explain_seed,
                out: out
                    .join("explanations")
                    .join(format!("{flag}_{}.jsonl", method.label().to_lowercase())),
            };
            let records = explain_docs(&model, &split.test, *method, &explain_args)?;
            write_explanations(&records, &explain_args.out)?;
            manifest.output(&explain_args.out)?;
            println!(
                "phase 2 [{}+{}]: {} explanations",
                kind.label(),
                method.label(),
                records.len()
            );

            for measure in &measures {
                let mut cfg = SimilarityConfig::new(*measure);
                cfg.solver = args.solver.parse()?;
                cfg.ground_cost = args.cost.parse()?;
                cfg.remove_stopwords = !args.keep_stopwords;
                let scores = score_explanations(&records, &split.test, &table, &cfg)?;
                let score_path = out.join("scores").join(format!(
                    "{flag}_{}_{}.csv",
                    method.label().to_lowercase(),
                    measure.label()
                ));
                write_scores_csv(&scores, &score_path)?;
                manifest.output(&score_path)?;
                println!(
                    "phase 3 [{}+{} / {}]: {} scores",
                    kind.label(),
                    method.label(),
                    measure.label(),
                    scores.len()
                );
                all_scores.extend(scores);
            }
        }
    }

    // Aggregate and render.
    let (reports, consistency) = build_tables(&all_scores, &metrics_records)?;
    let labeled: Vec<(String, causatext_core::MetricsReport)> = metrics_records
        .iter()
        .map(|m| (m.classifier.clone(), m.metrics.clone()))
        .collect();
    let report_dir = out.join("report");
    let rendered = render_report(&reports, &consistency, &labeled, &report_dir)?;
    let consistency_path = report_dir.join("consistency.json");
    let json = serde_json::to_string_pretty(&consistency)?;
    std::fs::write(&consistency_path, json).map_err(|e| Error::io(&consistency_path, e))?;
    for p in rendered
        .table_paths
        .iter()
        .chain(rendered.f1_path.iter())
        .chain([&rendered.summary_path, &consistency_path])
    {
        manifest.output(p)?;
    }

    manifest.write(&out.join("manifest.json"))?;
    println!("pipeline complete: {}", out.display());
    Ok(())
}
