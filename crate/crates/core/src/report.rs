//! Per-class aggregation, the F1-vs-similarity consistency check, and file
//! rendering.
//!
//! Aggregation rules: flagged score records never enter a mean, classes with
//! zero usable documents render as empty cells (0 is a meaningful cosine
//! value), and rank correlation is Spearman with average ranks — the
//! consistency hypothesis is ordinal, and ranks are invariant to the
//! cosine/WMD scale mismatch. WMD vectors are negated before correlating so
//! "higher = more similar" holds for both measures. Dispersion is the
//! coefficient of variation (population standard deviation over the mean).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::similarity::{Measure, ScoreFlags};
use crate::{Error, MetricsReport, Result, NUM_CLASSES};

/// One scored document, as written to `scores.csv`
/// (`doc_id,class,method,measure,score,flags`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub doc_id: String,
    /// Gold cause class.
    pub class: usize,
    /// Classifier+explainer label, e.g. "CNN+LIME".
    pub method: String,
    pub measure: Measure,
    pub score: f64,
    /// Semicolon-joined flag names; empty when clean.
    #[serde(with = "flags_field")]
    pub flags: ScoreFlags,
}

mod flags_field {
    use super::ScoreFlags;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &ScoreFlags, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&f.to_field())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ScoreFlags, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(ScoreFlags::from_field(&raw))
    }
}

pub fn write_scores_csv(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Mean similarity per cause class for one classifier+explainer+measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub method: String,
    pub measure: Measure,
    /// `None` where a class had no usable documents.
    pub per_class_means: [Option<f64>; NUM_CLASSES],
    /// Usable (unflagged) documents per class.
    pub n_per_class: [usize; NUM_CLASSES],
    pub excluded_count: usize,
}

impl ClassReport {
    /// Mean of the present per-class means (a report row's headline number).
    pub fn row_mean(&self) -> Option<f64> {
        let present: Vec<f64> = self.per_class_means.iter().flatten().copied().collect();
        if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        }
    }
}

/// Aggregate one method+measure's records into per-class means.
/// Flagged records are excluded and counted; record order is irrelevant.
pub fn class_table(records: &[ScoreRecord], method: &str, measure: Measure) -> Result<ClassReport> {
    let mut sums = [0.0f64; NUM_CLASSES];
    let mut counts = [0usize; NUM_CLASSES];
    let mut excluded = 0usize;
    for r in records {
        if r.method != method || r.measure != measure {
            continue;
        }
        if r.class >= NUM_CLASSES {
            return Err(Error::schema(format!(
                "score record {:?} carries class {} outside 0..{NUM_CLASSES}",
                r.doc_id, r.class
            )));
        }
        if r.flags.any() {
            excluded += 1;
            continue;
        }
        sums[r.class] += r.score;
        counts[r.class] += 1;
    }
    let mut means = [None; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        if counts[c] > 0 {
            means[c] = Some(sums[c] / counts[c] as f64);
        }
    }
    Ok(ClassReport {
        method: method.to_owned(),
        measure,
        per_class_means: means,
        n_per_class: counts,
        excluded_count: excluded,
    })
}

/// Spearman rank correlation between per-class F1 and per-class similarity,
/// with each vector's coefficient of variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub method: String,
    pub measure: Measure,
    pub f1_vector: [f64; NUM_CLASSES],
    pub sim_vector: [f64; NUM_CLASSES],
    pub rank_correlation: f64,
    pub dispersion_f1: f64,
    pub dispersion_sim: f64,
}

/// Average ranks (ties share the mean of the positions they occupy).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Spearman correlation; errors on a constant vector (ranks are undefined).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    assert_eq!(a.len(), b.len());
    if !a.iter().chain(b).all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite value in correlation input".into()));
    }
    let sa = population_std(a);
    let sb = population_std(b);
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::Numeric(
            "rank correlation undefined: constant vector".into(),
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Correlate per-class F1 with per-class similarity. `sims` must already be
/// oriented "higher = more similar" (use [`oriented_sims`] for WMD rows).
pub fn consistency_analysis(
    method: &str,
    measure: Measure,
    f1: [f64; NUM_CLASSES],
    sims: [f64; NUM_CLASSES],
) -> Result<ConsistencyResult> {
    let rank_correlation = spearman(&f1, &sims)?;
    Ok(ConsistencyResult {
        method: method.to_owned(),
        measure,
        f1_vector: f1,
        sim_vector: sims,
        rank_correlation,
        dispersion_f1: population_std(&f1) / (f1.iter().sum::<f64>() / NUM_CLASSES as f64),
        dispersion_sim: population_std(&sims) / (sims.iter().sum::<f64>() / NUM_CLASSES as f64),
    })
}

/// Orient class means for correlation: cosine passes through, WMD negates
/// (it is a distance).
pub fn oriented_sims(measure: Measure, means: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    match measure {
        Measure::Cosine => means,
        Measure::Wmd => means.map(|v| -v),
    }
}

/// Files produced by [`render_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub table_paths: Vec<PathBuf>,
    pub f1_path: Option<PathBuf>,
    pub summary_path: PathBuf,
}

fn fmt_cell(v: Option<f64>) -> String {
    // Full-precision shortest form so the CSV re-parses to the exact value.
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write one CSV per measure (rows = classifier+explainer, columns =
/// class 0..5), the F1/accuracy table when metrics are given, and a
/// plain-text summary. Byte-deterministic for fixed inputs.
pub fn render_report(
    reports: &[ClassReport],
    consistency: &[ConsistencyResult],
    metrics: &[(String, MetricsReport)],
    out_dir: &Path,
) -> Result<RenderedReport> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("no class reports to render".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut table_paths = Vec::new();
    for measure in [Measure::Wmd, Measure::Cosine] {
        let rows: Vec<&ClassReport> = reports.iter().filter(|r| r.measure == measure).collect();
        if rows.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("similarity_{}.csv", measure.label()));
        let mut out = String::new();
        out.push_str("method,class_0,class_1,class_2,class_3,class_4,class_5,excluded\n");
        for r in &rows {
            out.push_str(&r.method);
            for c in 0..NUM_CLASSES {
                out.push(',');
                out.push_str(&fmt_cell(r.per_class_means[c]));
            }
            out.push_str(&format!(",{}\n", r.excluded_count));
        }
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        table_paths.push(path);
    }

    let f1_path = if metrics.is_empty() {
        None
    } else {
        let path = out_dir.join("f1_accuracy.csv");
        let mut out = String::new();
        out.push_str("classifier,f1_c0,f1_c1,f1_c2,f1_c3,f1_c4,f1_c5,accuracy\n");
        for (label, m) in metrics {
            out.push_str(label);
            for c in 0..NUM_CLASSES {
                out.push_str(&format!(",{}", m.per_class_f1[c]));
            }
            out.push_str(&format!(",{}\n", m.accuracy));
        }
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        Some(path)
    };

    let summary_path = out_dir.join("summary.md");
    let mut s = String::new();
    s.push_str("# Explanation similarity summary\n\n");
    for measure in [Measure::Wmd, Measure::Cosine] {
        let rows: Vec<&ClassReport> = reports.iter().filter(|r| r.measure == measure).collect();
        if rows.is_empty() {
            continue;
        }
        s.push_str(&format!("## {}\n\n", measure.label()));
        s.push_str("Row-wise means (mean over classes present in that row):\n\n");
        for r in &rows {
            match r.row_mean() {
                Some(m) => s.push_str(&format!("- {}: {m:.4}\n", r.method)),
                None => s.push_str(&format!("- {}: no usable documents\n", r.method)),
            }
        }
        let grand: Vec<f64> = rows.iter().filter_map(|r| r.row_mean()).collect();
        if !grand.is_empty() {
            s.push_str(&format!(
                "\nGrand mean over the {} rows above: {:.4}\n\n",
                grand.len(),
                grand.iter().sum::<f64>() / grand.len() as f64
            ));
        }
    }
    if !consistency.is_empty() {
        s.push_str("## F1 vs. explanation-similarity consistency\n\n");
        s.push_str("Spearman rank correlation per row (WMD negated so higher = more similar):\n\n");
        for c in consistency {
            s.push_str(&format!(
                "- {} ({}): rho = {:.4} (CV of F1 {:.4}, CV of similarity {:.4})\n",
                c.method,
                c.measure.label(),
                c.rank_correlation,
                c.dispersion_f1,
                c.dispersion_sim
            ));
        }
        s.push('\n');
    }
    s.push_str(
        "Replication context (CAMS, full-scale runs only): category-wise average \
         scores of 81.29% under cosine similarity and 0.906 under word mover's \
         distance; desk-scale runs reproduce table shapes, not these values.\n",
    );
    std::fs::write(&summary_path, &s).map_err(|e| Error::io(&summary_path, e))?;

    Ok(RenderedReport {
        table_paths,
        f1_path,
        summary_path,
    })
}

/// Reproducibility manifest: every seed, flag, and file hash of a run.
/// Output paths are recorded relative to the run's output base when one is
/// set, so manifests from identical runs compare byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Resolved flag values, sorted by flag name.
    pub args: BTreeMap<String, String>,
    pub global_seed: u64,
    pub derived_seeds: BTreeMap<String, u64>,
    pub stopwords_version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(skip)]
    output_base: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, global_seed: u64) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            args: BTreeMap::new(),
            global_seed,
            derived_seeds: BTreeMap::new(),
            stopwords_version: crate::similarity::stopwords_version().to_owned(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            output_base: None,
        }
    }

    /// Record output paths relative to `base` from here on.
    pub fn set_output_base(&mut self, base: &Path) -> &mut Self {
        self.output_base = Some(base.to_owned());
        self
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn derived_seed(&mut self, label: &str, seed: u64) -> &mut Self {
        self.derived_seeds.insert(label.to_owned(), seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        let shown = match &self.output_base {
            Some(base) => path.strip_prefix(base).unwrap_or(path).to_owned(),
            None => path.to_owned(),
        };
        self.outputs.push(FileDigest {
            path: shown.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        let json = serde_json::to_string_pretty(self)?;
        f.write_all(json.as_bytes()).map_err(|e| Error::io(path, e))?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(doc: &str, class: usize, score: f64, flagged: bool) -> ScoreRecord {
        ScoreRecord {
            doc_id: doc.into(),
            class,
            method: "CNN+LIME".into(),
            measure: Measure::Cosine,
            score,
            flags: ScoreFlags {
                empty_keywords: flagged,
                ..Default::default()
            },
        }
    }

    #[test]
    fn class_table_means_and_absent_classes() {
        let records = vec![
            rec("a", 0, 1.0, false),
            rec("b", 0, 1.0, false),
            rec("c", 1, 0.5, false),
        ];
        let t = class_table(&records, "CNN+LIME", Measure::Cosine).unwrap();
        assert_eq!(t.per_class_means[0], Some(1.0));
        assert_eq!(t.per_class_means[1], Some(0.5));
        for c in 2..NUM_CLASSES {
            assert_eq!(t.per_class_means[c], None);
        }
        assert_eq!(t.n_per_class[0], 2);
        assert_eq!(t.excluded_count, 0);
    }

    #[test]
    fn class_table_excludes_flagged() {
        let records = vec![
            rec("a", 2, 0.9, false),
            rec("b", 2, 0.1, true),
            rec("c", 3, 0.7, true),
        ];
        let t = class_table(&records, "CNN+LIME", Measure::Cosine).unwrap();
        assert_eq!(t.per_class_means[2], Some(0.9));
        assert_eq!(t.per_class_means[3], None);
        assert_eq!(t.excluded_count, 2);
        let usable: usize = t.n_per_class.iter().sum();
        assert_eq!(usable + t.excluded_count, records.len());
    }

    #[test]
    fn class_table_all_flagged() {
        let records = vec![rec("a", 0, 0.9, true), rec("b", 1, 0.2, true)];
        let t = class_table(&records, "CNN+LIME", Measure::Cosine).unwrap();
        assert!(t.per_class_means.iter().all(Option::is_none));
        assert_eq!(t.excluded_count, 2);
    }

    #[test]
    fn class_table_permutation_invariant() {
        let mut records = vec![
            rec("a", 0, 0.3, false),
            rec("b", 0, 0.9, false),
            rec("c", 4, 0.5, false),
        ];
        let t1 = class_table(&records, "CNN+LIME", Measure::Cosine).unwrap();
        records.reverse();
        let t2 = class_table(&records, "CNN+LIME", Measure::Cosine).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn spearman_identity_and_reversal() {
        let v = [0.1, 0.5, 0.3, 0.9, 0.7, 0.2];
        assert!((spearman(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((spearman(&v, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_constant_vector_is_error() {
        let v = [0.5; 6];
        let w = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let err = spearman(&v, &w).unwrap_err();
        assert!(err.to_string().contains("constant"));
    }

    /// Independently computed reference (rank-correlation oracle run before
    /// the build): rho = 3/35.
    #[test]
    fn spearman_matches_frozen_oracle_on_published_rows() {
        let f1 = [0.59, 0.25, 0.53, 0.44, 0.58, 0.43];
        let sims = [0.784, 0.821, 0.881, 0.751, 0.867, 0.857];
        let rho = spearman(&f1, &sims).unwrap();
        assert!(
            (rho - 0.085714285714285729).abs() <= 1e-9,
            "rho {rho}"
        );
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        // Reference value computed with an independent implementation:
        // spearmanr([1,2,2,3], [1,2,3,4]) = 0.94868329805051388.
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let rho = spearman(&a, &b).unwrap();
        assert!((rho - 0.94868329805051388).abs() < 1e-12, "rho {rho}");
    }

    #[test]
    fn wmd_orientation_negates() {
        let means = [1.0, 0.8, 0.9, 0.85, 0.8, 0.9];
        let oriented = oriented_sims(Measure::Wmd, means);
        assert_eq!(oriented[0], -1.0);
        let same = oriented_sims(Measure::Cosine, means);
        assert_eq!(same, means);
    }

    #[test]
    fn rendered_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let report = ClassReport {
            method: "LSTM+LIME".into(),
            measure: Measure::Wmd,
            per_class_means: [
                Some(1.029),
                Some(0.8540000000000001),
                Some(0.857),
                None,
                Some(0.1 + 0.2), // deliberately non-representable nicely
                Some(0.889),
            ],
            n_per_class: [5, 4, 3, 0, 2, 1],
            excluded_count: 2,
        };
        let rendered = render_report(&[report.clone()], &[], &[], dir.path()).unwrap();
        let content = std::fs::read_to_string(&rendered.table_paths[0]).unwrap();
        let mut lines = content.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,class_0,class_1,class_2,class_3,class_4,class_5,excluded"
        );
        let row = lines.next().unwrap();
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], "LSTM+LIME");
        for c in 0..NUM_CLASSES {
            match report.per_class_means[c] {
                Some(v) => assert_eq!(cells[c + 1].parse::<f64>().unwrap(), v),
                None => assert!(cells[c + 1].is_empty()),
            }
        }
        assert_eq!(cells[7], "2");
    }

    #[test]
    fn render_is_byte_deterministic() {
        let report = ClassReport {
            method: "CNN+IG".into(),
            measure: Measure::Cosine,
            per_class_means: [Some(0.7); NUM_CLASSES],
            n_per_class: [3; NUM_CLASSES],
            excluded_count: 0,
        };
        let consistency = consistency_analysis(
            "CNN+IG",
            Measure::Cosine,
            [0.5, 0.4, 0.6, 0.7, 0.3, 0.2],
            [0.9, 0.8, 0.95, 0.97, 0.7, 0.6],
        )
        .unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        render_report(&[report.clone()], &[consistency.clone()], &[], d1.path()).unwrap();
        render_report(&[report], &[consistency], &[], d2.path()).unwrap();
        let a = std::fs::read(d1.path().join("summary.md")).unwrap();
        let b = std::fs::read(d2.path().join("summary.md")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read(d1.path().join("similarity_cosine.csv")).unwrap();
        let b = std::fs::read(d2.path().join("similarity_cosine.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scores_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let records = vec![
            rec("a", 0, 0.912345678901234, false),
            rec("b", 5, -0.25, true),
        ];
        write_scores_csv(&records, &path).unwrap();
        let back = read_scores_csv(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn manifest_is_deterministic_and_hashes_files() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, b"hello").unwrap();
        let mut m = RunManifest::new("train", 7);
        m.arg("epochs", 20).derived_seed("train", 123);
        m.input(&input).unwrap();
        // sha256("hello")
        assert_eq!(
            m.inputs[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        let p1 = dir.path().join("m1.json");
        let p2 = dir.path().join("m2.json");
        m.write(&p1).unwrap();
        m.write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
