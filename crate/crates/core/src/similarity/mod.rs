//! Semantic similarity between keyword sets and human rationales.
//!
//! Two measures: cosine similarity between mean-pooled document vectors, and
//! word mover's distance between normalized bag-of-words distributions over
//! the embedding space. Stop-word removal is on by default for both (function
//! words otherwise dominate the nBOW mass); the list ships as a versioned
//! data file.

mod transport;

pub use transport::{cost_matrix, solve_exact, solve_sinkhorn, GroundCost, TransportPlan};

use std::collections::HashSet;
use std::sync::OnceLock;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::embeddings::EmbeddingTable;
use crate::linalg::{dot, norm2};
use crate::num::Real;
use crate::{Error, Result};

/// Embedded stop-word list (`data/stopwords_en.txt`, `# stopwords_en v1`).
const STOPWORDS_RAW: &str = include_str!("../../data/stopwords_en.txt");

pub fn stopwords_version() -> &'static str {
    STOPWORDS_RAW
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .unwrap_or("unknown")
}

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_RAW
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(str::trim)
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Normalized bag-of-words over in-vocabulary tokens, first-occurrence order.
#[derive(Debug, Clone, PartialEq)]
pub struct NbowDistribution<R = f64> {
    pub support: Vec<String>,
    pub mass: Vec<R>,
}

/// Build an nBOW distribution: optionally drop stop words, drop OOV tokens,
/// then normalize counts. Empty support after filtering is an error the
/// caller turns into a flagged sentinel.
pub fn nbow<R: Real>(
    tokens: &[impl AsRef<str>],
    table: &EmbeddingTable<R>,
    remove_stopwords: bool,
) -> Result<NbowDistribution<R>> {
    let mut counts: IndexMap<String, usize> = IndexMap::new();
    for t in tokens {
        let t = t.as_ref();
        if remove_stopwords && is_stopword(t) {
            continue;
        }
        if !table.contains(t) {
            continue;
        }
        *counts.entry(t.to_owned()).or_insert(0) += 1;
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::EmptyInput(
            "nbow support empty after stop-word/OOV filtering".into(),
        ));
    }
    let denom = R::from_usize_lit(total);
    let (support, mass) = counts
        .into_iter()
        .map(|(t, c)| (t, R::from_usize_lit(c) / denom))
        .unzip();
    Ok(NbowDistribution { support, mass })
}

/// Cosine similarity with the zero-vector policy made explicit: either side
/// having zero norm yields 0.0 with `zero_norm` set (the quotient itself is
/// undefined there).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineResult<R> {
    pub value: R,
    pub zero_norm: bool,
}

pub fn cosine_sim<R: Real>(a: &[R], b: &[R]) -> CosineResult<R> {
    assert_eq!(a.len(), b.len(), "cosine over unequal lengths");
    let na = norm2(a);
    let nb = norm2(b);
    if na == R::zero() || nb == R::zero() {
        return CosineResult {
            value: R::zero(),
            zero_norm: true,
        };
    }
    let raw = dot(a, b) / (na * nb);
    // Rounding can push |value| a hair past 1.
    CosineResult {
        value: raw.min(R::one()).max(-R::one()),
        zero_norm: false,
    }
}

/// Which similarity measure a score was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Cosine,
    Wmd,
}

impl Measure {
    pub fn label(self) -> &'static str {
        match self {
            Measure::Cosine => "cosine",
            Measure::Wmd => "wmd",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Measure::Cosine),
            "wmd" => Ok(Measure::Wmd),
            other => Err(Error::schema(format!("unknown measure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Exact,
    Sinkhorn,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Solver::Exact),
            "sinkhorn" => Ok(Solver::Sinkhorn),
            other => Err(Error::schema(format!("unknown solver {other:?}"))),
        }
    }
}

/// Knobs for `explanation_similarity`.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityConfig {
    pub measure: Measure,
    pub solver: Solver,
    pub remove_stopwords: bool,
    pub ground_cost: GroundCost,
    /// Sinkhorn regularization as a fraction of the mean ground cost.
    pub sinkhorn_epsilon_ratio: f64,
    pub sinkhorn_max_iter: usize,
}

impl SimilarityConfig {
    pub fn new(measure: Measure) -> Self {
        SimilarityConfig {
            measure,
            solver: Solver::Exact,
            remove_stopwords: true,
            ground_cost: GroundCost::SqEuclidean,
            sinkhorn_epsilon_ratio: 0.01,
            sinkhorn_max_iter: 100_000,
        }
    }
}

/// Degenerate-input markers carried with every score; any set flag excludes
/// the score from per-class aggregation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFlags {
    /// Keyword side empty after stop-word/OOV filtering.
    pub empty_keywords: bool,
    /// Inference side empty after stop-word/OOV filtering.
    pub empty_inference: bool,
    /// A mean-pooled vector had zero norm (cosine undefined, reported as 0).
    pub zero_norm: bool,
    /// The document carries no human rationale at all.
    pub no_inference: bool,
}

impl ScoreFlags {
    pub fn any(self) -> bool {
        self.empty_keywords || self.empty_inference || self.zero_norm || self.no_inference
    }

    /// Semicolon-joined flag names, empty string when clean.
    pub fn to_field(self) -> String {
        let mut parts = Vec::new();
        if self.empty_keywords {
            parts.push("empty_keywords");
        }
        if self.empty_inference {
            parts.push("empty_inference");
        }
        if self.zero_norm {
            parts.push("zero_norm");
        }
        if self.no_inference {
            parts.push("no_inference");
        }
        parts.join(";")
    }

    pub fn from_field(s: &str) -> Self {
        let mut f = ScoreFlags::default();
        for part in s.split(';') {
            match part {
                "empty_keywords" => f.empty_keywords = true,
                "empty_inference" => f.empty_inference = true,
                "zero_norm" => f.zero_norm = true,
                "no_inference" => f.no_inference = true,
                _ => {}
            }
        }
        f
    }
}

/// A similarity score plus its degeneracy flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityOutcome<R = f64> {
    pub value: R,
    pub flags: ScoreFlags,
}

/// Score one explanation (keyword list) against one human rationale.
///
/// Cosine: mean-pooled vectors of both sides, sharing the corpus tokenizer so
/// the token spaces match. WMD: exact or Sinkhorn transport between the two
/// nBOW distributions. Degenerate sides produce a zero-valued, flagged
/// outcome rather than an error so batch scoring can continue.
pub fn explanation_similarity<R: Real>(
    keywords: &[impl AsRef<str>],
    inference: &str,
    table: &EmbeddingTable<R>,
    cfg: &SimilarityConfig,
) -> Result<SimilarityOutcome<R>> {
    if keywords.is_empty() {
        return Err(Error::EmptyInput("no keywords to score".into()));
    }
    let inference_tokens = tokenize(inference);
    if inference_tokens.is_empty() {
        return Err(Error::EmptyInput("inference text has no tokens".into()));
    }

    let filter = |tokens: &[String]| -> Vec<String> {
        tokens
            .iter()
            .filter(|t| !cfg.remove_stopwords || !is_stopword(t))
            .cloned()
            .collect()
    };
    let kw_tokens: Vec<String> = filter(
        &keywords
            .iter()
            .map(|k| k.as_ref().to_owned())
            .collect::<Vec<_>>(),
    );
    let inf_tokens = filter(&inference_tokens);

    let mut flags = ScoreFlags {
        empty_keywords: kw_tokens.is_empty(),
        empty_inference: inf_tokens.is_empty(),
        ..Default::default()
    };
    if flags.any() {
        return Ok(SimilarityOutcome {
            value: R::zero(),
            flags,
        });
    }

    match cfg.measure {
        Measure::Cosine => {
            let va = table.doc_vector(&kw_tokens)?;
            let vb = table.doc_vector(&inf_tokens)?;
            let cos = cosine_sim(&va.values, &vb.values);
            flags.zero_norm = cos.zero_norm;
            Ok(SimilarityOutcome {
                value: cos.value,
                flags,
            })
        }
        Measure::Wmd => {
            let na = match nbow(&kw_tokens, table, false) {
                Ok(d) => d,
                Err(_) => {
                    flags.empty_keywords = true;
                    return Ok(SimilarityOutcome {
                        value: R::zero(),
                        flags,
                    });
                }
            };
            let nb = match nbow(&inf_tokens, table, false) {
                Ok(d) => d,
                Err(_) => {
                    flags.empty_inference = true;
                    return Ok(SimilarityOutcome {
                        value: R::zero(),
                        flags,
                    });
                }
            };
            let cost = cost_matrix(&na, &nb, table, cfg.ground_cost)?;
            let plan = match cfg.solver {
                Solver::Exact => solve_exact(&cost, &na.mass, &nb.mass)?,
                Solver::Sinkhorn => {
                    let mean_cost = cost.iter().copied().sum::<R>()
                        / R::from_usize_lit(cost.rows() * cost.cols());
                    let eps = (R::from_f64_lit(cfg.sinkhorn_epsilon_ratio) * mean_cost)
                        .max(R::from_f64_lit(1e-12));
                    solve_sinkhorn(&cost, &na.mass, &nb.mass, eps, cfg.sinkhorn_max_iter)?
                }
            };
            Ok(SimilarityOutcome {
                value: plan.objective,
                flags,
            })
        }
    }
}
