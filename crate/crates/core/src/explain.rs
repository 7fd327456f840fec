//! Token-level attributions: LIME surrogate regression and integrated
//! gradients, plus the top-k keyword projection.
//!
//! LIME perturbs by deletion: a mask keeps or drops token positions, the
//! masked token subsequence goes back through the black-box predictor, and a
//! weighted ridge regression of the target-class scores on the binary masks
//! yields per-position weights (sample weights fall off with cosine distance
//! from the all-ones mask). Deletion keeps the surrogate's binary feature
//! semantics exact.
//!
//! Integrated gradients accumulates the model's input-embedding gradients
//! along the straight path from a baseline to the document embedding,
//! scaled by the input-minus-baseline difference; a token's weight is the
//! row sum of its attribution row. The completeness gap
//! |Σ attributions − (F(input) − F(baseline))| is recorded per explanation,
//! with F the target-class logit.
//!
//! Attributions target the model's predicted class by default (gold-class
//! mode sits behind a flag for ablation) and every explanation records its
//! configuration in `diagnostics`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::linalg::Matrix;
use crate::model::Model;
use crate::num::Real;
use crate::rng::{derive_seed, fnv1a64, seeded_rng};
use crate::{Error, Result, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainMethod {
    Lime,
    Ig,
}

impl ExplainMethod {
    pub fn label(self) -> &'static str {
        match self {
            ExplainMethod::Lime => "LIME",
            ExplainMethod::Ig => "IG",
        }
    }
}

impl std::str::FromStr for ExplainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lime" => Ok(ExplainMethod::Lime),
            "ig" => Ok(ExplainMethod::Ig),
            other => Err(Error::schema(format!("unknown explain method {other:?}"))),
        }
    }
}

/// Which class attributions explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionTarget {
    /// The model's own prediction on the unperturbed document (default).
    #[default]
    Predicted,
    /// The gold label, for ablation.
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
    pub target: AttributionTarget,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            kernel_width: 25.0,
            ridge_lambda: 1.0,
            seed: 0,
            target: AttributionTarget::Predicted,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 10 {
            return Err(Error::Numeric("lime needs at least 10 samples".into()));
        }
        if self.kernel_width <= 0.0 || self.ridge_lambda <= 0.0 {
            return Err(Error::Numeric(
                "kernel width and ridge lambda must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgBaseline {
    /// All-zero embedding matrix.
    ZeroEmbedding,
    /// The PAD row repeated — identical to zero here because PAD embeds to
    /// the zero vector, but kept selectable for embedding schemes where it
    /// wouldn't be.
    PadToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgConfig {
    pub steps: usize,
    pub baseline: IgBaseline,
    pub target: AttributionTarget,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig {
            steps: 300,
            baseline: IgBaseline::ZeroEmbedding,
            target: AttributionTarget::Predicted,
        }
    }
}

/// Method-specific quality record stored with each explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Diagnostics {
    Lime {
        surrogate_r2: f64,
        n_samples: usize,
        kernel_width: f64,
        ridge_lambda: f64,
        seed: u64,
        /// All sampled predictions identical; weights were forced to zero.
        degenerate: bool,
    },
    Ig {
        completeness_gap: f64,
        output_delta: f64,
        steps: usize,
        baseline: IgBaseline,
    },
}

/// Ordered token–weight attribution for one document and one target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub doc_id: String,
    pub target_class: usize,
    pub method: ExplainMethod,
    /// One `(token, position, weight)` triple per original token position.
    pub weights: Vec<(String, usize, f64)>,
    pub diagnostics: Diagnostics,
}

impl Explanation {
    pub fn finite(&self) -> bool {
        self.weights.iter().all(|(_, _, w)| w.is_finite())
    }
}

/// Deterministic per-document sampling seed: global seed + FNV-1a of the id.
pub fn doc_seed(global_seed: u64, doc_id: &str) -> u64 {
    derive_seed(global_seed ^ fnv1a64(doc_id.as_bytes()), "explain")
}

/// Draw `n` binary keep-masks over `len` positions. The first mask is all
/// ones (the original document); the rest keep each position independently
/// with probability 1/2.
pub fn perturb_samples(len: usize, n: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
    if len == 0 {
        return Err(Error::EmptyInput("cannot perturb an empty document".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut masks = Vec::with_capacity(n);
    masks.push(vec![true; len]);
    for _ in 1..n {
        masks.push((0..len).map(|_| rng.gen::<bool>()).collect());
    }
    Ok(masks)
}

/// Cosine distance between a binary mask and the all-ones mask:
/// `1 − sqrt(kept/len)`; the empty mask is at distance 1.
fn mask_cosine_distance(mask: &[bool]) -> f64 {
    let kept = mask.iter().filter(|&&b| b).count();
    if kept == 0 {
        return 1.0;
    }
    1.0 - (kept as f64 / mask.len() as f64).sqrt()
}

/// LIME: fit a weighted ridge surrogate to the predictor's behavior on
/// deletion-perturbed copies of the document.
///
/// `predict` maps a token sequence to 6 class scores; failures surface with
/// the offending sample index.
pub fn lime_explain<R, F>(predict: F, doc: &Document, cfg: &LimeConfig) -> Result<Explanation>
where
    R: Real,
    F: Fn(&[String]) -> Result<Vec<R>>,
{
    cfg.validate()?;
    let tokens = &doc.tokens;
    if tokens.is_empty() {
        return Err(Error::EmptyInput(format!(
            "document {:?} has no tokens to explain",
            doc.id
        )));
    }

    let full_scores = predict(tokens)
        .map_err(|e| Error::Numeric(format!("predictor failed on the original document: {e}")))?;
    let target_class = match cfg.target {
        AttributionTarget::Predicted => crate::model::argmax(&full_scores),
        AttributionTarget::Gold => doc.label.value(),
    };

    let masks = perturb_samples(tokens.len(), cfg.n_samples, doc_seed(cfg.seed, &doc.id))?;
    let mut targets = Vec::with_capacity(masks.len());
    let mut sample_weights = Vec::with_capacity(masks.len());
    for (i, mask) in masks.iter().enumerate() {
        let masked: Vec<String> = tokens
            .iter()
            .zip(mask)
            .filter(|(_, &keep)| keep)
            .map(|(t, _)| t.clone())
            .collect();
        let scores = predict(&masked)
            .map_err(|e| Error::Numeric(format!("predictor failed on sample {i}: {e}")))?;
        targets.push(scores[target_class].to_f64_lit());
        let d = mask_cosine_distance(mask);
        sample_weights.push((-d * d / (cfg.kernel_width * cfg.kernel_width)).exp());
    }

    // Degenerate: the predictor never moved; the surrogate has nothing to fit.
    let spread = targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let degenerate = spread.1 - spread.0 == 0.0;

    let (intercept, coefficients) = if degenerate {
        (0.0, vec![0.0; tokens.len()])
    } else {
        fit_weighted_ridge(&masks, &targets, &sample_weights, cfg.ridge_lambda)?
    };

    let surrogate_r2 = if degenerate {
        0.0
    } else {
        weighted_r2(&masks, &targets, &sample_weights, intercept, &coefficients)
    };

    let weights = tokens
        .iter()
        .enumerate()
        .map(|(pos, t)| (t.clone(), pos, coefficients[pos]))
        .collect();
    Ok(Explanation {
        doc_id: doc.id.clone(),
        target_class,
        method: ExplainMethod::Lime,
        weights,
        diagnostics: Diagnostics::Lime {
            surrogate_r2,
            n_samples: cfg.n_samples,
            kernel_width: cfg.kernel_width,
            ridge_lambda: cfg.ridge_lambda,
            seed: cfg.seed,
            degenerate,
        },
    })
}

/// Solve the penalized normal equations `(Xᵀ S X + λ·diag(0,1..1)) β = Xᵀ S y`
/// with an unpenalized intercept column. Returns `(intercept, coefficients)`.
fn fit_weighted_ridge(
    masks: &[Vec<bool>],
    targets: &[f64],
    sample_weights: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let p = masks[0].len();
    let d = p + 1;
    let mut a = Matrix::<f64>::zeros(d, d);
    let mut rhs = vec![0.0f64; d];
    let mut xrow = vec![0.0f64; d];
    for ((mask, &y), &s) in masks.iter().zip(targets).zip(sample_weights) {
        xrow[0] = 1.0;
        for (k, &keep) in mask.iter().enumerate() {
            xrow[k + 1] = if keep { 1.0 } else { 0.0 };
        }
        for i in 0..d {
            if xrow[i] == 0.0 {
                continue;
            }
            rhs[i] += s * xrow[i] * y;
            for j in 0..d {
                let v = a.get(i, j) + s * xrow[i] * xrow[j];
                a.set(i, j, v);
            }
        }
    }
    for i in 1..d {
        let v = a.get(i, i) + lambda;
        a.set(i, i, v);
    }
    let beta = crate::linalg::solve_spd(&a, &rhs)?;
    Ok((beta[0], beta[1..].to_vec()))
}

fn weighted_r2(
    masks: &[Vec<bool>],
    targets: &[f64],
    sample_weights: &[f64],
    intercept: f64,
    coefficients: &[f64],
) -> f64 {
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let w_total: f64 = sample_weights.iter().sum();
    let y_mean: f64 = targets
        .iter()
        .zip(sample_weights)
        .map(|(&y, &s)| y * s)
        .sum::<f64>()
        / w_total;
    for ((mask, &y), &s) in masks.iter().zip(targets).zip(sample_weights) {
        let mut pred = intercept;
        for (k, &keep) in mask.iter().enumerate() {
            if keep {
                pred += coefficients[k];
            }
        }
        ss_res += s * (y - pred) * (y - pred);
        ss_tot += s * (y - y_mean) * (y - y_mean);
    }
    if ss_tot == 0.0 {
        return 0.0;
    }
    1.0 - ss_res / ss_tot
}

/// Integrated gradients along the straight path from the baseline to the
/// document embedding, approximated with `steps` gradient evaluations at
/// `k/steps`, `k = 1..steps`.
pub fn ig_explain<R: Real>(
    model: &Model<R>,
    doc: &Document,
    cfg: &IgConfig,
    target_class: Option<usize>,
) -> Result<Explanation> {
    if cfg.steps < 1 {
        return Err(Error::Numeric("ig needs at least one step".into()));
    }
    if doc.tokens.is_empty() {
        return Err(Error::EmptyInput(format!(
            "document {:?} has no tokens to explain",
            doc.id
        )));
    }

    let x = model.embed_tokens(&doc.tokens);
    let target = match target_class {
        Some(c) if c < NUM_CLASSES => c,
        Some(c) => {
            return Err(Error::Numeric(format!("target class {c} outside 0..{NUM_CLASSES}")))
        }
        None => match cfg.target {
            AttributionTarget::Predicted => {
                crate::model::argmax(&model.logits_from_embedded(&x)?)
            }
            AttributionTarget::Gold => doc.label.value(),
        },
    };

    // Both baselines are the zero matrix under the frozen zero PAD row.
    let baseline = match cfg.baseline {
        IgBaseline::ZeroEmbedding | IgBaseline::PadToken => Matrix::zeros(x.rows(), x.cols()),
    };

    let mut grad_sum = Matrix::<R>::zeros(x.rows(), x.cols());
    let m = R::from_usize_lit(cfg.steps);
    for k in 1..=cfg.steps {
        let alpha = R::from_usize_lit(k) / m;
        let mut point = baseline.clone();
        for t in 0..x.rows() {
            for u in 0..x.cols() {
                let v = baseline.get(t, u) + alpha * (x.get(t, u) - baseline.get(t, u));
                point.set(t, u, v);
            }
        }
        let g = model.input_gradients(&point, target)?;
        if !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient at ig step {k} for document {:?}",
                doc.id
            )));
        }
        for (acc, v) in grad_sum.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *acc += *v;
        }
    }

    let mut attribution = Matrix::<R>::zeros(x.rows(), x.cols());
    for t in 0..x.rows() {
        for u in 0..x.cols() {
            let v = (x.get(t, u) - baseline.get(t, u)) * grad_sum.get(t, u) / m;
            attribution.set(t, u, v);
        }
    }

    let total: R = attribution.as_slice().iter().copied().sum();
    let f_input = model.logits_from_embedded(&x)?[target];
    let f_baseline = model.logits_from_embedded(&baseline)?[target];
    let output_delta = (f_input - f_baseline).to_f64_lit();
    let completeness_gap = (total.to_f64_lit() - output_delta).abs();

    // Token weight = row sum; rows beyond the encoded window get weight 0.
    let encoded_rows = x.rows();
    let weights = doc
        .tokens
        .iter()
        .enumerate()
        .map(|(pos, t)| {
            let w = if pos < encoded_rows {
                attribution.row(pos).iter().copied().sum::<R>().to_f64_lit()
            } else {
                0.0
            };
            (t.clone(), pos, w)
        })
        .collect();

    Ok(Explanation {
        doc_id: doc.id.clone(),
        target_class: target,
        method: ExplainMethod::Ig,
        weights,
        diagnostics: Diagnostics::Ig {
            completeness_gap,
            output_delta,
            steps: cfg.steps,
            baseline: cfg.baseline,
        },
    })
}

/// Rank tokens by descending absolute weight (a duplicated token keeps its
/// strongest position), ties broken lexicographically; at most `k` entries.
pub fn top_keywords(expl: &Explanation, k: usize) -> Vec<String> {
    assert!(k >= 1, "top_keywords needs k >= 1");
    let mut best: IndexScores = Vec::new();
    for (token, _, w) in &expl.weights {
        match best.iter_mut().find(|(t, _)| t == token) {
            Some((_, s)) if w.abs() > *s => *s = w.abs(),
            Some(_) => {}
            None => best.push((token.clone(), w.abs())),
        }
    }
    best.sort_by(|(ta, wa), (tb, wb)| {
        wb.partial_cmp(wa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ta.cmp(tb))
    });
    best.into_iter().take(k).map(|(t, _)| t).collect()
}

type IndexScores = Vec<(String, f64)>;


#[cfg(test)]
mod config_tests {
    use super::*;
    use crate::corpus::CauseCategory;

    #[test]
    fn ig_rejects_zero_steps() {
        let table = crate::embeddings::EmbeddingTable::from_entries(
            2,
            vec![("a".to_string(), vec![1.0, 0.0])],
        )
        .unwrap();
        let mut arch = crate::model::Architecture::new(crate::model::ArchKind::MeanMlp);
        arch.dense_sizes = vec![];
        let model = crate::model::Model::new(arch, &table, 4, 0).unwrap();
        let doc = Document::new("d", "a", CauseCategory::NoReason, None);
        let cfg = IgConfig {
            steps: 0,
            ..IgConfig::default()
        };
        assert!(ig_explain(&model, &doc, &cfg, Some(0)).is_err());
    }

    #[test]
    fn lime_rejects_tiny_sample_counts() {
        let cfg = LimeConfig {
            n_samples: 5,
            ..LimeConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
