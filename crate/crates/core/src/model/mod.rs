//! The five classifier architectures over embedded token sequences.
//!
//! Every architecture shares the same skeleton: embed tokens (frozen
//! pretrained vectors by default; index 0 is the zero PAD row, the last row
//! the zero UNK row), run the architecture-specific feature extractor, apply
//! one dropout layer, then a dense layer to 6 logits and softmax.
//!
//! * `mean_mlp` — masked mean of token vectors through a ReLU dense stack
//!   (an empty stack makes it a plain linear map, handy for exact checks).
//! * `cnn` — 1-D convolutions of widths 3/4/5 (64 filters each, "same"
//!   padding), ReLU, global max pool, concatenated.
//! * `lstm` / `bilstm` — recurrent encoders, final hidden state (both
//!   directions concatenated for the bidirectional variant).
//! * `cnn_lstm` — the width-3 convolution block feeding the recurrent block.
//!
//! Initialization is scaled-uniform (Glorot) per tensor in declaration
//! order from a seeded stream, biases zero except LSTM forget gates at 1.
//! Gradients — both with respect to parameters (training) and with respect
//! to the embedded input (integrated gradients) — come from the hand-written
//! backward passes in [`net`]; the attribution target is always the
//! pre-softmax logit of the target class.

mod io;
mod net;

pub use io::{load_model, save_model};

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embeddings::EmbeddingTable;
use crate::linalg::Matrix;
use crate::num::Real;
use crate::rng::{derive_seed, derive_seed_indexed, seeded_rng};
use crate::{Error, Result, NUM_CLASSES};

use net::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, lstm_backward, lstm_forward, max_pool, relu_backward, relu_forward,
    ConvTrace, DropoutTrace, LstmTrace, ParamLayout,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    MeanMlp,
    Cnn,
    Lstm,
    BiLstm,
    CnnLstm,
}

impl ArchKind {
    pub const ALL: [ArchKind; 5] = [
        ArchKind::MeanMlp,
        ArchKind::Cnn,
        ArchKind::Lstm,
        ArchKind::BiLstm,
        ArchKind::CnnLstm,
    ];

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ArchKind::MeanMlp => "MeanMLP",
            ArchKind::Cnn => "CNN",
            ArchKind::Lstm => "LSTM",
            ArchKind::BiLstm => "BiLSTM",
            ArchKind::CnnLstm => "CNN-LSTM",
        }
    }

    pub fn flag_name(self) -> &'static str {
        match self {
            ArchKind::MeanMlp => "mean_mlp",
            ArchKind::Cnn => "cnn",
            ArchKind::Lstm => "lstm",
            ArchKind::BiLstm => "bilstm",
            ArchKind::CnnLstm => "cnn_lstm",
        }
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_mlp" => Ok(ArchKind::MeanMlp),
            "cnn" => Ok(ArchKind::Cnn),
            "lstm" => Ok(ArchKind::Lstm),
            "bilstm" => Ok(ArchKind::BiLstm),
            "cnn_lstm" => Ok(ArchKind::CnnLstm),
            other => Err(Error::UnsupportedArch(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Hyperparameters of one architecture. Unused fields are ignored by kinds
/// that don't read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    /// Convolution widths (cnn uses all, cnn_lstm the first).
    pub conv_widths: Vec<usize>,
    pub conv_filters: usize,
    /// Recurrent hidden size per direction.
    pub hidden_size: usize,
    /// Dense ReLU stack for mean_mlp; empty means a plain linear head.
    pub dense_sizes: Vec<usize>,
    /// Dropout rate of the single pre-head dropout layer.
    pub dropout: f64,
    pub trainable_embeddings: bool,
}

impl Architecture {
    pub fn new(kind: ArchKind) -> Self {
        Architecture {
            kind,
            conv_widths: vec![3, 4, 5],
            conv_filters: 64,
            hidden_size: 64,
            dense_sizes: match kind {
                ArchKind::MeanMlp => vec![64],
                _ => Vec::new(),
            },
            dropout: 0.3,
            trainable_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::UnsupportedArch(msg));
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0,1)", self.dropout));
        }
        match self.kind {
            ArchKind::MeanMlp => {
                if self.dense_sizes.iter().any(|&s| s == 0) {
                    return err("dense layer size must be positive".into());
                }
            }
            ArchKind::Cnn => {
                if self.conv_widths.is_empty() || self.conv_widths.iter().any(|&w| w == 0) {
                    return err("cnn needs at least one positive filter width".into());
                }
                if self.conv_filters == 0 {
                    return err("filter count must be positive".into());
                }
            }
            ArchKind::Lstm | ArchKind::BiLstm => {
                if self.hidden_size == 0 {
                    return err("hidden size must be positive".into());
                }
            }
            ArchKind::CnnLstm => {
                if self.conv_widths.is_empty() || self.conv_widths[0] == 0 {
                    return err("cnn_lstm needs a positive filter width".into());
                }
                if self.conv_filters == 0 || self.hidden_size == 0 {
                    return err("filter count and hidden size must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Width of the feature vector entering the dropout + output head.
    fn head_input_width(&self, dim: usize) -> usize {
        match self.kind {
            ArchKind::MeanMlp => self.dense_sizes.last().copied().unwrap_or(dim),
            ArchKind::Cnn => self.conv_filters * self.conv_widths.len(),
            ArchKind::Lstm => self.hidden_size,
            ArchKind::BiLstm => 2 * self.hidden_size,
            ArchKind::CnnLstm => self.hidden_size,
        }
    }

    fn build_layout(&self, dim: usize) -> ParamLayout {
        let mut layout = ParamLayout::default();
        match self.kind {
            ArchKind::MeanMlp => {
                let mut prev = dim;
                for (i, &h) in self.dense_sizes.iter().enumerate() {
                    layout.push(&format!("dense{i}.w"), h, prev);
                    layout.push(&format!("dense{i}.b"), h, 1);
                    prev = h;
                }
            }
            ArchKind::Cnn => {
                for &w in &self.conv_widths {
                    layout.push(&format!("conv{w}.w"), self.conv_filters, w * dim);
                    layout.push(&format!("conv{w}.b"), self.conv_filters, 1);
                }
            }
            ArchKind::Lstm => {
                let h = self.hidden_size;
                layout.push("lstm.w", 4 * h, dim);
                layout.push("lstm.u", 4 * h, h);
                layout.push("lstm.b", 4 * h, 1);
            }
            ArchKind::BiLstm => {
                let h = self.hidden_size;
                for dir in ["fwd", "bwd"] {
                    layout.push(&format!("lstm_{dir}.w"), 4 * h, dim);
                    layout.push(&format!("lstm_{dir}.u"), 4 * h, h);
                    layout.push(&format!("lstm_{dir}.b"), 4 * h, 1);
                }
            }
            ArchKind::CnnLstm => {
                let w = self.conv_widths[0];
                let h = self.hidden_size;
                layout.push("conv.w", self.conv_filters, w * dim);
                layout.push("conv.b", self.conv_filters, 1);
                layout.push("lstm.w", 4 * h, self.conv_filters);
                layout.push("lstm.u", 4 * h, h);
                layout.push("lstm.b", 4 * h, 1);
            }
        }
        layout.push("out.w", NUM_CLASSES, self.head_input_width(dim));
        layout.push("out.b", NUM_CLASSES, 1);
        layout
    }
}

/// Adam settings and schedule for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Published schedule: batch 128, 20 epochs, Adam; learning rate 5e-4
    /// for cnn_lstm and 1.46e-3 for everything else.
    pub fn for_arch(kind: ArchKind, seed: u64) -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 20,
            learning_rate: match kind {
                ArchKind::CnnLstm => 5e-4,
                _ => 1.46e-3,
            },
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Numeric("batch size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Numeric("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Loss/accuracy trace of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

/// Per-class F1, accuracy, and the confusion matrix behind them.
/// `confusion[gold][pred]` counts; row sums are the class supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class_f1: [f64; NUM_CLASSES],
    pub accuracy: f64,
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub support: [u64; NUM_CLASSES],
}

impl MetricsReport {
    pub fn from_confusion(confusion: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        let mut per_class_f1 = [0.0; NUM_CLASSES];
        let mut support = [0u64; NUM_CLASSES];
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        for c in 0..NUM_CLASSES {
            let tp = confusion[c][c] as f64;
            let fp: f64 = (0..NUM_CLASSES)
                .filter(|&g| g != c)
                .map(|g| confusion[g][c] as f64)
                .sum();
            let fn_: f64 = (0..NUM_CLASSES)
                .filter(|&p| p != c)
                .map(|p| confusion[c][p] as f64)
                .sum();
            support[c] = confusion[c].iter().sum();
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            per_class_f1[c] = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
        }
        MetricsReport {
            per_class_f1,
            accuracy: if total > 0 { trace as f64 / total as f64 } else { 0.0 },
            confusion,
            support,
        }
    }
}

/// A classifier: architecture, vocabulary, embedding matrix, flat parameter
/// buffer. Training mutates it exclusively; a trained model is immutable and
/// serves concurrent forward/gradient calls (workspaces are per-call).
#[derive(Debug, Clone)]
pub struct Model<R = f64> {
    arch: Architecture,
    /// (V+2) × dim; row 0 PAD (zero), rows 1..=V table vectors, row V+1 UNK (zero).
    embedding: Matrix<R>,
    vocab: IndexMap<String, usize>,
    max_len: usize,
    seed: u64,
    params: Vec<R>,
    layout: ParamLayout,
    trained_with: Option<TrainConfig>,
}

enum ArchTrace<R> {
    MeanMlp {
        pooled: Vec<R>,
        pres: Vec<Vec<R>>,
        acts: Vec<Vec<R>>,
    },
    Cnn {
        branches: Vec<(ConvTrace<R>, Vec<Option<usize>>)>,
    },
    Lstm {
        t: LstmTrace<R>,
    },
    BiLstm {
        fwd: LstmTrace<R>,
        bwd: LstmTrace<R>,
        x_rev: Matrix<R>,
    },
    CnnLstm {
        conv: ConvTrace<R>,
        t: LstmTrace<R>,
    },
}

struct ForwardTrace<R> {
    arch: ArchTrace<R>,
    dropped: Vec<R>,
    dropout: DropoutTrace<R>,
    logits: Vec<R>,
}

/// Per-example gradients: flat parameter buffer plus sparse embedding rows
/// (only populated when embeddings are trainable).
struct ExampleGrads<R> {
    loss: R,
    params: Vec<R>,
    embedding_rows: Vec<(usize, Vec<R>)>,
}

impl<R: Real> Model<R> {
    /// Deterministically initialize a model from an embedding table.
    pub fn new(
        arch: Architecture,
        table: &EmbeddingTable<R>,
        max_len: usize,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        if max_len == 0 {
            return Err(Error::UnsupportedArch("max_len must be positive".into()));
        }
        let dim = table.dim();
        let vocab_size = table.len();
        let mut embedding = Matrix::zeros(vocab_size + 2, dim);
        let mut vocab = IndexMap::with_capacity(vocab_size);
        for (i, (token, vector)) in table.iter().enumerate() {
            vocab.insert(token.to_owned(), i + 1);
            embedding.row_mut(i + 1).copy_from_slice(vector);
        }

        let layout = arch.build_layout(dim);
        let mut params = vec![R::zero(); layout.total];
        let mut rng = seeded_rng(derive_seed(seed, "init"));
        for entry in &layout.entries {
            let slice = &mut params[entry.offset..entry.offset + entry.len()];
            if entry.name.ends_with(".b") {
                // Biases zero; LSTM forget gates start open at 1.
                if entry.name.contains("lstm") {
                    let h = entry.rows / 4;
                    for v in slice[h..2 * h].iter_mut() {
                        *v = R::one();
                    }
                }
                // Burn the stream uniformly so layouts with equal shapes
                // stay draw-aligned regardless of bias handling.
                continue;
            }
            let limit = (6.0 / (entry.rows + entry.cols) as f64).sqrt();
            for v in slice.iter_mut() {
                let u: f64 = rng.gen();
                *v = R::from_f64_lit(limit * (2.0 * u - 1.0));
            }
        }

        Ok(Model {
            arch,
            embedding,
            vocab,
            max_len,
            seed,
            params,
            layout,
            trained_with: None,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn trained_with(&self) -> Option<&TrainConfig> {
        self.trained_with.as_ref()
    }

    /// Flat parameter buffer (layout order). Mutable access exists for the
    /// optimizer and for finite-difference probes in tests.
    pub fn param_buffer(&self) -> &[R] {
        &self.params
    }

    pub fn param_buffer_mut(&mut self) -> &mut [R] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> &[R] {
        self.layout.slice(&self.params, name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut [R] {
        self.layout.slice_mut(&mut self.params, name)
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.layout.entries.iter().map(|e| e.name.clone()).collect()
    }

    /// Map tokens to vocabulary indices (1..=V; unknown → UNK), truncated to
    /// `max_len`.
    pub fn encode(&self, tokens: &[impl AsRef<str>]) -> Vec<usize> {
        let unk = self.vocab.len() + 1;
        tokens
            .iter()
            .take(self.max_len)
            .map(|t| self.vocab.get(t.as_ref()).copied().unwrap_or(unk))
            .collect()
    }

    /// Embed an index sequence into an `L×dim` matrix. Ids must be within
    /// the vocabulary range; everything from the first PAD (0) on is ignored.
    pub fn embed_ids(&self, ids: &[usize]) -> Result<Matrix<R>> {
        let max = self.vocab.len() + 1;
        let eff = ids.iter().position(|&i| i == 0).unwrap_or(ids.len());
        let eff = eff.min(self.max_len);
        let mut x = Matrix::zeros(eff, self.embedding_dim());
        for (t, &id) in ids[..eff].iter().enumerate() {
            if id > max {
                return Err(Error::IndexOutOfRange { index: id, max });
            }
            x.row_mut(t).copy_from_slice(self.embedding.row(id));
        }
        Ok(x)
    }

    /// Embed tokens directly (encode + embed).
    pub fn embed_tokens(&self, tokens: &[impl AsRef<str>]) -> Matrix<R> {
        self.embed_ids(&self.encode(tokens))
            .expect("encoded ids are in range")
    }

    fn forward_trace(
        &self,
        x: &Matrix<R>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> ForwardTrace<R> {
        let dim = self.embedding_dim();
        debug_assert_eq!(x.cols(), dim);
        let (feat, arch) = match self.arch.kind {
            ArchKind::MeanMlp => {
                let pooled = mean_rows(x, dim);
                let mut pres = Vec::new();
                let mut acts = Vec::new();
                let mut cur = pooled.clone();
                for i in 0..self.arch.dense_sizes.len() {
                    let w = self.tensor(&format!("dense{i}.w"));
                    let b = self.tensor(&format!("dense{i}.b"));
                    let pre = dense_forward(w, b, &cur);
                    let act = relu_forward(&pre);
                    pres.push(pre);
                    cur = act.clone();
                    acts.push(act);
                }
                (cur, ArchTrace::MeanMlp { pooled, pres, acts })
            }
            ArchKind::Cnn => {
                let mut feat = Vec::new();
                let mut branches = Vec::new();
                for &wd in &self.arch.conv_widths {
                    let w = self.tensor(&format!("conv{wd}.w"));
                    let b = self.tensor(&format!("conv{wd}.b"));
                    let trace = conv1d_forward(w, b, x, wd);
                    let (pooled, arg) = max_pool(&trace.act);
                    feat.extend(pooled);
                    branches.push((trace, arg));
                }
                (feat, ArchTrace::Cnn { branches })
            }
            ArchKind::Lstm => {
                let t = lstm_forward(
                    self.tensor("lstm.w"),
                    self.tensor("lstm.u"),
                    self.tensor("lstm.b"),
                    x,
                    self.arch.hidden_size,
                );
                (t.final_state(), ArchTrace::Lstm { t })
            }
            ArchKind::BiLstm => {
                let x_rev = reverse_rows(x);
                let fwd = lstm_forward(
                    self.tensor("lstm_fwd.w"),
                    self.tensor("lstm_fwd.u"),
                    self.tensor("lstm_fwd.b"),
                    x,
                    self.arch.hidden_size,
                );
                let bwd = lstm_forward(
                    self.tensor("lstm_bwd.w"),
                    self.tensor("lstm_bwd.u"),
                    self.tensor("lstm_bwd.b"),
                    &x_rev,
                    self.arch.hidden_size,
                );
                let mut feat = fwd.final_state();
                feat.extend(bwd.final_state());
                (feat, ArchTrace::BiLstm { fwd, bwd, x_rev })
            }
            ArchKind::CnnLstm => {
                let wd = self.arch.conv_widths[0];
                let conv = conv1d_forward(self.tensor("conv.w"), self.tensor("conv.b"), x, wd);
                let t = lstm_forward(
                    self.tensor("lstm.w"),
                    self.tensor("lstm.u"),
                    self.tensor("lstm.b"),
                    &conv.act,
                    self.arch.hidden_size,
                );
                (t.final_state(), ArchTrace::CnnLstm { conv, t })
            }
        };

        let (dropped, dropout) = dropout_forward(&feat, self.arch.dropout, dropout_rng);
        let logits = dense_forward(self.tensor("out.w"), self.tensor("out.b"), &dropped);
        ForwardTrace {
            arch,
            dropped,
            dropout,
            logits,
        }
    }

    /// Backward pass from d(logits); returns flat parameter gradients and
    /// the gradient with respect to the embedded input rows.
    fn backward(
        &self,
        x: &Matrix<R>,
        trace: &ForwardTrace<R>,
        dlogits: &[R],
    ) -> (Vec<R>, Matrix<R>) {
        let dim = self.embedding_dim();
        let mut grads = vec![R::zero(); self.layout.total];
        let mut dx = Matrix::zeros(x.rows(), dim);

        // Head: dense then dropout.
        let d_dropped = {
            let w = self.tensor("out.w");
            let mut dw = vec![R::zero(); w.len()];
            let mut db = vec![R::zero(); NUM_CLASSES];
            let d = dense_backward(w, &trace.dropped, dlogits, &mut dw, &mut db);
            self.store_grad(&mut grads, "out.w", &dw);
            self.store_grad(&mut grads, "out.b", &db);
            d
        };
        let d_feat = dropout_backward(&trace.dropout, &d_dropped);

        match (&trace.arch, self.arch.kind) {
            (ArchTrace::MeanMlp { pooled, pres, acts }, ArchKind::MeanMlp) => {
                let mut d_cur = d_feat;
                for i in (0..self.arch.dense_sizes.len()).rev() {
                    let d_pre = relu_backward(&pres[i], &d_cur);
                    let input = if i == 0 { pooled } else { &acts[i - 1] };
                    let w = self.tensor(&format!("dense{i}.w"));
                    let mut dw = vec![R::zero(); w.len()];
                    let mut db = vec![R::zero(); d_pre.len()];
                    d_cur = dense_backward(w, input, &d_pre, &mut dw, &mut db);
                    self.store_grad(&mut grads, &format!("dense{i}.w"), &dw);
                    self.store_grad(&mut grads, &format!("dense{i}.b"), &db);
                }
                // d(pooled) spreads evenly over the rows that formed the mean.
                if x.rows() > 0 {
                    let inv = R::one() / R::from_usize_lit(x.rows());
                    for t in 0..x.rows() {
                        for u in 0..dim {
                            dx.set(t, u, d_cur[u] * inv);
                        }
                    }
                }
            }
            (ArchTrace::Cnn { branches }, ArchKind::Cnn) => {
                let f = self.arch.conv_filters;
                for (bi, &wd) in self.arch.conv_widths.iter().enumerate() {
                    let (trace_c, argmax) = &branches[bi];
                    let d_branch = &d_feat[bi * f..(bi + 1) * f];
                    let mut dact = Matrix::zeros(x.rows(), f);
                    for (fi, arg) in argmax.iter().enumerate() {
                        if let Some(t) = arg {
                            dact.set(*t, fi, d_branch[fi]);
                        }
                    }
                    let wname = format!("conv{wd}.w");
                    let w = self.tensor(&wname);
                    let mut dw = vec![R::zero(); w.len()];
                    let mut db = vec![R::zero(); f];
                    conv1d_backward(w, x, trace_c, &dact, &mut dw, &mut db, &mut dx);
                    self.store_grad(&mut grads, &wname, &dw);
                    self.store_grad(&mut grads, &format!("conv{wd}.b"), &db);
                }
            }
            (ArchTrace::Lstm { t }, ArchKind::Lstm) => {
                self.lstm_branch_backward("lstm", x, t, &d_feat, &mut grads, &mut dx);
            }
            (ArchTrace::BiLstm { fwd, bwd, x_rev }, ArchKind::BiLstm) => {
                let h = self.arch.hidden_size;
                self.lstm_branch_backward("lstm_fwd", x, fwd, &d_feat[..h], &mut grads, &mut dx);
                let mut dx_rev = Matrix::zeros(x.rows(), dim);
                self.lstm_branch_backward("lstm_bwd", x_rev, bwd, &d_feat[h..], &mut grads, &mut dx_rev);
                let rows = x.rows();
                for t in 0..rows {
                    for u in 0..dim {
                        let v = dx.get(t, u) + dx_rev.get(rows - 1 - t, u);
                        dx.set(t, u, v);
                    }
                }
            }
            (ArchTrace::CnnLstm { conv, t }, ArchKind::CnnLstm) => {
                let f = self.arch.conv_filters;
                let mut d_seq = Matrix::zeros(x.rows(), f);
                self.lstm_branch_backward("lstm", &conv.act, t, &d_feat, &mut grads, &mut d_seq);
                let w = self.tensor("conv.w");
                let mut dw = vec![R::zero(); w.len()];
                let mut db = vec![R::zero(); f];
                conv1d_backward(w, x, conv, &d_seq, &mut dw, &mut db, &mut dx);
                self.store_grad(&mut grads, "conv.w", &dw);
                self.store_grad(&mut grads, "conv.b", &db);
            }
            _ => unreachable!("trace kind always matches architecture kind"),
        }
        (grads, dx)
    }

    fn store_grad(&self, grads: &mut [R], name: &str, src: &[R]) {
        let e = self.layout.entry(name);
        grads[e.offset..e.offset + e.len()].copy_from_slice(src);
    }

    fn lstm_branch_backward(
        &self,
        prefix: &str,
        x: &Matrix<R>,
        trace: &LstmTrace<R>,
        dh: &[R],
        grads: &mut [R],
        dx: &mut Matrix<R>,
    ) {
        let w = self.tensor(&format!("{prefix}.w"));
        let u = self.tensor(&format!("{prefix}.u"));
        let mut dw = vec![R::zero(); w.len()];
        let mut du = vec![R::zero(); u.len()];
        let mut db = vec![R::zero(); self.tensor(&format!("{prefix}.b")).len()];
        lstm_backward(w, u, x, trace, dh, &mut dw, &mut du, &mut db, dx);
        self.store_grad(grads, &format!("{prefix}.w"), &dw);
        self.store_grad(grads, &format!("{prefix}.u"), &du);
        self.store_grad(grads, &format!("{prefix}.b"), &db);
    }

    /// Pre-softmax logits of an embedded input (evaluation mode).
    pub fn logits_from_embedded(&self, x: &Matrix<R>) -> Result<Vec<R>> {
        if !x.all_finite() {
            return Err(Error::Numeric("non-finite embedded input".into()));
        }
        Ok(self.forward_trace(x, None).logits)
    }

    /// Class probabilities for an index sequence (evaluation mode; dropout
    /// off). Softmax output sums to 1 within 1e-9.
    pub fn forward_ids(&self, ids: &[usize]) -> Result<Vec<R>> {
        let x = self.embed_ids(ids)?;
        let logits = self.forward_trace(&x, None).logits;
        Ok(softmax(&logits))
    }

    /// Class probabilities for raw tokens.
    pub fn predict_tokens(&self, tokens: &[impl AsRef<str>]) -> Vec<R> {
        let x = self.embed_tokens(tokens);
        softmax(&self.forward_trace(&x, None).logits)
    }

    pub fn predict_class(&self, tokens: &[impl AsRef<str>]) -> usize {
        argmax(&self.predict_tokens(tokens))
    }

    /// d(logit of `target_class`) / d(embedded input), evaluation mode.
    pub fn input_gradients(&self, x: &Matrix<R>, target_class: usize) -> Result<Matrix<R>> {
        if target_class >= NUM_CLASSES {
            return Err(Error::Numeric(format!(
                "target class {target_class} outside 0..{NUM_CLASSES}"
            )));
        }
        if !x.all_finite() {
            return Err(Error::Numeric("non-finite embedded input".into()));
        }
        let trace = self.forward_trace(x, None);
        let mut dlogits = vec![R::zero(); NUM_CLASSES];
        dlogits[target_class] = R::one();
        let (_, dx) = self.backward(x, &trace, &dlogits);
        Ok(dx)
    }

    /// Cross-entropy loss of one encoded example (evaluation mode).
    pub fn loss_on_example(&self, ids: &[usize], label: usize) -> Result<R> {
        let x = self.embed_ids(ids)?;
        let logits = self.forward_trace(&x, None).logits;
        Ok(cross_entropy(&logits, label))
    }

    /// dLoss/dParams for one example (evaluation mode; used by the
    /// gradient-check suites).
    pub fn parameter_gradients(&self, ids: &[usize], label: usize) -> Result<Vec<R>> {
        let x = self.embed_ids(ids)?;
        let g = self.example_grads(&x, label, None);
        Ok(g.params)
    }

    fn example_grads(
        &self,
        x: &Matrix<R>,
        label: usize,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> ExampleGrads<R> {
        let trace = self.forward_trace(x, dropout_rng);
        let probs = softmax(&trace.logits);
        let loss = cross_entropy(&trace.logits, label);
        let mut dlogits = probs;
        dlogits[label] -= R::one();
        let (params, dx) = self.backward(x, &trace, &dlogits);
        let embedding_rows = if self.arch.trainable_embeddings {
            (0..x.rows()).map(|t| (t, dx.row(t).to_vec())).collect()
        } else {
            Vec::new()
        };
        ExampleGrads {
            loss,
            params,
            embedding_rows,
        }
    }

    /// Train with Adam. Deterministic for a fixed config seed: shuffles and
    /// dropout masks come from derived per-epoch / per-example streams, and
    /// batch gradients accumulate in fixed chunk order regardless of how
    /// many worker threads run.
    pub fn train(
        &mut self,
        train: &[Document],
        val: &[Document],
        cfg: &TrainConfig,
    ) -> Result<Vec<EpochStats>> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyInput("empty training set".into()));
        }

        let encoded: Vec<(Vec<usize>, usize)> = train
            .iter()
            .map(|d| (self.encode(&d.tokens), d.label.value()))
            .collect();
        let val_encoded: Vec<(Vec<usize>, usize)> = val
            .iter()
            .map(|d| (self.encode(&d.tokens), d.label.value()))
            .collect();

        let mut adam = Adam::new(self.params.len(), cfg);
        let mut emb_adam = if self.arch.trainable_embeddings {
            Some(Adam::new(self.embedding.as_slice().len(), cfg))
        } else {
            None
        };

        let mut history = Vec::with_capacity(cfg.epochs);
        let n = encoded.len();
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            {
                use rand::seq::SliceRandom;
                let mut rng = seeded_rng(derive_seed_indexed(cfg.seed, "shuffle", epoch as u64));
                order.shuffle(&mut rng);
            }

            let mut epoch_loss = R::zero();
            for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
                let (loss_sum, grad_sum, emb_grad) = self.accumulate_batch(
                    &encoded, batch, cfg.seed, epoch as u64,
                );
                let scale = R::one() / R::from_usize_lit(batch.len());
                let batch_loss = loss_sum * scale;
                if !batch_loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, batch {batch_no}"
                    )));
                }
                epoch_loss += batch_loss * R::from_usize_lit(batch.len());

                let mut grads = grad_sum;
                for g in grads.iter_mut() {
                    *g *= scale;
                }
                adam.step(&mut self.params, &grads);
                if let (Some(opt), Some(mut eg)) = (emb_adam.as_mut(), emb_grad) {
                    for g in eg.as_mut_slice() {
                        *g *= scale;
                    }
                    opt.step(self.embedding.as_mut_slice(), eg.as_slice());
                    // PAD and UNK rows stay zero whatever the optimizer does.
                    let dim = self.embedding.cols();
                    let last = self.embedding.rows() - 1;
                    for u in 0..dim {
                        self.embedding.set(0, u, R::zero());
                        self.embedding.set(last, u, R::zero());
                    }
                }
            }

            let val_accuracy = if val_encoded.is_empty() {
                None
            } else {
                let correct = val_encoded
                    .iter()
                    .filter(|(ids, label)| {
                        argmax(&self.forward_ids(ids).expect("valid ids")) == *label
                    })
                    .count();
                Some(correct as f64 / val_encoded.len() as f64)
            };
            history.push(EpochStats {
                epoch,
                train_loss: (epoch_loss / R::from_usize_lit(n)).to_f64_lit(),
                val_accuracy,
            });
        }
        self.trained_with = Some(cfg.clone());
        Ok(history)
    }

    /// Sum per-example gradients over a batch. Examples are processed in
    /// fixed chunks of 16 that may run on any number of threads; chunk
    /// results combine in chunk order, so the sum is bitwise independent of
    /// thread count.
    fn accumulate_batch(
        &self,
        encoded: &[(Vec<usize>, usize)],
        batch: &[usize],
        seed: u64,
        epoch: u64,
    ) -> (R, Vec<R>, Option<Matrix<R>>) {
        const CHUNK: usize = 16;
        let n = encoded.len() as u64;
        // (vocab row id, d(embedding row)) pairs, per chunk.
        type EmbRows<R> = Vec<(usize, Vec<R>)>;
        let chunk_results: Vec<(R, Vec<R>, EmbRows<R>)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut loss = R::zero();
                let mut grads = vec![R::zero(); self.params.len()];
                let mut emb: EmbRows<R> = Vec::new();
                for &idx in chunk {
                    let (ids, label) = &encoded[idx];
                    let x = self.embed_ids(ids).expect("encoded ids in range");
                    let mut rng = seeded_rng(derive_seed_indexed(
                        seed,
                        "dropout",
                        epoch * n + idx as u64,
                    ));
                    let g = self.example_grads(&x, *label, Some(&mut rng));
                    loss += g.loss;
                    for (acc, v) in grads.iter_mut().zip(&g.params) {
                        *acc += *v;
                    }
                    for (t, row) in g.embedding_rows {
                        emb.push((ids[t], row));
                    }
                }
                (loss, grads, emb)
            })
            .collect();

        let mut loss = R::zero();
        let mut grads = vec![R::zero(); self.params.len()];
        let mut emb_grad = if self.arch.trainable_embeddings {
            Some(Matrix::zeros(self.embedding.rows(), self.embedding.cols()))
        } else {
            None
        };
        for (l, g, emb_rows) in chunk_results {
            loss += l;
            for (acc, v) in grads.iter_mut().zip(&g) {
                *acc += *v;
            }
            if let Some(eg) = emb_grad.as_mut() {
                for (id, row) in emb_rows {
                    for (acc, v) in eg.row_mut(id).iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
        }
        (loss, grads, emb_grad)
    }

    /// Argmax evaluation over a labeled set.
    pub fn evaluate(&self, docs: &[Document]) -> Result<MetricsReport> {
        if docs.is_empty() {
            return Err(Error::EmptyInput("empty evaluation set".into()));
        }
        let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for d in docs {
            let pred = self.predict_class(&d.tokens);
            confusion[d.label.value()][pred] += 1;
        }
        Ok(MetricsReport::from_confusion(confusion))
    }
}

fn mean_rows<R: Real>(x: &Matrix<R>, dim: usize) -> Vec<R> {
    let mut pooled = vec![R::zero(); dim];
    if x.rows() == 0 {
        return pooled;
    }
    for t in 0..x.rows() {
        for (p, &v) in pooled.iter_mut().zip(x.row(t)) {
            *p += v;
        }
    }
    let inv = R::one() / R::from_usize_lit(x.rows());
    for p in pooled.iter_mut() {
        *p *= inv;
    }
    pooled
}

fn reverse_rows<R: Real>(x: &Matrix<R>) -> Matrix<R> {
    let mut rev = Matrix::zeros(x.rows(), x.cols());
    for t in 0..x.rows() {
        rev.row_mut(t).copy_from_slice(x.row(x.rows() - 1 - t));
    }
    rev
}

pub fn softmax<R: Real>(logits: &[R]) -> Vec<R> {
    let mx = logits.iter().copied().fold(R::neg_infinity(), R::max);
    let exps: Vec<R> = logits.iter().map(|&v| (v - mx).exp()).collect();
    let total: R = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// −log p(label), computed from logits via log-sum-exp.
pub fn cross_entropy<R: Real>(logits: &[R], label: usize) -> R {
    let mx = logits.iter().copied().fold(R::neg_infinity(), R::max);
    let lse: R = logits.iter().map(|&v| (v - mx).exp()).sum::<R>().ln() + mx;
    lse - logits[label]
}

pub fn argmax<R: Real>(values: &[R]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct Adam<R> {
    m: Vec<R>,
    v: Vec<R>,
    t: u64,
    lr: R,
    beta1: R,
    beta2: R,
    eps: R,
}

impl<R: Real> Adam<R> {
    fn new(len: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![R::zero(); len],
            v: vec![R::zero(); len],
            t: 0,
            lr: R::from_f64_lit(cfg.learning_rate),
            beta1: R::from_f64_lit(cfg.beta1),
            beta2: R::from_f64_lit(cfg.beta2),
            eps: R::from_f64_lit(cfg.epsilon),
        }
    }

    fn step(&mut self, params: &mut [R], grads: &[R]) {
        self.t += 1;
        let t = R::from_f64_lit(self.t as f64);
        let bc1 = R::one() - self.beta1.powf(t);
        let bc2 = R::one() - self.beta2.powf(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (R::one() - self.beta1) * g;
            *v = self.beta2 * *v + (R::one() - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p = *p - self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
