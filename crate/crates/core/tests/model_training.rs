//! Training-behavior checks: every architecture can drive the loss to zero
//! on one repeated example, and the CNN learns a synthetic keyword corpus.

use causatext_core::corpus::{CauseCategory, Document};
use causatext_core::embeddings::EmbeddingTable;
use causatext_core::model::{ArchKind, Architecture, Model, TrainConfig};
use causatext_core::rng::seeded_rng;
use rand::Rng;

fn random_table(dim: usize, n: usize, seed: u64) -> EmbeddingTable<f64> {
    let mut rng = seeded_rng(seed);
    EmbeddingTable::from_entries(
        dim,
        (0..n)
            .map(|i| {
                (
                    format!("w{i}"),
                    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn small_arch(kind: ArchKind) -> Architecture {
    let mut arch = Architecture::new(kind);
    arch.conv_widths = match kind {
        ArchKind::Cnn => vec![2, 3],
        _ => vec![2],
    };
    arch.conv_filters = 6;
    arch.hidden_size = 8;
    arch.dense_sizes = match kind {
        ArchKind::MeanMlp => vec![8],
        _ => vec![],
    };
    // Deterministic loss trajectory for the overfit check.
    arch.dropout = 0.0;
    arch
}

#[test]
fn single_example_overfits_within_500_steps_every_architecture() {
    let table = random_table(6, 12, 3);
    let doc = Document::new("d0", "w0 w3 w7 w9", CauseCategory::Medication, None);
    for kind in ArchKind::ALL {
        let mut model = Model::new(small_arch(kind), &table, 8, 5).unwrap();
        // One example per "epoch" = one Adam step per epoch. The published
        // schedule's learning rates are tuned for full corpora; the overfit
        // sanity check uses a plain 0.02.
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 500,
            learning_rate: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 13,
        };
        let docs = vec![doc.clone()];
        let history = model.train(&docs, &[], &cfg).unwrap();
        let reached = history.iter().find(|e| e.train_loss < 0.01);
        assert!(
            reached.is_some(),
            "{kind:?}: loss never dropped below 0.01 (last {})",
            history.last().unwrap().train_loss
        );
    }
}

#[test]
fn cnn_learns_synthetic_keyword_corpus() {
    // 6 classes, 5 signature tokens each, shared filler vocabulary.
    let dim = 8;
    let n_sig = 30;
    let n_fill = 30;
    let table = random_table(dim, n_sig + n_fill, 7);
    let mut rng = seeded_rng(21);
    let mut gen_doc = |i: usize, class: usize| -> Document {
        let mut toks: Vec<String> = Vec::new();
        for _ in 0..4 {
            toks.push(format!("w{}", class * 5 + rng.gen_range(0..5)));
        }
        for _ in 0..6 {
            toks.push(format!("w{}", n_sig + rng.gen_range(0..n_fill)));
        }
        Document::new(
            format!("d{i}"),
            toks.join(" "),
            CauseCategory::from_value(class as i64).unwrap(),
            None,
        )
    };
    let train: Vec<Document> = (0..600).map(|i| gen_doc(i, i % 6)).collect();

    let mut arch = Architecture::new(ArchKind::Cnn);
    arch.conv_filters = 16;
    let mut model = Model::new(arch, &table, 16, 9).unwrap();
    // Small corpus: smaller batches and a faster rate give Adam enough
    // steps to matter inside a unit-test budget.
    let mut cfg = TrainConfig::for_arch(ArchKind::Cnn, 31);
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.learning_rate = 5e-3;
    let history = model.train(&train, &[], &cfg).unwrap();

    let first = history.first().unwrap().train_loss;
    let last = history.last().unwrap().train_loss;
    assert!(
        last < first,
        "training did not reduce loss: {first} -> {last}"
    );
    // 8 epochs on clean signatures should already classify well.
    let report = model.evaluate(&train).unwrap();
    assert!(report.accuracy > 0.8, "train accuracy {}", report.accuracy);
}
