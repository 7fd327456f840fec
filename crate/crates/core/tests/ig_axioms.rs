//! Integrated-gradients axioms: exactness on linear models, zero
//! attributions at the baseline, and the completeness gap shrinking with
//! more path steps.

use causatext_core::corpus::{CauseCategory, Document};
use causatext_core::embeddings::EmbeddingTable;
use causatext_core::explain::{ig_explain, Diagnostics, IgConfig};
use causatext_core::model::{ArchKind, Architecture, Model};
use causatext_core::rng::seeded_rng;
use rand::Rng;

fn random_table(dim: usize, tokens: &[&str], seed: u64) -> EmbeddingTable<f64> {
    let mut rng = seeded_rng(seed);
    EmbeddingTable::from_entries(
        dim,
        tokens
            .iter()
            .map(|t| {
                (
                    t.to_string(),
                    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn linear_model(table: &EmbeddingTable<f64>) -> Model<f64> {
    let mut arch = Architecture::new(ArchKind::MeanMlp);
    arch.dense_sizes = vec![];
    arch.dropout = 0.0;
    Model::new(arch, table, 16, 7).unwrap()
}

#[test]
fn linear_model_attributions_are_exact_for_any_step_count() {
    let table = random_table(4, &["a", "b", "c"], 1);
    let model = linear_model(&table);
    let doc = Document::new("d0", "a c b", CauseCategory::NoReason, None);
    let x = model.embed_tokens(&doc.tokens);
    let target = 4usize;
    let w = model.tensor("out.w");
    let dim = 4;
    let seq = 3.0;

    for steps in [1, 3, 300] {
        let cfg = IgConfig {
            steps,
            ..IgConfig::default()
        };
        let expl = ig_explain(&model, &doc, &cfg, Some(target)).unwrap();
        // logit_target = Σ_u w[target][u]·mean_u(x) + b, so the attribution of
        // token t must be Σ_u w[target][u]·x[t][u]/seq_len, exactly.
        for (pos, (_, _, weight)) in expl.weights.iter().enumerate() {
            let expect: f64 = (0..dim)
                .map(|u| w[target * dim + u] * x.get(pos, u) / seq)
                .sum();
            assert!(
                (weight - expect).abs() <= 1e-10,
                "steps {steps}, pos {pos}: {weight} vs {expect}"
            );
        }
        match expl.diagnostics {
            Diagnostics::Ig { completeness_gap, .. } => {
                assert!(completeness_gap <= 1e-10, "gap {completeness_gap}")
            }
            _ => unreachable!(),
        }
    }
}

#[test]
fn input_equal_to_baseline_attributes_nothing() {
    // All-OOV document: every row embeds to zero, the zero baseline too.
    let table = random_table(4, &["a"], 2);
    let model = linear_model(&table);
    let doc = Document::new("d1", "zz yy xx", CauseCategory::NoReason, None);
    let expl = ig_explain(&model, &doc, &IgConfig::default(), Some(0)).unwrap();
    for (_, _, w) in &expl.weights {
        assert_eq!(*w, 0.0);
    }
}

#[test]
fn completeness_gap_shrinks_with_steps_on_trained_cnn() {
    let vocab: Vec<String> = (0..24).map(|i| format!("w{i}")).collect();
    let refs: Vec<&str> = vocab.iter().map(String::as_str).collect();
    // Kept deliberately small and mild: the m=300 Riemann error scales with
    // the network's ReLU/max-pool kink density.
    let table = {
        let mut rng = seeded_rng(3);
        EmbeddingTable::from_entries(
            4,
            refs.iter()
                .map(|t| {
                    (
                        t.to_string(),
                        (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                    )
                })
                .collect(),
        )
        .unwrap()
    };

    let mut arch = Architecture::new(ArchKind::Cnn);
    arch.conv_widths = vec![2];
    arch.conv_filters = 2;
    let mut model = Model::new(arch, &table, 12, 11).unwrap();

    // A little training so the gradients aren't those of a fresh init.
    let mut rng = seeded_rng(5);
    let docs: Vec<Document> = (0..60)
        .map(|i| {
            let label = i % 6;
            let text: Vec<String> = (0..3)
                .map(|_| format!("w{}", rng.gen_range(0..24).max(label * 4 % 24)))
                .collect();
            Document::new(
                format!("d{i}"),
                text.join(" "),
                CauseCategory::from_value(label as i64).unwrap(),
                None,
            )
        })
        .collect();
    let mut cfg = causatext_core::model::TrainConfig::for_arch(ArchKind::Cnn, 17);
    cfg.epochs = 2;
    cfg.batch_size = 16;
    model.train(&docs, &[], &cfg).unwrap();

    let gap_of = |doc: &Document, steps: usize| -> (f64, f64) {
        let cfg = IgConfig {
            steps,
            ..IgConfig::default()
        };
        let expl = ig_explain(&model, doc, &cfg, None).unwrap();
        match expl.diagnostics {
            Diagnostics::Ig {
                completeness_gap,
                output_delta,
                ..
            } => (completeness_gap, output_delta),
            _ => unreachable!(),
        }
    };

    let mut total_30 = 0.0;
    let mut total_300 = 0.0;
    for i in 0..20 {
        let text: Vec<String> = (0..3).map(|_| format!("w{}", rng.gen_range(0..24))).collect();
        let doc = Document::new(
            format!("t{i}"),
            text.join(" "),
            CauseCategory::NoReason,
            None,
        );
        let (g300, delta) = gap_of(&doc, 300);
        let (g30, _) = gap_of(&doc, 30);
        total_300 += g300;
        total_30 += g30;
        // Relative completeness at m = 300.
        assert!(
            g300 <= 1e-3 * delta.abs().max(1.0),
            "doc {i}: gap {g300} vs delta {delta}"
        );
    }
    assert!(
        total_300 <= total_30,
        "mean gap should shrink with steps: {total_300} vs {total_30}"
    );
}
