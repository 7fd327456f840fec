//! Pretrained word-vector loading and mean-pooled document vectors.
//!
//! File format is the usual text layout: one `token f1 f2 ... fd` line per
//! word, space-separated. Vectors are held as the generic scalar (the
//! pipeline loads `f64` so gradient checks downstream have headroom, even
//! though distribution files carry fewer digits).

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use indexmap::IndexMap;

use crate::num::Real;
use crate::{Error, Result};

/// What `doc_vector` does with out-of-vocabulary tokens.
///
/// `Skip` (the default) ignores them when averaging, which keeps zero vectors
/// from dragging the mean toward the origin. `Zero` counts them as zero
/// vectors, preserving the denominator for paths that care about position
/// counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    #[default]
    Skip,
    Zero,
}

/// Immutable token → vector table of fixed dimension.
///
/// Entries keep file order (first occurrence wins on duplicates), so anything
/// derived from iteration order is deterministic.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<R = f64> {
    dim: usize,
    entries: IndexMap<String, Vec<R>>,
    oov_policy: OovPolicy,
    warnings: Vec<String>,
}

/// Mean-pooled document vector plus the all-OOV marker.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVector<R> {
    pub values: Vec<R>,
    pub all_oov: bool,
}

impl<R: Real> EmbeddingTable<R> {
    /// Load a table, enforcing `expected_dim` floats per line.
    pub fn load(path: &Path, expected_dim: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut entries: IndexMap<String, Vec<R>> = IndexMap::new();
        let mut warnings = Vec::new();

        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap().to_owned();
            let mut vector = Vec::with_capacity(expected_dim);
            for part in parts {
                let v: f64 = part.parse().map_err(|_| Error::EmbeddingParse {
                    path: path.to_owned(),
                    line: line_no,
                    msg: format!("unparseable float {part:?}"),
                })?;
                vector.push(R::from_f64_lit(v));
            }
            if vector.len() != expected_dim {
                return Err(Error::EmbeddingParse {
                    path: path.to_owned(),
                    line: line_no,
                    msg: format!("expected {expected_dim} floats, found {}", vector.len()),
                });
            }
            if entries.contains_key(&token) {
                warnings.push(format!(
                    "duplicate token {token:?} at line {line_no}; keeping first occurrence"
                ));
                continue;
            }
            entries.insert(token, vector);
        }

        Ok(EmbeddingTable {
            dim: expected_dim,
            entries,
            oov_policy: OovPolicy::default(),
            warnings,
        })
    }

    /// Build a table in memory (tests, synthetic corpora).
    pub fn from_entries(dim: usize, pairs: Vec<(String, Vec<R>)>) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (token, v) in pairs {
            if v.len() != dim {
                return Err(Error::Dimension(format!(
                    "vector for {token:?} has length {}, table dim is {dim}",
                    v.len()
                )));
            }
            entries.entry(token).or_insert(v);
        }
        Ok(EmbeddingTable {
            dim,
            entries,
            oov_policy: OovPolicy::default(),
            warnings: Vec::new(),
        })
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    /// Warnings accumulated at load time (duplicate tokens).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Tokens in file order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[R])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Exact-match lookup. Case folding happens upstream in tokenization.
    pub fn lookup(&self, token: &str) -> Option<&[R]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    /// Arithmetic mean of the tokens' vectors under the table's OOV policy.
    /// All tokens OOV yields the zero vector with `all_oov` set.
    pub fn doc_vector(&self, tokens: &[impl AsRef<str>]) -> Result<DocVector<R>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("doc_vector over no tokens".into()));
        }
        let mut sum = vec![R::zero(); self.dim];
        let mut in_vocab = 0usize;
        for t in tokens {
            if let Some(v) = self.lookup(t.as_ref()) {
                for (s, &x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                in_vocab += 1;
            }
        }
        if in_vocab == 0 {
            return Ok(DocVector {
                values: sum,
                all_oov: true,
            });
        }
        let denom = match self.oov_policy {
            OovPolicy::Skip => in_vocab,
            OovPolicy::Zero => tokens.len(),
        };
        let inv = R::one() / R::from_usize_lit(denom);
        for s in sum.iter_mut() {
            *s *= inv;
        }
        Ok(DocVector {
            values: sum,
            all_oov: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn table(pairs: &[(&str, &[f64])]) -> EmbeddingTable {
        EmbeddingTable::from_entries(
            pairs[0].1.len(),
            pairs
                .iter()
                .map(|(t, v)| (t.to_string(), v.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_two_line_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "job 0.1 0.2 0.3").unwrap();
        writeln!(f, "life -1.0 0.5 2.5").unwrap();
        let t: EmbeddingTable = EmbeddingTable::load(f.path(), 3).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.lookup("life"), Some(&[-1.0, 0.5, 2.5][..]));
    }

    #[test]
    fn wrong_float_count_reports_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "ok 1.0 2.0 3.0").unwrap();
        writeln!(f, "short 1.0 2.0").unwrap();
        let err = EmbeddingTable::<f64>::load(f.path(), 3).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn unparseable_float_reports_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "bad 1.0 x").unwrap();
        let err = EmbeddingTable::<f64>::load(f.path(), 2).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn duplicate_token_keeps_first_and_warns() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a 1.0").unwrap();
        writeln!(f, "b 2.0").unwrap();
        writeln!(f, "a 9.0").unwrap();
        let t: EmbeddingTable = EmbeddingTable::load(f.path(), 1).unwrap();
        assert_eq!(t.lookup("a"), Some(&[1.0][..]));
        assert_eq!(t.warnings().len(), 1);
        assert!(t.warnings()[0].contains("line 3"));
    }

    #[test]
    fn lookup_is_exact_match_only() {
        let t = table(&[("job", &[1.0, 0.0])]);
        assert!(t.lookup("job").is_some());
        assert!(t.lookup("Job").is_none());
        assert!(t.lookup("jobs").is_none());
    }

    #[test]
    fn doc_vector_means_known_tokens() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let dv = t.doc_vector(&["a", "b"]).unwrap();
        assert_eq!(dv.values, [0.5, 0.5]);
        assert!(!dv.all_oov);
    }

    #[test]
    fn doc_vector_single_token_is_identity() {
        let t = table(&[("a", &[0.25, -0.5])]);
        assert_eq!(t.doc_vector(&["a"]).unwrap().values, [0.25, -0.5]);
    }

    #[test]
    fn doc_vector_skip_vs_zero_policy() {
        let t = table(&[("a", &[1.0, 1.0])]);
        let skip = t.doc_vector(&["a", "zzz"]).unwrap();
        assert_eq!(skip.values, [1.0, 1.0]);
        let zero = t.clone().with_oov_policy(OovPolicy::Zero);
        assert_eq!(zero.doc_vector(&["a", "zzz"]).unwrap().values, [0.5, 0.5]);
    }

    #[test]
    fn doc_vector_all_oov_flags() {
        let t = table(&[("a", &[1.0])]);
        let dv = t.doc_vector(&["x", "y"]).unwrap();
        assert!(dv.all_oov);
        assert_eq!(dv.values, [0.0]);
    }

    #[test]
    fn doc_vector_empty_tokens_is_error() {
        let t = table(&[("a", &[1.0])]);
        assert!(t.doc_vector(&Vec::<String>::new()).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_tokens() -> impl Strategy<Value = Vec<&'static str>> {
            proptest::collection::vec(
                proptest::sample::select(vec!["a", "b", "c", "oov1", "oov2"]),
                1..12,
            )
        }

        proptest! {
            #[test]
            fn doc_vector_permutation_invariant(tokens in arb_tokens(), rot in 0usize..12) {
                let t = table(&[
                    ("a", &[1.0, -2.0, 0.5]),
                    ("b", &[0.0, 3.0, 1.0]),
                    ("c", &[-1.0, 0.0, 0.0]),
                ]);
                let mut rotated = tokens.clone();
                rotated.rotate_left(rot % tokens.len().max(1));
                let d1 = t.doc_vector(&tokens).unwrap();
                let d2 = t.doc_vector(&rotated).unwrap();
                for (x, y) in d1.values.iter().zip(&d2.values) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                prop_assert_eq!(d1.all_oov, d2.all_oov);
            }

            #[test]
            fn doc_vector_repeat_invariant(tokens in arb_tokens(), k in 1usize..4) {
                let t = table(&[
                    ("a", &[1.0, -2.0, 0.5]),
                    ("b", &[0.0, 3.0, 1.0]),
                    ("c", &[-1.0, 0.0, 0.0]),
                ]);
                let repeated: Vec<&str> = tokens
                    .iter()
                    .cycle()
                    .take(tokens.len() * k)
                    .copied()
                    .collect();
                let d1 = t.doc_vector(&tokens).unwrap();
                let dk = t.doc_vector(&repeated).unwrap();
                for (x, y) in d1.values.iter().zip(&dk.values) {
                    prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
                }
            }

            #[test]
            fn doc_vector_finite_and_right_length(tokens in arb_tokens()) {
                let t = table(&[("a", &[1.0, -2.0, 0.5]), ("b", &[0.0, 3.0, 1.0])]);
                let dv = t.doc_vector(&tokens).unwrap();
                prop_assert_eq!(dv.values.len(), t.dim());
                prop_assert!(dv.values.iter().all(|v| v.is_finite()));
            }
        }
    }
}
