//! Count-vector and TF-IDF features over a [`Vocabulary`].

use std::fmt;
use std::str::FromStr;

use crate::textprep::{TokenizedDoc, Vocabulary};
use crate::{Error, Result};

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dimension: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn zeros(dimension: usize) -> Self {
        SparseVector {
            dimension,
            entries: Vec::new(),
        }
    }

    /// Builds from arbitrary `(index, value)` pairs: sorts, sums duplicates
    /// and drops zeros.
    pub fn from_pairs(dimension: usize, mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        if let Some(&(i, _)) = pairs.iter().find(|(i, _)| *i >= dimension) {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: i + 1,
            });
        }
        pairs.sort_by_key(|p| p.0);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|e| e.1 != 0.0);
        Ok(SparseVector { dimension, entries })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        SparseVector {
            dimension: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn scale(&self, factor: f64) -> SparseVector {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.1 *= factor;
        }
        out.entries.retain(|e| e.1 != 0.0);
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dimension];
        for &(i, v) in &self.entries {
            dense[i] = v;
        }
        dense
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    idf: Vec<f64>,
    doc_count: usize,
}

impl IdfTable {
    pub fn from_parts(idf: Vec<f64>, doc_count: usize) -> Result<Self> {
        if let Some(bad) = idf.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Format(format!("invalid idf weight {bad}")));
        }
        Ok(IdfTable { idf, doc_count })
    }

    pub fn dimension(&self) -> usize {
        self.idf.len()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn weights(&self) -> &[f64] {
        &self.idf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureKind {
    #[default]
    Count,
    TfIdf,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Count => "count",
            FeatureKind::TfIdf => "tfidf",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "count" => Ok(FeatureKind::Count),
            "tfidf" | "tf-idf" => Ok(FeatureKind::TfIdf),
            other => Err(Error::Parse(format!("unknown feature kind `{other}`"))),
        }
    }
}

fn term_counts(doc: &TokenizedDoc, vocab: &Vocabulary) -> Vec<(usize, f64)> {
    let mut ids: Vec<usize> = doc
        .tokens
        .iter()
        .filter_map(|t| vocab.index_of(t))
        .collect();
    ids.sort_unstable();
    let mut counts: Vec<(usize, f64)> = Vec::new();
    for i in ids {
        match counts.last_mut() {
            Some(last) if last.0 == i => last.1 += 1.0,
            _ => counts.push((i, 1.0)),
        }
    }
    counts
}

/// Term counts over the vocabulary; out-of-vocabulary tokens are ignored.
pub fn count_vectorize(doc: &TokenizedDoc, vocab: &Vocabulary) -> SparseVector {
    SparseVector {
        dimension: vocab.len(),
        entries: term_counts(doc, vocab),
    }
}

/// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
pub fn fit_idf(docs: &[TokenizedDoc], vocab: &Vocabulary) -> Result<IdfTable> {
    if docs.is_empty() {
        return Err(Error::InvalidArgument(
            "fit_idf needs at least one document".into(),
        ));
    }
    let mut df = vec![0usize; vocab.len()];
    for doc in docs {
        for (i, _) in term_counts(doc, vocab) {
            df[i] += 1;
        }
    }
    let n = docs.len() as f64;
    let idf = df
        .iter()
        .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    Ok(IdfTable {
        idf,
        doc_count: docs.len(),
    })
}

/// Count × idf, then L2-normalized. An empty doc stays the zero vector.
pub fn tfidf_vectorize(
    doc: &TokenizedDoc,
    vocab: &Vocabulary,
    idf: &IdfTable,
) -> Result<SparseVector> {
    if idf.dimension() != vocab.len() {
        return Err(Error::DimensionMismatch {
            expected: vocab.len(),
            actual: idf.dimension(),
        });
    }
    let mut entries = term_counts(doc, vocab);
    for e in &mut entries {
        e.1 *= idf.idf[e.0];
    }
    let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    entries.retain(|e| e.1 != 0.0);
    Ok(SparseVector {
        dimension: vocab.len(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::build_vocabulary;
    use proptest::prelude::*;

    fn doc(tokens: &[&str]) -> TokenizedDoc {
        TokenizedDoc::new(tokens.iter().copied())
    }

    fn vocab_ab() -> Vocabulary {
        // a appears more often so it gets index 0.
        build_vocabulary(&[doc(&["a", "a", "b"])], 1).unwrap()
    }

    #[test]
    fn counts() {
        let v = vocab_ab();
        let x = count_vectorize(&doc(&["a", "b", "a"]), &v);
        assert_eq!(x.entries(), &[(0, 2.0), (1, 1.0)]);
        let only_a = build_vocabulary(&[doc(&["a"])], 1).unwrap();
        let oov = count_vectorize(&doc(&["z"]), &only_a);
        assert!(oov.is_zero());
        assert_eq!(oov.dimension(), 1);
        assert!(count_vectorize(&doc(&[]), &v).is_zero());
    }

    #[test]
    fn idf_values() {
        let v = build_vocabulary(&[doc(&["a"])], 1).unwrap();
        let t = fit_idf(&[doc(&["a"])], &v).unwrap();
        assert_eq!(t.weights(), &[1.0]);

        // N = 3, df(a) = 1; ln(4/2) + 1 = 1.693147180559945…
        let docs = [doc(&["a"]), doc(&["b"]), doc(&["b"])];
        let v = build_vocabulary(&docs, 1).unwrap();
        let t = fit_idf(&docs, &v).unwrap();
        let a = v.index_of("a").unwrap();
        assert!((t.weights()[a] - 1.6931471805599454).abs() < 1e-12);

        // df = 0 for a term that never occurs in the fitting docs.
        let t = fit_idf(&[doc(&["q"]), doc(&["q"])], &v).unwrap();
        assert!((t.weights()[a] - (3.0f64.ln() + 1.0)).abs() < 1e-12);
        assert!(fit_idf(&[], &v).is_err());
    }

    #[test]
    fn tfidf_values() {
        let v = vocab_ab();
        let idf = IdfTable::from_parts(vec![1.0, 2.0], 3).unwrap();
        let x = tfidf_vectorize(&doc(&["a"]), &v, &idf).unwrap();
        assert_eq!(x.entries(), &[(0, 1.0)]);
        let x = tfidf_vectorize(&doc(&["a", "a", "b"]), &v, &idf).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((x.get(0) - r).abs() < 1e-6 && (x.get(1) - r).abs() < 1e-6);
        assert!(tfidf_vectorize(&doc(&[]), &v, &idf).unwrap().is_zero());
        let short = IdfTable::from_parts(vec![1.0], 1).unwrap();
        assert!(tfidf_vectorize(&doc(&["a"]), &v, &short).is_err());
    }

    #[test]
    fn sparse_from_pairs_normalizes() {
        let x = SparseVector::from_pairs(5, vec![(3, 1.0), (1, 2.0), (3, -1.0), (4, 0.5)]).unwrap();
        assert_eq!(x.entries(), &[(1, 2.0), (4, 0.5)]);
        assert!(SparseVector::from_pairs(2, vec![(2, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn bag_of_words_properties(tokens in proptest::collection::vec("[a-f]", 0..30), seed in any::<u64>()) {
            let corpus = [doc(&["a", "b", "c", "d"]), doc(&["a", "e"])];
            let v = build_vocabulary(&corpus, 1).unwrap();
            let idf = fit_idf(&corpus, &v).unwrap();
            let d = TokenizedDoc { tokens: tokens.clone() };
            let counts = count_vectorize(&d, &v);
            let in_vocab = tokens.iter().filter(|t| v.index_of(t).is_some()).count();
            prop_assert!(counts.entries().iter().all(|e| e.1 >= 1.0 && e.1.fract() == 0.0));
            prop_assert_eq!(counts.entries().iter().map(|e| e.1).sum::<f64>() as usize, in_vocab);
            let tfidf = tfidf_vectorize(&d, &v, &idf).unwrap();
            if in_vocab > 0 {
                prop_assert!((tfidf.norm() - 1.0).abs() < 1e-9);
            }
            let mut shuffled = tokens.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let d2 = TokenizedDoc { tokens: shuffled };
            prop_assert_eq!(count_vectorize(&d2, &v), counts);
            prop_assert_eq!(tfidf_vectorize(&d2, &v, &idf).unwrap(), tfidf);
        }
    }
}
