use crate::features::SparseVector;
use crate::label::NUM_LABELS;
use crate::{EmotionLabel, Error, Result};

/// Multinomial naive Bayes with additive (Laplace) smoothing.
///
/// The raw per-class statistics are kept alongside the derived log
/// parameters so the model can be re-derived exactly after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesModel {
    alpha: f64,
    class_docs: [f64; NUM_LABELS],
    feature_counts: Vec<[f64; NUM_LABELS]>,
    class_log_prior: [f64; NUM_LABELS],
    log_likelihood: Vec<[f64; NUM_LABELS]>,
}

impl NaiveBayesModel {
    /// Rebuilds a model from its sufficient statistics.
    pub fn from_counts(
        alpha: f64,
        class_docs: [f64; NUM_LABELS],
        feature_counts: Vec<[f64; NUM_LABELS]>,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be > 0, got {alpha}"
            )));
        }
        if let Some(c) = (0..NUM_LABELS).find(|&c| class_docs[c] <= 0.0) {
            return Err(Error::EmptyClass(EmotionLabel::ALL[c].to_string()));
        }
        let total_docs: f64 = class_docs.iter().sum();
        let v = feature_counts.len() as f64;
        let mut class_log_prior = [0.0; NUM_LABELS];
        let mut class_total = [0.0; NUM_LABELS];
        for c in 0..NUM_LABELS {
            class_log_prior[c] = (class_docs[c] / total_docs).ln();
            class_total[c] = feature_counts.iter().map(|f| f[c]).sum::<f64>();
        }
        let log_likelihood = feature_counts
            .iter()
            .map(|f| {
                let mut row = [0.0; NUM_LABELS];
                for c in 0..NUM_LABELS {
                    row[c] = ((f[c] + alpha) / (class_total[c] + alpha * v)).ln();
                }
                row
            })
            .collect();
        Ok(NaiveBayesModel {
            alpha,
            class_docs,
            feature_counts,
            class_log_prior,
            log_likelihood,
        })
    }

    pub fn dimension(&self) -> usize {
        self.feature_counts.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn class_docs(&self) -> &[f64; NUM_LABELS] {
        &self.class_docs
    }

    pub fn feature_counts(&self) -> &[[f64; NUM_LABELS]] {
        &self.feature_counts
    }

    pub fn class_log_prior(&self) -> &[f64; NUM_LABELS] {
        &self.class_log_prior
    }

    /// `ln P(term | class)` for one feature index.
    pub fn log_likelihood(&self, feature: usize) -> &[f64; NUM_LABELS] {
        &self.log_likelihood[feature]
    }

    /// Posterior over the four labels.
    pub fn posterior(&self, x: &SparseVector) -> [f64; NUM_LABELS] {
        let mut joint = self.class_log_prior;
        for &(i, v) in x.entries() {
            for c in 0..NUM_LABELS {
                joint[c] += v * self.log_likelihood[i][c];
            }
        }
        super::softmax(&joint)
    }
}

pub fn train_naive_bayes(
    x: &[SparseVector],
    y: &[EmotionLabel],
    alpha: f64,
) -> Result<NaiveBayesModel> {
    let dim = super::check_training_set(x, y)?;
    let mut class_docs = [0.0; NUM_LABELS];
    let mut feature_counts = vec![[0.0; NUM_LABELS]; dim];
    for (xi, yi) in x.iter().zip(y) {
        let c = yi.index();
        class_docs[c] += 1.0;
        for &(j, v) in xi.entries() {
            if v < 0.0 {
                return Err(Error::InvalidArgument(
                    "naive Bayes needs non-negative features".into(),
                ));
            }
            feature_counts[j][c] += v;
        }
    }
    NaiveBayesModel::from_counts(alpha, class_docs, feature_counts)
}
