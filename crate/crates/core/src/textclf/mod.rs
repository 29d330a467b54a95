//! The four text emotion classifiers, a uniform prediction type, and
//! validation-accuracy model selection.

mod bundle;
mod forest;
mod linear;
mod naive_bayes;
mod pipeline;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bundle::{TextClassifier, BUNDLE_FORMAT_VERSION};
pub use forest::{
    train_random_forest, Columns, DecisionTree, FeatureSubsample, ForestHyper, Node,
    RandomForestModel,
};
pub use linear::{
    gradient as linear_gradient, objective as linear_objective, train_linear_svm,
    train_linear_with_history, train_logistic, LinearHyper, LinearKind, LinearModel,
};
pub use naive_bayes::{train_naive_bayes, NaiveBayesModel};
pub use pipeline::{train_all, train_text_models, TextTrainConfig, TextTrainReport};

use crate::features::SparseVector;
use crate::label::NUM_LABELS;
use crate::{EmotionLabel, Error, Result};

pub(crate) fn softmax(z: &[f64; NUM_LABELS]) -> [f64; NUM_LABELS] {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - max).exp());
    let total: f64 = e.iter().sum();
    e.map(|v| v / total)
}

/// Non-empty, equal lengths, one shared dimension. Returns the dimension.
pub(crate) fn check_training_set_any(x: &[SparseVector], y: &[EmotionLabel]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching non-empty inputs, got {} rows and {} labels",
            x.len(),
            y.len()
        )));
    }
    let dim = x[0].dimension();
    if let Some(bad) = x.iter().find(|xi| xi.dimension() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.dimension(),
        });
    }
    Ok(dim)
}

/// As [`check_training_set_any`], additionally requiring every label.
pub(crate) fn check_training_set(x: &[SparseVector], y: &[EmotionLabel]) -> Result<usize> {
    let dim = check_training_set_any(x, y)?;
    if let Some(missing) = EmotionLabel::ALL.iter().find(|l| !y.contains(l)) {
        return Err(Error::EmptyClass(missing.to_string()));
    }
    Ok(dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextPrediction {
    pub label: EmotionLabel,
    pub scores: [f64; NUM_LABELS],
}

impl TextPrediction {
    pub fn from_scores(scores: [f64; NUM_LABELS]) -> Self {
        TextPrediction {
            label: EmotionLabel::argmax(&scores),
            scores,
        }
    }
}

/// Classifier families, in the tie-break order used by model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    NaiveBayes,
    LinearSvm,
    Logistic,
    RandomForest,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::NaiveBayes,
        ModelKind::LinearSvm,
        ModelKind::Logistic,
        ModelKind::RandomForest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::NaiveBayes => "naive_bayes",
            ModelKind::LinearSvm => "linear_svm",
            ModelKind::Logistic => "logistic_regression",
            ModelKind::RandomForest => "random_forest",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown model kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextModel {
    NaiveBayes(NaiveBayesModel),
    Linear(LinearModel),
    Forest(RandomForestModel),
}

impl TextModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TextModel::NaiveBayes(_) => ModelKind::NaiveBayes,
            TextModel::Linear(m) if m.kind == LinearKind::Svm => ModelKind::LinearSvm,
            TextModel::Linear(_) => ModelKind::Logistic,
            TextModel::Forest(_) => ModelKind::RandomForest,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            TextModel::NaiveBayes(m) => m.dimension(),
            TextModel::Linear(m) => m.dimension,
            TextModel::Forest(m) => m.dimension,
        }
    }
}

pub fn predict_text(model: &TextModel, x: &SparseVector) -> Result<TextPrediction> {
    if x.dimension() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            actual: x.dimension(),
        });
    }
    let scores = match model {
        TextModel::NaiveBayes(m) => m.posterior(x),
        TextModel::Linear(m) => m.scores(x),
        TextModel::Forest(m) => m.proba(x),
    };
    Ok(TextPrediction::from_scores(scores))
}

/// Exact-match fraction of `model` on a labelled set.
pub fn accuracy(model: &TextModel, x: &[SparseVector], y: &[EmotionLabel]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let mut hits = 0usize;
    for (xi, yi) in x.iter().zip(y) {
        if predict_text(model, xi)?.label == *yi {
            hits += 1;
        }
    }
    Ok(hits as f64 / x.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    /// Candidates in [`ModelKind`] order.
    pub per_model_accuracy: Vec<(ModelKind, f64)>,
    pub chosen: ModelKind,
}

impl ModelSelection {
    /// Highest accuracy wins; ties go to the earlier [`ModelKind`].
    pub fn choose(mut per_model_accuracy: Vec<(ModelKind, f64)>) -> Result<Self> {
        per_model_accuracy.sort_by_key(|e| e.0);
        let mut best: Option<(ModelKind, f64)> = None;
        for &(kind, acc) in &per_model_accuracy {
            if best.map_or(true, |(_, b)| acc > b) {
                best = Some((kind, acc));
            }
        }
        let (chosen, _) =
            best.ok_or_else(|| Error::InvalidArgument("no candidate models".into()))?;
        Ok(ModelSelection {
            per_model_accuracy,
            chosen,
        })
    }

    pub fn accuracy_of(&self, kind: ModelKind) -> Option<f64> {
        self.per_model_accuracy
            .iter()
            .find(|e| e.0 == kind)
            .map(|e| e.1)
    }
}

pub fn select_best(
    models: &[TextModel],
    x_val: &[SparseVector],
    y_val: &[EmotionLabel],
) -> Result<ModelSelection> {
    if x_val.is_empty() || x_val.len() != y_val.len() {
        return Err(Error::InvalidArgument(
            "validation set must be non-empty and aligned".into(),
        ));
    }
    let table = models
        .iter()
        .map(|m| Ok((m.kind(), accuracy(m, x_val, y_val)?)))
        .collect::<Result<Vec<_>>>()?;
    ModelSelection::choose(table)
}
