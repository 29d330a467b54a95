//! End-to-end text training: preprocess, split, build the vocabulary on the
//! training side, vectorize, fit all four classifiers, keep the best.

use serde::Serialize;

use super::{
    select_best, train_linear_svm, train_logistic, train_naive_bayes, train_random_forest,
    ForestHyper, LinearHyper, ModelSelection, TextClassifier, TextModel,
};
use crate::corpus::{split_dataset, LabeledText, SplitSpec};
use crate::features::{
    count_vectorize, fit_idf, tfidf_vectorize, FeatureKind, IdfTable, SparseVector,
};
use crate::textprep::{build_vocabulary, preprocess, TokenizedDoc, Vocabulary, DEFAULT_MIN_COUNT};
use crate::{EmotionLabel, Result};

#[derive(Debug, Clone)]
pub struct TextTrainConfig {
    pub split: SplitSpec,
    pub min_count: usize,
    pub feature_kind: FeatureKind,
    pub nb_alpha: f64,
    pub linear: LinearHyper,
    pub forest: ForestHyper,
    /// Written verbatim into the bundle header.
    pub version: String,
}

impl Default for TextTrainConfig {
    fn default() -> Self {
        TextTrainConfig {
            split: SplitSpec::default(),
            min_count: DEFAULT_MIN_COUNT,
            feature_kind: FeatureKind::Count,
            nb_alpha: 1.0,
            linear: LinearHyper::default(),
            forest: ForestHyper::default(),
            version: format!("liesensor-text/{}", env!("CARGO_PKG_VERSION")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TextTrainReport {
    pub train_docs: usize,
    pub validation_docs: usize,
    pub vocabulary_size: usize,
    pub feature_kind: String,
    pub selection: ModelSelection,
}

fn vectorize(
    docs: &[TokenizedDoc],
    vocab: &Vocabulary,
    idf: Option<&IdfTable>,
) -> Result<Vec<SparseVector>> {
    docs.iter()
        .map(|d| match idf {
            Some(idf) => tfidf_vectorize(d, vocab, idf),
            None => Ok(count_vectorize(d, vocab)),
        })
        .collect()
}

/// Trains every candidate on the training split and returns them in
/// selection order with the validation table.
pub fn train_all(
    records: &[LabeledText],
    config: &TextTrainConfig,
) -> Result<(
    Vocabulary,
    Option<IdfTable>,
    Vec<TextModel>,
    ModelSelection,
    TextTrainReport,
)> {
    let (train, val) = split_dataset(records, config.split)?;
    let train_docs: Vec<TokenizedDoc> = train.iter().map(|r| preprocess(&r.content)).collect();
    let val_docs: Vec<TokenizedDoc> = val.iter().map(|r| preprocess(&r.content)).collect();
    let vocab = build_vocabulary(&train_docs, config.min_count)?;
    let idf = match config.feature_kind {
        FeatureKind::Count => None,
        FeatureKind::TfIdf => Some(fit_idf(&train_docs, &vocab)?),
    };
    let x_train = vectorize(&train_docs, &vocab, idf.as_ref())?;
    let x_val = vectorize(&val_docs, &vocab, idf.as_ref())?;
    let y_train: Vec<EmotionLabel> = train.iter().map(|r| r.label).collect();
    let y_val: Vec<EmotionLabel> = val.iter().map(|r| r.label).collect();

    let models = vec![
        TextModel::NaiveBayes(train_naive_bayes(&x_train, &y_train, config.nb_alpha)?),
        TextModel::Linear(train_linear_svm(&x_train, &y_train, config.linear)?),
        TextModel::Linear(train_logistic(&x_train, &y_train, config.linear)?),
        TextModel::Forest(train_random_forest(&x_train, &y_train, config.forest)?),
    ];
    let selection = select_best(&models, &x_val, &y_val)?;
    let report = TextTrainReport {
        train_docs: train.len(),
        validation_docs: val.len(),
        vocabulary_size: vocab.len(),
        feature_kind: config.feature_kind.to_string(),
        selection: selection.clone(),
    };
    Ok((vocab, idf, models, selection, report))
}

/// Trains all four classifiers and bundles the selected one.
pub fn train_text_models(
    records: &[LabeledText],
    config: &TextTrainConfig,
) -> Result<(TextClassifier, TextTrainReport)> {
    let (vocabulary, idf, models, selection, report) = train_all(records, config)?;
    let model = models
        .into_iter()
        .find(|m| m.kind() == selection.chosen)
        .expect("selection picks one of the trained models");
    Ok((
        TextClassifier {
            version: config.version.clone(),
            vocabulary,
            feature_kind: config.feature_kind,
            idf,
            model,
            selection,
        },
        report,
    ))
}
