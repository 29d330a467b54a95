//! Model bundle: vocabulary, optional IDF table, feature kind, the chosen
//! classifier and the selection table, in one checksummed file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LSTXTBND"  u32 format_version  str version
//! u32 section_count
//! { str name  u64 payload_len  payload }*   meta, vocabulary, [idf], model, selection
//! u32 crc32(all preceding bytes)
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. Reals are 64-bit floats.

use std::path::Path;

use super::{
    predict_text, FeatureSubsample, ForestHyper, LinearHyper, LinearKind, LinearModel, ModelKind,
    ModelSelection, NaiveBayesModel, Node, RandomForestModel, TextModel, TextPrediction,
};
use crate::codec::{Reader, Writer};
use crate::features::{count_vectorize, tfidf_vectorize, FeatureKind, IdfTable, SparseVector};
use crate::label::NUM_LABELS;
use crate::textclf::DecisionTree;
use crate::textprep::{preprocess, Vocabulary};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LSTXTBND";
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Everything needed to turn a raw message into a [`TextPrediction`].
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifier {
    pub version: String,
    pub vocabulary: Vocabulary,
    pub feature_kind: FeatureKind,
    pub idf: Option<IdfTable>,
    pub model: TextModel,
    pub selection: ModelSelection,
}

impl TextClassifier {
    pub fn featurize(&self, text: &str) -> Result<SparseVector> {
        let doc = preprocess(text);
        match (self.feature_kind, &self.idf) {
            (FeatureKind::Count, _) => Ok(count_vectorize(&doc, &self.vocabulary)),
            (FeatureKind::TfIdf, Some(idf)) => tfidf_vectorize(&doc, &self.vocabulary, idf),
            (FeatureKind::TfIdf, None) => {
                Err(Error::Format("tf-idf bundle without idf table".into()))
            }
        }
    }

    /// `None` when no token of `text` is in the vocabulary.
    pub fn predict(&self, text: &str) -> Result<Option<TextPrediction>> {
        let x = self.featurize(text)?;
        if x.is_zero() {
            return Ok(None);
        }
        predict_text(&self.model, &x).map(Some)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(&str, Vec<u8>)> = Vec::new();
        let meta = format!(
            "feature={}\nmodel={}\n",
            self.feature_kind,
            self.model.kind()
        );
        sections.push(("meta", meta.into_bytes()));
        sections.push(("vocabulary", self.vocabulary.to_text().into_bytes()));
        if let Some(idf) = &self.idf {
            let mut w = Writer::default();
            w.u64(idf.dimension() as u64);
            w.u64(idf.doc_count() as u64);
            idf.weights().iter().for_each(|&v| w.f64(v));
            sections.push(("idf", w.into_inner()));
        }
        sections.push(("model", encode_model(&self.model)));
        let mut w = Writer::default();
        w.u32(self.selection.per_model_accuracy.len() as u32);
        for (kind, acc) in &self.selection.per_model_accuracy {
            w.str(kind.name());
            w.f64(*acc);
        }
        w.str(self.selection.chosen.name());
        sections.push(("selection", w.into_inner()));

        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(BUNDLE_FORMAT_VERSION);
        w.str(&self.version);
        w.u32(sections.len() as u32);
        for (name, payload) in sections {
            w.str(name);
            w.u64(payload.len() as u64);
            w.bytes(&payload);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::checked(bytes)?;
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a text model bundle (bad magic)".into()));
        }
        let format = r.u32()?;
        if format != BUNDLE_FORMAT_VERSION {
            return Err(Error::Version {
                found: format,
                expected: BUNDLE_FORMAT_VERSION,
            });
        }
        let version = r.str()?.to_string();
        let count = r.u32()?;
        let mut meta = None;
        let mut vocabulary = None;
        let mut idf = None;
        let mut model = None;
        let mut selection = None;
        for _ in 0..count {
            let name = r.str()?;
            let len = r.usize()?;
            let payload = r.take(len)?;
            match name {
                "meta" => meta = Some(parse_meta(payload)?),
                "vocabulary" => {
                    let text = std::str::from_utf8(payload)
                        .map_err(|_| Error::Format("vocabulary is not UTF-8".into()))?;
                    vocabulary = Some(Vocabulary::from_text(text)?);
                }
                "idf" => {
                    let mut s = Reader::new(payload);
                    let dim = s.usize()?;
                    let doc_count = s.usize()?;
                    let weights = (0..dim).map(|_| s.f64()).collect::<Result<Vec<_>>>()?;
                    s.expect_end("idf section")?;
                    idf = Some(IdfTable::from_parts(weights, doc_count)?);
                }
                "model" => model = Some(decode_model(payload)?),
                "selection" => {
                    let mut s = Reader::new(payload);
                    let n = s.u32()?;
                    let mut table = Vec::with_capacity(n as usize);
                    for _ in 0..n {
                        let kind: ModelKind = s.str()?.parse()?;
                        table.push((kind, s.f64()?));
                    }
                    let chosen: ModelKind = s.str()?.parse()?;
                    s.expect_end("selection section")?;
                    selection = Some(ModelSelection {
                        per_model_accuracy: table,
                        chosen,
                    });
                }
                other => return Err(Error::Format(format!("unknown bundle section `{other}`"))),
            }
        }
        r.expect_end("bundle")?;
        let missing = |s: &str| Error::Format(format!("bundle is missing the `{s}` section"));
        let (feature_kind, model_kind) = meta.ok_or_else(|| missing("meta"))?;
        let vocabulary = vocabulary.ok_or_else(|| missing("vocabulary"))?;
        let model = model.ok_or_else(|| missing("model"))?;
        if model.kind() != model_kind {
            return Err(Error::Format(format!(
                "meta says {model_kind} but model section holds {}",
                model.kind()
            )));
        }
        if model.dimension() != vocabulary.len() {
            return Err(Error::DimensionMismatch {
                expected: vocabulary.len(),
                actual: model.dimension(),
            });
        }
        if feature_kind == FeatureKind::TfIdf && idf.is_none() {
            return Err(missing("idf"));
        }
        Ok(TextClassifier {
            version,
            vocabulary,
            feature_kind,
            idf,
            model,
            selection: selection.ok_or_else(|| missing("selection"))?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_meta(payload: &[u8]) -> Result<(FeatureKind, ModelKind)> {
    let text =
        std::str::from_utf8(payload).map_err(|_| Error::Format("meta is not UTF-8".into()))?;
    let mut feature = None;
    let mut model = None;
    for line in text.lines() {
        match line.split_once('=') {
            Some(("feature", v)) => feature = Some(v.parse()?),
            Some(("model", v)) => model = Some(v.parse()?),
            _ => return Err(Error::Format(format!("bad meta line `{line}`"))),
        }
    }
    match (feature, model) {
        (Some(f), Some(m)) => Ok((f, m)),
        _ => Err(Error::Format("meta needs feature and model".into())),
    }
}

const TAG_NB: u8 = 0;
const TAG_LINEAR: u8 = 1;
const TAG_FOREST: u8 = 2;

fn encode_model(model: &TextModel) -> Vec<u8> {
    let mut w = Writer::default();
    match model {
        TextModel::NaiveBayes(m) => {
            w.u8(TAG_NB);
            w.f64(m.alpha());
            w.u64(m.dimension() as u64);
            m.class_docs().iter().for_each(|&v| w.f64(v));
            for row in m.feature_counts() {
                row.iter().for_each(|&v| w.f64(v));
            }
        }
        TextModel::Linear(m) => {
            w.u8(TAG_LINEAR);
            w.u8(match m.kind {
                LinearKind::Logistic => 0,
                LinearKind::Svm => 1,
            });
            w.u64(m.dimension as u64);
            w.f64(m.hyper.learning_rate);
            w.u64(m.hyper.epochs as u64);
            w.f64(m.hyper.l2_lambda);
            w.u64(m.hyper.batch_size as u64);
            w.u64(m.hyper.seed);
            m.weights.iter().for_each(|&v| w.f64(v));
            m.bias.iter().for_each(|&v| w.f64(v));
        }
        TextModel::Forest(m) => {
            w.u8(TAG_FOREST);
            w.u64(m.dimension as u64);
            let h = &m.hyper;
            w.u64(h.n_trees as u64);
            w.u64(h.max_depth as u64);
            w.u64(h.min_leaf as u64);
            match h.feature_subsample {
                FeatureSubsample::Sqrt => {
                    w.u8(0);
                    w.u64(0)
                }
                FeatureSubsample::All => {
                    w.u8(1);
                    w.u64(0)
                }
                FeatureSubsample::Count(k) => {
                    w.u8(2);
                    w.u64(k as u64)
                }
            }
            w.u8(h.bootstrap as u8);
            w.u64(h.seed);
            w.u64(m.trees.len() as u64);
            for tree in &m.trees {
                w.u64(tree.nodes.len() as u64);
                for node in &tree.nodes {
                    match node {
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            w.u8(0);
                            w.u64(*feature as u64);
                            w.f64(*threshold);
                            w.u64(*left as u64);
                            w.u64(*right as u64);
                        }
                        Node::Leaf { counts } => {
                            w.u8(1);
                            counts.iter().for_each(|&v| w.f64(v));
                        }
                    }
                }
            }
        }
    }
    w.into_inner()
}

fn read_counts(r: &mut Reader) -> Result<[f64; NUM_LABELS]> {
    let mut out = [0.0; NUM_LABELS];
    for v in &mut out {
        *v = r.f64()?;
    }
    Ok(out)
}

fn decode_model(payload: &[u8]) -> Result<TextModel> {
    let mut r = Reader::new(payload);
    let model = match r.u8()? {
        TAG_NB => {
            let alpha = r.f64()?;
            let dim = r.usize()?;
            let class_docs = read_counts(&mut r)?;
            let counts = (0..dim)
                .map(|_| read_counts(&mut r))
                .collect::<Result<Vec<_>>>()?;
            TextModel::NaiveBayes(NaiveBayesModel::from_counts(alpha, class_docs, counts)?)
        }
        TAG_LINEAR => {
            let kind = match r.u8()? {
                0 => LinearKind::Logistic,
                1 => LinearKind::Svm,
                k => return Err(Error::Format(format!("unknown linear kind {k}"))),
            };
            let dimension = r.usize()?;
            let hyper = LinearHyper {
                learning_rate: r.f64()?,
                epochs: r.usize()?,
                l2_lambda: r.f64()?,
                batch_size: r.usize()?,
                seed: r.u64()?,
            };
            let weights = (0..NUM_LABELS * dimension)
                .map(|_| r.f64())
                .collect::<Result<Vec<_>>>()?;
            let bias = read_counts(&mut r)?;
            TextModel::Linear(LinearModel {
                kind,
                dimension,
                weights,
                bias,
                hyper,
            })
        }
        TAG_FOREST => {
            let dimension = r.usize()?;
            let n_trees = r.usize()?;
            let max_depth = r.usize()?;
            let min_leaf = r.usize()?;
            let feature_subsample = match (r.u8()?, r.usize()?) {
                (0, _) => FeatureSubsample::Sqrt,
                (1, _) => FeatureSubsample::All,
                (2, k) => FeatureSubsample::Count(k),
                (t, _) => return Err(Error::Format(format!("unknown subsample tag {t}"))),
            };
            let bootstrap = r.u8()? != 0;
            let seed = r.u64()?;
            let count = r.usize()?;
            let mut trees = Vec::with_capacity(count);
            for _ in 0..count {
                let n = r.usize()?;
                let mut nodes = Vec::with_capacity(n);
                for _ in 0..n {
                    nodes.push(match r.u8()? {
                        0 => Node::Split {
                            feature: r.usize()?,
                            threshold: r.f64()?,
                            left: r.usize()?,
                            right: r.usize()?,
                        },
                        1 => Node::Leaf {
                            counts: read_counts(&mut r)?,
                        },
                        t => return Err(Error::Format(format!("unknown node tag {t}"))),
                    });
                }
                for node in &nodes {
                    if let Node::Split {
                        feature,
                        left,
                        right,
                        ..
                    } = node
                    {
                        if *feature >= dimension || *left >= n || *right >= n {
                            return Err(Error::Format("tree node reference out of range".into()));
                        }
                    }
                }
                trees.push(DecisionTree { nodes });
            }
            TextModel::Forest(RandomForestModel {
                dimension,
                trees,
                hyper: ForestHyper {
                    n_trees,
                    max_depth,
                    min_leaf,
                    feature_subsample,
                    bootstrap,
                    seed,
                },
            })
        }
        t => return Err(Error::Format(format!("unknown model tag {t}"))),
    };
    r.expect_end("model section")?;
    Ok(model)
}
