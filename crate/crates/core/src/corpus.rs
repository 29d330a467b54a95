//! Dataset ingestion: FER-format image CSVs, tweet-format text CSVs,
//! label mapping into the four-way emotion space, and stratified splits.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{EmotionLabel, Error, Result};

pub const FER_SIDE: usize = 48;
pub const FER_PIXELS: usize = FER_SIDE * FER_SIDE;

const FER_NAMES: [&str; 7] = [
    "Angry", "Disgust", "Fear", "Happy", "Sad", "Surprise", "Neutral",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pub pixels: Vec<u8>,
    pub label: EmotionLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    pub id: String,
    pub author: Option<String>,
    pub content: String,
    pub label: EmotionLabel,
}

/// Anything carrying an emotion label; used for stratification.
pub trait Labeled {
    fn label(&self) -> EmotionLabel;
}

impl Labeled for LabeledImage {
    fn label(&self) -> EmotionLabel {
        self.label
    }
}

impl Labeled for LabeledText {
    fn label(&self) -> EmotionLabel {
        self.label
    }
}

impl Labeled for EmotionLabel {
    fn label(&self) -> EmotionLabel {
        *self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: String,
}

/// Per-file ingestion summary.
///
/// `kept + dropped + errors.len() == total_rows` always holds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub total_rows: usize,
    pub kept: usize,
    pub dropped_by_label: BTreeMap<String, usize>,
    pub errors: Vec<RecordError>,
}

impl LoadReport {
    pub fn dropped(&self) -> usize {
        self.dropped_by_label.values().sum()
    }

    fn drop_row(&mut self, label: &str) {
        *self.dropped_by_label.entry(label.to_string()).or_default() += 1;
    }

    fn error(&mut self, row: usize, reason: impl Into<String>) {
        self.errors.push(RecordError {
            row,
            reason: reason.into(),
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Maps a FER-2013 emotion code to the kept label set.
///
/// Codes follow the public dataset order 0=Angry, 1=Disgust, 2=Fear,
/// 3=Happy, 4=Sad, 5=Surprise, 6=Neutral. Angry becomes Hate.
pub fn map_fer_label(code: i64) -> Result<Option<EmotionLabel>> {
    match code {
        0 => Ok(Some(EmotionLabel::Hate)),
        3 => Ok(Some(EmotionLabel::Happiness)),
        4 => Ok(Some(EmotionLabel::Sadness)),
        5 => Ok(Some(EmotionLabel::Surprise)),
        1 | 2 | 6 => Ok(None),
        other => Err(Error::InvalidFerCode(other)),
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_pixels(field: &str) -> std::result::Result<Vec<u8>, String> {
    let mut pixels = Vec::with_capacity(FER_PIXELS);
    for token in field.split_ascii_whitespace() {
        let value: u32 = token
            .parse()
            .map_err(|_| format!("non-numeric pixel token `{token}`"))?;
        if value > 255 {
            return Err(format!("pixel value {value} outside 0..=255"));
        }
        pixels.push(value as u8);
    }
    if pixels.len() != FER_PIXELS {
        return Err(format!("pixel count {} ≠ {FER_PIXELS}", pixels.len()));
    }
    Ok(pixels)
}

/// Loads a FER-format CSV (`emotion,pixels[,Usage]`).
pub fn load_fer_csv(path: impl AsRef<Path>) -> Result<(Vec<LabeledImage>, LoadReport)> {
    let mut reader = open(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let emotion_col = column(&headers, "emotion")?;
    let pixels_col = column(&headers, "pixels")?;

    let mut report = LoadReport::default();
    let mut images = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        report.total_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.error(row, format!("unparseable row: {e}"));
                continue;
            }
        };
        let (Some(code), Some(pixels)) = (record.get(emotion_col), record.get(pixels_col)) else {
            report.error(row, "missing field");
            continue;
        };
        let code: i64 = match code.trim().parse() {
            Ok(c) => c,
            Err(_) => {
                report.error(row, format!("non-numeric emotion code `{code}`"));
                continue;
            }
        };
        let label = match map_fer_label(code) {
            Ok(Some(label)) => label,
            Ok(None) => {
                report.drop_row(FER_NAMES[code as usize]);
                continue;
            }
            Err(e) => {
                report.error(row, e.to_string());
                continue;
            }
        };
        match parse_pixels(pixels) {
            Ok(pixels) => {
                images.push(LabeledImage { pixels, label });
                report.kept += 1;
            }
            Err(reason) => report.error(row, reason),
        }
    }
    Ok((images, report))
}

/// Raw sentiment name → kept label (or dropped).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    entries: BTreeMap<String, Option<EmotionLabel>>,
}

impl Default for LabelMap {
    fn default() -> Self {
        use EmotionLabel::*;
        let table: [(&str, Option<EmotionLabel>); 13] = [
            ("happiness", Some(Happiness)),
            ("fun", Some(Happiness)),
            ("enthusiasm", Some(Happiness)),
            ("love", Some(Happiness)),
            ("relief", Some(Happiness)),
            ("sadness", Some(Sadness)),
            ("worry", Some(Sadness)),
            ("surprise", Some(Surprise)),
            ("hate", Some(Hate)),
            ("anger", Some(Hate)),
            ("neutral", None),
            ("empty", None),
            ("boredom", None),
        ];
        LabelMap {
            entries: table.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

impl LabelMap {
    /// Unknown names map to `None`, same as explicitly dropped ones.
    pub fn map(&self, raw: &str) -> Option<EmotionLabel> {
        self.entries
            .get(raw.trim().to_lowercase().as_str())
            .copied()
            .flatten()
    }

    /// Applies `raw_name = Label | drop` overrides on top of this map.
    pub fn with_overrides(mut self, text: &str) -> Result<Self> {
        let overrides: LabelMap = text.parse()?;
        self.entries.extend(overrides.entries);
        Ok(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LabelMap::default().with_overrides(&text)
    }
}

impl FromStr for LabelMap {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (raw, target) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("label map line {}: expected `name = Label`", n + 1))
            })?;
            let target = target.trim();
            let label = if target.eq_ignore_ascii_case("drop") {
                None
            } else {
                Some(target.parse::<EmotionLabel>().map_err(|_| {
                    Error::Parse(format!(
                        "label map line {}: unknown target `{target}`",
                        n + 1
                    ))
                })?)
            };
            entries.insert(raw.trim().to_lowercase(), label);
        }
        Ok(LabelMap { entries })
    }
}

/// Maps a sentiment name using the default table.
pub fn map_text_label(raw: &str) -> Option<EmotionLabel> {
    LabelMap::default().map(raw)
}

/// Loads a tweet-format CSV (`tweet_id,sentiment,author,content`, any order).
pub fn load_tweet_csv(path: impl AsRef<Path>) -> Result<(Vec<LabeledText>, LoadReport)> {
    load_tweet_csv_with(path, &LabelMap::default())
}

pub fn load_tweet_csv_with(
    path: impl AsRef<Path>,
    labels: &LabelMap,
) -> Result<(Vec<LabeledText>, LoadReport)> {
    let mut reader = open(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let id_col = column(&headers, "tweet_id")?;
    let sentiment_col = column(&headers, "sentiment")?;
    let author_col = column(&headers, "author")?;
    let content_col = column(&headers, "content")?;

    let mut report = LoadReport::default();
    let mut texts = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        report.total_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.error(row, format!("unparseable row: {e}"));
                continue;
            }
        };
        let fields = (
            record.get(id_col),
            record.get(sentiment_col),
            record.get(author_col),
            record.get(content_col),
        );
        let (Some(id), Some(sentiment), author, Some(content)) = fields else {
            report.error(
                row,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            );
            continue;
        };
        let sentiment = sentiment.trim().to_lowercase();
        let Some(label) = labels.map(&sentiment) else {
            report.drop_row(&sentiment);
            continue;
        };
        let content = content.trim();
        if content.is_empty() {
            report.drop_row("<empty content>");
            continue;
        }
        texts.push(LabeledText {
            id: id.to_string(),
            author: author
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(String::from),
            content: content.to_string(),
            label,
        });
        report.kept += 1;
    }
    Ok((texts, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

/// Stratified, seeded train/validation split.
///
/// Each label's records are shuffled with a seed-derived stream and
/// `round(n · train_fraction)` of them (clamped so both sides keep at least
/// one) go to training. Both outputs preserve the input order.
pub fn split_dataset<T: Labeled + Clone>(
    records: &[T],
    spec: SplitSpec,
) -> Result<(Vec<T>, Vec<T>)> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty dataset".into(),
        ));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let mut by_label: [Vec<usize>; 4] = Default::default();
    for (i, r) in records.iter().enumerate() {
        by_label[r.label().index()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_train = vec![false; records.len()];
    for (label, indices) in EmotionLabel::ALL.iter().zip(by_label.iter_mut()) {
        match indices.len() {
            0 => continue,
            1 => {
                return Err(Error::CannotStratify {
                    label: label.to_string(),
                    count: 1,
                })
            }
            n => {
                indices.shuffle(&mut rng);
                let k = ((n as f64) * spec.train_fraction).round() as usize;
                let k = k.clamp(1, n - 1);
                for &i in &indices[..k] {
                    in_train[i] = true;
                }
            }
        }
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (r, &t) in records.iter().zip(&in_train) {
        if t {
            train.push(r.clone());
        } else {
            validation.push(r.clone());
        }
    }
    Ok((train, validation))
}
