//! Label comparison, per-message verification and precision/recall
//! reporting.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::cnn::{predict_face, Network};
use crate::label::NUM_LABELS;
use crate::textclf::TextClassifier;
use crate::vision::{
    crop_face, detect_largest_face, BoundingBox, Cascade, DetectParams, GrayImage,
};
use crate::{EmotionLabel, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Honest,
    Liar,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Honest => "Honest",
            Verdict::Liar => "Liar",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "honest" => Ok(Verdict::Honest),
            "liar" => Ok(Verdict::Liar),
            _ => Err(Error::Parse(format!("unknown verdict `{s}`"))),
        }
    }
}

/// `Honest` exactly when the two channels agree.
pub fn compare_labels(face: EmotionLabel, text: EmotionLabel) -> Verdict {
    if face == text {
        Verdict::Honest
    } else {
        Verdict::Liar
    }
}

pub const REASON_NO_FACE: &str = "no face";
pub const REASON_NO_TEXT_SIGNAL: &str = "no text signal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub message_id: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    pub text_label: Option<EmotionLabel>,
    pub text_scores: Option<[f64; NUM_LABELS]>,
    pub face_label: Option<EmotionLabel>,
    pub face_scores: Option<[f64; NUM_LABELS]>,
    pub face_box: Option<BoundingBox>,
    pub verdict: Option<Verdict>,
    /// Why no verdict was given; `None` whenever `verdict` is set.
    pub reason: Option<String>,
}

fn join_scores(s: &[f64; NUM_LABELS]) -> String {
    s.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn split_scores(s: &str) -> Result<[f64; NUM_LABELS]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.parse()
                .map_err(|_| Error::Parse(format!("bad score `{p}`")))
        })
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Parse(format!("expected {NUM_LABELS} scores in `{s}`")))
}

impl VerificationResult {
    /// One line of space-separated `key=value` pairs; absent values are
    /// `-`, and values containing spaces are double-quoted.
    pub fn to_record(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let fields = [
            ("message_id", self.message_id.to_string()),
            ("timestamp_ms", self.timestamp_ms.to_string()),
            ("verdict", opt(self.verdict.map(|v| v.to_string()))),
            ("text_label", opt(self.text_label.map(|l| l.to_string()))),
            (
                "text_scores",
                opt(self.text_scores.as_ref().map(join_scores)),
            ),
            ("face_label", opt(self.face_label.map(|l| l.to_string()))),
            (
                "face_scores",
                opt(self.face_scores.as_ref().map(join_scores)),
            ),
            (
                "face_box",
                opt(self.face_box.map(|b| {
                    format!(
                        "{},{},{},{},{},{}",
                        b.x, b.y, b.w, b.h, b.score, b.neighbors
                    )
                })),
            ),
            (
                "reason",
                opt(self.reason.as_ref().map(|r| format!("\"{r}\""))),
            ),
        ];
        fields
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_record(line: &str) -> Result<Self> {
        let mut out = VerificationResult {
            message_id: 0,
            timestamp_ms: 0,
            text_label: None,
            text_scores: None,
            face_label: None,
            face_scores: None,
            face_box: None,
            verdict: None,
            reason: None,
        };
        let mut rest = line.trim();
        while !rest.is_empty() {
            let (key, after) = rest
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value at `{rest}`")))?;
            let (value, next) = if let Some(quoted) = after.strip_prefix('"') {
                let end = quoted
                    .find('"')
                    .ok_or_else(|| Error::Parse("unterminated quoted value".into()))?;
                (&quoted[..end], &quoted[end + 1..])
            } else {
                after.split_once(' ').unwrap_or((after, ""))
            };
            rest = next.trim_start();
            let int = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| Error::Parse(format!("bad integer `{v}`")))
            };
            if value == "-" {
                continue;
            }
            match key {
                "message_id" => out.message_id = int(value)?,
                "timestamp_ms" => out.timestamp_ms = int(value)?,
                "verdict" => out.verdict = Some(value.parse()?),
                "text_label" => out.text_label = Some(value.parse()?),
                "text_scores" => out.text_scores = Some(split_scores(value)?),
                "face_label" => out.face_label = Some(value.parse()?),
                "face_scores" => out.face_scores = Some(split_scores(value)?),
                "face_box" => {
                    let v: Vec<usize> = value
                        .split(',')
                        .map(|p| {
                            p.parse()
                                .map_err(|_| Error::Parse(format!("bad face_box `{value}`")))
                        })
                        .collect::<Result<_>>()?;
                    let [x, y, w, h, score, neighbors] = v[..] else {
                        return Err(Error::Parse(format!("bad face_box `{value}`")));
                    };
                    out.face_box = Some(BoundingBox {
                        x,
                        y,
                        w,
                        h,
                        score,
                        neighbors,
                    });
                }
                "reason" => out.reason = Some(value.to_string()),
                other => return Err(Error::Parse(format!("unknown record key `{other}`"))),
            }
        }
        Ok(out)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Runs both channels and compares them. A missing face yields no verdict
/// with reason "no face" (checked first); text with no in-vocabulary token
/// yields reason "no text signal". `message_id` is left at 0 for the
/// caller to assign.
pub fn verify_message(
    text: &str,
    image: &GrayImage,
    text_model: &TextClassifier,
    face_network: &Network,
    cascade: &Cascade,
    params: &DetectParams,
) -> Result<VerificationResult> {
    let text_pred = text_model.predict(text)?;
    let face_box = detect_largest_face(image, cascade, params);
    let face_pred = match &face_box {
        Some(b) => Some(predict_face(face_network, &crop_face(image, b)?)?),
        None => None,
    };
    let (verdict, reason) = match (&face_pred, &text_pred) {
        (None, _) => (None, Some(REASON_NO_FACE.to_string())),
        (_, None) => (None, Some(REASON_NO_TEXT_SIGNAL.to_string())),
        (Some(f), Some(t)) => (Some(compare_labels(f.label, t.label)), None),
    };
    Ok(VerificationResult {
        message_id: 0,
        timestamp_ms: now_ms(),
        text_label: text_pred.map(|p| p.label),
        text_scores: text_pred.map(|p| p.scores),
        face_label: face_pred.map(|p| p.label),
        face_scores: face_pred.map(|p| p.scores),
        face_box,
        verdict,
        reason,
    })
}

/// The three loaded models plus detection settings.
#[derive(Debug, Clone)]
pub struct LieSensor {
    pub text_model: TextClassifier,
    pub face_network: Network,
    pub cascade: Cascade,
    pub detect: DetectParams,
}

impl LieSensor {
    pub fn verify(&self, text: &str, image: &GrayImage) -> Result<VerificationResult> {
        verify_message(
            text,
            image,
            &self.text_model,
            &self.face_network,
            &self.cascade,
            &self.detect,
        )
    }
}

/// Confusion counts with `Liar` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// Results without a verdict, left out of the counts.
    pub excluded: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize, excluded: usize) -> Self {
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        EvalReport {
            tp,
            fp,
            fn_,
            tn,
            excluded,
            precision: ratio(tp, fp),
            recall: ratio(tp, fn_),
        }
    }
}

pub fn evaluate(results: &[(VerificationResult, Verdict)]) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn, mut excluded) = (0, 0, 0, 0, 0);
    for (r, truth) in results {
        match (r.verdict, truth) {
            (None, _) => excluded += 1,
            (Some(Verdict::Liar), Verdict::Liar) => tp += 1,
            (Some(Verdict::Liar), Verdict::Honest) => fp += 1,
            (Some(Verdict::Honest), Verdict::Liar) => fn_ += 1,
            (Some(Verdict::Honest), Verdict::Honest) => tn += 1,
        }
    }
    Ok(EvalReport::from_counts(tp, fp, fn_, tn, excluded))
}

/// One labelled evaluation case.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub text: String,
    pub image: std::path::PathBuf,
    pub truth: Verdict,
}

/// Reads a `text,image,truth` CSV; image paths are relative to the file.
pub fn load_fixtures(path: impl AsRef<Path>) -> Result<Vec<Fixture>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ti, ii, vi) = (col("text")?, col("image")?, col("truth")?);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        out.push(Fixture {
            text: row.get(ti).unwrap_or_default().to_string(),
            image: base.join(row.get(ii).unwrap_or_default()),
            truth: row.get(vi).unwrap_or_default().parse()?,
        });
    }
    Ok(out)
}
