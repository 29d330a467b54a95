//! The whole pipeline: text emotion and face emotion compared into an
//! Honest/Liar verdict, then precision and recall over the fixture set.
//!
//! With `--bundle` and `--weights` it loads trained models; otherwise it
//! builds small demo models that know the astronaut fixture's face.
//!
//! ```text
//! cargo run --release --example lie_sensor -- [--bundle text.lsb --weights face.lswt]
//! ```

use std::path::Path;

use liesensor::cnn::load_weights;
use liesensor::synth::{demo_face_network, demo_text_classifier};
use liesensor::textclf::TextClassifier;
use liesensor::verifier::{evaluate, load_fixtures, LieSensor};
use liesensor::vision::{
    crop_face, default_frontal_face, detect_largest_face, DetectParams, GrayImage,
};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn main() -> liesensor::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let flag = |name: &str| {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
    };

    let cascade = default_frontal_face();
    let detect = DetectParams::default();
    let face = GrayImage::load_pgm(fixture("astronaut_face.pgm"))?;

    let (text_model, face_network) = match (flag("--bundle"), flag("--weights")) {
        (Some(b), Some(w)) => (TextClassifier::load(b)?, load_weights(w)?),
        _ => {
            println!("building demo models (keyword text classifier, face memorizer)");
            let b = detect_largest_face(&face, &cascade, &detect).expect("fixture has a face");
            (
                demo_text_classifier(1)?,
                demo_face_network(&crop_face(&face, &b)?, 1)?,
            )
        }
    };
    let sensor = LieSensor {
        text_model,
        face_network,
        cascade,
        detect,
    };

    let blank = GrayImage::load_pgm(fixture("blank.pgm"))?;
    let messages = [
        ("so happy and glad today", &face),
        ("so sad, i miss everyone and cry", &face),
        ("so happy", &blank),
        ("zzzz qqqq", &face),
    ];
    for (text, image) in messages {
        let r = sensor.verify(text, image)?;
        let verdict = r.verdict.map_or_else(
            || format!("no verdict ({})", r.reason.as_deref().unwrap_or("")),
            |v| v.to_string(),
        );
        println!(
            "{text:?}: text={:?} face={:?} -> {verdict}",
            r.text_label, r.face_label
        );
    }

    let mut results = Vec::new();
    for case in load_fixtures(fixture("protocol.csv"))? {
        let r = sensor.verify(&case.text, &GrayImage::load_pgm(&case.image)?)?;
        results.push((r, case.truth));
    }
    let report = evaluate(&results)?;
    println!(
        "\nfixture protocol ({} cases, Liar is positive):",
        results.len()
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}
