use std::sync::OnceLock;

use liesensor::synth::{demo_face_network, demo_text_classifier};
use liesensor::verifier::{
    compare_labels, evaluate, load_fixtures, EvalReport, LieSensor, Verdict, VerificationResult,
    REASON_NO_FACE, REASON_NO_TEXT_SIGNAL,
};
use liesensor::vision::{
    crop_face, default_frontal_face, detect_largest_face, DetectParams, GrayImage,
};
use liesensor::EmotionLabel;
use proptest::prelude::*;

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn sensor() -> &'static LieSensor {
    static SENSOR: OnceLock<LieSensor> = OnceLock::new();
    SENSOR.get_or_init(|| {
        let cascade = default_frontal_face();
        let detect = DetectParams::default();
        let img = GrayImage::load_pgm(fixture("astronaut_face.pgm")).unwrap();
        let face = detect_largest_face(&img, &cascade, &detect).unwrap();
        LieSensor {
            text_model: demo_text_classifier(1).unwrap(),
            face_network: demo_face_network(&crop_face(&img, &face).unwrap(), 1).unwrap(),
            cascade,
            detect,
        }
    })
}

fn face_image() -> GrayImage {
    GrayImage::load_pgm(fixture("astronaut_face.pgm")).unwrap()
}

#[test]
fn truth_table_over_all_label_pairs() {
    for face in EmotionLabel::ALL {
        for text in EmotionLabel::ALL {
            let expected = if face == text {
                Verdict::Honest
            } else {
                Verdict::Liar
            };
            assert_eq!(compare_labels(face, text), expected);
            assert_eq!(compare_labels(face, text), compare_labels(text, face));
        }
    }
}

#[test]
fn sad_text_with_happy_face_is_a_liar() {
    let r = sensor()
        .verify("i miss you so much, so sad and lonely", &face_image())
        .unwrap();
    assert_eq!(r.text_label, Some(EmotionLabel::Sadness));
    assert_eq!(r.face_label, Some(EmotionLabel::Happiness));
    assert_eq!(r.verdict, Some(Verdict::Liar));
    assert!(r.reason.is_none() && r.face_box.is_some());
}

#[test]
fn happy_text_with_happy_face_is_honest() {
    let r = sensor()
        .verify("so happy and glad, love this day", &face_image())
        .unwrap();
    assert_eq!(
        (r.text_label, r.face_label),
        (Some(EmotionLabel::Happiness), Some(EmotionLabel::Happiness))
    );
    assert_eq!(r.verdict, Some(Verdict::Honest));
}

#[test]
fn missing_face_or_text_gives_no_verdict() {
    let blank = GrayImage::load_pgm(fixture("blank.pgm")).unwrap();
    let r = sensor().verify("so happy", &blank).unwrap();
    assert_eq!(
        (r.verdict, r.reason.as_deref()),
        (None, Some(REASON_NO_FACE))
    );
    assert!(r.face_label.is_none() && r.text_label.is_some());

    // No face takes precedence over no text.
    let r = sensor().verify("zzzz qqqq", &blank).unwrap();
    assert_eq!(r.reason.as_deref(), Some(REASON_NO_FACE));

    let r = sensor().verify("zzzz qqqq", &face_image()).unwrap();
    assert_eq!(
        (r.verdict, r.reason.as_deref()),
        (None, Some(REASON_NO_TEXT_SIGNAL))
    );
    assert_eq!(r.face_label, Some(EmotionLabel::Happiness));
}

#[test]
fn verification_is_reproducible() {
    let a = sensor()
        .verify("wow omg what a surprise", &face_image())
        .unwrap();
    let b = sensor()
        .verify("wow omg what a surprise", &face_image())
        .unwrap();
    assert_eq!(
        (a.text_scores, a.face_scores, a.face_box),
        (b.text_scores, b.face_scores, b.face_box)
    );
    let v = a.verdict.unwrap();
    assert_eq!(
        v,
        compare_labels(a.face_label.unwrap(), a.text_label.unwrap())
    );
}

#[test]
fn result_serializes_as_record_and_json() {
    let r = sensor()
        .verify("i hate this, so angry", &face_image())
        .unwrap();
    let back = VerificationResult::from_record(&r.to_record()).unwrap();
    assert_eq!(back, r);
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(
        serde_json::from_str::<VerificationResult>(&json).unwrap(),
        r
    );
}

#[test]
fn twelve_case_protocol_populates_report() {
    let fixtures = load_fixtures(fixture("protocol.csv")).unwrap();
    assert_eq!(fixtures.len(), 12);
    let results: Vec<(VerificationResult, Verdict)> = fixtures
        .iter()
        .map(|f| {
            let img = GrayImage::load_pgm(&f.image).unwrap();
            (sensor().verify(&f.text, &img).unwrap(), f.truth)
        })
        .collect();
    let report = evaluate(&results).unwrap();
    assert_eq!(
        report.tp + report.fp + report.fn_ + report.tn + report.excluded,
        12
    );
    assert!(report.precision.is_some() && report.recall.is_some());
}

#[test]
fn evaluate_arithmetic() {
    let r = EvalReport::from_counts(3, 1, 2, 6, 0);
    assert_eq!((r.precision, r.recall), (Some(0.75), Some(0.6)));
    assert!(evaluate(&[]).is_err());
    let json = serde_json::to_value(r).unwrap();
    assert_eq!(json["fn"], 2);
}

fn result_with(verdict: Option<Verdict>) -> VerificationResult {
    VerificationResult {
        message_id: 0,
        timestamp_ms: 0,
        text_label: None,
        text_scores: None,
        face_label: None,
        face_scores: None,
        face_box: None,
        verdict,
        reason: verdict.is_none().then(|| REASON_NO_FACE.to_string()),
    }
}

fn verdict_strategy() -> impl Strategy<Value = Option<Verdict>> {
    prop_oneof![
        Just(None),
        Just(Some(Verdict::Honest)),
        Just(Some(Verdict::Liar))
    ]
}

proptest! {
    #[test]
    fn evaluate_is_permutation_invariant(
        cases in prop::collection::vec((verdict_strategy(), any::<bool>()), 1..40),
        shift in 0usize..40,
    ) {
        let list: Vec<(VerificationResult, Verdict)> = cases
            .iter()
            .map(|(v, liar)| (result_with(*v), if *liar { Verdict::Liar } else { Verdict::Honest }))
            .collect();
        let mut rotated = list.clone();
        rotated.rotate_left(shift % list.len());
        rotated.reverse();
        let a = evaluate(&list).unwrap();
        prop_assert_eq!(a, evaluate(&rotated).unwrap());
        prop_assert_eq!(a.excluded, cases.iter().filter(|(v, _)| v.is_none()).count());
        if let Some(p) = a.precision {
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert_eq!(p, a.tp as f64 / (a.tp + a.fp) as f64);
        }
        if let Some(r) = a.recall {
            prop_assert_eq!(r, a.tp as f64 / (a.tp + a.fn_) as f64);
        }
    }
}
