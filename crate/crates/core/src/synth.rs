//! Seeded synthetic corpora standing in for the tweet and FER datasets
//! when those are not available locally.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cnn::{
    evaluate_accuracy, train, AugmentConfig, Descriptor, Network, Sample, TrainConfig,
};
use crate::corpus::{LabeledImage, LabeledText, FER_SIDE};
use crate::textclf::{train_text_models, TextClassifier, TextTrainConfig};
use crate::vision::{scale_pixels, GrayImage, FACE_SIDE};
use crate::{EmotionLabel, Error, Result};

const KEYWORDS: [&[&str]; 4] = [
    &[
        "happy",
        "joy",
        "love",
        "great",
        "awesome",
        "smile",
        "glad",
        "wonderful",
        "fun",
        "yay",
    ],
    &[
        "sad", "miss", "cry", "lonely", "tears", "sorry", "down", "hurts", "lost", "gloomy",
    ],
    &[
        "wow",
        "surprised",
        "omg",
        "unexpected",
        "shocked",
        "whoa",
        "suddenly",
        "unbelievable",
        "amazed",
        "really",
    ],
    &[
        "hate",
        "angry",
        "furious",
        "annoyed",
        "disgusting",
        "stupid",
        "worst",
        "rage",
        "terrible",
        "mad",
    ],
];

const NOISE: &[&str] = &[
    "the", "today", "work", "just", "going", "home", "with", "friends", "morning", "night",
    "phone", "weekend", "coffee", "school", "movie", "game", "dinner", "bus", "rain", "city",
    "music", "book", "dog", "week",
];

/// `n` short documents, labels cycling through the four classes, each with
/// two or three class keywords among four to eight noise words.
/// One document in ten also carries a keyword from another class.
pub fn keyword_corpus(n: usize, seed: u64) -> Vec<LabeledText> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = EmotionLabel::ALL[i % 4];
            let mut words: Vec<&str> = Vec::new();
            for _ in 0..rng.gen_range(2..=3) {
                words.push(KEYWORDS[label.index()].choose(&mut rng).unwrap());
            }
            for _ in 0..rng.gen_range(4..=8) {
                words.push(NOISE.choose(&mut rng).unwrap());
            }
            if rng.gen_bool(0.1) {
                let other = (label.index() + rng.gen_range(1..4)) % 4;
                words.push(KEYWORDS[other].choose(&mut rng).unwrap());
            }
            words.shuffle(&mut rng);
            LabeledText {
                id: format!("synth-{i}"),
                author: None,
                content: words.join(" "),
                label,
            }
        })
        .collect()
}

/// Draws a 48×48 cartoon face for `label` with the given jitter stream.
///
/// Expressions: Happiness smiles, Sadness frowns, Surprise has raised brows
/// and a round open mouth, Hate has inward-slanted brows and a flat mouth.
fn cartoon_face(label: EmotionLabel, rng: &mut ChaCha8Rng, noise: f64) -> Vec<u8> {
    let side = FER_SIDE as f64;
    let cx = side / 2.0 + rng.gen_range(-2.0..2.0);
    let cy = side / 2.0 + rng.gen_range(-2.0..2.0);
    let r = rng.gen_range(17.0..21.0);
    let skin: f64 = rng.gen_range(150.0..210.0);
    let background: f64 = rng.gen_range(20.0..90.0);
    let ink: f64 = rng.gen_range(10.0..50.0);
    let eye_dx = r * 0.38;
    let eye_y = cy - r * 0.2;
    let mouth_y = cy + r * 0.45;
    let mouth_w = r * rng.gen_range(0.4..0.55);

    let mut out = Vec::with_capacity(FER_SIDE * FER_SIDE);
    for py in 0..FER_SIDE {
        for px in 0..FER_SIDE {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut v = if ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() < r {
                skin
            } else {
                background
            };
            let mut stroke = false;
            for side_sign in [-1.0, 1.0] {
                let ex = cx + side_sign * eye_dx;
                if (x - ex).powi(2) + (y - eye_y).powi(2) < 4.0 {
                    stroke = true;
                }
                // Brows: a short segment above each eye.
                let bx = x - ex;
                if bx.abs() < r * 0.22 {
                    let by = match label {
                        EmotionLabel::Surprise => eye_y - r * 0.42,
                        // Inner ends lowered.
                        EmotionLabel::Hate => eye_y - r * 0.28 + side_sign * bx * -0.6,
                        // Inner ends raised.
                        EmotionLabel::Sadness => eye_y - r * 0.3 - side_sign * bx * -0.3,
                        EmotionLabel::Happiness => eye_y - r * 0.32,
                    };
                    if (y - by).abs() < 1.0 {
                        stroke = true;
                    }
                }
            }
            let mx = x - cx;
            match label {
                EmotionLabel::Happiness | EmotionLabel::Sadness => {
                    if mx.abs() < mouth_w {
                        let bend = (mx / mouth_w).powi(2) * r * 0.22;
                        let my = if label == EmotionLabel::Happiness {
                            mouth_y - bend
                        } else {
                            mouth_y - r * 0.2 + bend
                        };
                        if (y - my).abs() < 1.2 {
                            stroke = true;
                        }
                    }
                }
                EmotionLabel::Surprise => {
                    let d = (mx / (mouth_w * 0.5)).powi(2) + ((y - mouth_y) / (r * 0.22)).powi(2);
                    if d < 1.0 {
                        stroke = true;
                    }
                }
                EmotionLabel::Hate => {
                    if mx.abs() < mouth_w && (y - mouth_y).abs() < 1.0 {
                        stroke = true;
                    }
                }
            }
            if stroke {
                v = ink;
            }
            v += rng.gen_range(-noise..=noise);
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// `n` cartoon faces with labels cycling through the four classes, with
/// random position, size, contrast and additive uniform pixel noise.
pub fn cartoon_faces(n: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = EmotionLabel::ALL[i % 4];
            LabeledImage {
                pixels: cartoon_face(label, &mut rng, 25.0),
                label,
            }
        })
        .collect()
}

/// Four flat images, one per label, at gray levels 32, 96, 160 and 224.
pub fn constant_images(side: usize) -> Vec<LabeledImage> {
    EmotionLabel::ALL
        .iter()
        .map(|&label| LabeledImage {
            pixels: vec![32 + 64 * label.index() as u8; side * side],
            label,
        })
        .collect()
}

/// Text classifier trained on a 2,000-document [`keyword_corpus`].
pub fn demo_text_classifier(seed: u64) -> Result<TextClassifier> {
    Ok(train_text_models(&keyword_corpus(2000, seed), &TextTrainConfig::default())?.0)
}

/// Small face network without batch normalization, for fixtures that
/// must memorize a handful of patches.
pub fn memorizer_descriptor() -> Descriptor {
    Descriptor::from_text(
        "input 48 48 1\n\
         conv k=3 in=1 out=6 stride=2 pad=same l2=0\n\
         relu\n\
         conv k=3 in=6 out=8 stride=2 pad=same l2=0\n\
         relu\n\
         conv k=1 in=8 out=4 stride=1 pad=same l2=0\n\
         gap\n",
    )
    .expect("static descriptor")
}

/// Trains [`memorizer_descriptor`] for 200 full-batch epochs on 48×48
/// patches; errors if any patch is still misclassified.
pub fn memorize_faces(patches: &[(GrayImage, EmotionLabel)], seed: u64) -> Result<Network> {
    let samples: Vec<Sample> = patches
        .iter()
        .map(|(img, label)| {
            if img.width() != FACE_SIDE || img.height() != FACE_SIDE {
                return Err(Error::InvalidArgument(format!(
                    "patch must be {FACE_SIDE}x{FACE_SIDE}"
                )));
            }
            Ok(Sample {
                input: scale_pixels(img),
                label: *label,
            })
        })
        .collect::<Result<_>>()?;
    let mut net = Network::new(&memorizer_descriptor(), seed)?;
    let config = TrainConfig {
        epochs: 200,
        batch_size: samples.len().max(1),
        learning_rate: 0.05,
        seed,
        augmentation: AugmentConfig::none(),
        ..TrainConfig::default()
    };
    train(&mut net, &samples, &[], &config)?;
    if evaluate_accuracy(&net, &samples)? < 1.0 {
        return Err(Error::InvalidArgument(
            "patches could not be memorized".into(),
        ));
    }
    Ok(net)
}

/// Face network that labels `happy_patch` Happiness and flat gray patches
/// at 96, 160 and 224 as Sadness, Surprise and Hate.
pub fn demo_face_network(happy_patch: &GrayImage, seed: u64) -> Result<Network> {
    let mut patches = vec![(happy_patch.clone(), EmotionLabel::Happiness)];
    for img in constant_images(FACE_SIDE).into_iter().skip(1) {
        patches.push((GrayImage::new(FACE_SIDE, FACE_SIDE, img.pixels)?, img.label));
    }
    memorize_faces(&patches, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpora_are_seeded_and_balanced() {
        let a = keyword_corpus(40, 3);
        assert_eq!(a, keyword_corpus(40, 3));
        assert_ne!(a, keyword_corpus(40, 4));
        for l in EmotionLabel::ALL {
            assert_eq!(a.iter().filter(|d| d.label == l).count(), 10);
        }
        let f = cartoon_faces(8, 1);
        assert_eq!(f, cartoon_faces(8, 1));
        assert!(f.iter().all(|i| i.pixels.len() == FER_SIDE * FER_SIDE));
    }
}
