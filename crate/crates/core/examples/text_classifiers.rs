//! Trains naive Bayes, linear SVM, logistic regression and random forest on
//! the same split, prints the validation table, and saves the selected
//! model as a text bundle.
//!
//! Reads the tweet CSV named by `LIESENSOR_TWEETS_CSV` when set, otherwise
//! a generated keyword corpus.
//!
//! ```text
//! cargo run --release --example text_classifiers -- [count|tfidf] [out.lsb]
//! ```

use std::time::Instant;

use liesensor::corpus::load_tweet_csv;
use liesensor::features::FeatureKind;
use liesensor::synth::keyword_corpus;
use liesensor::textclf::{train_text_models, TextTrainConfig};

fn main() -> liesensor::Result<()> {
    let mut args = std::env::args().skip(1);
    let feature_kind: FeatureKind = args
        .next()
        .map(|a| a.parse().expect("count or tfidf"))
        .unwrap_or(FeatureKind::Count);
    let out = args.next().unwrap_or_else(|| "text.lsb".into());

    let records = match std::env::var("LIESENSOR_TWEETS_CSV") {
        Ok(path) => {
            let (records, report) = load_tweet_csv(&path)?;
            println!("loaded {path}: {}", report.to_json());
            records
        }
        Err(_) => {
            println!("LIESENSOR_TWEETS_CSV not set; using 2000 synthetic keyword documents");
            keyword_corpus(2000, 5)
        }
    };

    let config = TextTrainConfig {
        feature_kind,
        ..TextTrainConfig::default()
    };
    let start = Instant::now();
    let (classifier, report) = train_text_models(&records, &config)?;
    println!(
        "{} train / {} validation docs, {} terms, {} features, {:.1?}",
        report.train_docs,
        report.validation_docs,
        report.vocabulary_size,
        report.feature_kind,
        start.elapsed()
    );
    for (kind, acc) in &report.selection.per_model_accuracy {
        let mark = if *kind == report.selection.chosen {
            "  <- selected"
        } else {
            ""
        };
        println!("  {:<20} {:6.2}%{mark}", kind.name(), acc * 100.0);
    }

    for text in [
        "what a wonderful surprise party",
        "i miss my dog so much",
        "this traffic makes me furious",
    ] {
        match classifier.predict(text)? {
            Some(p) => println!("{text:?} -> {:?} {:.3?}", p.label, p.scores),
            None => println!("{text:?} -> no in-vocabulary words"),
        }
    }
    classifier.save(&out)?;
    println!("bundle written to {out}");
    Ok(())
}
