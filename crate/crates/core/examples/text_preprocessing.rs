//! Walks a few raw messages through normalization, tokenization and
//! lemmatization, then builds a vocabulary and prints count and tf-idf
//! vectors.
//!
//! ```text
//! cargo run --example text_preprocessing -- ["your own message"]
//! ```

use liesensor::features::{count_vectorize, fit_idf, tfidf_vectorize};
use liesensor::textprep::{build_vocabulary, lemmatize, normalize_text, preprocess, tokenize};

fn main() -> liesensor::Result<()> {
    let mut messages: Vec<String> = vec![
        "Sooooo HAPPY today!!! #blessed http://t.co/xyz".into(),
        "@anna missing you, crying all night".into(),
        "Whoa, didn't expect THAT... omg".into(),
        "I hate mondays. Hated the traffic too".into(),
        "happy happy day, missing nothing".into(),
    ];
    messages.extend(std::env::args().skip(1));

    for m in &messages {
        let normalized = normalize_text(m);
        let tokens = tokenize(&normalized).tokens;
        let lemmas: Vec<String> = tokens.iter().map(|t| lemmatize(t)).collect();
        println!("{m:?}");
        println!("  normalized: {normalized:?}");
        println!("  tokens:     {tokens:?}");
        println!("  lemmas:     {lemmas:?}");
    }

    let docs: Vec<_> = messages.iter().map(|m| preprocess(m)).collect();
    // Keep only terms seen in at least two messages.
    let vocab = build_vocabulary(&docs, 2)?;
    println!(
        "\nvocabulary ({} terms): {:?}",
        vocab.len(),
        vocab.terms().collect::<Vec<_>>()
    );

    let idf = fit_idf(&docs, &vocab)?;
    for (m, doc) in messages.iter().zip(&docs) {
        let counts = count_vectorize(doc, &vocab);
        let tfidf = tfidf_vectorize(doc, &vocab, &idf)?;
        let show = |v: &liesensor::features::SparseVector| {
            v.entries()
                .iter()
                .map(|&(i, x)| format!("{}={x:.3}", vocab.term(i).unwrap_or("?")))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!(
            "\n{m:?}\n  count:  {}\n  tf-idf: {}",
            show(&counts),
            show(&tfidf)
        );
    }
    Ok(())
}
