//! Trains the reduced mini-Xception face classifier and saves its weights.
//!
//! Uses the FER-2013 CSV named by `LIESENSOR_FER_CSV` when set (a
//! stratified 2,000-image subset), otherwise generated cartoon faces.
//!
//!     cargo run --release --example cnn_training -- [epochs] [out.lswt]

use std::time::Instant;

use liesensor::cnn::{
    mini_xception, samples_from_images, save_weights, train_with_progress, Network, TrainConfig,
};
use liesensor::corpus::{load_fer_csv, split_dataset, LabeledImage, SplitSpec, FER_SIDE};
use liesensor::synth::cartoon_faces;

fn subset(images: Vec<LabeledImage>, n: usize) -> liesensor::Result<Vec<LabeledImage>> {
    if images.len() <= n {
        return Ok(images);
    }
    let spec = SplitSpec {
        train_fraction: n as f64 / images.len() as f64,
        seed: 7,
    };
    Ok(split_dataset(&images, spec)?.0)
}

fn main() -> liesensor::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|a| a.parse().expect("epochs")).unwrap_or(8);
    let out = args.next().unwrap_or_else(|| "face.lswt".into());

    let images = match std::env::var("LIESENSOR_FER_CSV") {
        Ok(path) => {
            let (images, report) = load_fer_csv(&path)?;
            println!("loaded {path}: {}", report.to_json());
            subset(images, 2000)?
        }
        Err(_) => {
            println!("LIESENSOR_FER_CSV not set; using 2000 synthetic cartoon faces");
            cartoon_faces(2000, 11)
        }
    };
    let (train_set, val_set) = split_dataset(&images, SplitSpec::default())?;
    let train_set = samples_from_images(&train_set)?;
    let val_set = samples_from_images(&val_set)?;

    let descriptor = mini_xception([FER_SIDE, FER_SIDE, 1], 0.5, 1e-4);
    let mut net = Network::new(&descriptor, 0)?;
    println!(
        "{} train / {} val images, {} parameters",
        train_set.len(),
        val_set.len(),
        net.param_count()
    );

    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    println!("epoch,loss,val_acc");
    train_with_progress(&mut net, &train_set, &val_set, &config, |r| {
        println!(
            "{}  train_acc={:.3} ({:.0?})",
            r.to_line(),
            r.train_accuracy,
            start.elapsed()
        );
    })?;
    save_weights(&net, &out)?;
    println!("weights written to {out}");
    Ok(())
}
