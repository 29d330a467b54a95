//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 internal error.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use liesensor::cnn::{
    mini_xception, samples_from_images, save_weights, train_with_progress, AugmentConfig, Network,
    TrainConfig,
};
use liesensor::corpus::{
    load_fer_csv, load_tweet_csv_with, split_dataset, LabelMap, SplitSpec, FER_SIDE,
};
use liesensor::features::FeatureKind;
use liesensor::synth::{cartoon_faces, keyword_corpus};
use liesensor::textclf::{train_text_models, TextTrainConfig};
use liesensor::verifier::{evaluate, load_fixtures, LieSensor};
use liesensor::vision::GrayImage;

use crate::config::ServiceConfig;
use crate::server::{load_models, serve};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "liesensor",
    version,
    about = "Text/face emotion agreement checker"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ModelArgs {
    /// Text model bundle.
    #[arg(long, env = "LIESENSOR_BUNDLE")]
    pub bundle: PathBuf,
    /// CNN weight file.
    #[arg(long, env = "LIESENSOR_WEIGHTS")]
    pub weights: PathBuf,
    /// Haar cascade XML (defaults to the bundled frontal-face cascade).
    #[arg(long, env = "LIESENSOR_CASCADE")]
    pub cascade: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train all four text classifiers and save the best as a bundle.
    TrainText {
        /// Tweet CSV with tweet_id, sentiment, author and content columns.
        tweets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "count")]
        feature: FeatureKind,
        /// `raw_name = Label | drop` overrides for the sentiment mapping.
        #[arg(long)]
        label_map: Option<PathBuf>,
        /// Train on N generated keyword documents instead of a CSV.
        #[arg(long, conflicts_with = "tweets")]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the face CNN and save its weights.
    TrainFace {
        /// FER-2013 CSV with emotion, pixels and (optionally) Usage columns.
        fer: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        /// Channel width multiplier.
        #[arg(long, default_value_t = 0.5)]
        width: f64,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        /// Stratified subset size; 0 keeps every image.
        #[arg(long, default_value_t = 2000)]
        subset: usize,
        /// Train on N generated cartoon faces instead of a CSV.
        #[arg(long, conflicts_with = "fer")]
        synthetic: Option<usize>,
        #[arg(long)]
        no_augment: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the `epoch,loss,val_accuracy` lines here.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Verify a labelled fixture list and print precision and recall.
    Evaluate {
        #[command(flatten)]
        models: ModelArgs,
        /// CSV with text, image (path relative to the CSV) and truth columns.
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Verify one message against one face image.
    Verify {
        #[arg(long)]
        text: String,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
        /// Print JSON instead of the key=value record.
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<liesensor::Error> for CliError {
    fn from(e: liesensor::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))
}

fn sensor(args: &ModelArgs) -> Result<LieSensor, CliError> {
    let config = ServiceConfig {
        bind: ServiceConfig::DEFAULT_BIND.parse().expect("default bind"),
        bundle: args.bundle.clone(),
        weights: args.weights.clone(),
        cascade: args.cascade.clone(),
        max_image_bytes: ServiceConfig::DEFAULT_MAX_IMAGE_BYTES,
        request_timeout: std::time::Duration::from_millis(ServiceConfig::DEFAULT_TIMEOUT_MS),
        history_log: None,
    };
    Ok(load_models(&config)?.sensor)
}

/// Runs one parsed command, writing results to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Internal(e.to_string());
    match command {
        Command::TrainText {
            tweets,
            out: path,
            feature,
            label_map,
            synthetic,
            seed,
        } => {
            let records = match (tweets, synthetic) {
                (Some(csv), _) => {
                    let map = match label_map {
                        Some(p) => LabelMap::load(p)?,
                        None => LabelMap::default(),
                    };
                    let (records, report) = load_tweet_csv_with(&csv, &map)?;
                    writeln!(out, "loaded {}: {}", csv.display(), report.to_json()).map_err(io)?;
                    records
                }
                (None, Some(n)) => keyword_corpus(n, seed),
                (None, None) => {
                    return Err(CliError::Usage("give a tweet CSV or --synthetic N".into()))
                }
            };
            let config = TextTrainConfig {
                feature_kind: feature,
                split: SplitSpec {
                    seed,
                    ..SplitSpec::default()
                },
                ..TextTrainConfig::default()
            };
            let (classifier, report) = train_text_models(&records, &config)?;
            classifier.save(&path)?;
            writeln!(out, "{}", json(&report)?).map_err(io)?;
            writeln!(out, "bundle written to {}", path.display()).map_err(io)?;
        }
        Command::TrainFace {
            fer,
            out: path,
            epochs,
            width,
            l2,
            learning_rate,
            subset,
            synthetic,
            no_augment,
            seed,
            history,
        } => {
            if !(width > 0.0 && width.is_finite()) {
                return Err(CliError::Usage("--width must be positive".into()));
            }
            let images = match (fer, synthetic) {
                (Some(csv), _) => {
                    let (images, report) = load_fer_csv(&csv)?;
                    writeln!(out, "loaded {}: {}", csv.display(), report.to_json()).map_err(io)?;
                    if subset > 0 && subset < images.len() {
                        let spec = SplitSpec {
                            train_fraction: subset as f64 / images.len() as f64,
                            seed,
                        };
                        split_dataset(&images, spec)?.0
                    } else {
                        images
                    }
                }
                (None, Some(n)) => cartoon_faces(n, seed),
                (None, None) => {
                    return Err(CliError::Usage("give a FER CSV or --synthetic N".into()))
                }
            };
            let (train_set, val_set) = split_dataset(
                &images,
                SplitSpec {
                    seed,
                    ..SplitSpec::default()
                },
            )?;
            let train_set = samples_from_images(&train_set)?;
            let val_set = samples_from_images(&val_set)?;
            let mut net = Network::new(&mini_xception([FER_SIDE, FER_SIDE, 1], width, l2), seed)?;
            let config = TrainConfig {
                epochs,
                learning_rate,
                seed,
                augmentation: if no_augment {
                    AugmentConfig::none()
                } else {
                    AugmentConfig::default()
                },
                ..TrainConfig::default()
            };
            let mut lines = Vec::new();
            writeln!(out, "epoch,loss,val_accuracy").map_err(io)?;
            let mut write_err = None;
            train_with_progress(&mut net, &train_set, &val_set, &config, |r| {
                lines.push(r.to_line());
                if let Err(e) = writeln!(out, "{}", r.to_line()) {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(io(e));
            }
            if let Some(h) = history {
                let mut text = String::from("epoch,loss,val_accuracy\n");
                text.extend(lines.iter().map(|l| format!("{l}\n")));
                std::fs::write(&h, text).map_err(io)?;
            }
            save_weights(&net, &path)?;
            writeln!(out, "weights written to {}", path.display()).map_err(io)?;
        }
        Command::Evaluate { models, fixtures } => {
            let sensor = sensor(&models)?;
            let cases = load_fixtures(&fixtures)?;
            let mut results = Vec::with_capacity(cases.len());
            for case in &cases {
                let image = GrayImage::load_pgm(&case.image)?;
                let r = sensor.verify(&case.text, &image)?;
                writeln!(out, "{}", r.to_record()).map_err(io)?;
                results.push((r, case.truth));
            }
            writeln!(out, "{}", json(&evaluate(&results)?)?).map_err(io)?;
        }
        Command::Verify {
            text,
            image,
            models,
            json: as_json,
        } => {
            let sensor = sensor(&models)?;
            let image = GrayImage::load_pgm(&image)?;
            let r = sensor.verify(&text, &image)?;
            let line = if as_json { json(&r)? } else { r.to_record() };
            writeln!(out, "{line}").map_err(io)?;
        }
        Command::Serve { config } => {
            let config = ServiceConfig::load(&config).map_err(|e| CliError::Data(e.to_string()))?;
            let runtime = tokio::runtime::Runtime::new().map_err(io)?;
            runtime.block_on(serve(config)).map_err(|e| match e {
                crate::server::ServeError::Models(e) => CliError::Data(e.to_string()),
                other => CliError::Internal(other.to_string()),
            })?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
