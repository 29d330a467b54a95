//! A small NHWC convolutional network engine: layers with hand-written
//! backward passes, softmax cross-entropy, SGD with momentum, augmentation
//! and a checksummed weight file.

mod layers;
mod network;
mod tensor;
mod train;
mod weights;

pub use layers::{
    global_avg_pool, out_dim, BatchNorm, Conv2d, Layer, MaxPool, Padding, Param, SepConv2d,
};
pub use network::{
    mini_xception, softmax_cross_entropy, softmax_cross_entropy_grad, softmax_rows, BatchLoss,
    Descriptor, LayerSpec, Network, BN_EPSILON, BN_MOMENTUM,
};
pub use tensor::Tensor;
pub use train::{
    augment, evaluate_accuracy, flip_horizontal, train, train_with_progress, AugmentConfig,
    EpochRecord, Sample, TrainConfig,
};
pub use weights::{
    load_weights, save_weights, weights_from_bytes, weights_from_bytes_for, weights_to_bytes,
    WEIGHTS_FORMAT_VERSION,
};

use crate::corpus::LabeledImage;
use crate::label::NUM_LABELS;
use crate::textclf::TextPrediction;
use crate::vision::{scale_pixels, GrayImage};
use crate::Result;

/// Face-channel prediction; same shape as the text channel's.
pub type FacePrediction = TextPrediction;

/// Scales the patch to `[−1, 1]`, runs the network in inference mode and
/// returns the softmax scores with their argmax.
pub fn predict_face(network: &Network, patch: &GrayImage) -> Result<FacePrediction> {
    let x = scale_pixels(patch).reshape(vec![1, patch.height(), patch.width(), 1])?;
    let probs = network.predict_proba(&x)?;
    let mut scores = [0.0; NUM_LABELS];
    scores.copy_from_slice(&probs.data()[..NUM_LABELS]);
    Ok(TextPrediction::from_scores(scores))
}

/// Training samples from 48×48 dataset images.
pub fn samples_from_images(images: &[LabeledImage]) -> Result<Vec<Sample>> {
    images
        .iter()
        .map(|img| {
            let side = crate::corpus::FER_SIDE;
            let gray = GrayImage::new(side, side, img.pixels.clone())?;
            Ok(Sample {
                input: scale_pixels(&gray),
                label: img.label,
            })
        })
        .collect()
}
