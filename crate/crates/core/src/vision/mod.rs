//! Image I/O, pixel scaling, integral images and Haar cascade face
//! detection.

mod cascade;
mod detect;
mod image;
mod integral;

pub use cascade::{load_cascade, Cascade, HaarRect, Stage, WeakClassifier};
pub use detect::{
    detect_faces, detect_largest_face, group_windows, pyramid_levels, raw_detections, DetectParams,
    RawWindow,
};
pub use image::{crop_face, scale_pixel, scale_pixels, BoundingBox, GrayImage, FACE_SIDE};
pub use integral::{integral_image, IntegralImage};

/// The stock OpenCV frontal-face cascade (24×24 window), bundled so the
/// pipeline works without external files.
pub const DEFAULT_FRONTAL_FACE_XML: &str =
    include_str!("../../data/haarcascade_frontalface_default.xml");

pub fn default_frontal_face() -> Cascade {
    Cascade::from_xml(DEFAULT_FRONTAL_FACE_XML).expect("bundled cascade parses")
}
