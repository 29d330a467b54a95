//! Detects faces in a PGM image with the bundled frontal-face cascade and
//! writes the 48×48 crop of the largest one.
//!
//! ```text
//! cargo run --example face_detection -- [input.pgm] [crop.pgm]
//! ```

use std::time::Instant;

use liesensor::vision::{crop_face, default_frontal_face, detect_faces, DetectParams, GrayImage};

fn main() -> liesensor::Result<()> {
    let mut args = std::env::args().skip(1);
    let input = args.next().unwrap_or_else(|| {
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/fixtures/astronaut_160.pgm"
        )
        .to_string()
    });
    let output = args.next();

    let image = GrayImage::load_pgm(&input)?;
    let cascade = default_frontal_face();
    println!(
        "cascade: {}x{} window, {} stages, {} weak classifiers",
        cascade.window_width,
        cascade.window_height,
        cascade.stages.len(),
        cascade.weak_count()
    );

    let started = Instant::now();
    let faces = detect_faces(&image, &cascade, &DetectParams::default());
    println!(
        "{}: {}x{}, {} face(s) in {:.1} ms",
        input,
        image.width(),
        image.height(),
        faces.len(),
        started.elapsed().as_secs_f64() * 1e3
    );
    for f in &faces {
        println!(
            "  box x={} y={} w={} h={} hits={}",
            f.x, f.y, f.w, f.h, f.neighbors
        );
    }

    if let (Some(face), Some(path)) = (faces.first(), output) {
        crop_face(&image, face)?.save_pgm(&path)?;
        println!("wrote 48x48 crop to {path}");
    }
    Ok(())
}
