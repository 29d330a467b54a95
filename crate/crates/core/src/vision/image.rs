use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::Tensor;
use crate::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Image(format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Parses a binary PGM (`P5`). `#` comments are allowed in the header.
    /// Maxval below 255 is rescaled to the full byte range.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Image("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::Image(format!(
                "unsupported PGM magic `{}` (only P5)",
                fields[0]
            )));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Image(format!("bad PGM {what} `{s}`")))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::Image("PGM has zero size".into()));
        }
        if !(1..=255).contains(&maxval) {
            return Err(Error::Image(format!("PGM maxval {maxval} not in 1..=255")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Image("truncated PGM header".into()));
        }
        pos += 1;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::Image("PGM dimensions overflow".into()))?;
        let raster = bytes.get(pos..pos + n).ok_or_else(|| {
            Error::Image(format!(
                "PGM raster needs {n} bytes, got {}",
                bytes.len() - pos
            ))
        })?;
        let data = if maxval == 255 {
            raster.to_vec()
        } else {
            raster
                .iter()
                .map(|&p| {
                    ((p.min(maxval as u8) as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8
                })
                .collect()
        };
        GrayImage::new(width, height, data)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    /// Bilinear resample with pixel-center alignment:
    /// `src = (dst + 0.5) · (in / out) − 0.5`, clamped to the image.
    pub fn resize(&self, width: usize, height: usize) -> Result<GrayImage> {
        self.resample_region(
            0.0,
            0.0,
            self.width as f64,
            self.height as f64,
            width,
            height,
        )
    }

    fn resample_region(
        &self,
        x0: f64,
        y0: f64,
        w: f64,
        h: f64,
        out_w: usize,
        out_h: usize,
    ) -> Result<GrayImage> {
        if self.is_empty() || out_w == 0 || out_h == 0 {
            return Err(Error::Image("cannot resample an empty image".into()));
        }
        let (sx, sy) = (w / out_w as f64, h / out_h as f64);
        let (max_x, max_y) = (x0 + w - 1.0, y0 + h - 1.0);
        Ok(GrayImage::from_fn(out_w, out_h, |dx, dy| {
            let x = (x0 + (dx as f64 + 0.5) * sx - 0.5).clamp(x0, max_x);
            let y = (y0 + (dy as f64 + 0.5) * sy - 0.5).clamp(y0, max_y);
            let (xa, ya) = (x.floor() as usize, y.floor() as usize);
            let (xb, yb) = ((xa + 1).min(max_x as usize), (ya + 1).min(max_y as usize));
            let (fx, fy) = (x - xa as f64, y - ya as f64);
            let p = |xx: usize, yy: usize| self.get(xx, yy) as f64;
            let top = p(xa, ya) * (1.0 - fx) + p(xb, ya) * fx;
            let bottom = p(xa, yb) * (1.0 - fx) + p(xb, yb) * fx;
            (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
        }))
    }
}

/// Detected face rectangle in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    /// Cascade stages passed.
    pub score: usize,
    /// Raw window hits merged into this box.
    pub neighbors: usize,
}

impl BoundingBox {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x + self.w)
            .min(other.x + other.w)
            .saturating_sub(self.x.max(other.x));
        let iy = (self.y + self.h)
            .min(other.y + other.h)
            .saturating_sub(self.y.max(other.y));
        let inter = (ix * iy) as f64;
        let union = (self.area() + other.area()) as f64 - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Side of the classifier's input patch.
pub const FACE_SIDE: usize = 48;

/// Crops `bbox` and resamples it bilinearly to 48×48.
pub fn crop_face(img: &GrayImage, bbox: &BoundingBox) -> Result<GrayImage> {
    if bbox.w == 0 || bbox.h == 0 || bbox.x + bbox.w > img.width() || bbox.y + bbox.h > img.height()
    {
        return Err(Error::Image(format!(
            "box {}x{}+{}+{} outside the {}x{} image",
            bbox.w,
            bbox.h,
            bbox.x,
            bbox.y,
            img.width(),
            img.height()
        )));
    }
    img.resample_region(
        bbox.x as f64,
        bbox.y as f64,
        bbox.w as f64,
        bbox.h as f64,
        FACE_SIDE,
        FACE_SIDE,
    )
}

/// Maps a gray level to `(p / 255 − 0.5) · 2`, so 0 → −1 and 255 → +1.
pub fn scale_pixel(p: u8) -> f64 {
    (p as f64 / 255.0 - 0.5) * 2.0
}

/// Scales an image into an `(h, w, 1)` tensor in `[−1, 1]`.
pub fn scale_pixels(img: &GrayImage) -> Tensor {
    Tensor::new(
        vec![img.height(), img.width(), 1],
        img.data().iter().map(|&p| scale_pixel(p)).collect(),
    )
    .expect("image shape")
}
