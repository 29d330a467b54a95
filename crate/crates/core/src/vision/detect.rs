//! Sliding-window cascade evaluation over a scale pyramid, and grouping of
//! raw hits into face boxes.

use super::{BoundingBox, Cascade, GrayImage, IntegralImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    /// Window growth per pyramid level; must exceed 1.
    pub scale_factor: f64,
    /// Window stride in pixels at every level.
    pub step: usize,
    /// Smallest window considered; defaults to the cascade window.
    pub min_size: Option<(usize, usize)>,
    pub max_size: Option<(usize, usize)>,
    /// Raw hits a merged box needs to be reported.
    pub min_neighbors: usize,
    /// Hits join a group when their IoU with its first hit exceeds this.
    pub iou_threshold: f64,
    /// Re-derive the first rect weight of multi-rect features after
    /// rounding scaled rects, so a flat patch still gives a zero response.
    pub weight_correction: bool,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            scale_factor: 1.1,
            step: 1,
            min_size: None,
            max_size: None,
            min_neighbors: 2,
            iou_threshold: 0.3,
            weight_correction: true,
        }
    }
}

/// A window that passed every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RawWindow {
    pub level: usize,
    pub y: usize,
    pub x: usize,
    pub w: usize,
    pub h: usize,
}

/// Window size and scale for each pyramid level, smallest first.
///
/// Level `k` uses scale `factor^k` and window `round(W·s) × round(H·s)`.
/// Levels below `min_size` are skipped; enumeration stops once the window
/// no longer fits the image or exceeds `max_size`.
pub fn pyramid_levels(
    cascade: &Cascade,
    width: usize,
    height: usize,
    params: &DetectParams,
) -> Vec<(usize, f64, usize, usize)> {
    let mut levels = Vec::new();
    if !(params.scale_factor > 1.0) {
        return levels;
    }
    let (min_w, min_h) = params
        .min_size
        .unwrap_or((cascade.window_width, cascade.window_height));
    for k in 0.. {
        let scale = params.scale_factor.powi(k as i32);
        let ww = (cascade.window_width as f64 * scale).round() as usize;
        let wh = (cascade.window_height as f64 * scale).round() as usize;
        if ww > width || wh > height {
            break;
        }
        if let Some((max_w, max_h)) = params.max_size {
            if ww > max_w || wh > max_h {
                break;
            }
        }
        if ww >= min_w && wh >= min_h {
            levels.push((k, scale, ww, wh));
        }
    }
    levels
}

struct ScaledRect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    weight: f64,
}

struct ScaledWeak {
    rects: Vec<ScaledRect>,
    threshold: f64,
    left: f64,
    right: f64,
}

struct ScaledStage {
    threshold: f64,
    weak: Vec<ScaledWeak>,
}

/// Rects scaled with rounding, clipped to the scaled window, each side at
/// least one pixel.
fn scale_cascade(
    cascade: &Cascade,
    scale: f64,
    ww: usize,
    wh: usize,
    correct: bool,
) -> Vec<ScaledStage> {
    let r = |v: usize| (v as f64 * scale).round() as usize;
    cascade
        .stages
        .iter()
        .map(|stage| ScaledStage {
            threshold: stage.threshold,
            weak: stage
                .weak
                .iter()
                .map(|weak| {
                    let mut rects: Vec<ScaledRect> = weak
                        .rects
                        .iter()
                        .map(|hr| {
                            let (x, y) = (r(hr.x).min(ww - 1), r(hr.y).min(wh - 1));
                            ScaledRect {
                                x,
                                y,
                                w: r(hr.w).clamp(1, ww - x),
                                h: r(hr.h).clamp(1, wh - y),
                                weight: hr.weight,
                            }
                        })
                        .collect();
                    if correct && rects.len() > 1 {
                        let rest: f64 = rects[1..]
                            .iter()
                            .map(|s| s.weight * (s.w * s.h) as f64)
                            .sum();
                        rects[0].weight = -rest / (rects[0].w * rects[0].h) as f64;
                    }
                    ScaledWeak {
                        rects,
                        threshold: weak.threshold,
                        left: weak.left_value,
                        right: weak.right_value,
                    }
                })
                .collect(),
        })
        .collect()
}

/// Stages passed by the window at `(x, y)`; `None` for a flat window.
///
/// Normalization uses the window inset by one pixel on each side: feature
/// values are `Σ weight · rect_sum / area` and stump thresholds are scaled
/// by the inset's standard deviation.
fn evaluate(
    ii: &IntegralImage,
    stages: &[ScaledStage],
    x: usize,
    y: usize,
    ww: usize,
    wh: usize,
) -> Option<usize> {
    let (nx, ny, nw, nh) = if ww > 2 && wh > 2 {
        (x + 1, y + 1, ww - 2, wh - 2)
    } else {
        (x, y, ww, wh)
    };
    let area = (nw * nh) as f64;
    let mean = ii.rect_sum(nx, ny, nw, nh) as f64 / area;
    let var = ii.rect_sq_sum(nx, ny, nw, nh) as f64 / area - mean * mean;
    if var <= 0.0 {
        return None;
    }
    let std = var.sqrt();
    for (passed, stage) in stages.iter().enumerate() {
        let mut total = 0.0;
        for weak in &stage.weak {
            let mut value = 0.0;
            for r in &weak.rects {
                value += r.weight * ii.rect_sum(x + r.x, y + r.y, r.w, r.h) as f64;
            }
            value /= area;
            total += if value < weak.threshold * std {
                weak.left
            } else {
                weak.right
            };
        }
        if total < stage.threshold {
            return Some(passed);
        }
    }
    Some(stages.len())
}

/// Every window passing all stages, in `(level, y, x)` order.
pub fn raw_detections(img: &GrayImage, cascade: &Cascade, params: &DetectParams) -> Vec<RawWindow> {
    let mut hits = Vec::new();
    if params.step == 0
        || img.width() < cascade.window_width
        || img.height() < cascade.window_height
    {
        return hits;
    }
    let ii = IntegralImage::new(img);
    for (level, scale, ww, wh) in pyramid_levels(cascade, img.width(), img.height(), params) {
        let stages = scale_cascade(cascade, scale, ww, wh, params.weight_correction);
        for y in (0..=img.height() - wh).step_by(params.step) {
            for x in (0..=img.width() - ww).step_by(params.step) {
                if evaluate(&ii, &stages, x, y, ww, wh) == Some(stages.len()) {
                    hits.push(RawWindow {
                        level,
                        y,
                        x,
                        w: ww,
                        h: wh,
                    });
                }
            }
        }
    }
    hits
}

/// Greedy grouping: each hit (in the given order) joins the first group
/// whose current mean box it overlaps by more than `iou_threshold`,
/// otherwise founds a new group. Groups with at least `min_neighbors`
/// members become boxes at the members' mean position and size, largest
/// area first.
pub fn group_windows(raw: &[RawWindow], stages: usize, params: &DetectParams) -> Vec<BoundingBox> {
    struct Group {
        sum: [usize; 4],
        n: usize,
    }
    impl Group {
        fn mean(&self, stages: usize) -> BoundingBox {
            let m = |i: usize| (self.sum[i] as f64 / self.n as f64).round() as usize;
            BoundingBox {
                x: m(0),
                y: m(1),
                w: m(2),
                h: m(3),
                score: stages,
                neighbors: self.n,
            }
        }
    }
    let mut groups: Vec<Group> = Vec::new();
    for r in raw {
        let b = BoundingBox {
            x: r.x,
            y: r.y,
            w: r.w,
            h: r.h,
            score: stages,
            neighbors: 1,
        };
        match groups
            .iter_mut()
            .find(|g| g.mean(stages).iou(&b) > params.iou_threshold)
        {
            Some(g) => {
                g.sum = [
                    g.sum[0] + r.x,
                    g.sum[1] + r.y,
                    g.sum[2] + r.w,
                    g.sum[3] + r.h,
                ];
                g.n += 1;
            }
            None => groups.push(Group {
                sum: [r.x, r.y, r.w, r.h],
                n: 1,
            }),
        }
    }
    let mut boxes: Vec<BoundingBox> = groups
        .iter()
        .filter(|g| g.n >= params.min_neighbors.max(1))
        .map(|g| g.mean(stages))
        .collect();
    boxes.sort_by(|a, b| {
        b.area()
            .cmp(&a.area())
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    boxes
}

/// All merged detections, largest first. Empty when the image is smaller
/// than the cascade window or nothing passes.
pub fn detect_faces(img: &GrayImage, cascade: &Cascade, params: &DetectParams) -> Vec<BoundingBox> {
    let raw = raw_detections(img, cascade, params);
    let mut boxes = group_windows(&raw, cascade.stages.len(), params);
    // Independent rounding of the mean corner and size can overhang by a pixel.
    for b in &mut boxes {
        b.w = b.w.min(img.width() - b.x);
        b.h = b.h.min(img.height() - b.y);
    }
    boxes
}

/// The single face used downstream: the largest merged detection.
pub fn detect_largest_face(
    img: &GrayImage,
    cascade: &Cascade,
    params: &DetectParams,
) -> Option<BoundingBox> {
    detect_faces(img, cascade, params).into_iter().next()
}
