//! Haar cascade model and its XML reader/writer.
//!
//! Both XML layouts in common use are read: the older one with `<size>`,
//! `<trees>` and inline `<feature>` elements, and the newer one with
//! `<width>`/`<height>`, `<weakClassifiers>` and a shared `<features>` table.
//! Only stump classifiers (one split per weak classifier) on upright
//! features are supported. Serialization always writes the older layout.

use std::fmt::Write as _;
use std::path::Path;

use roxmltree::{Document, Node};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub weight: f64,
}

/// Decision stump over one Haar feature: `left_value` when the
/// normalized feature value is below `threshold`, else `right_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakClassifier {
    pub rects: Vec<HaarRect>,
    pub threshold: f64,
    pub left_value: f64,
    pub right_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub threshold: f64,
    pub weak: Vec<WeakClassifier>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub window_width: usize,
    pub window_height: usize,
    pub stages: Vec<Stage>,
}

impl Cascade {
    pub fn weak_count(&self) -> usize {
        self.stages.iter().map(|s| s.weak.len()).sum()
    }

    /// Checks every structural invariant; errors carry the element path.
    pub fn validate(&self) -> Result<()> {
        if self.window_width == 0 || self.window_height == 0 {
            return Err(cascade_err("size", "window has zero size"));
        }
        if self.stages.is_empty() {
            return Err(cascade_err("stages", "cascade has no stages"));
        }
        for (si, stage) in self.stages.iter().enumerate() {
            if stage.weak.is_empty() {
                return Err(cascade_err(
                    &format!("stages[{si}]"),
                    "stage has no weak classifiers",
                ));
            }
            for (wi, weak) in stage.weak.iter().enumerate() {
                let path = format!("stages[{si}].weak[{wi}]");
                if weak.rects.is_empty() || weak.rects.len() > 3 {
                    return Err(cascade_err(
                        &path,
                        format!("{} rects (expected 1 to 3)", weak.rects.len()),
                    ));
                }
                for (ri, r) in weak.rects.iter().enumerate() {
                    if r.w == 0
                        || r.h == 0
                        || r.x + r.w > self.window_width
                        || r.y + r.h > self.window_height
                    {
                        return Err(cascade_err(
                            &format!("{path}.rects[{ri}]"),
                            format!(
                                "rect {} {} {} {} lies outside the {}x{} window",
                                r.x, r.y, r.w, r.h, self.window_width, self.window_height
                            ),
                        ));
                    }
                }
                let values = [weak.threshold, weak.left_value, weak.right_value];
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(cascade_err(&path, "non-finite threshold or leaf value"));
                }
            }
            if !stage.threshold.is_finite() {
                return Err(cascade_err(
                    &format!("stages[{si}]"),
                    "non-finite stage threshold",
                ));
            }
        }
        Ok(())
    }

    /// Writes the older XML layout.
    pub fn to_xml(&self) -> String {
        let mut s = String::from("<?xml version=\"1.0\"?>\n<opencv_storage>\n");
        s.push_str("<cascade type_id=\"opencv-haar-classifier\">\n");
        let _ = writeln!(
            s,
            "  <size>{} {}</size>",
            self.window_width, self.window_height
        );
        s.push_str("  <stages>\n");
        for (i, stage) in self.stages.iter().enumerate() {
            s.push_str("    <_>\n      <trees>\n");
            for weak in &stage.weak {
                s.push_str(
                    "        <_>\n          <_>\n            <feature>\n              <rects>\n",
                );
                for r in &weak.rects {
                    let _ = writeln!(
                        s,
                        "                <_>{} {} {} {} {:?}</_>",
                        r.x, r.y, r.w, r.h, r.weight
                    );
                }
                s.push_str("              </rects>\n              <tilted>0</tilted>\n            </feature>\n");
                let _ = writeln!(s, "            <threshold>{:?}</threshold>", weak.threshold);
                let _ = writeln!(s, "            <left_val>{:?}</left_val>", weak.left_value);
                let _ = writeln!(
                    s,
                    "            <right_val>{:?}</right_val>",
                    weak.right_value
                );
                s.push_str("          </_>\n        </_>\n");
            }
            s.push_str("      </trees>\n");
            let _ = writeln!(
                s,
                "      <stage_threshold>{:?}</stage_threshold>",
                stage.threshold
            );
            let _ = writeln!(s, "      <parent>{}</parent>", i as i64 - 1);
            s.push_str("      <next>-1</next>\n    </_>\n");
        }
        s.push_str("  </stages>\n</cascade>\n</opencv_storage>\n");
        s
    }

    pub fn from_xml(text: &str) -> Result<Self> {
        let doc = Document::parse(text).map_err(|e| cascade_err("xml", e.to_string()))?;
        let root = doc.root_element();
        let body = elements(root)
            .next()
            .ok_or_else(|| cascade_err(root.tag_name().name(), "no cascade element"))?;
        let cascade = if child(body, "size").is_some() {
            parse_old(body)?
        } else if child(body, "width").is_some() {
            parse_new(body)?
        } else {
            return Err(cascade_err(
                body.tag_name().name(),
                "neither <size> nor <width>/<height> found",
            ));
        };
        cascade.validate()?;
        Ok(cascade)
    }
}

fn cascade_err(path: &str, reason: impl Into<String>) -> Error {
    Error::Cascade {
        path: path.to_string(),
        reason: reason.into(),
    }
}

fn elements<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|n| n.is_element())
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    elements(node).find(|n| n.tag_name().name() == name)
}

fn require<'a, 'i>(node: Node<'a, 'i>, name: &str, path: &str) -> Result<Node<'a, 'i>> {
    child(node, name).ok_or_else(|| cascade_err(path, format!("missing <{name}>")))
}

fn text_of(node: Node) -> String {
    node.children()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect::<Vec<_>>()
        .join(" ")
}

fn numbers(node: Node, path: &str) -> Result<Vec<f64>> {
    text_of(node)
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| cascade_err(path, format!("`{t}` is not a number")))
        })
        .collect()
}

fn number(node: Node, name: &str, path: &str) -> Result<f64> {
    let values = numbers(require(node, name, path)?, &format!("{path}.{name}"))?;
    match values[..] {
        [v] => Ok(v),
        _ => Err(cascade_err(
            &format!("{path}.{name}"),
            "expected one number",
        )),
    }
}

fn index(v: f64, path: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(cascade_err(
            path,
            format!("`{v}` is not a non-negative integer"),
        ))
    }
}

fn parse_rects(feature: Node, path: &str) -> Result<Vec<HaarRect>> {
    if let Some(t) = child(feature, "tilted") {
        if numbers(t, path)?.first().copied().unwrap_or(0.0) != 0.0 {
            return Err(cascade_err(path, "tilted features are not supported"));
        }
    }
    let rects = require(feature, "rects", path)?;
    elements(rects)
        .enumerate()
        .map(|(i, r)| {
            let rp = format!("{path}.rects[{i}]");
            match numbers(r, &rp)?[..] {
                [x, y, w, h, weight] => Ok(HaarRect {
                    x: index(x, &rp)?,
                    y: index(y, &rp)?,
                    w: index(w, &rp)?,
                    h: index(h, &rp)?,
                    weight,
                }),
                _ => Err(cascade_err(&rp, "expected `x y w h weight`")),
            }
        })
        .collect()
}

fn parse_old(body: Node) -> Result<Cascade> {
    let size = numbers(require(body, "size", "cascade")?, "size")?;
    let [w, h] = size[..] else {
        return Err(cascade_err("size", "expected `width height`"));
    };
    let mut stages = Vec::new();
    for (si, stage) in elements(require(body, "stages", "cascade")?).enumerate() {
        let sp = format!("stages[{si}]");
        let mut weak = Vec::new();
        for (wi, tree) in elements(require(stage, "trees", &sp)?).enumerate() {
            let wp = format!("{sp}.weak[{wi}]");
            let nodes: Vec<Node> = elements(tree).collect();
            let [node] = nodes[..] else {
                return Err(cascade_err(
                    &wp,
                    format!("tree with {} nodes (only stumps supported)", nodes.len()),
                ));
            };
            if child(node, "left_node").is_some() || child(node, "right_node").is_some() {
                return Err(cascade_err(
                    &wp,
                    "tree-structured classifier (only stumps supported)",
                ));
            }
            weak.push(WeakClassifier {
                rects: parse_rects(require(node, "feature", &wp)?, &wp)?,
                threshold: number(node, "threshold", &wp)?,
                left_value: number(node, "left_val", &wp)?,
                right_value: number(node, "right_val", &wp)?,
            });
        }
        stages.push(Stage {
            threshold: number(stage, "stage_threshold", &sp)?,
            weak,
        });
    }
    Ok(Cascade {
        window_width: index(w, "size")?,
        window_height: index(h, "size")?,
        stages,
    })
}

fn parse_new(body: Node) -> Result<Cascade> {
    if let Some(kind) = child(body, "featureType") {
        let kind = text_of(kind);
        if kind.trim() != "HAAR" {
            return Err(cascade_err(
                "featureType",
                format!("unsupported feature type `{}`", kind.trim()),
            ));
        }
    }
    let width = index(number(body, "width", "cascade")?, "width")?;
    let height = index(number(body, "height", "cascade")?, "height")?;
    let features = elements(require(body, "features", "cascade")?)
        .enumerate()
        .map(|(i, f)| parse_rects(f, &format!("features[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let mut stages = Vec::new();
    for (si, stage) in elements(require(body, "stages", "cascade")?).enumerate() {
        let sp = format!("stages[{si}]");
        let mut weak = Vec::new();
        for (wi, w) in elements(require(stage, "weakClassifiers", &sp)?).enumerate() {
            let wp = format!("{sp}.weak[{wi}]");
            let nodes = numbers(require(w, "internalNodes", &wp)?, &wp)?;
            let leaves = numbers(require(w, "leafValues", &wp)?, &wp)?;
            // A stump is one node `left right feature threshold` whose
            // children are leaves 0 and 1 (encoded as 0 and -1).
            let (&[left, right, feature, threshold], &[lv, rv]) = (&nodes[..], &leaves[..]) else {
                return Err(cascade_err(
                    &wp,
                    format!(
                        "{} internal-node values and {} leaves (only stumps supported)",
                        nodes.len(),
                        leaves.len()
                    ),
                ));
            };
            if left != 0.0 || right != -1.0 {
                return Err(cascade_err(
                    &wp,
                    "tree-structured classifier (only stumps supported)",
                ));
            }
            let fi = index(feature, &wp)?;
            let rects = features
                .get(fi)
                .ok_or_else(|| cascade_err(&wp, format!("feature index {fi} out of range")))?
                .clone();
            weak.push(WeakClassifier {
                rects,
                threshold,
                left_value: lv,
                right_value: rv,
            });
        }
        stages.push(Stage {
            threshold: number(stage, "stageThreshold", &sp)?,
            weak,
        });
    }
    Ok(Cascade {
        window_width: width,
        window_height: height,
        stages,
    })
}

pub fn load_cascade(path: impl AsRef<Path>) -> Result<Cascade> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Cascade::from_xml(&text).map_err(|e| match e {
        Error::Cascade {
            path: inner,
            reason,
        } => Error::Cascade {
            path: format!("{}: {inner}", path.display()),
            reason,
        },
        other => other,
    })
}
