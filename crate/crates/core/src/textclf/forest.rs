//! Gini-split decision trees and bootstrap random forests over sparse rows.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::SparseVector;
use crate::label::NUM_LABELS;
use crate::{EmotionLabel, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSubsample {
    /// `ceil(sqrt(dim))` features per split.
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubsample {
    fn resolve(self, dim: usize) -> usize {
        let k = match self {
            FeatureSubsample::Sqrt => (dim as f64).sqrt().ceil() as usize,
            FeatureSubsample::All => dim,
            FeatureSubsample::Count(k) => k,
        };
        k.clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subsample: FeatureSubsample,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper {
            n_trees: 50,
            max_depth: 12,
            min_leaf: 2,
            feature_subsample: FeatureSubsample::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Weighted label counts of the training rows that reached this leaf.
    Leaf { counts: [f64; NUM_LABELS] },
}

/// Flat node arena; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_counts(&self, x: &SparseVector) -> &[f64; NUM_LABELS] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x.get(*feature) <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn proba(&self, x: &SparseVector) -> [f64; NUM_LABELS] {
        let counts = self.leaf_counts(x);
        let total: f64 = counts.iter().sum();
        counts.map(|c| c / total)
    }

    /// Length of the longest root-to-leaf path, in splits.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    /// Fits one tree on row multiset `rows` (duplicates allowed).
    pub fn fit(
        columns: &Columns,
        y: &[EmotionLabel],
        rows: &[usize],
        hyper: &ForestHyper,
        rng: &mut ChaCha8Rng,
    ) -> DecisionTree {
        let mut builder = Builder {
            columns,
            y,
            hyper,
            multiplicity: vec![0; y.len()],
            nodes: Vec::new(),
            k_features: hyper.feature_subsample.resolve(columns.dimension),
        };
        builder.grow(rows.to_vec(), 0, rng);
        DecisionTree {
            nodes: builder.nodes,
        }
    }
}

/// Column-major (CSC) view of the training rows.
pub struct Columns {
    dimension: usize,
    /// Per feature: `(row, value)` for every non-zero value.
    entries: Vec<Vec<(usize, f64)>>,
}

impl Columns {
    pub fn new(x: &[SparseVector]) -> Self {
        let dimension = x.first().map_or(0, SparseVector::dimension);
        let mut entries = vec![Vec::new(); dimension];
        for (row, xi) in x.iter().enumerate() {
            for &(j, v) in xi.entries() {
                entries[j].push((row, v));
            }
        }
        Columns { dimension, entries }
    }
}

fn gini(counts: &[f64; NUM_LABELS]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts
        .iter()
        .map(|c| (c / total) * (c / total))
        .sum::<f64>()
}

struct Builder<'a> {
    columns: &'a Columns,
    y: &'a [EmotionLabel],
    hyper: &'a ForestHyper,
    multiplicity: Vec<u32>,
    nodes: Vec<Node>,
    k_features: usize,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> [f64; NUM_LABELS] {
        let mut c = [0.0; NUM_LABELS];
        for &r in rows {
            c[self.y[r].index()] += 1.0;
        }
        c
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });

        let n = rows.len() as f64;
        let parent = gini(&counts);
        if depth >= self.hyper.max_depth || parent == 0.0 || n < 2.0 * self.hyper.min_leaf as f64 {
            return id;
        }
        let Some(best) = self.best_split(&rows, &counts, rng) else {
            return id;
        };
        if best.impurity >= parent - 1e-12 {
            return id;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.value(r, best.feature) <= best.threshold);
        drop(rows);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn value(&self, row: usize, feature: usize) -> f64 {
        let col = &self.columns.entries[feature];
        col.binary_search_by_key(&row, |e| e.0)
            .map(|k| col[k].1)
            .unwrap_or(0.0)
    }

    fn best_split(
        &mut self,
        rows: &[usize],
        counts: &[f64; NUM_LABELS],
        rng: &mut ChaCha8Rng,
    ) -> Option<Candidate> {
        for &r in rows {
            self.multiplicity[r] += 1;
        }
        let total: f64 = counts.iter().sum();
        let min_leaf = self.hyper.min_leaf as f64;
        let features = sample(rng, self.columns.dimension, self.k_features);
        let mut best: Option<Candidate> = None;
        let mut values: Vec<(f64, usize, f64)> = Vec::new();
        for feature in features.iter() {
            values.clear();
            let mut nonzero_counts = [0.0; NUM_LABELS];
            for &(row, v) in &self.columns.entries[feature] {
                let m = self.multiplicity[row];
                if m > 0 {
                    values.push((v, self.y[row].index(), m as f64));
                    nonzero_counts[self.y[row].index()] += m as f64;
                }
            }
            let zero_weight = total - nonzero_counts.iter().sum::<f64>();
            if zero_weight > 0.0 {
                let mut zero_counts = *counts;
                for c in 0..NUM_LABELS {
                    zero_counts[c] -= nonzero_counts[c];
                }
                for (c, &w) in zero_counts.iter().enumerate() {
                    if w > 0.0 {
                        values.push((0.0, c, w));
                    }
                }
            }
            values.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = [0.0; NUM_LABELS];
            let mut left_n = 0.0;
            for i in 0..values.len().saturating_sub(1) {
                let (v, c, w) = values[i];
                left[c] += w;
                left_n += w;
                let next = values[i + 1].0;
                if next == v {
                    continue;
                }
                let right_n = total - left_n;
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let mut right = *counts;
                for k in 0..NUM_LABELS {
                    right[k] -= left[k];
                }
                let impurity = (left_n * gini(&left) + right_n * gini(&right)) / total;
                if best.as_ref().map_or(true, |b| impurity < b.impurity) {
                    best = Some(Candidate {
                        feature,
                        threshold: 0.5 * (v + next),
                        impurity,
                    });
                }
            }
        }
        for &r in rows {
            self.multiplicity[r] = 0;
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    pub dimension: usize,
    pub trees: Vec<DecisionTree>,
    pub hyper: ForestHyper,
}

impl RandomForestModel {
    /// Mean of the per-tree leaf distributions.
    pub fn proba(&self, x: &SparseVector) -> [f64; NUM_LABELS] {
        let mut p = [0.0; NUM_LABELS];
        for tree in &self.trees {
            let t = tree.proba(x);
            for k in 0..NUM_LABELS {
                p[k] += t[k];
            }
        }
        let n = self.trees.len() as f64;
        p.map(|v| v / n)
    }
}

/// Seed of tree `t`'s private RNG stream; independent of training order.
fn tree_seed(seed: u64, t: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        ^ (t as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn train_random_forest(
    x: &[SparseVector],
    y: &[EmotionLabel],
    hyper: ForestHyper,
) -> Result<RandomForestModel> {
    if hyper.n_trees == 0 || hyper.max_depth == 0 || hyper.min_leaf == 0 {
        return Err(Error::InvalidArgument(
            "n_trees, max_depth and min_leaf must be ≥ 1".into(),
        ));
    }
    let dimension = super::check_training_set_any(x, y)?;
    let columns = Columns::new(x);
    let n = x.len();
    let trees = (0..hyper.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(hyper.seed, t));
            let rows: Vec<usize> = if hyper.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            DecisionTree::fit(&columns, y, &rows, &hyper, &mut rng)
        })
        .collect();
    Ok(RandomForestModel {
        dimension,
        trees,
        hyper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};
    use EmotionLabel::*;

    fn accuracy(m: &RandomForestModel, x: &[SparseVector], y: &[EmotionLabel]) -> f64 {
        let hits = x
            .iter()
            .zip(y)
            .filter(|(xi, yi)| EmotionLabel::argmax(&m.proba(xi)) == **yi)
            .count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn one_split_problem() {
        let x = vec![
            SparseVector::from_dense(&[0.0]),
            SparseVector::from_dense(&[1.0]),
        ];
        let y = vec![Happiness, Sadness];
        let hyper = ForestHyper {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            bootstrap: false,
            ..Default::default()
        };
        let m = train_random_forest(&x, &y, hyper).unwrap();
        match &m.trees[0].nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.5);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn gaussian_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let centers = [(0.0, 0.0), (4.0, 0.0), (0.0, 4.0), (4.0, 4.0)];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (k, (cx, cy)) in centers.iter().enumerate() {
            for _ in 0..50 {
                x.push(SparseVector::from_dense(&[
                    cx + noise.sample(&mut rng),
                    cy + noise.sample(&mut rng),
                ]));
                y.push(EmotionLabel::ALL[k]);
            }
        }
        let hyper = ForestHyper {
            n_trees: 25,
            ..Default::default()
        };
        let m = train_random_forest(&x, &y, hyper).unwrap();
        assert!(accuracy(&m, &x, &y) >= 0.95);
        for t in &m.trees {
            assert!(t.depth() <= hyper.max_depth);
        }
    }

    #[test]
    fn stump_cannot_represent_xor() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..10 {
            for (a, b) in [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)] {
                x.push(SparseVector::from_dense(&[a, b]));
                y.push(if a == b { Happiness } else { Sadness });
            }
        }
        let hyper = ForestHyper {
            n_trees: 1,
            max_depth: 1,
            bootstrap: false,
            feature_subsample: FeatureSubsample::All,
            ..Default::default()
        };
        let m = train_random_forest(&x, &y, hyper).unwrap();
        assert!((accuracy(&m, &x, &y) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_unbootstrapped_tree_matches_forest() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<SparseVector> = (0..60)
            .map(|_| {
                SparseVector::from_dense(&[
                    rng.gen_range(0..3) as f64,
                    rng.gen_range(0..3) as f64,
                    rng.gen::<f64>(),
                ])
            })
            .collect();
        let y: Vec<EmotionLabel> = x
            .iter()
            .map(|xi| EmotionLabel::ALL[(xi.get(0) as usize + xi.get(1) as usize) % 4])
            .collect();
        let hyper = ForestHyper {
            n_trees: 1,
            bootstrap: false,
            feature_subsample: FeatureSubsample::All,
            ..Default::default()
        };
        let forest = train_random_forest(&x, &y, hyper).unwrap();
        let mut tree_rng = ChaCha8Rng::seed_from_u64(tree_seed(hyper.seed, 0));
        let rows: Vec<usize> = (0..x.len()).collect();
        let tree = DecisionTree::fit(&Columns::new(&x), &y, &rows, &hyper, &mut tree_rng);
        for xi in &x {
            assert_eq!(forest.proba(xi), tree.proba(xi));
        }
    }

    #[test]
    fn seeded_forest_is_deterministic() {
        let x: Vec<SparseVector> = (0..40)
            .map(|i| SparseVector::from_dense(&[(i % 7) as f64, (i % 5) as f64]))
            .collect();
        let y: Vec<EmotionLabel> = (0..40).map(|i| EmotionLabel::ALL[i % 4]).collect();
        let hyper = ForestHyper {
            n_trees: 5,
            seed: 17,
            ..Default::default()
        };
        assert_eq!(
            train_random_forest(&x, &y, hyper).unwrap(),
            train_random_forest(&x, &y, hyper).unwrap()
        );
    }
}
