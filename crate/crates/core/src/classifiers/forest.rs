//! Random forest of CART trees: bootstrap resamples, Gini impurity, a random
//! subset of candidate features per split.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub features_per_split: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(u8),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> u8 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    /// `in_bag[t][i]`: training row `i` was drawn into tree `t`'s bootstrap.
    in_bag: Vec<Vec<bool>>,
}

impl Forest {
    /// Grows `params.trees` trees; tree `t` draws from the stream
    /// `(seed, stream_id, t)`.
    pub fn fit(x: &DMatrix<f64>, y: &[u8], params: &ForestParams, seed: u64, stream_id: u64) -> Self {
        let n = y.len();
        let (trees, in_bag) = (0..params.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::stream(seed, &[stream_id, t as u64]);
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut bag = vec![false; n];
                for &i in &sample {
                    bag[i] = true;
                }
                (grow_tree(x, y, sample, params, &mut rng), bag)
            })
            .unzip();
        Self { trees, in_bag }
    }

    pub fn votes(&self, row: &[f64]) -> usize {
        self.trees.iter().map(|t| usize::from(t.predict(row))).sum()
    }

    /// Strict majority of trees; an even split goes to class 0.
    pub fn predict(&self, row: &[f64]) -> u8 {
        u8::from(2 * self.votes(row) > self.trees.len())
    }

    /// Out-of-bag prediction for training row `i`: majority of the trees
    /// whose bootstrap missed it, or of all trees if none did.
    pub fn predict_oob(&self, i: usize, row: &[f64]) -> u8 {
        let (mut votes, mut voters) = (0, 0);
        for (tree, bag) in self.trees.iter().zip(&self.in_bag) {
            if !bag[i] {
                votes += usize::from(tree.predict(row));
                voters += 1;
            }
        }
        if voters == 0 {
            return self.predict(row);
        }
        u8::from(2 * votes > voters)
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    #[cfg(test)]
    pub(crate) fn from_trees(trees: Vec<Tree>) -> Self {
        let in_bag = vec![Vec::new(); trees.len()];
        Self { trees, in_bag }
    }
}

fn majority(y: &[u8], idx: &[usize]) -> u8 {
    let ones = idx.iter().filter(|&&i| y[i] == 1).count();
    u8::from(2 * ones > idx.len())
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Best Gini split on one feature. Returns the threshold and the score
/// `sum over children of (count_0^2 + count_1^2) / size`, which is maximal
/// where the weighted Gini impurity is minimal.
fn best_split_on(
    col: &[f64],
    y: &[u8],
    idx: &[usize],
    min_leaf: usize,
    buf: &mut Vec<(f64, u8)>,
) -> Option<(f64, f64)> {
    buf.clear();
    buf.extend(idx.iter().map(|&i| (col[i], y[i])));
    buf.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = buf.len();
    let total1 = buf.iter().filter(|v| v.1 == 1).count() as f64;
    let total0 = n as f64 - total1;
    let (mut l0, mut l1) = (0.0, 0.0);
    let mut best: Option<(f64, f64)> = None;
    for s in 1..n {
        if buf[s - 1].1 == 1 {
            l1 += 1.0;
        } else {
            l0 += 1.0;
        }
        if s < min_leaf || n - s < min_leaf || buf[s - 1].0 == buf[s].0 {
            continue;
        }
        let nl = s as f64;
        let nr = (n - s) as f64;
        let (r0, r1) = (total0 - l0, total1 - l1);
        let score = (l0 * l0 + l1 * l1) / nl + (r0 * r0 + r1 * r1) / nr;
        if best.is_none_or(|(_, b)| score > b) {
            let threshold = 0.5 * (buf[s - 1].0 + buf[s].0);
            // Midpoint can round up to the right value for adjacent floats.
            let threshold = if threshold < buf[s].0 { threshold } else { buf[s - 1].0 };
            best = Some((threshold, score));
        }
    }
    best
}

fn grow_tree(x: &DMatrix<f64>, y: &[u8], mut samples: Vec<usize>, params: &ForestParams, rng: &mut StreamRng) -> Tree {
    let n = x.nrows();
    let q = x.ncols();
    let data = x.as_slice();
    let mut nodes = vec![Node::Leaf(0)];
    // (node id, start, end, depth)
    let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];
    let mut features: Vec<usize> = (0..q).collect();
    let mut buf = Vec::with_capacity(samples.len());

    while let Some((id, start, end, depth)) = stack.pop() {
        let idx = &samples[start..end];
        let label = majority(y, idx);
        let ones = idx.iter().filter(|&&i| y[i] == 1).count();
        let pure = ones == 0 || ones == idx.len();
        let depth_reached = params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_reached || idx.len() < 2 * params.min_leaf || q == 0 {
            nodes[id] = Node::Leaf(label);
            continue;
        }

        features.shuffle(rng);
        let mut best: Option<SplitCandidate> = None;
        for (tried, &f) in features.iter().enumerate() {
            // Past the sampled subset, keep looking only until some split exists.
            if tried >= params.features_per_split && best.is_some() {
                break;
            }
            let col = &data[f * n..(f + 1) * n];
            if let Some((threshold, score)) = best_split_on(col, y, idx, params.min_leaf, &mut buf) {
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(SplitCandidate {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        let Some(split) = best else {
            nodes[id] = Node::Leaf(label);
            continue;
        };

        let col = &data[split.feature * n..(split.feature + 1) * n];
        let slice = &mut samples[start..end];
        let mut mid = 0;
        for k in 0..slice.len() {
            if col[slice[k]] <= split.threshold {
                slice.swap(k, mid);
                mid += 1;
            }
        }
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf(0));
        nodes.push(Node::Leaf(0));
        nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        stack.push((right, start + mid, end, depth + 1));
        stack.push((left, start, start + mid, depth + 1));
    }
    Tree { nodes }
}
