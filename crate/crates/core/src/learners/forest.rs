//! Random forest of CART trees.
//!
//! Each tree is grown on a bootstrap resample (represented as per-row draw
//! counts) with `mtry` candidate features per node, splitting on weighted
//! squared-error reduction. For 0/1 targets this is the Gini criterion and
//! leaf means are class-1 frequencies. Trees are grown without depth limit
//! until a node holds fewer than `2 * min_leaf` draws or is pure.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;

use super::{LearnerKind, LearnerSpec, Task};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub min_leaf: usize,
    pub mtry: usize,
}

impl ForestParams {
    pub const DEFAULT_TREES: usize = 200;
    pub const DEFAULT_MIN_LEAF_REGRESSION: usize = 5;
    pub const DEFAULT_MIN_LEAF_CLASSIFICATION: usize = 1;

    /// Defaults: 200 trees; `min_leaf = 1` and `mtry = ceil(sqrt(p))` for
    /// classification, `min_leaf = 5` and `mtry = ceil(p / 3)` for regression.
    pub fn from_spec(spec: &LearnerSpec, task: Task, n_features: usize) -> Self {
        debug_assert_eq!(spec.kind, LearnerKind::RandomForest);
        let p = n_features.max(1);
        let (default_mtry, default_leaf) = match task {
            Task::Classification => ((p as f64).sqrt().ceil() as usize, Self::DEFAULT_MIN_LEAF_CLASSIFICATION),
            Task::Regression => (p.div_ceil(3), Self::DEFAULT_MIN_LEAF_REGRESSION),
        };
        ForestParams {
            trees: spec.trees.unwrap_or(Self::DEFAULT_TREES).max(1),
            min_leaf: spec.min_leaf.unwrap_or(default_leaf).max(1),
            mtry: spec.mtry.unwrap_or(default_mtry).clamp(1, p),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf(f64),
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut k = 0usize;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    k = if x[(i, feature as usize)] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    w: Vec<f64>,
    counts: Vec<u32>,
    min_leaf: u32,
    mtry: usize,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    /// Grows the subtree over `idx` and returns its node id.
    fn grow(&mut self, idx: &mut [u32], rng: &mut rng::Rng) -> u32 {
        let (mut sw, mut swy, mut cnt) = (0.0, 0.0, 0u32);
        for &i in idx.iter() {
            let i = i as usize;
            sw += self.w[i];
            swy += self.w[i] * self.y[i];
            cnt += self.counts[i];
        }
        let leaf_value = swy / sw;
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf(leaf_value));

        let y0 = self.y[idx[0] as usize];
        if cnt < 2 * self.min_leaf || idx.iter().all(|&i| self.y[i as usize] == y0) {
            return id;
        }

        let p = self.cols.len();
        let parent = swy * swy / sw;
        let mut best_score = parent + 1e-12 * parent.abs().max(1e-300);
        let mut best: Option<(usize, f64)> = None;
        for f in sample(rng, p, self.mtry.min(p)).into_iter() {
            let col = &self.cols[f];
            self.scratch.clear();
            self.scratch.extend_from_slice(idx);
            self.scratch.sort_unstable_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            let (mut lw, mut lwy, mut lc) = (0.0, 0.0, 0u32);
            for k in 0..self.scratch.len() - 1 {
                let i = self.scratch[k] as usize;
                lw += self.w[i];
                lwy += self.w[i] * self.y[i];
                lc += self.counts[i];
                if cnt - lc < self.min_leaf {
                    break;
                }
                let next = self.scratch[k + 1] as usize;
                if lc < self.min_leaf || col[i] == col[next] {
                    continue;
                }
                let rw = sw - lw;
                let rwy = swy - lwy;
                let score = lwy * lwy / lw + rwy * rwy / rw;
                if score > best_score {
                    best_score = score;
                    best = Some((f, 0.5 * (col[i] + col[next])));
                }
            }
        }

        let Some((feature, threshold)) = best else {
            return id;
        };
        let col = &self.cols[feature];
        let mut split = 0;
        for k in 0..idx.len() {
            if col[idx[k] as usize] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (left_idx, right_idx) = idx.split_at_mut(split);
        let left = self.grow(left_idx, rng);
        let right = self.grow(right_idx, rng);
        self.nodes[id as usize] = Node::Split { feature: feature as u32, threshold, left, right };
        id
    }
}

fn grow_tree(cols: &[Vec<f64>], y: &[f64], base_w: &[f64], params: &ForestParams, mut rng: rng::Rng) -> Tree {
    let n = y.len();
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    let w: Vec<f64> = (0..n).map(|i| counts[i] as f64 * base_w[i]).collect();
    let mut idx: Vec<u32> = (0..n as u32).filter(|&i| w[i as usize] > 0.0).collect();
    if idx.is_empty() {
        // Every drawn row had zero weight; fall back to the full-sample mean.
        let sw: f64 = base_w.iter().sum();
        let m = base_w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
        return Tree { nodes: vec![Node::Leaf(m)] };
    }
    let mut grower = Grower {
        cols,
        y,
        w,
        counts,
        min_leaf: params.min_leaf as u32,
        mtry: params.mtry,
        scratch: Vec::with_capacity(idx.len()),
        nodes: Vec::new(),
    };
    grower.grow(&mut idx, &mut rng);
    Tree { nodes: grower.nodes }
}

impl Forest {
    /// Grows `params.trees` trees; tree `t` draws from stream `t` of `seed`,
    /// so the fit does not depend on the worker count.
    pub fn fit(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, params: &ForestParams, seed: u64) -> Self {
        let cols: Vec<Vec<f64>> = (0..x.ncols()).map(|j| x.column(j).iter().copied().collect()).collect();
        let base_w: Vec<f64> = weights.map_or_else(|| vec![1.0; y.len()], |w| w.to_vec());
        let trees = (0..params.trees)
            .into_par_iter()
            .map(|t| grow_tree(&cols, y, &base_w, params, rng::stream(seed, t as u64)))
            .collect();
        Forest { trees, n_features: x.ncols() }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(x.ncols(), self.n_features, "feature count mismatch");
        let t = self.trees.len() as f64;
        (0..x.nrows())
            .map(|i| self.trees.iter().map(|tree| tree.predict_row(x, i)).sum::<f64>() / t)
            .collect()
    }
}
