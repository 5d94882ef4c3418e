use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtParams {
    pub min_samples_split: usize,
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
}

impl Default for DtParams {
    fn default() -> Self {
        DtParams { min_samples_split: 2, max_depth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams { n_trees: 100, max_features: None, min_samples_split: 2, max_depth: None, bootstrap: true }
    }
}

/// Gini impurity `1 - sum p_c^2` of a two-class node.
pub fn gini(neg: f64, pos: f64) -> f64 {
    let n = neg + pos;
    if n == 0.0 {
        return 0.0;
    }
    let (a, b) = (neg / n, pos / n);
    1.0 - a * a - b * b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    /// `proba` is the fraction of positive training rows reaching the leaf.
    Leaf { proba: f64, n_samples: usize },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

struct Grow<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [u8],
    min_samples_split: usize,
    max_depth: Option<usize>,
    max_features: Option<usize>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grow<'_> {
    fn best_split_on(&self, idx: &[usize], feature: usize, parent: f64, best: &mut Option<Candidate>) {
        let mut col: Vec<(f64, u8)> = idx.iter().map(|&i| (self.x[[i, feature]], self.y[i])).collect();
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = col.len() as f64;
        let total_pos = col.iter().filter(|c| c.1 == 1).count() as f64;
        let (mut ln, mut lp) = (0.0, 0.0);
        for k in 0..col.len() - 1 {
            if col[k].1 == 1 {
                lp += 1.0;
            } else {
                ln += 1.0;
            }
            if col[k].0 == col[k + 1].0 {
                continue;
            }
            let (rn, rp) = (n - total_pos - ln, total_pos - lp);
            let nl = ln + lp;
            let nr = rn + rp;
            let gain = parent - (nl * gini(ln, lp) + nr * gini(rn, rp)) / n;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                *best = Some(Candidate { feature, threshold: col[k].0, gain });
            }
        }
    }

    fn build(&self, idx: Vec<usize>, mut rng: Option<&mut Rng>) -> DecisionTree {
        let d = self.x.ncols();
        let mut nodes = Vec::new();
        let mut stack = vec![(0usize, idx, 0usize)];
        nodes.push(Node::Leaf { proba: 0.0, n_samples: 0 });
        while let Some((id, idx, depth)) = stack.pop() {
            let pos = idx.iter().filter(|&&i| self.y[i] == 1).count() as f64;
            let n = idx.len() as f64;
            let leaf = Node::Leaf { proba: if n > 0.0 { pos / n } else { 0.0 }, n_samples: idx.len() };
            let impure = pos > 0.0 && pos < n;
            if !impure || idx.len() < self.min_samples_split || self.max_depth.is_some_and(|m| depth >= m) {
                nodes[id] = leaf;
                continue;
            }
            let features: Vec<usize> = match (self.max_features, rng.as_deref_mut()) {
                (Some(m), Some(r)) if m < d => {
                    let mut f = sample(r, d, m).into_vec();
                    f.sort_unstable();
                    f
                }
                _ => (0..d).collect(),
            };
            let parent = gini(n - pos, pos);
            let mut best = None;
            for f in features {
                self.best_split_on(&idx, f, parent, &mut best);
            }
            let Some(c) = best else {
                nodes[id] = leaf;
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[[i, c.feature]] <= c.threshold);
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { proba: 0.0, n_samples: 0 });
            nodes.push(Node::Leaf { proba: 0.0, n_samples: 0 });
            nodes[id] = Node::Split { feature: c.feature, threshold: c.threshold, left: li, right: ri };
            // right first so the left subtree is expanded next
            stack.push((ri, r, depth + 1));
            stack.push((li, l, depth + 1));
        }
        DecisionTree { nodes }
    }
}

impl DecisionTree {
    pub fn fit(x: ArrayView2<f64>, y: &[u8], params: &DtParams) -> DecisionTree {
        let g = Grow {
            x,
            y,
            min_samples_split: params.min_samples_split.max(2),
            max_depth: params.max_depth,
            max_features: None,
        };
        g.build((0..x.nrows()).collect(), None)
    }

    pub fn predict_proba_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { proba, .. } => return *proba,
                Node::Split { feature, threshold, left, right } => {
                    id = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> u8 {
        u8::from(self.predict_proba_row(row) >= 0.5)
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(x: ArrayView2<f64>, y: &[u8], params: &RfParams, seed: u64) -> Result<RandomForest> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::Data("random forest needs at least two rows".into()));
        }
        if params.n_trees == 0 {
            return Err(Error::Config("random forest needs at least one tree".into()));
        }
        let d = x.ncols();
        let m = params.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1)).clamp(1, d.max(1));
        let g = Grow {
            x,
            y,
            min_samples_split: params.min_samples_split.max(2),
            max_depth: params.max_depth,
            max_features: Some(m),
        };
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = substream(seed, t as u64);
                let idx: Vec<usize> =
                    if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
                g.build(idx, Some(&mut rng))
            })
            .collect();
        Ok(RandomForest { trees })
    }

    /// Mean of per-tree leaf proportions.
    pub fn predict_proba_row(&self, row: ArrayView1<f64>) -> f64 {
        self.trees.iter().map(|t| t.predict_proba_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    /// Majority vote of per-tree labels; an even split goes to class 1.
    pub fn predict_vote_row(&self, row: ArrayView1<f64>) -> u8 {
        let ones = self.trees.iter().filter(|t| t.predict_row(row) == 1).count();
        u8::from(2 * ones >= self.trees.len())
    }
}
