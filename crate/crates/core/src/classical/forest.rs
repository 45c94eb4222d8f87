use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use super::{check_training_data, Classifier};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// Go left when `x[feature] <= threshold`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Burnt fraction of the training samples that reached the leaf.
    Leaf(f64),
}

/// Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(p) => return p,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub params: ForestParams,
    pub n_features: usize,
    /// Mean decrease in Gini impurity, normalised to sum to 1. All zero when
    /// no tree split.
    pub feature_importances: Vec<f64>,
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct Best {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    labels: &'a [u8],
    params: &'a ForestParams,
    mtry: usize,
    nodes: Vec<TreeNode>,
    importance: Vec<f64>,
}

impl Builder<'_> {
    fn candidates(&self, rng: &mut impl Rng) -> Vec<usize> {
        let d = self.columns.len();
        if self.mtry >= d {
            (0..d).collect()
        } else {
            index::sample(rng, d, self.mtry).into_vec()
        }
    }

    fn best_split(&self, rows: &[usize], rng: &mut impl Rng) -> Option<Best> {
        let n = rows.len() as f64;
        let pos_total = rows.iter().filter(|&&r| self.labels[r] == 1).count() as f64;
        let parent = n * gini(pos_total, n);
        let mut best: Option<Best> = None;
        for f in self.candidates(rng) {
            let col = &self.columns[f];
            let mut sorted = rows.to_vec();
            sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            let mut left_pos = 0.0;
            for k in 1..sorted.len() {
                left_pos += f64::from(self.labels[sorted[k - 1]]);
                let (lo, hi) = (col[sorted[k - 1]], col[sorted[k]]);
                if lo == hi || k < self.params.min_leaf || sorted.len() - k < self.params.min_leaf {
                    continue;
                }
                let nl = k as f64;
                let nr = n - nl;
                let decrease = parent - nl * gini(left_pos, nl) - nr * gini(pos_total - left_pos, nr);
                if decrease > 1e-12 && best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Best {
                        feature: f,
                        threshold,
                        decrease,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut impl Rng) -> usize {
        let id = self.nodes.len();
        let pos = rows.iter().filter(|&&r| self.labels[r] == 1).count();
        self.nodes.push(TreeNode::Leaf(pos as f64 / rows.len() as f64));
        if depth >= self.params.max_depth || pos == 0 || pos == rows.len() || rows.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&rows, rng) else {
            return id;
        };
        self.importance[best.feature] += best.decrease;
        let col = &self.columns[best.feature];
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= best.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }
}

fn fit_tree(columns: &[Vec<f64>], labels: &[u8], params: &ForestParams, mtry: usize, tree_seed: u64) -> (DecisionTree, Vec<f64>) {
    let mut rng = seed::rng(tree_seed, "rf.tree");
    let n = labels.len();
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut b = Builder {
        columns,
        labels,
        params,
        mtry,
        nodes: Vec::new(),
        importance: vec![0.0; columns.len()],
    };
    b.grow(rows, 0, &mut rng);
    let importance = b.importance.iter().map(|v| v / n as f64).collect();
    (DecisionTree { nodes: b.nodes }, importance)
}

/// CART forest on bootstrap resamples with Gini splits.
pub fn rf_fit(features: &[Vec<f64>], labels: &[u8], params: &ForestParams, seed: u64) -> Result<RandomForestModel> {
    let d = check_training_data(features, labels)?;
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(Error::Config("n_trees and min_leaf must be positive".into()));
    }
    let mtry = params.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d);
    let columns: Vec<Vec<f64>> = (0..d).map(|j| features.iter().map(|r| r[j]).collect()).collect();
    let fitted: Vec<(DecisionTree, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(&columns, labels, params, mtry, seed::derive(seed, &format!("rf.tree.{t}"))))
        .collect();
    let mut importances = vec![0.0; d];
    for (_, imp) in &fitted {
        importances.iter_mut().zip(imp).for_each(|(a, b)| *a += b);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(RandomForestModel {
        trees: fitted.into_iter().map(|(t, _)| t).collect(),
        params: params.clone(),
        n_features: d,
        feature_importances: importances,
    })
}

impl RandomForestModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.push_text("kind", "random_forest");
        let p = &self.params;
        c.push_i64(
            "params",
            vec![
                p.n_trees as i64,
                p.max_depth as i64,
                p.min_leaf as i64,
                p.max_features.map_or(-1, |m| m as i64),
                self.n_features as i64,
            ],
        );
        c.push_f64("importances", &[self.n_features], self.feature_importances.clone());
        let mut offsets = Vec::new();
        let (mut feature, mut left, mut right, mut value) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for t in &self.trees {
            offsets.push(feature.len() as i64);
            for n in &t.nodes {
                match *n {
                    TreeNode::Leaf(p) => {
                        feature.push(-1);
                        left.push(-1);
                        right.push(-1);
                        value.push(p);
                    }
                    TreeNode::Split {
                        feature: f,
                        threshold,
                        left: l,
                        right: r,
                    } => {
                        feature.push(f as i64);
                        left.push(l as i64);
                        right.push(r as i64);
                        value.push(threshold);
                    }
                }
            }
        }
        let total = value.len();
        c.push_i64("tree_offsets", offsets);
        c.push_i64("feature", feature);
        c.push_i64("left", left);
        c.push_i64("right", right);
        c.push_f64("value", &[total], value);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let bad = |what: &str| Error::Format {
            offset: 0,
            reason: format!("random forest container: {what}"),
        };
        if c.text("kind")? != "random_forest" {
            return Err(bad("wrong kind"));
        }
        let p = c.i64s("params")?;
        if p.len() != 5 {
            return Err(bad("params block"));
        }
        let params = ForestParams {
            n_trees: p[0] as usize,
            max_depth: p[1] as usize,
            min_leaf: p[2] as usize,
            max_features: (p[3] >= 0).then_some(p[3] as usize),
        };
        let n_features = p[4] as usize;
        let offsets = c.i64s("tree_offsets")?;
        let (feature, left, right) = (c.i64s("feature")?, c.i64s("left")?, c.i64s("right")?);
        let value = c.f64s("value")?.1;
        let total = value.len();
        if feature.len() != total || left.len() != total || right.len() != total {
            return Err(bad("node arrays differ in length"));
        }
        let mut trees = Vec::with_capacity(offsets.len());
        for (t, &start) in offsets.iter().enumerate() {
            let start = start as usize;
            let end = offsets.get(t + 1).map_or(total, |&e| e as usize);
            if start > end || end > total {
                return Err(bad("tree offsets"));
            }
            let len = end - start;
            let mut nodes = Vec::with_capacity(len);
            for i in start..end {
                nodes.push(if feature[i] < 0 {
                    TreeNode::Leaf(value[i])
                } else {
                    let (f, l, r) = (feature[i] as usize, left[i] as usize, right[i] as usize);
                    if f >= n_features || l >= len || r >= len {
                        return Err(bad("node index out of range"));
                    }
                    TreeNode::Split {
                        feature: f,
                        threshold: value[i],
                        left: l,
                        right: r,
                    }
                });
            }
            trees.push(DecisionTree { nodes });
        }
        Ok(Self {
            trees,
            params,
            n_features,
            feature_importances: c.f64s("importances")?.1.to_vec(),
        })
    }
}

impl Classifier for RandomForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean leaf burnt-fraction over the trees.
    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::dims("feature vector", self.n_features, x.len()));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }
}
