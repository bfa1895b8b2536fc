//! Regression tree construction by exact greedy split search on gradient
//! and hessian sums.

use serde::{Deserialize, Serialize};

use crate::parallel;

use super::GbtParams;

/// Node in a flat arena; `left`/`right` index into the same vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Sum of sample weights that reached this node during training.
        cover: f64,
    },
    Leaf { value: f64, cover: f64 },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }
}

/// One boosted tree. The root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Raw leaf value for one sample. Ties at a threshold go right.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

pub(super) struct TreeBuilder<'a> {
    pub x: &'a [Vec<f64>],
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub weight: &'a [f64],
    pub params: &'a GbtParams,
    /// Candidate feature indices, ascending; ties between equal-gain splits
    /// resolve to the earliest feature and lowest threshold.
    pub features: &'a [usize],
}

impl<'a> TreeBuilder<'a> {
    pub fn build(&self, rows: Vec<usize>) -> Tree {
        let mut nodes = Vec::new();
        self.build_node(rows, 0, &mut nodes);
        Tree { nodes }
    }

    fn sums(&self, rows: &[usize]) -> (f64, f64, f64) {
        let mut g = 0.0;
        let mut h = 0.0;
        let mut w = 0.0;
        for &r in rows {
            g += self.grad[r];
            h += self.hess[r];
            w += self.weight[r];
        }
        (g, h, w)
    }

    fn build_node(&self, rows: Vec<usize>, depth: usize, nodes: &mut Vec<Node>) -> usize {
        let (g_sum, h_sum, cover) = self.sums(&rows);
        let lambda = self.params.lambda;

        let candidate = if depth < self.params.max_depth {
            self.best_split(&rows, g_sum, h_sum)
        } else {
            None
        };

        match candidate {
            None => {
                let value = -g_sum / (h_sum + lambda) * self.params.learning_rate;
                nodes.push(Node::Leaf { value, cover });
                nodes.len() - 1
            }
            Some(c) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&r| self.x[r][c.feature] < c.threshold);
                let idx = nodes.len();
                nodes.push(Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: 0,
                    right: 0,
                    cover,
                });
                let left = self.build_node(left_rows, depth + 1, nodes);
                let right = self.build_node(right_rows, depth + 1, nodes);
                if let Node::Split {
                    left: l, right: r, ..
                } = &mut nodes[idx]
                {
                    *l = left;
                    *r = right;
                }
                idx
            }
        }
    }

    /// Exact greedy search: for every candidate feature, sort the node's
    /// rows by value and scan every boundary between distinct values.
    fn best_split(&self, rows: &[usize], g_sum: f64, h_sum: f64) -> Option<Candidate> {
        if rows.len() < 2 {
            return None;
        }
        let lambda = self.params.lambda;
        let parent_score = g_sum * g_sum / (h_sum + lambda);
        let min_h = self.params.min_child_weight;

        let per_feature = parallel::map_collect(self.features, |&feature| {
            let mut ordered: Vec<(f64, f64, f64)> = rows
                .iter()
                .map(|&r| (self.x[r][feature], self.grad[r], self.hess[r]))
                .collect();
            ordered.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let mut best: Option<Candidate> = None;
            let mut gl = 0.0;
            let mut hl = 0.0;
            for i in 0..ordered.len() - 1 {
                gl += ordered[i].1;
                hl += ordered[i].2;
                if ordered[i].0 == ordered[i + 1].0 {
                    continue;
                }
                let gr = g_sum - gl;
                let hr = h_sum - hl;
                if hl < min_h || hr < min_h {
                    continue;
                }
                let gain = 0.5
                    * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent_score)
                    - self.params.min_split_gain;
                if gain > best.map_or(0.0, |b| b.gain) {
                    best = Some(Candidate {
                        feature,
                        threshold: 0.5 * (ordered[i].0 + ordered[i + 1].0),
                        gain,
                    });
                }
            }
            best
        });

        // Sequential reduction in ascending feature order keeps tie-breaking
        // independent of scheduling: strictly greater gain wins.
        let mut best: Option<Candidate> = None;
        for cand in per_feature.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| cand.gain > b.gain) {
                best = Some(cand);
            }
        }
        best
    }
}
