use serde::{Deserialize, Serialize};

/// Flattened regression tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
enum Node {
    Leaf {
        value: f64,
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

const MIN_GAIN: f64 = 1e-12;

impl RegressionTree {
    /// A single-leaf tree that always predicts `value`.
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Variance-reduction CART on the rows listed in `rows` (duplicates
    /// allowed, as produced by bootstrap resampling).
    ///
    /// Thresholds are searched exhaustively over the sorted unique values of
    /// each feature; among equal gains the lower feature index and then the
    /// smaller threshold win.
    pub fn fit(x: &[[f64; 2]], y: &[f64], rows: &[usize], max_depth: usize) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        let mut rows = rows.to_vec();
        tree.grow(x, y, &mut rows, max_depth);
        tree
    }

    fn grow(&mut self, x: &[[f64; 2]], y: &[f64], rows: &mut [usize], depth_left: usize) -> usize {
        let id = self.nodes.len();
        let m = rows.len();
        let sum: f64 = rows.iter().map(|&r| y[r]).sum();
        let mean = if m > 0 { sum / m as f64 } else { 0.0 };
        self.nodes.push(Node::Leaf { value: mean });
        if depth_left == 0 || m < 2 {
            return id;
        }

        let parent = sum * sum / m as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for feature in 0..2 {
            rows.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for i in 0..m - 1 {
                left_sum += y[rows[i]];
                let v = x[rows[i]][feature];
                if v == x[rows[i + 1]][feature] {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = (m - i - 1) as f64;
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent;
                if gain > MIN_GAIN && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, v));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return id;
        };
        rows.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
        let split = rows.partition_point(|&r| x[r][feature] <= threshold);
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(x, y, l, depth_left - 1);
        let right = self.grow(x, y, r, depth_left - 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn predict(&self, x: &[f64; 2]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}
