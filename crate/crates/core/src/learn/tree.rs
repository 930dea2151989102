//! Binary decision tree with greedy Gini splits.

/// Tree growth limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Minimum number of training samples on each side of a split.
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 6, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { label: bool },
    /// Samples with `x[feature] <= threshold` go left. The threshold is
    /// always one of the training values, so any strictly monotone
    /// transform applied jointly to train and test data leaves every
    /// routing decision unchanged.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn find_split(
    xs: &[Vec<f64>],
    ys: &[bool],
    indices: &[usize],
    n_features: usize,
    min_leaf: usize,
) -> Option<BestSplit> {
    let n = indices.len();
    let mut best: Option<BestSplit> = None;
    for f in 0..n_features {
        let mut column: Vec<(f64, bool)> = indices.iter().map(|&i| (xs[i][f], ys[i])).collect();
        column.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let total_pos = column.iter().filter(|(_, y)| *y).count();
        let mut left_n = 0usize;
        let mut left_pos = 0usize;
        for w in 0..n - 1 {
            left_n += 1;
            if column[w].1 {
                left_pos += 1;
            }
            // Only positions where the value changes are valid cut points.
            if column[w].0 == column[w + 1].0 {
                continue;
            }
            let right_n = n - left_n;
            if left_n < min_leaf || right_n < min_leaf {
                continue;
            }
            let impurity = (left_n as f64 * gini(left_pos, left_n)
                + right_n as f64 * gini(total_pos - left_pos, right_n))
                / n as f64;
            // Strict improvement keeps the lowest feature / threshold on ties.
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                best = Some(BestSplit { feature: f, threshold: column[w].0, impurity });
            }
        }
    }
    best
}

impl DecisionTree {
    /// Grow a tree on `xs`/`ys`. Leaf labels are the majority class, ties
    /// resolving to `false`.
    pub fn fit(xs: &[Vec<f64>], ys: &[bool], params: &TreeParams) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty(), "cannot fit a tree on zero samples");
        let n_features = xs[0].len();
        let mut tree = DecisionTree { nodes: Vec::new() };
        let indices: Vec<usize> = (0..xs.len()).collect();
        tree.grow(xs, ys, indices, 0, params, n_features);
        tree
    }

    fn grow(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[bool],
        indices: Vec<usize>,
        depth: usize,
        params: &TreeParams,
        n_features: usize,
    ) -> usize {
        let n = indices.len();
        let pos = indices.iter().filter(|&&i| ys[i]).count();
        let majority = pos * 2 > n;

        let make_leaf = |nodes: &mut Vec<Node>| {
            nodes.push(Node::Leaf { label: majority });
            nodes.len() - 1
        };

        if depth >= params.max_depth || pos == 0 || pos == n || n < 2 * params.min_leaf {
            return make_leaf(&mut self.nodes);
        }
        // Zero-gain splits are allowed (XOR-style data needs one level of
        // free descent before any impurity drops); termination is still
        // guaranteed because every split strictly shrinks the node.
        let Some(split) = find_split(xs, ys, &indices, n_features, params.min_leaf) else {
            return make_leaf(&mut self.nodes);
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| xs[i][split.feature] <= split.threshold);

        let node = self.nodes.len();
        self.nodes.push(Node::Leaf { label: majority }); // placeholder
        let left = self.grow(xs, ys, left_idx, depth + 1, params, n_features);
        let right = self.grow(xs, ys, right_idx, depth + 1, params, n_features);
        self.nodes[node] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        node
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { label } => return *label,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn depth_at(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + depth_at(nodes, *left).max(depth_at(nodes, *right))
                }
            }
        }
        depth_at(&self.nodes, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor_data(copies: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..copies {
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                xs.push(vec![a, b]);
                ys.push((a > 0.5) != (b > 0.5));
            }
        }
        (xs, ys)
    }

    fn training_accuracy(tree: &DecisionTree, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
        let correct = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| tree.predict(x) == **y)
            .count();
        correct as f64 / xs.len() as f64
    }

    #[test]
    fn xor_needs_depth_two() {
        let (xs, ys) = xor_data(5);
        let deep = DecisionTree::fit(&xs, &ys, &TreeParams { max_depth: 2, min_leaf: 1 });
        assert_eq!(training_accuracy(&deep, &xs, &ys), 1.0);
        assert!(deep.depth() >= 2);

        let stump = DecisionTree::fit(&xs, &ys, &TreeParams { max_depth: 1, min_leaf: 1 });
        assert!(training_accuracy(&stump, &xs, &ys) <= 0.75);

        // Exhaustive check: no single split on XOR beats 75 percent.
        for f in 0..2 {
            for thr in [0.0, 0.5] {
                let mut correct_as_left_true = 0;
                let mut correct_as_left_false = 0;
                for (x, y) in xs.iter().zip(&ys) {
                    let left = x[f] <= thr;
                    if left == *y {
                        correct_as_left_true += 1;
                    } else {
                        correct_as_left_false += 1;
                    }
                }
                let best = correct_as_left_true.max(correct_as_left_false);
                assert!(best as f64 / xs.len() as f64 <= 0.75);
            }
        }
    }

    #[test]
    fn pure_node_is_leaf() {
        let xs = vec![vec![0.1], vec![0.9], vec![0.5]];
        let ys = vec![true, true, true];
        let tree = DecisionTree::fit(&xs, &ys, &TreeParams::default());
        assert_eq!(tree.depth(), 0);
        assert!(tree.predict(&[0.3]));
    }

    #[test]
    fn min_leaf_blocks_tiny_splits() {
        let xs = vec![vec![0.0], vec![1.0], vec![0.1], vec![0.9]];
        let ys = vec![false, true, false, true];
        let tree = DecisionTree::fit(&xs, &ys, &TreeParams { max_depth: 6, min_leaf: 5 });
        assert_eq!(tree.depth(), 0);
    }

    #[test]
    fn monotone_transform_preserves_predictions() {
        // Thresholds sit on training values, so order-preserving maps of a
        // column cannot change any routing.
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0, (i % 7) as f64 / 7.0]).collect();
        let ys: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let params = TreeParams { max_depth: 4, min_leaf: 2 };
        let tree = DecisionTree::fit(&xs, &ys, &params);

        let transform = |v: f64| -1.0 / (v + 2.0); // strictly increasing
        let txs: Vec<Vec<f64>> = xs.iter().map(|r| vec![transform(r[0]), r[1]]).collect();
        let ttree = DecisionTree::fit(&txs, &ys, &params);

        for i in 0..40 {
            let probe = vec![i as f64 / 40.0 + 0.013, ((i * 3) % 11) as f64 / 11.0];
            let tprobe = vec![transform(probe[0]), probe[1]];
            assert_eq!(tree.predict(&probe), ttree.predict(&tprobe), "probe {probe:?}");
        }
    }
}
