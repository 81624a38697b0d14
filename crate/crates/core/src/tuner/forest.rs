//! Regression forest: bootstrap-sampled trees with variance-reduction splits
//! over a random feature subset at each node.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{Dec, Enc, SnapshotError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; 0 means `ceil(features / 3)`.
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 50,
            max_depth: 8,
            min_leaf: 5,
            features_per_split: 0,
            seed: 0x7ee5,
        }
    }
}

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn fit(
        xs: &[Vec<f64>],
        ys: &[f64],
        rows: Vec<usize>,
        p: &ForestParams,
        rng: &mut ChaCha8Rng,
    ) -> Tree {
        let mut tree = Tree::default();
        tree.grow(xs, ys, rows, 0, p, rng);
        tree
    }

    fn grow(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[f64],
        rows: Vec<usize>,
        depth: usize,
        p: &ForestParams,
        rng: &mut ChaCha8Rng,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        let mean = rows.iter().map(|&r| ys[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: mean,
        });
        if depth >= p.max_depth || rows.len() < 2 * p.min_leaf {
            return id;
        }
        let nf = xs[0].len();
        let mtry = if p.features_per_split == 0 {
            nf.div_ceil(3)
        } else {
            p.features_per_split.min(nf)
        };
        let mut candidates: Vec<usize> = sample(rng, nf, mtry).into_vec();
        let mut split = best_split(xs, ys, &rows, &candidates, p.min_leaf);
        if split.is_none() && mtry < nf {
            candidates = (0..nf).collect();
            split = best_split(xs, ys, &rows, &candidates, p.min_leaf);
        }
        let Some((feature, threshold)) = split else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| xs[r][feature] <= threshold);
        let l = self.grow(xs, ys, left, depth + 1, p, rng);
        let r = self.grow(xs, ys, right, depth + 1, p, rng);
        let node = &mut self.nodes[id as usize];
        node.feature = feature as u32;
        node.threshold = threshold;
        node.left = l;
        node.right = r;
        id
    }
}

/// Best (feature, threshold) by squared-error reduction, or `None` when no
/// split leaves `min_leaf` rows on both sides and reduces the error.
fn best_split(
    xs: &[Vec<f64>],
    ys: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&r| ys[r]).sum();
    let total_sq: f64 = rows.iter().map(|&r| ys[r] * ys[r]).sum();
    let parent_sse = total_sq - total * total / n as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<usize> = rows.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
        let (mut ls, mut lsq) = (0.0, 0.0);
        for i in 0..n - 1 {
            let y = ys[order[i]];
            ls += y;
            lsq += y * y;
            let nl = i + 1;
            let nr = n - nl;
            let (xa, xb) = (xs[order[i]][f], xs[order[i + 1]][f]);
            if nl < min_leaf || nr < min_leaf || xa == xb {
                continue;
            }
            let rs = total - ls;
            let rsq = total_sq - lsq;
            let sse = (lsq - ls * ls / nl as f64) + (rsq - rs * rs / nr as f64);
            if sse < parent_sse - 1e-12 * parent_sse.abs().max(1.0)
                && best.is_none_or(|b| sse < b.0)
            {
                best = Some((sse, f, xa + (xb - xa) / 2.0));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], params: &ForestParams) -> Forest {
        assert!(!xs.is_empty() && xs.len() == ys.len());
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let n = xs.len();
        let trees = (0..params.trees)
            .map(|_| {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                Tree::fit(xs, ys, rows, params, &mut rng)
            })
            .collect();
        Forest { trees }
    }

    pub fn tree_predictions(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let p = self.tree_predictions(x);
        p.iter().sum::<f64>() / p.len() as f64
    }

    pub(crate) fn encode(&self, e: &mut Enc) {
        e.u64(self.trees.len() as u64);
        for t in &self.trees {
            e.u64(t.nodes.len() as u64);
            for n in &t.nodes {
                e.u32(n.feature);
                e.f64(n.threshold);
                e.u32(n.left);
                e.u32(n.right);
                e.f64(n.value);
            }
        }
    }

    pub(crate) fn decode(d: &mut Dec<'_>, features: usize) -> Result<Forest, SnapshotError> {
        let count = d.count(4)?;
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            let n = d.count(28)?;
            if n == 0 {
                return Err(SnapshotError::Corrupt("empty tree".into()));
            }
            let mut nodes = Vec::with_capacity(n);
            for _ in 0..n {
                nodes.push(Node {
                    feature: d.u32()?,
                    threshold: d.f64()?,
                    left: d.u32()?,
                    right: d.u32()?,
                    value: d.f64()?,
                });
            }
            // Children must point forward so prediction always terminates.
            for (i, node) in nodes.iter().enumerate() {
                if node.feature == LEAF {
                    continue;
                }
                let ok = (node.feature as usize) < features
                    && (node.left as usize) > i
                    && (node.right as usize) > i
                    && (node.left as usize) < n
                    && (node.right as usize) < n;
                if !ok {
                    return Err(SnapshotError::Corrupt(format!(
                        "tree node {i} out of range"
                    )));
                }
            }
            trees.push(Tree { nodes });
        }
        Ok(Forest { trees })
    }
}
