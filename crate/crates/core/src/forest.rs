//! Random forest with honesty.
//!
//! Each tree draws a subsample without replacement and splits it in two
//! disjoint halves: the structure half chooses every split, the estimation
//! half alone fills the leaf estimates. Prediction is the mean over trees of
//! the reached leaf estimate.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

pub const MIN_TRAINING_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub num_trees: usize,
    pub max_depth: usize,
    /// Minimum structure-half rows on each side of a split.
    pub min_leaf: usize,
    /// Candidate features per split; `None` means ⌈√p⌉.
    pub features_per_split: Option<usize>,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: 200,
            max_depth: 12,
            min_leaf: 5,
            features_per_split: None,
            subsample_fraction: 0.5,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn mtry(&self, p: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }

    fn subsample_size(&self, n: usize) -> usize {
        (self.subsample_fraction * n as f64).floor() as usize
    }

    fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::Validation("num_trees must be >= 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "subsample_fraction {} outside (0, 1]",
                self.subsample_fraction
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::Validation("min_leaf must be >= 1".into()));
        }
        if let Some(m) = self.features_per_split {
            if m == 0 || m > p {
                return Err(Error::Validation(format!(
                    "features_per_split {m} outside 1..={p}"
                )));
            }
        }
        if self.subsample_size(n) < 2 {
            return Err(Error::Validation(
                "subsample must hold at least two rows to form both halves".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        estimate: f64,
        /// Estimation-half rows routed to this leaf; 0 means the estimate was
        /// backed off to the nearest ancestor with data.
        estimation_count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestTree {
    /// Node 0 is the root; children always follow their parent.
    pub nodes: Vec<Node>,
    pub structure_ids: Vec<usize>,
    pub estimation_ids: Vec<usize>,
}

impl HonestTree {
    /// Index of the leaf reached by `x` (x_j <= threshold goes left).
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { estimate, .. } => estimate,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }

    /// The tree with every leaf estimate replaced; leaves stay in place.
    pub fn structure(&self) -> Vec<Node> {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Split { .. } => n.clone(),
                Node::Leaf { .. } => Node::Leaf {
                    estimate: 0.0,
                    estimation_count: 0,
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestForest {
    pub params: ForestParams,
    pub num_features: usize,
    pub trees: Vec<HonestTree>,
}

impl HonestForest {
    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_features {
            return Err(Error::Schema(format!(
                "feature vector has {} values, model expects {}",
                x.len(),
                self.num_features
            )));
        }
        Ok(())
    }

    pub fn predict_risk(&self, x: &[f64]) -> Result<f64> {
        self.check_width(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        (total / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().try_for_each(|r| self.check_width(r))?;
        Ok(parallel::map_slice(rows, |r| self.predict_unchecked(r)))
    }

    pub fn leaf_path(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.check_width(x)?;
        Ok(self.trees.iter().map(|t| t.leaf_index(x)).collect())
    }

    /// Maps every leaf estimate through `f` (used by invariance checks).
    pub fn map_estimates(&self, f: impl Fn(f64) -> f64) -> HonestForest {
        let mut out = self.clone();
        for tree in &mut out.trees {
            for node in &mut tree.nodes {
                if let Node::Leaf { estimate, .. } = node {
                    *estimate = f(*estimate);
                }
            }
        }
        out
    }
}

/// Draws the per-tree subsample and splits it into (structure, estimation).
/// Depends only on the tree's stream and n, never on labels.
fn honest_halves(params: &ForestParams, n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let m = params.subsample_size(n);
    let drawn = index::sample(rng, n, m).into_vec();
    let cut = m.div_ceil(2);
    let mut structure = drawn[..cut].to_vec();
    let mut estimation = drawn[cut..].to_vec();
    structure.sort_unstable();
    estimation.sort_unstable();
    (structure, estimation)
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Trains `params.num_trees` honest trees on row-major `x` and 0/1 labels `y`.
pub fn train_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Result<HonestForest> {
    let n = x.len();
    if n < MIN_TRAINING_ROWS {
        return Err(Error::InsufficientData(format!(
            "forest needs at least {MIN_TRAINING_ROWS} rows, got {n}"
        )));
    }
    if y.len() != n {
        return Err(Error::Schema(format!("{} labels for {n} rows", y.len())));
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(Error::Schema("design matrix must be rectangular with p >= 1".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    params.validate(n, p)?;
    let mtry = params.mtry(p);
    let trees = parallel::map_range(params.num_trees, |t| {
        let mut rng = tree_rng(params.seed, t);
        let (structure_ids, estimation_ids) = honest_halves(params, n, &mut rng);
        let mut grower = Grower {
            x,
            y,
            params,
            mtry,
            p,
            rng,
            nodes: Vec::new(),
            parents: Vec::new(),
        };
        grower.grow(structure_ids.clone(), 0, None);
        let Grower { nodes, parents, .. } = grower;
        let nodes = fill_estimates(nodes, &parents, x, y, &estimation_ids);
        HonestTree {
            nodes,
            structure_ids,
            estimation_ids,
        }
    });
    Ok(HonestForest {
        params: params.clone(),
        num_features: p,
        trees,
    })
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
    p: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    parents: Vec<Option<usize>>,
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn sse(sum: f64, sum_sq: f64, count: f64) -> f64 {
    (sum_sq - sum * sum / count).max(0.0)
}

impl Grower<'_> {
    fn push(&mut self, node: Node, parent: Option<usize>) -> usize {
        self.nodes.push(node);
        self.parents.push(parent);
        self.nodes.len() - 1
    }

    fn grow(&mut self, ids: Vec<usize>, depth: usize, parent: Option<usize>) -> usize {
        let leaf = Node::Leaf {
            estimate: 0.0,
            estimation_count: 0,
        };
        if depth >= self.params.max_depth || ids.len() < 2 * self.params.min_leaf {
            return self.push(leaf, parent);
        }
        let Some(best) = self.best_split(&ids) else {
            return self.push(leaf, parent);
        };
        let me = self.push(leaf, parent);
        let (left_ids, right_ids): (Vec<usize>, Vec<usize>) = ids
            .iter()
            .partition(|&&i| self.x[i][best.feature] <= best.threshold);
        let left = self.grow(left_ids, depth + 1, Some(me));
        let right = self.grow(right_ids, depth + 1, Some(me));
        self.nodes[me] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        me
    }

    /// Lowest weighted-variance split among the sampled candidate features.
    /// Ties go to the lower feature index, then the lower threshold.
    fn best_split(&mut self, ids: &[usize]) -> Option<Candidate> {
        let count = ids.len() as f64;
        let (sum, sum_sq) = ids
            .iter()
            .fold((0.0, 0.0), |(s, q), &i| (s + self.y[i], q + self.y[i] * self.y[i]));
        let parent = sse(sum, sum_sq, count);
        if parent <= 0.0 {
            return None;
        }
        let mut features = index::sample(&mut self.rng, self.p, self.mtry).into_vec();
        features.sort_unstable();
        let min_leaf = self.params.min_leaf;
        let mut best: Option<Candidate> = None;
        let mut order: Vec<usize> = ids.to_vec();
        for feature in features {
            order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
            let (mut ls, mut lq) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let yi = self.y[order[k]];
                ls += yi;
                lq += yi * yi;
                let left_n = k + 1;
                let right_n = order.len() - left_n;
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let lo = self.x[order[k]][feature];
                let hi = self.x[order[k + 1]][feature];
                if lo >= hi {
                    continue;
                }
                let score = sse(ls, lq, left_n as f64)
                    + sse(sum - ls, sum_sq - lq, right_n as f64);
                if best.is_none_or(|b| score < b.score) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Candidate {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
        }
        best.filter(|b| b.score < parent - 1e-12)
    }
}

/// Leaf estimate = mean estimation-half label in the leaf, backing off to the
/// nearest ancestor holding at least one estimation row.
fn fill_estimates(
    mut nodes: Vec<Node>,
    parents: &[Option<usize>],
    x: &[Vec<f64>],
    y: &[f64],
    estimation_ids: &[usize],
) -> Vec<Node> {
    let mut counts = vec![0usize; nodes.len()];
    let mut sums = vec![0.0f64; nodes.len()];
    for &i in estimation_ids {
        let mut k = 0;
        loop {
            counts[k] += 1;
            sums[k] += y[i];
            match nodes[k] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[i][feature] <= threshold { left } else { right },
                Node::Leaf { .. } => break,
            }
        }
    }
    for k in 0..nodes.len() {
        if let Node::Leaf { .. } = nodes[k] {
            let mut a = k;
            while counts[a] == 0 {
                match parents[a] {
                    Some(up) => a = up,
                    None => break,
                }
            }
            let estimate = if counts[a] == 0 {
                0.0
            } else {
                (sums[a] / counts[a] as f64).clamp(0.0, 1.0)
            };
            nodes[k] = Node::Leaf {
                estimate,
                estimation_count: counts[k],
            };
        }
    }
    nodes
}
