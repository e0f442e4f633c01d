use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FittedModel, TrainingMatrix};
use crate::error::{Error, Result};
use crate::numeric::{argmax, rng_from, Summary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Predictors drawn per node; `None` means ⌊√d⌋ (at least 1).
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            mtry: None,
            min_leaf: 1,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn mtry_for(&self, d: usize) -> usize {
        self.mtry.unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    /// Summed weighted Gini decrease per predictor over this tree's splits.
    pub importance: Vec<f64>,
}

impl DecisionTree {
    /// Grow a CART tree on all rows of `data`, drawing `mtry` candidate
    /// predictors per node from `rng` (no draw when `mtry >= d`).
    pub fn fit(data: &TrainingMatrix, mtry: usize, min_leaf: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        check_params(data, mtry, min_leaf)?;
        let prep = Prepared::new(data);
        Ok(grow(&prep, (0..data.n_rows()).collect(), mtry, min_leaf, rng))
    }

    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { class } => return *class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row(*feature) <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        (0..x.nrows()).map(|i| self.predict_row(|f| x[(i, f)])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub config: ForestConfig,
    pub trees: Vec<DecisionTree>,
    /// Out-of-bag accuracy over rows left out by at least one tree.
    pub oob_accuracy: Option<f64>,
}

impl RandomForest {
    /// Vote fractions.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let c = self.class_names.len();
        let mut p = DMatrix::zeros(x.nrows(), c);
        for t in &self.trees {
            for (i, k) in t.predict(x).into_iter().enumerate() {
                p[(i, k)] += 1.0;
            }
        }
        p / self.trees.len() as f64
    }

    /// Mean over trees of each predictor's summed Gini decrease.
    pub fn importance(&self) -> Vec<f64> {
        let d = self.feature_names.len();
        let mut imp = vec![0.0; d];
        for t in &self.trees {
            for (a, b) in imp.iter_mut().zip(&t.importance) {
                *a += b;
            }
        }
        imp.iter().map(|v| v / self.trees.len() as f64).collect()
    }
}

fn check_params(data: &TrainingMatrix, mtry: usize, min_leaf: usize) -> Result<()> {
    let d = data.n_features();
    if mtry == 0 || mtry > d {
        return Err(Error::validation(format!("mtry must be in 1..={d}, got {mtry}")));
    }
    if min_leaf == 0 || min_leaf >= data.n_rows() {
        return Err(Error::validation(format!(
            "min_leaf must be in 1..{}, got {min_leaf}",
            data.n_rows()
        )));
    }
    Ok(())
}

/// Predictors recoded as ranks among their sorted unique training values.
struct Prepared {
    d: usize,
    c: usize,
    y: Vec<usize>,
    uniq: Vec<Vec<f64>>,
    ranks: Vec<Vec<u32>>,
}

impl Prepared {
    fn new(data: &TrainingMatrix) -> Self {
        let d = data.n_features();
        let mut uniq = Vec::with_capacity(d);
        let mut ranks = Vec::with_capacity(d);
        for col in data.x.column_iter() {
            let mut u: Vec<f64> = col.iter().copied().collect();
            u.sort_by(|a, b| a.total_cmp(b));
            u.dedup();
            let r = col
                .iter()
                .map(|v| u.partition_point(|w| w < v) as u32)
                .collect();
            uniq.push(u);
            ranks.push(r);
        }
        Prepared {
            d,
            c: data.n_classes(),
            y: data.y.clone(),
            uniq,
            ranks,
        }
    }
}

struct Candidate {
    decrease: f64,
    feature: usize,
    /// Rows with rank <= this go left.
    rank: u32,
    threshold: f64,
}

/// Splits must lower the weighted impurity by more than this.
const MIN_DECREASE: f64 = 1e-10;

fn sum_sq_over(counts: &[f64], n: f64) -> f64 {
    counts.iter().map(|k| k * k).sum::<f64>() / n
}

/// Best boundary for one predictor. `runs` yields (rank, class counts) in
/// ascending rank order, present ranks only.
fn scan_runs<'a>(
    runs: impl Iterator<Item = (u32, &'a [f64])>,
    uniq: &[f64],
    total: &[f64],
    n: f64,
    parent: f64,
    min_leaf: f64,
    feature: usize,
) -> Option<Candidate> {
    let c = total.len();
    let mut left = vec![0.0; c];
    let mut right = vec![0.0; c];
    let mut nl = 0.0;
    let mut best: Option<Candidate> = None;
    let mut prev: Option<u32> = None;
    for (rank, counts) in runs {
        if let Some(pr) = prev {
            let nr = n - nl;
            if nr < min_leaf {
                break;
            }
            if nl >= min_leaf {
                for k in 0..c {
                    right[k] = total[k] - left[k];
                }
                let dec = sum_sq_over(&left, nl) + sum_sq_over(&right, nr) - parent;
                if dec > MIN_DECREASE && best.as_ref().is_none_or(|b| dec > b.decrease) {
                    let (a, b) = (uniq[pr as usize], uniq[rank as usize]);
                    best = Some(Candidate {
                        decrease: dec,
                        feature,
                        rank: pr,
                        threshold: a + (b - a) / 2.0,
                    });
                }
            }
        }
        for k in 0..c {
            left[k] += counts[k];
            nl += counts[k];
        }
        prev = Some(rank);
    }
    best
}

fn best_split_for(
    prep: &Prepared,
    rows: &[usize],
    feature: usize,
    total: &[f64],
    parent: f64,
    min_leaf: usize,
) -> Option<Candidate> {
    let uniq = &prep.uniq[feature];
    let u = uniq.len();
    if u < 2 {
        return None;
    }
    let c = prep.c;
    let ranks = &prep.ranks[feature];
    let n = rows.len() as f64;
    let ml = min_leaf as f64;
    if u <= 4 * rows.len() {
        let mut hist = vec![0.0; u * c];
        for &i in rows {
            hist[ranks[i] as usize * c + prep.y[i]] += 1.0;
        }
        let runs = hist
            .chunks(c)
            .enumerate()
            .filter(|(_, h)| h.iter().any(|&v| v > 0.0))
            .map(|(r, h)| (r as u32, h));
        scan_runs(runs, uniq, total, n, parent, ml, feature)
    } else {
        let mut pairs: Vec<(u32, usize)> = rows.iter().map(|&i| (ranks[i], prep.y[i])).collect();
        pairs.sort_unstable();
        let mut grouped: Vec<(u32, Vec<f64>)> = Vec::new();
        for (r, k) in pairs {
            match grouped.last_mut() {
                Some((lr, h)) if *lr == r => h[k] += 1.0,
                _ => {
                    let mut h = vec![0.0; c];
                    h[k] = 1.0;
                    grouped.push((r, h));
                }
            }
        }
        scan_runs(grouped.iter().map(|(r, h)| (*r, h.as_slice())), uniq, total, n, parent, ml, feature)
    }
}

fn grow(prep: &Prepared, mut rows: Vec<usize>, mtry: usize, min_leaf: usize, rng: &mut ChaCha8Rng) -> DecisionTree {
    let c = prep.c;
    let mut nodes = vec![TreeNode::Leaf { class: 0 }];
    let mut importance = vec![0.0; prep.d];
    let mut stack = vec![(0usize, 0usize, rows.len())];
    while let Some((id, s, e)) = stack.pop() {
        let node_rows = &mut rows[s..e];
        let mut total = vec![0.0; c];
        for &i in node_rows.iter() {
            total[prep.y[i]] += 1.0;
        }
        let class = argmax(&total);
        let n = node_rows.len();
        let pure = total.iter().filter(|&&k| k > 0.0).count() <= 1;
        if pure || n < 2 * min_leaf {
            nodes[id] = TreeNode::Leaf { class };
            continue;
        }
        let features: Vec<usize> = if mtry >= prep.d {
            (0..prep.d).collect()
        } else {
            let mut f = sample(rng, prep.d, mtry).into_vec();
            f.sort_unstable();
            f
        };
        let parent = sum_sq_over(&total, n as f64);
        let mut best: Option<Candidate> = None;
        for f in features {
            if let Some(cand) = best_split_for(prep, node_rows, f, &total, parent, min_leaf) {
                if best.as_ref().is_none_or(|b| cand.decrease > b.decrease) {
                    best = Some(cand);
                }
            }
        }
        let Some(best) = best else {
            nodes[id] = TreeNode::Leaf { class };
            continue;
        };
        let ranks = &prep.ranks[best.feature];
        let mut mid = 0;
        for j in 0..n {
            if ranks[node_rows[j]] <= best.rank {
                node_rows.swap(mid, j);
                mid += 1;
            }
        }
        importance[best.feature] += best.decrease;
        let left = nodes.len();
        let right = left + 1;
        nodes.push(TreeNode::Leaf { class: 0 });
        nodes.push(TreeNode::Leaf { class: 0 });
        nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        stack.push((right, s + mid, e));
        stack.push((left, s, s + mid));
    }
    DecisionTree { nodes, importance }
}

/// Grow `n_trees` trees; tree `t` draws from a stream derived from `(seed, t)`.
pub fn train_random_forest(data: &TrainingMatrix, cfg: &ForestConfig, seed: u64) -> Result<RandomForest> {
    if cfg.n_trees == 0 {
        return Err(Error::validation("n_trees must be at least 1"));
    }
    let d = data.n_features();
    let n = data.n_rows();
    let mtry = cfg.mtry_for(d);
    check_params(data, mtry, cfg.min_leaf)?;
    let prep = Prepared::new(data);
    let c = data.n_classes();
    let mut oob_votes = vec![0u32; n * c];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = rng_from(seed, &[t as u64]);
        let rows: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut in_bag = vec![false; n];
        for &i in &rows {
            in_bag[i] = true;
        }
        let tree = grow(&prep, rows, mtry, cfg.min_leaf, &mut rng);
        if cfg.bootstrap {
            for i in (0..n).filter(|&i| !in_bag[i]) {
                let k = tree.predict_row(|f| data.x[(i, f)]);
                oob_votes[i * c + k] += 1;
            }
        }
        trees.push(tree);
    }
    let oob_accuracy = if cfg.bootstrap {
        let mut seen = 0usize;
        let mut correct = 0usize;
        for i in 0..n {
            let votes: Vec<f64> = oob_votes[i * c..(i + 1) * c].iter().map(|&v| v as f64).collect();
            if votes.iter().any(|&v| v > 0.0) {
                seen += 1;
                if argmax(&votes) == data.y[i] {
                    correct += 1;
                }
            }
        }
        (seen > 0).then(|| correct as f64 / seen as f64)
    } else {
        None
    };
    Ok(RandomForest {
        feature_names: data.feature_names.clone(),
        class_names: data.class_names.clone(),
        config: ForestConfig {
            mtry: Some(mtry),
            ..cfg.clone()
        },
        trees,
        oob_accuracy,
    })
}

/// Mean decrease in Gini impurity per predictor, with descriptive statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GiniImportance {
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
    pub summary: Summary,
}

impl GiniImportance {
    /// Predictor indices by decreasing importance (ties by index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        order
    }

    /// The six-number descriptive row: Min, 1st Qu., Median, Mean, 3rd Qu., Max.
    pub fn summary_csv(&self) -> String {
        let s = &self.summary;
        format!(
            "min,q1,median,mean,q3,max\n{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            s.min, s.q1, s.median, s.mean, s.q3, s.max
        )
    }

    /// Ranked listing of the top `k` predictors.
    pub fn top_csv(&self, k: usize) -> String {
        let mut out = String::from("rank,variable,mean_decrease_gini\n");
        for (r, &i) in self.ranking().iter().take(k).enumerate() {
            let _ = writeln!(out, "{},{},{:.4}", r + 1, self.feature_names[i], self.values[i]);
        }
        out
    }
}

pub fn gini_importance(model: &FittedModel) -> Result<GiniImportance> {
    let FittedModel::Forest(forest) = model else {
        return Err(Error::validation(format!(
            "Gini importance needs a random forest, got {}",
            model.family()
        )));
    };
    let values = forest.importance();
    Ok(GiniImportance {
        feature_names: forest.feature_names.clone(),
        summary: Summary::of(&values),
        values,
    })
}
