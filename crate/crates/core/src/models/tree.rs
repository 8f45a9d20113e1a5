//! CART classification trees with Gini impurity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Row-major feature matrix borrowed from the caller.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub values: &'a [f64],
    pub width: usize,
}

impl<'a> Features<'a> {
    pub fn new(values: &'a [f64], width: usize) -> Self {
        assert!(width > 0 && values.len().is_multiple_of(width));
        Features { values, width }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        distribution: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted Gini impurity of the two children, `(n_l G_l + n_r G_r) / n`.
    pub impurity: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub min_samples_leaf: usize,
    pub max_features: usize,
    pub n_classes: usize,
}

fn counts(labels: &[usize], idx: &[usize], n_classes: usize) -> Vec<usize> {
    let mut c = vec![0; n_classes];
    for &i in idx {
        c[labels[i]] += 1;
    }
    c
}

pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Best threshold on one feature, as `(score, threshold)` where a higher
/// score `sum_k cl_k^2 / n_l + sum_k cr_k^2 / n_r` means lower impurity.
/// `None` when the feature is constant over `idx` or no cut leaves both sides
/// with `min_leaf` samples. Second flag reports whether the feature varies.
fn best_threshold(
    x: &Features<'_>,
    labels: &[usize],
    idx: &[usize],
    feature: usize,
    total: &[usize],
    min_leaf: usize,
    buf: &mut Vec<(f64, usize)>,
) -> (Option<(f64, f64)>, bool) {
    buf.clear();
    buf.extend(idx.iter().map(|&i| (x.get(i, feature), labels[i])));
    buf.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = buf.len();
    if buf[0].0 == buf[n - 1].0 {
        return (None, false);
    }
    let mut left = vec![0usize; total.len()];
    let mut right = total.to_vec();
    let mut sq_l = 0.0f64;
    let mut sq_r: f64 = right.iter().map(|&c| (c * c) as f64).sum();
    let mut best: Option<(f64, f64)> = None;
    for i in 1..n {
        let k = buf[i - 1].1;
        sq_l += (2 * left[k] + 1) as f64;
        sq_r -= (2 * right[k] - 1) as f64;
        left[k] += 1;
        right[k] -= 1;
        if buf[i - 1].0 == buf[i].0 || i < min_leaf || n - i < min_leaf {
            continue;
        }
        let score = sq_l / i as f64 + sq_r / (n - i) as f64;
        if best.is_none_or(|(s, _)| score > s) {
            let (a, b) = (buf[i - 1].0, buf[i].0);
            let mut t = a + (b - a) / 2.0;
            if t >= b {
                t = a;
            }
            best = Some((score, t));
        }
    }
    (best, true)
}

/// Searches features in random order, evaluating at least `max_features`
/// varying ones and continuing past that only until a valid split exists.
pub fn find_split(
    x: &Features<'_>,
    labels: &[usize],
    idx: &[usize],
    params: &TreeParams,
    rng: &mut seed::Rng,
) -> Option<Split> {
    let total = counts(labels, idx, params.n_classes);
    let mut order: Vec<usize> = (0..x.width).collect();
    let mut buf = Vec::with_capacity(idx.len());
    let mut best: Option<(f64, usize, f64)> = None;
    let mut varied = 0;
    for j in 0..order.len() {
        if varied >= params.max_features && best.is_some() {
            break;
        }
        let pick = rng.random_range(j..order.len());
        order.swap(j, pick);
        let f = order[j];
        let (found, varies) = best_threshold(x, labels, idx, f, &total, params.min_samples_leaf, &mut buf);
        if varies {
            varied += 1;
        }
        if let Some((score, t)) = found {
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, f, t));
            }
        }
    }
    let n = idx.len() as f64;
    best.map(|(score, feature, threshold)| Split {
        feature,
        threshold,
        impurity: 1.0 - score / n,
    })
}

impl DecisionTree {
    /// Grows a tree on the rows listed in `idx` (repeats allowed, as in a
    /// bootstrap sample).
    pub fn fit(x: &Features<'_>, labels: &[usize], idx: &[usize], params: &TreeParams, rng: &mut seed::Rng) -> Self {
        assert!(!idx.is_empty(), "cannot grow a tree on no samples");
        let leaf = |idx: &[usize]| {
            let c = counts(labels, idx, params.n_classes);
            let n = idx.len() as f64;
            Node::Leaf {
                distribution: c.iter().map(|&v| v as f64 / n).collect(),
            }
        };
        let mut nodes = vec![Node::Leaf { distribution: vec![] }];
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, idx.to_vec())];
        while let Some((slot, rows)) = stack.pop() {
            let first = labels[rows[0]];
            let pure = rows.iter().all(|&i| labels[i] == first);
            let split = if pure || rows.len() < 2 * params.min_samples_leaf {
                None
            } else {
                find_split(x, labels, &rows, params, rng)
            };
            match split {
                None => nodes[slot] = leaf(&rows),
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| x.get(i, s.feature) <= s.threshold);
                    let (li, ri) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf { distribution: vec![] });
                    nodes.push(Node::Leaf { distribution: vec![] });
                    nodes[slot] = Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left: li,
                        right: ri,
                    };
                    stack.push((ri, r));
                    stack.push((li, l));
                }
            }
        }
        DecisionTree { nodes }
    }

    pub fn predict_proba(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { distribution } => return distribution,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(nodes, *left).max(d(nodes, *right)),
            }
        }
        d(&self.nodes, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_classes: usize, width: usize) -> TreeParams {
        TreeParams {
            min_samples_leaf: 1,
            max_features: width,
            n_classes,
        }
    }

    #[test]
    fn two_points_one_split() {
        let v = [0.0, 1.0];
        let x = Features::new(&v, 1);
        let labels = [0, 1];
        let tree = DecisionTree::fit(&x, &labels, &[0, 1], &params(2, 1), &mut seed::rng(0));
        match &tree.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 0.5),
            n => panic!("expected split, got {n:?}"),
        }
        assert_eq!(tree.predict_proba(&[0.0]), &[1.0, 0.0]);
        assert_eq!(tree.predict_proba(&[1.0]), &[0.0, 1.0]);
    }

    #[test]
    fn pure_node_is_leaf() {
        let v = [0.0, 1.0, 2.0];
        let x = Features::new(&v, 1);
        let tree = DecisionTree::fit(&x, &[1, 1, 1], &[0, 1, 2], &params(2, 1), &mut seed::rng(0));
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_proba(&[5.0]), &[0.0, 1.0]);
    }

    #[test]
    fn min_samples_leaf_respected() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let x = Features::new(&v, 1);
        let idx: Vec<usize> = (0..10).collect();
        let p = TreeParams {
            min_samples_leaf: 3,
            ..params(2, 1)
        };
        let tree = DecisionTree::fit(&x, &labels, &idx, &p, &mut seed::rng(0));
        fn sizes(t: &DecisionTree, x: &Features<'_>, idx: &[usize]) -> Vec<usize> {
            let mut counts = std::collections::HashMap::new();
            for &i in idx {
                let mut n = 0;
                while let Node::Split { feature, threshold, left, right } = &t.nodes[n] {
                    n = if x.get(i, *feature) <= *threshold { *left } else { *right };
                }
                *counts.entry(n).or_insert(0) += 1;
            }
            counts.into_values().collect()
        }
        assert!(sizes(&tree, &x, &idx).iter().all(|&s| s >= 3));
    }

    /// Exhaustive oracle: every feature and every midpoint, impurity
    /// recomputed from scratch.
    fn oracle_best(x: &Features<'_>, labels: &[usize], n_classes: usize) -> f64 {
        let n = x.rows();
        let mut best = f64::INFINITY;
        for f in 0..x.width {
            let mut vals: Vec<f64> = (0..n).map(|i| x.get(i, f)).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let mut cl = vec![0; n_classes];
                let mut cr = vec![0; n_classes];
                for i in 0..n {
                    if x.get(i, f) <= t {
                        cl[labels[i]] += 1;
                    } else {
                        cr[labels[i]] += 1;
                    }
                }
                let nl: usize = cl.iter().sum();
                let nr: usize = cr.iter().sum();
                let imp = (nl as f64 * gini(&cl) + nr as f64 * gini(&cr)) / n as f64;
                best = best.min(imp);
            }
        }
        best
    }

    #[test]
    fn root_split_matches_exhaustive_search() {
        let mut rng = seed::rng(77);
        for _ in 0..20 {
            let width = 4;
            let v: Vec<f64> = (0..50 * width).map(|_| rng.random_range(-1.0..1.0)).collect();
            let labels: Vec<usize> = (0..50).map(|_| rng.random_range(0..2)).collect();
            let x = Features::new(&v, width);
            let idx: Vec<usize> = (0..50).collect();
            let split = find_split(&x, &labels, &idx, &params(2, width), &mut rng).unwrap();
            let want = oracle_best(&x, &labels, 2);
            assert!((split.impurity - want).abs() < 1e-12, "{} vs {want}", split.impurity);
        }
    }

    #[test]
    fn separable_data_fits_perfectly() {
        let mut rng = seed::rng(8);
        let v: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Features::new(&v, 2);
        let labels: Vec<usize> = (0..100).map(|i| usize::from(x.get(i, 0) + x.get(i, 1) > 0.0)).collect();
        let idx: Vec<usize> = (0..100).collect();
        let tree = DecisionTree::fit(&x, &labels, &idx, &params(2, 2), &mut rng);
        for i in 0..100 {
            let p = tree.predict_proba(&v[2 * i..2 * i + 2]);
            assert_eq!(p[labels[i]], 1.0);
        }
    }
}
