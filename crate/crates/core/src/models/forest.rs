//! Bagged ensemble of CART trees.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, Features, TreeParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_classes: usize,
    pub width: usize,
    pub trees: Vec<DecisionTree>,
}

/// Features examined per split: `ceil(sqrt(width))`.
pub fn max_features(width: usize) -> usize {
    ((width as f64).sqrt().ceil() as usize).clamp(1, width)
}

impl Forest {
    /// Each tree draws its bootstrap and feature order from its own seed
    /// stream, so the result does not depend on thread scheduling.
    pub fn fit(
        x: &Features<'_>,
        labels: &[usize],
        n_classes: usize,
        n_estimators: usize,
        min_samples_leaf: usize,
        seed: u64,
    ) -> Self {
        let n = x.rows();
        assert!(n > 0 && labels.len() == n);
        let params = TreeParams {
            min_samples_leaf,
            max_features: max_features(x.width),
            n_classes,
        };
        let trees = (0..n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::derived_rng(seed, &format!("tree/{t}"));
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                DecisionTree::fit(x, labels, &idx, &params, &mut rng)
            })
            .collect();
        Forest {
            n_classes,
            width: x.width,
            trees,
        }
    }

    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (o, p) in out.iter_mut().zip(t.predict_proba(row)) {
                *o += p;
            }
        }
        let k = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }
}
