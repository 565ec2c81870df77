use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Disjoint train/val/test node masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSplit {
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl NodeSplit {
    /// Every node in the training mask.
    pub fn all_train(n: usize) -> Self {
        Self {
            train_mask: vec![true; n],
            val_mask: vec![false; n],
            test_mask: vec![false; n],
        }
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |m: &[bool]| m.iter().filter(|&&b| b).count();
        (c(&self.train_mask), c(&self.val_mask), c(&self.test_mask))
    }
}

/// Random split with sizes `floor(ratio * n)`, deterministic given `seed`.
pub fn split_nodes(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<NodeSplit> {
    let (tr, va, te) = ratios;
    for r in [tr, va, te] {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::Config(format!("split ratio {r} must be nonnegative")));
        }
    }
    if tr + va + te > 1.0 + 1e-12 {
        return Err(Error::Config(format!(
            "split ratios sum to {} > 1",
            tr + va + te
        )));
    }
    let size = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let (n_tr, n_va, n_te) = (size(tr), size(va), size(te));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut split = NodeSplit {
        train_mask: vec![false; n],
        val_mask: vec![false; n],
        test_mask: vec![false; n],
    };
    for (k, &v) in order.iter().enumerate() {
        if k < n_tr {
            split.train_mask[v] = true;
        } else if k < n_tr + n_va {
            split.val_mask[v] = true;
        } else if k < n_tr + n_va + n_te {
            split.test_mask[v] = true;
        }
    }
    Ok(split)
}
