//! Multi-domain stochastic-block-model generator with controllable
//! attribute and topology shift.
//!
//! Every domain shares the class means and base block probabilities. Domain `e`
//! then receives
//!
//! * block probabilities `P_e[c, c'] = min(1, P[c, c'] · exp(topo_shift_scale · z))`
//!   with one symmetric standard-normal `z` per class pair, and
//! * features `x = (I + a·M_e)(class_sep · μ_y + ε) + a·b_e` with
//!   `a = attr_shift_scale`, `M_e` Gaussian with variance `1/d`, `b_e` standard
//!   normal and `ε` unit Gaussian noise.
//!
//! With both scales at zero all domains are identically distributed.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{DomainGraph, Adjacency};
use crate::error::{Error, Result};
use crate::rng::{component_rng, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthShiftConfig {
    pub num_domains: usize,
    pub nodes_per_domain: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub intra_block_p: f64,
    pub inter_block_p: f64,
    pub attr_shift_scale: f64,
    pub topo_shift_scale: f64,
    /// Scale applied to the unit-variance class-mean vectors.
    pub class_sep: f64,
    pub seed: u64,
}

impl Default for SynthShiftConfig {
    fn default() -> Self {
        Self {
            num_domains: 4,
            nodes_per_domain: 200,
            num_classes: 3,
            feature_dim: 16,
            intra_block_p: 0.05,
            inter_block_p: 0.01,
            attr_shift_scale: 0.0,
            topo_shift_scale: 0.0,
            class_sep: 0.5,
            seed: 0,
        }
    }
}

impl SynthShiftConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("intra_block_p", self.intra_block_p),
            ("inter_block_p", self.inter_block_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        for (name, s) in [
            ("attr_shift_scale", self.attr_shift_scale),
            ("topo_shift_scale", self.topo_shift_scale),
            ("class_sep", self.class_sep),
        ] {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Config(format!("{name} = {s} must be a nonnegative real")));
            }
        }
        if self.num_domains == 0 || self.num_classes == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "num_domains, num_classes and feature_dim must be positive".into(),
            ));
        }
        if self.nodes_per_domain < self.num_classes {
            return Err(Error::Config(format!(
                "nodes_per_domain ({}) < num_classes ({})",
                self.nodes_per_domain, self.num_classes
            )));
        }
        Ok(())
    }
}

/// The distribution a single synthetic domain is drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDistribution {
    pub block_probs: Array2<f64>,
    /// Class-conditional feature means, `C × d`.
    pub class_means: Array2<f64>,
    /// Linear part `I + a·M_e` of the feature map.
    pub feature_map: Array2<f64>,
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Unshifted class means, shared by every domain.
fn base_class_means(cfg: &SynthShiftConfig) -> Array2<f64> {
    let mut rng = component_rng(cfg.seed, "synth/class-means");
    gaussian_matrix(&mut rng, cfg.num_classes, cfg.feature_dim, cfg.class_sep)
}

pub fn domain_distributions(cfg: &SynthShiftConfig) -> Result<Vec<DomainDistribution>> {
    cfg.validate()?;
    let (c, d) = (cfg.num_classes, cfg.feature_dim);
    let means = base_class_means(cfg);
    Ok((0..cfg.num_domains)
        .map(|e| {
            let mut rng = component_rng(cfg.seed, &format!("synth/domain{e}/shift"));
            let mut block_probs = Array2::zeros((c, c));
            for i in 0..c {
                for j in i..c {
                    let base = if i == j { cfg.intra_block_p } else { cfg.inter_block_p };
                    let z: f64 = rng.sample(StandardNormal);
                    let p = if cfg.topo_shift_scale == 0.0 {
                        base
                    } else {
                        (base * (cfg.topo_shift_scale * z).exp()).min(1.0)
                    };
                    block_probs[[i, j]] = p;
                    block_probs[[j, i]] = p;
                }
            }
            let a = cfg.attr_shift_scale;
            let m = gaussian_matrix(&mut rng, d, d, (d as f64).sqrt().recip());
            let b = gaussian_matrix(&mut rng, 1, d, 1.0);
            let feature_map = Array2::<f64>::eye(d) + &(m * a);
            let offset = b.row(0).to_owned() * a;
            let class_means = means.dot(&feature_map.t()) + &offset;
            DomainDistribution {
                block_probs,
                class_means,
                feature_map,
            }
        })
        .collect())
}

fn sample_domain(cfg: &SynthShiftConfig, e: usize, dist: &DomainDistribution) -> Result<DomainGraph> {
    let n = cfg.nodes_per_domain;
    let d = cfg.feature_dim;
    let mut rng = component_rng(cfg.seed, &format!("synth/domain{e}/sample"));
    let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.num_classes).collect();
    labels.shuffle(&mut rng);

    let mut adjacency: Adjacency = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let p = dist.block_probs[[labels[i], labels[j]]];
            if rng.random::<f64>() < p {
                adjacency[[i, j]] = 1;
                adjacency[[j, i]] = 1;
            }
        }
    }

    // x = F (sep·μ_y + ε) + a·b  =  class_mean_y + F ε
    let noise = gaussian_matrix(&mut rng, n, d, 1.0);
    let mut features = noise.dot(&dist.feature_map.t());
    for (i, &y) in labels.iter().enumerate() {
        let mut row = features.row_mut(i);
        row += &dist.class_means.row(y);
    }
    DomainGraph::new(adjacency, features, labels, cfg.num_classes, format!("synth{e}"))
}

/// Draws `cfg.num_domains` graphs. Deterministic given `cfg.seed`.
pub fn synth_multi_domain(cfg: &SynthShiftConfig) -> Result<Vec<DomainGraph>> {
    let dists = domain_distributions(cfg)?;
    dists
        .iter()
        .enumerate()
        .map(|(e, dist)| sample_domain(cfg, e, dist))
        .collect()
}

/// Per-class feature means of a sampled graph, `C × d`.
pub fn empirical_class_means(g: &DomainGraph) -> Array2<f64> {
    let mut sums = Array2::zeros((g.num_classes, g.feature_dim()));
    let mut counts = Array1::<f64>::zeros(g.num_classes);
    for (i, &y) in g.labels.iter().enumerate() {
        let mut row = sums.row_mut(y);
        row += &g.features.row(i);
        counts[y] += 1.0;
    }
    for (mut row, &c) in sums.rows_mut().into_iter().zip(counts.iter()) {
        if c > 0.0 {
            row /= c;
        }
    }
    sums
}
