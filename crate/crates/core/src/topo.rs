//! Topology augmentation with `K` edge-edit policies.
//!
//! Policy `k` holds a logit matrix `B_k`. Row `i` of `softmax(B_k)` (diagonal
//! masked out) is a distribution over the nodes whose edge to `i` may be
//! flipped; `s` columns are drawn per row with replacement. The drawn
//! positions form a symmetric mask `R̄` and the edited topology is
//! `A_k = A + R̄ ∘ (Ā − A)`, i.e. every masked entry is flipped.
//!
//! Policies are trained by REINFORCE, ascending `∇ log p(A_k) · 𝕍(l_k)` where
//! `l_k` is the classifier's mean loss on the `k`-th edited graph.

use ndarray::Array2;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::gcn::{cross_entropy, NodeClassifier};
use crate::graph::{check_simple, supplement, Adjacency, DomainGraph};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeEditPolicy {
    /// `B_k`, `|V| × |V|`. Diagonal entries are ignored.
    pub logits: Array2<f64>,
    pub edits_per_node: usize,
}

impl EdgeEditPolicy {
    /// Uniform policy (all logits zero).
    pub fn uniform(num_nodes: usize, edits_per_node: usize) -> Self {
        Self {
            logits: Array2::zeros((num_nodes, num_nodes)),
            edits_per_node: edits_per_node.max(1),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.logits.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditSample {
    /// Symmetric, zero-diagonal flip mask `R̄`.
    pub mask: Adjacency,
    /// Columns drawn for each row, in draw order.
    pub actions: Vec<Vec<usize>>,
    /// `Σ_i Σ_t log p(σ_{i j_t})` over the directed draws.
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub num_generators: usize,
    pub iterations: usize,
    pub edits_per_node: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Subtract a running mean of past rewards before scaling the gradient.
    pub reward_baseline: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            num_generators: 2,
            iterations: 1,
            edits_per_node: 5,
            learning_rate: 0.01,
            seed: 0,
            reward_baseline: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_generators == 0 || self.iterations == 0 || self.edits_per_node == 0 {
            return Err(Error::Config(
                "augmentation needs K >= 1, T >= 1 and s >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Row-wise softmax of `B_k` with the diagonal masked to `−∞`.
pub fn edit_probabilities(policy: &EdgeEditPolicy) -> Array2<f64> {
    let n = policy.num_nodes();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let row = policy.logits.row(i);
        let max = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            continue;
        }
        let mut total = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let e = (row[j] - max).exp();
            p[[i, j]] = e;
            total += e;
        }
        for j in 0..n {
            p[[i, j]] /= total;
        }
    }
    p
}

/// Log-likelihood of a fixed set of directed draws under `policy`.
pub fn actions_log_prob(policy: &EdgeEditPolicy, actions: &[Vec<usize>]) -> f64 {
    let p = edit_probabilities(policy);
    actions
        .iter()
        .enumerate()
        .flat_map(|(i, cols)| cols.iter().map(move |&j| (i, j)))
        .map(|(i, j)| p[[i, j]].ln())
        .sum()
}

pub fn sample_edits_with(policy: &EdgeEditPolicy, rng: &mut Rng) -> EditSample {
    let n = policy.num_nodes();
    let p = edit_probabilities(policy);
    let mut mask = Array2::zeros((n, n));
    let mut actions = vec![Vec::new(); n];
    let mut log_prob = 0.0;
    if n < 2 {
        return EditSample { mask, actions, log_prob };
    }
    for (i, drawn) in actions.iter_mut().enumerate() {
        let row = p.row(i);
        for _ in 0..policy.edits_per_node {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = None;
            for j in 0..n {
                if j == i || row[j] == 0.0 {
                    continue;
                }
                acc += row[j];
                pick = Some(j);
                if u < acc {
                    break;
                }
            }
            // Rounding can leave u above the accumulated total; the last
            // admissible column absorbs that sliver.
            let pick = pick.expect("every row has an admissible column when n >= 2");
            drawn.push(pick);
            log_prob += row[pick].ln();
            mask[[i, pick]] = 1;
            mask[[pick, i]] = 1;
        }
    }
    EditSample { mask, actions, log_prob }
}

/// Draws `s` columns per row with replacement, deterministically from `seed`.
pub fn sample_edits(policy: &EdgeEditPolicy, seed: u64) -> EditSample {
    sample_edits_with(policy, &mut rng_from_seed(seed))
}

/// `A + R̄ ∘ (Ā − A)`: flips every entry selected by `mask`.
pub fn apply_edits(a: &Adjacency, mask: &Adjacency) -> Result<Adjacency> {
    if a.dim() != mask.dim() {
        return Err(Error::shape(
            "edit mask",
            format!("{:?}", a.dim()),
            format!("{:?}", mask.dim()),
        ));
    }
    check_simple(mask)?;
    let comp = supplement(a)?;
    let mut out = a.mapv(i16::from);
    ndarray::Zip::from(&mut out)
        .and(mask)
        .and(&comp)
        .and(a)
        .for_each(|o, &r, &c, &x| *o += i16::from(r) * (i16::from(c) - i16::from(x)));
    Ok(out.mapv(|v| v as u8))
}

/// Mean cross-entropy of `model` on each graph, over the nodes in `mask`
/// (all nodes when `None`).
pub fn domain_losses(
    graphs: &[DomainGraph],
    model: &dyn NodeClassifier,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let Some(first) = graphs.first() else {
        return Ok(Vec::new());
    };
    let all = vec![true; first.num_nodes()];
    let mask = mask.unwrap_or(&all);
    graphs
        .iter()
        .map(|g| {
            if g.num_nodes() != first.num_nodes() || g.labels != first.labels {
                return Err(Error::Contract(format!(
                    "graph {} does not share labels with graph {}",
                    g.domain_id, first.domain_id
                )));
            }
            cross_entropy(&model.node_logits(g)?, &g.labels, mask)
        })
        .collect()
}

/// Population variance.
pub fn variance_objective(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Contract("variance of an empty loss vector".into()));
    }
    Ok(mean_and_variance(losses).1)
}

/// Mean and population variance, computed relative to the first element so
/// that a constant vector gives exactly its value and exactly zero.
pub(crate) fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let x0 = xs[0];
    let shift = xs.iter().map(|x| x - x0).sum::<f64>() / k;
    let var = xs.iter().map(|x| (x - x0 - shift).powi(2)).sum::<f64>() / k;
    (x0 + shift, var)
}

/// `reward · ∇_{B_k} log p(A_k)`, with `∂/∂β_ij = count_i(j) − s·p_ij`.
pub fn policy_gradient(policy: &EdgeEditPolicy, sample: &EditSample, reward: f64) -> Array2<f64> {
    let n = policy.num_nodes();
    let p = edit_probabilities(policy);
    let mut grad = Array2::zeros((n, n));
    if reward == 0.0 {
        return grad;
    }
    for (i, drawn) in sample.actions.iter().enumerate() {
        if drawn.is_empty() {
            continue;
        }
        let s = drawn.len() as f64;
        for j in 0..n {
            if j != i {
                grad[[i, j]] = -s * p[[i, j]];
            }
        }
        for &j in drawn {
            grad[[i, j]] += 1.0;
        }
    }
    grad * reward
}

#[derive(Clone, Debug)]
pub struct AugmentOutcome {
    /// Graphs from the final iteration, `K` of them.
    pub graphs: Vec<DomainGraph>,
    /// `𝕍(l_k)` at every iteration.
    pub variances: Vec<f64>,
}

/// Runs `T` REINFORCE iterations of the `K` policies against a frozen classifier.
pub fn augment(
    graph: &DomainGraph,
    policies: &mut [EdgeEditPolicy],
    cfg: &AugmentConfig,
    model: &dyn NodeClassifier,
    loss_mask: Option<&[bool]>,
) -> Result<AugmentOutcome> {
    crate::instrument::record_augment();
    cfg.validate()?;
    if policies.len() != cfg.num_generators {
        return Err(Error::Config(format!(
            "expected {} edit policies, got {}",
            cfg.num_generators,
            policies.len()
        )));
    }
    if let Some(p) = policies.iter().find(|p| p.num_nodes() != graph.num_nodes()) {
        return Err(Error::shape("edit policy", graph.num_nodes(), p.num_nodes()));
    }
    let mut variances = Vec::with_capacity(cfg.iterations);
    let mut graphs = Vec::new();
    let mut baseline: Option<f64> = None;
    for t in 0..cfg.iterations {
        let samples: Vec<EditSample> = policies
            .iter()
            .enumerate()
            .map(|(k, p)| sample_edits(p, derive_seed(cfg.seed, &format!("augment/t{t}/k{k}"))))
            .collect();
        graphs = samples
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let a = apply_edits(&graph.adjacency, &s.mask)?;
                Ok(graph.with_adjacency(a, format!("{}/edit{k}", graph.domain_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let losses = domain_losses(&graphs, model, loss_mask)?;
        let var = variance_objective(&losses)?;
        if !var.is_finite() {
            return Err(Error::NonFinite {
                component: "augment variance".into(),
                epoch: t,
            });
        }
        variances.push(var);
        let reward = match (cfg.reward_baseline, baseline) {
            (true, Some(b)) => var - b,
            (true, None) => 0.0,
            (false, _) => var,
        };
        baseline = Some(baseline.map_or(var, |b| 0.9 * b + 0.1 * var));
        for (policy, sample) in policies.iter_mut().zip(&samples) {
            let g = policy_gradient(policy, sample, reward);
            policy.logits.scaled_add(cfg.learning_rate, &g);
        }
    }
    Ok(AugmentOutcome { graphs, variances })
}
