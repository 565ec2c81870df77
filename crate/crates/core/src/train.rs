//! Invariant classifier training over original and generated domains.
//!
//! Each epoch visits every training graph once. For that graph a fresh
//! attribute matrix `X′` is drawn from its frozen stage-1 model, the edit
//! policies run their REINFORCE iterations against the current (frozen)
//! classifier, and the classifier takes one step on
//! `𝕍_e[R_e] + α·𝔼_e[R_e]` over the resulting domain set.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::attr::{generate_shifted, train_stage1, AttrTransformModel, Stage1Config, Stage1Losses, Stage1Outcome};
use crate::error::{Error, Result};
use crate::gcn::{BackboneClassifier, BackboneConfig};
use crate::graph::{normalize_adjacency, split_nodes, DomainGraph, NodeSplit};
use crate::nn::{Checkpoint, Optimizer, OptimizerKind, Parameters};
use crate::rng::{component_rng, derive_seed};
use crate::topo::{augment, AugmentConfig, EdgeEditPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Attribute translation, topology augmentation and the variance objective.
    Glider,
    /// As `Glider`, but stage 1 keeps only the adversarial and semantic terms.
    GliderC,
    /// Attribute translation only; generated domains keep the original topology.
    GliderA,
    /// Mean risk on the original graphs.
    Erm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Glider, Variant::GliderC, Variant::GliderA, Variant::Erm];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Glider => "GLIDER",
            Variant::GliderC => "GLIDER-C",
            Variant::GliderA => "GLIDER-A",
            Variant::Erm => "ERM",
        }
    }

    fn uses_stage1(self) -> bool {
        self != Variant::Erm
    }

    fn uses_topology(self) -> bool {
        matches!(self, Variant::Glider | Variant::GliderC)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    /// `l_f`.
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub augment: AugmentConfig,
    pub stage1: Stage1Config,
    pub backbone: BackboneConfig,
    pub variant: Variant,
    pub include_original: bool,
    /// Fraction of each training graph used for the risk; the rest is validation.
    pub train_fraction: f64,
    /// Keep the parameters with the best validation accuracy.
    pub select_best: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Sgd,
            epochs: 100,
            augment: AugmentConfig::default(),
            stage1: Stage1Config::default(),
            backbone: BackboneConfig::default(),
            variant: Variant::Glider,
            include_original: true,
            train_fraction: 0.8,
            select_best: true,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha = {} must be nonnegative", self.alpha)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(Error::Config(format!(
                "train_fraction = {} must lie in (0, 1]",
                self.train_fraction
            )));
        }
        if self.backbone.num_layers == 0 || self.backbone.hidden_width == 0 {
            return Err(Error::Config("backbone needs at least one layer of positive width".into()));
        }
        if !(0.0..1.0).contains(&self.backbone.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        self.stage1.validate()?;
        if self.variant.uses_stage1() {
            self.augment.validate()?;
        }
        Ok(())
    }

    /// Stage-1 settings for one graph as used by `variant`. The seed depends on
    /// the domain id only, so a model fitted once can serve every rotation.
    pub fn stage1_for(&self, domain_id: &str) -> Stage1Config {
        let mut cfg = self.stage1.clone();
        cfg.seed = derive_seed(self.seed, &format!("stage1/{domain_id}"));
        if self.variant == Variant::GliderC {
            cfg.lambda_x = 0.0;
            cfg.lambda_s = 0.0;
        }
        cfg
    }
}

/// One row of the objective history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveRecord {
    pub epoch: usize,
    pub variance_term: f64,
    pub mean_term: f64,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub variant: Variant,
    pub backbone: BackboneClassifier,
    /// Frozen stage-1 model per training graph (empty for ERM).
    pub attr_models: Vec<AttrTransformModel>,
    pub stage1_histories: Vec<Vec<Stage1Losses>>,
    /// Edit policies per training graph (empty unless topology is augmented).
    pub policies: Vec<Vec<EdgeEditPolicy>>,
    pub splits: Vec<NodeSplit>,
    pub epoch: usize,
    pub history: Vec<ObjectiveRecord>,
    /// Epoch whose parameters were kept by the best-checkpoint rule.
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainMetrics {
    pub domain_id: String,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_domain: Vec<DomainMetrics>,
}

/// `𝕍[risks] + α·𝔼[risks]` with the population variance.
pub fn glider_objective(risks: &[f64], alpha: f64) -> Result<f64> {
    let (var, mean) = variance_and_mean(risks)?;
    Ok(var + alpha * mean)
}

fn variance_and_mean(risks: &[f64]) -> Result<(f64, f64)> {
    if risks.is_empty() {
        return Err(Error::Contract("objective over an empty domain set".into()));
    }
    let (mean, var) = crate::topo::mean_and_variance(risks);
    Ok((var, mean))
}

/// `∂ objective / ∂ risk_e`. Without the variance term this is `1/m` per domain.
pub fn objective_weights(risks: &[f64], alpha: f64, with_variance: bool) -> Vec<f64> {
    let m = risks.len() as f64;
    let mean = crate::topo::mean_and_variance(risks).0;
    risks
        .iter()
        .map(|r| {
            if with_variance {
                2.0 * (r - mean) / m + alpha / m
            } else {
                1.0 / m
            }
        })
        .collect()
}

/// Objective and parameter gradient over a domain set that shares one node mask.
pub fn domain_step(
    backbone: &BackboneClassifier,
    domains: &[DomainGraph],
    mask: &[bool],
    alpha: f64,
    with_variance: bool,
    mut dropout_rng: Option<&mut crate::rng::Rng>,
) -> Result<(ObjectiveRecord, Vec<Array2<f64>>)> {
    let mut risks = Vec::with_capacity(domains.len());
    let mut grads = Vec::with_capacity(domains.len());
    for d in domains {
        let a_hat = normalize_adjacency(&d.adjacency);
        let (r, g) = backbone.risk_and_grad(&a_hat, d, mask, dropout_rng.as_deref_mut())?;
        risks.push(r);
        grads.push(g);
    }
    let (var, mean) = variance_and_mean(&risks)?;
    let weights = objective_weights(&risks, alpha, with_variance);
    let mut total: Vec<Array2<f64>> = grads[0].iter().map(|g| g * weights[0]).collect();
    for (g, &w) in grads.iter().zip(&weights).skip(1) {
        for (acc, gi) in total.iter_mut().zip(g) {
            acc.scaled_add(w, gi);
        }
    }
    let record = if with_variance {
        ObjectiveRecord {
            epoch: 0,
            variance_term: var,
            mean_term: mean,
            objective: var + alpha * mean,
        }
    } else {
        ObjectiveRecord {
            epoch: 0,
            variance_term: 0.0,
            mean_term: mean,
            objective: mean,
        }
    };
    Ok((record, total))
}

fn check_graphs(graphs: &[DomainGraph]) -> Result<(usize, usize)> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Contract("training needs at least one graph".into()))?;
    let d = first.feature_dim();
    let c = graphs.iter().map(|g| g.num_classes).max().unwrap_or(0);
    if let Some(g) = graphs.iter().find(|g| g.feature_dim() != d) {
        return Err(Error::shape("training feature width", d, g.feature_dim()));
    }
    Ok((d, c))
}

/// Builds the domain set for training graph `i` at `epoch`.
fn build_domains(
    state: &mut TrainState,
    cfg: &RunConfig,
    graph: &DomainGraph,
    i: usize,
    epoch: usize,
) -> Result<Vec<DomainGraph>> {
    let xprime_seed = |k: usize| {
        derive_seed(cfg.seed, &format!("xprime/g{i}/k{k}")).wrapping_add(epoch as u64)
    };
    let mut domains = match cfg.variant {
        Variant::Erm => return Ok(vec![graph.clone()]),
        Variant::Glider | Variant::GliderC => {
            let x_new = generate_shifted(&state.attr_models[i], graph.features.view(), xprime_seed(0))?;
            let shifted = graph.with_features(x_new, format!("{}/shifted", graph.domain_id));
            let mut aug = cfg.augment.clone();
            aug.seed = derive_seed(cfg.seed, &format!("augment/g{i}")).wrapping_add(epoch as u64);
            let mask = &state.splits[i].train_mask;
            augment(&shifted, &mut state.policies[i], &aug, &state.backbone, Some(mask))?.graphs
        }
        Variant::GliderA => (0..cfg.augment.num_generators)
            .map(|k| {
                let x_new = generate_shifted(&state.attr_models[i], graph.features.view(), xprime_seed(k))?;
                Ok(graph.with_features(x_new, format!("{}/attr{k}", graph.domain_id)))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if cfg.include_original {
        domains.push(graph.clone());
    }
    Ok(domains)
}

fn validation_accuracy(backbone: &BackboneClassifier, graphs: &[DomainGraph], splits: &[NodeSplit]) -> Result<Option<f64>> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (g, split) in graphs.iter().zip(splits) {
        if !split.val_mask.iter().any(|&b| b) {
            continue;
        }
        let pred = backbone.predict(g)?;
        for v in (0..g.num_nodes()).filter(|&v| split.val_mask[v]) {
            total += 1;
            hits += usize::from(pred.predicted_labels[v] == g.labels[v]);
        }
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}

/// Stage 1 for one training graph under `cfg`.
pub fn fit_stage1(graph: &DomainGraph, cfg: &RunConfig) -> Result<Stage1Outcome> {
    train_stage1(graph.features.view(), &cfg.stage1_for(&graph.domain_id))
}

/// Full training loop for `cfg.variant`.
pub fn train(graphs: &[DomainGraph], cfg: &RunConfig) -> Result<TrainState> {
    train_with_stage1(graphs, cfg, None)
}

/// As [`train`], reusing stage-1 results given in the order of `graphs`.
/// Supplying the output of [`fit_stage1`] gives the same state as `train`.
pub fn train_with_stage1(
    graphs: &[DomainGraph],
    cfg: &RunConfig,
    stage1: Option<Vec<Stage1Outcome>>,
) -> Result<TrainState> {
    cfg.validate()?;
    let (d, c) = check_graphs(graphs)?;
    let mut init_rng = component_rng(cfg.seed, "backbone/init");
    let backbone = BackboneClassifier::new(&mut init_rng, d, c, &cfg.backbone);
    let splits = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let seed = derive_seed(cfg.seed, &format!("split/g{i}"));
            split_nodes(g.num_nodes(), (cfg.train_fraction, 1.0 - cfg.train_fraction, 0.0), seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut attr_models = Vec::new();
    let mut stage1_histories = Vec::new();
    if cfg.variant.uses_stage1() {
        let outcomes = match stage1 {
            Some(v) if v.len() == graphs.len() => v,
            Some(v) => return Err(Error::shape("stage-1 models", graphs.len(), v.len())),
            None => graphs.iter().map(|g| fit_stage1(g, cfg)).collect::<Result<Vec<_>>>()?,
        };
        for out in outcomes {
            if out.model.feature_dim() != d {
                return Err(Error::shape("stage-1 feature width", d, out.model.feature_dim()));
            }
            attr_models.push(out.model);
            stage1_histories.push(out.history);
        }
    }
    let policies = if cfg.variant.uses_topology() {
        graphs
            .iter()
            .map(|g| {
                (0..cfg.augment.num_generators)
                    .map(|_| EdgeEditPolicy::uniform(g.num_nodes(), cfg.augment.edits_per_node))
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut state = TrainState {
        variant: cfg.variant,
        backbone,
        attr_models,
        stage1_histories,
        policies,
        splits,
        epoch: 0,
        history: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate).with_weight_decay(cfg.backbone.weight_decay);
    let mut dropout_rng = component_rng(cfg.seed, "backbone/dropout");
    let with_variance = cfg.variant != Variant::Erm;
    let alpha = if with_variance { cfg.alpha } else { 1.0 };
    let mut best: Option<(f64, BackboneClassifier)> = None;

    for epoch in 0..cfg.epochs {
        let mut acc = ObjectiveRecord {
            epoch,
            variance_term: 0.0,
            mean_term: 0.0,
            objective: 0.0,
        };
        for (i, g) in graphs.iter().enumerate() {
            let domains = build_domains(&mut state, cfg, g, i, epoch)?;
            let mask = state.splits[i].train_mask.clone();
            let rng = (cfg.backbone.dropout > 0.0).then_some(&mut dropout_rng);
            let (rec, grads) = domain_step(&state.backbone, &domains, &mask, alpha, with_variance, rng)?;
            for (component, v) in [
                ("variance term", rec.variance_term),
                ("mean term", rec.mean_term),
                ("objective", rec.objective),
            ] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        component: format!("{} on training graph {}", component, g.domain_id),
                        epoch,
                    });
                }
            }
            opt.step(state.backbone.params_mut(), &grads);
            acc.variance_term += rec.variance_term;
            acc.mean_term += rec.mean_term;
            acc.objective += rec.objective;
        }
        let k = graphs.len() as f64;
        acc.variance_term /= k;
        acc.mean_term /= k;
        acc.objective /= k;
        state.history.push(acc);
        state.epoch = epoch + 1;

        if cfg.select_best {
            if let Some(val) = validation_accuracy(&state.backbone, graphs, &state.splits)? {
                if best.as_ref().is_none_or(|(b, _)| val > *b) {
                    best = Some((val, state.backbone.clone()));
                    state.best_epoch = Some(epoch);
                }
            }
        }
    }
    if let Some((_, b)) = best {
        state.backbone = b;
    }
    Ok(state)
}

/// Trains `variant` with everything else taken from `cfg`.
pub fn run_variant(variant: Variant, graphs: &[DomainGraph], cfg: &RunConfig) -> Result<TrainState> {
    let cfg = RunConfig {
        variant,
        ..cfg.clone()
    };
    train(graphs, &cfg)
}

/// Accuracy and macro-F1 over `C` classes. Classes absent from both
/// predictions and truth contribute an F1 of 0.
pub fn classification_metrics(predicted: &[usize], truth: &[usize], num_classes: usize) -> (f64, f64) {
    assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return (0.0, 0.0);
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let accuracy = correct as f64 / truth.len() as f64;
    let c = num_classes.max(1);
    let f1_sum: f64 = (0..c)
        .map(|k| {
            let tp = predicted.iter().zip(truth).filter(|&(&p, &t)| p == k && t == k).count();
            let fp = predicted.iter().zip(truth).filter(|&(&p, &t)| p == k && t != k).count();
            let fneg = predicted.iter().zip(truth).filter(|&(&p, &t)| p != k && t == k).count();
            let denom = 2 * tp + fp + fneg;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .sum();
    (accuracy, f1_sum / c as f64)
}

/// Metrics of the trained classifier on an untouched test graph.
pub fn evaluate(state: &TrainState, test_graph: &DomainGraph) -> Result<Metrics> {
    evaluate_backbone(&state.backbone, test_graph)
}

pub fn evaluate_backbone(backbone: &BackboneClassifier, test_graph: &DomainGraph) -> Result<Metrics> {
    if test_graph.feature_dim() != backbone.in_dim() {
        return Err(Error::shape("test feature width", backbone.in_dim(), test_graph.feature_dim()));
    }
    let pred = backbone.predict(test_graph)?;
    let c = test_graph.num_classes.max(backbone.num_classes());
    let (accuracy, macro_f1) = classification_metrics(&pred.predicted_labels, &test_graph.labels, c);
    Ok(Metrics {
        accuracy,
        macro_f1,
        per_domain: vec![DomainMetrics {
            domain_id: test_graph.domain_id.clone(),
            accuracy,
            macro_f1,
        }],
    })
}

impl TrainState {
    /// Writes the backbone, the stage-1 models and the edit policies.
    pub fn save(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let mut ck = backbone_checkpoint(&self.backbone);
        ck.push_meta("variant", self.variant);
        ck.push_meta("epochs", self.epoch);
        for (i, m) in self.attr_models.iter().enumerate() {
            ck.push_params(&format!("stage1/g{i}/"), m);
        }
        for (i, ps) in self.policies.iter().enumerate() {
            for (k, p) in ps.iter().enumerate() {
                ck.params.push((format!("policy/g{i}/k{k}"), p.logits.clone()));
            }
        }
        ck.save(dir)
    }
}

pub fn backbone_checkpoint(backbone: &BackboneClassifier) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.push_meta("backbone.activation", backbone.activation.name());
    ck.push_meta("backbone.num_layers", backbone.num_layers());
    ck.push_params("backbone/", backbone);
    ck
}

/// Rebuilds a backbone from a checkpoint directory.
pub fn load_backbone(dir: impl AsRef<std::path::Path>) -> Result<BackboneClassifier> {
    let dir = dir.as_ref();
    let ck = Checkpoint::load(dir)?;
    let bad = |msg: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        msg,
    };
    let layers: usize = ck
        .meta("backbone.num_layers")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing backbone.num_layers".into()))?;
    let activation = crate::nn::Activation::parse(
        ck.meta("backbone.activation")
            .ok_or_else(|| bad("missing backbone.activation".into()))?,
    )?;
    let get = |name: &str| {
        ck.param(&format!("backbone/{name}"))
            .cloned()
            .ok_or_else(|| bad(format!("missing tensor backbone/{name}")))
    };
    let gcn_layers = (0..layers)
        .map(|l| get(&format!("gcn{l}.weight")))
        .collect::<Result<Vec<_>>>()?;
    let classifier_weight = get("classifier.weight")?;
    let classifier_bias = get("classifier.bias")?;
    for w in gcn_layers.windows(2) {
        if w[0].ncols() != w[1].nrows() {
            return Err(bad(format!("incompatible GCN layer shapes {:?} and {:?}", w[0].dim(), w[1].dim())));
        }
    }
    let last = gcn_layers.last().ok_or_else(|| bad("backbone has no layers".into()))?;
    if last.ncols() != classifier_weight.nrows() || classifier_bias.dim() != (1, classifier_weight.ncols()) {
        return Err(bad("classifier shapes do not match the GCN output".into()));
    }
    Ok(BackboneClassifier {
        gcn_layers,
        classifier_weight,
        classifier_bias,
        activation,
        dropout: 0.0,
    })
}
