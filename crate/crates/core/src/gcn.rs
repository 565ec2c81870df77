//! GCN representation `g` with a linear softmax classifier `f_c` on top.
//!
//! Each layer computes `H ← σ(Â H W)` with the renormalized propagation matrix
//! `Â = D̃^{-1/2}(A + I)D̃^{-1/2}`. Logits are `Z W_c + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, DomainGraph, EgoGraph};
use crate::nn::{init_uniform, Activation, Parameters};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub hidden_width: usize,
    pub num_layers: usize,
    pub activation: Activation,
    /// Drop probability on each layer input during training. 0 disables it.
    pub dropout: f64,
    pub weight_decay: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            num_layers: 2,
            activation: Activation::Tanh,
            dropout: 0.0,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneClassifier {
    pub gcn_layers: Vec<Array2<f64>>,
    pub classifier_weight: Array2<f64>,
    /// `1 × C`.
    pub classifier_bias: Array2<f64>,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Array2<f64>,
    pub predicted_labels: Vec<usize>,
}

/// Anything that maps a whole graph to per-node class logits.
pub trait NodeClassifier {
    fn node_logits(&self, graph: &DomainGraph) -> Result<Array2<f64>>;
}

/// Retained activations of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

impl BackboneClassifier {
    pub fn new(rng: &mut Rng, in_dim: usize, num_classes: usize, cfg: &BackboneConfig) -> Self {
        assert!(cfg.num_layers >= 1, "GCN needs at least one layer");
        let mut gcn_layers = Vec::with_capacity(cfg.num_layers);
        let mut width = in_dim;
        for _ in 0..cfg.num_layers {
            gcn_layers.push(init_uniform(rng, width, cfg.hidden_width));
            width = cfg.hidden_width;
        }
        let classifier_weight = init_uniform(rng, width, num_classes);
        let classifier_bias = init_uniform(rng, width, num_classes).row(0).to_owned().insert_axis(Axis(0));
        Self {
            gcn_layers,
            classifier_weight,
            classifier_bias,
            activation: cfg.activation,
            dropout: cfg.dropout,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.gcn_layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.gcn_layers[0].nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier_weight.ncols()
    }

    fn check_inputs(&self, a_hat: &Array2<f64>, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape("feature width", self.in_dim(), x.ncols()));
        }
        if a_hat.nrows() != x.nrows() || a_hat.ncols() != x.nrows() {
            return Err(Error::shape(
                "propagation matrix",
                format!("{0}x{0}", x.nrows()),
                format!("{}x{}", a_hat.nrows(), a_hat.ncols()),
            ));
        }
        Ok(())
    }

    /// `Â H W`, multiplying in whichever order is cheaper.
    fn propagate(a_hat: &Array2<f64>, h: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
        if w.nrows() > w.ncols() {
            a_hat.dot(&h.dot(w))
        } else {
            a_hat.dot(h).dot(w)
        }
    }

    /// Node embeddings `Z = H_L`.
    pub fn forward(&self, a_hat: &Array2<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(a_hat, &x)?;
        let act = self.activation;
        let mut h = x.to_owned();
        for w in &self.gcn_layers {
            h = Self::propagate(a_hat, &h, w);
            h.mapv_inplace(|v| act.apply(v));
        }
        Ok(h)
    }

    pub fn classify(&self, z: &Array2<f64>) -> Result<Prediction> {
        if z.ncols() != self.classifier_weight.nrows() {
            return Err(Error::shape(
                "embedding width",
                self.classifier_weight.nrows(),
                z.ncols(),
            ));
        }
        let logits = z.dot(&self.classifier_weight) + &self.classifier_bias;
        let predicted_labels = logits.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
        Ok(Prediction {
            logits,
            predicted_labels,
        })
    }

    pub fn predict(&self, graph: &DomainGraph) -> Result<Prediction> {
        let a_hat = normalize_adjacency(&graph.adjacency);
        self.classify(&self.forward(&a_hat, graph.features.view())?)
    }

    /// Embedding of the ego-graph's center, using parent-graph degrees for normalization.
    pub fn ego_forward(&self, ego: &EgoGraph) -> Result<Array1<f64>> {
        if ego.hops < self.num_layers() {
            return Err(Error::Contract(format!(
                "ego-graph has {} hops but the backbone has {} layers",
                ego.hops,
                self.num_layers()
            )));
        }
        let m = ego.node_ids.len();
        let inv_sqrt: Vec<f64> = ego
            .parent_degrees
            .iter()
            .map(|&d| ((d + 1) as f64).sqrt().recip())
            .collect();
        let a_hat = Array2::from_shape_fn((m, m), |(i, j)| {
            let aij = if i == j { 1.0 } else { ego.adjacency[[i, j]] as f64 };
            aij * inv_sqrt[i] * inv_sqrt[j]
        });
        let z = self.forward(&a_hat, ego.features.view())?;
        Ok(z.row(ego.center_position()).to_owned())
    }

    /// Training-mode forward pass returning logits; applies dropout when `rng` is given.
    pub fn forward_train(
        &self,
        a_hat: &Array2<f64>,
        x: ArrayView2<f64>,
        mut rng: Option<&mut Rng>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_inputs(a_hat, &x)?;
        let act = self.activation;
        let keep = 1.0 - self.dropout;
        let mut cache = ForwardCache {
            inputs: Vec::new(),
            pre: Vec::new(),
            post: Vec::new(),
            masks: Vec::new(),
        };
        let mut h = x.to_owned();
        for w in &self.gcn_layers {
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    let m = Array2::from_shape_simple_fn(h.raw_dim(), || {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    h = h * &m;
                    Some(m)
                }
                _ => None,
            };
            let s = Self::propagate(a_hat, &h, w);
            let y = s.mapv(|v| act.apply(v));
            cache.inputs.push(h);
            cache.pre.push(s);
            cache.post.push(y.clone());
            cache.masks.push(mask);
            h = y;
        }
        let logits = h.dot(&self.classifier_weight) + &self.classifier_bias;
        Ok((logits, cache))
    }

    /// Parameter gradients, in [`Parameters::named_params`] order, given `∂L/∂logits`.
    pub fn backward(
        &self,
        a_hat: &Array2<f64>,
        cache: &ForwardCache,
        grad_logits: &Array2<f64>,
    ) -> Vec<Array2<f64>> {
        let n_layers = self.gcn_layers.len();
        let z = &cache.post[n_layers - 1];
        let mut grads = vec![Array2::zeros((0, 0)); n_layers + 2];
        grads[n_layers] = z.t().dot(grad_logits);
        grads[n_layers + 1] = grad_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut g = grad_logits.dot(&self.classifier_weight.t());
        let act = self.activation;
        for l in (0..n_layers).rev() {
            ndarray::Zip::from(&mut g)
                .and(&cache.pre[l])
                .and(&cache.post[l])
                .for_each(|g, &s, &y| *g *= act.derivative(s, y));
            // Â is symmetric, so Âᵀ dS = Â dS.
            let prop = a_hat.dot(&g);
            grads[l] = cache.inputs[l].t().dot(&prop);
            if l > 0 {
                g = prop.dot(&self.gcn_layers[l].t());
                if let Some(mask) = &cache.masks[l] {
                    g *= mask;
                }
            }
        }
        grads
    }

    /// Masked cross-entropy risk on one graph and its parameter gradient.
    pub fn risk_and_grad(
        &self,
        a_hat: &Array2<f64>,
        graph: &DomainGraph,
        mask: &[bool],
        rng: Option<&mut Rng>,
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        let (logits, cache) = self.forward_train(a_hat, graph.features.view(), rng)?;
        let (loss, dlogits) = cross_entropy_with_grad(&logits, &graph.labels, mask)?;
        Ok((loss, self.backward(a_hat, &cache, &dlogits)))
    }
}

impl Parameters for BackboneClassifier {
    fn named_params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = self
            .gcn_layers
            .iter()
            .enumerate()
            .map(|(i, w)| (format!("gcn{i}.weight"), w))
            .collect();
        out.push(("classifier.weight".into(), &self.classifier_weight));
        out.push(("classifier.bias".into(), &self.classifier_bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = self.gcn_layers.iter_mut().collect();
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }
}

impl NodeClassifier for BackboneClassifier {
    fn node_logits(&self, graph: &DomainGraph) -> Result<Array2<f64>> {
        Ok(self.predict(graph)?.logits)
    }
}

/// Index of the largest value; ties go to the smaller index.
pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

fn check_ce_inputs(logits: &Array2<f64>, labels: &[usize], mask: &[bool]) -> Result<usize> {
    if labels.len() != logits.nrows() || mask.len() != logits.nrows() {
        return Err(Error::shape(
            "cross-entropy rows",
            logits.nrows(),
            format!("{} labels / {} mask entries", labels.len(), mask.len()),
        ));
    }
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(Error::Contract("cross-entropy mask selects no nodes".into()));
    }
    Ok(m)
}

/// Mean softmax cross-entropy over masked nodes.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let m = check_ce_inputs(logits, labels, mask)?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|((row, &y), _)| -log_softmax_row(row)[y])
        .sum();
    Ok(total / m as f64)
}

pub fn cross_entropy_with_grad(
    logits: &Array2<f64>,
    labels: &[usize],
    mask: &[bool],
) -> Result<(f64, Array2<f64>)> {
    let m = check_ce_inputs(logits, labels, mask)?;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let logp = log_softmax_row(row);
        total -= logp[labels[i]];
        let mut g = grad.row_mut(i);
        g.assign(&logp.mapv(f64::exp));
        g[labels[i]] -= 1.0;
        g /= m as f64;
    }
    Ok((total / m as f64, grad))
}
