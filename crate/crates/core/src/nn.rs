//! Dense layers with hand-written backpropagation, optimizers and the
//! array-directory checkpoint format shared by every trainable component.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    /// `x` for `x > 0`, `exp(x) − 1` otherwise.
    Elu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative at pre-activation `x`, given `y = apply(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Uniform in `[-1/√fan_in, 1/√fan_in]`.
pub fn init_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (fan_in.max(1) as f64).sqrt().recip();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..=bound))
}

/// Read access to a model's named parameter tensors.
pub trait Parameters {
    fn named_params(&self) -> Vec<(String, &Array2<f64>)>;
    fn params_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in × out`.
    pub weight: Array2<f64>,
    /// `1 × out`.
    pub bias: Array2<f64>,
}

impl Linear {
    pub fn new(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Self {
        let weight = init_uniform(rng, fan_in, fan_out);
        let bias = init_uniform(rng, fan_in, fan_out).slice(s![0..1, ..]).to_owned();
        Self { weight, bias }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Feed-forward perceptron applied row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Intermediate values retained by [`Mlp::forward_cached`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn new(
        rng: &mut Rng,
        widths: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(rng, w[0], w[1]))
            .collect();
        Self {
            layers,
            hidden_activation,
            output_activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>, what: &'static str) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(what, self.in_dim(), x.ncols()));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x, "mlp input width")?;
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            h = layer.forward(h.view());
            h.mapv_inplace(|v| act.apply(v));
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(&x, "mlp input width")?;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            let z = layer.forward(h.view());
            let y = z.mapv(|v| act.apply(v));
            cache.inputs.push(h);
            cache.pre.push(z);
            cache.post.push(y.clone());
            h = y;
        }
        Ok((h, cache))
    }

    /// Returns the gradient with respect to the input and the parameter
    /// gradients in [`Parameters::named_params`] order.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut grads = vec![Array2::zeros((0, 0)); 2 * self.layers.len()];
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let act = self.activation(l);
            if act != Activation::Identity {
                ndarray::Zip::from(&mut g)
                    .and(&cache.pre[l])
                    .and(&cache.post[l])
                    .for_each(|g, &z, &y| *g *= act.derivative(z, y));
            }
            grads[2 * l] = cache.inputs[l].t().dot(&g);
            grads[2 * l + 1] = g.sum_axis(Axis(0)).insert_axis(Axis(0));
            g = g.dot(&self.layers[l].weight.t());
        }
        (g, grads)
    }
}

impl Parameters for Mlp {
    fn named_params(&self) -> Vec<(String, &Array2<f64>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), &l.weight),
                    (format!("layer{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Horizontal concatenation `[a | b]`.
pub fn hstack(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a, b]).expect("row counts agree")
}

/// Mean absolute elementwise difference.
pub fn mean_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    ndarray::Zip::from(a)
        .and(b)
        .fold(0.0, |acc, &x, &y| acc + (x - y).abs())
        / a.len() as f64
}

/// Gradient of `scale · mean|a − b|` with respect to `a`.
pub fn mean_abs_diff_grad(a: &Array2<f64>, b: &Array2<f64>, scale: f64) -> Array2<f64> {
    let k = if a.is_empty() { 0.0 } else { scale / a.len() as f64 };
    ndarray::Zip::from(a).and(b).map_collect(|&x, &y| {
        let d = x - y;
        if d > 0.0 {
            k
        } else if d < 0.0 {
            -k
        } else {
            0.0
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// First-order optimizer over a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// One descent step `θ ← θ − lr · update(∇)`.
    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step);
        let bc2 = 1.0 - b2.powi(self.step);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let wd = self.weight_decay;
            match self.kind {
                OptimizerKind::Sgd => {
                    ndarray::Zip::from(p).and(g).for_each(|p, &g| {
                        *p -= self.lr * (g + wd * *p);
                    });
                }
                OptimizerKind::Adam => {
                    let (lr, eps) = (self.lr, self.eps);
                    ndarray::Zip::from(p)
                        .and(g)
                        .and(&mut self.m[k])
                        .and(&mut self.v[k])
                        .for_each(|p, &g, m, v| {
                            let g = g + wd * *p;
                            *m = b1 * *m + (1.0 - b1) * g;
                            *v = b2 * *v + (1.0 - b2) * g * g;
                            let mh = *m / bc1;
                            let vh = *v / bc2;
                            *p -= lr * mh / (vh.sqrt() + eps);
                        });
                }
            }
        }
    }
}

pub(crate) fn add_into(acc: &mut [Array2<f64>], other: &[Array2<f64>]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

const MANIFEST: &str = "manifest.txt";

/// A checkpoint directory: `manifest.txt` plus one little-endian `f32` file per tensor.
///
/// Manifest lines are `param <name> <rows>x<cols> <file>` or `meta <key> <value>`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Array2<f64>)>,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn push_params(&mut self, prefix: &str, model: &impl Parameters) {
        for (name, p) in model.named_params() {
            self.params.push((format!("{prefix}{name}"), p.clone()));
        }
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn param(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = String::from("# glider checkpoint v1\n");
        for (key, value) in &self.meta {
            manifest.push_str(&format!("meta {key} {value}\n"));
        }
        for (name, p) in &self.params {
            let file = format!("{}.f32", name.replace('/', "__"));
            let mut bytes = Vec::with_capacity(p.len() * 4);
            for &v in p.iter() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            fs::File::create(dir.join(&file))?.write_all(&bytes)?;
            manifest.push_str(&format!("param {name} {}x{} {file}\n", p.nrows(), p.ncols()));
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bad = |msg: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            msg,
        };
        let text = fs::read_to_string(dir.join(MANIFEST))
            .map_err(|e| bad(format!("cannot read manifest: {e}")))?;
        let mut ck = Checkpoint::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["meta", key, rest @ ..] => ck.meta.push((key.to_string(), rest.join(" "))),
                ["param", name, shape, file] => {
                    let (r, c) = shape
                        .split_once('x')
                        .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
                        .ok_or_else(|| bad(format!("line {}: bad shape {shape:?}", lineno + 1)))?;
                    let bytes = fs::read(dir.join(file))
                        .map_err(|e| bad(format!("cannot read {file}: {e}")))?;
                    if bytes.len() != r * c * 4 {
                        return Err(bad(format!(
                            "{file}: expected {} bytes for {r}x{c}, found {}",
                            r * c * 4,
                            bytes.len()
                        )));
                    }
                    let data: Vec<f64> = bytes
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                        .collect();
                    let arr = Array2::from_shape_vec((r, c), data).expect("length checked");
                    ck.params.push((name.to_string(), arr));
                }
                _ => return Err(bad(format!("line {}: unrecognized entry {line:?}", lineno + 1))),
            }
        }
        Ok(ck)
    }
}

/// Rounds every parameter to the nearest `f32`, matching what a checkpoint stores.
pub fn quantize_f32(model: &mut impl Parameters) {
    for p in model.params_mut() {
        p.mapv_inplace(|v| v as f32 as f64);
    }
}

/// Copies checkpoint tensors `<prefix><name>` into `model`, checking shapes.
pub fn restore_params(ck: &Checkpoint, prefix: &str, model: &mut impl Parameters) -> Result<()> {
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(model.params_mut()) {
        let key = format!("{prefix}{name}");
        let src = ck.param(&key).ok_or_else(|| Error::Checkpoint {
            path: Default::default(),
            msg: format!("missing tensor {key}"),
        })?;
        if src.dim() != slot.dim() {
            return Err(Error::Checkpoint {
                path: Default::default(),
                msg: format!(
                    "tensor {key} has shape {:?}, model expects {:?}",
                    src.dim(),
                    slot.dim()
                ),
            });
        }
        slot.assign(src);
    }
    Ok(())
}
