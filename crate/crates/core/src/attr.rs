//! Attribute-distribution translation.
//!
//! A semantic encoder `E^c`, a variation encoder `E^r`, a decoder `D` and a
//! row-wise discriminator `Ψ` are trained with bidirectional reconstruction
//! and an adversarial loss. New attribute matrices keep the semantic factor of
//! every node and replace its variation factor with a standard-normal draw.
//!
//! All `‖·‖₁` terms are mean absolute errors over matrix elements.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{hstack, mean_abs_diff, mean_abs_diff_grad, sigmoid, Activation, Mlp, Optimizer, OptimizerKind, Parameters};
use crate::rng::{component_rng, rng_from_seed};

/// Discriminator outputs are clamped to `[PSI_EPS, 1 − PSI_EPS]` before logarithms.
pub const PSI_EPS: f64 = 1e-6;

/// Number of epochs in each half of the convergence window.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub lambda_x: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Training stops once the mean total loss of the last
    /// [`CONVERGENCE_WINDOW`] epochs differs from the preceding window's mean
    /// by less than this.
    pub tolerance: f64,
    pub hidden_width: usize,
    pub semantic_dim: usize,
    pub variation_dim: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            lambda_x: 1.0,
            lambda_c: 1.0,
            lambda_s: 1.0,
            learning_rate: 1e-3,
            max_epochs: 500,
            tolerance: 1e-3,
            hidden_width: 32,
            semantic_dim: 8,
            variation_dim: 4,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("lambda_x", self.lambda_x),
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
        ] {
            if !(w >= 0.0) {
                return Err(Error::Config(format!("{name} = {w} must be nonnegative")));
            }
        }
        if self.semantic_dim == 0 || self.variation_dim == 0 || self.hidden_width == 0 {
            return Err(Error::Config("stage-1 widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttrTransformModel {
    pub semantic_encoder: Mlp,
    pub variation_encoder: Mlp,
    pub decoder: Mlp,
    /// Outputs a logit; `Ψ = sigmoid(logit)`.
    pub discriminator: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentFactors {
    pub semantic: Array2<f64>,
    pub variation: Array2<f64>,
}

/// One row of the stage-1 loss history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Losses {
    pub epoch: usize,
    pub rec_x: f64,
    pub rec_c: f64,
    pub rec_r: f64,
    pub disc: f64,
    pub gen: f64,
    /// Weighted generator-side objective.
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Stage1Outcome {
    pub model: AttrTransformModel,
    pub history: Vec<Stage1Losses>,
    /// Epoch at which the convergence rule fired, if it did.
    pub converged_at: Option<usize>,
}

impl AttrTransformModel {
    pub fn new(feature_dim: usize, cfg: &Stage1Config) -> Self {
        let mut rng = component_rng(cfg.seed, "stage1/init");
        let h = cfg.hidden_width;
        let (dc, dr) = (cfg.semantic_dim, cfg.variation_dim);
        let act = Activation::Tanh;
        Self {
            semantic_encoder: Mlp::new(&mut rng, &[feature_dim, h, h, dc], act, Activation::Identity),
            variation_encoder: Mlp::new(&mut rng, &[feature_dim, h, h, dr], act, Activation::Identity),
            decoder: Mlp::new(&mut rng, &[dc + dr, h, h, feature_dim], act, Activation::Identity),
            discriminator: Mlp::new(&mut rng, &[feature_dim, h, h, 1], act, Activation::Identity),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.semantic_encoder.in_dim()
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantic_encoder.out_dim()
    }

    pub fn variation_dim(&self) -> usize {
        self.variation_encoder.out_dim()
    }

    /// `Ψ(x)` per row, unclamped.
    pub fn discriminate(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.discriminator.forward(x)?.iter().map(|&z| sigmoid(z)).collect())
    }
}

impl Parameters for AttrTransformModel {
    fn named_params(&self) -> Vec<(String, &Array2<f64>)> {
        let parts: [(&str, &Mlp); 4] = [
            ("semantic_encoder.", &self.semantic_encoder),
            ("variation_encoder.", &self.variation_encoder),
            ("decoder.", &self.decoder),
            ("discriminator.", &self.discriminator),
        ];
        parts
            .into_iter()
            .flat_map(|(prefix, m)| {
                m.named_params()
                    .into_iter()
                    .map(move |(n, p)| (format!("{prefix}{n}"), p))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = self.semantic_encoder.params_mut();
        out.extend(self.variation_encoder.params_mut());
        out.extend(self.decoder.params_mut());
        out.extend(self.discriminator.params_mut());
        out
    }
}

pub fn encode(model: &AttrTransformModel, x: ArrayView2<f64>) -> Result<LatentFactors> {
    Ok(LatentFactors {
        semantic: model.semantic_encoder.forward(x)?,
        variation: model.variation_encoder.forward(x)?,
    })
}

pub fn decode(model: &AttrTransformModel, factors: &LatentFactors) -> Result<Array2<f64>> {
    if factors.semantic.ncols() != model.semantic_dim() {
        return Err(Error::shape("semantic factor width", model.semantic_dim(), factors.semantic.ncols()));
    }
    if factors.variation.ncols() != model.variation_dim() {
        return Err(Error::shape("variation factor width", model.variation_dim(), factors.variation.ncols()));
    }
    if factors.semantic.nrows() != factors.variation.nrows() {
        return Err(Error::shape("variation factor rows", factors.semantic.nrows(), factors.variation.nrows()));
    }
    model
        .decoder
        .forward(hstack(factors.semantic.view(), factors.variation.view()).view())
}

/// `n × d_r` standard-normal draws.
pub fn sample_variation(n: usize, d_r: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_simple_fn((n, d_r), || rng.sample::<f64, _>(StandardNormal))
}

/// `mean |D(E^c(X), E^r(X)) − X|`.
pub fn loss_matrix_rec(model: &AttrTransformModel, x: ArrayView2<f64>) -> Result<f64> {
    let recon = decode(model, &encode(model, x)?)?;
    Ok(mean_abs_diff(&recon, &x.to_owned()))
}

/// `(mean |E^c(D(X_c, R̂)) − X_c|, mean |E^r(D(X_c, R̂)) − R̂|)`.
pub fn loss_latent_rec(
    model: &AttrTransformModel,
    semantic: &Array2<f64>,
    variation: &Array2<f64>,
) -> Result<(f64, f64)> {
    let factors = LatentFactors {
        semantic: semantic.clone(),
        variation: variation.clone(),
    };
    let xp = decode(model, &factors)?;
    let back = encode(model, xp.view())?;
    Ok((
        mean_abs_diff(&back.semantic, semantic),
        mean_abs_diff(&back.variation, variation),
    ))
}

fn clamp_psi(p: f64) -> f64 {
    p.clamp(PSI_EPS, 1.0 - PSI_EPS)
}

/// `(disc_loss, gen_loss)` where `disc_loss = mean[log(1 − Ψ(x′)) + log Ψ(x)]`
/// is maximized by the discriminator and `gen_loss = −mean log Ψ(x′)` is
/// minimized by the generator.
pub fn adversarial_losses(
    model: &AttrTransformModel,
    x: ArrayView2<f64>,
    x_gen: ArrayView2<f64>,
) -> Result<(f64, f64)> {
    let real = model.discriminate(x)?;
    let fake = model.discriminate(x_gen)?;
    Ok(adversarial_from_scores(&real, &fake))
}

fn adversarial_from_scores(real: &[f64], fake: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().map(|&p| f(clamp_psi(p))).sum::<f64>() / v.len() as f64
        }
    };
    let disc = mean(fake, &|p| (1.0 - p).ln()) + mean(real, &|p| p.ln());
    let gen = -mean(fake, &|p| p.ln());
    (disc, gen)
}

/// Generator-side objective `gen_loss + λ_x ℒ_x + λ_c ℒ_c + λ_s ℒ_r`.
pub fn total_loss(
    model: &AttrTransformModel,
    x: ArrayView2<f64>,
    variation: &Array2<f64>,
    cfg: &Stage1Config,
) -> Result<f64> {
    cfg.validate()?;
    Ok(generator_pass(model, x, variation, cfg)?.0.total)
}

/// Forward pass of every generator-side term, plus the gradient of the total
/// generator objective with respect to all parameters (discriminator included).
fn generator_pass(
    model: &AttrTransformModel,
    x: ArrayView2<f64>,
    variation: &Array2<f64>,
    cfg: &Stage1Config,
) -> Result<(Stage1Losses, Vec<Array2<f64>>)> {
    let n = x.nrows();
    if variation.nrows() != n {
        return Err(Error::shape("sampled variation rows", n, variation.nrows()));
    }
    let x_owned = x.to_owned();
    let dc = model.semantic_dim();

    let (xc, c1) = model.semantic_encoder.forward_cached(x)?;
    let (ra, r1) = model.variation_encoder.forward_cached(x)?;
    let (x_rec, d1) = model.decoder.forward_cached(hstack(xc.view(), ra.view()).view())?;
    if variation.ncols() != model.variation_dim() {
        return Err(Error::shape("sampled variation width", model.variation_dim(), variation.ncols()));
    }
    let (x_gen, d2) = model.decoder.forward_cached(hstack(xc.view(), variation.view()).view())?;
    let (c_back, c2) = model.semantic_encoder.forward_cached(x_gen.view())?;
    let (r_back, r2) = model.variation_encoder.forward_cached(x_gen.view())?;
    let (psi_logit, p2) = model.discriminator.forward_cached(x_gen.view())?;
    let psi_real_logit = model.discriminator.forward(x)?;

    let rec_x = mean_abs_diff(&x_rec, &x_owned);
    let rec_c = mean_abs_diff(&c_back, &xc);
    let rec_r = mean_abs_diff(&r_back, variation);
    let fake: Vec<f64> = psi_logit.iter().map(|&z| sigmoid(z)).collect();
    let real: Vec<f64> = psi_real_logit.iter().map(|&z| sigmoid(z)).collect();
    let (disc, gen) = adversarial_from_scores(&real, &fake);
    let total = gen + cfg.lambda_x * rec_x + cfg.lambda_c * rec_c + cfg.lambda_s * rec_r;
    let losses = Stage1Losses {
        epoch: 0,
        rec_x,
        rec_c,
        rec_r,
        disc,
        gen,
        total,
    };

    // d(−mean log ψ)/dlogit = −(1 − ψ)/n inside the clamp, 0 outside.
    let d_psi = Array2::from_shape_fn((n, 1), |(i, _)| {
        let p = fake[i];
        if (PSI_EPS..=1.0 - PSI_EPS).contains(&p) {
            -(1.0 - p) / n as f64
        } else {
            0.0
        }
    });
    let (dxg_psi, g_disc) = model.discriminator.backward(&p2, &d_psi);
    let d_cback = mean_abs_diff_grad(&c_back, &xc, cfg.lambda_c);
    let d_rback = mean_abs_diff_grad(&r_back, variation, cfg.lambda_s);
    let (dxg_c, mut g_sem) = model.semantic_encoder.backward(&c2, &d_cback);
    let (dxg_r, mut g_var) = model.variation_encoder.backward(&r2, &d_rback);
    let dxg = dxg_psi + dxg_c + dxg_r;
    let (dz2, mut g_dec) = model.decoder.backward(&d2, &dxg);
    let d_xrec = mean_abs_diff_grad(&x_rec, &x_owned, cfg.lambda_x);
    let (dz1, g_dec1) = model.decoder.backward(&d1, &d_xrec);
    crate::nn::add_into(&mut g_dec, &g_dec1);

    // X_c receives gradient from both decoder passes and from the ℒ_c target.
    let d_xc = dz1.slice(s![.., ..dc]).to_owned() + dz2.slice(s![.., ..dc]) - &d_cback;
    let d_ra = dz1.slice(s![.., dc..]).to_owned();
    let (_, g_sem1) = model.semantic_encoder.backward(&c1, &d_xc);
    let (_, g_var1) = model.variation_encoder.backward(&r1, &d_ra);
    crate::nn::add_into(&mut g_sem, &g_sem1);
    crate::nn::add_into(&mut g_var, &g_var1);

    let mut grads = g_sem;
    grads.extend(g_var);
    grads.extend(g_dec);
    grads.extend(g_disc);
    Ok((losses, grads))
}

/// Gradient of the generator objective with respect to every parameter.
pub fn total_loss_grad(
    model: &AttrTransformModel,
    x: ArrayView2<f64>,
    variation: &Array2<f64>,
    cfg: &Stage1Config,
) -> Result<(Stage1Losses, Vec<Array2<f64>>)> {
    generator_pass(model, x, variation, cfg)
}

/// `disc_loss` and its gradient with respect to the discriminator parameters.
pub fn disc_loss_grad(
    model: &AttrTransformModel,
    x: ArrayView2<f64>,
    x_gen: ArrayView2<f64>,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let (real_logit, cr) = model.discriminator.forward_cached(x)?;
    let (fake_logit, cf) = model.discriminator.forward_cached(x_gen)?;
    let real: Vec<f64> = real_logit.iter().map(|&z| sigmoid(z)).collect();
    let fake: Vec<f64> = fake_logit.iter().map(|&z| sigmoid(z)).collect();
    let (disc, _) = adversarial_from_scores(&real, &fake);
    let inside = |p: f64| (PSI_EPS..=1.0 - PSI_EPS).contains(&p);
    let nr = real.len().max(1) as f64;
    let nf = fake.len().max(1) as f64;
    let d_real = Array2::from_shape_fn((real.len(), 1), |(i, _)| {
        if inside(real[i]) { (1.0 - real[i]) / nr } else { 0.0 }
    });
    let d_fake = Array2::from_shape_fn((fake.len(), 1), |(i, _)| {
        if inside(fake[i]) { -fake[i] / nf } else { 0.0 }
    });
    let (_, mut g) = model.discriminator.backward(&cr, &d_real);
    let (_, g2) = model.discriminator.backward(&cf, &d_fake);
    crate::nn::add_into(&mut g, &g2);
    Ok((disc, g))
}

fn check_finite(l: &Stage1Losses) -> Result<()> {
    for (name, v) in [
        ("loss_rec_x", l.rec_x),
        ("loss_rec_c", l.rec_c),
        ("loss_rec_r", l.rec_r),
        ("loss_disc", l.disc),
        ("loss_gen", l.gen),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                component: format!("stage1 {name}"),
                epoch: l.epoch,
            });
        }
    }
    Ok(())
}

/// Alternating adversarial training: per epoch one discriminator ascent step
/// on `disc_loss`, then one encoder/decoder descent step on [`total_loss`].
pub fn train_stage1(x: ArrayView2<f64>, cfg: &Stage1Config) -> Result<Stage1Outcome> {
    cfg.validate()?;
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Contract("stage-1 training needs a nonempty feature matrix".into()));
    }
    let mut model = AttrTransformModel::new(x.ncols(), cfg);
    let n_gen = model.semantic_encoder.named_params().len()
        + model.variation_encoder.named_params().len()
        + model.decoder.named_params().len();
    let mut gen_opt = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate).with_betas(0.5, 0.999);
    let mut disc_opt = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate).with_betas(0.5, 0.999);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut converged_at = None;
    let dr = model.variation_dim();

    for epoch in 0..cfg.max_epochs {
        let r_hat = sample_variation(x.nrows(), dr, crate::rng::derive_seed(cfg.seed, &format!("stage1/epoch{epoch}")));

        let factors = LatentFactors {
            semantic: model.semantic_encoder.forward(x)?,
            variation: r_hat.clone(),
        };
        let x_gen = decode(&model, &factors)?;
        let (_, disc_grads) = disc_loss_grad(&model, x, x_gen.view())?;
        let ascent: Vec<Array2<f64>> = disc_grads.into_iter().map(|g| -g).collect();
        disc_opt.step(model.discriminator.params_mut(), &ascent);

        let (mut losses, grads) = total_loss_grad(&model, x, &r_hat, cfg)?;
        losses.epoch = epoch;
        check_finite(&losses)?;
        let mut params = model.params_mut();
        params.truncate(n_gen);
        gen_opt.step(params, &grads[..n_gen]);
        history.push(losses);

        if history.len() >= 2 * CONVERGENCE_WINDOW {
            let k = history.len();
            let mean = |r: std::ops::Range<usize>| {
                history[r].iter().map(|l| l.total).sum::<f64>() / CONVERGENCE_WINDOW as f64
            };
            let recent = mean(k - CONVERGENCE_WINDOW..k);
            let before = mean(k - 2 * CONVERGENCE_WINDOW..k - CONVERGENCE_WINDOW);
            if (recent - before).abs() < cfg.tolerance {
                converged_at = Some(epoch);
                break;
            }
        }
    }
    Ok(Stage1Outcome {
        model,
        history,
        converged_at,
    })
}

/// `X′ = D(E^c(X), R̂)` with `R̂ ~ N(0, I)` drawn from `seed`.
pub fn generate_shifted(model: &AttrTransformModel, x: ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
    crate::instrument::record_generate();
    let factors = LatentFactors {
        semantic: model.semantic_encoder.forward(x)?,
        variation: sample_variation(x.nrows(), model.variation_dim(), seed),
    };
    decode(model, &factors)
}

/// Writes the loss history as CSV.
pub fn write_loss_history(path: impl AsRef<std::path::Path>, history: &[Stage1Losses]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss_rec_x", "loss_rec_c", "loss_rec_r", "loss_disc", "loss_gen"])?;
    for l in history {
        w.write_record([
            l.epoch.to_string(),
            l.rec_x.to_string(),
            l.rec_c.to_string(),
            l.rec_r.to_string(),
            l.disc.to_string(),
            l.gen.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::{finite_difference, relative_error};
    use crate::nn::{init_uniform, Linear};
    use ndarray::array;

    fn linear_mlp(weights: &[Array2<f64>]) -> Mlp {
        Mlp {
            layers: weights
                .iter()
                .map(|w| Linear {
                    weight: w.clone(),
                    bias: Array2::zeros((1, w.ncols())),
                })
                .collect(),
            hidden_activation: Activation::Identity,
            output_activation: Activation::Identity,
        }
    }

    /// `d = 2`, `E^c` picks column 0, `E^r` picks column 1, `D` concatenates, `Ψ ≡ 0.5`.
    fn inverse_pair() -> AttrTransformModel {
        let i2 = Array2::<f64>::eye(2);
        let i1 = Array2::<f64>::eye(1);
        AttrTransformModel {
            semantic_encoder: linear_mlp(&[array![[1.0], [0.0]], i1.clone(), i1.clone()]),
            variation_encoder: linear_mlp(&[array![[0.0], [1.0]], i1.clone(), i1]),
            decoder: linear_mlp(&[i2.clone(), i2.clone(), i2]),
            discriminator: linear_mlp(&[Array2::zeros((2, 2)), Array2::zeros((2, 2)), Array2::zeros((2, 1))]),
        }
    }

    fn small_cfg() -> Stage1Config {
        Stage1Config {
            hidden_width: 3,
            semantic_dim: 2,
            variation_dim: 2,
            ..Default::default()
        }
    }

    #[test]
    fn encode_decode_shapes() {
        let cfg = Stage1Config {
            semantic_dim: 3,
            variation_dim: 2,
            ..Default::default()
        };
        let model = AttrTransformModel::new(8, &cfg);
        let x = Array2::from_shape_fn((5, 8), |(i, j)| (i as f64 - j as f64) * 0.1);
        let f = encode(&model, x.view()).unwrap();
        assert_eq!(f.semantic.dim(), (5, 3));
        assert_eq!(f.variation.dim(), (5, 2));
        assert_eq!(decode(&model, &f).unwrap().dim(), (5, 8));
        assert!(encode(&model, Array2::zeros((5, 7)).view()).is_err());
        let bad = LatentFactors {
            semantic: Array2::zeros((5, 2)),
            variation: Array2::zeros((5, 2)),
        };
        assert!(matches!(decode(&model, &bad), Err(Error::Shape { .. })));

        let same = Array2::from_shape_fn((3, 8), |(_, j)| j as f64);
        let f = encode(&model, same.view()).unwrap();
        assert_eq!(f.semantic.row(0), f.semantic.row(2));
        let out = decode(&model, &f).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn identity_encoder_maps_zero_to_zero() {
        let m = inverse_pair();
        let f = encode(&m, Array2::zeros((4, 2)).view()).unwrap();
        assert!(f.semantic.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_variation_examples() {
        assert_eq!(sample_variation(4, 2, 7), sample_variation(4, 2, 7));
        let one = sample_variation(1, 1, 3);
        assert_eq!(one.dim(), (1, 1));
        assert!(one[[0, 0]].is_finite());
        let big = sample_variation(10_000, 1, 11);
        let mean = big.mean().unwrap();
        let var = big.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn reconstruction_losses_on_inverse_pair() {
        let m = inverse_pair();
        let x = array![[0.3, -1.2], [2.0, 0.5], [-0.7, 0.1]];
        assert_eq!(loss_matrix_rec(&m, x.view()).unwrap(), 0.0);
        let xc = array![[0.3], [2.0], [-0.7]];
        let r = array![[1.0], [-0.4], [0.2]];
        assert_eq!(loss_latent_rec(&m, &xc, &r).unwrap(), (0.0, 0.0));

        // Decoder adds 1 to every output → mean-L1 of exactly 1.
        let mut shifted = m.clone();
        shifted.decoder.layers[2].bias = array![[1.0, 1.0]];
        assert!((loss_matrix_rec(&shifted, x.view()).unwrap() - 1.0).abs() < 1e-15);

        // E^c off by 0.5 after decoding.
        let mut off = m.clone();
        off.semantic_encoder.layers[2].bias = array![[0.5]];
        let target = &xc + 0.5;
        let (lc, lr) = loss_latent_rec(&off, &target, &r).unwrap();
        assert!((lc - 0.5).abs() < 1e-12);
        assert_eq!(lr, 0.0);
    }

    #[test]
    fn reconstruction_losses_match_elementwise_oracle() {
        let cfg = Stage1Config {
            hidden_width: 4,
            semantic_dim: 2,
            variation_dim: 1,
            ..Default::default()
        };
        let m = AttrTransformModel::new(3, &cfg);
        let mut rng = rng_from_seed(5);
        let x = init_uniform(&mut rng, 3, 3) * 2.0;
        let recon = decode(&m, &encode(&m, x.view()).unwrap()).unwrap();
        let mut total = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                total += (recon[[i, j]] - x[[i, j]]).abs();
            }
        }
        assert!((loss_matrix_rec(&m, x.view()).unwrap() - total / 9.0).abs() < 1e-14);

        let xc = encode(&m, x.view()).unwrap().semantic;
        let r = sample_variation(3, 1, 2);
        let xp = decode(&m, &LatentFactors { semantic: xc.clone(), variation: r.clone() }).unwrap();
        let back = encode(&m, xp.view()).unwrap();
        let mut lc = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                lc += (back.semantic[[i, j]] - xc[[i, j]]).abs();
            }
        }
        let lr: f64 = (0..3).map(|i| (back.variation[[i, 0]] - r[[i, 0]]).abs()).sum();
        let (c, s) = loss_latent_rec(&m, &xc, &r).unwrap();
        assert!((c - lc / 6.0).abs() < 1e-14);
        assert!((s - lr / 3.0).abs() < 1e-14);
    }

    #[test]
    fn adversarial_examples() {
        let m = inverse_pair();
        let x = array![[0.3, -1.2], [2.0, 0.5]];
        let (d, g) = adversarial_losses(&m, x.view(), x.view()).unwrap();
        assert!((d - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((d + 1.3863).abs() < 1e-4);
        assert!((g - 0.6931).abs() < 1e-4);

        let (d, g) = adversarial_from_scores(&[1.0, 1.0 - 1e-6], &[0.0, 1e-6]);
        let expected = 2.0 * (1.0 - 1e-6f64).ln();
        assert!((d - expected).abs() < 1e-12);
        assert!(d.abs() < 1e-5 && d <= 0.0);
        assert!(g > 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let m = inverse_pair();
        let x = array![[0.3, -1.2], [2.0, 0.5], [-0.7, 0.1]];
        let r = sample_variation(3, 1, 1);
        for w in [0.0, 0.3, 5.0] {
            let cfg = Stage1Config {
                lambda_x: w,
                lambda_c: w,
                lambda_s: w,
                ..Default::default()
            };
            assert!((total_loss(&m, x.view(), &r, &cfg).unwrap() - 0.5f64.ln().abs()).abs() < 1e-12);
        }

        let mut shifted = m.clone();
        shifted.decoder.layers[2].bias = array![[0.25, 0.25]];
        let zero = Stage1Config {
            lambda_x: 0.0,
            lambda_c: 0.0,
            lambda_s: 0.0,
            ..Default::default()
        };
        let gen = -0.5f64.ln();
        assert!((total_loss(&shifted, x.view(), &r, &zero).unwrap() - gen).abs() < 1e-12);
        // Only λ_x on: ℒ_x = 0.25 exactly, so the total is 0.6931 + 0.25.
        let only_x = Stage1Config { lambda_x: 1.0, ..zero.clone() };
        let t = total_loss(&shifted, x.view(), &r, &only_x).unwrap();
        assert!((t - (gen + 0.25)).abs() < 1e-12);
        assert!((t - 0.9431).abs() < 1e-4);

        let neg = Stage1Config { lambda_c: -1.0, ..zero };
        assert!(matches!(total_loss(&m, x.view(), &r, &neg), Err(Error::Config(_))));
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let cfg = Stage1Config {
            lambda_x: 0.7,
            lambda_c: 1.3,
            lambda_s: 0.9,
            ..small_cfg()
        };
        let model = AttrTransformModel::new(4, &cfg);
        let mut rng = rng_from_seed(21);
        let x = init_uniform(&mut rng, 5, 4) * 3.0;
        let r = sample_variation(5, 2, 4);
        let (_, grads) = total_loss_grad(&model, x.view(), &r, &cfg).unwrap();
        let fd = finite_difference(&model, 1e-5, |m| total_loss(m, x.view(), &r, &cfg).unwrap());
        let err = relative_error(&grads, &fd);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn disc_gradient_matches_finite_differences() {
        let model = AttrTransformModel::new(4, &small_cfg());
        let mut rng = rng_from_seed(22);
        let x = init_uniform(&mut rng, 5, 4) * 3.0;
        let xg = init_uniform(&mut rng, 5, 4);
        let (_, grads) = disc_loss_grad(&model, x.view(), xg.view()).unwrap();
        let fd = finite_difference(&model.discriminator, 1e-5, |d| {
            let mut m = model.clone();
            m.discriminator = d.clone();
            adversarial_losses(&m, x.view(), xg.view()).unwrap().0
        });
        assert!(relative_error(&grads, &fd) < 1e-3);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = Stage1Config { max_epochs: 0, ..small_cfg() };
        let x = Array2::from_shape_fn((6, 4), |(i, j)| (i * j) as f64 * 0.1);
        let out = train_stage1(x.view(), &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.model, AttrTransformModel::new(4, &cfg));
        assert!(train_stage1(Array2::zeros((0, 4)).view(), &cfg).is_err());
    }

    #[test]
    fn training_is_deterministic_and_generation_preserves_shape() {
        let cfg = Stage1Config { max_epochs: 30, ..small_cfg() };
        let mut rng = rng_from_seed(9);
        let x = init_uniform(&mut rng, 12, 4);
        let a = train_stage1(x.view(), &cfg).unwrap();
        let b = train_stage1(x.view(), &cfg).unwrap();
        assert_eq!(a.history, b.history);
        let g1 = generate_shifted(&a.model, x.view(), 1).unwrap();
        assert_eq!(g1.dim(), x.dim());
        assert_eq!(g1, generate_shifted(&a.model, x.view(), 1).unwrap());
        assert_ne!(g1, generate_shifted(&a.model, x.view(), 2).unwrap());
        for l in &a.history {
            assert!(l.disc <= 0.0 && l.gen >= 0.0);
            assert!(l.rec_x >= 0.0 && l.rec_c >= 0.0 && l.rec_r >= 0.0);
        }
    }

    #[test]
    fn nan_input_aborts_with_component() {
        let cfg = Stage1Config { max_epochs: 5, ..small_cfg() };
        let mut x = Array2::zeros((4, 4));
        x[[1, 2]] = f64::NAN;
        match train_stage1(x.view(), &cfg) {
            Err(Error::NonFinite { component, epoch }) => {
                assert!(component.starts_with("stage1"));
                assert_eq!(epoch, 0);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
