//! Minimal dense neural network: forward pass, analytic backpropagation,
//! Adam, Gaussian KL, and finite-difference gradient checking.
//!
//! Everything is generic over the float type. The pipeline trains and scores
//! in f32; gradient checking instantiates the same code in f64, where central
//! differences can actually resolve a 1e-4 relative tolerance.

use ndarray::{Array1, Array2, ArrayView1, Axis, NdFloat};
use rand::Rng;

use crate::error::{Error, Result};

/// Element-wise nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// No nonlinearity.
    Linear,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Fully-connected layer: `out = act(W x + b)` with W of shape out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: NdFloat> DenseLayer<F> {
    pub fn new(weights: Array2<F>, bias: Array1<F>, activation: Activation) -> Self {
        assert_eq!(weights.nrows(), bias.len(), "bias length must match output dim");
        Self { weights, bias, activation }
    }

    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn random<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| {
            F::from(rng.gen_range(-limit..limit)).unwrap()
        });
        Self {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Batched affine map without the nonlinearity: rows of `x` are examples.
    fn preactivate(&self, x: &Array2<F>) -> Array2<F> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }

    fn activate(&self, mut z: Array2<F>) -> Array2<F> {
        if self.activation == Activation::Relu {
            z.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        }
        z
    }
}

/// Ordered dense layers; `latent_index` splits the encoder from the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork<F> {
    pub layers: Vec<DenseLayer<F>>,
    pub latent_index: usize,
}

impl<F: NdFloat> DenseNetwork<F> {
    /// Checks that consecutive layer dimensions chain.
    pub fn new(layers: Vec<DenseLayer<F>>, latent_index: usize) -> Result<Self> {
        Self::validated(layers, latent_index, false)
    }

    /// Like [`DenseNetwork::new`], but allows the dimension chain to break at
    /// `latent_index`, where a [`VariationalHead`] sits between encoder and
    /// decoder.
    pub fn new_split(layers: Vec<DenseLayer<F>>, latent_index: usize) -> Result<Self> {
        Self::validated(layers, latent_index, true)
    }

    fn validated(layers: Vec<DenseLayer<F>>, latent_index: usize, gap: bool) -> Result<Self> {
        assert!(!layers.is_empty(), "network needs at least one layer");
        assert!(latent_index <= layers.len(), "latent index out of range");
        for i in 1..layers.len() {
            if gap && i == latent_index {
                continue;
            }
            if layers[i].in_dim() != layers[i - 1].out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "network layer chaining",
                    expected: layers[i - 1].out_dim(),
                    actual: layers[i].in_dim(),
                });
            }
        }
        Ok(Self { layers, latent_index })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Layer widths as input, hidden..., output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(DenseLayer::out_dim));
        w
    }
}

/// Parallel mean and log-variance layers forming a Gaussian posterior head.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalHead<F> {
    pub mean_layer: DenseLayer<F>,
    pub logvar_layer: DenseLayer<F>,
}

impl<F: NdFloat> VariationalHead<F> {
    pub fn new(mean_layer: DenseLayer<F>, logvar_layer: DenseLayer<F>) -> Result<Self> {
        if mean_layer.out_dim() != logvar_layer.out_dim()
            || mean_layer.in_dim() != logvar_layer.in_dim()
        {
            return Err(Error::DimensionMismatch {
                context: "variational head mean vs logvar dims",
                expected: mean_layer.out_dim(),
                actual: logvar_layer.out_dim(),
            });
        }
        assert_eq!(mean_layer.activation, Activation::Linear);
        assert_eq!(logvar_layer.activation, Activation::Linear);
        Ok(Self { mean_layer, logvar_layer })
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_layer.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.mean_layer.param_count() + self.logvar_layer.param_count()
    }
}

/// Gradients for every trainable tensor, ordered: network layers in order,
/// then (for variational models) the mean layer and the log-variance layer.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub weights: Vec<Array2<F>>,
    pub biases: Vec<Array1<F>>,
}

impl<F: NdFloat> Gradients<F> {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Single-example forward pass.
///
/// Returns the activation list of length layers+1, starting with `x` itself.
pub fn forward<F: NdFloat>(net: &DenseNetwork<F>, x: ArrayView1<F>) -> Result<Vec<Array1<F>>> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward input",
            expected: net.input_dim(),
            actual: x.len(),
        });
    }
    let mut acts = Vec::with_capacity(net.layers.len() + 1);
    acts.push(x.to_owned());
    for layer in &net.layers {
        let prev = acts.last().unwrap();
        let mut z = layer.weights.dot(prev);
        z += &layer.bias;
        if layer.activation == Activation::Relu {
            z.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        }
        acts.push(z);
    }
    Ok(acts)
}

/// Batched forward pass over the rows of `x`.
pub fn forward_batch<F: NdFloat>(net: &DenseNetwork<F>, x: &Array2<F>) -> Result<Vec<Array2<F>>> {
    if x.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward input",
            expected: net.input_dim(),
            actual: x.ncols(),
        });
    }
    let mut acts = Vec::with_capacity(net.layers.len() + 1);
    acts.push(x.clone());
    for layer in &net.layers {
        let z = layer.preactivate(acts.last().unwrap());
        acts.push(layer.activate(z));
    }
    Ok(acts)
}

/// Forward pass of a variational model with explicit noise: z = mu + exp(lv/2) * eps.
pub struct VaeForward<F> {
    /// Encoder activations, starting with the input.
    pub encoder_acts: Vec<Array2<F>>,
    pub mu: Array2<F>,
    pub logvar: Array2<F>,
    pub z: Array2<F>,
    /// Decoder activations, starting with z.
    pub decoder_acts: Vec<Array2<F>>,
}

impl<F> VaeForward<F> {
    pub fn reconstruction(&self) -> &Array2<F> {
        self.decoder_acts.last().unwrap()
    }
}

/// Run encoder, sample the latent with the provided noise, run the decoder.
///
/// Pass zero noise to follow the deterministic posterior-mean path.
pub fn vae_forward_batch<F: NdFloat>(
    net: &DenseNetwork<F>,
    head: &VariationalHead<F>,
    x: &Array2<F>,
    eps: &Array2<F>,
) -> Result<VaeForward<F>> {
    if x.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "vae forward input",
            expected: net.input_dim(),
            actual: x.ncols(),
        });
    }
    let mut encoder_acts = Vec::with_capacity(net.latent_index + 1);
    encoder_acts.push(x.clone());
    for layer in &net.layers[..net.latent_index] {
        let z = layer.preactivate(encoder_acts.last().unwrap());
        encoder_acts.push(layer.activate(z));
    }
    let hidden = encoder_acts.last().unwrap();
    let mu = head.mean_layer.preactivate(hidden);
    let logvar = head.logvar_layer.preactivate(hidden);
    if eps.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            context: "vae noise shape",
            expected: mu.len(),
            actual: eps.len(),
        });
    }
    let half = F::from(0.5).unwrap();
    let sigma = logvar.mapv(|v| (v * half).exp());
    let z = &mu + &(&sigma * eps);

    let mut decoder_acts = Vec::with_capacity(net.layers.len() - net.latent_index + 1);
    decoder_acts.push(z.clone());
    for layer in &net.layers[net.latent_index..] {
        let zz = layer.preactivate(decoder_acts.last().unwrap());
        decoder_acts.push(layer.activate(zz));
    }
    Ok(VaeForward { encoder_acts, mu, logvar, z, decoder_acts })
}

/// Deterministic posterior-mean path of a variational model: decode z = mu.
pub fn vae_forward_mean_batch<F: NdFloat>(
    net: &DenseNetwork<F>,
    head: &VariationalHead<F>,
    x: &Array2<F>,
) -> Result<Array2<F>> {
    let zeros = Array2::zeros((x.nrows(), head.latent_dim()));
    let fwd = vae_forward_batch(net, head, x, &zeros)?;
    Ok(fwd.decoder_acts.last().unwrap().clone())
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Squared L2 error: sum of squared differences, no averaging over dimensions.
pub fn loss_mse<F: NdFloat>(pred: ArrayView1<F>, target: ArrayView1<F>) -> Result<F> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            context: "loss_mse",
            expected: target.len(),
            actual: pred.len(),
        });
    }
    let mut acc = 0.0f64;
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let d = (p - t).to_f64().unwrap();
        acc += d * d;
    }
    Ok(F::from(acc).unwrap())
}

/// KL divergence of N(mu, diag(exp(logvar))) from the standard normal:
/// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar). Always >= 0.
pub fn kl_gaussian<F: NdFloat>(mu: ArrayView1<F>, logvar: ArrayView1<F>) -> Result<F> {
    if mu.len() != logvar.len() {
        return Err(Error::DimensionMismatch {
            context: "kl_gaussian",
            expected: mu.len(),
            actual: logvar.len(),
        });
    }
    let mut acc = 0.0f64;
    for (&m, &lv) in mu.iter().zip(logvar.iter()) {
        let m = m.to_f64().unwrap();
        let lv = lv.to_f64().unwrap();
        acc += m * m + lv.exp() - 1.0 - lv;
    }
    Ok(F::from(0.5 * acc).unwrap())
}

// ---------------------------------------------------------------------------
// Backward passes
// ---------------------------------------------------------------------------

fn relu_mask_grad<F: NdFloat>(grad: &mut Array2<F>, post_activation: &Array2<F>) {
    // relu'(z) = 1 where the post-activation is positive, 0 at and below zero.
    ndarray::Zip::from(grad)
        .and(post_activation)
        .for_each(|g, &a| {
            if a <= F::zero() {
                *g = F::zero();
            }
        });
}

fn backward_through<F: NdFloat>(
    layers: &[DenseLayer<F>],
    acts: &[Array2<F>],
    output_grad: Array2<F>,
) -> (Vec<Array2<F>>, Vec<Array1<F>>, Array2<F>) {
    let mut d_weights = vec![Array2::zeros((0, 0)); layers.len()];
    let mut d_biases = vec![Array1::zeros(0); layers.len()];
    let mut grad = output_grad;
    for (i, layer) in layers.iter().enumerate().rev() {
        if layer.activation == Activation::Relu {
            relu_mask_grad(&mut grad, &acts[i + 1]);
        }
        d_weights[i] = grad.t().dot(&acts[i]);
        d_biases[i] = grad.sum_axis(Axis(0));
        grad = grad.dot(&layer.weights);
    }
    (d_weights, d_biases, grad)
}

/// Gradients of a scalar loss w.r.t. every weight and bias, given the
/// activations from a matching forward call and the loss gradient at the
/// network output (one row per example; contributions are summed over rows).
pub fn backward<F: NdFloat>(
    net: &DenseNetwork<F>,
    acts: &[Array2<F>],
    loss_grad_at_output: &Array2<F>,
) -> Result<Gradients<F>> {
    if acts.len() != net.layers.len() + 1 {
        return Err(Error::DimensionMismatch {
            context: "backward activation count",
            expected: net.layers.len() + 1,
            actual: acts.len(),
        });
    }
    if loss_grad_at_output.dim() != acts.last().unwrap().dim() {
        return Err(Error::DimensionMismatch {
            context: "backward output grad shape",
            expected: acts.last().unwrap().len(),
            actual: loss_grad_at_output.len(),
        });
    }
    let (weights, biases, _) = backward_through(&net.layers, acts, loss_grad_at_output.clone());
    Ok(Gradients { weights, biases })
}

/// One batched training gradient for the plain squared-error objective.
///
/// The loss is the mean over examples of the per-example squared L2 error.
/// Returns the gradients and the batch loss.
pub fn mse_batch_gradients<F: NdFloat>(
    net: &DenseNetwork<F>,
    inputs: &Array2<F>,
    targets: &Array2<F>,
) -> Result<(Gradients<F>, f64)> {
    let acts = forward_batch(net, inputs)?;
    let pred = acts.last().unwrap();
    if pred.dim() != targets.dim() {
        return Err(Error::DimensionMismatch {
            context: "mse targets shape",
            expected: pred.len(),
            actual: targets.len(),
        });
    }
    let batch = F::from(inputs.nrows() as f64).unwrap();
    let diff = pred - targets;
    let loss: f64 = diff.iter().map(|d| d.to_f64().unwrap().powi(2)).sum::<f64>()
        / inputs.nrows() as f64;
    let two = F::from(2.0).unwrap();
    let dout = diff.mapv(|d| two * d / batch);
    let grads = backward(net, &acts, &dout)?;
    Ok((grads, loss))
}

/// One batched training gradient for the variational objective
/// `mean_b(||recon - target||^2 + w * KL)` with the given noise draws.
pub fn vae_batch_gradients<F: NdFloat>(
    net: &DenseNetwork<F>,
    head: &VariationalHead<F>,
    inputs: &Array2<F>,
    targets: &Array2<F>,
    eps: &Array2<F>,
    kl_weight: F,
) -> Result<(Gradients<F>, f64)> {
    let fwd = vae_forward_batch(net, head, inputs, eps)?;
    let recon = fwd.reconstruction();
    if recon.dim() != targets.dim() {
        return Err(Error::DimensionMismatch {
            context: "vae targets shape",
            expected: recon.len(),
            actual: targets.len(),
        });
    }
    let b = inputs.nrows();
    let batch = F::from(b as f64).unwrap();
    let half = F::from(0.5).unwrap();
    let one = F::one();
    let two = F::from(2.0).unwrap();

    let diff = recon - targets;
    let recon_loss: f64 =
        diff.iter().map(|d| d.to_f64().unwrap().powi(2)).sum::<f64>() / b as f64;
    let kl: f64 = ndarray::Zip::from(&fwd.mu)
        .and(&fwd.logvar)
        .fold(0.0f64, |acc, &m, &lv| {
            let m = m.to_f64().unwrap();
            let lv = lv.to_f64().unwrap();
            acc + 0.5 * (m * m + lv.exp() - 1.0 - lv)
        })
        / b as f64;
    let loss = recon_loss + kl_weight.to_f64().unwrap() * kl;

    // Decoder.
    let dout = diff.mapv(|d| two * d / batch);
    let dec_layers = &net.layers[net.latent_index..];
    let (dec_w, dec_b, dz) = backward_through(dec_layers, &fwd.decoder_acts, dout);

    // Reparameterization plus the KL term.
    let w_over_b = kl_weight / batch;
    let sigma_eps = ndarray::Zip::from(&fwd.logvar)
        .and(eps)
        .map_collect(|&lv, &e| (lv * half).exp() * e);
    let dmu = &dz + &fwd.mu.mapv(|m| m * w_over_b);
    let dlogvar = &(&dz * &sigma_eps.mapv(|se| se * half))
        + &fwd.logvar.mapv(|lv| w_over_b * half * (lv.exp() - one));

    // Head layers share the encoder output as input.
    let hidden = fwd.encoder_acts.last().unwrap();
    let d_mean_w = dmu.t().dot(hidden);
    let d_mean_b = dmu.sum_axis(Axis(0));
    let d_logvar_w = dlogvar.t().dot(hidden);
    let d_logvar_b = dlogvar.sum_axis(Axis(0));
    let dhidden = dmu.dot(&head.mean_layer.weights) + dlogvar.dot(&head.logvar_layer.weights);

    // Encoder.
    let enc_layers = &net.layers[..net.latent_index];
    let (enc_w, enc_b, _) = backward_through(enc_layers, &fwd.encoder_acts, dhidden);

    let mut weights = enc_w;
    weights.extend(dec_w);
    weights.push(d_mean_w);
    weights.push(d_logvar_w);
    let mut biases = enc_b;
    biases.extend(dec_b);
    biases.push(d_mean_b);
    biases.push(d_logvar_b);
    Ok((Gradients { weights, biases }, loss))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter tensor plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step_count: u64,
    m_weights: Vec<Array2<F>>,
    v_weights: Vec<Array2<F>>,
    m_biases: Vec<Array1<F>>,
    v_biases: Vec<Array1<F>>,
}

impl<F: NdFloat> AdamState<F> {
    /// Zero moments shaped for the given network and optional head, in the
    /// same tensor order as [`Gradients`].
    pub fn new(net: &DenseNetwork<F>, head: Option<&VariationalHead<F>>, config: AdamConfig) -> Self {
        let mut m_weights = Vec::new();
        let mut m_biases = Vec::new();
        for layer in net.layers.iter().chain(head_layers(head)) {
            m_weights.push(Array2::zeros(layer.weights.dim()));
            m_biases.push(Array1::zeros(layer.bias.len()));
        }
        Self {
            config,
            step_count: 0,
            v_weights: m_weights.clone(),
            v_biases: m_biases.clone(),
            m_weights,
            m_biases,
        }
    }

    /// Standard bias-corrected Adam update.
    ///
    /// Rejects non-finite gradients: the error is returned, no parameter or
    /// state is touched, and the step count is not incremented.
    pub fn step(
        &mut self,
        net: &mut DenseNetwork<F>,
        head: Option<&mut VariationalHead<F>>,
        grads: &Gradients<F>,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient {
                step: self.step_count + 1,
            });
        }
        let n_net = net.layers.len();
        let expected = n_net + if head.is_some() { 2 } else { 0 };
        assert_eq!(grads.weights.len(), expected, "gradient tensor count");

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.config.beta1.powi(t);
        let bc2 = 1.0 - self.config.beta2.powi(t);

        for (idx, layer) in net.layers.iter_mut().enumerate() {
            self.update_layer(idx, layer, grads, bc1, bc2);
        }
        if let Some(h) = head {
            self.update_layer(n_net, &mut h.mean_layer, grads, bc1, bc2);
            self.update_layer(n_net + 1, &mut h.logvar_layer, grads, bc1, bc2);
        }
        Ok(())
    }

    fn update_layer(
        &mut self,
        idx: usize,
        layer: &mut DenseLayer<F>,
        grads: &Gradients<F>,
        bc1: f64,
        bc2: f64,
    ) {
        update_tensor(
            layer.weights.iter_mut(),
            grads.weights[idx].iter(),
            self.m_weights[idx].iter_mut(),
            self.v_weights[idx].iter_mut(),
            self.config,
            bc1,
            bc2,
        );
        update_tensor(
            layer.bias.iter_mut(),
            grads.biases[idx].iter(),
            self.m_biases[idx].iter_mut(),
            self.v_biases[idx].iter_mut(),
            self.config,
            bc1,
            bc2,
        );
    }
}

fn head_layers<F>(head: Option<&VariationalHead<F>>) -> impl Iterator<Item = &DenseLayer<F>> {
    head.into_iter()
        .flat_map(|h| [&h.mean_layer, &h.logvar_layer])
}

fn update_tensor<'a, F: NdFloat + 'a>(
    params: impl Iterator<Item = &'a mut F>,
    grads: impl Iterator<Item = &'a F>,
    m: impl Iterator<Item = &'a mut F>,
    v: impl Iterator<Item = &'a mut F>,
    c: AdamConfig,
    bias_corr1: f64,
    bias_corr2: f64,
) {
    let beta1 = F::from(c.beta1).unwrap();
    let beta2 = F::from(c.beta2).unwrap();
    let one = F::one();
    let lr = F::from(c.learning_rate).unwrap();
    let eps = F::from(c.epsilon).unwrap();
    let bc1 = F::from(bias_corr1).unwrap();
    let bc2 = F::from(bias_corr2).unwrap();
    for (((p, &g), m), v) in params.zip(grads).zip(m).zip(v) {
        *m = beta1 * *m + (one - beta1) * g;
        *v = beta2 * *v + (one - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Loss form to check gradients against.
#[derive(Debug, Clone)]
pub enum CheckLoss<F> {
    /// Plain squared-error objective on a non-variational network.
    Mse,
    /// Variational objective with a frozen noise draw.
    VaeElbo { kl_weight: F, eps: Array1<F> },
}

fn scalar_loss<F: NdFloat>(
    net: &DenseNetwork<F>,
    head: Option<&VariationalHead<F>>,
    x: ArrayView1<F>,
    target: ArrayView1<F>,
    loss: &CheckLoss<F>,
) -> Result<f64> {
    let x2 = x.insert_axis(Axis(0)).to_owned();
    match loss {
        CheckLoss::Mse => {
            let acts = forward_batch(net, &x2)?;
            let pred = acts.last().unwrap().row(0).to_owned();
            Ok(loss_mse(pred.view(), target)?.to_f64().unwrap())
        }
        CheckLoss::VaeElbo { kl_weight, eps } => {
            let head = head.expect("variational loss needs a head");
            let eps2 = eps.view().insert_axis(Axis(0)).to_owned();
            let fwd = vae_forward_batch(net, head, &x2, &eps2)?;
            let recon = fwd.reconstruction().row(0).to_owned();
            let mse = loss_mse(recon.view(), target)?.to_f64().unwrap();
            let kl = kl_gaussian(fwd.mu.row(0), fwd.logvar.row(0))?.to_f64().unwrap();
            Ok(mse + kl_weight.to_f64().unwrap() * kl)
        }
    }
}

fn analytic_gradients<F: NdFloat>(
    net: &DenseNetwork<F>,
    head: Option<&VariationalHead<F>>,
    x: ArrayView1<F>,
    target: ArrayView1<F>,
    loss: &CheckLoss<F>,
) -> Result<Gradients<F>> {
    let x2 = x.insert_axis(Axis(0)).to_owned();
    let t2 = target.insert_axis(Axis(0)).to_owned();
    match loss {
        CheckLoss::Mse => Ok(mse_batch_gradients(net, &x2, &t2)?.0),
        CheckLoss::VaeElbo { kl_weight, eps } => {
            let head = head.expect("variational loss needs a head");
            let eps2 = eps.view().insert_axis(Axis(0)).to_owned();
            Ok(vae_batch_gradients(net, head, &x2, &t2, &eps2, *kl_weight)?.0)
        }
    }
}

/// Compare analytic gradients against central finite differences with
/// h = 1e-4 and return the maximum relative error over all parameters.
///
/// Intended for small networks (< 10,000 parameters). Relative error is
/// |analytic - numeric| / max(|analytic| + |numeric|, 1e-6).
pub fn grad_check<F: NdFloat>(
    net: &DenseNetwork<F>,
    head: Option<&VariationalHead<F>>,
    x: ArrayView1<F>,
    target: ArrayView1<F>,
    loss: &CheckLoss<F>,
) -> Result<f64> {
    grad_check_impl(net, head, x, target, loss, 0.0)
}

/// Negative-control variant of [`grad_check`]: adds `tamper` to one analytic
/// weight gradient before comparing, so a working checker must report a large
/// error. Exists for the CLI's self-test hook.
#[doc(hidden)]
pub fn grad_check_tampered<F: NdFloat>(
    net: &DenseNetwork<F>,
    head: Option<&VariationalHead<F>>,
    x: ArrayView1<F>,
    target: ArrayView1<F>,
    loss: &CheckLoss<F>,
    tamper: f64,
) -> Result<f64> {
    grad_check_impl(net, head, x, target, loss, tamper)
}

fn grad_check_impl<F: NdFloat>(
    net: &DenseNetwork<F>,
    head: Option<&VariationalHead<F>>,
    x: ArrayView1<F>,
    target: ArrayView1<F>,
    loss: &CheckLoss<F>,
    tamper: f64,
) -> Result<f64> {
    let mut analytic = analytic_gradients(net, head, x, target, loss)?;
    if tamper != 0.0 {
        analytic.weights[0][[0, 0]] = analytic.weights[0][[0, 0]] + F::from(tamper).unwrap();
    }
    let h = 1e-4;
    let mut max_rel = 0.0f64;

    let n_layers = net.layers.len() + if head.is_some() { 2 } else { 0 };
    for tensor_idx in 0..n_layers {
        for is_weight in [true, false] {
            let count = if is_weight {
                analytic.weights[tensor_idx].len()
            } else {
                analytic.biases[tensor_idx].len()
            };
            let ncols = analytic.weights[tensor_idx].ncols();
            for flat in 0..count {
                let probe = |delta: f64| -> Result<f64> {
                    let mut net2 = net.clone();
                    let mut head2 = head.cloned();
                    {
                        let layer = nth_layer_mut(&mut net2, head2.as_mut(), tensor_idx);
                        let slot = if is_weight {
                            &mut layer.weights[[flat / ncols, flat % ncols]]
                        } else {
                            &mut layer.bias[flat]
                        };
                        *slot = *slot + F::from(delta).unwrap();
                    }
                    scalar_loss(&net2, head2.as_ref(), x, target, loss)
                };
                let plus = probe(h)?;
                let minus = probe(-h)?;
                let numeric = (plus - minus) / (2.0 * h);
                let a = if is_weight {
                    analytic.weights[tensor_idx][[flat / ncols, flat % ncols]]
                } else {
                    analytic.biases[tensor_idx][flat]
                }
                .to_f64()
                .unwrap();
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }
    Ok(max_rel)
}

fn nth_layer_mut<'a, F>(
    net: &'a mut DenseNetwork<F>,
    head: Option<&'a mut VariationalHead<F>>,
    idx: usize,
) -> &'a mut DenseLayer<F> {
    let n = net.layers.len();
    if idx < n {
        &mut net.layers[idx]
    } else {
        let head = head.expect("tensor index requires a head");
        if idx == n {
            &mut head.mean_layer
        } else {
            &mut head.logvar_layer
        }
    }
}

/// Smallest |preactivation| over all ReLU units; used to keep gradient-check
/// cases away from the ReLU kink, where finite differences are meaningless.
pub fn relu_margin<F: NdFloat>(
    net: &DenseNetwork<F>,
    head: Option<&VariationalHead<F>>,
    x: ArrayView1<F>,
    eps: Option<ArrayView1<F>>,
) -> Result<f64> {
    let x2 = x.insert_axis(Axis(0)).to_owned();
    let mut margin = f64::INFINITY;
    let mut scan = |layers: &[DenseLayer<F>], input: &Array2<F>| -> Array2<F> {
        let mut current = input.clone();
        for layer in layers {
            let z = layer.preactivate(&current);
            if layer.activation == Activation::Relu {
                for &v in z.iter() {
                    margin = margin.min(v.to_f64().unwrap().abs());
                }
            }
            current = layer.activate(z);
        }
        current
    };
    match (head, eps) {
        (Some(head), Some(eps)) => {
            let hidden = scan(&net.layers[..net.latent_index], &x2);
            let mu = head.mean_layer.preactivate(&hidden);
            let logvar = head.logvar_layer.preactivate(&hidden);
            let half = F::from(0.5).unwrap();
            let eps2 = eps.insert_axis(Axis(0)).to_owned();
            let z = &mu + &(logvar.mapv(|v| (v * half).exp()) * &eps2);
            scan(&net.layers[net.latent_index..], &z);
        }
        _ => {
            scan(&net.layers, &x2);
        }
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_net(dims: &[usize], seed: u64) -> DenseNetwork<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<DenseLayer<f64>> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                DenseLayer::random(w[0], w[1], act, &mut rng)
            })
            .collect();
        DenseNetwork::new(layers, dims.len() / 2).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let layers = vec![
            DenseLayer::new(Array2::<f64>::zeros((3, 4)), Array1::zeros(3), Activation::Relu),
            DenseLayer::new(Array2::<f64>::zeros((2, 3)), Array1::zeros(2), Activation::Linear),
        ];
        let net = DenseNetwork::new(layers, 1).unwrap();
        let acts = forward(&net, arr1(&[1.0, -2.0, 3.0, 0.5]).view()).unwrap();
        assert_eq!(acts.len(), 3);
        assert!(acts.last().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_through() {
        let net = DenseNetwork::new(
            vec![DenseLayer::new(
                Array2::<f64>::eye(3),
                Array1::zeros(3),
                Activation::Linear,
            )],
            0,
        )
        .unwrap();
        let x = arr1(&[0.3, -1.7, 2.2]);
        let acts = forward(&net, x.view()).unwrap();
        assert_eq!(acts.last().unwrap(), &x);
    }

    #[test]
    fn hand_computed_two_layer_forward() {
        // 2-2-1 with W1 = [[1,-1],[0.5,2]], b1 = [0.1,-0.2], ReLU;
        // W2 = [[1,1]], b2 = [0.5]; x = [1,2].
        // z1 = [-0.9, 4.3] -> a1 = [0, 4.3] -> out = 4.8.
        let net = DenseNetwork::new(
            vec![
                DenseLayer::new(
                    arr2(&[[1.0, -1.0], [0.5, 2.0]]),
                    arr1(&[0.1, -0.2]),
                    Activation::Relu,
                ),
                DenseLayer::new(arr2(&[[1.0, 1.0]]), arr1(&[0.5]), Activation::Linear),
            ],
            1,
        )
        .unwrap();
        let acts = forward(&net, arr1(&[1.0, 2.0]).view()).unwrap();
        assert_eq!(acts[1], arr1(&[0.0, 4.3]));
        assert!((acts[2][0] - 4.8f64).abs() < 1e-12);
    }

    #[test]
    fn forward_dimension_mismatch_errors() {
        let net = small_net(&[3, 2], 1);
        assert!(matches!(
            forward(&net, arr1(&[1.0, 2.0]).view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(
            loss_mse(arr1(&[1.0, 2.0]).view(), arr1(&[1.0, 2.0]).view()).unwrap(),
            0.0
        );
        assert_eq!(
            loss_mse(arr1(&[1.0, 2.0]).view(), arr1(&[0.0, 0.0]).view()).unwrap(),
            5.0
        );
        // Homogeneity: scaling both by c scales the loss by c^2.
        let base: f64 = loss_mse(arr1(&[1.0, -2.0]).view(), arr1(&[0.5, 0.5]).view()).unwrap();
        let scaled: f64 =
            loss_mse(arr1(&[3.0, -6.0]).view(), arr1(&[1.5, 1.5]).view()).unwrap();
        assert!((scaled - 9.0 * base).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(
            kl_gaussian(arr1(&[0.0, 0.0]).view(), arr1(&[0.0, 0.0]).view()).unwrap(),
            0.0
        );
        let v: f64 = kl_gaussian(arr1(&[1.0]).view(), arr1(&[0.0]).view()).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_nonnegative_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mu = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0f64..3.0));
            let lv = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0f64..3.0));
            let v: f64 = kl_gaussian(mu.view(), lv.view()).unwrap();
            assert!(v >= 0.0, "KL({mu:?}, {lv:?}) = {v}");
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let net = small_net(&[4, 3, 2], 2);
        let x = Array2::from_shape_fn((1, 4), |_| 0.7);
        let acts = forward_batch(&net, &x).unwrap();
        let grads = backward(&net, &acts, &Array2::zeros((1, 2))).unwrap();
        assert!(grads.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_linear_layer_gradient_formula() {
        // y = Wx, L = ||y - t||^2 => dL/dW = 2 (y - t) x^T.
        let w = arr2(&[[0.5, -1.0], [2.0, 0.25]]);
        let net = DenseNetwork::new(
            vec![DenseLayer::new(w.clone(), Array1::zeros(2), Activation::Linear)],
            0,
        )
        .unwrap();
        let x = arr1(&[1.5, -0.5]);
        let t = arr1(&[1.0, 0.0]);
        let (grads, _) = mse_batch_gradients(
            &net,
            &x.clone().insert_axis(Axis(0)),
            &t.clone().insert_axis(Axis(0)),
        )
        .unwrap();
        let y = w.dot(&x);
        for i in 0..2 {
            for j in 0..2 {
                let expect: f64 = 2.0 * (y[i] - t[i]) * x[j];
                assert!((grads.weights[0][[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut net = small_net(&[3, 3, 2], 3);
        let before = net.clone();
        let mut state = AdamState::new(&net, None, AdamConfig::default());
        let grads = Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        };
        for _ in 0..5 {
            state.step(&mut net, None, &grads).unwrap();
        }
        assert_eq!(net, before);
        assert_eq!(state.step_count, 5);
    }

    #[test]
    fn adam_one_step_hand_computation() {
        // w = 1, grad = 2w, lr = 0.1: first step moves w to ~0.9.
        let mut net = DenseNetwork::new(
            vec![DenseLayer::new(arr2(&[[1.0f64]]), Array1::zeros(1), Activation::Linear)],
            0,
        )
        .unwrap();
        let mut state = AdamState::new(
            &net,
            None,
            AdamConfig {
                learning_rate: 0.1,
                ..AdamConfig::default()
            },
        );
        let grads = Gradients {
            weights: vec![arr2(&[[2.0f64]])],
            biases: vec![Array1::zeros(1)],
        };
        state.step(&mut net, None, &grads).unwrap();
        let w = net.layers[0].weights[[0, 0]];
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((w - expected).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // Minimize w^2 from w = 1 with lr 0.05 for 200 steps, and check the
        // trajectory against an independently coded scalar recurrence.
        let mut net = DenseNetwork::new(
            vec![DenseLayer::new(arr2(&[[1.0f64]]), Array1::zeros(1), Activation::Linear)],
            0,
        )
        .unwrap();
        let config = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&net, None, config);

        let (mut w_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let w = net.layers[0].weights[[0, 0]];
            let grads = Gradients {
                weights: vec![arr2(&[[2.0 * w]])],
                biases: vec![Array1::zeros(1)],
            };
            state.step(&mut net, None, &grads).unwrap();

            let g = 2.0 * w_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            w_ref -= 0.05 * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((net.layers[0].weights[[0, 0]] - w_ref).abs() < 1e-9);
        }
        assert!(net.layers[0].weights[[0, 0]].abs() < 0.05);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = small_net(&[2, 2], 4);
        let before = net.clone();
        let mut state = AdamState::new(&net, None, AdamConfig::default());
        let grads = Gradients {
            weights: vec![arr2(&[[f64::NAN, 0.0], [0.0, 0.0]])],
            biases: vec![Array1::zeros(2)],
        };
        assert!(matches!(
            state.step(&mut net, None, &grads),
            Err(Error::NonFiniteGradient { step: 1 })
        ));
        assert_eq!(net, before);
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn grad_check_linear_net_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseNetwork::new(
            vec![DenseLayer::random(4, 3, Activation::Linear, &mut rng)],
            0,
        )
        .unwrap();
        let x = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0f64..1.0));
        let t = Array1::from_shape_fn(3, |_| rng.gen_range(-1.0f64..1.0));
        let err = grad_check(&net, None, x.view(), t.view(), &CheckLoss::Mse).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn grad_check_relu_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // Rejection-sample a case safely away from ReLU kinks.
        loop {
            let net = small_net(&[5, 6, 4, 3], rng.gen());
            let x = Array1::from_shape_fn(5, |_| rng.gen_range(-1.5f64..1.5));
            let t = Array1::from_shape_fn(3, |_| rng.gen_range(-1.5f64..1.5));
            if relu_margin(&net, None, x.view(), None).unwrap() < 1e-2 {
                continue;
            }
            let err = grad_check(&net, None, x.view(), t.view(), &CheckLoss::Mse).unwrap();
            assert!(err < 1e-4, "relative error {err}");
            break;
        }
    }

    #[test]
    fn grad_check_vae_loss_with_frozen_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        loop {
            let mut seed_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let enc = vec![
                DenseLayer::random(6, 5, Activation::Relu, &mut seed_rng),
                DenseLayer::random(5, 4, Activation::Relu, &mut seed_rng),
            ];
            let dec = vec![
                DenseLayer::random(3, 4, Activation::Relu, &mut seed_rng),
                DenseLayer::random(4, 6, Activation::Linear, &mut seed_rng),
            ];
            let mut layers = enc;
            layers.extend(dec);
            let net = DenseNetwork::new_split(layers, 2).unwrap();
            let head = VariationalHead::new(
                DenseLayer::random(4, 3, Activation::Linear, &mut seed_rng),
                DenseLayer::random(4, 3, Activation::Linear, &mut seed_rng),
            )
            .unwrap();
            let x = Array1::from_shape_fn(6, |_| seed_rng.gen_range(-1.5f64..1.5));
            let t = Array1::from_shape_fn(6, |_| seed_rng.gen_range(-1.5f64..1.5));
            let eps = Array1::from_shape_fn(3, |_| seed_rng.gen_range(-1.0f64..1.0));
            if relu_margin(&net, Some(&head), x.view(), Some(eps.view())).unwrap() < 1e-2 {
                continue;
            }
            let loss = CheckLoss::VaeElbo {
                kl_weight: 0.1,
                eps,
            };
            let err = grad_check(&net, Some(&head), x.view(), t.view(), &loss).unwrap();
            assert!(err < 1e-4, "relative error {err}");
            break;
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut net: DenseNetwork<f32> = DenseNetwork::new(
                vec![
                    DenseLayer::random(4, 8, Activation::Relu, &mut rng),
                    DenseLayer::random(8, 4, Activation::Linear, &mut rng),
                ],
                1,
            )
            .unwrap();
            let x = Array2::from_shape_fn((16, 4), |_| rng.gen_range(-1.0f32..1.0));
            let mut state = AdamState::new(&net, None, AdamConfig::default());
            for _ in 0..20 {
                let (grads, _) = mse_batch_gradients(&net, &x, &x).unwrap();
                state.step(&mut net, None, &grads).unwrap();
            }
            net
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
