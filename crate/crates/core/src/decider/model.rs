use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DeciderConfig, DeciderError, Label, PairInput, PairSample, Verdict};

/// Scalar type the network computes in (`f32` for training, `f64` for
/// gradient checking).
pub trait Real: Float + Default + Debug + Send + Sync + 'static {}

impl<T: Float + Default + Debug + Send + Sync + 'static> Real for T {}

#[inline]
pub(crate) fn cast<T: Real>(x: f64) -> T {
    T::from(x).expect("representable constant")
}

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn forward(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(
            self.weight
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, &b)| b + dot(row, x)),
        );
    }
}

/// Eight-lane dot product; independent partial sums let the compiler
/// vectorize despite strict float ordering.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Every trainable tensor. Gradients and optimizer moments reuse this
/// shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    /// `filters × 2 × kernel`.
    pub conv_weight: Vec<T>,
    pub conv_bias: Vec<T>,
    /// Per-filter scale and shift applied after normalization.
    pub norm_gamma: Vec<T>,
    pub norm_beta: Vec<T>,
    /// Hidden layers followed by the 2-way output layer.
    pub layers: Vec<Linear<T>>,
}

impl<T: Real> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            conv_weight: vec![T::zero(); self.conv_weight.len()],
            conv_bias: vec![T::zero(); self.conv_bias.len()],
            norm_gamma: vec![T::zero(); self.norm_gamma.len()],
            norm_beta: vec![T::zero(); self.norm_beta.len()],
            layers: self.layers.iter().map(|l| Linear::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    /// Named flat views, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = vec![
            ("conv.weight".into(), &self.conv_weight),
            ("conv.bias".into(), &self.conv_bias),
            ("norm.gamma".into(), &self.norm_gamma),
            ("norm.beta".into(), &self.norm_beta),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("fc{i}.weight"), &l.weight));
            out.push((format!("fc{i}.bias"), &l.bias));
        }
        out
    }

    /// Mutable flat views in the order of [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![
            &mut self.conv_weight,
            &mut self.conv_bias,
            &mut self.norm_gamma,
            &mut self.norm_beta,
        ];
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.1.len() == y.1.len())
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let c = |v: &[T]| v.iter().map(|&x| U::from(x).expect("finite parameter")).collect::<Vec<U>>();
        Params {
            conv_weight: c(&self.conv_weight),
            conv_bias: c(&self.conv_bias),
            norm_gamma: c(&self.norm_gamma),
            norm_beta: c(&self.norm_beta),
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weight: c(&l.weight),
                    bias: c(&l.bias),
                })
                .collect(),
        }
    }
}

/// Per-sample scratch for the forward pass, kept for backprop.
struct Trace<T> {
    x: Vec<T>,
    xhat: Vec<T>,
    inv_std: T,
    /// Input of each linear layer; `inputs[0]` is the flattened conv block.
    inputs: Vec<Vec<T>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<T>>,
    /// Dropout multipliers per hidden layer (`None` in eval mode).
    masks: Vec<Option<Vec<T>>>,
    probs: [T; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeciderModel<T = f32> {
    config: DeciderConfig,
    params: Params<T>,
}

impl<T: Real> DeciderModel<T> {
    /// Seeded initialization: uniform ±1/√fan_in for conv and linear
    /// weights and biases, unit scale and zero shift for the normalization.
    pub fn new(config: DeciderConfig) -> Result<Self, DeciderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<T> {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            (0..n).map(|_| cast(rng.random_range(-bound..bound))).collect()
        };
        let (f, k) = (config.conv_filters, config.kernel_size);
        let conv_weight = uniform(f * 2 * k, 2 * k);
        let conv_bias = uniform(f, 2 * k);
        let mut layers = Vec::new();
        let mut inputs = config.flat_features();
        for &h in config.hidden_dims.iter().chain(core::iter::once(&2)) {
            let weight = uniform(h * inputs, inputs);
            let bias = uniform(h, inputs);
            layers.push(Linear {
                inputs,
                outputs: h,
                weight,
                bias,
            });
            inputs = h;
        }
        Ok(Self {
            params: Params {
                conv_weight,
                conv_bias,
                norm_gamma: vec![T::one(); f],
                norm_beta: vec![T::zero(); f],
                layers,
            },
            config,
        })
    }

    /// Wraps stored parameters, checking every shape against `config`.
    pub fn from_params(config: DeciderConfig, params: Params<T>) -> Result<Self, DeciderError> {
        let reference = Self::new(config.clone())?;
        if !reference.params.same_shape(&params) {
            return Err(DeciderError::ParameterShape("parameters do not fit config"));
        }
        for (a, b) in reference.params.layers.iter().zip(&params.layers) {
            if a.inputs != b.inputs || a.outputs != b.outputs {
                return Err(DeciderError::ParameterShape("linear layer dims"));
            }
        }
        if !params.all_finite() {
            return Err(DeciderError::NonFinite);
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DeciderConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> DeciderModel<U> {
        DeciderModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn check_input(&self, input: &PairInput) -> Result<(), DeciderError> {
        let width = self.config.width();
        if input.width != width || input.data.len() != 2 * width {
            return Err(DeciderError::ShapeMismatch {
                expected: width,
                actual: input.width,
            });
        }
        Ok(())
    }

    fn run(&self, input: &PairInput, mut dropout: Option<&mut ChaCha8Rng>) -> Trace<T> {
        let (f, k) = (self.config.conv_filters, self.config.kernel_size);
        let len = self.config.width();
        let pad = k / 2;
        let p = &self.params;
        let x: Vec<T> = input.data.iter().map(|&v| cast(v as f64)).collect();

        // conv1d, 2 input channels, zero "same" padding
        let mut z = vec![T::zero(); f * len];
        for filt in 0..f {
            let out = &mut z[filt * len..(filt + 1) * len];
            out.fill(p.conv_bias[filt]);
            for c in 0..2 {
                let xc = &x[c * len..(c + 1) * len];
                for tap in 0..k {
                    let w = p.conv_weight[(filt * 2 + c) * k + tap];
                    // out[i] += w * xc[i + tap - pad] where the index is valid
                    let lo = pad.saturating_sub(tap);
                    let hi = (len + pad).saturating_sub(tap).min(len);
                    if lo >= hi {
                        continue;
                    }
                    let src = &xc[lo + tap - pad..hi + tap - pad];
                    axpy(w, src, &mut out[lo..hi]);
                }
            }
        }

        // layer norm over the whole filters × width map
        let n: T = cast((f * len) as f64);
        let mean = z.iter().fold(T::zero(), |a, &b| a + b) / n;
        let var = z.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / n;
        let inv_std = T::one() / (var + cast(NORM_EPS)).sqrt();
        let xhat: Vec<T> = z.iter().map(|&v| (v - mean) * inv_std).collect();

        let mut flat = Vec::with_capacity(self.config.flat_features());
        for filt in 0..f {
            let (g, b) = (p.norm_gamma[filt], p.norm_beta[filt]);
            flat.extend(xhat[filt * len..(filt + 1) * len].iter().map(|&v| {
                let y = g * v + b;
                if y > T::zero() {
                    y
                } else {
                    T::zero()
                }
            }));
        }
        flat.push(cast(input.image_present[0] as f64));
        flat.push(cast(input.image_present[1] as f64));

        let hidden = p.layers.len() - 1;
        let keep = 1.0 - self.config.dropout_rate;
        let mut inputs = Vec::with_capacity(p.layers.len());
        let mut pre = Vec::with_capacity(hidden);
        let mut masks = Vec::with_capacity(hidden);
        inputs.push(flat);
        for layer in &p.layers[..hidden] {
            let mut u = Vec::new();
            layer.forward(inputs.last().expect("layer input"), &mut u);
            let mut h: Vec<T> = u.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
            let mask = match dropout.as_deref_mut() {
                Some(rng) if self.config.dropout_rate > 0.0 => {
                    let scale: T = cast(1.0 / keep);
                    let m: Vec<T> = (0..h.len())
                        .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                        .collect();
                    for (hi, &mi) in h.iter_mut().zip(&m) {
                        *hi = *hi * mi;
                    }
                    Some(m)
                }
                _ => None,
            };
            pre.push(u);
            masks.push(mask);
            inputs.push(h);
        }
        let mut logits = Vec::new();
        p.layers[hidden].forward(inputs.last().expect("output input"), &mut logits);
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        let s = e0 + e1;
        Trace {
            x,
            xhat,
            inv_std,
            inputs,
            pre,
            masks,
            probs: [e0 / s, e1 / s],
        }
    }

    /// Eval-mode class probabilities `[p(not match), p(match)]` per input.
    pub fn forward(&self, batch: &[PairInput]) -> Result<Vec<[T; 2]>, DeciderError> {
        if !self.params.all_finite() {
            return Err(DeciderError::NonFinite);
        }
        batch
            .iter()
            .map(|input| {
                self.check_input(input)?;
                let probs = self.run(input, None).probs;
                if probs.iter().all(|p| p.is_finite()) {
                    Ok(probs)
                } else {
                    Err(DeciderError::NonFinite)
                }
            })
            .collect()
    }

    /// Training-mode forward: dropout draws come from `rng`.
    pub fn forward_train(&self, batch: &[PairInput], rng: &mut ChaCha8Rng) -> Result<Vec<[T; 2]>, DeciderError> {
        batch
            .iter()
            .map(|input| {
                self.check_input(input)?;
                Ok(self.run(input, Some(rng)).probs)
            })
            .collect()
    }

    /// Eval-mode mean cross-entropy and its gradient for every parameter.
    pub fn backward(&self, batch: &[PairInput], labels: &[Label]) -> Result<(T, Params<T>), DeciderError> {
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_gradients(batch, labels, None, &mut grads)?;
        check_gradients(&grads)?;
        Ok((loss, grads))
    }

    /// Adds the batch-mean gradient into `grads` and returns the mean loss.
    pub(crate) fn accumulate_gradients(
        &self,
        batch: &[PairInput],
        labels: &[Label],
        dropout: Option<&mut ChaCha8Rng>,
        grads: &mut Params<T>,
    ) -> Result<T, DeciderError> {
        if batch.len() != labels.len() {
            return Err(DeciderError::LabelCount {
                inputs: batch.len(),
                labels: labels.len(),
            });
        }
        self.accumulate_indexed(batch.iter().zip(labels.iter().copied()), dropout, grads)
    }

    pub(crate) fn accumulate_indexed<'a, I>(
        &self,
        samples: I,
        mut dropout: Option<&mut ChaCha8Rng>,
        grads: &mut Params<T>,
    ) -> Result<T, DeciderError>
    where
        I: ExactSizeIterator<Item = (&'a PairInput, Label)>,
    {
        if samples.len() == 0 {
            return Err(DeciderError::Empty);
        }
        if !self.params.all_finite() {
            return Err(DeciderError::NonFinite);
        }
        let scale: T = cast(1.0 / samples.len() as f64);
        let mut loss = T::zero();
        for (input, label) in samples {
            self.check_input(input)?;
            let trace = self.run(input, dropout.as_deref_mut());
            let p = trace.probs[label.index()].max(cast(1e-12));
            loss = loss - p.ln();
            self.backprop(&trace, label, scale, grads);
        }
        Ok(loss * scale)
    }

    fn backprop(&self, t: &Trace<T>, label: Label, scale: T, g: &mut Params<T>) {
        let p = &self.params;
        let (f, k) = (self.config.conv_filters, self.config.kernel_size);
        let len = self.config.width();
        let pad = k / 2;

        // softmax + cross-entropy
        let mut delta: Vec<T> = (0..2)
            .map(|c| {
                let target = if c == label.index() { T::one() } else { T::zero() };
                (t.probs[c] - target) * scale
            })
            .collect();

        for li in (0..p.layers.len()).rev() {
            let layer = &p.layers[li];
            let input = &t.inputs[li];
            let gl = &mut g.layers[li];
            let mut d_in = vec![T::zero(); layer.inputs];
            for (j, &dj) in delta.iter().enumerate() {
                if dj == T::zero() {
                    continue;
                }
                gl.bias[j] = gl.bias[j] + dj;
                axpy(dj, input, &mut gl.weight[j * layer.inputs..(j + 1) * layer.inputs]);
                axpy(dj, &layer.weight[j * layer.inputs..(j + 1) * layer.inputs], &mut d_in);
            }
            if li > 0 {
                // through dropout and ReLU of hidden layer li-1
                let pre = &t.pre[li - 1];
                for (i, d) in d_in.iter_mut().enumerate() {
                    let mut v = if pre[i] > T::zero() { *d } else { T::zero() };
                    if let Some(mask) = &t.masks[li - 1] {
                        v = v * mask[i];
                    }
                    *d = v;
                }
            }
            delta = d_in;
        }

        // delta now spans the flattened conv block plus the presence flags;
        // the flags are inputs, not parameters.
        let n = f * len;
        let flat = &t.inputs[0];
        let mut dxhat = vec![T::zero(); n];
        for filt in 0..f {
            let (mut dg, mut db) = (T::zero(), T::zero());
            for i in filt * len..(filt + 1) * len {
                // ReLU passes where its output is positive
                if flat[i] > T::zero() {
                    let dy = delta[i];
                    dg = dg + dy * t.xhat[i];
                    db = db + dy;
                    dxhat[i] = dy * p.norm_gamma[filt];
                }
            }
            g.norm_gamma[filt] = g.norm_gamma[filt] + dg;
            g.norm_beta[filt] = g.norm_beta[filt] + db;
        }
        let nt: T = cast(n as f64);
        let mean_d = dxhat.iter().fold(T::zero(), |a, &b| a + b) / nt;
        let mean_dx = dxhat.iter().zip(&t.xhat).fold(T::zero(), |a, (&d, &x)| a + d * x) / nt;
        let dz: Vec<T> = dxhat
            .iter()
            .zip(&t.xhat)
            .map(|(&d, &x)| t.inv_std * (d - mean_d - x * mean_dx))
            .collect();

        for filt in 0..f {
            let dzf = &dz[filt * len..(filt + 1) * len];
            g.conv_bias[filt] = g.conv_bias[filt] + dzf.iter().fold(T::zero(), |a, &b| a + b);
            for c in 0..2 {
                let xc = &t.x[c * len..(c + 1) * len];
                for tap in 0..k {
                    let lo = pad.saturating_sub(tap);
                    let hi = (len + pad).saturating_sub(tap).min(len);
                    if lo >= hi {
                        continue;
                    }
                    let src = &xc[lo + tap - pad..hi + tap - pad];
                    let w = &mut g.conv_weight[(filt * 2 + c) * k + tap];
                    *w = *w + dot(&dzf[lo..hi], src);
                }
            }
        }
    }

    /// Probability of the match class and the thresholded label.
    pub fn decide_input(&self, input: &PairInput, threshold: f64) -> Result<Verdict, DeciderError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(DeciderError::InvalidThreshold(threshold));
        }
        let probs = self.forward(core::slice::from_ref(input))?[0];
        let probability = probs[1].to_f64().ok_or(DeciderError::NonFinite)?;
        Ok(Verdict {
            probability,
            label: Label::from_bool(probability >= threshold),
        })
    }

    pub fn decide(&self, sample: &PairSample, threshold: f64) -> Result<Verdict, DeciderError> {
        let input = super::assemble_input_dim(sample, self.config.input_dim)?;
        self.decide_input(&input, threshold)
    }

    /// Mean |p(A,B) − p(B,A)| of the match probability; the architecture
    /// does not force this to zero.
    pub fn asymmetry(&self, samples: &[PairSample]) -> Result<f64, DeciderError> {
        if samples.is_empty() {
            return Err(DeciderError::Empty);
        }
        let mut total = 0.0;
        for s in samples {
            let ab = self.decide(s, 0.5)?.probability;
            let ba = self.decide(&s.swapped(), 0.5)?.probability;
            total += (ab - ba).abs();
        }
        Ok(total / samples.len() as f64)
    }
}

fn check_gradients<T: Real>(g: &Params<T>) -> Result<(), DeciderError> {
    const NAMES: [&str; 4] = ["conv.weight", "conv.bias", "norm.gamma", "norm.beta"];
    for (i, (_, t)) in g.tensors().iter().enumerate() {
        if t.iter().any(|x| !x.is_finite()) {
            return Err(DeciderError::NonFiniteGradient(NAMES.get(i).copied().unwrap_or("linear")));
        }
    }
    Ok(())
}

pub(crate) fn gradients_finite<T: Real>(g: &Params<T>) -> Result<(), DeciderError> {
    check_gradients(g)
}
