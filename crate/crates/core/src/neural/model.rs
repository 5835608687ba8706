//! Small convolutional binary classifier over Hadamard-product planes.
//!
//! Layout: `n` conv layers (3x3, stride 2, zero padding 1, ReLU), global
//! average pooling, a linear head and a sigmoid. All arithmetic is `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local::box_moments;
use crate::plane::ImagePlane;

/// Smallest accepted input side.
pub const MIN_INPUT_SIDE: usize = 16;

/// How a Hadamard plane is scaled before entering the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    /// Raw products.
    None,
    /// Divide by the root-mean-square of the plane.
    Rms,
    /// Divide each value by the RMS of its local window.
    LocalRms,
}

/// Window side used by [`InputNorm::LocalRms`].
pub const LOCAL_NORM_WINDOW: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Output channels of each conv layer; the input has one channel.
    pub channels: Vec<usize>,
    pub input_norm: InputNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32, 64],
            input_norm: InputNorm::Rms,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "conv channels must be nonempty and positive, got {:?}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Total parameter count implied by the layer sizes.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut cin = 1;
        for &cout in &self.channels {
            total += cout * cin * 9 + cout;
            cin = cout;
        }
        total + cin + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayout {
    cin: usize,
    cout: usize,
    weights: usize,
    bias: usize,
}

/// A network input: one channel, already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub data: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

impl PreparedInput {
    pub fn new(data: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidPlane(format!(
                "input length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if height < MIN_INPUT_SIDE || width < MIN_INPUT_SIDE {
            return Err(Error::InvalidArgument(format!(
                "comparator input must be at least {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}, got {height}x{width}"
            )));
        }
        Ok(Self {
            data,
            height,
            width,
        })
    }
}

/// Mean loss and gradient over a batch, aligned with [`ComparatorModel::params`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorModel {
    config: ModelConfig,
    layers: Vec<ConvLayout>,
    head: usize,
    params: Vec<f64>,
}

struct Activations {
    /// Input of every conv layer plus the last layer's output.
    maps: Vec<Vec<f64>>,
    dims: Vec<(usize, usize)>,
    pooled: Vec<f64>,
    logit: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability clamp used inside the loss.
pub const PROB_EPS: f64 = 1e-7;

/// Binary cross-entropy of one prediction.
pub fn bce(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Pair loss `-ln p_pos - ln(1 - p_neg)` with clamped probabilities.
pub fn bce_pair_loss(p_pos: f64, p_neg: f64) -> f64 {
    bce(p_pos, true) + bce(p_neg, false)
}

#[inline]
fn out_side(n: usize) -> usize {
    n.div_ceil(2)
}

impl ComparatorModel {
    /// Fan-in scaled normal weights, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in model.layers.clone() {
            let fan_in = (l.cin * 9) as f64;
            let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            for w in &mut model.params[l.weights..l.weights + l.cout * l.cin * 9] {
                *w = dist.sample(&mut rng);
            }
        }
        let c = *model.config.channels.last().expect("nonempty");
        let dist = Normal::new(0.0, (1.0 / c as f64).sqrt()).expect("valid std");
        for w in &mut model.params[model.head..model.head + c] {
            *w = dist.sample(&mut rng);
        }
        Ok(model)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.channels.len());
        let mut offset = 0;
        let mut cin = 1;
        for &cout in &config.channels {
            let weights = offset;
            let bias = weights + cout * cin * 9;
            offset = bias + cout;
            layers.push(ConvLayout {
                cin,
                cout,
                weights,
                bias,
            });
            cin = cout;
        }
        let head = offset;
        let params = vec![0.0; head + cin + 1];
        debug_assert_eq!(params.len(), config.param_count());
        Ok(Self {
            config,
            layers,
            head,
            params,
        })
    }

    /// Rebuilds a model from a flat parameter vector.
    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if params.len() != model.params.len() {
            return Err(Error::Format(format!(
                "architecture needs {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite model parameter".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Index of the head bias inside [`ComparatorModel::params`].
    pub fn head_bias_index(&self) -> usize {
        self.params.len() - 1
    }

    /// Overwrites the linear head.
    pub fn set_head(&mut self, weight: f64, bias: f64) {
        let n = self.params.len();
        self.params[self.head..n - 1].fill(weight);
        self.params[n - 1] = bias;
    }

    /// Normalizes a Hadamard plane into a network input.
    pub fn prepare(&self, plane: &ImagePlane) -> Result<PreparedInput> {
        let mut data: Vec<f64> = plane.data().iter().map(|v| *v as f64).collect();
        let (h, w) = plane.dims();
        match self.config.input_norm {
            InputNorm::None => {}
            InputNorm::Rms => {
                let rms = (data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64).sqrt();
                if rms > 0.0 {
                    data.iter_mut().for_each(|v| *v /= rms);
                }
            }
            InputNorm::LocalRms => {
                let (_, sq) = box_moments(h, w, &data, LOCAL_NORM_WINDOW);
                for (v, e) in data.iter_mut().zip(sq) {
                    if e > 0.0 {
                        *v /= e.sqrt();
                    }
                }
            }
        }
        PreparedInput::new(data, h, w)
    }

    /// `E(plane)`: match probability in `(0, 1)`.
    pub fn forward(&self, plane: &ImagePlane) -> Result<f64> {
        let input = self.prepare(plane)?;
        Ok(self.forward_prepared(&input))
    }

    pub fn forward_prepared(&self, input: &PreparedInput) -> f64 {
        sigmoid(self.activations(input).logit)
    }

    pub fn logit(&self, input: &PreparedInput) -> f64 {
        self.activations(input).logit
    }

    fn activations(&self, input: &PreparedInput) -> Activations {
        let mut maps = Vec::with_capacity(self.layers.len() + 1);
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        maps.push(input.data.clone());
        dims.push((input.height, input.width));
        for layer in &self.layers {
            let (h, w) = *dims.last().expect("nonempty");
            let out = self.conv_forward(layer, maps.last().expect("nonempty"), h, w);
            maps.push(out);
            dims.push((out_side(h), out_side(w)));
        }
        let last = self.layers.last().expect("nonempty");
        let (h, w) = *dims.last().expect("nonempty");
        let area = (h * w) as f64;
        let feat = maps.last().expect("nonempty");
        let pooled: Vec<f64> = (0..last.cout)
            .map(|c| feat[c * h * w..(c + 1) * h * w].iter().sum::<f64>() / area)
            .collect();
        let head = &self.params[self.head..];
        let logit = pooled
            .iter()
            .zip(head)
            .map(|(f, w)| f * w)
            .sum::<f64>()
            + head[last.cout];
        Activations {
            maps,
            dims,
            pooled,
            logit,
        }
    }

    /// Conv + ReLU.
    fn conv_forward(&self, l: &ConvLayout, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = (out_side(h), out_side(w));
        let mut out = vec![0.0; l.cout * oh * ow];
        for o in 0..l.cout {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(self.params[l.bias + o]);
            for i in 0..l.cin {
                let src = &input[i * h * w..(i + 1) * h * w];
                let kern = &self.params[l.weights + (o * l.cin + i) * 9..][..9];
                for ky in 0..3 {
                    let (y_lo, y_hi) = valid_range(ky, h, oh);
                    for kx in 0..3 {
                        let (x_lo, x_hi) = valid_range(kx, w, ow);
                        let k = kern[ky * 3 + kx];
                        for y in y_lo..y_hi {
                            let sy = 2 * y + ky - 1;
                            let srow = &src[sy * w..(sy + 1) * w];
                            let orow = &mut plane[y * ow..(y + 1) * ow];
                            for x in x_lo..x_hi {
                                orow[x] += k * srow[2 * x + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }

    /// Mean BCE over `inputs` and its exact gradient.
    pub fn backward(&self, inputs: &[PreparedInput], labels: &[bool]) -> Result<Gradients> {
        if inputs.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::EmptyInput("empty batch"));
        }
        let n = inputs.len() as f64;
        let mut grads = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut probabilities = Vec::with_capacity(inputs.len());
        for (input, &label) in inputs.iter().zip(labels) {
            let act = self.activations(input);
            let p = sigmoid(act.logit);
            probabilities.push(p);
            loss += bce(p, label);
            let y = if label { 1.0 } else { 0.0 };
            let dlogit = (p - y) / n;
            self.accumulate(&act, dlogit, &mut grads);
        }
        Ok(Gradients {
            loss: loss / n,
            grads,
            probabilities,
        })
    }

    fn accumulate(&self, act: &Activations, dlogit: f64, grads: &mut [f64]) {
        let last = self.layers.last().expect("nonempty");
        let c = last.cout;
        for k in 0..c {
            grads[self.head + k] += dlogit * act.pooled[k];
        }
        grads[self.head + c] += dlogit;

        let (h, w) = *act.dims.last().expect("nonempty");
        let area = (h * w) as f64;
        let top = act.maps.last().expect("nonempty");
        let mut delta: Vec<f64> = (0..c * h * w)
            .map(|idx| {
                if top[idx] > 0.0 {
                    dlogit * self.params[self.head + idx / (h * w)] / area
                } else {
                    0.0
                }
            })
            .collect();

        for (li, l) in self.layers.iter().enumerate().rev() {
            let (ih, iw) = act.dims[li];
            let (oh, ow) = act.dims[li + 1];
            let input = &act.maps[li];
            let mut dinput = if li > 0 {
                vec![0.0; l.cin * ih * iw]
            } else {
                Vec::new()
            };
            for o in 0..l.cout {
                let d = &delta[o * oh * ow..(o + 1) * oh * ow];
                grads[l.bias + o] += d.iter().sum::<f64>();
                for i in 0..l.cin {
                    let src = &input[i * ih * iw..(i + 1) * ih * iw];
                    let widx = l.weights + (o * l.cin + i) * 9;
                    for ky in 0..3 {
                        let (y_lo, y_hi) = valid_range(ky, ih, oh);
                        for kx in 0..3 {
                            let (x_lo, x_hi) = valid_range(kx, iw, ow);
                            let k = self.params[widx + ky * 3 + kx];
                            let mut gw = 0.0;
                            for y in y_lo..y_hi {
                                let sy = 2 * y + ky - 1;
                                for x in x_lo..x_hi {
                                    let dv = d[y * ow + x];
                                    gw += dv * src[sy * iw + 2 * x + kx - 1];
                                    if li > 0 {
                                        dinput[i * ih * iw + sy * iw + 2 * x + kx - 1] += k * dv;
                                    }
                                }
                            }
                            grads[widx + ky * 3 + kx] += gw;
                        }
                    }
                }
            }
            if li > 0 {
                // ReLU of the previous layer
                for (dv, a) in dinput.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *dv = 0.0;
                    }
                }
                delta = dinput;
            }
        }
    }
}

/// Output rows `[lo, hi)` whose tap `k` lands inside an input of length `n`.
#[inline]
fn valid_range(k: usize, n: usize, out: usize) -> (usize, usize) {
    let lo = usize::from(k == 0);
    // need 2x + k - 1 <= n - 1
    let hi = ((n - k) / 2 + 1).min(out);
    (lo, hi.max(lo))
}
