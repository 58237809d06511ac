//! Dense ReLU network with a sigmoid output layer, trained with binary
//! cross-entropy. Weights are stored `inputs x outputs`, so a batch of
//! row vectors maps through `x.dot(w) + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Probability clamp used inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weights: Array2::zeros((fan_in, fan_out)), biases: Array1::zeros(fan_out) }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Dropout applied after each hidden layer.
pub enum Dropout<'a> {
    Off,
    /// Inverted dropout: units are zeroed with probability `rate` and the
    /// survivors scaled by `1 / (1 - rate)`.
    Random { rate: f64, rng: &'a mut Rng },
    /// Explicit per-hidden-layer multipliers (already scaled).
    Fixed(&'a [Array2<f64>]),
}

/// Intermediate values kept for backpropagation.
pub struct ForwardPass {
    layer_inputs: Vec<Array2<f64>>,
    relu_outputs: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    pub output: Array2<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidArchitecture(format!("need at least input and output sizes, got {sizes:?}")));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArchitecture(format!("layer sizes must be positive, got {sizes:?}")));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> f64 {
    let total: f64 = Zip::from(pred).and(target).fold(0.0, |acc, &p, &t| {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        acc - (t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    });
    total / pred.len().max(1) as f64
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut rng = rng::seeded(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let weights = Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-limit..limit));
                Layer { weights, biases: Array1::zeros(w[1]) }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(Self { layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.weights.ncols() {
                return Err(Error::InvalidArchitecture(format!("layer {i} bias width mismatch")));
            }
            if i > 0 && layers[i - 1].weights.ncols() != l.weights.nrows() {
                return Err(Error::InvalidArchitecture(format!("layer {i} input width mismatch")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.nrows()];
        sizes.extend(self.layers.iter().map(|l| l.weights.ncols()));
        sizes
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::ShapeMismatch { expected: self.input_width(), got: x.ncols() });
        }
        Ok(())
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.biases;
            if i == last {
                z.mapv_inplace(sigmoid);
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, mut dropout: Dropout<'_>) -> Result<ForwardPass> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut relu_outputs = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.biases;
            layer_inputs.push(a);
            if i == last {
                z.mapv_inplace(sigmoid);
                a = z;
                break;
            }
            z.mapv_inplace(|v| v.max(0.0));
            let mask = match &mut dropout {
                Dropout::Off => None,
                Dropout::Random { rate, rng } => {
                    let keep = 1.0 - *rate;
                    let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
                    Some(Array2::from_shape_fn(z.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            0.0
                        }
                    }))
                }
                Dropout::Fixed(ms) => {
                    let m = ms.get(i).ok_or(Error::ShapeMismatch { expected: last, got: ms.len() })?;
                    if m.raw_dim() != z.raw_dim() {
                        return Err(Error::ShapeMismatch { expected: z.len(), got: m.len() });
                    }
                    Some(m.clone())
                }
            };
            let dropped = match &mask {
                Some(m) => &z * m,
                None => z.clone(),
            };
            relu_outputs.push(z);
            masks.push(mask);
            a = dropped;
        }
        Ok(ForwardPass { layer_inputs, relu_outputs, masks, output: a })
    }

    /// Gradient of mean BCE with respect to every parameter. At the output
    /// the sigmoid and cross-entropy combine to `(p - t) / (B * N)`.
    pub fn backward(&self, pass: &ForwardPass, targets: ArrayView2<'_, f64>) -> Result<Vec<Layer>> {
        if targets.raw_dim() != pass.output.raw_dim() {
            return Err(Error::ShapeMismatch { expected: pass.output.len(), got: targets.len() });
        }
        let scale = 1.0 / pass.output.len() as f64;
        let mut delta = (&pass.output - &targets) * scale;
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &pass.layer_inputs[i];
            let dw = input.t().dot(&delta).as_standard_layout().into_owned();
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut da = delta.dot(&self.layers[i].weights.t());
                if let Some(m) = &pass.masks[i - 1] {
                    da *= m;
                }
                Zip::from(&mut da).and(&pass.relu_outputs[i - 1]).for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = da;
            }
            grads.push(Layer { weights: dw, biases: db });
        }
        grads.reverse();
        Ok(grads)
    }

    /// Loss in evaluation mode, used by gradient checks and held-out curves.
    pub fn loss(&self, x: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<f64> {
        Ok(bce_loss(self.predict(x)?.view(), targets))
    }
}
