//! Fully connected autoencoder, 34→48→64 encoder and 64→48→34 decoder,
//! ReLU after the first layer of each half and linear outputs.

mod persist;
mod train;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::region::RegionKey;

pub use train::{encode, encode_regions, train, Optimizer, TrainConfig};

pub const INPUT_DIM: usize = crate::features::FEATURE_DIM;
pub const HIDDEN_DIM: usize = 48;
pub const EMBEDDING_DIM: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum AutoencoderError {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch} (loss {loss}); lower the learning rate")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training data must lie in [0, 1] and be finite")]
    InputOutOfRange,
    #[error("bad model file: {0}")]
    Parse(String),
}

fn expect_len(expected: usize, got: usize) -> Result<(), AutoencoderError> {
    if expected != got {
        return Err(AutoencoderError::ShapeMismatch { expected, got });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out × in.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseLayer {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let mut layer = DenseLayer::zeros(input, output);
        for w in layer.weights.as_mut_slice() {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (b, w)) in out.iter_mut().zip(self.bias.iter().zip(self.weights.iter_rows())) {
            *o = b + dot(w, x);
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(x, &mut out);
        out
    }

    /// Accumulate `delta ⊗ input` and `delta` into `grad`, returning
    /// `Wᵀ delta`.
    fn backward(&self, input: &[f64], delta: &[f64], grad: &mut DenseLayer) -> Vec<f64> {
        let mut back = vec![0.0; self.input_dim()];
        for (o, &d) in delta.iter().enumerate() {
            grad.bias[o] += d;
            let gw = grad.weights.row_mut(o);
            for (g, &x) in gw.iter_mut().zip(input) {
                *g += d * x;
            }
            for (b, &w) in back.iter_mut().zip(self.weights.row(o)) {
                *b += w * d;
            }
        }
        back
    }

    fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x <= 0.0 {
            *x = 0.0;
        }
    }
}

/// Zero the gradient where the pre-activation was not positive; the
/// subgradient at exactly 0 is 0.
fn relu_backward(pre: &[f64], delta: &mut [f64]) {
    for (d, &p) in delta.iter_mut().zip(pre) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub enc1: DenseLayer,
    pub enc2: DenseLayer,
    pub dec1: DenseLayer,
    pub dec2: DenseLayer,
    pub seed: u64,
}

/// Gradients with the same layout as the model.
pub type Gradients = [DenseLayer; 4];

/// Intermediate activations of one forward pass.
struct Trace {
    h1: Vec<f64>,
    a1: Vec<f64>,
    z: Vec<f64>,
    h3: Vec<f64>,
    a3: Vec<f64>,
    out: Vec<f64>,
}

impl AutoencoderModel {
    /// The 34→48→64→48→34 model with seeded initial weights.
    pub fn new(seed: u64) -> Self {
        Self::with_dims(INPUT_DIM, HIDDEN_DIM, EMBEDDING_DIM, seed)
    }

    /// Same architecture at arbitrary widths.
    pub fn with_dims(input: usize, hidden: usize, embedding: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AutoencoderModel {
            enc1: DenseLayer::init(input, hidden, &mut rng),
            enc2: DenseLayer::init(hidden, embedding, &mut rng),
            dec1: DenseLayer::init(embedding, hidden, &mut rng),
            dec2: DenseLayer::init(hidden, input, &mut rng),
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc1.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.enc2.output_dim()
    }

    pub fn layers(&self) -> [&DenseLayer; 4] {
        [&self.enc1, &self.enc2, &self.dec1, &self.dec2]
    }

    pub fn layers_mut(&mut self) -> [&mut DenseLayer; 4] {
        [&mut self.enc1, &mut self.enc2, &mut self.dec1, &mut self.dec2]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.layers().map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim()))
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let h1 = self.enc1.forward(x);
        let mut a1 = h1.clone();
        relu(&mut a1);
        let z = self.enc2.forward(&a1);
        let h3 = self.dec1.forward(&z);
        let mut a3 = h3.clone();
        relu(&mut a3);
        let out = self.dec2.forward(&a3);
        Trace { h1, a1, z, h3, a3, out }
    }

    /// Embedding of `x`.
    pub fn encode_one(&self, x: &[f64]) -> Result<Vec<f64>, AutoencoderError> {
        expect_len(self.input_dim(), x.len())?;
        let mut a1 = self.enc1.forward(x);
        relu(&mut a1);
        Ok(self.enc2.forward(&a1))
    }

    /// (embedding, reconstruction).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), AutoencoderError> {
        expect_len(self.input_dim(), x.len())?;
        let t = self.trace(x);
        Ok((t.z, t.out))
    }

    pub fn reconstruct(&self, batch: &Matrix) -> Result<Matrix, AutoencoderError> {
        expect_len(self.input_dim(), batch.cols())?;
        let mut out = Matrix::zeros(batch.rows(), batch.cols());
        for (r, x) in batch.iter_rows().enumerate() {
            out.row_mut(r).copy_from_slice(&self.trace(x).out);
        }
        Ok(out)
    }

    /// Accumulate this row's contribution to the gradient of the batch loss
    /// (`scale` = 1/N) and return its squared reconstruction error.
    fn accumulate_row(&self, x: &[f64], scale: f64, grads: &mut Gradients) -> f64 {
        let t = self.trace(x);
        let mut sq = 0.0;
        let delta_out: Vec<f64> = t
            .out
            .iter()
            .zip(x)
            .map(|(y, x)| {
                let d = y - x;
                sq += d * d;
                2.0 * d * scale
            })
            .collect();
        let [g1, g2, g3, g4] = grads;
        let mut d_a3 = self.dec2.backward(&t.a3, &delta_out, g4);
        relu_backward(&t.h3, &mut d_a3);
        let d_z = self.dec1.backward(&t.z, &d_a3, g3);
        let mut d_a1 = self.enc2.backward(&t.a1, &d_z, g2);
        relu_backward(&t.h1, &mut d_a1);
        self.enc1.backward(x, &d_a1, g1);
        sq
    }

    /// Analytic gradient of the mean reconstruction loss over `batch`,
    /// together with that loss.
    pub fn gradients(&self, batch: &Matrix) -> Result<(Gradients, f64), AutoencoderError> {
        expect_len(self.input_dim(), batch.cols())?;
        let mut grads = self.zero_gradients();
        if batch.is_empty() {
            return Ok((grads, 0.0));
        }
        let scale = 1.0 / batch.rows() as f64;
        let mut total = 0.0;
        for x in batch.iter_rows() {
            total += self.accumulate_row(x, scale, &mut grads);
        }
        Ok((grads, total * scale))
    }
}

pub fn init_model(seed: u64) -> AutoencoderModel {
    AutoencoderModel::new(seed)
}

/// Mean over rows of the per-row summed squared error.
pub fn loss(batch: &Matrix, reconstructions: &Matrix) -> Result<f64, AutoencoderError> {
    expect_len(batch.rows(), reconstructions.rows())?;
    expect_len(batch.cols(), reconstructions.cols())?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = batch
        .as_slice()
        .iter()
        .zip(reconstructions.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / batch.rows() as f64)
}

/// A region's 64-dimensional representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub region: RegionKey,
    pub vector: Vec<f64>,
}
