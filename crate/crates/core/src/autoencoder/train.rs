use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{expect_len, AutoencoderError, AutoencoderModel, DenseLayer, Embedding, Gradients};
use crate::matrix::Matrix;
use crate::region::RegionKey;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Adam { .. } => "adam",
            Optimizer::Sgd => "sgd",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "adam" => Some(Optimizer::adam()),
            "sgd" => Some(Optimizer::Sgd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub shuffle: bool,
    /// Compute per-row gradients on the rayon pool. The reduction runs in row
    /// order, so results are bit-identical to the sequential path.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            seed: 42,
            shuffle: true,
            parallel: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), AutoencoderError> {
        if self.epochs == 0 {
            return Err(AutoencoderError::InvalidConfig("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(AutoencoderError::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AutoencoderError::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

fn param_slices(layers: [&mut DenseLayer; 4]) -> impl Iterator<Item = &mut [f64]> {
    layers
        .into_iter()
        .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
}

fn grad_slices(grads: &Gradients) -> impl Iterator<Item = &[f64]> {
    grads.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
}

fn apply_update(
    model: &mut AutoencoderModel,
    grads: &Gradients,
    config: &TrainConfig,
    adam: &mut AdamState,
) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (p, g) in param_slices(model.layers_mut()).zip(grad_slices(grads)) {
                for (p, g) in p.iter_mut().zip(g) {
                    *p -= lr * g;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            adam.step += 1;
            let c1 = 1.0 - beta1.powi(adam.step);
            let c2 = 1.0 - beta2.powi(adam.step);
            let mut k = 0;
            for (p, g) in param_slices(model.layers_mut()).zip(grad_slices(grads)) {
                for (p, &g) in p.iter_mut().zip(g) {
                    let m = &mut adam.m[k];
                    let v = &mut adam.v[k];
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                    k += 1;
                }
            }
        }
    }
}

fn batch_gradients(
    model: &AutoencoderModel,
    data: &Matrix,
    idx: &[usize],
    parallel: bool,
) -> (Gradients, f64) {
    let scale = 1.0 / idx.len() as f64;
    let mut grads = model.zero_gradients();
    let mut total = 0.0;
    if parallel {
        let per_row: Vec<(Gradients, f64)> = idx
            .par_iter()
            .map(|&i| {
                let mut g = model.zero_gradients();
                let sq = model.accumulate_row(data.row(i), scale, &mut g);
                (g, sq)
            })
            .collect();
        for (g, sq) in per_row {
            for (acc, part) in grads.iter_mut().zip(&g) {
                for (a, p) in acc.weights.as_mut_slice().iter_mut().zip(part.weights.as_slice()) {
                    *a += p;
                }
                for (a, p) in acc.bias.iter_mut().zip(&part.bias) {
                    *a += p;
                }
            }
            total += sq;
        }
    } else {
        for &i in idx {
            total += model.accumulate_row(data.row(i), scale, &mut grads);
        }
    }
    (grads, total * scale)
}

/// Train a fresh model seeded from `config.seed` on rows of `data` (all
/// values in [0, 1]). Returns the model and the mean training loss of each
/// epoch.
pub fn train(data: &Matrix, config: &TrainConfig) -> Result<(AutoencoderModel, Vec<f64>), AutoencoderError> {
    config.validate()?;
    let mut model = AutoencoderModel::new(config.seed);
    expect_len(model.input_dim(), data.cols())?;
    if data.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(AutoencoderError::InputOutOfRange);
    }
    if data.is_empty() {
        return Err(AutoencoderError::InvalidConfig("no training rows".into()));
    }
    let history = fit_model(&mut model, data, config)?;
    Ok((model, history))
}

/// Continue training `model` in place.
pub(crate) fn fit_model(
    model: &mut AutoencoderModel,
    data: &Matrix,
    config: &TrainConfig,
) -> Result<Vec<f64>, AutoencoderError> {
    let n_params = model.param_count();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        step: 0,
    };
    // Independent stream from the weight initialisation.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (grads, batch_loss) = batch_gradients(model, data, batch, config.parallel);
            if !batch_loss.is_finite() {
                return Err(AutoencoderError::NonFiniteLoss { epoch, loss: batch_loss });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            apply_update(model, &grads, config, &mut adam);
        }
        let epoch_loss = epoch_loss / data.rows() as f64;
        let finite = model
            .layers()
            .iter()
            .all(|l| l.weights.as_slice().iter().chain(&l.bias).all(|v| v.is_finite()));
        if !finite {
            return Err(AutoencoderError::NonFiniteLoss { epoch, loss: f64::NAN });
        }
        history.push(epoch_loss);
    }
    Ok(history)
}

/// Embeddings of every row, in row order (N × 64).
pub fn encode(model: &AutoencoderModel, data: &Matrix) -> Result<Matrix, AutoencoderError> {
    expect_len(model.input_dim(), data.cols())?;
    let mut out = Matrix::zeros(data.rows(), model.embedding_dim());
    for (r, x) in data.iter_rows().enumerate() {
        out.row_mut(r).copy_from_slice(&model.encode_one(x)?);
    }
    Ok(out)
}

pub fn encode_regions(
    model: &AutoencoderModel,
    rows: &[RegionKey],
    data: &Matrix,
) -> Result<Vec<Embedding>, AutoencoderError> {
    expect_len(rows.len(), data.rows())?;
    let z = encode(model, data)?;
    Ok(rows
        .iter()
        .zip(z.iter_rows())
        .map(|(k, v)| Embedding {
            region: k.clone(),
            vector: v.to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::loss;

    fn data(n: usize, seed: u64) -> Matrix {
        use rand::RngExt;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(n, 34, (0..n * 34).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    #[test]
    fn config_errors() {
        let d = data(4, 1);
        let bad = [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(train(&d, &c), Err(AutoencoderError::InvalidConfig(_))));
        }
        let mut out_of_range = d.clone();
        out_of_range.set(0, 0, 1.5);
        assert_eq!(
            train(&out_of_range, &TrainConfig::default()).unwrap_err(),
            AutoencoderError::InputOutOfRange
        );
    }

    #[test]
    fn deterministic() {
        let d = data(40, 2);
        let c = TrainConfig { epochs: 5, ..Default::default() };
        let (m1, h1) = train(&d, &c).unwrap();
        let (m2, h2) = train(&d, &c).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert_eq!(h1.len(), 5);
    }

    #[test]
    fn parallel_matches_sequential() {
        let d = data(70, 3);
        let c = TrainConfig { epochs: 3, ..Default::default() };
        let (m1, h1) = train(&d, &c).unwrap();
        let (m2, h2) = train(&d, &TrainConfig { parallel: true, ..c }).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn loss_decreases() {
        let d = data(30, 4);
        let (m, h) = train(&d, &TrainConfig { epochs: 50, ..Default::default() }).unwrap();
        assert!(h.last().unwrap() < &h[0]);
        let rec = m.reconstruct(&d).unwrap();
        let final_loss = loss(&d, &rec).unwrap();
        assert!(final_loss < h[0]);
    }

    #[test]
    fn constant_rows_are_learned() {
        let row: Vec<f64> = (0..34).map(|j| (j % 5) as f64 / 4.0).collect();
        let d = Matrix::from_rows(&vec![row; 16], 34).unwrap();
        let (_, h) = train(&d, &TrainConfig::default()).unwrap();
        assert!(*h.last().unwrap() < 1e-4, "{:?}", h.last());
    }

    #[test]
    fn divergence_is_reported() {
        let d = data(8, 5);
        let c = TrainConfig {
            learning_rate: 1e6,
            optimizer: Optimizer::Sgd,
            epochs: 50,
            ..Default::default()
        };
        assert!(matches!(train(&d, &c), Err(AutoencoderError::NonFiniteLoss { .. })));
    }

    #[test]
    fn encode_shapes() {
        let m = AutoencoderModel::new(0);
        let d = data(5, 6);
        let z = encode(&m, &d).unwrap();
        assert_eq!((z.rows(), z.cols()), (5, 64));
        let twice = Matrix::from_rows(&[d.row(0), d.row(0)], 34).unwrap();
        let z2 = encode(&m, &twice).unwrap();
        assert_eq!(z2.row(0), z2.row(1));
        assert_eq!(z2.row(0), z.row(0));
    }
}
