//! A small from-scratch convolutional network over difference-spectrogram
//! tensors, and the 128-d feature extractor cut from its penultimate
//! layer.
//!
//! The fixed architecture (65 x 158 x 2 input) is three blocks of two
//! valid-padding 3x3 convolutions + ReLU followed by 2x2 max pooling and
//! dropout, with 16/32/16 channels per block, then a flatten, a 128-unit
//! ReLU dense layer, dropout, and a softmax classification head:
//!
//! ```text
//! conv16 conv16 pool drop | conv32 conv32 pool drop | conv16 conv16 pool drop
//! flatten(1024) dense128+relu drop dense(n_classes)+softmax
//! ```
//!
//! With 30 classes this is 158,526 trainable parameters. Training is Adam
//! on categorical cross-entropy. After training on an identification task,
//! [`FeatureExtractor`] runs the network up to (and including) the 128-d
//! dense layer and serves as a generic ear-echo embedder for one-class
//! enrollment.
//!
//! The element type is generic: `f32` is the production type; `f64`
//! instantiations give finite-difference gradient checks enough precision
//! to be meaningful.

mod layers;
mod scalar;

use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::{
    softmax, ConvCache, ConvLayer, DenseCache, DenseLayer, DropoutCache, DropoutLayer, PoolCache,
    PoolLayer, Value,
};
pub use scalar::Scalar;

/// Width of the feature embedding (penultimate dense layer).
pub const FEATURE_DIM: usize = 128;

/// Input tensor shape of the standard architecture.
pub const INPUT_SHAPE: (usize, usize, usize) = (65, 158, 2);

/// Default class count of the identification head.
pub const DEFAULT_CLASSES: usize = 30;

const CHECKPOINT_MAGIC: &[u8; 8] = b"EARCNN01";
const CHECKPOINT_VERSION: u32 = 1;
/// Domain separator keeping shuffle streams disjoint from dropout streams.
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4500;

// --- Model -----------------------------------------------------------------

#[derive(Debug)]
enum Layer<F> {
    Conv(ConvLayer<F>),
    Pool(PoolLayer),
    Dropout(DropoutLayer),
    Flatten,
    Dense(DenseLayer<F>),
}

enum Cache<F> {
    Conv(ConvCache<F>),
    Pool(PoolCache),
    Dropout(DropoutCache<F>),
    /// Records the pre-flatten grid shape for the backward reshape.
    Flatten((usize, usize, usize)),
    Dense(DenseCache<F>),
    /// Dropout at inference (identity).
    Identity,
}

enum LayerGrad<F> {
    Tensors { dw: Array2<F>, db: Array1<F> },
    None,
}

/// Whether a forward pass applies dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    /// Dropout layers are the identity (deployment behaviour).
    Inference,
    /// Dropout masks are drawn from streams derived from this seed; a
    /// fixed seed reproduces the exact outputs.
    Training { seed: u64 },
}

/// The convolutional network.
#[derive(Debug)]
pub struct CnnModel<F> {
    layers: Vec<Layer<F>>,
    input_shape: (usize, usize, usize),
    n_classes: usize,
    trained: bool,
}

fn glorot_uniform<F: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize),
    fan_in: usize,
    fan_out: usize,
) -> Array2<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| F::from_f64(rng.random_range(-limit..limit)))
}

/// Builds the standard architecture with a fresh Glorot-uniform
/// initialization.
pub fn build_model<F: Scalar>(n_classes: usize, seed: u64) -> Result<CnnModel<F>> {
    build_custom(INPUT_SHAPE, &[16, 32, 16], FEATURE_DIM, n_classes, seed)
}

/// Builds a reduced variant with the same layer pattern: per entry in
/// `block_channels`, two 3x3 conv+ReLU layers, 2x2 max pooling and
/// dropout; then flatten, a ReLU dense layer of `dense_units`, dropout,
/// and the class head. Used for fast numerical checks on small inputs.
pub fn build_custom<F: Scalar>(
    input_shape: (usize, usize, usize),
    block_channels: &[usize],
    dense_units: usize,
    n_classes: usize,
    seed: u64,
) -> Result<CnnModel<F>> {
    if n_classes < 2 {
        return Err(Error::InvalidParameter("need at least 2 classes".into()));
    }
    if block_channels.is_empty() || dense_units == 0 {
        return Err(Error::InvalidParameter(
            "need at least one conv block and a non-empty dense layer".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<Layer<F>> = Vec::new();
    let (mut h, mut w, mut c) = input_shape;
    for &c_out in block_channels {
        for _ in 0..2 {
            if h < 3 || w < 3 || c_out == 0 {
                return Err(Error::InvalidParameter(format!(
                    "activation {h}x{w} too small for a 3x3 convolution"
                )));
            }
            let k = 9 * c;
            layers.push(Layer::Conv(ConvLayer {
                weights: glorot_uniform(&mut rng, (k, c_out), k, 9 * c_out),
                bias: Array1::zeros(c_out),
                kernel: (3, 3),
                c_in: c,
                c_out,
                relu: true,
            }));
            h -= 2;
            w -= 2;
            c = c_out;
        }
        if h < 2 || w < 2 {
            return Err(Error::InvalidParameter(format!(
                "activation {h}x{w} too small for 2x2 pooling"
            )));
        }
        layers.push(Layer::Pool(PoolLayer));
        h /= 2;
        w /= 2;
        layers.push(Layer::Dropout(DropoutLayer { rate: 0.25 }));
    }
    layers.push(Layer::Flatten);
    let flat = h * w * c;
    layers.push(Layer::Dense(DenseLayer {
        weights: glorot_uniform(&mut rng, (flat, dense_units), flat, dense_units),
        bias: Array1::zeros(dense_units),
        relu: true,
    }));
    layers.push(Layer::Dropout(DropoutLayer { rate: 0.5 }));
    layers.push(Layer::Dense(DenseLayer {
        weights: glorot_uniform(&mut rng, (dense_units, n_classes), dense_units, n_classes),
        bias: Array1::zeros(n_classes),
        relu: false,
    }));
    Ok(CnnModel {
        layers,
        input_shape,
        n_classes,
        trained: false,
    })
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 chain over the parts; gives independent dropout streams
    // per (seed, epoch, batch, sample) without any RNG state shared across
    // parallel workers.
    let mut z = 0x9E3779B97F4A7C15u64;
    for &p in parts {
        z ^= p.wrapping_add(0x9E3779B97F4A7C15).wrapping_add(z << 6);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
    }
    z
}

impl<F: Scalar> CnnModel<F> {
    /// `(height, width, channels)` the model expects.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    /// Size of the classification head.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Whether [`train`] has completed on this model.
    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Output shape after each layer, flattened dims as 1-element vectors.
    pub fn output_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut grid = self.input_shape;
        let mut flat = 0usize;
        let mut is_flat = false;
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    grid = c.output_dim(grid);
                    shapes.push(vec![grid.0, grid.1, grid.2]);
                }
                Layer::Pool(p) => {
                    grid = p.output_dim(grid);
                    shapes.push(vec![grid.0, grid.1, grid.2]);
                }
                Layer::Dropout(_) => {
                    shapes.push(if is_flat {
                        vec![flat]
                    } else {
                        vec![grid.0, grid.1, grid.2]
                    });
                }
                Layer::Flatten => {
                    is_flat = true;
                    flat = grid.0 * grid.1 * grid.2;
                    shapes.push(vec![flat]);
                }
                Layer::Dense(d) => {
                    flat = d.weights.ncols();
                    shapes.push(vec![flat]);
                }
            }
        }
        shapes
    }

    /// Trainable parameters per layer (zero for pool/dropout/flatten).
    pub fn per_layer_parameter_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.weights.len() + c.bias.len(),
                Layer::Dense(d) => d.weights.len() + d.bias.len(),
                _ => 0,
            })
            .collect()
    }

    /// Total trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        self.per_layer_parameter_counts().iter().sum()
    }

    /// One human-readable line per layer.
    pub fn describe(&self) -> Vec<String> {
        self.layers
            .iter()
            .zip(self.output_shapes())
            .map(|(l, s)| {
                let head = match l {
                    Layer::Conv(c) => format!("conv {}x{} x{} relu", c.kernel.0, c.kernel.1, c.c_out),
                    Layer::Pool(_) => "maxpool 2x2".to_string(),
                    Layer::Dropout(d) => format!("dropout {}", d.rate),
                    Layer::Flatten => "flatten".to_string(),
                    Layer::Dense(d) => format!(
                        "dense {}{}",
                        d.weights.ncols(),
                        if d.relu { " relu" } else { " (head)" }
                    ),
                };
                format!("{head:<22} -> {s:?}")
            })
            .collect()
    }

    /// Overrides the dropout rates: `conv_rate` for the in-block dropout
    /// layers, `dense_rate` for the one after the dense embedding.
    pub fn set_dropout_rates(&mut self, conv_rate: f64, dense_rate: f64) {
        let mut seen_flatten = false;
        for layer in &mut self.layers {
            match layer {
                Layer::Flatten => seen_flatten = true,
                Layer::Dropout(d) => {
                    d.rate = if seen_flatten { dense_rate } else { conv_rate }
                }
                _ => {}
            }
        }
    }

    fn check_input(&self, t: &Array3<f64>) -> Result<()> {
        if t.dim() != self.input_shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.input_shape),
                actual: format!("{:?}", t.dim()),
            });
        }
        Ok(())
    }

    fn to_scalar(t: &Array3<f64>) -> Array3<F> {
        t.mapv(F::from_f64)
    }

    /// Forward through layers `0..stop`, optionally applying dropout and
    /// collecting caches.
    fn run_layers(
        &self,
        input: Array3<F>,
        stop: usize,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
        want_caches: bool,
    ) -> (Value<F>, Vec<Cache<F>>) {
        let mut value = Value::Grid(input);
        let mut caches = Vec::with_capacity(if want_caches { stop } else { 0 });
        for layer in &self.layers[..stop] {
            let cache = match layer {
                Layer::Conv(conv) => {
                    let (out, cache) = conv.forward(&value.grid(), want_caches);
                    value = Value::Grid(out);
                    cache.map(Cache::Conv).unwrap_or(Cache::Identity)
                }
                Layer::Pool(pool) => {
                    let (out, cache) = pool.forward(&value.grid(), want_caches);
                    value = Value::Grid(out);
                    cache.map(Cache::Pool).unwrap_or(Cache::Identity)
                }
                Layer::Dropout(drop) => match dropout_rng.as_deref_mut() {
                    Some(rng) if drop.rate > 0.0 => {
                        let cache = drop.forward_train(&mut value, rng);
                        Cache::Dropout(cache)
                    }
                    _ => Cache::Identity,
                },
                Layer::Flatten => {
                    let grid = value.grid();
                    let dim = grid.dim();
                    value = Value::Flat(Array1::from_iter(grid.iter().copied()));
                    Cache::Flatten(dim)
                }
                Layer::Dense(dense) => {
                    let (out, cache) = dense.forward(&value.flat(), want_caches);
                    value = Value::Flat(out);
                    cache.map(Cache::Dense).unwrap_or(Cache::Identity)
                }
            };
            if want_caches {
                caches.push(cache);
            }
        }
        (value, caches)
    }

    /// Backward from the loss gradient on the logits; returns per-layer
    /// parameter gradients (aligned with `self.layers`).
    fn backward(&self, caches: &[Cache<F>], d_logits: Array1<F>) -> Vec<LayerGrad<F>> {
        let mut grads: Vec<LayerGrad<F>> = Vec::with_capacity(self.layers.len());
        let mut d_value = Value::Flat(d_logits);
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let grad = match (layer, cache) {
                (Layer::Conv(conv), Cache::Conv(c)) => {
                    let (d_in, dw, db) = conv.backward(c, &d_value.grid());
                    d_value = Value::Grid(d_in);
                    LayerGrad::Tensors { dw, db }
                }
                (Layer::Pool(pool), Cache::Pool(c)) => {
                    let d_in = pool.backward(c, &d_value.grid());
                    d_value = Value::Grid(d_in);
                    LayerGrad::None
                }
                (Layer::Dropout(drop), Cache::Dropout(c)) => {
                    drop.backward(c, &mut d_value);
                    LayerGrad::None
                }
                (Layer::Dropout(_), Cache::Identity) => LayerGrad::None,
                (Layer::Flatten, Cache::Flatten(dim)) => {
                    let flat = d_value.flat();
                    d_value = Value::Grid(
                        Array3::from_shape_vec(*dim, flat.to_vec()).expect("flatten shape"),
                    );
                    LayerGrad::None
                }
                (Layer::Dense(dense), Cache::Dense(c)) => {
                    let (d_in, dw, db) = dense.backward(c, &d_value.flat());
                    d_value = Value::Flat(d_in);
                    LayerGrad::Tensors { dw, db }
                }
                _ => unreachable!("cache misaligned with layers"),
            };
            grads.push(grad);
        }
        grads.reverse();
        grads
    }

    /// Class probabilities for a batch, `(n_samples, n_classes)`.
    pub fn forward(&self, inputs: &[Array3<f64>], mode: DropoutMode) -> Result<Array2<f64>> {
        for t in inputs {
            self.check_input(t)?;
        }
        let rows: Vec<Vec<f64>> = inputs
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let x = Self::to_scalar(t);
                let logits = match mode {
                    DropoutMode::Inference => self.run_layers(x, self.layers.len(), None, false).0,
                    DropoutMode::Training { seed } => {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, i as u64]));
                        self.run_layers(x, self.layers.len(), Some(&mut rng), false).0
                    }
                };
                softmax(&logits.flat()).iter().map(|v| v.to_f64()).collect()
            })
            .collect();
        let mut out = Array2::zeros((inputs.len(), self.n_classes));
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    /// Flattened copy of all trainable parameters, in layer order
    /// (weights then bias per trainable layer), as `f64`.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.extend(c.weights.iter().map(|v| v.to_f64()));
                    out.extend(c.bias.iter().map(|v| v.to_f64()));
                }
                Layer::Dense(d) => {
                    out.extend(d.weights.iter().map(|v| v.to_f64()));
                    out.extend(d.bias.iter().map(|v| v.to_f64()));
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites all trainable parameters from a flat vector (the layout
    /// of [`Self::flat_parameters`]).
    pub fn set_flat_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.parameter_count()),
                actual: format!("{}", values.len()),
            });
        }
        let mut it = values.iter();
        let fill1 = |a: &mut Array1<F>, it: &mut std::slice::Iter<f64>| {
            for v in a.iter_mut() {
                *v = F::from_f64(*it.next().unwrap());
            }
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    for v in c.weights.iter_mut() {
                        *v = F::from_f64(*it.next().unwrap());
                    }
                    fill1(&mut c.bias, &mut it);
                }
                Layer::Dense(d) => {
                    for v in d.weights.iter_mut() {
                        *v = F::from_f64(*it.next().unwrap());
                    }
                    fill1(&mut d.bias, &mut it);
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Cross-entropy loss and its gradient with respect to every trainable
    /// parameter (flat layout), dropout disabled. The analytic counterpart
    /// a finite-difference check compares against.
    pub fn loss_and_gradient(&self, input: &Array3<f64>, label: usize) -> Result<(f64, Vec<f64>)> {
        self.check_input(input)?;
        if label >= self.n_classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} out of range for {} classes",
                self.n_classes
            )));
        }
        let x = Self::to_scalar(input);
        let (logits, caches) = self.run_layers(x, self.layers.len(), None, true);
        let probs = softmax(&logits.flat());
        let loss = -probs[label].to_f64().max(1e-300).ln();
        let mut d_logits = probs;
        d_logits[label] = d_logits[label] - F::one();
        let grads = self.backward(&caches, d_logits);

        let mut flat = Vec::with_capacity(self.parameter_count());
        for g in &grads {
            if let LayerGrad::Tensors { dw, db } = g {
                flat.extend(dw.iter().map(|v| v.to_f64()));
                flat.extend(db.iter().map(|v| v.to_f64()));
            }
        }
        Ok((loss, flat))
    }
}

// --- Training ----------------------------------------------------------------

/// Adam/cross-entropy training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Passes over the dataset.
    pub epochs: usize,
    /// Mini-batch size.
    pub batch_size: usize,
    /// Adam step size.
    pub learning_rate: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Adam denominator fuzz.
    pub epsilon: f64,
    /// Dropout rate of the in-block dropout layers.
    pub dropout_conv: f64,
    /// Dropout rate after the dense embedding.
    pub dropout_dense: f64,
    /// Seed for shuffling and dropout streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout_conv: 0.25,
            dropout_dense: 0.5,
            seed: 0,
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

struct AdamSlot<F> {
    m_w: Array2<F>,
    v_w: Array2<F>,
    m_b: Array1<F>,
    v_b: Array1<F>,
}

/// Trains the classification head on `(tensor, label)` pairs with Adam on
/// categorical cross-entropy. Deterministic for a fixed config and
/// dataset, independent of worker-thread scheduling.
pub fn train<F: Scalar>(
    model: &mut CnnModel<F>,
    data: &[(Array3<f64>, usize)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidParameter(
            "batch_size and epochs must be positive".into(),
        ));
    }
    for (t, label) in data {
        model.check_input(t)?;
        if *label >= model.n_classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} out of range for {} classes",
                model.n_classes
            )));
        }
    }
    if !(0.0..1.0).contains(&cfg.dropout_conv) || !(0.0..1.0).contains(&cfg.dropout_dense) {
        return Err(Error::InvalidParameter("dropout rates must be in [0, 1)".into()));
    }
    model.set_dropout_rates(cfg.dropout_conv, cfg.dropout_dense);

    // Cast the dataset once.
    let samples: Vec<(Array3<F>, usize)> = data
        .par_iter()
        .map(|(t, l)| (CnnModel::<F>::to_scalar(t), *l))
        .collect();

    // Adam state per trainable layer.
    let mut adam: Vec<Option<AdamSlot<F>>> = model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv(c) => Some(AdamSlot {
                m_w: Array2::zeros(c.weights.dim()),
                v_w: Array2::zeros(c.weights.dim()),
                m_b: Array1::zeros(c.bias.len()),
                v_b: Array1::zeros(c.bias.len()),
            }),
            Layer::Dense(d) => Some(AdamSlot {
                m_w: Array2::zeros(d.weights.dim()),
                v_w: Array2::zeros(d.weights.dim()),
                m_b: Array1::zeros(d.bias.len()),
                v_b: Array1::zeros(d.bias.len()),
            }),
            _ => None,
        })
        .collect();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, epoch as u64, SHUFFLE_STREAM]));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            step += 1;
            // Forward/backward per sample in parallel; the dropout stream
            // of a sample depends only on (seed, epoch, batch, slot), so
            // scheduling cannot change results. Collection preserves order
            // and the reduction below is sequential, keeping float sums
            // bit-stable.
            let results: Vec<(f64, Vec<LayerGrad<F>>)> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let (x, label) = &samples[i];
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[
                        cfg.seed,
                        epoch as u64,
                        batch_idx as u64,
                        slot as u64,
                    ]));
                    let (logits, caches) =
                        model.run_layers(x.clone(), model.layers.len(), Some(&mut rng), true);
                    let probs = softmax(&logits.flat());
                    let loss = -probs[*label].to_f64().max(1e-300).ln();
                    let mut d_logits = probs;
                    d_logits[*label] = d_logits[*label] - F::one();
                    (loss, model.backward(&caches, d_logits))
                })
                .collect();

            let inv_n = F::from_f64(1.0 / batch.len() as f64);
            let mut mean_grads: Vec<LayerGrad<F>> = Vec::new();
            for (loss, grads) in results {
                epoch_loss += loss / batch.len() as f64;
                if mean_grads.is_empty() {
                    mean_grads = grads;
                } else {
                    for (acc, g) in mean_grads.iter_mut().zip(grads) {
                        if let (
                            LayerGrad::Tensors { dw: aw, db: ab },
                            LayerGrad::Tensors { dw, db },
                        ) = (acc, g)
                        {
                            ndarray::Zip::from(aw).and(&dw).for_each(|a, &g| *a = *a + g);
                            ndarray::Zip::from(ab).and(&db).for_each(|a, &g| *a = *a + g);
                        }
                    }
                }
            }

            // Adam update on the mean gradient.
            let (b1, b2) = (F::from_f64(cfg.beta1), F::from_f64(cfg.beta2));
            let one = F::one();
            let bc1 = F::from_f64(1.0 - cfg.beta1.powi(step as i32));
            let bc2 = F::from_f64(1.0 - cfg.beta2.powi(step as i32));
            let lr = F::from_f64(cfg.learning_rate);
            let eps = F::from_f64(cfg.epsilon);
            for ((layer, slot), grad) in model
                .layers
                .iter_mut()
                .zip(adam.iter_mut())
                .zip(mean_grads)
            {
                let LayerGrad::Tensors { mut dw, mut db } = grad else {
                    continue;
                };
                let Some(slot) = slot else { continue };
                dw.mapv_inplace(|v| v * inv_n);
                db.mapv_inplace(|v| v * inv_n);
                let (weights, bias) = match layer {
                    Layer::Conv(c) => (&mut c.weights, &mut c.bias),
                    Layer::Dense(d) => (&mut d.weights, &mut d.bias),
                    _ => unreachable!(),
                };
                ndarray::Zip::from(weights)
                    .and(&mut slot.m_w)
                    .and(&mut slot.v_w)
                    .and(&dw)
                    .for_each(|p, m, v, &g| {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let mhat = (*m / bc1).to_f64();
                        let vhat = (*v / bc2).to_f64();
                        *p = *p - lr * F::from_f64(mhat / (vhat.sqrt() + eps.to_f64()));
                    });
                ndarray::Zip::from(bias)
                    .and(&mut slot.m_b)
                    .and(&mut slot.v_b)
                    .and(&db)
                    .for_each(|p, m, v, &g| {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let mhat = (*m / bc1).to_f64();
                        let vhat = (*v / bc2).to_f64();
                        *p = *p - lr * F::from_f64(mhat / (vhat.sqrt() + eps.to_f64()));
                    });
            }
        }
        let n_batches = order.chunks(cfg.batch_size).len();
        epoch_losses.push(epoch_loss / n_batches as f64);
    }
    model.trained = true;
    Ok(TrainReport { epoch_losses })
}

// --- Feature extraction --------------------------------------------------------

/// The network cut after the 128-d dense+ReLU layer: an embedder for
/// one-class enrollment. Dropout never applies here.
pub struct FeatureExtractor<F> {
    model: CnnModel<F>,
    /// Index of the classification head (the layer the cut removes).
    head_idx: usize,
    feature_dim: usize,
}

impl<F: Scalar> FeatureExtractor<F> {
    /// Wraps a trained (or deliberately untrained) model. The model keeps
    /// its head; extraction simply stops before it.
    pub fn from_model(model: CnnModel<F>) -> Result<Self> {
        let head_idx = model
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense(_)))
            .ok_or_else(|| Error::InvalidParameter("model has no dense head".into()))?;
        let feature_dim = model.layers[..head_idx]
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.weights.ncols()),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidParameter("model has no embedding layer".into()))?;
        Ok(Self {
            model,
            head_idx,
            feature_dim,
        })
    }

    /// Embedding width (128 for the standard architecture).
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// True when the wrapped model never completed training. Extraction
    /// still works — random projections are occasionally useful as a
    /// baseline — but callers should surface the flag.
    pub fn is_from_untrained(&self) -> bool {
        !self.model.is_trained()
    }

    /// Borrows the wrapped model.
    pub fn model(&self) -> &CnnModel<F> {
        &self.model
    }

    /// Embeds one tensor.
    pub fn extract(&self, input: &Array3<f64>) -> Result<Vec<f64>> {
        self.model.check_input(input)?;
        let x = CnnModel::<F>::to_scalar(input);
        let (value, _) = self.model.run_layers(x, self.head_idx, None, false);
        Ok(value.flat().iter().map(|v| v.to_f64()).collect())
    }

    /// Embeds a batch into an `(n, feature_dim)` matrix.
    pub fn extract_batch(&self, inputs: &[Array3<f64>]) -> Result<Array2<f64>> {
        for t in inputs {
            self.model.check_input(t)?;
        }
        let rows: Vec<Vec<f64>> = inputs
            .par_iter()
            .map(|t| {
                let x = CnnModel::<F>::to_scalar(t);
                let (value, _) = self.model.run_layers(x, self.head_idx, None, false);
                value.flat().iter().map(|v| v.to_f64()).collect()
            })
            .collect();
        let mut out = Array2::zeros((inputs.len(), self.feature_dim));
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

// --- Checkpoints -----------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerSpec {
    Conv {
        kernel: [usize; 2],
        c_in: usize,
        c_out: usize,
        relu: bool,
    },
    Pool,
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        units_in: usize,
        units_out: usize,
        relu: bool,
    },
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    input_shape: [usize; 3],
    n_classes: usize,
    trained: bool,
    layers: Vec<LayerSpec>,
}

impl<F: Scalar> CnnModel<F> {
    /// Serializes the model: an 8-byte magic, a format version, a JSON
    /// layer manifest, then all weights as little-endian `f32` in layer
    /// order. `f64` models are narrowed.
    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = Manifest {
            input_shape: [self.input_shape.0, self.input_shape.1, self.input_shape.2],
            n_classes: self.n_classes,
            trained: self.trained,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(c) => LayerSpec::Conv {
                        kernel: [c.kernel.0, c.kernel.1],
                        c_in: c.c_in,
                        c_out: c.c_out,
                        relu: c.relu,
                    },
                    Layer::Pool(_) => LayerSpec::Pool,
                    Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
                    Layer::Flatten => LayerSpec::Flatten,
                    Layer::Dense(d) => LayerSpec::Dense {
                        units_in: d.weights.nrows(),
                        units_out: d.weights.ncols(),
                        relu: d.relu,
                    },
                })
                .collect(),
        };
        let manifest_bytes = serde_json::to_vec(&manifest)?;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(manifest_bytes.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&manifest_bytes);
        for v in self.flat_parameters() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Deserializes a model saved by [`Self::save`].
    pub fn load(path: &Path) -> Result<CnnModel<F>> {
        let bytes = std::fs::read(path)?;
        let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail("not a network checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(&format!("unsupported checkpoint version {version}")));
        }
        let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + mlen {
            return Err(fail("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + mlen])?;

        let mut layers: Vec<Layer<F>> = Vec::with_capacity(manifest.layers.len());
        for spec in &manifest.layers {
            layers.push(match *spec {
                LayerSpec::Conv {
                    kernel,
                    c_in,
                    c_out,
                    relu,
                } => Layer::Conv(ConvLayer {
                    weights: Array2::zeros((kernel[0] * kernel[1] * c_in, c_out)),
                    bias: Array1::zeros(c_out),
                    kernel: (kernel[0], kernel[1]),
                    c_in,
                    c_out,
                    relu,
                }),
                LayerSpec::Pool => Layer::Pool(PoolLayer),
                LayerSpec::Dropout { rate } => Layer::Dropout(DropoutLayer { rate }),
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense {
                    units_in,
                    units_out,
                    relu,
                } => Layer::Dense(DenseLayer {
                    weights: Array2::zeros((units_in, units_out)),
                    bias: Array1::zeros(units_out),
                    relu,
                }),
            });
        }
        let mut model = CnnModel {
            layers,
            input_shape: (
                manifest.input_shape[0],
                manifest.input_shape[1],
                manifest.input_shape[2],
            ),
            n_classes: manifest.n_classes,
            trained: manifest.trained,
        };
        let n_params = model.parameter_count();
        let blob = &bytes[16 + mlen..];
        if blob.len() != 4 * n_params {
            return Err(fail(&format!(
                "weight block holds {} values, manifest needs {n_params}",
                blob.len() / 4
            )));
        }
        let values: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        model.set_flat_parameters(&values)?;
        Ok(model)
    }
}
