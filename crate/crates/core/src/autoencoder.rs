//! Fully connected autoencoder codec with sigmoid units, trained by batch
//! gradient descent with validation-based early stopping.
//!
//! Batches are stored as matrix columns: an `n × B` matrix holds `B` samples.

use std::fmt::Debug;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, RealField};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::block::{Block, BLOCK_LEN};
use crate::codec::{BlockCodec, CodeVector, CodecKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AENC";
const VERSION: u32 = 1;
/// Hidden width between the block and the bottleneck.
pub const HIDDEN_WIDTH: usize = 512;

/// Floating-point types the network can run in.
pub trait Real: RealField + Copy + Debug {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Sigmoid),
            1 => Ok(Activation::Tanh),
            _ => Err(Error::Format(format!("unknown activation tag {tag}"))),
        }
    }

    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output<T: Real>(self, a: T) -> T {
        match self {
            Activation::Sigmoid => a * (T::one() - a),
            Activation::Tanh => T::one() - a * a,
        }
    }
}

/// One affine map followed by an activation; `weights` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Real> {
    pub weights: DMatrix<T>,
    pub biases: DVector<T>,
    pub activation: Activation,
}

impl<T: Real> Layer<T> {
    fn forward(&self, input: &DMatrix<T>) -> DMatrix<T> {
        let mut z = &self.weights * input;
        for mut col in z.column_iter_mut() {
            col += &self.biases;
        }
        let act = self.activation;
        z.apply(|v| *v = act.apply(*v));
        z
    }
}

/// Parameter-shaped gradient: `(d weights, d biases)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient<T: Real> {
    pub layers: Vec<(DMatrix<T>, DVector<T>)>,
}

impl<T: Real> Gradient<T> {
    fn zeros_like(net: &Autoencoder<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                        DVector::zeros(l.biases.len()),
                    )
                })
                .collect(),
        }
    }

    /// Entry `i` in the flat parameter order of [`Autoencoder::param`].
    pub fn get(&self, i: usize) -> T {
        let (l, slot) = locate(self.layers.iter().map(|(w, b)| (w.len(), b.len())), i);
        match slot {
            Slot::Weight(j) => self.layers[l].0[j],
            Slot::Bias(j) => self.layers[l].1[j],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0, |m, v| m.max(v.to_f64().abs()))
    }
}

enum Slot {
    Weight(usize),
    Bias(usize),
}

/// Maps a flat parameter index to `(layer, slot)`; weights precede biases.
fn locate(sizes: impl Iterator<Item = (usize, usize)>, mut i: usize) -> (usize, Slot) {
    for (l, (nw, nb)) in sizes.enumerate() {
        if i < nw {
            return (l, Slot::Weight(i));
        }
        i -= nw;
        if i < nb {
            return (l, Slot::Bias(i));
        }
        i -= nb;
    }
    panic!("parameter index out of range");
}

/// Symmetric encoder/decoder MLP; the code is read at the middle layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder<T: Real> {
    sizes: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// The block codec form, with single-precision parameters.
pub type MlpAutoencoder = Autoencoder<f32>;

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 3 || sizes.len() % 2 == 0 {
        return Err(Error::Config(format!(
            "layer sizes {sizes:?} must list an odd number (at least 3) of widths"
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(format!(
            "layer sizes {sizes:?} contain a zero width"
        )));
    }
    if sizes.iter().ne(sizes.iter().rev()) {
        return Err(Error::Config(format!(
            "layer sizes {sizes:?} are not symmetric"
        )));
    }
    Ok(())
}

/// `[4096, 512, d, 512, 4096]`.
pub fn block_layer_sizes(code_len: usize) -> Vec<usize> {
    vec![BLOCK_LEN, HIDDEN_WIDTH, code_len, HIDDEN_WIDTH, BLOCK_LEN]
}

impl<T: Real> Autoencoder<T> {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero,
    /// sigmoid on every layer.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut weights = DMatrix::zeros(fan_out, fan_in);
                for r in 0..fan_out {
                    for c in 0..fan_in {
                        weights[(r, c)] = <T as Real>::from_f64(rng.random_range(-bound..=bound));
                    }
                }
                Layer {
                    weights,
                    biases: DVector::zeros(fan_out),
                    activation: Activation::Sigmoid,
                }
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    /// All parameters zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::zeros(w[1], w[0]),
                biases: DVector::zeros(w[1]),
                activation: Activation::Sigmoid,
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    /// Builds a network from explicit layers, checking shapes and finiteness.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        let mut sizes = Vec::with_capacity(layers.len() + 1);
        for (i, l) in layers.iter().enumerate() {
            if i == 0 {
                sizes.push(l.weights.ncols());
            } else if l.weights.ncols() != sizes[i] {
                return Err(Error::Codec(format!("layer {i} input width mismatch")));
            }
            if l.biases.len() != l.weights.nrows() {
                return Err(Error::Codec(format!("layer {i} bias length mismatch")));
            }
            sizes.push(l.weights.nrows());
        }
        check_sizes(&sizes).map_err(|e| Error::Codec(e.to_string()))?;
        let net = Self { sizes, layers };
        if !net.all_finite() {
            return Err(Error::Codec("non-finite network parameter".into()));
        }
        Ok(net)
    }

    /// Replaces the activation of the reconstruction layer.
    pub fn with_output_activation(mut self, activation: Activation) -> Self {
        self.layers
            .last_mut()
            .expect("at least two layers")
            .activation = activation;
        self
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().expect("at least two layers").activation
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn code_len(&self) -> usize {
        self.sizes[self.sizes.len() / 2]
    }

    fn encoder_depth(&self) -> usize {
        self.layers.len() / 2
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights
                .iter()
                .chain(l.biases.iter())
                .all(|v| v.is_finite())
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn param_sizes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layers
            .iter()
            .map(|l| (l.weights.len(), l.biases.len()))
    }

    /// Parameter `i` in flat order: per layer, weights (column-major) then biases.
    pub fn param(&self, i: usize) -> T {
        match locate(self.param_sizes(), i) {
            (l, Slot::Weight(j)) => self.layers[l].weights[j],
            (l, Slot::Bias(j)) => self.layers[l].biases[j],
        }
    }

    pub fn set_param(&mut self, i: usize, v: T) {
        match locate(self.param_sizes(), i) {
            (l, Slot::Weight(j)) => self.layers[l].weights[j] = v,
            (l, Slot::Bias(j)) => self.layers[l].biases[j] = v,
        }
    }

    /// Activations of every layer for a batch; the last entry is the reconstruction.
    pub fn forward_all(&self, input: &DMatrix<T>) -> Vec<DMatrix<T>> {
        let mut acts: Vec<DMatrix<T>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let next = l.forward(acts.last().unwrap_or(input));
            acts.push(next);
        }
        acts
    }

    pub fn encode_batch(&self, input: &DMatrix<T>) -> DMatrix<T> {
        let mut a = input.clone();
        for l in &self.layers[..self.encoder_depth()] {
            a = l.forward(&a);
        }
        a
    }

    pub fn decode_batch(&self, codes: &DMatrix<T>) -> DMatrix<T> {
        let mut a = codes.clone();
        for l in &self.layers[self.encoder_depth()..] {
            a = l.forward(&a);
        }
        a
    }

    pub fn reconstruct_batch(&self, input: &DMatrix<T>) -> DMatrix<T> {
        self.decode_batch(&self.encode_batch(input))
    }

    /// Mean squared reconstruction error of `input` against `target`, per element.
    pub fn mse(&self, input: &DMatrix<T>, target: &DMatrix<T>) -> f64 {
        let out = self.reconstruct_batch(input);
        mean_squared(&out, target)
    }

    /// Mean squared error over all batch elements and its exact gradient.
    pub fn loss_and_gradient(&self, input: &DMatrix<T>, target: &DMatrix<T>) -> (f64, Gradient<T>) {
        assert!(input.ncols() > 0, "empty batch");
        assert_eq!(input.ncols(), target.ncols());
        let acts = self.forward_all(input);
        let out = acts.last().expect("at least one layer");
        let loss = mean_squared(out, target);
        let scale = <T as Real>::from_f64(2.0 / out.len() as f64);
        let mut delta: DMatrix<T> = (out - target) * scale;
        let mut grad = Gradient::zeros_like(self);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a = &acts[l];
            let act = layer.activation;
            delta.zip_apply(a, |d, a| *d *= act.derivative_from_output(a));
            let prev = if l == 0 { input } else { &acts[l - 1] };
            grad.layers[l].0 = &delta * prev.transpose();
            grad.layers[l].1 = delta.column_sum();
            if l > 0 {
                delta = layer.weights.transpose() * &delta;
            }
        }
        (loss, grad)
    }

    /// `θ ← θ - lr · g`.
    pub fn apply_gradient(&mut self, grad: &Gradient<T>, lr: T) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grad.layers) {
            layer.weights.zip_apply(gw, |w, g| *w -= lr * g);
            layer.biases.zip_apply(gb, |b, g| *b -= lr * g);
        }
    }
}

fn mean_squared<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Packs samples as the columns of a matrix.
pub fn batch_matrix<S: AsRef<[f32]>>(samples: &[S]) -> DMatrix<f32> {
    let n = samples.first().map_or(0, |s| s.as_ref().len());
    DMatrix::from_iterator(
        n,
        samples.len(),
        samples.iter().flat_map(|s| s.as_ref().iter().copied()),
    )
}

impl MlpAutoencoder {
    /// The `[4096, 512, d, 512, 4096]` block network.
    pub fn for_blocks(code_len: usize, seed: u64) -> Result<Self> {
        Self::init(&block_layer_sizes(code_len), seed)
    }

    fn check_block_net(&self) -> Result<()> {
        if self.input_len() != BLOCK_LEN {
            return Err(Error::Codec(format!(
                "network input width {} is not a block ({BLOCK_LEN})",
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Code and reconstruction of one block.
    pub fn forward(&self, block: &Block) -> Result<(CodeVector, Block)> {
        let code = self.encode(block)?;
        let recon = self.decode(&code)?;
        Ok((code, recon))
    }

    /// Decoder output without clamping; lies in (-1, 1) for a tanh output layer.
    pub fn decode_raw(&self, code: &CodeVector) -> Result<Vec<f32>> {
        self.check_block_net()?;
        self.check_code(code)?;
        let codes = DMatrix::from_column_slice(code.len(), 1, &code.values);
        let out = self.decode_batch(&codes);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite decoder output".into()));
        }
        Ok(out.as_slice().to_vec())
    }

    /// Encodes a raw sample of input width (blocks or residuals).
    pub fn encode_values(&self, values: &[f32]) -> Result<CodeVector> {
        if values.len() != self.input_len() {
            return Err(Error::Codec(format!(
                "sample of {} values for a network of input width {}",
                values.len(),
                self.input_len()
            )));
        }
        let input = DMatrix::from_column_slice(values.len(), 1, values);
        let code = self.encode_batch(&input);
        if code.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite code".into()));
        }
        Ok(CodeVector::new(
            CodecKind::Autoencoder,
            code.as_slice().to_vec(),
        ))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        binio::write_magic(w, MAGIC, VERSION)?;
        binio::write_u32(w, self.sizes.len() as u32)?;
        for &s in &self.sizes {
            binio::write_u32(w, s as u32)?;
        }
        for l in &self.layers {
            binio::write_u8(w, l.activation.tag())?;
        }
        for l in &self.layers {
            let mut row_major = Vec::with_capacity(l.weights.len());
            for r in 0..l.weights.nrows() {
                row_major.extend(l.weights.row(r).iter().copied());
            }
            binio::write_f32s(w, &row_major)?;
            binio::write_f32s(w, l.biases.as_slice())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        binio::read_magic(r, MAGIC, VERSION)?;
        let count = binio::read_u32(r)? as usize;
        if !(3..=64).contains(&count) {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            let s = binio::read_u32(r)? as usize;
            if s == 0 || s > 1 << 20 {
                return Err(Error::Format(format!("implausible layer width {s}")));
            }
            sizes.push(s);
        }
        check_sizes(&sizes).map_err(|e| Error::Format(e.to_string()))?;
        let mut activations = Vec::with_capacity(count - 1);
        for _ in 0..count - 1 {
            activations.push(Activation::from_tag(binio::read_u8(r)?)?);
        }
        let mut layers = Vec::with_capacity(count - 1);
        for (w, activation) in sizes.windows(2).zip(activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = binio::read_f32s(r, fan_in * fan_out)?;
            let biases = binio::read_f32s(r, fan_out)?;
            layers.push(Layer {
                weights: DMatrix::from_row_slice(fan_out, fan_in, &weights),
                biases: DVector::from_vec(biases),
                activation,
            });
        }
        Self::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
    }
}

impl BlockCodec for MlpAutoencoder {
    fn kind(&self) -> CodecKind {
        CodecKind::Autoencoder
    }

    fn code_len(&self) -> usize {
        Autoencoder::code_len(self)
    }

    fn encode(&self, block: &Block) -> Result<CodeVector> {
        self.check_block_net()?;
        self.encode_values(block.values())
    }

    /// The reconstruction, clamped into `[0, 1]` (a no-op for sigmoid output).
    fn decode(&self, code: &CodeVector) -> Result<Block> {
        Block::from_clamped(self.decode_raw(code)?)
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Samples per gradient step.
    pub batch_size: usize,
    /// Fractions of the data used for training and validation; the rest is the test split.
    pub train_fraction: f64,
    pub validation_fraction: f64,
    /// Step size on the gradient of the per-sample summed squared error.
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without sufficient validation improvement before stopping.
    pub patience: usize,
    /// Validation MSE must drop below `best * (1 - min_relative_improvement)` to count.
    pub min_relative_improvement: f64,
    /// Heavy-ball momentum coefficient; 0 is plain gradient descent.
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 500,
            train_fraction: 0.75,
            validation_fraction: 0.125,
            learning_rate: 0.1,
            max_epochs: 500,
            patience: 20,
            min_relative_improvement: 1e-4,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.train_fraction > 0.0
            && self.validation_fraction > 0.0
            && self.train_fraction + self.validation_fraction <= 1.0
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.max_epochs > 0
            && self.patience > 0
            && self.min_relative_improvement >= 0.0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid training configuration {self:?}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch (before each step).
    pub train_mse: f64,
    pub validation_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Entry 0 is the untrained network.
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_validation_mse: f64,
    pub test_mse: f64,
    pub stopped_early: bool,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
}

impl TrainReport {
    pub fn initial_validation_mse(&self) -> f64 {
        self.curve[0].validation_mse
    }
}

/// Index split into `(train, validation, test)` after a seeded shuffle.
pub fn split_indices(m: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_train = ((cfg.train_fraction * m as f64).round() as usize).min(m);
    let n_val = ((cfg.validation_fraction * m as f64).round() as usize).min(m - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    (idx, val, test)
}

/// Trains the network to reproduce its input.
///
/// Every batch of `batch_size` training samples yields one step along the
/// batch-averaged gradient. Returns the parameters of the epoch with the
/// lowest validation error.
pub fn train<S: AsRef<[f32]>>(
    net: &MlpAutoencoder,
    samples: &[S],
    cfg: &TrainConfig,
) -> Result<(MlpAutoencoder, TrainReport)> {
    cfg.validate()?;
    if samples.iter().any(|s| s.as_ref().len() != net.input_len()) {
        return Err(Error::Config(format!(
            "training samples must have {} values",
            net.input_len()
        )));
    }
    let (train_idx, val_idx, test_idx) = split_indices(samples.len(), cfg);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Config(format!(
            "{} samples leave an empty training or validation split",
            samples.len()
        )));
    }
    let gather = |idx: &[usize]| -> DMatrix<f32> {
        let picked: Vec<&[f32]> = idx.iter().map(|&i| samples[i].as_ref()).collect();
        batch_matrix(&picked)
    };
    let validation = gather(&val_idx);
    let test = gather(&test_idx);
    let eval = |n: &MlpAutoencoder, data: &DMatrix<f32>| -> f64 {
        if data.ncols() == 0 {
            return f64::NAN;
        }
        let mut sum = 0.0;
        let cols = cfg.batch_size.max(1);
        let mut start = 0;
        while start < data.ncols() {
            let len = cols.min(data.ncols() - start);
            let chunk = data.columns(start, len).into_owned();
            sum += n.mse(&chunk, &chunk) * len as f64;
            start += len;
        }
        sum / data.ncols() as f64
    };

    let mut current = net.clone();
    let mut best = net.clone();
    let init_val = eval(&current, &validation);
    if !init_val.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            loss: init_val,
        });
    }
    let mut curve = vec![EpochStats {
        epoch: 0,
        train_mse: f64::NAN,
        validation_mse: init_val,
    }];
    let mut best_val = init_val;
    let mut best_epoch = 0;
    let mut reference = init_val;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut order = train_idx.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let scale = net.sizes().last().copied().unwrap_or(1) as f64;
    let lr = (cfg.learning_rate * scale) as f32;
    let mut velocity: Option<Gradient<f32>> = None;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = gather(chunk);
            let (loss, grad) = current.loss_and_gradient(&batch, &batch);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            if cfg.momentum > 0.0 {
                let mu = cfg.momentum as f32;
                let v = velocity.get_or_insert_with(|| Gradient::zeros_like(&current));
                for ((vw, vb), (gw, gb)) in v.layers.iter_mut().zip(&grad.layers) {
                    vw.zip_apply(gw, |v, g| *v = mu * *v + g);
                    vb.zip_apply(gb, |v, g| *v = mu * *v + g);
                }
                current.apply_gradient(v, lr);
            } else {
                current.apply_gradient(&grad, lr);
            }
        }
        let train_mse = loss_sum / order.len() as f64;
        let val = eval(&current, &validation);
        if !val.is_finite() || !current.all_finite() {
            return Err(Error::Diverged { epoch, loss: val });
        }
        log::debug!("epoch {epoch}: train {train_mse:.6e} validation {val:.6e}");
        curve.push(EpochStats {
            epoch,
            train_mse,
            validation_mse: val,
        });
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best = current.clone();
        }
        if val < reference * (1.0 - cfg.min_relative_improvement) {
            reference = val;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let test_mse = eval(&best, &test);
    log::info!(
        "training finished: best validation {best_val:.6e} at epoch {best_epoch} of {}",
        curve.len() - 1
    );
    let report = TrainReport {
        curve,
        best_epoch,
        best_validation_mse: best_val,
        test_mse,
        stopped_early,
        train_count: train_idx.len(),
        validation_count: val_idx.len(),
        test_count: test_idx.len(),
    };
    Ok((best, report))
}
