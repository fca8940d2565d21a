//! Small dense feed-forward classifiers: ReLU hidden layers, softmax output,
//! minibatch SGD on mean cross-entropy, and the weight-space operations used
//! for bucketing (per-neuron distance, coordinate-wise averaging).

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, tags};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArchitecture("input_dim must be positive".into()));
        }
        if hidden_layers.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArchitecture("hidden layer widths must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArchitecture("need at least two classes".into()));
        }
        Ok(Self {
            input_dim,
            hidden_layers,
            num_classes,
        })
    }

    /// One hidden layer of 10 units.
    pub fn ann(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(input_dim, vec![10], num_classes)
    }

    /// Three hidden layers of 10, 20 and 10 units.
    pub fn dnn(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(input_dim, vec![10, 20, 10], num_classes)
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_layers.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_layers);
        w.push(self.num_classes);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| (p[0] + 1) * p[1]).sum()
    }
}

/// Dense layer with a row-major `fan_out × fan_in` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![T::zero(); fan_in * fan_out],
            bias: vec![T::zero(); fan_out],
        }
    }

    /// Incoming weights of neuron `j`.
    pub fn row(&self, j: usize) -> &[T] {
        &self.weights[j * self.fan_in..(j + 1) * self.fan_in]
    }

    fn affine(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend((0..self.fan_out).map(|j| {
            self.row(j)
                .iter()
                .zip(input)
                .fold(self.bias[j], |acc, (&w, &x)| acc + w * x)
        }));
    }
}

/// All weights and biases of one network, layer-ordered.
///
/// The flat parameter order used by gradients is, per layer, the weight matrix
/// row by row followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    arch: Architecture,
    layers: Vec<Layer<T>>,
    init_seed: u64,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .widths()
            .windows(2)
            .map(|p| Layer::zeros(p[0], p[1]))
            .collect();
        Self {
            arch: arch.clone(),
            layers,
            init_seed: 0,
        }
    }

    /// Builds a model from explicit layers, checking shapes against `arch`.
    pub fn from_layers(arch: &Architecture, layers: Vec<Layer<T>>, init_seed: u64) -> Result<Self> {
        let widths = arch.widths();
        if layers.len() != widths.len() - 1 {
            return Err(Error::InvalidArchitecture(format!(
                "expected {} layers, got {}",
                widths.len() - 1,
                layers.len()
            )));
        }
        for (l, (layer, p)) in layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.fan_in != p[0]
                || layer.fan_out != p[1]
                || layer.weights.len() != p[0] * p[1]
                || layer.bias.len() != p[1]
            {
                return Err(Error::InvalidArchitecture(format!("layer {l} has the wrong shape")));
            }
        }
        let model = Self {
            arch: arch.clone(),
            layers,
            init_seed,
        };
        if !model.is_finite() {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(model)
    }

    /// Rebuilds a model from a flat parameter vector in gradient order.
    pub fn from_flat(arch: &Architecture, flat: &[T], init_seed: u64) -> Result<Self> {
        if flat.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                got: flat.len(),
            });
        }
        let mut model = Self::zeros(arch);
        model.init_seed = init_seed;
        let mut it = flat.iter().copied();
        for layer in &mut model.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(model)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// `self += scale * direction`, with `direction` in flat gradient order.
    pub fn add_scaled(&mut self, direction: &[T], scale: T) {
        debug_assert_eq!(direction.len(), self.param_count());
        let mut it = direction.iter();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w += scale * *it.next().unwrap();
            }
        }
    }
}

/// Seeded initialization: weights uniform in `±1/√fan_in`, biases zero.
pub fn init_model<T: Scalar>(arch: &Architecture, seed: u64) -> ModelParams<T> {
    let mut rng = rng_from(derive_seed(seed, tags::INIT));
    let mut model = ModelParams::zeros(arch);
    model.init_seed = seed;
    for layer in &mut model.layers {
        let bound = 1.0 / (layer.fan_in as f64).sqrt();
        for w in &mut layer.weights {
            *w = T::of(rng.random_range(-bound..=bound));
        }
    }
    model
}

fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Class probabilities for one feature vector.
pub fn forward<T: Scalar>(model: &ModelParams<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != model.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.arch.input_dim,
            got: x.len(),
        });
    }
    let last = model.layers.len() - 1;
    let mut current = x.to_vec();
    let mut next = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        layer.affine(&current, &mut next);
        if l < last {
            next.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        std::mem::swap(&mut current, &mut next);
    }
    softmax_in_place(&mut current);
    Ok(current)
}

/// Cross-entropy loss and its gradient (flat order) for a single example.
///
/// The gradient is accumulated into `grad` scaled by `weight`.
fn backprop_into<T: Scalar>(
    model: &ModelParams<T>,
    x: &[T],
    label: usize,
    weight: T,
    grad: &mut [T],
) -> T {
    let layers = &model.layers;
    let last = layers.len() - 1;

    // activations[l] is the input to layer l; pre[l] its pre-activation output.
    let mut activations: Vec<Vec<T>> = Vec::with_capacity(layers.len() + 1);
    let mut pre: Vec<Vec<T>> = Vec::with_capacity(layers.len());
    activations.push(x.to_vec());
    for (l, layer) in layers.iter().enumerate() {
        let mut z = Vec::with_capacity(layer.fan_out);
        layer.affine(&activations[l], &mut z);
        let a = if l < last {
            z.iter().map(|v| v.max(T::zero())).collect()
        } else {
            let mut p = z.clone();
            softmax_in_place(&mut p);
            p
        };
        pre.push(z);
        activations.push(a);
    }

    let probs = &activations[layers.len()];
    let loss = -probs[label].max(T::min_positive_value()).ln();

    let mut delta: Vec<T> = probs.clone();
    delta[label] -= T::one();

    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for layer in layers {
        offsets.push(off);
        off += layer.weights.len() + layer.bias.len();
    }

    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let input = &activations[l];
        let base = offsets[l];
        for (j, &d) in delta.iter().enumerate() {
            let dw = d * weight;
            let row = &mut grad[base + j * layer.fan_in..base + (j + 1) * layer.fan_in];
            for (g, &a) in row.iter_mut().zip(input) {
                *g += dw * a;
            }
            grad[base + layer.weights.len() + j] += dw;
        }
        if l > 0 {
            let below = &pre[l - 1];
            let mut prev = vec![T::zero(); layer.fan_in];
            for (j, &d) in delta.iter().enumerate() {
                for (p, &w) in prev.iter_mut().zip(layer.row(j)) {
                    *p += w * d;
                }
            }
            for (p, &z) in prev.iter_mut().zip(below) {
                if z <= T::zero() {
                    *p = T::zero();
                }
            }
            delta = prev;
        }
    }
    loss
}

/// Cross-entropy loss and gradient for a single example.
pub fn example_gradient<T: Scalar>(
    model: &ModelParams<T>,
    x: &[T],
    label: usize,
) -> Result<(T, Vec<T>)> {
    check_example(model, x, label)?;
    let mut grad = vec![T::zero(); model.param_count()];
    let loss = backprop_into(model, x, label, T::one(), &mut grad);
    Ok((loss, grad))
}

/// Mean cross-entropy and its gradient over the rows `indices` of `data`.
pub fn batch_gradient<T: Scalar>(
    model: &ModelParams<T>,
    data: &LabeledDataset<T>,
    indices: &[usize],
) -> Result<(T, Vec<T>)> {
    if indices.is_empty() {
        return Err(Error::Empty("minibatch"));
    }
    let weight = T::one() / T::of_usize(indices.len());
    let mut grad = vec![T::zero(); model.param_count()];
    let mut loss = T::zero();
    for &i in indices {
        let (x, y) = (data.row(i), data.labels[i]);
        check_example(model, x, y)?;
        loss += backprop_into(model, x, y, weight, &mut grad) * weight;
    }
    Ok((loss, grad))
}

/// Mean cross-entropy of `model` over the whole dataset.
pub fn mean_loss<T: Scalar>(model: &ModelParams<T>, data: &LabeledDataset<T>) -> Result<T> {
    let mut total = T::zero();
    for i in 0..data.len() {
        let p = forward(model, data.row(i))?;
        total += -p[data.labels[i]].max(T::min_positive_value()).ln();
    }
    Ok(total / T::of_usize(data.len().max(1)))
}

fn check_example<T: Scalar>(model: &ModelParams<T>, x: &[T], label: usize) -> Result<()> {
    if x.len() != model.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.arch.input_dim,
            got: x.len(),
        });
    }
    if label >= model.arch.num_classes {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: model.arch.num_classes,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 10,
            learning_rate: 0.1,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Minibatches per epoch for `n` records.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size.max(1))
    }

    pub fn with_seed(&self, shuffle_seed: u64) -> Self {
        Self {
            shuffle_seed,
            ..self.clone()
        }
    }

    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Empty("training set"));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::InvalidParameter(format!(
                "batch_size {} must be in 1..={n}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Minibatch SGD where each mean minibatch gradient passes through
/// `transform` before the step. The shuffle order depends only on
/// `cfg.shuffle_seed`, so two runs with different transforms see identical batches.
pub(crate) fn sgd_with<T: Scalar, F>(
    model: &ModelParams<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
    mut transform: F,
) -> Result<ModelParams<T>>
where
    F: FnMut(&mut Vec<T>),
{
    cfg.validate(data.len())?;
    if data.dim() != model.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.arch.input_dim,
            got: data.dim(),
        });
    }
    let mut rng = rng_from(derive_seed(cfg.shuffle_seed, tags::SHUFFLE));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut out = model.clone();
    let step = T::of(-cfg.learning_rate);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grad) = batch_gradient(&out, data, idx)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            transform(&mut grad);
            out.add_scaled(&grad, step);
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("trained parameters"));
    }
    Ok(out)
}

/// Plain minibatch SGD on mean cross-entropy. Returns an updated copy.
pub fn train<T: Scalar>(
    model: &ModelParams<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
) -> Result<ModelParams<T>> {
    sgd_with(model, data, cfg, |_| {})
}

/// Largest per-neuron Euclidean distance between two models.
///
/// Each neuron is compared by its incoming-weight row concatenated with its
/// bias; neurons are aligned by position.
pub fn model_distance<T: Scalar>(a: &ModelParams<T>, b: &ModelParams<T>) -> Result<T> {
    if a.arch != b.arch {
        return Err(Error::ArchitectureMismatch);
    }
    let mut worst = T::zero();
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        for j in 0..la.fan_out {
            let db = la.bias[j] - lb.bias[j];
            let sq = la
                .row(j)
                .iter()
                .zip(lb.row(j))
                .fold(db * db, |acc, (&x, &y)| acc + (x - y) * (x - y));
            worst = worst.max(sq.sqrt());
        }
    }
    Ok(worst)
}

/// Coordinate-wise arithmetic mean of every weight and bias.
pub fn mean_models<T: Scalar>(models: &[ModelParams<T>]) -> Result<ModelParams<T>> {
    let first = models.first().ok_or(Error::Empty("model list"))?;
    if models.iter().any(|m| m.arch != first.arch) {
        return Err(Error::ArchitectureMismatch);
    }
    let scale = T::one() / T::of_usize(models.len());
    let mut out = ModelParams::zeros(&first.arch);
    out.init_seed = first.init_seed;
    for (l, layer) in out.layers.iter_mut().enumerate() {
        for m in models {
            let src = &m.layers[l];
            for (o, &v) in layer.weights.iter_mut().zip(&src.weights) {
                *o += v;
            }
            for (o, &v) in layer.bias.iter_mut().zip(&src.bias) {
                *o += v;
            }
        }
        layer.weights.iter_mut().for_each(|v| *v *= scale);
        layer.bias.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}
