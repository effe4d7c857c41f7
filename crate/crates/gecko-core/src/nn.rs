//! Full-precision multilayer perceptrons with manual backpropagation.
//!
//! Hidden layers use the rectifier; the output layer is a softmax over
//! class logits. Training is plain minibatch SGD, single-threaded and
//! bit-deterministic for a given [`TrainConfig`]: shuffling and weight
//! init both draw from [`SeededRng`] and nothing else introduces
//! randomness.

use crate::compress::PruneMask;
use crate::counters::OpCounters;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::FloatTensor2D;

/// Floor probability for `log` in cross-entropy, keeping losses finite.
pub const LOG_FLOOR: f64 = 1e-12;

/// Shape and kind of one weight layer, for efficiency accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerInfo {
    pub in_dim: usize,
    pub out_dim: usize,
    /// True for sign-packed layers, false for full-precision ones.
    pub binary: bool,
}

/// Anything that maps feature rows to posterior rows.
pub trait Classifier<T: Scalar> {
    /// Posterior matrix for a batch; rows sum to 1.
    fn posteriors(&self, x: &FloatTensor2D<T>) -> Result<FloatTensor2D<T>> {
        let mut scratch = OpCounters::new();
        self.posteriors_counted(x, &mut scratch)
    }

    /// Same, charging MAC/XNOR counts to the caller's counters.
    fn posteriors_counted(
        &self,
        x: &FloatTensor2D<T>,
        counters: &mut OpCounters,
    ) -> Result<FloatTensor2D<T>>;

    /// Weight layers in forward order.
    fn layer_info(&self) -> Vec<LayerInfo>;
}

/// One fully connected layer: `in x out` weights plus a `1 x out` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Scalar> {
    pub(crate) weights: FloatTensor2D<T>,
    pub(crate) bias: FloatTensor2D<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: FloatTensor2D<T>, bias: FloatTensor2D<T>) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weights.cols() {
            return Err(Error::shape(format!(
                "bias {}x{} does not fit weights {}x{}",
                bias.rows(),
                bias.cols(),
                weights.rows(),
                weights.cols()
            )));
        }
        Ok(DenseLayer { weights, bias })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        DenseLayer {
            weights: FloatTensor2D::uniform(in_dim, out_dim, -bound, bound, rng),
            bias: FloatTensor2D::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &FloatTensor2D<T> {
        &self.weights
    }

    pub fn bias(&self) -> &FloatTensor2D<T> {
        &self.bias
    }

    fn affine(&self, x: &FloatTensor2D<T>, counters: &mut OpCounters) -> Result<FloatTensor2D<T>> {
        x.matmul_counted(&self.weights, counters)?.add_row(&self.bias)
    }
}

/// Fully connected network: rectifier hidden layers, softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T: Scalar> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> MlpModel<T> {
    /// Initialize from a dimension chain `[in, h1, ..., classes]`.
    pub fn init(dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::domain(format!(
                "architecture {dims:?} needs at least input and output dims"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::domain(format!("architecture {dims:?} has a zero dim")));
        }
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], rng))
            .collect();
        Ok(MlpModel { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("model needs at least one layer".to_string()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(MlpModel { layers })
    }

    /// Dimension chain `[in, h1, ..., classes]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim()));
        dims
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Forward pass to posteriors.
    pub fn forward(&self, x: &FloatTensor2D<T>) -> Result<FloatTensor2D<T>> {
        self.posteriors(x)
    }

    /// Forward pass keeping per-layer pre-activations and activations
    /// (`acts[0]` is the input batch) for backpropagation.
    fn forward_cached(
        &self,
        x: &FloatTensor2D<T>,
    ) -> Result<(Vec<FloatTensor2D<T>>, Vec<FloatTensor2D<T>>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input dim {} does not match model input {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut counters = OpCounters::new();
        let mut acts = vec![x.clone()];
        let mut zs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(acts.last().unwrap(), &mut counters)?;
            if i + 1 < self.layers.len() {
                acts.push(relu(&z));
            }
            zs.push(z);
        }
        Ok((acts, zs))
    }
}

impl<T: Scalar> Classifier<T> for MlpModel<T> {
    fn posteriors_counted(
        &self,
        x: &FloatTensor2D<T>,
        counters: &mut OpCounters,
    ) -> Result<FloatTensor2D<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input dim {} does not match model input {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&h, counters)?;
            h = if i + 1 < self.layers.len() { relu(&z) } else { z };
        }
        Ok(softmax(&h))
    }

    fn layer_info(&self) -> Vec<LayerInfo> {
        self.layers
            .iter()
            .map(|l| LayerInfo {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                binary: false,
            })
            .collect()
    }
}

/// Elementwise rectifier.
pub(crate) fn relu<T: Scalar>(z: &FloatTensor2D<T>) -> FloatTensor2D<T> {
    z.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Row-wise softmax with max-shift; normalizer accumulated with Kahan
/// compensation so row sums stay within 1e-6 of one in f32 too.
pub fn softmax<T: Scalar>(logits: &FloatTensor2D<T>) -> FloatTensor2D<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        let mut comp = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            let y = *v - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// One-hot rows for integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], num_classes: usize) -> Result<FloatTensor2D<T>> {
    let mut out = FloatTensor2D::zeros(labels.len(), num_classes);
    for (r, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::domain(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        out.set(r, l, T::one());
    }
    Ok(out)
}

/// Mean cross-entropy between row-stochastic predictions and targets
/// (one-hot or soft), with `log` clamped at [`LOG_FLOOR`].
pub fn cross_entropy<T: Scalar>(pred: &FloatTensor2D<T>, target: &FloatTensor2D<T>) -> Result<f64> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    if pred.rows() == 0 {
        return Err(Error::domain("cross entropy over empty batch".to_string()));
    }
    let floor = T::from_f64_c(LOG_FLOOR);
    let mut total = 0.0;
    for r in 0..pred.rows() {
        for (&p, &t) in pred.row(r).iter().zip(target.row(r).iter()) {
            if t != T::zero() {
                total -= (t * p.max(floor).ln()).to_f64_c();
            }
        }
    }
    Ok(total / pred.rows() as f64)
}

/// Index of the row maximum; ties break to the lowest index.
pub fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-layer gradients of the mean cross-entropy loss.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub layers: Vec<LayerGradient<T>>,
}

#[derive(Debug, Clone)]
pub struct LayerGradient<T: Scalar> {
    pub weights: FloatTensor2D<T>,
    pub bias: FloatTensor2D<T>,
}

/// Gradient of mean cross-entropy w.r.t. every weight and bias.
///
/// `target` rows may be one-hot or soft; they must be row-stochastic.
pub fn backward<T: Scalar>(
    model: &MlpModel<T>,
    x: &FloatTensor2D<T>,
    target: &FloatTensor2D<T>,
) -> Result<Gradients<T>> {
    let (acts, zs) = model.forward_cached(x)?;
    let probs = softmax(zs.last().unwrap());
    if target.rows() != probs.rows() || target.cols() != probs.cols() {
        return Err(Error::shape(format!(
            "target {}x{} vs output {}x{}",
            target.rows(),
            target.cols(),
            probs.rows(),
            probs.cols()
        )));
    }
    let inv_n = T::one() / T::from_f64_c(x.rows() as f64);

    // dL/dlogits for softmax + cross-entropy.
    let mut delta = FloatTensor2D::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        for c in 0..probs.cols() {
            delta.set(r, c, (probs.get(r, c) - target.get(r, c)) * inv_n);
        }
    }

    let mut grads: Vec<LayerGradient<T>> = Vec::with_capacity(model.layers.len());
    for k in (0..model.layers.len()).rev() {
        let dw = acts[k].t_matmul(&delta)?;
        let db = delta.col_sums();
        if k > 0 {
            let da = delta.matmul_t(&model.layers[k].weights)?;
            let z = &zs[k - 1];
            let mut next = da;
            for r in 0..next.rows() {
                for c in 0..next.cols() {
                    if z.get(r, c) <= T::zero() {
                        next.set(r, c, T::zero());
                    }
                }
            }
            delta = next;
        }
        grads.push(LayerGradient { weights: dw, bias: db });
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// Epochs, batch size, learning rate, and the seed that makes a run
/// reproducible. Desk-scale defaults: 30 epochs, batch 64, lr 0.05.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::domain("epochs must be >= 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be >= 1".to_string()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain(format!(
                "learning_rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Shared SGD loop. `mask`, when present, freezes pruned weights at zero:
/// their gradient entries are dropped and the weights re-zeroed after each
/// update so optimizer dynamics cannot leak through.
pub(crate) fn train_engine<T: Scalar>(
    model: &mut MlpModel<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
    mask: Option<&PruneMask>,
    on_epoch: &mut dyn FnMut(usize, &MlpModel<T>),
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::domain("training dataset is empty".to_string()));
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::shape(format!(
            "dataset has {} classes, model outputs {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    if let Some(m) = mask {
        m.check_shapes(model)?;
    }
    let lr = T::from_f64_c(cfg.learning_rate);
    let targets = one_hot::<T>(data.labels(), data.num_classes())?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let xb = data.features().gather_rows(batch)?;
            let yb = targets.gather_rows(batch)?;
            let mut grads = backward(model, &xb, &yb)?;
            if let Some(m) = mask {
                m.zero_gradients(&mut grads);
            }
            for (layer, grad) in model.layers.iter_mut().zip(grads.layers.iter()) {
                layer.weights.add_scaled(&grad.weights, -lr)?;
                layer.bias.add_scaled(&grad.bias, -lr)?;
            }
            if let Some(m) = mask {
                m.zero_weights(model);
            }
        }
        on_epoch(epoch, model);
    }
    Ok(())
}

/// Train a copy of `model` with plain SGD; deterministic per `cfg.seed`.
pub fn sgd_train<T: Scalar>(
    model: &MlpModel<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
) -> Result<MlpModel<T>> {
    sgd_train_observed(model, data, cfg, |_, _| {})
}

/// [`sgd_train`] with a per-epoch observer (progress logging, invariants).
pub fn sgd_train_observed<T: Scalar>(
    model: &MlpModel<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &MlpModel<T>),
) -> Result<MlpModel<T>> {
    let mut trained = model.clone();
    train_engine(&mut trained, data, cfg, None, &mut on_epoch)?;
    Ok(trained)
}

/// Accuracy (argmax, ties to lowest class) and mean cross-entropy loss.
pub fn evaluate<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    data: &LabeledDataset<T>,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::domain("evaluation dataset is empty".to_string()));
    }
    let probs = model.posteriors(data.features())?;
    let correct = data
        .labels()
        .iter()
        .enumerate()
        .filter(|&(r, &l)| argmax_row(probs.row(r)) == l)
        .count();
    let targets = one_hot::<T>(data.labels(), data.num_classes())?;
    let loss = cross_entropy(&probs, &targets)?;
    Ok((correct as f64 / data.len() as f64, loss))
}
