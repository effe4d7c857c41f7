//! Binarized networks with XNOR-bitcount inference and
//! straight-through-estimator training.
//!
//! A [`BinarizedModel`] keeps its first and last layers in full precision
//! and replaces every middle layer with sign-packed weights. Inference
//! binarizes each hidden activation (sign is the nonlinearity) and
//! evaluates the ±1 dot products with packed XNOR arithmetic; the packed
//! kernel returns exactly the integer the float dot product would.
//!
//! During training, hidden layers carry real-valued shadow weights. The
//! forward pass uses their signs; gradients flow through the sign function
//! with the straight-through estimator and land on the shadows, which are
//! clipped to `[-1, 1]` after every update and re-packed so the deployed
//! bits always equal `sign(shadow)`.

use crate::bits::{pack_signs, unpack_signs, xnor_dot, BitMatrix};
use crate::counters::OpCounters;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{one_hot, softmax, Classifier, DenseLayer, LayerInfo, MlpModel, TrainConfig};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::FloatTensor2D;

/// Map every entry to ±1: `v >= threshold` gives +1, otherwise −1
/// (so ties go to +1). Rejects non-finite inputs.
pub fn binarize<T: Scalar>(t: &FloatTensor2D<T>, threshold: T) -> Result<FloatTensor2D<T>> {
    if !t.is_finite() {
        return Err(Error::domain("binarize input has non-finite entries".to_string()));
    }
    let one = T::one();
    let minus_one = T::zero() - T::one();
    Ok(t.map(|v| if v >= threshold { one } else { minus_one }))
}

/// Sign-packed hidden layer: `in x out` logical weights, no bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitLayer {
    weights: BitMatrix,
}

impl BitLayer {
    pub fn new(weights: BitMatrix) -> Self {
        BitLayer { weights }
    }

    /// The N of the XNOR-bitcount identity: the layer's fan-in.
    pub fn n_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &BitMatrix {
        &self.weights
    }
}

/// Packed binary linear map: rows of `a` against columns of the layer.
///
/// Output entries are exactly `unpack(a) · unpack(weights)` — integers in
/// `[-n, n]` with the parity of `n = layer.n_in()`.
pub fn xnor_linear<T: Scalar>(a: &BitMatrix, layer: &BitLayer) -> Result<FloatTensor2D<T>> {
    let mut scratch = OpCounters::new();
    xnor_linear_counted(a, layer, &mut scratch)
}

/// [`xnor_linear`] charging `rows x n x out` XNOR ops to the counters.
pub fn xnor_linear_counted<T: Scalar>(
    a: &BitMatrix,
    layer: &BitLayer,
    counters: &mut OpCounters,
) -> Result<FloatTensor2D<T>> {
    let n = layer.n_in();
    if a.cols() != n {
        return Err(Error::shape(format!(
            "activations have {} columns, layer fan-in is {n}",
            a.cols()
        )));
    }
    let weights_t = layer.weights.transpose();
    let mut out = FloatTensor2D::zeros(a.rows(), layer.out_dim());
    for r in 0..a.rows() {
        let x = a.row_words(r);
        for j in 0..layer.out_dim() {
            let dot = xnor_dot(x, weights_t.row_words(j), n)?;
            out.set(r, j, T::from_f64_c(dot as f64));
        }
    }
    counters.xnor_ops += (a.rows() * n * layer.out_dim()) as u64;
    Ok(out)
}

/// Mixed-precision network: real first/last layers, packed hidden layers,
/// plus per-hidden-layer real shadow weights used only during training.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedModel<T: Scalar> {
    first: DenseLayer<T>,
    hidden: Vec<BitLayer>,
    last: DenseLayer<T>,
    shadow: Vec<FloatTensor2D<T>>,
}

impl<T: Scalar> BinarizedModel<T> {
    /// Binarize the middle layers of a full-precision model. Needs at
    /// least one layer between the first and the last; hidden biases are
    /// dropped (binary layers are bias-free).
    pub fn from_full_precision(model: &MlpModel<T>) -> Result<Self> {
        let layers = model.layers();
        if layers.len() < 3 {
            return Err(Error::domain(format!(
                "architecture too shallow: {} layers leave no hidden layer to binarize",
                layers.len()
            )));
        }
        let first = layers[0].clone();
        let last = layers[layers.len() - 1].clone();
        let mut hidden = Vec::with_capacity(layers.len() - 2);
        let mut shadow = Vec::with_capacity(layers.len() - 2);
        for layer in &layers[1..layers.len() - 1] {
            let latent = layer.weights().clone();
            hidden.push(BitLayer::new(pack_signs(&binarize(&latent, T::zero())?)?));
            shadow.push(latent);
        }
        Ok(BinarizedModel {
            first,
            hidden,
            last,
            shadow,
        })
    }

    /// Assemble from parts (deserialization). Shadows are taken as the
    /// unpacked bits, which keeps `sign(shadow) == bits`.
    pub fn from_parts(first: DenseLayer<T>, hidden: Vec<BitLayer>, last: DenseLayer<T>) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::domain("binarized model needs at least one hidden bit layer".to_string()));
        }
        let mut in_dim = first.out_dim();
        for layer in &hidden {
            if layer.n_in() != in_dim {
                return Err(Error::shape(format!(
                    "bit layer fan-in {} does not chain with {in_dim}",
                    layer.n_in()
                )));
            }
            in_dim = layer.out_dim();
        }
        if last.in_dim() != in_dim {
            return Err(Error::shape(format!(
                "last layer fan-in {} does not chain with {in_dim}",
                last.in_dim()
            )));
        }
        let shadow = hidden.iter().map(|l| unpack_signs(l.weights())).collect();
        Ok(BinarizedModel {
            first,
            hidden,
            last,
            shadow,
        })
    }

    pub fn first_layer(&self) -> &DenseLayer<T> {
        &self.first
    }

    pub fn hidden_layers(&self) -> &[BitLayer] {
        &self.hidden
    }

    pub fn last_layer(&self) -> &DenseLayer<T> {
        &self.last
    }

    pub fn shadow_weights(&self) -> &[FloatTensor2D<T>] {
        &self.shadow
    }

    /// Dimension chain `[in, h1, ..., classes]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.first.in_dim(), self.first.out_dim()];
        dims.extend(self.hidden.iter().map(|l| l.out_dim()));
        dims.push(self.last.out_dim());
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.first.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.last.out_dim()
    }

    /// Re-derive packed bits from the shadow signs.
    pub(crate) fn repack(&mut self) -> Result<()> {
        for (layer, latent) in self.hidden.iter_mut().zip(self.shadow.iter()) {
            *layer = BitLayer::new(pack_signs(&binarize(latent, T::zero())?)?);
        }
        Ok(())
    }
}

/// Inference through the packed layers.
///
/// First layer is a real affine map; every hidden activation is binarized
/// at threshold 0 and pushed through `xnor_linear`; the final binarized
/// activation feeds the real last layer and a softmax.
pub fn binary_forward<T: Scalar>(
    model: &BinarizedModel<T>,
    x: &FloatTensor2D<T>,
) -> Result<FloatTensor2D<T>> {
    let mut scratch = OpCounters::new();
    binary_forward_counted(model, x, &mut scratch)
}

pub fn binary_forward_counted<T: Scalar>(
    model: &BinarizedModel<T>,
    x: &FloatTensor2D<T>,
    counters: &mut OpCounters,
) -> Result<FloatTensor2D<T>> {
    if x.cols() != model.input_dim() {
        return Err(Error::shape(format!(
            "input dim {} does not match model input {}",
            x.cols(),
            model.input_dim()
        )));
    }
    let mut z = x
        .matmul_counted(&model.first.weights, counters)?
        .add_row(&model.first.bias)?;
    for layer in &model.hidden {
        let packed = pack_signs(&binarize(&z, T::zero())?)?;
        z = xnor_linear_counted(&packed, layer, counters)?;
    }
    let logits = binarize(&z, T::zero())?
        .matmul_counted(&model.last.weights, counters)?
        .add_row(&model.last.bias)?;
    Ok(softmax(&logits))
}

impl<T: Scalar> Classifier<T> for BinarizedModel<T> {
    fn posteriors_counted(
        &self,
        x: &FloatTensor2D<T>,
        counters: &mut OpCounters,
    ) -> Result<FloatTensor2D<T>> {
        binary_forward_counted(self, x, counters)
    }

    fn layer_info(&self) -> Vec<LayerInfo> {
        let mut info = vec![LayerInfo {
            in_dim: self.first.in_dim(),
            out_dim: self.first.out_dim(),
            binary: false,
        }];
        info.extend(self.hidden.iter().map(|l| LayerInfo {
            in_dim: l.n_in(),
            out_dim: l.out_dim(),
            binary: true,
        }));
        info.push(LayerInfo {
            in_dim: self.last.in_dim(),
            out_dim: self.last.out_dim(),
            binary: false,
        });
        info
    }
}

/// Where training targets come from: dataset labels, or a frozen teacher's
/// posteriors computed on each batch.
pub(crate) enum TargetSource<'a, T: Scalar> {
    Labels,
    Teacher {
        model: &'a dyn Classifier<T>,
        soft: bool,
    },
}

impl<T: Scalar> TargetSource<'_, T> {
    fn batch_targets(
        &self,
        xb: &FloatTensor2D<T>,
        labels_onehot: &FloatTensor2D<T>,
        batch: &[usize],
    ) -> Result<FloatTensor2D<T>> {
        match self {
            TargetSource::Labels => labels_onehot.gather_rows(batch),
            TargetSource::Teacher { model, soft } => {
                let probs = model.posteriors(xb)?;
                if *soft {
                    Ok(probs)
                } else {
                    let labels: Vec<usize> = (0..probs.rows())
                        .map(|r| crate::nn::argmax_row(probs.row(r)))
                        .collect();
                    one_hot(&labels, probs.cols())
                }
            }
        }
    }
}

/// Train a binarized model with the straight-through estimator.
///
/// The forward pass uses `sign(shadow)` weights and sign activations; the
/// backward pass treats sign as identity inside the clipping window
/// (`|z| <= 1` for the real-valued first pre-activation, the full `[-n, n]`
/// range for integer-valued hidden pre-activations, which never exceed
/// their fan-in `n`). Shadows are clipped to `[-1, 1]` after every step.
pub fn ste_train<T: Scalar>(
    init: &MlpModel<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
) -> Result<BinarizedModel<T>> {
    ste_engine(init, data, cfg, TargetSource::Labels, &mut |_| {})
}

/// [`ste_train`] with an observer called after every update step.
pub fn ste_train_observed<T: Scalar>(
    init: &MlpModel<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&BinarizedModel<T>),
) -> Result<BinarizedModel<T>> {
    ste_engine(init, data, cfg, TargetSource::Labels, &mut on_step)
}

pub(crate) fn ste_engine<T: Scalar>(
    init: &MlpModel<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
    targets: TargetSource<'_, T>,
    on_step: &mut dyn FnMut(&BinarizedModel<T>),
) -> Result<BinarizedModel<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::domain("training dataset is empty".to_string()));
    }
    let mut model = BinarizedModel::from_full_precision(init)?;
    if data.num_classes() != model.num_classes() {
        return Err(Error::shape(format!(
            "dataset has {} classes, model outputs {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let lr = T::from_f64_c(cfg.learning_rate);
    let one = T::one();
    let labels_onehot = one_hot::<T>(data.labels(), data.num_classes())?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let xb = data.features().gather_rows(batch)?;
            let yb = targets.batch_targets(&xb, &labels_onehot, batch)?;
            let batch_n = T::from_f64_c(xb.rows() as f64);

            // Forward with caches. Hidden weights are the shadow signs;
            // activations are signs of the previous pre-activation.
            let z_first = xb.matmul(&model.first.weights)?.add_row(&model.first.bias)?;
            let mut sign_acts = vec![binarize(&z_first, T::zero())?];
            let weight_signs: Vec<FloatTensor2D<T>> = model
                .shadow
                .iter()
                .map(|s| binarize(s, T::zero()))
                .collect::<Result<_>>()?;
            let mut hidden_z = Vec::with_capacity(weight_signs.len());
            for w in &weight_signs {
                let z = sign_acts.last().unwrap().matmul(w)?;
                sign_acts.push(binarize(&z, T::zero())?);
                hidden_z.push(z);
            }
            let logits = sign_acts
                .last()
                .unwrap()
                .matmul(&model.last.weights)?
                .add_row(&model.last.bias)?;
            let probs = softmax(&logits);

            // dL/dlogits for softmax + cross-entropy against yb.
            let mut delta = probs;
            for r in 0..delta.rows() {
                for c in 0..delta.cols() {
                    delta.set(r, c, (delta.get(r, c) - yb.get(r, c)) / batch_n);
                }
            }

            let d_last_w = sign_acts.last().unwrap().t_matmul(&delta)?;
            let d_last_b = delta.col_sums();
            // Gradient w.r.t. the last sign activation; integer hidden
            // pre-activations are bounded by their fan-in, so the STE
            // window passes them through untouched.
            let mut d_act = delta.matmul_t(&model.last.weights)?;

            let mut shadow_grads: Vec<FloatTensor2D<T>> = Vec::with_capacity(model.shadow.len());
            for j in (0..model.shadow.len()).rev() {
                let d_z = d_act;
                shadow_grads.push(sign_acts[j].t_matmul(&d_z)?);
                d_act = d_z.matmul_t(&weight_signs[j])?;
            }
            shadow_grads.reverse();

            // STE window at the first (real-valued) binarization.
            let mut d_z_first = d_act;
            for r in 0..d_z_first.rows() {
                for c in 0..d_z_first.cols() {
                    if z_first.get(r, c).abs() > one {
                        d_z_first.set(r, c, T::zero());
                    }
                }
            }
            let d_first_w = xb.t_matmul(&d_z_first)?;
            let d_first_b = d_z_first.col_sums();

            model.first.weights.add_scaled(&d_first_w, -lr)?;
            model.first.bias.add_scaled(&d_first_b, -lr)?;
            for (latent, grad) in model.shadow.iter_mut().zip(shadow_grads.iter()) {
                latent.add_scaled(grad, -lr)?;
                *latent = latent.map(|v| v.min(one).max(-one));
            }
            model.last.weights.add_scaled(&d_last_w, -lr)?;
            model.last.bias.add_scaled(&d_last_b, -lr)?;
            model.repack()?;
            on_step(&model);
        }
    }
    Ok(model)
}
