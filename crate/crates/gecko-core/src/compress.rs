//! Magnitude-threshold pruning and prune-then-retrain.
//!
//! The rule: for sensitivity threshold `tau >= 0`, every connection weight
//! `w` with `-tau <= w <= tau` is replaced by zero and stays zero through
//! any later retraining. Biases are never pruned.

use serde::Serialize;

use crate::data::{LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::nn::{self, Gradients, MlpModel, TrainConfig};
use crate::privacy;
use crate::scalar::Scalar;

/// One pruning request: threshold plus optional retraining.
#[derive(Debug, Clone)]
pub struct PruneConfig {
    pub tau: f64,
    pub retrain: bool,
    pub retrain_cfg: TrainConfig,
}

/// Per-layer boolean masks; `true` marks a weight that is permanently zero.
///
/// The mask makes retraining safe: masked entries get zero gradient and are
/// re-zeroed after every update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    layers: Vec<LayerMask>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerMask {
    rows: usize,
    cols: usize,
    zeroed: Vec<bool>,
}

impl PruneMask {
    /// All-false mask matching a model's weight shapes.
    pub fn none_for<T: Scalar>(model: &MlpModel<T>) -> Self {
        PruneMask {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerMask {
                    rows: l.in_dim(),
                    cols: l.out_dim(),
                    zeroed: vec![false; l.in_dim() * l.out_dim()],
                })
                .collect(),
        }
    }

    /// All-true mask matching a model's weight shapes.
    pub fn all_for<T: Scalar>(model: &MlpModel<T>) -> Self {
        let mut m = Self::none_for(model);
        for layer in &mut m.layers {
            layer.zeroed.fill(true);
        }
        m
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Row-major zeroed flags for layer `k`.
    pub fn layer_zeroed(&self, k: usize) -> &[bool] {
        &self.layers[k].zeroed
    }

    pub fn zeroed_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.zeroed.iter().filter(|&&z| z).count())
            .sum()
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(|l| l.zeroed.len()).sum()
    }

    pub(crate) fn check_shapes<T: Scalar>(&self, model: &MlpModel<T>) -> Result<()> {
        if self.layers.len() != model.layers().len() {
            return Err(Error::shape(format!(
                "mask has {} layers, model has {}",
                self.layers.len(),
                model.layers().len()
            )));
        }
        for (m, l) in self.layers.iter().zip(model.layers().iter()) {
            if m.rows != l.in_dim() || m.cols != l.out_dim() {
                return Err(Error::shape(format!(
                    "mask {}x{} vs layer {}x{}",
                    m.rows,
                    m.cols,
                    l.in_dim(),
                    l.out_dim()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn zero_gradients<T: Scalar>(&self, grads: &mut Gradients<T>) {
        for (mask, grad) in self.layers.iter().zip(grads.layers.iter_mut()) {
            for (g, &z) in grad.weights.data_mut().iter_mut().zip(mask.zeroed.iter()) {
                if z {
                    *g = T::zero();
                }
            }
        }
    }

    pub(crate) fn zero_weights<T: Scalar>(&self, model: &mut MlpModel<T>) {
        for (mask, layer) in self.layers.iter().zip(model.layers_mut().iter_mut()) {
            for (w, &z) in layer.weights.data_mut().iter_mut().zip(mask.zeroed.iter()) {
                if z {
                    *w = T::zero();
                }
            }
        }
    }
}

/// Zero every weight with `|w| <= tau`, returning the pruned model, the
/// mask of zeroed positions, and the fraction of weights zeroed.
pub fn prune<T: Scalar>(model: &MlpModel<T>, tau: f64) -> Result<(MlpModel<T>, PruneMask, f64)> {
    if !(tau >= 0.0) {
        return Err(Error::domain(format!("tau {tau} must be >= 0")));
    }
    let bound = T::from_f64_c(tau);
    let mut pruned = model.clone();
    let mut mask = PruneMask::none_for(model);
    let mut zeroed = 0usize;
    let mut total = 0usize;
    for (layer, lmask) in pruned.layers_mut().iter_mut().zip(mask.layers.iter_mut()) {
        for (w, z) in layer.weights.data_mut().iter_mut().zip(lmask.zeroed.iter_mut()) {
            total += 1;
            if w.abs() <= bound {
                *w = T::zero();
                *z = true;
                zeroed += 1;
            }
        }
    }
    let sparsity = zeroed as f64 / total as f64;
    Ok((pruned, mask, sparsity))
}

/// Retrain a pruned model with SGD while keeping masked weights at exactly
/// zero after every update.
pub fn retrain_pruned<T: Scalar>(
    model: &MlpModel<T>,
    mask: &PruneMask,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
) -> Result<MlpModel<T>> {
    retrain_pruned_observed(model, mask, data, cfg, |_, _| {})
}

/// [`retrain_pruned`] with a per-epoch observer.
pub fn retrain_pruned_observed<T: Scalar>(
    model: &MlpModel<T>,
    mask: &PruneMask,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &MlpModel<T>),
) -> Result<MlpModel<T>> {
    mask.check_shapes(model)?;
    let mut trained = model.clone();
    mask.zero_weights(&mut trained);
    nn::train_engine(&mut trained, data, cfg, Some(mask), &mut on_epoch)?;
    Ok(trained)
}

/// One row of a tau sweep: the data behind the pruning/retraining figures.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub sparsity: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gen_error: f64,
    pub attack_acc: f64,
    pub seed: u64,
}

/// Prune a trained model at each `tau`, optionally retraining, and measure
/// accuracy, generalization error, and membership-attack accuracy per point.
///
/// `taus` must be sorted ascending. `seed` drives the balanced subsampling
/// inside the audit and is recorded on every point.
pub fn prune_sweep<T: Scalar>(
    model: &MlpModel<T>,
    data: &LabeledDataset<T>,
    split: &SplitSpec,
    taus: &[f64],
    retrain_cfg: Option<&TrainConfig>,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if taus.is_empty() {
        return Err(Error::domain("tau list is empty".to_string()));
    }
    if taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("tau list must be sorted ascending".to_string()));
    }
    split.validate(data.len())?;
    let train_view = data.gather(&split.train_indices)?;
    let test_view = data.gather(&split.test_indices)?;

    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        let (mut candidate, mask, sparsity) = prune(model, tau)?;
        if let Some(cfg) = retrain_cfg {
            candidate = retrain_pruned(&candidate, &mask, &train_view, cfg)?;
        }
        let (train_acc, _) = nn::evaluate(&candidate, &train_view)?;
        let (test_acc, _) = nn::evaluate(&candidate, &test_view)?;
        let report = privacy::audit_model(&candidate, data, split, seed)?;
        points.push(SweepPoint {
            tau,
            sparsity,
            train_acc,
            test_acc,
            gen_error: train_acc - test_acc,
            attack_acc: report.attack_accuracy,
            seed,
        });
    }
    Ok(points)
}
