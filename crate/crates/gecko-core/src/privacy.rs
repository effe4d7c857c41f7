//! Confidence-threshold membership inference and privacy metrics.
//!
//! The attack: collect each record's maximum posterior, then sweep a
//! decision threshold and call a record a training-set member when its
//! confidence exceeds the threshold. Attack accuracy is the best balanced
//! accuracy over the sweep; 50% on balanced inputs means no leakage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::nn::{argmax_row, Classifier};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::FloatTensor2D;

/// Max-posterior confidences for known members and non-members.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackInput {
    member_confidences: Vec<f64>,
    nonmember_confidences: Vec<f64>,
}

impl AttackInput {
    /// Both sides must be non-empty with confidences in `[0, 1]`.
    pub fn new(member_confidences: Vec<f64>, nonmember_confidences: Vec<f64>) -> Result<Self> {
        if member_confidences.is_empty() || nonmember_confidences.is_empty() {
            return Err(Error::domain(
                "both member and non-member confidence sets must be non-empty".to_string(),
            ));
        }
        for &v in member_confidences.iter().chain(nonmember_confidences.iter()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("confidence {v} outside [0, 1]")));
            }
        }
        Ok(AttackInput {
            member_confidences,
            nonmember_confidences,
        })
    }

    pub fn members(&self) -> &[f64] {
        &self.member_confidences
    }

    pub fn nonmembers(&self) -> &[f64] {
        &self.nonmember_confidences
    }
}

/// Outcome of the threshold attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    /// Best achievable threshold accuracy; 0.5 is random guessing on
    /// balanced inputs.
    pub attack_accuracy: f64,
    /// Lowest threshold achieving the best accuracy.
    pub best_threshold: f64,
    /// True-positive rate (members classified member) at the best threshold.
    pub tpr: f64,
    /// False-positive rate (non-members classified member) at the best threshold.
    pub fpr: f64,
    /// Train accuracy minus test accuracy; absent when auditing raw
    /// confidence dumps with no model at hand.
    pub generalization_error: Option<f64>,
    pub members: usize,
    pub nonmembers: usize,
}

/// Per-row maximum posterior.
pub fn max_posterior<T: Scalar>(pred: &FloatTensor2D<T>) -> Result<Vec<f64>> {
    if pred.rows() == 0 || pred.cols() == 0 {
        return Err(Error::domain("empty prediction matrix".to_string()));
    }
    Ok((0..pred.rows())
        .map(|r| {
            pred.row(r)
                .iter()
                .fold(f64::NEG_INFINITY, |acc, v| acc.max(v.to_f64_c()))
        })
        .collect())
}

/// Candidate thresholds: every distinct confidence plus the midpoints
/// between consecutive distinct values, sorted ascending.
fn candidate_thresholds(input: &AttackInput) -> Vec<f64> {
    let mut values: Vec<f64> = input
        .member_confidences
        .iter()
        .chain(input.nonmember_confidences.iter())
        .copied()
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut candidates = Vec::with_capacity(values.len() * 2);
    for (i, &v) in values.iter().enumerate() {
        candidates.push(v);
        if i + 1 < values.len() {
            candidates.push((v + values[i + 1]) / 2.0);
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    candidates
}

/// Sweep every candidate threshold, classifying "member" iff
/// `confidence > threshold`, and return the maximizer (lowest threshold on
/// ties). Exact and deterministic.
pub fn threshold_attack(input: &AttackInput) -> AttackReport {
    let m = input.member_confidences.len();
    let n = input.nonmember_confidences.len();
    let total = (m + n) as f64;

    let mut best_acc = f64::NEG_INFINITY;
    let mut best_threshold = 0.0;
    let mut best_tp = 0usize;
    let mut best_fp = 0usize;
    for &t in &candidate_thresholds(input) {
        let tp = input.member_confidences.iter().filter(|&&c| c > t).count();
        let tn = input.nonmember_confidences.iter().filter(|&&c| c <= t).count();
        let acc = (tp + tn) as f64 / total;
        if acc > best_acc {
            best_acc = acc;
            best_threshold = t;
            best_tp = tp;
            best_fp = n - tn;
        }
    }
    AttackReport {
        attack_accuracy: best_acc,
        best_threshold,
        tpr: best_tp as f64 / m as f64,
        fpr: best_fp as f64 / n as f64,
        generalization_error: None,
        members: m,
        nonmembers: n,
    }
}

/// Audit a model: members are the train split, non-members the test split.
///
/// Sides are balanced by seeded subsampling of the larger one so that 50%
/// is the true random-guess baseline. Also reports the generalization
/// error (train accuracy − test accuracy) over the full splits.
pub fn audit_model<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    data: &LabeledDataset<T>,
    split: &SplitSpec,
    seed: u64,
) -> Result<AttackReport> {
    split.validate(data.len())?;
    if split.train_indices.is_empty() || split.test_indices.is_empty() {
        return Err(Error::domain("both splits must be non-empty".to_string()));
    }
    let train_view = data.gather(&split.train_indices)?;
    let test_view = data.gather(&split.test_indices)?;

    let train_probs = model.posteriors(train_view.features())?;
    let test_probs = model.posteriors(test_view.features())?;

    let train_acc = accuracy_of(&train_probs, train_view.labels());
    let test_acc = accuracy_of(&test_probs, test_view.labels());

    let mut member_conf = max_posterior(&train_probs)?;
    let mut nonmember_conf = max_posterior(&test_probs)?;
    balance(&mut member_conf, &mut nonmember_conf, seed);

    let mut report = threshold_attack(&AttackInput::new(member_conf, nonmember_conf)?);
    report.generalization_error = Some(train_acc - test_acc);
    Ok(report)
}

fn accuracy_of<T: Scalar>(probs: &FloatTensor2D<T>, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| argmax_row(probs.row(r)) == l)
        .count();
    correct as f64 / labels.len() as f64
}

/// Seeded subsample of the larger side down to the smaller side's length.
fn balance(members: &mut Vec<f64>, nonmembers: &mut Vec<f64>, seed: u64) {
    let k = members.len().min(nonmembers.len());
    let mut rng = SeededRng::new(seed);
    for side in [members, nonmembers] {
        if side.len() > k {
            let mut idx: Vec<usize> = (0..side.len()).collect();
            rng.shuffle(&mut idx);
            idx.truncate(k);
            idx.sort_unstable();
            *side = idx.iter().map(|&i| side[i]).collect();
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfidenceRow {
    record_id: u64,
    max_posterior: f64,
    is_member: bool,
}

/// Read a confidence dump (`record_id,max_posterior,is_member` with header)
/// so externally produced models can be audited.
pub fn read_confidence_csv(path: impl AsRef<Path>) -> Result<AttackInput> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut members = Vec::new();
    let mut nonmembers = Vec::new();
    for (i, row) in reader.deserialize::<ConfidenceRow>().enumerate() {
        let row = row.map_err(|e| Error::format(format!("row {}: {e}", i + 1)))?;
        if row.is_member {
            members.push(row.max_posterior);
        } else {
            nonmembers.push(row.max_posterior);
        }
    }
    AttackInput::new(members, nonmembers)
}

/// Write a confidence dump in the format [`read_confidence_csv`] accepts.
pub fn write_confidence_csv(path: impl AsRef<Path>, input: &AttackInput) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())
        .map_err(|e| Error::format(format!("{}: {e}", path.as_ref().display())))?;
    let rows = input
        .members()
        .iter()
        .map(|&c| (c, true))
        .chain(input.nonmembers().iter().map(|&c| (c, false)));
    for (record_id, (max_posterior, is_member)) in rows.enumerate() {
        writer
            .serialize(ConfidenceRow {
                record_id: record_id as u64,
                max_posterior,
                is_member,
            })
            .map_err(|e| Error::format(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
