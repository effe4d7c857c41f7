//! Efficiency bookkeeping: static memory footprint, MAC/XNOR counts per
//! single-sample inference, and a memory-access proxy for energy.
//!
//! Every count is derived twice — analytically from the layer shapes, and
//! from the runtime counters of an actual one-sample forward pass — and
//! the two must agree exactly.

use serde::{Deserialize, Serialize};

use crate::bits::WORD_BITS;
use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::nn::{Classifier, LayerInfo};
use crate::scalar::Scalar;
use crate::tensor::FloatTensor2D;

/// Bytes per parameter at the full-precision baseline (32-bit floats).
const FP_BYTES: u64 = 4;

/// Per-layer footprint breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEfficiency {
    pub in_dim: usize,
    pub out_dim: usize,
    pub binary: bool,
    pub param_count: u64,
    pub bytes_fp32: u64,
    pub bytes_actual: u64,
}

/// Static footprint and per-inference operation counts for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub param_count: u64,
    /// Bytes if every parameter were a 32-bit float.
    pub memory_bytes_fp: u64,
    /// Bytes as actually stored (packed words for bit layers).
    pub memory_bytes_actual: u64,
    pub packing_ratio: f64,
    /// Real multiply-accumulates per single-sample forward.
    pub mac_count: u64,
    /// Single-bit XNOR ops per single-sample forward.
    pub xnor_count: u64,
    /// One read per parameter plus one read/write per activation element.
    pub mem_access_estimate: u64,
    pub layers: Vec<LayerEfficiency>,
}

fn layer_efficiency(info: &LayerInfo) -> LayerEfficiency {
    let (params, bytes_actual) = if info.binary {
        let params = (info.in_dim * info.out_dim) as u64;
        let words = info.in_dim as u64 * (info.out_dim.div_ceil(WORD_BITS)) as u64;
        (params, words * (WORD_BITS as u64 / 8))
    } else {
        let params = (info.in_dim * info.out_dim + info.out_dim) as u64;
        (params, params * FP_BYTES)
    };
    LayerEfficiency {
        in_dim: info.in_dim,
        out_dim: info.out_dim,
        binary: info.binary,
        param_count: params,
        bytes_fp32: params * FP_BYTES,
        bytes_actual,
    }
}

/// Measure a model. Fails if the analytic counts and the runtime counters
/// of a one-sample forward pass disagree.
pub fn measure<T: Scalar, M: Classifier<T> + ?Sized>(model: &M) -> Result<EfficiencyReport> {
    let infos = model.layer_info();
    if infos.is_empty() {
        return Err(Error::domain("model reports no layers".to_string()));
    }
    let layers: Vec<LayerEfficiency> = infos.iter().map(layer_efficiency).collect();

    let param_count = layers.iter().map(|l| l.param_count).sum();
    let memory_bytes_fp = layers.iter().map(|l| l.bytes_fp32).sum();
    let memory_bytes_actual = layers.iter().map(|l| l.bytes_actual).sum();
    let mac_count: u64 = infos
        .iter()
        .filter(|i| !i.binary)
        .map(|i| (i.in_dim * i.out_dim) as u64)
        .sum();
    let xnor_count: u64 = infos
        .iter()
        .filter(|i| i.binary)
        .map(|i| (i.in_dim * i.out_dim) as u64)
        .sum();
    let mem_access_estimate: u64 = layers
        .iter()
        .map(|l| l.param_count + (l.in_dim + l.out_dim) as u64)
        .sum();

    let mut counters = OpCounters::new();
    let probe = FloatTensor2D::<T>::zeros(1, infos[0].in_dim);
    model.posteriors_counted(&probe, &mut counters)?;
    if counters.macs != mac_count || counters.xnor_ops != xnor_count {
        return Err(Error::domain(format!(
            "analytic counts (macs {mac_count}, xnor {xnor_count}) disagree with runtime counters \
             (macs {}, xnor {})",
            counters.macs, counters.xnor_ops
        )));
    }

    Ok(EfficiencyReport {
        param_count,
        memory_bytes_fp,
        memory_bytes_actual,
        packing_ratio: memory_bytes_fp as f64 / memory_bytes_actual as f64,
        mac_count,
        xnor_count,
        mem_access_estimate,
        layers,
    })
}

/// One row of a side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    /// First model's stored bytes over this model's stored bytes.
    pub memory_ratio_vs_first: f64,
    pub report: EfficiencyReport,
}

/// Side-by-side efficiency reports with ratios against the first model.
pub fn compare<T: Scalar>(models: &[(&str, &dyn Classifier<T>)]) -> Result<Vec<ComparisonRow>> {
    if models.len() < 2 {
        return Err(Error::domain("compare needs at least two models".to_string()));
    }
    let reports: Vec<EfficiencyReport> = models
        .iter()
        .map(|(_, m)| measure(*m))
        .collect::<Result<_>>()?;
    let first_bytes = reports[0].memory_bytes_actual as f64;
    Ok(models
        .iter()
        .zip(reports)
        .map(|((name, _), report)| ComparisonRow {
            name: (*name).to_string(),
            memory_ratio_vs_first: first_bytes / report.memory_bytes_actual as f64,
            report,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpModel;
    use crate::quantize::BinarizedModel;
    use crate::rng::SeededRng;

    #[test]
    fn location_architecture_arithmetic() {
        // Fully connected 446 -> 512 -> 512 -> 512 -> 30.
        let mut rng = SeededRng::new(90);
        let model = MlpModel::<f64>::init(&[446, 512, 512, 512, 30], &mut rng).unwrap();
        let report = measure(&model).unwrap();
        let expected: u64 = (446 * 512 + 512) + (512 * 512 + 512) + (512 * 512 + 512) + (512 * 30 + 30);
        assert_eq!(report.param_count, expected);
        assert_eq!(report.memory_bytes_fp, 4 * expected);
        assert_eq!(report.packing_ratio, 1.0);
    }

    #[test]
    fn packed_hidden_layer_ratio_exceeds_31() {
        let mut rng = SeededRng::new(91);
        let init = MlpModel::<f64>::init(&[784, 512, 512, 10], &mut rng).unwrap();
        let model = BinarizedModel::from_full_precision(&init).unwrap();
        let report = measure(&model).unwrap();
        let hidden = &report.layers[1];
        assert!(hidden.binary);
        assert_eq!(
            hidden.bytes_actual,
            (512 * 512usize.div_ceil(WORD_BITS) * (WORD_BITS / 8)) as u64
        );
        let layer_ratio = hidden.bytes_fp32 as f64 / hidden.bytes_actual as f64;
        assert!(layer_ratio >= 31.0);
        assert_eq!(layer_ratio, 32.0);
    }

    #[test]
    fn binary_layer_counts_per_sample() {
        let mut rng = SeededRng::new(92);
        let init = MlpModel::<f64>::init(&[20, 512, 512, 10], &mut rng).unwrap();
        let model = BinarizedModel::from_full_precision(&init).unwrap();
        let report = measure(&model).unwrap();
        assert_eq!(report.xnor_count, 512 * 512);
        assert_eq!(report.mac_count, 20 * 512 + 512 * 10);
    }

    #[test]
    fn analytic_counts_match_runtime_counters_over_random_architectures() {
        let mut rng = SeededRng::new(93);
        for _ in 0..20 {
            let depth = 2 + rng.index(3);
            let mut dims = vec![1 + rng.index(12)];
            for _ in 0..depth {
                dims.push(1 + rng.index(12));
            }
            let init = MlpModel::<f64>::init(&dims, &mut rng.fork()).unwrap();
            // measure() itself cross-checks counters against analytics.
            measure(&init).unwrap();
            if dims.len() >= 4 {
                let bin = BinarizedModel::from_full_precision(&init).unwrap();
                measure(&bin).unwrap();
            }
        }
    }

    #[test]
    fn mem_access_estimate_formula() {
        let mut rng = SeededRng::new(94);
        let model = MlpModel::<f64>::init(&[3, 5, 2], &mut rng).unwrap();
        let report = measure(&model).unwrap();
        let params = (3 * 5 + 5) + (5 * 2 + 2);
        let activations = (3 + 5) + (5 + 2);
        assert_eq!(report.mem_access_estimate, (params + activations) as u64);
    }

    #[test]
    fn compare_model_with_itself_is_ratio_one() {
        let mut rng = SeededRng::new(95);
        let model = MlpModel::<f64>::init(&[6, 8, 3], &mut rng).unwrap();
        let rows = compare::<f64>(&[("a", &model), ("b", &model)]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].memory_ratio_vs_first, 1.0);
        assert_eq!(rows[1].memory_ratio_vs_first, 1.0);
    }

    #[test]
    fn compare_requires_two_models() {
        let mut rng = SeededRng::new(96);
        let model = MlpModel::<f64>::init(&[6, 8, 3], &mut rng).unwrap();
        assert!(compare::<f64>(&[("only", &model)]).is_err());
    }

    #[test]
    fn fp_vs_binarized_hidden_ratio_near_32() {
        let mut rng = SeededRng::new(97);
        let fp = MlpModel::<f64>::init(&[784, 512, 512, 512, 10], &mut rng).unwrap();
        let bin = BinarizedModel::from_full_precision(&fp).unwrap();
        let fp_report = measure(&fp).unwrap();
        let bin_report = measure(&bin).unwrap();
        // Hidden (binarized) layers alone compress by exactly 32 at width 512.
        let fp_hidden: u64 = fp_report.layers[1..3].iter().map(|l| l.bytes_actual).sum();
        let bin_hidden: u64 = bin_report.layers[1..3].iter().map(|l| l.bytes_actual).sum();
        let hidden_ratio = fp_hidden as f64 / bin_hidden as f64;
        assert!((hidden_ratio - 32.0).abs() / 32.0 < 0.01, "{hidden_ratio}");
        assert!(hidden_ratio >= 31.0);
    }
}
