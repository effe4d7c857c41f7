//! Phase II: knowledge distillation from a full-precision teacher into a
//! binarized student.
//!
//! The student trains with the same STE machinery as standalone
//! binarized training, but the loss targets are the teacher's posterior
//! vectors (computed per batch, temperature 1) instead of the true labels.

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, SplitSpec};
use crate::efficiency;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Classifier, MlpModel, TrainConfig};
use crate::privacy;
use crate::quantize::{ste_engine, BinarizedModel, TargetSource};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::FloatTensor2D;

/// Distillation settings. `use_soft_targets` selects the teacher's full
/// posterior vector as the target distribution (the default); turning it
/// off degrades to the teacher's argmax as a hard label.
#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub train_cfg: TrainConfig,
    pub use_soft_targets: bool,
}

impl DistillConfig {
    pub fn new(train_cfg: TrainConfig) -> Self {
        DistillConfig {
            train_cfg,
            use_soft_targets: true,
        }
    }
}

/// Mean cross-entropy of student predictions against teacher posteriors:
/// `-mean_rows Σ_c teacher · log(student)`, log clamped like the label loss.
pub fn distill_loss<T: Scalar>(
    student_pred: &FloatTensor2D<T>,
    teacher_pred: &FloatTensor2D<T>,
) -> Result<f64> {
    cross_entropy(student_pred, teacher_pred)
}

/// Train a binarized student against a frozen teacher on the same data the
/// teacher saw. True labels never enter the loss.
pub fn distill_train<T: Scalar>(
    student_init: &MlpModel<T>,
    teacher: &dyn Classifier<T>,
    data: &LabeledDataset<T>,
    cfg: &DistillConfig,
) -> Result<BinarizedModel<T>> {
    ste_engine(
        student_init,
        data,
        &cfg.train_cfg,
        TargetSource::Teacher {
            model: teacher,
            soft: cfg.use_soft_targets,
        },
        &mut |_| {},
    )
}

/// Metrics for one model in a pipeline report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelRow {
    pub name: String,
    pub phase: String,
    pub train_acc: f64,
    pub test_acc: f64,
    pub attack_acc: f64,
    pub gen_error: f64,
    pub memory_bytes: u64,
}

/// Full two-phase pipeline report: the three student rows (standalone,
/// homogeneous, heterogeneous) plus the teachers they learned from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeckoReport {
    pub models: Vec<ModelRow>,
    pub teachers: Vec<ModelRow>,
}

/// Training configs for the two-phase pipeline.
#[derive(Debug, Clone)]
pub struct PhaseConfigs {
    pub teacher_cfg: TrainConfig,
    pub student_cfg: TrainConfig,
}

fn measure_row<T: Scalar, M: Classifier<T> + ?Sized>(
    name: &str,
    phase: &str,
    model: &M,
    data: &LabeledDataset<T>,
    split: &SplitSpec,
    audit_seed: u64,
) -> Result<ModelRow> {
    let train_view = data.gather(&split.train_indices)?;
    let test_view = data.gather(&split.test_indices)?;
    let (train_acc, _) = crate::nn::evaluate(model, &train_view)?;
    let (test_acc, _) = crate::nn::evaluate(model, &test_view)?;
    let attack = privacy::audit_model(model, data, split, audit_seed)?;
    let eff = efficiency::measure(model)?;
    Ok(ModelRow {
        name: name.to_string(),
        phase: phase.to_string(),
        train_acc,
        test_acc,
        attack_acc: attack.attack_accuracy,
        gen_error: train_acc - test_acc,
        memory_bytes: eff.memory_bytes_actual,
    })
}

/// Run the whole pipeline: full-precision teachers, Phase I standalone
/// binarized student, Phase II homogeneously and heterogeneously distilled
/// students. All three students start from the same seeded init.
pub fn run_phase1_phase2<T: Scalar>(
    arch: &[usize],
    teacher_arch: &[usize],
    data: &LabeledDataset<T>,
    split: &SplitSpec,
    cfgs: &PhaseConfigs,
) -> Result<GeckoReport> {
    split.validate(data.len())?;
    if arch.first() != Some(&data.feature_dim()) || arch.last() != Some(&data.num_classes()) {
        return Err(Error::domain(format!(
            "architecture {arch:?} does not fit data ({} features, {} classes)",
            data.feature_dim(),
            data.num_classes()
        )));
    }
    if teacher_arch.first() != arch.first() || teacher_arch.last() != arch.last() {
        return Err(Error::domain(format!(
            "teacher architecture {teacher_arch:?} must share input/output dims with {arch:?}"
        )));
    }
    let train_view = data.gather(&split.train_indices)?;
    let audit_seed = cfgs.student_cfg.seed;

    let teacher_homog = {
        let init = MlpModel::init(arch, &mut SeededRng::new(cfgs.teacher_cfg.seed))?;
        crate::nn::sgd_train(&init, &train_view, &cfgs.teacher_cfg)?
    };
    let teacher_hetero = {
        let init = MlpModel::init(teacher_arch, &mut SeededRng::new(cfgs.teacher_cfg.seed))?;
        crate::nn::sgd_train(&init, &train_view, &cfgs.teacher_cfg)?
    };

    let student_init = MlpModel::init(arch, &mut SeededRng::new(cfgs.student_cfg.seed))?;
    let standalone = crate::quantize::ste_train(&student_init, &train_view, &cfgs.student_cfg)?;
    let distill_cfg = DistillConfig::new(cfgs.student_cfg.clone());
    let homogeneous = distill_train(&student_init, &teacher_homog, &train_view, &distill_cfg)?;
    let heterogeneous = distill_train(&student_init, &teacher_hetero, &train_view, &distill_cfg)?;

    Ok(GeckoReport {
        models: vec![
            measure_row("standalone", "phase1", &standalone, data, split, audit_seed)?,
            measure_row("homogeneous", "phase2", &homogeneous, data, split, audit_seed)?,
            measure_row("heterogeneous", "phase2", &heterogeneous, data, split, audit_seed)?,
        ],
        teachers: vec![
            measure_row("teacher-homogeneous", "baseline", &teacher_homog, data, split, audit_seed)?,
            measure_row("teacher-heterogeneous", "baseline", &teacher_hetero, data, split, audit_seed)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_splits, synth_blobs};
    use crate::nn::{evaluate, one_hot, softmax};
    use crate::quantize::ste_train;
    use std::collections::HashMap;

    #[test]
    fn one_hot_teacher_reduces_to_label_cross_entropy() {
        let mut rng = SeededRng::new(60);
        let student = softmax(&FloatTensor2D::<f64>::uniform(5, 4, -2.0, 2.0, &mut rng));
        let labels = [0usize, 3, 1, 2, 0];
        let teacher = one_hot::<f64>(&labels, 4).unwrap();
        let a = distill_loss(&student, &teacher).unwrap();
        let b = cross_entropy(&student, &teacher).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_teacher_uniform_student_is_ln_c() {
        let uniform = FloatTensor2D::from_vec(1, 10, vec![0.1; 10]).unwrap();
        let loss = distill_loss(&uniform, &uniform).unwrap();
        assert!((loss - 10.0_f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn distill_loss_of_p_with_itself_is_entropy() {
        let mut rng = SeededRng::new(61);
        let p = softmax(&FloatTensor2D::<f64>::uniform(8, 5, -2.0, 2.0, &mut rng));
        let loss = distill_loss(&p, &p).unwrap();
        let mut entropy = 0.0;
        for r in 0..p.rows() {
            for &v in p.row(r) {
                entropy -= v * v.max(1e-12).ln();
            }
        }
        entropy /= p.rows() as f64;
        assert!((loss - entropy).abs() < 1e-9);
    }

    #[test]
    fn gibbs_inequality_holds() {
        let mut rng = SeededRng::new(62);
        for _ in 0..50 {
            let teacher = softmax(&FloatTensor2D::<f64>::uniform(4, 6, -3.0, 3.0, &mut rng));
            let student = softmax(&FloatTensor2D::<f64>::uniform(4, 6, -3.0, 3.0, &mut rng));
            let loss = distill_loss(&student, &teacher).unwrap();
            let entropy = distill_loss(&teacher, &teacher).unwrap();
            assert!(loss >= entropy - 1e-9, "{loss} < {entropy}");
        }
    }

    /// Finite differences of the distillation loss w.r.t. student logits.
    #[test]
    fn distill_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(63);
        let logits = FloatTensor2D::<f64>::uniform(3, 5, -1.5, 1.5, &mut rng);
        let teacher = softmax(&FloatTensor2D::<f64>::uniform(3, 5, -1.5, 1.5, &mut rng));
        let n = logits.rows() as f64;

        // Analytic gradient of mean CE through softmax: (softmax - teacher)/n.
        let probs = softmax(&logits);
        let h = 1e-5;
        for r in 0..logits.rows() {
            for c in 0..logits.cols() {
                let analytic = (probs.get(r, c) - teacher.get(r, c)) / n;
                let mut plus = logits.clone();
                plus.set(r, c, logits.get(r, c) + h);
                let mut minus = logits.clone();
                minus.set(r, c, logits.get(r, c) - h);
                let lp = distill_loss(&softmax(&plus), &teacher).unwrap();
                let lm = distill_loss(&softmax(&minus), &teacher).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = analytic.abs().max(fd.abs()).max(1e-6);
                assert!((analytic - fd).abs() / denom < 1e-4, "{analytic} vs {fd}");
            }
        }
    }

    /// A teacher that looks rows up by their exact feature bytes and
    /// answers one-hot posteriors; the idealized oracle labeler.
    struct OracleLabeler {
        lookup: HashMap<Vec<u64>, usize>,
        classes: usize,
    }

    impl OracleLabeler {
        fn new(data: &LabeledDataset<f64>) -> Self {
            let mut lookup = HashMap::new();
            for i in 0..data.len() {
                let key: Vec<u64> = data.features().row(i).iter().map(|v| v.to_bits()).collect();
                lookup.insert(key, data.labels()[i]);
            }
            OracleLabeler {
                lookup,
                classes: data.num_classes(),
            }
        }
    }

    impl Classifier<f64> for OracleLabeler {
        fn posteriors_counted(
            &self,
            x: &FloatTensor2D<f64>,
            _counters: &mut crate::counters::OpCounters,
        ) -> Result<FloatTensor2D<f64>> {
            let labels: Vec<usize> = (0..x.rows())
                .map(|r| {
                    let key: Vec<u64> = x.row(r).iter().map(|v| v.to_bits()).collect();
                    self.lookup[&key]
                })
                .collect();
            one_hot(&labels, self.classes)
        }

        fn layer_info(&self) -> Vec<crate::nn::LayerInfo> {
            Vec::new()
        }
    }

    #[test]
    fn one_hot_teacher_trajectory_matches_hard_label_training() {
        let data = synth_blobs::<f64>(60, 4, 3, 0.9, 70).unwrap();
        let init = MlpModel::<f64>::init(&[4, 8, 6, 3], &mut SeededRng::new(71)).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 72,
        };
        let hard = ste_train(&init, &data, &cfg).unwrap();
        let oracle = OracleLabeler::new(&data);
        let distilled =
            distill_train(&init, &oracle, &data, &DistillConfig::new(cfg)).unwrap();
        assert_eq!(hard, distilled);
    }

    #[test]
    fn zero_learning_rate_leaves_student_unchanged() {
        let data = synth_blobs::<f64>(30, 4, 2, 0.5, 73).unwrap();
        let init = MlpModel::<f64>::init(&[4, 6, 5, 2], &mut SeededRng::new(74)).unwrap();
        let teacher = MlpModel::<f64>::init(&[4, 6, 2], &mut SeededRng::new(75)).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.0,
            seed: 76,
        };
        let student = distill_train(&init, &teacher, &data, &DistillConfig::new(cfg)).unwrap();
        assert_eq!(student.shadow_weights()[0], *init.layers()[1].weights());
        assert_eq!(student.first_layer(), &init.layers()[0].clone());
    }

    #[test]
    fn pipeline_report_has_three_model_rows() {
        let data = synth_blobs::<f64>(120, 5, 3, 1.2, 77).unwrap();
        let split = make_splits(data.len(), 0.5, 78).unwrap();
        let cfgs = PhaseConfigs {
            teacher_cfg: TrainConfig {
                epochs: 5,
                batch_size: 16,
                learning_rate: 0.1,
                seed: 79,
            },
            student_cfg: TrainConfig {
                epochs: 5,
                batch_size: 16,
                learning_rate: 0.05,
                seed: 80,
            },
        };
        let report = run_phase1_phase2(&[5, 8, 6, 3], &[5, 16, 3], &data, &split, &cfgs).unwrap();
        assert_eq!(report.models.len(), 3);
        assert_eq!(report.models[0].name, "standalone");
        assert_eq!(report.models[1].name, "homogeneous");
        assert_eq!(report.models[2].name, "heterogeneous");
        assert_eq!(report.teachers.len(), 2);
        for row in report.models.iter().chain(report.teachers.iter()) {
            assert!(row.memory_bytes > 0);
            assert!((0.0..=1.0).contains(&row.train_acc));
            assert!((0.0..=1.0).contains(&row.attack_acc));
        }
        // Binarized students must store smaller than the fp teacher of the
        // same architecture.
        assert!(report.models[0].memory_bytes < report.teachers[0].memory_bytes);
    }

    #[test]
    fn distilled_student_evaluates_cleanly() {
        let data = synth_blobs::<f64>(80, 4, 2, 1.0, 81).unwrap();
        let init = MlpModel::<f64>::init(&[4, 8, 6, 2], &mut SeededRng::new(82)).unwrap();
        let teacher_init = MlpModel::<f64>::init(&[4, 8, 2], &mut SeededRng::new(83)).unwrap();
        let tcfg = TrainConfig {
            epochs: 8,
            batch_size: 16,
            learning_rate: 0.1,
            seed: 84,
        };
        let teacher = crate::nn::sgd_train(&teacher_init, &data, &tcfg).unwrap();
        let student = distill_train(&init, &teacher, &data, &DistillConfig::new(tcfg)).unwrap();
        let (acc, loss) = evaluate(&student, &data).unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(loss.is_finite());
    }
}
