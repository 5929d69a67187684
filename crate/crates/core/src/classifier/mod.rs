//! Multi-task linear classifier over hashed token n-grams: one head for the
//! dispatch kind, one for the block role.

mod features;
mod io;
mod metrics;
mod model;

pub use features::{featurize, fnv1a, ngram_hash, ConfigError, FeatureConfig, Features, DEFAULT_HASH_BITS};
pub use io::{decode_model, encode_model, load_model, save_model, ModelIoError, FORMAT_VERSION};
pub use metrics::{evaluate, f1, report_from_labels, ClassRow, EvalReport};
pub use model::{argmax, softmax, train, Gradient, Head, Model, Prediction, TrainParams, MAIN_CLASSES, SUB_CLASSES};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetRecord;
    use crate::labels::{DispatchKind, Role};
    use crate::preprocess::SegmentSource;

    fn record(i: usize, main: DispatchKind, sub: Role, tokens: &[&str]) -> DatasetRecord {
        let meta = SegmentSource { program: format!("p{i}"), opt: 0, seed: 0, first_block: 0, last_block: 0, chunk: 0 };
        DatasetRecord::new(main, sub, tokens.iter().map(|t| t.to_string()).collect(), meta)
    }

    fn toy_set() -> Vec<DatasetRecord> {
        let vocab = ["mov", "rax", "jmp", "load", "[", "]", "cmp", "bb3", "add", "16"];
        (0..10)
            .map(|i| {
                let tokens: Vec<&str> = (0..4 + i % 3).map(|k| vocab[(i * 3 + k * 7) % vocab.len()]).collect();
                record(i, DispatchKind::ALL[i % 3], Role::ALL[i % 6], &tokens)
            })
            .collect()
    }

    fn param(m: &mut Model, sub: bool, k: usize) -> &mut f64 {
        let head = if sub { &mut m.sub } else { &mut m.main };
        let n = head.weights.len();
        if k < n {
            &mut head.weights[k]
        } else {
            &mut head.bias[k - n]
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let config = FeatureConfig::new(vec![1, 2], 16, true).unwrap();
        let records = toy_set();
        let mut model = train(&records, &config, TrainParams { epochs: 1, lr: 0.05, seed: 3 });
        let (_, grad) = model.loss_and_gradient(&records);
        let mut analytic_model = Model { main: grad.main, sub: grad.sub, ..model.clone() };
        let h = 1e-5;

        for sub in [false, true] {
            let count = if sub { SUB_CLASSES } else { MAIN_CLASSES } * (config.hash_dim + 1);
            for k in 0..count {
                let orig = *param(&mut model, sub, k);
                *param(&mut model, sub, k) = orig + h;
                let plus = model.loss_and_gradient(&records).0;
                *param(&mut model, sub, k) = orig - h;
                let minus = model.loss_and_gradient(&records).0;
                *param(&mut model, sub, k) = orig;

                let numeric = (plus - minus) / (2.0 * h);
                let analytic = *param(&mut analytic_model, sub, k);
                let err = (analytic - numeric).abs();
                assert!(
                    err < 1e-9 || err / analytic.abs().max(numeric.abs()) < 1e-4,
                    "sub={sub} param {k}: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn single_class_training_predicts_it() {
        let records: Vec<_> = (0..12)
            .map(|i| record(i, DispatchKind::Indirect, Role::VmEnd, &["load", if i % 2 == 0 { "rax" } else { "rbx" }]))
            .collect();
        let model = train(&records, &FeatureConfig::default(), TrainParams::default());
        let report = evaluate(&model, &records);
        assert_eq!(report.sub_accuracy, 1.0);
        assert_eq!(report.main_accuracy, 1.0);
        assert_eq!(model.predict(&[] as &[&str]).sub, Role::VmEnd);
    }

    #[test]
    fn empty_input_uses_bias_argmax() {
        let model = Model::new(FeatureConfig::default(), TrainParams::default());
        let p = model.predict(&[] as &[&str]);
        assert_eq!((p.main, p.sub), (DispatchKind::Switch, Role::DispatchStart));
    }

    #[test]
    fn training_ignores_input_order() {
        let config = FeatureConfig::new(vec![1, 2], 1024, true).unwrap();
        let records = toy_set();
        let mut reversed = records.clone();
        reversed.reverse();
        let a = train(&records, &config, TrainParams::default());
        let b = train(&reversed, &config, TrainParams::default());
        assert_eq!(a, b);
    }

    #[test]
    fn model_bytes_round_trip() {
        let config = FeatureConfig::new(vec![1, 2], 256, false).unwrap();
        let model = train(&toy_set(), &config, TrainParams::default());
        let bytes = encode_model(&model);
        assert_eq!(decode_model(&bytes).unwrap(), model);
        assert!(matches!(decode_model(&bytes[..bytes.len() - 3]), Err(ModelIoError::Truncated)));
        assert!(matches!(decode_model(b"nope"), Err(ModelIoError::BadMagic)));
    }
}
