use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{featurize, FeatureConfig, Features};
use crate::dataset::DatasetRecord;
use crate::labels::{DispatchKind, Role};

pub const MAIN_CLASSES: usize = DispatchKind::ALL.len();
pub const SUB_CLASSES: usize = Role::ALL.len();
const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub epochs: u32,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { epochs: 5, lr: 0.1, seed: 42 }
    }
}

/// Linear softmax head. Weights are stored per bucket: the `classes` values
/// of bucket `j` live at `weights[j * classes..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { classes, weights: vec![0.0; classes * dim], bias: vec![0.0; classes] }
    }

    pub fn logits(&self, x: &Features) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &(j, v) in x {
            let col = &self.weights[j as usize * self.classes..][..self.classes];
            for (zc, w) in z.iter_mut().zip(col) {
                *zc += w * v;
            }
        }
        z
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Index of the first maximum, so ties go to the earlier class.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: FeatureConfig,
    pub main: Head,
    pub sub: Head,
    pub train_meta: TrainParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub main: DispatchKind,
    pub sub: Role,
    pub main_scores: Vec<f64>,
    pub sub_scores: Vec<f64>,
}

impl Model {
    pub fn new(config: FeatureConfig, train_meta: TrainParams) -> Self {
        let dim = config.hash_dim;
        Self { main: Head::zeros(MAIN_CLASSES, dim), sub: Head::zeros(SUB_CLASSES, dim), config, train_meta }
    }

    pub fn predict(&self, tokens: &[impl AsRef<str>]) -> Prediction {
        self.predict_features(&featurize(tokens, &self.config))
    }

    pub fn predict_features(&self, x: &Features) -> Prediction {
        let main_scores = softmax(&self.main.logits(x));
        let sub_scores = softmax(&self.sub.logits(x));
        Prediction {
            main: DispatchKind::ALL[argmax(&main_scores)],
            sub: Role::ALL[argmax(&sub_scores)],
            main_scores,
            sub_scores,
        }
    }

    /// Summed cross-entropy of both heads on one example, and the gradient
    /// of that loss with respect to each head's logits.
    pub fn example_loss(&self, x: &Features, main: DispatchKind, sub: Role) -> (f64, Vec<f64>, Vec<f64>) {
        let mut loss = 0.0;
        let mut grads = [(&self.main, main.index()), (&self.sub, sub.index())].map(|(head, y)| {
            let p = softmax(&head.logits(x));
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            let mut g = p;
            g[y] -= 1.0;
            g
        });
        let sub_grad = std::mem::take(&mut grads[1]);
        let main_grad = std::mem::take(&mut grads[0]);
        (loss, main_grad, sub_grad)
    }

    /// Total loss over `records` and its dense gradient.
    pub fn loss_and_gradient(&self, records: &[DatasetRecord]) -> (f64, Gradient) {
        let dim = self.config.hash_dim;
        let mut grad = Gradient { main: Head::zeros(MAIN_CLASSES, dim), sub: Head::zeros(SUB_CLASSES, dim) };
        let mut total = 0.0;
        for r in records {
            let x = featurize(&r.tokens, &self.config);
            let (loss, gm, gs) = self.example_loss(&x, r.main_label, r.sub_label);
            total += loss;
            for (head, g) in [(&mut grad.main, &gm), (&mut grad.sub, &gs)] {
                for (b, d) in head.bias.iter_mut().zip(g) {
                    *b += d;
                }
                for &(j, v) in &x {
                    for (c, d) in g.iter().enumerate() {
                        head.weights[j as usize * head.classes + c] += d * v;
                    }
                }
            }
        }
        (total, grad)
    }
}

/// Gradient with the same shape as the model's heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub main: Head,
    pub sub: Head,
}

/// Per-parameter AdaGrad state for one head.
struct Accumulator {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Accumulator {
    fn for_head(h: &Head) -> Self {
        Self { weights: vec![0.0; h.weights.len()], bias: vec![0.0; h.bias.len()] }
    }
}

fn adagrad(param: &mut f64, acc: &mut f64, g: f64, lr: f64) {
    if g != 0.0 {
        *acc += g * g;
        *param -= lr * g / (acc.sqrt() + ADAGRAD_EPS);
    }
}

/// Trains both heads jointly with per-example AdaGrad updates.
///
/// Records are first put in id order, then each epoch visits them in a
/// seeded random order, so the result does not depend on input order.
pub fn train(records: &[DatasetRecord], config: &FeatureConfig, params: TrainParams) -> Model {
    let mut model = Model::new(config.clone(), params);
    let mut ordered: Vec<&DatasetRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let examples: Vec<(Features, DispatchKind, Role)> =
        ordered.iter().map(|r| (featurize(&r.tokens, config), r.main_label, r.sub_label)).collect();

    let mut acc_main = Accumulator::for_head(&model.main);
    let mut acc_sub = Accumulator::for_head(&model.sub);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, main, sub) = &examples[i];
            let (_, gm, gs) = model.example_loss(x, *main, *sub);
            for (head, acc, g) in [(&mut model.main, &mut acc_main, gm), (&mut model.sub, &mut acc_sub, gs)] {
                for ((b, a), d) in head.bias.iter_mut().zip(&mut acc.bias).zip(&g) {
                    adagrad(b, a, *d, params.lr);
                }
                for &(j, v) in x {
                    let base = j as usize * head.classes;
                    let cols = base..base + head.classes;
                    for ((w, a), d) in head.weights[cols.clone()].iter_mut().zip(&mut acc.weights[cols]).zip(&g) {
                        adagrad(w, a, d * v, params.lr);
                    }
                }
            }
        }
    }
    model
}
