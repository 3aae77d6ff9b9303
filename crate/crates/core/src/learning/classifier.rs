use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LearningError};
use crate::aggregation::gossip_step;
use crate::model::ModelVector;

/// Linear softmax classifier over `n_features` inputs and `n_classes`
/// outputs.
///
/// Parameters are laid out as the `n_classes × n_features` weight matrix
/// (row-major) followed by `n_classes` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classifier {
    pub n_features: usize,
    pub n_classes: usize,
}

impl Classifier {
    pub fn for_dataset(data: &Dataset) -> Self {
        Classifier {
            n_features: data.n_features(),
            n_classes: data.n_classes(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_features * self.n_classes + self.n_classes
    }

    fn logits_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.n_features;
        let bias = &theta[d * self.n_classes..];
        for (c, o) in out.iter_mut().enumerate() {
            let w = &theta[c * d..(c + 1) * d];
            *o = bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn predict(&self, model: &ModelVector, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.n_classes];
        self.logits_into(model.as_slice(), x, &mut z);
        z.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
            .0
    }

    /// Mean cross-entropy over `indices`.
    pub fn loss(&self, model: &ModelVector, data: &Dataset, indices: &[usize]) -> f64 {
        let mut z = vec![0.0; self.n_classes];
        let total: f64 = indices
            .iter()
            .map(|&i| {
                self.logits_into(model.as_slice(), data.row(i), &mut z);
                log_sum_exp(&z) - z[data.label(i)]
            })
            .sum();
        total / indices.len().max(1) as f64
    }

    /// Mean cross-entropy over `indices` and its gradient.
    pub fn gradient(
        &self,
        model: &ModelVector,
        data: &Dataset,
        indices: &[usize],
    ) -> (f64, ModelVector) {
        let d = self.n_features;
        let k = self.n_classes;
        let mut grad = vec![0.0; self.dim()];
        let mut z = vec![0.0; k];
        let mut loss = 0.0;
        for &i in indices {
            let x = data.row(i);
            let y = data.label(i);
            self.logits_into(model.as_slice(), x, &mut z);
            let lse = log_sum_exp(&z);
            loss += lse - z[y];
            for c in 0..k {
                let residual = (z[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
                for (g, xj) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *g += residual * xj;
                }
                grad[d * k + c] += residual;
            }
        }
        let scale = 1.0 / indices.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        (loss * scale, ModelVector::from_raw(grad))
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub eta: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            eta: 0.01,
            momentum: 0.9,
            batch_size: 32,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(LearningError::Parameter {
                name: "eta",
                reason: format!("must be positive, got {}", self.eta),
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LearningError::Parameter {
                name: "momentum",
                reason: format!("must lie in [0, 1), got {}", self.momentum),
            });
        }
        if self.batch_size == 0 {
            return Err(LearningError::Parameter {
                name: "batch_size",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Momentum buffer and epoch position of one node. Never shared.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    velocity: Vec<f64>,
    order: Vec<usize>,
    cursor: usize,
}

impl TrainerState {
    pub fn new(dim: usize) -> Self {
        TrainerState {
            velocity: vec![0.0; dim],
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// Next mini-batch, without replacement within an epoch. The last batch
    /// of an epoch may be short.
    fn next_batch<R: Rng + ?Sized>(&mut self, len: usize, batch: usize, rng: &mut R) -> Vec<usize> {
        if self.order.len() != len || self.cursor >= len {
            self.order = (0..len).collect();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let end = (self.cursor + batch).min(len);
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

/// One SGD-with-momentum step: `m ← μ·m + g`, `θ ← θ − η·m`.
pub fn local_step<R: Rng + ?Sized>(
    classifier: &Classifier,
    model: &ModelVector,
    shard: &Dataset,
    cfg: &TrainerConfig,
    state: &mut TrainerState,
    rng: &mut R,
) -> ModelVector {
    if shard.is_empty() {
        return model.clone();
    }
    let batch = state.next_batch(shard.len(), cfg.batch_size, rng);
    let (_, grad) = classifier.gradient(model, shard, &batch);
    for (m, g) in state.velocity.iter_mut().zip(grad.as_slice()) {
        *m = cfg.momentum * *m + g;
    }
    gossip_step(model, &ModelVector::from_raw(state.velocity.clone()), cfg.eta)
}

/// Reference model trained on the pooled data for `steps` mini-batch steps.
pub fn train_centralized<R: Rng + ?Sized>(
    classifier: &Classifier,
    data: &Dataset,
    cfg: &TrainerConfig,
    steps: usize,
    rng: &mut R,
) -> ModelVector {
    let mut model = ModelVector::zeros(classifier.dim());
    let mut state = TrainerState::new(classifier.dim());
    for _ in 0..steps {
        model = local_step(classifier, &model, data, cfg, &mut state, rng);
    }
    model
}

/// Macro F1 over the classes present in `test`'s labels.
pub fn f1_macro(classifier: &Classifier, model: &ModelVector, test: &Dataset) -> f64 {
    let k = classifier.n_classes;
    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut actual = vec![0usize; k];
    for i in 0..test.len() {
        let p = classifier.predict(model, test.row(i));
        let y = test.label(i);
        predicted[p] += 1;
        actual[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| actual[c] > 0).collect();
    if present.is_empty() {
        return 0.0;
    }
    let sum: f64 = present
        .iter()
        .map(|&c| {
            let denom = predicted[c] + actual[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    sum / present.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (Classifier, Dataset, ModelVector) {
        let features = vec![
            0.3, -1.2, 0.5, 2.0, //
            -0.7, 0.4, 1.1, -0.2, //
            1.5, 0.9, -0.6, 0.1,
        ];
        let data = Dataset::new(features, vec![0, 2, 1], 4, 3).unwrap();
        let c = Classifier::for_dataset(&data);
        let theta: Vec<f64> = (0..c.dim()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect();
        (c, data, ModelVector::new(theta).unwrap())
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (c, data, theta) = tiny();
        let idx = [0, 1, 2];
        let (_, grad) = c.gradient(&theta, &data, &idx);
        let h = 1e-5;
        for j in 0..c.dim() {
            let mut plus = theta.clone();
            plus.as_mut_slice()[j] += h;
            let mut minus = theta.clone();
            minus.as_mut_slice()[j] -= h;
            let fd = (c.loss(&plus, &data, &idx) - c.loss(&minus, &data, &idx)) / (2.0 * h);
            let g = grad.as_slice()[j];
            let rel = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "coordinate {j}: analytic {g}, numeric {fd}");
        }
    }

    #[test]
    fn zero_learning_rate_keeps_model() {
        let (c, data, theta) = tiny();
        let cfg = TrainerConfig { eta: 0.0, ..Default::default() };
        let mut state = TrainerState::new(c.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(local_step(&c, &theta, &data, &cfg, &mut state, &mut rng), theta);
    }

    #[test]
    fn separable_loss_decreases() {
        let data = Dataset::new(vec![1.0, -1.0], vec![1, 0], 1, 2).unwrap();
        let c = Classifier::for_dataset(&data);
        let cfg = TrainerConfig { eta: 0.1, momentum: 0.0, batch_size: 1 };
        let single = data.subset(&[0]);
        let mut state = TrainerState::new(c.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = ModelVector::zeros(c.dim());
        let mut last = c.loss(&model, &single, &[0]);
        for _ in 0..100 {
            model = local_step(&c, &model, &single, &cfg, &mut state, &mut rng);
            let now = c.loss(&model, &single, &[0]);
            assert!(now < last);
            last = now;
        }
        assert_eq!(c.predict(&model, data.row(0)), 1);
    }

    #[test]
    fn batches_cover_an_epoch_without_repeats() {
        let mut state = TrainerState::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen: Vec<usize> = Vec::new();
        seen.extend(state.next_batch(10, 4, &mut rng));
        seen.extend(state.next_batch(10, 4, &mut rng));
        seen.extend(state.next_batch(10, 4, &mut rng));
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(state.next_batch(10, 4, &mut rng).len(), 4);
    }

    #[test]
    fn f1_examples() {
        let data = Dataset::new(vec![0.0; 4], vec![0, 0, 1, 1], 1, 2).unwrap();
        let c = Classifier::for_dataset(&data);
        // bias favours class 0 everywhere
        let all_zero = ModelVector::new(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((f1_macro(&c, &all_zero, &data) - 1.0 / 3.0).abs() < 1e-12);

        let data = Dataset::new(vec![-1.0, -2.0, 1.0, 2.0], vec![0, 0, 1, 1], 1, 2).unwrap();
        let perfect = ModelVector::new(vec![-1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f1_macro(&c, &perfect, &data), 1.0);
        let inverted = ModelVector::new(vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f1_macro(&c, &inverted, &data), 0.0);
    }
}
