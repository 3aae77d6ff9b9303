use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LearningError};

/// Gaussian blobs: one random centre per class, isotropic noise around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_features: usize,
    pub samples_per_node: usize,
    /// Standard deviation of the class centres' coordinates.
    pub class_sep: f64,
    pub noise: f64,
    /// Share of the generated pool held out for evaluation.
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 10,
            n_features: 32,
            samples_per_node: 60,
            class_sep: 0.5,
            noise: 1.0,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), LearningError> {
        let bad = |name, reason: &str| {
            Err(LearningError::Parameter {
                name,
                reason: reason.to_string(),
            })
        };
        if self.n_classes < 2 {
            return bad("n_classes", "at least two classes are required");
        }
        if self.n_features == 0 {
            return bad("n_features", "must be positive");
        }
        if self.samples_per_node == 0 {
            return bad("samples_per_node", "must be positive");
        }
        if !(self.class_sep.is_finite() && self.class_sep >= 0.0) {
            return bad("class_sep", "must be finite and non-negative");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise", "must be finite and non-negative");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction", "must lie in (0, 1)");
        }
        Ok(())
    }

    /// Pool size giving `samples_per_node` training samples to each of
    /// `n_nodes` after the test split.
    pub fn pool_size(&self, n_nodes: usize) -> usize {
        let train = self.samples_per_node * n_nodes;
        (train as f64 / (1.0 - self.test_fraction)).round() as usize
    }

    /// `total` samples with balanced labels in shuffled order.
    pub fn generate<R: Rng + ?Sized>(&self, total: usize, rng: &mut R) -> Dataset {
        let centre = Normal::new(0.0, self.class_sep).expect("validated spread");
        let noise = Normal::new(0.0, self.noise).expect("validated noise");
        let centres: Vec<Vec<f64>> = (0..self.n_classes)
            .map(|_| (0..self.n_features).map(|_| centre.sample(rng)).collect())
            .collect();
        let mut labels: Vec<usize> = (0..total).map(|i| i % self.n_classes).collect();
        labels.shuffle(rng);
        let mut features = Vec::with_capacity(total * self.n_features);
        for &l in &labels {
            features.extend(centres[l].iter().map(|c| c + noise.sample(rng)));
        }
        Dataset::new(features, labels, self.n_features, self.n_classes)
            .expect("generated data is well formed")
    }
}

/// Shuffles and splits off `round(test_fraction·len)` samples for testing.
pub fn train_test_split<R: Rng + ?Sized>(
    data: &Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> (Dataset, Dataset) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let n_test = (test_fraction * data.len() as f64).round() as usize;
    let (test, train) = order.split_at(n_test);
    (data.subset(train), data.subset(test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPartition {
    pub beta: f64,
    pub shards: Vec<Dataset>,
}

/// Label-skewed split: for every class, node shares are drawn from
/// `Dirichlet(β·1)` and the class's samples are dealt out accordingly.
/// Empty shards then take one sample from the largest shard.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    data: &Dataset,
    n_nodes: usize,
    beta: f64,
    rng: &mut R,
) -> Result<DirichletPartition, LearningError> {
    if n_nodes == 0 {
        return Err(LearningError::Parameter {
            name: "n_nodes",
            reason: "must be positive".into(),
        });
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(LearningError::Parameter {
            name: "beta",
            reason: format!("must be positive and finite, got {beta}"),
        });
    }
    if data.len() < n_nodes {
        return Err(LearningError::InsufficientData {
            needed: n_nodes,
            found: data.len(),
        });
    }

    let gamma = Gamma::new(beta, 1.0).expect("validated concentration");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for i in 0..data.len() {
        by_class[data.label(i)].push(i);
    }

    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for members in &mut by_class {
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let mut shares: Vec<f64> = (0..n_nodes).map(|_| gamma.sample(rng)).collect();
        let total: f64 = shares.iter().sum();
        if total > 0.0 {
            shares.iter_mut().for_each(|s| *s /= total);
        } else {
            // every draw underflowed; fall back to one random node
            let pick = rng.random_range(0..n_nodes);
            shares.iter_mut().enumerate().for_each(|(k, s)| *s = (k == pick) as u8 as f64);
        }
        let m = members.len();
        let mut start = 0;
        let mut cumulative = 0.0;
        for (node, share) in shares.iter().enumerate() {
            cumulative += share;
            let end = if node + 1 == n_nodes {
                m
            } else {
                ((cumulative * m as f64).round() as usize).clamp(start, m)
            };
            assignment[node].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(empty) = assignment.iter().position(Vec::is_empty) {
        let largest = (0..n_nodes)
            .max_by_key(|&k| (assignment[k].len(), std::cmp::Reverse(k)))
            .expect("at least one node");
        let moved = assignment[largest].pop().expect("largest shard is non-empty");
        assignment[empty].push(moved);
    }

    let shards = assignment.iter().map(|idx| data.subset(idx)).collect();
    Ok(DirichletPartition { beta, shards })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(total: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SyntheticSpec::default().generate(total, &mut rng)
    }

    fn label_entropy(d: &Dataset) -> f64 {
        let n = d.len() as f64;
        d.class_counts()
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }

    #[test]
    fn generated_labels_are_balanced() {
        let d = blobs(1000, 1);
        assert!(d.class_counts().iter().all(|&c| c == 100));
    }

    #[test]
    fn split_sizes() {
        let d = blobs(500, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (train, test) = train_test_split(&d, 0.2, &mut rng);
        assert_eq!((train.len(), test.len()), (400, 100));
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let d = blobs(600, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = dirichlet_partition(&d, 10, 5.0, &mut rng).unwrap();
        assert_eq!(p.shards.iter().map(Dataset::len).sum::<usize>(), 600);
        assert!(p.shards.iter().all(|s| !s.is_empty()));
        let mut merged = vec![0usize; 10];
        for s in &p.shards {
            for (m, c) in merged.iter_mut().zip(s.class_counts()) {
                *m += c;
            }
        }
        assert_eq!(merged, d.class_counts());
    }

    #[test]
    fn single_node_gets_everything() {
        let d = blobs(50, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = dirichlet_partition(&d, 1, 5.0, &mut rng).unwrap();
        assert_eq!(p.shards[0].len(), 50);
        assert_eq!(p.shards[0].class_counts(), d.class_counts());
    }

    #[test]
    fn too_few_samples() {
        let d = blobs(5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            dirichlet_partition(&d, 6, 5.0, &mut rng),
            Err(LearningError::InsufficientData { needed: 6, found: 5 })
        ));
    }

    #[test]
    fn huge_beta_is_near_uniform() {
        let d = blobs(100_000, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = dirichlet_partition(&d, 10, 1e6, &mut rng).unwrap();
        for s in &p.shards {
            for c in s.class_counts() {
                let share = c as f64 / s.len() as f64;
                assert!((share - 0.1).abs() <= 0.05 * 0.1, "share {share}");
            }
        }
    }

    #[test]
    fn small_beta_skews_labels() {
        let mean_entropy = |beta: f64| {
            let mut total = 0.0;
            for seed in 0..50 {
                let d = blobs(1000, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let p = dirichlet_partition(&d, 10, beta, &mut rng).unwrap();
                total += p.shards.iter().map(label_entropy).sum::<f64>() / 10.0;
            }
            total / 50.0
        };
        assert!(mean_entropy(0.1) < mean_entropy(1e6));
    }

    #[test]
    fn partition_is_deterministic() {
        let d = blobs(300, 7);
        let a = dirichlet_partition(&d, 7, 5.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dirichlet_partition(&d, 7, 5.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
