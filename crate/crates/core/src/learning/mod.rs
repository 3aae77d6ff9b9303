//! Desk-scale supervised learning: data, a linear softmax classifier, local
//! SGD with momentum and macro F1.

mod classifier;
mod data;
mod idx;

pub use classifier::{f1_macro, local_step, train_centralized, Classifier, TrainerConfig, TrainerState};
pub use data::{dirichlet_partition, train_test_split, DirichletPartition, SyntheticSpec};
pub use idx::{load_idx, read_idx, IdxTensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("need at least {needed} samples, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("malformed file at byte {offset}: {reason}")]
    MalformedFile { offset: usize, reason: String },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("non-finite feature at sample {sample}")]
    NonFinite { sample: usize },
    #[error("{features} feature values do not form rows of width {width}")]
    Shape { features: usize, width: usize },
    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self, LearningError> {
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(LearningError::Shape {
                features: features.len(),
                width: n_features,
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(LearningError::LabelOutOfRange { label, n_classes });
        }
        if let Some(pos) = features.iter().position(|x| !x.is_finite()) {
            return Err(LearningError::NonFinite {
                sample: pos / n_features,
            });
        }
        Ok(Dataset {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
