//! Model mixing: plain gossip averaging and the robust aggregators.
//!
//! GTS and CS are centred on the local model: every received model becomes a
//! difference `z_j = θ_j − θ_i`, differences are ordered by decreasing norm,
//! and the filtering threshold `b` is a weight mass. GTS removes the `b`
//! heaviest-norm mass (the boundary difference keeps a fractional weight),
//! CS clips every difference to the norm below which at least `2b` mass lies
//! at or above it.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeId;
use crate::model::ModelVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("model from {sender} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        sender: NodeId,
        expected: usize,
        found: usize,
    },
    #[error("threshold {b} leaves nothing to aggregate out of {count} inputs")]
    ThresholdExceedsMass { b: f64, count: usize },
    #[error("{weights} weights supplied for {models} models")]
    WeightCount { weights: usize, models: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorKind {
    #[serde(alias = "plain", alias = "average")]
    PlainAverage,
    Gts,
    Cs,
    Cwtm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborDifference {
    pub source: NodeId,
    pub z: ModelVector,
    pub norm: f64,
    pub weight: f64,
}

/// Relative slack for weight-mass comparisons, so that sums of `1/(v+1)`
/// land on the intended side of integer-valued thresholds.
const MASS_EPS: f64 = 1e-12;

fn mass_tolerance(total: f64) -> f64 {
    MASS_EPS * total.max(1.0)
}

/// Differences to the local model, largest norm first; equal norms keep the
/// smaller source id first.
pub fn sort_differences(
    local: &ModelVector,
    received: &[(NodeId, &ModelVector)],
    weights: &[f64],
) -> Result<Vec<NeighborDifference>, AggregationError> {
    if weights.len() != received.len() {
        return Err(AggregationError::WeightCount {
            weights: weights.len(),
            models: received.len(),
        });
    }
    let mut diffs = Vec::with_capacity(received.len());
    for (&(source, model), &weight) in received.iter().zip(weights) {
        if model.dim() != local.dim() {
            return Err(AggregationError::DimensionMismatch {
                sender: source,
                expected: local.dim(),
                found: model.dim(),
            });
        }
        let z = model.sub(local);
        let norm = z.norm();
        diffs.push(NeighborDifference {
            source,
            z,
            norm,
            weight,
        });
    }
    // stable: duplicates of one source keep their slot order
    diffs.sort_by(|a, b| {
        b.norm
            .partial_cmp(&a.norm)
            .unwrap_or(Ordering::Equal)
            .then(a.source.cmp(&b.source))
    });
    Ok(diffs)
}

pub fn total_weight(diffs: &[NeighborDifference]) -> f64 {
    diffs.iter().map(|d| d.weight).sum()
}

/// `θ_i + Σ w_j z_j`.
pub fn weighted_sum(local: &ModelVector, diffs: &[NeighborDifference]) -> ModelVector {
    let mut out = local.clone();
    for d in diffs {
        out.add_scaled(&d.z, d.weight);
    }
    out
}

/// Geometric trimmed sum over `diffs` (sorted by [`sort_differences`]).
///
/// Trimming more mass than is available leaves the local model unchanged.
pub fn gts_aggregate(local: &ModelVector, diffs: &[NeighborDifference], b: f64) -> ModelVector {
    let total = total_weight(diffs);
    let eps = mass_tolerance(total);
    if b > total + eps {
        return local.clone();
    }
    let mut to_trim = b.max(0.0);
    let mut out = local.clone();
    for d in diffs {
        let kept = if to_trim <= eps {
            d.weight
        } else if d.weight <= to_trim + eps {
            to_trim -= d.weight;
            0.0
        } else {
            let residual = d.weight - to_trim;
            to_trim = 0.0;
            residual
        };
        if kept > 0.0 {
            out.add_scaled(&d.z, kept);
        }
    }
    out
}

/// Clipping radius: the largest `τ` such that differences with norm `≥ τ`
/// carry at least `2b` weight. `b = 0` gives `+∞`; an unreachable `2b`
/// gives `0`.
pub fn cs_threshold(diffs: &[NeighborDifference], b: f64) -> f64 {
    if b <= 0.0 {
        return f64::INFINITY;
    }
    let target = 2.0 * b;
    let eps = mass_tolerance(total_weight(diffs));
    let mut cumulative = 0.0;
    for d in diffs {
        cumulative += d.weight;
        if cumulative >= target - eps {
            return d.norm;
        }
    }
    0.0
}

/// Clipped sum over `diffs` (sorted by [`sort_differences`]).
pub fn cs_aggregate(local: &ModelVector, diffs: &[NeighborDifference], b: f64) -> ModelVector {
    let radius = cs_threshold(diffs, b);
    let mut out = local.clone();
    for d in diffs {
        if d.norm == 0.0 || d.weight == 0.0 {
            continue;
        }
        let scale = if d.norm <= radius { 1.0 } else { radius / d.norm };
        out.add_scaled(&d.z, d.weight * scale);
    }
    out
}

/// Coordinate-wise trimmed mean of `{local} ∪ received`, dropping the `b`
/// largest and `b` smallest values of each coordinate.
pub fn cwtm_aggregate(
    local: &ModelVector,
    received: &[&ModelVector],
    b: usize,
) -> Result<ModelVector, AggregationError> {
    let count = received.len() + 1;
    if 2 * b >= count {
        return Err(AggregationError::ThresholdExceedsMass { b: b as f64, count });
    }
    for (i, m) in received.iter().enumerate() {
        if m.dim() != local.dim() {
            return Err(AggregationError::DimensionMismatch {
                sender: NodeId::from(i),
                expected: local.dim(),
                found: m.dim(),
            });
        }
    }
    let kept = (count - 2 * b) as f64;
    let mut column = Vec::with_capacity(count);
    let out = (0..local.dim())
        .map(|c| {
            column.clear();
            column.push(local.as_slice()[c]);
            column.extend(received.iter().map(|m| m.as_slice()[c]));
            column.sort_by(f64::total_cmp);
            column[b..count - b].iter().sum::<f64>() / kept
        })
        .collect();
    Ok(ModelVector::from_raw(out))
}

/// Local update applied after mixing: `aggregated − η·grad`.
pub fn gossip_step(aggregated: &ModelVector, grad: &ModelVector, eta: f64) -> ModelVector {
    let mut out = aggregated.clone();
    out.add_scaled(grad, -eta);
    out
}

/// Mixes `received` into `local` with uniform weights `1/(|received|+1)`.
///
/// `b` counts models (one slot is one unit); it is converted to weight mass
/// for GTS/CS. CWTM rounds it up and caps it so that one value per
/// coordinate survives.
pub fn aggregate_uniform(
    kind: AggregatorKind,
    local: &ModelVector,
    received: &[(NodeId, &ModelVector)],
    b: f64,
) -> Result<ModelVector, AggregationError> {
    if received.is_empty() {
        return Ok(local.clone());
    }
    let w = 1.0 / (received.len() as f64 + 1.0);
    match kind {
        AggregatorKind::Cwtm => {
            let models: Vec<&ModelVector> = received.iter().map(|(_, m)| *m).collect();
            let cap = received.len() / 2;
            let trim = (b.max(0.0).ceil() as usize).min(cap);
            cwtm_aggregate(local, &models, trim)
        }
        _ => {
            let weights = vec![w; received.len()];
            let diffs = sort_differences(local, received, &weights)?;
            Ok(match kind {
                AggregatorKind::PlainAverage => weighted_sum(local, &diffs),
                AggregatorKind::Gts => gts_aggregate(local, &diffs, b * w),
                AggregatorKind::Cs => cs_aggregate(local, &diffs, b * w),
                AggregatorKind::Cwtm => unreachable!(),
            })
        }
    }
}
