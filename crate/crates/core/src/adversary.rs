//! Byzantine behaviour: identifier flooding and model poisoning.

use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::graph::NodeId;
use crate::model::ModelVector;
use crate::sampling::PushMessage;

/// Number of honest neighbours a Byzantine node floods per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FloodForce {
    Finite(u32),
    Infinite,
}

impl FloodForce {
    pub fn reach(self, available: usize) -> usize {
        match self {
            FloodForce::Finite(f) => (f as usize).min(available),
            FloodForce::Infinite => available,
        }
    }
}

impl fmt::Display for FloodForce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FloodForce::Finite(k) => write!(f, "{k}"),
            FloodForce::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for FloodForce {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") || s == "∞" {
            return Ok(FloodForce::Infinite);
        }
        match s.parse::<u32>() {
            Ok(0) | Err(_) => Err(format!("flood force must be a positive integer or \"inf\", got {s:?}")),
            Ok(k) => Ok(FloodForce::Finite(k)),
        }
    }
}

impl Serialize for FloodForce {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FloodForce::Finite(k) => s.serialize_u32(*k),
            FloodForce::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for FloodForce {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct ForceVisitor;

        impl Visitor<'_> for ForceVisitor {
            type Value = FloodForce;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"inf\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<FloodForce, E> {
                match u32::try_from(v) {
                    Ok(0) | Err(_) => Err(E::invalid_value(de::Unexpected::Unsigned(v), &self)),
                    Ok(k) => Ok(FloodForce::Finite(k)),
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<FloodForce, E> {
                match u64::try_from(v) {
                    Ok(u) => self.visit_u64(u),
                    Err(_) => Err(E::invalid_value(de::Unexpected::Signed(v), &self)),
                }
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<FloodForce, E> {
                v.parse().map_err(|_| E::invalid_value(de::Unexpected::Str(v), &self))
            }
        }

        d.deserialize_any(ForceVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoisonKind {
    None,
    Foe,
    Alie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonAttack {
    pub kind: PoisonKind,
    #[serde(default = "default_zeta_grid")]
    pub zeta_grid: Vec<f64>,
}

/// `{2^-4, 2^-3, …, 2^4}`.
pub fn default_zeta_grid() -> Vec<f64> {
    (-4..=4).map(|e| 2f64.powi(e)).collect()
}

impl Default for PoisonAttack {
    fn default() -> Self {
        PoisonAttack {
            kind: PoisonKind::None,
            zeta_grid: default_zeta_grid(),
        }
    }
}

/// Honest population statistics shared by all colluding Byzantine nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CollusionOracle {
    pub honest_mean: ModelVector,
    pub honest_std: ModelVector,
}

impl CollusionOracle {
    /// Coordinate-wise mean and population standard deviation.
    pub fn observe(honest: &[&ModelVector]) -> Self {
        let dim = honest.first().map_or(0, |m| m.dim());
        let count = honest.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for m in honest {
            for (acc, x) in mean.iter_mut().zip(m.as_slice()) {
                *acc += x;
            }
        }
        mean.iter_mut().for_each(|x| *x /= count);
        let mut var = vec![0.0; dim];
        for m in honest {
            for ((acc, x), mu) in var.iter_mut().zip(m.as_slice()).zip(&mean) {
                *acc += (x - mu) * (x - mu);
            }
        }
        let std = var.into_iter().map(|s| (s / count).sqrt()).collect();
        CollusionOracle {
            honest_mean: ModelVector::from_raw(mean),
            honest_std: ModelVector::from_raw(std),
        }
    }
}

/// Flooding pushes for one Byzantine node: `F.reach(|honest_neighbors|)`
/// distinct targets, each sent `view_size` ids drawn with replacement from
/// `byz_ids`.
///
/// Returns `(target, message)` pairs.
pub fn flood_round<R: Rng + ?Sized>(
    sender: NodeId,
    honest_neighbors: &[NodeId],
    force: FloodForce,
    byz_ids: &[NodeId],
    view_size: usize,
    rng: &mut R,
) -> Vec<(NodeId, PushMessage)> {
    if byz_ids.is_empty() {
        return Vec::new();
    }
    let reach = force.reach(honest_neighbors.len());
    let mut picks = index::sample(rng, honest_neighbors.len(), reach).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| {
            let ids = (0..view_size)
                .map(|_| byz_ids[rng.random_range(0..byz_ids.len())])
                .collect();
            (honest_neighbors[i], PushMessage { sender, ids })
        })
        .collect()
}

/// Largest grid value with `ζ·direction_norm ≤ radius`; the smallest grid
/// value when none qualifies.
pub fn select_zeta(zeta_grid: &[f64], direction_norm: f64, radius: f64) -> f64 {
    let feasible = zeta_grid
        .iter()
        .copied()
        .filter(|z| z * direction_norm <= radius)
        .fold(f64::NEG_INFINITY, f64::max);
    if feasible.is_finite() {
        feasible
    } else {
        zeta_grid.iter().copied().reduce(f64::min).unwrap_or(0.0)
    }
}

/// The victim's filtering radius as the colluders estimate it: the
/// `trim`-th largest distance from the victim to an honest model. No
/// trimming means no radius.
pub fn radius_estimate(victim: &ModelVector, honest: &[&ModelVector], trim: usize) -> f64 {
    if trim == 0 || honest.is_empty() {
        return f64::INFINITY;
    }
    let mut dists: Vec<f64> = honest.iter().map(|m| m.distance(victim)).collect();
    dists.sort_by(|a, b| b.total_cmp(a));
    dists[trim.min(dists.len()) - 1]
}

/// `victim − ζ*·honest_mean`.
pub fn foe_poison(
    oracle: &CollusionOracle,
    zeta_grid: &[f64],
    victim: &ModelVector,
    radius: f64,
) -> ModelVector {
    let zeta = select_zeta(zeta_grid, oracle.honest_mean.norm(), radius);
    let mut out = victim.clone();
    out.add_scaled(&oracle.honest_mean, -zeta);
    out
}

/// `victim + ζ*·honest_std`.
pub fn alie_poison(
    oracle: &CollusionOracle,
    zeta_grid: &[f64],
    victim: &ModelVector,
    radius: f64,
) -> ModelVector {
    let zeta = select_zeta(zeta_grid, oracle.honest_std.norm(), radius);
    let mut out = victim.clone();
    out.add_scaled(&oracle.honest_std, zeta);
    out
}

/// Model a Byzantine responder returns to `victim`.
pub fn craft(
    attack: &PoisonAttack,
    oracle: &CollusionOracle,
    victim: &ModelVector,
    radius: f64,
) -> ModelVector {
    match attack.kind {
        PoisonKind::None => victim.clone(),
        PoisonKind::Foe => foe_poison(oracle, &attack.zeta_grid, victim, radius),
        PoisonKind::Alie => alie_poison(oracle, &attack.zeta_grid, victim, radius),
    }
}
