//! Node identities, views, histories, slot ranking and the per-round
//! communication graph.
//!
//! Views are built by min-wise selection: every slot owns a seed and picks the
//! candidate with the smallest keyed hash. A candidate an adversary injects
//! many times has no more chance of winning a slot than one seen once, which
//! is what makes the selection resistant to identifier flooding.

use std::fmt;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense participant index in `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(u32::try_from(i).expect("node index exceeds u32"))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Honest,
    Byzantine,
}

impl Role {
    pub fn is_byzantine(self) -> bool {
        matches!(self, Role::Byzantine)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("history of node {0} has no candidate other than itself")]
    EmptyHistory(NodeId),
}

/// Fixed-size ordered list of neighbour slots. The same id may occupy more
/// than one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct View(Vec<NodeId>);

impl View {
    pub fn new(slots: Vec<NodeId>) -> Self {
        View(slots)
    }

    pub fn slots(&self) -> &[NodeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.0.contains(&id)
    }

    /// Distinct occupants in ascending id order.
    pub fn distinct(&self) -> Vec<NodeId> {
        let mut ids = self.0.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub(crate) fn set(&mut self, slot: usize, id: NodeId) {
        self.0[slot] = id;
    }
}

/// Every identifier a node has ever seen, in first-seen order.
///
/// Never shrinks; the insertion position doubles as the tie-break for slot
/// selection.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    ids: IndexSet<NodeId>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I: IntoIterator<Item = NodeId>>(ids: I) -> Self {
        let mut h = Self::new();
        for id in ids {
            h.insert(id);
        }
        h
    }

    /// Returns the insertion index if `id` was not known yet.
    pub fn insert(&mut self, id: NodeId) -> Option<usize> {
        let (idx, fresh) = self.ids.insert_full(id);
        fresh.then_some(idx)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.ids.contains(&id)
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.ids.get_index_of(&id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Iterates in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids.iter().copied()
    }

    pub fn is_subset(&self, other: &History) -> bool {
        self.ids.iter().all(|id| other.contains(*id))
    }
}

/// Seed of the ranking function attached to one view slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankingSeed {
    pub seed: u64,
    pub slot: u32,
}

impl RankingSeed {
    pub fn new(seed: u64, slot: usize) -> Self {
        RankingSeed {
            seed,
            slot: u32::try_from(slot).expect("slot index exceeds u32"),
        }
    }
}

/// SplitMix64 finaliser. A bijection on `u64`.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed slot score of `candidate`; lower is better.
///
/// Both mixing rounds are bijections, so for a fixed seed two distinct
/// candidates never share a score.
pub fn rank(seed: &RankingSeed, candidate: NodeId) -> u64 {
    let key = ((seed.slot as u64) << 32) | candidate.0 as u64;
    mix64(seed.seed ^ mix64(key.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Per-slot argmin of the ranking over `history \ {self_id}`.
///
/// Ties go to the id inserted first (and then the smaller id, which can only
/// matter for hand-built histories).
pub fn select_view(
    history: &History,
    seeds: &[RankingSeed],
    self_id: NodeId,
) -> Result<View, GraphError> {
    let mut slots = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let best = history
            .iter()
            .enumerate()
            .filter(|(_, id)| *id != self_id)
            .min_by_key(|(pos, id)| (rank(seed, *id), *pos, *id))
            .map(|(_, id)| id)
            .ok_or(GraphError::EmptyHistory(self_id))?;
        slots.push(best);
    }
    Ok(View::new(slots))
}

/// Directed out-link graph of one round: node `i` links to every occupant of
/// its view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundGraph {
    pub round: u64,
    pub out_edges: Vec<View>,
}

impl RoundGraph {
    pub fn new(round: u64, out_edges: Vec<View>) -> Self {
        RoundGraph { round, out_edges }
    }

    pub fn node_count(&self) -> usize {
        self.out_edges.len()
    }

    pub fn view(&self, id: NodeId) -> &View {
        &self.out_edges[id.index()]
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.out_edges[from.index()].contains(to)
    }
}
