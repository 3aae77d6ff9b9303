//! Peer sampling: the history-aware sampler and the history-less baseline.
//!
//! Both samplers keep one ranking seed per view slot and fill each slot with
//! the lowest-ranked candidate. They differ in the candidate pool: the
//! history-aware sampler ranks every id it has ever seen, the baseline only
//! ranks current occupants plus this round's incoming ids.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{rank, select_view, GraphError, History, NodeId, RankingSeed, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "haps")]
    Haps,
    #[serde(rename = "basalt")]
    BasaltBaseline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushMessage {
    pub sender: NodeId,
    pub ids: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PullResponse {
    pub responder: NodeId,
    pub ids: Vec<NodeId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("seed refresh interval must be at least 1")]
    ZeroInterval,
    #[error("cannot refresh {requested} seeds in a view of {view_size} slots")]
    TooManySeeds { requested: usize, view_size: usize },
    #[error("baseline refresh ratio must lie in (0, 1], got {0}")]
    BadRatio(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Every `interval` rounds, `seeds_per_refresh` distinct slots get fresh
/// seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRefreshPolicy {
    pub interval: u64,
    pub seeds_per_refresh: usize,
}

impl Default for SeedRefreshPolicy {
    fn default() -> Self {
        SeedRefreshPolicy {
            interval: 1,
            seeds_per_refresh: 10,
        }
    }
}

impl SeedRefreshPolicy {
    pub fn validate(&self, view_size: usize) -> Result<(), SamplingError> {
        if self.interval == 0 {
            return Err(SamplingError::ZeroInterval);
        }
        if self.seeds_per_refresh > view_size {
            return Err(SamplingError::TooManySeeds {
                requested: self.seeds_per_refresh,
                view_size,
            });
        }
        Ok(())
    }

    pub fn is_due(&self, t: u64) -> bool {
        self.seeds_per_refresh > 0 && t.is_multiple_of(self.interval)
    }
}

/// Baseline refresh: `round(ρ·v)` slots every `round(v/ρ)` rounds, walking
/// the slots round-robin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasaltParams {
    pub rho: f64,
}

impl Default for BasaltParams {
    fn default() -> Self {
        BasaltParams { rho: 0.25 }
    }
}

impl BasaltParams {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(SamplingError::BadRatio(self.rho));
        }
        Ok(())
    }

    pub fn interval(&self, view_size: usize) -> u64 {
        ((view_size as f64 / self.rho).round() as u64).max(1)
    }

    pub fn slots_per_refresh(&self, view_size: usize) -> usize {
        ((self.rho * view_size as f64).round() as usize).min(view_size)
    }
}

/// Sampling state of one honest node.
///
/// `scores[k]` caches `rank(seeds[k], view[k])`. Under the history-aware
/// sampler `view == select_view(history, seeds, self_id)` holds after every
/// operation; the baseline never grows `history` past the bootstrap set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerState {
    self_id: NodeId,
    view: View,
    seeds: Vec<RankingSeed>,
    scores: Vec<u64>,
    history: History,
    refresh_cursor: usize,
}

impl SamplerState {
    /// Fresh seeds for `view_size` slots, view selected over `initial`.
    pub fn bootstrap<R: Rng + ?Sized>(
        self_id: NodeId,
        initial: &[NodeId],
        view_size: usize,
        rng: &mut R,
    ) -> Result<Self, SamplingError> {
        let seeds = (0..view_size).map(|k| RankingSeed::new(rng.random(), k)).collect();
        let history = History::from_ids(initial.iter().copied().filter(|&id| id != self_id));
        Self::from_parts(self_id, history, seeds)
    }

    pub fn from_parts(
        self_id: NodeId,
        history: History,
        seeds: Vec<RankingSeed>,
    ) -> Result<Self, SamplingError> {
        let view = select_view(&history, &seeds, self_id)?;
        let scores = seeds.iter().zip(view.slots()).map(|(s, &id)| rank(s, id)).collect();
        Ok(SamplerState {
            self_id,
            view,
            seeds,
            scores,
            history,
            refresh_cursor: 0,
        })
    }

    pub fn self_id(&self) -> NodeId {
        self.self_id
    }

    pub fn view(&self) -> &View {
        &self.view
    }

    pub fn seeds(&self) -> &[RankingSeed] {
        &self.seeds
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn view_size(&self) -> usize {
        self.seeds.len()
    }

    /// Adds `id` to the history and lets it challenge every slot.
    ///
    /// A newcomer always has the largest insertion index, so it only takes a
    /// slot with a strictly smaller score.
    fn absorb(&mut self, id: NodeId) {
        if id == self.self_id || self.history.insert(id).is_none() {
            return;
        }
        for (k, seed) in self.seeds.iter().enumerate() {
            let s = rank(seed, id);
            if s < self.scores[k] {
                self.scores[k] = s;
                self.view.set(k, id);
            }
        }
    }

    /// History-aware update: pushed ids in ascending sender order, then
    /// pulled ids.
    pub fn honest_round(&mut self, inbox_push: &[PushMessage], inbox_pull: &[PullResponse]) {
        let mut pushes: Vec<&PushMessage> = inbox_push.iter().collect();
        pushes.sort_by_key(|m| m.sender);
        for m in pushes {
            for &id in &m.ids {
                self.absorb(id);
            }
        }
        for r in inbox_pull {
            for &id in &r.ids {
                self.absorb(id);
            }
        }
    }

    /// Re-seeds `seeds_per_refresh` distinct uniformly chosen slots when `t`
    /// is on the refresh interval, then re-selects those slots over the whole
    /// history.
    pub fn refresh_seeds<R: Rng + ?Sized>(
        &mut self,
        t: u64,
        policy: &SeedRefreshPolicy,
        rng: &mut R,
    ) {
        if !policy.is_due(t) {
            return;
        }
        let v = self.view_size();
        let count = policy.seeds_per_refresh.min(v);
        let mut slots = index::sample(rng, v, count).into_vec();
        slots.sort_unstable();
        for k in slots {
            self.seeds[k] = RankingSeed::new(rng.random(), k);
            self.rescan_history(k);
        }
    }

    fn rescan_history(&mut self, k: usize) {
        let seed = self.seeds[k];
        let self_id = self.self_id;
        // history iterates in insertion order, so the first minimum wins ties
        let best = self
            .history
            .iter()
            .filter(|&id| id != self_id)
            .map(|id| (rank(&seed, id), id))
            .min_by_key(|&(s, _)| s)
            .expect("bootstrap guarantees a candidate other than self");
        self.scores[k] = best.0;
        self.view.set(k, best.1);
    }

    /// Baseline update: each slot takes the argmin of its seed over the
    /// current occupants and this round's incoming ids. Every
    /// `params.interval(v)` rounds the next `params.slots_per_refresh(v)`
    /// slots (round-robin) get fresh seeds first.
    pub fn basalt_round<R: Rng + ?Sized>(
        &mut self,
        inbox_push: &[PushMessage],
        inbox_pull: &[PullResponse],
        t: u64,
        params: &BasaltParams,
        rng: &mut R,
    ) {
        let v = self.view_size();
        let mut pool: Vec<NodeId> = self.view.slots().to_vec();
        let mut pushes: Vec<&PushMessage> = inbox_push.iter().collect();
        pushes.sort_by_key(|m| m.sender);
        pool.extend(pushes.iter().flat_map(|m| m.ids.iter().copied()));
        pool.extend(inbox_pull.iter().flat_map(|r| r.ids.iter().copied()));
        let self_id = self.self_id;
        pool.retain(|&id| id != self_id);
        pool.sort_unstable();
        pool.dedup();

        if v > 0 && t.is_multiple_of(params.interval(v)) {
            for _ in 0..params.slots_per_refresh(v) {
                let k = self.refresh_cursor;
                self.seeds[k] = RankingSeed::new(rng.random(), k);
                self.refresh_cursor = (k + 1) % v;
            }
        }

        for k in 0..v {
            let seed = self.seeds[k];
            if let Some((s, id)) = pool.iter().map(|&id| (rank(&seed, id), id)).min() {
                self.scores[k] = s;
                self.view.set(k, id);
            }
        }
    }
}

/// Push and pull targets for this round, each uniform over the view slots.
pub fn pick_targets<R: Rng + ?Sized>(view: &View, rng: &mut R) -> Option<(NodeId, NodeId)> {
    if view.is_empty() {
        return None;
    }
    let slots = view.slots();
    let push = slots[rng.random_range(0..slots.len())];
    let pull = slots[rng.random_range(0..slots.len())];
    Some((push, pull))
}
