//! Synchronous round loop: identifier exchange, view maintenance, threshold
//! computation, model pulls, robust aggregation and local training.

mod config;
mod output;

pub use config::{preset, ConfigError, DataSource, LearningConfig, SimConfig, ThresholdMode, PRESETS};
pub use output::{run_to_dir, RunSummary, METRICS_FILE, SUMMARY_FILE};

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::adversary::{self, CollusionOracle, PoisonKind};
use crate::aggregation::{aggregate_uniform, AggregationError, AggregatorKind};
use crate::apt::{b_of_t, AptParams};
use crate::graph::{mix64, NodeId, Role, RoundGraph, View};
use crate::learning::{
    dirichlet_partition, f1_macro, load_idx, local_step, train_centralized, train_test_split, Classifier,
    Dataset, LearningError, TrainerState,
};
use crate::metrics::{self, RoundMetrics};
use crate::model::ModelVector;
use crate::sampling::{pick_targets, PullResponse, PushMessage, SamplerKind, SamplerState, SamplingError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("preparing data: {0}")]
    Learning(#[from] LearningError),
    #[error("bootstrapping node {node}: {source}")]
    Bootstrap {
        node: NodeId,
        #[source]
        source: SamplingError,
    },
    #[error("round {round}: aggregation at node {node}: {source}")]
    Aggregation {
        round: u64,
        node: NodeId,
        #[source]
        source: AggregationError,
    },
    #[error("round {round}: model of node {node} is no longer finite")]
    Diverged { round: u64, node: NodeId },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("writing metrics: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing summary: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn is_config(&self) -> bool {
        matches!(self, SimError::Config(_))
    }
}

// rng stream domains
const ROLES: u64 = 1;
const DATA: u64 = 2;
const BOOTSTRAP: u64 = 3;
const SAMPLING: u64 = 4;
const TRAINING: u64 = 5;
const ADVERSARY: u64 = 6;

fn child_rng(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(master ^ mix64((domain << 48) ^ index)))
}

struct HonestNode {
    id: NodeId,
    sampler: SamplerState,
    model: ModelVector,
    trainer: TrainerState,
    shard: Option<Dataset>,
    rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
}

struct ByzantineNode {
    id: NodeId,
    view: View,
    rng: ChaCha8Rng,
}

struct Task {
    classifier: Classifier,
    test: Dataset,
}

/// Everything one run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub config: SimConfig,
    pub rows: Vec<RoundMetrics>,
    /// F1 of every honest node after the last round, in ascending id order.
    pub final_f1: Vec<f64>,
    pub wall_clock_secs: f64,
}

pub struct Simulation {
    config: SimConfig,
    roles: Vec<Role>,
    honest: Vec<HonestNode>,
    byzantine: Vec<ByzantineNode>,
    honest_ids: Vec<NodeId>,
    byz_ids: Vec<NodeId>,
    /// Position of every node inside `honest` or `byzantine`.
    slot: Vec<usize>,
    apt: AptParams,
    task: Option<Task>,
    round: u64,
    last_f1: Vec<f64>,
}

impl Simulation {
    /// Assigns roles, prepares data and bootstraps every node.
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.n;
        let v = config.view_size;
        let n_byz = config.n_byzantine();

        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut child_rng(config.seed, ROLES, 0));
        let mut roles = vec![Role::Honest; n];
        for &i in &order[..n_byz] {
            roles[i] = Role::Byzantine;
        }
        let honest_ids: Vec<NodeId> = (0..n).filter(|&i| !roles[i].is_byzantine()).map(NodeId::from).collect();
        let byz_ids: Vec<NodeId> = (0..n).filter(|&i| roles[i].is_byzantine()).map(NodeId::from).collect();
        let mut slot = vec![0; n];
        for (k, id) in honest_ids.iter().enumerate() {
            slot[id.index()] = k;
        }
        for (k, id) in byz_ids.iter().enumerate() {
            slot[id.index()] = k;
        }

        let (task, shards) = if config.learning.enabled {
            let (task, _, shards) = prepare_task(&config, honest_ids.len())?;
            (Some(task), shards.into_iter().map(Some).collect())
        } else {
            (None, vec![None; honest_ids.len()])
        };
        let dim = task.as_ref().map_or(0, |t| t.classifier.dim());

        let mut honest = Vec::with_capacity(honest_ids.len());
        for (&id, shard) in honest_ids.iter().zip(shards) {
            let mut boot = child_rng(config.seed, BOOTSTRAP, id.0 as u64);
            let initial = draw_bootstrap(id, n, config.bootstrap_size, &roles, &mut boot);
            let mut history: Vec<NodeId> = initial;
            if config.prefill_byzantine_history {
                history.extend(byz_ids.iter().copied());
            }
            let mut rng = child_rng(config.seed, SAMPLING, id.0 as u64);
            let sampler = SamplerState::bootstrap(id, &history, v, &mut rng)
                .map_err(|source| SimError::Bootstrap { node: id, source })?;
            honest.push(HonestNode {
                id,
                sampler,
                model: ModelVector::zeros(dim),
                trainer: TrainerState::new(dim),
                shard,
                rng,
                train_rng: child_rng(config.seed, TRAINING, id.0 as u64),
            });
        }

        let mut byzantine: Vec<ByzantineNode> = byz_ids
            .iter()
            .map(|&id| ByzantineNode {
                id,
                view: View::new(Vec::new()),
                rng: child_rng(config.seed, ADVERSARY, id.0 as u64),
            })
            .collect();
        for b in &mut byzantine {
            b.view = byzantine_view(&honest_ids, v, &mut b.rng);
        }

        let apt = AptParams {
            n_honest: honest_ids.len(),
            n_byz,
            c0: config.initial_honest(),
            view_size: v,
            kappa: config.kappa,
        };

        Ok(Simulation {
            config,
            roles,
            honest,
            byzantine,
            honest_ids,
            byz_ids,
            slot,
            apt,
            task,
            round: 0,
            last_f1: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn honest_ids(&self) -> &[NodeId] {
        &self.honest_ids
    }

    pub fn byzantine_ids(&self) -> &[NodeId] {
        &self.byz_ids
    }

    pub fn apt_params(&self) -> &AptParams {
        &self.apt
    }

    /// Sampling state of an honest node.
    pub fn sampler(&self, id: NodeId) -> Option<&SamplerState> {
        self.honest_node(id).map(|h| &h.sampler)
    }

    pub fn model(&self, id: NodeId) -> Option<&ModelVector> {
        self.honest_node(id).map(|h| &h.model)
    }

    pub fn classifier(&self) -> Option<Classifier> {
        self.task.as_ref().map(|t| t.classifier)
    }

    fn honest_node(&self, id: NodeId) -> Option<&HonestNode> {
        (!self.roles.get(id.index())?.is_byzantine()).then(|| &self.honest[self.slot[id.index()]])
    }

    /// Out-link graph of the current round.
    pub fn graph(&self) -> RoundGraph {
        let mut edges = vec![View::new(Vec::new()); self.config.n];
        for h in &self.honest {
            edges[h.id.index()] = h.sampler.view().clone();
        }
        for b in &self.byzantine {
            edges[b.id.index()] = b.view.clone();
        }
        RoundGraph::new(self.round, edges)
    }

    /// Runs one round and returns its metrics.
    pub fn step(&mut self) -> Result<RoundMetrics, SimError> {
        self.round += 1;
        let t = self.round;
        let v = self.config.view_size;

        // identifier exchange, computed from the previous round's views
        let mut inbox_push: Vec<Vec<PushMessage>> = vec![Vec::new(); self.honest.len()];
        let mut inbox_pull: Vec<Vec<PullResponse>> = vec![Vec::new(); self.honest.len()];
        let mut messages = 2 * self.honest.len() as u64;
        let mut pull_targets = Vec::with_capacity(self.honest.len());
        for k in 0..self.honest.len() {
            let node = &mut self.honest[k];
            let (push_to, pull_from) =
                pick_targets(node.sampler.view(), &mut node.rng).expect("views are never empty");
            pull_targets.push(pull_from);
            if !self.roles[push_to.index()].is_byzantine() {
                let msg = PushMessage {
                    sender: node.id,
                    ids: node.sampler.view().slots().to_vec(),
                };
                inbox_push[self.slot[push_to.index()]].push(msg);
            }
        }
        for b in &mut self.byzantine {
            b.view = byzantine_view(&self.honest_ids, v, &mut b.rng);
            let neighbours = b.view.distinct();
            let floods = adversary::flood_round(
                b.id,
                &neighbours,
                self.config.flood_force,
                &self.byz_ids,
                v,
                &mut b.rng,
            );
            messages += floods.len() as u64;
            for (target, msg) in floods {
                inbox_push[self.slot[target.index()]].push(msg);
            }
        }
        for (k, &from) in pull_targets.iter().enumerate() {
            let ids = if self.roles[from.index()].is_byzantine() {
                let b = &mut self.byzantine[self.slot[from.index()]];
                (0..v)
                    .map(|_| self.byz_ids[b.rng.random_range(0..self.byz_ids.len())])
                    .collect()
            } else {
                self.honest[self.slot[from.index()]].sampler.view().slots().to_vec()
            };
            inbox_pull[k].push(PullResponse { responder: from, ids });
        }

        // history or pool update, seed refresh, view re-selection
        let sampler_kind = self.config.sampler;
        let policy = self.config.seed_refresh;
        let basalt = self.config.basalt;
        self.honest
            .par_iter_mut()
            .zip(inbox_push.par_iter())
            .zip(inbox_pull.par_iter())
            .for_each(|((node, pushes), pulls)| match sampler_kind {
                SamplerKind::Haps => {
                    node.sampler.honest_round(pushes, pulls);
                    node.sampler.refresh_seeds(t, &policy, &mut node.rng);
                }
                SamplerKind::BasaltBaseline => {
                    node.sampler.basalt_round(pushes, pulls, t, &basalt, &mut node.rng);
                }
            });

        let estimate = b_of_t(&self.apt, t);
        let b_used = match self.config.threshold {
            ThresholdMode::Apt => estimate.b_t,
            ThresholdMode::Fixed { b } => b,
            ThresholdMode::Conservative => v.saturating_sub(1) as f64,
        };

        if self.task.is_some() {
            self.learn(t, b_used)?;
        }

        let graph = self.graph();
        let limit = b_used.ceil() as usize;
        let byz_counts: Vec<usize> = self
            .honest
            .iter()
            .map(|h| metrics::byzantine_slots(&graph, &self.roles, h.id))
            .collect();
        let (f1_mean, f1_std) = match &self.task {
            Some(task) if t.is_multiple_of(self.config.learning.eval_every) || t == self.config.rounds => {
                self.last_f1 = self
                    .honest
                    .par_iter()
                    .map(|h| f1_macro(&task.classifier, &h.model, &task.test))
                    .collect();
                let (m, s) = metrics::summarize_f1(&self.last_f1);
                (Some(m), Some(s))
            }
            _ => (None, None),
        };

        Ok(RoundMetrics {
            round: t,
            f_in_out: metrics::f_in_out(&graph, &self.roles),
            f_in_in: metrics::f_in_in(&graph, &self.roles),
            b_ratio: estimate.b_ratio,
            b_t: b_used,
            hssr: metrics::hssr(&graph, &self.roles),
            f1_mean,
            f1_std,
            messages_sent: messages,
            max_byz_in_view: byz_counts.iter().copied().max().unwrap_or(0),
            views_over_threshold: byz_counts.iter().filter(|&&c| c > limit).count(),
        })
    }

    /// Model pulls along out-views, robust mixing and one local step.
    fn learn(&mut self, t: u64, b: f64) -> Result<(), SimError> {
        let task = self.task.as_ref().expect("learning enabled");
        let attack = &self.config.attack;
        let aggregator = self.config.aggregator;
        let honest_models: Vec<&ModelVector> = self.honest.iter().map(|h| &h.model).collect();
        let oracle = (attack.kind != PoisonKind::None).then(|| CollusionOracle::observe(&honest_models));
        let trim = match aggregator {
            AggregatorKind::PlainAverage => 0,
            _ => b.ceil() as usize,
        };
        let roles = &self.roles;
        let slot = &self.slot;

        let mixed: Vec<Result<ModelVector, SimError>> = self
            .honest
            .par_iter()
            .enumerate()
            .map(|(k, node)| {
                let view = node.sampler.view().slots();
                let poison = view
                    .iter()
                    .any(|j| roles[j.index()].is_byzantine())
                    .then(|| match &oracle {
                        Some(oracle) => {
                            let others: Vec<&ModelVector> = honest_models
                                .iter()
                                .enumerate()
                                .filter(|&(h, _)| h != k)
                                .map(|(_, m)| *m)
                                .collect();
                            let radius = adversary::radius_estimate(&node.model, &others, trim);
                            adversary::craft(attack, oracle, &node.model, radius)
                        }
                        None => node.model.clone(),
                    });
                let received: Vec<(NodeId, &ModelVector)> = view
                    .iter()
                    .map(|&j| {
                        let m = if roles[j.index()].is_byzantine() {
                            poison.as_ref().expect("crafted for Byzantine slots")
                        } else {
                            honest_models[slot[j.index()]]
                        };
                        (j, m)
                    })
                    .collect();
                aggregate_uniform(aggregator, &node.model, &received, b).map_err(|source| {
                    SimError::Aggregation {
                        round: t,
                        node: node.id,
                        source,
                    }
                })
            })
            .collect();
        let mixed = mixed.into_iter().collect::<Result<Vec<_>, _>>()?;

        let cfg = self.config.learning.trainer;
        let classifier = task.classifier;
        self.honest
            .par_iter_mut()
            .zip(mixed)
            .for_each(|(node, aggregated)| {
                let shard = node.shard.as_ref().expect("honest nodes hold a shard");
                node.model = local_step(&classifier, &aggregated, shard, &cfg, &mut node.trainer, &mut node.train_rng);
            });
        if let Some(node) = self.honest.iter().find(|h| h.model.check_finite().is_err()) {
            return Err(SimError::Diverged { round: t, node: node.id });
        }
        Ok(())
    }

    /// Per-node F1 from the most recent evaluation.
    pub fn last_f1(&self) -> &[f64] {
        &self.last_f1
    }
}

/// Runs all rounds, handing every row to `sink` as soon as it exists.
pub fn run_with<F>(config: SimConfig, mut sink: F) -> Result<RunArtifact, SimError>
where
    F: FnMut(&RoundMetrics) -> Result<(), SimError>,
{
    let started = Instant::now();
    let mut sim = Simulation::new(config)?;
    let mut rows = Vec::with_capacity(sim.config.rounds as usize);
    for _ in 0..sim.config.rounds {
        let row = sim.step()?;
        sink(&row)?;
        rows.push(row);
    }
    Ok(RunArtifact {
        final_f1: sim.last_f1.clone(),
        config: sim.config,
        rows,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

pub fn run(config: SimConfig) -> Result<RunArtifact, SimError> {
    run_with(config, |_| Ok(()))
}

/// `size` i.i.d. ids from everyone but `me`, redrawn until one is honest.
fn draw_bootstrap<R: Rng + ?Sized>(me: NodeId, n: usize, size: usize, roles: &[Role], rng: &mut R) -> Vec<NodeId> {
    loop {
        let ids: Vec<NodeId> = (0..size)
            .map(|_| {
                let r = rng.random_range(0..n - 1);
                NodeId::from(if r >= me.index() { r + 1 } else { r })
            })
            .collect();
        if ids.iter().any(|id| !roles[id.index()].is_byzantine()) {
            return ids;
        }
    }
}

/// `v` distinct honest ids, or `v` draws with replacement when there are
/// fewer honest nodes than slots.
fn byzantine_view<R: Rng + ?Sized>(honest: &[NodeId], v: usize, rng: &mut R) -> View {
    if honest.len() >= v {
        View::new(index::sample(rng, honest.len(), v).into_iter().map(|i| honest[i]).collect())
    } else {
        View::new((0..v).map(|_| honest[rng.random_range(0..honest.len())]).collect())
    }
}

/// Macro F1 of a model trained for `steps` mini-batch steps on the pooled
/// training data of every honest node, evaluated on the run's test split.
pub fn centralized_f1(config: &SimConfig, steps: usize) -> Result<f64, SimError> {
    config.validate()?;
    let (task, train, _) = prepare_task(config, config.n_honest())?;
    let mut rng = child_rng(config.seed, TRAINING, u64::MAX);
    let model = train_centralized(&task.classifier, &train, &config.learning.trainer, steps, &mut rng);
    Ok(f1_macro(&task.classifier, &model, &task.test))
}

fn prepare_task(config: &SimConfig, n_honest: usize) -> Result<(Task, Dataset, Vec<Dataset>), SimError> {
    let mut rng = child_rng(config.seed, DATA, 0);
    let (pool, test_fraction) = match &config.learning.data {
        DataSource::Synthetic(spec) => (spec.generate(spec.pool_size(n_honest), &mut rng), spec.test_fraction),
        DataSource::Idx {
            images,
            labels,
            test_fraction,
        } => (load_idx(images, labels)?, *test_fraction),
    };
    let (train, test) = train_test_split(&pool, test_fraction, &mut rng);
    if test.is_empty() {
        return Err(LearningError::InsufficientData { needed: 1, found: 0 }.into());
    }
    let partition = dirichlet_partition(&train, n_honest, config.learning.dirichlet_beta, &mut rng)?;
    let classifier = Classifier::for_dataset(&pool);
    Ok((Task { classifier, test }, train, partition.shards))
}
