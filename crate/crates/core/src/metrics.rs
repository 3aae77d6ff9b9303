//! Per-round measurements.

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, Role, RoundGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub f_in_out: f64,
    pub f_in_in: f64,
    #[serde(rename = "B_t")]
    pub b_ratio: f64,
    pub b_t: f64,
    pub hssr: f64,
    pub f1_mean: Option<f64>,
    pub f1_std: Option<f64>,
    pub messages_sent: u64,
    /// Largest number of Byzantine slots in any honest view.
    pub max_byz_in_view: usize,
    /// Honest views holding more Byzantine slots than `⌈b_t⌉`.
    pub views_over_threshold: usize,
}

impl RoundMetrics {
    pub const CSV_HEADER: [&'static str; 9] = [
        "round",
        "f_in_out",
        "f_in_in",
        "B_t",
        "b_t",
        "hssr",
        "f1_mean",
        "f1_std",
        "messages_sent",
    ];

    pub fn csv_record(&self) -> [String; 9] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.round.to_string(),
            self.f_in_out.to_string(),
            self.f_in_in.to_string(),
            self.b_ratio.to_string(),
            self.b_t.to_string(),
            self.hssr.to_string(),
            opt(self.f1_mean),
            opt(self.f1_std),
            self.messages_sent.to_string(),
        ]
    }
}

fn is_byz(roles: &[Role], id: NodeId) -> bool {
    roles[id.index()].is_byzantine()
}

/// Byzantine slots in `id`'s out-view.
pub fn byzantine_slots(graph: &RoundGraph, roles: &[Role], id: NodeId) -> usize {
    graph.view(id).slots().iter().filter(|&&j| is_byz(roles, j)).count()
}

/// Mean over honest nodes of the Byzantine share of their out-view slots.
pub fn f_in_out(graph: &RoundGraph, roles: &[Role]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, role) in roles.iter().enumerate() {
        if role.is_byzantine() {
            continue;
        }
        let id = NodeId::from(i);
        let v = graph.view(id).len();
        if v > 0 {
            total += byzantine_slots(graph, roles, id) as f64 / v as f64;
        }
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Mean over honest nodes with at least one incoming slot of the Byzantine
/// share of those slots.
pub fn f_in_in(graph: &RoundGraph, roles: &[Role]) -> f64 {
    let n = graph.node_count();
    let mut incoming = vec![0usize; n];
    let mut from_byz = vec![0usize; n];
    for (j, view) in graph.out_edges.iter().enumerate() {
        let byz = roles[j].is_byzantine();
        for &i in view.slots() {
            incoming[i.index()] += 1;
            if byz {
                from_byz[i.index()] += 1;
            }
        }
    }
    let shares: Vec<f64> = (0..n)
        .filter(|&i| !roles[i].is_byzantine() && incoming[i] > 0)
        .map(|i| from_byz[i] as f64 / incoming[i] as f64)
        .collect();
    if shares.is_empty() {
        0.0
    } else {
        shares.iter().sum::<f64>() / shares.len() as f64
    }
}

/// Strongly connected components of an adjacency list (iterative Tarjan).
/// Returns the component index of every vertex.
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<usize> {
    const UNSEEN: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNSEEN; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;
    // (vertex, position in its adjacency list)
    let mut frames: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        frames.push((root, 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = frames.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    frames.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            frames.pop();
            if let Some(&(parent, _)) = frames.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().expect("tarjan stack holds the component");
                    on_stack[w] = false;
                    comp[w] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    comp
}

/// Share of honest nodes inside the largest strongly connected component of
/// the honest-to-honest out-link graph.
pub fn hssr(graph: &RoundGraph, roles: &[Role]) -> f64 {
    let honest: Vec<usize> = (0..roles.len()).filter(|&i| !roles[i].is_byzantine()).collect();
    if honest.is_empty() {
        return 0.0;
    }
    let mut local = vec![usize::MAX; roles.len()];
    for (k, &i) in honest.iter().enumerate() {
        local[i] = k;
    }
    let adj: Vec<Vec<usize>> = honest
        .iter()
        .map(|&i| {
            let mut out: Vec<usize> = graph.out_edges[i]
                .slots()
                .iter()
                .map(|j| local[j.index()])
                .filter(|&k| k != usize::MAX)
                .collect();
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect();
    let comp = strongly_connected_components(&adj);
    let mut sizes = vec![0usize; honest.len()];
    for c in comp {
        sizes[c] += 1;
    }
    *sizes.iter().max().expect("non-empty") as f64 / honest.len() as f64
}

/// Mean and population standard deviation.
pub fn summarize_f1(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::View;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(views: Vec<Vec<u32>>) -> RoundGraph {
        RoundGraph::new(0, views.into_iter().map(|v| View::new(v.into_iter().map(NodeId).collect())).collect())
    }

    /// Largest SCC through a transitive-closure matrix.
    fn closure_hssr(adj: &[Vec<bool>]) -> f64 {
        let n = adj.len();
        let mut reach = adj.to_vec();
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let largest = (0..n)
            .map(|i| (0..n).filter(|&j| reach[i][j] && reach[j][i]).count())
            .max()
            .unwrap_or(0);
        largest as f64 / n as f64
    }

    fn random_case(rng: &mut ChaCha8Rng, n: usize, p: f64) -> (RoundGraph, Vec<Vec<bool>>) {
        let mut adj = vec![vec![false; n]; n];
        let mut views = Vec::with_capacity(n);
        for (i, row) in adj.iter_mut().enumerate() {
            let mut out = Vec::new();
            for (j, cell) in row.iter_mut().enumerate() {
                if i != j && rng.random_bool(p) {
                    *cell = true;
                    out.push(j as u32);
                }
            }
            views.push(out);
        }
        (graph(views), adj)
    }

    #[test]
    fn f_in_examples() {
        let roles = [Role::Honest, Role::Honest, Role::Byzantine, Role::Byzantine];
        // one and three Byzantine slots out of four
        let g = graph(vec![vec![1, 2, 1, 1], vec![2, 3, 2, 0], vec![0, 1, 0, 1], vec![0, 0, 1, 1]]);
        assert_eq!(f_in_out(&g, &roles), 0.5);

        let honest = [Role::Honest; 3];
        let g = graph(vec![vec![1, 2], vec![2, 0], vec![0, 1]]);
        assert_eq!(f_in_out(&g, &honest), 0.0);
        assert_eq!(f_in_in(&g, &honest), 0.0);

        let roles = [Role::Honest, Role::Honest, Role::Byzantine];
        let g = graph(vec![vec![2, 2], vec![2, 2], vec![0, 1]]);
        assert_eq!(f_in_out(&g, &roles), 1.0);
        assert_eq!(f_in_in(&g, &roles), 1.0);
    }

    #[test]
    fn hssr_examples() {
        let roles = [Role::Honest; 4];
        let complete = graph(vec![vec![1, 2, 3], vec![0, 2, 3], vec![0, 1, 3], vec![0, 1, 2]]);
        assert_eq!(hssr(&complete, &roles), 1.0);

        let roles = [Role::Honest, Role::Honest, Role::Honest, Role::Honest, Role::Byzantine];
        let g = graph(vec![vec![1], vec![2], vec![0], vec![4], vec![3]]);
        assert_eq!(hssr(&g, &roles), 0.75);
    }

    #[test]
    fn hssr_matches_closure_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (g, adj) = random_case(&mut rng, 50, 0.04);
        let roles = vec![Role::Honest; 50];
        assert_eq!(hssr(&g, &roles), closure_hssr(&adj));
        for _ in 0..2000 {
            let n = rng.random_range(1..=6);
            let (g, adj) = random_case(&mut rng, n, 0.4);
            let roles = vec![Role::Honest; n];
            assert_eq!(hssr(&g, &roles), closure_hssr(&adj));
        }
    }

    #[test]
    fn f1_summaries() {
        let (m, s) = summarize_f1(&[0.7, 0.7, 0.7]);
        assert!((m - 0.7).abs() < 1e-12 && s < 1e-12);
        assert_eq!(summarize_f1(&[0.0, 1.0]), (0.5, 0.5));
        let (m, s) = summarize_f1(&[0.9, 0.92, 0.94]);
        assert!((m - 0.92).abs() < 1e-12);
        assert!((s - 0.016_329_9).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn hssr_ignores_relabelling(seed in any::<u64>(), n in 2usize..12, shift in 1usize..11) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (g, _) = random_case(&mut rng, n, 0.3);
            let perm = |i: usize| (i + shift) % n;
            let mut relabelled = vec![View::new(vec![]); n];
            for i in 0..n {
                relabelled[perm(i)] = View::new(
                    g.out_edges[i].slots().iter().map(|j| NodeId::from(perm(j.index()))).collect(),
                );
            }
            let roles = vec![Role::Honest; n];
            prop_assert_eq!(hssr(&g, &roles), hssr(&RoundGraph::new(0, relabelled), &roles));
        }
    }
}
