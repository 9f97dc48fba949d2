//! Second-order biased random walks over the unity graph.
//!
//! From state (t -> v) the next hop x is drawn with unnormalized bias
//! `alpha * weight(v, x)` where alpha is `1/p` for returning to t, `1` for
//! nodes adjacent to t and `1/q` otherwise. The first hop of a walk uses
//! plain weight-proportional probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::UnityGraph;

use super::alias::AliasTable;
use super::WalkConfig;

/// Precomputed sampling tables. `second_order[e]` is the table for the
/// directed state arriving via directed-edge index `e`, over the current
/// node's neighbor list. Memory is O(sum of squared degrees); the on-the-fly
/// mode rebuilds each table at the step it is needed and samples identically.
pub struct TransitionTables {
    pub p: f64,
    pub q: f64,
    first_order: Vec<Option<AliasTable>>,
    second_order: Vec<Option<AliasTable>>,
    /// Start of node v's directed-edge block in `second_order`.
    edge_offset: Vec<usize>,
    /// Ordinals of nodes with no neighbors; walks from them stop at length 1.
    pub isolated: Vec<usize>,
    on_the_fly: bool,
}

/// Unnormalized second-order biases for state (prev -> cur), aligned with
/// `graph.adjacency[cur]`.
pub fn biased_weights(graph: &UnityGraph, prev: usize, cur: usize, p: f64, q: f64) -> Vec<f64> {
    graph.adjacency[cur]
        .iter()
        .map(|nb| {
            let alpha = if nb.node == prev {
                1.0 / p
            } else if graph.adjacency[prev].binary_search_by_key(&nb.node, |n| n.node).is_ok() {
                1.0
            } else {
                1.0 / q
            };
            alpha * nb.weight
        })
        .collect()
}

/// Normalized transition distribution for state (prev -> cur).
pub fn transition_distribution(
    graph: &UnityGraph,
    prev: usize,
    cur: usize,
    p: f64,
    q: f64,
) -> Vec<f64> {
    let weights = biased_weights(graph, prev, cur, p, q);
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

impl TransitionTables {
    pub fn build(graph: &UnityGraph, p: f64, q: f64, on_the_fly: bool) -> Result<Self> {
        if p <= 0.0 || q <= 0.0 {
            return Err(Error::Config(format!("walk biases must be positive (p={p}, q={q})")));
        }
        if graph.node_count() == 0 {
            return Err(Error::Config("cannot build transition tables on an empty graph".into()));
        }
        let n = graph.node_count();
        let mut first_order = Vec::with_capacity(n);
        let mut isolated = Vec::new();
        for v in 0..n {
            if graph.adjacency[v].is_empty() {
                isolated.push(v);
                first_order.push(None);
            } else {
                let weights: Vec<f64> = graph.adjacency[v].iter().map(|nb| nb.weight).collect();
                first_order.push(Some(AliasTable::new(&weights)));
            }
        }
        if !isolated.is_empty() {
            log::warn!("{} isolated node(s); their walks have length 1", isolated.len());
        }

        let mut edge_offset = Vec::with_capacity(n + 1);
        let mut total_edges = 0usize;
        for v in 0..n {
            edge_offset.push(total_edges);
            total_edges += graph.adjacency[v].len();
        }
        edge_offset.push(total_edges);

        let mut second_order = Vec::new();
        if !on_the_fly {
            second_order.reserve(total_edges);
            for cur in 0..n {
                for nb in &graph.adjacency[cur] {
                    // state (cur -> nb.node): table over nb.node's neighbors
                    let weights = biased_weights(graph, cur, nb.node, p, q);
                    second_order.push(Some(AliasTable::new(&weights)));
                }
            }
        }
        Ok(TransitionTables {
            p,
            q,
            first_order,
            second_order,
            edge_offset,
            isolated,
            on_the_fly,
        })
    }

    /// Table (built or cached) for state (prev -> cur); `prev_nb_index` is
    /// cur's position inside prev's neighbor list.
    fn second_order_sample<R: Rng + ?Sized>(
        &self,
        graph: &UnityGraph,
        prev: usize,
        prev_nb_index: usize,
        cur: usize,
        rng: &mut R,
    ) -> usize {
        if self.on_the_fly {
            let table = AliasTable::new(&biased_weights(graph, prev, cur, self.p, self.q));
            return table.sample(rng);
        }
        let table = self.second_order[self.edge_offset[prev] + prev_nb_index]
            .as_ref()
            .expect("precomputed table");
        table.sample(rng)
    }

    pub fn first_order_sample<R: Rng + ?Sized>(&self, v: usize, rng: &mut R) -> Option<usize> {
        self.first_order[v].as_ref().map(|t| t.sample(rng))
    }

    /// Sample the node following state (prev -> cur). `None` when the nodes
    /// are not adjacent or cur is a dead end.
    pub fn sample_next<R: Rng + ?Sized>(
        &self,
        graph: &UnityGraph,
        prev: usize,
        cur: usize,
        rng: &mut R,
    ) -> Option<usize> {
        let idx = graph.adjacency[prev].binary_search_by_key(&cur, |n| n.node).ok()?;
        if graph.adjacency[cur].is_empty() {
            return None;
        }
        let nb = self.second_order_sample(graph, prev, idx, cur, rng);
        Some(graph.adjacency[cur][nb].node)
    }
}

/// Sequences of node ordinals produced by the walker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<usize>>,
}

impl WalkCorpus {
    pub fn token_count(&self) -> usize {
        self.walks.iter().map(|w| w.len()).sum()
    }
}

fn walk_rng(seed: u64, node: usize, rep: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((rep as u64) << 40) ^ (node as u64 + 1));
    rng
}

/// One biased walk from `start`, at most `len` nodes.
pub fn single_walk(
    graph: &UnityGraph,
    tables: &TransitionTables,
    start: usize,
    len: u32,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut walk = Vec::with_capacity(len as usize);
    walk.push(start);
    if len < 2 {
        return walk;
    }
    let Some(first) = tables.first_order_sample(start, rng) else {
        return walk; // isolated start
    };
    let mut prev = start;
    let mut prev_nb_index = first;
    let mut cur = graph.adjacency[start][first].node;
    walk.push(cur);
    while walk.len() < len as usize {
        let next_index = tables.second_order_sample(graph, prev, prev_nb_index, cur, rng);
        let next = graph.adjacency[cur][next_index].node;
        walk.push(next);
        prev = cur;
        prev_nb_index = next_index;
        cur = next;
    }
    walk
}

/// Generate `walks_per_node` walks starting from every node, in a seeded
/// shuffled order per repetition. Each walk draws from its own RNG stream
/// keyed by (seed, start node, repetition), so the corpus is identical
/// whether walks are generated sequentially or in parallel.
pub fn generate_walks(
    graph: &UnityGraph,
    tables: &TransitionTables,
    cfg: &WalkConfig,
) -> Result<WalkCorpus> {
    use rayon::prelude::*;
    cfg.validate()?;
    let n = graph.node_count();
    let mut jobs = Vec::with_capacity(n * cfg.walks_per_node as usize);
    let mut order: Vec<usize> = (0..n).collect();
    for rep in 0..cfg.walks_per_node {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x9E37_79B9_7F4A_7C15);
        shuffle_rng.set_stream(rep as u64);
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        jobs.extend(order.iter().map(|&start| (rep, start)));
    }
    let walks = jobs
        .into_par_iter()
        .map(|(rep, start)| {
            let mut rng = walk_rng(cfg.rng_seed, start, rep);
            single_walk(graph, tables, start, cfg.walk_length, &mut rng)
        })
        .collect();
    Ok(WalkCorpus { walks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, EdgeKind, GraphNode, NodeId, UnityGraph};

    pub(crate) fn toy_graph(n: usize, edges: &[(usize, usize)]) -> UnityGraph {
        let nodes = (0..n)
            .map(|i| GraphNode {
                id: NodeId { video_index: 0, clip_index: i as u32 },
                embedding: Vec::new(),
                time: i as f64 / n as f64,
            })
            .collect();
        let edge_list = edges
            .iter()
            .map(|&(a, b)| Edge {
                a: NodeId { video_index: 0, clip_index: a as u32 },
                b: NodeId { video_index: 0, clip_index: b as u32 },
                kind: EdgeKind::Temporal,
                weight: 1.0,
            })
            .collect();
        UnityGraph::from_parts(nodes, edge_list, 1).unwrap()
    }

    #[test]
    fn path_graph_unbiased_state() {
        // A - B - C, state (A -> B), p = q = 1
        let g = toy_graph(3, &[(0, 1), (1, 2)]);
        let dist = transition_distribution(&g, 0, 1, 1.0, 1.0);
        assert_eq!(dist.len(), 2);
        assert!((dist[0] - 0.5).abs() < 1e-12);
        assert!((dist[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn path_graph_biased_state() {
        // A - B - C, state (A -> B), p = 2, q = 0.5: P(A)=0.2, P(C)=0.8
        let g = toy_graph(3, &[(0, 1), (1, 2)]);
        let dist = transition_distribution(&g, 0, 1, 2.0, 0.5);
        assert!((dist[0] - 0.2).abs() < 1e-12);
        assert!((dist[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn triangle_state_closed_form() {
        // A - B - C - A, state (A -> B): P(A) = (1/p)/(1/p + 1), P(C) = 1/(1/p + 1)
        let g = toy_graph(3, &[(0, 1), (1, 2), (0, 2)]);
        for (p, q) in [(1.0, 1.0), (2.0, 0.5), (0.25, 4.0)] {
            let dist = transition_distribution(&g, 0, 1, p, q);
            let inv_p = 1.0 / p;
            assert!((dist[0] - inv_p / (inv_p + 1.0)).abs() < 1e-12, "p={p} q={q}");
            assert!((dist[1] - 1.0 / (inv_p + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_normalized_over_random_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(3..10usize);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if rng.random::<f64>() < 0.5 {
                        edges.push((a, b));
                    }
                }
            }
            if edges.is_empty() {
                continue;
            }
            let g = toy_graph(n, &edges);
            for cur in 0..n {
                for nb in &g.adjacency[cur] {
                    let dist = transition_distribution(&g, cur, nb.node, 1.7, 0.3);
                    let total: f64 = dist.iter().sum();
                    assert!((total - 1.0).abs() < 1e-9);
                    assert!(dist.iter().all(|&x| x >= 0.0));
                }
            }
        }
    }

    #[test]
    fn two_node_walks_alternate() {
        let g = toy_graph(2, &[(0, 1)]);
        let tables = TransitionTables::build(&g, 1.0, 1.0, false).unwrap();
        let cfg = WalkConfig { walk_length: 4, walks_per_node: 3, ..WalkConfig::default() };
        let corpus = generate_walks(&g, &tables, &cfg).unwrap();
        assert_eq!(corpus.walks.len(), 6);
        for walk in &corpus.walks {
            assert_eq!(walk.len(), 4);
            for pair in walk.windows(2) {
                assert_ne!(pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn isolated_node_walks_have_length_one() {
        let g = toy_graph(3, &[(0, 1)]);
        let tables = TransitionTables::build(&g, 1.0, 1.0, false).unwrap();
        assert_eq!(tables.isolated, vec![2]);
        let cfg = WalkConfig { walk_length: 10, walks_per_node: 4, ..WalkConfig::default() };
        let corpus = generate_walks(&g, &tables, &cfg).unwrap();
        let from_isolated: Vec<&Vec<usize>> =
            corpus.walks.iter().filter(|w| w[0] == 2).collect();
        assert_eq!(from_isolated.len(), 4);
        assert!(from_isolated.iter().all(|w| w.len() == 1));
    }

    #[test]
    fn walks_stay_on_edges() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let n = 12;
        let mut edges = vec![];
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.random::<f64>() < 0.3 {
                    edges.push((a, b));
                }
            }
        }
        let g = toy_graph(n, &edges);
        let tables = TransitionTables::build(&g, 0.5, 2.0, false).unwrap();
        let cfg = WalkConfig { walk_length: 20, walks_per_node: 5, ..WalkConfig::default() };
        let corpus = generate_walks(&g, &tables, &cfg).unwrap();
        for walk in &corpus.walks {
            for pair in walk.windows(2) {
                assert!(g.adjacency[pair[0]].iter().any(|nb| nb.node == pair[1]));
            }
        }
    }

    #[test]
    fn same_seed_reproduces_corpus() {
        let g = toy_graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]);
        let tables = TransitionTables::build(&g, 0.5, 2.0, false).unwrap();
        let cfg = WalkConfig { walk_length: 15, walks_per_node: 6, ..WalkConfig::default() };
        let a = generate_walks(&g, &tables, &cfg).unwrap();
        let b = generate_walks(&g, &tables, &cfg).unwrap();
        assert_eq!(a, b);
        let other = WalkConfig { rng_seed: cfg.rng_seed + 1, ..cfg };
        let c = generate_walks(&g, &tables, &other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn on_the_fly_matches_precomputed() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 10;
        let mut edges = vec![];
        for a in 0..n {
            edges.push((a, (a + 1) % n));
            if rng.random::<f64>() < 0.4 {
                edges.push((a, (a + 3) % n));
            }
        }
        let edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .filter(|(a, b)| a != b)
            .collect();
        let g = toy_graph(n, &edges);
        let cached = TransitionTables::build(&g, 2.0, 0.5, false).unwrap();
        let lazy = TransitionTables::build(&g, 2.0, 0.5, true).unwrap();
        let cfg = WalkConfig { walk_length: 30, walks_per_node: 4, ..WalkConfig::default() };
        let c1 = generate_walks(&g, &cached, &cfg).unwrap();
        let c2 = generate_walks(&g, &lazy, &cfg).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn star_graph_empirical_frequencies() {
        // center 0, leaves 1..=3; state (leaf 1 -> center), p = q = 1
        let g = toy_graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let tables = TransitionTables::build(&g, 1.0, 1.0, false).unwrap();
        let dist = transition_distribution(&g, 1, 0, 1.0, 1.0);
        assert!(dist.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut counts = [0u64; 3];
        let steps = 100_000;
        for _ in 0..steps {
            let idx = tables.second_order_sample(&g, 1, 0, 0, &mut rng);
            counts[idx] += 1;
        }
        for &c in &counts {
            assert!((c as f64 / steps as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }
}
