//! Weighted Newman–Girvan modularity and Louvain community detection.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graphs::WeightedGraph;

#[derive(Debug, Error)]
pub enum CommunityError {
    #[error("assignment does not cover node '{0}'")]
    UncoveredNode(String),
    #[error("assignment references unknown node '{0}'")]
    UnknownNode(String),
    #[error("community ids must be contiguous from 0; missing id {0}")]
    NonContiguous(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// A flat partition of one graph's nodes, with its modularity.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityPartition {
    assignment: BTreeMap<String, usize>,
    members: Vec<Vec<String>>,
    modularity: f64,
}

impl CommunityPartition {
    /// Wrap an assignment, checking that community ids are contiguous from 0.
    pub fn from_assignment(
        assignment: BTreeMap<String, usize>,
        modularity: f64,
    ) -> Result<Self, CommunityError> {
        let n_comm = assignment.values().map(|c| c + 1).max().unwrap_or(0);
        let mut members: Vec<Vec<String>> = vec![Vec::new(); n_comm];
        for (user, &c) in &assignment {
            members[c].push(user.clone());
        }
        if let Some(c) = members.iter().position(|m| m.is_empty()) {
            return Err(CommunityError::NonContiguous(c));
        }
        Ok(Self { assignment, members, modularity })
    }

    pub fn assignment(&self) -> &BTreeMap<String, usize> {
        &self.assignment
    }

    pub fn community_of(&self, user: &str) -> Option<usize> {
        self.assignment.get(user).copied()
    }

    pub fn n_communities(&self) -> usize {
        self.members.len()
    }

    /// Members of community `c`, sorted by user id.
    pub fn members(&self, c: usize) -> &[String] {
        &self.members[c]
    }

    pub fn modularity(&self) -> f64 {
        self.modularity
    }

    /// CSV export: `user_id,community_id`.
    pub fn write_csv(&self, path: &Path) -> Result<(), CommunityError> {
        let to_io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(source) => CommunityError::Io { path: path.to_path_buf(), source },
            other => CommunityError::Io {
                path: path.to_path_buf(),
                source: io::Error::other(format!("{other:?}")),
            },
        };
        let mut w = csv::Writer::from_path(path).map_err(to_io)?;
        w.write_record(["user_id", "community_id"]).map_err(to_io)?;
        for (user, c) in &self.assignment {
            w.write_record([user.as_str(), &c.to_string()]).map_err(to_io)?;
        }
        w.flush().map_err(|source| CommunityError::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }
}

/// Weighted modularity of a partition at resolution 1:
/// `Q = sum_c [ IN_c / m - (TOT_c / 2m)^2 ]` with `m` the total edge weight,
/// `IN_c` the internal weight of community `c`, and `TOT_c` its total
/// weighted degree. An edgeless graph has `Q = 0` by convention.
pub fn modularity(
    g: &WeightedGraph,
    assignment: &BTreeMap<String, usize>,
) -> Result<f64, CommunityError> {
    for node in g.nodes() {
        if !assignment.contains_key(node) {
            return Err(CommunityError::UncoveredNode(node.clone()));
        }
    }
    for node in assignment.keys() {
        if g.node_index(node).is_none() {
            return Err(CommunityError::UnknownNode(node.clone()));
        }
    }

    let m = g.total_weight();
    if m == 0.0 {
        return Ok(0.0);
    }

    let labels: Vec<usize> = g.nodes().iter().map(|n| assignment[n]).collect();
    let n_comm = labels.iter().map(|c| c + 1).max().unwrap_or(0);
    let mut internal = vec![0.0; n_comm];
    let mut tot = vec![0.0; n_comm];
    for (i, j, w) in g.edges() {
        if labels[i] == labels[j] {
            internal[labels[i]] += w;
        }
    }
    for i in 0..g.node_count() {
        tot[labels[i]] += g.weighted_degree(i);
    }
    let two_m = 2.0 * m;
    Ok((0..n_comm)
        .map(|c| internal[c] / m - (tot[c] / two_m).powi(2))
        .sum())
}

/// Working graph for one Louvain level. Super-node self-loops carry the
/// aggregated intra-community weight (counted once; a self-loop contributes
/// twice its weight to the node degree).
struct LevelGraph {
    adj: Vec<BTreeMap<usize, f64>>,
    self_loop: Vec<f64>,
}

impl LevelGraph {
    fn from_graph(g: &WeightedGraph) -> Self {
        let mut adj = vec![BTreeMap::new(); g.node_count()];
        for (i, j, w) in g.edges() {
            adj[i].insert(j, w);
            adj[j].insert(i, w);
        }
        Self { self_loop: vec![0.0; g.node_count()], adj }
    }

    fn n(&self) -> usize {
        self.adj.len()
    }

    fn total_weight(&self) -> f64 {
        let edges: f64 = self
            .adj
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().filter(move |(&j, _)| i < j).map(|(_, &w)| w))
            .sum();
        edges + self.self_loop.iter().sum::<f64>()
    }

    fn degree(&self, i: usize) -> f64 {
        self.adj[i].values().sum::<f64>() + 2.0 * self.self_loop[i]
    }
}

/// One pass of local moving. Returns the node labels and whether any node
/// changed community.
fn local_moving(
    level: &LevelGraph,
    m: f64,
    tolerance: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, bool) {
    let n = level.n();
    let mut labels: Vec<usize> = (0..n).collect();
    let mut tot: Vec<f64> = (0..n).map(|i| level.degree(i)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut any_move = false;
    loop {
        let mut moved_this_sweep = false;
        for &i in &order {
            let k_i = level.degree(i);
            let current = labels[i];

            // Weight from i to each neighboring community.
            let mut to_comm: BTreeMap<usize, f64> = BTreeMap::new();
            for (&j, &w) in &level.adj[i] {
                *to_comm.entry(labels[j]).or_insert(0.0) += w;
            }

            // Detach i, then compare re-insertion gains.
            tot[current] -= k_i;
            let gain = |c: usize, k_i_c: f64| k_i_c / m - tot[c] * k_i / (2.0 * m * m);
            let stay_gain = gain(current, to_comm.get(&current).copied().unwrap_or(0.0));

            let mut best_comm = current;
            let mut best_net = 0.0;
            for (&c, &k_i_c) in &to_comm {
                if c == current {
                    continue;
                }
                let net = gain(c, k_i_c) - stay_gain;
                // Strict improvement keeps the lowest community id on ties.
                if net > best_net && net > tolerance {
                    best_net = net;
                    best_comm = c;
                }
            }

            tot[best_comm] += k_i;
            if best_comm != current {
                labels[i] = best_comm;
                moved_this_sweep = true;
                any_move = true;
            }
        }
        if !moved_this_sweep {
            break;
        }
    }
    (labels, any_move)
}

/// Relabel arbitrary community ids to 0..k-1, preserving ascending order.
fn compact_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| map[l]).collect(), map.len())
}

fn aggregate(level: &LevelGraph, labels: &[usize], n_comm: usize) -> LevelGraph {
    let mut adj = vec![BTreeMap::new(); n_comm];
    let mut self_loop = vec![0.0; n_comm];
    for i in 0..level.n() {
        self_loop[labels[i]] += level.self_loop[i];
        for (&j, &w) in &level.adj[i] {
            if i < j {
                let (ci, cj) = (labels[i], labels[j]);
                if ci == cj {
                    self_loop[ci] += w;
                } else {
                    *adj[ci].entry(cj).or_insert(0.0) += w;
                    *adj[cj].entry(ci).or_insert(0.0) += w;
                }
            }
        }
    }
    LevelGraph { adj, self_loop }
}

/// Louvain modularity maximization.
///
/// Local moving scans nodes in a seed-shuffled order and moves each node to
/// the neighboring community with the largest modularity gain above
/// `tolerance` (ties break toward the lowest community id). Converged levels
/// are aggregated into super-nodes and the process recurses until a level
/// stops improving. Deterministic for a given `(graph, seed)`.
pub fn louvain(g: &WeightedGraph, seed: u64, tolerance: f64) -> CommunityPartition {
    let n = g.node_count();
    let singleton = |q| {
        let assignment: BTreeMap<String, usize> = g
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        CommunityPartition::from_assignment(assignment, q).expect("contiguous by construction")
    };
    if n == 0 {
        return CommunityPartition::from_assignment(BTreeMap::new(), 0.0).unwrap();
    }
    let m = g.total_weight();
    if m == 0.0 {
        return singleton(0.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = LevelGraph::from_graph(g);
    // node_to_comm[i] is the current super-node of original node i.
    let mut node_to_comm: Vec<usize> = (0..n).collect();
    let mut q_prev = flat_modularity(g, &node_to_comm);

    loop {
        let level_m = level.total_weight();
        let (labels, moved) = local_moving(&level, level_m, tolerance, &mut rng);
        if !moved {
            break;
        }
        let (compacted, n_comm) = compact_labels(&labels);
        for c in node_to_comm.iter_mut() {
            *c = compacted[*c];
        }
        let q_new = flat_modularity(g, &node_to_comm);
        if q_new - q_prev <= tolerance {
            q_prev = q_new;
            break;
        }
        q_prev = q_new;
        level = aggregate(&level, &compacted, n_comm);
    }

    // Final contiguous ids in order of first appearance over sorted nodes.
    let (final_labels, _) = compact_labels(&node_to_comm);
    let assignment: BTreeMap<String, usize> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, u)| (u.clone(), final_labels[i]))
        .collect();
    let q = modularity(g, &assignment).expect("full coverage by construction");
    debug_assert!((q - q_prev).abs() < 1e-9);
    CommunityPartition::from_assignment(assignment, q).expect("contiguous by construction")
}

fn flat_modularity(g: &WeightedGraph, labels: &[usize]) -> f64 {
    let (compacted, _) = compact_labels(labels);
    let assignment: BTreeMap<String, usize> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, u)| (u.clone(), compacted[i]))
        .collect();
    modularity(g, &assignment).expect("full coverage")
}
