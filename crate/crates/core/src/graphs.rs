//! Construction of the three user graphs (social, physical, homophily) and
//! per-user ego networks.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geo::{self, Centroid, GeoError};
use crate::ingest::EventLog;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("self-loop on '{0}' rejected")]
    SelfLoop(String),
    #[error("edge weight must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(String, String),
    #[error("user '{0}' has no attended events, centroid undefined")]
    EmptyAttendance(String),
    #[error("cannot derive sigma: {0}")]
    DegenerateSigma(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Undirected weighted graph over user ids. At most one edge per unordered
/// pair, no self-loops, weights strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    nodes: Vec<String>,
    index: BTreeMap<String, usize>,
    adj: Vec<BTreeMap<usize, f64>>,
}

impl WeightedGraph {
    pub fn new(nodes: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = nodes.into_iter().collect();
        let nodes: Vec<String> = set.into_iter().collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let adj = vec![BTreeMap::new(); nodes.len()];
        Self { nodes, index, adj }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_id(&self, idx: usize) -> &str {
        &self.nodes[idx]
    }

    pub fn add_edge(&mut self, a: &str, b: &str, weight: f64) -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a.to_string()));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(GraphError::BadWeight(weight));
        }
        let ia = self.node_index(a).ok_or_else(|| GraphError::UnknownNode(a.to_string()))?;
        let ib = self.node_index(b).ok_or_else(|| GraphError::UnknownNode(b.to_string()))?;
        if self.adj[ia].contains_key(&ib) {
            return Err(GraphError::DuplicateEdge(a.to_string(), b.to_string()));
        }
        self.adj[ia].insert(ib, weight);
        self.adj[ib].insert(ia, weight);
        Ok(())
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        match (self.node_index(a), self.node_index(b)) {
            (Some(ia), Some(ib)) => self.adj[ia].contains_key(&ib),
            _ => false,
        }
    }

    pub fn edge_weight(&self, a: &str, b: &str) -> Option<f64> {
        let ia = self.node_index(a)?;
        let ib = self.node_index(b)?;
        self.adj[ia].get(&ib).copied()
    }

    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adj[idx].iter().map(|(&j, &w)| (j, w))
    }

    pub fn degree(&self, idx: usize) -> usize {
        self.adj[idx].len()
    }

    pub fn weighted_degree(&self, idx: usize) -> f64 {
        self.adj[idx].values().sum()
    }

    /// Each unordered edge exactly once, as `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().filter(move |(&j, _)| i < j).map(move |(&j, &w)| (i, j, w)))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|n| n.len()).sum::<usize>() / 2
    }

    /// Sum of edge weights, each edge counted once.
    pub fn total_weight(&self) -> f64 {
        self.edges().map(|(_, _, w)| w).sum()
    }

    /// Edge-list CSV: `node_a,node_b,weight` with `node_a < node_b`.
    pub fn write_edge_list(&self, path: &Path) -> Result<(), GraphError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["node_a", "node_b", "weight"]).map_err(|e| csv_io(path, e))?;
        for (i, j, weight) in self.edges() {
            w.write_record([&self.nodes[i], &self.nodes[j], &weight.to_string()])
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|source| GraphError::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }
}

fn csv_io(path: &Path, e: csv::Error) -> GraphError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => GraphError::Io { path: path.to_path_buf(), source },
        other => GraphError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(format!("{other:?}")),
        },
    }
}

/// A user together with its direct social-graph neighbors. Friends of
/// friends are not part of the ego network.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoNetwork {
    pub ego: String,
    pub alters: BTreeSet<String>,
}

/// Social graph: unit-weight edge for every subscription pair, symmetrized
/// so that either direction (or both) yields exactly one edge.
pub fn build_social_graph(log: &EventLog) -> WeightedGraph {
    let mut g = WeightedGraph::new(log.users().iter().cloned());
    for (a, b) in log.subscriptions() {
        if !g.has_edge(a, b) {
            g.add_edge(a, b, 1.0).expect("valid subscription edge");
        }
    }
    g
}

/// Bandwidth for the physical graph's Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    /// Median of all pairwise centroid distances.
    Auto,
    Fixed(f64),
}

/// Compute every user's centroid of interests from their attended events.
pub fn user_centroids(
    log: &EventLog,
    mad_threshold: f64,
) -> Result<BTreeMap<String, Centroid>, GraphError> {
    let mut out = BTreeMap::new();
    for user in log.users() {
        let attended = log.attended(user);
        if attended.is_empty() {
            return Err(GraphError::EmptyAttendance(user.clone()));
        }
        let points: Vec<_> = attended.iter().map(|e| log.events()[e]).collect();
        let c = geo::centroid_of_interests(&points, mad_threshold)?;
        out.insert(user.clone(), c);
    }
    Ok(out)
}

/// Physical graph from precomputed centroids. Returns the graph and the
/// resolved sigma so a run manifest can record it.
pub fn build_physical_graph_from_centroids(
    centroids: &BTreeMap<String, Centroid>,
    sigma: Sigma,
    epsilon: f64,
) -> Result<(WeightedGraph, f64), GraphError> {
    let users: Vec<&String> = centroids.keys().collect();
    let sigma_km = match sigma {
        Sigma::Fixed(s) => {
            if s <= 0.0 || !s.is_finite() {
                return Err(GraphError::DegenerateSigma(format!("sigma must be positive, got {s}")));
            }
            s
        }
        Sigma::Auto => {
            if users.len() < 2 {
                return Err(GraphError::DegenerateSigma(
                    "need at least two users for the pairwise-distance median".into(),
                ));
            }
            let mut dists = Vec::with_capacity(users.len() * (users.len() - 1) / 2);
            for i in 0..users.len() {
                for j in (i + 1)..users.len() {
                    dists.push(geo::haversine_km(
                        centroids[users[i]].point,
                        centroids[users[j]].point,
                    ));
                }
            }
            let med = geo::median(dists.into_iter());
            if med <= 0.0 {
                return Err(GraphError::DegenerateSigma(
                    "median pairwise centroid distance is zero".into(),
                ));
            }
            med
        }
    };

    let mut g = WeightedGraph::new(centroids.keys().cloned());
    for i in 0..users.len() {
        for j in (i + 1)..users.len() {
            let d = geo::haversine_km(centroids[users[i]].point, centroids[users[j]].point);
            let w = geo::gaussian_kernel(d, sigma_km)?;
            if w >= epsilon && w > 0.0 {
                g.add_edge(users[i], users[j], w)?;
            }
        }
    }
    Ok((g, sigma_km))
}

/// Physical graph straight from a log, with the default outlier threshold
/// for the centroid computation.
pub fn build_physical_graph(
    log: &EventLog,
    sigma: Sigma,
    epsilon: f64,
) -> Result<(WeightedGraph, f64), GraphError> {
    let centroids = user_centroids(log, 3.0)?;
    build_physical_graph_from_centroids(&centroids, sigma, epsilon)
}

/// Homophily graph: Jaccard index of attended-event sets. Pairs with no
/// shared event get no edge; weights below `epsilon` are dropped.
pub fn build_homophily_graph(log: &EventLog, epsilon: f64) -> WeightedGraph {
    let mut g = WeightedGraph::new(log.users().iter().cloned());

    // Accumulate intersection sizes only for pairs that co-attend something.
    let mut inter: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for attendees in log.events().keys().map(|e| log.attendees(e)) {
        let idx: Vec<usize> = attendees.iter().map(|u| g.node_index(u).unwrap()).collect();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                let key = if i < j { (i, j) } else { (j, i) };
                *inter.entry(key).or_insert(0) += 1;
            }
        }
    }

    let sizes: BTreeMap<usize, usize> = log
        .users()
        .iter()
        .map(|u| (g.node_index(u).unwrap(), log.attended(u).len()))
        .collect();
    for (&(i, j), &common) in &inter {
        let union = sizes[&i] + sizes[&j] - common;
        let w = common as f64 / union as f64;
        if w >= epsilon && w > 0.0 {
            let (a, b) = (g.node_id(i).to_string(), g.node_id(j).to_string());
            g.add_edge(&a, &b, w).expect("first insertion of this pair");
        }
    }
    g
}

/// Ego network of `u`: its direct neighbors in the social graph.
pub fn ego_network(sg: &WeightedGraph, u: &str) -> Result<EgoNetwork, GraphError> {
    let idx = sg.node_index(u).ok_or_else(|| GraphError::UnknownNode(u.to_string()))?;
    let alters = sg.neighbors(idx).map(|(j, _)| sg.node_id(j).to_string()).collect();
    Ok(EgoNetwork { ego: u.to_string(), alters })
}
