//! Batch analytics for event-based social networks.
//!
//! The crate takes raw attendance/subscription logs and works up to
//! behavioral phenotypes in stages:
//!
//! 1. [`ingest`] parses and filters the raw CSV logs into an [`ingest::EventLog`].
//! 2. [`geo`] supplies geodesic primitives (haversine, robust centroids,
//!    Gaussian similarity).
//! 3. [`graphs`] builds the social, physical, and homophily graphs plus
//!    per-user ego networks.
//! 4. [`community`] partitions each graph with Louvain modularity
//!    maximization.
//! 5. [`features`] computes group-participation features, balanced
//!    per-user datasets, and group-influence vectors.
//! 6. [`learn`] trains decision-tree / linear-SVM classifiers under
//!    stratified cross-validation and selects features by mutual
//!    information.
//! 7. [`phenotype`] clusters influence vectors into fingers and influence
//!    classes and runs class-conditioned prediction.
//! 8. [`synth`] generates synthetic logs with planted ground truth for
//!    end-to-end validation.
//!
//! Everything is deterministic given explicit seeds; no ambient entropy.

pub mod community;
pub mod features;
pub mod geo;
pub mod graphs;
pub mod ingest;
pub mod learn;
pub mod phenotype;
pub mod synth;
