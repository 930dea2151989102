//! Behavioral phenotypes: spherical view of influence vectors, finger
//! clustering on the unit sphere, influence classes on the radial
//! coordinate, and class-conditioned attendance prediction.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{Feature, FeatureRow, InfluenceVector, UserDataset};
use crate::learn::{self, ClassifierKind, Hyperparameters, LearnError, Metrics};

#[derive(Debug, Error)]
pub enum PhenotypeError {
    #[error("k = {k} exceeds the {distinct} distinct points")]
    TooFewDistinctPoints { k: usize, distinct: usize },
    #[error("only {available} users above the radial cutoff, need {k}")]
    TooFewAboveCutoff { k: usize, available: usize },
    #[error("need at least 3 distinct radial values, found {0}")]
    TooFewDistinctRadii(usize),
    #[error("class has {0} users; need at least 2")]
    TooFewUsers(usize),
    #[error("no dataset for user '{0}'")]
    MissingDataset(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Spherical view of the community influence triple, with the axis mapping
/// `x = i_sc`, `y = i_pc`, `z = i_hc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    pub r: f64,
    /// Polar angle from the +z axis, in [0, pi].
    pub theta: f64,
    /// Azimuth in the xy-plane, in [0, 2*pi).
    pub phi: f64,
}

impl SphericalPoint {
    pub fn to_cartesian(self) -> [f64; 3] {
        [
            self.r * self.theta.sin() * self.phi.cos(),
            self.r * self.theta.sin() * self.phi.sin(),
            self.r * self.theta.cos(),
        ]
    }
}

/// Spherical coordinates of `(i_sc, i_pc, i_hc)`. The origin maps to
/// `theta = phi = 0` by convention.
pub fn to_spherical(v: &InfluenceVector) -> SphericalPoint {
    spherical_from_xyz(v.community_components())
}

pub fn spherical_from_xyz([x, y, z]: [f64; 3]) -> SphericalPoint {
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return SphericalPoint { r: 0.0, theta: 0.0, phi: 0.0 };
    }
    let theta = (z / r).clamp(-1.0, 1.0).acos();
    let mut phi = y.atan2(x);
    if phi < 0.0 {
        phi += 2.0 * std::f64::consts::PI;
    }
    if phi >= 2.0 * std::f64::consts::PI {
        phi = 0.0;
    }
    SphericalPoint { r, theta, phi }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansParams {
    pub max_iter: usize,
    /// Convergence threshold on the maximum centroid displacement.
    pub tol: f64,
}

impl Default for KmeansParams {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step; non-increasing by construction.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct(points: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted.windows(2).filter(|w| w[0] != w[1]).count() + usize::from(!sorted.is_empty())
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded
/// with the point farthest from its assigned centroid. Deterministic for a
/// given `(points, k, seed)`.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    params: &KmeansParams,
) -> Result<KmeansResult, PhenotypeError> {
    assert!(k >= 1, "k must be at least 1");
    let distinct = count_distinct(points);
    if k > distinct {
        return Err(PhenotypeError::TooFewDistinctPoints { k, distinct });
    }
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut cumulative = 0.0;
        let mut chosen = None;
        for (i, &w) in d2.iter().enumerate() {
            cumulative += w;
            if cumulative > target && w > 0.0 {
                chosen = Some(i);
                break;
            }
        }
        // Rounding can push the walk past every candidate; fall back to the
        // last point with positive weight (one exists while k <= distinct).
        let chosen = chosen.unwrap_or_else(|| {
            (0..n).rev().find(|&i| d2[i] > 0.0).expect("a distinct point remains")
        });
        centroids.push(points[chosen].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, centroids.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;

    let assign = |centroids: &[Vec<f64>], labels: &mut Vec<usize>| -> f64 {
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = squared_distance(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            labels[i] = best;
            inertia += best_d;
        }
        inertia
    };

    let mut inertia = assign(&centroids, &mut labels);
    inertia_history.push(inertia);

    for _ in 0..params.max_iter {
        iterations += 1;

        // Re-seed empty clusters before the mean update.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = (0..n)
                    .max_by(|&a, &b| {
                        squared_distance(&points[a], &centroids[labels[a]])
                            .total_cmp(&squared_distance(&points[b], &centroids[labels[b]]))
                    })
                    .expect("nonempty points");
                counts[labels[farthest]] -= 1;
                labels[farthest] = c;
                counts[c] = 1;
            }
        }

        let mut new_centroids = vec![vec![0.0; points[0].len()]; k];
        for (p, &l) in points.iter().zip(&labels) {
            for (acc, v) in new_centroids[l].iter_mut().zip(p) {
                *acc += v;
            }
        }
        for (centroid, &count) in new_centroids.iter_mut().zip(&counts) {
            for v in centroid.iter_mut() {
                *v /= count as f64;
            }
        }

        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = new_centroids;
        inertia = assign(&centroids, &mut labels);
        inertia_history.push(inertia);

        if shift < params.tol {
            break;
        }
    }

    Ok(KmeansResult { labels, centroids, inertia, inertia_history, iterations })
}

/// Finger labels (None below the radial cutoff) plus the unit-sphere
/// cluster directions, largest finger first.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerAssignment {
    pub labels: Vec<Option<usize>>,
    pub directions: Vec<Vec<f64>>,
    pub cutoff: f64,
}

/// Nearest-rank percentile of the radial coordinate, used for the default
/// finger cutoff ("values close to zero" in the source analysis).
pub fn radial_cutoff_percentile(vectors: &[InfluenceVector], pct: f64) -> f64 {
    assert!(!vectors.is_empty());
    let mut rs: Vec<f64> = vectors.iter().map(|v| to_spherical(v).r).collect();
    rs.sort_by(|a, b| a.total_cmp(b));
    let rank = ((pct / 100.0) * rs.len() as f64).ceil().max(1.0) as usize;
    rs[rank.min(rs.len()) - 1]
}

/// Cluster users into `k` fingers: drop users with `r <= radial_cutoff`,
/// project the rest onto the unit sphere, and run k-means with chordal
/// (Euclidean) distance on the unit vectors. Finger ids are relabeled in
/// descending cluster size for determinism.
pub fn assign_fingers(
    vectors: &[InfluenceVector],
    k: usize,
    radial_cutoff: f64,
    seed: u64,
) -> Result<FingerAssignment, PhenotypeError> {
    let spherical: Vec<SphericalPoint> = vectors.iter().map(to_spherical).collect();
    let included: Vec<usize> =
        (0..vectors.len()).filter(|&i| spherical[i].r > radial_cutoff).collect();
    if included.len() < k {
        return Err(PhenotypeError::TooFewAboveCutoff { k, available: included.len() });
    }

    let unit_points: Vec<Vec<f64>> = included
        .iter()
        .map(|&i| {
            let r = spherical[i].r;
            vectors[i].community_components().iter().map(|c| c / r).collect()
        })
        .collect();
    let km = kmeans(&unit_points, k, seed, &KmeansParams::default())?;

    // Relabel by descending size (ties: ascending original id).
    let mut counts = vec![0usize; k];
    for &l in &km.labels {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(counts[c]), c));
    let mut relabel = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }

    let mut labels = vec![None; vectors.len()];
    for (pos, &i) in included.iter().enumerate() {
        labels[i] = Some(relabel[km.labels[pos]]);
    }
    let directions: Vec<Vec<f64>> = order.iter().map(|&old| km.centroids[old].clone()).collect();
    Ok(FingerAssignment { labels, directions, cutoff: radial_cutoff })
}

/// Overall influence strata, ordered by the radial coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InfluenceClass {
    Low,
    Medium,
    High,
}

impl InfluenceClass {
    pub const ALL: [InfluenceClass; 3] =
        [InfluenceClass::Low, InfluenceClass::Medium, InfluenceClass::High];

    pub fn name(self) -> &'static str {
        match self {
            InfluenceClass::Low => "low",
            InfluenceClass::Medium => "medium",
            InfluenceClass::High => "high",
        }
    }
}

/// One-dimensional k-means (k = 3) on the radial coordinate over all users
/// (no cutoff), named low/medium/high by ascending cluster centroid.
pub fn assign_influence_classes(
    vectors: &[InfluenceVector],
    seed: u64,
) -> Result<Vec<InfluenceClass>, PhenotypeError> {
    let rs: Vec<Vec<f64>> = vectors.iter().map(|v| vec![to_spherical(v).r]).collect();
    let distinct = count_distinct(&rs);
    if distinct < 3 {
        return Err(PhenotypeError::TooFewDistinctRadii(distinct));
    }
    let km = kmeans(&rs, 3, seed, &KmeansParams::default())?;
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| km.centroids[a][0].total_cmp(&km.centroids[b][0]));
    let mut class_of = [InfluenceClass::Low; 3];
    for (rank, &cluster) in order.iter().enumerate() {
        class_of[cluster] = InfluenceClass::ALL[rank];
    }
    Ok(km.labels.iter().map(|&l| class_of[l]).collect())
}

/// A user's combined phenotype labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeAssignment {
    pub user: String,
    pub spherical: SphericalPoint,
    pub finger: Option<usize>,
    pub influence_class: InfluenceClass,
    /// Defined exactly when the finger is.
    pub behavioral_class: Option<(usize, InfluenceClass)>,
}

impl PhenotypeAssignment {
    pub fn behavioral_name(&self) -> String {
        match self.behavioral_class {
            Some((f, c)) => format!("f{}_{}", f, c.name()),
            None => "none".to_string(),
        }
    }
}

/// Cross the finger and influence-class labelings into behavioral classes.
pub fn behavioral_classes(
    vectors: &[InfluenceVector],
    fingers: &[Option<usize>],
    classes: &[InfluenceClass],
) -> Vec<PhenotypeAssignment> {
    assert_eq!(vectors.len(), fingers.len());
    assert_eq!(vectors.len(), classes.len());
    vectors
        .iter()
        .zip(fingers.iter().zip(classes))
        .map(|(v, (&finger, &class))| PhenotypeAssignment {
            user: v.user.clone(),
            spherical: to_spherical(v),
            finger,
            influence_class: class,
            behavioral_class: finger.map(|f| (f, class)),
        })
        .collect()
}

/// CSV export: `user_id,r,theta,phi,finger,influence_class,behavioral_class`.
pub fn write_phenotypes_csv(
    assignments: &[PhenotypeAssignment],
    path: &Path,
) -> Result<(), PhenotypeError> {
    let to_io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => PhenotypeError::Io { path: path.to_path_buf(), source },
        other => PhenotypeError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(format!("{other:?}")),
        },
    };
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    w.write_record(["user_id", "r", "theta", "phi", "finger", "influence_class", "behavioral_class"])
        .map_err(to_io)?;
    for a in assignments {
        let finger = a.finger.map_or_else(|| "none".to_string(), |f| f.to_string());
        w.write_record([
            a.user.as_str(),
            &a.spherical.r.to_string(),
            &a.spherical.theta.to_string(),
            &a.spherical.phi.to_string(),
            &finger,
            a.influence_class.name(),
            &a.behavioral_name(),
        ])
        .map_err(to_io)?;
    }
    w.flush().map_err(|source| PhenotypeError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

/// Result of a user-level cross-validation, with the fold count actually
/// used (reduced when the class is smaller than the requested k).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCvOutcome {
    pub metrics: Metrics,
    pub k_used: usize,
    pub n_users: usize,
}

/// Class-conditioned prediction: k-fold split over *users*, one SVM per
/// fold trained on the pooled rows of the training users and evaluated on
/// the pooled rows of the held-out users. No row of a test user is ever
/// seen in training.
pub fn class_conditioned_cv(
    class_members: &[String],
    datasets: &BTreeMap<String, UserDataset>,
    hyper: &Hyperparameters,
    k: usize,
    seed: u64,
) -> Result<ClassCvOutcome, PhenotypeError> {
    let mut users: Vec<&String> = class_members.iter().collect();
    users.sort();
    users.dedup();
    if users.len() < 2 {
        return Err(PhenotypeError::TooFewUsers(users.len()));
    }
    for u in &users {
        if !datasets.contains_key(*u) {
            return Err(PhenotypeError::MissingDataset((*u).clone()));
        }
    }
    let k_used = k.min(users.len()).max(2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = users.clone();
    shuffled.shuffle(&mut rng);
    let mut fold_of: BTreeMap<&String, usize> = BTreeMap::new();
    for (pos, u) in shuffled.iter().enumerate() {
        fold_of.insert(*u, pos % k_used);
    }

    let pooled_rows = |want_fold: usize, in_fold: bool| -> Vec<FeatureRow> {
        users
            .iter()
            .filter(|u| (fold_of[**u] == want_fold) == in_fold)
            .flat_map(|u| datasets[*u].rows.iter().cloned())
            .collect()
    };

    let mut fold_metrics = Vec::with_capacity(k_used);
    for f in 0..k_used {
        let train_rows = pooled_rows(f, false);
        let test_rows = pooled_rows(f, true);
        let model = learn::train(ClassifierKind::LinearSvm, &train_rows, &Feature::ALL, hyper)?;
        fold_metrics.push(learn::evaluate(&model, &test_rows)?);
    }
    Ok(ClassCvOutcome {
        metrics: Metrics::mean_of(&fold_metrics),
        k_used,
        n_users: users.len(),
    })
}

/// The single-class baseline: the same user-level protocol with every user
/// in one class.
pub fn baseline_single_class_cv(
    all_users: &[String],
    datasets: &BTreeMap<String, UserDataset>,
    hyper: &Hyperparameters,
    k: usize,
    seed: u64,
) -> Result<ClassCvOutcome, PhenotypeError> {
    class_conditioned_cv(all_users, datasets, hyper, k, seed)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let comb2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;

    let mut contingency: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut row_sums: BTreeMap<usize, usize> = BTreeMap::new();
    let mut col_sums: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *contingency.entry((x, y)).or_insert(0) += 1;
        *row_sums.entry(x).or_insert(0) += 1;
        *col_sums.entry(y).or_insert(0) += 1;
    }
    let index: f64 = contingency.values().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = row_sums.values().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = col_sums.values().map(|&c| comb2(c)).sum();
    let expected = sum_rows * sum_cols / comb2(n);
    let max_index = (sum_rows + sum_cols) / 2.0;
    if (max_index - expected).abs() < 1e-15 {
        return 1.0;
    }
    (index - expected) / (max_index - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(user: &str, sc: f64, pc: f64, hc: f64) -> InfluenceVector {
        InfluenceVector { user: user.to_string(), i_ego: 0.0, i_sc: sc, i_pc: pc, i_hc: hc }
    }

    #[test]
    fn spherical_axis_cases() {
        let x = to_spherical(&vector("u", 1.0, 0.0, 0.0));
        assert!((x.r - 1.0).abs() < 1e-12);
        assert!((x.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(x.phi.abs() < 1e-12);

        let z = to_spherical(&vector("u", 0.0, 0.0, 1.0));
        assert!((z.r - 1.0).abs() < 1e-12);
        assert!(z.theta.abs() < 1e-12);
        assert!(z.phi.abs() < 1e-12);

        let d = to_spherical(&vector("u", 1.0, 1.0, 1.0));
        assert!((d.r - 3f64.sqrt()).abs() < 1e-12);
        assert!((d.theta - (1.0 / 3f64.sqrt()).acos()).abs() < 1e-12);
        assert!((d.phi - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn spherical_origin_convention() {
        let o = to_spherical(&vector("u", 0.0, 0.0, 0.0));
        assert_eq!((o.r, o.theta, o.phi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn spherical_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let xyz = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let back = spherical_from_xyz(xyz).to_cartesian();
            for (a, b) in xyz.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "{xyz:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn kmeans_k1_is_mean() {
        let points = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let km = kmeans(&points, 1, 0, &KmeansParams::default()).unwrap();
        assert!((km.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((km.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..50 {
                points.push(vec![
                    center[0] + rng.random::<f64>() - 0.5,
                    center[1] + rng.random::<f64>() - 0.5,
                ]);
                truth.push(c);
            }
        }
        let km = kmeans(&points, 3, 7, &KmeansParams::default()).unwrap();
        assert!((adjusted_rand_index(&km.labels, &truth) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_n_distinct_points_zero_inertia() {
        let points = vec![vec![0.0], vec![1.0], vec![2.0], vec![5.0]];
        let km = kmeans(&points, 4, 3, &KmeansParams::default()).unwrap();
        assert!(km.inertia < 1e-18);
        let mut sorted = km.labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    #[test]
    fn kmeans_rejects_k_above_distinct() {
        let points = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(
            kmeans(&points, 3, 0, &KmeansParams::default()),
            Err(PhenotypeError::TooFewDistinctPoints { .. })
        ));
    }

    #[test]
    fn kmeans_inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<Vec<f64>> =
            (0..200).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        for seed in 0..5 {
            let km = kmeans(&points, 6, seed, &KmeansParams::default()).unwrap();
            for w in km.inertia_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "inertia rose: {:?}", w);
            }
        }
    }

    #[test]
    fn kmeans_deterministic() {
        let points: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 13) as f64, (i % 7) as f64]).collect();
        let a = kmeans(&points, 4, 11, &KmeansParams::default()).unwrap();
        let b = kmeans(&points, 4, 11, &KmeansParams::default()).unwrap();
        assert_eq!(a, b);
    }

    fn ray_vectors() -> (Vec<InfluenceVector>, Vec<usize>) {
        // Three planted rays, users spread along each at assorted radii.
        let rays = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.4, 0.4, 0.8]];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut vectors = Vec::new();
        let mut truth = Vec::new();
        for i in 0..90 {
            let ray = i % 3;
            let scale = 0.2 + 0.6 * rng.random::<f64>();
            let jitter = 0.015;
            vectors.push(vector(
                &format!("u{i:03}"),
                (rays[ray][0] * scale + jitter * rng.random::<f64>()).max(0.0),
                (rays[ray][1] * scale + jitter * rng.random::<f64>()).max(0.0),
                (rays[ray][2] * scale + jitter * rng.random::<f64>()).max(0.0),
            ));
            truth.push(ray);
        }
        (vectors, truth)
    }

    #[test]
    fn fingers_recover_planted_rays() {
        let (vectors, truth) = ray_vectors();
        let fa = assign_fingers(&vectors, 3, 0.0, 23).unwrap();
        let labels: Vec<usize> = fa.labels.iter().map(|l| l.unwrap()).collect();
        let ari = adjusted_rand_index(&labels, &truth);
        assert!(ari >= 0.9, "ARI {ari}");
    }

    #[test]
    fn fingers_scale_invariant() {
        let (vectors, _) = ray_vectors();
        let fa = assign_fingers(&vectors, 3, 0.05, 23).unwrap();
        let scaled: Vec<InfluenceVector> = vectors
            .iter()
            .map(|v| vector(&v.user, v.i_sc * 3.5, v.i_pc * 3.5, v.i_hc * 3.5))
            .collect();
        let fb = assign_fingers(&scaled, 3, 0.05 * 3.5, 23).unwrap();
        assert_eq!(fa.labels, fb.labels);
    }

    #[test]
    fn fingers_zero_radius_is_none() {
        let mut vectors = vec![
            vector("origin", 0.0, 0.0, 0.0),
            vector("a", 0.5, 0.0, 0.0),
            vector("b", 0.0, 0.5, 0.0),
        ];
        vectors.push(vector("c", 0.45, 0.05, 0.0));
        vectors.push(vector("d", 0.05, 0.45, 0.0));
        let fa = assign_fingers(&vectors, 2, 0.01, 1).unwrap();
        assert_eq!(fa.labels[0], None);
        assert!(fa.labels[1].is_some());
    }

    #[test]
    fn fingers_single_ray_k1() {
        let vectors: Vec<InfluenceVector> =
            (0..10).map(|i| vector(&format!("u{i}"), 0.1 + 0.05 * i as f64, 0.0, 0.0)).collect();
        let fa = assign_fingers(&vectors, 1, 0.0, 0).unwrap();
        assert!(fa.labels.iter().all(|l| *l == Some(0)));
    }

    #[test]
    fn fingers_error_when_too_few_above_cutoff() {
        let vectors = vec![vector("a", 0.01, 0.0, 0.0), vector("b", 0.5, 0.0, 0.0)];
        assert!(matches!(
            assign_fingers(&vectors, 2, 0.1, 0),
            Err(PhenotypeError::TooFewAboveCutoff { .. })
        ));
    }

    fn banded_vectors() -> (Vec<InfluenceVector>, Vec<usize>) {
        // Three tight radial bands of 20 users each.
        let mut vectors = Vec::new();
        let mut truth = Vec::new();
        for (band, base) in [(0usize, 0.01), (1, 0.5), (2, 0.99)] {
            for i in 0..20 {
                let r = base + 0.001 * i as f64;
                vectors.push(vector(&format!("u{band}{i:02}"), r, 0.0, 0.0));
                truth.push(band);
            }
        }
        (vectors, truth)
    }

    #[test]
    fn influence_classes_recover_bands_in_order() {
        let (vectors, truth) = banded_vectors();
        let classes = assign_influence_classes(&vectors, 3).unwrap();
        for (c, &t) in classes.iter().zip(&truth) {
            assert_eq!(*c, InfluenceClass::ALL[t]);
        }
        // Ordering invariant: mean r strictly increases low -> high.
        let mean_r = |class: InfluenceClass| {
            let rs: Vec<f64> = vectors
                .iter()
                .zip(&classes)
                .filter(|(_, c)| **c == class)
                .map(|(v, _)| to_spherical(v).r)
                .collect();
            rs.iter().sum::<f64>() / rs.len() as f64
        };
        assert!(mean_r(InfluenceClass::Low) < mean_r(InfluenceClass::Medium));
        assert!(mean_r(InfluenceClass::Medium) < mean_r(InfluenceClass::High));
    }

    #[test]
    fn influence_classes_need_three_distinct_radii() {
        let vectors: Vec<InfluenceVector> =
            (0..10).map(|i| vector(&format!("u{i}"), 0.4, 0.0, 0.0)).collect();
        assert!(matches!(
            assign_influence_classes(&vectors, 0),
            Err(PhenotypeError::TooFewDistinctRadii(1))
        ));
    }

    #[test]
    fn behavioral_cross_product() {
        let vectors = vec![
            vector("a", 0.9, 0.0, 0.0),
            vector("b", 0.0, 0.0, 0.0),
            vector("c", 0.0, 0.8, 0.0),
        ];
        let fingers = vec![Some(0), None, Some(1)];
        let classes = vec![InfluenceClass::High, InfluenceClass::Low, InfluenceClass::Medium];
        let assignments = behavioral_classes(&vectors, &fingers, &classes);
        assert_eq!(assignments[0].behavioral_class, Some((0, InfluenceClass::High)));
        assert_eq!(assignments[0].behavioral_name(), "f0_high");
        assert_eq!(assignments[1].behavioral_class, None);
        assert_eq!(assignments[1].behavioral_name(), "none");
        assert_eq!(assignments[2].behavioral_class, Some((1, InfluenceClass::Medium)));
    }

    fn rule_dataset(user: &str, flip: bool, seed: u64) -> UserDataset {
        // Label = (p_hc > 0.5), or its negation when flip is set.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..40)
            .map(|i| {
                let hc = if i % 2 == 0 { 0.1 + 0.3 * rng.random::<f64>() } else { 0.6 + 0.3 * rng.random::<f64>() };
                let label = (hc > 0.5) != flip;
                FeatureRow {
                    event: format!("e{i:03}"),
                    p_ego: rng.random(),
                    p_sc: rng.random(),
                    p_pc: rng.random(),
                    p_hc: hc,
                    label,
                }
            })
            .collect();
        UserDataset { user: user.to_string(), rows, shortfall: false }
    }

    #[test]
    fn class_cv_learns_shared_rule() {
        let users: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let datasets: BTreeMap<String, UserDataset> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), rule_dataset(u, false, 100 + i as u64)))
            .collect();
        let out = class_conditioned_cv(&users, &datasets, &Hyperparameters::default(), 10, 5)
            .unwrap();
        assert_eq!(out.k_used, 10);
        assert!(out.metrics.accuracy >= 0.95, "accuracy {}", out.metrics.accuracy);
    }

    #[test]
    fn class_cv_contradictory_rules_near_chance() {
        let users: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let datasets: BTreeMap<String, UserDataset> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), rule_dataset(u, i % 2 == 0, 200 + i as u64)))
            .collect();
        let out = class_conditioned_cv(&users, &datasets, &Hyperparameters::default(), 10, 5)
            .unwrap();
        assert!(
            (out.metrics.accuracy - 0.5).abs() <= 0.15,
            "accuracy {}",
            out.metrics.accuracy
        );
    }

    #[test]
    fn class_cv_single_user_errors() {
        let users = vec!["solo".to_string()];
        let datasets: BTreeMap<String, UserDataset> =
            [("solo".to_string(), rule_dataset("solo", false, 1))].into();
        assert!(matches!(
            class_conditioned_cv(&users, &datasets, &Hyperparameters::default(), 10, 0),
            Err(PhenotypeError::TooFewUsers(1))
        ));
    }

    #[test]
    fn baseline_equals_class_cv_on_same_users() {
        let users: Vec<String> = (0..6).map(|i| format!("u{i}")).collect();
        let datasets: BTreeMap<String, UserDataset> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), rule_dataset(u, false, 300 + i as u64)))
            .collect();
        let hyper = Hyperparameters::default();
        let a = class_conditioned_cv(&users, &datasets, &hyper, 6, 9).unwrap();
        let b = baseline_single_class_cv(&users, &datasets, &hyper, 6, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ari_basic_properties() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &a) - 1.0).abs() < 1e-12);
        // Relabeling does not matter.
        let relabeled = vec![2, 2, 0, 0, 1, 1];
        assert!((adjusted_rand_index(&a, &relabeled) - 1.0).abs() < 1e-12);
        // A split that ignores the structure scores low.
        let independent = vec![0, 1, 0, 1, 0, 1];
        assert!(adjusted_rand_index(&a, &independent) < 0.1);
    }
}
