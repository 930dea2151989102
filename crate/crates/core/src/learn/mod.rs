//! Classifiers, stratified cross-validation, evaluation metrics, and
//! mutual-information feature selection.

pub mod svm;
pub mod tree;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{Feature, FeatureRow};
pub use svm::{LinearSvm, SvmParams};
pub use tree::{DecisionTree, TreeParams};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("k = {k} exceeds the {rows} available rows")]
    KTooLarge { k: usize, rows: usize },
    #[error("cannot train on an empty row set")]
    EmptyTrainingSet,
    #[error("cannot evaluate on an empty row set")]
    EmptyEvaluationSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    DecisionTree,
    LinearSvm,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::DecisionTree => "tree",
            ClassifierKind::LinearSvm => "svm",
        }
    }
}

/// Hyperparameters for both classifier kinds; only the relevant half is
/// read at training time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Hyperparameters {
    pub tree: TreeParams,
    pub svm: SvmParams,
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Tree(DecisionTree),
    Svm(LinearSvm),
    /// Produced when training saw a single class; always predicts it.
    Constant(bool),
}

/// A trained classifier together with the feature subset it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    kind: ClassifierKind,
    features: Vec<Feature>,
    model: Model,
}

impl TrainedClassifier {
    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    /// True when training degenerated to a constant predictor.
    pub fn is_degenerate(&self) -> bool {
        matches!(self.model, Model::Constant(_))
    }

    pub fn predict(&self, row: &FeatureRow) -> bool {
        let x: Vec<f64> = self.features.iter().map(|&f| row.value(f)).collect();
        match &self.model {
            Model::Tree(t) => t.predict(&x),
            Model::Svm(s) => s.predict(&x),
            Model::Constant(label) => *label,
        }
    }
}

/// Train a classifier of `kind` on `rows`, restricted to `features`.
/// Single-class inputs yield a flagged constant classifier rather than an
/// error. Training is deterministic for fixed inputs and hyperparameters.
pub fn train(
    kind: ClassifierKind,
    rows: &[FeatureRow],
    features: &[Feature],
    hyper: &Hyperparameters,
) -> Result<TrainedClassifier, LearnError> {
    if rows.is_empty() {
        return Err(LearnError::EmptyTrainingSet);
    }
    let ys: Vec<bool> = rows.iter().map(|r| r.label).collect();
    let features = features.to_vec();
    let first = ys[0];
    if ys.iter().all(|&y| y == first) {
        return Ok(TrainedClassifier { kind, features, model: Model::Constant(first) });
    }
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| features.iter().map(|&f| r.value(f)).collect())
        .collect();
    let model = match kind {
        ClassifierKind::DecisionTree => Model::Tree(DecisionTree::fit(&xs, &ys, &hyper.tree)),
        ClassifierKind::LinearSvm => Model::Svm(LinearSvm::fit(&xs, &ys, &hyper.svm)),
    };
    Ok(TrainedClassifier { kind, features, model })
}

/// Confusion counts plus the derived ratios. Ratios whose denominator is
/// zero are reported as 0 with the matching `*_defined` flag cleared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy_defined: bool,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

impl Metrics {
    pub fn from_counts(true_pos: u64, false_pos: u64, true_neg: u64, false_neg: u64) -> Self {
        let total = true_pos + false_pos + true_neg + false_neg;
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                (0.0, false)
            } else {
                (num as f64 / den as f64, true)
            }
        };
        let (accuracy, accuracy_defined) = ratio(true_pos + true_neg, total);
        let (precision, precision_defined) = ratio(true_pos, true_pos + false_pos);
        let (recall, recall_defined) = ratio(true_pos, true_pos + false_neg);
        Self {
            true_pos,
            false_pos,
            true_neg,
            false_neg,
            accuracy,
            precision,
            recall,
            accuracy_defined,
            precision_defined,
            recall_defined,
        }
    }

    /// Unweighted mean of per-fold ratios; confusion counts are summed.
    /// A flag stays set only if it was set in every fold.
    pub fn mean_of(folds: &[Metrics]) -> Metrics {
        assert!(!folds.is_empty());
        let n = folds.len() as f64;
        Metrics {
            true_pos: folds.iter().map(|m| m.true_pos).sum(),
            false_pos: folds.iter().map(|m| m.false_pos).sum(),
            true_neg: folds.iter().map(|m| m.true_neg).sum(),
            false_neg: folds.iter().map(|m| m.false_neg).sum(),
            accuracy: folds.iter().map(|m| m.accuracy).sum::<f64>() / n,
            precision: folds.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: folds.iter().map(|m| m.recall).sum::<f64>() / n,
            accuracy_defined: folds.iter().all(|m| m.accuracy_defined),
            precision_defined: folds.iter().all(|m| m.precision_defined),
            recall_defined: folds.iter().all(|m| m.recall_defined),
        }
    }
}

/// Evaluate a trained classifier on labelled rows.
pub fn evaluate(model: &TrainedClassifier, rows: &[FeatureRow]) -> Result<Metrics, LearnError> {
    if rows.is_empty() {
        return Err(LearnError::EmptyEvaluationSet);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for row in rows {
        match (model.predict(row), row.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

/// Disjoint row-index folds preserving the class balance.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
    /// Set when `k` exceeds the minority class size, so some folds
    /// necessarily miss a class.
    pub minority_warning: bool,
}

/// Stratified k-fold assignment: each class is shuffled with the seed and
/// dealt round-robin, so per-fold class rates stay within one sample of the
/// global rate.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<FoldPlan, LearnError> {
    if k < 2 {
        return Err(LearnError::KTooSmall(k));
    }
    if k > labels.len() {
        return Err(LearnError::KTooLarge { k, rows: labels.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let minority = labels
        .iter()
        .filter(|&&l| l)
        .count()
        .min(labels.iter().filter(|&&l| !l).count());

    let mut offset = 0usize;
    for class in [true, false] {
        let mut members: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for (pos, idx) in members.iter().enumerate() {
            folds[(offset + pos) % k].push(*idx);
        }
        // Continue dealing where the previous class stopped, keeping total
        // fold sizes within one of each other.
        offset = (offset + labels.iter().filter(|&&l| l == class).count()) % k;
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(FoldPlan { k, folds, minority_warning: k > minority })
}

/// K-fold cross-validation over one user's rows, averaging per-fold
/// metrics. Fold assignment is based on a canonical content ordering, so
/// the result does not depend on the incoming row order.
pub fn cross_validate(
    kind: ClassifierKind,
    rows: &[FeatureRow],
    features: &[Feature],
    hyper: &Hyperparameters,
    k: usize,
    seed: u64,
) -> Result<Metrics, LearnError> {
    // Canonical order: by label, then feature values, then event id.
    let mut canonical: Vec<usize> = (0..rows.len()).collect();
    canonical.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        ra.label
            .cmp(&rb.label)
            .then_with(|| ra.values().partial_cmp(&rb.values()).unwrap())
            .then_with(|| ra.event.cmp(&rb.event))
    });
    let canon_labels: Vec<bool> = canonical.iter().map(|&i| rows[i].label).collect();
    let plan = stratified_kfold(&canon_labels, k, seed)?;

    let mut fold_metrics = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<FeatureRow> =
            plan.folds[f].iter().map(|&p| rows[canonical[p]].clone()).collect();
        let train_rows: Vec<FeatureRow> = (0..k)
            .filter(|&g| g != f)
            .flat_map(|g| plan.folds[g].iter().map(|&p| rows[canonical[p]].clone()))
            .collect();
        let model = train(kind, &train_rows, features, hyper)?;
        fold_metrics.push(evaluate(&model, &test)?);
    }
    Ok(Metrics::mean_of(&fold_metrics))
}

/// Outcome of mutual-information feature selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiSelection {
    pub feature: Feature,
    /// MI in nats, indexed like [`Feature::ALL`].
    pub scores: [f64; 4],
    /// Best score below 0.01 nats.
    pub low_confidence: bool,
    /// Every feature column is constant.
    pub degenerate: bool,
    /// Fewer than `2 * bins` rows.
    pub low_sample: bool,
}

/// Pick the feature with the highest mutual information with the label,
/// estimated by equal-frequency binning and the plug-in entropy formula
/// (natural log). Ties resolve in `ego, SC, PC, HC` order.
pub fn mutual_info_select(rows: &[FeatureRow], bins: usize) -> MiSelection {
    assert!(bins >= 2, "need at least 2 bins");
    let n = rows.len();
    if n == 0 {
        return MiSelection {
            feature: Feature::Ego,
            scores: [0.0; 4],
            low_confidence: true,
            degenerate: true,
            low_sample: true,
        };
    }
    let labels: Vec<bool> = rows.iter().map(|r| r.label).collect();
    let mut scores = [0.0f64; 4];
    let mut degenerate = true;
    for (slot, f) in scores.iter_mut().zip(Feature::ALL) {
        let values: Vec<f64> = rows.iter().map(|r| r.value(f)).collect();
        if values.iter().any(|v| *v != values[0]) {
            degenerate = false;
            *slot = binned_mutual_information(&values, &labels, bins);
        }
    }
    let mut best = Feature::Ego;
    let mut best_score = scores[0];
    for (i, f) in Feature::ALL.iter().enumerate().skip(1) {
        if scores[i] > best_score {
            best_score = scores[i];
            best = *f;
        }
    }
    MiSelection {
        feature: best,
        scores,
        low_confidence: best_score < 0.01,
        degenerate,
        low_sample: n < 2 * bins,
    }
}

/// Equal-frequency bin edges; identical values always share a bin, so a
/// constant column carries zero information by construction.
fn binned_mutual_information(values: &[f64], labels: &[bool], bins: usize) -> f64 {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Bin j holds roughly the j-th n/bins quantile slice; the last edge is
    // the maximum, so every value lands somewhere.
    let edges: Vec<f64> = (1..=bins).map(|j| sorted[(j * n / bins).clamp(1, n) - 1]).collect();

    let bin_of = |v: f64| -> usize {
        edges.iter().position(|e| v <= *e).unwrap_or(edges.len() - 1)
    };

    let mut joint: BTreeMap<(usize, bool), f64> = BTreeMap::new();
    let mut marg_bin: BTreeMap<usize, f64> = BTreeMap::new();
    let mut marg_label: BTreeMap<bool, f64> = BTreeMap::new();
    let w = 1.0 / n as f64;
    for (v, l) in values.iter().zip(labels) {
        let b = bin_of(*v);
        *joint.entry((b, *l)).or_insert(0.0) += w;
        *marg_bin.entry(b).or_insert(0.0) += w;
        *marg_label.entry(*l).or_insert(0.0) += w;
    }
    joint
        .iter()
        .map(|(&(b, l), &p)| p * (p / (marg_bin[&b] * marg_label[&l])).ln())
        .sum::<f64>()
        .max(0.0)
}
