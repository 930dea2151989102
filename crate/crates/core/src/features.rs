//! Group-participation features, balanced per-user datasets, and
//! group-influence vectors.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::community::CommunityPartition;
use crate::geo::{self, GeoPoint};
use crate::graphs::WeightedGraph;
use crate::ingest::EventLog;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("user '{0}' appears inside its own group")]
    FocalUserInGroup(String),
    #[error("user '{0}' has no attended events")]
    EmptyAttendance(String),
    #[error("user '{0}' is not covered by the {1} partition")]
    UncoveredUser(String, &'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// The four groups a feature can refer to, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Feature {
    Ego,
    Sc,
    Pc,
    Hc,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::Ego, Feature::Sc, Feature::Pc, Feature::Hc];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Ego => "ego",
            Feature::Sc => "sc",
            Feature::Pc => "pc",
            Feature::Hc => "hc",
        }
    }
}

/// The member sets a user's features are computed against. The focal user
/// itself is excluded from every set so the attendance label never leaks
/// into its own features.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupContext {
    ego: BTreeSet<String>,
    sc: BTreeSet<String>,
    pc: BTreeSet<String>,
    hc: BTreeSet<String>,
}

impl GroupContext {
    pub fn new(
        user: &str,
        ego: BTreeSet<String>,
        sc: BTreeSet<String>,
        pc: BTreeSet<String>,
        hc: BTreeSet<String>,
    ) -> Result<Self, FeatureError> {
        for set in [&ego, &sc, &pc, &hc] {
            if set.contains(user) {
                return Err(FeatureError::FocalUserInGroup(user.to_string()));
            }
        }
        Ok(Self { ego, sc, pc, hc })
    }

    pub fn group(&self, f: Feature) -> &BTreeSet<String> {
        match f {
            Feature::Ego => &self.ego,
            Feature::Sc => &self.sc,
            Feature::Pc => &self.pc,
            Feature::Hc => &self.hc,
        }
    }
}

/// Build every user's [`GroupContext`] from the social graph (ego networks)
/// and the three Louvain partitions (community member sets minus the user).
pub fn group_contexts(
    sg: &WeightedGraph,
    sc: &CommunityPartition,
    pc: &CommunityPartition,
    hc: &CommunityPartition,
) -> Result<BTreeMap<String, GroupContext>, FeatureError> {
    let mut out = BTreeMap::new();
    for (idx, user) in sg.nodes().iter().enumerate() {
        let ego: BTreeSet<String> = sg.neighbors(idx).map(|(j, _)| sg.node_id(j).to_string()).collect();
        let community_members = |part: &CommunityPartition, name: &'static str| {
            let c = part
                .community_of(user)
                .ok_or_else(|| FeatureError::UncoveredUser(user.clone(), name))?;
            Ok::<BTreeSet<String>, FeatureError>(
                part.members(c).iter().filter(|m| *m != user).cloned().collect(),
            )
        };
        let sc_set = community_members(sc, "social")?;
        let pc_set = community_members(pc, "physical")?;
        let hc_set = community_members(hc, "homophily")?;
        out.insert(user.clone(), GroupContext::new(user, ego, sc_set, pc_set, hc_set)?);
    }
    Ok(out)
}

/// One row of a per-user dataset: the four participation features of an
/// event plus the attended label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub event: String,
    pub p_ego: f64,
    pub p_sc: f64,
    pub p_pc: f64,
    pub p_hc: f64,
    pub label: bool,
}

impl FeatureRow {
    pub fn value(&self, f: Feature) -> f64 {
        match f {
            Feature::Ego => self.p_ego,
            Feature::Sc => self.p_sc,
            Feature::Pc => self.p_pc,
            Feature::Hc => self.p_hc,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.p_ego, self.p_sc, self.p_pc, self.p_hc]
    }
}

/// Balanced dataset for one user: the attended events (label true) plus the
/// same number of nearest non-attended events (label false).
#[derive(Debug, Clone, PartialEq)]
pub struct UserDataset {
    pub user: String,
    pub rows: Vec<FeatureRow>,
    /// Set when the non-attended candidate pool ran out before reaching
    /// `|A_u|` negative rows.
    pub shortfall: bool,
}

impl UserDataset {
    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// CSV export: `event_id,p_ego,p_sc,p_pc,p_hc,label`.
    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureError> {
        let to_io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(source) => FeatureError::Io { path: path.to_path_buf(), source },
            other => FeatureError::Io {
                path: path.to_path_buf(),
                source: io::Error::other(format!("{other:?}")),
            },
        };
        let mut w = csv::Writer::from_path(path).map_err(to_io)?;
        w.write_record(["event_id", "p_ego", "p_sc", "p_pc", "p_hc", "label"]).map_err(to_io)?;
        for r in &self.rows {
            w.write_record([
                r.event.as_str(),
                &r.p_ego.to_string(),
                &r.p_sc.to_string(),
                &r.p_pc.to_string(),
                &r.p_hc.to_string(),
                if r.label { "true" } else { "false" },
            ])
            .map_err(to_io)?;
        }
        w.flush().map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }
}

/// Per-user group influence: the mean of each participation feature over
/// the user's attended events.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceVector {
    pub user: String,
    pub i_ego: f64,
    pub i_sc: f64,
    pub i_pc: f64,
    pub i_hc: f64,
}

impl InfluenceVector {
    /// The three community components, in `(sc, pc, hc)` axis order.
    pub fn community_components(&self) -> [f64; 3] {
        [self.i_sc, self.i_pc, self.i_hc]
    }
}

/// Fraction of `group` members that attended `event`; 0 for an empty group.
pub fn group_participation(group: &BTreeSet<String>, event: &str, log: &EventLog) -> f64 {
    if group.is_empty() {
        return 0.0;
    }
    let attendees = log.attendees(event);
    let count = if group.len() <= attendees.len() {
        group.iter().filter(|m| attendees.contains(*m)).count()
    } else {
        attendees.iter().filter(|a| group.contains(*a)).count()
    };
    count as f64 / group.len() as f64
}

fn feature_row(ctx: &GroupContext, event: &str, log: &EventLog, label: bool) -> FeatureRow {
    FeatureRow {
        event: event.to_string(),
        p_ego: group_participation(ctx.group(Feature::Ego), event, log),
        p_sc: group_participation(ctx.group(Feature::Sc), event, log),
        p_pc: group_participation(ctx.group(Feature::Pc), event, log),
        p_hc: group_participation(ctx.group(Feature::Hc), event, log),
        label,
    }
}

/// Assemble the balanced dataset for `user`.
///
/// Positive rows are the attended events in id order. Negative candidates
/// are every other event, taken nearest-first from the user's centroid of
/// interests (ties in distance break lexicographically by event id) and
/// truncated to the number of positives.
pub fn build_user_dataset(
    user: &str,
    ctx: &GroupContext,
    log: &EventLog,
    centroid: GeoPoint,
) -> Result<UserDataset, FeatureError> {
    let attended = log.attended(user);
    let n = attended.len();
    if n == 0 {
        return Err(FeatureError::EmptyAttendance(user.to_string()));
    }

    let mut rows = Vec::with_capacity(2 * n);
    for event in attended {
        rows.push(feature_row(ctx, event, log, true));
    }

    let mut candidates: Vec<(f64, &String)> = log
        .events()
        .iter()
        .filter(|(e, _)| !attended.contains(*e))
        .map(|(e, p)| (geo::haversine_km(centroid, *p), e))
        .collect();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(b.1)));
    let shortfall = candidates.len() < n;
    for (_, event) in candidates.into_iter().take(n) {
        rows.push(feature_row(ctx, event, log, false));
    }

    Ok(UserDataset { user: user.to_string(), rows, shortfall })
}

/// Mean of each participation feature over the user's attended events.
pub fn influence_vector(
    user: &str,
    ctx: &GroupContext,
    log: &EventLog,
) -> Result<InfluenceVector, FeatureError> {
    let attended = log.attended(user);
    if attended.is_empty() {
        return Err(FeatureError::EmptyAttendance(user.to_string()));
    }
    let mut sums = [0.0f64; 4];
    for event in attended {
        for (s, f) in sums.iter_mut().zip(Feature::ALL) {
            *s += group_participation(ctx.group(f), event, log);
        }
    }
    let n = attended.len() as f64;
    Ok(InfluenceVector {
        user: user.to_string(),
        i_ego: sums[0] / n,
        i_sc: sums[1] / n,
        i_pc: sums[2] / n,
        i_hc: sums[3] / n,
    })
}

/// CSV export of influence vectors: `user_id,i_ego,i_sc,i_pc,i_hc`.
pub fn write_influence_csv(vectors: &[InfluenceVector], path: &Path) -> Result<(), FeatureError> {
    let to_io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => FeatureError::Io { path: path.to_path_buf(), source },
        other => FeatureError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(format!("{other:?}")),
        },
    };
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    w.write_record(["user_id", "i_ego", "i_sc", "i_pc", "i_hc"]).map_err(to_io)?;
    for v in vectors {
        w.write_record([
            v.user.as_str(),
            &v.i_ego.to_string(),
            &v.i_sc.to_string(),
            &v.i_pc.to_string(),
            &v.i_hc.to_string(),
        ])
        .map_err(to_io)?;
    }
    w.flush().map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn log_with(
        users: &[&str],
        events: &[(&str, f64, f64)],
        attendance: &[(&str, &str)],
    ) -> EventLog {
        EventLog::new(
            users.iter().map(|u| u.to_string()),
            events
                .iter()
                .map(|(e, lat, lon)| (e.to_string(), GeoPoint::new(*lat, *lon).unwrap())),
            attendance.iter().map(|(u, e)| (u.to_string(), e.to_string())),
            Vec::<(String, String)>::new(),
        )
        .unwrap()
    }

    #[test]
    fn participation_fraction() {
        let users: Vec<String> = (0..11).map(|i| format!("u{i:02}")).collect();
        let user_refs: Vec<&str> = users.iter().map(|s| s.as_str()).collect();
        // Members u01..u04 attend e0; the group is u01..u10 (10 members).
        let attendance: Vec<(&str, &str)> = (1..=4).map(|i| (user_refs[i], "e0")).collect();
        let log = log_with(&user_refs, &[("e0", 0.0, 0.0)], &attendance);
        let group: BTreeSet<String> = users[1..].iter().cloned().collect();
        assert!((group_participation(&group, "e0", &log) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn participation_empty_group_is_zero() {
        let log = log_with(&["a"], &[("e0", 0.0, 0.0)], &[("a", "e0")]);
        assert_eq!(group_participation(&BTreeSet::new(), "e0", &log), 0.0);
    }

    #[test]
    fn participation_full_group_is_one() {
        let log = log_with(
            &["a", "b", "c"],
            &[("e0", 0.0, 0.0)],
            &[("a", "e0"), ("b", "e0"), ("c", "e0")],
        );
        assert_eq!(group_participation(&set(&["a", "b", "c"]), "e0", &log), 1.0);
    }

    #[test]
    fn participation_monotone_in_attendees() {
        // Adding an attendee that belongs to the group never lowers p.
        let before = log_with(&["a", "b", "c", "d"], &[("e0", 0.0, 0.0)], &[("a", "e0")]);
        let after = log_with(
            &["a", "b", "c", "d"],
            &[("e0", 0.0, 0.0)],
            &[("a", "e0"), ("b", "e0")],
        );
        let g = set(&["a", "b", "c"]);
        assert!(group_participation(&g, "e0", &after) >= group_participation(&g, "e0", &before));
    }

    #[test]
    fn context_rejects_focal_user() {
        let err = GroupContext::new("u", set(&["u", "v"]), set(&[]), set(&[]), set(&[]));
        assert!(matches!(err, Err(FeatureError::FocalUserInGroup(_))));
    }

    fn ctx_for(user: &str, others: &[&str]) -> GroupContext {
        let g: BTreeSet<String> =
            others.iter().filter(|o| **o != user).map(|s| s.to_string()).collect();
        GroupContext::new(user, g.clone(), g.clone(), g.clone(), g).unwrap()
    }

    #[test]
    fn balanced_dataset_shape() {
        // u attends 3 events; 4 others exist.
        let log = log_with(
            &["u", "v"],
            &[
                ("e0", 0.0, 0.0),
                ("e1", 0.0, 0.1),
                ("e2", 0.0, 0.2),
                ("n0", 0.0, 1.0),
                ("n1", 0.0, 2.0),
                ("n2", 0.0, 3.0),
                ("n3", 0.0, 4.0),
            ],
            &[("u", "e0"), ("u", "e1"), ("u", "e2"), ("v", "e0")],
        );
        let ctx = ctx_for("u", &["v"]);
        let c = GeoPoint::new(0.0, 0.0).unwrap();
        let ds = build_user_dataset("u", &ctx, &log, c).unwrap();
        assert_eq!(ds.rows.len(), 6);
        assert_eq!(ds.rows.iter().filter(|r| r.label).count(), 3);
        assert!(!ds.shortfall);
        for r in &ds.rows {
            for v in r.values() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn negatives_are_nearest_first() {
        // Non-attended events at roughly 5, 1, and 9 degrees-of-longitude
        // distance; with n = 2 the two nearest are chosen.
        let log = log_with(
            &["u"],
            &[
                ("a0", 0.0, 0.0),
                ("a1", 0.0, 0.1),
                ("far5", 0.0, 5.0),
                ("near1", 0.0, 1.0),
                ("far9", 0.0, 9.0),
            ],
            &[("u", "a0"), ("u", "a1")],
        );
        let ctx = ctx_for("u", &[]);
        let ds = build_user_dataset("u", &ctx, &log, GeoPoint::new(0.0, 0.0).unwrap()).unwrap();
        let negatives: Vec<&str> =
            ds.rows.iter().filter(|r| !r.label).map(|r| r.event.as_str()).collect();
        assert_eq!(negatives, ["near1", "far5"]);
    }

    #[test]
    fn shortfall_flag_when_pool_exhausted() {
        let log = log_with(
            &["u"],
            &[("e0", 0.0, 0.0), ("e1", 0.0, 0.1), ("e2", 0.0, 0.2), ("n0", 0.0, 1.0)],
            &[("u", "e0"), ("u", "e1"), ("u", "e2")],
        );
        let ctx = ctx_for("u", &[]);
        let ds = build_user_dataset("u", &ctx, &log, GeoPoint::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!(ds.rows.len(), 4);
        assert!(ds.shortfall);
    }

    #[test]
    fn influence_is_mean_of_positive_rows() {
        let log = log_with(
            &["u", "v", "w"],
            &[("e0", 0.0, 0.0), ("e1", 0.0, 0.1), ("n0", 0.0, 1.0), ("n1", 0.0, 2.0)],
            &[("u", "e0"), ("u", "e1"), ("v", "e0"), ("w", "e0"), ("w", "e1")],
        );
        let ctx = ctx_for("u", &["v", "w"]);
        let iv = influence_vector("u", &ctx, &log).unwrap();
        // e0: both v and w attend (p = 1.0); e1: only w (p = 0.5).
        assert!((iv.i_sc - 0.75).abs() < 1e-12);

        let ds = build_user_dataset("u", &ctx, &log, GeoPoint::new(0.0, 0.0).unwrap()).unwrap();
        let positives: Vec<&FeatureRow> = ds.rows.iter().filter(|r| r.label).collect();
        let n = positives.len() as f64;
        for f in Feature::ALL {
            let mean: f64 = positives.iter().map(|r| r.value(f)).sum::<f64>() / n;
            let component = match f {
                Feature::Ego => iv.i_ego,
                Feature::Sc => iv.i_sc,
                Feature::Pc => iv.i_pc,
                Feature::Hc => iv.i_hc,
            };
            assert!((component - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn influence_single_event_equals_row() {
        let log = log_with(&["u", "v"], &[("e0", 0.0, 0.0)], &[("u", "e0"), ("v", "e0")]);
        let ctx = ctx_for("u", &["v"]);
        let iv = influence_vector("u", &ctx, &log).unwrap();
        assert_eq!(iv.i_sc, 1.0);
        assert_eq!(iv.i_ego, 1.0);
    }

    #[test]
    fn influence_no_coattendance_is_zero() {
        let log = log_with(
            &["u", "v"],
            &[("e0", 0.0, 0.0), ("e1", 0.0, 1.0)],
            &[("u", "e0"), ("v", "e1")],
        );
        let ctx = ctx_for("u", &["v"]);
        let iv = influence_vector("u", &ctx, &log).unwrap();
        assert_eq!((iv.i_ego, iv.i_sc, iv.i_pc, iv.i_hc), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn influence_two_events_mean() {
        // Group {v, w}: v attends e0 only, so p_sc is 0.5 on e0 and 0.0 on
        // e1; the mean over u's two events is 0.25.
        let log = log_with(
            &["u", "v", "w"],
            &[("e0", 0.0, 0.0), ("e1", 0.0, 0.1)],
            &[("u", "e0"), ("u", "e1"), ("v", "e0")],
        );
        let ctx = ctx_for("u", &["v", "w"]);
        let iv = influence_vector("u", &ctx, &log).unwrap();
        assert!((iv.i_sc - 0.25).abs() < 1e-12);
    }

    #[test]
    fn influence_empty_attendance_errors() {
        let log = log_with(&["u"], &[("e0", 0.0, 0.0)], &[]);
        let ctx = ctx_for("u", &[]);
        assert!(matches!(
            influence_vector("u", &ctx, &log),
            Err(FeatureError::EmptyAttendance(_))
        ));
    }
}
