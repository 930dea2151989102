//! Raw log ingestion: CSV parsing, referential validation, and the
//! fixed-point activity filters.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geo::GeoPoint;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("integrity violation: {0}")]
    Integrity(String),
}

/// Validated, immutable view of one event-based social network log.
///
/// Attendance and subscriptions are kept as adjacency maps so that the
/// per-user (`A_u`) and per-event views the rest of the pipeline needs are
/// one lookup away.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    users: BTreeSet<String>,
    events: BTreeMap<String, GeoPoint>,
    attended_by_user: BTreeMap<String, BTreeSet<String>>,
    attendees_by_event: BTreeMap<String, BTreeSet<String>>,
    subscriptions: BTreeSet<(String, String)>,
    /// Symmetric subscription adjacency (either direction).
    subscription_partners: BTreeMap<String, BTreeSet<String>>,
}

impl EventLog {
    /// Build a log from parts, enforcing referential integrity, coordinate
    /// ranges, and the no-self-subscription rule. Duplicate pairs collapse.
    pub fn new(
        users: impl IntoIterator<Item = String>,
        events: impl IntoIterator<Item = (String, GeoPoint)>,
        attendance: impl IntoIterator<Item = (String, String)>,
        subscriptions: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, IngestError> {
        let users: BTreeSet<String> = users.into_iter().collect();
        let events: BTreeMap<String, GeoPoint> = events.into_iter().collect();

        let mut attended_by_user: BTreeMap<String, BTreeSet<String>> =
            users.iter().map(|u| (u.clone(), BTreeSet::new())).collect();
        let mut attendees_by_event: BTreeMap<String, BTreeSet<String>> =
            events.keys().map(|e| (e.clone(), BTreeSet::new())).collect();
        for (user, event) in attendance {
            if !users.contains(&user) {
                return Err(IngestError::Integrity(format!(
                    "attendance references undeclared user '{user}'"
                )));
            }
            if !events.contains_key(&event) {
                return Err(IngestError::Integrity(format!(
                    "attendance references unknown event '{event}'"
                )));
            }
            attended_by_user.get_mut(&user).unwrap().insert(event.clone());
            attendees_by_event.get_mut(&event).unwrap().insert(user);
        }

        let mut subs = BTreeSet::new();
        let mut partners: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (follower, followee) in subscriptions {
            if follower == followee {
                return Err(IngestError::Integrity(format!(
                    "self-subscription by user '{follower}'"
                )));
            }
            for id in [&follower, &followee] {
                if !users.contains(id) {
                    return Err(IngestError::Integrity(format!(
                        "subscription references undeclared user '{id}'"
                    )));
                }
            }
            partners.entry(follower.clone()).or_default().insert(followee.clone());
            partners.entry(followee.clone()).or_default().insert(follower.clone());
            subs.insert((follower, followee));
        }

        Ok(Self {
            users,
            events,
            attended_by_user,
            attendees_by_event,
            subscriptions: subs,
            subscription_partners: partners,
        })
    }

    pub fn users(&self) -> &BTreeSet<String> {
        &self.users
    }

    pub fn events(&self) -> &BTreeMap<String, GeoPoint> {
        &self.events
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    pub fn n_attendance(&self) -> usize {
        self.attended_by_user.values().map(|s| s.len()).sum()
    }

    /// Events attended by `user` (empty set for a user with no attendance).
    pub fn attended(&self, user: &str) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.attended_by_user.get(user).unwrap_or(&EMPTY)
    }

    /// Users attending `event`.
    pub fn attendees(&self, event: &str) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.attendees_by_event.get(event).unwrap_or(&EMPTY)
    }

    pub fn attendance_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.attended_by_user
            .iter()
            .flat_map(|(u, evs)| evs.iter().map(move |e| (u.as_str(), e.as_str())))
    }

    pub fn subscriptions(&self) -> &BTreeSet<(String, String)> {
        &self.subscriptions
    }

    /// Users connected to `user` by a subscription in either direction.
    pub fn subscription_partners(&self, user: &str) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.subscription_partners.get(user).unwrap_or(&EMPTY)
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty() && self.events.is_empty()
    }

    /// Write the log back out as the three input CSVs.
    pub fn write_csvs(&self, dir: &Path) -> Result<(), IngestError> {
        let io_err = |path: &Path, e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(source) => IngestError::Io { path: path.to_path_buf(), source },
            other => IngestError::Io {
                path: path.to_path_buf(),
                source: io::Error::other(format!("{other:?}")),
            },
        };

        let events_path = dir.join("events.csv");
        let mut w = csv::Writer::from_path(&events_path).map_err(|e| io_err(&events_path, e))?;
        w.write_record(["event_id", "latitude", "longitude"])
            .map_err(|e| io_err(&events_path, e))?;
        for (id, p) in &self.events {
            w.write_record([id, &p.latitude.to_string(), &p.longitude.to_string()])
                .map_err(|e| io_err(&events_path, e))?;
        }
        w.flush().map_err(|source| IngestError::Io { path: events_path.clone(), source })?;

        let att_path = dir.join("attendance.csv");
        let mut w = csv::Writer::from_path(&att_path).map_err(|e| io_err(&att_path, e))?;
        w.write_record(["user_id", "event_id"]).map_err(|e| io_err(&att_path, e))?;
        for (u, e) in self.attendance_pairs() {
            w.write_record([u, e]).map_err(|err| io_err(&att_path, err))?;
        }
        w.flush().map_err(|source| IngestError::Io { path: att_path.clone(), source })?;

        let sub_path = dir.join("subscriptions.csv");
        let mut w = csv::Writer::from_path(&sub_path).map_err(|e| io_err(&sub_path, e))?;
        w.write_record(["follower_id", "followee_id"]).map_err(|e| io_err(&sub_path, e))?;
        for (a, b) in &self.subscriptions {
            w.write_record([a, b]).map_err(|e| io_err(&sub_path, e))?;
        }
        w.flush().map_err(|source| IngestError::Io { path: sub_path, source })?;
        Ok(())
    }
}

/// Axis-aligned latitude/longitude rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn contains(&self, p: GeoPoint) -> bool {
        p.latitude >= self.min_lat
            && p.latitude <= self.max_lat
            && p.longitude >= self.min_lon
            && p.longitude <= self.max_lon
    }
}

/// Activity thresholds applied by [`apply_filters`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPolicy {
    pub min_events_per_user: usize,
    pub min_participants_per_event: usize,
    pub require_subscription: bool,
    pub bounding_box: Option<BoundingBox>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_events_per_user: 20,
            min_participants_per_event: 20,
            require_subscription: true,
            bounding_box: None,
        }
    }
}

/// Paths of the three input CSVs.
#[derive(Debug, Clone)]
pub struct LogPaths {
    pub events: PathBuf,
    pub attendance: PathBuf,
    pub subscriptions: PathBuf,
}

impl LogPaths {
    /// Conventional file names under one directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            events: dir.join("events.csv"),
            attendance: dir.join("attendance.csv"),
            subscriptions: dir.join("subscriptions.csv"),
        }
    }
}

/// Parse the three CSVs into a validated [`EventLog`].
///
/// The user set is implicit: every id appearing in attendance or on either
/// side of a subscription is a user.
pub fn load_event_log(paths: &LogPaths) -> Result<EventLog, IngestError> {
    let events = read_events_csv(&paths.events)?;
    let attendance = read_pair_csv(&paths.attendance, ["user_id", "event_id"])?;
    let subscriptions = read_pair_csv(&paths.subscriptions, ["follower_id", "followee_id"])?;

    let mut users = BTreeSet::new();
    for (u, _) in &attendance {
        users.insert(u.clone());
    }
    for (a, b) in &subscriptions {
        users.insert(a.clone());
        users.insert(b.clone());
    }
    EventLog::new(users, events, attendance, subscriptions)
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, IngestError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => IngestError::Io { path: path.to_path_buf(), source },
            other => IngestError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("{other:?}"),
            },
        })
}

fn check_header(
    path: &Path,
    reader: &mut csv::Reader<std::fs::File>,
    expected: &[&str],
) -> Result<(), IngestError> {
    let headers = reader.headers().map_err(|e| IngestError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(IngestError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {expected:?}, got {got:?}"),
        });
    }
    Ok(())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn read_events_csv(path: &Path) -> Result<Vec<(String, GeoPoint)>, IngestError> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &["event_id", "latitude", "longitude"])?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for result in reader.records() {
        let record = result.map_err(|e| IngestError::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record_line(&record);
        let parse_err = |message: String| IngestError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(parse_err("empty event_id".into()));
        }
        let lat: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(format!("bad latitude '{}'", &record[1])))?;
        let lon: f64 = record[2]
            .parse()
            .map_err(|_| parse_err(format!("bad longitude '{}'", &record[2])))?;
        let point = GeoPoint::new(lat, lon).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(parse_err(format!("duplicate event_id '{id}'")));
        }
        out.push((id, point));
    }
    Ok(out)
}

fn read_pair_csv(path: &Path, header: [&str; 2]) -> Result<Vec<(String, String)>, IngestError> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &header)?;
    let mut out = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| IngestError::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record_line(&record);
        if record.len() != 2 {
            return Err(IngestError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected 2 fields, got {}", record.len()),
            });
        }
        let a = record[0].to_string();
        let b = record[1].to_string();
        if a.is_empty() || b.is_empty() {
            return Err(IngestError::Parse {
                path: path.to_path_buf(),
                line,
                message: "empty id".into(),
            });
        }
        out.push((a, b));
    }
    Ok(out)
}

/// Apply the activity filters, iterating to a fixed point: dropping a user
/// shrinks event participant counts and vice versa, so passes repeat until
/// nothing changes. The result is a sub-log of the input and is independent
/// of the order the individual rules fire in.
pub fn apply_filters(log: &EventLog, policy: &FilterPolicy) -> EventLog {
    assert!(policy.min_events_per_user >= 1, "min_events_per_user must be >= 1");
    assert!(policy.min_participants_per_event >= 1, "min_participants_per_event must be >= 1");

    let mut users: BTreeSet<String> = log.users.clone();
    let mut events: BTreeSet<String> = log.events.keys().cloned().collect();

    // Box violations never heal, so evaluate them once.
    if let Some(bbox) = &policy.bounding_box {
        events.retain(|e| bbox.contains(log.events[e]));
    }

    loop {
        let mut changed = false;

        let dropped_events: Vec<String> = events
            .iter()
            .filter(|e| {
                let n = log.attendees(e).iter().filter(|u| users.contains(*u)).count();
                n < policy.min_participants_per_event
            })
            .cloned()
            .collect();
        for e in &dropped_events {
            events.remove(e);
            changed = true;
        }

        let dropped_users: Vec<String> = users
            .iter()
            .filter(|u| {
                let attended = log.attended(u).iter().filter(|e| events.contains(*e)).count();
                if attended < policy.min_events_per_user {
                    return true;
                }
                if policy.require_subscription {
                    let connected = log
                        .subscription_partners(u)
                        .iter()
                        .any(|p| users.contains(p));
                    if !connected {
                        return true;
                    }
                }
                false
            })
            .cloned()
            .collect();
        for u in &dropped_users {
            users.remove(u);
            changed = true;
        }

        if !changed {
            break;
        }
    }

    let events_kept: Vec<(String, GeoPoint)> = events
        .iter()
        .map(|e| (e.clone(), log.events[e]))
        .collect();
    let attendance = log
        .attendance_pairs()
        .filter(|(u, e)| users.contains(*u) && events.contains(*e))
        .map(|(u, e)| (u.to_string(), e.to_string()));
    let attendance: Vec<(String, String)> = attendance.collect();
    let subscriptions: Vec<(String, String)> = log
        .subscriptions
        .iter()
        .filter(|(a, b)| users.contains(a) && users.contains(b))
        .cloned()
        .collect();

    EventLog::new(users, events_kept, attendance, subscriptions)
        .expect("filtering preserves validity")
}
