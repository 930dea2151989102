//! Synthetic event logs with planted communities, influence rays, and
//! influence levels, used as ground truth for end-to-end validation.
//!
//! Layout: users are split into one block per (community, level band).
//! Each block is arranged on a g x g grid whose rows, columns, and
//! diagonals are the planted social, physical, and homophily groups; two
//! users share at most one group, so participation signals do not leak
//! between group kinds. Every group owns a pool of events its members pick
//! from, and a per-block fixed point sizes pools and pick counts so each
//! user's empirical group-participation means land on `level * ray`. Rays
//! rotate across grid positions, so a group mixes users of different
//! phenotypes and its pool events become high-participation *negatives*
//! for members who never pick them.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::GroupContext;
use crate::geo::GeoPoint;
use crate::graphs;
use crate::ingest::{EventLog, IngestError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("phenotype ray {0} has zero length")]
    ZeroRay(usize),
    #[error("influence level {0} must be in (0, 1]")]
    BadLevel(f64),
    #[error("infeasible target: level {level} on ray {ray} needs component {component:.3} > 1")]
    ComponentOverflow { ray: usize, level: f64, component: f64 },
    #[error(
        "infeasible target: level {level} on ray {ray} needs total participation {total:.3} > 0.90"
    )]
    TotalOverflow { ray: usize, level: f64, total: f64 },
    #[error("{0} must be a probability in [0, 1]")]
    BadProbability(&'static str),
    #[error("need at least {needed} users for {cells} community/band blocks, got {given}")]
    TooFewUsers { needed: usize, cells: usize, given: usize },
    #[error("at most 24 communities supported, got {0}")]
    TooManyCommunities(usize),
    #[error("event budget {budget} too small; need roughly {needed}")]
    EventBudgetTooSmall { budget: usize, needed: usize },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Target total number of events; the realized count lands close to it.
    pub n_events: usize,
    pub n_communities: usize,
    /// Planted finger directions in (sc, pc, hc) space; normalized here.
    pub phenotype_rays: Vec<[f64; 3]>,
    /// Planted radial bands, i.e. target vector magnitudes.
    pub influence_levels: Vec<f64>,
    pub geo_cluster_spread_km: f64,
    /// Independent flip probability over each user's candidate events.
    pub attendance_noise: f64,
    pub seed: u64,
    pub intra_subscription_prob: f64,
    pub inter_subscription_prob: f64,
    /// Relative size of per-group decoy pools: events the group co-attends
    /// at about half strength, which a member itself mostly skips.
    pub decoy_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_events: 14000,
            n_communities: 2,
            phenotype_rays: vec![
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [1.0, 1.0, 0.0],
                [1.0, 1.0, 1.0],
            ],
            influence_levels: vec![0.15, 0.32, 0.5],
            geo_cluster_spread_km: 30.0,
            attendance_noise: 0.02,
            seed: 7,
            intra_subscription_prob: 0.3,
            inter_subscription_prob: 0.002,
            decoy_fraction: 0.3,
        }
    }
}

/// Planted per-user group member sets (grid row, column, diagonal mates).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedGroups {
    pub sc: BTreeSet<String>,
    pub pc: BTreeSet<String>,
    pub hc: BTreeSet<String>,
}

/// Everything the generator knows about the population it built.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub community: BTreeMap<String, usize>,
    pub ray_index: BTreeMap<String, usize>,
    pub level_index: BTreeMap<String, usize>,
    pub level_value: BTreeMap<String, f64>,
    /// Normalized planted directions, indexed by ray id.
    pub rays: Vec<[f64; 3]>,
    pub groups: BTreeMap<String, PlantedGroups>,
}

impl GroundTruth {
    /// CSV export: `user_id,community_id,ray_index,influence_level`.
    pub fn write_csv(&self, path: &Path) -> Result<(), SynthError> {
        let to_io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(source) => SynthError::Io { path: path.to_path_buf(), source },
            other => SynthError::Io {
                path: path.to_path_buf(),
                source: io::Error::other(format!("{other:?}")),
            },
        };
        let mut w = csv::Writer::from_path(path).map_err(to_io)?;
        w.write_record(["user_id", "community_id", "ray_index", "influence_level"])
            .map_err(to_io)?;
        for (user, &c) in &self.community {
            w.write_record([
                user.as_str(),
                &c.to_string(),
                &self.ray_index[user].to_string(),
                &self.level_value[user].to_string(),
            ])
            .map_err(to_io)?;
        }
        w.flush().map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }
}

/// Group contexts built from the planted member sets; ego networks come
/// from the generated social graph. Tests use these to isolate feature and
/// phenotype recovery from community-detection noise.
pub fn planted_contexts(
    log: &EventLog,
    truth: &GroundTruth,
) -> BTreeMap<String, GroupContext> {
    let sg = graphs::build_social_graph(log);
    truth
        .groups
        .iter()
        .filter(|(user, _)| log.users().contains(*user))
        .map(|(user, planted)| {
            let ego = graphs::ego_network(&sg, user).expect("user in graph").alters;
            let keep = |set: &BTreeSet<String>| {
                set.iter().filter(|m| log.users().contains(*m)).cloned().collect()
            };
            let ctx = GroupContext::new(user, ego, keep(&planted.sc), keep(&planted.pc), keep(&planted.hc))
                .expect("planted groups exclude the user");
            (user.clone(), ctx)
        })
        .collect()
}

const GROUP_KINDS: usize = 3;

/// One (community, band, ray) block of users arranged on a grid. All
/// members share the same target vector, which keeps the pool algebra
/// closed-form.
struct Block {
    community: usize,
    band: usize,
    ray: usize,
    /// Global user indices, in grid position order.
    members: Vec<usize>,
    g: usize,
}

impl Block {
    fn coords(&self, position: usize) -> [usize; GROUP_KINDS] {
        let row = position / self.g;
        let col = position % self.g;
        [row, col, (row + col) % self.g]
    }

    /// Smallest group size over all rows, columns, and diagonals.
    fn min_group_size(&self) -> usize {
        (0..GROUP_KINDS)
            .flat_map(|k| (0..self.group_count(k)).map(move |i| (k, i)))
            .map(|(k, i)| self.group_positions(k, i).len())
            .min()
            .unwrap_or(0)
    }

    fn group_count(&self, kind: usize) -> usize {
        match kind {
            0 => self.members.len().div_ceil(self.g),
            _ => self.g.min(self.members.len()),
        }
    }

    /// Grid positions belonging to group `idx` of `kind`.
    fn group_positions(&self, kind: usize, idx: usize) -> Vec<usize> {
        (0..self.members.len()).filter(|&p| self.coords(p)[kind] == idx).collect()
    }
}

/// Pick the grid width that maximizes the smallest row/column/diagonal, so
/// ragged edges never produce near-singleton groups (a two-member group can
/// only plant identical targets on both members).
fn choose_grid(n_members: usize) -> usize {
    let base = (n_members as f64).sqrt();
    let lo = (base.floor() as usize).saturating_sub(1).max(2);
    let hi = (base.ceil() as usize + 2).min(n_members.max(2));
    let mut best = (0usize, lo);
    for g in lo..=hi {
        let probe =
            Block { community: 0, band: 0, ray: 0, members: (0..n_members).collect(), g };
        let min_size = probe.min_group_size();
        if min_size > best.0 {
            best = (min_size, g);
        }
    }
    best.1
}

/// Per-(kind, group) pool parameters. With a ray-pure block every member
/// shares the target vector, so expected participation on pool events is
/// exactly the block scale `q` and component means land on the target:
/// member picks `n = (t - warm_share) * M / q` from a pool of `s = n / q`.
struct PoolPlan {
    kind: usize,
    group: usize,
    hot_size: usize,
    /// Hot picks per member position (parallel to `group_positions`).
    hot_picks: Vec<usize>,
    warm_size: usize,
    /// Rotating attendee-subset size for warm events.
    warm_m: usize,
}

struct BlockPlan {
    pools: Vec<PoolPlan>,
}

/// Share of the hot pool size given to warm decoy events: events the
/// group co-attends at roughly half strength, which the member itself
/// mostly does not attend. They create class-specific hard negatives.
fn warm_subset(q: f64, group_len: usize) -> usize {
    ((0.5 * q * (group_len - 1) as f64).round() as usize).clamp(1, group_len)
}

fn plan_block(
    block: &Block,
    target: [f64; GROUP_KINDS],
    q: f64,
    scale_m: f64,
    decoy_fraction: f64,
) -> BlockPlan {
    let mut pools = Vec::new();
    for kind in 0..GROUP_KINDS {
        if target[kind] <= 0.0 {
            continue;
        }
        let n0 = target[kind] * scale_m / q;
        for group in 0..block.group_count(kind) {
            let positions = block.group_positions(kind, group);
            let len = positions.len();
            if len < 2 {
                // A singleton group cannot produce co-attendance; the
                // member's component stays at zero.
                continue;
            }
            let warm_m = warm_subset(q, len);
            let coattend_warm = (warm_m - 1) as f64 / (len - 1) as f64;
            // Per-member warm attendance is capped so structured picks
            // plus warm events still fit under the attendance scale.
            let headroom = scale_m * (q - target[kind]).max(0.0) / (q - coattend_warm).max(1e-9);
            let warm_attendance = (decoy_fraction * n0 / q * warm_m as f64 / len as f64)
                .min(0.9 * headroom)
                .max(0.0);
            let warm_size = (warm_attendance * len as f64 / warm_m as f64).round() as usize;
            let expected_warm = warm_size as f64 * warm_m as f64 / len as f64;
            let warm_share = expected_warm * coattend_warm / scale_m;
            let n = (((target[kind] - warm_share) * scale_m / q).round() as usize).max(0);
            if n == 0 && warm_size == 0 {
                continue;
            }
            let hot_size = ((n as f64 / q).round() as usize).max(n).max(1);
            pools.push(PoolPlan {
                kind,
                group,
                hot_size,
                hot_picks: vec![n; len],
                warm_size,
                warm_m,
            });
        }
    }
    BlockPlan { pools }
}

fn block_scale(target: [f64; GROUP_KINDS]) -> f64 {
    let total: f64 = target.iter().sum();
    (total + 0.02).min(0.92)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

const KM_PER_DEG_LAT: f64 = 111.32;

fn offset_km(base: GeoPoint, north_km: f64, east_km: f64) -> GeoPoint {
    let lat = (base.latitude + north_km / KM_PER_DEG_LAT).clamp(-89.0, 89.0);
    let lon_scale = KM_PER_DEG_LAT * base.latitude.to_radians().cos().max(0.1);
    let lon = (base.longitude + east_km / lon_scale).clamp(-179.0, 179.0);
    GeoPoint { latitude: lat, longitude: lon }
}

/// Generate a synthetic event log plus its ground truth. Deterministic for
/// a fixed config (all randomness flows from `config.seed`).
pub fn generate(config: &SynthConfig) -> Result<(EventLog, GroundTruth), SynthError> {
    let nr = config.phenotype_rays.len();
    let nl = config.influence_levels.len();
    assert!(nr >= 1 && nl >= 1, "need at least one ray and one level");

    // Normalize rays and validate targets.
    let mut rays: Vec<[f64; 3]> = Vec::with_capacity(nr);
    for (i, ray) in config.phenotype_rays.iter().enumerate() {
        let norm = (ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2]).sqrt();
        if norm <= 0.0 || ray.iter().any(|c| *c < 0.0 || !c.is_finite()) {
            return Err(SynthError::ZeroRay(i));
        }
        rays.push([ray[0] / norm, ray[1] / norm, ray[2] / norm]);
    }
    for &level in &config.influence_levels {
        if !(0.0..=1.0).contains(&level) || level == 0.0 {
            return Err(SynthError::BadLevel(level));
        }
    }
    for (ri, ray) in rays.iter().enumerate() {
        for &level in &config.influence_levels {
            let max_component = ray.iter().fold(0.0f64, |a, &b| a.max(b)) * level;
            if max_component > 1.0 {
                return Err(SynthError::ComponentOverflow {
                    ray: ri,
                    level,
                    component: max_component,
                });
            }
            let total = level * (ray[0] + ray[1] + ray[2]);
            if total > 0.90 {
                return Err(SynthError::TotalOverflow { ray: ri, level, total });
            }
        }
    }
    for (p, name) in [
        (config.attendance_noise, "attendance_noise"),
        (config.intra_subscription_prob, "intra_subscription_prob"),
        (config.inter_subscription_prob, "inter_subscription_prob"),
        (config.decoy_fraction, "decoy_fraction"),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SynthError::BadProbability(name));
        }
    }
    if config.n_communities > 24 {
        return Err(SynthError::TooManyCommunities(config.n_communities));
    }
    let cells = config.n_communities * nl * nr;
    let min_block = 9;
    if config.n_users < cells * min_block {
        return Err(SynthError::TooFewUsers {
            needed: cells * min_block,
            cells,
            given: config.n_users,
        });
    }

    let user_ids: Vec<String> = (0..config.n_users).map(|i| format!("u{i:05}")).collect();

    // Carve users into (community, band, ray) blocks of near-equal size.
    let mut blocks: Vec<Block> = Vec::with_capacity(cells);
    {
        let mut next = 0usize;
        let per_community = nl * nr;
        for community in 0..config.n_communities {
            let comm_size = config.n_users / config.n_communities
                + usize::from(community < config.n_users % config.n_communities);
            let mut taken = 0usize;
            for slot in 0..per_community {
                let band = slot / nr;
                let ray = slot % nr;
                let block_size = comm_size / per_community + usize::from(slot < comm_size % per_community);
                let members: Vec<usize> = (next + taken..next + taken + block_size).collect();
                taken += block_size;
                let g = choose_grid(block_size);
                blocks.push(Block { community, band, ray, members, g });
            }
            next += comm_size;
        }
    }
    let block_target = |block: &Block| -> [f64; GROUP_KINDS] {
        let level = config.influence_levels[block.band];
        let ray = rays[block.ray];
        [ray[0] * level, ray[1] * level, ray[2] * level]
    };

    // Size the attendance scale M against the event budget: pool mass is
    // near-linear in M, so fit once at a reference scale.
    let reference_m = 1000.0;
    let mass_at = |m: f64| -> f64 {
        blocks
            .iter()
            .map(|b| {
                let t = block_target(b);
                let plan = plan_block(b, t, block_scale(t), m, config.decoy_fraction);
                plan.pools.iter().map(|p| (p.hot_size + p.warm_size) as f64).sum::<f64>()
            })
            .sum()
    };
    let reference_mass = mass_at(reference_m);
    let scale_m = (reference_m * config.n_events as f64 / reference_mass).floor();
    if scale_m < 24.0 {
        return Err(SynthError::EventBudgetTooSmall {
            budget: config.n_events,
            needed: (24.0 / scale_m.max(1e-9) * config.n_events as f64) as usize,
        });
    }
    let plans: Vec<BlockPlan> = blocks
        .iter()
        .map(|b| {
            let t = block_target(b);
            plan_block(b, t, block_scale(t), scale_m, config.decoy_fraction)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Geography: widely separated community centers, one sub-center per
    // block, homes scattered around it.
    let community_center = |c: usize| GeoPoint {
        latitude: 32.0 + 5.0 * (c % 4) as f64,
        longitude: -118.0 + 9.0 * (c / 4) as f64,
    };
    let spread = config.geo_cluster_spread_km;
    let per_community = nl * nr;
    let mut homes = vec![GeoPoint { latitude: 0.0, longitude: 0.0 }; config.n_users];
    for (bi, block) in blocks.iter().enumerate() {
        let center = community_center(block.community);
        let angle = 2.0 * std::f64::consts::PI * (bi % per_community) as f64 / per_community as f64;
        let sub = offset_km(center, 0.4 * spread * angle.cos(), 0.4 * spread * angle.sin());
        for &user in &block.members {
            let north = 0.5 * spread * gaussian(&mut rng);
            let east = 0.5 * spread * gaussian(&mut rng);
            homes[user] = offset_km(sub, north, east);
        }
    }

    // Materialize pools: hot events with sampled picks, warm events with
    // rotating attendee subsets.
    let mut events: Vec<(String, GeoPoint)> = Vec::new();
    let mut attended: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); config.n_users];
    let mut own_pool_events: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); config.n_users];
    let mut community_events: Vec<Vec<usize>> = vec![Vec::new(); config.n_communities];
    for (block, plan) in blocks.iter().zip(&plans) {
        for pool in &plan.pools {
            let positions = block.group_positions(pool.kind, pool.group);
            let len = positions.len();
            let mut make_events = |count: usize,
                                   rng: &mut ChaCha8Rng,
                                   events: &mut Vec<(String, GeoPoint)>|
             -> usize {
                let first = events.len();
                for _ in 0..count {
                    let owner = block.members[positions[rng.random_range(0..len)]];
                    events.push((format!("e{:06}", events.len()), homes[owner]));
                    community_events[block.community].push(events.len() - 1);
                }
                first
            };

            let hot_first = make_events(pool.hot_size, &mut rng, &mut events);
            for (slot, &p) in positions.iter().enumerate() {
                let user = block.members[p];
                for e in hot_first..hot_first + pool.hot_size {
                    own_pool_events[user].insert(e);
                }
                let n_picks = pool.hot_picks[slot].min(pool.hot_size);
                for offset in index::sample(&mut rng, pool.hot_size, n_picks) {
                    attended[user].insert(hot_first + offset);
                }
            }

            let warm_first = make_events(pool.warm_size, &mut rng, &mut events);
            for j in 0..pool.warm_size {
                for i in 0..pool.warm_m {
                    let slot = (j + i) % len;
                    attended[block.members[positions[slot]]].insert(warm_first + j);
                }
            }
            for &p in &positions {
                let user = block.members[p];
                for e in warm_first..warm_first + pool.warm_size {
                    own_pool_events[user].insert(e);
                }
            }
        }
    }

    // Filler: pad each user to the attendance scale with same-community
    // events outside its own pools. These carry zero participation signal
    // for the user's groups. Runs short only in single-block communities.
    let mut community_of = vec![0usize; config.n_users];
    for block in &blocks {
        for &user in &block.members {
            community_of[user] = block.community;
        }
    }
    let target_attendance = scale_m as usize;
    for user in 0..config.n_users {
        let need = target_attendance.saturating_sub(attended[user].len());
        if need == 0 {
            continue;
        }
        let candidates: Vec<usize> = community_events[community_of[user]]
            .iter()
            .copied()
            .filter(|e| !own_pool_events[user].contains(e) && !attended[user].contains(e))
            .collect();
        let take = need.min(candidates.len());
        for offset in index::sample(&mut rng, candidates.len(), take) {
            attended[user].insert(candidates[offset]);
        }
    }

    // Independent flip noise over each user's own candidate pools.
    if config.attendance_noise > 0.0 {
        for user in 0..config.n_users {
            for &e in &own_pool_events[user].clone() {
                if rng.random::<f64>() < config.attendance_noise {
                    if attended[user].contains(&e) {
                        attended[user].remove(&e);
                    } else {
                        attended[user].insert(e);
                    }
                }
            }
        }
    }

    // Subscriptions: dense within a community, sparse across.
    let mut subscriptions: Vec<(String, String)> = Vec::new();
    for a in 0..config.n_users {
        for b in 0..config.n_users {
            if a == b {
                continue;
            }
            let p = if community_of[a] == community_of[b] {
                config.intra_subscription_prob
            } else {
                config.inter_subscription_prob
            };
            if rng.random::<f64>() < p {
                subscriptions.push((user_ids[a].clone(), user_ids[b].clone()));
            }
        }
    }

    let attendance: Vec<(String, String)> = (0..config.n_users)
        .flat_map(|u| attended[u].iter().map(move |&e| (u, e)).collect::<Vec<_>>())
        .map(|(u, e)| (user_ids[u].clone(), events[e].0.clone()))
        .collect();
    let log = EventLog::new(
        user_ids.iter().cloned(),
        events.iter().cloned(),
        attendance,
        subscriptions,
    )?;

    // Ground truth.
    let mut truth = GroundTruth {
        community: BTreeMap::new(),
        ray_index: BTreeMap::new(),
        level_index: BTreeMap::new(),
        level_value: BTreeMap::new(),
        rays: rays.clone(),
        groups: BTreeMap::new(),
    };
    for block in &blocks {
        for (pos, &user) in block.members.iter().enumerate() {
            let id = &user_ids[user];
            truth.community.insert(id.clone(), block.community);
            truth.ray_index.insert(id.clone(), block.ray);
            truth.level_index.insert(id.clone(), block.band);
            truth
                .level_value
                .insert(id.clone(), config.influence_levels[block.band]);
            let coords = block.coords(pos);
            let mates = |kind: usize| -> BTreeSet<String> {
                block
                    .group_positions(kind, coords[kind])
                    .iter()
                    .filter(|&&p| p != pos)
                    .map(|&p| user_ids[block.members[p]].clone())
                    .collect()
            };
            truth.groups.insert(
                id.clone(),
                PlantedGroups { sc: mates(0), pc: mates(1), hc: mates(2) },
            );
        }
    }
    Ok((log, truth))
}
