//! Trajectory buffer: collection under a behavior policy, movement
//! relabeling, and JSONL persistence.
//!
//! File layout: one `#META {...}` header line followed by one JSON record
//! per line, `{"episode":..,"t":..,"state":[..],"prev_action":[..],"action":[..]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitchen::{Command, KitchenLayout, KitchenState, MacroAction};
use crate::policy::{Policy, PolicySpec};
use crate::schema::{ActionVector, FeatureSchema, StateVector};
use crate::seed::derive_seed;

const META_PREFIX: &str = "#META ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepRecord {
    pub episode: usize,
    pub t: usize,
    pub state: StateVector,
    pub prev_action: ActionVector,
    pub action: ActionVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferMeta {
    /// Total number of records.
    #[serde(rename = "N")]
    pub n: usize,
    /// Horizon of each episode.
    #[serde(rename = "T")]
    pub horizon: usize,
    pub episodes: usize,
    /// Seats whose trajectories were recorded; each seat of each simulated
    /// episode becomes its own record episode.
    pub seats: Vec<usize>,
    pub policy_name: String,
    pub seed: u64,
    pub layout: String,
    pub schema_fingerprint: String,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Leading non-macro steps removed by relabeling.
    #[serde(default)]
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub meta: BufferMeta,
    pub records: Vec<TimestepRecord>,
}

/// One step of an externally logged trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawAction {
    HighLevel(MacroAction),
    /// Navigation, waiting, or any other step without a macro effect.
    Movement(String),
}

impl RawAction {
    pub fn parse(name: &str) -> RawAction {
        name.parse()
            .map(RawAction::HighLevel)
            .unwrap_or_else(|_| RawAction::Movement(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relabeled {
    pub records: Vec<TimestepRecord>,
    /// Leading movement steps with no preceding high-level action.
    pub dropped: usize,
}

/// Replace every movement step by the most recent preceding high-level
/// action. States are kept as observed. Steps before the first high-level
/// action have nothing to inherit and are dropped.
pub fn relabel_movement(
    episode: usize,
    raw: &[(StateVector, RawAction)],
    schema: &FeatureSchema,
) -> Result<Relabeled> {
    let mut records = Vec::with_capacity(raw.len());
    let mut current: Option<MacroAction> = None;
    let mut prev = schema.no_previous_action();
    let mut dropped = 0;
    for (t, (state, action)) in raw.iter().enumerate() {
        schema.check_state(state)?;
        if let RawAction::HighLevel(a) = action {
            current = Some(*a);
        }
        let Some(label) = current else {
            dropped += 1;
            continue;
        };
        let action = schema.encode_action(label);
        records.push(TimestepRecord {
            episode,
            t,
            state: state.clone(),
            prev_action: std::mem::replace(&mut prev, action.clone()),
            action,
        });
    }
    Ok(Relabeled { records, dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub policy: PolicySpec,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Seats whose experience enters the buffer. Both seats by default.
    #[serde(default = "both_seats")]
    pub seats: Vec<usize>,
}

fn both_seats() -> Vec<usize> {
    vec![0, 1]
}

impl CollectConfig {
    pub fn new(policy: PolicySpec, episodes: usize, horizon: usize, seed: u64) -> Self {
        CollectConfig {
            policy,
            episodes,
            horizon,
            seed,
            seats: both_seats(),
        }
    }
}

/// Run `episodes` self-play episodes of the behavior policy and record the
/// relabeled trajectories of the configured seats.
pub fn collect_buffer(layout: &KitchenLayout, schema: &FeatureSchema, config: &CollectConfig) -> Result<Buffer> {
    if config.horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be positive".into()));
    }
    if config.seats.is_empty() || config.seats.iter().any(|&s| s > 1) {
        return Err(Error::InvalidConfig(format!("bad seats {:?}", config.seats)));
    }
    config.policy.validate()?;
    layout.validate()?;
    if layout.num_pots != schema.num_pots() {
        return Err(Error::DimensionMismatch {
            expected: schema.num_pots(),
            actual: layout.num_pots,
            context: "layout pots vs schema",
        });
    }

    let mut records = Vec::with_capacity(config.episodes * config.horizon * config.seats.len());
    let mut dropped = 0;
    for episode in 0..config.episodes {
        let trajectories = run_collection_episode(layout, schema, config, episode)
            .map_err(|e| Error::EpisodeFailed {
                episode,
                reason: e.to_string(),
            })?;
        for (k, raw) in trajectories.iter().enumerate() {
            let out = relabel_movement(episode * config.seats.len() + k, raw, schema)?;
            dropped += out.dropped;
            records.extend(out.records);
        }
    }

    Ok(Buffer {
        meta: BufferMeta {
            n: records.len(),
            horizon: config.horizon,
            episodes: config.episodes,
            seats: config.seats.clone(),
            policy_name: config.policy.name(),
            seed: config.seed,
            layout: layout.name.clone(),
            schema_fingerprint: schema.fingerprint(),
            state_dim: schema.state_dim(),
            action_dim: schema.action_dim(),
            dropped,
        },
        records,
    })
}

fn run_collection_episode(
    layout: &KitchenLayout,
    schema: &FeatureSchema,
    config: &CollectConfig,
    episode: usize,
) -> Result<Vec<Vec<(StateVector, RawAction)>>> {
    let seed = |seat| derive_seed(config.seed, episode as u64, seat);
    let mut policies = [Policy::new(config.policy, seed(0))?, Policy::new(config.policy, seed(1))?];

    let mut state = KitchenState::reset(layout)?;
    let mut raw: Vec<Vec<(StateVector, RawAction)>> = vec![Vec::with_capacity(config.horizon); config.seats.len()];
    for _ in 0..config.horizon {
        let chosen = [0, 1].map(|seat| policies[seat].act(&state, seat, layout));
        let commands = chosen.map(|c| c.map_or(Command::Idle, Command::Act));
        let outcome = state.step(&commands, layout);
        for (k, &seat) in config.seats.iter().enumerate() {
            let observed = schema.encode_state(&state, seat)?;
            // Invalid attempts and idle steps carry no macro effect and are
            // treated like movement.
            let action = match chosen[seat] {
                Some(a) if outcome.executed[seat] => RawAction::HighLevel(a),
                Some(a) => RawAction::Movement(format!("failed:{a}")),
                None => RawAction::Movement("idle".into()),
            };
            raw[k].push((observed, action));
        }
        state = outcome.next_state;
    }
    Ok(raw)
}

impl Buffer {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn validate_against(&self, schema: &FeatureSchema) -> Result<()> {
        if self.meta.schema_fingerprint != schema.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: schema.fingerprint(),
                found: self.meta.schema_fingerprint.clone(),
            });
        }
        if self.meta.state_dim != schema.state_dim() || self.meta.action_dim != schema.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: schema.parent_dim(),
                actual: self.meta.state_dim + self.meta.action_dim,
                context: "buffer vs schema",
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(META_PREFIX.as_bytes()).map_err(io)?;
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n").map_err(io)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };

        let mut meta: Option<BufferMeta> = None;
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix(META_PREFIX) {
                if lineno != 1 {
                    return Err(parse_err(lineno, "meta header must be the first line".into()));
                }
                meta = Some(serde_json::from_str(rest).map_err(|e| parse_err(lineno, e.to_string()))?);
                continue;
            }
            let Some(m) = meta.as_ref() else {
                return Err(parse_err(lineno, "missing #META header".into()));
            };
            let record: TimestepRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
            if record.state.len() != m.state_dim
                || record.prev_action.bits.len() != m.action_dim
                || record.action.bits.len() != m.action_dim
            {
                return Err(parse_err(lineno, "record dimensions disagree with meta".into()));
            }
            records.push(record);
        }
        let meta = meta.ok_or_else(|| parse_err(1, "empty buffer file".into()))?;
        if records.len() != meta.n {
            return Err(parse_err(
                meta.n + 2,
                format!("expected {} records, found {}", meta.n, records.len()),
            ));
        }
        Ok(Buffer { meta, records })
    }
}
