//! Simulation configuration and its `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! seed = 42
//! t = 1
//! mode = mw            # sw | mw
//! pow = hash           # hash | shamir
//! writers = 2
//! readers = 3
//! ops = 20             # operations per correct client
//! value_size = 64
//! delay = uniform:1,10 # or pareto:20,4
//! think = 5            # max idle ticks between a client's operations
//! fault = s2:corrupt_vec
//! fault = reader:flood_writebacks
//! ```
//!
//! Fault directives:
//!
//! * `s<i>:crash@<tick>`: server `i` crashes at the given tick.
//! * `s<i>:<behavior>`: server `i` is Byzantine (`stale_lc`,
//!   `fabricate_candidate`, `corrupt_vec`, `revert_state`, `mute`,
//!   `equivocate_fragments`).
//! * `w<i>:crash@<tick>` or `w<i>:crash_after_store[@<op>]`: writer `i`
//!   crashes at a tick, or right after the store round of its `op`-th write
//!   (default 1).
//! * `reader:<behavior>`: adds one Byzantine reader (`garbage_filter_sets`,
//!   `replayed_candidates`, `flood_writebacks`).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::types::{Mode, Mutation, Params, PowKind, ServerId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DelayModel {
    /// Uniform integer delay in `[lo, hi]` ticks.
    Uniform { lo: u64, hi: u64 },
    /// Pareto delay with the given mean and standard deviation, in ticks.
    Pareto { mean: f64, jitter: f64 },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Uniform { lo: 1, hi: 10 }
    }
}

impl fmt::Display for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayModel::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            DelayModel::Pareto { mean, jitter } => write!(f, "pareto:{mean},{jitter}"),
        }
    }
}

impl FromStr for DelayModel {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::Value { key: "delay".into(), value: s.into() };
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let (a, b) = args.split_once(',').ok_or_else(bad)?;
        match kind.trim() {
            "uniform" => {
                let lo: u64 = a.trim().parse().map_err(|_| bad())?;
                let hi: u64 = b.trim().parse().map_err(|_| bad())?;
                if lo == 0 || hi < lo {
                    return Err(bad());
                }
                Ok(DelayModel::Uniform { lo, hi })
            }
            "pareto" => {
                let mean: f64 = a.trim().parse().map_err(|_| bad())?;
                let jitter: f64 = b.trim().parse().map_err(|_| bad())?;
                if !(mean > 0.0 && jitter > 0.0 && mean.is_finite() && jitter.is_finite()) {
                    return Err(bad());
                }
                Ok(DelayModel::Pareto { mean, jitter })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerBehavior {
    StaleLc,
    FabricateCandidate,
    CorruptVec,
    RevertState,
    Mute,
    EquivocateFragments,
}

impl ServerBehavior {
    pub const ALL: [ServerBehavior; 6] = [
        ServerBehavior::StaleLc,
        ServerBehavior::FabricateCandidate,
        ServerBehavior::CorruptVec,
        ServerBehavior::RevertState,
        ServerBehavior::Mute,
        ServerBehavior::EquivocateFragments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ServerBehavior::StaleLc => "stale_lc",
            ServerBehavior::FabricateCandidate => "fabricate_candidate",
            ServerBehavior::CorruptVec => "corrupt_vec",
            ServerBehavior::RevertState => "revert_state",
            ServerBehavior::Mute => "mute",
            ServerBehavior::EquivocateFragments => "equivocate_fragments",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReaderBehavior {
    GarbageFilterSets,
    ReplayedCandidates,
    FloodWritebacks,
}

impl ReaderBehavior {
    pub const ALL: [ReaderBehavior; 3] = [
        ReaderBehavior::GarbageFilterSets,
        ReaderBehavior::ReplayedCandidates,
        ReaderBehavior::FloodWritebacks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReaderBehavior::GarbageFilterSets => "garbage_filter_sets",
            ReaderBehavior::ReplayedCandidates => "replayed_candidates",
            ReaderBehavior::FloodWritebacks => "flood_writebacks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultDirective {
    CrashServer { server: ServerId, at: u64 },
    ByzServer { server: ServerId, behavior: ServerBehavior },
    CrashWriter { writer: u64, at: u64 },
    CrashAfterStore { writer: u64, op: usize },
    ByzReader { behavior: ReaderBehavior },
}

impl FaultDirective {
    pub fn faulty_server(&self) -> Option<ServerId> {
        match self {
            FaultDirective::CrashServer { server, .. } | FaultDirective::ByzServer { server, .. } => {
                Some(*server)
            }
            _ => None,
        }
    }
}

impl fmt::Display for FaultDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultDirective::CrashServer { server, at } => write!(f, "s{server}:crash@{at}"),
            FaultDirective::ByzServer { server, behavior } => write!(f, "s{server}:{}", behavior.name()),
            FaultDirective::CrashWriter { writer, at } => write!(f, "w{writer}:crash@{at}"),
            FaultDirective::CrashAfterStore { writer, op } => write!(f, "w{writer}:crash_after_store@{op}"),
            FaultDirective::ByzReader { behavior } => write!(f, "reader:{}", behavior.name()),
        }
    }
}

impl FromStr for FaultDirective {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::Value { key: "fault".into(), value: s.into() };
        let (target, what) = s.trim().split_once(':').ok_or_else(bad)?;
        let (action, arg) = match what.split_once('@') {
            Some((a, n)) => (a, Some(n.parse::<u64>().map_err(|_| bad())?)),
            None => (what, None),
        };
        if target == "reader" {
            let behavior = ReaderBehavior::ALL
                .into_iter()
                .find(|b| b.name() == action)
                .ok_or_else(bad)?;
            return if arg.is_none() { Ok(FaultDirective::ByzReader { behavior }) } else { Err(bad()) };
        }
        let id: u64 = target.get(1..).and_then(|n| n.parse().ok()).ok_or_else(bad)?;
        match (target.as_bytes()[0], action, arg) {
            (b's', "crash", Some(at)) => Ok(FaultDirective::CrashServer { server: id as usize, at }),
            (b's', name, None) => ServerBehavior::ALL
                .into_iter()
                .find(|b| b.name() == name)
                .map(|behavior| FaultDirective::ByzServer { server: id as usize, behavior })
                .ok_or_else(bad),
            (b'w', "crash", Some(at)) => Ok(FaultDirective::CrashWriter { writer: id, at }),
            (b'w', "crash_after_store", op) => Ok(FaultDirective::CrashAfterStore {
                writer: id,
                op: op.unwrap_or(1).max(1) as usize,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

/// Everything that determines a run. Same config, same event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub t: usize,
    pub mode: Mode,
    pub pow: PowKind,
    pub writers: usize,
    pub readers: usize,
    pub ops: usize,
    pub value_size: usize,
    pub delay: DelayModel,
    pub think: u64,
    pub faults: Vec<FaultDirective>,
    /// Messages a Byzantine reader may send per tick.
    pub byz_rate: usize,
    /// Attack rounds per Byzantine reader.
    pub byz_actions: usize,
    /// Candidates per flooding FILTER.
    pub flood_size: usize,
    /// Adversary observes traffic between correct processes.
    pub tap: bool,
    /// Lets the tap see Shamir shares sent to correct servers. Off in every
    /// realistic configuration; exists to show the channel assumption matters.
    #[serde(default)]
    pub leak_shares: bool,
    pub max_ticks: u64,
    #[serde(default)]
    pub mutation: Option<Mutation>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            t: 1,
            mode: Mode::Sw,
            pow: PowKind::Hash,
            writers: 1,
            readers: 2,
            ops: 10,
            value_size: 32,
            delay: DelayModel::default(),
            think: 5,
            faults: Vec::new(),
            byz_rate: 8,
            byz_actions: 8,
            flood_size: 16,
            tap: true,
            leak_shares: false,
            max_ticks: 1_000_000,
            mutation: None,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Value { key: key.into(), value: v.into() }),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::Value { key: key.into(), value: v.into() })
}

impl SimConfig {
    pub fn params(&self) -> Params {
        Params::new(self.t, self.mode, self.pow)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (key, v) = (key.trim(), value.trim());
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "t" => self.t = parse_num(key, v)?,
            "mode" => {
                self.mode = match v {
                    "sw" => Mode::Sw,
                    "mw" => Mode::Mw,
                    _ => return Err(ConfigError::Value { key: key.into(), value: v.into() }),
                }
            }
            "pow" => {
                self.pow = match v {
                    "hash" => PowKind::Hash,
                    "shamir" => PowKind::Shamir,
                    _ => return Err(ConfigError::Value { key: key.into(), value: v.into() }),
                }
            }
            "writers" => self.writers = parse_num(key, v)?,
            "readers" => self.readers = parse_num(key, v)?,
            "ops" => self.ops = parse_num(key, v)?,
            "value_size" => self.value_size = parse_num(key, v)?,
            "delay" => self.delay = v.parse()?,
            "think" => self.think = parse_num(key, v)?,
            "fault" => self.faults.push(v.parse()?),
            "byz_rate" => self.byz_rate = parse_num(key, v)?,
            "byz_actions" => self.byz_actions = parse_num(key, v)?,
            "flood_size" => self.flood_size = parse_num(key, v)?,
            "tap" => self.tap = parse_bool(key, v)?,
            "leak_shares" => self.leak_shares = parse_bool(key, v)?,
            "max_ticks" => self.max_ticks = parse_num(key, v)?,
            "mutation" => {
                self.mutation = Some(
                    serde_json::from_value(serde_json::Value::String(v.into()))
                        .map_err(|_| ConfigError::Value { key: key.into(), value: v.into() })?,
                )
            }
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SimConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the same text format `parse` reads.
    pub fn to_text(&self) -> String {
        let mode = match self.mode {
            Mode::Sw => "sw",
            Mode::Mw => "mw",
        };
        let pow = match self.pow {
            PowKind::Hash => "hash",
            PowKind::Shamir => "shamir",
        };
        let mut out = format!(
            "seed = {}\nt = {}\nmode = {mode}\npow = {pow}\nwriters = {}\nreaders = {}\nops = {}\n\
             value_size = {}\ndelay = {}\nthink = {}\nbyz_rate = {}\nbyz_actions = {}\n\
             flood_size = {}\ntap = {}\nmax_ticks = {}\n",
            self.seed,
            self.t,
            self.writers,
            self.readers,
            self.ops,
            self.value_size,
            self.delay,
            self.think,
            self.byz_rate,
            self.byz_actions,
            self.flood_size,
            self.tap,
            self.max_ticks,
        );
        if self.leak_shares {
            out.push_str("leak_shares = true\n");
        }
        for f in &self.faults {
            out.push_str(&format!("fault = {f}\n"));
        }
        if let Some(m) = self.mutation {
            let name = serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from));
            out.push_str(&format!("mutation = {}\n", name.unwrap_or_default()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.t == 0 {
            return invalid("t must be at least 1".into());
        }
        let s = 3 * self.t + 1;
        if s > crate::erasure::MAX_SHARDS {
            return invalid(format!("t = {} needs more than {} servers", self.t, crate::erasure::MAX_SHARDS));
        }
        if self.writers == 0 && self.ops > 0 && self.readers == 0 {
            return invalid("no clients".into());
        }
        if self.mode == Mode::Sw && self.writers > 1 {
            return invalid("single-writer mode allows one writer".into());
        }
        if self.value_size == 0 {
            return invalid("value_size must be positive".into());
        }
        let mut faulty = BTreeSet::new();
        for f in &self.faults {
            match f {
                FaultDirective::CrashServer { server, .. } | FaultDirective::ByzServer { server, .. } => {
                    if *server == 0 || *server > s {
                        return invalid(format!("no server {server}"));
                    }
                    if !faulty.insert(*server) {
                        return invalid(format!("server {server} has two fault directives"));
                    }
                }
                FaultDirective::CrashWriter { writer, .. } | FaultDirective::CrashAfterStore { writer, .. } => {
                    if *writer == 0 || *writer as usize > self.writers {
                        return invalid(format!("no writer {writer}"));
                    }
                }
                FaultDirective::ByzReader { .. } => {}
            }
        }
        if faulty.len() > self.t {
            return invalid(format!("{} faulty servers exceed t = {}", faulty.len(), self.t));
        }
        Ok(())
    }

    /// Whether the fault plan corrupts MAC vectors (directly, or through
    /// Byzantine readers writing back mangled candidates).
    pub fn corrupts_vectors(&self) -> bool {
        self.mode == Mode::Mw
            && self.faults.iter().any(|f| {
                matches!(
                    f,
                    FaultDirective::ByzServer { behavior: ServerBehavior::CorruptVec, .. }
                        | FaultDirective::ByzReader { behavior: ReaderBehavior::GarbageFilterSets, .. }
                )
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let text = "seed = 9\nt = 2\nmode = mw\npow = shamir\nwriters = 3\nreaders = 5\nops = 20\n\
                    delay = pareto:20,4\nfault = s1:corrupt_vec\nfault = s4:crash@30\n\
                    fault = w2:crash_after_store@2\nfault = reader:flood_writebacks\n";
        let cfg = SimConfig::parse(text).unwrap();
        assert_eq!(cfg.t, 2);
        assert_eq!(cfg.faults.len(), 4);
        assert_eq!(cfg.delay, DelayModel::Pareto { mean: 20.0, jitter: 4.0 });
        assert_eq!(SimConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn fault_directive_grammar() {
        for s in [
            "s1:crash@5",
            "s2:stale_lc",
            "s3:fabricate_candidate",
            "s1:corrupt_vec",
            "s1:revert_state",
            "s1:mute",
            "s1:equivocate_fragments",
            "w1:crash@7",
            "w1:crash_after_store@1",
            "reader:garbage_filter_sets",
            "reader:replayed_candidates",
            "reader:flood_writebacks",
        ] {
            let f: FaultDirective = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        for s in ["s1", "x1:mute", "s1:dance", "reader:mute", "w1:mute", "s:mute", "s1:crash"] {
            assert!(s.parse::<FaultDirective>().is_err(), "{s}");
        }
    }

    #[test]
    fn rejects_more_than_t_faulty_servers() {
        let err = SimConfig::parse("t = 1\nfault = s1:mute\nfault = s2:mute\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        assert!(SimConfig::parse("t = 1\nfault = s1:mute\nfault = s1:stale_lc\n").is_err());
        assert!(SimConfig::parse("mode = sw\nwriters = 2\n").is_err());
        assert!(SimConfig::parse("bogus = 1\n").is_err());
        assert!(SimConfig::parse("seed 1\n").is_err());
        assert!(SimConfig::parse("delay = uniform:0,3\n").is_err());
    }

    #[test]
    fn hidden_mutation_key() {
        let cfg = SimConfig::parse("mutation = skip-clock-mac\n").unwrap();
        assert_eq!(cfg.mutation, Some(Mutation::SkipClockMac));
        assert_eq!(SimConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
