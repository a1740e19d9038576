//! Scenario configuration: a declarative, human-readable description of a
//! simulated network — miners with cutoffs, weights and behaviors, message
//! delays and partitions, premined coins, timed transaction injections,
//! mid-run cutoff changes, and end-of-run expectations.

use serde::Deserialize;

use crate::miner::Behavior;
use crate::params::{Height, Params};

/// Complete description of one simulation run. Everything the engine does is
/// a pure function of this structure, so identical configs (including the
/// seed) replay identically.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Number of blocks produced (one per tick).
    pub duration: u64,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub network: NetworkConfig,
    pub miners: Vec<MinerSpec>,
    #[serde(default)]
    pub premine: Vec<PremineSpec>,
    #[serde(default)]
    pub inject: Vec<InjectSpec>,
    #[serde(default)]
    pub cutoff_changes: Vec<CutoffChange>,
    #[serde(default)]
    pub expect: Expectations,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Inclusive bounds on per-message delivery delay, in ticks (minimum 1:
    /// a block is never seen by peers within its production tick).
    pub min_delay: u64,
    pub max_delay: u64,
    pub partitions: Vec<Partition>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { min_delay: 1, max_delay: 1, partitions: Vec::new() }
    }
}

/// During ticks `from..=to`, messages may only flow between miners of the
/// same group. Miners not listed in any group form an implicit final group.
/// Held messages deliver after healing.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub from: u64,
    pub to: u64,
    pub groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinerSpec {
    pub id: String,
    pub cutoff: Height,
    pub weight: u64,
    #[serde(default)]
    pub behavior: BehaviorSpec,
}

/// Serializable mirror of [`crate::miner::Behavior`].
#[derive(Debug, Clone, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorSpec {
    #[default]
    Honest,
    FalseClaimer {
        start: u64,
        dest_height: Height,
        offset_log2: u32,
        amount: u64,
        sustain: u64,
    },
    OverClaimer {
        at: u64,
        source_height: Height,
        offset_log2: u32,
        move_amount: u64,
    },
    InvalidUpper {
        above: Height,
    },
}

impl BehaviorSpec {
    pub fn to_behavior(&self) -> Behavior {
        match *self {
            BehaviorSpec::Honest => Behavior::Honest,
            BehaviorSpec::FalseClaimer { start, dest_height, offset_log2, amount, sustain } => {
                Behavior::FalseClaimer { start, dest_height, offset_log2, amount, sustain }
            }
            BehaviorSpec::OverClaimer { at, source_height, offset_log2, move_amount } => {
                Behavior::OverClaimer { at, source_height, offset_log2, move_amount }
            }
            BehaviorSpec::InvalidUpper { above } => Behavior::InvalidUpper { above },
        }
    }

    pub fn is_honest(&self) -> bool {
        *self == BehaviorSpec::Honest
    }
}

/// A coin present at genesis. `owner` is a key label; the address is static
/// at `height` unless a schedule is given.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PremineSpec {
    pub owner: String,
    pub height: Height,
    pub amount: u64,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
}

/// Residence schedule of an address: locked at the base height through
/// `created_at + lock` blocks, then stepping one height up every `step`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub lock: u64,
    pub step: u64,
    pub created_at: u64,
}

/// One user transaction handed to eligible miners' mempools at `tick`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectSpec {
    pub tick: u64,
    /// Key label that owns (and signs for) the spent coin.
    pub signer: String,
    pub source: SourceSpec,
    /// Height whose ledger holds the source coin (the transaction's height).
    pub height: Height,
    #[serde(default)]
    pub kind: KindSpec,
    pub outputs: Vec<OutputSpec>,
}

/// Which coin an injection spends. All forms resolve deterministically at
/// config time: premine outpoints are derivable from the premine list, and
/// txids of earlier injections are known once those are built.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// Index into the premine list.
    Premine(usize),
    /// `[injection index, output index]`: a previous injection's output.
    Output([usize; 2]),
    /// `[injection index, output index]`: the claim coin mirroring a
    /// previous move-down injection's output.
    ClaimOf([usize; 2]),
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KindSpec {
    #[default]
    SameHeight,
    MoveUp {
        target: Height,
    },
    MoveDown {
        offset_log2: u32,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub to: String,
    pub height: Height,
    pub amount: u64,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffChange {
    pub tick: u64,
    pub miner: String,
    pub new_cutoff: Height,
}

/// End-of-run checks the engine evaluates into the report. Agreement checks
/// default on; quantitative checks run only when set.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    /// All miners end on the same height-0 state.
    pub h0_agreement: bool,
    /// Every miner pair agrees on ledgers up to their shared cutoff.
    pub shared_height_agreement: bool,
    /// Exact final visible supply on the full observer.
    pub final_supply: Option<u64>,
    /// Minimum accepted height-0 lineage length on the observer.
    pub min_h0_length: Option<u64>,
    /// Whether the observer must (true) or must not (false) have recorded
    /// at least one strong rejection.
    pub strong_rejections: Option<bool>,
}

impl Default for Expectations {
    fn default() -> Self {
        Expectations {
            h0_agreement: true,
            shared_height_agreement: true,
            final_supply: None,
            min_h0_length: None,
            strong_rejections: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, String> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| format!("invalid config: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    /// Structural sanity of the whole scenario; every error names the field.
    pub fn validate(&self) -> Result<(), String> {
        let err = |what: &str| Err(format!("invalid config: {what}"));
        if self.name.is_empty() {
            return err("name: must not be empty");
        }
        if self.duration < 1 {
            return err("duration: must be at least 1");
        }
        self.params.validate().map_err(|e| format!("invalid config: params: {e}"))?;
        if self.miners.is_empty() {
            return err("miners: at least one miner required");
        }
        if !self.miners.iter().any(|m| m.behavior.is_honest()) {
            return err("miners: at least one honest miner required");
        }
        let mut ids = std::collections::BTreeSet::new();
        for m in &self.miners {
            if m.id.is_empty() {
                return err("miners.id: must not be empty");
            }
            if !ids.insert(&m.id) {
                return Err(format!("invalid config: miners.id: duplicate \"{}\"", m.id));
            }
            if m.weight == 0 {
                return Err(format!("invalid config: miners.weight: zero for \"{}\"", m.id));
            }
            if m.cutoff > self.params.max_height {
                return Err(format!(
                    "invalid config: miners.cutoff: {} above max_height for \"{}\"",
                    m.cutoff, m.id
                ));
            }
        }
        if self.network.min_delay < 1 {
            return err("network.min_delay: must be at least 1");
        }
        if self.network.max_delay < self.network.min_delay {
            return err("network.max_delay: below min_delay");
        }
        for (i, p) in self.network.partitions.iter().enumerate() {
            if p.to < p.from {
                return Err(format!("invalid config: network.partitions[{i}]: to < from"));
            }
            let mut seen = std::collections::BTreeSet::new();
            for g in &p.groups {
                for id in g {
                    if !ids.contains(id) {
                        return Err(format!(
                            "invalid config: network.partitions[{i}]: unknown miner \"{id}\""
                        ));
                    }
                    if !seen.insert(id) {
                        return Err(format!(
                            "invalid config: network.partitions[{i}]: miner \"{id}\" in two groups"
                        ));
                    }
                }
            }
        }
        for (i, p) in self.premine.iter().enumerate() {
            if p.height > self.params.max_height {
                return Err(format!("invalid config: premine[{i}].height: above max_height"));
            }
            if p.amount == 0 {
                return Err(format!("invalid config: premine[{i}].amount: zero"));
            }
            if let Some(s) = &p.schedule {
                if s.step == 0 {
                    return Err(format!("invalid config: premine[{i}].schedule.step: zero"));
                }
            }
        }
        for (i, inj) in self.inject.iter().enumerate() {
            if inj.height > self.params.max_height {
                return Err(format!("invalid config: inject[{i}].height: above max_height"));
            }
            match inj.source {
                SourceSpec::Premine(p) if p >= self.premine.len() => {
                    return Err(format!("invalid config: inject[{i}].source: premine index {p}"));
                }
                SourceSpec::Output([j, _]) | SourceSpec::ClaimOf([j, _]) if j >= i => {
                    return Err(format!(
                        "invalid config: inject[{i}].source: must reference an earlier injection"
                    ));
                }
                _ => {}
            }
            match inj.kind {
                KindSpec::MoveUp { target } => {
                    if target <= inj.height || target > self.params.max_height {
                        return Err(format!("invalid config: inject[{i}].kind: move-up target"));
                    }
                }
                KindSpec::MoveDown { offset_log2 } => {
                    let offset = 1u64.checked_shl(offset_log2).unwrap_or(u64::MAX);
                    if offset > u64::from(inj.height) {
                        return Err(format!("invalid config: inject[{i}].kind: move-down offset"));
                    }
                }
                KindSpec::SameHeight => {}
            }
            if inj.outputs.iter().any(|o| o.height > self.params.max_height) {
                return Err(format!("invalid config: inject[{i}].outputs: height above maximum"));
            }
        }
        for (i, c) in self.cutoff_changes.iter().enumerate() {
            if !ids.contains(&c.miner) {
                return Err(format!(
                    "invalid config: cutoff_changes[{i}].miner: unknown \"{}\"",
                    c.miner
                ));
            }
            if c.new_cutoff > self.params.max_height {
                return Err(format!(
                    "invalid config: cutoff_changes[{i}].new_cutoff: above max_height"
                ));
            }
        }
        Ok(())
    }
}
