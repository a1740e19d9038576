//! Protocol-wide tunables shared by validation, mining and simulation.

use serde::{Deserialize, Serialize};

/// Height of a sub-block inside a block, and of an address/ledger.
/// Height 0 is the smallest (most widely validated) level.
pub type Height = u32;

/// Consensus parameters. Every observer participating in one network must
/// agree on these; they are embedded in chain dumps so a dump is replayable
/// without out-of-band context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Byte budget of the height-0 sub-block. Budgets double per height
    /// above 1 (heights 0 and 1 share the base budget).
    pub base_size: u64,
    /// Base confirmation count for maturity locks. A coin minted or claimed
    /// at height y matures after `(y + 1) * base_conf` confirmations at that
    /// height.
    pub base_conf: u64,
    /// Highest sub-block height any block may carry.
    pub max_height: Height,
    /// Newly minted coins per block, paid to the coinbase address along with
    /// collected fees. No halving schedule.
    pub subsidy: u64,
    /// Simulated proof-of-work difficulty: required number of leading zero
    /// bits of the header hash. Kept tiny so nonce grinding is cheap; block
    /// timing is driven by the simulator schedule, not by hashing.
    pub difficulty_bits: u32,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            base_size: 1024,
            base_conf: 100,
            max_height: 16,
            subsidy: 50,
            difficulty_bits: 4,
        }
    }
}

impl Params {
    /// Sanity-check a parameter set before using it for a run.
    pub fn validate(&self) -> Result<(), String> {
        if self.base_size == 0 {
            return Err("base_size must be positive".into());
        }
        if self.base_conf == 0 {
            return Err("base_conf must be positive".into());
        }
        if self.max_height > 30 {
            return Err("max_height above 30 overflows size budgets".into());
        }
        if self.difficulty_bits > 24 {
            return Err("difficulty_bits above 24 makes grinding pathological".into());
        }
        Ok(())
    }
}
