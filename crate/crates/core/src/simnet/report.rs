//! Run reports: the deterministic, comparable record of one simulation.
//! The text rendering and the JSON summary are both byte-stable functions
//! of the report, which itself is a pure function of (config, seed).

use serde::Serialize;

use crate::params::Height;

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub blocks_produced: u64,
    pub messages_delivered: u64,
    pub transactions_injected: u64,
    /// Hash chain over every simulation event, hex-encoded.
    pub event_digest: String,
    pub miners: Vec<MinerReport>,
    pub observer: ObserverReport,
    pub expectations: Vec<ExpectationResult>,
    /// True iff every expectation held.
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct MinerReport {
    pub id: String,
    pub cutoff: Height,
    pub weight: u64,
    pub blocks_produced: u64,
    pub h0_length: u64,
    /// Ledger-state commitment over every height this miner tracks.
    pub state_digest: String,
    pub heights: Vec<HeightReport>,
    pub fork_switches: u64,
    pub max_fork_depth: u64,
    pub lapse_adoptions: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct HeightReport {
    pub height: Height,
    /// Accepted transaction sections on this height's chain.
    pub chain_length: u64,
    /// Deepest single in-chain unwind this height ever saw.
    pub max_unwind: u64,
    /// Total coin value resident at this height at run end.
    pub supply: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct ObserverReport {
    pub h0_length: u64,
    pub state_digest: String,
    pub heights: Vec<HeightReport>,
    pub visible_supply: u64,
    pub settled_supply: u64,
    pub premined: u64,
    pub coinbase_created: u64,
    pub claims_created_value: u64,
    pub fees_collected: u64,
    pub movedown_destroyed: u64,
    pub exited_value: u64,
    pub accepted_sections: u64,
    pub weak_rejections: u64,
    pub strong_rejections: u64,
    pub claims_settled: u64,
    pub claims_live_unsettled: u64,
    pub claims_reversed: u64,
    pub lapse_adoptions: u64,
    /// Blocks stored off the final main chain (lost races, partitions).
    pub orphaned_blocks: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct ExpectationResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl RunReport {
    /// Machine-readable summary; key order fixed by field order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Human-readable rendering; byte-stable for identical reports.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(&mut out, format!("scenario {} (seed {})", self.scenario, self.seed));
        push(
            &mut out,
            format!(
                "produced {} blocks, delivered {} messages, injected {} transactions",
                self.blocks_produced, self.messages_delivered, self.transactions_injected
            ),
        );
        push(&mut out, format!("event digest {}", self.event_digest));
        push(&mut out, String::new());

        for m in &self.miners {
            push(
                &mut out,
                format!(
                    "miner {} (cutoff {}, weight {}): produced {}, height-0 length {}",
                    m.id, m.cutoff, m.weight, m.blocks_produced, m.h0_length
                ),
            );
            push(
                &mut out,
                format!(
                    "  fork switches {}, max fork depth {}, lapse adoptions {}",
                    m.fork_switches, m.max_fork_depth, m.lapse_adoptions
                ),
            );
            for h in &m.heights {
                push(
                    &mut out,
                    format!(
                        "  height {}: chain {}, max unwind {}, supply {}",
                        h.height, h.chain_length, h.max_unwind, h.supply
                    ),
                );
            }
            push(&mut out, format!("  state digest {}", m.state_digest));
        }
        push(&mut out, String::new());

        let o = &self.observer;
        push(&mut out, format!("observer: height-0 length {}", o.h0_length));
        for h in &o.heights {
            push(
                &mut out,
                format!(
                    "  height {}: chain {}, max unwind {}, supply {}",
                    h.height, h.chain_length, h.max_unwind, h.supply
                ),
            );
        }
        push(
            &mut out,
            format!("  supply: visible {}, settled {}", o.visible_supply, o.settled_supply),
        );
        push(
            &mut out,
            format!(
                "  value flow: premine {}, coinbase {}, claims {}, fees {}, destroyed {}, exited {}",
                o.premined,
                o.coinbase_created,
                o.claims_created_value,
                o.fees_collected,
                o.movedown_destroyed,
                o.exited_value
            ),
        );
        push(
            &mut out,
            format!(
                "  verdicts: {} accepted, {} weak rejections, {} strong rejections",
                o.accepted_sections, o.weak_rejections, o.strong_rejections
            ),
        );
        push(
            &mut out,
            format!(
                "  claims: {} settled, {} live unsettled, {} reversed; lapse adoptions {}",
                o.claims_settled, o.claims_live_unsettled, o.claims_reversed, o.lapse_adoptions
            ),
        );
        push(&mut out, format!("  orphaned blocks {}", o.orphaned_blocks));
        push(&mut out, format!("  state digest {}", o.state_digest));
        push(&mut out, String::new());

        for e in &self.expectations {
            push(
                &mut out,
                format!("expect {}: {} ({})", e.name, if e.passed { "ok" } else { "FAILED" }, e.detail),
            );
        }
        push(&mut out, format!("result: {}", if self.ok { "ok" } else { "FAILED" }));
        out
    }
}
