//! The simulation engine: a deterministic multi-miner network on a single
//! logical clock. Each tick delivers due messages, applies scheduled
//! injections and cutoff changes, then lets one weighted-random miner
//! produce a block. Blocks travel to peers as messages with bounded random
//! delays; partitions hold messages until they heal. A zero-delay observer
//! with full coverage applies every block the moment it is produced and is
//! the source of all reports and chain dumps.
//!
//! Determinism: all randomness comes from named ChaCha8 streams derived
//! from the scenario seed, all iteration is over ordered containers, and
//! every event folds into a running hash chain recorded in the report — so
//! two runs of the same config are byte-identical end to end.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::view::{ChainView, PremineAllocation, ReceiveOutcome};
use crate::consensus::{Block, Verdict};
use crate::hashtree::{hash, Digest};
use crate::ledger::{
    premine_outpoint, Address, CoinOrigin, HeightSchedule, Keypair, Outpoint, TestScheme,
    Transaction, TxInput, TxKind, TxOutput,
};
use crate::miner::{mirror_claims, MempoolError, Miner};

use super::config::{KindSpec, Partition, ScenarioConfig, ScheduleSpec, SourceSpec};
use super::dump::{ChainDump, VerdictRecord};
use super::report::{
    ExpectationResult, HeightReport, MinerReport, ObserverReport, RunReport,
};

/// Domain byte folded into the event hash chain.
const EVENT_TAG: u8 = 0x0a;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invariant violated at tick {tick}: {what}")]
    Invariant { tick: u64, what: String },
}

/// Everything one run yields: the comparable report and the replayable dump.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: RunReport,
    pub dump: ChainDump,
}

/// An independent ChaCha8 stream named within the scenario seed, so adding
/// a new consumer of randomness never perturbs existing streams.
fn stream_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let d = hash(&[b"simnet-stream", &seed.to_le_bytes(), name.as_bytes()]);
    ChaCha8Rng::from_seed(d.0)
}

/// Unbiased draw from `0..bound` by rejection sampling.
fn draw_range(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    assert!(bound > 0, "empty draw range");
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

fn outcome_str(o: ReceiveOutcome) -> &'static str {
    match o {
        ReceiveOutcome::Extended => "extended",
        ReceiveOutcome::Reorged => "reorged",
        ReceiveOutcome::SideStored => "side",
        ReceiveOutcome::Orphaned => "orphaned",
        ReceiveOutcome::Duplicate => "duplicate",
    }
}

fn hex8(d: &Digest) -> String {
    hex::encode(&d.0[..8])
}

fn schedule_of(spec: &Option<ScheduleSpec>) -> Option<HeightSchedule> {
    spec.as_ref().map(|s| HeightSchedule {
        lock_period: s.lock,
        step_period: s.step,
        created_at: s.created_at,
    })
}

/// A block in flight from one miner to another.
struct Queued {
    from: usize,
    to: usize,
    block: Block,
}

struct Engine {
    config: ScenarioConfig,
    names: Vec<String>,
    miners: Vec<Miner>,
    observer: ChainView,
    premine: Vec<PremineAllocation>,
    /// In-flight messages keyed by `(due tick, sequence number)`.
    queue: BTreeMap<(u64, u64), Queued>,
    seq: u64,
    producer_rng: ChaCha8Rng,
    delay_rng: ChaCha8Rng,
    /// Transactions built from injection specs, by injection index.
    built_txs: Vec<Option<Transaction>>,
    produced_by: Vec<u64>,
    blocks_produced: u64,
    messages_delivered: u64,
    transactions_injected: u64,
    event_digest: Digest,
    /// Claim coins the observer has ever seen, and those ever settled;
    /// together with the final ledger they classify every claim's fate.
    ever_claim_coins: BTreeSet<Outpoint>,
    ever_settled_claims: BTreeSet<Outpoint>,
    /// Set during the post-run drain: partitions are considered healed.
    draining: bool,
}

/// Execute one scenario to completion.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimOutcome, RunError> {
    let mut engine = Engine::new(config.clone())?;
    let duration = engine.config.duration;
    for t in 0..duration {
        engine.deliver_due(t)?;
        engine.inject_at(t)?;
        engine.cutoff_changes_at(t)?;
        engine.produce_at(t)?;
        engine.check_invariants(t)?;
        engine.scan_claims();
        engine.prune_mempools();
    }
    engine.drain(duration)?;
    Ok(engine.finish())
}

impl Engine {
    fn new(config: ScenarioConfig) -> Result<Engine, RunError> {
        config.validate().map_err(RunError::Config)?;
        let params = config.params.clone();

        let premine: Vec<PremineAllocation> = config
            .premine
            .iter()
            .map(|p| PremineAllocation {
                owner: Address {
                    id: Keypair::from_label(&p.owner).id,
                    base_height: p.height,
                    schedule: schedule_of(&p.schedule),
                },
                height: p.height,
                amount: p.amount,
            })
            .collect();

        let mut names = Vec::new();
        let mut miners = Vec::new();
        for spec in &config.miners {
            let keys = Keypair::from_label(&spec.id);
            let view = ChainView::new(params.clone(), Arc::new(TestScheme), spec.cutoff, &premine);
            names.push(spec.id.clone());
            miners.push(Miner::new(keys, spec.weight, spec.behavior.to_behavior(), view));
        }
        let observer =
            ChainView::new(params.clone(), Arc::new(TestScheme), params.max_height, &premine);

        let producer_rng = stream_rng(config.seed, "producer");
        let delay_rng = stream_rng(config.seed, "delay");
        let inject_count = config.inject.len();
        let miner_count = miners.len();
        Ok(Engine {
            config,
            names,
            miners,
            observer,
            premine,
            queue: BTreeMap::new(),
            seq: 0,
            producer_rng,
            delay_rng,
            built_txs: vec![None; inject_count],
            produced_by: vec![0; miner_count],
            blocks_produced: 0,
            messages_delivered: 0,
            transactions_injected: 0,
            event_digest: Digest([0u8; 32]),
            ever_claim_coins: BTreeSet::new(),
            ever_settled_claims: BTreeSet::new(),
            draining: false,
        })
    }

    fn event(&mut self, line: &str) {
        self.event_digest = hash(&[&[EVENT_TAG], &self.event_digest.0, line.as_bytes()]);
    }

    fn group_of(p: &Partition, name: &str) -> usize {
        p.groups
            .iter()
            .position(|g| g.iter().any(|m| m == name))
            .unwrap_or(usize::MAX)
    }

    /// Whether a message between these miners may flow at tick `t`.
    fn connected(&self, t: u64, a: usize, b: usize) -> bool {
        if self.draining {
            return true;
        }
        for p in &self.config.network.partitions {
            if p.from <= t && t <= p.to && Self::group_of(p, &self.names[a]) != Self::group_of(p, &self.names[b]) {
                return false;
            }
        }
        true
    }

    /// Deliver every message due by tick `t`; messages blocked by a
    /// partition are held and retried next tick.
    fn deliver_due(&mut self, t: u64) -> Result<(), RunError> {
        let due: Vec<(u64, u64)> =
            self.queue.range(..=(t, u64::MAX)).map(|(k, _)| *k).collect();
        for key in due {
            let msg = self.queue.remove(&key).expect("listed");
            if self.connected(t, msg.from, msg.to) {
                let prefix = msg.block.to_prefix(self.miners[msg.to].cutoff());
                let outcome = self.miners[msg.to].receive(prefix).map_err(|e| {
                    RunError::Invariant {
                        tick: t,
                        what: format!(
                            "miner {} rejected a delivered block: {e}",
                            self.names[msg.to]
                        ),
                    }
                })?;
                self.messages_delivered += 1;
                let line = format!(
                    "tick {t} deliver from={} to={} block={} outcome={}",
                    self.names[msg.from],
                    self.names[msg.to],
                    hex8(&msg.block.id()),
                    outcome_str(outcome)
                );
                self.event(&line);
            } else {
                let line = format!(
                    "tick {t} hold from={} to={}",
                    self.names[msg.from], self.names[msg.to]
                );
                self.event(&line);
                self.queue.insert((t + 1, key.1), msg);
            }
        }
        Ok(())
    }

    fn inject_at(&mut self, t: u64) -> Result<(), RunError> {
        let due: Vec<usize> = (0..self.config.inject.len())
            .filter(|&i| self.config.inject[i].tick == t)
            .collect();
        for i in due {
            self.build_injection(i, t)?;
        }
        Ok(())
    }

    fn build_injection(&mut self, i: usize, t: u64) -> Result<(), RunError> {
        let spec = self.config.inject[i].clone();
        let signer = Keypair::from_label(&spec.signer);

        let (outpoint, amount) = match spec.source {
            SourceSpec::Premine(p) => {
                let alloc = &self.premine[p];
                (
                    premine_outpoint(&alloc.owner, alloc.height, alloc.amount, p as u32),
                    alloc.amount,
                )
            }
            SourceSpec::Output([j, k]) => {
                let prev = self.built_txs[j].as_ref().ok_or_else(|| {
                    RunError::Config(format!(
                        "inject[{i}].source: injection {j} has not happened by tick {t}"
                    ))
                })?;
                let out = prev.outputs.get(k).ok_or_else(|| {
                    RunError::Config(format!("inject[{i}].source: injection {j} has no output {k}"))
                })?;
                (Outpoint { txid: prev.txid(), index: k as u32 }, out.amount)
            }
            SourceSpec::ClaimOf([j, k]) => {
                let prev = self.built_txs[j].as_ref().ok_or_else(|| {
                    RunError::Config(format!(
                        "inject[{i}].source: injection {j} has not happened by tick {t}"
                    ))
                })?;
                let claims = mirror_claims(prev);
                let claim = claims
                    .iter()
                    .find(|c| c.output_index == k as u32)
                    .ok_or_else(|| {
                        RunError::Config(format!(
                            "inject[{i}].source: injection {j} output {k} has no mirror claim"
                        ))
                    })?;
                (claim.coin_outpoint(), claim.amount)
            }
        };

        let kind = match spec.kind {
            KindSpec::SameHeight => TxKind::SameHeight,
            KindSpec::MoveUp { target } => TxKind::MoveUp { target },
            KindSpec::MoveDown { offset_log2 } => TxKind::MoveDown { offset_log2 },
        };
        let outputs: Vec<TxOutput> = spec
            .outputs
            .iter()
            .map(|o| TxOutput {
                address: Address {
                    id: Keypair::from_label(&o.to).id,
                    base_height: o.height,
                    schedule: schedule_of(&o.schedule),
                },
                amount: o.amount,
            })
            .collect();

        let mut tx = Transaction {
            height: spec.height,
            kind,
            inputs: vec![TxInput { outpoint, amount, signature: Vec::new() }],
            outputs,
        };
        let sig = signer.sign(&tx.txid());
        tx.inputs[0].signature = sig;
        let txid = tx.txid();

        let mut accepted = 0u32;
        for m in &mut self.miners {
            match m.submit_tx(tx.clone()) {
                Ok(()) => accepted += 1,
                Err(MempoolError::AboveCutoff { .. }) => {}
                Err(MempoolError::Malformed(e)) => {
                    return Err(RunError::Config(format!(
                        "inject[{i}]: malformed transaction: {e}"
                    )));
                }
            }
        }
        self.built_txs[i] = Some(tx);
        self.transactions_injected += 1;
        self.event(&format!("tick {t} inject idx={i} txid={} miners={accepted}", hex8(&txid)));
        Ok(())
    }

    fn cutoff_changes_at(&mut self, t: u64) -> Result<(), RunError> {
        let due: Vec<(String, crate::params::Height)> = self
            .config
            .cutoff_changes
            .iter()
            .filter(|c| c.tick == t)
            .map(|c| (c.miner.clone(), c.new_cutoff))
            .collect();
        for (miner, new_cutoff) in due {
            let idx = self.names.iter().position(|n| *n == miner).expect("validated");
            self.miners[idx]
                .view
                .adjust_cutoff(new_cutoff, Some(&self.observer))
                .map_err(|e| RunError::Invariant {
                    tick: t,
                    what: format!("cutoff change for {miner} failed: {e}"),
                })?;
            self.event(&format!("tick {t} cutoff miner={miner} new={new_cutoff}"));
        }
        Ok(())
    }

    fn produce_at(&mut self, t: u64) -> Result<(), RunError> {
        let total: u64 = self.miners.iter().map(|m| m.weight).sum();
        let draw = draw_range(&mut self.producer_rng, total);
        let mut acc = 0u64;
        let mut winner = 0usize;
        for (i, m) in self.miners.iter().enumerate() {
            acc += m.weight;
            if draw < acc {
                winner = i;
                break;
            }
        }

        let block = self.miners[winner].produce().map_err(|e| RunError::Invariant {
            tick: t,
            what: format!("miner {} failed to assemble: {e}", self.names[winner]),
        })?;
        let id = block.id();

        let own_prefix = block.to_prefix(self.miners[winner].cutoff());
        let own = self.miners[winner].receive(own_prefix).map_err(|e| RunError::Invariant {
            tick: t,
            what: format!("miner {} rejected its own block: {e}", self.names[winner]),
        })?;
        let obs_prefix = block.to_prefix(self.observer.cutoff());
        let obs = self.observer.receive_block(obs_prefix).map_err(|e| RunError::Invariant {
            tick: t,
            what: format!("observer rejected block {}: {e}", hex8(&id)),
        })?;

        self.blocks_produced += 1;
        self.produced_by[winner] += 1;
        let line = format!(
            "tick {t} produce miner={} index={} block={} self={} observer={}",
            self.names[winner],
            block.header.index,
            hex8(&id),
            outcome_str(own),
            outcome_str(obs)
        );
        self.event(&line);

        let (min_d, max_d) = (self.config.network.min_delay, self.config.network.max_delay);
        for to in 0..self.miners.len() {
            if to == winner {
                continue;
            }
            let delay = if max_d > min_d {
                min_d + draw_range(&mut self.delay_rng, max_d - min_d + 1)
            } else {
                min_d
            };
            self.seq += 1;
            self.queue
                .insert((t + delay, self.seq), Queued { from: winner, to, block: block.clone() });
        }
        Ok(())
    }

    fn check_invariants(&self, t: u64) -> Result<(), RunError> {
        self.observer.accounting_check().map_err(|e| RunError::Invariant {
            tick: t,
            what: format!("observer: {e}"),
        })?;
        for (i, m) in self.miners.iter().enumerate() {
            m.view.accounting_check().map_err(|e| RunError::Invariant {
                tick: t,
                what: format!("miner {}: {e}", self.names[i]),
            })?;
        }
        Ok(())
    }

    /// Track every claim coin the observer has seen and which settled, for
    /// the end-of-run claim fate classification.
    fn scan_claims(&mut self) {
        for h in 0..=self.observer.cutoff() {
            let Some(ledger) = self.observer.ledger(h) else { continue };
            for (op, coin) in &ledger.utxos {
                if matches!(coin.origin, CoinOrigin::Claim { .. }) {
                    self.ever_claim_coins.insert(*op);
                    if coin.settled {
                        self.ever_settled_claims.insert(*op);
                    }
                }
            }
        }
    }

    fn prune_mempools(&mut self) {
        for m in &mut self.miners {
            let view = m.view.clone();
            m.mempool.prune_included(&view);
        }
    }

    /// After the last production tick: heal all partitions and deliver
    /// everything still in flight so views converge.
    fn drain(&mut self, start: u64) -> Result<(), RunError> {
        self.draining = true;
        self.event(&format!("drain begin tick={start}"));
        let mut t = start;
        while !self.queue.is_empty() {
            self.deliver_due(t)?;
            t += 1;
        }
        self.check_invariants(t)?;
        self.scan_claims();
        self.prune_mempools();
        Ok(())
    }

    fn height_reports(view: &ChainView) -> Vec<HeightReport> {
        (0..=view.cutoff())
            .map(|h| {
                let ledger = view.ledger(h).expect("height tracked");
                HeightReport {
                    height: h,
                    chain_length: ledger.chain_length,
                    max_unwind: view.metrics().max_inchain_drop.get(&h).copied().unwrap_or(0),
                    supply: ledger.total_value(),
                }
            })
            .collect()
    }

    fn evaluate_expectations(&self) -> Vec<ExpectationResult> {
        let mut results = Vec::new();
        let pass = |name: &str, detail: String| ExpectationResult {
            name: name.into(),
            passed: true,
            detail,
        };
        let fail = |name: &str, detail: String| ExpectationResult {
            name: name.into(),
            passed: false,
            detail,
        };
        let expect = &self.config.expect;

        if expect.h0_agreement {
            let reference = self.observer.state_digest_upto(0);
            match self
                .miners
                .iter()
                .position(|m| m.view.state_digest_upto(0) != reference)
            {
                None => results.push(pass(
                    "h0_agreement",
                    format!("all {} miners match the observer at height 0", self.miners.len()),
                )),
                Some(i) => results.push(fail(
                    "h0_agreement",
                    format!("miner {} diverges at height 0", self.names[i]),
                )),
            }
        }

        if expect.shared_height_agreement {
            let mut bad = None;
            for (i, m) in self.miners.iter().enumerate() {
                let shared = m.cutoff().min(self.observer.cutoff());
                if m.view.state_digest_upto(shared) != self.observer.state_digest_upto(shared) {
                    bad = Some((i, shared));
                    break;
                }
            }
            match bad {
                None => results.push(pass(
                    "shared_height_agreement",
                    "every miner matches the observer up to its cutoff".into(),
                )),
                Some((i, shared)) => results.push(fail(
                    "shared_height_agreement",
                    format!("miner {} diverges within heights 0..={shared}", self.names[i]),
                )),
            }
        }

        if let Some(want) = expect.final_supply {
            let got = self.observer.visible_supply();
            let detail = format!("visible supply {got}, expected {want}");
            results.push(if got == want {
                pass("final_supply", detail)
            } else {
                fail("final_supply", detail)
            });
        }

        if let Some(want) = expect.min_h0_length {
            let got = self.observer.h0_length();
            let detail = format!("height-0 length {got}, expected at least {want}");
            results.push(if got >= want {
                pass("min_h0_length", detail)
            } else {
                fail("min_h0_length", detail)
            });
        }

        if let Some(want) = expect.strong_rejections {
            let got = self
                .observer
                .all_verdicts()
                .any(|(_, _, _, v)| matches!(v, Verdict::RejectStrong(_)));
            let detail = format!(
                "strong rejections {}, expected {}",
                if got { "present" } else { "absent" },
                if want { "present" } else { "absent" }
            );
            results.push(if got == want {
                pass("strong_rejections", detail)
            } else {
                fail("strong_rejections", detail)
            });
        }

        results
    }

    fn finish(self) -> SimOutcome {
        let expectations = self.evaluate_expectations();
        let ok = expectations.iter().all(|e| e.passed);

        let miners: Vec<MinerReport> = self
            .miners
            .iter()
            .enumerate()
            .map(|(i, m)| MinerReport {
                id: self.names[i].clone(),
                cutoff: m.cutoff(),
                weight: m.weight,
                blocks_produced: self.produced_by[i],
                h0_length: m.view.h0_length(),
                state_digest: hex::encode(m.view.state_digest().0),
                heights: Self::height_reports(&m.view),
                fork_switches: m.view.metrics().fork_switches,
                max_fork_depth: m.view.metrics().max_fork_depth,
                lapse_adoptions: m.view.metrics().lapse_adoptions,
            })
            .collect();

        let mut accepted = 0u64;
        let mut weak = 0u64;
        let mut strong = 0u64;
        for (_, _, _, v) in self.observer.all_verdicts() {
            match v {
                Verdict::Accept => accepted += 1,
                Verdict::RejectWeak(_) => weak += 1,
                Verdict::RejectStrong(_) => strong += 1,
            }
        }

        let mut settled_supply = 0u64;
        let mut live_unsettled: BTreeSet<Outpoint> = BTreeSet::new();
        for h in 0..=self.observer.cutoff() {
            if let Some(ledger) = self.observer.ledger(h) {
                for (op, coin) in &ledger.utxos {
                    if coin.settled {
                        settled_supply += coin.amount;
                    } else if matches!(coin.origin, CoinOrigin::Claim { .. }) {
                        live_unsettled.insert(*op);
                    }
                }
            }
        }
        let claims_reversed = self
            .ever_claim_coins
            .iter()
            .filter(|op| !self.ever_settled_claims.contains(*op) && !live_unsettled.contains(*op))
            .count() as u64;

        let counters = self.observer.counters();
        let observer_report = ObserverReport {
            h0_length: self.observer.h0_length(),
            state_digest: hex::encode(self.observer.state_digest().0),
            heights: Self::height_reports(&self.observer),
            visible_supply: self.observer.visible_supply(),
            settled_supply,
            premined: counters.premine,
            coinbase_created: counters.coinbase,
            claims_created_value: counters.claims_created,
            fees_collected: counters.fees,
            movedown_destroyed: counters.movedown_destroyed,
            exited_value: counters.exited,
            accepted_sections: accepted,
            weak_rejections: weak,
            strong_rejections: strong,
            claims_settled: self.ever_settled_claims.len() as u64,
            claims_live_unsettled: live_unsettled.len() as u64,
            claims_reversed,
            lapse_adoptions: self.observer.metrics().lapse_adoptions,
            orphaned_blocks: self.blocks_produced - self.observer.main_chain().len() as u64,
        };

        let blocks: Vec<Block> = self
            .observer
            .main_chain()
            .iter()
            .map(|id| {
                let stored = self.observer.block(id).expect("main chain block stored");
                Block { header: stored.header.clone(), subs: stored.subs.clone() }
            })
            .collect();
        let verdicts: Vec<VerdictRecord> = self
            .observer
            .all_verdicts()
            .map(|(position, height, section, verdict)| VerdictRecord {
                position,
                height,
                section,
                verdict,
            })
            .collect();
        let dump = ChainDump {
            params: self.config.params.clone(),
            premine: self.premine.clone(),
            blocks,
            verdicts,
        };

        let report = RunReport {
            scenario: self.config.name.clone(),
            seed: self.config.seed,
            blocks_produced: self.blocks_produced,
            messages_delivered: self.messages_delivered,
            transactions_injected: self.transactions_injected,
            event_digest: hex::encode(self.event_digest.0),
            miners,
            observer: observer_report,
            expectations,
            ok,
        };
        SimOutcome { report, dump }
    }
}
