//! The stateful side of consensus: one observer's view of the chain.
//!
//! A [`ChainView`] holds the header chain, per-height ledgers and section
//! chains, and a verdict for every section it has judged. All state changes
//! flow through undo frames (one per chain position), so the view can rewind
//! to any position and deterministically re-apply blocks. That one primitive
//! — pop to a position, replay the stored blocks — implements header
//! reorgs, retroactive verdict flips (agreement objections lapsing after the
//! disputed value settles), and cutoff changes.
//!
//! Verdict discipline:
//! - Strong rejections are computed from block bytes and the block's own
//!   ancestry, so they are identical for every observer that can see the
//!   section and never flip.
//! - Weak rejections depend on ledger state, visibility, or timing. They are
//!   recomputed from scratch whenever the affected suffix is replayed.
//! - Within a block, a rejection at height `H` cascades upward: transaction
//!   sections at heights `>= H` and claim sections sourcing `>= H` fall with
//!   it. A claim-agreement mismatch at destination `y` contributes its
//!   *source* height as `H`, which kills the lying source and everything
//!   above while leaving the destination's transaction section intact.
//!
//! Settlement discipline: claim and coinbase coins are created unspendable
//! and settle once their destination height accumulates the required
//! confirmations. Settled coins survive in-chain drops of the content that
//! created them — that is the finality the confirmation rule buys — while
//! everything unsettled rides its per-height chain.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::hashtree::{extend_prefix, truncate_prefix, Digest};
use crate::ledger::{
    effective_height, Address, Coin, CoinOrigin, HeightLedger, Outpoint, SchemeHandle,
};
use crate::params::{Height, Params};

use super::{
    check_header, check_structure, claims_agree, confirm_target, ledgers_digest,
    required_confirmations, BlockPrefix, LinkTarget, Rule, SectionId, StructuralReport, SubBlock,
    Verdict,
};

/// A genesis coin allocation.
#[derive(Debug, Clone)]
pub struct PremineAllocation {
    pub owner: Address,
    pub height: Height,
    pub amount: u64,
}

/// A block as one observer stores it: header, the sub-blocks visible at the
/// observer's cutoff, the stream proof covering exactly those, and the
/// cached structural verdicts (which are path-invariant, so caching is safe).
#[derive(Debug, Clone)]
pub struct StoredBlock {
    pub header: super::Header,
    pub subs: Vec<SubBlock>,
    pub proof: crate::hashtree::StreamPrefix,
    pub structural: StructuralReport,
    /// Upper bound on the accepted height-0 lineage length of the chain
    /// ending at this block (assumes every weakly-judgeable section passes).
    pub opt_h0: u64,
}

impl StoredBlock {
    fn visible_top(&self) -> Height {
        (self.subs.len() as u32) - 1
    }
}

/// One accepted transaction section on a height's chain, with everything
/// needed to unwind it when a later block drops it.
#[derive(Debug, Clone)]
pub struct LineageEntry {
    pub pos: u64,
    /// Coins created by this entry, at their height of creation.
    pub created: Vec<(Height, Outpoint)>,
    /// Coins spent by this entry, with full copies for restoration.
    pub spent: Vec<(Height, Coin)>,
    /// Declared fee total absorbed by this entry's transactions.
    pub fees: u64,
    /// Move-down output value destroyed here (to be mirrored below).
    pub destroyed: u64,
    /// Value that left the visible region (move-up targets above cutoff).
    pub exited: u64,
    /// Exit markers laid down by this entry.
    pub exit_marks: Vec<Outpoint>,
    pub coinbase: Option<Outpoint>,
}

impl LineageEntry {
    fn new(pos: u64) -> LineageEntry {
        LineageEntry {
            pos,
            created: Vec::new(),
            spent: Vec::new(),
            fees: 0,
            destroyed: 0,
            exited: 0,
            exit_marks: Vec::new(),
            coinbase: None,
        }
    }
}

/// One accepted claim section on a `(height, offset)` chain.
#[derive(Debug, Clone)]
pub struct ClaimEntry {
    pub pos: u64,
    pub created: Vec<Outpoint>,
}

/// One valid section registered on a chain's fork tree. Sections declare
/// their parent through the drop counter; every valid section becomes a
/// node whether or not its branch is currently live.
#[derive(Debug, Clone, Copy)]
pub struct SectionNode {
    pub parent: Option<u64>,
    pub depth: u64,
}

/// Everything one height tracks: the ledger, the live entry chains (always
/// the fork-choice winners), and the full fork trees they were chosen from.
#[derive(Debug, Clone, Default)]
pub struct HeightState {
    pub ledger: HeightLedger,
    pub lineage: Vec<LineageEntry>,
    pub claim_chains: BTreeMap<u32, Vec<ClaimEntry>>,
    pub tx_nodes: BTreeMap<u64, SectionNode>,
    pub claim_nodes: BTreeMap<u32, BTreeMap<u64, SectionNode>>,
}

/// Conservation counters. The accounting identity
/// `supply == premine + coinbase + claims_created - fees - movedown_destroyed - exited`
/// holds at every position; every mutation that touches value adjusts
/// exactly one side of it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub premine: u64,
    pub coinbase: u64,
    pub claims_created: u64,
    pub fees: u64,
    pub movedown_destroyed: u64,
    pub exited: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CounterField {
    Coinbase,
    ClaimsCreated,
    Fees,
    MovedownDestroyed,
    Exited,
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub fork_switches: u64,
    pub max_fork_depth: u64,
    pub suffix_replays: u64,
    pub lapse_adoptions: u64,
    pub orphans_buffered: u64,
    pub max_inchain_drop: BTreeMap<Height, u64>,
}

/// One reversible state change. Frames are vectors of these; undo applies
/// them in reverse.
#[derive(Debug, Clone)]
enum Mutation {
    CoinCreated { height: Height, outpoint: Outpoint },
    CoinRemoved { height: Height, coin: Coin },
    CoinSettled { height: Height, outpoint: Outpoint },
    EntryPushed { height: Height },
    EntriesDropped { height: Height, entries: Vec<LineageEntry> },
    ClaimEntryPushed { height: Height, offset_log2: u32 },
    ClaimEntriesDropped { height: Height, offset_log2: u32, entries: Vec<ClaimEntry> },
    ClaimCoinIndexed { outpoint: Outpoint },
    ExitMarked { outpoint: Outpoint },
    ExitUnmarked { outpoint: Outpoint },
    CounterAdd { field: CounterField, amount: u64 },
    CounterSub { field: CounterField, amount: u64 },
    NodeAdded { height: Height, chain: SectionId, pos: u64 },
}

type Frame = Vec<Mutation>;
/// Position of a section within the stored chain: `(block position, height, kind)`.
type SectionRef = (u64, Height, SectionId);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReceiveError {
    #[error("header rejected: {0:?}")]
    Header(Rule),
    #[error("stream proof does not authenticate the served sub-blocks")]
    PrefixAuth,
    #[error("served {got} sub-blocks, expected {expected}")]
    Coverage { expected: u32, got: u32 },
    #[error("genesis block must have a zero parent")]
    BadGenesis,
    #[error("parent index does not precede block index")]
    BadParentIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiveOutcome {
    /// Block extended the active chain (or triggered a switch onto it).
    Extended,
    /// Block switched the active chain to its branch.
    Reorged,
    /// Block stored on a side branch that did not win.
    SideStored,
    /// Parent unknown; buffered until it arrives.
    Orphaned,
    /// Already known.
    Duplicate,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CutoffError {
    #[error("cutoff {0} exceeds the protocol's maximum height")]
    AboveMax(Height),
    #[error("raising the cutoff requires a serving peer")]
    PeerRequired,
    #[error("serving peer's cutoff is below the requested cutoff")]
    PeerCutoffInsufficient,
    #[error("serving peer does not hold block {0}")]
    PeerMissingBlock(Digest),
    #[error("serving peer supplied trees that do not authenticate for block {0}")]
    PeerServedUnauthenticated(Digest),
}

/// One observer's complete chain state.
#[derive(Clone)]
pub struct ChainView {
    params: Params,
    scheme: SchemeHandle,
    cutoff: Height,

    premine: Vec<(Height, Coin)>,
    premine_total: u64,

    blocks: BTreeMap<Digest, StoredBlock>,
    orphan_pool: BTreeMap<Digest, Vec<BlockPrefix>>,
    orphan_ids: BTreeSet<Digest>,

    main: Vec<Digest>,
    position_of: BTreeMap<Digest, u64>,
    frames: Vec<Frame>,
    heights: BTreeMap<Height, HeightState>,
    verdicts: BTreeMap<(u64, Height, SectionId), Verdict>,

    /// Coins that ever settled (sticky within the current chain state;
    /// frame-symmetric). Settled claim/coinbase coins survive in-chain drops.
    ever_settled: BTreeSet<Outpoint>,
    /// Outpoints whose value left the visible region (migration or move-up
    /// past the cutoff); consulted when drops look for coins to remove.
    exited: BTreeSet<Outpoint>,
    /// Claim coin -> creating section, for settlement bookkeeping.
    claim_coin_section: BTreeMap<Outpoint, (Digest, Height, u32)>,

    /// Agreement objections that expired: the disputed claim accumulated the
    /// required confirmations while the objection stood, so it is final and
    /// the check is skipped from now on. Never unwound.
    lapsed: BTreeSet<(Digest, Height, u32)>,
    /// Claim sections whose coins settled; exempt from retroactive
    /// agreement checks (e.g. after a cutoff raise). Never unwound.
    settled_exempt: BTreeSet<(Digest, Height, u32)>,
    /// Observer-local overrides: sections this view refuses regardless of
    /// validity (used by adversarial miner behaviors).
    forced_rejects: BTreeSet<(Digest, Height, SectionId)>,

    /// Evaluated true height-0 lengths of losing side-branch tips.
    eval_cache: BTreeMap<Digest, u64>,

    counters: Counters,
    metrics: Metrics,
}

impl ChainView {
    pub fn new(
        params: Params,
        scheme: SchemeHandle,
        cutoff: Height,
        premine: &[PremineAllocation],
    ) -> ChainView {
        assert!(cutoff <= params.max_height, "cutoff above protocol maximum");
        let mut coins = Vec::new();
        let mut total = 0u64;
        for (seq, alloc) in premine.iter().enumerate() {
            assert!(alloc.height <= params.max_height, "premine above protocol maximum");
            total += alloc.amount;
            coins.push((
                alloc.height,
                Coin {
                    outpoint: crate::ledger::premine_outpoint(
                        &alloc.owner,
                        alloc.height,
                        alloc.amount,
                        seq as u32,
                    ),
                    owner: alloc.owner.clone(),
                    amount: alloc.amount,
                    maturity: 0,
                    settled: true,
                    origin: CoinOrigin::Premine,
                },
            ));
        }
        let mut view = ChainView {
            params,
            scheme,
            cutoff,
            premine: coins,
            premine_total: total,
            blocks: BTreeMap::new(),
            orphan_pool: BTreeMap::new(),
            orphan_ids: BTreeSet::new(),
            main: Vec::new(),
            position_of: BTreeMap::new(),
            frames: Vec::new(),
            heights: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            ever_settled: BTreeSet::new(),
            exited: BTreeSet::new(),
            claim_coin_section: BTreeMap::new(),
            lapsed: BTreeSet::new(),
            settled_exempt: BTreeSet::new(),
            forced_rejects: BTreeSet::new(),
            eval_cache: BTreeMap::new(),
            counters: Counters::default(),
            metrics: Metrics::default(),
        };
        view.reset_base_state();
        view
    }

    fn reset_base_state(&mut self) {
        self.heights.clear();
        for h in 0..=self.cutoff {
            self.heights.insert(h, HeightState::default());
        }
        self.counters = Counters::default();
        for (h, coin) in &self.premine {
            if *h <= self.cutoff {
                self.counters.premine += coin.amount;
                self.heights
                    .get_mut(h)
                    .expect("height initialized")
                    .ledger
                    .insert_coin(coin.clone())
                    .expect("premine outpoints unique");
            }
        }
    }

    // ------------------------------------------------------------------
    // Accessors
    // ------------------------------------------------------------------

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn cutoff(&self) -> Height {
        self.cutoff
    }

    pub fn main_chain(&self) -> &[Digest] {
        &self.main
    }

    pub fn chain_length(&self) -> u64 {
        self.main.len() as u64
    }

    pub fn tip(&self) -> Option<Digest> {
        self.main.last().copied()
    }

    pub fn block(&self, id: &Digest) -> Option<&StoredBlock> {
        self.blocks.get(id)
    }

    pub fn has_block(&self, id: &Digest) -> bool {
        self.blocks.contains_key(id)
    }

    pub fn height_state(&self, h: Height) -> Option<&HeightState> {
        self.heights.get(&h)
    }

    pub fn ledger(&self, h: Height) -> Option<&HeightLedger> {
        self.heights.get(&h).map(|s| &s.ledger)
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn premine_total(&self) -> u64 {
        self.premine_total
    }

    pub fn scheme(&self) -> &SchemeHandle {
        &self.scheme
    }

    pub fn visible_supply(&self) -> u64 {
        self.heights.values().map(|s| s.ledger.total_value()).sum()
    }

    /// Every section verdict of the current chain, in `(position, height,
    /// section)` order.
    pub fn all_verdicts(
        &self,
    ) -> impl Iterator<Item = (u64, Height, SectionId, Verdict)> + '_ {
        self.verdicts.iter().map(|((p, h, s), v)| (*p, *h, *s, *v))
    }

    pub fn verdict_of(&self, pos: u64, height: Height, section: SectionId) -> Option<Verdict> {
        self.verdicts.get(&(pos, height, section)).copied()
    }

    pub fn position_verdicts(&self, pos: u64) -> Vec<(Height, SectionId, Verdict)> {
        self.verdicts
            .range((pos, 0, SectionId::Tx)..(pos + 1, 0, SectionId::Tx))
            .map(|((_, h, s), v)| (*h, *s, *v))
            .collect()
    }

    pub fn find_coin(&self, outpoint: &Outpoint) -> Option<(Height, &Coin)> {
        for (h, state) in &self.heights {
            if let Some(c) = state.ledger.utxos.get(outpoint) {
                return Some((*h, c));
            }
        }
        None
    }

    pub fn lineage_tip_pos(&self, h: Height) -> Option<u64> {
        self.heights.get(&h).and_then(|s| s.lineage.last()).map(|e| e.pos)
    }

    pub fn claim_tip_pos(&self, h: Height, offset_log2: u32) -> Option<u64> {
        self.heights
            .get(&h)
            .and_then(|s| s.claim_chains.get(&offset_log2))
            .and_then(|c| c.last())
            .map(|e| e.pos)
    }

    /// Commitment over every visible height's ledger.
    pub fn state_digest(&self) -> Digest {
        ledgers_digest(self.heights.iter().map(|(h, s)| (*h, &s.ledger)))
    }

    /// Commitment over ledgers of heights `0..=max_h` only (for comparing
    /// observers with different cutoffs on their shared prefix).
    pub fn state_digest_upto(&self, max_h: Height) -> Digest {
        ledgers_digest(
            self.heights
                .iter()
                .filter(|(h, _)| **h <= max_h)
                .map(|(h, s)| (*h, &s.ledger)),
        )
    }

    pub fn h0_length(&self) -> u64 {
        self.heights.get(&0).map_or(0, |s| s.lineage.len() as u64)
    }

    fn current_score(&self) -> Option<super::TipScore> {
        let tip = self.tip()?;
        Some(super::TipScore {
            h0_len: self.h0_length(),
            index: self.blocks[&tip].header.index,
            digest: tip,
        })
    }

    /// Mark a section of a block as refused by this observer regardless of
    /// validity. Takes effect on the next (re)application of that block.
    pub fn force_reject(&mut self, block: Digest, height: Height, section: SectionId) {
        self.forced_rejects.insert((block, height, section));
    }

    pub fn clear_forced_rejects(&mut self) {
        self.forced_rejects.clear();
    }

    pub fn forced_reject_count(&self) -> usize {
        self.forced_rejects.len()
    }

    /// Rebuild the whole chain state from genesis (used after observer-local
    /// judgment inputs change, e.g. forced rejects added or withdrawn).
    pub fn rebuild(&mut self) {
        let ids = self.main.clone();
        self.pop_to(0);
        self.reset_base_state();
        for id in ids {
            self.commit_chain_block(id);
        }
    }

    // ------------------------------------------------------------------
    // Accounting identity
    // ------------------------------------------------------------------

    /// Verify the conservation identity and structural coherence. Cheap
    /// enough to run per block in simulations; any failure is a bug.
    pub fn accounting_check(&self) -> Result<(), String> {
        let supply = self.visible_supply();
        let c = &self.counters;
        let plus = u128::from(c.premine)
            + u128::from(c.coinbase)
            + u128::from(c.claims_created);
        let minus = u128::from(c.fees)
            + u128::from(c.movedown_destroyed)
            + u128::from(c.exited);
        if plus < minus || u128::from(supply) != plus - minus {
            return Err(format!(
                "conservation identity broken: supply {supply}, counters {c:?}"
            ));
        }
        for (h, state) in &self.heights {
            if state.ledger.chain_length != state.lineage.len() as u64 {
                return Err(format!(
                    "height {h}: chain length {} != lineage {}",
                    state.ledger.chain_length,
                    state.lineage.len()
                ));
            }
            for entry in &state.lineage {
                if entry.pos >= self.main.len() as u64 {
                    return Err(format!("height {h}: entry beyond chain end"));
                }
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Mutation plumbing
    // ------------------------------------------------------------------

    fn state_mut(&mut self, h: Height) -> &mut HeightState {
        self.heights.get_mut(&h).expect("height within cutoff")
    }

    fn mm_create_coin(&mut self, frame: &mut Frame, h: Height, coin: Coin) -> Result<(), ()> {
        let op = coin.outpoint;
        if self.state_mut(h).ledger.insert_coin(coin).is_err() {
            return Err(());
        }
        frame.push(Mutation::CoinCreated { height: h, outpoint: op });
        Ok(())
    }

    fn mm_remove_coin(&mut self, frame: &mut Frame, h: Height, op: &Outpoint) -> Result<Coin, ()> {
        let coin = self.state_mut(h).ledger.remove_coin(op).map_err(|_| ())?;
        frame.push(Mutation::CoinRemoved { height: h, coin: coin.clone() });
        Ok(coin)
    }

    fn mm_settle_coin(&mut self, frame: &mut Frame, h: Height, op: Outpoint) {
        let coin = self
            .state_mut(h)
            .ledger
            .utxos
            .get_mut(&op)
            .expect("settling an existing coin");
        debug_assert!(!coin.settled);
        coin.settled = true;
        self.ever_settled.insert(op);
        frame.push(Mutation::CoinSettled { height: h, outpoint: op });
    }

    fn mm_push_entry(&mut self, frame: &mut Frame, h: Height, entry: LineageEntry) {
        let state = self.state_mut(h);
        state.lineage.push(entry);
        state.ledger.chain_length += 1;
        frame.push(Mutation::EntryPushed { height: h });
    }

    fn mm_drop_entries(&mut self, frame: &mut Frame, h: Height, keep: usize) -> Vec<LineageEntry> {
        let state = self.state_mut(h);
        let dropped: Vec<LineageEntry> = state.lineage.split_off(keep);
        state.ledger.chain_length -= dropped.len() as u64;
        frame.push(Mutation::EntriesDropped { height: h, entries: dropped.clone() });
        dropped
    }

    fn mm_push_claim_entry(&mut self, frame: &mut Frame, h: Height, k: u32, entry: ClaimEntry) {
        self.state_mut(h).claim_chains.entry(k).or_default().push(entry);
        frame.push(Mutation::ClaimEntryPushed { height: h, offset_log2: k });
    }

    fn mm_drop_claim_entries(
        &mut self,
        frame: &mut Frame,
        h: Height,
        k: u32,
        keep: usize,
    ) -> Vec<ClaimEntry> {
        let chain = self.state_mut(h).claim_chains.entry(k).or_default();
        let dropped: Vec<ClaimEntry> = chain.split_off(keep);
        frame.push(Mutation::ClaimEntriesDropped {
            height: h,
            offset_log2: k,
            entries: dropped.clone(),
        });
        dropped
    }

    fn mm_index_claim_coin(
        &mut self,
        frame: &mut Frame,
        op: Outpoint,
        section: (Digest, Height, u32),
    ) {
        self.claim_coin_section.insert(op, section);
        frame.push(Mutation::ClaimCoinIndexed { outpoint: op });
    }

    fn mm_mark_exit(&mut self, frame: &mut Frame, op: Outpoint) {
        self.exited.insert(op);
        frame.push(Mutation::ExitMarked { outpoint: op });
    }

    fn mm_unmark_exit(&mut self, frame: &mut Frame, op: Outpoint) {
        let was = self.exited.remove(&op);
        debug_assert!(was);
        frame.push(Mutation::ExitUnmarked { outpoint: op });
    }

    fn counter_slot(&mut self, field: CounterField) -> &mut u64 {
        match field {
            CounterField::Coinbase => &mut self.counters.coinbase,
            CounterField::ClaimsCreated => &mut self.counters.claims_created,
            CounterField::Fees => &mut self.counters.fees,
            CounterField::MovedownDestroyed => &mut self.counters.movedown_destroyed,
            CounterField::Exited => &mut self.counters.exited,
        }
    }

    fn mm_counter_add(&mut self, frame: &mut Frame, field: CounterField, amount: u64) {
        if amount == 0 {
            return;
        }
        *self.counter_slot(field) += amount;
        frame.push(Mutation::CounterAdd { field, amount });
    }

    fn mm_counter_sub(&mut self, frame: &mut Frame, field: CounterField, amount: u64) {
        if amount == 0 {
            return;
        }
        *self.counter_slot(field) -= amount;
        frame.push(Mutation::CounterSub { field, amount });
    }

    fn undo_mutation(&mut self, m: Mutation) {
        match m {
            Mutation::CoinCreated { height, outpoint } => {
                self.state_mut(height)
                    .ledger
                    .remove_coin(&outpoint)
                    .expect("undo removes created coin");
            }
            Mutation::CoinRemoved { height, coin } => {
                self.state_mut(height)
                    .ledger
                    .insert_coin(coin)
                    .expect("undo restores removed coin");
            }
            Mutation::CoinSettled { height, outpoint } => {
                self.ever_settled.remove(&outpoint);
                let coin = self
                    .state_mut(height)
                    .ledger
                    .utxos
                    .get_mut(&outpoint)
                    .expect("undo unsettles existing coin");
                coin.settled = false;
            }
            Mutation::EntryPushed { height } => {
                let state = self.state_mut(height);
                state.lineage.pop().expect("undo pops pushed entry");
                state.ledger.chain_length -= 1;
            }
            Mutation::EntriesDropped { height, entries } => {
                let n = entries.len() as u64;
                let state = self.state_mut(height);
                state.lineage.extend(entries);
                state.ledger.chain_length += n;
            }
            Mutation::ClaimEntryPushed { height, offset_log2 } => {
                self.state_mut(height)
                    .claim_chains
                    .get_mut(&offset_log2)
                    .expect("claim chain exists")
                    .pop()
                    .expect("undo pops pushed claim entry");
            }
            Mutation::ClaimEntriesDropped { height, offset_log2, entries } => {
                self.state_mut(height)
                    .claim_chains
                    .entry(offset_log2)
                    .or_default()
                    .extend(entries);
            }
            Mutation::ClaimCoinIndexed { outpoint } => {
                self.claim_coin_section.remove(&outpoint);
            }
            Mutation::ExitMarked { outpoint } => {
                self.exited.remove(&outpoint);
            }
            Mutation::ExitUnmarked { outpoint } => {
                self.exited.insert(outpoint);
            }
            Mutation::CounterAdd { field, amount } => {
                *self.counter_slot(field) -= amount;
            }
            Mutation::CounterSub { field, amount } => {
                *self.counter_slot(field) += amount;
            }
            Mutation::NodeAdded { height, chain, pos } => {
                let state = self.state_mut(height);
                match chain {
                    SectionId::Tx => {
                        state.tx_nodes.remove(&pos);
                    }
                    SectionId::Claims { offset_log2 } => {
                        state
                            .claim_nodes
                            .get_mut(&offset_log2)
                            .expect("claim node tree exists")
                            .remove(&pos);
                    }
                }
            }
        }
    }

    fn rollback(&mut self, frame: Frame) {
        for m in frame.into_iter().rev() {
            self.undo_mutation(m);
        }
    }

    /// Rewind the chain so only positions `0..p` remain. Returns the popped
    /// block ids in ascending position order.
    fn pop_to(&mut self, p: u64) -> Vec<Digest> {
        let mut popped = Vec::new();
        while self.main.len() as u64 > p {
            let id = self.main.pop().expect("nonempty");
            let frame = self.frames.pop().expect("frame per position");
            self.rollback(frame);
            let pos = self.main.len() as u64;
            self.position_of.remove(&id);
            let keys: Vec<_> = self
                .verdicts
                .range((pos, 0, SectionId::Tx)..)
                .map(|(k, _)| *k)
                .collect();
            for k in keys {
                self.verdicts.remove(&k);
            }
            popped.push(id);
        }
        popped.reverse();
        popped
    }

    // ------------------------------------------------------------------
    // Receiving blocks
    // ------------------------------------------------------------------

    pub fn receive_block(&mut self, prefix: BlockPrefix) -> Result<ReceiveOutcome, ReceiveError> {
        check_header(&prefix.header, &self.params).map_err(ReceiveError::Header)?;
        if !prefix.authenticate() {
            return Err(ReceiveError::PrefixAuth);
        }
        let expected = self.cutoff.min(prefix.header.top) + 1;
        if prefix.subs.len() as u32 != expected {
            return Err(ReceiveError::Coverage {
                expected,
                got: prefix.subs.len() as u32,
            });
        }
        let id = prefix.id();
        if self.blocks.contains_key(&id) || self.orphan_ids.contains(&id) {
            return Ok(ReceiveOutcome::Duplicate);
        }

        if prefix.header.index == 0 {
            if prefix.header.prev != Digest::ZERO {
                return Err(ReceiveError::BadGenesis);
            }
        } else {
            match self.blocks.get(&prefix.header.prev) {
                None => {
                    self.orphan_ids.insert(id);
                    self.orphan_pool
                        .entry(prefix.header.prev)
                        .or_default()
                        .push(prefix);
                    self.metrics.orphans_buffered += 1;
                    return Ok(ReceiveOutcome::Orphaned);
                }
                Some(parent) => {
                    if parent.header.index + 1 != prefix.header.index {
                        return Err(ReceiveError::BadParentIndex);
                    }
                }
            }
        }

        let mut outcome = ReceiveOutcome::SideStored;
        let mut connected = vec![self.store_block(prefix)];
        // Draining orphans may connect further descendants.
        while let Some(next_id) = connected.first().copied() {
            connected.remove(0);
            let o = self.consider_for_chain(next_id);
            if next_id == id {
                outcome = o;
            }
            if let Some(waiting) = self.orphan_pool.remove(&next_id) {
                for w in waiting {
                    let wid = w.id();
                    self.orphan_ids.remove(&wid);
                    let parent_index = self.blocks[&next_id].header.index;
                    if w.header.index == parent_index + 1 {
                        connected.push(self.store_block(w));
                    }
                }
            }
        }
        Ok(outcome)
    }

    fn store_block(&mut self, prefix: BlockPrefix) -> Digest {
        let id = prefix.id();
        let structural = check_structure(&prefix.header, &prefix.subs, &self.params);
        let parent_opt = if prefix.header.index == 0 {
            0
        } else {
            self.blocks.get(&prefix.header.prev).map_or(0, |p| p.opt_h0)
        };
        let stored = StoredBlock {
            opt_h0: parent_opt
                + u64::from(!structural.tx_strong.contains_key(&0)),
            header: prefix.header,
            subs: prefix.subs,
            proof: prefix.proof,
            structural,
        };
        self.blocks.insert(id, stored);
        id
    }

    fn consider_for_chain(&mut self, id: Digest) -> ReceiveOutcome {
        let header = self.blocks[&id].header.clone();
        if self.main.is_empty() {
            if header.index == 0 {
                self.commit_chain_block(id);
                return ReceiveOutcome::Extended;
            }
            return ReceiveOutcome::SideStored;
        }
        if Some(header.prev) == self.tip() {
            self.commit_chain_block(id);
            return ReceiveOutcome::Extended;
        }
        if self.position_of.contains_key(&id) {
            return ReceiveOutcome::Duplicate;
        }
        // Side branch: compare optimistically, evaluate fully only when the
        // branch could win.
        let cand = super::TipScore {
            h0_len: self.blocks[&id].opt_h0,
            index: header.index,
            digest: id,
        };
        let cur = self.current_score().expect("main nonempty");
        if !cand.beats(&cur) {
            return ReceiveOutcome::SideStored;
        }
        if let Some(known) = self.eval_cache.get(&id) {
            let true_score = super::TipScore { h0_len: *known, ..cand };
            if !true_score.beats(&cur) {
                return ReceiveOutcome::SideStored;
            }
        }
        if self.evaluate_candidate(id) {
            ReceiveOutcome::Reorged
        } else {
            ReceiveOutcome::SideStored
        }
    }

    /// Fully evaluate a side-branch tip: rewind to the fork point, apply the
    /// branch, keep it if it wins, otherwise restore the previous chain.
    fn evaluate_candidate(&mut self, tip_id: Digest) -> bool {
        // Collect the branch back to a main-chain ancestor (or genesis).
        let mut branch = vec![tip_id];
        let mut cursor = self.blocks[&tip_id].header.prev;
        let fork_end: u64 = loop {
            if cursor == Digest::ZERO {
                break 0;
            }
            if let Some(pos) = self.position_of.get(&cursor) {
                break pos + 1;
            }
            match self.blocks.get(&cursor) {
                Some(b) => {
                    branch.push(cursor);
                    cursor = b.header.prev;
                }
                // Ancestry incomplete (an ancestor is still orphaned).
                None => return false,
            }
        };
        branch.reverse();

        let old_score = self.current_score().expect("main nonempty");
        let saved_lapsed = self.lapsed.clone();
        let saved_exempt = self.settled_exempt.clone();

        let old_suffix = self.pop_to(fork_end);
        for b in &branch {
            self.commit_chain_block(*b);
        }
        let new_score = self.current_score().expect("branch applied");
        if new_score.beats(&old_score) {
            self.metrics.fork_switches += 1;
            self.metrics.max_fork_depth =
                self.metrics.max_fork_depth.max(old_suffix.len() as u64);
            true
        } else {
            self.eval_cache.insert(tip_id, new_score.h0_len);
            self.pop_to(fork_end);
            self.lapsed = saved_lapsed;
            self.settled_exempt = saved_exempt;
            for b in old_suffix {
                self.commit_chain_block(b);
            }
            false
        }
    }

    /// Append a block at the tip, handling lapse-triggered suffix replays.
    fn commit_chain_block(&mut self, id: Digest) {
        let mut queue: VecDeque<Digest> = VecDeque::new();
        queue.push_back(id);
        while let Some(next) = queue.pop_front() {
            self.apply_at_tip(next);
            if let Some(q) = self.scan_new_lapses() {
                self.metrics.lapse_adoptions += 1;
                self.metrics.suffix_replays += 1;
                let popped = self.pop_to(q);
                for pid in popped.into_iter().rev() {
                    queue.push_front(pid);
                }
            }
        }
    }

    /// Apply one block at the current tip position, iterating the weak
    /// verdict fixpoint: execution failures (invalid spends, illegal drops,
    /// colliding claim coins) reject the offending section and the block is
    /// re-judged with that knowledge until it applies cleanly.
    fn apply_at_tip(&mut self, id: Digest) {
        let pos = self.main.len() as u64;
        let mut known: BTreeMap<SectionRef, Rule> = BTreeMap::new();
        loop {
            match self.try_apply(id, pos, &known) {
                Ok((frame, verdicts)) => {
                    self.main.push(id);
                    self.position_of.insert(id, pos);
                    self.frames.push(frame);
                    for (sref, v) in verdicts {
                        self.verdicts.insert((pos, sref.0, sref.1), v);
                    }
                    return;
                }
                Err((sref, rule)) => {
                    let prev = known.insert(sref, rule);
                    assert!(
                        prev.is_none(),
                        "verdict fixpoint did not converge at {sref:?}"
                    );
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Single-block application
    // ------------------------------------------------------------------

    #[allow(clippy::type_complexity)]
    fn try_apply(
        &mut self,
        id: Digest,
        pos: u64,
        known: &BTreeMap<SectionRef, Rule>,
    ) -> Result<(Frame, BTreeMap<(Height, SectionId), Verdict>), (SectionRef, Rule)> {
        let stored = self.blocks.get(&id).expect("block stored").clone();
        debug_assert_eq!(stored.header.index, pos, "position equals header index");
        let visible_top = stored.visible_top();
        let mut frame: Frame = Vec::new();

        self.run_migration_sweep(pos, &mut frame);

        // Sections proven unusable during this application attempt: this
        // block's own rejections plus earlier sections whose content failed
        // when their branch was tried. Both exclude fork-tree nodes.
        let dead: BTreeSet<SectionRef> = known.keys().copied().collect();

        // --- Candidate section verdicts --------------------------------
        struct Cand {
            rule: Rule,
            strong: bool,
            kill: Option<u64>,
        }
        let mut cands: BTreeMap<(Height, SectionId), Cand> = BTreeMap::new();

        for (y, rule) in &stored.structural.tx_strong {
            let kill = Some(u64::from(*y));
            cands.insert((*y, SectionId::Tx), Cand { rule: *rule, strong: true, kill });
        }
        for ((y, k), rule) in &stored.structural.claim_strong {
            cands.insert(
                (*y, SectionId::Claims { offset_log2: *k }),
                Cand { rule: *rule, strong: true, kill: None },
            );
        }
        for ((kpos, y, sid), rule) in known {
            if *kpos != pos {
                continue;
            }
            let kill = match sid {
                SectionId::Tx => Some(u64::from(*y)),
                SectionId::Claims { .. } => None,
            };
            cands
                .entry((*y, *sid))
                .or_insert(Cand { rule: *rule, strong: false, kill });
        }
        for (fid, fh, fsec) in self.forced_rejects.iter() {
            if *fid == id && *fh <= visible_top {
                let kill = match fsec {
                    SectionId::Tx => Some(u64::from(*fh)),
                    SectionId::Claims { .. } => None,
                };
                cands
                    .entry((*fh, *fsec))
                    .or_insert(Cand { rule: Rule::TxInvalid, strong: false, kill });
            }
        }

        // Agreement: claims must mirror their source's move-down outputs,
        // checkable only when the source height is visible, skipped once the
        // objection lapsed or the claims settled.
        for sub in &stored.subs {
            let y = sub.height;
            for cs in &sub.claim_sections {
                if cs.claims.is_empty() {
                    continue;
                }
                let key = (y, SectionId::Claims { offset_log2: cs.offset_log2 });
                if cands.contains_key(&key) {
                    continue;
                }
                let z = cs.source_height(y);
                if z > u64::from(visible_top) {
                    continue; // source invisible: provisionally accepted
                }
                let exempt_key = (id, y, cs.offset_log2);
                if self.lapsed.contains(&exempt_key) || self.settled_exempt.contains(&exempt_key)
                {
                    continue;
                }
                let source_txs = &stored.subs[z as usize].tx_section.txs;
                if !claims_agree(&cs.claims, source_txs, cs.offset_log2) {
                    cands.insert(
                        key,
                        Cand { rule: Rule::ClaimMismatch, strong: false, kill: Some(z) },
                    );
                }
            }
        }

        // Link resolution: each section's drop counter must point at a
        // registered node of its chain's fork tree (or restart the chain).
        // Dangling links are judged by what the target is: a header-provably
        // absent section is a strong failure; a section this observer
        // rejected (or proved content-dead this attempt) is weak.
        for sub in &stored.subs {
            let y = sub.height;
            let tx_key = (y, SectionId::Tx);
            if !cands.contains_key(&tx_key) {
                if let Some(c) = self.judge_link(
                    pos,
                    y,
                    SectionId::Tx,
                    sub.tx_section.drop_count,
                    &dead,
                ) {
                    cands.insert(tx_key, Cand { rule: c.0, strong: c.1, kill: Some(u64::from(y)) });
                }
            }
            for cs in &sub.claim_sections {
                let key = (y, SectionId::Claims { offset_log2: cs.offset_log2 });
                if cands.contains_key(&key) {
                    continue;
                }
                if let Some(c) = self.judge_link(
                    pos,
                    y,
                    SectionId::Claims { offset_log2: cs.offset_log2 },
                    cs.drop_count,
                    &dead,
                ) {
                    cands.insert(key, Cand { rule: c.0, strong: c.1, kill: None });
                }
            }
        }

        // --- Cascade and final verdicts --------------------------------
        let h_strong = cands
            .values()
            .filter(|c| c.strong)
            .filter_map(|c| c.kill)
            .min();
        let h_weak = cands
            .values()
            .filter(|c| !c.strong)
            .filter_map(|c| c.kill)
            .min();

        let judge = |own: Option<&Cand>, effective_height: u64| -> Verdict {
            if let Some(c) = own {
                if c.strong {
                    return Verdict::RejectStrong(c.rule);
                }
            }
            if let Some(hs) = h_strong {
                if effective_height >= hs {
                    return Verdict::RejectStrong(Rule::ParentInvalid);
                }
            }
            if let Some(c) = own {
                return Verdict::RejectWeak(c.rule);
            }
            if let Some(hw) = h_weak {
                if effective_height >= hw {
                    return Verdict::RejectWeak(Rule::ParentInvalid);
                }
            }
            Verdict::Accept
        };

        let mut verdicts: BTreeMap<(Height, SectionId), Verdict> = BTreeMap::new();
        for sub in &stored.subs {
            let y = sub.height;
            verdicts.insert(
                (y, SectionId::Tx),
                judge(cands.get(&(y, SectionId::Tx)), u64::from(y)),
            );
            for cs in &sub.claim_sections {
                let sid = SectionId::Claims { offset_log2: cs.offset_log2 };
                verdicts.insert(
                    (y, sid),
                    judge(cands.get(&(y, sid)), cs.source_height(y)),
                );
            }
        }

        // --- Execution --------------------------------------------------
        if let Err(fail) = self.execute_block(&stored, id, pos, &verdicts, &dead, &mut frame) {
            self.rollback(frame);
            debug_assert!(
                !known.contains_key(&fail.0),
                "execution failed on an already-rejected section"
            );
            return Err(fail);
        }

        self.settle_sweep(&mut frame);
        Ok((frame, verdicts))
    }

    /// Judge one section's drop-counter link against this chain's fork tree.
    /// `None` means the link lands on a registered (possibly dormant) node
    /// or legitimately restarts the chain.
    fn judge_link(
        &self,
        pos: u64,
        y: Height,
        section: SectionId,
        drop_count: u32,
        dead: &BTreeSet<SectionRef>,
    ) -> Option<(Rule, bool)> {
        match confirm_target(pos, drop_count).expect("bounded by structural pass") {
            LinkTarget::Fresh => None,
            LinkTarget::Position(t) => {
                let have = self
                    .heights
                    .get(&y)
                    .is_some_and(|s| match section {
                        SectionId::Tx => s.tx_nodes.contains_key(&t),
                        SectionId::Claims { offset_log2 } => s
                            .claim_nodes
                            .get(&offset_log2)
                            .is_some_and(|m| m.contains_key(&t)),
                    });
                if have && !dead.contains(&(t, y, section)) {
                    return None;
                }
                // Dangling: does the target block even carry this section?
                let target_block = &self.blocks[&self.main[t as usize]];
                if u64::from(target_block.header.top) < u64::from(y) {
                    return Some((Rule::DropBounds, true));
                }
                match self.verdicts.get(&(t, y, section)) {
                    Some(v) if v.is_strong() => Some((Rule::ParentInvalid, true)),
                    // Weakly rejected, proven content-dead, or beyond the
                    // stored coverage of the target: observer-local.
                    _ => Some((Rule::ParentInvalid, false)),
                }
            }
        }
    }

    /// Compute the fork-choice winner of one chain: the path to the usable
    /// node of greatest depth, ties to the earlier block. A node is usable
    /// when no section on its root path is known dead.
    fn fork_winner(&self, y: Height, sid: SectionId, dead: &BTreeSet<SectionRef>) -> Vec<u64> {
        let Some(state) = self.heights.get(&y) else {
            return Vec::new();
        };
        let nodes: &BTreeMap<u64, SectionNode> = match sid {
            SectionId::Tx => &state.tx_nodes,
            SectionId::Claims { offset_log2 } => match state.claim_nodes.get(&offset_log2) {
                Some(m) => m,
                None => return Vec::new(),
            },
        };
        let usable = |tip: u64| -> bool {
            if dead.is_empty() {
                return true;
            }
            let mut cur = tip;
            loop {
                if dead.contains(&(cur, y, sid)) {
                    return false;
                }
                match nodes[&cur].parent {
                    None => return true,
                    Some(p) => cur = p,
                }
            }
        };
        let mut best: Option<(u64, u64)> = None; // (depth, tip position)
        for (&p, n) in nodes {
            if !usable(p) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bd, bp)) => n.depth > bd || (n.depth == bd && p < bp),
            };
            if better {
                best = Some((n.depth, p));
            }
        }
        let Some((_, tip)) = best else {
            return Vec::new();
        };
        let mut path = vec![tip];
        let mut cur = tip;
        while let Some(p) = nodes[&cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Apply one block: register its accepted sections on their chains'
    /// fork trees, then reconcile every chain to its fork-choice winner —
    /// unwinding live entries that left the winning path (all restores
    /// before all removals, so entries that feed each other cannot order)
    /// and adopting winning-branch sections that were never applied, the
    /// common case being this block's own tip extensions.
    fn execute_block(
        &mut self,
        stored: &StoredBlock,
        id: Digest,
        pos: u64,
        verdicts: &BTreeMap<(Height, SectionId), Verdict>,
        dead: &BTreeSet<SectionRef>,
        frame: &mut Frame,
    ) -> Result<(), (SectionRef, Rule)> {
        let accepted =
            |sref: &(Height, SectionId)| verdicts.get(sref).is_some_and(|v| v.is_accept());

        // --- Register fork-tree nodes -----------------------------------
        let mut own_chains: BTreeSet<(Height, SectionId)> = BTreeSet::new();
        for sub in &stored.subs {
            let y = sub.height;
            if accepted(&(y, SectionId::Tx)) {
                let parent = match confirm_target(pos, sub.tx_section.drop_count)
                    .expect("structurally bounded")
                {
                    LinkTarget::Fresh => None,
                    LinkTarget::Position(t) => Some(t),
                };
                self.mm_add_node(frame, y, SectionId::Tx, pos, parent);
                own_chains.insert((y, SectionId::Tx));
            }
            for cs in &sub.claim_sections {
                let sid = SectionId::Claims { offset_log2: cs.offset_log2 };
                if accepted(&(y, sid)) {
                    let parent = match confirm_target(pos, cs.drop_count)
                        .expect("structurally bounded")
                    {
                        LinkTarget::Fresh => None,
                        LinkTarget::Position(t) => Some(t),
                    };
                    self.mm_add_node(frame, y, sid, pos, parent);
                    own_chains.insert((y, sid));
                }
            }
        }

        // --- Fork choice per chain --------------------------------------
        struct Reco {
            y: Height,
            sid: SectionId,
            keep: usize,
            adopt: Vec<u64>,
            blame: SectionRef,
        }
        let mut recos: Vec<Reco> = Vec::new();
        let chain_list: Vec<(Height, SectionId)> = self
            .heights
            .iter()
            .flat_map(|(y, s)| {
                std::iter::once((*y, SectionId::Tx)).chain(
                    s.claim_nodes
                        .keys()
                        .map(|k| (*y, SectionId::Claims { offset_log2: *k })),
                )
            })
            .collect();
        for (y, sid) in chain_list {
            let winner = self.fork_winner(y, sid, dead);
            let live: Vec<u64> = {
                let state = &self.heights[&y];
                match sid {
                    SectionId::Tx => state.lineage.iter().map(|e| e.pos).collect(),
                    SectionId::Claims { offset_log2 } => state
                        .claim_chains
                        .get(&offset_log2)
                        .map(|c| c.iter().map(|e| e.pos).collect())
                        .unwrap_or_default(),
                }
            };
            if winner == live {
                continue;
            }
            let keep = winner
                .iter()
                .zip(live.iter())
                .take_while(|(a, b)| a == b)
                .count();
            debug_assert_eq!(&winner[..keep], &live[..keep]);
            let adopt: Vec<u64> = winner[keep..].to_vec();
            debug_assert!(
                !(adopt.is_empty() && keep < live.len()),
                "fork choice cannot shrink the live chain without a replacement"
            );
            // Failures while reconciling are pinned on this block's own
            // section when it drove the switch, otherwise on the dormant
            // tip whose adoption was attempted.
            let blame = if own_chains.contains(&(y, sid)) {
                (pos, y, sid)
            } else {
                (*adopt.last().unwrap_or(&pos), y, sid)
            };
            recos.push(Reco { y, sid, keep, adopt, blame });
        }

        // --- Unwind phase: restore all spends, then remove creations ----
        let mut dropped_tx: Vec<(usize, Vec<LineageEntry>)> = Vec::new();
        let mut dropped_claims: Vec<(usize, Vec<ClaimEntry>)> = Vec::new();
        for (i, r) in recos.iter().enumerate() {
            match r.sid {
                SectionId::Tx => {
                    if r.keep < self.heights[&r.y].lineage.len() {
                        let entries = self.mm_drop_entries(frame, r.y, r.keep);
                        let depth = entries.len() as u64;
                        let slot = self.metrics.max_inchain_drop.entry(r.y).or_insert(0);
                        *slot = (*slot).max(depth);
                        dropped_tx.push((i, entries));
                    }
                }
                SectionId::Claims { offset_log2 } => {
                    let len = self.heights[&r.y]
                        .claim_chains
                        .get(&offset_log2)
                        .map_or(0, |c| c.len());
                    if r.keep < len {
                        let entries =
                            self.mm_drop_claim_entries(frame, r.y, offset_log2, r.keep);
                        dropped_claims.push((i, entries));
                    }
                }
            }
        }

        for (i, entries) in &dropped_tx {
            let blame = recos[*i].blame;
            for entry in entries {
                for (h, coin) in &entry.spent {
                    if self.find_coin(&coin.outpoint).is_some()
                        || self.mm_create_coin(frame, *h, coin.clone()).is_err()
                    {
                        return Err((blame, Rule::DropBounds));
                    }
                }
                self.mm_counter_sub(frame, CounterField::Fees, entry.fees);
                self.mm_counter_sub(frame, CounterField::MovedownDestroyed, entry.destroyed);
                self.mm_counter_sub(frame, CounterField::Exited, entry.exited);
                for op in entry.exit_marks.clone() {
                    self.mm_unmark_exit(frame, op);
                }
            }
        }

        for (i, entries) in &dropped_tx {
            let blame = recos[*i].blame;
            for entry in entries {
                for (_, op) in &entry.created {
                    self.drop_created_coin(frame, op)
                        .map_err(|()| (blame, Rule::DropBounds))?;
                }
            }
        }
        for (i, entries) in &dropped_claims {
            let blame = recos[*i].blame;
            for entry in entries {
                for op in &entry.created {
                    self.drop_created_coin(frame, op)
                        .map_err(|()| (blame, Rule::DropBounds))?;
                }
            }
        }

        // --- Adoption phase: heights ascending, positions ascending -----
        let mut by_height: BTreeMap<Height, Vec<(u64, SectionId)>> = BTreeMap::new();
        for r in &recos {
            for q in &r.adopt {
                by_height.entry(r.y).or_default().push((*q, r.sid));
            }
        }
        for (y, mut items) in by_height {
            items.sort();
            for (q, sid) in items {
                match sid {
                    SectionId::Tx => self
                        .adopt_tx_entry(stored, id, pos, q, y, frame)
                        .map_err(|rule| ((q, y, sid), rule))?,
                    SectionId::Claims { offset_log2 } => self
                        .adopt_claim_entry(stored, id, pos, q, y, offset_log2, frame)
                        .map_err(|rule| ((q, y, sid), rule))?,
                }
            }
        }

        Ok(())
    }

    /// Register one accepted section on its chain's fork tree.
    fn mm_add_node(
        &mut self,
        frame: &mut Frame,
        y: Height,
        chain: SectionId,
        pos: u64,
        parent: Option<u64>,
    ) {
        let state = self.state_mut(y);
        let nodes = match chain {
            SectionId::Tx => &mut state.tx_nodes,
            SectionId::Claims { offset_log2 } => {
                state.claim_nodes.entry(offset_log2).or_default()
            }
        };
        let depth = match parent {
            None => 1,
            Some(t) => nodes.get(&t).expect("link judged against existing node").depth + 1,
        };
        nodes.insert(pos, SectionNode { parent, depth });
        frame.push(Mutation::NodeAdded { height: y, chain, pos });
    }

    /// Apply the transaction section of position `q` at height `y` as the
    /// next live entry, together with block `q`'s coinbase when it pays at
    /// this height. `q` is this block for plain tip extensions and an
    /// earlier block when a dormant branch is being adopted.
    fn adopt_tx_entry(
        &mut self,
        stored: &StoredBlock,
        id: Digest,
        pos: u64,
        q: u64,
        y: Height,
        frame: &mut Frame,
    ) -> Result<(), Rule> {
        let (txs, header) = if q == pos {
            (
                stored.subs[y as usize].tx_section.txs.clone(),
                stored.header.clone(),
            )
        } else {
            let bid = self.main[q as usize];
            debug_assert_ne!(bid, id);
            let b = &self.blocks[&bid];
            (b.subs[y as usize].tx_section.txs.clone(), b.header.clone())
        };

        let mut entry = LineageEntry::new(q);
        for tx in &txs {
            let txid = tx.txid();
            // Validate all inputs against the current ledger before touching
            // anything (sections are atomic: one bad spend rejects the whole
            // section on the retry).
            for input in &tx.inputs {
                let scheme = self.scheme.clone();
                if self.heights[&y]
                    .ledger
                    .check_spend(input, &txid, scheme.as_ref())
                    .is_err()
                {
                    return Err(Rule::TxInvalid);
                }
            }
            for input in &tx.inputs {
                let coin = self
                    .mm_remove_coin(frame, y, &input.outpoint)
                    .expect("validated above");
                entry.spent.push((y, coin));
            }
            let fee = tx.fee().expect("stateless pass ensures balance");
            entry.fees += fee;
            self.mm_counter_add(frame, CounterField::Fees, fee);
            match tx.kind {
                crate::ledger::TxKind::SameHeight => {
                    for (i, out) in tx.outputs.iter().enumerate() {
                        let coin = Coin {
                            outpoint: Outpoint { txid, index: i as u32 },
                            owner: out.address.clone(),
                            amount: out.amount,
                            maturity: 0,
                            settled: true,
                            origin: CoinOrigin::Regular,
                        };
                        let op = coin.outpoint;
                        if self.mm_create_coin(frame, y, coin).is_err() {
                            return Err(Rule::TxInvalid);
                        }
                        entry.created.push((y, op));
                    }
                }
                crate::ledger::TxKind::MoveUp { target } => {
                    for (i, out) in tx.outputs.iter().enumerate() {
                        let op = Outpoint { txid, index: i as u32 };
                        if target <= self.cutoff {
                            let coin = Coin {
                                outpoint: op,
                                owner: out.address.clone(),
                                amount: out.amount,
                                maturity: 0,
                                settled: true,
                                origin: CoinOrigin::Regular,
                            };
                            if self.mm_create_coin(frame, target, coin).is_err() {
                                return Err(Rule::TxInvalid);
                            }
                            entry.created.push((target, op));
                        } else {
                            entry.exited += out.amount;
                            entry.exit_marks.push(op);
                            self.mm_counter_add(frame, CounterField::Exited, out.amount);
                            self.mm_mark_exit(frame, op);
                        }
                    }
                }
                crate::ledger::TxKind::MoveDown { .. } => {
                    let moved = tx.output_total().expect("stateless pass ensures balance");
                    entry.destroyed += moved;
                    self.mm_counter_add(frame, CounterField::MovedownDestroyed, moved);
                }
            }
        }

        // The producing block's coinbase rides on its entry at the paid
        // height; a settled coinbase that survived an earlier unwind is
        // final and is not re-created.
        if header.coinbase.height == y && header.coinbase.amount > 0 {
            let cb = &header.coinbase;
            let op = header.coinbase_outpoint();
            match self.find_coin(&op) {
                Some((_, existing)) if existing.settled => {}
                Some(_) => return Err(Rule::TxInvalid),
                None => {
                    let coin = Coin {
                        outpoint: op,
                        owner: cb.recipient.clone(),
                        amount: cb.amount,
                        maturity: self.heights[&y].ledger.chain_length
                            + 1
                            + required_confirmations(&self.params, y),
                        settled: false,
                        origin: CoinOrigin::Coinbase { height: y },
                    };
                    self.mm_create_coin(frame, y, coin).expect("absent above");
                    self.mm_counter_add(frame, CounterField::Coinbase, cb.amount);
                    entry.created.push((y, op));
                    entry.coinbase = Some(op);
                }
            }
        }

        self.mm_push_entry(frame, y, entry);
        Ok(())
    }

    /// Apply the claim section of position `q` at `(y, offset)` as the next
    /// live claim-chain entry. Claim coins whose identical settled twin
    /// already exists (settlement survived an unwind) are not re-created.
    #[allow(clippy::too_many_arguments)]
    fn adopt_claim_entry(
        &mut self,
        stored: &StoredBlock,
        id: Digest,
        pos: u64,
        q: u64,
        y: Height,
        offset_log2: u32,
        frame: &mut Frame,
    ) -> Result<(), Rule> {
        let (claims, block_id) = if q == pos {
            let cs = stored.subs[y as usize]
                .claim_sections
                .iter()
                .find(|c| c.offset_log2 == offset_log2)
                .expect("node registered from this section");
            (cs.claims.clone(), id)
        } else {
            let bid = self.main[q as usize];
            let cs = self.blocks[&bid].subs[y as usize]
                .claim_sections
                .iter()
                .find(|c| c.offset_log2 == offset_log2)
                .expect("node registered from this section");
            (cs.claims.clone(), bid)
        };

        let mut centry = ClaimEntry { pos: q, created: Vec::new() };
        let len_now = self.heights[&y].ledger.chain_length;
        for claim in &claims {
            let op = claim.coin_outpoint();
            match self.find_coin(&op) {
                Some((_, existing)) if existing.settled => continue,
                Some(_) => return Err(Rule::ClaimMismatch),
                None => {}
            }
            let required = required_confirmations(&self.params, claim.source_height);
            let coin = Coin {
                outpoint: op,
                owner: claim.recipient.clone(),
                amount: claim.amount,
                maturity: len_now + required,
                settled: false,
                origin: CoinOrigin::Claim { source_height: claim.source_height },
            };
            self.mm_create_coin(frame, y, coin).expect("absent above");
            self.mm_counter_add(frame, CounterField::ClaimsCreated, claim.amount);
            self.mm_index_claim_coin(frame, op, (block_id, y, offset_log2));
            centry.created.push(op);
        }
        self.mm_push_claim_entry(frame, y, offset_log2, centry);
        Ok(())
    }

    /// Remove one coin created by a dropped entry. Settled claim/coinbase
    /// coins survive (that is settlement's finality); exited coins already
    /// left the view. A missing unsettled coin means a still-live entry
    /// consumed it, which makes the drop illegal.
    fn drop_created_coin(&mut self, frame: &mut Frame, op: &Outpoint) -> Result<(), ()> {
        if let Some((h, coin)) = self.find_coin(op) {
            let origin = coin.origin;
            let survives = coin.settled
                && matches!(origin, CoinOrigin::Claim { .. } | CoinOrigin::Coinbase { .. });
            if survives {
                return Ok(());
            }
            let removed = self.mm_remove_coin(frame, h, op).expect("present");
            match removed.origin {
                CoinOrigin::Coinbase { .. } => {
                    self.mm_counter_sub(frame, CounterField::Coinbase, removed.amount)
                }
                CoinOrigin::Claim { .. } => {
                    self.mm_counter_sub(frame, CounterField::ClaimsCreated, removed.amount)
                }
                CoinOrigin::Regular | CoinOrigin::Premine => {}
            }
            return Ok(());
        }
        if self.ever_settled.contains(op) || self.exited.contains(op) {
            // Settled and later spent (value circulates), or left the view.
            return Ok(());
        }
        Err(())
    }

    /// Relocate coins whose scheduled owners have stepped to a different
    /// height by position `now`. Runs before each block's content.
    fn run_migration_sweep(&mut self, now: u64, frame: &mut Frame) {
        let mut moves: Vec<(Height, Outpoint)> = Vec::new();
        for (h, state) in &self.heights {
            for (op, coin) in &state.ledger.utxos {
                if let Some(sched) = &coin.owner.schedule {
                    let eff = effective_height(
                        coin.owner.base_height,
                        sched,
                        now,
                        self.params.max_height,
                    );
                    if eff != *h {
                        moves.push((*h, *op));
                    }
                }
            }
        }
        for (from, op) in moves {
            let coin = self.mm_remove_coin(frame, from, &op).expect("listed above");
            let sched = coin.owner.schedule.as_ref().expect("scheduled owner");
            let eff = effective_height(
                coin.owner.base_height,
                sched,
                now,
                self.params.max_height,
            );
            if eff <= self.cutoff {
                let from_len = self.heights[&from].ledger.chain_length;
                let to_len = self.heights[&eff].ledger.chain_length;
                let remaining = coin.maturity.saturating_sub(from_len);
                let migrated = Coin { maturity: to_len + remaining, ..coin };
                self.mm_create_coin(frame, eff, migrated)
                    .expect("outpoint unique across heights");
            } else {
                self.mm_counter_add(frame, CounterField::Exited, coin.amount);
                self.mm_mark_exit(frame, op);
            }
        }
    }

    /// Settle coins whose height reached their maturity threshold; claim
    /// settlements also exempt their creating section from future
    /// agreement checks.
    fn settle_sweep(&mut self, frame: &mut Frame) {
        let mut to_settle: Vec<(Height, Outpoint)> = Vec::new();
        for (h, state) in &self.heights {
            let len = state.ledger.chain_length;
            for (op, coin) in &state.ledger.utxos {
                if !coin.settled && coin.maturity <= len {
                    to_settle.push((*h, *op));
                }
            }
        }
        for (h, op) in to_settle {
            self.mm_settle_coin(frame, h, op);
            if let Some(section) = self.claim_coin_section.get(&op) {
                self.settled_exempt.insert(*section);
            }
        }
    }

    /// Find agreement objections whose disputed claims accumulated the
    /// required confirmations: mark them lapsed (sticky) and report the
    /// earliest affected position for replay.
    fn scan_new_lapses(&mut self) -> Option<u64> {
        let current = self.main.len() as u64;
        let mut earliest: Option<u64> = None;
        let mut newly: Vec<(Digest, Height, u32)> = Vec::new();
        for ((q, y, sid), v) in &self.verdicts {
            let SectionId::Claims { offset_log2 } = sid else { continue };
            if *v != Verdict::RejectWeak(Rule::ClaimMismatch) {
                continue;
            }
            let key = (self.main[*q as usize], *y, *offset_log2);
            if self.lapsed.contains(&key) {
                continue;
            }
            let z = u64::from(*y) + (1u64 << offset_log2);
            let required = required_confirmations(&self.params, z as Height);
            let mut confs = 0u64;
            for q2 in (q + 1)..current {
                match self.verdicts.get(&(q2, *y, SectionId::Tx)) {
                    Some(v2) if !v2.is_strong() => confs += 1,
                    _ => {}
                }
            }
            if confs >= required {
                newly.push(key);
                earliest = Some(earliest.map_or(*q, |e| e.min(*q)));
            }
        }
        for key in newly {
            self.lapsed.insert(key);
        }
        earliest
    }

    // ------------------------------------------------------------------
    // Cutoff adjustment
    // ------------------------------------------------------------------

    /// Change this observer's cutoff. Lowering needs no help: stored proofs
    /// are truncated to the new coverage. Raising requires a serving peer
    /// whose cutoff is at least the new one; the newly served tree roots are
    /// authenticated by folding back onto each block's stored stream tail,
    /// and the sub-block bodies against those roots, so nothing is taken on
    /// trust. Either way the whole chain replays at the new coverage;
    /// already-settled value keeps its agreement exemptions.
    pub fn adjust_cutoff(
        &mut self,
        new_cutoff: Height,
        peer: Option<&ChainView>,
    ) -> Result<(), CutoffError> {
        if new_cutoff > self.params.max_height {
            return Err(CutoffError::AboveMax(new_cutoff));
        }
        if new_cutoff == self.cutoff {
            return Ok(());
        }
        if new_cutoff < self.cutoff {
            let ids: Vec<Digest> = self.blocks.keys().copied().collect();
            for id in ids {
                let stored = self.blocks.get(&id).expect("listed");
                let want = (new_cutoff.min(stored.header.top) + 1) as usize;
                if stored.subs.len() > want {
                    let stored = self.blocks.get_mut(&id).expect("listed");
                    stored.subs.truncate(want);
                    stored.proof = truncate_prefix(&stored.proof, want - 1)
                        .expect("shrinking an existing proof");
                    let report =
                        check_structure(&stored.header, &stored.subs, &self.params);
                    let h0 = u64::from(!report.tx_strong.contains_key(&0));
                    stored.structural = report;
                    let parent = stored.header.prev;
                    let parent_opt = self.blocks.get(&parent).map_or(0, |p| p.opt_h0);
                    let stored = self.blocks.get_mut(&id).expect("listed");
                    stored.opt_h0 = parent_opt + h0;
                }
            }
        } else {
            let peer = peer.ok_or(CutoffError::PeerRequired)?;
            if peer.cutoff < new_cutoff {
                return Err(CutoffError::PeerCutoffInsufficient);
            }
            let ids: Vec<Digest> = self.blocks.keys().copied().collect();
            for id in ids {
                let mine = self.blocks.get(&id).expect("listed");
                let want_cut = (new_cutoff.min(mine.header.top)) as usize;
                if mine.subs.len() > want_cut {
                    continue; // coverage already sufficient
                }
                let theirs = peer
                    .blocks
                    .get(&id)
                    .ok_or(CutoffError::PeerMissingBlock(id))?;
                debug_assert!(theirs.subs.len() > want_cut);
                let served = truncate_prefix(&theirs.proof, want_cut)
                    .map_err(|_| CutoffError::PeerMissingBlock(id))?;
                let have = mine.subs.len();
                let appended: Vec<Digest> = served.trees()[have..].to_vec();
                let extended = extend_prefix(&mine.proof, &appended, served.tail())
                    .map_err(|_| CutoffError::PeerServedUnauthenticated(id))?;
                let mut new_subs = mine.subs.clone();
                for (i, sub) in theirs.subs[have..=want_cut].iter().enumerate() {
                    if sub.digest() != extended.trees()[have + i] {
                        return Err(CutoffError::PeerServedUnauthenticated(id));
                    }
                    new_subs.push(sub.clone());
                }
                let header = mine.header.clone();
                let report = check_structure(&header, &new_subs, &self.params);
                let h0 = u64::from(!report.tx_strong.contains_key(&0));
                let parent_opt = self.blocks.get(&header.prev).map_or(0, |p| p.opt_h0);
                let stored = self.blocks.get_mut(&id).expect("listed");
                stored.subs = new_subs;
                stored.proof = extended;
                stored.structural = report;
                stored.opt_h0 = parent_opt + h0;
            }
        }

        self.cutoff = new_cutoff;
        self.eval_cache.clear();
        let ids = self.main.clone();
        self.pop_to(0);
        self.reset_base_state();
        for id in ids {
            self.commit_chain_block(id);
        }
        Ok(())
    }
}
