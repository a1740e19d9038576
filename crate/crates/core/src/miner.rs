//! Block assembly and miner behavior profiles.
//!
//! [`assemble_block`] is a pure function from a chain view plus a mempool to
//! a sealed block: it fills each height greedily by fee rate under that
//! height's byte budget, links every section to the assembler's current
//! chain tips, and mirrors every included move-down with the matching claims
//! in the destination sub-block of the *same* block, so an honest block is
//! always self-contained and self-consistent.
//!
//! [`Miner`] wraps a view, a mempool and a [`Behavior`]: honest miners emit
//! assembled blocks unchanged, while the adversarial profiles mutate the
//! block just before sealing (planting unmatched claims, overshooting the
//! claim budget, or corrupting upper sub-blocks) to exercise the defense
//! rules from the validation layer.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::consensus::view::{ChainView, ReceiveError, ReceiveOutcome};
use crate::consensus::{check_pow, size_budget, Block, BlockPrefix, CoinbaseDecl, Header, SubBlock};
use crate::hashtree::{hash, Digest};
use crate::ledger::{
    Address, Claim, Keypair, LedgerError, Outpoint, Transaction, TxInput, TxKind, TxOutput,
};
use crate::params::Height;

const FORGED_CLAIM_TAG: &[u8] = b"forged-claim-source";
const VOID_INPUT_TAG: &[u8] = b"void-input";

/// Why a transaction was refused admission to a mempool.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MempoolError {
    #[error("transaction height {height} is above the owner's cutoff {cutoff}")]
    AboveCutoff { height: Height, cutoff: Height },
    #[error("transaction fails stateless checks: {0}")]
    Malformed(#[from] LedgerError),
}

/// Why assembly failed. Assembly is total for honest configurations; the
/// only failure is a coinbase declared below an included claim's source,
/// which the structural rules would reject outright.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssembleError {
    #[error("coinbase height {coinbase} is below included claim source {max_source}")]
    CoinbaseHeightTooLow { coinbase: Height, max_source: Height },
}

/// Pending transactions, grouped by the height whose ledger holds their
/// inputs and keyed by txid for deduplication. Admission checks only
/// stateless validity and the owner's cutoff; transactions that are not
/// currently spendable stay pooled and are skipped at assembly until a
/// reorg or settlement makes them live.
#[derive(Debug, Clone, Default)]
pub struct Mempool {
    by_height: BTreeMap<Height, BTreeMap<Digest, Transaction>>,
}

impl Mempool {
    pub fn new() -> Mempool {
        Mempool::default()
    }

    pub fn insert(
        &mut self,
        tx: Transaction,
        cutoff: Height,
        max_height: Height,
    ) -> Result<(), MempoolError> {
        if tx.height > cutoff {
            return Err(MempoolError::AboveCutoff { height: tx.height, cutoff });
        }
        tx.check_stateless(tx.height, max_height)?;
        self.by_height.entry(tx.height).or_default().insert(tx.txid(), tx);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_height.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pending transactions at one height, in txid order.
    pub fn at_height(&self, height: Height) -> impl Iterator<Item = &Transaction> {
        self.by_height.get(&height).into_iter().flat_map(|m| m.values())
    }

    /// Drop transactions whose effects are already live on the view's chain:
    /// a created output (or, for move-downs, the claim coin mirroring output
    /// zero) exists in some ledger. Conflicted-but-unconfirmed transactions
    /// stay pooled so a reorg can revive them.
    pub fn prune_included(&mut self, view: &ChainView) {
        for txs in self.by_height.values_mut() {
            txs.retain(|txid, tx| {
                let marker = match tx.kind {
                    TxKind::MoveDown { .. } => match tx.outputs.first() {
                        Some(out) => Claim {
                            recipient: out.address.clone(),
                            amount: out.amount,
                            source_height: tx.height,
                            matching_txid: *txid,
                            output_index: 0,
                        }
                        .coin_outpoint(),
                        None => return true,
                    },
                    _ => {
                        if tx.outputs.is_empty() {
                            return true;
                        }
                        Outpoint { txid: *txid, index: 0 }
                    }
                };
                view.find_coin(&marker).is_none()
            });
        }
        self.by_height.retain(|_, txs| !txs.is_empty());
    }
}

/// Recompute the stream commitment over the sub-blocks and grind the nonce
/// (from zero, deterministically) until the header id meets the difficulty.
pub fn seal_block(block: &mut Block, difficulty_bits: u32) {
    block.header.stream_root = block.compute_stream_root();
    block.header.nonce = 0;
    while !check_pow(&block.header.id(), difficulty_bits) {
        block.header.nonce += 1;
    }
}

fn link_counter(tip: Option<u64>, index: u64) -> u32 {
    let counter = match tip {
        Some(t) => index - 1 - t,
        None => index,
    };
    u32::try_from(counter).expect("chain position fits a drop counter")
}

/// Greedy candidate order: fee per byte descending (compared exactly by
/// cross-multiplication), txid ascending on ties.
fn fee_rate_order(a: &Transaction, b: &Transaction) -> std::cmp::Ordering {
    let (fee_a, fee_b) = (a.fee().unwrap_or(0), b.fee().unwrap_or(0));
    let (len_a, len_b) = (a.encoded_len() as u128, b.encoded_len() as u128);
    let left = u128::from(fee_a) * len_b;
    let right = u128::from(fee_b) * len_a;
    right.cmp(&left).then_with(|| a.txid().cmp(&b.txid()))
}

/// The claims a destination section must carry to mirror one move-down's
/// outputs, in output order.
pub fn mirror_claims(tx: &Transaction) -> Vec<Claim> {
    let txid = tx.txid();
    tx.outputs
        .iter()
        .enumerate()
        .map(|(i, out)| Claim {
            recipient: out.address.clone(),
            amount: out.amount,
            source_height: tx.height,
            matching_txid: txid,
            output_index: i as u32,
        })
        .collect()
}

/// Assemble the next block on `view`'s chain from `mempool`, paying subsidy
/// plus collected fees to `coinbase_recipient` at `coinbase_height`.
///
/// Selection is greedy per height (fees weighted by encoded size, txid as
/// tiebreak) under each sub-block's byte budget. A move-down is admitted
/// only together with its full claim mirror in the destination sub-block:
/// if the mirror does not fit the destination's remaining bytes, or would
/// push cumulative claims past the subsidy-plus-fees cap at any height, the
/// move-down is skipped. Every included transaction is checked spendable
/// against the view's ledgers, and no two included transactions spend the
/// same coin.
pub fn assemble_block(
    view: &ChainView,
    mempool: &Mempool,
    coinbase_recipient: Address,
    coinbase_height: Height,
) -> Result<Block, AssembleError> {
    let params = view.params();
    let top = view.cutoff();
    let index = view.chain_length();
    let prev = view.tip().unwrap_or(Digest::ZERO);
    let scheme = view.scheme().clone();

    let mut subs: Vec<SubBlock> = (0..=top)
        .map(|y| {
            let mut sub = SubBlock::empty(y, params.max_height);
            sub.tx_section.drop_count = link_counter(view.lineage_tip_pos(y), index);
            for cs in &mut sub.claim_sections {
                cs.drop_count = link_counter(view.claim_tip_pos(y, cs.offset_log2), index);
            }
            sub
        })
        .collect();

    let mut used: Vec<u64> = subs.iter().map(|s| s.encoded_len() as u64).collect();
    let budget: Vec<u64> = (0..=top).map(|y| size_budget(params, y)).collect();
    let mut fees: Vec<u64> = vec![0; top as usize + 1];
    let mut claimed: Vec<u64> = vec![0; top as usize + 1];
    let mut spent_inputs: Vec<BTreeSet<Outpoint>> = vec![BTreeSet::new(); top as usize + 1];
    let mut max_claim_source: Option<Height> = None;

    // Cumulative claim cap: adding `amount` of claims at `dest` must keep
    // claims(0..=y) <= subsidy + fees(0..=y) at every y >= dest. Fees added
    // later only loosen the bound, so checking against current fees is safe.
    let claim_cap_ok = |fees: &[u64], claimed: &[u64], dest: usize, amount: u64| -> bool {
        let mut cum_fees: u128 = fees[..dest].iter().map(|f| u128::from(*f)).sum();
        let mut cum_claims: u128 = claimed[..dest].iter().map(|c| u128::from(*c)).sum();
        for y in dest..fees.len() {
            cum_fees += u128::from(fees[y]);
            cum_claims += u128::from(claimed[y]);
            if cum_claims + u128::from(amount) > u128::from(params.subsidy) + cum_fees {
                return false;
            }
        }
        true
    };

    for y in 0..=top {
        let Some(ledger) = view.ledger(y) else { continue };
        let mut candidates: Vec<&Transaction> = mempool
            .at_height(y)
            .filter(|tx| tx.check_stateless(y, params.max_height).is_ok())
            .collect();
        candidates.sort_by(|a, b| fee_rate_order(a, b));

        'next_tx: for tx in candidates {
            let yi = y as usize;
            let tx_len = tx.encoded_len() as u64;
            if used[yi] + tx_len > budget[yi] {
                continue;
            }
            let txid = tx.txid();
            for input in &tx.inputs {
                if spent_inputs[yi].contains(&input.outpoint) {
                    continue 'next_tx;
                }
                if ledger.check_spend(input, &txid, scheme.as_ref()).is_err() {
                    continue 'next_tx;
                }
            }
            // Skip transactions whose outputs already exist somewhere: they
            // are on the live chain (or collide), so re-inclusion would fail.
            let already_live = match tx.kind {
                TxKind::MoveDown { .. } => mirror_claims(tx)
                    .first()
                    .is_some_and(|c| view.find_coin(&c.coin_outpoint()).is_some()),
                _ => (0..tx.outputs.len())
                    .any(|i| view.find_coin(&Outpoint { txid, index: i as u32 }).is_some()),
            };
            if already_live {
                continue;
            }

            let fee = tx.fee().expect("stateless check guarantees a fee");
            if let TxKind::MoveDown { offset_log2 } = tx.kind {
                let dest = tx.dest_height() as usize;
                let mirror = mirror_claims(tx);
                let mirror_len: u64 = mirror.iter().map(|c| c.encoded_len() as u64).sum();
                if used[dest] + mirror_len > budget[dest] {
                    continue;
                }
                let moved = tx.output_total().expect("stateless check bounds outputs");
                if !claim_cap_ok(&fees, &claimed, dest, moved) {
                    continue;
                }
                let section = subs[dest]
                    .claim_sections
                    .iter_mut()
                    .find(|c| c.offset_log2 == offset_log2)
                    .expect("move-down offsets always map to a claim section below");
                section.claims.extend(mirror);
                used[dest] += mirror_len;
                claimed[dest] += moved;
                max_claim_source = max_claim_source.max(Some(y));
            }

            for input in &tx.inputs {
                spent_inputs[yi].insert(input.outpoint);
            }
            subs[yi].tx_section.txs.push(tx.clone());
            used[yi] += tx_len;
            fees[yi] += fee;
        }
    }

    debug_assert!(
        (0..=top as usize).all(|y| used[y] == subs[y].encoded_len() as u64),
        "incremental size accounting must match real encoded lengths"
    );

    if let Some(max_source) = max_claim_source {
        if max_source > coinbase_height {
            return Err(AssembleError::CoinbaseHeightTooLow {
                coinbase: coinbase_height,
                max_source,
            });
        }
    }

    let total_fees: u64 = fees.iter().sum();
    let mut block = Block {
        header: Header {
            index,
            prev,
            top,
            coinbase: CoinbaseDecl {
                height: coinbase_height,
                recipient: coinbase_recipient,
                amount: params.subsidy + total_fees,
            },
            stream_root: Digest::ZERO,
            nonce: 0,
        },
        subs,
    };
    seal_block(&mut block, params.difficulty_bits);
    Ok(block)
}

/// How a miner behaves when producing blocks.
///
/// Adversarial profiles mutate the honestly assembled block just before
/// sealing; otherwise the miner validates, links, and relays like any other
/// observer at its cutoff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Behavior {
    /// Assemble-and-sign, nothing else.
    Honest,
    /// Plant a fabricated claim (no matching move-down anywhere) at
    /// `(dest_height, offset_log2)` in the first block produced at index >=
    /// `start`, then keep that disputed claim chain alive for `sustain`
    /// blocks total by linking each new section to the previous one instead
    /// of the honest tip. Within-budget amounts make every objection weak,
    /// so the dispute is settled by chain growth and the lapse rule alone.
    FalseClaimer {
        start: u64,
        dest_height: Height,
        offset_log2: u32,
        amount: u64,
        sustain: u64,
    },
    /// Once, at the first block produced at index >= `at`: move
    /// `move_amount + 1` coins down from `source_height` while paying only
    /// `fee_fuel = move_amount` of fees at the destination, overshooting the
    /// cumulative claim cap by one and drawing a strong rejection.
    OverClaimer {
        at: u64,
        source_height: Height,
        offset_log2: u32,
        move_amount: u64,
    },
    /// Corrupt every produced block above `above`: insert a transaction
    /// spending a nonexistent coin into each higher sub-block. Heights
    /// `0..=above` remain fully valid, so low-cutoff observers accept the
    /// block while higher observers reject exactly the corrupted sections.
    InvalidUpper { above: Height },
}

/// One mining participant: a chain view at its cutoff, a mempool, keys, a
/// relative hashrate weight for the production schedule, and a behavior.
#[derive(Clone)]
pub struct Miner {
    pub keys: Keypair,
    pub weight: u64,
    pub behavior: Behavior,
    pub view: ChainView,
    pub mempool: Mempool,
    /// Tip position of this miner's own disputed claim branch, while one is
    /// being pressed.
    dispute_tip: Option<u64>,
    /// Disputed-branch blocks produced so far.
    dispute_spent: u64,
    /// One-shot behaviors arm only once.
    fired: bool,
}

impl Miner {
    pub fn new(keys: Keypair, weight: u64, behavior: Behavior, view: ChainView) -> Miner {
        assert!(weight > 0, "a miner with zero weight never produces");
        Miner {
            keys,
            weight,
            behavior,
            view,
            mempool: Mempool::new(),
            dispute_tip: None,
            dispute_spent: 0,
            fired: false,
        }
    }

    pub fn id(&self) -> Digest {
        self.keys.id
    }

    pub fn cutoff(&self) -> Height {
        self.view.cutoff()
    }

    /// Address this miner pays its coinbases to: static at its cutoff.
    pub fn coinbase_address(&self) -> Address {
        Address::static_at(self.keys.id, self.view.cutoff())
    }

    pub fn submit_tx(&mut self, tx: Transaction) -> Result<(), MempoolError> {
        let (cutoff, max_height) = (self.view.cutoff(), self.view.params().max_height);
        self.mempool.insert(tx, cutoff, max_height)
    }

    pub fn receive(&mut self, prefix: BlockPrefix) -> Result<ReceiveOutcome, ReceiveError> {
        self.view.receive_block(prefix)
    }

    /// Assemble (and, for adversarial behaviors, mutate) the next block.
    /// The caller decides when this miner wins the production race and is
    /// responsible for feeding the block back through [`Miner::receive`].
    pub fn produce(&mut self) -> Result<Block, AssembleError> {
        let mut block = assemble_block(
            &self.view,
            &self.mempool,
            self.coinbase_address(),
            self.view.cutoff(),
        )?;
        if self.apply_behavior(&mut block) {
            seal_block(&mut block, self.view.params().difficulty_bits);
        }
        Ok(block)
    }

    /// Mutate the assembled block per this miner's behavior. Returns whether
    /// the block changed and needs resealing.
    fn apply_behavior(&mut self, block: &mut Block) -> bool {
        match self.behavior.clone() {
            Behavior::Honest => false,
            Behavior::FalseClaimer { start, dest_height, offset_log2, amount, sustain } => {
                if block.header.index < start || self.dispute_spent >= sustain {
                    return false;
                }
                self.plant_false_claim(block, dest_height, offset_log2, amount);
                true
            }
            Behavior::OverClaimer { at, source_height, offset_log2, move_amount } => {
                if block.header.index < at || self.fired {
                    return false;
                }
                let done = self.inject_overclaim(block, source_height, offset_log2, move_amount);
                self.fired = done;
                done
            }
            Behavior::InvalidUpper { above } => {
                if block.header.top <= above {
                    return false;
                }
                for y in (above + 1)..=block.header.top {
                    let seed = hash(&[
                        VOID_INPUT_TAG,
                        &self.keys.id.0,
                        &block.header.index.to_le_bytes(),
                        &y.to_le_bytes(),
                    ]);
                    block.subs[y as usize].tx_section.txs.push(Transaction {
                        height: y,
                        kind: TxKind::SameHeight,
                        inputs: vec![TxInput {
                            outpoint: Outpoint { txid: seed, index: 0 },
                            amount: 1,
                            signature: Vec::new(),
                        }],
                        outputs: vec![TxOutput {
                            address: Address::static_at(self.keys.id, y),
                            amount: 1,
                        }],
                    });
                }
                true
            }
        }
    }

    /// Plant or sustain a fabricated claim at `(dest, offset_log2)`. The
    /// first disputed section extends the honest tip (sharing its prefix);
    /// each later one links this miner's own previous section, keeping the
    /// disputed branch alive while everyone else objects.
    fn plant_false_claim(&mut self, block: &mut Block, dest: Height, offset_log2: u32, amount: u64) {
        let source = dest + (1u32 << offset_log2);
        // Clear any honest move-downs that would share the disputed claim
        // section, so the section carries exactly the fabricated claim.
        let src = &mut block.subs[source as usize].tx_section;
        let mut removed_fees = 0u64;
        src.txs.retain(|tx| {
            if tx.kind == (TxKind::MoveDown { offset_log2 }) {
                removed_fees += tx.fee().unwrap_or(0);
                false
            } else {
                true
            }
        });
        block.header.coinbase.amount -= removed_fees;

        let section = block.subs[dest as usize]
            .claim_sections
            .iter_mut()
            .find(|c| c.offset_log2 == offset_log2)
            .expect("destination carries a claim section for this offset");
        if self.dispute_spent == 0 {
            section.claims = vec![Claim {
                recipient: Address::static_at(self.keys.id, dest),
                amount,
                source_height: source,
                matching_txid: hash(&[FORGED_CLAIM_TAG, &self.keys.id.0]),
                output_index: 0,
            }];
        } else {
            section.claims.clear();
            let tip = self.dispute_tip.expect("dispute in progress has a tip");
            section.drop_count = link_counter(Some(tip), block.header.index);
        }
        self.dispute_tip = Some(block.header.index);
        self.dispute_spent += 1;
    }

    /// Build the one-shot budget overshoot: a fee-only spend at the
    /// destination funds `move_amount` of budget, and a move-down of
    /// `move_amount + 1` from `source` overshoots it by one. Claims mirror
    /// the move-down exactly, so the only objection is the budget cap, which
    /// is structural and strong. Returns false (leaving the block honest) if
    /// the miner lacks the coins to stage the attack.
    fn inject_overclaim(
        &mut self,
        block: &mut Block,
        source: Height,
        offset_log2: u32,
        move_amount: u64,
    ) -> bool {
        let dest = source - (1u32 << offset_log2);
        if source > block.header.top {
            return false;
        }
        let Some(fee_coin) = self.own_settled_coin(dest, move_amount) else { return false };
        let Some(move_coin) = self.own_settled_coin(source, move_amount + 1) else { return false };
        if fee_coin == move_coin {
            return false;
        }

        // Drop any honestly selected transactions competing for those coins.
        for sub in &mut block.subs {
            let mut removed_fees = 0u64;
            sub.tx_section.txs.retain(|tx| {
                let collides = tx
                    .inputs
                    .iter()
                    .any(|i| i.outpoint == fee_coin.0 || i.outpoint == move_coin.0);
                if collides {
                    removed_fees += tx.fee().unwrap_or(0);
                }
                !collides
            });
            block.header.coinbase.amount -= removed_fees;
        }

        let fee_fuel = move_amount;
        let mut fee_tx = Transaction {
            height: dest,
            kind: TxKind::SameHeight,
            inputs: vec![TxInput { outpoint: fee_coin.0, amount: fee_coin.1, signature: Vec::new() }],
            outputs: Vec::new(),
        };
        if fee_coin.1 > fee_fuel {
            fee_tx.outputs.push(TxOutput {
                address: Address::static_at(self.keys.id, dest),
                amount: fee_coin.1 - fee_fuel,
            });
        }
        fee_tx.inputs[0].signature = self.keys.sign(&fee_tx.txid());

        let mut move_tx = Transaction {
            height: source,
            kind: TxKind::MoveDown { offset_log2 },
            inputs: vec![TxInput {
                outpoint: move_coin.0,
                amount: move_coin.1,
                signature: Vec::new(),
            }],
            outputs: vec![TxOutput {
                address: Address::static_at(self.keys.id, dest),
                amount: move_amount + 1,
            }],
        };
        move_tx.inputs[0].signature = self.keys.sign(&move_tx.txid());
        let move_fee = move_coin.1 - (move_amount + 1);

        block.subs[dest as usize]
            .claim_sections
            .iter_mut()
            .find(|c| c.offset_log2 == offset_log2)
            .expect("destination carries a claim section for this offset")
            .claims
            .extend(mirror_claims(&move_tx));
        block.subs[dest as usize].tx_section.txs.push(fee_tx);
        block.subs[source as usize].tx_section.txs.push(move_tx);
        block.header.coinbase.amount += fee_fuel + move_fee;
        true
    }

    /// Smallest-outpoint settled coin this miner owns at `height` with at
    /// least `min` value.
    fn own_settled_coin(&self, height: Height, min: u64) -> Option<(Outpoint, u64)> {
        self.view.ledger(height)?.utxos.values().find_map(|c| {
            (c.owner.id == self.keys.id && c.settled && c.amount >= min)
                .then_some((c.outpoint, c.amount))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::view::PremineAllocation;
    use crate::consensus::{Rule, SectionId, Verdict};
    use crate::ledger::TestScheme;
    use crate::params::Params;
    use std::sync::Arc;

    fn test_params() -> Params {
        Params {
            base_size: 4096,
            base_conf: 3,
            max_height: 4,
            subsidy: 50,
            difficulty_bits: 1,
        }
    }

    fn fresh_view(cutoff: Height, premine: &[PremineAllocation]) -> ChainView {
        ChainView::new(test_params(), Arc::new(TestScheme), cutoff, premine)
    }

    fn alloc(kp: &Keypair, height: Height, amount: u64) -> PremineAllocation {
        PremineAllocation {
            owner: Address::static_at(kp.id, height),
            height,
            amount,
        }
    }

    fn premined_outpoint(kp: &Keypair, height: Height, amount: u64, seq: u32) -> Outpoint {
        crate::ledger::premine_outpoint(&Address::static_at(kp.id, height), height, amount, seq)
    }

    fn spend(
        kp: &Keypair,
        outpoint: Outpoint,
        amount: u64,
        height: Height,
        kind: TxKind,
        outs: &[(&Keypair, Height, u64)],
    ) -> Transaction {
        let mut tx = Transaction {
            height,
            kind,
            inputs: vec![TxInput { outpoint, amount, signature: Vec::new() }],
            outputs: outs
                .iter()
                .map(|(k, h, a)| TxOutput { address: Address::static_at(k.id, *h), amount: *a })
                .collect(),
        };
        tx.inputs[0].signature = kp.sign(&tx.txid());
        tx
    }

    fn deliver(block: &Block, miners: &mut [&mut Miner]) {
        for m in miners {
            let cutoff = m.view.cutoff();
            m.receive(block.to_prefix(cutoff)).expect("delivery accepted");
        }
    }

    #[test]
    fn empty_mempool_yields_coinbase_only_block() {
        let kp = Keypair::from_label("solo");
        let mut miner = Miner::new(kp, 1, Behavior::Honest, fresh_view(2, &[]));
        let block = miner.produce().expect("assembly succeeds");

        assert_eq!(block.header.index, 0);
        assert_eq!(block.header.top, 2);
        assert_eq!(block.header.coinbase.height, 2);
        assert_eq!(block.header.coinbase.amount, test_params().subsidy);
        for sub in &block.subs {
            assert!(sub.tx_section.txs.is_empty());
            assert!(sub.claim_sections.iter().all(|c| c.claims.is_empty()));
        }

        let cutoff = miner.view.cutoff();
        miner.receive(block.to_prefix(cutoff)).expect("own block accepted");
        assert_eq!(miner.view.h0_length(), 1);
        assert!(miner
            .view
            .position_verdicts(0)
            .iter()
            .all(|(_, _, v)| v.is_accept()));
    }

    #[test]
    fn movedown_gets_matching_claims_in_same_block() {
        let alice = Keypair::from_label("alice");
        let bob = Keypair::from_label("bob");
        let premine = [alloc(&alice, 2, 100)];
        let mut miner = Miner::new(
            Keypair::from_label("m"),
            1,
            Behavior::Honest,
            fresh_view(3, &premine),
        );

        let coin = premined_outpoint(&alice, 2, 100, 0);
        // Move 40 down one height (offset 2^0): destination is height 1.
        // The moved amount stays within the subsidy, which is all the claim
        // budget a fee paid at the *source* height can ever cover below it.
        let tx = spend(&alice, coin, 100, 2, TxKind::MoveDown { offset_log2: 0 }, &[(&bob, 1, 40)]);
        let txid = tx.txid();
        miner.submit_tx(tx).expect("admitted");

        let block = miner.produce().expect("assembly succeeds");
        assert_eq!(block.subs[2].tx_section.txs.len(), 1);
        let claims = &block.subs[1]
            .claim_sections
            .iter()
            .find(|c| c.offset_log2 == 0)
            .expect("offset present")
            .claims;
        assert_eq!(claims.len(), 1);
        assert_eq!(claims[0].matching_txid, txid);
        assert_eq!(claims[0].amount, 40);
        assert_eq!(claims[0].source_height, 2);
        assert_eq!(claims[0].output_index, 0);
        // Declared fee funds the coinbase beyond the subsidy.
        assert_eq!(block.header.coinbase.amount, test_params().subsidy + 60);

        let cutoff = miner.view.cutoff();
        miner.receive(block.to_prefix(cutoff)).expect("own block accepted");
        assert!(miner
            .view
            .position_verdicts(0)
            .iter()
            .all(|(_, _, v)| v.is_accept()));
        assert_eq!(
            miner.view.find_coin(&claims[0].coin_outpoint()).map(|(h, c)| (h, c.amount)),
            Some((1, 40))
        );
    }

    #[test]
    fn greedy_selection_matches_exhaustive_search() {
        // Uniform-size candidates: under a budget that fits a strict subset,
        // greedy-by-fee-rate picks exactly the exhaustive-search optimum.
        let mut params = test_params();
        params.base_size = 512;
        let users: Vec<Keypair> =
            (0..8).map(|i| Keypair::from_label(&format!("user{i}"))).collect();
        let fees = [7u64, 19, 3, 11, 19, 2, 13, 5];
        let premine: Vec<PremineAllocation> =
            users.iter().map(|kp| alloc(kp, 0, 1000)).collect();
        let mut view = ChainView::new(params.clone(), Arc::new(TestScheme), 0, &premine);

        let mut mempool = Mempool::new();
        let mut txs = Vec::new();
        for (i, kp) in users.iter().enumerate() {
            let coin = premined_outpoint(kp, 0, 1000, i as u32);
            let tx = spend(kp, coin, 1000, 0, TxKind::SameHeight, &[(kp, 0, 1000 - fees[i])]);
            mempool.insert(tx.clone(), 0, params.max_height).expect("admitted");
            txs.push(tx);
        }
        let tx_len = txs[0].encoded_len() as u64;
        assert!(
            txs.iter().all(|t| t.encoded_len() as u64 == tx_len),
            "candidates must be uniform-size for greedy to equal the optimum"
        );

        let block = assemble_block(&view, &mempool, Address::static_at(users[0].id, 0), 0)
            .expect("assembly succeeds");
        let chosen_fees: u64 =
            block.subs[0].tx_section.txs.iter().map(|t| t.fee().unwrap()).sum();

        // Exhaustive search over all subsets under the same byte budget.
        let empty = SubBlock::empty(0, params.max_height).encoded_len() as u64;
        let budget = size_budget(&params, 0);
        let mut best = 0u64;
        for mask in 0u32..(1 << txs.len()) {
            let count = mask.count_ones() as u64;
            if empty + count * tx_len > budget {
                continue;
            }
            let total: u64 = (0..txs.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| fees[i])
                .sum();
            best = best.max(total);
        }
        assert!(block.subs[0].tx_section.txs.len() < txs.len(), "budget must force exclusions");
        assert_eq!(chosen_fees, best, "greedy fill must match the exhaustive optimum");
        assert_eq!(block.header.coinbase.amount, params.subsidy + best);

        // The block it builds is accepted in full.
        view.receive_block(block.to_prefix(0)).expect("accepted");
        assert!(view.position_verdicts(0).iter().all(|(_, _, v)| v.is_accept()));
    }

    #[test]
    fn every_subblock_respects_its_byte_budget() {
        // Height 0 overflows with same-height spends; height 2 offers both
        // same-height spends and small move-downs whose mirrors compete for
        // height 0's leftover bytes. The budgets force exclusions on both
        // fronts: same-height spends that do not fit, and move-downs whose
        // mandatory mirror does not fit the destination.
        let mut params = test_params();
        params.base_size = 1024;
        let users: Vec<Keypair> =
            (0..10).map(|i| Keypair::from_label(&format!("bulk{i}"))).collect();
        let mut premine = Vec::new();
        for kp in &users {
            premine.push(alloc(kp, 0, 500));
            premine.push(alloc(kp, 2, 500));
        }
        let mut view = ChainView::new(params.clone(), Arc::new(TestScheme), 2, &premine);

        let mut mempool = Mempool::new();
        for (i, kp) in users.iter().enumerate() {
            let c0 = premined_outpoint(kp, 0, 500, (i * 2) as u32);
            let c2 = premined_outpoint(kp, 2, 500, (i * 2 + 1) as u32);
            let fee = 10 + i as u64;
            mempool
                .insert(spend(kp, c0, 500, 0, TxKind::SameHeight, &[(kp, 0, 500 - fee)]), 2, 4)
                .expect("admitted");
            let tx2 = if i % 2 == 0 {
                spend(kp, c2, 500, 2, TxKind::SameHeight, &[(kp, 2, 500 - fee)])
            } else {
                spend(kp, c2, 500, 2, TxKind::MoveDown { offset_log2: 1 }, &[(kp, 0, 2)])
            };
            mempool.insert(tx2, 2, 4).expect("admitted");
        }

        let block = assemble_block(&view, &mempool, Address::static_at(users[0].id, 2), 2)
            .expect("assembly succeeds");
        let included: usize = block.subs.iter().map(|s| s.tx_section.txs.len()).sum();
        assert!(included > 0, "something must fit");
        assert!(included < mempool.len(), "budget must force exclusions");
        for sub in &block.subs {
            assert!(
                sub.encoded_len() as u64 <= size_budget(&params, sub.height),
                "sub-block at height {} exceeds its budget",
                sub.height
            );
        }

        // Move-downs were admitted until the destination ran out of mirror
        // room; the rest were evicted despite source-side space remaining.
        let movedowns_in = block.subs[2]
            .tx_section
            .txs
            .iter()
            .filter(|t| matches!(t.kind, TxKind::MoveDown { .. }))
            .count();
        assert!(movedowns_in >= 1, "at least one move-down plus mirror must fit");
        assert!(movedowns_in < 5, "mirror bytes must evict some move-downs");
        // Every included move-down's claims made it into the same block.
        for sub in &block.subs {
            for tx in &sub.tx_section.txs {
                if let TxKind::MoveDown { offset_log2 } = tx.kind {
                    let dest = tx.dest_height() as usize;
                    let txid = tx.txid();
                    let section = block.subs[dest]
                        .claim_sections
                        .iter()
                        .find(|c| c.offset_log2 == offset_log2)
                        .expect("offset present");
                    assert_eq!(
                        section.claims.iter().filter(|c| c.matching_txid == txid).count(),
                        tx.outputs.len()
                    );
                }
            }
        }
        // And no claim rode along without its move-down.
        let mirrored: usize = block.subs.iter().flat_map(|s| &s.claim_sections).map(|c| c.claims.len()).sum();
        assert_eq!(mirrored, movedowns_in, "claims appear exactly with their move-downs");

        view.receive_block(block.to_prefix(2)).expect("accepted");
        assert!(view.position_verdicts(0).iter().all(|(_, _, v)| v.is_accept()));
    }

    #[test]
    fn assembly_is_self_consistent_over_a_run() {
        // An honest miner feeding itself always accepts its own sections.
        let alice = Keypair::from_label("alice");
        let premine = [alloc(&alice, 2, 500), alloc(&alice, 1, 300)];
        let mut miner = Miner::new(
            Keypair::from_label("m"),
            1,
            Behavior::Honest,
            fresh_view(3, &premine),
        );

        let c2 = premined_outpoint(&alice, 2, 500, 0);
        let c1 = premined_outpoint(&alice, 1, 300, 1);
        miner
            .submit_tx(spend(&alice, c2, 500, 2, TxKind::MoveDown { offset_log2: 1 }, &[(
                &alice, 0, 40,
            )]))
            .expect("admitted");
        miner
            .submit_tx(spend(&alice, c1, 300, 1, TxKind::MoveUp { target: 3 }, &[(&alice, 3, 290)]))
            .expect("admitted");

        for pos in 0..6u64 {
            let block = miner.produce().expect("assembly succeeds");
            let cutoff = miner.view.cutoff();
            miner.receive(block.to_prefix(cutoff)).expect("own block accepted");
            assert!(
                miner.view.position_verdicts(pos).iter().all(|(_, _, v)| v.is_accept()),
                "own block at {pos} must be fully accepted"
            );
            miner.mempool.prune_included(&miner.view);
        }
        assert_eq!(miner.view.h0_length(), 6);
        assert!(miner.mempool.is_empty(), "included transactions get pruned");
    }

    #[test]
    fn raising_cutoff_leaves_lower_subblocks_byte_identical() {
        // Two miners, same keys and mempool content at low heights, one at a
        // higher cutoff: the shared sub-blocks serialize identically.
        let alice = Keypair::from_label("alice");
        let premine = [alloc(&alice, 1, 200)];
        let kp = Keypair::from_label("m");
        let mut low = Miner::new(kp.clone(), 1, Behavior::Honest, fresh_view(2, &premine));
        let mut high = Miner::new(kp, 1, Behavior::Honest, fresh_view(4, &premine));

        // Shared history so both sit on the same chain.
        for _ in 0..3 {
            let block = high.produce().expect("assembly succeeds");
            deliver(&block, &mut [&mut low, &mut high]);
        }

        let coin = premined_outpoint(&alice, 1, 200, 0);
        let tx = spend(&alice, coin, 200, 1, TxKind::SameHeight, &[(&alice, 1, 150)]);
        low.submit_tx(tx.clone()).expect("admitted");
        high.submit_tx(tx).expect("admitted");

        let block_low = assemble_block(&low.view, &low.mempool, Address::static_at(low.id(), 0), 0)
            .expect("assembly succeeds");
        let block_high =
            assemble_block(&high.view, &high.mempool, Address::static_at(high.id(), 0), 0)
                .expect("assembly succeeds");
        for y in 0..=low.cutoff() as usize {
            let mut a = crate::codec::Writer::new();
            let mut b = crate::codec::Writer::new();
            block_low.subs[y].encode_to(&mut a);
            block_high.subs[y].encode_to(&mut b);
            assert_eq!(
                a.into_bytes(),
                b.into_bytes(),
                "sub-block at height {y} must not depend on the assembler's cutoff"
            );
        }
    }

    #[test]
    fn coinbase_below_claim_source_is_refused() {
        let alice = Keypair::from_label("alice");
        let premine = [alloc(&alice, 2, 100)];
        let view = fresh_view(3, &premine);
        let mut mempool = Mempool::new();
        let coin = premined_outpoint(&alice, 2, 100, 0);
        mempool
            .insert(
                spend(&alice, coin, 100, 2, TxKind::MoveDown { offset_log2: 0 }, &[(&alice, 1, 40)]),
                3,
                test_params().max_height,
            )
            .expect("admitted");

        let err = assemble_block(&view, &mempool, Address::static_at(alice.id, 0), 1)
            .expect_err("claim source above coinbase height must refuse assembly");
        assert_eq!(err, AssembleError::CoinbaseHeightTooLow { coinbase: 1, max_source: 2 });

        // At a coinbase height covering the source, the same call succeeds.
        assemble_block(&view, &mempool, Address::static_at(alice.id, 2), 2)
            .expect("coinbase at the claim source is enough");
    }

    #[test]
    fn double_spending_candidates_never_share_a_block() {
        let alice = Keypair::from_label("alice");
        let premine = [alloc(&alice, 0, 100)];
        let view = fresh_view(0, &premine);
        let coin = premined_outpoint(&alice, 0, 100, 0);
        let bob = Keypair::from_label("bob");
        let carol = Keypair::from_label("carol");

        let mut mempool = Mempool::new();
        let a = spend(&alice, coin, 100, 0, TxKind::SameHeight, &[(&bob, 0, 90)]);
        let b = spend(&alice, coin, 100, 0, TxKind::SameHeight, &[(&carol, 0, 80)]);
        mempool.insert(a, 0, test_params().max_height).expect("admitted");
        mempool.insert(b, 0, test_params().max_height).expect("admitted");

        let block = assemble_block(&view, &mempool, Address::static_at(alice.id, 0), 0)
            .expect("assembly succeeds");
        assert_eq!(block.subs[0].tx_section.txs.len(), 1, "only one spend of the coin fits");
        // The higher-fee conflict wins the greedy race.
        assert_eq!(block.subs[0].tx_section.txs[0].fee(), Some(20));
    }

    #[test]
    fn false_claim_is_objected_then_lapses_and_settles() {
        // A false claimer as sole producer: everyone (including its own
        // view) rejects the fabricated claim weakly, but sustained linking
        // keeps the branch alive until the objection lapses and the claim
        // coin settles.
        let attacker = Keypair::from_label("attacker");
        let mut miner = Miner::new(
            attacker.clone(),
            1,
            Behavior::FalseClaimer {
                start: 1,
                dest_height: 0,
                offset_log2: 1,
                amount: 39,
                sustain: 64,
            },
            fresh_view(3, &[]),
        );

        // Block 0 honest, block 1 plants the claim.
        for _ in 0..2 {
            let block = miner.produce().expect("assembly succeeds");
            let cutoff = miner.view.cutoff();
            miner.receive(block.to_prefix(cutoff)).expect("delivered");
        }
        assert_eq!(
            miner.view.verdict_of(1, 0, SectionId::Claims { offset_log2: 1 }),
            Some(Verdict::RejectWeak(Rule::ClaimMismatch)),
            "the planted claim draws the mismatch objection"
        );

        // Sustain: the dispute needs required(source=2) = 9 confirming
        // positions after the objection; produce them all ourselves.
        let mut lapsed_at = None;
        for pos in 2..=12u64 {
            let block = miner.produce().expect("assembly succeeds");
            let cutoff = miner.view.cutoff();
            miner.receive(block.to_prefix(cutoff)).expect("delivered");
            if miner.view.verdict_of(1, 0, SectionId::Claims { offset_log2: 1 })
                == Some(Verdict::Accept)
            {
                lapsed_at = Some(pos);
                break;
            }
        }
        assert_eq!(lapsed_at, Some(10), "objection lapses after nine sustained confirmations");
        assert_eq!(miner.view.metrics().lapse_adoptions, 1);

        // The lapse replay re-adopts the claim at its original chain
        // position, so its maturity threshold dates from the dispute's
        // start; the chain built while sustaining already covers it.
        fn claim_coins(view: &ChainView) -> Vec<(u64, bool)> {
            view.ledger(0)
                .expect("ledger present")
                .utxos
                .values()
                .filter(|c| matches!(c.origin, crate::ledger::CoinOrigin::Claim { .. }))
                .map(|c| (c.amount, c.settled))
                .collect()
        }
        assert_eq!(claim_coins(&miner.view), vec![(39, true)], "lapsed claim coin is settled");
        for _ in 0..3 {
            let block = miner.produce().expect("assembly succeeds");
            let cutoff = miner.view.cutoff();
            miner.receive(block.to_prefix(cutoff)).expect("delivered");
        }
        assert_eq!(claim_coins(&miner.view), vec![(39, true)], "and it stays settled");
    }

    #[test]
    fn overclaim_draws_a_strong_rejection_and_mints_nothing() {
        // Subsidy-free network, attacker premined 100 total. The overshoot
        // makes the whole destination-and-above content strongly invalid,
        // so visible supply never moves.
        let mut params = test_params();
        params.subsidy = 0;
        let attacker = Keypair::from_label("attacker");
        let premine = [alloc(&attacker, 0, 10), alloc(&attacker, 2, 90)];
        let view = ChainView::new(params.clone(), Arc::new(TestScheme), 3, &premine);
        let mut miner = Miner::new(
            attacker.clone(),
            1,
            Behavior::OverClaimer { at: 1, source_height: 2, offset_log2: 1, move_amount: 10 },
            view,
        );

        for _ in 0..2 {
            let block = miner.produce().expect("assembly succeeds");
            let cutoff = miner.view.cutoff();
            miner.receive(block.to_prefix(cutoff)).expect("delivered");
        }

        assert_eq!(
            miner.view.verdict_of(1, 0, SectionId::Tx),
            Some(Verdict::RejectStrong(Rule::ClaimBudget)),
            "claiming one past the budget is a structural, strong offense"
        );
        assert_eq!(
            miner.view.verdict_of(1, 2, SectionId::Tx),
            Some(Verdict::RejectStrong(Rule::ParentInvalid)),
            "the rejection cascades over the source height"
        );
        assert_eq!(miner.view.visible_supply(), 100, "no value created or destroyed");
        assert_eq!(miner.view.h0_length(), 1, "the offending block never counts at height 0");
    }

    #[test]
    fn upper_corruption_leaves_lower_heights_valid() {
        let attacker = Keypair::from_label("attacker");
        let mut miner = Miner::new(
            attacker,
            1,
            Behavior::InvalidUpper { above: 0 },
            fresh_view(2, &[]),
        );
        let mut observer = fresh_view(2, &[]);
        let mut low_observer = fresh_view(0, &[]);

        for pos in 0..4u64 {
            let block = miner.produce().expect("assembly succeeds");
            let cutoff = miner.view.cutoff();
            miner.receive(block.to_prefix(cutoff)).expect("delivered");
            observer.receive_block(block.to_prefix(2)).expect("delivered");
            low_observer.receive_block(block.to_prefix(0)).expect("delivered");

            assert_eq!(observer.verdict_of(pos, 0, SectionId::Tx), Some(Verdict::Accept));
            assert_eq!(
                observer.verdict_of(pos, 1, SectionId::Tx),
                Some(Verdict::RejectWeak(Rule::TxInvalid)),
                "corrupted heights draw weak rejections"
            );
            assert_eq!(
                observer.verdict_of(pos, 2, SectionId::Tx),
                Some(Verdict::RejectWeak(Rule::ParentInvalid)),
                "the weak rejection cascades upward"
            );
            assert_eq!(low_observer.verdict_of(pos, 0, SectionId::Tx), Some(Verdict::Accept));
        }
        assert_eq!(observer.h0_length(), 4, "height 0 advances despite the upper corruption");
        assert_eq!(low_observer.h0_length(), 4);
        assert_eq!(
            observer.state_digest_upto(0),
            low_observer.state_digest_upto(0),
            "low observers and full observers agree on the valid prefix"
        );
    }

    #[test]
    fn mempool_rejects_above_cutoff_and_malformed() {
        let alice = Keypair::from_label("alice");
        let mut mempool = Mempool::new();
        let coin = premined_outpoint(&alice, 3, 100, 0);
        let tx = spend(&alice, coin, 100, 3, TxKind::SameHeight, &[(&alice, 3, 100)]);
        assert_eq!(
            mempool.insert(tx.clone(), 2, 4),
            Err(MempoolError::AboveCutoff { height: 3, cutoff: 2 })
        );
        mempool.insert(tx, 3, 4).expect("inside the cutoff it is admitted");

        let zero_out = Transaction {
            height: 0,
            kind: TxKind::SameHeight,
            inputs: vec![TxInput { outpoint: coin, amount: 1, signature: Vec::new() }],
            outputs: vec![TxOutput { address: Address::static_at(alice.id, 0), amount: 0 }],
        };
        assert!(matches!(mempool.insert(zero_out, 3, 4), Err(MempoolError::Malformed(_))));
        assert_eq!(mempool.len(), 1);
    }
}
