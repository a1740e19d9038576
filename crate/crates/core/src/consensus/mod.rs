//! Block structures and the pure (state-free) consensus rules.
//!
//! A block is a header plus one sub-block per height `0..=top`. Each
//! sub-block carries a transaction section and one claim section per allowed
//! offset; every section has a drop counter that links it into that height's
//! per-height chain, confirming one earlier block's section and dropping the
//! sections of the blocks in between. Sub-block roots are folded into a
//! stream commitment so any prefix of heights can be served and
//! authenticated independently — that is what lets observers with different
//! cutoffs share one header chain.
//!
//! This module owns everything computable from block bytes and headers
//! alone: encodings, digests, size budgets, drop-link arithmetic, claim
//! budgets, mirror comparison, structural verdicts, and the fork-choice
//! comparator. Stateful validation (ledgers, chains, reorgs) lives in
//! [`view`](crate::consensus::view).

pub mod view;

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{Codec, CodecError, Reader, Writer};
use crate::hashtree::{
    hash, merkle_root, prefix_proof, stream_root, verify_prefix, Digest, StreamPrefix,
};
use crate::ledger::{Address, Claim, Transaction, TxKind};
use crate::params::{Height, Params};

const COMPONENT_TAG: u8 = 0x03;
const HEADER_TAG: u8 = 0x05;
const COINBASE_TAG: u8 = 0x08;
const STATE_TAG: u8 = 0x09;

/// Byte budget of the sub-block at `height`: the base size at height 0,
/// doubling per height above it, so the whole block through height `c`
/// costs `base * 2^c` bytes — an observer at cutoff `c` downloads at most
/// twice what an observer at `c - 1` does.
pub fn size_budget(params: &Params, height: Height) -> u64 {
    if height == 0 {
        params.base_size
    } else {
        params.base_size << (height - 1)
    }
}

/// Total byte budget of heights `0..=cutoff`.
pub fn cumulative_budget(params: &Params, cutoff: Height) -> u64 {
    params.base_size << cutoff
}

/// Confirmations required before value sourced at `source` settles at its
/// destination: one base interval per height of the source, plus one.
pub fn required_confirmations(params: &Params, source: Height) -> u64 {
    (u64::from(source) + 1) * params.base_conf
}

/// What a section's drop counter points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkTarget {
    /// Counter equals the block index: every earlier section at this height
    /// is dropped and the chain restarts here.
    Fresh,
    /// The section of the block at this absolute index is confirmed; blocks
    /// between it and the linking block are dropped at this height.
    Position(u64),
}

/// Resolve a drop counter. A section in block `index` with counter `drops`
/// confirms the section of block `index - drops - 1`; a counter equal to
/// `index` restarts the chain, and anything larger reaches before genesis
/// and is invalid.
pub fn confirm_target(index: u64, drops: u32) -> Option<LinkTarget> {
    let d = u64::from(drops);
    if d > index {
        None
    } else if d == index {
        Some(LinkTarget::Fresh)
    } else {
        Some(LinkTarget::Position(index - d - 1))
    }
}

/// Offsets (as exponents) of the claim sections a sub-block at `height` must
/// carry: every power of two that stays within the protocol's height range.
pub fn allowed_offsets(height: Height, max_height: Height) -> Vec<u32> {
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let Some(offset) = 1u64.checked_shl(k) else { break };
        if u64::from(height) + offset > u64::from(max_height) {
            break;
        }
        out.push(k);
        k += 1;
    }
    out
}

/// Section of transactions at one height of one block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TxSection {
    pub drop_count: u32,
    pub txs: Vec<Transaction>,
}

impl Codec for TxSection {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.drop_count);
        w.put_vec(&self.txs);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(TxSection { drop_count: r.get_u32()?, txs: r.get_vec()? })
    }
}

impl TxSection {
    pub fn component_digest(&self) -> Digest {
        let leaves: Vec<Vec<u8>> = self.txs.iter().map(|t| t.to_bytes()).collect();
        let root = merkle_root(&leaves);
        let mut w = Writer::new();
        w.put_u8(0);
        w.put_u32(self.drop_count);
        w.put_digest(&root);
        hash(&[&[COMPONENT_TAG], &w.into_bytes()])
    }
}

/// Section of claims at one height, importing value from the height
/// `2^offset_log2` above it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimSection {
    pub offset_log2: u32,
    pub drop_count: u32,
    pub claims: Vec<Claim>,
}

impl Codec for ClaimSection {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.offset_log2);
        w.put_u32(self.drop_count);
        w.put_vec(&self.claims);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ClaimSection {
            offset_log2: r.get_u32()?,
            drop_count: r.get_u32()?,
            claims: r.get_vec()?,
        })
    }
}

impl ClaimSection {
    pub fn component_digest(&self) -> Digest {
        let leaves: Vec<Vec<u8>> = self.claims.iter().map(|c| c.to_bytes()).collect();
        let root = merkle_root(&leaves);
        let mut w = Writer::new();
        w.put_u8(1);
        w.put_u32(self.offset_log2);
        w.put_u32(self.drop_count);
        w.put_digest(&root);
        hash(&[&[COMPONENT_TAG], &w.into_bytes()])
    }

    /// Source height for claims of this section when it sits at `height`.
    pub fn source_height(&self, height: Height) -> u64 {
        u64::from(height) + 1u64.checked_shl(self.offset_log2).unwrap_or(u64::MAX)
    }
}

/// One height's slice of a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubBlock {
    pub height: Height,
    pub tx_section: TxSection,
    pub claim_sections: Vec<ClaimSection>,
}

impl SubBlock {
    pub fn empty(height: Height, max_height: Height) -> SubBlock {
        SubBlock {
            height,
            tx_section: TxSection::default(),
            claim_sections: allowed_offsets(height, max_height)
                .into_iter()
                .map(|k| ClaimSection { offset_log2: k, drop_count: 0, claims: Vec::new() })
                .collect(),
        }
    }

    pub fn encode_to(&self, w: &mut Writer) {
        self.tx_section.encode(w);
        w.put_vec(&self.claim_sections);
    }

    /// Height is positional in the stream, so decoding takes it as context.
    pub fn decode_at(height: Height, r: &mut Reader<'_>) -> Result<SubBlock, CodecError> {
        Ok(SubBlock {
            height,
            tx_section: TxSection::decode(r)?,
            claim_sections: r.get_vec()?,
        })
    }

    pub fn encoded_len(&self) -> usize {
        let mut w = Writer::new();
        self.encode_to(&mut w);
        w.into_bytes().len()
    }

    /// Stream fold over the component digests (transaction section first,
    /// then claim sections in order). This is the tree root committed at
    /// this height's position of the block stream.
    pub fn digest(&self) -> Digest {
        let mut components = vec![self.tx_section.component_digest()];
        components.extend(self.claim_sections.iter().map(|c| c.component_digest()));
        stream_root(&components).expect("component list is never empty").0
    }
}

/// Miner's payment declaration, carried in the header so the coinbase
/// height is visible to every observer regardless of cutoff. The coin it
/// creates is attached to this block's chain entry at `height` and settles
/// like any other value sourced at that height.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoinbaseDecl {
    pub height: Height,
    pub recipient: Address,
    pub amount: u64,
}

impl Codec for CoinbaseDecl {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.height);
        self.recipient.encode(w);
        w.put_u64(self.amount);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(CoinbaseDecl {
            height: r.get_u32()?,
            recipient: Address::decode(r)?,
            amount: r.get_u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub index: u64,
    pub prev: Digest,
    pub top: Height,
    pub coinbase: CoinbaseDecl,
    pub stream_root: Digest,
    pub nonce: u64,
}

impl Codec for Header {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.index);
        w.put_digest(&self.prev);
        w.put_u32(self.top);
        self.coinbase.encode(w);
        w.put_digest(&self.stream_root);
        w.put_u64(self.nonce);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Header {
            index: r.get_u64()?,
            prev: r.get_digest()?,
            top: r.get_u32()?,
            coinbase: CoinbaseDecl::decode(r)?,
            stream_root: r.get_digest()?,
            nonce: r.get_u64()?,
        })
    }
}

impl Header {
    pub fn id(&self) -> Digest {
        hash(&[&[HEADER_TAG], &self.to_bytes()])
    }

    /// Outpoint of the coinbase coin this header declares.
    pub fn coinbase_outpoint(&self) -> crate::ledger::Outpoint {
        crate::ledger::Outpoint { txid: hash(&[&[COINBASE_TAG], &self.id().0]), index: 0 }
    }
}

pub fn leading_zero_bits(d: &Digest) -> u32 {
    let mut bits = 0;
    for byte in d.0 {
        if byte == 0 {
            bits += 8;
        } else {
            bits += byte.leading_zeros();
            break;
        }
    }
    bits
}

pub fn check_pow(id: &Digest, difficulty_bits: u32) -> bool {
    leading_zero_bits(id) >= difficulty_bits
}

/// A complete block: header plus sub-blocks for every height `0..=top`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: Header,
    pub subs: Vec<SubBlock>,
}

impl Block {
    pub fn id(&self) -> Digest {
        self.header.id()
    }

    pub fn stream_trees(&self) -> Vec<Digest> {
        self.subs.iter().map(|s| s.digest()).collect()
    }

    pub fn compute_stream_root(&self) -> Digest {
        stream_root(&self.stream_trees()).expect("blocks have at least height 0").0
    }

    /// Serve the prefix of this block an observer at `cutoff` needs: the
    /// sub-blocks up to `min(top, cutoff)` plus the stream proof for them.
    pub fn to_prefix(&self, cutoff: Height) -> BlockPrefix {
        let cut = cutoff.min(self.header.top) as usize;
        let trees = self.stream_trees();
        BlockPrefix {
            header: self.header.clone(),
            subs: self.subs[..=cut].to_vec(),
            proof: prefix_proof(&trees, cut).expect("cut bounded by top"),
        }
    }
}

impl Codec for Block {
    fn encode(&self, w: &mut Writer) {
        self.header.encode(w);
        w.put_u32(self.subs.len() as u32);
        for sub in &self.subs {
            sub.encode_to(w);
        }
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let header = Header::decode(r)?;
        let count = r.get_u32()?;
        if count > r.remaining() as u32 && count > 1 << 16 {
            return Err(CodecError::LengthLimit(u64::from(count)));
        }
        let mut subs = Vec::with_capacity(count as usize);
        for height in 0..count {
            subs.push(SubBlock::decode_at(height, r)?);
        }
        Ok(Block { header, subs })
    }
}

/// The transmissible form of a block: header, the sub-blocks visible to the
/// receiver, and the stream proof authenticating exactly those sub-blocks
/// against the header's stream root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPrefix {
    pub header: Header,
    pub subs: Vec<SubBlock>,
    pub proof: StreamPrefix,
}

impl Codec for BlockPrefix {
    fn encode(&self, w: &mut Writer) {
        self.header.encode(w);
        w.put_u32(self.subs.len() as u32);
        for sub in &self.subs {
            sub.encode_to(w);
        }
        w.put_bytes(&self.proof.to_bytes());
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let header = Header::decode(r)?;
        let count = r.get_u32()?;
        if count > r.remaining() as u32 && count > 1 << 16 {
            return Err(CodecError::LengthLimit(u64::from(count)));
        }
        let mut subs = Vec::with_capacity(count as usize);
        for height in 0..count {
            subs.push(SubBlock::decode_at(height, r)?);
        }
        let proof_bytes = r.get_bytes()?;
        let proof = StreamPrefix::from_bytes(&proof_bytes)
            .map_err(|_| CodecError::InvalidTag { what: "stream proof", tag: 0 })?;
        Ok(BlockPrefix { header, subs, proof })
    }
}

impl BlockPrefix {
    pub fn id(&self) -> Digest {
        self.header.id()
    }

    /// Highest height carried by this prefix.
    pub fn visible(&self) -> Height {
        (self.subs.len() as u32).saturating_sub(1)
    }

    /// Authenticate the carried sub-blocks against the header: the proof
    /// must re-fold to the header's stream root, cover exactly the carried
    /// sub-blocks, and each sub-block must hash to its committed tree root.
    /// A full-stream proof must coincide with the header's top.
    pub fn authenticate(&self) -> bool {
        if self.subs.is_empty() || self.subs.len() != self.proof.trees().len() {
            return false;
        }
        if !verify_prefix(&self.header.stream_root, &self.proof) {
            return false;
        }
        if self.proof.is_full() != (self.visible() == self.header.top) {
            return false;
        }
        if self.visible() > self.header.top {
            return false;
        }
        self.subs.iter().enumerate().all(|(i, sub)| {
            sub.height == i as u32 && sub.digest() == self.proof.trees()[i]
        })
    }
}

/// Identifier of each independently judged piece of a block at one height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SectionId {
    Tx,
    Claims { offset_log2: u32 },
}

/// Consensus rules a verdict can cite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rule {
    Pow,
    PrefixAuth,
    Structure,
    SizeBudget,
    DropBounds,
    ClaimOffsets,
    CoinbaseHeight,
    CoinbaseAmount,
    TxInvalid,
    ClaimBudget,
    ClaimMismatch,
    ParentInvalid,
}

impl Rule {
    pub fn to_u8(self) -> u8 {
        match self {
            Rule::Pow => 0,
            Rule::PrefixAuth => 1,
            Rule::Structure => 2,
            Rule::SizeBudget => 3,
            Rule::DropBounds => 4,
            Rule::ClaimOffsets => 5,
            Rule::CoinbaseHeight => 6,
            Rule::CoinbaseAmount => 7,
            Rule::TxInvalid => 8,
            Rule::ClaimBudget => 9,
            Rule::ClaimMismatch => 10,
            Rule::ParentInvalid => 11,
        }
    }

    pub fn from_u8(v: u8) -> Option<Rule> {
        Some(match v {
            0 => Rule::Pow,
            1 => Rule::PrefixAuth,
            2 => Rule::Structure,
            3 => Rule::SizeBudget,
            4 => Rule::DropBounds,
            5 => Rule::ClaimOffsets,
            6 => Rule::CoinbaseHeight,
            7 => Rule::CoinbaseAmount,
            8 => Rule::TxInvalid,
            9 => Rule::ClaimBudget,
            10 => Rule::ClaimMismatch,
            11 => Rule::ParentInvalid,
            _ => return None,
        })
    }
}

/// Outcome of judging one section. Strong rejections follow from the block
/// bytes and header chain alone, so every observer that can see the section
/// reaches them and they never flip. Weak rejections depend on ledger state
/// or timing and may be revisited (for instance when an agreement objection
/// lapses after the disputed value settles).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    RejectWeak(Rule),
    RejectStrong(Rule),
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        matches!(self, Verdict::Accept)
    }

    pub fn is_strong(self) -> bool {
        matches!(self, Verdict::RejectStrong(_))
    }

    pub fn rule(self) -> Option<Rule> {
        match self {
            Verdict::Accept => None,
            Verdict::RejectWeak(r) | Verdict::RejectStrong(r) => Some(r),
        }
    }

    pub fn to_wire(self) -> (u8, u8) {
        match self {
            Verdict::Accept => (0, 0xff),
            Verdict::RejectWeak(r) => (1, r.to_u8()),
            Verdict::RejectStrong(r) => (2, r.to_u8()),
        }
    }

    pub fn from_wire(kind: u8, rule: u8) -> Option<Verdict> {
        match kind {
            0 => Some(Verdict::Accept),
            1 => Some(Verdict::RejectWeak(Rule::from_u8(rule)?)),
            2 => Some(Verdict::RejectStrong(Rule::from_u8(rule)?)),
            _ => None,
        }
    }
}

/// Sum of declared fees per height of a block prefix (index = height).
/// Transactions that fail stateless checks count as zero; the structural
/// pass rejects their section separately.
pub fn declared_fees(subs: &[SubBlock]) -> Vec<u64> {
    subs.iter()
        .map(|s| {
            s.tx_section
                .txs
                .iter()
                .filter_map(|t| t.fee())
                .fold(0u64, u64::saturating_add)
        })
        .collect()
}

/// Sum of claim amounts per height of a block prefix.
pub fn declared_claims(subs: &[SubBlock]) -> Vec<u64> {
    subs.iter()
        .map(|s| {
            s.claim_sections
                .iter()
                .flat_map(|c| c.claims.iter())
                .map(|c| c.amount)
                .fold(0u64, u64::saturating_add)
        })
        .collect()
}

/// The anti-inflation cap on claimed value: at every height `y`, the claims
/// of heights `0..=y` may not exceed the subsidy plus the fees declared at
/// heights `0..=y`. A block can therefore never import more value at low
/// heights than its own verifiable income, no matter what its invisible
/// upper content says. Returns the first violating height.
pub fn claim_budget_violation(subsidy: u64, fees: &[u64], claims: &[u64]) -> Option<Height> {
    let mut cum_fees: u128 = 0;
    let mut cum_claims: u128 = 0;
    for (y, (fee, claim)) in fees.iter().zip(claims.iter()).enumerate() {
        cum_fees += u128::from(*fee);
        cum_claims += u128::from(*claim);
        if cum_claims > u128::from(subsidy) + cum_fees {
            return Some(y as Height);
        }
    }
    None
}

/// One side of the claim agreement rule: the move-down outputs at the
/// source height that claims at the destination must mirror, as sortable
/// identity tuples `(recipient, amount, txid, output index)`.
pub fn movedown_mirrors(
    source_txs: &[Transaction],
    offset_log2: u32,
) -> Vec<(Address, u64, Digest, u32)> {
    let mut out = Vec::new();
    for tx in source_txs {
        if tx.kind != (TxKind::MoveDown { offset_log2 }) {
            continue;
        }
        let txid = tx.txid();
        for (i, o) in tx.outputs.iter().enumerate() {
            out.push((o.address.clone(), o.amount, txid, i as u32));
        }
    }
    out.sort();
    out
}

/// Claim agreement: the claim section must be the exact multiset mirror of
/// the source's move-down outputs.
pub fn claims_agree(claims: &[Claim], source_txs: &[Transaction], offset_log2: u32) -> bool {
    let mut claimed: Vec<(Address, u64, Digest, u32)> = claims
        .iter()
        .map(|c| (c.recipient.clone(), c.amount, c.matching_txid, c.output_index))
        .collect();
    claimed.sort();
    claimed == movedown_mirrors(source_txs, offset_log2)
}

/// Strong verdicts derivable from a block prefix's bytes plus its header.
/// `None` entries mean "no structural objection"; stateful validation may
/// still reject weakly. Verdicts here are per-section; the caller combines
/// them with the upward-cascade rule.
#[derive(Debug, Clone, Default)]
pub struct StructuralReport {
    pub tx_strong: BTreeMap<Height, Rule>,
    pub claim_strong: BTreeMap<(Height, u32), Rule>,
}

impl StructuralReport {
    pub fn is_clean(&self) -> bool {
        self.tx_strong.is_empty() && self.claim_strong.is_empty()
    }
}

/// Header-level validity: conditions every observer can check regardless of
/// cutoff. A failure here makes the block ineligible to sit on any chain.
pub fn check_header(header: &Header, params: &Params) -> Result<(), Rule> {
    if !check_pow(&header.id(), params.difficulty_bits) {
        return Err(Rule::Pow);
    }
    if header.top > params.max_height {
        return Err(Rule::Structure);
    }
    if header.coinbase.height > header.top {
        return Err(Rule::CoinbaseHeight);
    }
    if !header.coinbase.recipient.check_well_formed(params.max_height) {
        return Err(Rule::Structure);
    }
    Ok(())
}

/// Structural pass over the visible sub-blocks of a block. Produces the
/// per-section strong verdicts; checks that need ledger state are not here.
///
/// When the prefix reaches the block's top, the coinbase amount is audited
/// against the declared fees; a lie rejects the coinbase's own sub-block,
/// which cascades over everything above it.
pub fn check_structure(
    header: &Header,
    subs: &[SubBlock],
    params: &Params,
) -> StructuralReport {
    let mut report = StructuralReport::default();
    let fees = declared_fees(subs);
    let claims = declared_claims(subs);

    for sub in subs {
        let y = sub.height;
        if sub.encoded_len() as u64 > size_budget(params, y) {
            report.tx_strong.entry(y).or_insert(Rule::SizeBudget);
        }

        let expected: Vec<u32> = allowed_offsets(y, params.max_height);
        let actual: Vec<u32> = sub.claim_sections.iter().map(|c| c.offset_log2).collect();
        if actual != expected {
            report.tx_strong.entry(y).or_insert(Rule::ClaimOffsets);
        }

        if confirm_target(header.index, sub.tx_section.drop_count).is_none() {
            report.tx_strong.entry(y).or_insert(Rule::DropBounds);
        }

        let mut seen_inputs = BTreeSet::new();
        for tx in &sub.tx_section.txs {
            if tx.check_stateless(y, params.max_height).is_err() {
                report.tx_strong.entry(y).or_insert(Rule::Structure);
                break;
            }
            if tx.inputs.iter().any(|i| !seen_inputs.insert(i.outpoint)) {
                report.tx_strong.entry(y).or_insert(Rule::Structure);
                break;
            }
        }

        for cs in &sub.claim_sections {
            let key = (y, cs.offset_log2);
            if confirm_target(header.index, cs.drop_count).is_none() {
                report.claim_strong.entry(key).or_insert(Rule::DropBounds);
            }
            let source = cs.source_height(y);
            let mut seen = BTreeSet::new();
            for claim in &cs.claims {
                if u64::from(claim.source_height) != source
                    || claim.amount == 0
                    || !claim.recipient.check_well_formed(params.max_height)
                {
                    report.claim_strong.entry(key).or_insert(Rule::Structure);
                    break;
                }
                if !seen.insert((claim.matching_txid, claim.output_index)) {
                    report.claim_strong.entry(key).or_insert(Rule::Structure);
                    break;
                }
            }
            if !cs.claims.is_empty() {
                if source > u64::from(header.coinbase.height) {
                    report.claim_strong.entry(key).or_insert(Rule::CoinbaseHeight);
                }
                if source > u64::from(header.top) {
                    report.claim_strong.entry(key).or_insert(Rule::ClaimOffsets);
                }
            }
        }
    }

    if let Some(y) = claim_budget_violation(params.subsidy, &fees, &claims) {
        report.tx_strong.entry(y).or_insert(Rule::ClaimBudget);
    }

    if subs.len() as u64 == u64::from(header.top) + 1 {
        let total_fees: u128 = fees.iter().map(|f| u128::from(*f)).sum();
        if u128::from(header.coinbase.amount) > u128::from(params.subsidy) + total_fees {
            report
                .tx_strong
                .entry(header.coinbase.height)
                .or_insert(Rule::CoinbaseAmount);
        }
    }

    report
}

/// Fork-choice score of a chain tip. Higher accepted height-0 lineage wins;
/// ties prefer the smaller tip index, then the smaller tip digest — a total
/// order, so any set of candidate tips has exactly one winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TipScore {
    pub h0_len: u64,
    pub index: u64,
    pub digest: Digest,
}

impl TipScore {
    pub fn beats(&self, other: &TipScore) -> bool {
        if self.h0_len != other.h0_len {
            return self.h0_len > other.h0_len;
        }
        if self.index != other.index {
            return self.index < other.index;
        }
        self.digest < other.digest
    }
}

/// Commitment to a set of per-height ledgers, for convergence checks and
/// state fingerprints in reports.
pub fn ledgers_digest<'a>(
    ledgers: impl Iterator<Item = (Height, &'a crate::ledger::HeightLedger)>,
) -> Digest {
    let mut w = Writer::new();
    for (h, ledger) in ledgers {
        w.put_u32(h);
        w.put_u64(ledger.chain_length);
        w.put_u32(ledger.utxos.len() as u32);
        for coin in ledger.utxos.values() {
            w.put_bytes(&coin.state_bytes());
        }
    }
    hash(&[&[STATE_TAG], &w.into_bytes()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Outpoint, TxInput, TxOutput};

    fn params() -> Params {
        Params::default()
    }

    #[test]
    fn size_budget_doubles_above_height_one() {
        let p = params();
        assert_eq!(size_budget(&p, 0), 1024);
        assert_eq!(size_budget(&p, 1), 1024);
        assert_eq!(size_budget(&p, 2), 2048);
        assert_eq!(size_budget(&p, 3), 4096);
        // The whole prefix up to cutoff c costs base * 2^c.
        for c in 0..10u32 {
            let total: u64 = (0..=c).map(|y| size_budget(&p, y)).sum();
            assert_eq!(total, cumulative_budget(&p, c));
        }
    }

    #[test]
    fn confirm_target_links() {
        assert_eq!(confirm_target(10, 0), Some(LinkTarget::Position(9)));
        assert_eq!(confirm_target(10, 3), Some(LinkTarget::Position(6)));
        assert_eq!(confirm_target(10, 9), Some(LinkTarget::Position(0)));
        assert_eq!(confirm_target(10, 10), Some(LinkTarget::Fresh));
        assert_eq!(confirm_target(10, 11), None);
        assert_eq!(confirm_target(0, 0), Some(LinkTarget::Fresh));
    }

    #[test]
    fn allowed_offsets_powers_of_two() {
        assert_eq!(allowed_offsets(0, 16), vec![0, 1, 2, 3, 4]);
        assert_eq!(allowed_offsets(3, 16), vec![0, 1, 2, 3]);
        assert_eq!(allowed_offsets(15, 16), vec![0]);
        assert_eq!(allowed_offsets(16, 16), Vec::<u32>::new());
        assert_eq!(allowed_offsets(0, 1), vec![0]);
    }

    #[test]
    fn required_confirmations_scales_with_source() {
        let p = params();
        assert_eq!(required_confirmations(&p, 0), 100);
        assert_eq!(required_confirmations(&p, 4), 500);
    }

    #[test]
    fn claim_budget_telescopes() {
        // subsidy 50; fees [0, 10, 0]; claims [30, 30, 0]:
        // y=0: 30 <= 50 ok; y=1: 60 <= 60 ok.
        assert_eq!(claim_budget_violation(50, &[0, 10, 0], &[30, 30, 0]), None);
        // y=1: 61 > 60 violates.
        assert_eq!(claim_budget_violation(50, &[0, 10, 0], &[30, 31, 0]), Some(1));
        // Violation at height 0 directly.
        assert_eq!(claim_budget_violation(0, &[0], &[1]), Some(0));
        // Earlier claims consume later budget.
        assert_eq!(claim_budget_violation(10, &[0, 0], &[10, 1]), Some(1));
    }

    fn tx(height: Height, kind: TxKind, in_amt: u64, out_amt: u64) -> Transaction {
        Transaction {
            height,
            kind,
            inputs: vec![TxInput {
                outpoint: Outpoint { txid: Digest([height as u8 + 1; 32]), index: 0 },
                amount: in_amt,
                signature: vec![],
            }],
            outputs: vec![TxOutput {
                address: Address::static_at(Digest([0x77; 32]), 0),
                amount: out_amt,
            }],
        }
    }

    #[test]
    fn mirror_agreement() {
        let source = vec![
            tx(2, TxKind::MoveDown { offset_log2: 1 }, 40, 39),
            tx(2, TxKind::SameHeight, 10, 10),
        ];
        let txid = source[0].txid();
        let claims = vec![Claim {
            recipient: Address::static_at(Digest([0x77; 32]), 0),
            amount: 39,
            source_height: 2,
            matching_txid: txid,
            output_index: 0,
        }];
        assert!(claims_agree(&claims, &source, 1));
        // Wrong amount.
        let mut bad = claims.clone();
        bad[0].amount = 38;
        assert!(!claims_agree(&bad, &source, 1));
        // Missing claim.
        assert!(!claims_agree(&[], &source, 1));
        // Extra claim.
        let mut extra = claims.clone();
        extra.push(Claim { output_index: 1, ..claims[0].clone() });
        assert!(!claims_agree(&extra, &source, 1));
        // Same-height transactions are not mirrored.
        assert!(claims_agree(&[], &source, 0));
    }

    fn empty_block(index: u64, prev: Digest, top: Height, p: &Params) -> Block {
        let subs: Vec<SubBlock> = (0..=top).map(|y| SubBlock::empty(y, p.max_height)).collect();
        let trees: Vec<Digest> = subs.iter().map(|s| s.digest()).collect();
        let mut header = Header {
            index,
            prev,
            top,
            coinbase: CoinbaseDecl {
                height: top,
                recipient: Address::static_at(Digest([0x55; 32]), top),
                amount: p.subsidy,
            },
            stream_root: stream_root(&trees).unwrap().0,
            nonce: 0,
        };
        while !check_pow(&header.id(), p.difficulty_bits) {
            header.nonce += 1;
        }
        Block { header, subs }
    }

    #[test]
    fn block_prefix_authentication() {
        let p = params();
        let block = empty_block(0, Digest::ZERO, 3, &p);
        for cutoff in 0..6u32 {
            let prefix = block.to_prefix(cutoff);
            assert!(prefix.authenticate(), "cutoff {cutoff}");
            assert_eq!(prefix.visible(), cutoff.min(3));
            let parsed = BlockPrefix::from_bytes(&prefix.to_bytes()).unwrap();
            assert_eq!(parsed, prefix);
            assert!(parsed.authenticate());
        }

        // Tampering with a carried transaction section breaks authentication.
        let mut forged = block.to_prefix(2);
        forged.subs[1].tx_section.drop_count = 9;
        assert!(!forged.authenticate());

        // A proof that claims to be full but stops short of top is rejected.
        let mut wrong = block.to_prefix(3);
        wrong.subs.pop();
        assert!(!wrong.authenticate());
    }

    #[test]
    fn header_checks() {
        let p = params();
        let block = empty_block(0, Digest::ZERO, 2, &p);
        assert_eq!(check_header(&block.header, &p), Ok(()));

        let mut bad_pow = block.header.clone();
        bad_pow.nonce = bad_pow.nonce.wrapping_add(1);
        if check_pow(&bad_pow.id(), p.difficulty_bits) {
            // Rare: the next nonce also clears difficulty; flip more.
            bad_pow.nonce = bad_pow.nonce.wrapping_add(1);
        }
        if !check_pow(&bad_pow.id(), p.difficulty_bits) {
            assert_eq!(check_header(&bad_pow, &p), Err(Rule::Pow));
        }

        // Re-grind after each mutation so the proof-of-work check passes and
        // the later rules are the ones exercised.
        let regrind = |mut h: Header| {
            h.nonce = 0;
            while !check_pow(&h.id(), p.difficulty_bits) {
                h.nonce += 1;
            }
            h
        };

        let mut deep_cb = block.header.clone();
        deep_cb.coinbase.height = 3;
        assert_eq!(check_header(&regrind(deep_cb), &p), Err(Rule::CoinbaseHeight));

        let mut tall = block.header.clone();
        tall.top = p.max_height + 1;
        tall.coinbase.height = p.max_height + 1;
        assert_eq!(check_header(&regrind(tall), &p), Err(Rule::Structure));
    }

    #[test]
    fn structure_flags_size_violation() {
        let p = Params { base_size: 64, ..params() };
        let mut block = empty_block(0, Digest::ZERO, 1, &p);
        // Stuff height 0 with transactions until it exceeds 64 bytes.
        for i in 0..3 {
            block.subs[0].tx_section.txs.push(tx(0, TxKind::SameHeight, 10 + i, 10 + i));
        }
        let report = check_structure(&block.header, &block.subs, &p);
        assert_eq!(report.tx_strong.get(&0), Some(&Rule::SizeBudget));
    }

    #[test]
    fn structure_flags_offset_set_mismatch() {
        let p = params();
        let mut block = empty_block(0, Digest::ZERO, 1, &p);
        block.subs[1].claim_sections.remove(0);
        let report = check_structure(&block.header, &block.subs, &p);
        assert_eq!(report.tx_strong.get(&1), Some(&Rule::ClaimOffsets));
    }

    #[test]
    fn structure_flags_drop_overrun() {
        let p = params();
        let mut block = empty_block(2, Digest([1; 32]), 0, &p);
        block.subs[0].tx_section.drop_count = 3;
        let report = check_structure(&block.header, &block.subs, &p);
        assert_eq!(report.tx_strong.get(&0), Some(&Rule::DropBounds));
    }

    #[test]
    fn structure_flags_claim_beyond_coinbase() {
        let p = params();
        let mut block = empty_block(0, Digest::ZERO, 2, &p);
        // Coinbase at height 1, claims at height 0 sourcing height 2.
        block.header.coinbase.height = 1;
        block.subs[0].claim_sections[1].claims.push(Claim {
            recipient: Address::static_at(Digest([0x11; 32]), 0),
            amount: 5,
            source_height: 2,
            matching_txid: Digest([0x22; 32]),
            output_index: 0,
        });
        let report = check_structure(&block.header, &block.subs, &p);
        assert_eq!(report.claim_strong.get(&(0, 1)), Some(&Rule::CoinbaseHeight));
    }

    #[test]
    fn structure_flags_coinbase_amount_when_fully_visible() {
        let p = params();
        let mut block = empty_block(0, Digest::ZERO, 1, &p);
        block.header.coinbase.amount = p.subsidy + 1;
        let report = check_structure(&block.header, &block.subs, &p);
        assert_eq!(report.tx_strong.get(&1), Some(&Rule::CoinbaseAmount));
        // The same block judged only through height 0 cannot be audited.
        let partial = check_structure(&block.header, &block.subs[..1], &p);
        assert!(partial.tx_strong.is_empty());
    }

    #[test]
    fn claim_budget_rule_via_structure() {
        let p = Params { subsidy: 0, ..params() };
        let mut block = empty_block(0, Digest::ZERO, 2, &p);
        // Fee of 10 declared at height 1, claims of 11 at height 1.
        block.subs[1].tx_section.txs.push(tx(1, TxKind::SameHeight, 30, 20));
        block.subs[1].claim_sections[0].claims.push(Claim {
            recipient: Address::static_at(Digest([0x11; 32]), 1),
            amount: 11,
            source_height: 2,
            matching_txid: Digest([0x22; 32]),
            output_index: 0,
        });
        let report = check_structure(&block.header, &block.subs, &p);
        assert_eq!(report.tx_strong.get(&1), Some(&Rule::ClaimBudget));
    }

    #[test]
    fn tip_score_total_order() {
        let a = TipScore { h0_len: 5, index: 7, digest: Digest([1; 32]) };
        let b = TipScore { h0_len: 4, index: 3, digest: Digest([0; 32]) };
        assert!(a.beats(&b) && !b.beats(&a));
        let c = TipScore { h0_len: 5, index: 6, digest: Digest([9; 32]) };
        assert!(c.beats(&a) && !a.beats(&c));
        let d = TipScore { h0_len: 5, index: 7, digest: Digest([0; 32]) };
        assert!(d.beats(&a) && !a.beats(&d));
        assert!(!a.beats(&a));
    }

    #[test]
    fn leading_zero_bits_counts() {
        assert_eq!(leading_zero_bits(&Digest([0xff; 32])), 0);
        let mut d = Digest([0; 32]);
        d.0[0] = 0x10;
        assert_eq!(leading_zero_bits(&d), 3);
        let mut e = Digest([0; 32]);
        e.0[2] = 0x80;
        assert_eq!(leading_zero_bits(&e), 16);
        assert_eq!(leading_zero_bits(&Digest::ZERO), 256);
    }
}
