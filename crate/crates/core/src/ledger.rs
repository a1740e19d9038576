//! Value layer: addresses, coins, transactions, and claims, plus the
//! per-height UTXO ledgers they live in.
//!
//! Every height maintains its own independent coin set. Value crosses heights
//! only through three explicit channels: move-up transactions (outputs
//! materialize at a higher height), move-down transactions (outputs are
//! mirrored by claims at a lower height), and schedule-driven migration of
//! coins owned by height-scheduled addresses.

use std::sync::Arc;

use thiserror::Error;

use crate::codec::{Codec, CodecError, Reader, Writer};
use crate::hashtree::{hash, Digest};
use crate::params::Height;

const TXID_TAG: u8 = 0x04;
const CLAIM_TAG: u8 = 0x06;
const PREMINE_TAG: u8 = 0x07;
const SIG_TAG: u8 = 0x0b;

/// Time-locked height schedule attached to an address. A coin owned by such
/// an address starts at the address's base height and steps one height up
/// per `step_period` chain positions once `lock_period` has elapsed from
/// `created_at` (all measured on the main-chain position clock).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeightSchedule {
    pub lock_period: u64,
    pub step_period: u64,
    pub created_at: u64,
}

/// Where the coins of a scheduled address must reside at position `now`.
/// Inclusive boundary: at `created_at + lock_period` the address is still at
/// its base height; the first step lands one position later.
pub fn effective_height(
    base: Height,
    sched: &HeightSchedule,
    now: u64,
    max_height: Height,
) -> Height {
    let elapsed = now.saturating_sub(sched.created_at);
    if elapsed <= sched.lock_period {
        return base.min(max_height);
    }
    let over = elapsed - sched.lock_period;
    let steps = over.div_ceil(sched.step_period.max(1));
    let stepped = u64::from(base).saturating_add(steps);
    (stepped.min(u64::from(max_height))) as Height
}

/// Coin ownership identity plus residence rules. `id` is the hash of the
/// holder's verification key; `base_height` and the optional schedule say
/// where coins paid to this address live over time. Addresses without a
/// schedule are static: their coins stay wherever they were created.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    pub id: Digest,
    pub base_height: Height,
    pub schedule: Option<HeightSchedule>,
}

impl Address {
    pub fn static_at(id: Digest, base_height: Height) -> Address {
        Address { id, base_height, schedule: None }
    }

    /// Structural sanity independent of any ledger: schedules must make
    /// progress and base heights must be inside the protocol's range.
    pub fn check_well_formed(&self, max_height: Height) -> bool {
        if self.base_height > max_height {
            return false;
        }
        match &self.schedule {
            Some(s) => s.step_period > 0,
            None => true,
        }
    }
}

impl Codec for Address {
    fn encode(&self, w: &mut Writer) {
        w.put_digest(&self.id);
        w.put_u32(self.base_height);
        match &self.schedule {
            None => w.put_u8(0),
            Some(s) => {
                w.put_u8(1);
                w.put_u64(s.lock_period);
                w.put_u64(s.step_period);
                w.put_u64(s.created_at);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let id = r.get_digest()?;
        let base_height = r.get_u32()?;
        let schedule = match r.get_u8()? {
            0 => None,
            1 => Some(HeightSchedule {
                lock_period: r.get_u64()?,
                step_period: r.get_u64()?,
                created_at: r.get_u64()?,
            }),
            tag => return Err(CodecError::InvalidTag { what: "address schedule", tag }),
        };
        Ok(Address { id, base_height, schedule })
    }
}

/// Reference to a created coin: the creating id (txid, claim id, premine id,
/// or coinbase id) plus an output index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Outpoint {
    pub txid: Digest,
    pub index: u32,
}

impl Codec for Outpoint {
    fn encode(&self, w: &mut Writer) {
        w.put_digest(&self.txid);
        w.put_u32(self.index);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Outpoint { txid: r.get_digest()?, index: r.get_u32()? })
    }
}

/// How a coin came into existence. Claims and coinbase coins carry delayed
/// settlement; the others are spendable immediately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinOrigin {
    Premine,
    Regular,
    Coinbase { height: Height },
    Claim { source_height: Height },
}

impl CoinOrigin {
    fn tag(&self) -> u8 {
        match self {
            CoinOrigin::Premine => 0,
            CoinOrigin::Regular => 1,
            CoinOrigin::Coinbase { .. } => 2,
            CoinOrigin::Claim { .. } => 3,
        }
    }
}

/// A live ledger entry. `maturity` is an absolute threshold on the owning
/// ledger's chain length; the settlement sweep flips `settled` once the
/// chain length reaches it, and only settled coins are spendable. Settlement
/// is final: a settled coin survives later in-chain drops of the content
/// that created it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coin {
    pub outpoint: Outpoint,
    pub owner: Address,
    pub amount: u64,
    pub maturity: u64,
    pub settled: bool,
    pub origin: CoinOrigin,
}

impl Coin {
    /// Digest contribution for ledger state commitments.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.outpoint.encode(&mut w);
        self.owner.encode(&mut w);
        w.put_u64(self.amount);
        w.put_u64(self.maturity);
        w.put_u8(u8::from(self.settled));
        w.put_u8(self.origin.tag());
        match self.origin {
            CoinOrigin::Coinbase { height } => w.put_u32(height),
            CoinOrigin::Claim { source_height } => w.put_u32(source_height),
            _ => {}
        }
        w.into_bytes()
    }
}

/// Transaction flavor. Same-height spends stay put; move-up sends outputs to
/// a single higher height; move-down destroys inputs here and describes
/// outputs that claims at `height - 2^offset_log2` must mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxKind {
    SameHeight,
    MoveUp { target: Height },
    MoveDown { offset_log2: u32 },
}

impl Codec for TxKind {
    fn encode(&self, w: &mut Writer) {
        match self {
            TxKind::SameHeight => w.put_u8(0),
            TxKind::MoveUp { target } => {
                w.put_u8(1);
                w.put_u32(*target);
            }
            TxKind::MoveDown { offset_log2 } => {
                w.put_u8(2);
                w.put_u32(*offset_log2);
            }
        }
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.get_u8()? {
            0 => Ok(TxKind::SameHeight),
            1 => Ok(TxKind::MoveUp { target: r.get_u32()? }),
            2 => Ok(TxKind::MoveDown { offset_log2: r.get_u32()? }),
            tag => Err(CodecError::InvalidTag { what: "tx kind", tag }),
        }
    }
}

/// Spend of one coin. `amount` restates the coin's value so that fees are
/// computable from transaction bytes alone; validation later checks the
/// declaration against the actual coin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxInput {
    pub outpoint: Outpoint,
    pub amount: u64,
    pub signature: Vec<u8>,
}

impl Codec for TxInput {
    fn encode(&self, w: &mut Writer) {
        self.outpoint.encode(w);
        w.put_u64(self.amount);
        w.put_bytes(&self.signature);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(TxInput { outpoint: Outpoint::decode(r)?, amount: r.get_u64()?, signature: r.get_bytes()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxOutput {
    pub address: Address,
    pub amount: u64,
}

impl Codec for TxOutput {
    fn encode(&self, w: &mut Writer) {
        self.address.encode(w);
        w.put_u64(self.amount);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(TxOutput { address: Address::decode(r)?, amount: r.get_u64()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    /// Height whose ledger holds the inputs. Committed into the txid so the
    /// same bytes cannot replay at another height.
    pub height: Height,
    pub kind: TxKind,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
}

impl Codec for Transaction {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.height);
        self.kind.encode(w);
        w.put_vec(&self.inputs);
        w.put_vec(&self.outputs);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Transaction {
            height: r.get_u32()?,
            kind: TxKind::decode(r)?,
            inputs: r.get_vec()?,
            outputs: r.get_vec()?,
        })
    }
}

impl Transaction {
    /// Id over the transaction with signatures blanked, so signing cannot
    /// change the thing being signed.
    pub fn txid(&self) -> Digest {
        let mut blank = self.clone();
        for input in &mut blank.inputs {
            input.signature = Vec::new();
        }
        hash(&[&[TXID_TAG], &blank.to_bytes()])
    }

    pub fn input_total(&self) -> Option<u64> {
        self.inputs.iter().try_fold(0u64, |acc, i| acc.checked_add(i.amount))
    }

    pub fn output_total(&self) -> Option<u64> {
        self.outputs.iter().try_fold(0u64, |acc, o| acc.checked_add(o.amount))
    }

    /// Declared fee: inputs minus outputs, `None` on overflow or deficit.
    pub fn fee(&self) -> Option<u64> {
        self.input_total()?.checked_sub(self.output_total()?)
    }

    /// Height whose ledger receives this transaction's outputs.
    pub fn dest_height(&self) -> Height {
        match self.kind {
            TxKind::SameHeight => self.height,
            TxKind::MoveUp { target } => target,
            TxKind::MoveDown { offset_log2 } => {
                self.height.saturating_sub(1u32.checked_shl(offset_log2).unwrap_or(u32::MAX))
            }
        }
    }

    pub fn encoded_len(&self) -> usize {
        self.to_bytes().len()
    }

    /// Checks derivable from the transaction bytes and its claimed height
    /// alone. Violations make the surrounding content structurally invalid
    /// for every observer.
    pub fn check_stateless(&self, section_height: Height, max_height: Height) -> Result<(), LedgerError> {
        if self.height != section_height {
            return Err(LedgerError::HeightMismatch {
                declared: self.height,
                section: section_height,
            });
        }
        if self.inputs.is_empty() {
            return Err(LedgerError::NoInputs);
        }
        let mut seen = std::collections::BTreeSet::new();
        for input in &self.inputs {
            if !seen.insert(input.outpoint) {
                return Err(LedgerError::DuplicateInput(input.outpoint));
            }
        }
        for output in &self.outputs {
            if output.amount == 0 {
                return Err(LedgerError::ZeroOutput);
            }
            if !output.address.check_well_formed(max_height) {
                return Err(LedgerError::BadAddress);
            }
        }
        if self.fee().is_none() {
            return Err(LedgerError::ValueImbalance);
        }
        match self.kind {
            TxKind::SameHeight => {}
            TxKind::MoveUp { target } => {
                if target <= self.height || target > max_height {
                    return Err(LedgerError::BadMoveTarget { target });
                }
            }
            TxKind::MoveDown { offset_log2 } => {
                let offset = 1u64.checked_shl(offset_log2).unwrap_or(u64::MAX);
                if offset_log2 >= 31 || offset > u64::from(self.height) {
                    return Err(LedgerError::BadMoveOffset { offset_log2 });
                }
                if self.outputs.is_empty() {
                    return Err(LedgerError::NoOutputs);
                }
            }
        }
        Ok(())
    }
}

/// Entry of a claim section: a pledge that the same block's content at
/// `source_height` contains a move-down output `(recipient, amount)` at
/// `output_index` of transaction `matching_txid`. Accepted claims create the
/// destination coin for that output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Claim {
    pub recipient: Address,
    pub amount: u64,
    pub source_height: Height,
    pub matching_txid: Digest,
    pub output_index: u32,
}

impl Codec for Claim {
    fn encode(&self, w: &mut Writer) {
        self.recipient.encode(w);
        w.put_u64(self.amount);
        w.put_u32(self.source_height);
        w.put_digest(&self.matching_txid);
        w.put_u32(self.output_index);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Claim {
            recipient: Address::decode(r)?,
            amount: r.get_u64()?,
            source_height: r.get_u32()?,
            matching_txid: r.get_digest()?,
            output_index: r.get_u32()?,
        })
    }
}

impl Claim {
    /// The coin a claim materializes is keyed by the claim bytes, so
    /// identical mirrored outputs at different indices stay distinct.
    pub fn coin_outpoint(&self) -> Outpoint {
        Outpoint { txid: hash(&[&[CLAIM_TAG], &self.to_bytes()]), index: 0 }
    }

    pub fn encoded_len(&self) -> usize {
        self.to_bytes().len()
    }
}

/// Deterministic outpoint for a configured genesis coin.
pub fn premine_outpoint(owner: &Address, height: Height, amount: u64, seq: u32) -> Outpoint {
    let mut w = Writer::new();
    owner.encode(&mut w);
    w.put_u32(height);
    w.put_u64(amount);
    w.put_u32(seq);
    Outpoint { txid: hash(&[&[PREMINE_TAG], &w.into_bytes()]), index: 0 }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("transaction declares height {declared} inside section at height {section}")]
    HeightMismatch { declared: Height, section: Height },
    #[error("transaction has no inputs")]
    NoInputs,
    #[error("move-down transaction has no outputs")]
    NoOutputs,
    #[error("duplicate input {0:?}")]
    DuplicateInput(Outpoint),
    #[error("zero-amount output")]
    ZeroOutput,
    #[error("malformed address")]
    BadAddress,
    #[error("outputs exceed inputs or value overflows")]
    ValueImbalance,
    #[error("move target {target} out of range")]
    BadMoveTarget { target: Height },
    #[error("move offset 2^{offset_log2} out of range")]
    BadMoveOffset { offset_log2: u32 },
    #[error("missing coin {0:?}")]
    MissingCoin(Outpoint),
    #[error("declared amount differs from coin amount for {0:?}")]
    AmountMismatch(Outpoint),
    #[error("coin {0:?} is not settled yet")]
    Unsettled(Outpoint),
    #[error("bad signature for {0:?}")]
    BadSignature(Outpoint),
    #[error("coin {0:?} already exists")]
    DuplicateCoin(Outpoint),
}

/// Signing backend. Consensus only ever sees opaque signature bytes and the
/// owner's address id, so real cryptography can replace the test scheme
/// without touching validation logic.
pub trait SignatureScheme: Send + Sync {
    fn verify(&self, owner_id: &Digest, txid: &Digest, signature: &[u8]) -> bool;
}

pub type SchemeHandle = Arc<dyn SignatureScheme>;

/// Hash-based stand-in scheme: the address id commits to a 32-byte secret
/// and a signature is `secret || H(tag || secret || txid)`. Verifiable, and
/// deliberately trivial — it exists so simulations have unforgeable-enough
/// ownership without pulling in curve arithmetic.
#[derive(Debug, Clone, Copy, Default)]
pub struct TestScheme;

impl TestScheme {
    pub fn address_id(secret: &[u8; 32]) -> Digest {
        hash(&[&[SIG_TAG], secret])
    }

    pub fn sign(secret: &[u8; 32], txid: &Digest) -> Vec<u8> {
        let binder = hash(&[&[SIG_TAG], secret, &txid.0]);
        let mut sig = Vec::with_capacity(64);
        sig.extend_from_slice(secret);
        sig.extend_from_slice(&binder.0);
        sig
    }
}

impl SignatureScheme for TestScheme {
    fn verify(&self, owner_id: &Digest, txid: &Digest, signature: &[u8]) -> bool {
        if signature.len() != 64 {
            return false;
        }
        let secret: [u8; 32] = signature[..32].try_into().expect("32 bytes");
        if TestScheme::address_id(&secret) != *owner_id {
            return false;
        }
        let expected = hash(&[&[SIG_TAG], &secret, &txid.0]);
        signature[32..] == expected.0
    }
}

/// Key material for one participant of a simulation.
#[derive(Debug, Clone)]
pub struct Keypair {
    pub secret: [u8; 32],
    pub id: Digest,
}

impl Keypair {
    pub fn from_secret(secret: [u8; 32]) -> Keypair {
        Keypair { secret, id: TestScheme::address_id(&secret) }
    }

    /// Deterministic keypair derived from a label.
    pub fn from_label(label: &str) -> Keypair {
        let d = hash(&[&[SIG_TAG], label.as_bytes()]);
        Keypair::from_secret(d.0)
    }

    pub fn sign(&self, txid: &Digest) -> Vec<u8> {
        TestScheme::sign(&self.secret, txid)
    }
}

/// The coin set of one height. `chain_length` counts the accepted
/// transaction sections currently on this height's chain; settlement
/// thresholds are expressed against it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeightLedger {
    pub utxos: std::collections::BTreeMap<Outpoint, Coin>,
    pub chain_length: u64,
}

impl HeightLedger {
    pub fn total_value(&self) -> u64 {
        self.utxos.values().map(|c| c.amount).sum()
    }

    /// Validate one spend against this ledger: the coin must exist, match
    /// the declared amount, be settled, and carry a valid signature.
    pub fn check_spend(
        &self,
        input: &TxInput,
        txid: &Digest,
        scheme: &dyn SignatureScheme,
    ) -> Result<(), LedgerError> {
        let coin = self
            .utxos
            .get(&input.outpoint)
            .ok_or(LedgerError::MissingCoin(input.outpoint))?;
        if coin.amount != input.amount {
            return Err(LedgerError::AmountMismatch(input.outpoint));
        }
        if !coin.settled {
            return Err(LedgerError::Unsettled(input.outpoint));
        }
        if !scheme.verify(&coin.owner.id, txid, &input.signature) {
            return Err(LedgerError::BadSignature(input.outpoint));
        }
        Ok(())
    }

    pub fn insert_coin(&mut self, coin: Coin) -> Result<(), LedgerError> {
        let op = coin.outpoint;
        if self.utxos.contains_key(&op) {
            return Err(LedgerError::DuplicateCoin(op));
        }
        self.utxos.insert(op, coin);
        Ok(())
    }

    pub fn remove_coin(&mut self, outpoint: &Outpoint) -> Result<Coin, LedgerError> {
        self.utxos.remove(outpoint).ok_or(LedgerError::MissingCoin(*outpoint))
    }
}
