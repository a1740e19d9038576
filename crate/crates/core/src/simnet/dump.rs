//! Chain dump file format: everything an independent validator needs to
//! replay a run — the protocol parameters, the premine, every block of the
//! final chain in order, and the producing observer's verdict log for
//! cross-checking.
//!
//! Layout (all integers little-endian, via the canonical codec):
//!
//! ```text
//! magic "SBCD" | version u32 | params | premine | blocks | verdicts
//! params   = base_size u64, base_conf u64, max_height u32, subsidy u64,
//!            difficulty_bits u32
//! premine  = count u32, then (owner address, height u32, amount u64) each
//! blocks   = count u64, then full block codec each
//! verdicts = count u64, then (position u64, height u32, section kind u8,
//!            claim offset u32, verdict u8, rule u8) each
//! ```
//!
//! Section kind: 0 = transaction section, 1 = claim section (offset used).
//! Verdict: 0 = accept, 1 = weak reject, 2 = strong reject; `rule` is the
//! rule byte for rejections and 0xff for accepts.

use crate::codec::{Codec, CodecError, Reader, Writer};
use crate::consensus::view::PremineAllocation;
use crate::consensus::{Block, Rule, SectionId, Verdict};
use crate::ledger::Address;
use crate::params::{Height, Params};

pub const DUMP_MAGIC: &[u8; 4] = b"SBCD";
pub const DUMP_VERSION: u32 = 1;

/// One recorded section verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerdictRecord {
    pub position: u64,
    pub height: Height,
    pub section: SectionId,
    pub verdict: Verdict,
}

/// A complete replayable chain.
#[derive(Debug, Clone)]
pub struct ChainDump {
    pub params: Params,
    pub premine: Vec<PremineAllocation>,
    pub blocks: Vec<Block>,
    pub verdicts: Vec<VerdictRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("not a chain dump (bad magic)")]
    BadMagic,
    #[error("unsupported dump version {0}")]
    BadVersion(u32),
    #[error("malformed dump: {0}")]
    Codec(#[from] CodecError),
}

pub fn write_dump(dump: &ChainDump) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_bytes(DUMP_MAGIC.as_slice());
    w.put_u32(DUMP_VERSION);

    w.put_u64(dump.params.base_size);
    w.put_u64(dump.params.base_conf);
    w.put_u32(dump.params.max_height);
    w.put_u64(dump.params.subsidy);
    w.put_u32(dump.params.difficulty_bits);

    w.put_u32(dump.premine.len() as u32);
    for p in &dump.premine {
        p.owner.encode(&mut w);
        w.put_u32(p.height);
        w.put_u64(p.amount);
    }

    w.put_u64(dump.blocks.len() as u64);
    for b in &dump.blocks {
        b.encode(&mut w);
    }

    w.put_u64(dump.verdicts.len() as u64);
    for v in &dump.verdicts {
        w.put_u64(v.position);
        w.put_u32(v.height);
        match v.section {
            SectionId::Tx => {
                w.put_u8(0);
                w.put_u32(0);
            }
            SectionId::Claims { offset_log2 } => {
                w.put_u8(1);
                w.put_u32(offset_log2);
            }
        }
        match v.verdict {
            Verdict::Accept => {
                w.put_u8(0);
                w.put_u8(0xff);
            }
            Verdict::RejectWeak(rule) => {
                w.put_u8(1);
                w.put_u8(rule.to_u8());
            }
            Verdict::RejectStrong(rule) => {
                w.put_u8(2);
                w.put_u8(rule.to_u8());
            }
        }
    }
    w.into_bytes()
}

pub fn read_dump(bytes: &[u8]) -> Result<ChainDump, DumpError> {
    let mut r = Reader::new(bytes);
    let magic = r.get_bytes()?;
    if magic != DUMP_MAGIC {
        return Err(DumpError::BadMagic);
    }
    let version = r.get_u32()?;
    if version != DUMP_VERSION {
        return Err(DumpError::BadVersion(version));
    }

    let params = Params {
        base_size: r.get_u64()?,
        base_conf: r.get_u64()?,
        max_height: r.get_u32()?,
        subsidy: r.get_u64()?,
        difficulty_bits: r.get_u32()?,
    };

    let premine_count = r.get_u32()?;
    let mut premine = Vec::with_capacity(premine_count as usize);
    for _ in 0..premine_count {
        premine.push(PremineAllocation {
            owner: Address::decode(&mut r)?,
            height: r.get_u32()?,
            amount: r.get_u64()?,
        });
    }

    let block_count = r.get_u64()?;
    let mut blocks = Vec::new();
    for _ in 0..block_count {
        blocks.push(Block::decode(&mut r)?);
    }

    let verdict_count = r.get_u64()?;
    let mut verdicts = Vec::new();
    for _ in 0..verdict_count {
        let position = r.get_u64()?;
        let height = r.get_u32()?;
        let section = match r.get_u8()? {
            0 => {
                r.get_u32()?;
                SectionId::Tx
            }
            1 => SectionId::Claims { offset_log2: r.get_u32()? },
            tag => {
                return Err(CodecError::InvalidTag { what: "dump section kind", tag }.into());
            }
        };
        let verdict_tag = r.get_u8()?;
        let rule_byte = r.get_u8()?;
        let verdict = match verdict_tag {
            0 => Verdict::Accept,
            1 => Verdict::RejectWeak(rule_from(rule_byte)?),
            2 => Verdict::RejectStrong(rule_from(rule_byte)?),
            tag => {
                return Err(CodecError::InvalidTag { what: "dump verdict", tag }.into());
            }
        };
        verdicts.push(VerdictRecord { position, height, section, verdict });
    }
    r.finish()?;
    Ok(ChainDump { params, premine, blocks, verdicts })
}

fn rule_from(byte: u8) -> Result<Rule, DumpError> {
    Rule::from_u8(byte)
        .ok_or(DumpError::Codec(CodecError::InvalidTag { what: "dump rule", tag: byte }))
}
