//! Core library for a blockchain of size-doubling sub-blocks.
//!
//! Each block carries one sub-block per height; byte budgets double with
//! height, so observers choose a cutoff and fetch only the prefix of heights
//! they care about, authenticated by a stream commitment in the header.
//! Heights keep independent per-height chains linked by drop counters, with
//! explicit move-up, move-down, and claim channels for value crossing
//! heights, plus schedule-driven coin migration.
//!
//! Layers, bottom up:
//! - [`hashtree`]: digests, Merkle trees, stream commitments and prefixes.
//! - [`codec`]: canonical binary encoding.
//! - [`params`]: protocol constants.
//! - [`ledger`]: addresses, coins, transactions, claims, per-height UTXOs.
//! - [`consensus`]: block structures and state-free rules; `consensus::view`
//!   holds the stateful chain machine (verdicts, reorgs, settlement).
//! - [`miner`]: block assembly and behavior profiles.
//! - [`simnet`]: deterministic multi-miner network simulation, scenario
//!   configs, reports, and dump files.

pub mod codec;
pub mod consensus;
pub mod hashtree;
pub mod ledger;
pub mod miner;
pub mod params;
pub mod simnet;

pub use consensus::view::ChainView;
pub use hashtree::Digest;
pub use params::{Height, Params};
