//! Built-in scenario catalog. Each scenario is an embedded TOML config
//! exercising one corner of the protocol; all are deterministic and sized
//! to let maturity locks, disputes and migrations play out fully.

/// Mixed honest network: four miners at different cutoffs, jittered
/// delivery delays, a mid-run partition that forks and heals, and a chain
/// of user payments. No supply expectation: losing-branch coinbases make
/// the exact figure seed-dependent (conservation is still checked every
/// tick by the engine).
const S3_HONEST_MIXED: &str = r#"
name = "s3_honest_mixed"
seed = 301
duration = 240
params = { base_size = 4096, base_conf = 3, max_height = 6, subsidy = 50, difficulty_bits = 2 }

[network]
min_delay = 1
max_delay = 3

[[network.partitions]]
from = 60
to = 90
groups = [["a", "b"], ["c", "d"]]

[[miners]]
id = "a"
cutoff = 1
weight = 3

[[miners]]
id = "b"
cutoff = 3
weight = 2

[[miners]]
id = "c"
cutoff = 6
weight = 2

[[miners]]
id = "d"
cutoff = 2
weight = 1

[[premine]]
owner = "alice"
height = 2
amount = 200

[[premine]]
owner = "carol"
height = 1
amount = 150

[[inject]]
tick = 10
signer = "alice"
source = { premine = 0 }
height = 2
outputs = [{ to = "bob", height = 2, amount = 100 }]

[[inject]]
tick = 40
signer = "bob"
source = { output = [0, 0] }
height = 2
outputs = [{ to = "carol", height = 2, amount = 80 }]

[[inject]]
tick = 120
signer = "carol"
source = { premine = 1 }
height = 1
outputs = [{ to = "dave", height = 1, amount = 150 }]

[expect]
min_h0_length = 120
strong_rejections = false
"#;

/// An observer raises its cutoff mid-run and backfills the higher
/// sub-blocks from a full peer; afterwards its state must be
/// indistinguishable from having watched those heights all along.
const S4_CUTOFF_RAISE: &str = r#"
name = "s4_cutoff_raise"
seed = 401
duration = 220
params = { base_size = 4096, base_conf = 3, max_height = 4, subsidy = 50, difficulty_bits = 2 }

[[miners]]
id = "riser"
cutoff = 1
weight = 2

[[miners]]
id = "full"
cutoff = 4
weight = 3

[[premine]]
owner = "alice"
height = 3
amount = 120

[[inject]]
tick = 10
signer = "alice"
source = { premine = 0 }
height = 3
outputs = [{ to = "bob", height = 3, amount = 100 }]

[[cutoff_changes]]
tick = 100
miner = "riser"
new_cutoff = 4

[expect]
final_supply = 11120
min_h0_length = 220
strong_rejections = false
"#;

/// One miner corrupts every sub-block above height 1 with a spend of a
/// nonexistent coin. Higher observers reject exactly the corrupted
/// sections (weakly — the flaw is observer-relative); heights 0 and 1 stay
/// valid for everyone and keep growing.
const S5_INVALID_UPPER: &str = r#"
name = "s5_invalid_upper"
seed = 501
duration = 220
params = { base_size = 4096, base_conf = 3, max_height = 4, subsidy = 50, difficulty_bits = 2 }

[network]
min_delay = 1
max_delay = 2

[[miners]]
id = "low"
cutoff = 1
weight = 2

[[miners]]
id = "high"
cutoff = 4
weight = 2

[[miners]]
id = "evil"
cutoff = 4
weight = 1
behavior = { invalid_upper = { above = 1 } }

[expect]
min_h0_length = 150
strong_rejections = false
"#;

/// Value moves up: a height-1 coin is sent to height 3. Observers below
/// the target height count the value as exited; full observers see it
/// arrive. Delivery is single-tick so the supply figure is exact.
const S6_MOVEUP: &str = r#"
name = "s6_moveup"
seed = 601
duration = 210
params = { base_size = 4096, base_conf = 3, max_height = 4, subsidy = 50, difficulty_bits = 2 }

[[miners]]
id = "low"
cutoff = 1
weight = 2

[[miners]]
id = "full"
cutoff = 4
weight = 2

[[premine]]
owner = "carol"
height = 1
amount = 100

[[inject]]
tick = 15
signer = "carol"
source = { premine = 0 }
height = 1
kind = { move_up = { target = 3 } }
outputs = [{ to = "dave", height = 3, amount = 90 }]

[expect]
final_supply = 10600
min_h0_length = 210
strong_rejections = false
"#;

/// A fabricated claim planted where no honest miner has coverage: the
/// destination height is above every honest cutoff, so the attacker is the
/// only writer there, supplies all the confirmations itself, and the
/// disputed claim lapses into adoption. The stolen amount stays within the
/// per-block claim budget, so every objection is weak and the theft caps
/// at the subsidy. The exact supply shows both sides of the trade: +39
/// minted by the adopted claim, -50 because the attack block's upper
/// sections were rejected while disputed and the attacker's own follow-up
/// links — computed against that rejection — drop them again on the
/// post-lapse replay, forfeiting that block's coinbase for good.
const S71_RACE_WIN: &str = r#"
name = "s71_race_win"
seed = 711
duration = 260
params = { base_size = 4096, base_conf = 3, max_height = 6, subsidy = 50, difficulty_bits = 2 }

[[miners]]
id = "h1"
cutoff = 2
weight = 3

[[miners]]
id = "h2"
cutoff = 2
weight = 2

[[miners]]
id = "forger"
cutoff = 5
weight = 2
behavior = { false_claimer = { start = 20, dest_height = 3, offset_log2 = 0, amount = 39, sustain = 60 } }

[expect]
final_supply = 12989
min_h0_length = 260
strong_rejections = false
"#;

/// The same fabricated claim against an aware honest majority: an honest
/// miner with coverage of the destination height keeps extending the
/// honest claim chain. The dispute still lapses (any tx section at the
/// destination counts as a confirmation), but on the post-lapse replay the
/// honest chain's links immediately drop the adopted forged entry, so the
/// minted coin never survives one application. The attacker still forfeits
/// the attack block's coinbase; net theft is zero and net cost is the full
/// subsidy.
const S71_RACE_LOSE: &str = r#"
name = "s71_race_lose"
seed = 712
duration = 260
params = { base_size = 4096, base_conf = 3, max_height = 6, subsidy = 50, difficulty_bits = 2 }

[[miners]]
id = "low"
cutoff = 2
weight = 2

[[miners]]
id = "aware"
cutoff = 5
weight = 3

[[miners]]
id = "forger"
cutoff = 5
weight = 2
behavior = { false_claimer = { start = 20, dest_height = 3, offset_log2 = 0, amount = 39, sustain = 10000 } }

[expect]
final_supply = 12950
min_h0_length = 260
strong_rejections = false
"#;

/// A claim overshooting the cumulative budget by one coin, with the
/// mirrored move-down kept consistent so the violation is purely
/// budgetary. Zero subsidy pins the money supply: the strong rejection is
/// the only thing standing between the attacker and inflation, and the
/// supply staying at the premine proves it held.
const S72_OVERCLAIM: &str = r#"
name = "s72_overclaim"
seed = 721
duration = 250
params = { base_size = 4096, base_conf = 3, max_height = 4, subsidy = 0, difficulty_bits = 2 }

[[miners]]
id = "honest"
cutoff = 4
weight = 3

[[miners]]
id = "evil"
cutoff = 4
weight = 2
behavior = { over_claimer = { at = 30, source_height = 2, offset_log2 = 1, move_amount = 9 } }

[[premine]]
owner = "evil"
height = 0
amount = 10

[[premine]]
owner = "evil"
height = 2
amount = 90

[expect]
final_supply = 100
min_h0_length = 240
strong_rejections = true
"#;

/// A legitimate long-range move-down (offset 4: height 4 to height 0)
/// under a raised confirmation base. The claim coin's maturity is
/// (source + 1) * base_conf = 25 confirmations at the destination; replaying
/// the dump pins the exact settlement block.
const S73_OFFSET: &str = r#"
name = "s73_offset"
seed = 731
duration = 220
params = { base_size = 4096, base_conf = 5, max_height = 4, subsidy = 50, difficulty_bits = 2 }

[[miners]]
id = "solo"
cutoff = 4
weight = 1

[[premine]]
owner = "user"
height = 4
amount = 100

[[inject]]
tick = 20
signer = "user"
source = { premine = 0 }
height = 4
kind = { move_down = { offset_log2 = 2 } }
outputs = [{ to = "user2", height = 0, amount = 45 }]

[expect]
final_supply = 11100
min_h0_length = 220
strong_rejections = false
"#;

/// Scheduled addresses: a premined coin locked at height 0 for 60 blocks,
/// then stepping one height every 25. The sweep relocates it at each
/// boundary; a miner with a lower cutoff watches it exit its view instead,
/// while agreeing with everyone on the heights it still tracks. The coin
/// is spent mid-journey at its then-current height.
const S8_DYNAMIC: &str = r#"
name = "s8_dynamic"
seed = 801
duration = 220
params = { base_size = 4096, base_conf = 3, max_height = 4, subsidy = 50, difficulty_bits = 2 }

[[miners]]
id = "full"
cutoff = 4
weight = 2

[[miners]]
id = "narrow"
cutoff = 2
weight = 1

[[premine]]
owner = "wanderer"
height = 0
amount = 70
schedule = { lock = 60, step = 25, created_at = 0 }

[[premine]]
owner = "anchor"
height = 1
amount = 30

[[inject]]
tick = 100
signer = "wanderer"
source = { premine = 0 }
height = 2
outputs = [{ to = "settler", height = 2, amount = 70 }]

[expect]
final_supply = 11100
min_h0_length = 220
strong_rejections = false
"#;

const CATALOG: &[(&str, &str)] = &[
    ("s3_honest_mixed", S3_HONEST_MIXED),
    ("s4_cutoff_raise", S4_CUTOFF_RAISE),
    ("s5_invalid_upper", S5_INVALID_UPPER),
    ("s6_moveup", S6_MOVEUP),
    ("s71_race_win", S71_RACE_WIN),
    ("s71_race_lose", S71_RACE_LOSE),
    ("s72_overclaim", S72_OVERCLAIM),
    ("s73_offset", S73_OFFSET),
    ("s8_dynamic", S8_DYNAMIC),
];

/// Names of all built-in scenarios, in catalog order.
pub fn scenario_names() -> Vec<&'static str> {
    CATALOG.iter().map(|(n, _)| *n).collect()
}

/// The TOML text of a built-in scenario, if the name is known.
pub fn scenario_toml(name: &str) -> Option<&'static str> {
    CATALOG.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
