//! Command-line entry point: run scenarios, verify chain dumps as an
//! independent validator, inspect dumps, and list the built-in scenarios.
//!
//! Exit codes: 0 success, 1 usage/config/file error, 2 protocol violation
//! (failed run invariant or expectation, strong rule breach, or a dump that
//! does not authenticate on replay).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use subchain_core::consensus::{size_budget, Block, Verdict};
use subchain_core::simnet::verify::section_label;
use subchain_core::simnet::{
    read_dump, replay_dump, run_scenario, scenario_names, scenario_toml, verify_dump, write_dump,
    ChainDump, RunError, ScenarioConfig,
};
use subchain_core::{Digest, Height};

#[derive(Parser)]
#[command(
    name = "subchain",
    version,
    about = "Runner, verifier, and inspector for sub-block chain simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report and chain dump.
    Run {
        /// Built-in scenario name or path to a scenario file.
        #[arg(long)]
        scenario: String,
        /// Override the seed declared in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $SUBCHAIN_OUT, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a chain dump as an independent validator at a cutoff.
    Verify {
        /// Path to a chain dump.
        #[arg(long)]
        dump: PathBuf,
        /// Validate heights 0..=cutoff.
        #[arg(long)]
        cutoff: Height,
    },
    /// Print a dump summary, one block, or one height's ledger.
    Inspect {
        /// Path to a chain dump.
        #[arg(long)]
        dump: PathBuf,
        /// Chain position of the block to show.
        #[arg(long)]
        block: Option<u64>,
        /// Height whose replayed ledger to show.
        #[arg(long)]
        height: Option<Height>,
    },
    /// List the built-in scenarios.
    Scenarios {
        /// Print one scenario name per line (the default).
        #[arg(long)]
        list: bool,
    },
}

/// A command's failure: message plus the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure { code: 1, message: message.into() }
    }

    fn violation(message: impl Into<String>) -> Failure {
        Failure { code: 2, message: message.into() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version land here too; they are not failures.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Run { scenario, seed, out } => cmd_run(&scenario, seed, out),
        Command::Verify { dump, cutoff } => cmd_verify(&dump, cutoff),
        Command::Inspect { dump, block, height } => cmd_inspect(&dump, block, height),
        Command::Scenarios { .. } => cmd_scenarios(),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(scenario: &str, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let text = load_scenario_text(scenario)?;
    let mut config = ScenarioConfig::from_toml(&text).map_err(Failure::usage)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }

    let outcome = run_scenario(&config).map_err(|err| match err {
        RunError::Config(_) => Failure::usage(err.to_string()),
        RunError::Invariant { .. } => Failure::violation(err.to_string()),
    })?;

    let dir = out
        .or_else(|| std::env::var_os("SUBCHAIN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;

    let report = &outcome.report;
    let base = dir.join(&config.name);
    let text_path = with_suffix(&base, ".report.txt");
    let json_path = with_suffix(&base, ".report.json");
    let dump_path = with_suffix(&base, ".dump");
    write_file(&text_path, report.render_text().as_bytes())?;
    write_file(&json_path, report.to_json().as_bytes())?;
    write_file(&dump_path, &write_dump(&outcome.dump))?;

    print!("{}", report.render_text());
    println!("wrote {}", text_path.display());
    println!("wrote {}", json_path.display());
    println!("wrote {}", dump_path.display());

    if report.ok {
        Ok(())
    } else {
        Err(Failure::violation("scenario expectations failed (see report)".to_string()))
    }
}

/// Resolve `--scenario` to scenario text: built-in names win, then paths.
fn load_scenario_text(arg: &str) -> Result<String, Failure> {
    if let Some(text) = scenario_toml(arg) {
        return Ok(text.to_string());
    }
    std::fs::read_to_string(arg).map_err(|e| {
        Failure::usage(format!(
            "'{arg}' is neither a built-in scenario nor a readable file: {e} \
             (try `subchain scenarios --list`)"
        ))
    })
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    base.with_file_name(name)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(dump_path: &Path, cutoff: Height) -> Result<(), Failure> {
    let dump = load_dump(dump_path)?;
    if cutoff > dump.params.max_height {
        return Err(Failure::usage(format!(
            "cutoff {cutoff} exceeds the dump's maximum height {}",
            dump.params.max_height
        )));
    }

    let view = verify_dump(&dump, cutoff).map_err(Failure::violation)?;
    println!(
        "ok: {} blocks verified at cutoff {cutoff} ({} premine allocations, state digest {})",
        dump.blocks.len(),
        dump.premine.len(),
        view.state_digest()
    );
    Ok(())
}

fn load_dump(path: &Path) -> Result<ChainDump, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    read_dump(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn hex8(d: &Digest) -> String {
    d.to_hex()[..8].to_string()
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

fn cmd_inspect(
    dump_path: &Path,
    block: Option<u64>,
    height: Option<Height>,
) -> Result<(), Failure> {
    let dump = load_dump(dump_path)?;
    if block.is_none() && height.is_none() {
        print_summary(&dump);
        return Ok(());
    }
    if let Some(pos) = block {
        print_block(&dump, pos)?;
    }
    if let Some(h) = height {
        print_height(&dump, h)?;
    }
    Ok(())
}

fn print_summary(dump: &ChainDump) {
    let p = &dump.params;
    println!(
        "params: base size {}, base confirmations {}, max height {}, subsidy {}, difficulty {} bits",
        p.base_size, p.base_conf, p.max_height, p.subsidy, p.difficulty_bits
    );
    let premined: u64 = dump.premine.iter().map(|a| a.amount).sum();
    println!("premine: {} allocations totalling {premined}", dump.premine.len());
    for alloc in &dump.premine {
        println!("  owner {} height {} amount {}", hex8(&alloc.owner.id), alloc.height, alloc.amount);
    }
    println!("blocks: {}", dump.blocks.len());
    let (mut accepted, mut weak, mut strong) = (0u64, 0u64, 0u64);
    for record in &dump.verdicts {
        match record.verdict {
            Verdict::Accept => accepted += 1,
            Verdict::RejectWeak(_) => weak += 1,
            Verdict::RejectStrong(_) => strong += 1,
        }
    }
    println!("verdicts: {accepted} accepted, {weak} weak rejections, {strong} strong rejections");
}

fn print_block(dump: &ChainDump, pos: u64) -> Result<(), Failure> {
    let block: &Block = dump
        .blocks
        .get(pos as usize)
        .ok_or_else(|| {
            Failure::usage(format!("block {pos} out of range (dump holds {})", dump.blocks.len()))
        })?;
    let h = &block.header;
    println!("block {pos}: id {}", block.id());
    println!("  prev {}", h.prev);
    println!("  top height {}, nonce {}", h.top, h.nonce);
    println!(
        "  coinbase: height {}, amount {}, recipient {}",
        h.coinbase.height,
        h.coinbase.amount,
        hex8(&h.coinbase.recipient.id)
    );
    for sub in &block.subs {
        println!(
            "  sub-block height {}: {} bytes (budget {}), {} txs (drop {})",
            sub.height,
            sub.encoded_len(),
            size_budget(&dump.params, sub.height),
            sub.tx_section.txs.len(),
            sub.tx_section.drop_count
        );
        for cs in &sub.claim_sections {
            println!(
                "    claims offset 2^{}: {} claims (drop {})",
                cs.offset_log2,
                cs.claims.len(),
                cs.drop_count
            );
        }
    }
    let mut verdicts: Vec<_> = dump.verdicts.iter().filter(|r| r.position == pos).collect();
    verdicts.sort_by_key(|r| (r.height, r.section));
    for record in verdicts {
        println!(
            "  verdict height {} section {}: {:?}",
            record.height,
            section_label(record.section),
            record.verdict
        );
    }
    Ok(())
}

fn print_height(dump: &ChainDump, height: Height) -> Result<(), Failure> {
    if height > dump.params.max_height {
        return Err(Failure::usage(format!(
            "height {height} exceeds the dump's maximum height {}",
            dump.params.max_height
        )));
    }
    let view = replay_dump(dump, dump.params.max_height).map_err(Failure::violation)?;
    let ledger = view.ledger(height).expect("height within cutoff");
    println!(
        "height {height}: chain length {}, {} coins, total value {}",
        ledger.chain_length,
        ledger.utxos.len(),
        ledger.total_value()
    );
    for coin in ledger.utxos.values() {
        println!(
            "  {}:{} owner {} amount {} maturity {} {} ({})",
            hex8(&coin.outpoint.txid),
            coin.outpoint.index,
            hex8(&coin.owner.id),
            coin.amount,
            coin.maturity,
            if coin.settled { "settled" } else { "unsettled" },
            origin_label(coin),
        );
    }
    Ok(())
}

fn origin_label(coin: &subchain_core::ledger::Coin) -> String {
    use subchain_core::ledger::CoinOrigin;
    match coin.origin {
        CoinOrigin::Premine => "premine".to_string(),
        CoinOrigin::Regular => "regular".to_string(),
        CoinOrigin::Coinbase { height } => format!("coinbase at height {height}"),
        CoinOrigin::Claim { source_height } => format!("claim from height {source_height}"),
    }
}

// ---------------------------------------------------------------------------
// scenarios
// ---------------------------------------------------------------------------

fn cmd_scenarios() -> Result<(), Failure> {
    for name in scenario_names() {
        println!("{name}");
    }
    Ok(())
}
