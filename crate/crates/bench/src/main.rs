use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use growmap_bench::affinity::PinMode;
use growmap_bench::csvio::{emit_csv, write_csv};
use growmap_bench::scenario::{run_scenario, Scenario, ScenarioKind, Variant};

/// Concurrent hash table benchmark harness.
///
/// Runs one scenario for a chosen table variant, deals the pregenerated
/// operations to worker threads in blocks of 4096, times the operation phase
/// only, averages over repetitions, verifies results against built-in
/// oracles, and appends a CSV record per repetition (plus a mean row).
///
/// Exit status: 0 on success, 1 when an oracle failed, 2 on usage errors.
#[derive(Parser, Debug)]
#[command(name = "growmap-bench", version, disable_help_subcommand = true)]
struct Args {
    /// Scenario: insert_prealloc | insert_grow | find_succ | find_unsucc |
    /// contention_update | contention_find | aggregation | deletion_window |
    /// mixed
    #[arg(long)]
    scenario: String,

    /// Table variant: folklore | uaGrow | usGrow | paGrow | psGrow |
    /// sequential
    #[arg(long, default_value = "uaGrow")]
    variant: String,

    /// Worker thread count (the pool variants add as many migration threads).
    #[arg(long, default_value_t = default_threads())]
    threads: usize,

    /// Operations per repetition.
    #[arg(long, default_value_t = 1_000_000)]
    ops: usize,

    /// Prefill element count (0 = scenario default).
    #[arg(long, default_value_t = 0)]
    prefill: usize,

    /// Expected-element sizing parameter (0 = scenario default). The table
    /// allocates the smallest power of two holding twice this many elements.
    #[arg(long, default_value_t = 0)]
    capacity: usize,

    /// Zipf skew exponent for the contention/aggregation scenarios.
    #[arg(long = "zipf-s", default_value_t = 1.0)]
    zipf_s: f64,

    /// Zipf universe size.
    #[arg(long = "zipf-n", default_value_t = 1_000_000)]
    zipf_n: u64,

    /// Write (insert) fraction for the mixed scenario.
    #[arg(long, default_value_t = 0.2)]
    wp: f64,

    /// Sliding-window size for the deletion scenario.
    #[arg(long, default_value_t = 10_000)]
    window: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Repetitions to average over.
    #[arg(long, default_value_t = 5)]
    reps: usize,

    /// CSV output path (appended; header written when new). Without it the
    /// CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Run the correctness oracles after each repetition.
    #[arg(long, default_value = "on", value_parser = ["on", "off"])]
    verify: String,

    /// Pin worker threads to cores when the platform allows it.
    #[arg(long, default_value = "auto", value_parser = ["auto", "off"])]
    pin: String,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
}

fn main() -> ExitCode {
    let args = Args::parse();

    let Some(kind) = ScenarioKind::parse(&args.scenario) else {
        eprintln!("unknown scenario '{}'", args.scenario);
        return ExitCode::from(2);
    };
    let Some(variant) = Variant::parse(&args.variant) else {
        eprintln!("unknown variant '{}'", args.variant);
        return ExitCode::from(2);
    };

    let scenario = Scenario {
        kind,
        variant,
        threads: args.threads,
        ops: args.ops,
        prefill: args.prefill,
        capacity: args.capacity,
        zipf_s: args.zipf_s,
        zipf_n: args.zipf_n,
        wp: args.wp,
        window: args.window,
        seed: args.seed,
        reps: args.reps,
        verify: args.verify == "on",
        pin: if args.pin == "auto" { PinMode::Auto } else { PinMode::Off },
    };

    let result = match run_scenario(&scenario) {
        Ok(r) => r,
        Err(msg) => {
            eprintln!("usage error: {msg}");
            return ExitCode::from(2);
        }
    };

    // Human-readable summary; tables are rebuilt from scratch each
    // repetition, and timing covers the operation phase only.
    eprintln!(
        "{} / {} / {} threads / {} ops x{} reps: {:.2} Mops/s (pinned: {}, verify: {})",
        kind.name(),
        variant.name(),
        scenario.threads,
        scenario.ops,
        scenario.reps,
        result.mean_mops,
        result.pinned,
        if scenario.verify { "on" } else { "off" },
    );
    for (i, rep) in result.reps.iter().enumerate() {
        if !rep.notes.is_empty() {
            eprintln!("  rep {i}: {}", rep.notes.join("; "));
        }
    }

    match &args.out {
        Some(path) => {
            if let Err(e) = emit_csv(path, &result.rows) {
                eprintln!("cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            if write_csv(&mut out, &result.rows).is_err() {
                return ExitCode::from(2);
            }
        }
    }

    if result.all_pass {
        ExitCode::SUCCESS
    } else {
        eprintln!("oracle FAILED; see csv records");
        ExitCode::from(1)
    }
}
