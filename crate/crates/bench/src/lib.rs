//! Benchmark and verification harness for the growmap hash table: workload
//! scenarios with block-dealt work distribution, repetition averaging, CSV
//! output, built-in oracles, and a non-atomic sequential baseline.

pub mod affinity;
pub mod csvio;
pub mod scenario;
pub mod seq;

pub use affinity::PinMode;
pub use csvio::{emit_csv, CsvRow, CSV_HEADER};
pub use scenario::{run_scenario, RunResult, Scenario, ScenarioKind, Variant};
pub use seq::SeqTable;
