//! Concurrent hash map for word-sized keys and values.
//!
//! The building block is a bounded, circular linear-probing table whose cells
//! are 128-bit aligned (key, value) pairs modified through double-width atomic
//! compare-exchange. On top of it, [`GrowTable`] adds adaptive resizing: the
//! table is migrated in parallel to a larger (or smaller, or equally sized)
//! table once it fills up, with migration work shared between either the
//! application threads themselves or a dedicated worker pool.
//!
//! Keys are `u64` values in `1..=MAX_USER_KEY`; two sentinels (empty, deleted)
//! and the migration mark bit are reserved. Values are arbitrary `u64` words.

pub mod cell;
pub mod counter;
pub mod grow;
pub mod migrate;
pub mod table;
pub mod workload;

pub use cell::{Cell, DEL_KEY, EMPTY_KEY, MARK_BIT, MAX_USER_KEY};
pub use counter::SizeEstimate;
pub use grow::{GrowConfig, GrowTable, Handle, Protocol, Strategy};
pub use table::{
    capacity_for, slot_of, AddValue, BoundedTable, EraseOutcome, InsertOutcome, Overwrite,
    UpdateFn, UpdateOutcome, UpsertOutcome, MIN_CAPACITY, PROBE_LIMIT,
};
