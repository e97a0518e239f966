//! The growing hash table: bounded table versions behind an adaptive
//! migration layer.
//!
//! Threads access the table through per-thread [`Handle`]s that cache the
//! current table version and carry the local insertion/deletion counters.
//! Once the global insertion count reaches `alpha` times the capacity (or an
//! operation runs out of probe budget) a migration is triggered. Two
//! orthogonal choices configure how it runs:
//!
//! * strategy — migration work is done by the application threads that
//!   touch the table while it is growing (`User`), or by a dedicated pool of
//!   parked worker threads (`Pool`);
//! * protocol — writers are fenced off per cell with a mark bit so they can
//!   keep operating on unmarked cells during the migration (`AsyncMark`), or
//!   globally with a grow flag and per-handle busy flags so updates and
//!   migration never overlap (`Synchronized`).
//!
//! Publication of the new table version is the single mutex-guarded step;
//! everything else is atomics. Old versions are reference counted and fall
//! away once every handle has refreshed.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::thread::JoinHandle;

use crossbeam_utils::CachePadded;

use crate::cell::is_user_key;
use crate::counter::{GlobalCounters, HandleSlot, SizeEstimate};
use crate::migrate::{MigrationJob, WorkerOutcome};
use crate::table::{
    capacity_for, BoundedTable, EraseOutcome, InsertOutcome, Overwrite, UpdateFn, UpdateOutcome,
    UpsertOutcome, MIN_CAPACITY,
};
use crate::workload::SplitMix64;

/// Who performs migration work.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Strategy {
    /// Recruit application threads that touch the table during a migration.
    User,
    /// A dedicated pool of parked threads, woken per migration.
    Pool,
}

/// How writers and migration keep out of each other's way.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Protocol {
    /// Cells are marked before copying; writers fail on marked cells and
    /// retry on the new version. Reads pass through freely.
    AsyncMark,
    /// A global grow flag plus per-handle busy flags keep operations and
    /// migration windows disjoint; no per-cell marks, and value updates may
    /// use single-word atomics.
    Synchronized,
}

#[derive(Clone, Copy, Debug)]
pub struct GrowConfig {
    /// Fill factor (counting tombstones) that triggers a migration.
    pub alpha: f64,
    /// Minimum growth ratio for a growing migration; power of two.
    pub growth_factor: usize,
    pub strategy: Strategy,
    pub protocol: Protocol,
    /// Worker count for [`Strategy::Pool`]; 0 means hardware parallelism.
    pub pool_size: usize,
    /// Full-width 64-bit hash over keys.
    pub hasher: fn(u64) -> u64,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig {
            alpha: 0.6,
            growth_factor: 2,
            strategy: Strategy::User,
            protocol: Protocol::AsyncMark,
            pool_size: 0,
            hasher: crate::workload::hash64,
        }
    }
}

impl GrowConfig {
    pub fn user_async() -> Self {
        GrowConfig { strategy: Strategy::User, protocol: Protocol::AsyncMark, ..Default::default() }
    }

    pub fn user_sync() -> Self {
        GrowConfig {
            strategy: Strategy::User,
            protocol: Protocol::Synchronized,
            ..Default::default()
        }
    }

    pub fn pool_async() -> Self {
        GrowConfig { strategy: Strategy::Pool, protocol: Protocol::AsyncMark, ..Default::default() }
    }

    pub fn pool_sync() -> Self {
        GrowConfig {
            strategy: Strategy::Pool,
            protocol: Protocol::Synchronized,
            ..Default::default()
        }
    }
}

/// Smallest power of two at least twice the live element count (clamped to
/// [`MIN_CAPACITY`]): the capacity rule shared by migration decisions and
/// table construction.
pub fn capacity_decision(live: u64) -> usize {
    capacity_for(live as usize)
}

/// Migration trigger and sizing: fires when the insertion count (non-empty
/// cells, tombstones included) reaches `alpha` times the capacity, or always
/// when `forced` by an overflowing probe. The target is the smallest power of
/// two holding twice the live count, which yields growing, same-size cleanup
/// or shrinking uniformly; growth honors the configured minimum factor, and a
/// forced trigger with nothing to clean up always grows.
pub fn decide_target_capacity(
    insertions: u64,
    deletions: u64,
    capacity: usize,
    alpha: f64,
    growth_factor: usize,
    forced: bool,
) -> Option<usize> {
    if !forced && (insertions as f64) < alpha * capacity as f64 {
        return None;
    }
    let live = insertions.saturating_sub(deletions);
    let mut target = capacity_decision(live);
    if target > capacity {
        target = target.max(capacity * growth_factor);
    } else if forced && deletions == 0 {
        target = capacity * growth_factor.max(2);
    }
    Some(target)
}

struct PoolState {
    pending: u64,
    shutdown: bool,
}

struct PoolShared {
    state: Mutex<PoolState>,
    cv: Condvar,
    owner: Mutex<Weak<GrowInner>>,
}

struct Pool {
    shared: Arc<PoolShared>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Pool {
    fn new() -> Self {
        Pool {
            shared: Arc::new(PoolShared {
                state: Mutex::new(PoolState { pending: 0, shutdown: false }),
                cv: Condvar::new(),
                owner: Mutex::new(Weak::new()),
            }),
            workers: Mutex::new(Vec::new()),
        }
    }

    fn start(&self, owner: &Arc<GrowInner>, size: usize) {
        *self.shared.owner.lock().unwrap() = Arc::downgrade(owner);
        let mut workers = self.workers.lock().unwrap();
        for i in 0..size {
            let shared = self.shared.clone();
            let handle = std::thread::Builder::new()
                .name(format!("growmap-migrate-{i}"))
                .spawn(move || pool_worker(shared))
                .expect("failed to spawn migration pool worker");
            workers.push(handle);
        }
    }

    fn wake(&self) {
        let mut st = self.shared.state.lock().unwrap();
        st.pending += 1;
        self.shared.cv.notify_all();
    }

    fn shutdown(&self) {
        {
            let mut st = self.shared.state.lock().unwrap();
            st.shutdown = true;
            self.shared.cv.notify_all();
        }
        let me = std::thread::current().id();
        for handle in self.workers.lock().unwrap().drain(..) {
            if handle.thread().id() != me {
                let _ = handle.join();
            }
        }
    }
}

fn pool_worker(shared: Arc<PoolShared>) {
    let mut seen = 0u64;
    loop {
        {
            let mut st = shared.state.lock().unwrap();
            while st.pending == seen && !st.shutdown {
                st = shared.cv.wait(st).unwrap();
            }
            if st.shutdown {
                return;
            }
            seen = st.pending;
        }
        let Some(inner) = shared.owner.lock().unwrap().upgrade() else { return };
        let job = inner.job.lock().unwrap().clone();
        if let Some(job) = job {
            inner.drive(job);
        }
    }
}

struct GrowInner {
    /// The published current version. Swapping the `Arc` is the one
    /// mutex-guarded step; the version/capacity mirrors make staleness
    /// checks lock-free.
    current: Mutex<Arc<BoundedTable>>,
    version: CachePadded<AtomicU64>,
    capacity: CachePadded<AtomicUsize>,
    counters: GlobalCounters,
    config: GrowConfig,
    /// At most one migration in flight.
    migrating: CachePadded<AtomicBool>,
    job: Mutex<Option<Arc<MigrationJob>>>,
    /// Raised for the synchronized protocol's handshake.
    grow_flag: CachePadded<AtomicBool>,
    handle_seq: AtomicU64,
    pool: Option<Pool>,
}

impl Drop for GrowInner {
    fn drop(&mut self) {
        if let Some(pool) = &self.pool {
            pool.shutdown();
        }
    }
}

/// A concurrent hash map over word-sized keys and values that grows (and
/// shrinks, and compacts away tombstones) by parallel migration. Cloning is
/// cheap and shares the table; per-thread access goes through
/// [`GrowTable::handle`].
#[derive(Clone)]
pub struct GrowTable {
    inner: Arc<GrowInner>,
}

impl GrowTable {
    pub fn new(expected_n: usize, config: GrowConfig) -> Self {
        assert!(config.alpha > 0.0 && config.alpha < 1.0);
        assert!(config.growth_factor.is_power_of_two() && config.growth_factor >= 1);
        let table = Arc::new(BoundedTable::with_raw_capacity(
            capacity_for(expected_n),
            1,
            config.hasher,
        ));
        let pool = match config.strategy {
            Strategy::Pool => Some(Pool::new()),
            Strategy::User => None,
        };
        let inner = Arc::new(GrowInner {
            version: CachePadded::new(AtomicU64::new(table.version())),
            capacity: CachePadded::new(AtomicUsize::new(table.capacity())),
            current: Mutex::new(table),
            counters: GlobalCounters::new(1),
            config,
            migrating: CachePadded::new(AtomicBool::new(false)),
            job: Mutex::new(None),
            grow_flag: CachePadded::new(AtomicBool::new(false)),
            handle_seq: AtomicU64::new(0),
            pool,
        });
        if let Some(pool) = &inner.pool {
            let size = if config.pool_size == 0 {
                std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
            } else {
                config.pool_size
            };
            pool.start(&inner, size);
        }
        GrowTable { inner }
    }

    /// Bulk construction: sorts the pairs by their target slot, removes all
    /// but the last occurrence of each key, and inserts slot ranges in
    /// parallel. The result matches element-wise insertion with overwrite.
    pub fn build_from(pairs: &[(u64, u64)], config: GrowConfig) -> Self {
        let table = GrowTable::new(pairs.len(), config);
        let bounded = table.published_table();
        let capacity = bounded.capacity();
        let hasher = config.hasher;

        let mut items: Vec<(usize, u64, usize)> = pairs
            .iter()
            .enumerate()
            .map(|(i, (k, _))| (crate::table::slot_of(hasher(*k), capacity), *k, i))
            .collect();
        items.sort_unstable();
        // Keep the last occurrence per key: after sorting by (slot, key,
        // position), that is the final entry of each equal-key run.
        let mut deduped: Vec<(u64, u64)> = Vec::with_capacity(items.len());
        for w in 0..items.len() {
            let (_, key, idx) = items[w];
            let last_of_run = w + 1 == items.len() || items[w + 1].1 != key;
            if last_of_run {
                deduped.push((key, pairs[idx].1));
            }
        }

        let threads = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
        let chunk = deduped.len().div_ceil(threads.max(1)).max(1);
        std::thread::scope(|s| {
            for part in deduped.chunks(chunk) {
                let bounded = &bounded;
                s.spawn(move || {
                    for &(k, v) in part {
                        let r = bounded.insert(k, v);
                        debug_assert_eq!(r, InsertOutcome::Inserted);
                    }
                });
            }
        });
        table.inner.counters.reset_for_version(bounded.version(), deduped.len() as u64);
        table
    }

    /// Creates this thread's access handle.
    pub fn handle(&self) -> Handle {
        let cached = self.inner.current.lock().unwrap().clone();
        let version = cached.version();
        let slot = self.inner.counters.register(version);
        let seq = self.inner.handle_seq.fetch_add(1, Ordering::Relaxed);
        let mut rng = SplitMix64::new(0x8f0c_95a7_3d2e_11b9 ^ seq);
        let p = self.inner.counters.handles() as u64;
        let threshold = rng.next_in(p) as u32;
        Handle { inner: self.inner.clone(), slot, cached, cached_version: version, rng, threshold }
    }

    /// Published capacity in cells.
    pub fn capacity(&self) -> usize {
        self.inner.capacity.load(Ordering::Acquire)
    }

    /// Published table version; increases by one per completed migration.
    pub fn version(&self) -> u64 {
        self.inner.version.load(Ordering::Acquire)
    }

    /// The current bounded table version. Mainly for verification; element
    /// access should go through handles.
    pub fn published_table(&self) -> Arc<BoundedTable> {
        self.inner.current.lock().unwrap().clone()
    }

    /// Size bounds from the global counters; the true size at a quiescent
    /// point lies within.
    pub fn estimate_size(&self) -> SizeEstimate {
        self.inner.counters.estimate(self.version())
    }

    /// Raw (insertions, deletions) counters for the published version, for
    /// verification. Excludes unflushed per-handle residuals.
    pub fn counter_snapshot(&self) -> (u64, u64) {
        let v = self.version();
        (self.inner.counters.insertions(v), self.inner.counters.deletions(v))
    }

    /// Exact element count. Only valid while no operations are in flight;
    /// the result is unspecified otherwise.
    pub fn exact_size_quiescent(&self) -> u64 {
        self.inner.counters.exact_quiescent(self.version())
    }

    /// Quiescent snapshot of the live elements.
    pub fn live_entries(&self) -> Vec<(u64, u64)> {
        self.published_table().live_entries()
    }

    /// Forces a migration now, sized by the live-element rule (so it may
    /// grow, stay, or shrink); tombstones are dropped either way. The
    /// calling thread participates in (or waits out) the work.
    pub fn compact(&self) {
        if !self.inner.try_start_migration(true) {
            self.quiesce();
        }
    }

    /// Waits until no migration is in flight. Once the caller also knows no
    /// other thread is mid-operation, the table is fully quiescent.
    pub fn quiesce(&self) {
        loop {
            let job = self.inner.job.lock().unwrap().clone();
            match job {
                Some(job) => match self.inner.config.strategy {
                    Strategy::User => self.inner.drive(job),
                    Strategy::Pool => job.wait_done(),
                },
                None => {
                    if !self.inner.migrating.load(Ordering::Acquire) {
                        return;
                    }
                    std::thread::yield_now();
                }
            }
        }
    }
}

impl GrowInner {
    /// Starts a migration if none is running and the trigger condition (or
    /// `forced`) holds. Returns true when this call initiated one.
    fn try_start_migration(&self, forced: bool) -> bool {
        if self
            .migrating
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return false;
        }
        let version = self.version.load(Ordering::Acquire);
        let cap = self.capacity.load(Ordering::Acquire);
        let i = self.counters.insertions(version);
        let d = self.counters.deletions(version);
        let Some(new_cap) =
            decide_target_capacity(i, d, cap, self.config.alpha, self.config.growth_factor, forced)
        else {
            self.migrating.store(false, Ordering::Release);
            return false;
        };

        let source = self.current.lock().unwrap().clone();
        let mark = self.config.protocol == Protocol::AsyncMark;
        let job = Arc::new(if new_cap >= cap {
            MigrationJob::grow(source, new_cap, mark)
        } else {
            MigrationJob::shrink(source, new_cap, mark)
        });

        if self.config.protocol == Protocol::Synchronized {
            self.grow_flag.store(true, Ordering::SeqCst);
            self.busy_handshake();
        }
        *self.job.lock().unwrap() = Some(job.clone());
        match self.config.strategy {
            Strategy::User => self.drive(job),
            Strategy::Pool => self.pool.as_ref().expect("pool strategy has a pool").wake(),
        }
        true
    }

    /// Waits until every handle's busy flag has been observed unset at least
    /// once. Once a handle saw the grow flag it cannot re-enter an operation
    /// until the migration completes.
    fn busy_handshake(&self) {
        for slot in self.counters.snapshot_slots() {
            let mut spins = 0u32;
            while slot.busy.load(Ordering::SeqCst) {
                spins += 1;
                if spins.is_multiple_of(64) {
                    std::thread::yield_now();
                } else {
                    std::hint::spin_loop();
                }
            }
        }
    }

    /// Performs migration work until the job completes; the elected finisher
    /// resets the counters, publishes the new version and releases everyone
    /// waiting. Failed shrinks are retried with a doubled target.
    fn drive(&self, mut job: Arc<MigrationJob>) {
        loop {
            match job.run_worker() {
                WorkerOutcome::Finisher => {
                    if job.is_failed() {
                        let retry = self.rebuild_failed_shrink(&job);
                        job.mark_done();
                        job = retry;
                        if self.config.strategy == Strategy::Pool {
                            self.pool.as_ref().unwrap().wake();
                        }
                        continue;
                    }
                    self.finish(&job);
                    job.mark_done();
                    return;
                }
                WorkerOutcome::Helper => {
                    job.wait_done();
                    return;
                }
            }
        }
    }

    fn rebuild_failed_shrink(&self, failed: &MigrationJob) -> Arc<MigrationJob> {
        let source = self.current.lock().unwrap().clone();
        let mark = self.config.protocol == Protocol::AsyncMark;
        let new_cap = failed.target_capacity() * 2;
        let source_cap = source.capacity();
        let job = Arc::new(if new_cap >= source_cap {
            MigrationJob::grow(source, source_cap.max(new_cap), mark)
        } else {
            MigrationJob::shrink(source, new_cap, mark)
        });
        *self.job.lock().unwrap() = Some(job.clone());
        job
    }

    fn finish(&self, job: &MigrationJob) {
        let new_version = job.target_version();
        let moved = job.moved_total();
        // Counter reset comes first: any in-flight count traffic for the old
        // version dies against the new epoch instead of polluting the
        // rebuilt insertion count.
        self.counters.reset_for_version(new_version, moved);
        let table = Arc::new(job.take_target());
        {
            let mut cur = self.current.lock().unwrap();
            *cur = table.clone();
        }
        self.capacity.store(table.capacity(), Ordering::Release);
        self.version.store(new_version, Ordering::Release);
        *self.job.lock().unwrap() = None;
        if self.config.protocol == Protocol::Synchronized {
            self.grow_flag.store(false, Ordering::SeqCst);
        }
        self.migrating.store(false, Ordering::Release);
    }

    /// Called by an operation that ran into the migration (marked cell or
    /// raised grow flag): help per strategy, or sleep until completion.
    fn wait_or_help(&self) {
        let job = self.job.lock().unwrap().clone();
        match job {
            None => std::thread::yield_now(), // completed; caller refreshes and retries
            Some(job) => match self.config.strategy {
                Strategy::User => self.drive(job),
                Strategy::Pool => job.wait_done(),
            },
        }
    }
}

enum OpResult<R> {
    Done(R),
    Migrating,
    Overflow,
}

/// Per-thread access object. Not shareable: each thread creates its own from
/// [`GrowTable::handle`]. Dropping a handle flushes its residual counter
/// batches.
pub struct Handle {
    inner: Arc<GrowInner>,
    slot: Arc<HandleSlot>,
    cached: Arc<BoundedTable>,
    cached_version: u64,
    rng: SplitMix64,
    threshold: u32,
}

impl Handle {
    /// Inserts `⟨key, value⟩`; false if the key was already present.
    pub fn insert(&mut self, key: u64, value: u64) -> bool {
        assert!(is_user_key(key), "key {key} outside the user key space");
        let inserted = self.run(|t| match t.insert(key, value) {
            InsertOutcome::Inserted => OpResult::Done(true),
            InsertOutcome::KeyPresent => OpResult::Done(false),
            InsertOutcome::Overflow => OpResult::Overflow,
            InsertOutcome::Migrating => OpResult::Migrating,
        });
        if inserted {
            self.note_insertion();
        }
        inserted
    }

    /// Atomically updates the value under `key`; false if absent.
    pub fn update<U: UpdateFn>(&mut self, key: u64, arg: u64, up: &U) -> bool {
        assert!(is_user_key(key), "key {key} outside the user key space");
        let allow_atomic = self.inner.config.protocol == Protocol::Synchronized;
        self.run(|t| match t.update(key, arg, up, allow_atomic) {
            UpdateOutcome::Updated => OpResult::Done(true),
            UpdateOutcome::NotFound => OpResult::Done(false),
            UpdateOutcome::Migrating => OpResult::Migrating,
        })
    }

    /// Inserts or updates; true when a new key was inserted.
    pub fn insert_or_update<U: UpdateFn>(&mut self, key: u64, arg: u64, up: &U) -> bool {
        assert!(is_user_key(key), "key {key} outside the user key space");
        let allow_atomic = self.inner.config.protocol == Protocol::Synchronized;
        let inserted = self.run(|t| match t.insert_or_update(key, arg, up, allow_atomic) {
            UpsertOutcome::Inserted => OpResult::Done(true),
            UpsertOutcome::Updated => OpResult::Done(false),
            UpsertOutcome::Overflow => OpResult::Overflow,
            UpsertOutcome::Migrating => OpResult::Migrating,
        });
        if inserted {
            self.note_insertion();
        }
        inserted
    }

    /// Returns a copy of the stored value, if any. Never blocks on a
    /// migration under the asynchronous protocol.
    pub fn find(&mut self, key: u64) -> Option<u64> {
        assert!(is_user_key(key), "key {key} outside the user key space");
        self.run(|t| OpResult::Done(t.find(key)))
    }

    /// Deletes the key (tombstoning its cell); false if absent.
    pub fn erase(&mut self, key: u64) -> bool {
        assert!(is_user_key(key), "key {key} outside the user key space");
        let deleted = self.run(|t| match t.erase(key) {
            EraseOutcome::Deleted => OpResult::Done(true),
            EraseOutcome::NotFound => OpResult::Done(false),
            EraseOutcome::Migrating => OpResult::Migrating,
        });
        if deleted {
            self.note_deletion();
        }
        deleted
    }

    /// Convenience overwrite-update.
    pub fn overwrite(&mut self, key: u64, value: u64) -> bool {
        self.update(key, value, &Overwrite)
    }

    pub fn table(&self) -> GrowTable {
        GrowTable { inner: self.inner.clone() }
    }

    fn run<R>(&mut self, op: impl Fn(&BoundedTable) -> OpResult<R>) -> R {
        let sync = self.inner.config.protocol == Protocol::Synchronized;
        loop {
            if sync {
                self.slot.busy.store(true, Ordering::SeqCst);
                if self.inner.grow_flag.load(Ordering::SeqCst) {
                    self.slot.busy.store(false, Ordering::SeqCst);
                    self.inner.wait_or_help();
                    continue;
                }
            }
            self.refresh_cached();
            let result = op(&self.cached);
            if sync {
                self.slot.busy.store(false, Ordering::SeqCst);
            }
            match result {
                OpResult::Done(r) => return r,
                OpResult::Migrating => self.inner.wait_or_help(),
                OpResult::Overflow => {
                    if !self.inner.try_start_migration(true) {
                        self.inner.wait_or_help();
                    }
                }
            }
        }
    }

    fn refresh_cached(&mut self) {
        let published = self.inner.version.load(Ordering::Acquire);
        if published != self.cached_version {
            let cur = self.inner.current.lock().unwrap().clone();
            self.cached = cur;
            self.cached_version = self.cached.version();
            // A handle registered in a migration's finalization window can
            // miss the counter restamp; moving the slot forward here keeps
            // its future counts from being dropped as stale.
            self.slot.restamp(self.cached_version);
        }
    }

    fn note_insertion(&mut self) {
        let version = self.cached_version;
        let Some(count) = self.slot.bump_ins(version) else { return };
        if count >= self.threshold {
            if self.slot.take_ins(version, count) {
                if let Some(i) = self.inner.counters.flush_insertions(version, count) {
                    self.redraw_threshold();
                    self.check_trigger(i);
                    return;
                }
            }
            self.redraw_threshold();
        }
    }

    fn note_deletion(&mut self) {
        let version = self.cached_version;
        let Some(count) = self.slot.bump_del(version) else { return };
        if count >= self.threshold {
            if self.slot.take_del(version, count)
                && self.inner.counters.flush_deletions(version, count).is_some() {
                    self.redraw_threshold();
                    let i = self.inner.counters.insertions(version);
                    self.check_trigger(i);
                    return;
                }
            self.redraw_threshold();
        }
    }

    fn redraw_threshold(&mut self) {
        let p = self.inner.counters.handles() as u64;
        self.threshold = self.rng.next_in(p) as u32;
    }

    fn check_trigger(&self, insertions: u64) {
        let cap = self.inner.capacity.load(Ordering::Acquire);
        if (insertions as f64) >= self.inner.config.alpha * cap as f64 {
            self.inner.try_start_migration(false);
        }
    }
}

impl Drop for Handle {
    fn drop(&mut self) {
        let version = self.inner.version.load(Ordering::Acquire);
        self.inner.counters.deregister(&self.slot, version);
    }
}

const _: () = {
    // GrowTable is shared across threads; handles move but are not shared.
    const fn assert_send_sync<T: Send + Sync>() {}
    const fn assert_send<T: Send>() {}
    _ = assert_send_sync::<GrowTable>;
    _ = assert_send::<Handle>;
    _ = MIN_CAPACITY;
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::AddValue;
    use std::time::Duration;

    fn all_configs() -> [(&'static str, GrowConfig); 4] {
        [
            ("ua", GrowConfig::user_async()),
            ("us", GrowConfig::user_sync()),
            ("pa", GrowConfig { pool_size: 2, ..GrowConfig::pool_async() }),
            ("ps", GrowConfig { pool_size: 2, ..GrowConfig::pool_sync() }),
        ]
    }

    #[test]
    fn trigger_decision_arithmetic() {
        // At the fill threshold with no deletions: double.
        assert_eq!(decide_target_capacity(2458, 0, 4096, 0.6, 2, false), Some(8192));
        assert_eq!(decide_target_capacity(2457, 0, 4096, 0.6, 2, false), None);
        // Mostly tombstones: shrink to the live-size rule. 916 live wants the
        // smallest power of two >= 1832, which the floor capacity lifts to
        // 4096.
        assert_eq!(decide_target_capacity(4916, 4000, 8192, 0.6, 2, false), Some(4096));
        assert_eq!(capacity_decision(916), 4096);
        // Same-size cleanup when the live count still fits: 1958 live needs
        // only 4096 cells.
        assert_eq!(decide_target_capacity(2458, 500, 4096, 0.6, 2, false), Some(4096));
        // Forced by overflow without tombstones: must grow.
        assert_eq!(decide_target_capacity(100, 0, 4096, 0.6, 2, true), Some(8192));
        // Forced with tombstones: a cleanup is enough.
        assert_eq!(decide_target_capacity(3000, 2900, 4096, 0.6, 2, true), Some(4096));
        // A larger configured growth factor floors the growth step.
        assert_eq!(decide_target_capacity(2458, 0, 4096, 0.6, 4, false), Some(16384));
    }

    #[test]
    fn first_migration_fires_exactly_at_the_trigger() {
        // Single-threaded, so every insertion flushes: the first migration
        // runs on the insert that lifts I to ceil(0.6 * 4096) = 2458, and
        // doubles the table.
        let table = GrowTable::new(0, GrowConfig::user_async());
        let mut h = table.handle();
        for k in 1..=2457u64 {
            assert!(h.insert(k, k));
            assert_eq!(table.version(), 1, "no migration through insert {k}");
        }
        assert_eq!(table.capacity(), 4096);
        assert!(h.insert(2458, 2458));
        assert_eq!(table.version(), 2);
        assert_eq!(table.capacity(), 8192);
    }

    #[test]
    fn handle_thresholds_stay_in_range() {
        let table = GrowTable::new(0, GrowConfig::user_async());
        let handles: Vec<Handle> = (0..6).map(|_| table.handle()).collect();
        for h in &handles {
            assert!((1..=6u32).contains(&h.threshold), "threshold {}", h.threshold);
        }
        let mut h = table.handle();
        for k in 1..=500u64 {
            assert!(h.insert(k, k));
            assert!((1..=7u32).contains(&h.threshold), "redrawn threshold {}", h.threshold);
        }
    }

    #[test]
    fn grows_from_minimum_and_finds_everything() {
        let table = GrowTable::new(0, GrowConfig::user_async());
        assert_eq!(table.capacity(), MIN_CAPACITY);
        let mut h = table.handle();
        let n = 100_000u64;
        for k in 1..=n {
            assert!(h.insert(k, k * 7));
        }
        assert!(table.capacity() >= 2 * n as usize);
        assert!(table.version() > 1, "at least one migration ran");
        for k in 1..=n {
            assert_eq!(h.find(k), Some(k * 7), "key {k}");
        }
        assert_eq!(h.find(n + 1), None);
    }

    #[test]
    fn all_variants_agree_on_contents() {
        let keys: Vec<u64> = (1..=20_000u64).map(|k| k * 3 + 1).collect();
        let mut snapshots = Vec::new();
        for (name, cfg) in all_configs() {
            let table = GrowTable::new(0, cfg);
            std::thread::scope(|s| {
                for part in keys.chunks(keys.len() / 4) {
                    let table = table.clone();
                    s.spawn(move || {
                        let mut h = table.handle();
                        for &k in part {
                            assert!(h.insert(k, k ^ 0xabc));
                        }
                    });
                }
            });
            let mut live = table.live_entries();
            live.sort_unstable();
            snapshots.push((name, live));
        }
        for pair in snapshots.windows(2) {
            assert_eq!(pair[0].1, pair[1].1, "{} vs {}", pair[0].0, pair[1].0);
        }
        assert_eq!(snapshots[0].1.len(), keys.len());
    }

    #[test]
    fn counters_reset_after_migration() {
        let table = GrowTable::new(0, GrowConfig::user_async());
        let mut h = table.handle();
        let mut expect_live = 0u64;
        let mut last_version = table.version();
        for k in 1..=30_000u64 {
            assert!(h.insert(k, k));
            expect_live += 1;
            let v = table.version();
            if v != last_version {
                // A migration just completed; at this single-threaded point
                // the rebuilt count is exact and deletions are zero.
                let inner = &table.inner;
                assert_eq!(inner.counters.insertions(v), expect_live, "I after migration");
                assert_eq!(inner.counters.deletions(v), 0, "D after migration");
                last_version = v;
            }
        }
        assert!(last_version > 1);
        assert_eq!(table.exact_size_quiescent(), expect_live);
    }

    #[test]
    fn estimate_brackets_true_size_under_concurrency() {
        let table = GrowTable::new(100_000, GrowConfig::user_async());
        let threads = 8u64;
        let per_thread = 10_000u64;
        std::thread::scope(|s| {
            for t in 0..threads {
                let table = table.clone();
                s.spawn(move || {
                    let mut h = table.handle();
                    for i in 0..per_thread {
                        assert!(h.insert(1 + t * per_thread + i, i));
                    }
                });
            }
        });
        // Handles are gone (residuals flushed): the estimate must bracket
        // the true count even before that, but now it is exact.
        let total = threads * per_thread;
        let est = table.estimate_size();
        assert!(est.lower <= total && total <= est.upper, "{est:?}");
        assert_eq!(table.exact_size_quiescent(), total);
        assert_eq!(table.live_entries().len() as u64, total);
    }

    #[test]
    fn deficit_bounded_before_final_flush() {
        let table = GrowTable::new(200_000, GrowConfig::user_async());
        let threads = 8usize;
        let n = 100_000u64;
        let barrier = std::sync::Barrier::new(threads + 1);
        std::thread::scope(|s| {
            let mut handles = Vec::new();
            for t in 0..threads as u64 {
                let table = table.clone();
                let barrier = &barrier;
                handles.push(s.spawn(move || {
                    let mut h = table.handle();
                    let per = n / threads as u64;
                    for i in 0..per {
                        assert!(h.insert(1 + t * per + i, i));
                    }
                    barrier.wait(); // quiescent: handle still alive, unflushed
                    barrier.wait(); // released after the main thread checked
                }));
            }
            barrier.wait();
            let version = table.version();
            let i = table.inner.counters.insertions(version);
            let p = threads as u64;
            assert!(n - i <= p * (p - 1), "deficit {} exceeds {}", n - i, p * (p - 1));
            assert_eq!(table.exact_size_quiescent(), n);
            barrier.wait();
        });
        assert_eq!(table.inner.counters.insertions(table.version()), n);
    }

    #[test]
    fn deletion_then_cleanup_keeps_fixed_capacity() {
        // Sliding window: capacity parameter 1.5x the window keeps the table
        // at one size while tombstone cleanups recycle the cells.
        let window = 2500usize;
        let table = GrowTable::new(window * 3 / 2, GrowConfig::user_async());
        let cap0 = table.capacity();
        let mut h = table.handle();
        let keys: Vec<u64> = (1..=(window + 40_000) as u64).collect();
        for &k in &keys[..window] {
            assert!(h.insert(k, k));
        }
        for i in 0..40_000 {
            assert!(h.insert(keys[window + i], keys[window + i]));
            assert!(h.erase(keys[i]));
        }
        assert_eq!(table.capacity(), cap0, "cleanups kept the size");
        assert!(table.version() > 1, "cleanup migrations ran");
        assert_eq!(table.exact_size_quiescent(), window as u64);
        for &k in &keys[40_000..40_000 + window] {
            assert_eq!(h.find(k), Some(k));
        }
        assert_eq!(h.find(keys[0]), None);
        assert_eq!(h.find(keys[39_999]), None);
    }

    #[test]
    fn organic_shrink() {
        // Fill close to the trigger, erase almost everything, then push I
        // over the trigger: the live count dictates a smaller table.
        let table = GrowTable::new(30_000, GrowConfig::user_async());
        assert_eq!(table.capacity(), 65_536);
        let mut h = table.handle();
        for k in 1..=39_000u64 {
            assert!(h.insert(k, k));
        }
        assert_eq!(table.capacity(), 65_536, "no trigger yet");
        for k in 1..=38_000u64 {
            assert!(h.erase(k));
        }
        for k in 100_001..=100_400u64 {
            assert!(h.insert(k, k));
        }
        // I crossed 39322 >= 0.6 * 65536 with ~1400 live elements.
        assert!(table.version() > 1, "migration triggered");
        assert_eq!(table.capacity(), MIN_CAPACITY, "shrank to the live-size rule");
        assert_eq!(table.exact_size_quiescent(), 1400);
        for k in 100_001..=100_400u64 {
            assert_eq!(h.find(k), Some(k));
        }
        for k in 38_001..=39_000u64 {
            assert_eq!(h.find(k), Some(k));
        }
    }

    #[test]
    fn forced_shrink_via_compact() {
        let cfg = GrowConfig { alpha: 0.9, ..GrowConfig::user_async() };
        let table = GrowTable::new(50_000, cfg);
        let mut h = table.handle();
        for k in 1..=50_000u64 {
            assert!(h.insert(k, k));
        }
        let big = table.capacity();
        assert!(big >= 100_000);
        for k in 101..=50_000u64 {
            assert!(h.erase(k));
        }
        table.compact();
        assert_eq!(table.capacity(), MIN_CAPACITY, "shrank to the live-size rule");
        assert_eq!(table.exact_size_quiescent(), 100);
        for k in 1..=100u64 {
            assert_eq!(h.find(k), Some(k));
        }
        let _ = big;
    }

    #[test]
    fn compact_resets_counters_exactly() {
        let table = GrowTable::new(10_000, GrowConfig::user_async());
        let mut h = table.handle();
        for k in 1..=9000u64 {
            assert!(h.insert(k, k));
        }
        for k in 1..=4000u64 {
            assert!(h.erase(k));
        }
        table.compact();
        let v = table.version();
        assert_eq!(table.inner.counters.insertions(v), 5000);
        assert_eq!(table.inner.counters.deletions(v), 0);
        assert_eq!(table.exact_size_quiescent(), 5000);
    }

    #[test]
    fn stale_handle_counts_survive_migrations() {
        // A handle parked across several migrations must refresh and keep
        // counting exactly afterwards.
        let table = GrowTable::new(0, GrowConfig::user_async());
        let mut parked = table.handle();
        let mut active = table.handle();
        for k in 1..=10_000u64 {
            assert!(active.insert(k, k));
        }
        assert!(table.version() > 1);
        for k in 20_001..=20_100u64 {
            assert!(parked.insert(k, k));
        }
        assert_eq!(table.exact_size_quiescent(), 10_100);
        drop(parked);
        drop(active);
        assert_eq!(table.exact_size_quiescent(), 10_100);
    }

    #[test]
    fn old_versions_are_reclaimed_once_handles_refresh() {
        let table = GrowTable::new(0, GrowConfig::user_async());
        let mut h1 = table.handle();
        let mut h2 = table.handle();
        let first = Arc::downgrade(&table.published_table());
        assert!(h2.insert(1, 1));
        for k in 2..=10_000u64 {
            assert!(h1.insert(k, k));
        }
        assert!(table.version() > 1);
        assert!(first.upgrade().is_some(), "h2 still pins the first version");
        assert_eq!(h2.find(1), Some(1)); // refreshes h2's cached version
        assert!(first.upgrade().is_none(), "old version reclaimed after refresh");
    }

    #[test]
    fn grown_table_matches_preinitialized_capacity_and_lookups() {
        let n = 60_000u64;
        let grown = GrowTable::new(0, GrowConfig::user_async());
        let mut hg = grown.handle();
        for k in 1..=n {
            assert!(hg.insert(k, k + 9));
        }
        let pre = GrowTable::new(n as usize, GrowConfig::user_async());
        let mut hp = pre.handle();
        for k in 1..=n {
            assert!(hp.insert(k, k + 9));
        }
        assert_eq!(grown.capacity(), pre.capacity());
        for k in (1..=n).step_by(97) {
            assert_eq!(hg.find(k), hp.find(k));
        }
    }

    #[test]
    fn initiator_waits_for_busy_handles() {
        // Synchronized protocol: a raised busy flag must hold the migration
        // handshake open until it drops.
        let table = GrowTable::new(0, GrowConfig::user_sync());
        let mut h = table.handle();
        for k in 1..=2000u64 {
            assert!(h.insert(k, k));
        }
        // A second registered handle, parked mid-operation.
        let blocker = table.handle();
        blocker.slot.busy.store(true, Ordering::SeqCst);

        let t2 = table.clone();
        let migrator = std::thread::spawn(move || {
            let started = std::time::Instant::now();
            assert!(t2.inner.try_start_migration(true));
            started.elapsed()
        });
        std::thread::sleep(Duration::from_millis(120));
        assert_eq!(table.version(), 1, "migration must not finish against a busy handle");
        blocker.slot.busy.store(false, Ordering::SeqCst);
        let elapsed = migrator.join().unwrap();
        assert!(elapsed >= Duration::from_millis(100), "handshake returned too early");
        assert_eq!(table.version(), 2);
        assert_eq!(h.find(1500), Some(1500));
        drop(blocker);
    }

    #[test]
    fn writes_racing_migration_are_never_lost() {
        // Aggregation under growth: additions from many threads across many
        // migrations sum exactly.
        for (name, cfg) in all_configs() {
            let table = GrowTable::new(0, cfg);
            let threads = 4u64;
            let per_thread = 20_000u64;
            let key_space = 512u64;
            std::thread::scope(|s| {
                for t in 0..threads {
                    let table = table.clone();
                    s.spawn(move || {
                        let mut h = table.handle();
                        let mut x = 0x9e3779b9u64.wrapping_mul(t + 1);
                        for _ in 0..per_thread {
                            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                            let k = x % key_space + 1;
                            h.insert_or_update(k, 1, &AddValue);
                            // Grow pressure from fresh keys on the side.
                            let fresh = (x >> 16) % crate::cell::MAX_USER_KEY + 1;
                            if fresh > key_space {
                                h.insert(fresh, 1);
                            }
                        }
                    });
                }
            });
            let total: u64 = table
                .live_entries()
                .iter()
                .filter(|(k, _)| *k <= key_space)
                .map(|(_, v)| *v)
                .sum();
            assert_eq!(total, threads * per_thread, "variant {name}");
        }
    }

    #[test]
    fn find_during_growth_never_misses_stable_key() {
        let table = GrowTable::new(0, GrowConfig::user_async());
        {
            let mut h = table.handle();
            assert!(h.insert(42, 4242));
        }
        let stop = Arc::new(AtomicBool::new(false));
        std::thread::scope(|s| {
            for t in 0..2u64 {
                let table = table.clone();
                let stop = stop.clone();
                s.spawn(move || {
                    let mut h = table.handle();
                    let mut k = 1_000_000 * (t + 1);
                    while !stop.load(Ordering::Relaxed) {
                        k += 1;
                        h.insert(k, k);
                    }
                });
            }
            let table = table.clone();
            let stop2 = stop.clone();
            s.spawn(move || {
                let mut h = table.handle();
                for _ in 0..300_000 {
                    assert_eq!(h.find(42), Some(4242), "key vanished mid-growth");
                }
                stop2.store(true, Ordering::Relaxed);
            });
        });
        assert!(table.version() > 1, "growth happened during the race");
    }

    #[test]
    fn build_from_keeps_last_duplicate() {
        let table = GrowTable::build_from(&[(5, 1), (5, 2)], GrowConfig::user_async());
        let mut h = table.handle();
        assert_eq!(h.find(5), Some(2));
        assert_eq!(table.exact_size_quiescent(), 1);
    }

    #[test]
    fn build_from_empty() {
        let table = GrowTable::build_from(&[], GrowConfig::user_async());
        assert_eq!(table.exact_size_quiescent(), 0);
        assert!(table.live_entries().is_empty());
    }

    #[test]
    fn build_from_matches_elementwise_upsert() {
        let mut pairs = Vec::new();
        let mut x = 7u64;
        for i in 0..50_000u64 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            pairs.push((x % 20_000 + 1, i));
        }
        let built = GrowTable::build_from(&pairs, GrowConfig::user_async());

        let oracle = GrowTable::new(pairs.len(), GrowConfig::user_async());
        let mut h = oracle.handle();
        for &(k, v) in &pairs {
            h.insert_or_update(k, v, &crate::table::Overwrite);
        }
        let mut a = built.live_entries();
        let mut b = oracle.live_entries();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_eq!(built.exact_size_quiescent(), a.len() as u64);
    }

    #[test]
    fn pool_variant_survives_rapid_small_migrations() {
        // Alternating insert/erase keeps triggering cleanups; the pool must
        // wake, migrate and re-park every time without deadlocking.
        let cfg = GrowConfig { pool_size: 2, ..GrowConfig::pool_sync() };
        let table = GrowTable::new(512, cfg);
        let mut h = table.handle();
        for k in 1..=700u64 {
            assert!(h.insert(k, k));
        }
        for i in 0..20_000u64 {
            let k = 1000 + i;
            assert!(h.insert(k, k));
            assert!(h.erase(k));
        }
        assert!(table.version() > 3, "several cleanup migrations");
        assert_eq!(h.find(1), Some(1));
    }
}
