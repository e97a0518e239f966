//! Parallel table migration.
//!
//! The source table is cut into fixed-size cell blocks dealt to migrating
//! threads through one atomic counter. For growing (ratio >= 1) each thread
//! migrates exactly the clusters — maximal runs of non-empty cells bounded
//! by empty cells — whose first cell lies in its block. Because the slot
//! function scales linearly with the capacity, a cluster `a..b` maps into
//! the disjoint target range `[γa, γ(b+1))`, so threads share no target
//! cells, write every target cell exactly once (element or empty
//! initialization), and the combined result is bit-identical to a sequential
//! in-order re-insertion no matter how blocks were dealt.
//!
//! Shrinking migrates in two phases: first each thread moves the elements of
//! its source block that fit into the block's disjoint target image, then,
//! after all blocks are done, the few elements that crossed block borders
//! are inserted with regular atomic insertion.
//!
//! Under the asynchronous protocol every source cell is marked (mark bit
//! compare-exchanged into the key, retried until stable) immediately before
//! it is read for copying, so no concurrent writer can change an
//! already-copied cell; writers that lose to a mark retry on the new table
//! version. The synchronized protocol guarantees a quiescent source instead
//! and skips the marking entirely.

use std::alloc::{alloc, dealloc, handle_alloc_error, Layout};
use std::ptr::NonNull;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use crate::cell::{AtomicCell, Cell, EMPTY_KEY, MARK_BIT};
use crate::table::{slot_of, BoundedTable, PROBE_LIMIT};

/// Cells dealt to a migrating thread at a time.
pub const MIGRATION_BLOCK: usize = 4096;

/// Uninitialized target table storage. Migrating threads initialize disjoint
/// regions through raw writes; the buffer only becomes a [`BoundedTable`]
/// once every cell has been written and all writers have synchronized.
struct TargetBuffer {
    ptr: NonNull<AtomicCell>,
    capacity: usize,
    version: u64,
    hasher: fn(u64) -> u64,
    consumed: AtomicBool,
}

unsafe impl Send for TargetBuffer {}
unsafe impl Sync for TargetBuffer {}

impl TargetBuffer {
    fn alloc(capacity: usize, version: u64, hasher: fn(u64) -> u64) -> Self {
        assert!(capacity.is_power_of_two());
        let layout = Layout::array::<AtomicCell>(capacity).expect("capacity overflow");
        // SAFETY: layout is non-zero (capacity >= 1).
        let raw = unsafe { alloc(layout) } as *mut AtomicCell;
        let Some(ptr) = NonNull::new(raw) else { handle_alloc_error(layout) };
        TargetBuffer { ptr, capacity, version, hasher, consumed: AtomicBool::new(false) }
    }

    /// Plain initializing write. Caller must be the sole writer of `index`
    /// until the next synchronization point.
    #[inline]
    unsafe fn write(&self, index: usize, cell: Cell) {
        debug_assert!(index < self.capacity);
        // SAFETY: in-bounds; exclusive access guaranteed by the block/cluster
        // ownership protocol.
        unsafe { self.ptr.as_ptr().add(index).write(AtomicCell::from_cell(cell)) };
    }

    /// Shared atomic view of a cell. Only sound after the cell has been
    /// initialized and the initialization has been synchronized with.
    #[inline]
    unsafe fn cell(&self, index: usize) -> &AtomicCell {
        debug_assert!(index < self.capacity);
        // SAFETY: per the doc contract.
        unsafe { &*self.ptr.as_ptr().add(index) }
    }

    /// Atomic insert used by the shrink leftover phase; the whole buffer must
    /// be initialized. Returns false when the probe budget runs out.
    unsafe fn insert_atomic(&self, key: u64, value: u64) -> bool {
        let mask = self.capacity - 1;
        let mut idx = slot_of((self.hasher)(key), self.capacity);
        let limit = self.capacity.min(PROBE_LIMIT);
        let mut scanned = 0;
        while scanned < limit {
            // SAFETY: initialized per the caller contract.
            let cell = unsafe { self.cell(idx & mask) };
            let cur = cell.load_key();
            if cur == EMPTY_KEY {
                match cell.cas(Cell::EMPTY, Cell::new(key, value)) {
                    Ok(()) => return true,
                    Err(_) => continue,
                }
            }
            debug_assert_ne!(cur, key, "duplicate key during shrink");
            idx = idx.wrapping_add(1);
            scanned += 1;
        }
        false
    }

    /// Consumes the buffer into a live table. All cells must be initialized
    /// and visible to this thread.
    unsafe fn take_table(&self) -> BoundedTable {
        let already = self.consumed.swap(true, Ordering::AcqRel);
        assert!(!already, "target buffer consumed twice");
        // SAFETY: fully initialized; the allocation was made with the array
        // layout Box expects, and `consumed` keeps Drop from double-freeing.
        let slice = unsafe {
            Box::from_raw(std::ptr::slice_from_raw_parts_mut(self.ptr.as_ptr(), self.capacity))
        };
        BoundedTable::from_parts(slice, self.version, self.hasher)
    }
}

impl Drop for TargetBuffer {
    fn drop(&mut self) {
        if !self.consumed.load(Ordering::Acquire) {
            let layout = Layout::array::<AtomicCell>(self.capacity).unwrap();
            // SAFETY: allocated with this layout, not consumed. AtomicCell
            // has no Drop, so deallocation alone suffices.
            unsafe { dealloc(self.ptr.as_ptr() as *mut u8, layout) };
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum MigrationKind {
    /// Capacity ratio target/source (power of two, >= 1); ratio 1 is a
    /// tombstone cleanup pass.
    Grow { ratio: usize },
    /// Capacity ratio source/target (power of two, >= 2).
    Shrink { divisor: usize },
}

/// Outcome of one worker's participation in a migration.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WorkerOutcome {
    /// This worker completed the final piece of work; it must run
    /// finalization (counter reset and publication).
    Finisher,
    /// Work ran out; somebody else finishes.
    Helper,
}

/// One source-to-target migration shared by any number of cooperating
/// threads.
pub struct MigrationJob {
    source: Arc<BoundedTable>,
    target: TargetBuffer,
    kind: MigrationKind,
    /// Mark cells before copying (asynchronous protocol).
    mark: bool,
    block_size: usize,
    blocks: usize,
    next_block: AtomicUsize,
    blocks_done: AtomicUsize,
    moved: AtomicU64,
    target_writes: AtomicU64,
    degenerate: AtomicBool,
    // Shrink coordination.
    leftovers: Mutex<Vec<Cell>>,
    phase_gate: Mutex<bool>,
    phase_cv: Condvar,
    next_leftover: AtomicUsize,
    leftovers_done: AtomicUsize,
    finish_claimed: AtomicBool,
    failed: AtomicBool,
    // Completion latch for threads waiting out the migration.
    done: AtomicBool,
    done_lock: Mutex<bool>,
    done_cv: Condvar,
}

impl MigrationJob {
    /// Grow or cleanup job: `target_capacity >= source.capacity()`.
    pub fn grow(source: Arc<BoundedTable>, target_capacity: usize, mark: bool) -> Self {
        Self::grow_with_block_size(source, target_capacity, mark, MIGRATION_BLOCK)
    }

    /// Like [`MigrationJob::grow`] with an explicit dealing block size
    /// (power of two); small blocks exercise cluster handoff across borders
    /// on small tables.
    pub fn grow_with_block_size(
        source: Arc<BoundedTable>,
        target_capacity: usize,
        mark: bool,
        block_size: usize,
    ) -> Self {
        let ratio = target_capacity / source.capacity();
        assert!(target_capacity.is_power_of_two() && ratio >= 1);
        Self::new(source, target_capacity, MigrationKind::Grow { ratio }, mark, block_size)
    }

    /// Shrink job: `target_capacity < source.capacity()`.
    pub fn shrink(source: Arc<BoundedTable>, target_capacity: usize, mark: bool) -> Self {
        let divisor = source.capacity() / target_capacity;
        assert!(target_capacity.is_power_of_two() && divisor >= 2);
        Self::new(source, target_capacity, MigrationKind::Shrink { divisor }, mark, MIGRATION_BLOCK)
    }

    fn new(
        source: Arc<BoundedTable>,
        target_capacity: usize,
        kind: MigrationKind,
        mark: bool,
        block_size: usize,
    ) -> Self {
        let version = source.version() + 1;
        let hasher = source.hasher();
        assert!(block_size.is_power_of_two());
        let block_size = source.capacity().min(block_size);
        let blocks = source.capacity() / block_size;
        MigrationJob {
            target: TargetBuffer::alloc(target_capacity, version, hasher),
            source,
            kind,
            mark,
            block_size,
            blocks,
            next_block: AtomicUsize::new(0),
            blocks_done: AtomicUsize::new(0),
            moved: AtomicU64::new(0),
            target_writes: AtomicU64::new(0),
            degenerate: AtomicBool::new(false),
            leftovers: Mutex::new(Vec::new()),
            phase_gate: Mutex::new(false),
            phase_cv: Condvar::new(),
            next_leftover: AtomicUsize::new(0),
            leftovers_done: AtomicUsize::new(0),
            finish_claimed: AtomicBool::new(false),
            failed: AtomicBool::new(false),
            done: AtomicBool::new(false),
            done_lock: Mutex::new(false),
            done_cv: Condvar::new(),
        }
    }

    pub fn target_capacity(&self) -> usize {
        self.target.capacity
    }

    pub fn target_version(&self) -> u64 {
        self.target.version
    }

    pub fn source_version(&self) -> u64 {
        self.source.version()
    }

    /// Total elements moved; meaningful once the finisher was elected.
    pub fn moved_total(&self) -> u64 {
        self.moved.load(Ordering::Acquire)
    }

    /// Total raw writes into the target (grow only); used to assert the
    /// write-exactly-once discipline.
    pub fn target_writes(&self) -> u64 {
        self.target_writes.load(Ordering::Acquire)
    }

    /// True when a shrink ran out of target space and the job must be
    /// retried with a larger target.
    pub fn is_failed(&self) -> bool {
        self.failed.load(Ordering::Acquire)
    }

    /// Claims the next unclaimed source block, as `[start, end)` cell
    /// indices.
    pub fn claim_block(&self) -> Option<(usize, usize)> {
        let b = self.next_block.fetch_add(1, Ordering::Relaxed);
        if b >= self.blocks {
            return None;
        }
        let start = b * self.block_size;
        Some((start, start + self.block_size))
    }

    /// Consumes the finished target. Only the finisher may call this, after
    /// observing its own [`WorkerOutcome::Finisher`].
    pub fn take_target(&self) -> BoundedTable {
        assert!(!self.is_failed());
        // SAFETY: every block reported done, which synchronized all region
        // writes with the finisher via the blocks/leftovers counters.
        unsafe { self.target.take_table() }
    }

    /// Marks the migration complete and wakes every thread parked in
    /// [`MigrationJob::wait_done`]. Called by the orchestration layer after
    /// publication (or after deciding to retry a failed shrink).
    pub fn mark_done(&self) {
        self.done.store(true, Ordering::Release);
        let mut flag = self.done_lock.lock().unwrap();
        *flag = true;
        self.done_cv.notify_all();
        drop(flag);
    }

    pub fn is_done(&self) -> bool {
        self.done.load(Ordering::Acquire)
    }

    /// Blocks until [`MigrationJob::mark_done`].
    pub fn wait_done(&self) {
        if self.is_done() {
            return;
        }
        let mut flag = self.done_lock.lock().unwrap();
        while !*flag {
            flag = self.done_cv.wait(flag).unwrap();
        }
    }

    /// Works on the migration until no work is left. Any number of threads
    /// may call this concurrently; exactly one receives
    /// [`WorkerOutcome::Finisher`].
    pub fn run_worker(&self) -> WorkerOutcome {
        match self.kind {
            MigrationKind::Grow { ratio } => self.run_grow(ratio),
            MigrationKind::Shrink { divisor } => self.run_shrink(divisor),
        }
    }

    // ---- growing -------------------------------------------------------

    fn run_grow(&self, ratio: usize) -> WorkerOutcome {
        let mut outcome = WorkerOutcome::Helper;
        while let Some((start, end)) = self.claim_block() {
            if !self.degenerate.load(Ordering::Acquire) {
                match self.grow_block(ratio, start, end) {
                    BlockResult::Ok => {}
                    BlockResult::Degenerate => {
                        // No empty cell anywhere: one thread rebuilds the
                        // whole table; the rest just retire their blocks.
                        if !self.degenerate.swap(true, Ordering::AcqRel) {
                            self.full_pass(ratio);
                        }
                    }
                }
            }
            if self.blocks_done.fetch_add(1, Ordering::AcqRel) + 1 == self.blocks {
                outcome = WorkerOutcome::Finisher;
            }
        }
        outcome
    }

    /// Stabilized cell content: marks before reading under the asynchronous
    /// protocol, reads directly when the protocol guarantees quiescence.
    fn stable_read(&self, index: usize) -> Cell {
        let cell = self.source.cell(index);
        if !self.mark {
            return cell.load_pair();
        }
        loop {
            let key = cell.load_key();
            if key & MARK_BIT != 0 {
                return Cell::new(key, cell.load_value());
            }
            if cell.cas_key(key, key | MARK_BIT).is_ok() {
                return Cell::new(key | MARK_BIT, cell.load_value());
            }
        }
    }

    fn grow_block(&self, ratio: usize, block_start: usize, block_end: usize) -> BlockResult {
        let c = self.source.capacity();
        let tc = self.target.capacity;
        let tmask = tc - 1;

        // Find where this thread's source region starts. The region begins
        // at the block start when the border cell starts a cluster or is
        // empty; when the block starts mid-cluster the region begins at the
        // first (stabilized) empty cell, implicitly moving the border.
        let first = self.stable_read(block_start % c);
        let mut pos = block_start;
        if !first.is_empty() {
            let before = self.stable_read((block_start + c - 1) % c);
            if !before.is_empty() {
                // Mid-cluster: scan forward for the first empty cell.
                let mut q = block_start + 1;
                loop {
                    if q - block_start >= c {
                        return BlockResult::Degenerate;
                    }
                    if self.stable_read(q % c).is_empty() {
                        break;
                    }
                    q += 1;
                }
                pos = q;
            }
        }

        let mut moved = 0u64;
        let mut writes = 0u64;
        let mut scratch: Vec<Cell> = Vec::new();
        // Indices run unwrapped so a cluster may extend past the block end
        // and past the table end; target positions are masked on write. The
        // target image of source cell s is [ratio*s, ratio*(s+1)).
        while pos < block_end {
            let content = self.stable_read(pos % c);
            if content.is_empty() {
                for t in ratio * pos..ratio * (pos + 1) {
                    // SAFETY: this thread owns the target image of its region.
                    unsafe { self.target.write(t & tmask, Cell::EMPTY) };
                }
                writes += ratio as u64;
                pos += 1;
                continue;
            }

            // A cluster starts here; walk it to its end, past block and
            // table borders if need be.
            let cluster_start = pos;
            scratch.clear();
            let mut cells_in_cluster: Vec<Cell> = Vec::new();
            let mut q = pos;
            let mut cur = content;
            loop {
                cells_in_cluster.push(cur);
                q += 1;
                if q - cluster_start >= c {
                    return BlockResult::Degenerate;
                }
                cur = self.stable_read(q % c);
                if cur.is_empty() {
                    break;
                }
            }
            let cluster_end = q; // exclusive

            // Every element of this cluster lands in [ratio*start,
            // ratio*end) of the target: slots scale linearly and probing
            // never crosses an empty cell. Place them by linear probing
            // inside a scratch window, then write the window out, one write
            // per target cell.
            let wbase = ratio * cluster_start;
            let wlen = ratio * cluster_end - wbase;
            scratch.resize(wlen, Cell::EMPTY);
            for cell in &cells_in_cluster {
                if cell.is_tombstone() {
                    continue;
                }
                let key = cell.user_key();
                let slot = slot_of(self.source.hash(key), tc);
                let mut rel = (slot + tc - (wbase & tmask)) & tmask;
                while scratch[rel] != Cell::EMPTY {
                    rel += 1;
                }
                scratch[rel] = Cell::new(key, cell.value);
                moved += 1;
            }
            for (i, cell) in scratch.drain(..).enumerate() {
                // SAFETY: window cells belong exclusively to this cluster.
                unsafe { self.target.write((wbase + i) & tmask, cell) };
            }
            writes += wlen as u64;
            pos = cluster_end;
        }

        self.moved.fetch_add(moved, Ordering::AcqRel);
        self.target_writes.fetch_add(writes, Ordering::AcqRel);
        BlockResult::Ok
    }

    /// Degenerate fallback for a source without a single empty cell: one
    /// thread rebuilds the target alone.
    fn full_pass(&self, _ratio: usize) {
        let c = self.source.capacity();
        let tc = self.target.capacity;
        for t in 0..tc {
            // SAFETY: sole writer by the degenerate election.
            unsafe { self.target.write(t, Cell::EMPTY) };
        }
        let mut moved = 0u64;
        for i in 0..c {
            let content = self.stable_read(i);
            if content.is_empty() || content.is_tombstone() {
                continue;
            }
            let key = content.user_key();
            let mut idx = slot_of(self.source.hash(key), tc);
            loop {
                // SAFETY: initialized above; single-threaded here.
                let cell = unsafe { self.target.cell(idx & (tc - 1)) };
                if cell.load_key() == EMPTY_KEY {
                    cell.cas(Cell::EMPTY, Cell::new(key, content.value)).unwrap();
                    break;
                }
                idx = idx.wrapping_add(1);
            }
            moved += 1;
        }
        self.moved.fetch_add(moved, Ordering::AcqRel);
        self.target_writes.fetch_add(tc as u64 + moved, Ordering::AcqRel);
    }

    // ---- shrinking -----------------------------------------------------

    fn run_shrink(&self, divisor: usize) -> WorkerOutcome {
        while let Some((start, end)) = self.claim_block() {
            self.shrink_block_phase1(divisor, start, end);
            if self.blocks_done.fetch_add(1, Ordering::AcqRel) + 1 == self.blocks {
                let mut open = self.phase_gate.lock().unwrap();
                *open = true;
                self.phase_cv.notify_all();
            }
        }

        // Barrier: leftover insertion may only start once every block's
        // target region is initialized.
        {
            let mut open = self.phase_gate.lock().unwrap();
            while !*open {
                open = self.phase_cv.wait(open).unwrap();
            }
        }

        // Phase 1 is over, the leftover list is frozen; snapshot it so the
        // lock is not held across the insertion loop.
        let leftovers: Vec<Cell> = self.leftovers.lock().unwrap().clone();
        let total = leftovers.len();
        loop {
            if self.failed.load(Ordering::Acquire) {
                break;
            }
            let i = self.next_leftover.fetch_add(1, Ordering::Relaxed);
            if i >= total {
                break;
            }
            let cell = leftovers[i];
            // SAFETY: the whole target was initialized in phase 1.
            if unsafe { self.target.insert_atomic(cell.key, cell.value) } {
                self.moved.fetch_add(1, Ordering::AcqRel);
            } else {
                self.failed.store(true, Ordering::Release);
            }
            self.leftovers_done.fetch_add(1, Ordering::AcqRel);
        }

        // Elect exactly one finisher once all leftovers are settled (or the
        // job failed).
        loop {
            let settled = self.failed.load(Ordering::Acquire)
                || self.leftovers_done.load(Ordering::Acquire) >= total;
            if settled {
                break;
            }
            std::thread::yield_now();
        }
        if !self.finish_claimed.swap(true, Ordering::AcqRel) {
            WorkerOutcome::Finisher
        } else {
            WorkerOutcome::Helper
        }
    }

    fn shrink_block_phase1(&self, divisor: usize, start: usize, end: usize) {
        let tc = self.target.capacity;
        // Disjoint target image of this source block, with ceiling rounding
        // on both borders.
        let tstart = start.div_ceil(divisor);
        let tend = end.div_ceil(divisor);
        for t in tstart..tend {
            // SAFETY: target block images are disjoint across source blocks.
            unsafe { self.target.write(t, Cell::EMPTY) };
        }

        let mut moved = 0u64;
        let mut spilled = Vec::new();
        for i in start..end {
            let content = self.stable_read(i);
            if content.is_empty() || content.is_tombstone() {
                continue;
            }
            let key = content.user_key();
            let plain = Cell::new(key, content.value);
            let slot = slot_of(self.source.hash(key), tc);
            if slot < tstart || slot >= tend {
                spilled.push(plain);
                continue;
            }
            // Sequential placement confined to this thread's target block.
            let mut idx = slot;
            let placed = loop {
                if idx >= tend {
                    break false;
                }
                // SAFETY: initialized above, exclusively ours in phase 1.
                let cell = unsafe { self.target.cell(idx) };
                if cell.load_key() == EMPTY_KEY {
                    cell.cas(Cell::EMPTY, plain).unwrap();
                    break true;
                }
                idx += 1;
            };
            if placed {
                moved += 1;
            } else {
                spilled.push(plain);
            }
        }
        self.moved.fetch_add(moved, Ordering::AcqRel);
        if !spilled.is_empty() {
            self.leftovers.lock().unwrap().extend(spilled);
        }
    }
}

enum BlockResult {
    Ok,
    Degenerate,
}

/// Runs a complete grow (or cleanup, ratio 1) migration on `threads`
/// cooperating threads and returns the new table.
pub fn migrate_grow_parallel(
    source: Arc<BoundedTable>,
    ratio: usize,
    threads: usize,
    mark: bool,
) -> BoundedTable {
    assert!(threads >= 1);
    let target_capacity = source.capacity() * ratio;
    let job = MigrationJob::grow(source, target_capacity, mark);
    run_to_completion(&job, threads)
}

/// Runs a complete shrink migration. When the chosen target is too small the
/// shrink is retried with doubled capacity until it fits (a same-size retry
/// degenerates into a cleanup pass).
pub fn migrate_shrink_parallel(
    source: Arc<BoundedTable>,
    mut target_capacity: usize,
    threads: usize,
    mark: bool,
) -> BoundedTable {
    assert!(threads >= 1);
    loop {
        if target_capacity >= source.capacity() {
            return migrate_grow_parallel(source, 1, threads, mark);
        }
        let job = MigrationJob::shrink(source.clone(), target_capacity, mark);
        let table = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads).map(|_| s.spawn(|| job.run_worker())).collect();
            let mut table = None;
            for h in handles {
                if h.join().unwrap() == WorkerOutcome::Finisher && !job.is_failed() {
                    table = Some(job.take_target());
                }
            }
            table
        });
        match table {
            Some(t) => return t,
            None => target_capacity *= 2,
        }
    }
}

fn run_to_completion(job: &MigrationJob, threads: usize) -> BoundedTable {
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads).map(|_| s.spawn(|| job.run_worker())).collect();
        let mut table = None;
        for h in handles {
            if h.join().unwrap() == WorkerOutcome::Finisher {
                table = Some(job.take_target());
            }
        }
        table.expect("exactly one finisher")
    })
}
