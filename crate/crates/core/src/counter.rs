//! Approximate element counting: per-handle local counters that flush into
//! global insertion/deletion counters every few operations.
//!
//! Each handle accumulates successful insertions (and deletions) locally and
//! adds the batch to the global counter once it reaches a threshold redrawn
//! uniformly from `1..=p` after every flush, so at most `p * (p - 1)`
//! insertions are unaccounted for at any time and contention on the global
//! word stays low. Counts are stamped with the table version: a migration
//! rebuilds the global insertion count from the elements it actually moved,
//! and any counter traffic left over from the previous version is dropped
//! instead of polluting the fresh count.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use crossbeam_utils::CachePadded;

/// Bounds on the element count derived from the global counters. The true
/// size at a quiescent point lies within `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeEstimate {
    pub lower: u64,
    pub upper: u64,
}

// Counters are packed (version epoch << 32 | count) in one atomic word so a
// stale add can never land after a migration rebuilt the count: the add is a
// compare-exchange against the full word, epoch included.
#[inline]
fn pack(epoch: u32, count: u32) -> u64 {
    ((epoch as u64) << 32) | count as u64
}

#[inline]
fn unpack(word: u64) -> (u32, u32) {
    ((word >> 32) as u32, word as u32)
}

#[inline]
fn epoch_of(version: u64) -> u32 {
    version as u32
}

/// Adds `delta` to a packed counter iff its epoch still matches. Returns
/// false (dropping the delta) when a migration has advanced the epoch.
fn add_if_current(word: &AtomicU64, epoch: u32, delta: u32) -> bool {
    let mut cur = word.load(Ordering::Acquire);
    loop {
        let (e, c) = unpack(cur);
        if e != epoch {
            return false;
        }
        match word.compare_exchange_weak(
            cur,
            pack(e, c.wrapping_add(delta)),
            Ordering::AcqRel,
            Ordering::Acquire,
        ) {
            Ok(_) => return true,
            Err(observed) => cur = observed,
        }
    }
}

/// Per-handle shared state: the thread-local counters (readable by quiescent
/// exact counting and resettable by migrations) and the busy flag used by
/// the synchronized growing protocol.
pub(crate) struct HandleSlot {
    /// Packed (epoch, unflushed insertions).
    pub ins: CachePadded<AtomicU64>,
    /// Packed (epoch, unflushed deletions).
    pub del: CachePadded<AtomicU64>,
    /// Raised around every table operation in the synchronized protocol.
    pub busy: CachePadded<AtomicBool>,
}

impl HandleSlot {
    fn new(version: u64) -> Self {
        let e = epoch_of(version);
        HandleSlot {
            ins: CachePadded::new(AtomicU64::new(pack(e, 0))),
            del: CachePadded::new(AtomicU64::new(pack(e, 0))),
            busy: CachePadded::new(AtomicBool::new(false)),
        }
    }

    /// Unflushed (insertions, deletions) if the slot still belongs to
    /// `version`, else (0, 0): counts from an older version are already
    /// folded into the migrated table's count.
    pub fn residual(&self, version: u64) -> (u64, u64) {
        let (ei, ci) = unpack(self.ins.load(Ordering::Acquire));
        let (ed, cd) = unpack(self.del.load(Ordering::Acquire));
        let e = epoch_of(version);
        (
            if ei == e { ci as u64 } else { 0 },
            if ed == e { cd as u64 } else { 0 },
        )
    }

    /// Moves the slot to `version`, discarding any counts left over from an
    /// older version (the migration folded those elements into its moved
    /// total). Called by the owning handle when it refreshes; racing a
    /// migration's own stamp is harmless since both write a zero count.
    pub fn restamp(&self, version: u64) {
        let e = epoch_of(version);
        self.ins.store(pack(e, 0), Ordering::Release);
        self.del.store(pack(e, 0), Ordering::Release);
    }

    /// Counts one insertion against `version`. Returns the new local count,
    /// or None when a migration already absorbed this element.
    pub fn bump_ins(&self, version: u64) -> Option<u32> {
        if add_if_current(&self.ins, epoch_of(version), 1) {
            Some(unpack(self.ins.load(Ordering::Acquire)).1)
        } else {
            None
        }
    }

    pub fn bump_del(&self, version: u64) -> Option<u32> {
        if add_if_current(&self.del, epoch_of(version), 1) {
            Some(unpack(self.del.load(Ordering::Acquire)).1)
        } else {
            None
        }
    }

    /// Zeroes the local insertion count for a flush; false when the count
    /// changed epoch (or size) in the meantime and the batch must be dropped.
    pub fn take_ins(&self, version: u64, expect: u32) -> bool {
        let e = epoch_of(version);
        self.ins
            .compare_exchange(pack(e, expect), pack(e, 0), Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }

    pub fn take_del(&self, version: u64, expect: u32) -> bool {
        let e = epoch_of(version);
        self.del
            .compare_exchange(pack(e, expect), pack(e, 0), Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }
}

/// Shared insertion counter `I` and deletion counter `D` plus the handle
/// registry used for quiescent exact counts and the busy-flag handshake.
pub(crate) struct GlobalCounters {
    ins: CachePadded<AtomicU64>,
    del: CachePadded<AtomicU64>,
    registry: Mutex<Vec<std::sync::Arc<HandleSlot>>>,
    handle_count: AtomicUsize,
}

impl GlobalCounters {
    pub fn new(initial_version: u64) -> Self {
        let e = epoch_of(initial_version);
        GlobalCounters {
            ins: CachePadded::new(AtomicU64::new(pack(e, 0))),
            del: CachePadded::new(AtomicU64::new(pack(e, 0))),
            registry: Mutex::new(Vec::new()),
            handle_count: AtomicUsize::new(0),
        }
    }

    pub fn register(&self, version: u64) -> std::sync::Arc<HandleSlot> {
        let slot = std::sync::Arc::new(HandleSlot::new(version));
        let mut reg = self.registry.lock().unwrap();
        reg.push(slot.clone());
        self.handle_count.store(reg.len(), Ordering::Release);
        slot
    }

    /// Drops a handle: flushes its residual counts into the globals and
    /// removes it from the registry. Residuals carrying a superseded epoch
    /// are discarded; the migration already counted those elements.
    pub fn deregister(&self, slot: &std::sync::Arc<HandleSlot>, version: u64) {
        let e = epoch_of(version);
        let (ei, ci) = unpack(slot.ins.swap(pack(e, 0), Ordering::AcqRel));
        let (ed, cd) = unpack(slot.del.swap(pack(e, 0), Ordering::AcqRel));
        if ei == e && ci > 0 {
            add_if_current(&self.ins, e, ci);
        }
        if ed == e && cd > 0 {
            add_if_current(&self.del, e, cd);
        }
        let mut reg = self.registry.lock().unwrap();
        reg.retain(|s| !std::sync::Arc::ptr_eq(s, slot));
        self.handle_count.store(reg.len(), Ordering::Release);
    }

    /// Number of registered handles; the `p` in the threshold range and the
    /// estimate's error bound.
    pub fn handles(&self) -> usize {
        self.handle_count.load(Ordering::Acquire).max(1)
    }

    pub fn snapshot_slots(&self) -> Vec<std::sync::Arc<HandleSlot>> {
        self.registry.lock().unwrap().clone()
    }

    /// Flushes a local batch into `I`. Returns the new count when the batch
    /// was accepted, or None if it belonged to a superseded version.
    pub fn flush_insertions(&self, version: u64, batch: u32) -> Option<u64> {
        if add_if_current(&self.ins, epoch_of(version), batch) {
            Some(self.insertions(version))
        } else {
            None
        }
    }

    pub fn flush_deletions(&self, version: u64, batch: u32) -> Option<u64> {
        if add_if_current(&self.del, epoch_of(version), batch) {
            Some(self.deletions(version))
        } else {
            None
        }
    }

    /// Current `I` as seen for `version` (0 if the epoch moved on).
    pub fn insertions(&self, version: u64) -> u64 {
        let (e, c) = unpack(self.ins.load(Ordering::Acquire));
        if e == epoch_of(version) {
            c as u64
        } else {
            0
        }
    }

    pub fn deletions(&self, version: u64) -> u64 {
        let (e, c) = unpack(self.del.load(Ordering::Acquire));
        if e == epoch_of(version) {
            c as u64
        } else {
            0
        }
    }

    /// Migration finalization: `I` becomes the moved-element count, `D`
    /// becomes zero, and every handle's unflushed counts for the old version
    /// are discarded (the moved count already includes those elements).
    pub fn reset_for_version(&self, new_version: u64, moved: u64) {
        let e = epoch_of(new_version);
        debug_assert!(moved <= u32::MAX as u64);
        for slot in self.snapshot_slots() {
            slot.ins.store(pack(e, 0), Ordering::Release);
            slot.del.store(pack(e, 0), Ordering::Release);
        }
        self.ins.store(pack(e, moved as u32), Ordering::Release);
        self.del.store(pack(e, 0), Ordering::Release);
    }

    /// `[I - D - p(p-1), I - D + p(p-1)]` clamped at zero; the true size at
    /// any quiescent point lies inside.
    pub fn estimate(&self, version: u64) -> SizeEstimate {
        let i = self.insertions(version) as i64;
        let d = self.deletions(version) as i64;
        let p = self.handles() as i64;
        let slack = p * (p - 1);
        let s = i - d;
        SizeEstimate {
            lower: (s - slack).max(0) as u64,
            upper: (s + slack).max(0) as u64,
        }
    }

    /// Exact count, valid only while no operations are in flight: the global
    /// counters plus every handle's unflushed residuals.
    pub fn exact_quiescent(&self, version: u64) -> u64 {
        let mut ins = self.insertions(version) as i64;
        let mut del = self.deletions(version) as i64;
        for slot in self.snapshot_slots() {
            let (ri, rd) = slot.residual(version);
            ins += ri as i64;
            del += rd as i64;
        }
        (ins - del).max(0) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_roundtrip() {
        let w = pack(0xdead, 42);
        assert_eq!(unpack(w), (0xdead, 42));
    }

    #[test]
    fn adds_accumulate_within_epoch() {
        let g = GlobalCounters::new(1);
        assert_eq!(g.flush_insertions(1, 3), Some(3));
        assert_eq!(g.flush_insertions(1, 4), Some(7));
        assert_eq!(g.insertions(1), 7);
        assert_eq!(g.deletions(1), 0);
    }

    #[test]
    fn stale_epoch_adds_are_dropped() {
        let g = GlobalCounters::new(1);
        g.flush_insertions(1, 10);
        g.reset_for_version(2, 6);
        assert_eq!(g.insertions(2), 6);
        assert_eq!(g.flush_insertions(1, 5), None, "old-version flush dropped");
        assert_eq!(g.insertions(2), 6);
        assert_eq!(g.deletions(2), 0);
    }

    #[test]
    fn reset_clears_handle_slots() {
        let g = GlobalCounters::new(1);
        let slot = g.register(1);
        add_if_current(&slot.ins, 1, 3);
        assert_eq!(slot.residual(1), (3, 0));
        g.reset_for_version(2, 100);
        assert_eq!(slot.residual(2), (0, 0));
        assert_eq!(g.exact_quiescent(2), 100);
    }

    #[test]
    fn estimate_brackets_truth() {
        let g = GlobalCounters::new(1);
        let _slots: Vec<_> = (0..4).map(|_| g.register(1)).collect();
        g.flush_insertions(1, 1000);
        g.flush_deletions(1, 100);
        let est = g.estimate(1);
        assert_eq!(est.lower, 900 - 12);
        assert_eq!(est.upper, 900 + 12);
    }

    #[test]
    fn fresh_counters_estimate() {
        let g = GlobalCounters::new(1);
        let _slots: Vec<_> = (0..4).map(|_| g.register(1)).collect();
        let est = g.estimate(1);
        assert_eq!(est.lower, 0);
        assert_eq!(est.upper, 12);
    }

    #[test]
    fn deregister_flushes_residuals() {
        let g = GlobalCounters::new(1);
        let slot = g.register(1);
        add_if_current(&slot.ins, 1, 5);
        add_if_current(&slot.del, 1, 2);
        g.deregister(&slot, 1);
        assert_eq!(g.insertions(1), 5);
        assert_eq!(g.deletions(1), 2);
        assert_eq!(g.handles(), 1, "empty registry still reports p >= 1");
    }

    #[test]
    fn exact_quiescent_includes_residuals() {
        // Four handles, threshold 4 each, three unflushed insertions apiece:
        // I stays 0, the deficit is 12 <= p^2 = 16, the exact count is 12.
        let g = GlobalCounters::new(1);
        let slots: Vec<_> = (0..4).map(|_| g.register(1)).collect();
        for slot in &slots {
            for _ in 0..3 {
                add_if_current(&slot.ins, 1, 1);
            }
        }
        assert_eq!(g.insertions(1), 0);
        let deficit: u64 = slots.iter().map(|s| s.residual(1).0).sum();
        assert_eq!(deficit, 12);
        assert!(deficit <= 16);
        assert_eq!(g.exact_quiescent(1), 12);
    }
}
