//! Table cells: 128-bit aligned (key, value) pairs with atomic pair-wide
//! compare-exchange and independently atomic word reads.
//!
//! The layout is part of the table's contract: key word at offset 0, value
//! word at offset 8, 16-byte alignment. Readers load the key first and the
//! value second; the pair read is not atomic, so it can be torn, which the
//! probing code tolerates. All writes go through compare-exchange (or, for
//! value-only updates, single-word atomics), never plain stores, while a cell
//! is shared.
//!
//! On x86_64 the pair compare-exchange compiles to `cmpxchg16b`. Other
//! targets (and x86_64 CPUs without the instruction) fall back to a striped
//! lock that serializes writers per cell while readers stay lock-free; the
//! fallback orders its stores (value before key) so the torn-read reasoning
//! of the lock-free path still holds.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};

/// Key of a cell that has never held an element.
pub const EMPTY_KEY: u64 = 0;

/// Tombstone key: written over a deleted element's key, value left in place.
/// The mark bit is clear so a tombstone can itself be marked for migration.
pub const DEL_KEY: u64 = (1 << 63) - 1;

/// Reserved key bit set by migrating threads to freeze a cell.
pub const MARK_BIT: u64 = 1 << 63;

/// Largest key a user may store: `0` is the empty sentinel, `2^63 - 1` the
/// tombstone, and bit 63 is reserved for migration marks.
pub const MAX_USER_KEY: u64 = DEL_KEY - 1;

/// Returns true if `key` may be stored by a caller.
#[inline]
pub fn is_user_key(key: u64) -> bool {
    (1..=MAX_USER_KEY).contains(&key)
}

/// A plain (key, value) pair as read from or written to a cell.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct Cell {
    pub key: u64,
    pub value: u64,
}

impl Cell {
    pub const EMPTY: Cell = Cell { key: EMPTY_KEY, value: 0 };

    #[inline]
    pub fn new(key: u64, value: u64) -> Self {
        Cell { key, value }
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.key & !MARK_BIT == EMPTY_KEY
    }

    #[inline]
    pub fn is_tombstone(&self) -> bool {
        self.key & !MARK_BIT == DEL_KEY
    }

    #[inline]
    pub fn is_marked(&self) -> bool {
        self.key & MARK_BIT != 0
    }

    /// The key with the migration mark stripped.
    #[inline]
    pub fn user_key(&self) -> u64 {
        self.key & !MARK_BIT
    }
}

/// One table slot. Both words are independently readable; the pair is
/// writable as a unit via [`AtomicCell::cas`].
#[repr(C, align(16))]
pub struct AtomicCell {
    key: AtomicU64,
    value: AtomicU64,
}

// Layout contract relied on by the pair compare-exchange and by torn-read
// reasoning: key word at offset 0, value word at offset 8, 16-byte aligned.
const _: () = assert!(std::mem::size_of::<AtomicCell>() == 16);
const _: () = assert!(std::mem::align_of::<AtomicCell>() == 16);
const _: () = assert!(std::mem::offset_of!(AtomicCell, key) == 0);
const _: () = assert!(std::mem::offset_of!(AtomicCell, value) == 8);

/// Counts mutating cell operations so tests can assert that lookups are
/// write-free. Compiled out of release builds.
#[cfg(test)]
pub(crate) static WRITE_OPS: AtomicU64 = AtomicU64::new(0);

#[inline]
fn count_write() {
    #[cfg(test)]
    WRITE_OPS.fetch_add(1, Ordering::Relaxed);
}

fn pair_cas_is_native() -> bool {
    static NATIVE: OnceLock<bool> = OnceLock::new();
    *NATIVE.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            std::arch::is_x86_feature_detected!("cmpxchg16b")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}

// Striped writer locks for the fallback path. Readers never take them.
const LOCK_STRIPES: usize = 64;

fn stripe_for(cell: *const AtomicCell) -> &'static Mutex<()> {
    static LOCKS: OnceLock<Vec<Mutex<()>>> = OnceLock::new();
    let locks = LOCKS.get_or_init(|| (0..LOCK_STRIPES).map(|_| Mutex::new(())).collect());
    &locks[(cell as usize >> 4) & (LOCK_STRIPES - 1)]
}

/// Raw `lock cmpxchg16b`, returning the previous 16-byte value. LLVM
/// reserves rbx, so the low word of the replacement is swapped in and out
/// around the instruction. Locked instructions are full barriers on x86, and
/// the asm block is a compiler-level memory barrier, so this is at least
/// acquire-release.
#[cfg(target_arch = "x86_64")]
unsafe fn cas16_native(dst: *mut u128, old: u128, new: u128) -> u128 {
    debug_assert_eq!(dst as usize % 16, 0);
    let prev_lo: u64;
    let prev_hi: u64;
    // SAFETY: caller guarantees `dst` is 16-byte aligned, valid, and that the
    // cmpxchg16b instruction exists (checked once at startup).
    unsafe {
        core::arch::asm!(
            "xchg {new_lo}, rbx",
            "lock cmpxchg16b [{dst}]",
            "mov rbx, {new_lo}",
            dst = in(reg) dst,
            new_lo = inout(reg) new as u64 => _,
            in("rcx") (new >> 64) as u64,
            inout("rax") old as u64 => prev_lo,
            inout("rdx") (old >> 64) as u64 => prev_hi,
            options(nostack),
        );
    }
    ((prev_hi as u128) << 64) | prev_lo as u128
}

#[inline]
fn pack(c: Cell) -> u128 {
    // Key word sits at offset 0, which on little-endian x86_64 is the low
    // half of the u128.
    (c.key as u128) | ((c.value as u128) << 64)
}

#[inline]
fn unpack(raw: u128) -> Cell {
    Cell { key: raw as u64, value: (raw >> 64) as u64 }
}

impl AtomicCell {
    pub const fn empty() -> Self {
        AtomicCell { key: AtomicU64::new(EMPTY_KEY), value: AtomicU64::new(0) }
    }

    pub fn from_cell(c: Cell) -> Self {
        AtomicCell { key: AtomicU64::new(c.key), value: AtomicU64::new(c.value) }
    }

    /// Atomically reads the key word.
    #[inline]
    pub fn load_key(&self) -> u64 {
        self.key.load(Ordering::Acquire)
    }

    /// Atomically reads the value word.
    #[inline]
    pub fn load_value(&self) -> u64 {
        self.value.load(Ordering::Acquire)
    }

    /// Reads key first, then value. The two loads are individually atomic but
    /// the pair may be torn.
    #[inline]
    pub fn load_pair(&self) -> Cell {
        let key = self.load_key();
        let value = self.load_value();
        Cell { key, value }
    }

    /// Pair-wide compare-exchange. On failure returns the cell content
    /// observed by the hardware (or the lock holder), so callers can
    /// re-examine the same cell without an extra load.
    #[inline]
    pub fn cas(&self, current: Cell, new: Cell) -> Result<(), Cell> {
        count_write();
        if pair_cas_is_native() {
            #[cfg(target_arch = "x86_64")]
            {
                let dst = self as *const AtomicCell as *mut u128;
                // SAFETY: AtomicCell is 16-byte aligned and both words live in
                // atomic storage; feature presence was checked.
                let prev = unsafe { cas16_native(dst, pack(current), pack(new)) };
                return if prev == pack(current) { Ok(()) } else { Err(unpack(prev)) };
            }
        }
        self.cas_locked(current, new)
    }

    /// Single-word compare-exchange on the key, leaving the value untouched.
    /// Used by deletion (key -> tombstone) and migration marking.
    #[inline]
    pub fn cas_key(&self, current: u64, new: u64) -> Result<(), u64> {
        count_write();
        if pair_cas_is_native() {
            return match self.key.compare_exchange(current, new, Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => Ok(()),
                Err(observed) => Err(observed),
            };
        }
        let _guard = stripe_for(self).lock().unwrap();
        let observed = self.key.load(Ordering::Acquire);
        if observed != current {
            return Err(observed);
        }
        self.key.store(new, Ordering::Release);
        Ok(())
    }

    /// Unconditional store of the value word. Only sound when the caller's
    /// protocol guarantees no migration mark can appear on this cell while
    /// the store is in flight (synchronized growing variants).
    #[inline]
    pub fn store_value(&self, value: u64) {
        count_write();
        if pair_cas_is_native() {
            self.value.store(value, Ordering::Release);
            return;
        }
        let _guard = stripe_for(self).lock().unwrap();
        self.value.store(value, Ordering::Release);
    }

    /// Atomic add on the value word; same protocol requirement as
    /// [`AtomicCell::store_value`]. Returns the previous value.
    #[inline]
    pub fn fetch_add_value(&self, delta: u64) -> u64 {
        count_write();
        if pair_cas_is_native() {
            return self.value.fetch_add(delta, Ordering::AcqRel);
        }
        let _guard = stripe_for(self).lock().unwrap();
        let old = self.value.load(Ordering::Acquire);
        self.value.store(old.wrapping_add(delta), Ordering::Release);
        old
    }

    // Fallback pair CAS under the stripe lock. Readers do not lock, so the
    // store order matters: a key never becomes visible before its value.
    fn cas_locked(&self, current: Cell, new: Cell) -> Result<(), Cell> {
        let _guard = stripe_for(self).lock().unwrap();
        let observed = Cell {
            key: self.key.load(Ordering::Acquire),
            value: self.value.load(Ordering::Acquire),
        };
        if observed != current {
            return Err(observed);
        }
        if new.value != current.value {
            self.value.store(new.value, Ordering::Release);
        }
        if new.key != current.key {
            self.key.store(new.key, Ordering::Release);
        }
        Ok(())
    }
}
