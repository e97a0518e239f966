//! Single-threaded baseline table: the same linear-probing layout, sentinels,
//! growth trigger and migration order as the concurrent table, with no atomic
//! instructions. Absolute speedups are measured against it, and at one thread
//! the concurrent variants must produce identical contents.

use growmap::grow::capacity_decision;
use growmap::workload::hash64;
use growmap::{capacity_for, slot_of, Cell, DEL_KEY, EMPTY_KEY, PROBE_LIMIT};

pub struct SeqTable {
    cells: Vec<Cell>,
    mask: usize,
    alpha: f64,
    hasher: fn(u64) -> u64,
    /// Non-empty cells, tombstones included.
    insertions: u64,
    deletions: u64,
    version: u64,
}

impl SeqTable {
    pub fn new(expected_n: usize) -> Self {
        Self::with_alpha(expected_n, 0.6)
    }

    pub fn with_alpha(expected_n: usize, alpha: f64) -> Self {
        let capacity = capacity_for(expected_n);
        SeqTable {
            cells: vec![Cell::EMPTY; capacity],
            mask: capacity - 1,
            alpha,
            hasher: hash64,
            insertions: 0,
            deletions: 0,
            version: 1,
        }
    }

    pub fn capacity(&self) -> usize {
        self.mask + 1
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> u64 {
        self.insertions - self.deletions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn probe_limit(&self) -> usize {
        self.capacity().min(PROBE_LIMIT)
    }

    fn start_slot(&self, key: u64) -> usize {
        slot_of((self.hasher)(key), self.capacity())
    }

    pub fn insert(&mut self, key: u64, value: u64) -> bool {
        loop {
            let mut idx = self.start_slot(key);
            for _ in 0..self.probe_limit() {
                let cell = &mut self.cells[idx & self.mask];
                if cell.key == EMPTY_KEY {
                    *cell = Cell::new(key, value);
                    self.note_insertion();
                    return true;
                }
                if cell.key == key {
                    return false;
                }
                idx = idx.wrapping_add(1);
            }
            // Out of probe budget: grow and retry, like the concurrent
            // overflow path.
            self.migrate(self.capacity() * 2);
        }
    }

    pub fn overwrite(&mut self, key: u64, value: u64) -> bool {
        let mut idx = self.start_slot(key);
        for _ in 0..self.probe_limit() {
            let cell = &mut self.cells[idx & self.mask];
            if cell.key == EMPTY_KEY {
                return false;
            }
            if cell.key == key {
                cell.value = value;
                return true;
            }
            idx = idx.wrapping_add(1);
        }
        false
    }

    /// Insert-or-add; true when the key was new.
    pub fn upsert_add(&mut self, key: u64, delta: u64) -> bool {
        loop {
            let mut idx = self.start_slot(key);
            for _ in 0..self.probe_limit() {
                let cell = &mut self.cells[idx & self.mask];
                if cell.key == EMPTY_KEY {
                    *cell = Cell::new(key, delta);
                    self.note_insertion();
                    return true;
                }
                if cell.key == key {
                    cell.value = cell.value.wrapping_add(delta);
                    return false;
                }
                idx = idx.wrapping_add(1);
            }
            self.migrate(self.capacity() * 2);
        }
    }

    pub fn find(&self, key: u64) -> Option<u64> {
        let mut idx = self.start_slot(key);
        for _ in 0..self.probe_limit() {
            let cell = &self.cells[idx & self.mask];
            if cell.key == EMPTY_KEY {
                return None;
            }
            if cell.key == key {
                return Some(cell.value);
            }
            idx = idx.wrapping_add(1);
        }
        None
    }

    pub fn erase(&mut self, key: u64) -> bool {
        let mut idx = self.start_slot(key);
        for _ in 0..self.probe_limit() {
            let cell = &mut self.cells[idx & self.mask];
            if cell.key == EMPTY_KEY {
                return false;
            }
            if cell.key == key {
                cell.key = DEL_KEY;
                self.deletions += 1;
                return true;
            }
            idx = idx.wrapping_add(1);
        }
        false
    }

    pub fn live_entries(&self) -> Vec<(u64, u64)> {
        self.cells
            .iter()
            .filter(|c| !c.is_empty() && !c.is_tombstone())
            .map(|c| (c.key, c.value))
            .collect()
    }

    fn note_insertion(&mut self) {
        self.insertions += 1;
        if (self.insertions as f64) >= self.alpha * self.capacity() as f64 {
            let target = capacity_decision(self.insertions - self.deletions);
            self.migrate(target);
        }
    }

    /// In-order re-insertion into a fresh table, walking the circle from the
    /// first empty cell — the same canonical order the parallel cluster
    /// migration reproduces. Tombstones are dropped.
    fn migrate(&mut self, new_capacity: usize) {
        let c = self.capacity();
        let old = std::mem::replace(&mut self.cells, vec![Cell::EMPTY; new_capacity]);
        self.mask = new_capacity - 1;
        let start = old.iter().position(|x| x.is_empty()).unwrap_or(c - 1);
        let mut live = 0u64;
        for step in 1..=c {
            let cell = old[(start + step) % c];
            if cell.is_empty() || cell.is_tombstone() {
                continue;
            }
            let mut idx = slot_of((self.hasher)(cell.key), new_capacity);
            loop {
                let t = &mut self.cells[idx & self.mask];
                if t.key == EMPTY_KEY {
                    *t = cell;
                    break;
                }
                idx = idx.wrapping_add(1);
            }
            live += 1;
        }
        self.insertions = live;
        self.deletions = 0;
        self.version += 1;
    }
}
