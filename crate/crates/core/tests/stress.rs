//! Concurrent stress: element conservation across migrations, per-key
//! linearization smoke checks, and strategy equivalence under mixed
//! workloads with deletions.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand_core::RngCore;

use growmap::workload::seeded_rng;
use growmap::{AddValue, GrowConfig, GrowTable, Overwrite};

fn all_configs() -> [(&'static str, GrowConfig); 4] {
    [
        ("uaGrow", GrowConfig::user_async()),
        ("usGrow", GrowConfig::user_sync()),
        ("paGrow", GrowConfig { pool_size: 4, ..GrowConfig::pool_async() }),
        ("psGrow", GrowConfig { pool_size: 4, ..GrowConfig::pool_sync() }),
    ]
}

/// Every thread mutates its own key range at random while the table migrates
/// underneath; afterwards the live contents must equal the union of the
/// per-thread reference maps.
#[test]
fn no_element_loss_across_migrations() {
    for (name, cfg) in all_configs() {
        let table = GrowTable::new(0, cfg);
        let threads = 4u64;
        let ops = 30_000u64;
        let oracle = Mutex::new(HashMap::<u64, u64>::new());
        std::thread::scope(|s| {
            for t in 0..threads {
                let table = table.clone();
                let oracle = &oracle;
                s.spawn(move || {
                    let mut h = table.handle();
                    let mut local = HashMap::new();
                    let base = 1 + t * 1_000_000;
                    let mut rng = seeded_rng(900 + t);
                    for _ in 0..ops {
                        let k = base + rng.next_u64() % 20_000;
                        match rng.next_u64() % 4 {
                            0 | 1 => {
                                let v = rng.next_u64();
                                if h.insert(k, v) {
                                    local.insert(k, v);
                                }
                            }
                            2 => {
                                let v = rng.next_u64();
                                if h.update(k, v, &Overwrite) {
                                    local.insert(k, v);
                                }
                            }
                            _ => {
                                if h.erase(k) {
                                    local.remove(&k);
                                }
                            }
                        }
                    }
                    oracle.lock().unwrap().extend(local);
                });
            }
        });
        let mut live = table.live_entries();
        live.sort_unstable();
        let mut want: Vec<(u64, u64)> = oracle.into_inner().unwrap().into_iter().collect();
        want.sort_unstable();
        assert_eq!(live, want, "variant {name}");
        assert!(table.version() > 1, "variant {name} migrated at least once");
        assert_eq!(table.exact_size_quiescent(), live.len() as u64);
    }
}

/// Add-only counters over a tiny key universe: every observer must see
/// non-decreasing values per key (any legal serialization of additions is
/// monotone), and the final values equal the op counts.
#[test]
fn per_key_histories_are_monotone() {
    for (name, cfg) in all_configs() {
        let table = GrowTable::new(0, cfg);
        let key_space = 8u64;
        let threads = 4u64;
        let per_thread = 15_000u64;
        let grow_noise = AtomicU64::new(0);
        std::thread::scope(|s| {
            for t in 0..threads {
                let table = table.clone();
                let grow_noise = &grow_noise;
                s.spawn(move || {
                    let mut h = table.handle();
                    let mut last_seen = [0u64; 9];
                    let mut rng = seeded_rng(77 + t);
                    for i in 0..per_thread {
                        let k = rng.next_u64() % key_space + 1;
                        h.insert_or_update(k, 1, &AddValue);
                        let probe = rng.next_u64() % key_space + 1;
                        if let Some(v) = h.find(probe) {
                            assert!(
                                v >= last_seen[probe as usize],
                                "value went backwards on key {probe}"
                            );
                            last_seen[probe as usize] = v;
                        }
                        // Interleave fresh inserts so the table keeps growing
                        // and the counters cross migrations.
                        if i % 8 == 0 {
                            let fresh = 1000 + grow_noise.fetch_add(1, Ordering::Relaxed);
                            h.insert(fresh, 0);
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
        assert!(table.version() > 1, "variant {name}");
    }
}

/// A key present before, during and after growth is found by every probe.
#[test]
fn stable_keys_visible_throughout_growth() {
    let table = GrowTable::new(0, GrowConfig::user_async());
    let sentinels: Vec<u64> = (1..=64).map(|i| i * 1000).collect();
    {
        let mut h = table.handle();
        for &k in &sentinels {
            assert!(h.insert(k, k + 5));
        }
    }
    std::thread::scope(|s| {
        let writer_table = table.clone();
        let writer = s.spawn(move || {
            let mut h = writer_table.handle();
            for k in 10_000_000..10_200_000u64 {
                h.insert(k, 1);
            }
        });
        for _ in 0..3 {
            let table = table.clone();
            let sentinels = sentinels.clone();
            s.spawn(move || {
                let mut h = table.handle();
                for _ in 0..50_000 {
                    for &k in sentinels.iter().step_by(7) {
                        assert_eq!(h.find(k), Some(k + 5));
                    }
                }
            });
        }
        writer.join().unwrap();
    });
    assert!(table.version() > 1);
}
