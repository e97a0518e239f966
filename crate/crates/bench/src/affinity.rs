//! Best-effort thread pinning. Pinning is attempted where the platform
//! exposes affinity control and silently skipped elsewhere; callers learn
//! whether it took effect.

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PinMode {
    Auto,
    Off,
}

/// Pins the calling thread to `core` (modulo the available cores). Returns
/// true when the affinity call succeeded.
#[cfg(target_os = "linux")]
pub fn pin_current_thread(core: usize) -> bool {
    let cores = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
    let core = core % cores;
    // SAFETY: cpu_set_t is plain data; the libc calls only read it.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(core, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
    }
}

#[cfg(not(target_os = "linux"))]
pub fn pin_current_thread(_core: usize) -> bool {
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[cfg(target_os = "linux")]
    fn pinning_succeeds_on_linux() {
        assert!(pin_current_thread(0));
    }
}
