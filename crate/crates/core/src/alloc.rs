//! Heap accounting used by the folding memory harness.
//!
//! The library cannot install a global allocator on behalf of its users.
//! Binaries and tests that want measured numbers add
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: sidgen_core::alloc::CountingAlloc = sidgen_core::alloc::CountingAlloc;
//! ```
//!
//! and [`measure_peak`] then reports the peak number of live bytes above the
//! level at entry.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static INSTALLED: AtomicBool = AtomicBool::new(false);
static MEASURE_LOCK: Mutex<()> = Mutex::new(());

pub struct CountingAlloc;

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            INSTALLED.store(true, Ordering::Relaxed);
            let live = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(live, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size >= layout.size() {
                let d = new_size - layout.size();
                let live = LIVE.fetch_add(d, Ordering::Relaxed) + d;
                PEAK.fetch_max(live, Ordering::Relaxed);
            } else {
                LIVE.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// Whether [`CountingAlloc`] is the active global allocator.
pub fn is_installed() -> bool {
    // a tiny allocation flips the flag if the counter is live
    drop(Box::new(0u8));
    INSTALLED.load(Ordering::Relaxed)
}

pub fn live_bytes() -> usize {
    LIVE.load(Ordering::Relaxed)
}

/// Runs `f` and returns its result with the peak heap growth in bytes.
///
/// Measurements are serialized through a lock; allocations made by other
/// threads during the window are still counted.
pub fn measure_peak<T>(f: impl FnOnce() -> T) -> (T, Option<usize>) {
    let _guard = MEASURE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    if !is_installed() {
        return (f(), None);
    }
    let base = LIVE.load(Ordering::SeqCst);
    PEAK.store(base, Ordering::SeqCst);
    let out = f();
    let peak = PEAK.load(Ordering::SeqCst);
    (out, Some(peak.saturating_sub(base)))
}
