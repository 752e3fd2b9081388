use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

static SINGLE_THREAD: AtomicBool = AtomicBool::new(false);

/// Forces every kernel onto the calling thread. Kernels partition work into
/// fixed tiles regardless of this switch, so results are bit-identical in
/// both modes; the switch only removes scheduling noise from timings.
pub fn set_single_threaded(on: bool) {
    SINGLE_THREAD.store(on, Ordering::SeqCst);
}

pub fn is_single_threaded() -> bool {
    SINGLE_THREAD.load(Ordering::SeqCst)
}

/// Maps `f` over `0..count`, in parallel unless the single-thread switch is on.
pub(crate) fn map_range<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if is_single_threaded() || count <= 1 {
        (0..count).map(f).collect()
    } else {
        (0..count).into_par_iter().map(f).collect()
    }
}
