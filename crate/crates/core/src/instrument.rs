//! Per-thread call counters for the augmentation entry points.
//!
//! Evaluation must never synthesize data; tests read these counters around
//! an evaluation call to check that.

use std::cell::Cell;

thread_local! {
    static GENERATE_CALLS: Cell<usize> = const { Cell::new(0) };
    static AUGMENT_CALLS: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn record_generate() {
    GENERATE_CALLS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn record_augment() {
    AUGMENT_CALLS.with(|c| c.set(c.get() + 1));
}

/// `(generate_shifted calls, augment calls)` made on this thread so far.
pub fn augmentation_calls() -> (usize, usize) {
    (GENERATE_CALLS.with(Cell::get), AUGMENT_CALLS.with(Cell::get))
}
