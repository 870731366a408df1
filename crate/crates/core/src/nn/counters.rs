//! Per-thread instrumentation for convolution kernels.
//!
//! Every call to [`conv_forward`](super::conv_forward) adds the number of
//! multiply-accumulates it performed (`in · s² · out · h_out · w_out` per
//! image) and bumps an invocation count. Counters are thread local so that
//! concurrently running tests do not observe each other.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
    static CALLS: Cell<u64> = const { Cell::new(0) };
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConvCounters {
    pub macs: u64,
    pub calls: u64,
}

impl std::ops::Sub for ConvCounters {
    type Output = ConvCounters;

    fn sub(self, rhs: Self) -> Self {
        ConvCounters {
            macs: self.macs - rhs.macs,
            calls: self.calls - rhs.calls,
        }
    }
}

pub fn snapshot() -> ConvCounters {
    ConvCounters {
        macs: MACS.with(Cell::get),
        calls: CALLS.with(Cell::get),
    }
}

pub fn reset() {
    MACS.with(|c| c.set(0));
    CALLS.with(|c| c.set(0));
}

pub(crate) fn record(macs: u64) {
    MACS.with(|c| c.set(c.get() + macs));
    CALLS.with(|c| c.set(c.get() + 1));
}
