//! Instrumented floating-point operation counter.
//!
//! Every tensor kernel reports its cost here using the same fixed
//! conventions as the analytic model in [`crate::profiler::cost`]:
//!
//! * matmul: `2·m·k·n`
//! * conv2d: `2·C_out·C_in·K²·H'·W'` (bias not counted)
//! * softmax: `5` per element
//! * layer norm: `8` per element
//! * bilinear resize: `8` per output element (counted even on pass-through)
//! * any elementwise op: `1` per element
//!
//! The counter is thread-local so concurrent forwards do not interleave.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<u64> = const { Cell::new(0) };
}

pub fn reset() {
    COUNTER.with(|c| c.set(0));
}

pub fn total() -> u64 {
    COUNTER.with(|c| c.get())
}

pub(crate) fn add(n: u64) {
    COUNTER.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Runs `f` and returns its result together with the exact number of
/// flops executed by tensor kernels inside it.
pub fn counted<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = total();
    let out = f();
    (out, total() - before)
}
