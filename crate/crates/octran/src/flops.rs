//! Multiply-accumulate accounting.
//!
//! Compute kernels report their MAC counts here. Counts accumulate per
//! op name and under any active named scopes, so a caller can attribute
//! e.g. the score matmul of a cross-attention separately from its
//! projections:
//!
//! ```
//! use octran::{flops, tensor::Tensor};
//! flops::reset();
//! let a = Tensor::zeros(&[2, 3]);
//! let b = Tensor::zeros(&[3, 4]);
//! let _ = {
//!     let _s = flops::scope("scores");
//!     a.matmul(&b).unwrap()
//! };
//! assert_eq!(flops::count("scores"), 24);
//! ```
//!
//! The ledger is thread-local: one recording session per thread, single
//! writer, totals monotonically non-decreasing until `reset`.

use std::cell::RefCell;
use std::collections::BTreeMap;

thread_local! {
    static LEDGER: RefCell<Ledger> = RefCell::new(Ledger::default());
}

#[derive(Default)]
struct Ledger {
    total: u64,
    by_key: BTreeMap<String, u64>,
    scopes: Vec<String>,
}

/// Guard that keeps a named scope active; popped on drop.
pub struct ScopeGuard {
    _priv: (),
}

impl Drop for ScopeGuard {
    fn drop(&mut self) {
        LEDGER.with(|l| {
            l.borrow_mut().scopes.pop();
        });
    }
}

/// Enter a named accounting scope. MACs recorded while the guard is
/// alive are additionally attributed to `name`.
pub fn scope(name: &str) -> ScopeGuard {
    LEDGER.with(|l| l.borrow_mut().scopes.push(name.to_string()));
    ScopeGuard { _priv: () }
}

/// Record `macs` multiply-accumulates for op `op`.
pub fn record(op: &str, macs: u64) {
    LEDGER.with(|l| {
        let mut l = l.borrow_mut();
        l.total += macs;
        *l.by_key.entry(op.to_string()).or_insert(0) += macs;
        let scopes: Vec<String> = l.scopes.clone();
        for s in scopes {
            *l.by_key.entry(s).or_insert(0) += macs;
        }
    });
}

/// Running grand total since the last `reset`.
pub fn total() -> u64 {
    LEDGER.with(|l| l.borrow().total)
}

/// MACs attributed to an op name or scope name.
pub fn count(key: &str) -> u64 {
    LEDGER.with(|l| l.borrow().by_key.get(key).copied().unwrap_or(0))
}

/// Snapshot of all per-key counts.
pub fn snapshot() -> BTreeMap<String, u64> {
    LEDGER.with(|l| l.borrow().by_key.clone())
}

/// Clear the ledger and start a new recording session.
pub fn reset() {
    LEDGER.with(|l| *l.borrow_mut() = Ledger::default());
}
