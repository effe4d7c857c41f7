//! Operation counters for efficiency bookkeeping.
//!
//! Counters are plain accumulators owned by the caller; there is no global
//! state. Counted variants of the kernels (`matmul_counted`,
//! `xnor_linear_counted`) add to whichever counter the caller passes in.

/// Per-invocation operation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// Multiply-accumulate operations performed by real-valued matmuls.
    pub macs: u64,
    /// Single-bit XNOR operations performed by binary layers.
    pub xnor_ops: u64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }
}
