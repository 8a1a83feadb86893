//! Shared oracles for the integration suites: independently implemented
//! reference algorithms and an in-process pipeline runner. Everything here
//! deliberately avoids reusing the library's own internals where the point
//! is to cross-check them.
#![allow(dead_code)]

pub mod bpe_ref;
pub mod gradchecks;
pub mod metrics_ref;
pub mod pipeline;
