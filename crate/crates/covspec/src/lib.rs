//! CoVSpec: device-edge collaborative speculative decoding.
//!
//! A mobile device runs a small draft model over a reduced visual context
//! and proposes candidate tokens; an edge server verifies them against a
//! large target model over the full visual context. This crate implements
//! the whole protocol over pluggable synthetic models: visual token
//! selection, margin-gated drafting, channel-aware draft-length control,
//! parallel branching, decoupled verification-correction, bit-exact
//! payload accounting, and both a deterministic in-process simulator and
//! a real two-process socket mode.
//!
//! See the book under `book/` for a guided tour, and `docs/protocol.md`
//! for the wire format.

pub mod comm;
pub mod config;
pub mod engine;
pub mod error;
pub mod harness;
pub mod models;
pub mod probcore;
pub mod tokensel;
pub mod transport;

pub use error::{CovError, Result};

// Every Rust snippet in the book compiles and runs under `cargo test`:
// each chapter is pulled in as a doc-comment, one module per chapter so
// a failure names its origin.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/speculative-sampling.md")]
    mod speculative_sampling {}
    #[doc = include_str!("../../../book/src/visual-tokens.md")]
    mod visual_tokens {}
    #[doc = include_str!("../../../book/src/gating-and-length.md")]
    mod gating_and_length {}
    #[doc = include_str!("../../../book/src/branching.md")]
    mod branching {}
    #[doc = include_str!("../../../book/src/wire-format.md")]
    mod wire_format {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/two-process.md")]
    mod two_process {}
}
