//! Kernel-smoothed sequence decoding with token-level example retrieval.
//!
//! A frozen base model proposes a next-token distribution at every decoding
//! step. The decoder state is used to retrieve similar token-level examples
//! from a [`vecstore::Datastore`]; a kernel density estimate over the
//! retrieved values yields an example-based distribution
//! ([`kernels`]), and a small trainable [`adapter`] picks the kernel
//! bandwidth and the mixing weight for every step.

pub mod adapter;
pub mod basemodel;
mod binio;
pub mod error;
pub mod evalbench;
pub mod kernels;
pub mod pipeline;
pub mod vecstore;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/datastore.md")]
    mod datastore {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/adapter.md")]
    mod adapter {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
