//! Every chapter of the guide is a module here, so `cargo test` runs its
//! code listings as doctests against the current library.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/phrase-vectors.md")]
pub mod phrase_vectors {}
#[doc = include_str!("src/sparse.md")]
pub mod sparse {}
#[doc = include_str!("src/training.md")]
pub mod training {}
#[doc = include_str!("src/index.md")]
pub mod index {}
#[doc = include_str!("src/search.md")]
pub mod search {}
#[doc = include_str!("src/service.md")]
pub mod service {}
