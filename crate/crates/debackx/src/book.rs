//! The user guide, compiled as doctests.
//!
//! Each module below embeds one chapter of the mdbook under `book/` so that
//! `cargo test --doc` executes every code block in the guide. If a chapter
//! drifts out of sync with the library, the build breaks here.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}

#[doc = include_str!("../../../book/src/separation.md")]
pub mod separation {}

#[doc = include_str!("../../../book/src/codec.md")]
pub mod codec {}

#[doc = include_str!("../../../book/src/translation.md")]
pub mod translation {}

#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
