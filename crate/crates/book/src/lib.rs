//! The guide under `book/src`, compiled so that its Rust snippets run as
//! doc-tests. Nothing here is meant to be used as a library.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[doc = include_str!("../../../book/src/regularizers.md")]
pub mod regularizers {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/rmt.md")]
pub mod rmt {}

#[doc = include_str!("../../../book/src/fixed_point.md")]
pub mod fixed_point {}

#[doc = include_str!("../../../book/src/erm.md")]
pub mod erm {}

#[doc = include_str!("../../../book/src/score.md")]
pub mod score {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
