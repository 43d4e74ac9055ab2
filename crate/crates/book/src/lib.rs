//! Runs the code listings of the guide in `book/src` as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/sampling.md")]
pub mod sampling {}
#[doc = include_str!("../../../book/src/centring.md")]
pub mod centring {}
#[doc = include_str!("../../../book/src/nouns.md")]
pub mod nouns {}
#[doc = include_str!("../../../book/src/alpha.md")]
pub mod alpha {}
#[doc = include_str!("../../../book/src/trimap.md")]
pub mod trimap {}
#[doc = include_str!("../../../book/src/grabcut.md")]
pub mod grabcut {}
#[doc = include_str!("../../../book/src/imaging.md")]
pub mod imaging {}
#[doc = include_str!("../../../book/src/trace-format.md")]
pub mod trace_format {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
