//! Runs the guide's code blocks as doc tests. mdbook cannot link against
//! workspace crates, so each chapter is included here instead.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/masks.md")]
pub mod masks {}
#[doc = include_str!("../../../book/src/motion.md")]
pub mod motion {}
#[doc = include_str!("../../../book/src/engine.md")]
pub mod engine {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
