//! Iterative detect, pose and segment loop for crowded scenes.

// `!(x > 0.0)` is how parameter checks here reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backends;
pub mod consistency;
pub mod geometry;
pub mod imaging;
pub mod prompting;
pub mod suppression;
pub mod engine;
pub mod evaluation;
pub mod scenegen;
