//! Reducibility engine for `i u_t = (-Δ + |x|² + ε V(ωt, x)) u` on `R^d`.
//!
//! The pipeline assembles a quasi-periodic potential in the Hermite basis,
//! smooths it, runs the KAM iteration with block-structured homological
//! equations, and validates the resulting reduction against direct
//! integration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod blockmat;
pub mod linalg;
pub mod homology;
pub mod smoothing;
pub mod kam;
pub mod validate;
pub mod pipeline;
