//! Model-reference adaptive control with Lipschitz-constrained networks.
//!
//! An online-trained network adjusts the input of an uncertain plant so that
//! its input-output response follows a chosen reference model. The network's
//! Lipschitz constant is fixed by construction, which gives a small-gain
//! stability certificate independent of the learning rate.

// `!(x >= lo)` guards are written that way so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod control;
pub mod fwdmodel;
pub mod lipnet;
pub mod runner;
pub mod scenarios;
pub mod stability;
pub mod sysmodel;
