//! Checks shared by this crate's tests and the CLI acceptance target.
#![allow(dead_code)]

pub mod consistency;
pub mod gradients;
pub mod kernels;
pub mod metrics;
pub mod sampling;
