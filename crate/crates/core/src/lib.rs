// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consistency;
pub mod data;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod policy;
pub mod qlearn;
pub mod rng;
pub mod surrogate;
pub mod trainer;
pub mod simlab;
