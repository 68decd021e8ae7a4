#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod bench;
pub mod companion;
pub mod dynamics;
pub mod firmware;
pub mod fleet;
pub mod flightlog;
pub mod ground;
pub mod kernel;
pub mod netsim;
pub mod perception;
pub mod rng;
