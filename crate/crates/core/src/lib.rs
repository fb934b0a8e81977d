#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circle_maps;
pub mod rng;
pub mod flow_space;
pub mod levy_flow;
pub mod coalescing_oracle;
pub mod aggregation;
pub mod stats_harness;
pub mod acceptance;
pub mod cli_io;
