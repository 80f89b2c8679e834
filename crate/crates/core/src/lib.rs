// NaN must fail these validity checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel_bridge;
pub mod cli_io;
pub mod error;
pub mod estimator;
pub mod ou_process;
pub mod risk;
pub mod rng;
pub mod sup_cdf;
