// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod ice;
pub mod ive;
pub mod kernels;
pub mod mixing;
pub mod rng;
pub mod score;
pub mod simbench;
pub mod verify;
