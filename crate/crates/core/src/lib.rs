// Negated float comparisons reject NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diffcore;
pub mod dsp;
pub mod clustering;
pub mod metrics;
pub mod perm;
pub mod data;
pub mod model;
pub mod bench;
