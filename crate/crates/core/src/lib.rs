// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod equations;
pub mod fem;
pub mod gummel;
pub mod materials;
pub mod mesh;
pub mod output;
pub mod profile;
pub mod validation;
