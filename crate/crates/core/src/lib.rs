#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod inference;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod trainer;
