//! Continual compositional reasoning on the LEGO task.

pub mod groups;
pub mod lego;
pub mod tensor;
pub mod models;
pub mod harness;
pub mod metrics;
pub mod gradcheck;
