//! Likelihood-based out-of-distribution detection with normalizing flows.

pub mod complexity;
pub mod datagen;
pub mod eval;
pub mod experiments;
pub mod flow;
pub mod gmm;
pub mod numerics;
pub mod scores;
