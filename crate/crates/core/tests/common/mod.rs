#![allow(dead_code)]

pub mod fixtures;
pub mod gradcheck;
pub mod metric_oracles;
pub mod runs;
pub mod structure;
