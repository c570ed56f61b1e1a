#![allow(dead_code)]

pub mod data;
pub mod invariants;
pub mod oracles;
pub mod prompting;
