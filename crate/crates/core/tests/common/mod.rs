//! Fixtures shared by integration tests and the acceptance target.
#![allow(dead_code)]

pub mod cases;
pub mod synth;
