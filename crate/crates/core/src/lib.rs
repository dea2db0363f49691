//! Toolkit for refactoring neural networks so that they become easier to
//! verify: architecture transformations with automatic shape repair,
//! teacher/student distillation, interval-bound verification of local
//! robustness properties, export to external verifier formats, and a search
//! for architectures that meet both an error and a verification-time budget.

pub mod distill;
pub mod driver;
pub mod exec;
pub mod export;
pub mod kernels;
pub mod netgraph;
pub mod synth;
pub mod tensor;
pub mod transform;
pub mod verify;
