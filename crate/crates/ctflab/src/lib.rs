//! A desk-scale laboratory for semi-supervised object detection in which
//! several teacher-student detector pairs train side by side, a running
//! labeled-loss ledger picks the currently best teacher, and that teacher's
//! pseudo-labels supervise the other students.
//!
//! Everything runs on the CPU over `f64` tensors with a from-scratch
//! reverse-mode tape, so every experiment is bit-reproducible from a master
//! seed.

pub(crate) mod binfmt;
pub mod cli;
pub mod ctf;
pub mod detector;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod rng;
pub mod ssod;
pub mod synthdata;

pub use error::{Error, Result};
