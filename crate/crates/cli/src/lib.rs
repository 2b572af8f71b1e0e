//! Batch commands and the annotation HTTP service built on `densitykit`.

pub mod commands;
pub mod job;
pub mod service;
