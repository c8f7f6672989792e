//! File formats, experiment runs and comparison reports on top of
//! `saliency-core`.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod demo;
pub mod netpbm;
pub mod run;
