//! Saliency-augmented visual reinforcement learning.
//!
//! Moving objects are found in the optical flow between consecutive frames,
//! described with HoG features, grouped into categories by spectral
//! clustering, filtered by how strongly their presence correlates with the
//! agent's short-term return, and handed to a recurrent dueling Q-network as
//! extra binary input planes.
//!
//! This crate is `no_std` and only needs `alloc`. File formats, the
//! experiment harness and the command-line tool live in `saliency-rl`.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agent;
pub mod channels;
pub mod drqn;
pub mod env;
pub mod flow;
pub mod flowseg;
pub mod hog;
pub mod knowledge;
pub mod linalg;
pub mod metrics;
pub mod raster;
pub mod relevance;
pub mod track;

mod rng;

pub use rng::{mix_seed, SeedRng};
